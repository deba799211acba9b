fn main() {
    std::process::exit(delayed_lq::cli::run(std::env::args_os()));
}
