//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use delayed_lq::markowitz::{eta_star, frontier, inner_value, MarketParams};
use delayed_lq::model::feasibility;
use delayed_lq::sim::{
    martingale_residual, simulate_map, InitialSegment, MCStats, OptimalFeedback,
    SimConfig,
};
use delayed_lq::{
    solve_single, solve_two_asset, GridSpec, KernelGrid, ModelParams, SolveConfig, TwoAssetParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn solve(b: f64, sigma: f64, d: f64, horizon: f64, m: usize) -> Result<KernelGrid, String> {
    let p = ModelParams::new(b, sigma, d, horizon).map_err(|e| e.to_string())?;
    let spec = GridSpec::for_params(&p, m).map_err(|e| e.to_string())?;
    solve_single(&p, &spec, &SolveConfig::default())
        .map(|(g, _)| g)
        .map_err(|e| e.to_string())
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn top_slice_exactness() -> Outcome {
    let cases = [
        (0.5, 1.0, 0.5, 1.5, 16),
        (-1.2, 0.7, 0.3, 0.8, 8),
        (2.0, 1.5, 1.0, 2.5, 12),
        (0.3, 2.0, 0.25, 1.0, 5),
        (-0.4, 0.5, 0.6, 0.6, 10),
    ];
    let mut worst = 0.0_f64;
    for (b, sigma, d, horizon, m) in cases {
        let g = solve(b, sigma, d, horizon, m)?;
        let spec = g.spec();
        let n = spec.n_t;
        let (lo, hi) = spec.slices[0];
        for i in lo..hi {
            worst = worst.max((g.p11_node(i) - 1.0).abs());
            for j in 0..=m {
                // nodes with i + j = n lie on t + s + d = T, inside the support
                let p12 = if i + j <= n { b } else { 0.0 };
                worst = worst.max((g.p12_node(i, j) - p12).abs());
                for k in 0..=m {
                    let p22 = if i + j.max(k) <= n { b * b } else { 0.0 };
                    worst = worst.max((g.p22_node(i, j, k) - p22).abs());
                }
            }
        }
    }
    verdict(worst < 1e-14, format!("max deviation {worst:.2e} over 5 parameter sets"))
}

fn boundary_terminal_identities() -> Outcome {
    let tol = SolveConfig::default().tol;
    let bound = (10.0 * tol).max(1e-10);
    let mut worst = 0.0_f64;
    let mut slowest = Duration::ZERO;
    for (b, sigma) in [(0.5, 1.0), (-0.8, 1.3)] {
        let start = Instant::now();
        let g = solve(b, sigma, 0.5, 1.5, 32)?;
        slowest = slowest.max(start.elapsed());
        let spec = g.spec();
        let (m, n) = (spec.m, spec.n_t);
        for i in 0..n {
            worst = worst.max((g.p12_node(i, 0) - b * g.p11_node(i)).abs());
            for j in 0..=m {
                worst = worst.max((g.p22_node(i, j, 0) - b * g.p12_node(i, j)).abs());
                worst = worst.max((g.p22_node(i, 0, j) - b * g.p12_node(i, j)).abs());
            }
        }
        worst = worst.max((g.p11_node(n) - 1.0).abs());
        for j in 0..=m {
            worst = worst.max(g.p12_node(n, j).abs());
            if j > 0 {
                worst = worst.max(g.p2hat2_node(n, j).abs());
            }
            for k in 0..=m {
                worst = worst.max(g.p22_node(n, j, k).abs());
            }
        }
    }
    verdict(
        worst <= bound && slowest < Duration::from_secs(1),
        format!("max violation {worst:.2e} (bound {bound:.0e}), slowest solve {slowest:.2?}"),
    )
}

/// The (b=0.5, σ=1, d=0.5, T=1.5, m=64) solve, shared by two criteria and
/// timed within the first that uses it.
fn reference_grid() -> &'static Result<KernelGrid, String> {
    static GRID: OnceLock<Result<KernelGrid, String>> = OnceLock::new();
    GRID.get_or_init(|| solve(0.5, 1.0, 0.5, 1.5, 64))
}

fn with_reference(f: fn(&KernelGrid) -> Outcome) -> Outcome {
    reference_grid().as_ref().map_err(Clone::clone).and_then(f)
}

fn proven_bounds(g: &KernelGrid) -> Outcome {
    let spec = g.spec();
    let (m, n) = (spec.m, spec.n_t);
    let b = g.params().b;
    let report = feasibility(g.params(), 10).map_err(|e| e.to_string())?;
    let mut failures = Vec::new();
    for (slice, &(lo, hi)) in spec.slices.iter().enumerate() {
        let min = (lo..=hi).map(|i| g.p11_node(i)).fold(f64::INFINITY, f64::min);
        let a = report.a_seq[slice + 1];
        if a > min {
            failures.push(format!("slice {slice}: min p11 {min} < a = {a}"));
        }
    }
    let mut max_p12 = 0.0_f64;
    for i in 0..=n {
        let v = g.p12_node(i, m);
        max_p12 = max_p12.max(v.abs());
        if i + m <= n && v.signum() != b.signum() {
            failures.push(format!("sign of p12 at row {i}"));
        }
    }
    if max_p12 > b.abs() + 1e-10 {
        failures.push(format!("max |p12(t,0)| = {max_p12}"));
    }
    let mut asym = 0.0_f64;
    for i in 0..=n {
        for j in 0..=m {
            for k in 0..j {
                asym = asym.max((g.p22_node(i, j, k) - g.p22_node(i, k, j)).abs());
            }
        }
    }
    if asym > 1e-12 {
        failures.push(format!("p22 asymmetry {asym:.2e}"));
    }
    if (0..n).any(|i| g.p11_node(i) > g.p11_node(i + 1)) {
        failures.push("p11 decreases somewhere".into());
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("slice minima above a_(n+1), max |p12(t,0)| = {max_p12:.6}, p22 asymmetry {asym:.1e}")
        } else {
            failures.join("; ")
        },
    )
}

fn bracket(g: &KernelGrid) -> Outcome {
    let report = feasibility(g.params(), 10).map_err(|e| e.to_string())?;
    let a_n = report.a_seq[report.n_cal];
    let p0 = g.p11_node(0);
    verdict(
        a_n < p0 && p0 < 1.0,
        format!("P11(0) = {p0:.6} in (a_N = {a_n:.4}, 1) with N = {}", report.n_cal),
    )
}

fn undelayed_limit() -> Outcome {
    let limit = (-0.375f64).exp();
    let mut gaps = Vec::new();
    for d in [0.2, 0.1, 0.05] {
        let g = solve(0.5, 1.0, d, 1.5, 64)?;
        gaps.push((g.p11_node(0) - limit).abs());
    }
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    verdict(
        decreasing && gaps[2] < 0.05,
        format!("|P11(0) - e^-0.375| = {:.4e}, {:.4e}, {:.4e}", gaps[0], gaps[1], gaps[2]),
    )
}

fn grid_convergence() -> Outcome {
    let values: Vec<f64> = [16, 32, 64]
        .into_iter()
        .map(|m| solve(0.5, 1.0, 0.5, 1.5, m).map(|g| g.p11_node(0)))
        .collect::<Result<_, _>>()?;
    let ratio = (values[1] - values[0]).abs() / (values[2] - values[1]).abs();
    // the scheme is second order, so the ratio tends to 4 from above; the upper
    // end is read to three decimals
    verdict(
        (1.5..=4.0 + 1e-3).contains(&ratio),
        format!("P11(0) = {:.10}, {:.10}, {:.10}; ratio {ratio:.6}", values[0], values[1], values[2]),
    )
}

/// Independent small-grid oracle: the integral equations along
/// characteristics, left-endpoint rectangle rule, fixed point by plain
/// iteration. Grid arrays are indexed `[i][j][k]` with `j, k = 0` at `s = −d`.
struct Oracle {
    p11: Vec<f64>,
    p12: Vec<Vec<f64>>,
    p22: Vec<Vec<Vec<f64>>>,
}

fn rectangle_oracle(b: f64, sigma: f64, m: usize) -> Oracle {
    let h = 1.0 / m as f64; // d = 1
    let n = 2 * m;
    let mut o = Oracle {
        p11: vec![1.0; n + 1],
        p12: vec![vec![0.0; m + 1]; n + 1],
        p22: vec![vec![vec![0.0; m + 1]; m + 1]; n + 1],
    };
    for i in m..n {
        for j in 0..=m {
            o.p12[i][j] = if i + j <= n { b } else { 0.0 };
            for k in 0..=m {
                o.p22[i][j][k] = if i + j.max(k) <= n { b * b } else { 0.0 };
            }
        }
    }
    // lower slice: rows 0..m, initial guess = row m
    for i in 0..m {
        o.p11[i] = o.p11[m];
        o.p12[i] = o.p12[m].clone();
        o.p22[i] = o.p22[m].clone();
    }
    let den = |o: &Oracle, l: usize| sigma * sigma * o.p11[l + m];
    for _ in 0..500 {
        let prev = (o.p11.clone(), o.p12.clone(), o.p22.clone());
        let old = Oracle {
            p11: prev.0,
            p12: prev.1,
            p22: prev.2,
        };
        for i in 0..m {
            let mut acc = 0.0;
            for l in i..m {
                acc += h * old.p12[l][m].powi(2) / den(&old, l);
            }
            o.p11[i] = old.p11[m] - acc;
        }
        for i in 0..m {
            for j in 0..=m {
                // follow (i+u, j−u) until j hits 0 or the row reaches m
                let steps = j.min(m - i);
                let end = if j <= m - i {
                    b * o.p11[i + j]
                } else {
                    old.p12[m][j - steps]
                };
                let mut acc = 0.0;
                for u in 0..steps {
                    let l = i + u;
                    acc += h * old.p12[l][m] * old.p22[l][j - u][m] / den(&old, l);
                }
                o.p12[i][j] = end - acc;
            }
        }
        for i in 0..m {
            for j in 0..=m {
                for k in 0..=m {
                    let lead = j.min(k);
                    let steps = lead.min(m - i);
                    let end = if lead <= m - i {
                        b * o.p12[i + lead][j.max(k) - lead]
                    } else {
                        old.p22[m][j - steps][k - steps]
                    };
                    let mut acc = 0.0;
                    for u in 0..steps {
                        let l = i + u;
                        acc += h * old.p22[l][j - u][m] * old.p22[l][m][k - u] / den(&old, l);
                    }
                    o.p22[i][j][k] = end - acc;
                }
            }
        }
        let mut change = 0.0_f64;
        for i in 0..m {
            change = change.max((o.p11[i] - old.p11[i]).abs());
            for j in 0..=m {
                change = change.max((o.p12[i][j] - old.p12[i][j]).abs());
                for k in 0..=m {
                    change = change.max((o.p22[i][j][k] - old.p22[i][j][k]).abs());
                }
            }
        }
        if change < 1e-15 {
            break;
        }
    }
    o
}

fn small_instance_oracle() -> Outcome {
    let m = 4;
    let h = 1.0 / m as f64;
    let mut details = Vec::new();
    let mut ok = true;
    for b in [0.5, 1.0, -0.7] {
        let g = solve(b, 1.0, 1.0, 2.0, m)?;
        let o = rectangle_oracle(b, 1.0, m);
        let mut worst = 0.0_f64;
        for i in 0..=2 * m {
            worst = worst.max((g.p11_node(i) - o.p11[i]).abs());
            for j in 0..=m {
                worst = worst.max((g.p12_node(i, j) - o.p12[i][j]).abs());
                for k in 0..=m {
                    worst = worst.max((g.p22_node(i, j, k) - o.p22[i][j][k]).abs());
                }
            }
        }
        let tol = 5.0 * h * (b * b).max(1.0);
        ok &= worst <= tol;
        details.push(format!("b={b}: {worst:.2e} <= {tol:.2}"));
    }
    verdict(ok, details.join(", "))
}

fn monte_carlo_value() -> Outcome {
    let market = MarketParams {
        lambda: 0.5,
        sigma: 1.0,
        d: 0.5,
        horizon: 1.5,
        x0: 1.0,
        c: 1.5,
    };
    let p = market.model_params().map_err(|e| e.to_string())?;
    let g = solve(p.b, p.sigma, p.d, p.horizon, 64)?;
    let xi = 1.5;
    let gamma = InitialSegment::Constant(0.0);
    let v0 = inner_value(&g, market.x0, &gamma, xi).map_err(|e| e.to_string())?;
    let cfg = SimConfig {
        n_paths: 100_000,
        master_seed: 20_240_501,
        x0: market.x0,
        ..SimConfig::default()
    };
    let law = OptimalFeedback { grid: &g, xi };
    let samples = simulate_map(&g, &gamma, &cfg, &law, |p| (p.terminal() - xi).powi(2))
        .map_err(|e| e.to_string())?;
    let s = MCStats::from_samples(&samples);
    let gap = (s.mean - v0).abs();
    verdict(
        gap <= 3.0 * s.std_error,
        format!("MC {:.5} vs V0 {v0:.5}: gap {gap:.2e}, 3 SE {:.2e}", s.mean, 3.0 * s.std_error),
    )
}

fn martingale() -> Outcome {
    let g = solve(0.5, 1.0, 0.5, 1.5, 32)?;
    let h = g.spec().h;
    let xi = 1.5;
    let gamma = InitialSegment::Constant(0.0);
    let law = OptimalFeedback { grid: &g, xi };
    let cfg = SimConfig {
        n_paths: 10_000,
        master_seed: 77,
        x0: 1.0,
        ..SimConfig::default()
    };
    let totals = simulate_map(&g, &gamma, &cfg, &law, |p| {
        martingale_residual(&g, p, xi).map(|t| t.cumulative())
    })
    .map_err(|e| e.to_string())?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()
    .map_err(|e| e.to_string())?;
    let s = MCStats::from_samples(&totals);

    let quiet = SimConfig {
        n_paths: 1,
        zero_noise: true,
        ..cfg
    };
    let path = &simulate_map(&g, &gamma, &quiet, &law, |p| p.clone()).map_err(|e| e.to_string())?[0];
    let trace = martingale_residual(&g, path, xi).map_err(|e| e.to_string())?;
    let step_max = trace.residuals().fold(0.0_f64, |a, r| a.max(r.abs()));
    verdict(
        s.mean.abs() <= 3.0 * s.std_error && step_max <= 10.0 * h,
        format!(
            "mean cumulative {:.2e} (3 SE {:.2e}); zero-noise max step {step_max:.2e} <= 10h = {:.2e}",
            s.mean,
            3.0 * s.std_error,
            10.0 * h
        ),
    )
}

fn outer_oracle() -> Outcome {
    let m = 16;
    let g = solve(0.5, 1.0, 0.5, 1.5, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    for _ in 0..5 {
        let x0 = rng.random_range(0.5..2.0);
        let c = rng.random_range(0.5..2.5);
        let level = rng.random_range(-0.5..0.5);
        let slope = rng.random_range(-1.0..1.0);
        let gamma = InitialSegment::Table(
            (0..=m).map(|j| level + slope * j as f64 / m as f64).collect(),
        );
        let (eta, _) = eta_star(&g, x0, c, &gamma).map_err(|e| e.to_string())?;
        let objective = |e: f64| inner_value(&g, x0, &gamma, c - e).expect("solved") - e * e;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in -20_000..=20_000 {
            let e = k as f64 * 1e-3;
            let v = objective(e);
            if v > best.0 {
                best = (v, e);
            }
        }
        worst = worst.max((best.1 - eta).abs());
    }
    verdict(worst <= 2e-3, format!("max |eta* - grid argmax| = {worst:.2e}"))
}

fn delay_monotonicity() -> Outcome {
    let gamma = InitialSegment::Constant(0.0);
    let mut vars = Vec::new();
    for d in [0.1, 0.3, 0.5] {
        let g = solve(0.5, 1.0, d, 1.5, 64)?;
        let pts = frontier(&g, 1.0, &gamma, &[1.5]).map_err(|e| e.to_string())?;
        vars.push(pts[0].variance);
    }
    verdict(
        vars.windows(2).all(|w| w[1] >= w[0]),
        format!("Var at c = 1.5: {:.6}, {:.6}, {:.6}", vars[0], vars[1], vars[2]),
    )
}

fn two_asset_reduction() -> Outcome {
    let two = TwoAssetParams {
        sigma1: 1.0,
        sigma2: 0.8,
        lambda1: 0.0,
        lambda2: 0.6,
        rho: 0.0,
        d: 0.5,
        horizon: 1.5,
    };
    let m = 32;
    let spec = GridSpec::new(two.d, two.horizon, m).map_err(|e| e.to_string())?;
    let (g2, _) = solve_two_asset(&two, &spec, &SolveConfig::default()).map_err(|e| e.to_string())?;
    let g1 = solve(two.lambda2 * two.sigma2, two.sigma2, two.d, two.horizon, m)?;
    let mut worst = 0.0_f64;
    for i in 0..=spec.n_t {
        worst = worst.max((g1.p11_node(i) - g2.p11_node(i)).abs());
        for j in 0..=m {
            worst = worst.max((g1.p12_node(i, j) - g2.p12_node(i, j)).abs());
            worst = worst.max((g1.p2hat2_node(i, j) - g2.p2hat2_node(i, j)).abs());
            for k in 0..=m {
                worst = worst.max((g1.p22_node(i, j, k) - g2.p22_node(i, j, k)).abs());
            }
        }
    }

    let with_undelayed = TwoAssetParams {
        lambda1: 0.5,
        rho: 0.4,
        ..two
    };
    let (g3, _) =
        solve_two_asset(&with_undelayed, &spec, &SolveConfig::default()).map_err(|e| e.to_string())?;
    let (lo, hi) = spec.slices[0];
    let top = (lo..=hi)
        .map(|i| (g3.p11_node(i) - (-0.25 * (1.5 - spec.t(i))).exp()).abs())
        .fold(0.0_f64, f64::max);
    verdict(
        worst <= 1e-8 && top <= 1e-8,
        format!("reduction gap {worst:.2e}, top-slice exp gap {top:.2e}"),
    )
}

fn main() -> ExitCode {
    let criteria: Vec<(&str, Duration, Box<dyn Fn() -> Outcome>)> = vec![
        ("top-slice exactness", Duration::from_secs(1), Box::new(top_slice_exactness)),
        ("boundary and terminal identities", Duration::from_secs(2), Box::new(boundary_terminal_identities)),
        ("proven bounds (m = 64)", Duration::from_secs(30), Box::new(|| with_reference(proven_bounds))),
        ("P11(0) bracket", Duration::from_secs(30), Box::new(|| with_reference(bracket))),
        ("undelayed limit", Duration::from_secs(120), Box::new(undelayed_limit)),
        ("grid convergence", Duration::from_secs(120), Box::new(grid_convergence)),
        ("small-instance oracle", Duration::from_secs(1), Box::new(small_instance_oracle)),
        ("Monte Carlo value consistency", Duration::from_secs(60), Box::new(monte_carlo_value)),
        ("martingale residual", Duration::from_secs(30), Box::new(martingale)),
        ("outer-problem oracle", Duration::from_secs(10), Box::new(outer_oracle)),
        ("delay monotonicity", Duration::from_secs(120), Box::new(delay_monotonicity)),
        ("two-asset reduction", Duration::from_secs(60), Box::new(two_asset_reduction)),
    ];
    let mut failed = 0;
    for (name, limit, check) in &criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= *limit => (true, d),
            Ok(d) => (false, format!("{d}; too slow ({elapsed:.2?} > {limit:?})")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {name}: {detail} [{elapsed:.2?}]",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
