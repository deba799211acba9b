//! The characteristic/trapezoid solver against an independent explicit
//! march: each row is obtained from the row above by one Euler step of the
//! transport equations, with no Picard iteration. Both schemes converge to
//! the same kernels, so their gap must shrink like h.

use delayed_lq::{solve_single, GridSpec, ModelParams, SolveConfig};

struct Explicit {
    m: usize,
    p11: Vec<f64>,
    p12: Vec<Vec<f64>>,
    p22: Vec<Vec<Vec<f64>>>,
}

fn explicit_march(b: f64, sigma: f64, d: f64, horizon: f64, m: usize) -> Explicit {
    let h = d / m as f64;
    let n = (horizon / h).round() as usize;
    let mut p11 = vec![0.0; n + 1];
    let mut p12 = vec![vec![0.0; m + 1]; n + 1];
    let mut p22 = vec![vec![vec![0.0; m + 1]; m + 1]; n + 1];
    p11[n] = 1.0;
    // top slice: p11 = 1, p12 = b·1{t+s+d ≤ T}, p22 = b²·1{t+max(s,r)+d ≤ T}
    for i in n.saturating_sub(m)..n {
        p11[i] = 1.0;
        for j in 0..=m {
            p12[i][j] = if i + j <= n { b } else { 0.0 };
            for k in 0..=m {
                p22[i][j][k] = if i + j.max(k) <= n { b * b } else { 0.0 };
            }
        }
    }
    for i in (0..n.saturating_sub(m)).rev() {
        let e = i + 1;
        let den = sigma * sigma * p11[e + m];
        let q = |x: f64| x / den;
        p11[i] = p11[e] - h * q(p12[e][m] * p12[e][m]);
        p12[i][0] = b * p11[i];
        for j in 1..=m {
            p12[i][j] = p12[e][j - 1] - h * q(p12[e][m] * p22[e][j - 1][m]);
        }
        for j in 0..=m {
            for k in 0..=m {
                p22[i][j][k] = if j == 0 || k == 0 {
                    b * p12[i][j.max(k)]
                } else {
                    p22[e][j - 1][k - 1] - h * q(p22[e][j - 1][m] * p22[e][m][k - 1])
                };
            }
        }
    }
    Explicit { m, p11, p12, p22 }
}

fn gap(b: f64, m: usize) -> f64 {
    let params = ModelParams::new(b, 1.0, 0.5, 1.5).unwrap();
    let spec = GridSpec::for_params(&params, m).unwrap();
    let (grid, _) = solve_single(&params, &spec, &SolveConfig::default()).unwrap();
    let ex = explicit_march(b, 1.0, 0.5, 1.5, m);
    let mut worst = 0.0_f64;
    for i in 0..=spec.n_t {
        worst = worst.max((grid.p11_node(i) - ex.p11[i]).abs());
        for j in 0..=ex.m {
            worst = worst.max((grid.p12_node(i, j) - ex.p12[i][j]).abs());
            for k in 0..=ex.m {
                worst = worst.max((grid.p22_node(i, j, k) - ex.p22[i][j][k]).abs());
            }
        }
    }
    worst
}

#[test]
fn explicit_march_agrees_to_first_order() {
    for b in [0.5, -0.8] {
        let coarse = gap(b, 8);
        let fine = gap(b, 16);
        let h = 0.5 / 8.0;
        assert!(coarse <= 5.0 * h * (b * b).max(1.0), "b = {b}: gap {coarse}");
        assert!(fine < 0.6 * coarse, "b = {b}: {fine} vs {coarse}");
    }
}

#[test]
fn zero_drift_matches_exactly() {
    assert_eq!(gap(0.0, 4), 0.0);
}
