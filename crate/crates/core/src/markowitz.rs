//! Mean-variance portfolio selection with delayed execution.
//!
//! Wealth follows `dX_t = α_{t−d} σ(λ dt + dW_t)`, i.e. the delayed LQ
//! problem with `b = σλ`. Minimizing `Var(X_T)` subject to `E[X_T] = c` is
//! solved through the inner tracking problem `min E[(X_T − ξ)²]` with
//! `ξ = c − η` and the concave outer problem `max_η V₀(c − η) − η²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::KernelGrid;
use crate::model::ModelParams;
use crate::sim::{running_value, InitialSegment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub lambda: f64,
    pub sigma: f64,
    pub d: f64,
    pub horizon: f64,
    pub x0: f64,
    pub c: f64,
}

impl MarketParams {
    pub fn model_params(&self) -> Result<ModelParams> {
        if !self.x0.is_finite() || !self.c.is_finite() {
            return Err(Error::Parameter("x0 and c must be finite".into()));
        }
        ModelParams::new(self.sigma * self.lambda, self.sigma, self.d, self.horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub c: f64,
    pub eta_star: f64,
    pub xi_star: f64,
    pub variance: f64,
}

fn check(grid: &KernelGrid) -> Result<()> {
    if !grid.is_fully_solved() {
        return Err(Error::State("needs a fully solved grid".into()));
    }
    Ok(())
}

/// `V₀(ξ) = P11(0)(x0 − ξ)² + R(x0 − ξ, γ)`.
pub fn inner_value(grid: &KernelGrid, x0: f64, gamma: &InitialSegment, xi: f64) -> Result<f64> {
    check(grid)?;
    let ctrl = gamma.nodes(grid.spec().m)?;
    Ok(running_value(grid, 0, x0 - xi, &ctrl))
}

/// `K(γ) = ∫ γ_s P12(0, s) ds` and the γ-only part `Q(γ)` of the value.
fn k_and_q(grid: &KernelGrid, gamma: &InitialSegment) -> Result<(f64, f64)> {
    let ctrl = gamma.nodes(grid.spec().m)?;
    let q = running_value(grid, 0, 0.0, &ctrl);
    // running_value is quadratic in x: V(1) − V(0) = p11 + 2K
    let k = 0.5 * (running_value(grid, 0, 1.0, &ctrl) - q - grid.p11_node(0));
    Ok((k, q))
}

fn outer_coefficient(grid: &KernelGrid) -> Result<f64> {
    let p = grid.p11_node(0);
    if p >= 1.0 - 1e-12 {
        return Err(Error::Degenerate(format!(
            "P11(0) = {p} leaves the outer problem without a strict maximum"
        )));
    }
    Ok(p)
}

/// `η* = (K(γ) + P11(0)(x0 − c)) / (1 − P11(0))` and `ξ* = c − η*`.
pub fn eta_star(grid: &KernelGrid, x0: f64, c: f64, gamma: &InitialSegment) -> Result<(f64, f64)> {
    check(grid)?;
    let p = outer_coefficient(grid)?;
    let (k, _) = k_and_q(grid, gamma)?;
    let eta = (k + p * (x0 - c)) / (1.0 - p);
    Ok((eta, c - eta))
}

/// Minimal variance for each target mean in `c_list`:
/// `(x0 − c + K)² / (1 − P11(0)) − (x0 − c)² + Q(γ)`, the value of the
/// outer problem at `η*`. With `γ ≡ 0` this is `P11(0)/(1 − P11(0))·(x0 − c)²`.
pub fn frontier(
    grid: &KernelGrid,
    x0: f64,
    gamma: &InitialSegment,
    c_list: &[f64],
) -> Result<Vec<FrontierPoint>> {
    check(grid)?;
    let p = outer_coefficient(grid)?;
    let (k, q) = k_and_q(grid, gamma)?;
    Ok(c_list
        .iter()
        .map(|&c| {
            let u = x0 - c;
            let eta = (k + p * u) / (1.0 - p);
            let variance = ((u + k).powi(2) / (1.0 - p) - u * u + q).max(0.0);
            FrontierPoint {
                c,
                eta_star: eta,
                xi_star: c - eta,
                variance,
            }
        })
        .collect())
}

/// The frontier for a grid solved with `solve_two_asset`; `γ` is the
/// pre-investment in the delayed asset.
pub fn two_asset_frontier(
    grid: &KernelGrid,
    x0: f64,
    gamma: &InitialSegment,
    c_list: &[f64],
) -> Result<Vec<FrontierPoint>> {
    if grid.two_asset().is_none() {
        return Err(Error::Parameter("grid was not solved for two assets".into()));
    }
    frontier(grid, x0, gamma, c_list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::sim::value_of;
    use crate::solver::{solve_single, SolveConfig};
    use approx::assert_abs_diff_eq;

    fn grid(lambda: f64, d: f64, m: usize) -> KernelGrid {
        let market = MarketParams {
            lambda,
            sigma: 1.0,
            d,
            horizon: 1.5,
            x0: 1.0,
            c: 1.5,
        };
        let p = market.model_params().unwrap();
        let spec = GridSpec::for_params(&p, m).unwrap();
        solve_single(&p, &spec, &SolveConfig::default()).unwrap().0
    }

    fn ramp(m: usize) -> InitialSegment {
        InitialSegment::Table((0..=m).map(|j| 0.3 - 0.05 * j as f64).collect())
    }

    #[test]
    fn inner_value_is_value_of_shifted_state() {
        let g = grid(0.5, 0.5, 8);
        let gamma = ramp(8);
        for (x0, xi) in [(1.0, 1.5), (0.2, -0.7), (2.0, 2.0)] {
            assert_eq!(
                inner_value(&g, x0, &gamma, xi).unwrap(),
                value_of(&g, x0 - xi, &gamma).unwrap()
            );
        }
        let zero = InitialSegment::Constant(0.0);
        assert_eq!(inner_value(&g, 1.3, &zero, 1.3).unwrap(), 0.0);
    }

    #[test]
    fn eta_star_trivial_cases() {
        let g = grid(0.5, 0.5, 8);
        let zero = InitialSegment::Constant(0.0);
        assert_eq!(eta_star(&g, 1.0, 1.0, &zero).unwrap(), (0.0, 1.0));
        let p = g.p11_node(0);
        let (eta, xi) = eta_star(&g, 1.0, 1.5, &zero).unwrap();
        assert_abs_diff_eq!(eta, p * -0.5 / (1.0 - p), epsilon = 1e-15);
        assert_abs_diff_eq!(xi, 1.5 - eta, epsilon = 1e-15);
    }

    #[test]
    fn stationary_point_of_outer_problem() {
        let g = grid(0.5, 0.5, 8);
        let gamma = ramp(8);
        let (x0, c) = (1.0, 1.8);
        let (eta, _) = eta_star(&g, x0, c, &gamma).unwrap();
        let f = |e: f64| inner_value(&g, x0, &gamma, c - e).unwrap() - e * e;
        let step = 1e-4;
        assert!(((f(eta + step) - f(eta - step)) / (2.0 * step)).abs() < 1e-8);
        let fr = frontier(&g, x0, &gamma, &[c]).unwrap()[0];
        assert_abs_diff_eq!(fr.variance, f(eta), epsilon = 1e-12);
    }

    #[test]
    fn frontier_shape() {
        let g = grid(0.5, 0.5, 8);
        let zero = InitialSegment::Constant(0.0);
        let pts = frontier(&g, 1.0, &zero, &[0.5, 1.0, 1.5]).unwrap();
        assert_eq!(pts[1].variance, 0.0);
        assert_abs_diff_eq!(pts[0].variance, pts[2].variance, epsilon = 1e-15);
        let p = g.p11_node(0);
        assert_abs_diff_eq!(pts[2].variance, p / (1.0 - p) * 0.25, epsilon = 1e-15);

        // with γ ≠ 0 the vertex sits at x0 − c = −K/P11(0)
        let gamma = ramp(8);
        let (k, _) = k_and_q(&g, &gamma).unwrap();
        let vertex = 1.0 + k / p;
        let pts = frontier(&g, 1.0, &gamma, &[vertex - 0.3, vertex + 0.3]).unwrap();
        assert_abs_diff_eq!(pts[0].variance, pts[1].variance, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_without_drift() {
        let g = grid(0.0, 0.5, 4);
        let zero = InitialSegment::Constant(0.0);
        assert_eq!(eta_star(&g, 1.0, 1.2, &zero).unwrap_err().kind(), "degenerate");
        assert!(two_asset_frontier(&g, 1.0, &zero, &[1.0]).is_err());
    }
}
