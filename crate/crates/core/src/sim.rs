//! Euler–Maruyama simulation of `dX_t = α_{t−d}(b dt + σ dW_t)` on the
//! kernel grid, the optimal feedback laws and the value functional.
//!
//! Time steps equal the grid step `h`, so the control applied on
//! `[t_k, t_{k+1})` is the one chosen at node `t_k − d`, read from the
//! stored history, and every kernel evaluation lands on a node. Controls are
//! indexed from `−d`: entry `l` of a path's `alpha` belongs to time
//! `(l − m)·h`. Entries `0..m` hold the initial segment γ; from `t = 0` on
//! the control law decides.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::KernelGrid;
use crate::solver::TwoAssetParams;

/// Control values on `[−d, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialSegment {
    Constant(f64),
    /// Values on the `s`-grid `−d, −d+h, ..., 0` (length `m+1`).
    Table(Vec<f64>),
}

impl Default for InitialSegment {
    fn default() -> Self {
        InitialSegment::Constant(0.0)
    }
}

impl InitialSegment {
    /// Values on the `m+1` nodes of `[−d, 0]`.
    pub fn nodes(&self, m: usize) -> Result<Vec<f64>> {
        let values = match self {
            InitialSegment::Constant(g) => vec![*g; m + 1],
            InitialSegment::Table(v) => {
                if v.len() != m + 1 {
                    return Err(Error::Parameter(format!(
                        "initial segment has {} values, grid needs {}",
                        v.len(),
                        m + 1
                    )));
                }
                v.clone()
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("initial segment must be finite".into()));
        }
        Ok(values)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            InitialSegment::Constant(g) => *g == 0.0,
            InitialSegment::Table(v) => v.iter().all(|x| *x == 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub master_seed: u64,
    pub x0: f64,
    /// Replace all Brownian increments by 0.
    pub zero_noise: bool,
    /// Requested step; must match the grid step when given.
    pub h_sim: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_paths: 1,
            master_seed: 0,
            x0: 1.0,
            zero_noise: false,
            h_sim: None,
        }
    }
}

impl SimConfig {
    fn validate(&self, grid: &KernelGrid) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Parameter("n_paths must be >= 1".into()));
        }
        if !self.x0.is_finite() {
            return Err(Error::Parameter("x0 must be finite".into()));
        }
        if let Some(h) = self.h_sim {
            let gh = grid.spec().h;
            if (h - gh).abs() > 1e-12 * gh {
                return Err(Error::Parameter(format!(
                    "simulation step {h} must equal the grid step {gh}"
                )));
            }
        }
        if !grid.is_fully_solved() {
            return Err(Error::State("simulation needs a fully solved grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPath {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    /// Controls from `−d` to `T` (length `m + n_t + 1`).
    pub alpha: Vec<f64>,
    /// Brownian increments, one per step.
    pub dw: Vec<f64>,
}

impl SimulatedPath {
    pub fn terminal(&self) -> f64 {
        *self.x.last().expect("paths have at least one point")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCStats {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl MCStats {
    /// Sample mean, unbiased variance and standard error of the mean,
    /// accumulated in input order.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return MCStats {
                mean: f64::NAN,
                variance: f64::NAN,
                std_error: f64::NAN,
                n_paths: 0,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        MCStats {
            mean,
            variance,
            std_error: (variance / n as f64).sqrt(),
            n_paths: n,
        }
    }
}

/// A control rule evaluated at node `i` with state `x` and the `m` controls
/// chosen on `[t−d, t)`.
pub trait ControlLaw: Sync {
    fn control(&self, i: usize, x: f64, hist: &[f64]) -> Result<f64>;
}

/// The optimal feedback for target `xi`.
pub struct OptimalFeedback<'a> {
    pub grid: &'a KernelGrid,
    pub xi: f64,
}

impl ControlLaw for OptimalFeedback<'_> {
    fn control(&self, i: usize, x: f64, hist: &[f64]) -> Result<f64> {
        feedback_node(self.grid, i, x, hist, self.xi)
    }
}

pub struct ConstantControl(pub f64);

impl ControlLaw for ConstantControl {
    fn control(&self, _i: usize, _x: f64, _hist: &[f64]) -> Result<f64> {
        Ok(self.0)
    }
}

impl<F> ControlLaw for F
where
    F: Fn(usize, f64, &[f64]) -> f64 + Sync,
{
    fn control(&self, i: usize, x: f64, hist: &[f64]) -> Result<f64> {
        Ok(self(i, x, hist))
    }
}

fn check_hist(grid: &KernelGrid, hist: &[f64]) -> Result<()> {
    if hist.len() != grid.spec().m {
        return Err(Error::Parameter(format!(
            "control history has {} values, expected m = {} (nodes t−d .. t−h)",
            hist.len(),
            grid.spec().m
        )));
    }
    Ok(())
}

/// Optimal delayed control at time `t` (a grid node), given the state and
/// the controls chosen at `t−d, ..., t−h`.
///
/// The memory integral uses the trapezoid rule including the endpoint
/// `s = t`, so the control solves
/// `α (p2hat2(t,0) + h/2 p22(t,0,0)) = −[(x−ξ) p12(t,0) + Σ_{s<t} w_s p22(t,0,s−t) α_s]`.
/// Zero for `t > T − d`.
pub fn feedback_single(grid: &KernelGrid, t: f64, x: f64, hist: &[f64], xi: f64) -> Result<f64> {
    if !grid.is_fully_solved() {
        return Err(Error::State("feedback needs a fully solved grid".into()));
    }
    let i = grid.spec().row_of(t)?;
    feedback_node(grid, i, x, hist, xi)
}

fn feedback_node(grid: &KernelGrid, i: usize, x: f64, hist: &[f64], xi: f64) -> Result<f64> {
    check_hist(grid, hist)?;
    let spec = grid.spec();
    let (m, h) = (spec.m, spec.h);
    if i + m > spec.n_t {
        return Ok(0.0);
    }
    let mut memory = 0.5 * grid.p22_node(i, m, 0) * hist[0];
    for (k, a) in hist.iter().enumerate().skip(1) {
        memory += grid.p22_node(i, m, k) * a;
    }
    let denom = grid.p2hat2_node(i, m) + 0.5 * h * grid.p22_node(i, m, m);
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!(
            "p2hat2(t,0) = {} at t = {}",
            grid.p2hat2_node(i, m),
            spec.t(i)
        )));
    }
    Ok(-((x - xi) * grid.p12_node(i, m) + h * memory) / denom)
}

/// Optimal `(α, β)` for the two-asset problem at time `t`: `β` is the
/// delayed investment, computed as in the single-asset case against the
/// two-asset kernels, `α` the undelayed one.
pub fn feedback_two_asset(
    grid: &KernelGrid,
    t: f64,
    x: f64,
    beta_hist: &[f64],
    xi: f64,
) -> Result<(f64, f64)> {
    let two = *grid
        .two_asset()
        .ok_or_else(|| Error::Parameter("grid was not solved for two assets".into()))?;
    if !grid.is_fully_solved() {
        return Err(Error::State("feedback needs a fully solved grid".into()));
    }
    let i = grid.spec().row_of(t)?;
    feedback_two_node(grid, &two, i, x, beta_hist, xi)
}

fn feedback_two_node(
    grid: &KernelGrid,
    two: &TwoAssetParams,
    i: usize,
    x: f64,
    beta_hist: &[f64],
    xi: f64,
) -> Result<(f64, f64)> {
    let beta = feedback_node(grid, i, x, beta_hist, xi)?;
    let (m, h) = (grid.spec().m, grid.spec().h);
    let p11 = grid.p11_node(i);
    if !(p11 > 0.0) {
        return Err(Error::Degenerate(format!(
            "p11 = {p11} at t = {}",
            grid.spec().t(i)
        )));
    }
    let mut memory = 0.5 * (grid.p12_node(i, 0) * beta_hist[0] + grid.p12_node(i, m) * beta);
    for (k, b) in beta_hist.iter().enumerate().skip(1) {
        memory += grid.p12_node(i, k) * b;
    }
    let alpha = -(two.lambda1 / two.sigma1 * (x - xi)
        + two.rho * two.sigma2 / two.sigma1 * beta_hist[0]
        + two.lambda1 / (two.sigma1 * p11) * h * memory);
    Ok((alpha, beta))
}

/// Quadratic value functional at row `i`:
/// `p11 x² + 2x∫p12 a + ∫p2hat2 a² + ∬p22 a a` over `[t−d, t]`, with
/// `ctrl[l]` the control at `t − d + l·h` and (product) trapezoid weights.
pub fn running_value(grid: &KernelGrid, i: usize, x: f64, ctrl: &[f64]) -> f64 {
    let spec = grid.spec();
    let (m, h) = (spec.m, spec.h);
    debug_assert_eq!(ctrl.len(), m + 1);
    let w = |l: usize| if l == 0 || l == m { 0.5 } else { 1.0 };
    let mut lin = 0.0;
    let mut diag = 0.0;
    let mut quad = 0.0;
    for (j, &aj) in ctrl.iter().enumerate() {
        if aj == 0.0 {
            continue;
        }
        let wj = w(j);
        lin += wj * grid.p12_node(i, j) * aj;
        diag += wj * grid.p2hat2_node(i, j) * aj * aj;
        let mut inner = 0.0;
        for (k, &ak) in ctrl.iter().enumerate() {
            inner += w(k) * grid.p22_node(i, j, k) * ak;
        }
        quad += wj * aj * inner;
    }
    grid.p11_node(i) * x * x + 2.0 * x * h * lin + h * diag + h * h * quad
}

/// Value `V = E[(X_T)²]` of the problem started from `x` with initial
/// segment `gamma`.
pub fn value_of(grid: &KernelGrid, x: f64, gamma: &InitialSegment) -> Result<f64> {
    if !grid.is_fully_solved() {
        return Err(Error::State("value needs a fully solved grid".into()));
    }
    let ctrl = gamma.nodes(grid.spec().m)?;
    Ok(running_value(grid, 0, x, &ctrl))
}

fn path_rng(master_seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path as u64);
    rng
}

fn simulate_one(
    grid: &KernelGrid,
    gamma: &[f64],
    cfg: &SimConfig,
    law: &dyn ControlLaw,
    path: usize,
) -> Result<SimulatedPath> {
    let spec = grid.spec();
    let (m, n, h) = (spec.m, spec.n_t, spec.h);
    let params = grid.params();
    let mut rng = path_rng(cfg.master_seed, path);
    let sqrt_h = h.sqrt();

    let mut alpha = Vec::with_capacity(m + n + 1);
    alpha.extend_from_slice(&gamma[..m]);
    let mut x = Vec::with_capacity(n + 1);
    let mut dw = Vec::with_capacity(n);
    x.push(cfg.x0);
    for k in 0..=n {
        let a = law.control(k, x[k], &alpha[k..k + m])?;
        if !a.is_finite() {
            return Err(Error::Simulation {
                path,
                step: k,
                message: format!("control is {a}"),
            });
        }
        alpha.push(a);
        if k == n {
            break;
        }
        let z: f64 = if cfg.zero_noise {
            0.0
        } else {
            rng.sample::<f64, _>(StandardNormal) * sqrt_h
        };
        let next = x[k] + alpha[k] * (params.b * h + params.sigma * z);
        if !next.is_finite() {
            return Err(Error::Simulation {
                path,
                step: k,
                message: format!("state is {next}"),
            });
        }
        dw.push(z);
        x.push(next);
    }
    Ok(SimulatedPath {
        times: (0..=n).map(|i| spec.t(i)).collect(),
        x,
        alpha,
        dw,
    })
}

/// Simulates `cfg.n_paths` paths and applies `f` to each; results come
/// back in path order. Path `p` draws from stream `p` of the ChaCha8
/// generator seeded with `master_seed`, so output does not depend on
/// scheduling.
pub fn simulate_map<T, F>(
    grid: &KernelGrid,
    gamma: &InitialSegment,
    cfg: &SimConfig,
    law: &dyn ControlLaw,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&SimulatedPath) -> T + Sync,
{
    cfg.validate(grid)?;
    let gamma = gamma.nodes(grid.spec().m)?;
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| simulate_one(grid, &gamma, cfg, law, p).map(|path| f(&path)))
        .collect()
}

pub fn simulate(
    grid: &KernelGrid,
    gamma: &InitialSegment,
    cfg: &SimConfig,
    law: &dyn ControlLaw,
) -> Result<Vec<SimulatedPath>> {
    simulate_map(grid, gamma, cfg, law, |p| p.clone())
}

/// Two-asset path: `dX = α_t σ₁(λ₁ dt + dW¹) + β_{t−d} σ₂(λ₂ dt + dW²)`
/// with `d⟨W¹, W²⟩ = ρ dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoAssetPath {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Delayed investment from `−d` to `T`, indexed like `SimulatedPath::alpha`.
    pub beta: Vec<f64>,
}

/// Simulates the two-asset problem under the optimal pair for target `xi`.
pub fn simulate_two_asset(
    grid: &KernelGrid,
    gamma: &InitialSegment,
    cfg: &SimConfig,
    xi: f64,
) -> Result<Vec<TwoAssetPath>> {
    let two = *grid
        .two_asset()
        .ok_or_else(|| Error::Parameter("grid was not solved for two assets".into()))?;
    cfg.validate(grid)?;
    let spec = grid.spec();
    let (m, n, h) = (spec.m, spec.n_t, spec.h);
    let gamma = gamma.nodes(m)?;
    let rho_perp = (1.0 - two.rho * two.rho).sqrt();
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.master_seed, p);
            let mut beta = gamma[..m].to_vec();
            let mut alpha = Vec::with_capacity(n + 1);
            let mut x = vec![cfg.x0];
            for k in 0..=n {
                let (a, b) = feedback_two_node(grid, &two, k, x[k], &beta[k..k + m], xi)?;
                alpha.push(a);
                beta.push(b);
                if k == n {
                    break;
                }
                let (z1, z2): (f64, f64) = if cfg.zero_noise {
                    (0.0, 0.0)
                } else {
                    (rng.sample(StandardNormal), rng.sample(StandardNormal))
                };
                let dw1 = z1 * h.sqrt();
                let dw2 = (two.rho * z1 + rho_perp * z2) * h.sqrt();
                let next = x[k]
                    + a * two.sigma1 * (two.lambda1 * h + dw1)
                    + beta[k] * two.sigma2 * (two.lambda2 * h + dw2);
                if !next.is_finite() {
                    return Err(Error::Simulation {
                        path: p,
                        step: k,
                        message: format!("state is {next}"),
                    });
                }
                x.push(next);
            }
            Ok(TwoAssetPath {
                times: (0..=n).map(|i| spec.t(i)).collect(),
                x,
                alpha,
                beta,
            })
        })
        .collect()
}

/// Increments of the running value along a path, split into `ΔV` and the
/// drift compensator `p2hat2(t,0)(α_t − 𝒯(α)_t)² h`, where `𝒯(α)_t` is the
/// optimal feedback evaluated on the path's own state and history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTrace {
    pub dv: Vec<f64>,
    pub compensator: Vec<f64>,
}

impl MartingaleTrace {
    pub fn residuals(&self) -> impl Iterator<Item = f64> + '_ {
        self.dv.iter().zip(&self.compensator).map(|(d, c)| d - c)
    }

    pub fn cumulative(&self) -> f64 {
        self.residuals().sum()
    }
}

/// Running value `V_t` of `(x − ξ)` and the controls on `[t−d, t]`, and the
/// martingale residuals of the verification argument along `path`.
pub fn martingale_residual(grid: &KernelGrid, path: &SimulatedPath, xi: f64) -> Result<MartingaleTrace> {
    let spec = grid.spec();
    let (m, n, h) = (spec.m, spec.n_t, spec.h);
    if path.x.len() != n + 1 || path.alpha.len() != m + n + 1 {
        return Err(Error::Parameter("path does not match the grid".into()));
    }
    let value = |k: usize| running_value(grid, k, path.x[k] - xi, &path.alpha[k..=k + m]);
    let mut dv = Vec::with_capacity(n);
    let mut compensator = Vec::with_capacity(n);
    let mut v = value(0);
    for k in 0..n {
        let v_next = value(k + 1);
        dv.push(v_next - v);
        v = v_next;
        let target = feedback_node(grid, k, path.x[k] - xi, &path.alpha[k..k + m], 0.0)?;
        let gap = path.alpha[k + m] - target;
        compensator.push(grid.p2hat2_node(k, m) * gap * gap * h);
    }
    Ok(MartingaleTrace { dv, compensator })
}
