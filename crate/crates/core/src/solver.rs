//! Backward slice-by-slice construction of the Riccati kernels.
//!
//! On each slice `[T−(n+1)d, T−nd]` the kernels solve Volterra-type integral
//! equations obtained by integrating the transport PDEs along their
//! characteristics `(t+u, s−u, r−u)`:
//!
//! ```text
//! p11(t)     = e^{-λ₁²(t₁−t)} p11(t₁) − ∫_t^{t₁} e^{-λ₁²(x−t)} p12(x,0)² / p̂(x) dx
//! p12(t,s)   = e^{-λ₁²(t₂−t)} p12(t₂, s−(t₂−t))
//!              − ∫_t^{t₂} e^{-λ₁²(x−t)} p12(x,0) p22(x,t+s−x,0) / p̂(x) dx
//! p22(t,s,r) = p22(t₃, s−(t₃−t), r−(t₃−t))
//!              − ∫_t^{t₃} [ p22(x,t+s−x,0) p22(x,0,t+r−x) / p̂(x)
//!                           + λ₁² p12(x,t+s−x) p12(x,t+r−x) / p11(x) ] dx
//! ```
//!
//! with `p̂(x) = σ² p11(x+d)` known from the slice above, `t₁` the slice top
//! and `t₂ = t₁ ∧ (t+s+d)`, `t₃ = t₁ ∧ (t+s∧r+d)` the first exit of the
//! characteristic through the slice top or the `−d` face, where the
//! boundary rows `p12(t,−d) = b p11(t)`, `p22(t,s,−d) = b p12(t,s)` apply.
//! Single-asset problems have `λ₁ = 0`.
//!
//! Characteristics through nodes stay on nodes, so every integral is a
//! composite trapezoid rule accumulated backward along lattice diagonals,
//! and the kinks at `t₂`, `t₃` are quadrature break points. The fixed point
//! is found by Picard sweeps; a block that fails to converge is bisected in
//! time and the halves solved top-down.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fill_top_slice, GridSpec, KernelGrid};
use crate::model::{default_cap, feasibility, FeasibilityReport, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoAssetParams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho: f64,
    pub d: f64,
    pub horizon: f64,
}

impl TwoAssetParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma1,
            self.sigma2,
            self.lambda1,
            self.lambda2,
            self.rho,
            self.d,
            self.horizon,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite value in {self:?}")));
        }
        if self.sigma1 <= 0.0 || self.sigma2 <= 0.0 {
            return Err(Error::Parameter("volatilities must be > 0".into()));
        }
        if self.rho.abs() >= 1.0 {
            return Err(Error::Parameter(format!(
                "correlation must lie in (-1, 1), got {}",
                self.rho
            )));
        }
        if self.d < 0.0 || self.horizon <= 0.0 {
            return Err(Error::Parameter("need d >= 0 and horizon > 0".into()));
        }
        Ok(())
    }

    /// Boundary coefficient `λ₂σ₂(1 − ρλ₁/λ₂)`, written without the division.
    pub fn b_eff(&self) -> f64 {
        self.sigma2 * (self.lambda2 - self.rho * self.lambda1)
    }

    /// Residual volatility `σ₂·sqrt(1 − ρ²)` of the delayed asset.
    pub fn sigma_eff(&self) -> f64 {
        self.sigma2 * (1.0 - self.rho * self.rho).sqrt()
    }

    pub fn effective_params(&self) -> ModelParams {
        ModelParams {
            b: self.b_eff(),
            sigma: self.sigma_eff(),
            d: self.d,
            horizon: self.horizon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Sup-norm tolerance on successive Picard iterates, relative to
    /// `max(1, |b|, b²)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Minimum admissible `p2hat2(t,0)`; defaults to `1e-10·σ²`.
    pub positivity_floor: Option<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol: 1e-12,
            max_iter: 200,
            positivity_floor: None,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Parameter(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be >= 1".into()));
        }
        if let Some(f) = self.positivity_floor {
            if !(f >= 0.0) {
                return Err(Error::Parameter("positivity_floor must be >= 0".into()));
            }
        }
        Ok(())
    }

    fn floor(&self, sigma: f64) -> f64 {
        self.positivity_floor.unwrap_or(1e-10 * sigma * sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceDiagnostics {
    pub slice: usize,
    pub lo: usize,
    pub hi: usize,
    /// Picard sweeps summed over the sub-blocks of the slice.
    pub iterations: usize,
    /// Largest final residual among the sub-blocks.
    pub residual: f64,
    /// Number of bisections needed.
    pub subdivisions: usize,
    /// Residual after each sweep of the first attempt on the whole slice.
    pub history: Vec<f64>,
    pub min_p11: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub slices: Vec<SliceDiagnostics>,
    /// Minimum of `p2hat2(t,0)` over `t < T − d`; infinite when that set is empty.
    pub min_p2hat2: f64,
    pub min_p11: f64,
    pub positivity_ok: bool,
    pub feasibility: Option<FeasibilityReport>,
}

struct BlockOutcome {
    iterations: usize,
    residual: f64,
    subdivisions: usize,
    history: Vec<f64>,
}

enum PicardFailure {
    NotConverged { residual: f64, history: Vec<f64> },
    Fatal(Error),
}

impl From<Error> for PicardFailure {
    fn from(e: Error) -> Self {
        PicardFailure::Fatal(e)
    }
}

/// Solves the single-asset system.
pub fn solve_single(
    params: &ModelParams,
    spec: &GridSpec,
    cfg: &SolveConfig,
) -> Result<(KernelGrid, SolveDiagnostics)> {
    params.validate()?;
    cfg.validate()?;
    check_delay(params.d, spec)?;
    let effective = ModelParams {
        horizon: spec.horizon,
        ..*params
    };
    let report = feasibility(&effective, default_cap(&effective).max(spec.slices.len() + 1))?;
    let mut grid = KernelGrid::empty(effective, spec.clone());
    let diag = solve_grid(&mut grid, cfg, Some(report))?;
    Ok((grid, diag))
}

/// Solves the two-asset system (one delayed, one undelayed asset).
pub fn solve_two_asset(
    params: &TwoAssetParams,
    spec: &GridSpec,
    cfg: &SolveConfig,
) -> Result<(KernelGrid, SolveDiagnostics)> {
    params.validate()?;
    cfg.validate()?;
    check_delay(params.d, spec)?;
    let two = TwoAssetParams {
        horizon: spec.horizon,
        ..*params
    };
    let mut grid = KernelGrid::empty(two.effective_params(), spec.clone()).with_two_asset(two);
    let diag = solve_grid(&mut grid, cfg, None)?;
    Ok((grid, diag))
}

fn check_delay(d: f64, spec: &GridSpec) -> Result<()> {
    if (d - spec.d).abs() > 1e-12 * spec.d.max(1.0) {
        return Err(Error::Parameter(format!(
            "grid delay {} does not match problem delay {d}",
            spec.d
        )));
    }
    Ok(())
}

fn solve_grid(
    grid: &mut KernelGrid,
    cfg: &SolveConfig,
    report: Option<FeasibilityReport>,
) -> Result<SolveDiagnostics> {
    let spec = grid.spec().clone();
    let params = *grid.params();
    let floor = cfg.floor(params.sigma);
    let sigma2 = params.sigma * params.sigma;
    fill_top_slice(grid);

    let (lo0, hi0) = spec.slices[0];
    let mut slices = vec![SliceDiagnostics {
        slice: 0,
        lo: lo0,
        hi: hi0,
        iterations: 0,
        residual: 0.0,
        subdivisions: 0,
        history: Vec::new(),
        min_p11: min_p11(grid, lo0, hi0),
    }];

    for (n, &(lo, hi)) in spec.slices.iter().enumerate().skip(1) {
        for i in lo..=hi {
            let p2hat2 = sigma2 * grid.p11_node(i + spec.m);
            if !(p2hat2 > floor) {
                return Err(Error::Positivity {
                    t: spec.t(i),
                    what: "p2hat2(t,0)",
                    value: p2hat2,
                    floor,
                });
            }
        }
        let outcome = solve_block(grid, lo, hi, cfg, floor, n)?;
        grid.mark_solved(lo, hi);
        let slice_min = min_p11(grid, lo, hi);

        if let Some(report) = report.as_ref().filter(|r| r.sufficient_holds) {
            if let Some(bound) = report.slice_bound(n) {
                if slice_min < bound - 1e-9 {
                    return Err(Error::Bound {
                        slice: n,
                        min_p11: slice_min,
                        bound,
                    });
                }
            }
        }
        slices.push(SliceDiagnostics {
            slice: n,
            lo,
            hi,
            iterations: outcome.iterations,
            residual: outcome.residual,
            subdivisions: outcome.subdivisions,
            history: outcome.history,
            min_p11: slice_min,
        });
    }

    let min_p2hat2 = match spec.last_active_row() {
        Some(last) if last > 0 => (0..last)
            .map(|i| grid.p2hat2_node(i, spec.m))
            .fold(f64::INFINITY, f64::min),
        _ => f64::INFINITY,
    };
    let min_p11 = slices.iter().map(|s| s.min_p11).fold(f64::INFINITY, f64::min);
    Ok(SolveDiagnostics {
        slices,
        min_p2hat2,
        min_p11,
        positivity_ok: min_p2hat2 > floor,
        feasibility: report,
    })
}

fn min_p11(grid: &KernelGrid, lo: usize, hi: usize) -> f64 {
    (lo..=hi).map(|i| grid.p11_node(i)).fold(f64::INFINITY, f64::min)
}

fn solve_block(
    grid: &mut KernelGrid,
    lo: usize,
    hi: usize,
    cfg: &SolveConfig,
    floor: f64,
    slice: usize,
) -> Result<BlockOutcome> {
    match picard(grid, lo, hi, cfg, floor) {
        Ok(outcome) => Ok(outcome),
        Err(PicardFailure::Fatal(e)) => Err(e),
        Err(PicardFailure::NotConverged { residual, history }) => {
            if hi - lo < 2 {
                return Err(Error::Convergence {
                    slice,
                    lo,
                    hi,
                    residual,
                });
            }
            let mid = (lo + hi) / 2;
            let upper = solve_block(grid, mid, hi, cfg, floor, slice)?;
            let lower = solve_block(grid, lo, mid, cfg, floor, slice)?;
            Ok(BlockOutcome {
                iterations: history.len() + upper.iterations + lower.iterations,
                residual: upper.residual.max(lower.residual),
                subdivisions: 1 + upper.subdivisions + lower.subdivisions,
                history,
            })
        }
    }
}

/// Picard iteration on rows `lo..hi` with row `hi` given.
fn picard(
    grid: &mut KernelGrid,
    lo: usize,
    hi: usize,
    cfg: &SolveConfig,
    floor: f64,
) -> std::result::Result<BlockOutcome, PicardFailure> {
    let spec = grid.spec().clone();
    let m = spec.m;
    let w = m + 1;
    let ww = w * w;
    let h = spec.h;
    let params = *grid.params();
    let b = params.b;
    let sigma2 = params.sigma * params.sigma;
    let lam2 = grid.lambda1_sq();
    let decay = (-lam2 * h).exp();
    let half = 0.5 * h;
    let scale = 1f64.max(b.abs()).max(b * b);
    let rows = hi - lo + 1;

    // 1 / p2hat2(x, 0) = 1 / (σ² p11(x + d)), fixed during the block
    let inv_p: Vec<f64> = (lo..=hi).map(|x| 1.0 / (sigma2 * grid.p11[x + m])).collect();

    // constant extension of the top row
    let top11 = grid.p11[hi];
    let top12 = grid.p12_row(hi).to_vec();
    let top22 = grid.p22_row(hi).to_vec();
    for i in lo..hi {
        grid.p11[i] = top11;
        grid.p12_row_mut(i).copy_from_slice(&top12);
        grid.p22_row_mut(i).copy_from_slice(&top22);
    }

    let mut face = vec![0.0; rows * w]; // p22(x, j, 0) of the previous iterate
    let mut old12 = vec![0.0; rows * w];
    let mut old11 = vec![0.0; rows];
    let mut g11 = vec![0.0; rows];
    let mut g12 = vec![0.0; rows * w];
    let mut coef22 = vec![0.0; rows]; // λ₁² / p11(x)
    let mut history = Vec::new();

    for _ in 0..cfg.max_iter {
        for r in 0..rows {
            let i = lo + r;
            old11[r] = grid.p11[i];
            old12[r * w..(r + 1) * w].copy_from_slice(grid.p12_row(i));
            let row22 = grid.p22_row(i);
            for j in 0..w {
                face[r * w + j] = row22[j * w + m];
            }
        }
        if lam2 > 0.0 {
            for r in 0..rows {
                if !(old11[r] > floor) {
                    return Err(PicardFailure::Fatal(Error::Positivity {
                        t: spec.t(lo + r),
                        what: "p11(t)",
                        value: old11[r],
                        floor,
                    }));
                }
                coef22[r] = lam2 / old11[r];
            }
        }
        for r in 0..rows {
            let p12_0 = old12[r * w + m];
            g11[r] = inv_p[r] * p12_0 * p12_0;
            for j in 0..w {
                g12[r * w + j] = inv_p[r] * p12_0 * face[r * w + j];
            }
        }

        let mut change = 0.0_f64;

        // p11, integrated from the top row down
        for r in (0..rows - 1).rev() {
            let i = lo + r;
            let new = decay * grid.p11[i + 1] - half * (g11[r] + decay * g11[r + 1]);
            change = change.max((new - old11[r]).abs());
            grid.p11[i] = new;
        }

        // p12 along (t+u, s−u); j = 0 is the boundary face
        for r in (0..rows - 1).rev() {
            let i = lo + r;
            let b11 = b * grid.p11[i];
            let (head, tail) = grid.p12.split_at_mut((i + 1) * w);
            let cur = &mut head[i * w..];
            let up = &tail[..w];
            cur[0] = b11;
            change = change.max((b11 - old12[r * w]).abs());
            for j in 1..w {
                let new = decay * up[j - 1]
                    - half * (g12[r * w + j] + decay * g12[(r + 1) * w + j - 1]);
                change = change.max((new - old12[r * w + j]).abs());
                cur[j] = new;
            }
        }

        // p22 along (t+u, s−u, r−u); j = 0 or k = 0 is the boundary face
        for r in (0..rows - 1).rev() {
            let i = lo + r;
            let (head, tail) = grid.p22.split_at_mut((i + 1) * ww);
            let cur = &mut head[i * ww..];
            let up = &tail[..ww];
            let row12 = &grid.p12[i * w..(i + 1) * w];
            let face_r = &face[r * w..(r + 1) * w];
            let face_u = &face[(r + 1) * w..(r + 2) * w];
            let o12_r = &old12[r * w..(r + 1) * w];
            let o12_u = &old12[(r + 1) * w..(r + 2) * w];
            let (q_r, q_u) = (inv_p[r], inv_p[r + 1]);
            let (c_r, c_u) = (coef22[r], coef22[r + 1]);

            let row_change = cur
                .par_chunks_mut(w)
                .enumerate()
                .map(|(j, out)| {
                    let mut delta = 0.0_f64;
                    for k in 0..w {
                        let new = if j == 0 || k == 0 {
                            b * row12[j.max(k)]
                        } else {
                            let g_here =
                                q_r * (face_r[j] * face_r[k]) + c_r * (o12_r[j] * o12_r[k]);
                            let g_up = q_u * (face_u[j - 1] * face_u[k - 1])
                                + c_u * (o12_u[j - 1] * o12_u[k - 1]);
                            up[(j - 1) * w + k - 1] - half * (g_here + g_up)
                        };
                        delta = delta.max((new - out[k]).abs());
                        out[k] = new;
                    }
                    delta
                })
                .reduce(|| 0.0, f64::max);
            change = change.max(row_change);
        }

        let residual = change / scale;
        history.push(residual);
        if !residual.is_finite() {
            return Err(PicardFailure::NotConverged { residual, history });
        }
        if residual <= cfg.tol {
            return Ok(BlockOutcome {
                iterations: history.len(),
                residual,
                subdivisions: 0,
                history,
            });
        }
    }
    let residual = history.last().copied().unwrap_or(f64::NAN);
    Err(PicardFailure::NotConverged { residual, history })
}

/// Sup-norm residuals of the discretized PDE system and boundary rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub p11: f64,
    pub p12: f64,
    pub p22: f64,
    pub boundary12: f64,
    pub boundary22: f64,
    /// Top-slice part of `p11`'s residual, kept separately.
    pub p11_top: f64,
}

/// Finite-difference residuals along characteristics: for each pair of
/// consecutive rows `(i, i+1)` (always within one slice) the forward
/// difference is compared with the source evaluated at row `i+1`, the end
/// that shares the interval's side of any slice-boundary jump. Intervals
/// ending on the terminal row are skipped for `p12`, `p22`. The quotient
/// `x²/p2hat2(t,0)` is taken as 0 where `p2hat2(t,0) = 0`.
pub fn residual_report(grid: &KernelGrid) -> Result<ResidualReport> {
    if !grid.is_fully_solved() {
        return Err(Error::State("residuals need a fully solved grid".into()));
    }
    let spec = grid.spec();
    let (m, h, n_t) = (spec.m, spec.h, spec.n_t);
    let b = grid.params().b;
    let lam2 = grid.lambda1_sq();
    let quotient = |num: f64, i: usize| {
        let den = grid.p2hat2_node(i, m);
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    };
    let mut out = ResidualReport {
        p11: 0.0,
        p12: 0.0,
        p22: 0.0,
        boundary12: 0.0,
        boundary22: 0.0,
        p11_top: 0.0,
    };
    let top_lo = spec.slices[0].0;
    for i in 0..n_t {
        let e = i + 1;
        let p12_0 = grid.p12_node(e, m);
        let src11 = lam2 * grid.p11_node(e) + quotient(p12_0 * p12_0, e);
        let r11 = ((grid.p11_node(e) - grid.p11_node(i)) / h - src11).abs();
        if i >= top_lo {
            out.p11_top = out.p11_top.max(r11);
        }
        out.p11 = out.p11.max(r11);
        if e == n_t {
            // p12 and p22 jump to their terminal values at t = T
            continue;
        }
        for j in 1..=m {
            let src = lam2 * grid.p12_node(e, j - 1)
                + quotient(p12_0 * grid.p22_node(e, j - 1, m), e);
            let r = ((grid.p12_node(e, j - 1) - grid.p12_node(i, j)) / h - src).abs();
            out.p12 = out.p12.max(r);
            for k in 1..=m {
                let mut src = quotient(grid.p22_node(e, j - 1, m) * grid.p22_node(e, m, k - 1), e);
                if lam2 > 0.0 {
                    src += lam2 * grid.p12_node(e, j - 1) * grid.p12_node(e, k - 1)
                        / grid.p11_node(e);
                }
                let r = ((grid.p22_node(e, j - 1, k - 1) - grid.p22_node(i, j, k)) / h - src).abs();
                out.p22 = out.p22.max(r);
            }
        }
    }
    if let Some(last) = spec.last_active_row() {
        for i in 0..=last {
            out.boundary12 = out
                .boundary12
                .max((grid.p12_node(i, 0) - b * grid.p11_node(i)).abs());
            for j in 0..=m {
                out.boundary22 = out
                    .boundary22
                    .max((grid.p22_node(i, j, 0) - b * grid.p12_node(i, j)).abs())
                    .max((grid.p22_node(i, 0, j) - b * grid.p12_node(i, j)).abs());
            }
        }
    }
    Ok(out)
}
