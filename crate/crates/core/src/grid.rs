//! Storage and evaluation of the Riccati kernels on the discretized domain
//! `[0,T] × [-d,0]²`.
//!
//! Node `(i, j, k)` sits at `t = i·h`, `s = (j − m)·h`, `r = (k − m)·h`. The
//! grid step divides the delay exactly, so slice boundaries `T − n·d` and the
//! discontinuity surfaces `t + s + d = T` (index `i + j = n_t`) fall on nodes.
//!
//! `p2hat2` is never stored; it is the transport of `p11`,
//! `p2hat2(t,s) = σ²·p11(t+s+d)·1{t+s+d ≤ T}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::solver::TwoAssetParams;

mod table;

pub use table::{export_csv, import_csv, table_max_abs_diff, KernelTable, TableRow};

/// Relative slack used when snapping coordinates to grid nodes.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelId {
    P11,
    P12,
    P2Hat2,
    P22,
}

impl KernelId {
    pub const ALL: [KernelId; 4] = [KernelId::P11, KernelId::P12, KernelId::P2Hat2, KernelId::P22];

    pub fn label(self) -> &'static str {
        match self {
            KernelId::P11 => "p11",
            KernelId::P12 => "p12",
            KernelId::P2Hat2 => "p2hat2",
            KernelId::P22 => "p22",
        }
    }

    /// Number of spatial arguments besides `t`.
    pub fn arity(self) -> usize {
        match self {
            KernelId::P11 => 0,
            KernelId::P12 | KernelId::P2Hat2 => 1,
            KernelId::P22 => 2,
        }
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for KernelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "p11" | "11" => Ok(KernelId::P11),
            "p12" | "12" => Ok(KernelId::P12),
            "p2hat2" | "2hat2" => Ok(KernelId::P2Hat2),
            "p22" | "22" => Ok(KernelId::P22),
            other => Err(Error::Parameter(format!("unknown kernel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub h: f64,
    pub m: usize,
    pub n_t: usize,
    pub d: f64,
    /// Horizon actually used, `n_t · h`.
    pub horizon: f64,
    pub requested_horizon: f64,
    pub snapped: bool,
    /// Row index bounds `(lo, hi)` of the slices `[T-(n+1)d, T-nd]`,
    /// top slice first; the last one is truncated at `t = 0`.
    pub slices: Vec<(usize, usize)>,
}

impl GridSpec {
    pub fn new(d: f64, horizon: f64, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Parameter("m must be >= 1".into()));
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Parameter(format!(
                "grid needs a positive delay, got {d}"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Parameter(format!(
                "horizon must be > 0, got {horizon}"
            )));
        }
        let h = d / m as f64;
        let n_t = (horizon / h).round() as usize;
        if n_t == 0 {
            return Err(Error::Parameter(format!(
                "horizon {horizon} shorter than half a step {h}"
            )));
        }
        let snapped_horizon = n_t as f64 * h;
        let snapped = (snapped_horizon - horizon).abs() > 1e-12 * horizon.max(1.0);

        let mut slices = Vec::new();
        let mut hi = n_t;
        loop {
            let lo = hi.saturating_sub(m);
            slices.push((lo, hi));
            if lo == 0 {
                break;
            }
            hi = lo;
        }
        Ok(GridSpec {
            h,
            m,
            n_t,
            d,
            horizon: if snapped { snapped_horizon } else { horizon },
            requested_horizon: horizon,
            snapped,
            slices,
        })
    }

    pub fn for_params(params: &ModelParams, m: usize) -> Result<Self> {
        params.validate()?;
        Self::new(params.d, params.horizon, m)
    }

    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_t {
            self.horizon
        } else {
            i as f64 * self.h
        }
    }

    pub fn s(&self, j: usize) -> f64 {
        if j == 0 {
            -self.d
        } else {
            (j as f64 - self.m as f64) * self.h
        }
    }

    /// Slice index containing row `i` (rows on a boundary belong to the upper slice).
    pub fn slice_of(&self, i: usize) -> usize {
        self.slices
            .iter()
            .position(|&(lo, hi)| i >= lo && i <= hi)
            .expect("row inside grid")
    }

    /// Last row with `t ≤ T − d`, if any.
    pub fn last_active_row(&self) -> Option<usize> {
        self.n_t.checked_sub(self.m)
    }

    pub fn same_nodes(&self, other: &GridSpec) -> bool {
        self.m == other.m
            && self.n_t == other.n_t
            && (self.h - other.h).abs() <= 1e-14 * self.h
    }

    /// Snaps `t` to a row index, failing for off-grid or out-of-range times.
    pub fn row_of(&self, t: f64) -> Result<usize> {
        let u = t / self.h;
        let i = u.round();
        if (u - i).abs() > SNAP * (1.0 + u.abs()) || i < 0.0 || i as usize > self.n_t {
            return Err(Error::Domain(format!("t = {t} is not a grid node")));
        }
        Ok(i as usize)
    }
}

/// Splits a fractional coordinate into its cell index and offset, snapping
/// values within `SNAP` of an integer onto it.
fn split(x: f64) -> (i64, f64) {
    let r = x.round();
    if (x - r).abs() <= SNAP * (1.0 + x.abs()) {
        return (r as i64, 0.0);
    }
    let f = x.floor();
    (f as i64, x - f)
}

/// Kernel arrays on a [`GridSpec`]. Rows are filled backward in time; the
/// `solved` mask records which `t`-rows hold data.
#[derive(Debug, Clone)]
pub struct KernelGrid {
    spec: GridSpec,
    params: ModelParams,
    two_asset: Option<TwoAssetParams>,
    pub(crate) p11: Vec<f64>,
    pub(crate) p12: Vec<f64>,
    pub(crate) p22: Vec<f64>,
    solved: Vec<bool>,
}

/// Coordinates of a grid node in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodePoint {
    pub t: f64,
    pub s: Option<f64>,
    pub r: Option<f64>,
}

impl KernelGrid {
    /// Empty grid; `params` carries the drift and volatility entering the
    /// boundary rows and the transport identity.
    pub fn empty(params: ModelParams, spec: GridSpec) -> Self {
        let w = spec.m + 1;
        let rows = spec.n_t + 1;
        KernelGrid {
            params,
            two_asset: None,
            p11: vec![0.0; rows],
            p12: vec![0.0; rows * w],
            p22: vec![0.0; rows * w * w],
            solved: vec![false; rows],
            spec,
        }
    }

    pub(crate) fn with_two_asset(mut self, two: TwoAssetParams) -> Self {
        self.two_asset = Some(two);
        self
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Effective `(b, σ, d, T)`; for two-asset grids these are the delayed
    /// asset's boundary coefficient and residual volatility.
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn two_asset(&self) -> Option<&TwoAssetParams> {
        self.two_asset.as_ref()
    }

    /// `λ₁²` of the undelayed asset, zero for single-asset grids.
    pub fn lambda1_sq(&self) -> f64 {
        self.two_asset.map_or(0.0, |p| p.lambda1 * p.lambda1)
    }

    pub fn is_row_solved(&self, i: usize) -> bool {
        self.solved.get(i).copied().unwrap_or(false)
    }

    pub fn is_fully_solved(&self) -> bool {
        self.solved.iter().all(|&s| s)
    }

    pub(crate) fn mark_solved(&mut self, lo: usize, hi: usize) {
        for s in &mut self.solved[lo..=hi] {
            *s = true;
        }
    }

    #[inline]
    pub(crate) fn idx12(&self, i: usize, j: usize) -> usize {
        i * (self.spec.m + 1) + j
    }

    #[inline]
    pub(crate) fn idx22(&self, i: usize, j: usize, k: usize) -> usize {
        let w = self.spec.m + 1;
        (i * w + j) * w + k
    }

    #[inline]
    pub fn p11_node(&self, i: usize) -> f64 {
        self.p11[i]
    }

    #[inline]
    pub fn p12_node(&self, i: usize, j: usize) -> f64 {
        self.p12[self.idx12(i, j)]
    }

    #[inline]
    pub fn p22_node(&self, i: usize, j: usize, k: usize) -> f64 {
        self.p22[self.idx22(i, j, k)]
    }

    /// `σ²·p11(t+s+d)·1{t+s+d ≤ T}` at node `(i, j)`.
    #[inline]
    pub fn p2hat2_node(&self, i: usize, j: usize) -> f64 {
        let target = i + j;
        if target > self.spec.n_t {
            0.0
        } else {
            self.params.sigma * self.params.sigma * self.p11[target]
        }
    }

    pub(crate) fn p12_row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.spec.m + 1;
        &mut self.p12[i * w..(i + 1) * w]
    }

    pub(crate) fn p12_row(&self, i: usize) -> &[f64] {
        let w = self.spec.m + 1;
        &self.p12[i * w..(i + 1) * w]
    }

    pub(crate) fn p22_row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = (self.spec.m + 1) * (self.spec.m + 1);
        &mut self.p22[i * w..(i + 1) * w]
    }

    pub(crate) fn p22_row(&self, i: usize) -> &[f64] {
        let w = (self.spec.m + 1) * (self.spec.m + 1);
        &self.p22[i * w..(i + 1) * w]
    }

    /// Value stored for `which` at a node; `p2hat2` ignores `k`, `p11` ignores both.
    pub fn node_value(&self, which: KernelId, i: usize, j: usize, k: usize) -> f64 {
        match which {
            KernelId::P11 => self.p11_node(i),
            KernelId::P12 => self.p12_node(i, j),
            KernelId::P2Hat2 => self.p2hat2_node(i, j),
            KernelId::P22 => self.p22_node(i, j, k),
        }
    }

    pub fn node_point(&self, which: KernelId, i: usize, j: usize, k: usize) -> NodePoint {
        let t = self.spec.t(i);
        match which.arity() {
            0 => NodePoint { t, s: None, r: None },
            1 => NodePoint {
                t,
                s: Some(self.spec.s(j)),
                r: None,
            },
            _ => NodePoint {
                t,
                s: Some(self.spec.s(j)),
                r: Some(self.spec.s(k)),
            },
        }
    }

    /// Rows a node of `which` at row `i` depends on are all solved.
    fn node_available(&self, which: KernelId, i: usize, j: usize) -> bool {
        match which {
            KernelId::P2Hat2 => {
                self.is_row_solved(i) && (i + j > self.spec.n_t || self.is_row_solved(i + j))
            }
            _ => self.is_row_solved(i),
        }
    }

    fn check_range(&self, t: f64, s: Option<f64>, r: Option<f64>) -> Result<()> {
        let tol = SNAP * (1.0 + self.spec.horizon);
        let in_t = t >= -tol && t <= self.spec.horizon + tol;
        let in_s = |v: f64| v >= -self.spec.d - tol && v <= tol;
        if !t.is_finite() || !in_t || s.is_some_and(|v| !in_s(v)) || r.is_some_and(|v| !in_s(v))
        {
            return Err(Error::Domain(format!("(t={t}, s={s:?}, r={r:?})")));
        }
        Ok(())
    }

    fn require_row(&self, i: usize) -> Result<()> {
        if self.is_row_solved(i) {
            Ok(())
        } else {
            Err(Error::State(format!("row t = {} not solved", self.spec.t(i))))
        }
    }

    /// Evaluates a kernel at an arbitrary in-domain point.
    ///
    /// Interpolation is piecewise linear on the simplices of the sheared
    /// lattice `(i, i+j, i+k)`. Every discontinuity surface of the kernels
    /// (slice rows, `t+s+d = T`, `t+r+d = T`) and every domain face is a
    /// lattice plane there, so no simplex straddles one. Indicators are
    /// applied before interpolating, so zeros on the dead zone are exact.
    pub fn eval(&self, which: KernelId, t: f64, s: Option<f64>, r: Option<f64>) -> Result<f64> {
        let need = which.arity();
        let given = s.is_some() as usize + r.is_some() as usize;
        if given != need || (need == 1 && s.is_none()) {
            return Err(Error::Parameter(format!(
                "{which} takes {need} spatial argument(s)"
            )));
        }
        self.check_range(t, s, r)?;
        let h = self.spec.h;
        let n_t = self.spec.n_t as i64;
        let d = self.spec.d;
        let horizon = self.spec.horizon;
        let at_terminal = (t - horizon).abs() <= SNAP * (1.0 + horizon);

        match which {
            KernelId::P11 => {
                let (u0, fu) = split(t / h);
                let (u0, fu) = clamp_cell(u0, fu, n_t);
                self.require_row(u0 as usize)?;
                if fu > 0.0 {
                    self.require_row(u0 as usize + 1)?;
                }
                let a = self.p11[u0 as usize];
                let b = if fu > 0.0 { self.p11[u0 as usize + 1] } else { a };
                Ok((1.0 - fu) * a + fu * b)
            }
            KernelId::P2Hat2 => {
                let s = s.unwrap_or_default();
                let tau = t + s + d;
                if tau > horizon + SNAP * (1.0 + horizon) {
                    return Ok(0.0);
                }
                let sig2 = self.params.sigma * self.params.sigma;
                Ok(sig2 * self.eval(KernelId::P11, tau.min(horizon), None, None)?)
            }
            KernelId::P12 => {
                let s = s.unwrap_or_default();
                if at_terminal || t + s + d > horizon + SNAP * (1.0 + horizon) {
                    return Ok(0.0);
                }
                let coords = [t / h, (t + s + d) / h];
                let m = self.spec.m;
                self.simplex_eval(
                    &coords,
                    |v| {
                        let j = v[1].checked_sub(v[0]).filter(|&j| j <= m)?;
                        Some((v[0], self.idx12(v[0], j)))
                    },
                    &self.p12,
                )
            }
            KernelId::P22 => {
                let (s, r) = (s.unwrap_or_default(), r.unwrap_or_default());
                if at_terminal || t + s.max(r) + d > horizon + SNAP * (1.0 + horizon) {
                    return Ok(0.0);
                }
                let coords = [t / h, (t + s + d) / h, (t + r + d) / h];
                let m = self.spec.m;
                self.simplex_eval(
                    &coords,
                    |v| {
                        let j = v[1].checked_sub(v[0]).filter(|&j| j <= m)?;
                        let k = v[2].checked_sub(v[0]).filter(|&k| k <= m)?;
                        Some((v[0], self.idx22(v[0], j, k)))
                    },
                    &self.p22,
                )
            }
        }
    }

    /// Kuhn-simplex interpolation in sheared coordinates. `node` maps lattice
    /// coordinates to `(row, flat index)`.
    fn simplex_eval<const N: usize>(
        &self,
        coords: &[f64; N],
        node: impl Fn([usize; N]) -> Option<(usize, usize)>,
        data: &[f64],
    ) -> Result<f64> {
        let mut base = [0i64; N];
        let mut frac = [0f64; N];
        for a in 0..N {
            let (c, f) = split(coords[a]);
            base[a] = c;
            frac[a] = f;
        }
        let mut order: [usize; N] = std::array::from_fn(|a| a);
        order.sort_by(|&x, &y| frac[y].total_cmp(&frac[x]));

        let mut corner = base;
        let mut acc = 0.0;
        let mut prev = 1.0;
        for step in 0..=N {
            let next = if step < N { frac[order[step]] } else { 0.0 };
            let weight = prev - next;
            if weight > 0.0 {
                let v: [usize; N] = std::array::from_fn(|a| corner[a] as usize);
                if corner.iter().any(|&c| c < 0) {
                    return Err(Error::Domain(format!("{coords:?}")));
                }
                let (row, flat) = node(v).ok_or_else(|| Error::Domain(format!("{coords:?}")))?;
                if row > self.spec.n_t || flat >= data.len() {
                    return Err(Error::Domain(format!("{coords:?}")));
                }
                self.require_row(row)?;
                acc += weight * data[flat];
            }
            if step < N {
                corner[order[step]] += 1;
            }
            prev = next;
        }
        Ok(acc)
    }

    /// Kernel rows for the fully discretized view used by exports and diffs.
    pub(crate) fn nodes(&self, which: KernelId) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let w = self.spec.m + 1;
        let rows = 0..=self.spec.n_t;
        rows.filter(move |&i| self.is_row_solved(i))
            .flat_map(move |i| {
                let (nj, nk) = match which.arity() {
                    0 => (1, 1),
                    1 => (w, 1),
                    _ => (w, w),
                };
                (0..nj).flat_map(move |j| (0..nk).map(move |k| (i, j, k)))
            })
            .filter(move |&(i, j, _)| self.node_available(which, i, j))
    }

    pub fn to_table(&self, which: KernelId) -> KernelTable {
        let rows = self
            .nodes(which)
            .map(|(i, j, k)| {
                let p = self.node_point(which, i, j, k);
                TableRow {
                    t: p.t,
                    s: p.s,
                    r: p.r,
                    value: self.node_value(which, i, j, k),
                }
            })
            .collect();
        KernelTable { kernel: which, rows }
    }

    /// Rebuilds a grid from imported tables. Rows missing from any of the
    /// three stored kernels stay unsolved.
    pub fn from_tables(
        params: ModelParams,
        spec: GridSpec,
        p11: &KernelTable,
        p12: &KernelTable,
        p22: &KernelTable,
    ) -> Result<Self> {
        for (table, want) in [(p11, KernelId::P11), (p12, KernelId::P12), (p22, KernelId::P22)] {
            if table.kernel != want {
                return Err(Error::Parameter(format!(
                    "expected a {want} table, got {}",
                    table.kernel
                )));
            }
        }
        let mut grid = KernelGrid::empty(params, spec);
        let w = grid.spec.m + 1;
        let rows = grid.spec.n_t + 1;
        let mut count11 = vec![0usize; rows];
        let mut count12 = vec![0usize; rows];
        let mut count22 = vec![0usize; rows];

        let locate = |grid: &KernelGrid, row: &TableRow| -> Result<(usize, usize, usize)> {
            let i = grid.spec.row_of(row.t)?;
            let col = |v: Option<f64>| -> Result<usize> {
                match v {
                    None => Ok(0),
                    Some(v) => {
                        let u = (v + grid.spec.d) / grid.spec.h;
                        let j = u.round();
                        if (u - j).abs() > SNAP * (1.0 + u.abs()) || j < 0.0 || j as usize > grid.spec.m {
                            Err(Error::Domain(format!("s = {v} is not a grid node")))
                        } else {
                            Ok(j as usize)
                        }
                    }
                }
            };
            Ok((i, col(row.s)?, col(row.r)?))
        };

        for row in &p11.rows {
            let (i, _, _) = locate(&grid, row)?;
            grid.p11[i] = row.value;
            count11[i] += 1;
        }
        for row in &p12.rows {
            let (i, j, _) = locate(&grid, row)?;
            let idx = grid.idx12(i, j);
            grid.p12[idx] = row.value;
            count12[i] += 1;
        }
        for row in &p22.rows {
            let (i, j, k) = locate(&grid, row)?;
            let idx = grid.idx22(i, j, k);
            grid.p22[idx] = row.value;
            count22[i] += 1;
        }
        for i in 0..rows {
            grid.solved[i] = count11[i] == 1 && count12[i] == w && count22[i] == w * w;
        }
        Ok(grid)
    }
}

fn clamp_cell(u0: i64, fu: f64, n: i64) -> (i64, f64) {
    if u0 >= n {
        (n, 0.0)
    } else {
        (u0.max(0), fu)
    }
}

/// Closed forms on `t ∈ [T−d, T]`: `p11 = e^{−λ₁²(T−t)}`,
/// `p12 = b·p11·1{t+s+d ≤ T}`, `p22 = b²·p11·1{t+s∨r+d ≤ T}`; single-asset
/// grids have `λ₁ = 0`. The terminal row is `p11 = 1`, `p12 = p22 = 0`.
pub(crate) fn fill_top_slice(grid: &mut KernelGrid) {
    let spec = grid.spec.clone();
    let (b, lam2) = (grid.params.b, grid.lambda1_sq());
    let (lo, hi) = spec.slices[0];
    let w = spec.m + 1;
    for i in lo..=hi {
        let decay = (-lam2 * (spec.horizon - spec.t(i))).exp();
        let decay = if i == spec.n_t { 1.0 } else { decay };
        grid.p11[i] = decay;
        let live = |j: usize| i < spec.n_t && i + j <= spec.n_t;
        let row12 = grid.p12_row_mut(i);
        for (j, v) in row12.iter_mut().enumerate() {
            *v = if live(j) { b * decay } else { 0.0 };
        }
        let row22 = grid.p22_row_mut(i);
        for j in 0..w {
            for k in 0..w {
                row22[j * w + k] = if live(j.max(k)) { b * b * decay } else { 0.0 };
            }
        }
    }
    grid.mark_solved(lo, hi);
}

/// Grid filled only on the top slice `[T−d, T]`.
pub fn init_top_slice(params: &ModelParams, spec: &GridSpec) -> Result<KernelGrid> {
    params.validate()?;
    if (params.d - spec.d).abs() > 1e-12 * spec.d.max(1.0) {
        return Err(Error::Parameter(format!(
            "grid delay {} does not match params delay {}",
            spec.d, params.d
        )));
    }
    let mut grid = KernelGrid::empty(*params, spec.clone());
    fill_top_slice(&mut grid);
    Ok(grid)
}

/// Exact maximum of `|a − b|` over nodes solved in both grids, with the node
/// where it is attained. `None` when the grids share no solved node.
pub fn max_abs_diff(
    a: &KernelGrid,
    b: &KernelGrid,
    which: KernelId,
) -> Result<Option<(f64, NodePoint)>> {
    if !a.spec.same_nodes(&b.spec) {
        return Err(Error::Parameter("grids have different specs".into()));
    }
    let mut best: Option<(f64, NodePoint)> = None;
    for (i, j, k) in a.nodes(which) {
        if !b.node_available(which, i, j) {
            continue;
        }
        let diff = (a.node_value(which, i, j, k) - b.node_value(which, i, j, k)).abs();
        if best.is_none_or(|(m, _)| diff > m) {
            best = Some((diff, a.node_point(which, i, j, k)));
        }
    }
    Ok(best)
}
