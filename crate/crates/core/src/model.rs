//! Problem parameters of the delayed LQ problem
//! `dX_t = α_{t-d} (b dt + σ dW_t)`, cost `E[X_T²]`, and the feasibility
//! sequence that bounds the Riccati kernel `p11` slice by slice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub b: f64,
    pub sigma: f64,
    pub d: f64,
    pub horizon: f64,
}

impl ModelParams {
    pub fn new(b: f64, sigma: f64, d: f64, horizon: f64) -> Result<Self> {
        let params = ModelParams {
            b,
            sigma,
            d,
            horizon,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.b, self.sigma, self.d, self.horizon];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite value in {self:?}")));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Parameter(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.d < 0.0 {
            return Err(Error::Parameter(format!("delay must be >= 0, got {}", self.d)));
        }
        if self.horizon <= 0.0 {
            return Err(Error::Parameter(format!(
                "horizon must be > 0, got {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Squared Sharpe-like ratio `(b/σ)²`.
    pub fn ratio_sq(&self) -> f64 {
        (self.b / self.sigma).powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Computed prefix `a_0, a_1, ...` of the feasibility sequence.
    pub a_seq: Vec<f64>,
    /// Last index with `a_n > 0` before the first nonpositive term; equal to
    /// `cap` when `n_cal_capped` is set.
    pub n_cal: usize,
    /// The recursion never produced a nonpositive term within `cap` steps.
    pub n_cal_capped: bool,
    pub sufficient_holds: bool,
    /// `n_cal · d − T`.
    pub margin: f64,
}

impl FeasibilityReport {
    /// Lower bound for `p11` on the slice `[T-(n+1)d, T-nd]`, when known.
    pub fn slice_bound(&self, slice: usize) -> Option<f64> {
        self.a_seq.get(slice + 1).copied()
    }
}

/// Default recursion cap: enough terms to decide `T < n_cal · d`.
pub fn default_cap(params: &ModelParams) -> usize {
    if params.d > 0.0 {
        (params.horizon / params.d).ceil() as usize + 1
    } else {
        1
    }
    .max(2)
}

/// Evaluates `a_{n+1} = a_n − (d/a_n)(b/σ)²` from `a_0 = 1` and the
/// sufficient existence condition `n_cal ≥ 2 and T < n_cal·d`.
///
/// The recursion stops at the first nonpositive term or after `cap` steps.
/// When it never turns nonpositive, `n_cal` is reported as capped and the
/// condition is treated as satisfied.
pub fn feasibility(params: &ModelParams, cap: usize) -> Result<FeasibilityReport> {
    params.validate()?;
    if cap == 0 {
        return Err(Error::Parameter("cap must be >= 1".into()));
    }
    let step = params.d * params.ratio_sq();
    let mut a_seq = Vec::with_capacity(cap + 1);
    a_seq.push(1.0_f64);
    let mut first_nonpositive = None;
    for n in 0..cap {
        let a = a_seq[n];
        let next = a - step / a;
        a_seq.push(next);
        if next <= 0.0 {
            first_nonpositive = Some(n + 1);
            break;
        }
    }

    let (n_cal, capped) = match first_nonpositive {
        Some(k) => (k - 1, false),
        None => (cap, true),
    };
    let sufficient_holds =
        capped || (n_cal >= 2 && params.horizon < n_cal as f64 * params.d);
    Ok(FeasibilityReport {
        a_seq,
        n_cal,
        n_cal_capped: capped,
        sufficient_holds,
        margin: n_cal as f64 * params.d - params.horizon,
    })
}
