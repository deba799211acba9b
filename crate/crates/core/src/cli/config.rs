//! Run configuration: a TOML file with one table per module, overridden by
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markowitz::MarketParams;
use crate::model::ModelParams;
use crate::sim::InitialSegment;
use crate::solver::{SolveConfig, TwoAssetParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Single,
    TwoAsset,
    Markowitz,
    Markowitz2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub lambda: Option<f64>,
    pub sigma: Option<f64>,
    pub d: Option<f64>,
    pub horizon: Option<f64>,
    pub x0: f64,
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub c_list: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub m: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { m: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub n_paths: usize,
    pub seed: u64,
    /// Initial state for `single` and `two-asset`; markowitz kinds use `market.x0`.
    pub x0: Option<f64>,
    /// Target for `single` and `two-asset`; markowitz kinds use `ξ*` at `market.c`.
    pub xi: Option<f64>,
    pub test_mode: bool,
    /// Number of leading paths written to `paths.csv`.
    pub export_paths: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            n_paths: 1000,
            seed: 0,
            x0: None,
            xi: None,
            test_mode: false,
            export_paths: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaKind {
    Constant,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaSection {
    pub kind: GammaKind,
    pub value: Option<f64>,
    /// Inline values on `−d, ..., 0`.
    pub values: Option<Vec<f64>>,
    /// CSV file with header `s,value`; relative to the config file.
    pub file: Option<PathBuf>,
}

impl Default for GammaSection {
    fn default() -> Self {
        GammaSection {
            kind: GammaKind::Constant,
            value: Some(0.0),
            values: None,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub positivity_floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub model: Option<ModelParams>,
    pub two_asset: Option<TwoAssetParams>,
    pub market: Option<MarketSection>,
    #[serde(default)]
    pub grid: GridSection,
    pub solver: Option<SolverSection>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub gamma: GammaSection,
    pub check: Option<CheckSection>,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory of the config file, for resolving relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self) -> Result<()> {
        let need = |present: bool, section: &str| {
            if present {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "problem kind {:?} needs a [{section}] section",
                    self.problem.kind
                )))
            }
        };
        match self.problem.kind {
            ProblemKind::Single => need(self.model.is_some(), "model")?,
            ProblemKind::TwoAsset => need(self.two_asset.is_some(), "two_asset")?,
            ProblemKind::Markowitz => {
                need(self.market.is_some(), "market")?;
                self.market_params()?;
            }
            ProblemKind::Markowitz2 => {
                need(self.two_asset.is_some(), "two_asset")?;
                need(self.market.is_some(), "market")?;
            }
        }
        if self.grid.m == 0 {
            return Err(Error::Config("grid.m must be >= 1".into()));
        }
        match self.gamma.kind {
            GammaKind::Constant if self.gamma.values.is_some() || self.gamma.file.is_some() => {
                Err(Error::Config("constant gamma takes only `value`".into()))
            }
            GammaKind::Table if self.gamma.values.is_some() == self.gamma.file.is_some() => Err(
                Error::Config("table gamma needs exactly one of `values` or `file`".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Market section completed into full parameters (markowitz kinds).
    pub fn market_params(&self) -> Result<MarketParams> {
        let m = self
            .market
            .as_ref()
            .ok_or_else(|| Error::Config("missing [market] section".into()))?;
        if self.problem.kind == ProblemKind::Markowitz2 {
            let two = self.two_asset.as_ref().expect("validated");
            return Ok(MarketParams {
                lambda: two.lambda2,
                sigma: two.sigma2,
                d: two.d,
                horizon: two.horizon,
                x0: m.x0,
                c: m.c.unwrap_or(m.x0),
            });
        }
        let get = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("missing market.{name}")))
        };
        Ok(MarketParams {
            lambda: get(m.lambda, "lambda")?,
            sigma: get(m.sigma, "sigma")?,
            d: get(m.d, "d")?,
            horizon: get(m.horizon, "horizon")?,
            x0: m.x0,
            c: m.c.unwrap_or(m.x0),
        })
    }

    /// Single-asset model behind the problem (the effective one for two assets).
    pub fn model_params(&self) -> Result<ModelParams> {
        match self.problem.kind {
            ProblemKind::Single => Ok(self.model.expect("validated")),
            ProblemKind::TwoAsset | ProblemKind::Markowitz2 => {
                let two = self.two_asset.expect("validated");
                two.validate()?;
                Ok(two.effective_params())
            }
            ProblemKind::Markowitz => self.market_params()?.model_params(),
        }
    }

    pub fn is_two_asset(&self) -> bool {
        matches!(self.problem.kind, ProblemKind::TwoAsset | ProblemKind::Markowitz2)
    }

    pub fn solve_config(&self) -> SolveConfig {
        let mut out = SolveConfig::default();
        if let Some(s) = &self.solver {
            out.tol = s.tol.unwrap_or(out.tol);
            out.max_iter = s.max_iter.unwrap_or(out.max_iter);
            out.positivity_floor = s.positivity_floor;
        }
        out
    }

    pub fn initial_segment(&self, m: usize) -> Result<InitialSegment> {
        match self.gamma.kind {
            GammaKind::Constant => Ok(InitialSegment::Constant(self.gamma.value.unwrap_or(0.0))),
            GammaKind::Table => {
                let values = match (&self.gamma.values, &self.gamma.file) {
                    (Some(v), _) => v.clone(),
                    (None, Some(file)) => read_gamma_file(&self.base_dir.join(file), m)?,
                    (None, None) => unreachable!("validated"),
                };
                if values.len() != m + 1 {
                    return Err(Error::Config(format!(
                        "gamma table has {} values, grid.m = {m} needs {}",
                        values.len(),
                        m + 1
                    )));
                }
                Ok(InitialSegment::Table(values))
            }
        }
    }
}

/// Reads `s,value` rows; `s` must run over the `m+1` grid nodes of `[−d, 0]`
/// in increasing order.
fn read_gamma_file(path: &Path, m: usize) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "s,value" => {}
        _ => return Err(err(1, "expected header 's,value'".into())),
    }
    let mut prev_s = f64::NEG_INFINITY;
    let mut values = Vec::with_capacity(m + 1);
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (s, v) = line
            .split_once(',')
            .ok_or_else(|| err(n + 1, "expected 's,value'".into()))?;
        let s: f64 = s.trim().parse().map_err(|_| err(n + 1, format!("bad s '{s}'")))?;
        let v: f64 = v.trim().parse().map_err(|_| err(n + 1, format!("bad value '{v}'")))?;
        if !(s > prev_s) {
            return Err(err(n + 1, "s must be increasing".into()));
        }
        prev_s = s;
        values.push(v);
    }
    Ok(values)
}
