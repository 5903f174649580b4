//! JSON run configuration.
//!
//! ```json
//! {
//!   "model": "mi",
//!   "params": { "b_alpha": 1, "b_X": 1, "b_mu": 1, "sigma": 1, "c_alpha": 1, "c_X": 1,
//!               "c_mu": 1, "c_T": 1, "lambda": 0.5, "T": 1, "mu0_mean": 1, "mu0_var": 0 },
//!   "grid": { "n_steps": 2000 },
//!   "variant": "fbsde_consistent",
//!   "sim": { "n_agents": 100, "n_runs": 200, "n_steps": 200 },
//!   "sweep": { "parameter": "lambda", "values": [0, 0.5, 1] },
//!   "seed": 7
//! }
//! ```
//!
//! The MP model takes `"params": { "nc": {...}, "c": {...}, "p": 0.5, "T": 1 }`
//! with per-group coefficients (no `lambda`), `sim` uses `n_nc` and `n_c`,
//! and `candidates` may list `{"E": ..., "F": ...}` witnesses as 2x2 arrays
//! of `[re, im]` pairs.

use std::path::{Path, PathBuf};

use mfmix::conditions::Candidate;
use mfmix::linalg::Complex64;
use mfmix::sim::{DeviationFamily, MpSimConfig, SimConfig};
use mfmix::{MiParams, MpParams, TimeGrid, Variant};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mi,
    Mp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Mi(MiParams),
    Mp(MpParams),
}

impl Params {
    pub fn horizon(&self) -> f64 {
        match self {
            Params::Mi(p) => p.horizon,
            Params::Mp(p) => p.horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_agents: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_nc: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_c: Option<usize>,
    pub n_runs: usize,
    pub n_steps: usize,
    /// Also estimate the ε-Nash gap.
    #[serde(default = "yes")]
    pub epsilon: bool,
    #[serde(default)]
    pub family: DeviationFamily,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "lambda")]
    Lambda,
    #[serde(rename = "p")]
    P,
    /// Population size. For the MP model the agents are split between the
    /// groups in proportion `p`, at least one per group.
    #[serde(rename = "N")]
    N,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Lambda => "lambda",
            SweepParameter::P => "p",
            SweepParameter::N => "N",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

type ComplexPairs = [[[f64; 2]; 2]; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    #[serde(rename = "E")]
    pub e: ComplexPairs,
    #[serde(rename = "F")]
    pub f: ComplexPairs,
}

impl CandidateSpec {
    pub fn to_candidate(&self) -> Candidate {
        let conv = |m: &ComplexPairs| m.map(|row| row.map(|[re, im]| Complex64::new(re, im)));
        Candidate {
            e: conv(&self.e),
            f: conv(&self.f),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: ModelKind,
    params: serde_json::Value,
    #[serde(default)]
    grid: Option<GridSpec>,
    #[serde(default)]
    variant: Option<Variant>,
    #[serde(default)]
    sim: Option<SimSettings>,
    #[serde(default)]
    sweep: Option<SweepSpec>,
    #[serde(default)]
    candidates: Vec<CandidateSpec>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    out: Option<PathBuf>,
}

/// Fully resolved configuration. Serialized into every report, so nothing
/// that influences results is left implicit. The output directory is the
/// one exception: it does not affect any number.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub params: Params,
    pub grid: GridSpec,
    pub variant: Variant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSettings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<CandidateSpec>,
    pub seed: u64,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub out: Option<PathBuf>,
}

// serde reports missing or unknown keys as "... field `name` ..."
fn quoted_field(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

fn json_error(prefix: &str, e: serde_json::Error) -> CliError {
    let msg = e.to_string();
    let field = quoted_field(&msg).map(|f| if prefix.is_empty() { f } else { format!("{prefix}.{f}") });
    CliError::validation(field, msg)
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, overrides)
    }

    pub fn from_json(text: &str, overrides: &Overrides) -> Result<Self, CliError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| json_error("", e))?;
        let params = match raw.model {
            ModelKind::Mi => Params::Mi(
                serde_json::from_value::<MiParams>(raw.params).map_err(|e| json_error("params", e))?,
            ),
            ModelKind::Mp => Params::Mp(
                serde_json::from_value::<MpParams>(raw.params).map_err(|e| json_error("params", e))?,
            ),
        };
        let grid = match raw.grid {
            Some(g) => g,
            None => GridSpec {
                n_steps: TimeGrid::with_default_resolution(params.horizon().max(f64::MIN_POSITIVE))
                    .map(|g| g.n_steps())
                    .unwrap_or(1),
            },
        };
        let cfg = RunConfig {
            model: raw.model,
            params,
            grid,
            variant: overrides.variant.or(raw.variant).unwrap_or_default(),
            sim: raw.sim,
            sweep: raw.sweep,
            candidates: raw.candidates,
            seed: overrides.seed.or(raw.seed).unwrap_or(0),
            out: overrides.out.clone().or(raw.out),
        };
        cfg.validate()
    }

    /// Checks every invariant, including the model parameters themselves.
    pub fn validate(mut self) -> Result<Self, CliError> {
        self.params = match self.params {
            Params::Mi(p) => Params::Mi(p.validate().map_err(|e| CliError::param(&e))?),
            Params::Mp(p) => Params::Mp(p.validate().map_err(|e| CliError::param(&e))?),
        };
        if self.grid.n_steps == 0 {
            return Err(CliError::validation(Some("grid.n_steps".into()), "n_steps must be > 0"));
        }
        if let Some(sim) = &self.sim {
            let need = |name: &str, v: Option<usize>| match v {
                Some(n) if n > 0 => Ok(()),
                _ => Err(CliError::validation(
                    Some(format!("sim.{name}")),
                    format!("{name} must be a positive integer"),
                )),
            };
            match self.model {
                ModelKind::Mi => need("n_agents", sim.n_agents)?,
                ModelKind::Mp => {
                    need("n_nc", sim.n_nc)?;
                    need("n_c", sim.n_c)?;
                }
            }
            need("n_runs", Some(sim.n_runs))?;
            need("n_steps", Some(sim.n_steps))?;
        }
        if let Some(sweep) = &self.sweep {
            let field = || Some("sweep.parameter".to_string());
            match (sweep.parameter, self.model) {
                (SweepParameter::Lambda, ModelKind::Mp) => {
                    return Err(CliError::validation(field(), "lambda is not a parameter of the mp model"))
                }
                (SweepParameter::P, ModelKind::Mi) => {
                    return Err(CliError::validation(field(), "p is not a parameter of the mi model"))
                }
                (SweepParameter::N, _) if self.sim.is_none() => {
                    return Err(CliError::validation(field(), "an N sweep needs a sim section"))
                }
                _ => {}
            }
            if sweep.values.is_empty() {
                return Err(CliError::validation(Some("sweep.values".into()), "no sweep values"));
            }
            if sweep.parameter == SweepParameter::N
                && sweep.values.iter().any(|v| !(v.fract() == 0.0 && *v >= 1.0))
            {
                return Err(CliError::validation(
                    Some("sweep.values".into()),
                    "N values must be positive integers",
                ));
            }
        }
        Ok(self)
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::new(self.params.horizon(), self.grid.n_steps).expect("validated grid")
    }

    pub fn mi_sim(&self) -> Option<SimConfig> {
        let s = self.sim.as_ref()?;
        Some(SimConfig {
            n_agents: s.n_agents?,
            n_runs: s.n_runs,
            n_steps: s.n_steps,
            seed: self.seed,
        })
    }

    pub fn mp_sim(&self) -> Option<MpSimConfig> {
        let s = self.sim.as_ref()?;
        Some(MpSimConfig {
            n_nc: s.n_nc?,
            n_c: s.n_c?,
            n_runs: s.n_runs,
            n_steps: s.n_steps,
            seed: self.seed,
        })
    }

    /// Copy with one sweep value applied; the copy carries no sweep.
    pub fn with_sweep_value(&self, parameter: SweepParameter, value: f64) -> Result<Self, CliError> {
        let mut cfg = self.clone();
        cfg.sweep = None;
        match (&mut cfg.params, parameter) {
            (Params::Mi(p), SweepParameter::Lambda) => p.lambda = value,
            (Params::Mp(p), SweepParameter::P) => p.p = value,
            (params, SweepParameter::N) => {
                let n = value as usize;
                let sim = cfg.sim.as_mut().expect("validated");
                match params {
                    Params::Mi(_) => sim.n_agents = Some(n),
                    Params::Mp(p) => {
                        let n_nc = ((p.p * n as f64).round() as usize).clamp(1, n.max(2) - 1);
                        sim.n_nc = Some(n_nc);
                        sim.n_c = Some(n.max(2) - n_nc);
                    }
                }
            }
            _ => unreachable!("validated sweep parameter"),
        }
        cfg.validate()
    }
}
