//! JSON experiment configuration: body, loss, schedule, noise, mode,
//! horizon, constant overrides, replicas, and seeding. Configs round-trip
//! byte-identically through serde (stable field order, no maps).

use bco_core::env::{
    drifting_quadratics, make_linear, make_lovasz, make_maxlinear, make_quadratic, LossFn,
    LossOracle, NoiseModel, Schedule, SetFunctionTable,
};
use bco_core::geometry::{Body, PositionedBody};
use bco_core::ons::{constants_adversarial, constants_stochastic, AlgoConstants};
use bco_core::Mode;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Errors carry enough context to print and exit; config problems map to
/// exit code 2 at the CLI boundary.
pub type ConfigResult<T> = anyhow::Result<T>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BodySpec {
    Ball {
        dim: usize,
        #[serde(default = "default_radius")]
        radius: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ellipsoid {
        /// Row-major d×d quadratic-form matrix.
        a: Vec<Vec<f64>>,
        center: Vec<f64>,
    },
    Simplex {
        dim: usize,
        scale: f64,
    },
}

fn default_radius() -> f64 {
    1.0
}

impl BodySpec {
    pub fn dim(&self) -> usize {
        match self {
            BodySpec::Ball { dim, .. } | BodySpec::Simplex { dim, .. } => *dim,
            BodySpec::Box { lo, .. } => lo.len(),
            BodySpec::Ellipsoid { center, .. } => center.len(),
        }
    }

    pub fn build(&self) -> ConfigResult<Body> {
        let body = match self {
            BodySpec::Ball { dim, radius } => Body::ball(*dim, *radius)?,
            BodySpec::Box { lo, hi } => Body::box_body(
                DVector::from_vec(lo.clone()),
                DVector::from_vec(hi.clone()),
            )?,
            BodySpec::Ellipsoid { a, center } => {
                let d = center.len();
                if a.len() != d || a.iter().any(|row| row.len() != d) {
                    anyhow::bail!("ellipsoid matrix must be {d}x{d}");
                }
                let flat: Vec<f64> = a.iter().flatten().copied().collect();
                Body::ellipsoid(DMatrix::from_row_slice(d, d, &flat), DVector::from_vec(center.clone()))?
            }
            BodySpec::Simplex { dim, scale } => Body::simplex(*dim, *scale)?,
        };
        Ok(body)
    }

    /// The same spec at a different dimension (d-sweeps). Only dimension-
    /// parametric bodies support this.
    pub fn with_dim(&self, dim: usize) -> ConfigResult<BodySpec> {
        match self {
            BodySpec::Ball { radius, .. } => Ok(BodySpec::Ball { dim, radius: *radius }),
            BodySpec::Simplex { scale, .. } => Ok(BodySpec::Simplex { dim, scale: *scale }),
            _ => anyhow::bail!("only ball and simplex bodies support dimension sweeps"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub c: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LossSpec {
    Quadratic { center: Vec<f64>, scale: f64 },
    Linear { c: Vec<f64> },
    Maxlinear { pieces: Vec<PieceSpec> },
    LovaszCut {
        vertices: usize,
        edges: Vec<(usize, usize, f64)>,
    },
}

impl LossSpec {
    pub fn build(&self, body: &Body) -> ConfigResult<LossFn> {
        let loss = match self {
            LossSpec::Quadratic { center, scale } => {
                make_quadratic(body, DVector::from_vec(center.clone()), *scale)?
            }
            LossSpec::Linear { c } => make_linear(body, DVector::from_vec(c.clone()))?,
            LossSpec::Maxlinear { pieces } => {
                let parts: Vec<(DVector<f64>, f64)> = pieces
                    .iter()
                    .map(|p| (DVector::from_vec(p.c.clone()), p.b))
                    .collect();
                make_maxlinear(body, &parts)?
            }
            LossSpec::LovaszCut { vertices, edges } => {
                require_signed_unit_box(body, *vertices)?;
                make_lovasz(SetFunctionTable::cut(*vertices, edges)?)
            }
        };
        Ok(loss)
    }
}

/// Lovász losses live on the box [−1, 1]^d.
fn require_signed_unit_box(body: &Body, vertices: usize) -> ConfigResult<()> {
    if body.dim() != vertices {
        anyhow::bail!(
            "lovasz-cut with {vertices} vertices needs a {vertices}-dimensional body, got {}",
            body.dim()
        );
    }
    let ok = match body {
        Body::Box { lo, hi } => {
            lo.iter().all(|&v| (v + 1.0).abs() < 1e-12) && hi.iter().all(|&v| (v - 1.0).abs() < 1e-12)
        }
        _ => false,
    };
    if !ok {
        anyhow::bail!("lovasz-cut losses require the box body [-1, 1]^d");
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    #[default]
    Fixed,
    /// Main loss for rounds 1..=at, `second` afterwards.
    Switch { at: usize, second: LossSpec },
    /// Quadratic centers drift on a circle (main loss must be quadratic).
    Drifting { amplitude: f64, period: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSpec {
    None,
    Gaussian { std: f64 },
    Uniform { half_width: f64 },
}

impl Default for NoiseSpec {
    fn default() -> NoiseSpec {
        NoiseSpec::Gaussian { std: 0.1 }
    }
}

impl NoiseSpec {
    pub fn build(&self) -> ConfigResult<NoiseModel> {
        Ok(match self {
            NoiseSpec::None => NoiseModel::None,
            NoiseSpec::Gaussian { std } => NoiseModel::gaussian(*std)?,
            NoiseSpec::Uniform { half_width } => NoiseModel::bounded_uniform(*half_width)?,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    Adversarial,
    Stochastic,
}

impl From<ModeSpec> for Mode {
    fn from(m: ModeSpec) -> Mode {
        match m {
            ModeSpec::Adversarial => Mode::Adversarial,
            ModeSpec::Stochastic => Mode::Stochastic,
        }
    }
}

/// Tuned-constant overrides; anything left `None` keeps the preset formula
/// value. `c_log` and `m` enter the preset construction itself.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_log: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
}

impl Overrides {
    pub fn set(&mut self, key: &str, value: f64) -> ConfigResult<()> {
        match key {
            "eta" => self.eta = Some(value),
            "lambda" => self.lambda = Some(value),
            "sigma_sq" => self.sigma_sq = Some(value),
            "gamma" => self.gamma = Some(value),
            "epsilon" => self.epsilon = Some(value),
            "f_max" => self.f_max = Some(value),
            "c_log" => self.c_log = Some(value),
            "m" => self.m = Some(value),
            _ => anyhow::bail!(
                "unknown constant '{key}' (expected eta, lambda, sigma_sq, gamma, epsilon, f_max, c_log, or m)"
            ),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub body: BodySpec,
    pub loss: LossSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub mode: ModeSpec,
    pub n: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub overrides: Overrides,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

fn default_delta() -> f64 {
    0.01
}

fn default_replicas() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_path(path: &std::path::Path) -> ConfigResult<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("parsing config {}: {e}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Applies a CLI `key=value` override. Keys are the constant names plus
    /// `n`, `replicas`, and `seed`.
    pub fn apply_cli_override(&mut self, spec: &str) -> ConfigResult<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("override '{spec}' is not of the form key=value"))?;
        match key {
            "n" => self.n = value.parse()?,
            "replicas" => self.replicas = value.parse()?,
            "seed" => self.seed = value.parse()?,
            "delta" => self.delta = value.parse()?,
            _ => self.overrides.set(key, value.parse()?)?,
        }
        Ok(())
    }

    /// Resolved constants: preset formulas from (mode, n, d, δ, C_log, M),
    /// then field overrides, then a final validity check.
    pub fn build_constants(&self) -> ConfigResult<AlgoConstants> {
        let d = self.body.dim();
        let c_log = self.overrides.c_log.unwrap_or(1.0);
        let mut k = match self.mode {
            ModeSpec::Adversarial => constants_adversarial(self.n, d, self.delta, c_log)?,
            ModeSpec::Stochastic => {
                let m = self.overrides.m.unwrap_or(1.0);
                constants_stochastic(self.n, d, self.delta, m, c_log)?
            }
        };
        if let Some(v) = self.overrides.eta {
            k.eta = v;
        }
        if let Some(v) = self.overrides.lambda {
            k.lambda = v;
        }
        if let Some(v) = self.overrides.sigma_sq {
            k.sigma_sq = v;
        }
        if let Some(v) = self.overrides.gamma {
            k.gamma = v;
        }
        if let Some(v) = self.overrides.epsilon {
            k.epsilon = v;
        }
        if let Some(v) = self.overrides.f_max {
            k.f_max = v;
        }
        k.validate()?;
        Ok(k)
    }

    pub fn build_positioned(&self, epsilon: f64) -> ConfigResult<PositionedBody> {
        let body = self.body.build()?;
        let pos = PositionedBody::new_identity(body, epsilon)?;
        if let Some(m) = self.overrides.m {
            return Ok(pos.with_mean_width(m)?);
        }
        Ok(pos)
    }

    pub fn build_schedule(&self, body: &Body) -> ConfigResult<Schedule> {
        let main = self.loss.build(body)?;
        Ok(match &self.schedule {
            ScheduleSpec::Fixed => Schedule::Fixed(main),
            ScheduleSpec::Switch { at, second } => Schedule::Switch {
                first: main,
                second: second.build(body)?,
                at: *at,
            },
            ScheduleSpec::Drifting { amplitude, period } => {
                let LossSpec::Quadratic { center, scale } = &self.loss else {
                    anyhow::bail!("a drifting schedule needs a quadratic main loss");
                };
                Schedule::Sequence(drifting_quadratics(
                    body,
                    DVector::from_vec(center.clone()),
                    *amplitude,
                    *period,
                    *scale,
                    self.n,
                )?)
            }
        })
    }

    pub fn build_oracle<R: Rng>(&self, body: &Body, rng: &mut R) -> ConfigResult<LossOracle> {
        let schedule = self.build_schedule(body)?;
        let noise = self.noise.build()?;
        Ok(LossOracle::new(self.mode.into(), schedule, noise, self.n, rng)?)
    }
}
