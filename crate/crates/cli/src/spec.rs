//! Scenario documents, the JSON input of every command.
//!
//! Matrices are written either in full (`[[..], [..]]`), as a bare scalar
//! `s` meaning `s·I`, or as the shorthand string `"s*I"`.

use crate::error::{CliError, Result};
use covsteer::blocks::{AveragingMode, ControlPolytope};
use covsteer::chance::Shape;
use covsteer::local::{QuadraticStateCost, TerminalCovMode};
use covsteer::models::{
    Diffusion, DoubleIntegrator, DynamicsModel, Quadrotor, QuadrotorParams, RolloutFeedback, Unicycle,
};
use covsteer::scenario::Truncation;
use covsteer::solver::ForwardPassMode;
use covsteer::{Boundary, Obstacle, RiskBudget, Scenario, SolverConfig};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::Arc;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Shorthand(String),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn scaled_identity(s: f64) -> Self {
        MatrixSpec::Shorthand(format!("{s}*I"))
    }

    fn identity_scale(&self, ptr: &str) -> Result<Option<f64>> {
        match self {
            MatrixSpec::Scalar(s) => Ok(Some(*s)),
            MatrixSpec::Shorthand(text) => {
                let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
                let scale = match t.strip_suffix("*I") {
                    Some(s) => s.parse::<f64>().ok(),
                    None if t == "I" => Some(1.0),
                    None => None,
                };
                scale.map(Some).ok_or_else(|| {
                    CliError::spec(ptr, format!("cannot read matrix shorthand {text:?}; expected \"s*I\""))
                })
            }
            MatrixSpec::Rows(_) => Ok(None),
        }
    }

    /// Square matrix of size `n`.
    pub fn square(&self, n: usize, ptr: &str) -> Result<DMatrix<f64>> {
        self.resolve(n, n, ptr)
    }

    /// `rows × cols` matrix; the identity forms need `rows == cols`.
    pub fn resolve(&self, rows: usize, cols: usize, ptr: &str) -> Result<DMatrix<f64>> {
        let out = match self.identity_scale(ptr)? {
            Some(s) => {
                if rows != cols {
                    return Err(CliError::spec(
                        ptr,
                        format!("a {rows}x{cols} matrix cannot be a multiple of I"),
                    ));
                }
                DMatrix::identity(rows, cols) * s
            }
            None => {
                let MatrixSpec::Rows(data) = self else { unreachable!() };
                if data.len() != rows || data.iter().any(|r| r.len() != cols) {
                    return Err(CliError::spec(ptr, format!("expected a {rows}x{cols} matrix")));
                }
                DMatrix::from_fn(rows, cols, |i, j| data[i][j])
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(CliError::spec(ptr, "matrix entries must be finite"));
        }
        Ok(out)
    }

    /// Row count of a full matrix; `None` for the identity forms.
    fn rows(&self) -> Option<usize> {
        match self {
            MatrixSpec::Rows(r) => Some(r.len()),
            _ => None,
        }
    }

    fn cols(&self) -> Option<usize> {
        match self {
            MatrixSpec::Rows(r) => r.first().map(Vec::len),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    DoubleIntegrator,
    Unicycle,
    Quadrotor,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Spatial dimension of the double integrator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalSpec {
    Equality,
    #[default]
    Inequality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub mu_ic: Vec<f64>,
    pub sigma_ic: MatrixSpec,
    pub mu_tc: Vec<f64>,
    pub sigma_tc: MatrixSpec,
    #[serde(default)]
    pub terminal: TerminalSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    Circle,
    Sphere,
    Halfspace,
}

/// A ball (`center`, `radius`) or a halfspace whose forbidden side is
/// `normalᵀx + offset ≤ 0`, acting on the state coordinates `coords`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub kind: ObstacleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    /// Defaults to the leading coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<usize>>,
}

impl ObstacleSpec {
    pub fn circle(center: [f64; 2], radius: f64) -> Self {
        Self {
            kind: ObstacleKind::Circle,
            center: Some(center.to_vec()),
            radius: Some(radius),
            normal: None,
            offset: None,
            coords: None,
        }
    }

    fn build(&self, n: usize, ptr: &str) -> Result<Obstacle> {
        let need = |field: &str| {
            CliError::spec(
                format!("{ptr}/{field}"),
                format!("required for a {:?} obstacle", self.kind),
            )
        };
        let (shape, dim) = match self.kind {
            ObstacleKind::Circle | ObstacleKind::Sphere => {
                let center = self.center.as_ref().ok_or_else(|| need("center"))?;
                let radius = self.radius.ok_or_else(|| need("radius"))?;
                let want = if self.kind == ObstacleKind::Circle { 2 } else { 3 };
                if center.len() != want {
                    return Err(CliError::spec(
                        format!("{ptr}/center"),
                        format!("expected {want} entries"),
                    ));
                }
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(CliError::spec(format!("{ptr}/radius"), "must be positive"));
                }
                let center = DVector::from_column_slice(center);
                let shape = if self.kind == ObstacleKind::Circle {
                    Shape::Circle { center, radius }
                } else {
                    Shape::Sphere { center, radius }
                };
                (shape, want)
            }
            ObstacleKind::Halfspace => {
                let normal = self.normal.as_ref().ok_or_else(|| need("normal"))?;
                let offset = self.offset.ok_or_else(|| need("offset"))?;
                if normal.is_empty() || normal.iter().all(|&v| v == 0.0) {
                    return Err(CliError::spec(format!("{ptr}/normal"), "must be a nonzero vector"));
                }
                let dim = normal.len();
                (
                    Shape::Halfspace {
                        normal: DVector::from_column_slice(normal),
                        offset,
                    },
                    dim,
                )
            }
        };
        let coords = self.coords.clone().unwrap_or_else(|| (0..dim).collect());
        if coords.len() != dim
            || coords.iter().any(|&c| c >= n)
            || coords.iter().enumerate().any(|(i, c)| coords[..i].contains(c))
        {
            return Err(CliError::spec(
                format!("{ptr}/coords"),
                format!("expected {dim} distinct coordinates below {n}"),
            ));
        }
        Ok(Obstacle { shape, coords })
    }
}

/// Whether a risk value is the joint `δ` or the per-constraint `δ′`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    Joint,
    PerConstraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub convention: Convention,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub q: MatrixSpec,
    pub r: MatrixSpec,
    /// Defaults to the target mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionKind {
    /// State-independent `matrix`.
    Constant,
    /// `scale` times the input matrix.
    ControlChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub kind: DiffusionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeSpec {
    pub g: MatrixSpec,
    pub b_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationSpec {
    pub coords: Vec<usize>,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Paper,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardPass {
    Mean,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    Full,
    FeedforwardOnly,
}

/// Solver settings; absent fields take the library defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub averaging: Option<Averaging>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_pass: Option<ForwardPass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Feedback>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conic_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conic_max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reset_duals: Option<bool>,
}

impl SolverSpec {
    pub fn to_config(&self, seed: u64) -> Result<SolverConfig> {
        let d = SolverConfig::default();
        let forward_pass = match self.forward_pass.unwrap_or(ForwardPass::Mean) {
            ForwardPass::Mean => {
                if self.forward_samples.is_some() {
                    return Err(CliError::spec(
                        "/solver/forward_samples",
                        "only used with the sampled forward pass",
                    ));
                }
                ForwardPassMode::MeanPropagation
            }
            ForwardPass::Sampled => ForwardPassMode::Sampled {
                n_samples: self.forward_samples.unwrap_or(1000),
            },
        };
        let cfg = SolverConfig {
            rho: self.rho.unwrap_or(d.rho),
            alpha_mu: self.alpha_mu.unwrap_or(d.alpha_mu),
            alpha_sigma: self.alpha_sigma.unwrap_or(d.alpha_sigma),
            inner_iters: self.inner_iters.unwrap_or(d.inner_iters),
            outer_iters: self.outer_iters.unwrap_or(d.outer_iters),
            inner_tol: self.inner_tol.or(d.inner_tol),
            outer_tol: self.outer_tol.unwrap_or(d.outer_tol),
            averaging: match self.averaging {
                Some(Averaging::Paper) => AveragingMode::PaperExact,
                Some(Averaging::Weighted) => AveragingMode::Weighted,
                None => d.averaging,
            },
            forward_pass,
            feedback: match self.feedback {
                Some(Feedback::Full) => RolloutFeedback::Full,
                Some(Feedback::FeedforwardOnly) => RolloutFeedback::FeedforwardOnly,
                None => d.feedback,
            },
            conic_tol: self.conic_tol.unwrap_or(d.conic_tol),
            conic_max_iters: self.conic_max_iters.unwrap_or(d.conic_max_iters),
            patience: self.patience.unwrap_or(d.patience),
            reset_duals: self.reset_duals.unwrap_or(d.reset_duals),
            seed,
            ..d
        };
        cfg.validate().map_err(|e| CliError::spec("/solver", e.to_string()))?;
        Ok(cfg)
    }

    /// Every field filled in from `cfg`, for reports.
    pub fn resolved(cfg: &SolverConfig) -> Self {
        let (forward_pass, forward_samples) = match cfg.forward_pass {
            ForwardPassMode::MeanPropagation => (ForwardPass::Mean, None),
            ForwardPassMode::Sampled { n_samples } => (ForwardPass::Sampled, Some(n_samples)),
        };
        Self {
            rho: Some(cfg.rho),
            alpha_mu: Some(cfg.alpha_mu),
            alpha_sigma: Some(cfg.alpha_sigma),
            inner_iters: Some(cfg.inner_iters),
            outer_iters: Some(cfg.outer_iters),
            inner_tol: cfg.inner_tol,
            outer_tol: Some(cfg.outer_tol),
            averaging: Some(match cfg.averaging {
                AveragingMode::PaperExact => Averaging::Paper,
                AveragingMode::Weighted => Averaging::Weighted,
            }),
            forward_pass: Some(forward_pass),
            forward_samples,
            feedback: Some(match cfg.feedback {
                RolloutFeedback::Full => Feedback::Full,
                RolloutFeedback::FeedforwardOnly => Feedback::FeedforwardOnly,
            }),
            conic_tol: Some(cfg.conic_tol),
            conic_max_iters: Some(cfg.conic_max_iters),
            patience: Some(cfg.patience),
            reset_duals: Some(cfg.reset_duals),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub model: ModelId,
    #[serde(default, skip_serializing_if = "is_default")]
    pub model_params: ModelParams,
    pub state_dim: usize,
    pub control_dim: usize,
    pub dt: f64,
    pub t_f: usize,
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    pub risk: RiskSpec,
    pub cost: CostSpec,
    pub diffusion: DiffusionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polytope: Option<PolytopeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<TruncationSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub seed: u64,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

fn vector(v: &[f64], n: usize, ptr: &str) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(CliError::spec(ptr, format!("expected {n} entries, found {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::spec(ptr, "entries must be finite"));
    }
    Ok(DVector::from_column_slice(v))
}

impl ScenarioSpec {
    fn model(&self) -> Result<Arc<dyn DynamicsModel<f64>>> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CliError::spec("/dt", "must be positive"));
        }
        let (n, m) = match self.model {
            ModelId::DoubleIntegrator => {
                let dim = self.model_params.spatial_dim.unwrap_or(self.state_dim / 2);
                if dim == 0 {
                    return Err(CliError::spec(
                        "/state_dim",
                        "a double integrator needs at least one spatial dimension",
                    ));
                }
                (2 * dim, dim)
            }
            ModelId::Unicycle => (3, 2),
            ModelId::Quadrotor => (12, 4),
        };
        if self.state_dim != n {
            return Err(CliError::spec(
                "/state_dim",
                format!("model {:?} has {n} states", self.model),
            ));
        }
        if self.control_dim != m {
            return Err(CliError::spec(
                "/control_dim",
                format!("model {:?} has {m} inputs", self.model),
            ));
        }
        let p = &self.model_params;
        let owned = [
            ("spatial_dim", p.spatial_dim.is_some(), ModelId::DoubleIntegrator),
            ("mass", p.mass.is_some(), ModelId::Quadrotor),
            ("gravity", p.gravity.is_some(), ModelId::Quadrotor),
            ("inertia", p.inertia.is_some(), ModelId::Quadrotor),
        ];
        if let Some((key, ..)) = owned.iter().find(|(_, set, owner)| *set && *owner != self.model) {
            return Err(CliError::spec(
                format!("/model_params/{key}"),
                format!("not a parameter of {:?}", self.model),
            ));
        }
        let diffusion = self.diffusion(n)?;
        let model: Arc<dyn DynamicsModel<f64>> = match self.model {
            ModelId::DoubleIntegrator => Arc::new(DoubleIntegrator {
                dim: m,
                dt: self.dt,
                diffusion,
            }),
            ModelId::Unicycle => Arc::new(Unicycle { dt: self.dt, diffusion }),
            ModelId::Quadrotor => {
                let d = QuadrotorParams::default();
                let params = QuadrotorParams {
                    mass: p.mass.unwrap_or(d.mass),
                    gravity: p.gravity.unwrap_or(d.gravity),
                    inertia: p.inertia.unwrap_or(d.inertia),
                };
                if !(params.mass > 0.0) || params.inertia.iter().any(|&j| !(j > 0.0)) {
                    return Err(CliError::spec("/model_params", "mass and inertia must be positive"));
                }
                Arc::new(Quadrotor {
                    dt: self.dt,
                    params,
                    diffusion,
                })
            }
        };
        Ok(model)
    }

    fn diffusion(&self, n: usize) -> Result<Diffusion<f64>> {
        let d = &self.diffusion;
        match d.kind {
            DiffusionKind::Constant => {
                if d.scale.is_some() {
                    return Err(CliError::spec("/diffusion/scale", "only used with control_channel"));
                }
                let mat = d
                    .matrix
                    .as_ref()
                    .ok_or_else(|| CliError::spec("/diffusion/matrix", "required for constant diffusion"))?;
                let cols = mat.cols().unwrap_or(n);
                Ok(Diffusion::Constant(mat.resolve(n, cols, "/diffusion/matrix")?))
            }
            DiffusionKind::ControlChannel => {
                if d.matrix.is_some() {
                    return Err(CliError::spec("/diffusion/matrix", "only used with constant diffusion"));
                }
                let s = d.scale.unwrap_or(1.0);
                if !s.is_finite() {
                    return Err(CliError::spec("/diffusion/scale", "must be finite"));
                }
                Ok(Diffusion::ControlChannel(s))
            }
        }
    }

    pub fn risk_budget(&self) -> Result<RiskBudget> {
        let n = self.obstacles.len();
        let budget = match self.risk.convention {
            Convention::Joint => RiskBudget::joint(self.risk.value, n),
            Convention::PerConstraint => RiskBudget::per_constraint(self.risk.value, n),
        };
        budget.map_err(|e| CliError::spec("/risk/value", e.to_string()))
    }

    /// Validated library scenario.
    pub fn build(&self) -> Result<Scenario> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::spec(
                "/format_version",
                format!("unsupported version {}; expected {FORMAT_VERSION}", self.format_version),
            ));
        }
        if self.t_f < 1 {
            return Err(CliError::spec("/t_f", "must be at least 1"));
        }
        let model = self.model()?;
        let (n, m) = (self.state_dim, self.control_dim);
        let b = &self.boundary;
        let boundary = Boundary {
            mu_ic: vector(&b.mu_ic, n, "/boundary/mu_ic")?,
            sigma_ic: b.sigma_ic.square(n, "/boundary/sigma_ic")?,
            mu_tc: vector(&b.mu_tc, n, "/boundary/mu_tc")?,
            sigma_tc: b.sigma_tc.square(n, "/boundary/sigma_tc")?,
        };
        let obstacles = self
            .obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| o.build(n, &format!("/obstacles/{i}")))
            .collect::<Result<Vec<_>>>()?;
        let goal = match &self.cost.goal {
            Some(g) => vector(g, n, "/cost/goal")?,
            None => boundary.mu_tc.clone(),
        };
        let q = self.cost.q.square(n, "/cost/q")?;
        let r = self.cost.r.square(m, "/cost/r")?;
        let polytope = match &self.polytope {
            Some(p) => {
                let rows = p.g.rows().unwrap_or(p.b_max.len());
                let gmat = p.g.resolve(rows, m, "/polytope/g")?;
                let b_max = vector(&p.b_max, rows, "/polytope/b_max")?;
                Some(ControlPolytope { gmat, b_max })
            }
            None => None,
        };
        let truncation = self.truncation.as_ref().map(|t| Truncation {
            coords: t.coords.clone(),
            bound: t.bound,
        });
        let scenario = Scenario {
            model,
            horizon: self.t_f,
            boundary,
            terminal_mode: match b.terminal {
                TerminalSpec::Equality => TerminalCovMode::Equality,
                TerminalSpec::Inequality => TerminalCovMode::Inequality,
            },
            budget: self.risk_budget()?,
            obstacles,
            state_cost: Arc::new(QuadraticStateCost { q, goal }),
            r,
            polytope,
            truncation,
        };
        scenario.validate().map_err(|e| CliError::spec("", e.to_string()))?;
        Ok(scenario)
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        self.solver.to_config(self.seed)
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex(&Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn pointer_escape(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

fn ignored_pointer(path: &serde_ignored::Path) -> String {
    use serde_ignored::Path as P;
    match path {
        P::Root => String::new(),
        P::Seq { parent, index } => format!("{}/{index}", ignored_pointer(parent)),
        P::Map { parent, key } => format!("{}/{}", ignored_pointer(parent), pointer_escape(key)),
        P::Some { parent } | P::NewtypeStruct { parent } | P::NewtypeVariant { parent } => ignored_pointer(parent),
    }
}

fn error_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment as S;
    path.iter()
        .filter_map(|seg| match seg {
            S::Seq { index } => Some(format!("/{index}")),
            S::Map { key } => Some(format!("/{}", pointer_escape(key))),
            S::Enum { .. } | S::Unknown => None,
        })
        .collect()
}

/// Parses a scenario document. Unknown keys are an error unless `lax`, in
/// which case their pointers are returned as warnings.
pub fn parse_scenario(text: &str, lax: bool) -> Result<(ScenarioSpec, Vec<String>)> {
    if text.trim().is_empty() {
        return Err(CliError::spec("", "empty scenario document"));
    }
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let mut record = |p: serde_ignored::Path| unknown.push(ignored_pointer(&p));
    let ignoring = serde_ignored::Deserializer::new(&mut de, &mut record);
    let spec: ScenarioSpec = serde_path_to_error::deserialize(ignoring).map_err(|e| {
        let pointer = error_pointer(e.path());
        CliError::spec(pointer, e.into_inner().to_string())
    })?;
    de.end().map_err(|e| CliError::spec("", e.to_string()))?;
    if !lax {
        if let Some(first) = unknown.first() {
            return Err(CliError::spec(first.clone(), "unknown key"));
        }
    }
    let warnings = unknown
        .into_iter()
        .map(|p| format!("{p}: unknown key ignored"))
        .collect();
    Ok((spec, warnings))
}

pub fn load_scenario(path: &Path, lax: bool) -> Result<(ScenarioSpec, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scenario(&text, lax)
}

pub fn save_scenario(spec: &ScenarioSpec, path: &Path) -> Result<()> {
    std::fs::write(path, spec.to_json()).map_err(|e| CliError::io(path, e))
}
