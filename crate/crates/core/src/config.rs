//! Versioned run configuration (TOML), shared by the command line and the
//! Python bindings.

use crate::bloch::{FieldOptions, OperatorSpec};
use crate::cauchy::{Bump, Centering, ForcingPiece, QuadratureOptions};
use crate::error::{Error, Result};
use crate::expr::parse_scalar;
use crate::expsweep::{KGridOptions, Law};
use crate::lattice::Lattice;
use crate::linalg::{CMat, C64};
use crate::models::{self, ModelDescriptor};
use crate::oracle::OracleOptions;
use crate::periodic_fn::{CoeffRecord, PeriodicMatrixFunction as Pmf};
use crate::validate::ValidateOptions;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub model: ModelConfig,
    /// Basis cutoff for cell problems and fibers; the model default if absent.
    #[serde(default)]
    pub cutoff: Option<f64>,
    /// θ directions for germ sweeps in d ≥ 2.
    #[serde(default = "default_theta_grid")]
    pub theta_grid: usize,
    #[serde(default)]
    pub k_grid: KGridOptions,
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
    #[serde(default = "default_tau_list")]
    pub tau_list: Vec<f64>,
    #[serde(default = "default_s")]
    pub s: f64,
    /// Error law for sweeps and probes; chosen from the regime if absent.
    #[serde(default)]
    pub law: Option<Law>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub oracle: OracleOptions,
    #[serde(default)]
    pub bands: BandsConfig,
    #[serde(default)]
    pub sharpness: SharpnessConfig,
    #[serde(default)]
    pub cauchy: CauchyConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_theta_grid() -> usize {
    64
}
fn default_eps_list() -> Vec<f64> {
    (3..=9).map(|j| 2f64.powi(-j)).collect()
}
fn default_tau_list() -> Vec<f64> {
    vec![1.0, 10.0, 1e2, 1e3, 1e4]
}
fn default_s() -> f64 {
    2.0
}
fn default_seed() -> u64 {
    ValidateOptions::default().seed
}

/// A zoo model by name (with parameters) or an inline operator.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_model")]
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub inline: Option<InlineModel>,
}

fn default_model() -> String {
    "acoustics_1d".into()
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { name: default_model(), params: BTreeMap::new(), inline: None }
    }
}

/// A field given either as a scalar trigonometric expression or as
/// Fourier coefficient records.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldInput {
    Expr(String),
    Coeffs(Vec<CoeffRecord>),
}

/// Complex matrix as separate real and imaginary row lists.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixInput {
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Vec<Vec<f64>>,
}

impl MatrixInput {
    pub fn to_matrix(&self) -> Result<CMat> {
        let r = self.re.len();
        let c = self.re.first().map_or(0, |x| x.len());
        if r == 0 || c == 0 || self.re.iter().any(|x| x.len() != c) {
            return Err(Error::Config("matrix rows must be non-empty and of equal length".into()));
        }
        if !self.im.is_empty() && (self.im.len() != r || self.im.iter().any(|x| x.len() != c)) {
            return Err(Error::Config("imaginary part must match the real part's shape".into()));
        }
        Ok(CMat::from_fn(r, c, |i, j| C64::new(self.re[i][j], self.im.get(i).map_or(0.0, |x| x[j]))))
    }
}

/// A = f* b(D)* g b(D) f with b(D) = Σ b_l D_l.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    /// Generating vectors of Γ, one per row.
    pub lattice: Vec<Vec<f64>>,
    /// b_1, …, b_d, each m × n.
    pub b: Vec<MatrixInput>,
    pub g: FieldInput,
    #[serde(default)]
    pub f: Option<FieldInput>,
    #[serde(default = "default_inline_cutoff")]
    pub default_cutoff: f64,
}

fn default_inline_cutoff() -> f64 {
    8.5
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelDescriptor> {
        let Some(inline) = &self.inline else {
            return models::by_name(&self.name, &self.params);
        };
        let lat = Lattice::new(inline.lattice.clone())?;
        let b_mats = inline.b.iter().map(MatrixInput::to_matrix).collect::<Result<Vec<_>>>()?;
        let (m, n) = b_mats.first().map(|b| b.shape()).ok_or_else(|| Error::Config("inline model needs b".into()))?;
        let field = |x: &FieldInput, rows: usize| -> Result<Pmf> {
            match x {
                FieldInput::Expr(t) if rows == 1 => parse_scalar(&lat, t),
                FieldInput::Expr(_) => Err(Error::Config("expressions describe scalar fields only".into())),
                FieldInput::Coeffs(r) => Pmf::from_records(&lat, r),
            }
        };
        let g = field(&inline.g, m)?;
        let f = inline.f.as_ref().map(|x| field(x, n)).transpose()?;
        let spec = OperatorSpec::new(&lat, b_mats, g, f, FieldOptions::for_lattice(&lat))?;
        Ok(ModelDescriptor {
            name: self.name.clone(),
            params: self.params.clone(),
            spec,
            known_values: Vec::new(),
            default_cutoff: inline.default_cutoff,
        })
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandsConfig {
    /// Directions θ; the first axis if empty.
    pub thetas: Vec<Vec<f64>>,
    /// Bands fitted per direction; n if absent.
    pub count: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpnessConfig {
    /// Unit direction θ₀; the first θ of the germ grid if absent.
    pub theta0: Option<Vec<f64>>,
    pub tau_list: Vec<f64>,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        SharpnessConfig { theta0: None, tau_list: vec![1e2, 1e3, 1e4] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CauchyMode {
    /// Errors over ε at the fixed time `tau`.
    FixedTime,
    /// Errors at τ = ε^{-α}.
    LongTime,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingInput {
    pub start: f64,
    pub end: f64,
    pub amplitude: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CauchyConfig {
    pub mode: CauchyMode,
    pub tau: f64,
    pub alpha: f64,
    pub eps_list: Vec<f64>,
    /// Sobolev order of the data; the top-level `s` if absent.
    pub s: Option<f64>,
    pub profile: Bump,
    /// Data amplitude a (re, im) per component; all ones if empty.
    pub amplitude: Vec<[f64; 2]>,
    /// Scale φ to unit H^s norm.
    pub normalize: bool,
    pub centering: Centering,
    pub fiber_cutoff: Option<f64>,
    pub forcing: Vec<ForcingInput>,
    pub quadrature: QuadratureOptions,
}

impl Default for CauchyConfig {
    fn default() -> Self {
        CauchyConfig {
            mode: CauchyMode::FixedTime,
            tau: 1.0,
            alpha: 1.0,
            eps_list: (4..=7).map(|j| 2f64.powi(-j)).collect(),
            s: None,
            profile: Bump { center: Vec::new(), radius: 4.0, power: 6 },
            amplitude: Vec::new(),
            normalize: true,
            centering: Centering::Fixed,
            fiber_cutoff: None,
            forcing: Vec::new(),
            quadrature: QuadratureOptions::default(),
        }
    }
}

impl CauchyConfig {
    pub fn amplitude_for(&self, n: usize) -> Result<Vec<C64>> {
        if self.amplitude.is_empty() {
            return Ok(vec![C64::new(1.0, 0.0); n]);
        }
        if self.amplitude.len() != n {
            return Err(Error::Config(format!("cauchy.amplitude needs {n} entries")));
        }
        Ok(self.amplitude.iter().map(|[re, im]| C64::new(*re, *im)).collect())
    }

    pub fn forcing_pieces(&self) -> Vec<ForcingPiece> {
        self.forcing
            .iter()
            .map(|p| ForcingPiece {
                start: p.start,
                end: p.end,
                amplitude: p.amplitude.iter().map(|[re, im]| C64::new(*re, *im)).collect(),
            })
            .collect()
    }

    /// The profile with an empty centre replaced by the origin in d dimensions.
    pub fn profile_for(&self, d: usize) -> Result<Bump> {
        let center = if self.profile.center.is_empty() { vec![0.0; d] } else { self.profile.center.clone() };
        Bump::new(center, self.profile.radius, self.profile.power)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub random_fields: usize,
    pub theta_count: usize,
    pub models: Vec<String>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        let v = ValidateOptions::default();
        ValidateConfig { random_fields: v.random_fields, theta_count: v.theta_count, models: v.models }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            model: ModelConfig::default(),
            cutoff: None,
            theta_grid: default_theta_grid(),
            k_grid: KGridOptions::default(),
            eps_list: default_eps_list(),
            tau_list: default_tau_list(),
            s: default_s(),
            law: None,
            seed: default_seed(),
            oracle: OracleOptions::default(),
            bands: BandsConfig::default(),
            sharpness: SharpnessConfig::default(),
            cauchy: CauchyConfig::default(),
            validate: ValidateConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }

    /// Enforce the schema's invariants.
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema_version {} unsupported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if let Some(c) = self.cutoff {
            if !(c > 0.0) {
                return bad("cutoff must be positive");
            }
        }
        if !(0.0..=3.0).contains(&self.s) {
            return bad("s must lie in [0, 3]");
        }
        if self.eps_list.is_empty() || self.tau_list.is_empty() || self.cauchy.eps_list.is_empty() || self.sharpness.tau_list.is_empty() {
            return bad("eps and tau lists must be non-empty");
        }
        if self.eps_list.iter().chain(&self.cauchy.eps_list).any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("eps values must be positive and finite");
        }
        if self.tau_list.iter().chain(&self.sharpness.tau_list).any(|t| !t.is_finite()) {
            return bad("tau values must be finite");
        }
        if self.theta_grid == 0 {
            return bad("theta_grid must be positive");
        }
        if let Some(s) = self.cauchy.s {
            if !(0.0..=3.0).contains(&s) {
                return bad("cauchy.s must lie in [0, 3]");
            }
        }
        Ok(())
    }

    pub fn validate_options(&self) -> ValidateOptions {
        ValidateOptions {
            seed: self.seed,
            random_fields: self.validate.random_fields,
            theta_count: self.validate.theta_count,
            oracle: self.oracle,
            models: self.validate.models.clone(),
            cutoff: self.cutoff,
        }
    }
}

/// Parse a standalone `[model]`-style table (name, params, inline).
pub fn model_from_toml(text: &str) -> Result<ModelConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}
