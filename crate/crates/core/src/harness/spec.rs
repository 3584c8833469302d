//! Problem-spec files.
//!
//! ```toml
//! [problem]
//! kind = "diffusion"        # crosscorr | diffusion | mhd | custom
//! dtype = "fp64"
//! domain = [256, 256, 256]
//!
//! [diffusion]
//! alpha = 1.0
//! dt = 0.01
//! accuracy = 6
//! ```
//!
//! Every section rejects unknown keys. Omitted sections take their defaults.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autotune::SearchSpace;
use crate::error::{Error, Result};
use crate::exec::{tau_x_multiple, TilePlan};
use crate::harness::profile::MachineProfile;
use crate::physics::mhd::{MhdParams, MHD_FIELDS};
use crate::real::DType;
use crate::tensor::{BoundaryPolicy, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    CrossCorr,
    Diffusion,
    Mhd,
    Custom,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::CrossCorr => "crosscorr",
            ProblemKind::Diffusion => "diffusion",
            ProblemKind::Mhd => "mhd",
            ProblemKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    /// Case label used in result files; defaults to the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub dtype: DType,
    /// Interior extents. When omitted, a default benchmark size is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<usize>>,
    #[serde(default)]
    pub boundary: BoundaryPolicy,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_init_range")]
    pub init_range: [f64; 2],
    /// Halo width; defaults to the stencil radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halo: Option<usize>,
}

fn default_seed() -> u64 {
    1
}

fn default_init_range() -> [f64; 2] {
    [-1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    pub alpha: f64,
    pub dt: f64,
    #[serde(default = "six")]
    pub accuracy: u32,
    /// Per-axis grid spacing; 1 on every axis when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub fields: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossCorrSection {
    /// Box radius; every tap weighs `1 / taps`.
    pub radius: usize,
    #[serde(default = "one")]
    pub fields: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MhdSection {
    /// Time step; the single-precision machine epsilon when omitted.
    #[serde(default = "eps32")]
    pub dt: f64,
    #[serde(default = "six")]
    pub accuracy: u32,
    /// Grid spacing; `2 pi / n` per axis when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<[f64; 3]>,
    #[serde(default)]
    pub params: MhdParams,
}

impl Default for MhdSection {
    fn default() -> Self {
        Self {
            dt: eps32(),
            accuracy: 6,
            spacing: None,
            params: MhdParams::default(),
        }
    }
}

fn eps32() -> f64 {
    f32::EPSILON as f64
}

fn six() -> u32 {
    6
}

fn one() -> usize {
    1
}

/// A named stencil row of a custom problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StencilDef {
    Identity {
        label: String,
    },
    Taps {
        label: String,
        /// Offsets with up to three components each.
        offsets: Vec<Vec<i32>>,
        coeffs: Vec<f64>,
    },
    Derivative {
        label: String,
        order: u32,
        axis: usize,
        accuracy: u32,
        #[serde(default = "unit")]
        spacing: f64,
    },
    Laplacian {
        label: String,
        accuracy: u32,
        #[serde(default = "unit")]
        spacing: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl StencilDef {
    pub fn label(&self) -> &str {
        match self {
            StencilDef::Identity { label }
            | StencilDef::Taps { label, .. }
            | StencilDef::Derivative { label, .. }
            | StencilDef::Laplacian { label, .. } => label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSection {
    pub stencils: Vec<StencilDef>,
    /// One expression per field; the field count is their number.
    pub phi: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSection {
    /// Built-in profile name (a100, v100, mi250x, mi100, host).
    pub profile: String,
    /// Enforce the cache-line and SIMD tiling rules on explicit plans too.
    pub strict: bool,
    /// Tile-buffer budget; the profile's shared memory when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_kib: Option<f64>,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub warmups: usize,
    pub timed: usize,
    pub space: SearchSpace,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            profile: "host".into(),
            strict: false,
            budget_kib: None,
            workers: 0,
            warmups: 1,
            timed: 3,
            space: SearchSpace::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub iters: usize,
    pub warmups: usize,
    /// Radii to sweep (cross-correlation only); the configured radius when empty.
    pub radii: Vec<usize>,
    /// Tune before benchmarking instead of using `[plan]`.
    pub tune: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            iters: 100,
            warmups: 10,
            radii: Vec::new(),
            tune: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub steps: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { steps: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub max_ulp: u64,
    /// Tolerance constant of the `|a - b| <= c + c|b|` check; kind default when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            max_ulp: 5,
            c: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub problem: ProblemSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crosscorr: Option<CrossCorrSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mhd: Option<MhdSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomSection>,
    #[serde(default)]
    pub plan: Option<TilePlan>,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub verify: VerifySection,
}

/// Map a TOML error onto a located parse error.
pub fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let (line, column) = match e.span() {
        Some(span) => line_col(text, span.start),
        None => (1, 1),
    };
    Error::Parse {
        line,
        column,
        message: e.message().trim().to_string(),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// 1-based line of `key` inside `[section]`, or of the section header.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (n, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if let Some(name) = l
            .strip_prefix('[')
            .and_then(|s| s.trim_end().strip_suffix(']'))
        {
            current = name
                .trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string();
            if current == section && header.is_none() {
                header = Some(n + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = l.split_once('=') {
                if k.trim() == key {
                    return Some(n + 1);
                }
            }
        }
    }
    header
}

/// Largest extent per axis accepted from a spec file.
const MAX_POINTS: usize = 1 << 31;

impl ProblemSpec {
    pub fn load(path: &Path) -> Result<Self> {
        parse_problem_spec(&crate::error::read_config(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("problem spec serializes")
    }

    pub fn kind(&self) -> ProblemKind {
        self.problem.kind
    }

    pub fn case(&self) -> String {
        self.problem
            .name
            .clone()
            .unwrap_or_else(|| self.kind().name().to_string())
    }

    pub fn dtype(&self) -> DType {
        self.problem.dtype
    }

    /// Points of a default-size problem: 128 MiB of FP64 or 64 MiB of FP32 per field set.
    pub fn default_domain(kind: ProblemKind) -> Vec<usize> {
        match kind {
            ProblemKind::CrossCorr => vec![1 << 24],
            ProblemKind::Diffusion | ProblemKind::Custom => vec![256, 256, 256],
            ProblemKind::Mhd => vec![128, 128, 128],
        }
    }

    pub fn shape(&self) -> Result<Shape> {
        let dims = self
            .problem
            .domain
            .clone()
            .unwrap_or_else(|| Self::default_domain(self.kind()));
        let shape = Shape::new(&dims).map_err(|e| Error::Config(format!("problem.domain: {e}")))?;
        if shape.len() > MAX_POINTS {
            return Err(Error::Config(format!(
                "problem.domain: {dims:?} is too large"
            )));
        }
        Ok(shape)
    }

    pub fn n_fields(&self) -> usize {
        match self.kind() {
            ProblemKind::CrossCorr => self.crosscorr.as_ref().map_or(1, |c| c.fields),
            ProblemKind::Diffusion => self.diffusion.as_ref().map_or(1, |d| d.fields),
            ProblemKind::Mhd => MHD_FIELDS.len(),
            ProblemKind::Custom => self.custom.as_ref().map_or(1, |c| c.phi.len()),
        }
    }

    /// Radius of the fused footprint.
    pub fn radius(&self) -> Result<usize> {
        Ok(match self.kind() {
            ProblemKind::CrossCorr => self.crosscorr_section()?.radius,
            ProblemKind::Diffusion => self.diffusion_section()?.accuracy as usize / 2,
            ProblemKind::Mhd => self.mhd_section().accuracy as usize / 2,
            ProblemKind::Custom => {
                let c = self.custom_section()?;
                let mut r = 0;
                for s in &c.stencils {
                    r = r.max(match s {
                        StencilDef::Identity { .. } => 0,
                        StencilDef::Taps { offsets, .. } => offsets
                            .iter()
                            .flat_map(|o| o.iter())
                            .map(|v| v.unsigned_abs() as usize)
                            .max()
                            .unwrap_or(0),
                        StencilDef::Derivative { accuracy, .. }
                        | StencilDef::Laplacian { accuracy, .. } => *accuracy as usize / 2,
                    });
                }
                r
            }
        })
    }

    pub fn halo(&self) -> Result<usize> {
        Ok(self.problem.halo.unwrap_or(self.radius()?))
    }

    /// The configured plan (or a default), with the column group clipped to the field count.
    pub fn plan(&self) -> TilePlan {
        let p = self.plan.unwrap_or_else(|| TilePlan::direct([32, 4, 4]));
        TilePlan {
            columns_per_pass: p.columns_per_pass.min(self.n_fields()),
            ..p
        }
    }

    pub fn profile(&self) -> Result<MachineProfile> {
        builtin_profile(&self.tune.profile)
    }

    pub fn crosscorr_section(&self) -> Result<&CrossCorrSection> {
        self.crosscorr
            .as_ref()
            .ok_or_else(|| Error::Config("kind 'crosscorr' needs a [crosscorr] section".into()))
    }

    pub fn diffusion_section(&self) -> Result<&DiffusionSection> {
        self.diffusion
            .as_ref()
            .ok_or_else(|| Error::Config("kind 'diffusion' needs a [diffusion] section".into()))
    }

    pub fn mhd_section(&self) -> MhdSection {
        self.mhd.clone().unwrap_or_default()
    }

    pub fn custom_section(&self) -> Result<&CustomSection> {
        self.custom
            .as_ref()
            .ok_or_else(|| Error::Config("kind 'custom' needs a [custom] section".into()))
    }

    /// Constraint checks; `text` (when given) is used to report line numbers.
    pub fn validate(&self, text: Option<&str>) -> Result<()> {
        let at = |section: &str, key: &str, msg: String| -> Error {
            match text.and_then(|t| locate(t, section, key)) {
                Some(line) => Error::Config(format!("line {line}: {section}.{key}: {msg}")),
                None => Error::Config(format!("{section}.{key}: {msg}")),
            }
        };
        let shape = self
            .shape()
            .map_err(|e| at("problem", "domain", e.to_string()))?;
        let [lo, hi] = self.problem.init_range;
        if !(lo <= hi) {
            return Err(at(
                "problem",
                "init_range",
                format!("[{lo}, {hi}] is empty"),
            ));
        }
        match self.kind() {
            ProblemKind::CrossCorr => {
                let c = self.crosscorr_section()?;
                if c.fields == 0 || c.fields > 64 {
                    return Err(at(
                        "crosscorr",
                        "fields",
                        format!("{} not in 1..=64", c.fields),
                    ));
                }
            }
            ProblemKind::Diffusion => {
                let d = self.diffusion_section()?;
                if ![2, 4, 6].contains(&d.accuracy) {
                    return Err(at(
                        "diffusion",
                        "accuracy",
                        format!("{} is not 2, 4 or 6", d.accuracy),
                    ));
                }
                if !(d.alpha > 0.0) {
                    return Err(at(
                        "diffusion",
                        "alpha",
                        format!("{} must be positive", d.alpha),
                    ));
                }
                if !(d.dt >= 0.0) {
                    return Err(at(
                        "diffusion",
                        "dt",
                        format!("{} must be non-negative", d.dt),
                    ));
                }
                if let Some(h) = &d.spacing {
                    if h.len() != shape.ndim() || h.iter().any(|&v| !(v > 0.0)) {
                        return Err(at(
                            "diffusion",
                            "spacing",
                            format!("need {} positive values, got {h:?}", shape.ndim()),
                        ));
                    }
                }
                if d.fields == 0 || d.fields > 64 {
                    return Err(at(
                        "diffusion",
                        "fields",
                        format!("{} not in 1..=64", d.fields),
                    ));
                }
            }
            ProblemKind::Mhd => {
                if shape.ndim() != 3 {
                    return Err(at("problem", "domain", "mhd needs a 3-D domain".into()));
                }
                let m = self.mhd_section();
                if ![2, 4, 6].contains(&m.accuracy) {
                    return Err(at(
                        "mhd",
                        "accuracy",
                        format!("{} is not 2, 4 or 6", m.accuracy),
                    ));
                }
                m.params
                    .validate()
                    .map_err(|e| at("mhd.params", "gamma", e.to_string()))?;
            }
            ProblemKind::Custom => {
                let c = self.custom_section()?;
                if c.stencils.is_empty() {
                    return Err(at(
                        "custom",
                        "stencils",
                        "at least one stencil is needed".into(),
                    ));
                }
                if c.phi.is_empty() || c.phi.len() > 64 {
                    return Err(at(
                        "custom",
                        "phi",
                        format!("{} expressions, need 1..=64", c.phi.len()),
                    ));
                }
                for (n, src) in c.phi.iter().enumerate() {
                    let e = crate::harness::expr::parse_phi_expression(src)
                        .map_err(|e| at("custom", "phi", format!("expression {n}: {e}")))?;
                    e.bind(&c.params, c.stencils.len(), c.phi.len())
                        .map_err(|e| at("custom", "phi", format!("expression {n}: {e}")))?;
                }
            }
        }
        let r = self.radius()?;
        if let Some(h) = self.problem.halo {
            if h < r {
                return Err(at(
                    "problem",
                    "halo",
                    format!("halo {h} is smaller than the stencil radius {r}"),
                ));
            }
        }
        let profile = self
            .profile()
            .map_err(|e| at("tune", "profile", e.to_string()))?;
        if self.plan.is_some() {
            let plan = self.plan();
            plan.check(self.n_fields())
                .map_err(|e| at("plan", "tau", e.to_string()))?;
            if self.tune.strict {
                let m = tau_x_multiple(&profile, self.dtype());
                if !plan.tau[0].is_multiple_of(m) {
                    return Err(at(
                        "plan",
                        "tau",
                        format!(
                            "tau_x = {} breaks the multiple-of-{m} rule (cache line {} B / {} B per element)",
                            plan.tau[0],
                            profile.cache_line_bytes,
                            self.dtype().bytes()
                        ),
                    ));
                }
                let vol: usize = plan.tau.iter().product();
                if !vol.is_multiple_of(profile.simd_width) {
                    return Err(at(
                        "plan",
                        "tau",
                        format!(
                            "tile volume {vol} is not a multiple of the SIMD width {}",
                            profile.simd_width
                        ),
                    ));
                }
            }
        }
        if self.bench.iters == 0 {
            return Err(at("bench", "iters", "must be at least 1".into()));
        }
        if self.tune.timed == 0 {
            return Err(at("tune", "timed", "must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn builtin_profile(name: &str) -> Result<MachineProfile> {
    let key: String = name
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    Ok(match key.as_str() {
        "a100" => MachineProfile::a100(),
        "v100" => MachineProfile::v100(),
        "mi250x" | "mi250xgcd" => MachineProfile::mi250x_gcd(),
        "mi100" => MachineProfile::mi100(),
        "host" => MachineProfile::host(),
        _ => {
            return Err(Error::Config(format!(
                "unknown profile '{name}' (a100, v100, mi250x, mi100, host)"
            )))
        }
    })
}

/// Parse and check a problem spec.
pub fn parse_problem_spec(text: &str) -> Result<ProblemSpec> {
    let spec: ProblemSpec = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    spec.validate(Some(text))?;
    Ok(spec)
}

/// Default MHD spacing for a domain: `2 pi / n` per axis.
pub fn periodic_spacing(shape: Shape) -> [f64; 3] {
    shape.dims().map(|n| 2.0 * PI / n as f64)
}
