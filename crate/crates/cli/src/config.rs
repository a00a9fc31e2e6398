//! TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sclm_core::flux::{FieldKind, Profile};
use sclm_core::geometry::ManifoldDescriptor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const EXPERIMENTS: [&str; 6] = [
    "simulate",
    "check-flux",
    "viscosity-sweep",
    "contraction",
    "isometry",
    "entropy-audit",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub manifold: ManifoldDescriptor,
    pub flux: FluxSection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub solver: SolverSection,
    pub initial: InitialData,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxSection {
    /// `zero`, `transport` or `burgers`.
    pub profile: String,
    /// `constant`, `stream-function` or `rotation`.
    #[serde(default = "default_field")]
    pub field: String,
    #[serde(default = "default_direction")]
    pub direction: [f64; 2],
    #[serde(default = "one")]
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// `zero`, `bump` or `plateau`.
    #[serde(default = "default_noise_kind")]
    pub kind: String,
    #[serde(default)]
    pub sigma: f64,
    /// Cutoff radius `R_Φ`; defaults to `solver.R`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Plateau fraction of the radius.
    #[serde(default = "half")]
    pub inner: f64,
    /// `constant` (`s ≡ 1`) or `cosine` (`s = 1 + a cos x₁`).
    #[serde(default = "default_spatial")]
    pub spatial: String,
    #[serde(default = "half")]
    pub spatial_amplitude: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            kind: default_noise_kind(),
            sigma: 0.0,
            radius: None,
            inner: half(),
            spatial: default_spatial(),
            spatial_amplitude: half(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: f64,
    pub modes: usize,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    /// Working interval `[−R, R]`.
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(default = "yes")]
    pub split_step: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialData {
    Constant {
        value: f64,
    },
    /// `A sin(k x)` along the periodic axis.
    Sine {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one_u32")]
        wave: u32,
    },
    /// `(l + r)/2 + (r − l)/2 · tanh(cos x / w)` along the periodic axis.
    RiemannSmooth {
        left: f64,
        right: f64,
        #[serde(default = "default_width")]
        width: f64,
    },
    /// One value per grid node, either a single `u` column or `node,u`.
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    /// Viscosity ladder of the sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ladder: Option<Vec<f64>>,
    /// Amplitude of the `cos 2x` perturbation of the second contraction datum.
    pub perturbation: f64,
    pub xi_cells: usize,
    pub stability_constant: f64,
    /// Refinement levels of the entropy audit, each halving `dt` and `h`.
    pub audit_levels: usize,
    pub kinetic_patches: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kinetic_block_steps: Option<usize>,
    pub kinetic_cells: usize,
    /// `ξ` range of the compatibility probes; defaults to `solver.R`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_radius: Option<f64>,
    pub isometry_steps: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: None,
            paths: None,
            ladder: None,
            perturbation: 0.1,
            xi_cells: sclm_core::kinetic::DEFAULT_XI_CELLS,
            stability_constant: 4.0,
            audit_levels: 4,
            kinetic_patches: 8,
            kinetic_block_steps: None,
            kinetic_cells: 32,
            probe_radius: None,
            isometry_steps: 256,
        }
    }
}

fn default_field() -> String {
    "constant".into()
}
fn default_direction() -> [f64; 2] {
    [1.0, 0.0]
}
fn default_noise_kind() -> String {
    "zero".into()
}
fn default_spatial() -> String {
    "constant".into()
}
fn default_width() -> f64 {
    0.2
}
fn one() -> f64 {
    1.0
}
fn one_u32() -> u32 {
    1
}
fn half() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("malformed config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.solver;
        if !(s.epsilon >= 0.0 && s.epsilon.is_finite()) {
            bail!(
                "solver.epsilon must be a finite value >= 0, got {}",
                s.epsilon
            );
        }
        if s.modes == 0 {
            bail!("solver.modes must be at least 1");
        }
        if !(s.dt > 0.0) {
            bail!("solver.dt must be positive, got {}", s.dt);
        }
        if !(s.t_final > 0.0) {
            bail!("solver.T must be positive, got {}", s.t_final);
        }
        if !(s.radius > 0.0) {
            bail!("solver.R must be positive, got {}", s.radius);
        }
        self.flux
            .profile
            .parse::<Profile>()
            .context("flux.profile")?;
        self.flux.field.parse::<FieldKind>().context("flux.field")?;
        let n = &self.noise;
        match n.kind.as_str() {
            "zero" | "bump" | "plateau" => {}
            other => bail!("noise.kind must be zero, bump or plateau, got {other:?}"),
        }
        if !(n.sigma >= 0.0) {
            bail!("noise.sigma must be >= 0, got {}", n.sigma);
        }
        if let Some(r) = n.radius {
            if !(r > 0.0) {
                bail!("noise.radius must be positive, got {r}");
            }
        }
        if !(0.0..1.0).contains(&n.inner) {
            bail!("noise.inner must lie in [0, 1), got {}", n.inner);
        }
        match n.spatial.as_str() {
            "constant" | "cosine" => {}
            other => bail!("noise.spatial must be constant or cosine, got {other:?}"),
        }
        if let InitialData::RiemannSmooth { width, .. } = self.initial {
            if !(width > 0.0) {
                bail!("initial.width must be positive, got {width}");
            }
        }
        let e = &self.experiment;
        if let Some(name) = &e.name {
            if !EXPERIMENTS.contains(&name.as_str()) {
                bail!(
                    "experiment.name {name:?} is not one of {}",
                    EXPERIMENTS.join(", ")
                );
            }
        }
        if e.paths == Some(0) {
            bail!("experiment.paths must be at least 1");
        }
        if let Some(ladder) = &e.ladder {
            validate_ladder(ladder)?;
        }
        if e.xi_cells < 2 || e.kinetic_cells < 2 {
            bail!("experiment.xi_cells and experiment.kinetic_cells must be at least 2");
        }
        if e.kinetic_patches < 2 {
            bail!("experiment.kinetic_patches must be at least 2");
        }
        if e.audit_levels < 2 {
            bail!("experiment.audit_levels must be at least 2");
        }
        if !(e.stability_constant > 0.0) {
            bail!("experiment.stability_constant must be positive");
        }
        if e.isometry_steps == 0 {
            bail!("experiment.isometry_steps must be at least 1");
        }
        Ok(())
    }

    /// Sorted-key JSON of everything that affects results; the output location is
    /// left out.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        serde_json::to_value(&c)
            .expect("config serializes")
            .to_string()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

pub fn validate_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.len() < 3 {
        bail!(
            "experiment.ladder needs at least 3 rungs, got {}",
            ladder.len()
        );
    }
    if ladder.iter().any(|&e| !(e > 0.0)) {
        bail!("experiment.ladder entries must be positive");
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        bail!("experiment.ladder must be strictly decreasing");
    }
    Ok(())
}
