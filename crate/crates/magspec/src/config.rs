//! Run configuration: a TOML document with one section per pipeline stage.
//!
//! Every numeric default matches the settings validated by the acceptance
//! suite; a config file only needs to spell out what it changes. Unknown
//! keys are rejected so typos fail loudly instead of silently running the
//! defaults. Potentials are closed-form expressions in `x` and `y`
//! evaluated with the `meval` crate.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Discretization, OneFormField, ScalarField};
use crate::geometry::{ConformalProfile, Metric};
use crate::mesh::DiskMesh;

fn default_rings() -> usize {
    24
}
fn default_radius_m() -> f64 {
    1.0
}
fn default_radius_m1() -> f64 {
    1.2
}

/// Geometry section: the disk pair and the mesh resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Conformal factor profile; absent means the flat metric.
    #[serde(default)]
    pub conformal: Option<ConformalProfile>,
    #[serde(default = "default_radius_m")]
    pub radius_m: f64,
    #[serde(default = "default_radius_m1")]
    pub radius_m1: f64,
    /// Node rings between the center and the outer boundary.
    #[serde(default = "default_rings")]
    pub rings: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            conformal: None,
            radius_m: default_radius_m(),
            radius_m1: default_radius_m1(),
            rings: default_rings(),
        }
    }
}

fn zero_expr() -> String {
    "0".into()
}

/// Potentials section: both datasets as closed-form expressions in x, y.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialsConfig {
    #[serde(default = "zero_expr")]
    pub a1_x: String,
    #[serde(default = "zero_expr")]
    pub a1_y: String,
    #[serde(default = "zero_expr")]
    pub q1: String,
    #[serde(default = "zero_expr")]
    pub a2_x: String,
    #[serde(default = "zero_expr")]
    pub a2_y: String,
    #[serde(default = "zero_expr")]
    pub q2: String,
}

impl Default for PotentialsConfig {
    fn default() -> Self {
        PotentialsConfig {
            a1_x: zero_expr(),
            a1_y: zero_expr(),
            q1: zero_expr(),
            a2_x: zero_expr(),
            a2_y: zero_expr(),
            q2: zero_expr(),
        }
    }
}

fn default_k_modes() -> usize {
    64
}
fn default_weight_exponent() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    #[serde(default = "default_k_modes")]
    pub k_modes: usize,
    #[serde(default = "default_weight_exponent")]
    pub weight_exponent: f64,
    /// Spectral shift of the operator (kappa in the eigenproblem).
    #[serde(default)]
    pub shift: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            k_modes: default_k_modes(),
            weight_exponent: default_weight_exponent(),
            shift: 0.0,
        }
    }
}

fn default_n_base() -> usize {
    12
}
fn default_n_dirs() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanConfig {
    /// Base points on the outer circle.
    #[serde(default = "default_n_base")]
    pub n_base: usize,
    /// Directions per base point.
    #[serde(default = "default_n_dirs")]
    pub n_dirs: usize,
}

impl Default for FanConfig {
    fn default() -> Self {
        FanConfig {
            n_base: default_n_base(),
            n_dirs: default_n_dirs(),
        }
    }
}

fn default_eps() -> f64 {
    1.0
}
fn default_h_list() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}
fn default_go_t_final() -> f64 {
    5.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoConfig {
    /// Window half-width of the probe envelope.
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Validated semiclassical parameters, descending.
    #[serde(default = "default_h_list")]
    pub h_list: Vec<f64>,
    /// Final time of the progressing-wave residual runs; long enough for
    /// the window to cross the whole disk.
    #[serde(default = "default_go_t_final")]
    pub t_final: f64,
}

impl Default for GoConfig {
    fn default() -> Self {
        GoConfig {
            eps: default_eps(),
            h_list: default_h_list(),
            t_final: default_go_t_final(),
        }
    }
}

fn default_t_final() -> f64 {
    6.0
}
fn default_n_steps() -> usize {
    1200
}
fn default_k_bridge() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtnConfig {
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    /// Eigenpairs in the spectral-series side of the bridge.
    #[serde(default = "default_k_bridge")]
    pub k_bridge: usize,
}

impl Default for DtnConfig {
    fn default() -> Self {
        DtnConfig {
            t_final: default_t_final(),
            n_steps: default_n_steps(),
            k_bridge: default_k_bridge(),
        }
    }
}

fn default_bound_n() -> f64 {
    50.0
}
fn default_inversion_reg() -> f64 {
    2e-5
}
fn default_amplitudes() -> Vec<f64> {
    vec![0.03, 0.07, 0.15, 0.33]
}
fn default_n_seeds() -> u64 {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    /// A-priori bound on the discrete H^2 norms of the potentials.
    #[serde(default = "default_bound_n")]
    pub bound_n: f64,
    /// Tikhonov weight of the ray-transform inversions.
    #[serde(default = "default_inversion_reg")]
    pub inversion_reg: f64,
    /// Perturbation amplitudes of the stability sweep.
    #[serde(default = "default_amplitudes")]
    pub sweep_amplitudes: Vec<f64>,
    #[serde(default = "default_n_seeds")]
    pub sweep_seeds: u64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            bound_n: default_bound_n(),
            inversion_reg: default_inversion_reg(),
            sweep_amplitudes: default_amplitudes(),
            sweep_seeds: default_n_seeds(),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Also dump nodal fields (larger CSV files).
    #[serde(default = "default_true")]
    pub write_fields: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            write_fields: default_true(),
        }
    }
}

fn default_seed() -> u64 {
    7
}

/// The full run configuration; see the section types for the defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub potentials: PotentialsConfig,
    pub spectral: SpectralConfig,
    pub fan: FanConfig,
    pub go: GoConfig,
    pub dtn: DtnConfig,
    pub reconstruct: ReconstructConfig,
    pub output: OutputConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: GeometryConfig::default(),
            potentials: PotentialsConfig::default(),
            spectral: SpectralConfig::default(),
            fan: FanConfig::default(),
            go: GoConfig::default(),
            dtn: DtnConfig::default(),
            reconstruct: ReconstructConfig::default(),
            output: OutputConfig::default(),
            seed: default_seed(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if !(g.radius_m > 0.0 && g.radius_m1 > g.radius_m) {
            return Err(Error::Config(
                "geometry: need 0 < radius_m < radius_m1".into(),
            ));
        }
        if g.rings < 6 {
            return Err(Error::Config("geometry: need at least 6 rings".into()));
        }
        if self.go.h_list.is_empty() || self.go.h_list.iter().any(|&h| h <= 0.0) {
            return Err(Error::Config("go: h_list must be positive".into()));
        }
        if self.go.eps <= 0.0 {
            return Err(Error::Config("go: eps must be positive".into()));
        }
        if self.fan.n_dirs < 4 || self.fan.n_base == 0 {
            return Err(Error::Config("fan: degenerate resolution".into()));
        }
        if self.spectral.k_modes == 0 {
            return Err(Error::Config("spectral: k_modes must be positive".into()));
        }
        Ok(())
    }

    pub fn metric(&self) -> Metric {
        match self.geometry.conformal {
            Some(profile) => {
                Metric::conformal(profile, self.geometry.radius_m, self.geometry.radius_m1)
            }
            None => Metric::euclidean(self.geometry.radius_m, self.geometry.radius_m1),
        }
    }

    /// Materialize the discrete scene: metric, mesh, discretization.
    pub fn scene(&self) -> Result<Scene> {
        let metric = self.metric();
        if self.geometry.rings % 6 != 0 {
            // DiskMesh needs a node ring exactly on the boundary of M.
            return Err(Error::Config(format!(
                "geometry: rings = {} cannot place a node ring on the boundary of M \
                 (use a multiple of 6 for the default radii)",
                self.geometry.rings
            )));
        }
        let mesh = Arc::new(DiskMesh::standard(self.geometry.rings, &metric));
        let disc = Discretization::new(mesh.clone(), metric.clone());
        Ok(Scene { metric, mesh, disc })
    }

    /// Parse the potential expressions against the scene's mesh.
    pub fn potentials(&self, scene: &Scene) -> Result<PotentialSet> {
        let p = &self.potentials;
        Ok(PotentialSet {
            a1: one_form(&scene.mesh, &p.a1_x, &p.a1_y)?,
            q1: scalar(&scene.mesh, &p.q1)?,
            a2: one_form(&scene.mesh, &p.a2_x, &p.a2_y)?,
            q2: scalar(&scene.mesh, &p.q2)?,
        })
    }
}

/// Materialized geometry of one run.
pub struct Scene {
    pub metric: Metric,
    pub mesh: Arc<DiskMesh>,
    pub disc: Discretization,
}

/// Both potential pairs as fields.
pub struct PotentialSet {
    pub a1: OneFormField,
    pub q1: ScalarField,
    pub a2: OneFormField,
    pub q2: ScalarField,
}

// meval closures hold Rc internals and are not Send, so expressions are
// evaluated eagerly at the mesh nodes and stored as nodal fields.
fn nodal(mesh: &Arc<DiskMesh>, expr: &str) -> Result<Vec<num_complex::Complex64>> {
    let parsed: meval::Expr = expr
        .parse()
        .map_err(|e| Error::Config(format!("potential expression {expr:?}: {e}")))?;
    let f = parsed
        .bind2("x", "y")
        .map_err(|e| Error::Config(format!("potential expression {expr:?}: {e}")))?;
    Ok(mesh
        .nodes
        .iter()
        .map(|&p| num_complex::Complex64::new(f(p[0], p[1]), 0.0))
        .collect())
}

fn scalar(mesh: &Arc<DiskMesh>, expr: &str) -> Result<ScalarField> {
    Ok(ScalarField::from_nodal(mesh.clone(), nodal(mesh, expr)?))
}

fn one_form(mesh: &Arc<DiskMesh>, ex: &str, ey: &str) -> Result<OneFormField> {
    let vx = nodal(mesh, ex)?;
    let vy = nodal(mesh, ey)?;
    Ok(OneFormField::from_nodal(mesh.clone(), [vx, vy]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.geometry.rings, cfg.geometry.rings);
        assert_eq!(back.go.h_list, cfg.go.h_list);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[geometry]\nringz = 12\n");
        assert!(err.is_err());
        let err = toml::from_str::<RunConfig>("verbose = true\n");
        assert!(err.is_err());
    }

    #[test]
    fn bad_expression_is_a_config_error() {
        let mut cfg = RunConfig::default();
        cfg.geometry.rings = 6;
        let scene = cfg.scene().unwrap();
        cfg.potentials.q1 = "x +* y".into();
        assert!(matches!(
            cfg.potentials(&scene),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn expressions_evaluate_on_the_mesh() {
        let mut cfg = RunConfig::default();
        cfg.geometry.rings = 6;
        cfg.potentials.q1 = "0.1 * (1 - x^2 - y^2)".into();
        let scene = cfg.scene().unwrap();
        let pots = cfg.potentials(&scene).unwrap();
        let v = pots.q1.eval([0.0, 0.0]);
        assert!((v.re - 0.1).abs() < 1e-12);
    }

    #[test]
    fn ring_guard_is_a_config_error() {
        let mut cfg = RunConfig::default();
        cfg.geometry.rings = 13;
        assert!(matches!(cfg.scene(), Err(Error::Config(_))));
    }
}
