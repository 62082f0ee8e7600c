//! Run configuration. Lengths are in particle radii (the sphere has radius 1).

use std::path::{Path, PathBuf};

use nematic_core::defects::Thresholds;
use nematic_core::grid::{Domain, Grid, ParticleShape};
use nematic_core::potentials::{MaterialParams, RegimeParams};
use nematic_core::relax::{MinimizeConfig, Model, StepRule};
use serde::{Deserialize, Serialize};

use crate::RunError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Worker threads, 0 for all cores. Results do not depend on it.
    pub threads: usize,
    pub material: MaterialSection,
    pub regime: RegimeSection,
    pub particle: ParticleSection,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub extraction: ExtractionSection,
    pub recovery: RecoverySection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialSection {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeSection {
    /// `η|ln ξ|`; used when `xi` is absent.
    pub beta: f64,
    pub eta: f64,
    pub xi: Option<f64>,
    /// Schedule for `recover`.
    pub etas: Vec<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    None,
    Sphere,
    Ellipsoid,
    LevelSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleSection {
    pub shape: ShapeKind,
    pub center_radii: [f64; 3],
    pub semi_axes_radii: [f64; 3],
    pub level_set_file: Option<PathBuf>,
    /// Radius of a ball inside the level-set particle's exterior reach.
    pub inner_radius_radii: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub h_radii: f64,
    /// The box is `[−w, w]` along each axis.
    pub half_width_radii: [f64; 3],
    pub periodic: [bool; 3],
    /// Anchored band half-width in voxels.
    pub band_voxels: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Armijo,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub step_rule: RuleKind,
    /// Fraction of the stable step for the fixed rule.
    pub step_factor: f64,
    pub max_backtracks: usize,
    pub trace_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionSection {
    /// Size of the generic perturbation `Y` in units of `s_*`.
    pub alpha_y: f64,
    pub seed: u64,
    /// Mollify with `ρ_n` before extracting; 0 skips it.
    pub mollify_n: f64,
    pub s_min: f64,
    pub gap_min: f64,
    pub dot_min: f64,
    /// `g_band` in units of `η`.
    pub g_band_eta: f64,
    pub max_excluded: f64,
    /// Spacing of the particle surface mesh.
    pub surface_h_radii: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    /// Horizontal plate through the box at `z = 0`.
    Plate,
    /// Horizontal disk of radius `radius_radii` bounded by its circle.
    Disk,
    /// The particle collar with `F` the upper half.
    Collar,
    /// `S` on the particle's equator, no `T`.
    EquatorRing,
    /// `t_file`, `s_file` and `f_file`.
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoverySection {
    pub geometry: GeometryKind,
    pub radius_radii: f64,
    pub h_over_eta: f64,
    pub max_voxels: usize,
    pub t_file: Option<PathBuf>,
    pub s_file: Option<PathBuf>,
    pub f_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            threads: 0,
            material: MaterialSection::default(),
            regime: RegimeSection::default(),
            particle: ParticleSection::default(),
            grid: GridSection::default(),
            solver: SolverSection::default(),
            extraction: ExtractionSection::default(),
            recovery: RecoverySection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Default for MaterialSection {
    fn default() -> Self {
        MaterialSection { a: 1.0, b: 1.0, c: 1.0 }
    }
}

impl Default for RegimeSection {
    fn default() -> Self {
        RegimeSection { beta: 0.5, eta: 0.3, xi: None, etas: vec![0.3, 0.2, 0.1], gamma: 0.7 }
    }
}

impl Default for ParticleSection {
    fn default() -> Self {
        ParticleSection { shape: ShapeKind::Sphere, center_radii: [0.0; 3], semi_axes_radii: [1.0; 3], level_set_file: None, inner_radius_radii: 0.5 }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { h_radii: 0.125, half_width_radii: [3.0; 3], periodic: [false; 3], band_voxels: 1.0 }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = MinimizeConfig::default();
        SolverSection { tol: d.tol, max_iter: d.max_iter, step_rule: RuleKind::Armijo, step_factor: 0.9, max_backtracks: d.max_backtracks, trace_every: d.trace_every }
    }
}

impl Default for ExtractionSection {
    fn default() -> Self {
        ExtractionSection { alpha_y: 1e-3, seed: 1, mollify_n: 0.0, s_min: 0.2, gap_min: 0.1, dot_min: 0.1, g_band_eta: 2.0, max_excluded: 0.01, surface_h_radii: 0.05 }
    }
}

impl Default for RecoverySection {
    fn default() -> Self {
        RecoverySection { geometry: GeometryKind::Plate, radius_radii: 1.0, h_over_eta: 0.125, max_voxels: 4_000_000, t_file: None, s_file: None, f_file: None }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: PathBuf::from("out") }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            RunError::Config(m) => RunError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        // Relative input files are taken relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.particle.level_set_file, &mut cfg.recovery.t_file, &mut cfg.recovery.s_file, &mut cfg.recovery.f_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Every field, defaults included, for the run directory.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    fn check(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if !(self.grid.h_radii > 0.0) {
            return bad(format!("grid.h_radii must be positive, got {}", self.grid.h_radii));
        }
        if self.grid.half_width_radii.iter().any(|&w| !(w > self.grid.h_radii)) {
            return bad(format!("grid.half_width_radii {:?} must exceed h_radii", self.grid.half_width_radii));
        }
        if !(self.regime.gamma > 0.5 && self.regime.gamma < 1.0) {
            return bad(format!("regime.gamma must lie in (1/2, 1), got {}", self.regime.gamma));
        }
        if self.particle.shape == ShapeKind::LevelSet && self.particle.level_set_file.is_none() {
            return bad("particle.level_set_file is required for shape = \"level_set\"".into());
        }
        if self.recovery.geometry == GeometryKind::Files && self.recovery.t_file.is_none() && self.recovery.s_file.is_none() {
            return bad("recovery.geometry = \"files\" needs t_file or s_file".into());
        }
        if !(self.extraction.alpha_y >= 0.0) {
            return bad(format!("extraction.alpha_y must be non-negative, got {}", self.extraction.alpha_y));
        }
        Ok(())
    }

    pub fn material(&self) -> Result<MaterialParams, RunError> {
        Ok(MaterialParams::new(self.material.a, self.material.b, self.material.c)?)
    }

    pub fn regime_at(&self, eta: f64, m: &MaterialParams) -> Result<RegimeParams, RunError> {
        Ok(match self.regime.xi {
            Some(xi) => RegimeParams::new(eta, xi, self.regime.gamma, m)?,
            None => RegimeParams::from_beta(self.regime.beta, eta, self.regime.gamma, m)?,
        })
    }

    pub fn regime(&self, m: &MaterialParams) -> Result<RegimeParams, RunError> {
        self.regime_at(self.regime.eta, m)
    }

    pub fn shape(&self) -> Result<Option<ParticleShape>, RunError> {
        let p = &self.particle;
        Ok(match p.shape {
            ShapeKind::None => None,
            ShapeKind::Sphere => Some(ParticleShape::Sphere { center: p.center_radii, radius: 1.0 }),
            ShapeKind::Ellipsoid => Some(ParticleShape::Ellipsoid { center: p.center_radii, semi_axes: p.semi_axes_radii }),
            ShapeKind::LevelSet => {
                let path = p.level_set_file.as_ref().expect("checked on load");
                let volume = crate::io::read_level_set(path)?;
                Some(ParticleShape::LevelSet { volume, inner_radius: p.inner_radius_radii })
            }
        })
    }

    pub fn grid(&self) -> Result<Grid, RunError> {
        let w = self.grid.half_width_radii;
        Ok(Grid::new(w.map(|x| -x), w, self.grid.h_radii, self.grid.periodic)?)
    }

    pub fn model(&self) -> Result<Model, RunError> {
        let material = self.material()?;
        let regime = self.regime(&material)?;
        let domain = Domain::build(self.shape()?, self.grid()?, self.grid.band_voxels)?;
        Ok(Model { domain, regime, material })
    }

    pub fn minimize(&self) -> MinimizeConfig {
        let s = &self.solver;
        let rule = match s.step_rule {
            RuleKind::Armijo => StepRule::Armijo,
            RuleKind::Fixed => StepRule::Fixed { factor: s.step_factor },
        };
        MinimizeConfig { rule, tol: s.tol, max_iter: s.max_iter, max_backtracks: s.max_backtracks, trace_every: s.trace_every.max(1) }
    }

    pub fn thresholds(&self, m: &MaterialParams, eta: f64) -> Thresholds {
        let e = &self.extraction;
        Thresholds { s_min: e.s_min * m.s_star, gap_min: e.gap_min * m.s_star, dot_min: e.dot_min, g_band: e.g_band_eta * eta, max_excluded: e.max_excluded }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_resolved_text() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.resolved_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_toml("[grid]\nh_radii = 0.1\nspacing = 2\n").unwrap_err();
        assert!(e.to_string().contains("spacing"), "{e}");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = RunConfig::from_toml("[regime]\neta = 0.2\n[particle]\nshape = \"none\"\n").unwrap();
        assert_eq!(c.regime.eta, 0.2);
        assert_eq!(c.regime.gamma, 0.7);
        assert!(c.shape().unwrap().is_none());
        assert!(RunConfig::from_toml("[regime]\ngamma = 1.2\n").is_err());
    }
}
