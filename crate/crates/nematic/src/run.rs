//! The subcommands. Each writes into an output directory that also receives
//! the resolved configuration, the tool version and the parameter block.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nematic_core::defects::{boundary_residual, extract, region_f, sample_y};
use nematic_core::exec::Exec;
use nematic_core::grid::{extend_normal, gamma_curve, ParticleShape, SurfaceMesh};
use nematic_core::limit_energy::{curvature_diagnostics, e0_total, young_law_residual, E0Breakdown};
use nematic_core::mesh::{total_length, Polyline, TriMesh};
use nematic_core::potentials::{MaterialParams, RegimeParams};
use nematic_core::profile1d::{closed_form_quadrature, euler_lagrange_residual, i_closed_form, optimal_n3, solve_bvp, ProfileQuery};
use nematic_core::recovery::{e0_target, validate_limsup, FSpec, LimsupSpec, RecoveryGeometry};
use nematic_core::relax::{minimize, mollify, QField};
use serde::Serialize;

use crate::config::{GeometryKind, RunConfig};
use crate::io::{self, Checkpoint, FRow};
use crate::RunError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Output directory of one run.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// `config.toml` with the version and the derived parameters as comments.
    pub fn write_config(&self, cfg: &RunConfig, m: &MaterialParams, r: &RegimeParams) -> Result<(), RunError> {
        let mut text = format!("# nematic {VERSION}\n");
        text += &format!("# s_star = {:.17e}\n# c_star = {:.17e}\n", m.s_star, m.c_star);
        text += &format!("# eta = {:.17e}\n# xi = {:.17e}\n# beta = {:.17e}\n# gamma = {:.17e}\n", r.eta, r.xi, r.beta, r.gamma);
        text += &format!("# s_star_t = {:.17e}\n# c0 = {:.17e}\n", r.s_star_t, r.c0);
        text += &cfg.resolved_toml();
        io::write_atomic(&self.file("config.toml"), text.as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KeyValue {
    pub key: String,
    pub value: f64,
}

fn kv(key: &str, value: f64) -> KeyValue {
    KeyValue { key: key.to_string(), value }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct TraceCsv {
    iter: usize,
    #[serde(rename = "E_total")]
    e_total: f64,
    #[serde(rename = "E_dirichlet")]
    e_dirichlet: f64,
    #[serde(rename = "E_f")]
    e_f: f64,
    #[serde(rename = "E_g")]
    e_g: f64,
    grad_norm: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct E0Csv {
    term_surface_base: f64,
    term_g: f64,
    term_line: f64,
    term_bulk_t: f64,
    total: f64,
    f_form_total: f64,
}

impl From<&E0Breakdown> for E0Csv {
    fn from(b: &E0Breakdown) -> Self {
        E0Csv {
            term_surface_base: b.term_surface_base,
            term_g: b.term_g,
            term_line: b.term_line,
            term_bulk_t: b.term_bulk_t,
            total: b.total,
            f_form_total: b.f_form_total,
        }
    }
}

fn params(r: &RegimeParams, m: &MaterialParams) -> [f64; 6] {
    [r.eta, r.xi, r.beta, m.a, m.b, m.c]
}

/// Summary of `relax`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_total: f64,
    pub final_grad_norm: f64,
}

/// Gradient flow from the far-field state with the particle pinned; writes
/// `checkpoint.bin`, `trace.csv` and `relax.csv`.
pub fn cmd_relax<E: Exec>(cfg: &RunConfig, out: &RunDir, exec: &E) -> Result<RelaxSummary, RunError> {
    let start = Instant::now();
    let model = cfg.model()?;
    out.write_config(cfg, &model.material, &model.regime)?;
    let mut field = QField::constant(*model.grid(), model.regime.q_inf);
    field.apply_pins(&model);
    let (field, report) = minimize(&model, &field, &cfg.minimize(), exec)?;
    io::write_checkpoint(&out.file("checkpoint.bin"), &Checkpoint::new(&field, params(&model.regime, &model.material)))?;
    let trace: Vec<TraceCsv> = report
        .trace
        .iter()
        .map(|t| TraceCsv { iter: t.iter, e_total: t.energy.total, e_dirichlet: t.energy.dirichlet, e_f: t.energy.f, e_g: t.energy.g, grad_norm: t.grad_norm })
        .collect();
    io::write_csv(&out.file("trace.csv"), &trace)?;
    let e = report.final_energy;
    let summary = vec![
        kv("iterations", report.iterations as f64),
        kv("converged", report.converged as u8 as f64),
        kv("stalled", report.stalled as u8 as f64),
        kv("E_total", e.total),
        kv("eta_E_total", e.eta_total),
        kv("E_dirichlet", e.dirichlet),
        kv("E_f", e.f),
        kv("E_g", e.g),
        kv("E_c0", e.c0),
        kv("grad_norm", report.final_grad_norm),
        kv("dt_max", report.dt_max),
        kv("wall_seconds", start.elapsed().as_secs_f64()),
    ];
    io::write_csv(&out.file("relax.csv"), &summary)?;
    Ok(RelaxSummary { iterations: report.iterations, converged: report.converged, final_total: e.total, final_grad_norm: report.final_grad_norm })
}

/// Summary of `extract`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractSummary {
    pub s_length: f64,
    pub t_area: f64,
    pub e0: E0Breakdown,
}

/// Defect geometry of a checkpoint: `s.poly`, `t.obj` (`T ∩ Ω`), `t_full.obj`,
/// `surface.obj`, `f.csv` and `report.csv`.
pub fn cmd_extract<E: Exec>(cfg: &RunConfig, checkpoint: &Path, out: &RunDir, exec: &E) -> Result<ExtractSummary, RunError> {
    let model = cfg.model()?;
    out.write_config(cfg, &model.material, &model.regime)?;
    let m = model.material;
    let field = io::read_checkpoint(checkpoint)?.into_field(*model.grid()).map_err(|e| RunError::Config(format!("{}: {e}", checkpoint.display())))?;
    let mut report = Vec::new();
    let field = if cfg.extraction.mollify_n > 0.0 {
        let (f, r) = mollify(&model, &field, cfg.extraction.mollify_n, exec)?;
        report.push(kv("mollify_lipschitz_over_n", r.lipschitz_over_n));
        f
    } else {
        field
    };
    let y = sample_y(cfg.extraction.alpha_y * m.s_star, cfg.extraction.seed);
    let v = extend_normal(&model.domain)?;
    let th = cfg.thresholds(&m, model.regime.eta);
    let shape = model.domain.shape.clone();
    let surface = match &shape {
        Some(s) => SurfaceMesh::from_shape(s, cfg.extraction.surface_h_radii)?,
        None => SurfaceMesh::default(),
    };
    let geom = extract(&model, &field, &y, &v, &th, shape.as_ref().map(|_| &surface), exec)?;
    let gamma = if shape.is_some() { gamma_curve(&surface, shape.as_ref())? } else { Vec::new() };
    let g = if geom.g.is_empty() { vec![false; surface.len()] } else { geom.g.clone() };
    let f = region_f(&surface, &g);
    let residual = boundary_residual(&geom.t_boundary, &geom.s, &gamma);
    let e0 = e0_total(&geom, &surface, model.regime.beta, &m)?;

    io::write_polylines(&out.file("s.poly"), &geom.s)?;
    let tag = vec![format!("T in the fluid, area {:.17e}", geom.t.omega_area)];
    io::write_obj(&out.file("t.obj"), &geom.t.omega, &tag)?;
    io::write_obj(&out.file("t_full.obj"), &geom.t.full, &["every triangle of the level set".to_string()])?;
    let comments = vec![format!("F area {:.17e}", f.area), format!("F complement area {:.17e}", f.complement_area)];
    io::write_obj(&out.file("surface.obj"), &surface.mesh, &comments)?;
    let rows: Vec<FRow> = surface.mesh.vertices.iter().zip(&f.member).enumerate().map(|(i, (p, &fm))| FRow { vertex: i, x: p[0], y: p[1], z: p[2], f: fm as u8 }).collect();
    io::write_csv(&out.file("f.csv"), &rows)?;
    io::write_polylines(&out.file("f_boundary.poly"), &f.boundary)?;

    report.extend([
        kv("s_length", geom.s_length),
        kv("s_components", geom.s.len() as f64),
        kv("t_omega_area", geom.t.omega_area),
        kv("t_collar_area", geom.t.collar.area()),
        kv("g_area", geom.g_area),
        kv("f_area", f.area),
        kv("considered_cubes", geom.t.considered_cubes as f64),
        kv("excluded_cubes", geom.t.excluded_cubes as f64),
        kv("ambiguous_cells", geom.ambiguous_cells as f64),
        kv("residual_forward", residual.forward),
        kv("residual_backward", residual.backward),
        kv("e0_total", e0.total),
        kv("e0_f_form_total", e0.f_form_total),
        kv("y_seed", y.seed as f64),
        kv("y_alpha", y.alpha),
    ]);
    io::write_csv(&out.file("report.csv"), &report)?;
    Ok(ExtractSummary { s_length: geom.s_length, t_area: geom.t.omega_area, e0 })
}

/// The target geometry named in the `recovery` section.
pub fn configured_geometry(cfg: &RunConfig) -> Result<RecoveryGeometry, RunError> {
    let shape = cfg.shape()?;
    let need = |what: &str| -> Result<ParticleShape, RunError> { shape.clone().ok_or_else(|| RunError::Config(format!("recovery.geometry = \"{what}\" needs a particle"))) };
    let w = cfg.grid.half_width_radii;
    let rad = cfg.recovery.radius_radii;
    Ok(match cfg.recovery.geometry {
        GeometryKind::Plate => {
            let mut g = RecoveryGeometry::plate(0.0, [-w[0], -w[1]], [w[0], w[1]], 32);
            g.shape = shape;
            g
        }
        GeometryKind::Disk => {
            let mut g = RecoveryGeometry::disk([0.0; 3], rad, 256);
            g.shape = shape;
            g
        }
        GeometryKind::Collar => RecoveryGeometry::particle_collar(need("collar")?),
        GeometryKind::EquatorRing => {
            let shape = need("equator_ring")?;
            let surface = SurfaceMesh::from_shape(&shape, cfg.extraction.surface_h_radii)?;
            let s = gamma_curve(&surface, Some(&shape))?;
            RecoveryGeometry { shape: Some(shape), t: TriMesh::default(), s, f: FSpec::Upper }
        }
        GeometryKind::Files => {
            let t = match &cfg.recovery.t_file {
                Some(p) => io::read_obj(p)?,
                None => TriMesh::default(),
            };
            let s: Vec<Polyline> = match &cfg.recovery.s_file {
                Some(p) => io::read_polylines(p)?,
                None => Vec::new(),
            };
            let f = match (&cfg.recovery.f_file, &shape) {
                (Some(p), Some(sh)) => {
                    let member = io::read_f_csv(p)?;
                    let surface = SurfaceMesh::from_shape(sh, cfg.extraction.surface_h_radii)?;
                    if member.len() != surface.len() {
                        return Err(RunError::Config(format!("{}: {} rows for {} surface vertices", p.display(), member.len(), surface.len())));
                    }
                    FSpec::Vertices { surface, member }
                }
                (Some(p), None) => return Err(RunError::Config(format!("{}: F needs a particle", p.display()))),
                (None, _) => FSpec::Upper,
            };
            RecoveryGeometry { shape, t, s, f }
        }
    })
}

/// `E₀` of the configured geometry inside the box: `e0.csv` and `diagnostics.csv`.
pub fn cmd_e0(cfg: &RunConfig, out: &RunDir) -> Result<E0Breakdown, RunError> {
    let m = cfg.material()?;
    let r = cfg.regime(&m)?;
    out.write_config(cfg, &m, &r)?;
    let geom = configured_geometry(cfg)?;
    let w = cfg.grid.half_width_radii;
    let b = e0_target(&geom, w.map(|x| -x), w, r.beta, cfg.extraction.surface_h_radii, &m)?;
    io::write_csv(&out.file("e0.csv"), &[E0Csv::from(&b)])?;

    let mut diag = vec![kv("t_area", geom.t.area()), kv("s_length", total_length(&geom.s))];
    if !geom.t.is_empty() || !geom.s.is_empty() {
        let c = curvature_diagnostics(&geom.t, &geom.s, r.beta, &m, 20.0);
        diag.extend([
            kv("t_mean_abs_h", c.t_mean_abs_h),
            kv("t_median_abs_h", c.t_median_abs_h),
            kv("s_curvature_target", c.s_target),
            kv("s_curvature_mean", c.s_mean),
            kv("s_curvature_max_rel_dev", c.s_max_rel_dev),
            kv("s_curvature_spread", c.s_spread),
        ]);
    }
    if let (Some(shape), false) = (&geom.shape, geom.t.is_empty()) {
        let (surface, member) = match &geom.f {
            FSpec::Vertices { surface, member } => (surface.clone(), member.clone()),
            FSpec::Upper => {
                let s = SurfaceMesh::from_shape(shape, cfg.extraction.surface_h_radii)?;
                let member = s.normals.iter().map(|n| n[2] > 0.0).collect();
                (s, member)
            }
        };
        let young = young_law_residual(&geom.t, shape, &surface, &member, &geom.s, 2.0 * cfg.extraction.surface_h_radii, 2.0 * r.eta)?;
        diag.extend([kv("young_mean", young.mean), kv("young_max", young.max), kv("young_edges", young.residuals.len() as f64)]);
    }
    io::write_csv(&out.file("diagnostics.csv"), &diag)?;
    Ok(b)
}

#[derive(Debug, Clone, Copy, Serialize)]
struct ProfileCsv {
    r: f64,
    n3_bvp: f64,
    n3_closed_form: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IValues {
    pub theta: f64,
    pub i_bvp: f64,
    pub i_closed_form: f64,
    pub i_quadrature: f64,
    pub rel_err: f64,
    pub el_residual: f64,
}

/// Half-line profile for angle `theta`: `profile.csv` and `i_values.csv`.
pub fn cmd_profile(cfg: &RunConfig, theta: f64, out: &RunDir) -> Result<IValues, RunError> {
    let m = cfg.material()?;
    let r = cfg.regime(&m)?;
    out.write_config(cfg, &m, &r)?;
    if !(theta > 0.0 && theta < std::f64::consts::PI) {
        return Err(RunError::Config(format!("theta must lie in (0, pi), got {theta}")));
    }
    let sol = solve_bvp(&ProfileQuery::half_line(theta), 2048, &m)?;
    let rows: Vec<ProfileCsv> = sol.r.iter().zip(&sol.n3).map(|(&x, &n)| ProfileCsv { r: x, n3_bvp: n, n3_closed_form: optimal_n3(x, theta, &m).0 }).collect();
    io::write_csv(&out.file("profile.csv"), &rows)?;
    let exact = i_closed_form(theta, 1.0, &m);
    let iv = IValues {
        theta,
        i_bvp: sol.value,
        i_closed_form: exact,
        i_quadrature: closed_form_quadrature(theta, 2000, &m),
        rel_err: (sol.value - exact).abs() / exact,
        el_residual: euler_lagrange_residual(theta, 4096, &m),
    };
    io::write_csv(&out.file("i_values.csv"), &[iv])?;
    Ok(iv)
}

#[derive(Debug, Clone, Copy, Serialize)]
struct LimsupCsv {
    eta: f64,
    xi: f64,
    h: f64,
    voxels: usize,
    #[serde(rename = "eta_E_total")]
    eta_e_total: f64,
    eta_dirichlet: f64,
    eta_f: f64,
    eta_g: f64,
    eta_c0: f64,
    #[serde(rename = "E0_target")]
    e0_target: f64,
    ratio: f64,
}

/// Recovery fields along the `regime.etas` schedule: `limsup.csv`. Returns the ratios.
pub fn cmd_recover<E: Exec>(cfg: &RunConfig, out: &RunDir, exec: &E) -> Result<Vec<f64>, RunError> {
    let m = cfg.material()?;
    let r = cfg.regime(&m)?;
    out.write_config(cfg, &m, &r)?;
    if cfg.recovery.geometry == GeometryKind::EquatorRing {
        return Err(RunError::Config("recovery.geometry = \"equator_ring\" puts S on the particle and has no recovery field".into()));
    }
    let geom = configured_geometry(cfg)?;
    let schedule = cfg.regime.etas.iter().map(|&e| cfg.regime_at(e, &m)).collect::<Result<Vec<_>, _>>()?;
    let w = cfg.grid.half_width_radii;
    let spec = LimsupSpec {
        lo: w.map(|x| -x),
        hi: w,
        periodic: cfg.grid.periodic,
        h_over_eta: cfg.recovery.h_over_eta,
        max_voxels: cfg.recovery.max_voxels,
        surface_h: cfg.extraction.surface_h_radii,
    };
    let rows = validate_limsup(&geom, &schedule, &spec, &m, exec)?;
    let csv: Vec<LimsupCsv> = rows
        .iter()
        .map(|r| LimsupCsv {
            eta: r.eta,
            xi: r.xi,
            h: r.h,
            voxels: r.voxels,
            eta_e_total: r.eta_e_total,
            eta_dirichlet: r.eta_dirichlet,
            eta_f: r.eta_f,
            eta_g: r.eta_g,
            eta_c0: r.eta_c0,
            e0_target: r.e0_target,
            ratio: r.ratio,
        })
        .collect();
    io::write_csv(&out.file("limsup.csv"), &csv)?;
    Ok(rows.iter().map(|r| r.ratio).collect())
}

/// Runs the acceptance suite, writes `validate.csv` and returns the results.
pub fn cmd_validate<E: Exec>(only: &[usize], out: &RunDir, exec: &E) -> Result<Vec<crate::validate::Outcome>, RunError> {
    let results = crate::validate::run_suite(only, exec);
    io::write_csv(&out.file("validate.csv"), &results)?;
    Ok(results)
}
