//! The acceptance suite: ten criteria, each a self-contained numerical run
//! reporting pass or fail with the measured numbers.

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use nematic_core::defects::{boundary_residual, extract, extract_s, extract_t, sample_y, t_boundary, Thresholds};
use nematic_core::exec::Exec;
use nematic_core::grid::{extend_normal, Domain, Grid, ParticleShape, SurfaceMesh};
use nematic_core::limit_energy::{e0_from_parts, e0_surface_base, young_law_residual};
use nematic_core::linalg::Vec3;
use nematic_core::mesh::{cotan_mean_curvature, parametric, total_length, Polyline};
use nematic_core::potentials::{f_bulk, f_grad, g_grad, g_mag, g_uniaxial_residual, MaterialParams, RegimeParams};
use nematic_core::profile1d::{euler_lagrange_residual, i_closed_form, solve_bvp, ProfileQuery};
use nematic_core::recovery::{build_recovery_field, qb_core, recovery_energy, validate_limsup, LimsupSpec, Recovery, RecoveryConfig, RecoveryGeometry};
use nematic_core::relax::{discrete_energy, discrete_gradient, far_from_n_cover, minimize, mollify, MinimizeConfig, Model, QField};
use nematic_core::rng;
use nematic_core::tensor::{calt_compose, calt_normal, calt_tangent_basis, compose, decompose, CalTPoint, DecompParams, QTensor};
use serde::Serialize;

use crate::RunError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub seconds: f64,
    pub detail: String,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!("criterion {:>2} {:<28} {} ({:.1} s) {}", self.id, self.name, if self.passed { "PASS" } else { "FAIL" }, self.seconds, self.detail)
    }
}

type Check = Result<(bool, String), RunError>;

pub const NAMES: [&str; 10] = [
    "closed-form profile",
    "complex normal and tangents",
    "potential consistency",
    "line-energy scaling",
    "plate limsup",
    "surface term",
    "round-trip extraction",
    "covering scaling",
    "optimality diagnostics",
    "beta regimes",
];

/// Runs the criteria in `only` (all when empty), in order.
pub fn run_suite<E: Exec>(only: &[usize], exec: &E) -> Vec<Outcome> {
    (1..=10).filter(|id| only.is_empty() || only.contains(id)).map(|id| run_one(id, exec)).collect()
}

pub fn run_one<E: Exec>(id: usize, exec: &E) -> Outcome {
    let start = Instant::now();
    let res = match id {
        1 => profile_oracle(),
        2 => complex_exactness(),
        3 => potential_consistency(exec),
        4 => line_energy_scaling(exec),
        5 => plate_limsup(exec),
        6 => surface_term(exec),
        7 => round_trip(exec),
        8 => covering(exec),
        9 => optimality(),
        10 => beta_regimes(exec),
        _ => Err(RunError::Config(format!("no criterion {id}"))),
    };
    let (passed, detail) = res.unwrap_or_else(|e| (false, format!("error: {e}")));
    Outcome { id, name: NAMES.get(id.wrapping_sub(1)).unwrap_or(&"?").to_string(), passed, seconds: start.elapsed().as_secs_f64(), detail }
}

fn mat() -> MaterialParams {
    MaterialParams::default()
}

fn halton_unit(index: u64) -> Vec3 {
    let [u, v] = rng::halton::<2>(index);
    let z = 2.0 * u - 1.0;
    let r = (1.0 - z * z).sqrt();
    let a = 2.0 * PI * v;
    [r * a.cos(), r * a.sin(), z]
}

fn profile_oracle() -> Check {
    let m = mat();
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut el = 0.0f64;
    for theta in [PI / 6.0, FRAC_PI_2, 5.0 * PI / 6.0] {
        let sol = solve_bvp(&ProfileQuery::half_line(theta), 2048, &m)?;
        let exact = i_closed_form(theta, 1.0, &m);
        worst = worst.max((sol.value - exact).abs() / exact);
        el = el.max(euler_lagrange_residual(theta, 4096, &m));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((worst < 5e-3 && el < 1e-4 && secs < 1.0, format!("max rel err {worst:.2e}, EL residual {el:.2e}, {secs:.2} s")))
}

fn complex_exactness() -> Check {
    let start = Instant::now();
    let mut r = rng::seeded(11);
    let (mut orth, mut norm, mut trip) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..1000u64 {
        let [a, b] = rng::halton::<2>(i + 1);
        let lambda = 0.1 + 1.9 * a;
        let phi = 2.0 * PI * b;
        let p = CalTPoint { lambda, n: [phi.cos(), phi.sin()], m_prime: [[0.5, 0.0], [0.0, 0.5]] };
        let q = calt_compose(&p)?;
        let nq = calt_normal(&q)?;
        for t in calt_tangent_basis(&q)? {
            orth = orth.max(nq.dot(&t).abs());
        }
        norm = norm.max((nq.norm_sq() - 4.5 * lambda * lambda).abs());

        let rot = rng::rotation(&mut r);
        let [c, d] = rng::halton::<2>(i + 1001);
        let dp = DecompParams { s: 0.1 + 1.9 * c, r: 0.95 * d, n: [rot[0][0], rot[1][0], rot[2][0]], m: [rot[0][1], rot[1][1], rot[2][1]] };
        let q = compose(&dp)?;
        let back = compose(&decompose(&q).params)?;
        trip = trip.max((back - q).norm());
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((orth < 1e-10 && norm < 1e-10 && trip < 1e-9 && secs < 1.0, format!("max |<N,T>| {orth:.1e}, max norm dev {norm:.1e}, round trip {trip:.1e}, {secs:.2} s")))
}

/// `|fd − ⟨grad, dir⟩| / (|grad| |dir|)` by central differences.
fn fd_rel<F: Fn(&QTensor) -> f64>(f: F, q: &QTensor, dir: &QTensor, grad: &QTensor, t: f64) -> f64 {
    let fd = (f(&(*q + *dir * t)) - f(&(*q - *dir * t))) / (2.0 * t);
    (fd - grad.dot(dir)).abs() / (grad.norm() * dir.norm()).max(1e-300)
}

fn potential_consistency<E: Exec>(exec: &E) -> Check {
    let m = mat();
    let mut r = rng::seeded(3);
    let (mut f_n, mut g_res, mut fg, mut gg) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..1000u64 {
        let n = halton_unit(i + 1);
        f_n = f_n.max(f_bulk(&m.vacuum(n), &m).abs());
        g_res = g_res.max(g_uniaxial_residual(n, &m));
        let q = rng::ball_sym0(&mut r, 1.5);
        let d = rng::unit_sym0(&mut r);
        fg = fg.max(fd_rel(|x| f_bulk(x, &m), &q, &d, &f_grad(&q, &m), 1e-5));
        gg = gg.max(fd_rel(|x| g_mag(x, &m), &q, &d, &g_grad(&q, &m), 1e-5));
    }
    let f0 = (f_bulk(&QTensor::ZERO, &m) - 0.4375).abs();

    // Discrete gradient on 32³ around a small sphere.
    let grid = Grid::new([-1.0; 3], [1.0; 3], 2.0 / 32.0, [false; 3])?;
    let domain = Domain::build(Some(ParticleShape::Sphere { center: [0.0; 3], radius: 0.4 }), grid, 1.0)?;
    let model = Model { domain, regime: RegimeParams::new(0.3, 0.05, 0.7, &m)?, material: m };
    let mut field = QField::constant(grid, model.regime.q_inf);
    for i in 0..grid.len() {
        if !model.domain.pinned(i) {
            field.q[i] = model.regime.q_inf + rng::ball_sym0(&mut r, 0.6);
        }
    }
    field.apply_pins(&model);
    let g = discrete_gradient(&model, &field, exec)?;
    let free: Vec<usize> = (0..grid.len()).filter(|&i| model.domain.active(i) && !model.domain.pinned(i)).collect();
    let mut dg = 0.0f64;
    let t = 1e-5;
    for k in 0..100u64 {
        let idx = free[(rng::radical_inverse(k + 1, 2) * free.len() as f64) as usize];
        let d = rng::unit_sym0(&mut r);
        let mut probe = field.clone();
        probe.q[idx] = field.q[idx] + d * t;
        let ep = discrete_energy(&model, &probe, exec)?.total;
        probe.q[idx] = field.q[idx] - d * t;
        let em = discrete_energy(&model, &probe, exec)?.total;
        let fd = (ep - em) / (2.0 * t);
        dg = dg.max((fd - g[idx].dot(&d)).abs() / g[idx].norm().max(1e-300));
    }
    let pass = f_n < 1e-12 && f0 < 1e-12 && g_res < 1e-12 && fg < 1e-6 && gg < 1e-6 && dg < 1e-5;
    Ok((pass, format!("f on N {f_n:.1e}, |f(0) - 0.4375| {f0:.1e}, g residual {g_res:.1e}, f_grad {fg:.1e}, g_grad {gg:.1e}, discrete gradient {dg:.1e}")))
}

/// Only `ξ` matters to [`qb_core`].
fn core_config(r: &RegimeParams) -> RecoveryConfig {
    RecoveryConfig { gamma: r.gamma, eta: r.eta, xi: r.xi, collar: r.collar(), interp: Default::default(), warnings: Vec::new() }
}

/// The half-winding field of a straight line along `e2` through the box centre.
fn line_field<E: Exec>(model: &Model, centre: Vec3, cfg: &RecoveryConfig, exec: &E) -> QField {
    let m = model.material;
    QField::from_fn(model, |x| {
        let (dx, dz) = (x[0] - centre[0], x[2] - centre[2]);
        qb_core(dx.hypot(dz), dz.atan2(dx), cfg, &m)
    }, exec)
}

fn line_ratio<E: Exec>(eta: f64, h: f64, exec: &E) -> Result<f64, RunError> {
    let m = mat();
    let regime = RegimeParams::from_beta(1.0, eta, 0.7, &m)?;
    let n = 64;
    let grid = Grid::new([0.0; 3], [n as f64 * h; 3], h, [false, true, false])?;
    let model = Model { domain: Domain::empty(grid), regime, material: m };
    let cfg = core_config(&regime);
    // The line runs through voxel corners, never through a centre.
    let c = 0.5 * n as f64 * h;
    let field = line_field(&model, [c, 0.0, c], &cfg, exec);
    let s = vec![Polyline { points: vec![[c, 0.0, c], [c, n as f64 * h, c]], closed: false }];
    let d = nematic_core::defects::line_energy_density(&model, &field, &s, eta, exec)?.ok_or_else(|| RunError::Config("empty line".into()))?;
    Ok(d.ratio)
}

fn line_energy_scaling<E: Exec>(exec: &E) -> Check {
    let r1 = line_ratio(0.25, 0.0125, exec)?;
    let r2 = line_ratio(0.15, 0.00625, exec)?;
    let pass = (0.9..=1.3).contains(&r1) && (r2 - 1.0).abs() < (r1 - 1.0).abs();
    Ok((pass, format!("ratio {r1:.4} at eta 0.25, {r2:.4} at eta 0.15")))
}

fn plate_limsup<E: Exec>(exec: &E) -> Check {
    let m = mat();
    let w = 0.3;
    let geom = RecoveryGeometry::plate(0.0, [-w, -w], [w, w], 24);
    let schedule = [0.3, 0.2, 0.1].iter().map(|&e| RegimeParams::from_beta(1.0, e, 0.7, &m)).collect::<Result<Vec<_>, _>>()?;
    let spec = LimsupSpec { lo: [-w, -w, -1.35], hi: [w, w, 1.35], periodic: [true, true, false], h_over_eta: 0.125, max_voxels: 4_000_000, surface_h: 0.05 };
    let rows = validate_limsup(&geom, &schedule, &spec, &m, exec)?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let last = *ratios.last().unwrap_or(&f64::NAN);
    let decreasing = ratios.windows(2).all(|p| p[1] <= p[0]);
    let above = ratios.iter().all(|&r| r >= 1.0 - 0.15);
    let pass = (last - 1.0).abs() <= 0.10 && decreasing && above;
    Ok((pass, format!("ratios {:?}", ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>())))
}

fn surface_term<E: Exec>(exec: &E) -> Check {
    let m = mat();
    let sphere = ParticleShape::unit_sphere();
    let surface = SurfaceMesh::from_shape(&sphere, 0.02)?;
    let base = e0_surface_base(&surface);
    let base_err = (base - 2.0 * PI).abs() / (2.0 * PI);

    // Collar over the upper half space; the field is symmetric under z -> -z.
    // The comparison is restricted to surface points farther than the collar
    // width from the equator, where the construction is the pure optimal
    // profile; near the equator the gap blend relaxes the anchoring.
    let eta = 0.1;
    let h = eta / 8.0;
    let regime = RegimeParams::from_beta(1.0, eta, 0.7, &m)?;
    let geom = RecoveryGeometry::particle_collar(sphere.clone());
    let reach = 1.0 + 3.0 * regime.collar() + 4.0 * h;
    let n = (reach / h).ceil();
    let grid = Grid::new([-n * h, -n * h, 0.0], [n * h, n * h, n * h], h, [false; 3])?;
    let cfg = RecoveryConfig::new(&regime, h, f64::INFINITY)?;
    let width = cfg.width();
    let rec = Recovery::new(&geom, &grid, cfg, &regime, &m)?;
    let away = |omega: Vec3| omega[2] > 0.0 && rec.gap_distance(omega) >= width;
    let e = recovery_energy(&rec, &grid, exec, |x| if away(sphere.closest_point(x)) { 1.0 } else { 0.0 })?;
    let sigma = 2.0 * m.s_star * m.c_star;
    let target: f64 = surface.mesh.vertices.iter().zip(&surface.normals).zip(&surface.areas).filter(|((p, _), _)| away(**p)).map(|((_, nu), a)| sigma * a * (1.0 - nu[2].abs())).sum();
    let ratio = eta * e.total / target;
    let pass = base_err < 0.01 && (ratio - 1.0).abs() <= 0.10;
    Ok((pass, format!("sphere base {base:.5} (rel err {base_err:.1e}); collar at eta {eta} beyond {width:.3} of the equator: eta E {:.4} vs {target:.4}, ratio {ratio:.4}", eta * e.total)))
}

fn round_trip<E: Exec>(exec: &E) -> Check {
    let m = mat();
    let eta = 0.1;
    let h = 0.025;
    let regime = RegimeParams::from_beta(1.0, eta, 0.7, &m)?;
    let geom = RecoveryGeometry::disk([0.0; 3], 1.0, 256);
    let grid = Grid::new([-1.8, -1.8, -0.7], [1.8, 1.8, 0.7], h, [false; 3])?;
    let model = Model { domain: Domain::build(None, grid, 1.0)?, regime, material: m };
    let cfg = RecoveryConfig::new(&regime, h, f64::INFINITY)?;
    let field = build_recovery_field(&geom, &model, &cfg, exec)?;
    let y = sample_y(1e-3 * m.s_star, 1);
    let v = extend_normal(&model.domain)?;
    let th = Thresholds::new(&m, eta);
    let s = extract_s(&model, &field, &y, exec)?;
    let t = extract_t(&model, &field, &y, &v, &th, exec)?;
    let tb = t_boundary(&t.full, &grid);
    let res = boundary_residual(&tb, &s.lines, &[]);
    let (ls, at) = (s.length, t.omega_area);
    let pass = (ls - 2.0 * PI).abs() <= 0.05 * 2.0 * PI && (at - PI).abs() <= 0.05 * PI && res.max() < 3.0 * h;
    Ok((pass, format!("M(S) {ls:.4} (2pi {:.4}), M(T) {at:.4} (pi {PI:.4}), boundary residual {:.4} (3h {:.3})", 2.0 * PI, res.max(), 3.0 * h)))
}

fn cover_ratio<E: Exec>(eta: f64, n: f64, exec: &E) -> Result<(f64, bool, usize), RunError> {
    let m = mat();
    let regime = RegimeParams::from_beta(0.5, eta, 0.7, &m)?;
    let h = 0.025;
    let cells = 32;
    let grid = Grid::new([0.0; 3], [cells as f64 * h; 3], h, [false, true, false])?;
    let model = Model { domain: Domain::empty(grid), regime, material: m };
    let cfg = core_config(&regime);
    let c = 0.5 * cells as f64 * h;
    let field = line_field(&model, [c, 0.0, c], &cfg, exec);
    let (smooth, _) = mollify(&model, &field, n, exec)?;
    let rep = far_from_n_cover(&model, &smooth, 0.1, n, exec)?;
    Ok((rep.ratio(), rep.chain_holds(), rep.count()))
}

fn covering<E: Exec>(exec: &E) -> Check {
    let a = cover_ratio(0.25, 4.0, exec)?;
    let b = cover_ratio(0.15, 8.0, exec)?;
    let c_fit = a.0.max(b.0);
    let pass = a.1 && b.1 && a.2 > 0 && b.2 > 0 && c_fit.is_finite();
    Ok((pass, format!("#I {} and {}, fitted C {c_fit:.3e}, spread {:.2}, chain {} / {}", a.2, b.2, a.0.max(b.0) / a.0.min(b.0), a.1, b.1)))
}

fn optimality() -> Check {
    // Plate z = 0 meeting the unit sphere along the equator.
    let sphere = ParticleShape::unit_sphere();
    let surface = SurfaceMesh::from_shape(&sphere, 0.03)?;
    let member: Vec<bool> = surface.normals.iter().map(|n| n[2] > 0.0).collect();
    let annulus = parametric(24, 256, true, |u, v| {
        let r = 1.0 + u;
        let a = 2.0 * PI * v;
        [r * a.cos(), r * a.sin(), 0.0]
    });
    let young = young_law_residual(&annulus, &sphere, &surface, &member, &[], 0.01, 0.0)?;

    let mut curv = 0.0f64;
    for rho in [0.5, 1.0, 2.0] {
        let k = Polyline::circle([0.0; 3], rho, 256).circumradius_curvatures();
        let mean = k.iter().sum::<f64>() / k.len() as f64;
        curv = curv.max((mean * rho - 1.0).abs());
    }

    let plate = parametric(20, 20, false, |u, v| [u, v, 0.3]);
    let (hs, _) = cotan_mean_curvature(&plate, 20.0);
    let flat = hs.iter().flatten().fold(0.0f64, |a, h| a.max(h.abs()));
    let pass = !young.residuals.is_empty() && young.max < 0.05 && curv < 0.02 && flat < 1e-9;
    Ok((pass, format!("Young max {:.2e} over {} edges, circle curvature dev {curv:.1e}, flat |H| {flat:.1e}", young.max, young.residuals.len())))
}

/// Ring on the sphere at polar angle `theta`.
fn ring_on_sphere(theta: f64, n: usize) -> Polyline {
    Polyline::circle([0.0, 0.0, theta.cos()], theta.sin(), n)
}

fn beta_regimes<E: Exec>(exec: &E) -> Check {
    let m = mat();
    // Relaxed sphere at small beta.
    let eta = 0.1;
    let beta = 0.25;
    let regime = RegimeParams::from_beta(beta, eta, 0.7, &m)?;
    let h = 0.08;
    let half = 32.0 * h;
    let grid = Grid::new([-half; 3], [half; 3], h, [false; 3])?;
    let sphere = ParticleShape::unit_sphere();
    let model = Model { domain: Domain::build(Some(sphere.clone()), grid, 1.0)?, regime, material: m };
    let mut field = QField::constant(grid, regime.q_inf);
    field.apply_pins(&model);
    let solver = MinimizeConfig { tol: 1e-4, max_iter: 4000, ..MinimizeConfig::default() };
    let (field, report) = minimize(&model, &field, &solver, exec)?;
    let y = sample_y(1e-3 * m.s_star, 1);
    let v = extend_normal(&model.domain)?;
    let th = Thresholds::new(&m, eta);
    let surface = SurfaceMesh::from_shape(&sphere, 0.05)?;
    let geom = extract(&model, &field, &y, &v, &th, Some(&surface), exec)?;
    let area_m = 4.0 * PI;
    let t_ok = geom.t.omega_area < 0.05 * area_m;
    let reach = (2.0 * eta).max(3.0 * h);
    let s_far = geom.s.iter().flat_map(|l| l.points.iter()).map(|&p| sphere.phi(p)).fold(0.0f64, f64::max);
    let s_ok = s_far <= reach;

    // Stuck ring against a detached ring joined to it by a frustum of T.
    let theta_s = PI / 4.0;
    let (r1, z1) = (theta_s.sin(), theta_s.cos());
    let (r2, z2) = (0.3, 1.15);
    let stuck = vec![ring_on_sphere(theta_s, 512)];
    let detached = vec![Polyline::circle([0.0, 0.0, z2], r2, 512)];
    let frustum = parametric(32, 512, true, |u, v| {
        let r = r1 + u * (r2 - r1);
        let a = 2.0 * PI * v;
        [r * a.cos(), r * a.sin(), z1 + u * (z2 - z1)]
    });
    let fine = SurfaceMesh::from_shape(&sphere, 0.03)?;
    // F = {θ < θ_s}; G = F Δ {ν3 > 0}.
    let g: Vec<bool> = fine.normals.iter().map(|n| (n[2] > theta_s.cos()) != (n[2] > 0.0)).collect();
    let a_t = frustum.area();
    let sigma = 2.0 * m.s_star * m.c_star;
    let mut agree = true;
    let (mut stuck_wins, mut detached_wins) = (false, false);
    let mut table = Vec::new();
    for b in [0.5, 1.0, 2.0, 3.0, 4.0, 6.0] {
        let e_stuck = e0_from_parts(&fine, &g, total_length(&stuck), 0.0, b, &m)?.total;
        let e_det = e0_from_parts(&fine, &g, total_length(&detached), a_t, b, &m)?.total;
        let saving = FRAC_PI_2 * m.s_star * m.s_star * b * (total_length(&stuck) - total_length(&detached));
        let added = 2.0 * sigma * a_t;
        let ranked_detached = e_det < e_stuck;
        agree &= ranked_detached == (saving > added);
        stuck_wins |= !ranked_detached;
        detached_wins |= ranked_detached;
        table.push(format!("{b}:{}", if ranked_detached { "detached" } else { "stuck" }));
    }
    let pass = t_ok && s_ok && agree && stuck_wins && detached_wins;
    Ok((
        pass,
        format!(
            "relaxed ({} iters, converged {}): M(T in fluid) {:.4} (< {:.4}), S {:.3} long, farthest {s_far:.3} from particle (<= {reach:.3}); ranking {}",
            report.iterations,
            report.converged,
            geom.t.omega_area.max(0.0),
            0.05 * area_m,
            geom.s_length,
            table.join(" ")
        ),
    ))
}
