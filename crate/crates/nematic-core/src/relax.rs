//! Discrete energy, its gradient, gradient-flow minimization, mollification
//! and the covering of the set far from `N`.
//!
//! The discrete energy of a field on the voxel grid is
//!
//! ```text
//! E_h = Σ_{x active} h³ (f/ξ² + g/η² + C₀)(Q_x) + Σ_{edges xy, both active} (h/2) |Q_y − Q_x|²
//! ```
//!
//! where a voxel is active when its centre lies in the fluid (`φ > 0`). The
//! edge sum is the Dirichlet term with forward differences on every edge, so
//! [`discrete_gradient`] is its exact derivative.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grid::{Domain, Grid, ParticleShape, VoxelClass};
use crate::linalg::Vec3;
use crate::potentials::{f_bulk, g_mag, potential_grad, MaterialParams, RegimeParams};
use crate::rng;
use crate::tensor::{dist_to_n, QTensor};

/// A domain together with the parameters of the energy.
#[derive(Debug, Clone)]
pub struct Model {
    pub domain: Domain,
    pub regime: RegimeParams,
    pub material: MaterialParams,
}

impl Model {
    pub fn grid(&self) -> &Grid {
        &self.domain.grid
    }

    /// Prescribed value of a pinned voxel: anchoring inside and on the band,
    /// `Q_{∞,ξ,η}` on the far-field layer.
    pub fn pinned_value(&self, idx: usize) -> Option<QTensor> {
        match self.domain.class[idx] {
            VoxelClass::Interior | VoxelClass::Band => Some(self.domain.anchoring(idx, &self.material)),
            VoxelClass::FarField => Some(self.regime.q_inf),
            VoxelClass::Fluid => None,
        }
    }

    pub fn free_count(&self) -> usize {
        self.domain.count(VoxelClass::Fluid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QField {
    pub grid: Grid,
    pub q: Vec<QTensor>,
}

impl QField {
    pub fn constant(grid: Grid, q: QTensor) -> Self {
        QField { grid, q: vec![q; grid.len()] }
    }

    /// Samples `init` at voxel centres and then applies the pinned values.
    pub fn from_fn<F: Fn(Vec3) -> QTensor + Sync + Send, E: Exec>(model: &Model, init: F, exec: &E) -> Self {
        let grid = *model.grid();
        let q = exec.map(grid.len(), |idx| model.pinned_value(idx).unwrap_or_else(|| init(grid.center_of(idx))));
        QField { grid, q }
    }

    pub fn apply_pins(&mut self, model: &Model) {
        for (idx, q) in self.q.iter_mut().enumerate() {
            if let Some(p) = model.pinned_value(idx) {
                *q = p;
            }
        }
    }

    /// Largest `|Q|` over the field.
    pub fn sup_norm(&self) -> f64 {
        self.q.iter().map(QTensor::norm).fold(0.0, f64::max)
    }
}

/// Energy split into its terms; `eta_total = η · total`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBreakdown {
    pub dirichlet: f64,
    pub f: f64,
    pub g: f64,
    pub c0: f64,
    pub total: f64,
    pub eta_total: f64,
}

impl EnergyBreakdown {
    fn from_parts(p: [f64; 4], eta: f64) -> Self {
        let total = p[0] + p[1] + p[2] + p[3];
        EnergyBreakdown { dirichlet: p[0], f: p[1], g: p[2], c0: p[3], total, eta_total: eta * total }
    }
}

#[inline]
fn potential_parts(q: &QTensor, r: &RegimeParams, m: &MaterialParams) -> [f64; 3] {
    [f_bulk(q, m) / (r.xi * r.xi), g_mag(q, m) / (r.eta * r.eta), r.c0]
}

fn add4(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

fn check_finite(field: &QField) -> Result<()> {
    match field.q.iter().position(|q| !q.is_finite()) {
        Some(index) => Err(Error::NumericPoison { index }),
        None => Ok(()),
    }
}

/// Energy per term of a materialized field.
pub fn discrete_energy<E: Exec>(model: &Model, field: &QField, exec: &E) -> Result<EnergyBreakdown> {
    weighted_energy(model, field, exec, |_| 1.0)
}

/// Energy with every voxel term multiplied by `w(x)` and every edge term by
/// the mean of its endpoint weights.
pub fn weighted_energy<E: Exec, W: Fn(Vec3) -> f64 + Sync + Send>(model: &Model, field: &QField, exec: &E, w: W) -> Result<EnergyBreakdown> {
    let g = model.grid();
    if field.grid != *g || field.q.len() != g.len() {
        return Err(Error::InvalidInput("field and domain grids differ".into()));
    }
    check_finite(field)?;
    let (r, m) = (&model.regime, &model.material);
    let h = g.h;
    let h3 = h * h * h;
    let d = &model.domain;
    let slabs = exec.map(g.dims[2], |k| {
        let mut acc = [0.0; 4];
        for j in 0..g.dims[1] {
            for i in 0..g.dims[0] {
                let idx = g.index(i, j, k);
                if !d.active(idx) {
                    continue;
                }
                let q = field.q[idx];
                let wx = w(g.center(i, j, k));
                let p = potential_parts(&q, r, m);
                acc[1] += wx * h3 * p[0];
                acc[2] += wx * h3 * p[1];
                acc[3] += wx * h3 * p[2];
                for a in 0..3 {
                    if let Some(c) = g.neighbor([i, j, k], a, true) {
                        let nb = g.index(c[0], c[1], c[2]);
                        if d.active(nb) {
                            let wy = w(g.center(c[0], c[1], c[2]));
                            acc[0] += 0.5 * (wx + wy) * 0.5 * h * (field.q[nb] - q).norm_sq();
                        }
                    }
                }
            }
        }
        acc
    });
    let parts = slabs.into_iter().fold([0.0; 4], add4);
    Ok(EnergyBreakdown::from_parts(parts, r.eta))
}

/// Exact gradient of [`discrete_energy`] with respect to the free voxels
/// (Frobenius inner product); zero on pinned voxels.
pub fn discrete_gradient<E: Exec>(model: &Model, field: &QField, exec: &E) -> Result<Vec<QTensor>> {
    check_finite(field)?;
    let g = *model.grid();
    let (r, m) = (&model.regime, &model.material);
    let d = &model.domain;
    let h = g.h;
    let h3 = h * h * h;
    let mut out = vec![QTensor::ZERO; g.len()];
    exec.chunks_mut(&mut out, g.slab_len(), |k, chunk| {
        for j in 0..g.dims[1] {
            for i in 0..g.dims[0] {
                let idx = g.index(i, j, k);
                if d.pinned(idx) || !d.active(idx) {
                    continue;
                }
                let q = field.q[idx];
                let mut acc = potential_grad(&q, r, m) * h3;
                for a in 0..3 {
                    for fwd in [true, false] {
                        if let Some(c) = g.neighbor([i, j, k], a, fwd) {
                            let nb = g.index(c[0], c[1], c[2]);
                            if d.active(nb) {
                                acc += (q - field.q[nb]) * h;
                            }
                        }
                    }
                }
                chunk[i + g.dims[0] * j] = acc;
            }
        }
    });
    Ok(out)
}

/// `‖G/h³‖_{L²} = (Σ h³ |G_x/h³|²)^{1/2}`, the norm of the L² gradient.
pub fn l2_gradient_norm(grid: &Grid, grad: &[QTensor]) -> f64 {
    let h3 = grid.h.powi(3);
    let s: f64 = grad.iter().map(QTensor::norm_sq).sum();
    (s / h3).sqrt()
}

/// Pointwise evaluation of a field, for energies that never materialize it.
pub trait FieldSampler: Sync {
    fn sample(&self, x: Vec3) -> QTensor;
}

impl<F: Fn(Vec3) -> QTensor + Sync> FieldSampler for F {
    fn sample(&self, x: Vec3) -> QTensor {
        self(x)
    }
}

/// Energy of a sampled field slab by slab with the stencil of
/// [`weighted_energy`]; memory is two slabs. Active voxels are those with
/// `φ > 0` (all voxels without a particle).
pub fn streaming_energy<S, E, W>(
    sampler: &S,
    grid: &Grid,
    shape: Option<&ParticleShape>,
    regime: &RegimeParams,
    material: &MaterialParams,
    exec: &E,
    w: W,
) -> Result<EnergyBreakdown>
where
    S: FieldSampler + ?Sized,
    E: Exec,
    W: Fn(Vec3) -> f64 + Sync + Send,
{
    let g = *grid;
    let h = g.h;
    let h3 = h * h * h;
    let [nx, ny, nz] = g.dims;
    type Cell = (QTensor, bool, f64);
    let sample_slab = |k: usize| -> Result<Vec<Vec<Cell>>> {
        let rows = exec.map(ny, |j| {
            (0..nx)
                .map(|i| {
                    let x = g.center(i, j, k);
                    let active = shape.map_or(true, |s| s.phi(x) > 0.0);
                    if active {
                        (sampler.sample(x), true, w(x))
                    } else {
                        (QTensor::ZERO, false, 0.0)
                    }
                })
                .collect::<Vec<Cell>>()
        });
        for (j, row) in rows.iter().enumerate() {
            if let Some(i) = row.iter().position(|c| !c.0.is_finite()) {
                return Err(Error::NumericPoison { index: g.index(i, j, k) });
            }
        }
        Ok(rows)
    };
    let first = sample_slab(0)?;
    let mut cur = first.clone();
    let mut parts = [0.0; 4];
    for k in 0..nz {
        let next = if k + 1 < nz {
            Some(sample_slab(k + 1)?)
        } else if g.periodic[2] {
            Some(first.clone())
        } else {
            None
        };
        let rows = exec.map(ny, |j| {
            let mut acc = [0.0; 4];
            for i in 0..nx {
                let (q, active, wx) = cur[j][i];
                if !active {
                    continue;
                }
                let p = potential_parts(&q, regime, material);
                acc[1] += wx * h3 * p[0];
                acc[2] += wx * h3 * p[1];
                acc[3] += wx * h3 * p[2];
                let mut edge = |other: &Cell| {
                    if other.1 {
                        acc[0] += 0.5 * (wx + other.2) * 0.5 * h * (other.0 - q).norm_sq();
                    }
                };
                if i + 1 < nx {
                    edge(&cur[j][i + 1]);
                } else if g.periodic[0] {
                    edge(&cur[j][0]);
                }
                if j + 1 < ny {
                    edge(&cur[j + 1][i]);
                } else if g.periodic[1] {
                    edge(&cur[0][i]);
                }
                if let Some(nx_slab) = &next {
                    edge(&nx_slab[j][i]);
                }
            }
            acc
        });
        parts = add4(parts, rows.into_iter().fold([0.0; 4], add4));
        if let Some(n) = next {
            cur = n;
        }
    }
    Ok(EnergyBreakdown::from_parts(parts, regime.eta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Explicit gradient flow with `dt = factor · dt_max`; an energy increase is an error.
    Fixed { factor: f64 },
    /// Barzilai–Borwein trial step with Armijo backtracking.
    Armijo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeConfig {
    pub rule: StepRule,
    /// Stop when the L² gradient norm is at most `tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    /// Record a trace row every `trace_every` iterations (and at the end).
    pub trace_every: usize,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        MinimizeConfig { rule: StepRule::Armijo, tol: 1e-6, max_iter: 5000, max_backtracks: 40, trace_every: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: EnergyBreakdown,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    pub converged: bool,
    /// The line search could only find rounding-level decreases.
    pub stalled: bool,
    pub trace: Vec<TraceRow>,
    pub final_energy: EnergyBreakdown,
    pub final_grad_norm: f64,
    pub dt_max: f64,
}

/// Explicit stability bound `h²/(6 + h² max(1/ξ², 1/η²) L_f)` with `L_f` a
/// bound on the Hessian of `f` over the ball of radius `radius`.
pub fn stable_dt(h: f64, regime: &RegimeParams, m: &MaterialParams, radius: f64) -> f64 {
    let lf = m.a + 2.0 * m.b * radius + 3.0 * m.c * radius * radius;
    let k = (1.0 / (regime.xi * regime.xi)).max(1.0 / (regime.eta * regime.eta));
    h * h / (6.0 + h * h * k * lf)
}

/// Gradient flow on the free voxels. Pinned voxels are never written.
pub fn minimize<E: Exec>(model: &Model, field: &QField, cfg: &MinimizeConfig, exec: &E) -> Result<(QField, SolverReport)> {
    let g = *model.grid();
    let h3 = g.h.powi(3);
    let mut x = field.clone();
    let radius = x.sup_norm().max(model.regime.s_star_t);
    let dt_max = stable_dt(g.h, &model.regime, &model.material, radius);
    let free: Vec<usize> = (0..g.len()).filter(|&i| !model.domain.pinned(i)).collect();
    let mut energy = discrete_energy(model, &x, exec)?;
    let mut grad = discrete_gradient(model, &x, exec)?;
    let mut gnorm = l2_gradient_norm(&g, &grad);
    let mut report = SolverReport {
        iterations: 0,
        converged: false,
        stalled: false,
        trace: vec![TraceRow { iter: 0, energy, grad_norm: gnorm }],
        final_energy: energy,
        final_grad_norm: gnorm,
        dt_max,
    };
    if free.is_empty() || gnorm <= cfg.tol || cfg.max_iter == 0 {
        report.converged = free.is_empty() || gnorm <= cfg.tol;
        return Ok((x, report));
    }
    let mut dt = dt_max;
    let mut prev: Option<(Vec<QTensor>, Vec<QTensor>)> = None;
    let mut trial = x.clone();
    for it in 1..=cfg.max_iter {
        if let (StepRule::Armijo, Some((px, pg))) = (cfg.rule, &prev) {
            let mut ss = 0.0;
            let mut sy = 0.0;
            for &i in &free {
                let s = x.q[i] - px[i];
                let y = (grad[i] - pg[i]) * (1.0 / h3);
                ss += s.dot(&s);
                sy += s.dot(&y);
            }
            dt = if sy > 0.0 { ss / sy } else { 2.0 * dt };
            dt = dt.clamp(0.1 * dt_max, 50.0 * dt_max);
        }
        let gg: f64 = free.iter().map(|&i| grad[i].norm_sq()).sum::<f64>() / h3;
        let mut accepted = false;
        let mut backtracks = 0;
        let mut new_energy;
        loop {
            for &i in &free {
                trial.q[i] = x.q[i] - grad[i] * (dt / h3);
            }
            new_energy = discrete_energy(model, &trial, exec)?;
            let decrease = energy.total - new_energy.total;
            match cfg.rule {
                StepRule::Fixed { .. } => {
                    if new_energy.total <= energy.total + 1e-12 * energy.total.abs().max(1.0) {
                        accepted = true;
                    }
                    break;
                }
                StepRule::Armijo => {
                    if decrease >= 1e-4 * dt * gg {
                        accepted = true;
                        break;
                    }
                    backtracks += 1;
                    if backtracks > cfg.max_backtracks {
                        break;
                    }
                    dt *= 0.5;
                }
            }
        }
        if !accepted {
            let predicted = 1e-4 * dt * gg;
            if predicted <= 1e-13 * energy.total.abs().max(1e-300) {
                report.stalled = true;
                break;
            }
            return Err(Error::StepFailure { iteration: it, backtracks, energy: new_energy.total });
        }
        if let StepRule::Fixed { factor } = cfg.rule {
            dt = factor * dt_max;
        }
        let new_grad = discrete_gradient(model, &trial, exec)?;
        prev = Some((core::mem::replace(&mut x.q, trial.q.clone()), core::mem::replace(&mut grad, new_grad)));
        energy = new_energy;
        gnorm = l2_gradient_norm(&g, &grad);
        report.iterations = it;
        if it % cfg.trace_every.max(1) == 0 {
            report.trace.push(TraceRow { iter: it, energy, grad_norm: gnorm });
        }
        if gnorm <= cfg.tol {
            report.converged = true;
            break;
        }
    }
    if report.trace.last().map(|r| r.iter) != Some(report.iterations) {
        report.trace.push(TraceRow { iter: report.iterations, energy, grad_norm: gnorm });
    }
    report.final_energy = energy;
    report.final_grad_norm = gnorm;
    Ok((x, report))
}

/// Orthogonal projection onto the ball of radius `r` in `Sym₀`.
#[inline]
pub fn project_ball(q: &QTensor, r: f64) -> QTensor {
    let n = q.norm();
    if n > r {
        *q * (r / n)
    } else {
        *q
    }
}

/// Largest difference quotient `|Q_y − Q_x|/h` over edges between voxels accepted by `mask`.
pub fn edge_lipschitz<M: Fn(usize) -> bool>(grid: &Grid, q: &[QTensor], mask: M) -> f64 {
    let mut l = 0.0f64;
    for idx in 0..grid.len() {
        if !mask(idx) {
            continue;
        }
        let c = grid.coords(idx);
        for a in 0..3 {
            if let Some(d) = grid.neighbor(c, a, true) {
                let nb = grid.index(d[0], d[1], d[2]);
                if mask(nb) {
                    l = l.max((q[nb] - q[idx]).norm() / grid.h);
                }
            }
        }
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifyReport {
    /// Kernel support radius `1/n`.
    pub radius: f64,
    pub clamp_radius: f64,
    /// Discrete Lipschitz constant of the output over fluid voxels.
    pub lipschitz: f64,
    /// `lipschitz / n`.
    pub lipschitz_over_n: f64,
}

/// `(Π_R Q) ∗ ρ_n` with `R = √(2/3) s_{*,t}` and the bump
/// `ρ(r) ∝ (1 − (n r)²)²` on `r < 1/n`, normalized on the grid. Pinned voxels
/// are restored afterwards.
pub fn mollify<E: Exec>(model: &Model, field: &QField, n: f64, exec: &E) -> Result<(QField, MollifyReport)> {
    let g = *model.grid();
    let rm = 1.0 / n;
    if !(n > 0.0) || rm < 2.0 * g.h {
        return Err(Error::Resolution(format!("mollification radius 1/n = {rm} is below 2h = {}", 2.0 * g.h)));
    }
    check_finite(field)?;
    let big_r = (2.0f64 / 3.0).sqrt() * model.regime.s_star_t;
    let clamped: Vec<QTensor> = field.q.iter().map(|q| project_ball(q, big_r)).collect();
    let reach = (rm / g.h).floor() as isize;
    let mut kernel = Vec::new();
    for dk in -reach..=reach {
        for dj in -reach..=reach {
            for di in -reach..=reach {
                let r = g.h * ((di * di + dj * dj + dk * dk) as f64).sqrt();
                if r < rm {
                    let u = r / rm;
                    kernel.push(([di, dj, dk], (1.0 - u * u).powi(2)));
                }
            }
        }
    }
    let mut out = vec![QTensor::ZERO; g.len()];
    exec.chunks_mut(&mut out, g.slab_len(), |k, chunk| {
        for j in 0..g.dims[1] {
            for i in 0..g.dims[0] {
                let mut acc = QTensor::ZERO;
                let mut wsum = 0.0;
                for (d, w) in &kernel {
                    let mut c = [i as isize + d[0], j as isize + d[1], k as isize + d[2]];
                    let mut inside = true;
                    for a in 0..3 {
                        let n = g.dims[a] as isize;
                        if c[a] < 0 || c[a] >= n {
                            if g.periodic[a] {
                                c[a] = c[a].rem_euclid(n);
                            } else {
                                inside = false;
                            }
                        }
                    }
                    if inside {
                        acc += clamped[g.index(c[0] as usize, c[1] as usize, c[2] as usize)] * *w;
                        wsum += w;
                    }
                }
                chunk[i + g.dims[0] * j] = acc * (1.0 / wsum);
            }
        }
    });
    let mut res = QField { grid: g, q: out };
    res.apply_pins(model);
    let lip = edge_lipschitz(&g, &res.q, |i| model.domain.active(i));
    Ok((res, MollifyReport { radius: rm, clamp_radius: big_r, lipschitz: lip, lipschitz_over_n: lip / n }))
}

/// `min f` over `{dist(Q, N) ≥ δ/2}`, estimated along random rays leaving `N`.
///
/// For each sample a point `P ∈ N` and a unit direction `D` are drawn and
/// the first `t` with `dist(P + tD, N) = δ/2` is located by bisection.
pub fn f_min_far(m: &MaterialParams, delta: f64, samples: usize, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let target = 0.5 * delta;
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let p = m.vacuum(rng::unit_vec(&mut r));
        let d = rng::unit_sym0(&mut r);
        let dist_at = |t: f64| dist_to_n(&(p + d * t), m.s_star);
        let mut lo = 0.0;
        let mut hi = target;
        while dist_at(hi) < target {
            hi *= 2.0;
            if hi > 1e3 {
                break;
            }
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if dist_at(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best = best.min(f_bulk(&(p + d * hi), m));
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverReport {
    pub centers: Vec<usize>,
    pub ball_radius: f64,
    /// `|U_δ|` in voxels.
    pub far_voxels: usize,
    /// Voxels inside some ball that are not in `U_{δ/2}`.
    pub chain_violations: usize,
    /// Voxels of `U_δ` left uncovered (zero by construction).
    pub uncovered: usize,
    /// Discrete Lipschitz constant used to size the balls.
    pub lipschitz: f64,
    pub f_min: f64,
    /// `n³/(η f_min δ³) (ξ² + 1/n²)`.
    pub bound_base: f64,
}

impl CoverReport {
    pub fn count(&self) -> usize {
        self.centers.len()
    }

    pub fn chain_holds(&self) -> bool {
        self.chain_violations == 0 && self.uncovered == 0
    }

    /// `#I / bound_base`, the constant this instance requires.
    pub fn ratio(&self) -> f64 {
        self.centers.len() as f64 / self.bound_base
    }
}

/// Greedy covering of `U_δ = {x ∈ Ω : dist(Q(x), N) > δ}` by balls centred in
/// `U_δ`, scanned in index order.
///
/// The ball radius is `δ/(2L)` with `L = max(n, √3 L_h)` and `L_h` the
/// discrete edge Lipschitz constant of the field: along grid paths this is
/// the Lipschitz bound the inclusion `⋃B ⊂ U_{δ/2}` rests on, and it equals
/// `δ/(2n)` whenever the field is `n`-Lipschitz.
pub fn far_from_n_cover<E: Exec>(model: &Model, field: &QField, delta: f64, n: f64, exec: &E) -> Result<CoverReport> {
    let g = *model.grid();
    let s = model.material.s_star;
    let d = &model.domain;
    let dist: Vec<f64> = exec.map(g.len(), |i| if d.active(i) { dist_to_n(&field.q[i], s) } else { 0.0 });
    let lip_h = edge_lipschitz(&g, &field.q, |i| d.active(i));
    let lip = n.max(3.0f64.sqrt() * lip_h);
    let radius = delta / (2.0 * lip);
    let reach = (radius / g.h).floor() as isize;
    let mut covered = vec![false; g.len()];
    let mut centers = Vec::new();
    let mut violations = 0;
    let mut far = 0;
    for idx in 0..g.len() {
        if !(d.active(idx) && dist[idx] > delta) {
            continue;
        }
        far += 1;
        if covered[idx] {
            continue;
        }
        centers.push(idx);
        let c = g.coords(idx);
        for dk in -reach..=reach {
            for dj in -reach..=reach {
                for di in -reach..=reach {
                    let r = g.h * ((di * di + dj * dj + dk * dk) as f64).sqrt();
                    if r > radius {
                        continue;
                    }
                    let mut p = [c[0] as isize + di, c[1] as isize + dj, c[2] as isize + dk];
                    let mut inside = true;
                    for a in 0..3 {
                        let nn = g.dims[a] as isize;
                        if p[a] < 0 || p[a] >= nn {
                            if g.periodic[a] {
                                p[a] = p[a].rem_euclid(nn);
                            } else {
                                inside = false;
                            }
                        }
                    }
                    if !inside {
                        continue;
                    }
                    let j = g.index(p[0] as usize, p[1] as usize, p[2] as usize);
                    if !d.active(j) {
                        continue;
                    }
                    if !covered[j] {
                        covered[j] = true;
                        if dist[j] <= 0.5 * delta {
                            violations += 1;
                        }
                    }
                }
            }
        }
    }
    let uncovered = (0..g.len()).filter(|&i| d.active(i) && dist[i] > delta && !covered[i]).count();
    let f_min = f_min_far(&model.material, delta, 2000, 7);
    let r = &model.regime;
    let bound_base = n.powi(3) / (r.eta * f_min * delta.powi(3)) * (r.xi * r.xi + 1.0 / (n * n));
    Ok(CoverReport { centers, ball_radius: radius, far_voxels: far, chain_violations: violations, uncovered, lipschitz: lip_h, f_min, bound_base })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::linalg::{E1, E3};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn periodic_model(n: usize, h: f64, eta: f64, xi: f64) -> Model {
        let m = MaterialParams::default();
        let grid = Grid::new([0.0; 3], [n as f64 * h; 3], h, [true; 3]).unwrap();
        Model { domain: Domain::empty(grid), regime: RegimeParams::new(eta, xi, 0.7, &m).unwrap(), material: m }
    }

    #[test]
    fn far_field_constant_has_zero_energy() {
        let model = periodic_model(8, 0.1, 0.25, 0.0183);
        let f = QField::constant(*model.grid(), model.regime.q_inf);
        let e = discrete_energy(&model, &f, &Sequential).unwrap();
        assert!(e.total.abs() < 1e-9, "{e:?}");
        let g = discrete_gradient(&model, &f, &Sequential).unwrap();
        assert!(l2_gradient_norm(model.grid(), &g) < 1e-10);
    }

    #[test]
    fn constant_horizontal_field_magnetic_term() {
        let model = periodic_model(10, 0.1, 0.25, 0.0183);
        let m = model.material;
        let f = QField::constant(*model.grid(), m.vacuum(E1));
        let e = discrete_energy(&model, &f, &Sequential).unwrap();
        assert_abs_diff_eq!(e.g, m.s_star / (0.25 * 0.25), epsilon = 1e-10);
        assert_abs_diff_eq!(e.dirichlet, 0.0);
    }

    #[test]
    fn linear_director_rotation_dirichlet() {
        // n = (sin kx, 0, cos kx) over a full period: |∇Q|² = 2 s² k².
        let n = 32;
        let h = 1.0 / n as f64;
        let model = periodic_model(n, h, 0.25, 0.0183);
        let m = model.material;
        let k = core::f64::consts::TAU;
        let f = QField::from_fn(&model, |x| m.vacuum([(k * x[0]).sin(), 0.0, (k * x[0]).cos()]), &Sequential);
        let e = discrete_energy(&model, &f, &Sequential).unwrap();
        let exact = 0.5 * 2.0 * m.s_star * m.s_star * k * k;
        assert!((e.dirichlet - exact).abs() < 0.02 * exact, "{} vs {exact}", e.dirichlet);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = MaterialParams::default();
        let grid = Grid::new([-1.0; 3], [1.0; 3], 0.125, [false; 3]).unwrap();
        let domain = Domain::build(Some(ParticleShape::Sphere { center: [0.0; 3], radius: 0.4 }), grid, 1.0).unwrap();
        let model = Model { domain, regime: RegimeParams::new(0.3, 0.05, 0.7, &m).unwrap(), material: m };
        let mut r = rng::seeded(5);
        let mut f = QField::from_fn(&model, |_| QTensor::ZERO, &Sequential);
        for i in 0..grid.len() {
            if !model.domain.pinned(i) {
                f.q[i] = model.regime.q_inf + rng::ball_sym0(&mut r, 0.8);
            }
        }
        let g = discrete_gradient(&model, &f, &Sequential).unwrap();
        for _ in 0..20 {
            let mut dir = vec![QTensor::ZERO; grid.len()];
            for i in 0..grid.len() {
                if !model.domain.pinned(i) && r.gen::<f64>() < 0.3 {
                    dir[i] = rng::ball_sym0(&mut r, 1.0);
                }
            }
            let t = 1e-6;
            let shifted = |s: f64| QField { grid, q: f.q.iter().zip(&dir).map(|(a, b)| *a + *b * s).collect() };
            let ep = discrete_energy(&model, &shifted(t), &Sequential).unwrap().total;
            let em = discrete_energy(&model, &shifted(-t), &Sequential).unwrap().total;
            let fd = (ep - em) / (2.0 * t);
            let an: f64 = g.iter().zip(&dir).map(|(a, b)| a.dot(b)).sum();
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} vs {an}");
        }
        for (i, gi) in g.iter().enumerate() {
            if model.domain.pinned(i) {
                assert_eq!(*gi, QTensor::ZERO);
            }
        }
    }

    #[test]
    fn poison_is_located() {
        let model = periodic_model(4, 0.1, 0.25, 0.0183);
        let mut f = QField::constant(*model.grid(), model.regime.q_inf);
        f.q[17].q12 = f64::NAN;
        assert_eq!(discrete_energy(&model, &f, &Sequential), Err(Error::NumericPoison { index: 17 }));
    }

    #[test]
    fn streaming_matches_materialized() {
        let m = MaterialParams::default();
        let grid = Grid::new([-1.0; 3], [1.0, 1.0, 1.25], 0.125, [false, true, false]).unwrap();
        let model = Model { domain: Domain::empty(grid), regime: RegimeParams::new(0.3, 0.05, 0.7, &m).unwrap(), material: m };
        let sampler = |x: Vec3| m.vacuum(crate::linalg::normalize([x[0].sin(), 0.3, 1.0 + x[2] * x[1]]).unwrap());
        let f = QField::from_fn(&model, |x| sampler(x), &Sequential);
        // The far-field layer is pinned in the materialized field, so compare without pins.
        let f = QField { grid, q: (0..grid.len()).map(|i| if model.domain.class[i] == VoxelClass::FarField { sampler(grid.center_of(i)) } else { f.q[i] }).collect() };
        let a = discrete_energy(&model, &f, &Sequential).unwrap();
        let b = streaming_energy(&sampler, &grid, None, &model.regime, &m, &Sequential, |_| 1.0).unwrap();
        assert!((a.total - b.total).abs() < 1e-12 * a.total.abs());
        let wa = weighted_energy(&model, &f, &Sequential, |x| x[0].max(0.0)).unwrap();
        let wb = streaming_energy(&sampler, &grid, None, &model.regime, &m, &Sequential, |x| x[0].max(0.0)).unwrap();
        assert!((wa.total - wb.total).abs() < 1e-12 * wa.total.abs());
    }

    #[test]
    fn minimize_decreases_and_respects_pins() {
        let m = MaterialParams::default();
        let grid = Grid::new([-1.0; 3], [1.0; 3], 0.125, [false; 3]).unwrap();
        let domain = Domain::build(Some(ParticleShape::Sphere { center: [0.0; 3], radius: 0.4 }), grid, 1.0).unwrap();
        let model = Model { domain, regime: RegimeParams::new(0.3, 0.1, 0.7, &m).unwrap(), material: m };
        let f0 = QField::from_fn(&model, |_| m.vacuum(E3), &Sequential);
        let cfg = MinimizeConfig { max_iter: 200, tol: 1e-8, ..Default::default() };
        let (f1, rep) = minimize(&model, &f0, &cfg, &Sequential).unwrap();
        for w in rep.trace.windows(2) {
            assert!(w[1].energy.total <= w[0].energy.total + 1e-12);
        }
        for i in 0..grid.len() {
            if model.domain.pinned(i) {
                assert_eq!(f0.q[i], f1.q[i]);
            }
        }
        assert!(rep.final_energy.total < rep.trace[0].energy.total);
        let (f2, rep2) = minimize(&model, &f0, &MinimizeConfig { tol: f64::INFINITY, ..cfg }, &Sequential).unwrap();
        assert_eq!(rep2.iterations, 0);
        assert_eq!(f2, f0);
    }

    #[test]
    fn mollify_constant_and_spike() {
        let model = periodic_model(16, 0.0625, 0.25, 0.0183);
        let f = QField::constant(*model.grid(), model.regime.q_inf);
        let (g, _) = mollify(&model, &f, 4.0, &Sequential).unwrap();
        for q in &g.q {
            assert!((*q - model.regime.q_inf).norm() < 1e-14);
        }
        let mut spike = f.clone();
        let big_r = (2.0f64 / 3.0).sqrt() * model.regime.s_star_t;
        spike.q[100] = rng::unit_sym0(&mut rng::seeded(1)) * (10.0 * big_r);
        let (g, _) = mollify(&model, &spike, 4.0, &Sequential).unwrap();
        assert!(g.sup_norm() <= big_r * (1.0 + 1e-12));
        assert!(matches!(mollify(&model, &f, 10.0, &Sequential), Err(Error::Resolution(_))));
    }

    #[test]
    fn translation_equivariance_on_periodic_box() {
        let model = periodic_model(12, 0.1, 0.3, 0.05);
        let m = model.material;
        let g = *model.grid();
        let f = QField::from_fn(&model, |x| m.vacuum(crate::linalg::normalize([(6.0 * x[0]).sin(), (4.0 * x[1]).cos(), 1.0]).unwrap()), &Sequential);
        let shift = |f: &QField| QField { grid: g, q: (0..g.len()).map(|i| { let [a, b, c] = g.coords(i); f.q[g.index((a + 3) % 12, b, c)] }).collect() };
        let cfg = MinimizeConfig { max_iter: 5, tol: 0.0, ..Default::default() };
        let (a, _) = minimize(&model, &shift(&f), &cfg, &Sequential).unwrap();
        let (b, _) = minimize(&model, &f, &cfg, &Sequential).unwrap();
        let b = shift(&b);
        for (x, y) in a.q.iter().zip(&b.q) {
            assert!((*x - *y).norm() < 1e-10);
        }
    }

    #[test]
    fn vacuum_field_has_empty_cover() {
        let model = periodic_model(8, 0.1, 0.25, 0.0183);
        let f = QField::constant(*model.grid(), model.material.vacuum(E1));
        let rep = far_from_n_cover(&model, &f, 0.2, 2.0, &Sequential).unwrap();
        assert_eq!(rep.count(), 0);
        assert!(rep.chain_holds());
    }

    #[test]
    fn f_min_is_positive_and_grows() {
        let m = MaterialParams::default();
        let a = f_min_far(&m, 0.1, 500, 1);
        let b = f_min_far(&m, 0.4, 500, 1);
        assert!(a > 0.0 && b > a);
    }
}
