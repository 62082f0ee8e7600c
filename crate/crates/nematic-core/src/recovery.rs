//! Competitor fields built from a target geometry `(T, S, F)`.
//!
//! Layers, in order of precedence:
//!
//! 1. a tube around `S`: isotropic core of radius `ξ`, linear ramp to `2ξ`,
//!    half winding out to `η`, then the collar profile measured from the
//!    circle of radius `η` or from `T`, whichever the distance to `T` reaches;
//! 2. a collar around `T` along the signed distance, `Φ⁺` on the side of the
//!    normal and `Φ⁻` on the other;
//! 3. a collar around the particle along normal rays, `Φ⁺` over `F` and `Φ⁻`
//!    over its complement, with the phases blended across `∂F ∖ S`;
//! 4. `Q_{∞,ξ,η}` everywhere else.
//!
//! Every collar has the same three pieces: the optimal one-dimensional
//! profile up to distance `η^γ`, interpolation to `Q_∞` up to `2η^γ` (in the
//! director angle by default, see [`CollarInterp`]) and linear interpolation
//! on to `Q_{∞,ξ,η}` at `3η^γ`. Directors are written as
//! `(sin ψ w, cos ψ)` with `w` a horizontal unit vector.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::sync::atomic::{AtomicBool, Ordering};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grid::{Grid, ParticleShape, SurfaceMesh};
use crate::limit_energy::{e0_from_parts, E0Breakdown};
use crate::linalg::{add, axpy, closest_point_triangle, cross, dist, dot, normalize, point_segment, scale, sub, Vec3, E1, E3};
use crate::mesh::{bounds, BoxIndex, Polyline, TriMesh};
use crate::potentials::{MaterialParams, RegimeParams};
use crate::profile1d::optimal_psi;
use crate::relax::{streaming_energy, EnergyBreakdown, Model, QField};
use crate::tensor::QTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryConfig {
    pub gamma: f64,
    pub eta: f64,
    pub xi: f64,
    /// `η^γ`.
    pub collar: f64,
    pub interp: CollarInterp,
    pub warnings: Vec<String>,
}

/// How the collar returns to `Q_∞` on `(η^γ, 2η^γ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CollarInterp {
    /// Linear in the director angle; the field stays on the vacuum manifold.
    #[default]
    Phase,
    /// Linear in the tensor. Leaves the vacuum manifold, so the bulk term
    /// costs `η/ξ²·f` there.
    Tensor,
}

impl RecoveryConfig {
    /// Checks `3η^γ < reach/2` and `η^γ > 2h`; warns when `ξ ≤ h/2`.
    pub fn new(regime: &RegimeParams, h: f64, reach: f64) -> Result<Self> {
        let gamma = regime.gamma;
        if !(gamma > 0.5 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("collar exponent gamma must lie in (1/2, 1), got {gamma}")));
        }
        let collar = regime.eta.powf(gamma);
        if !(3.0 * collar < 0.5 * reach) {
            return Err(Error::InvalidInput(format!("collar width 3 eta^gamma = {} is not below half the particle reach {reach}", 3.0 * collar)));
        }
        if !(collar > 2.0 * h) {
            return Err(Error::Resolution(format!("collar eta^gamma = {collar} is not resolved by h = {h} (need > 2h)")));
        }
        let mut warnings = Vec::new();
        if regime.xi <= 0.5 * h {
            warnings.push(format!("core radius xi = {:e} is below h/2 = {:e}; the core energy is overestimated", regime.xi, 0.5 * h));
        }
        Ok(RecoveryConfig { gamma, eta: regime.eta, xi: regime.xi, collar, interp: CollarInterp::Phase, warnings })
    }

    pub fn with_interp(mut self, interp: CollarInterp) -> Self {
        self.interp = interp;
        self
    }

    /// Total collar width `3η^γ`.
    pub fn width(&self) -> f64 {
        3.0 * self.collar
    }

    /// Radius of the tube around `S`, `η + 3η^γ`.
    pub fn tube(&self) -> f64 {
        self.eta + self.width()
    }
}

/// Distance up to which the normal coordinates off the particle are valid:
/// unbounded outside a convex body, the ball radius for level sets.
pub fn exterior_reach(shape: Option<&ParticleShape>) -> f64 {
    match shape {
        None | Some(ParticleShape::Sphere { .. }) | Some(ParticleShape::Ellipsoid { .. }) => f64::INFINITY,
        Some(ParticleShape::LevelSet { inner_radius, .. }) => *inner_radius,
    }
}

fn director(psi: f64, w: Vec3) -> Vec3 {
    let (s, c) = psi.sin_cos();
    [s * w[0], s * w[1], c]
}

fn horizontal(v: Vec3) -> Vec3 {
    normalize([v[0], v[1], 0.0]).unwrap_or(E1)
}

/// The three-piece collar at distance `t` with director angle `psi` on the first piece.
fn collar_tensor<P: Fn(f64) -> f64>(t: f64, psi: P, w: Vec3, cfg: &RecoveryConfig, regime: &RegimeParams, m: &MaterialParams) -> QTensor {
    let l = cfg.collar;
    let q_inf = m.q_infinity();
    if t <= l {
        m.vacuum(director(psi(t), w))
    } else if t <= 2.0 * l {
        let a = (t - l) / l;
        let end = psi(l);
        match cfg.interp {
            CollarInterp::Phase => {
                let target = (end / PI).round() * PI;
                m.vacuum(director(end + a * (target - end), w))
            }
            CollarInterp::Tensor => m.vacuum(director(end, w)) * (1.0 - a) + q_inf * a,
        }
    } else if t <= 3.0 * l {
        let a = (t - 2.0 * l) / l;
        q_inf * (1.0 - a) + regime.q_inf * a
    } else {
        regime.q_inf
    }
}

/// `Φ^±_η(t, θ, dir2)`: uniaxial with `n^± = (√(1−𝚗₃²) dir2, ±𝚗₃(t/η, θ))`
/// on `[0, η^γ]`, then the two interpolation pieces.
pub fn phi_profile(t: f64, theta: f64, dir2: [f64; 2], sign: f64, cfg: &RecoveryConfig, regime: &RegimeParams, m: &MaterialParams) -> QTensor {
    let w = [dir2[0], dir2[1], 0.0];
    let psi = |s: f64| {
        let p = optimal_psi(s / cfg.eta, theta, m);
        if sign < 0.0 {
            PI - p
        } else {
            p
        }
    };
    collar_tensor(t.max(0.0), psi, w, cfg, regime, m)
}

/// Core of a half-winding line: zero for `r < ξ`, a linear ramp to `2ξ`, then
/// `s_*(n⊗n − Id/3)` with `n(φ) = (sin φ/2, 0, cos φ/2)`.
pub fn qb_core(r: f64, phi: f64, cfg: &RecoveryConfig, m: &MaterialParams) -> QTensor {
    let half = 0.5 * phi;
    let q = m.vacuum([half.sin(), 0.0, half.cos()]);
    if r < cfg.xi {
        QTensor::ZERO
    } else if r < 2.0 * cfg.xi {
        q * (r / cfg.xi - 1.0)
    } else {
        q
    }
}

/// The region `F` on the particle surface.
#[derive(Debug, Clone)]
pub enum FSpec {
    /// `F = {ν3 > 0}` (no part of `T` on the particle).
    Upper,
    /// Membership per vertex of `surface`.
    Vertices { surface: SurfaceMesh, member: Vec<bool> },
}

#[derive(Debug, Clone)]
pub struct RecoveryGeometry {
    pub shape: Option<ParticleShape>,
    /// `T ∩ Ω`; orientation is made coherent when the field is prepared.
    pub t: TriMesh,
    pub s: Vec<Polyline>,
    pub f: FSpec,
}

impl RecoveryGeometry {
    /// Horizontal rectangle `[lo, hi]` at height `z`, no line.
    pub fn plate(z: f64, lo: [f64; 2], hi: [f64; 2], cells: usize) -> Self {
        let t = crate::mesh::parametric(cells, cells, false, |u, v| [lo[0] + u * (hi[0] - lo[0]), lo[1] + v * (hi[1] - lo[1]), z]);
        RecoveryGeometry { shape: None, t, s: Vec::new(), f: FSpec::Upper }
    }

    /// Horizontal disk bounded by the circle `S`.
    pub fn disk(center: Vec3, radius: f64, segments: usize) -> Self {
        let rings = (segments / 6).max(2);
        let mut vertices = vec![center];
        for i in 1..=rings {
            let r = radius * i as f64 / rings as f64;
            for j in 0..segments {
                let a = 2.0 * PI * j as f64 / segments as f64;
                vertices.push([center[0] + r * a.cos(), center[1] + r * a.sin(), center[2]]);
            }
        }
        let id = |i: usize, j: usize| (1 + (i - 1) * segments + j % segments) as u32;
        let mut triangles = Vec::new();
        for j in 0..segments {
            triangles.push([0, id(1, j), id(1, j + 1)]);
        }
        for i in 1..rings {
            for j in 0..segments {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let s = Polyline { points: (0..segments).map(|j| vertices[id(rings, j) as usize]).collect(), closed: true };
        RecoveryGeometry { shape: None, t: TriMesh { vertices, triangles }, s: vec![s], f: FSpec::Upper }
    }

    /// Straight line along `e2` through `origin`, `y ∈ [−half, half]`, bounding
    /// the horizontal strip of `T` that extends a length `tail` towards `−e1`.
    pub fn straight_line(origin: Vec3, half: f64, tail: f64, segments: usize) -> Self {
        let across = ((segments as f64 * tail / (2.0 * half)).ceil() as usize).max(1);
        let t = crate::mesh::parametric(across, segments, false, |u, v| [origin[0] - tail * (1.0 - u), origin[1] - half + 2.0 * half * v, origin[2]]);
        let s = Polyline { points: (0..=segments).map(|j| [origin[0], origin[1] - half + 2.0 * half * j as f64 / segments as f64, origin[2]]).collect(), closed: false };
        RecoveryGeometry { shape: None, t, s: vec![s], f: FSpec::Upper }
    }

    /// Particle alone with `F = {ν3 > 0}`: only the surface collar.
    pub fn particle_collar(shape: ParticleShape) -> Self {
        RecoveryGeometry { shape: Some(shape), t: TriMesh::default(), s: Vec::new(), f: FSpec::Upper }
    }
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    u: Vec3,
    /// Conormal of `S` pointing away from `T`.
    ns: Vec3,
    /// Normal of `T` at `S`.
    nt: Vec3,
}

/// Prepared geometry: oriented `T`, frames along `S`, spatial indices.
#[derive(Debug)]
pub struct Recovery<'a> {
    geom: &'a RecoveryGeometry,
    pub cfg: RecoveryConfig,
    regime: RegimeParams,
    m: MaterialParams,
    t: TriMesh,
    t_normals: Vec<Vec3>,
    t_boundary: BTreeSet<(u32, u32)>,
    t_index: BoxIndex,
    s_segs: Vec<(usize, usize)>,
    s_index: BoxIndex,
    frames: Vec<Vec<Frame>>,
    df_segs: Vec<(Vec3, Vec3)>,
    df_index: BoxIndex,
    f_index: BoxIndex,
    /// Length of `∂F ∖ S` handled by phase blending.
    pub gap_length: f64,
}

fn seg_box(a: Vec3, b: Vec3) -> (Vec3, Vec3) {
    bounds(&[a, b])
}

/// Makes the triangles of every component traverse shared edges in opposite
/// directions.
fn orient(mesh: &TriMesh) -> Result<TriMesh> {
    let mut by_edge: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            by_edge.entry((a.min(b), a.max(b))).or_default().push(t);
        }
    }
    let dir = |tri: [u32; 3], a: u32, b: u32| (0..3).any(|k| tri[k] == a && tri[(k + 1) % 3] == b);
    let mut out = mesh.clone();
    let mut seen = vec![false; mesh.triangles.len()];
    for start in 0..mesh.triangles.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = alloc::collections::VecDeque::from([start]);
        while let Some(t) = queue.pop_front() {
            let tri = out.triangles[t];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let list = &by_edge[&(a.min(b), a.max(b))];
                if list.len() != 2 {
                    continue;
                }
                let nb = if list[0] == t { list[1] } else { list[0] };
                let consistent = !dir(out.triangles[nb], a, b);
                if seen[nb] {
                    if !consistent {
                        let c = mesh.centroid(nb);
                        return Err(Error::Construction(format!("T is not orientable near {c:?}")));
                    }
                    continue;
                }
                if !consistent {
                    out.triangles[nb].swap(1, 2);
                }
                seen[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    Ok(out)
}

/// Zero set of a vertex function on a surface mesh, linear along edges.
/// Membership is `level > 0`.
fn member_boundary(surface: &SurfaceMesh, level: &[f64]) -> Vec<(Vec3, Vec3)> {
    let m = &surface.mesh;
    let cross_at = |a: u32, b: u32| {
        let (la, lb) = (level[a as usize], level[b as usize]);
        let s = la / (la - lb);
        axpy(m.vertices[a as usize], s, sub(m.vertices[b as usize], m.vertices[a as usize]))
    };
    let mut out = Vec::new();
    for tri in &m.triangles {
        let mut cut = Vec::new();
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if (level[a as usize] > 0.0) != (level[b as usize] > 0.0) {
                cut.push(cross_at(a, b));
            }
        }
        if cut.len() == 2 {
            out.push((cut[0], cut[1]));
        }
    }
    out
}

impl<'a> Recovery<'a> {
    /// Orients `T`, checks that its boundary inside the box lies within `3h`
    /// of `S` or of the particle, and builds the frames and indices.
    pub fn new(geom: &'a RecoveryGeometry, grid: &Grid, cfg: RecoveryConfig, regime: &RegimeParams, m: &MaterialParams) -> Result<Self> {
        let h = grid.h;
        let t = orient(&geom.t)?;
        let t_normals: Vec<Vec3> = (0..t.triangles.len()).map(|i| normalize(t.face_normal(i)).unwrap_or(E3)).collect();
        let t_boundary: BTreeSet<(u32, u32)> = t.boundary_edges().into_iter().map(|[a, b]| (a.min(b), a.max(b))).collect();
        let reach = cfg.width().max(cfg.tube());
        let cell = reach.max(4.0 * h);
        let t_boxes: Vec<(Vec3, Vec3)> = (0..t.triangles.len()).map(|i| bounds(&t.corners(i))).collect();
        let t_index = BoxIndex::new(&t_boxes, reach, cell);

        let mut s_segs = Vec::new();
        let mut s_boxes = Vec::new();
        for (l, line) in geom.s.iter().enumerate() {
            for (k, (a, b)) in line.segments().enumerate() {
                s_segs.push((l, k));
                s_boxes.push(seg_box(a, b));
            }
        }
        let s_index = BoxIndex::new(&s_boxes, reach, cell);

        // ∂T inside the box must follow S or the particle.
        let (lo, hi) = (grid.lo, grid.hi());
        for &(a, b) in &t_boundary {
            let p = scale(add(t.vertices[a as usize], t.vertices[b as usize]), 0.5);
            if (0..3).any(|ax| p[ax] <= lo[ax] + h || p[ax] >= hi[ax] - h) {
                continue;
            }
            if geom.shape.as_ref().is_some_and(|s| s.phi(p).abs() <= 3.0 * h) {
                continue;
            }
            let d = geom.s.iter().flat_map(|l| l.segments()).map(|(u, v)| point_segment(p, u, v).0).fold(f64::INFINITY, f64::min);
            if d > 3.0 * h {
                return Err(Error::InvalidInput(format!("boundary of T at {p:?} is {d} away from S (tolerance {})", 3.0 * h)));
            }
        }

        let mut frames = Vec::with_capacity(geom.s.len());
        for line in &geom.s {
            let n = line.points.len();
            let mut fr = Vec::with_capacity(n);
            for i in 0..n {
                let (prev, next) = if line.closed {
                    (line.points[(i + n - 1) % n], line.points[(i + 1) % n])
                } else {
                    (line.points[i.saturating_sub(1)], line.points[(i + 1).min(n - 1)])
                };
                let p = line.points[i];
                let u = normalize(sub(next, prev)).unwrap_or(E1);
                let perp = |v: Vec3| normalize(sub(v, scale(u, dot(v, u))));
                let frame = if !t.triangles.is_empty() {
                    let mut best = (f64::INFINITY, 0usize);
                    for tri in 0..t.triangles.len() {
                        let [a, b, c] = t.corners(tri);
                        let d = dist(p, closest_point_triangle(p, a, b, c));
                        if d < best.0 - 1e-12 {
                            best = (d, tri);
                        }
                    }
                    let nt = perp(t_normals[best.1]).unwrap_or(E3);
                    let mut ns = normalize(cross(u, nt)).unwrap_or(E1);
                    if dot(ns, sub(t.centroid(best.1), p)) > 0.0 {
                        ns = scale(ns, -1.0);
                    }
                    Frame { u, ns, nt }
                } else if let Some(shape) = &geom.shape {
                    let ns = perp(shape.normal(p)).unwrap_or(E1);
                    Frame { u, ns, nt: cross(ns, u) }
                } else {
                    let nt = perp(E3).or_else(|| perp(E1)).unwrap();
                    Frame { u, ns: cross(u, nt), nt }
                };
                fr.push(frame);
            }
            frames.push(fr);
        }

        // ∂F away from S, where the two surface profiles are blended.
        let (df_segs, f_index) = match (&geom.shape, &geom.f) {
            (None, _) => (Vec::new(), BoxIndex::default()),
            (Some(shape), FSpec::Upper) => {
                let surf = SurfaceMesh::from_shape(shape, (0.25 * cfg.collar).min(0.05).max(h))?;
                let level: Vec<f64> = surf.normals.iter().map(|n| n[2]).collect();
                (member_boundary(&surf, &level), BoxIndex::default())
            }
            (Some(_), FSpec::Vertices { surface, member }) => {
                if member.len() != surface.len() {
                    return Err(Error::InvalidInput(format!("F has {} flags for {} surface vertices", member.len(), surface.len())));
                }
                let pts: Vec<(Vec3, Vec3)> = surface.mesh.vertices.iter().map(|&p| (p, p)).collect();
                let spacing = surface.mesh.triangles.iter().map(|tri| dist(surface.mesh.vertices[tri[0] as usize], surface.mesh.vertices[tri[1] as usize])).fold(0.0, f64::max);
                let level: Vec<f64> = member.iter().map(|&f| if f { 1.0 } else { -1.0 }).collect();
                (member_boundary(surface, &level), BoxIndex::new(&pts, 2.0 * spacing, cell))
            }
        };
        let tube = cfg.tube();
        let df_segs: Vec<(Vec3, Vec3)> = df_segs
            .into_iter()
            .filter(|&(a, b)| {
                let mid = scale(add(a, b), 0.5);
                geom.s.iter().flat_map(|l| l.segments()).all(|(u, v)| point_segment(mid, u, v).0 >= tube)
            })
            .collect();
        let gap_length = df_segs.iter().map(|&(a, b)| dist(a, b)).sum();
        let df_boxes: Vec<(Vec3, Vec3)> = df_segs.iter().map(|&(a, b)| seg_box(a, b)).collect();
        let df_index = BoxIndex::new(&df_boxes, cfg.width(), cell);

        Ok(Recovery {
            geom,
            cfg,
            regime: *regime,
            m: *m,
            t,
            t_normals,
            t_boundary,
            t_index,
            s_segs,
            s_index,
            frames,
            df_segs,
            df_index,
            f_index,
            gap_length,
        })
    }

    fn w_at(&self, x: Vec3) -> Vec3 {
        match &self.geom.shape {
            Some(shape) => horizontal(shape.normal(x)),
            None => E1,
        }
    }

    /// Distance from a surface point to `∂F ∖ S` (infinite beyond the collar width).
    pub fn gap_distance(&self, omega: Vec3) -> f64 {
        self.df_index.candidates(omega).iter().map(|&i| point_segment(omega, self.df_segs[i as usize].0, self.df_segs[i as usize].1).0).fold(f64::INFINITY, f64::min)
    }

    fn in_f(&self, omega: Vec3, nu: Vec3) -> bool {
        match &self.geom.f {
            FSpec::Upper => nu[2] > 0.0,
            FSpec::Vertices { surface, member } => {
                let mut best = (f64::INFINITY, None);
                for &i in self.f_index.candidates(omega) {
                    let d = dist(surface.mesh.vertices[i as usize], omega);
                    if d < best.0 {
                        best = (d, Some(i as usize));
                    }
                }
                match best.1 {
                    Some(i) => member[i],
                    None => {
                        let i = (0..surface.len()).min_by(|&a, &b| dist(surface.mesh.vertices[a], omega).total_cmp(&dist(surface.mesh.vertices[b], omega))).unwrap_or(0);
                        member.get(i).copied().unwrap_or(nu[2] > 0.0)
                    }
                }
            }
        }
    }

    fn frame_at(&self, line: usize, seg: usize, s: f64) -> Frame {
        let fr = &self.frames[line];
        let n = fr.len();
        let (a, b) = (fr[seg], fr[(seg + 1) % n]);
        let mix = |p: Vec3, q: Vec3| axpy(scale(p, 1.0 - s), s, q);
        let u = normalize(mix(a.u, b.u)).unwrap_or(a.u);
        let ns = normalize(sub(mix(a.ns, b.ns), scale(u, dot(mix(a.ns, b.ns), u)))).unwrap_or(a.ns);
        let mut nt = cross(ns, u);
        if dot(nt, mix(a.nt, b.nt)) < 0.0 {
            nt = scale(nt, -1.0);
        }
        Frame { u, ns, nt }
    }

    fn tube_value(&self, x: Vec3) -> Option<QTensor> {
        let tube = self.cfg.tube();
        let mut best: Option<(f64, usize, f64)> = None;
        for &i in self.s_index.candidates(x) {
            let (l, k) = self.s_segs[i as usize];
            let line = &self.geom.s[l];
            let a = line.points[k];
            let b = line.points[(k + 1) % line.points.len()];
            let (d, s) = point_segment(x, a, b);
            if d < tube && best.map_or(true, |bb| d < bb.0) {
                best = Some((d, i as usize, s));
            }
        }
        let (_, i, s) = best?;
        let (l, k) = self.s_segs[i];
        let line = &self.geom.s[l];
        let a = line.points[k];
        let b = line.points[(k + 1) % line.points.len()];
        let foot = axpy(a, s, sub(b, a));
        let fr = self.frame_at(l, k, s);
        let rel = sub(x, foot);
        let y = dot(rel, fr.ns);
        let z = dot(rel, fr.nt);
        let r = y.hypot(z);
        let eta = self.cfg.eta;
        let zz = z.abs();
        let (t, theta0) = if r <= eta {
            (0.0, 0.5 * zz.atan2(y))
        } else if y >= 0.0 {
            (r - eta, 0.5 * zz.atan2(y))
        } else if -y < eta {
            let zc = (eta * eta - y * y).sqrt();
            (zz - zc, 0.5 * zc.atan2(y))
        } else {
            (zz, 0.5 * PI)
        };
        let m = &self.m;
        let psi = |u: f64| {
            let p = optimal_psi(u / eta, theta0, m);
            if z < 0.0 {
                PI - p
            } else {
                p
            }
        };
        let q = collar_tensor(t, psi, self.w_at(x), &self.cfg, &self.regime, m);
        Some(if r < 2.0 * self.cfg.xi { q * (r / self.cfg.xi - 1.0).max(0.0) } else { q })
    }

    fn sheet_value(&self, x: Vec3) -> Option<QTensor> {
        let width = self.cfg.width();
        let mut best: Option<(f64, usize, Vec3)> = None;
        for &i in self.t_index.candidates(x) {
            let [a, b, c] = self.t.corners(i as usize);
            let p = closest_point_triangle(x, a, b, c);
            let d = dist(x, p);
            if d < width && best.map_or(true, |bb| d < bb.0) {
                best = Some((d, i as usize, p));
            }
        }
        let (d, tri, p) = best?;
        let corners = self.t.triangles[tri];
        let scale_len = dist(self.t.vertices[corners[0] as usize], self.t.vertices[corners[1] as usize]);
        for k in 0..3 {
            let (a, b) = (corners[k], corners[(k + 1) % 3]);
            if self.t_boundary.contains(&(a.min(b), a.max(b))) && point_segment(p, self.t.vertices[a as usize], self.t.vertices[b as usize]).0 <= 1e-9 * scale_len {
                return None;
            }
        }
        let side = dot(sub(x, p), self.t_normals[tri]);
        let m = &self.m;
        let eta = self.cfg.eta;
        let psi = |u: f64| {
            let q = optimal_psi(u / eta, 0.5 * PI, m);
            if side < 0.0 {
                PI - q
            } else {
                q
            }
        };
        Some(collar_tensor(d, psi, self.w_at(x), &self.cfg, &self.regime, m))
    }

    fn surface_value(&self, x: Vec3) -> Option<QTensor> {
        let shape = self.geom.shape.as_ref()?;
        let phi = shape.phi(x);
        if phi <= 0.0 {
            return Some(self.m.vacuum(shape.normal(x)));
        }
        if phi >= self.cfg.width() {
            return None;
        }
        let omega = shape.closest_point(x);
        let nu = shape.normal(omega);
        let theta = nu[2].clamp(-1.0, 1.0).acos();
        let inside = self.in_f(omega, nu);
        let gap = self.cfg.width();
        let d = self.gap_distance(omega);
        let lambda = if d < gap {
            let s = if inside { -d } else { d };
            crate::linalg::smoothstep(0.5 * (s / gap + 1.0))
        } else if inside {
            0.0
        } else {
            1.0
        };
        let m = &self.m;
        let eta = self.cfg.eta;
        let psi = |u: f64| {
            let pf = optimal_psi(u / eta, theta, m);
            let pc = -optimal_psi(u / eta, PI - theta, m);
            (1.0 - lambda) * pf + lambda * pc
        };
        Some(collar_tensor(phi, psi, horizontal(nu), &self.cfg, &self.regime, m))
    }

    /// Field value at `x` and whether the tube around `S` and the particle
    /// collar both claim `x` with values further apart than `s_*`.
    pub fn sample(&self, x: Vec3) -> (QTensor, bool) {
        if let Some(q) = self.tube_value(x) {
            let conflict = self.surface_value(x).is_some_and(|c| (c - q).norm() > self.m.s_star);
            return (q, conflict);
        }
        if let Some(q) = self.sheet_value(x) {
            return (q, false);
        }
        if let Some(q) = self.surface_value(x) {
            return (q, false);
        }
        (self.regime.q_inf, false)
    }

    /// `‖Q‖` bound `√(2/3) s_{*,t}` of the construction.
    pub fn sup_bound(&self) -> f64 {
        (2.0f64 / 3.0).sqrt() * self.regime.s_star_t.max(self.m.s_star)
    }
}

/// Sample the competitor on the model grid; pinned voxels keep their values.
pub fn build_recovery_field<E: Exec>(geom: &RecoveryGeometry, model: &Model, cfg: &RecoveryConfig, exec: &E) -> Result<QField> {
    let grid = *model.grid();
    let rec = Recovery::new(geom, &grid, cfg.clone(), &model.regime, &model.material)?;
    let samples = exec.map(grid.len(), |idx| match model.pinned_value(idx) {
        Some(q) => (q, false),
        None => rec.sample(grid.center_of(idx)),
    });
    if let Some(idx) = samples.iter().position(|s| s.1) {
        return Err(Error::Construction(format!("voxel {:?} at {:?} is claimed by the line tube and the particle collar with incompatible values", grid.coords(idx), grid.center_of(idx))));
    }
    let bound = rec.sup_bound() * (1.0 + 1e-9);
    let q: Vec<QTensor> = samples.into_iter().map(|s| s.0).collect();
    if let Some(idx) = q.iter().position(|v| v.norm() > bound) {
        return Err(Error::Consistency(format!("|Q| = {} exceeds the bound {bound} at voxel {:?}", q[idx].norm(), grid.coords(idx))));
    }
    Ok(QField { grid, q })
}

/// Discrete energy of the competitor without storing it, weighted by `w`.
pub fn recovery_energy<E: Exec, W: Fn(Vec3) -> f64 + Sync + Send>(rec: &Recovery, grid: &Grid, exec: &E, w: W) -> Result<EnergyBreakdown> {
    let conflict = AtomicBool::new(false);
    let sampler = |x: Vec3| {
        let (q, c) = rec.sample(x);
        if c {
            conflict.store(true, Ordering::Relaxed);
        }
        q
    };
    let e = streaming_energy(&sampler, grid, rec.geom.shape.as_ref(), &rec.regime, &rec.m, exec, w)?;
    if conflict.load(Ordering::Relaxed) {
        let idx = (0..grid.len()).find(|&i| rec.sample(grid.center_of(i)).1).unwrap_or(0);
        return Err(Error::Construction(format!("voxel {:?} is claimed by the line tube and the particle collar with incompatible values", grid.coords(idx))));
    }
    Ok(e)
}

/// `E₀` of a recovery geometry restricted to the box `[lo, hi]`: triangles
/// and segments count when their centroid lies in the box.
pub fn e0_target(geom: &RecoveryGeometry, lo: Vec3, hi: Vec3, beta: f64, surface_h: f64, m: &MaterialParams) -> Result<E0Breakdown> {
    let inside = |p: Vec3| (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]);
    let t_area: f64 = (0..geom.t.triangles.len()).filter(|&i| inside(geom.t.centroid(i))).map(|i| geom.t.triangle_area(i)).sum();
    let s_len: f64 = geom.s.iter().flat_map(|l| l.segments()).filter(|&(a, b)| inside(scale(add(a, b), 0.5))).map(|(a, b)| dist(a, b)).sum();
    let (surface, g) = match (&geom.shape, &geom.f) {
        (None, _) => (SurfaceMesh::default(), Vec::new()),
        (Some(shape), FSpec::Upper) => {
            let s = SurfaceMesh::from_shape(shape, surface_h)?;
            let n = s.len();
            (s, vec![false; n])
        }
        (Some(_), FSpec::Vertices { surface, member }) => {
            let g = surface.normals.iter().zip(member).map(|(nu, &f)| f != (nu[2] > 0.0)).collect();
            (surface.clone(), g)
        }
    };
    e0_from_parts(&surface, &g, s_len, t_area, beta, m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimsupRow {
    pub eta: f64,
    pub xi: f64,
    pub h: f64,
    pub voxels: usize,
    /// `η` times each part of the discrete energy.
    pub eta_dirichlet: f64,
    pub eta_f: f64,
    pub eta_g: f64,
    pub eta_c0: f64,
    pub eta_e_total: f64,
    pub e0_target: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimsupSpec {
    pub lo: Vec3,
    pub hi: Vec3,
    pub periodic: [bool; 3],
    /// `h = h_over_eta · η`.
    pub h_over_eta: f64,
    pub max_voxels: usize,
    /// Mesh spacing for the particle surface in the target.
    pub surface_h: f64,
}

/// Builds the competitor for each regime of the schedule and tabulates `η E`
/// against `E₀` of the geometry.
pub fn validate_limsup<E: Exec>(geom: &RecoveryGeometry, schedule: &[RegimeParams], spec: &LimsupSpec, m: &MaterialParams, exec: &E) -> Result<Vec<LimsupRow>> {
    let volume: f64 = (0..3).map(|a| spec.hi[a] - spec.lo[a]).product();
    let mut rows = Vec::with_capacity(schedule.len());
    for regime in schedule {
        let h = spec.h_over_eta * regime.eta;
        let voxels: f64 = (0..3).map(|a| ((spec.hi[a] - spec.lo[a]) / h).round()).product();
        if voxels > spec.max_voxels as f64 {
            let eta_min = (volume / spec.max_voxels as f64).cbrt() / spec.h_over_eta;
            return Err(Error::Budget(format!("eta = {} needs {voxels} voxels (budget {}); smallest feasible eta is {eta_min:.4}", regime.eta, spec.max_voxels)));
        }
        let grid = Grid::new(spec.lo, spec.hi, h, spec.periodic)?;
        let cfg = RecoveryConfig::new(regime, h, exterior_reach(geom.shape.as_ref()))?;
        let rec = Recovery::new(geom, &grid, cfg, regime, m)?;
        let e = recovery_energy(&rec, &grid, exec, |_| 1.0)?;
        let target = e0_target(geom, grid.lo, grid.hi(), regime.beta, spec.surface_h, m)?;
        let eta = regime.eta;
        rows.push(LimsupRow {
            eta,
            xi: regime.xi,
            h,
            voxels: grid.len(),
            eta_dirichlet: eta * e.dirichlet,
            eta_f: eta * e.f,
            eta_g: eta * e.g,
            eta_c0: eta * e.c0,
            eta_e_total: eta * e.total,
            e0_target: target.total,
            ratio: eta * e.total / target.total,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defects::{extract_s, extract_t, sample_y, Thresholds};
    use crate::exec::Sequential;
    use crate::grid::{extend_normal, Domain};
    use crate::linalg::norm;
    use approx::assert_abs_diff_eq;

    fn mat() -> MaterialParams {
        MaterialParams::new(1.0, 1.0, 1.0).unwrap()
    }

    fn setup(eta: f64, beta: f64, gamma: f64) -> (RegimeParams, RecoveryConfig) {
        let m = mat();
        let r = RegimeParams::from_beta(beta, eta, gamma, &m).unwrap();
        let cfg = RecoveryConfig::new(&r, eta / 8.0, f64::INFINITY).unwrap();
        (r, cfg)
    }

    #[test]
    fn profile_pieces() {
        let m = mat();
        let (r, cfg) = setup(0.1, 1.0, 0.7);
        for theta in [0.3, 1.2, 2.5] {
            for sign in [1.0, -1.0] {
                let q0 = phi_profile(0.0, theta, [0.6, 0.8], sign, &cfg, &r, &m);
                let n = [theta.sin() * 0.6, theta.sin() * 0.8, sign * theta.cos()];
                assert!((q0 - QTensor::uniaxial(m.s_star, n)).norm() < 1e-12);
                let l = cfg.collar;
                for t in [l, 2.0 * l] {
                    let jump = (phi_profile(t * (1.0 + 1e-15), theta, [0.6, 0.8], sign, &cfg, &r, &m) - phi_profile(t, theta, [0.6, 0.8], sign, &cfg, &r, &m)).norm();
                    assert!(jump < 1e-12, "{jump}");
                }
                assert_eq!(phi_profile(3.0 * l, theta, [0.6, 0.8], sign, &cfg, &r, &m), r.q_inf);
                assert_eq!(phi_profile(10.0, theta, [0.6, 0.8], sign, &cfg, &r, &m), r.q_inf);
            }
        }
    }

    #[test]
    fn core_profile() {
        let m = mat();
        let (_, cfg) = setup(0.1, 1.0, 0.7);
        assert_eq!(qb_core(0.5 * cfg.xi, 1.0, &cfg, &m), QTensor::ZERO);
        assert!((qb_core(2.0 * cfg.xi, 0.0, &cfg, &m) - m.vacuum(E3)).norm() < 1e-12);
        let cut = qb_core(2.0 * cfg.xi, 2.0 * PI - 1e-12, &cfg, &m);
        assert!((cut - qb_core(2.0 * cfg.xi, 0.0, &cfg, &m)).norm() < 1e-9);
        assert_abs_diff_eq!(qb_core(1.5 * cfg.xi, 0.0, &cfg, &m).norm(), 0.5 * m.vacuum(E3).norm(), epsilon = 1e-12);
    }

    #[test]
    fn config_checks() {
        let m = mat();
        let r = RegimeParams::from_beta(1.0, 0.1, 0.7, &m).unwrap();
        assert!(matches!(RecoveryConfig::new(&r, 0.15, f64::INFINITY), Err(Error::Resolution(_))));
        assert!(matches!(RecoveryConfig::new(&r, 0.01, 0.5), Err(Error::InvalidInput(_))));
        let c = RecoveryConfig::new(&r, 0.0125, f64::INFINITY).unwrap();
        assert!(c.warnings.len() == 1);
    }

    fn model_for(lo: Vec3, hi: Vec3, h: f64, periodic: [bool; 3], regime: RegimeParams) -> Model {
        let grid = Grid::new(lo, hi, h, periodic).unwrap();
        Model { domain: Domain::empty(grid), regime, material: mat() }
    }

    #[test]
    fn disk_round_trip_and_bounds() {
        let m = mat();
        let eta = 0.1;
        let r = RegimeParams::from_beta(0.6, eta, 0.7, &m).unwrap();
        let h = 0.025;
        let model = model_for([-0.8, -0.8, -0.5], [0.8, 0.8, 0.5], h, [false; 3], r);
        let cfg = RecoveryConfig::new(&r, h, f64::INFINITY).unwrap();
        let geom = RecoveryGeometry::disk([0.0, 0.0, 0.0], 0.5, 96);
        let field = build_recovery_field(&geom, &model, &cfg, &Sequential).unwrap();
        let bound = (2.0f64 / 3.0).sqrt() * r.s_star_t * (1.0 + 1e-9);
        assert!(field.q.iter().all(|q| q.norm() <= bound));
        let y = sample_y(1e-3, 7);
        let s = extract_s(&model, &field, &y, &Sequential).unwrap();
        assert_eq!(s.lines.len(), 1);
        assert!((s.length - PI).abs() < 0.05 * PI, "{}", s.length);
        let v = extend_normal(&model.domain).unwrap();
        let th = Thresholds::new(&m, eta);
        let t = extract_t(&model, &field, &y, &v, &th, &Sequential).unwrap();
        assert!((t.omega_area - 0.25 * PI).abs() < 0.05 * 0.25 * PI, "{}", t.omega_area);
    }

    #[test]
    fn rejects_open_sheet_without_line() {
        let m = mat();
        let r = RegimeParams::from_beta(0.3, 0.1, 0.7, &m).unwrap();
        let model = model_for([-1.0; 3], [1.0; 3], 0.05, [false; 3], r);
        let cfg = RecoveryConfig::new(&r, 0.05, f64::INFINITY).unwrap();
        let mut geom = RecoveryGeometry::disk([0.0; 3], 0.5, 48);
        geom.s.clear();
        assert!(matches!(build_recovery_field(&geom, &model, &cfg, &Sequential), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn plate_energy_localizes_and_approaches_target() {
        let m = mat();
        let sigma = 2.0 * m.s_star * m.c_star;
        let mut ratios = Vec::new();
        for eta in [0.3, 0.2] {
            let r = RegimeParams::from_beta(1.0, eta, 0.7, &m).unwrap();
            let h = eta / 8.0;
            let cfg = RecoveryConfig::new(&r, h, f64::INFINITY).unwrap();
            let half = 3.0 * cfg.collar + 4.0 * h;
            let grid = Grid::new([0.0, 0.0, -half], [0.5, 0.5, half], h, [true, true, false]).unwrap();
            let (lo, hi) = (grid.lo, grid.hi());
            let geom = RecoveryGeometry::plate(0.0, [lo[0], lo[1]], [hi[0], hi[1]], 8);
            let rec = Recovery::new(&geom, &grid, cfg.clone(), &r, &m).unwrap();
            let total = recovery_energy(&rec, &grid, &Sequential, |_| 1.0).unwrap();
            let near = recovery_energy(&rec, &grid, &Sequential, |x: Vec3| if x[2].abs() <= cfg.width() { 1.0 } else { 0.0 }).unwrap();
            assert!(near.total >= 0.95 * total.total);
            let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
            ratios.push(eta * total.total / (2.0 * sigma * area));
        }
        assert!(ratios[1] < ratios[0], "{ratios:?}");
        assert!(ratios[1] > 0.9 && ratios[1] < 1.5, "{ratios:?}");
    }

    #[test]
    fn collar_only_on_sphere() {
        let m = mat();
        let r = RegimeParams::from_beta(0.5, 0.2, 0.8, &m).unwrap();
        let h = 0.05;
        let cfg = RecoveryConfig::new(&r, h, f64::INFINITY).unwrap();
        let geom = RecoveryGeometry::particle_collar(ParticleShape::unit_sphere());
        let grid = Grid::new([-1.8; 3], [1.8; 3], h, [false; 3]).unwrap();
        let rec = Recovery::new(&geom, &grid, cfg.clone(), &r, &m).unwrap();
        assert!((rec.gap_length - 2.0 * PI).abs() < 0.05, "{}", rec.gap_length);
        // Anchoring at the surface, far field beyond the collar.
        let p = [0.6, 0.0, 0.8];
        let (q, c) = rec.sample(scale(p, 1.0 + 1e-9));
        assert!(!c);
        assert!((q - m.vacuum(p)).norm() < 1e-6);
        assert_eq!(rec.sample([0.0, 0.0, 1.0 + cfg.width() + 0.01]).0, r.q_inf);
        // The lower cap rotates towards −e3, the same tensor at the far end.
        let low = rec.sample([0.0, 0.6, -0.8 - 0.01]).0;
        assert!((low - m.vacuum([0.0, 0.6, -0.8])).norm() < 0.2);
        let e = recovery_energy(&rec, &grid, &Sequential, |_| 1.0).unwrap();
        assert!(e.total.is_finite() && e.total > 0.0);
        assert!(norm(p) > 0.0);
    }

    #[test]
    fn strip_between_two_lines() {
        let m = mat();
        let eta = 0.15;
        let r = RegimeParams::from_beta(0.5, eta, 0.7, &m).unwrap();
        let h = 0.05;
        let model = model_for([-1.2, -0.5, -0.6], [0.4, 0.5, 0.6], h, [true, true, false], r);
        let cfg = RecoveryConfig::new(&r, h, f64::INFINITY).unwrap();
        let z0 = 0.013;
        let mut geom = RecoveryGeometry::straight_line([0.0, 0.0, z0], 1.0, 0.8, 40);
        let far = Polyline { points: geom.s[0].points.iter().map(|p| [-0.8, p[1], p[2]]).collect(), closed: false };
        geom.s.push(far);
        let field = build_recovery_field(&geom, &model, &cfg, &Sequential).unwrap();
        let s = extract_s(&model, &field, &sample_y(1e-3, 3), &Sequential).unwrap();
        assert_eq!(s.lines.len(), 2);
        for l in &s.lines {
            assert!((l.length() - 1.0).abs() < 2.0 * h, "{}", l.length());
            for p in &l.points {
                let d = p[0].hypot(p[2] - z0).min((p[0] + 0.8).hypot(p[2] - z0));
                assert!(d < 2.0 * h, "{p:?}");
            }
        }
    }

    #[test]
    fn tensor_interpolation_pays_bulk_energy() {
        let m = mat();
        let eta = 0.2;
        let r = RegimeParams::from_beta(1.0, eta, 0.7, &m).unwrap();
        let h = eta / 8.0;
        let grid = Grid::new([0.0, 0.0, -1.0], [0.25, 0.25, 1.0], h, [true, true, false]).unwrap();
        let geom = RecoveryGeometry::plate(0.0, [0.0, 0.0], [0.25, 0.25], 4);
        let energy = |interp| {
            let cfg = RecoveryConfig::new(&r, h, f64::INFINITY).unwrap().with_interp(interp);
            let rec = Recovery::new(&geom, &grid, cfg, &r, &m).unwrap();
            recovery_energy(&rec, &grid, &Sequential, |_| 1.0).unwrap()
        };
        let (phase, tensor) = (energy(CollarInterp::Phase), energy(CollarInterp::Tensor));
        assert!(phase.f < 1e-3 * phase.total, "{phase:?}");
        assert!(tensor.f > 2.0 * phase.total, "{tensor:?}");
    }

    #[test]
    fn line_against_particle_is_a_conflict() {
        let m = mat();
        let r = RegimeParams::from_beta(0.5, 0.1, 0.7, &m).unwrap();
        let h = 0.05;
        let shape = ParticleShape::unit_sphere();
        let grid = Grid::new([-2.0; 3], [2.0; 3], h, [false; 3]).unwrap();
        let model = Model { domain: Domain::build(Some(shape.clone()), grid, 1.0).unwrap(), regime: r, material: m };
        let cfg = RecoveryConfig::new(&r, h, exterior_reach(Some(&shape))).unwrap();
        let mut geom = RecoveryGeometry::particle_collar(shape);
        geom.s.push(Polyline::circle([0.0, 0.0, 0.92], 0.5, 64));
        match build_recovery_field(&geom, &model, &cfg, &Sequential) {
            Err(Error::Construction(msg)) => assert!(msg.contains("voxel")),
            other => panic!("{other:?}"),
        }
    }

    proptest::proptest! {
        #[test]
        fn samples_stay_in_the_sup_ball(x in -0.8f64..0.8, y in -0.8f64..0.8, z in -0.5f64..0.5) {
            let m = mat();
            let r = RegimeParams::from_beta(0.4, 0.1, 0.7, &m).unwrap();
            let grid = Grid::new([-0.8, -0.8, -0.5], [0.8, 0.8, 0.5], 0.04, [false; 3]).unwrap();
            let cfg = RecoveryConfig::new(&r, 0.04, f64::INFINITY).unwrap();
            let geom = RecoveryGeometry::disk([0.0; 3], 0.5, 48);
            let rec = Recovery::new(&geom, &grid, cfg, &r, &m).unwrap();
            let (q, _) = rec.sample([x, y, z]);
            proptest::prop_assert!(q.norm() <= rec.sup_bound() * (1.0 + 1e-9));
        }
    }
}
