//! Extraction of the defect line `S`, the defect surface `T`, the region `G`
//! of `T` lying on the particle and the region `F`, plus diagnostics.
//!
//! Both extractions work on `Q − Y` for a small generic `Y`.
//!
//! * `S`: a grid plaquette is pierced when the leading eigenvector, carried
//!   around its four edges by sign matching, comes back flipped. Each edge
//!   gets one sign, so every cube has an even number of pierced faces; cubes
//!   with two are joined directly, cubes with more are subdivided once.
//! * `T`: marching tetrahedra on `n₃` of the leading eigenvector, lifted to a
//!   coherent sign inside each cube. The zero set does not depend on the lift.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grid::{Grid, NormalExtension, SurfaceMesh};
use crate::linalg::{add, axpy, cross, dist, dot, point_segment, scale, sub, Vec3};
use crate::mesh::{chain_edges, directed_hausdorff, total_length, IsoBuilder, Polyline, TriMesh, KUHN_TETS};
use crate::potentials::MaterialParams;
use crate::relax::{weighted_energy, Model, QField};
use crate::rng;
use crate::tensor::{decompose, QTensor};

/// A fixed perturbation `Y` with `‖Y‖ ≤ α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbY {
    pub y: QTensor,
    pub alpha: f64,
    pub seed: u64,
}

/// Uniform sample of the `α`-ball of `Sym₀`, deterministic in `seed`.
pub fn sample_y(alpha: f64, seed: u64) -> PerturbY {
    if alpha <= 0.0 {
        return PerturbY { y: QTensor::ZERO, alpha: 0.0, seed };
    }
    let mut y = rng::ball_sym0(&mut rng::seeded(seed), alpha);
    let n = y.norm();
    if n > alpha {
        y = y * (alpha / n);
    }
    PerturbY { y, alpha, seed }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Cubes need `s > s_min` at every corner to carry `T`.
    pub s_min: f64,
    /// Cubes need `λ1 − λ2 > gap_min` at every corner to carry `T`.
    pub gap_min: f64,
    /// Smallest eigenvector alignment along a cube edge.
    pub dot_min: f64,
    /// Triangles of `T` closer than this to the particle count as lying on it.
    pub g_band: f64,
    /// Largest tolerated fraction of cubes dropped for orientation failures.
    pub max_excluded: f64,
}

impl Thresholds {
    pub fn new(m: &MaterialParams, eta: f64) -> Self {
        Thresholds { s_min: 0.2 * m.s_star, gap_min: 0.1 * m.s_star, dot_min: 0.1, g_band: 2.0 * eta, max_excluded: 0.01 }
    }
}

/// Default perturbation size `10⁻³ s_*`.
pub fn default_alpha(m: &MaterialParams) -> f64 {
    1e-3 * m.s_star
}

/// Corner `c` of the cube with base voxel `base` (bit 0: x, bit 1: y, bit 2: z).
fn cube_corner(g: &Grid, base: [usize; 3], c: usize) -> Option<[usize; 3]> {
    let mut p = base;
    for a in 0..3 {
        if c >> a & 1 == 1 {
            p = g.neighbor(p, a, true)?;
        }
    }
    Some(p)
}

fn offset(base: Vec3, h: f64, bits: [usize; 3]) -> Vec3 {
    [base[0] + bits[0] as f64 * h, base[1] + bits[1] as f64 * h, base[2] + bits[2] as f64 * h]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SExtraction {
    pub lines: Vec<Polyline>,
    pub length: f64,
    pub pierced: usize,
    /// Cubes with four or six pierced faces (resolved by subdivision).
    pub ambiguous_cells: usize,
}

fn leading(q: &QTensor) -> Vec3 {
    q.spectral().vectors[0]
}

fn edge_sign(a: Vec3, b: Vec3) -> bool {
    dot(a, b) >= 0.0
}

/// Pairs the pierced faces of one cube through a 2×2×2 subdivision with
/// trilinear interpolation of `Q − Y`. Faces: `2a` is `−e_a`, `2a+1` is `+e_a`.
fn resolve_cell(corners: &[QTensor; 8], pierced: [bool; 6], cell: [usize; 3]) -> Result<Vec<(usize, usize)>> {
    let ambiguous = || Error::AmbiguousCell { cell };
    let lerp = |p: [usize; 3]| -> QTensor {
        let mut q = QTensor::ZERO;
        for (c, qc) in corners.iter().enumerate() {
            let mut w = 1.0;
            for a in 0..3 {
                let t = p[a] as f64 / 2.0;
                w *= if c >> a & 1 == 1 { t } else { 1.0 - t };
            }
            q += *qc * w;
        }
        q
    };
    let pid = |p: [usize; 3]| p[0] + 3 * (p[1] + 3 * p[2]);
    let mut ev = [[0.0; 3]; 27];
    for z in 0..3 {
        for y in 0..3 {
            for x in 0..3 {
                ev[pid([x, y, z])] = leading(&lerp([x, y, z]));
            }
        }
    }
    let sign = |p: [usize; 3], a: usize| {
        let mut q = p;
        q[a] += 1;
        edge_sign(ev[pid(p)], ev[pid(q)])
    };
    // Graph on 8 subcells plus 6 face terminals (nodes 8..14).
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); 14];
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for a in 0..3 {
        let (u, v) = ((a + 1) % 3, (a + 2) % 3);
        for l in 0..3 {
            for su in 0..2 {
                for sv in 0..2 {
                    let mut p = [0; 3];
                    p[a] = l;
                    p[u] = su;
                    p[v] = sv;
                    let mut pu = p;
                    pu[u] += 1;
                    let mut pv = p;
                    pv[v] += 1;
                    let odd = sign(p, u) ^ sign(pu, v) ^ sign(pv, u) ^ sign(p, v);
                    // Four signs multiply to −1 when an odd number of them are negative.
                    if !odd {
                        continue;
                    }
                    let sub_cell = |la: usize| {
                        let mut s = [0; 3];
                        s[a] = la;
                        s[u] = su;
                        s[v] = sv;
                        s[0] + 2 * s[1] + 4 * s[2]
                    };
                    let (x, y) = match l {
                        0 => (8 + 2 * a, sub_cell(0)),
                        2 => (sub_cell(1), 8 + 2 * a + 1),
                        _ => (sub_cell(0), sub_cell(1)),
                    };
                    let e = edges.len();
                    edges.push((x, y));
                    adj[x].push(e);
                    adj[y].push(e);
                }
            }
        }
    }
    if (0..8).any(|c| adj[c].len() > 2) {
        return Err(ambiguous());
    }
    let mut used = vec![false; edges.len()];
    let mut pairs = Vec::new();
    for start in 8..14 {
        for &e0 in &adj[start].clone() {
            if used[e0] {
                continue;
            }
            used[e0] = true;
            let mut node = if edges[e0].0 == start { edges[e0].1 } else { edges[e0].0 };
            while node < 8 {
                let Some(&e) = adj[node].iter().find(|&&e| !used[e]) else {
                    return Err(ambiguous());
                };
                used[e] = true;
                node = if edges[e].0 == node { edges[e].1 } else { edges[e].0 };
            }
            if node != start {
                pairs.push((start - 8, node - 8));
            }
        }
    }
    let mut count = [0usize; 6];
    for &(a, b) in &pairs {
        count[a] += 1;
        count[b] += 1;
    }
    if (0..6).any(|f| count[f] != pierced[f] as usize) {
        return Err(ambiguous());
    }
    Ok(pairs)
}

/// Moves every point of a chain next to its predecessor (minimum image), so
/// lines crossing a periodic face keep their true length. A closed chain that
/// winds around the box is returned open with its first point repeated.
fn unwrap_polyline(g: &Grid, mut p: Polyline) -> Polyline {
    for i in 1..p.points.len() {
        let prev = p.points[i - 1];
        p.points[i] = add(prev, g.min_image(prev, p.points[i]));
    }
    if p.closed && p.points.len() > 1 {
        let last = *p.points.last().unwrap();
        let first = p.points[0];
        let back = add(last, g.min_image(last, first));
        if dist(back, first) > 1e-9 * g.h {
            p.closed = false;
            p.points.push(back);
        }
    }
    p
}

/// Defect lines of `Q − Y` by plaquette winding.
pub fn extract_s<E: Exec>(model: &Model, field: &QField, y: &PerturbY, exec: &E) -> Result<SExtraction> {
    let g = *model.grid();
    let d = &model.domain;
    let n = g.len();
    let ev: Vec<Option<Vec3>> = exec.map(n, |i| d.active(i).then(|| leading(&(field.q[i] - y.y))));
    // Plaquette (axis a, base voxel c) spans the other two axes.
    let plaquette = |a: usize, c: [usize; 3]| -> Option<[[usize; 3]; 4]> {
        let (u, v) = ((a + 1) % 3, (a + 2) % 3);
        let cu = g.neighbor(c, u, true)?;
        let cuv = g.neighbor(cu, v, true)?;
        let cv = g.neighbor(c, v, true)?;
        Some([c, cu, cuv, cv])
    };
    let pierced: Vec<bool> = exec.map(3 * n, |pid| {
        let (a, idx) = (pid / n, pid % n);
        let Some(corners) = plaquette(a, g.coords(idx)) else { return false };
        let e: Option<Vec<Vec3>> = corners.iter().map(|c| ev[g.index(c[0], c[1], c[2])]).collect();
        let Some(e) = e else { return false };
        let flips = (0..4).filter(|&k| !edge_sign(e[k], e[(k + 1) % 4])).count();
        flips % 2 == 1
    });
    // Face points: minimum of the eigenvalue gap over a 5×5 bilinear sample.
    let mut point_of: BTreeMap<usize, u32> = BTreeMap::new();
    let mut points: Vec<Vec3> = Vec::new();
    for pid in 0..3 * n {
        if !pierced[pid] {
            continue;
        }
        let (a, idx) = (pid / n, pid % n);
        let c = g.coords(idx);
        let corners = plaquette(a, c).unwrap();
        let qs = corners.map(|cc| field.q[g.index(cc[0], cc[1], cc[2])] - y.y);
        let (u, v) = ((a + 1) % 3, (a + 2) % 3);
        let base = g.center(c[0], c[1], c[2]);
        let mut best = (f64::INFINITY, base);
        for su in 0..5 {
            for sv in 0..5 {
                let (s, t) = (su as f64 / 4.0, sv as f64 / 4.0);
                let q = qs[0] * ((1.0 - s) * (1.0 - t)) + qs[1] * (s * (1.0 - t)) + qs[2] * (s * t) + qs[3] * ((1.0 - s) * t);
                let vals = q.spectral().values;
                let gap = vals[0] - vals[1];
                let mut x = base;
                x[u] += s * g.h;
                x[v] += t * g.h;
                if gap < best.0 {
                    best = (gap, x);
                }
            }
        }
        point_of.insert(pid, points.len() as u32);
        points.push(best.1);
    }
    // Cells: cubes whose eight corners are all active.
    let cell_pairs = exec.map(g.dims[2], |k| -> Result<(Vec<[u32; 2]>, usize)> {
        let mut out = Vec::new();
        let mut ambiguous = 0;
        for j in 0..g.dims[1] {
            for i in 0..g.dims[0] {
                let base = [i, j, k];
                let corners: Option<Vec<[usize; 3]>> = (0..8).map(|c| cube_corner(&g, base, c)).collect();
                let Some(corners) = corners else { continue };
                if corners.iter().any(|c| ev[g.index(c[0], c[1], c[2])].is_none()) {
                    continue;
                }
                let mut faces = [usize::MAX; 6];
                let mut flags = [false; 6];
                for a in 0..3 {
                    let lo = a * n + g.index(i, j, k);
                    let up = corners[1 << a];
                    let hi = a * n + g.index(up[0], up[1], up[2]);
                    faces[2 * a] = lo;
                    faces[2 * a + 1] = hi;
                    flags[2 * a] = pierced[lo];
                    flags[2 * a + 1] = pierced[hi];
                }
                let count = flags.iter().filter(|&&f| f).count();
                let pairs = match count {
                    0 => continue,
                    2 => {
                        let f: Vec<usize> = (0..6).filter(|&f| flags[f]).collect();
                        vec![(f[0], f[1])]
                    }
                    _ => {
                        ambiguous += 1;
                        let qs: [QTensor; 8] = core::array::from_fn(|c| field.q[g.index(corners[c][0], corners[c][1], corners[c][2])] - y.y);
                        resolve_cell(&qs, flags, base)?
                    }
                };
                for (fa, fb) in pairs {
                    out.push([point_of[&faces[fa]], point_of[&faces[fb]]]);
                }
            }
        }
        Ok((out, ambiguous))
    });
    let mut edges = Vec::new();
    let mut ambiguous_cells = 0;
    for r in cell_pairs {
        let (e, a) = r?;
        edges.extend(e);
        ambiguous_cells += a;
    }
    let lines: Vec<Polyline> = chain_edges(&points, &edges).into_iter().map(|p| unwrap_polyline(&g, p)).collect();
    let length = total_length(&lines);
    Ok(SExtraction { lines, length, pierced: points.len(), ambiguous_cells })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TExtraction {
    /// Every triangle of the level set.
    pub full: TriMesh,
    /// Source cube index of every triangle of `full`.
    pub cube_of: Vec<u64>,
    /// Triangles farther than `g_band` from the particle: `T ∩ Ω`.
    pub omega: TriMesh,
    pub omega_area: f64,
    /// Triangles within `g_band` of the particle.
    pub collar: TriMesh,
    pub considered_cubes: usize,
    pub excluded_cubes: usize,
}

/// Level set `n₃ = 0` of the leading eigenvector of `Q − Y`.
///
/// A cube contributes when its eight corners are active and satisfy the
/// `s_min`/`gap_min` thresholds. The lift starts from `v` at corner 0 and
/// follows a spanning tree of the cube edges; a cube with any edge alignment
/// below `dot_min` is excluded and counted.
pub fn extract_t<E: Exec>(model: &Model, field: &QField, y: &PerturbY, v: &NormalExtension, th: &Thresholds, exec: &E) -> Result<TExtraction> {
    let g = *model.grid();
    let d = &model.domain;
    let n = g.len();
    let info: Vec<Option<(Vec3, bool)>> = exec.map(n, |i| {
        if !d.active(i) {
            return None;
        }
        let q = field.q[i] - y.y;
        let dec = decompose(&q);
        let sp = q.spectral();
        let ok = dec.params.s > th.s_min && sp.values[0] - sp.values[1] > th.gap_min;
        Some((sp.vectors[0], ok))
    });
    const PARENT: [usize; 8] = [0, 0, 0, 1, 0, 1, 2, 3];
    const EDGES: [(usize, usize); 12] = [(0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3), (4, 6), (5, 7), (0, 4), (1, 5), (2, 6), (3, 7)];
    type CubeOut = Vec<([usize; 3], [f64; 8])>;
    let slabs = exec.map(g.dims[2], |k| -> (CubeOut, usize, usize) {
        let mut out = Vec::new();
        let (mut considered, mut excluded) = (0, 0);
        for j in 0..g.dims[1] {
            for i in 0..g.dims[0] {
                let base = [i, j, k];
                let corners: Option<Vec<usize>> = (0..8).map(|c| cube_corner(&g, base, c).map(|p| g.index(p[0], p[1], p[2]))).collect();
                let Some(corners) = corners else { continue };
                let data: Option<Vec<(Vec3, bool)>> = corners.iter().map(|&c| info[c]).collect();
                let Some(data) = data else { continue };
                if data.iter().any(|x| !x.1) {
                    continue;
                }
                considered += 1;
                let mut lift = [[0.0; 3]; 8];
                lift[0] = if dot(data[0].0, v.v[corners[0]]) < 0.0 { scale(data[0].0, -1.0) } else { data[0].0 };
                for c in 1..8 {
                    let e = data[c].0;
                    lift[c] = if dot(e, lift[PARENT[c]]) < 0.0 { scale(e, -1.0) } else { e };
                }
                if EDGES.iter().any(|&(a, b)| dot(lift[a], lift[b]) < th.dot_min) {
                    excluded += 1;
                    continue;
                }
                let vals = lift.map(|e| e[2]);
                if vals.iter().all(|&x| x >= 0.0) || vals.iter().all(|&x| x < 0.0) {
                    continue;
                }
                out.push((base, vals));
            }
        }
        (out, considered, excluded)
    });
    let ext = [g.dims[0] + 1, g.dims[1] + 1, g.dims[2] + 1];
    let mut b = IsoBuilder::new();
    let (mut considered, mut excluded) = (0, 0);
    for (cubes, c, e) in slabs {
        considered += c;
        excluded += e;
        for (base, vals) in cubes {
            let origin = g.center(base[0], base[1], base[2]);
            let tag = g.index(base[0], base[1], base[2]) as u64;
            let id = |c: usize| -> u64 {
                let (x, y, z) = (base[0] + (c & 1), base[1] + (c >> 1 & 1), base[2] + (c >> 2 & 1));
                (x + ext[0] * (y + ext[1] * z)) as u64
            };
            let pos = |c: usize| offset(origin, g.h, [c & 1, c >> 1 & 1, c >> 2 & 1]);
            for tet in KUHN_TETS {
                b.add_tet(tet.map(id), tet.map(|c| vals[c]), tet.map(pos), tag);
            }
        }
    }
    if considered > 0 && excluded as f64 > th.max_excluded * considered as f64 {
        return Err(Error::Resolution(format!(
            "{excluded} of {considered} cubes lost eigenvector orientation; refine the grid near the cone"
        )));
    }
    let (full, cube_of) = b.finish();
    let mut omega = TriMesh::default();
    let mut collar = TriMesh::default();
    for t in 0..full.triangles.len() {
        let c = full.centroid(t);
        let near = d.shape.as_ref().is_some_and(|s| s.phi(c) <= th.g_band);
        let target = if near { &mut collar } else { &mut omega };
        let base = target.vertices.len() as u32;
        target.vertices.extend(full.corners(t));
        target.triangles.push([base, base + 1, base + 2]);
    }
    let omega_area = omega.area();
    Ok(TExtraction { full, cube_of, omega, omega_area, collar, considered_cubes: considered, excluded_cubes: excluded })
}

/// Möller–Trumbore; returns the ray parameter of the hit.
pub(crate) fn ray_triangle(o: Vec3, dir: Vec3, tri: [Vec3; 3]) -> Option<f64> {
    let e1 = sub(tri[1], tri[0]);
    let e2 = sub(tri[2], tri[0]);
    let p = cross(dir, e2);
    let det = dot(e1, p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = sub(o, tri[0]);
    let u = dot(s, p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = cross(s, e1);
    let v = dot(dir, q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(dot(e2, q) * inv)
}

/// `G`: surface vertices whose normal ray of length `g_band` crosses `T` an
/// odd number of times (multiplicity reduced mod 2).
pub fn region_g(t: &TExtraction, grid: &Grid, surface: &SurfaceMesh, g_band: f64) -> Vec<bool> {
    let mut by_cube: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (tri, &cube) in t.cube_of.iter().enumerate() {
        by_cube.entry(cube).or_default().push(tri);
    }
    let cube_at = |x: Vec3| -> Option<u64> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = ((x[a] - grid.lo[a]) / grid.h - 0.5).floor();
            if f < 0.0 || f >= grid.dims[a] as f64 {
                return None;
            }
            c[a] = f as usize;
        }
        Some(grid.index(c[0], c[1], c[2]) as u64)
    };
    let steps = ((4.0 * g_band / grid.h).ceil() as usize).max(1);
    surface
        .mesh
        .vertices
        .iter()
        .zip(&surface.normals)
        .map(|(&p, &nu)| {
            let mut cand: Vec<usize> = Vec::new();
            for s in 0..=steps {
                let x = axpy(p, g_band * s as f64 / steps as f64, nu);
                if let Some(c) = cube_at(x) {
                    if let Some(list) = by_cube.get(&c) {
                        cand.extend(list);
                    }
                }
            }
            cand.sort_unstable();
            cand.dedup();
            let hits = cand.iter().filter(|&&tri| matches!(ray_triangle(p, nu, t.full.corners(tri)), Some(s) if s > 0.0 && s <= g_band)).count();
            hits % 2 == 1
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionF {
    pub member: Vec<bool>,
    pub area: f64,
    pub complement_area: f64,
    pub boundary: Vec<Polyline>,
}

/// `F = {ω ∉ G : ν3 > 0} ∪ {ω ∈ G : ν3 ≤ 0}` per vertex, with areas and the
/// boundary curve.
///
/// On triangles whose vertices agree on `G` the region is `{±ν3 > 0}` for the
/// linear interpolant of `ν3`, so areas and boundary points are cut exactly
/// there; elsewhere membership is per vertex (one third of the area each,
/// boundary through edge midpoints).
pub fn region_f(surface: &SurfaceMesh, g: &[bool]) -> RegionF {
    region_signed(surface, g, 1.0)
}

/// The complement `F^c = {ω ∉ G : ν3 ≤ 0} ∪ {ω ∈ G : ν3 > 0}` computed directly.
pub fn region_f_complement(surface: &SurfaceMesh, g: &[bool]) -> RegionF {
    region_signed(surface, g, -1.0)
}

/// Fraction of a triangle where the linear interpolant of `f` is positive.
fn positive_fraction(f: [f64; 3]) -> f64 {
    let pos: Vec<usize> = (0..3).filter(|&k| f[k] > 0.0).collect();
    let lone = |k: usize| {
        let (a, b) = (f[(k + 1) % 3], f[(k + 2) % 3]);
        f[k] * f[k] / ((f[k] - a) * (f[k] - b))
    };
    match pos.len() {
        0 => 0.0,
        3 => 1.0,
        1 => lone(pos[0]),
        _ => {
            let neg = (0..3).find(|k| !pos.contains(k)).unwrap();
            1.0 - lone(neg)
        }
    }
}

fn region_signed(surface: &SurfaceMesh, g: &[bool], sign: f64) -> RegionF {
    // F: ψ > 0 off G, ψ ≥ 0 on G with ψ = ±ν3; the complement flips both.
    let psi: Vec<f64> = surface.normals.iter().zip(g).map(|(nu, &in_g)| sign * if in_g { -nu[2] } else { nu[2] }).collect();
    let member: Vec<bool> = psi.iter().zip(g).map(|(&p, &in_g)| if in_g == (sign > 0.0) { p >= 0.0 } else { p > 0.0 }).collect();
    let m = &surface.mesh;
    let mut area = 0.0;
    let mut keys: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    let mut pts = Vec::new();
    let mut edges = Vec::new();
    for (t, tri) in m.triangles.iter().enumerate() {
        let ta = m.triangle_area(t);
        let same_g = g[tri[0] as usize] == g[tri[1] as usize] && g[tri[1] as usize] == g[tri[2] as usize];
        if same_g {
            // Zero-level values count on the side their vertex belongs to.
            let f = tri.map(|v| {
                let p = psi[v as usize];
                if p == 0.0 { if member[v as usize] { f64::MIN_POSITIVE } else { -f64::MIN_POSITIVE } } else { p }
            });
            area += ta * positive_fraction(f);
        } else {
            area += ta / 3.0 * tri.iter().filter(|&&v| member[v as usize]).count() as f64;
        }
        let mut cut = Vec::new();
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if member[a as usize] != member[b as usize] {
                let key = (a.min(b), a.max(b));
                let id = *keys.entry(key).or_insert_with(|| {
                    let (pa, pb) = (m.vertices[key.0 as usize], m.vertices[key.1 as usize]);
                    let (fa, fb) = (psi[key.0 as usize], psi[key.1 as usize]);
                    let t = if g[key.0 as usize] == g[key.1 as usize] && fa != fb { (fa / (fa - fb)).clamp(0.0, 1.0) } else { 0.5 };
                    pts.push(axpy(pa, t, sub(pb, pa)));
                    (pts.len() - 1) as u32
                });
                cut.push(id);
            }
        }
        if cut.len() == 2 {
            edges.push([cut[0], cut[1]]);
        }
    }
    let complement_area = m.area() - area;
    RegionF { member, area, complement_area, boundary: chain_edges(&pts, &edges) }
}

/// Boundary edges of `T`, without those lying on the outermost voxel-centre
/// planes of the box (where the extraction stops or a periodic seam cuts it).
pub fn t_boundary(t: &TriMesh, grid: &Grid) -> Vec<Polyline> {
    let edges: Vec<[u32; 2]> = t
        .boundary_edges()
        .into_iter()
        .filter(|e| {
            let (a, b) = (t.vertices[e[0] as usize], t.vertices[e[1] as usize]);
            !(0..3).any(|ax| on_plane(grid, a[ax], ax) && on_plane(grid, b[ax], ax))
        })
        .collect();
    chain_edges(&t.vertices, &edges)
}

/// `x` lies on the first or last voxel-centre plane of axis `a` (or on the
/// periodic image of the first one).
fn on_plane(grid: &Grid, x: f64, a: usize) -> bool {
    let hi = grid.hi();
    let tol = 1e-9 * grid.h.max(1.0);
    [grid.lo[a] + 0.5 * grid.h, hi[a] - 0.5 * grid.h, hi[a] + 0.5 * grid.h].iter().any(|p| (x - p).abs() < tol)
}

fn segments(lines: &[Polyline]) -> Vec<(Vec3, Vec3)> {
    lines.iter().flat_map(|l| l.segments().collect::<Vec<_>>()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryResidual {
    /// `sup_{x ∈ ∂T} dist(x, S ∪ Γ)`.
    pub forward: f64,
    /// `sup_{x ∈ S ∪ Γ} dist(x, ∂T)`.
    pub backward: f64,
}

impl BoundaryResidual {
    pub fn max(&self) -> f64 {
        self.forward.max(self.backward)
    }
}

/// Directed Hausdorff distances between `∂T` and `S ∪ Γ`; both empty gives 0.
pub fn boundary_residual(t_boundary: &[Polyline], s: &[Polyline], gamma: &[Polyline]) -> BoundaryResidual {
    let a = segments(t_boundary);
    let mut b = segments(s);
    b.extend(segments(gamma));
    if a.is_empty() && b.is_empty() {
        return BoundaryResidual { forward: 0.0, backward: 0.0 };
    }
    BoundaryResidual { forward: directed_hausdorff(&a, &b), backward: directed_hausdorff(&b, &a) }
}

/// Distance from `x` to a set of polylines.
pub fn distance_to_lines(x: Vec3, lines: &[Polyline]) -> f64 {
    let mut best = f64::INFINITY;
    for l in lines {
        for (a, b) in l.segments() {
            best = best.min(point_segment(x, a, b).0);
        }
        if l.points.len() == 1 {
            best = best.min(dist(x, l.points[0]));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineDensity {
    /// `η E(tube) / 𝕄(S)`.
    pub density: f64,
    /// `(π/2) s_*² η |ln ξ|`.
    pub reference: f64,
    pub ratio: f64,
    /// Tubes of different components come closer than twice the radius.
    pub overlap: bool,
}

/// `η` times the energy inside `{dist(x, S) ≤ radius}` per unit length of `S`;
/// `None` for an empty `S`. Voxel terms are weighted by the tube indicator,
/// edge terms by the mean of their endpoints.
pub fn line_energy_density<E: Exec>(model: &Model, field: &QField, s: &[Polyline], radius: f64, exec: &E) -> Result<Option<LineDensity>> {
    let len = total_length(s);
    if len <= 0.0 {
        return Ok(None);
    }
    let g = *model.grid();
    let e = weighted_energy(model, field, exec, |x| {
        // Periodic boxes: measure distance to the nearest image of x.
        let mut best = distance_to_lines(x, s);
        for a in 0..3 {
            if g.periodic[a] {
                let l = g.dims[a] as f64 * g.h;
                for sh in [-l, l] {
                    let mut y = x;
                    y[a] += sh;
                    best = best.min(distance_to_lines(y, s));
                }
            }
        }
        if best <= radius { 1.0 } else { 0.0 }
    })?;
    let r = &model.regime;
    let m = &model.material;
    let density = r.eta * e.total / len;
    let reference = core::f64::consts::FRAC_PI_2 * m.s_star * m.s_star * r.eta * r.xi.ln().abs();
    let mut overlap = false;
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            let sj = segments(&s[j..=j]);
            let si = segments(&s[i..=i]);
            if !si.is_empty() && !sj.is_empty() && directed_hausdorff(&si[..1], &sj) < 2.0 * radius {
                overlap = true;
            }
        }
    }
    Ok(Some(LineDensity { density, reference, ratio: density / reference, overlap }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayReport {
    pub start: Vec3,
    pub axis: usize,
    /// `η` times the one-dimensional energy on the ray.
    pub eta_energy: f64,
    /// Length of `{|n₃(Q)| < 1 − 𝔠√δ}` on the ray.
    pub exceptional: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct N3LineReport {
    pub rays: Vec<RayReport>,
    /// Largest `C_δ` with `exceptional ≤ (K + 1) η / C_δ` on every ray.
    pub c_delta: f64,
}

/// For full grid lines through the voxels `starts` along `axis`, the length of
/// the set where `|n₃(Q)|` stays below `1 − 𝔠√δ` against the ray energy.
pub fn n3_line_diagnostic(model: &Model, field: &QField, starts: &[([usize; 3], usize)], delta: f64, frak_c: f64) -> N3LineReport {
    let g = *model.grid();
    let (r, m) = (&model.regime, &model.material);
    let cut = 1.0 - frak_c * delta.sqrt();
    let mut rays = Vec::new();
    let mut c_delta = f64::INFINITY;
    for &(start, axis) in starts {
        let mut c = start;
        c[axis] = 0;
        let mut energy = 0.0;
        let mut exceptional = 0.0;
        for k in 0..g.dims[axis] {
            c[axis] = k;
            let idx = g.index(c[0], c[1], c[2]);
            if !model.domain.active(idx) {
                continue;
            }
            let q = field.q[idx];
            energy += g.h * crate::potentials::potential_density(&q, r, m);
            if let Some(nb) = g.neighbor(c, axis, true) {
                let j = g.index(nb[0], nb[1], nb[2]);
                if model.domain.active(j) {
                    energy += 0.5 * (field.q[j] - q).norm_sq() / g.h;
                }
            }
            if leading(&q)[2].abs() < cut {
                exceptional += g.h;
            }
        }
        let eta_energy = r.eta * energy;
        if exceptional > 0.0 {
            c_delta = c_delta.min((eta_energy + 1.0) * r.eta / exceptional);
        }
        rays.push(RayReport { start: g.center(start[0], start[1], start[2]), axis, eta_energy, exceptional });
    }
    N3LineReport { rays, c_delta }
}

/// Everything extracted from one field.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectGeometry {
    pub s: Vec<Polyline>,
    pub s_length: f64,
    pub t: TExtraction,
    pub t_boundary: Vec<Polyline>,
    /// Per surface vertex membership of `G` (empty without a particle).
    pub g: Vec<bool>,
    /// `μ_{T∩𝓜}(𝓜)`.
    pub g_area: f64,
    pub ambiguous_cells: usize,
}

/// Runs both extractions and, with a surface mesh, the region `G`.
pub fn extract<E: Exec>(model: &Model, field: &QField, y: &PerturbY, v: &NormalExtension, th: &Thresholds, surface: Option<&SurfaceMesh>, exec: &E) -> Result<DefectGeometry> {
    let s = extract_s(model, field, y, exec)?;
    let t = extract_t(model, field, y, v, th, exec)?;
    let t_boundary = t_boundary(&t.full, model.grid());
    let (g, g_area) = match surface {
        Some(sm) => {
            let g = region_g(&t, model.grid(), sm, th.g_band);
            let a = g.iter().zip(&sm.areas).filter(|(x, _)| **x).map(|(_, a)| a).sum();
            (g, a)
        }
        None => (Vec::new(), 0.0),
    };
    Ok(DefectGeometry { s_length: s.length, s: s.lines, t, t_boundary, g, g_area, ambiguous_cells: s.ambiguous_cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::grid::{extend_normal, Domain, ParticleShape};
    use crate::linalg::E3;
    use crate::potentials::RegimeParams;
    use core::f64::consts::PI;

    fn model(grid: Grid, shape: Option<ParticleShape>) -> Model {
        let m = MaterialParams::default();
        Model { domain: Domain::build(shape, grid, 1.0).unwrap(), regime: RegimeParams::new(0.25, (-4.0f64).exp(), 0.7, &m).unwrap(), material: m }
    }

    /// Director `(cos(φ/2), 0, sin(φ/2))` around the vertical axis through `c`.
    fn winding(m: MaterialParams, c: Vec3) -> impl Fn(Vec3) -> QTensor + Sync + Send {
        move |x| {
            let phi = (x[1] - c[1]).atan2(x[0] - c[0]);
            m.vacuum([(0.5 * phi).cos(), 0.0, (0.5 * phi).sin()])
        }
    }

    #[test]
    fn y_sampling() {
        let a = sample_y(0.01, 4);
        assert_eq!(a, sample_y(0.01, 4));
        assert!(a.y.norm() <= 0.01);
        assert_eq!(sample_y(0.0, 4).y, QTensor::ZERO);
    }

    #[test]
    fn straight_winding_line() {
        let grid = Grid::new([-1.0, -1.0, 0.0], [1.0, 1.0, 1.0], 0.0625, [false, false, true]).unwrap();
        let md = model(grid, None);
        let f = QField { grid, q: (0..grid.len()).map(|i| winding(md.material, [0.0; 3])(grid.center_of(i))).collect() };
        for seed in [1, 2] {
            let y = sample_y(default_alpha(&md.material), seed);
            let s = extract_s(&md, &f, &y, &Sequential).unwrap();
            assert_eq!(s.lines.len(), 1, "{:?}", s.lines.len());
            assert!((s.length - 1.0).abs() <= 2.0 * grid.h, "{}", s.length);
            for p in &s.lines[0].points {
                assert!(p[0].hypot(p[1]) < grid.h);
            }
        }
        let c = QField::constant(grid, md.regime.q_inf);
        let s = extract_s(&md, &c, &sample_y(1e-3, 1), &Sequential).unwrap();
        assert!(s.lines.is_empty());
    }

    #[test]
    fn planar_t_from_tilted_director() {
        // n = (sin ψ, 0, cos ψ) with ψ = π/2 + z/w: n3 = 0 on the plane z = 0.
        let grid = Grid::new([-1.0, -1.0, -0.5], [1.0, 1.0, 0.5], 0.0625, [true, true, false]).unwrap();
        let md = model(grid, None);
        let m = md.material;
        let f = QField { grid, q: (0..grid.len()).map(|i| {
            let z = grid.center_of(i)[2] + 0.01;
            let psi = PI / 2.0 + (4.0 * z).tanh() * 1.2;
            m.vacuum([psi.sin(), 0.0, psi.cos()])
        }).collect() };
        let v = extend_normal(&md.domain).unwrap();
        let th = Thresholds::new(&m, 0.25);
        let y = sample_y(default_alpha(&m), 3);
        let t = extract_t(&md, &f, &y, &v, &th, &Sequential).unwrap();
        assert!((t.omega_area - 4.0).abs() < 0.03 * 4.0, "{}", t.omega_area);
        assert!(t_boundary(&t.full, &grid).is_empty());
        // Flipping the reference leaves the unoriented geometry unchanged.
        let neg = NormalExtension { v: v.v.iter().map(|x| scale(*x, -1.0)).collect(), lipschitz: v.lipschitz };
        let t2 = extract_t(&md, &f, &y, &neg, &th, &Sequential).unwrap();
        assert_eq!(t.full.vertices, t2.full.vertices);
        let c = QField::constant(grid, md.regime.q_inf);
        assert!(extract_t(&md, &c, &y, &v, &th, &Sequential).unwrap().full.is_empty());
    }

    fn pierced_faces(corners: &[QTensor; 8]) -> [bool; 6] {
        let ev = corners.map(|q| leading(&q));
        let mut out = [false; 6];
        for a in 0..3 {
            let (u, v) = ((a + 1) % 3, (a + 2) % 3);
            for side in 0..2 {
                let b = side << a;
                let cyc = [b, b | 1 << u, b | 1 << u | 1 << v, b | 1 << v];
                let flips = (0..4).filter(|&k| !edge_sign(ev[cyc[k]], ev[cyc[(k + 1) % 4]])).count();
                out[2 * a + side] = flips % 2 == 1;
            }
        }
        out
    }

    #[test]
    fn subdivision_pairs_faces() {
        let m = MaterialParams::default();
        let corner = |c: usize| [(c & 1) as f64, (c >> 1 & 1) as f64, (c >> 2 & 1) as f64];
        // One vertical line through the cube: faces −z and +z.
        let w = winding(m, [0.5, 0.4, 0.0]);
        let qs: [QTensor; 8] = core::array::from_fn(|c| w(corner(c)));
        let p = pierced_faces(&qs);
        assert_eq!(p, [false, false, false, false, true, true]);
        assert_eq!(resolve_cell(&qs, p, [0; 3]).unwrap(), vec![(4, 5)]);
        // Two parallel lines: no net winding on the coarse faces.
        let qs: [QTensor; 8] = core::array::from_fn(|c| {
            let x = corner(c);
            let a = 0.5 * ((x[1] - 0.5).atan2(x[0] - 0.3) + (x[1] - 0.5).atan2(x[0] - 0.7));
            m.vacuum([a.cos(), 0.0, a.sin()])
        });
        let p = pierced_faces(&qs);
        assert!(!p[4] && !p[5]);
        assert!(resolve_cell(&qs, p, [0; 3]).unwrap().is_empty());
    }

    #[test]
    fn region_f_cases() {
        let s = SurfaceMesh::from_shape(&ParticleShape::unit_sphere(), 0.05).unwrap();
        let none = vec![false; s.len()];
        let all = vec![true; s.len()];
        let f = region_f(&s, &none);
        assert!((f.area - 2.0 * PI).abs() < 0.01 * 2.0 * PI);
        let f_all = region_f(&s, &all);
        assert!((f_all.area - 2.0 * PI).abs() < 0.02 * 2.0 * PI);
        for i in 0..s.len() {
            assert_eq!(f_all.member[i], s.normals[i][2] <= 0.0);
        }
        let mut r = rng::seeded(3);
        use rand::Rng;
        let g: Vec<bool> = (0..s.len()).map(|_| r.gen_bool(0.3)).collect();
        let a = region_f(&s, &g);
        let b = region_f_complement(&s, &g);
        for i in 0..s.len() {
            assert_ne!(a.member[i], b.member[i]);
        }
        assert!((a.area + b.area - s.mesh.area()).abs() < 1e-9);
    }

    #[test]
    fn residual_conventions() {
        assert_eq!(boundary_residual(&[], &[], &[]).max(), 0.0);
        let circle = |r: f64, z: f64| Polyline { points: (0..64).map(|k| { let a = 2.0 * PI * k as f64 / 64.0; [r * a.cos(), r * a.sin(), z] }).collect(), closed: true };
        let res = boundary_residual(&[circle(1.0, 0.0)], &[circle(1.01, 0.0)], &[]);
        assert!(res.max() < 0.011);
    }

    #[test]
    fn line_density_of_constant_is_zero() {
        let grid = Grid::new([-0.5; 3], [0.5; 3], 0.125, [true; 3]).unwrap();
        let md = model(grid, None);
        let f = QField::constant(grid, md.regime.q_inf);
        let line = Polyline { points: vec![[0.0, 0.0, -0.5], [0.0, 0.0, 0.5]], closed: false };
        let d = line_energy_density(&md, &f, &[line], 0.25, &Sequential).unwrap().unwrap();
        assert!(d.density.abs() < 1e-9);
        assert!(line_energy_density(&md, &f, &[], 0.25, &Sequential).unwrap().is_none());
    }

    #[test]
    fn n3_diagnostic_far_field() {
        let grid = Grid::new([-0.5; 3], [0.5; 3], 0.125, [true; 3]).unwrap();
        let md = model(grid, None);
        let f = QField::constant(grid, md.material.vacuum(E3));
        let rep = n3_line_diagnostic(&md, &f, &[([0, 0, 0], 2)], 0.01, 1.0);
        assert_eq!(rep.rays[0].exceptional, 0.0);
    }

    #[test]
    fn g_region_of_sheet_over_cap() {
        // Over the cap ν3 > 1/2 the director turns from ν at the surface to
        // horizontal at r = 1.1 and beyond: a sheet hugging the cap, so G is the cap.
        let grid = Grid::new([-2.0; 3], [2.0; 3], 0.0625, [false; 3]).unwrap();
        let shape = ParticleShape::unit_sphere();
        let md = model(grid, Some(shape.clone()));
        let m = md.material;
        let f = QField::from_fn(&md, |x| {
            let r = crate::linalg::norm(x);
            let theta = (x[2] / r).clamp(-1.0, 1.0).acos();
            let rho = x[0].hypot(x[1]).max(1e-12);
            let u = [x[0] / rho, x[1] / rho];
            let w = crate::linalg::smoothstep(((r - 1.0) / 0.1).clamp(0.0, 1.0));
            let cap = crate::linalg::smoothstep(((x[2] / r - 0.4) / 0.2).clamp(0.0, 1.0));
            let target = PI / 2.0 + 1.2 * (8.0 * (r - 1.1)).tanh();
            let psi = theta + cap * w * (target - theta);
            m.vacuum([psi.sin() * u[0], psi.sin() * u[1], psi.cos()])
        }, &Sequential);
        let v = extend_normal(&md.domain).unwrap();
        let mut th = Thresholds::new(&m, 0.1);
        th.max_excluded = 1.0;
        let t = extract_t(&md, &f, &sample_y(1e-3, 1), &v, &th, &Sequential).unwrap();
        let surface = SurfaceMesh::from_shape(&shape, 0.1).unwrap();
        let g = region_g(&t, &grid, &surface, 0.2);
        let mut wrong = 0.0;
        let mut checked = 0.0;
        for i in 0..surface.len() {
            let nz = surface.normals[i][2];
            if (nz - 0.5).abs() < 0.15 || nz > 0.95 {
                continue;
            }
            checked += surface.areas[i];
            if g[i] != (nz > 0.5) {
                wrong += surface.areas[i];
            }
        }
        assert!(wrong < 0.03 * checked, "{wrong} of {checked}");
    }
}
