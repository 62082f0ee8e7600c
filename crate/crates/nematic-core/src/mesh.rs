//! Triangle soups, marching tetrahedra and polylines.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{add, axpy, cross, dist, dot, norm, scale, sub, tri_area, Vec3};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        tri_area(a, b, c)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        scale(add(add(a, b), c), 1.0 / 3.0)
    }

    /// Unnormalized normal `(b − a) × (c − a)`.
    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        cross(sub(b, a), sub(c, a))
    }

    /// Lumped (one third of each incident triangle) vertex areas.
    pub fn vertex_areas(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let a = self.triangle_area(t) / 3.0;
            for &v in tri {
                w[v as usize] += a;
            }
        }
        w
    }

    /// Edges used by an odd number of triangles (mod-2 boundary).
    pub fn boundary_edges(&self) -> Vec<[u32; 2]> {
        let mut count: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        count.into_iter().filter(|(_, c)| c % 2 == 1).map(|((a, b), _)| [a, b]).collect()
    }

    /// Vertex-to-triangle incidence.
    pub fn vertex_triangles(&self) -> Vec<Vec<u32>> {
        let mut inc = vec![Vec::new(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                inc[v as usize].push(t as u32);
            }
        }
        inc
    }

    /// Ratio of longest edge to the height on it.
    pub fn aspect(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        let l = dist(a, b).max(dist(b, c)).max(dist(c, a));
        let area = tri_area(a, b, c);
        if area <= 0.0 {
            return f64::INFINITY;
        }
        l * l / (2.0 * area)
    }

    pub fn append(&mut self, other: &TriMesh) {
        let off = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(other.triangles.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
    }
}

/// Kuhn subdivision of the unit cube into six tetrahedra sharing the main
/// diagonal; corner bits are `x = 1, y = 2, z = 4`. Neighbouring cubes split
/// into a conforming mesh.
pub const KUHN_TETS: [[usize; 4]; 6] = [[0, 1, 3, 7], [0, 3, 2, 7], [0, 2, 6, 7], [0, 6, 4, 7], [0, 4, 5, 7], [0, 5, 1, 7]];

/// Incremental zero-level-set extraction over tetrahedra with vertex welding.
///
/// Corner ids are global (shared between neighbouring tetrahedra); a crossing
/// on the edge `(i, j)` produces one vertex keyed by the edge, and crossings
/// exactly at a corner are keyed by the corner so that no duplicate points
/// appear.
#[derive(Debug, Default)]
pub struct IsoBuilder {
    keys: BTreeMap<(u64, u64), u32>,
    pub mesh: TriMesh,
    /// Index of the source tetrahedron (caller-defined tag) for every triangle.
    pub tags: Vec<u64>,
}

impl IsoBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn crossing(&mut self, ids: [u64; 2], vals: [f64; 2], pos: [Vec3; 2]) -> u32 {
        let t = vals[0] / (vals[0] - vals[1]);
        let key = if t <= 0.0 {
            (ids[0], ids[0])
        } else if t >= 1.0 {
            (ids[1], ids[1])
        } else if ids[0] < ids[1] {
            (ids[0], ids[1])
        } else {
            (ids[1], ids[0])
        };
        if let Some(&v) = self.keys.get(&key) {
            return v;
        }
        // Interpolate from the smaller id so both neighbours compute the same point.
        let p = if key.0 == key.1 {
            if key.0 == ids[0] {
                pos[0]
            } else {
                pos[1]
            }
        } else if ids[0] < ids[1] {
            axpy(pos[0], t, sub(pos[1], pos[0]))
        } else {
            let t1 = vals[1] / (vals[1] - vals[0]);
            axpy(pos[1], t1, sub(pos[0], pos[1]))
        };
        let v = self.mesh.vertices.len() as u32;
        self.mesh.vertices.push(p);
        self.keys.insert(key, v);
        v
    }

    fn push_tri(&mut self, mut tri: [u32; 3], toward_positive: Vec3, tag: u64) {
        let [a, b, c] = tri.map(|i| self.mesh.vertices[i as usize]);
        if dot(cross(sub(b, a), sub(c, a)), toward_positive) < 0.0 {
            tri.swap(1, 2);
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return;
        }
        self.mesh.triangles.push(tri);
        self.tags.push(tag);
    }

    /// Adds the zero set of the linear interpolant of `vals` on one
    /// tetrahedron. Values `≥ 0` count as positive. Triangles are oriented with
    /// normals toward the positive side.
    pub fn add_tet(&mut self, ids: [u64; 4], vals: [f64; 4], pos: [Vec3; 4], tag: u64) {
        let pos_mask: usize = (0..4).filter(|&k| vals[k] >= 0.0).fold(0, |m, k| m | (1 << k));
        if pos_mask == 0 || pos_mask == 0b1111 {
            return;
        }
        let positive: Vec<usize> = (0..4).filter(|&k| pos_mask & (1 << k) != 0).collect();
        let negative: Vec<usize> = (0..4).filter(|&k| pos_mask & (1 << k) == 0).collect();
        let centroid = |set: &[usize]| -> Vec3 {
            let mut c = [0.0; 3];
            for &k in set {
                c = add(c, pos[k]);
            }
            scale(c, 1.0 / set.len() as f64)
        };
        let dir = sub(centroid(&positive), centroid(&negative));
        let edge = |i: usize, j: usize, this: &mut Self| this.crossing([ids[i], ids[j]], [vals[i], vals[j]], [pos[i], pos[j]]);
        match (positive.len(), negative.len()) {
            (1, 3) | (3, 1) => {
                let (lone, others) = if positive.len() == 1 { (positive[0], &negative) } else { (negative[0], &positive) };
                let a = edge(lone, others[0], self);
                let b = edge(lone, others[1], self);
                let c = edge(lone, others[2], self);
                self.push_tri([a, b, c], dir, tag);
            }
            _ => {
                let (p0, p1, n0, n1) = (positive[0], positive[1], negative[0], negative[1]);
                let a = edge(p0, n0, self);
                let b = edge(p0, n1, self);
                let c = edge(p1, n1, self);
                let d = edge(p1, n0, self);
                // Quad a-b-c-d split along its shorter diagonal.
                let [pa, pb, pc, pd] = [a, b, c, d].map(|i| self.mesh.vertices[i as usize]);
                if dist(pa, pc) <= dist(pb, pd) {
                    self.push_tri([a, b, c], dir, tag);
                    self.push_tri([a, c, d], dir, tag);
                } else {
                    self.push_tri([a, b, d], dir, tag);
                    self.push_tri([b, c, d], dir, tag);
                }
            }
        }
    }

    pub fn finish(self) -> (TriMesh, Vec<u64>) {
        (self.mesh, self.tags)
    }
}

/// Open or closed polyline.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polyline {
    pub points: Vec<Vec3>,
    pub closed: bool,
}

impl Polyline {
    pub fn segments(&self) -> impl Iterator<Item = (Vec3, Vec3)> + '_ {
        let n = self.points.len();
        let m = if self.closed && n > 2 { n } else { n.saturating_sub(1) };
        (0..m).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| dist(a, b)).sum()
    }

    /// Discrete curvature `1/R` of the circle through each interior triple
    /// (`4A / (|a−b||b−c||c−a|)`), for every vertex that has two neighbours.
    pub fn circumradius_curvatures(&self) -> Vec<f64> {
        let n = self.points.len();
        if n < 3 {
            return Vec::new();
        }
        let range: Vec<usize> = if self.closed { (0..n).collect() } else { (1..n - 1).collect() };
        range
            .into_iter()
            .map(|i| {
                let a = self.points[(i + n - 1) % n];
                let b = self.points[i];
                let c = self.points[(i + 1) % n];
                let den = dist(a, b) * dist(b, c) * dist(c, a);
                if den > 0.0 {
                    4.0 * tri_area(a, b, c) / den
                } else {
                    0.0
                }
            })
            .collect()
    }
}

impl Polyline {
    /// Horizontal circle of `n` points around `center`.
    pub fn circle(center: Vec3, radius: f64, n: usize) -> Polyline {
        let points = (0..n)
            .map(|i| {
                let t = 2.0 * core::f64::consts::PI * i as f64 / n as f64;
                [center[0] + radius * t.cos(), center[1] + radius * t.sin(), center[2]]
            })
            .collect();
        Polyline { points, closed: true }
    }
}

/// Uniform bucket grid over axis-aligned boxes. Each item is registered in
/// every cell its box (grown by `reach`) touches, so a query point sees every
/// item within `reach` in the candidate list of its own cell.
#[derive(Debug, Clone, Default)]
pub struct BoxIndex {
    cell: f64,
    map: BTreeMap<[i64; 3], Vec<u32>>,
}

impl BoxIndex {
    pub fn new(boxes: &[(Vec3, Vec3)], reach: f64, cell: f64) -> Self {
        let cell = cell.max(1e-12);
        let mut map: BTreeMap<[i64; 3], Vec<u32>> = BTreeMap::new();
        for (i, (lo, hi)) in boxes.iter().enumerate() {
            let a = lo.map(|x| ((x - reach) / cell).floor() as i64);
            let b = hi.map(|x| ((x + reach) / cell).floor() as i64);
            for k in a[2]..=b[2] {
                for j in a[1]..=b[1] {
                    for ii in a[0]..=b[0] {
                        map.entry([ii, j, k]).or_default().push(i as u32);
                    }
                }
            }
        }
        BoxIndex { cell, map }
    }

    pub fn candidates(&self, x: Vec3) -> &[u32] {
        let key = x.map(|v| (v / self.cell).floor() as i64);
        self.map.get(&key).map_or(&[], |v| v.as_slice())
    }
}

/// Bounding box of a point set.
pub fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// Triangulated image of `[0,1]²` under `f`, `nu × nv` cells. With `wrap_v`
/// the `v = 1` row is identified with `v = 0`.
pub fn parametric<F: Fn(f64, f64) -> Vec3>(nu: usize, nv: usize, wrap_v: bool, f: F) -> TriMesh {
    let cols = if wrap_v { nv } else { nv + 1 };
    let mut vertices = Vec::with_capacity((nu + 1) * cols);
    for i in 0..=nu {
        for j in 0..cols {
            vertices.push(f(i as f64 / nu as f64, j as f64 / nv as f64));
        }
    }
    let id = |i: usize, j: usize| (i * cols + j % cols) as u32;
    let mut triangles = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    TriMesh { vertices, triangles }
}

pub fn total_length(lines: &[Polyline]) -> f64 {
    lines.iter().map(Polyline::length).sum()
}

/// Chains undirected edges into maximal polylines (closed where possible).
/// Vertices of degree other than two terminate chains.
pub fn chain_edges(points: &[Vec3], edges: &[[u32; 2]]) -> Vec<Polyline> {
    let mut adj: BTreeMap<u32, Vec<(u32, usize)>> = BTreeMap::new();
    for (e, &[a, b]) in edges.iter().enumerate() {
        adj.entry(a).or_default().push((b, e));
        adj.entry(b).or_default().push((a, e));
    }
    let mut used = vec![false; edges.len()];
    let mut out = Vec::new();
    let walk = |start: u32, used: &mut Vec<bool>| -> (Vec<u32>, bool) {
        let mut path = vec![start];
        let mut cur = start;
        loop {
            let next = adj[&cur].iter().find(|(_, e)| !used[*e]).copied();
            match next {
                Some((v, e)) => {
                    used[e] = true;
                    if v == start {
                        return (path, true);
                    }
                    path.push(v);
                    cur = v;
                    if adj[&cur].len() != 2 {
                        return (path, false);
                    }
                }
                None => return (path, false),
            }
        }
    };
    // Open chains first, starting at vertices of degree ≠ 2.
    let starts: Vec<u32> = adj.iter().filter(|(_, n)| n.len() != 2).map(|(&v, _)| v).collect();
    for v in starts {
        while adj[&v].iter().any(|(_, e)| !used[*e]) {
            let (path, closed) = walk(v, &mut used);
            out.push(Polyline { points: path.iter().map(|&i| points[i as usize]).collect(), closed });
        }
    }
    for e in 0..edges.len() {
        if !used[e] {
            let (path, closed) = walk(edges[e][0], &mut used);
            out.push(Polyline { points: path.iter().map(|&i| points[i as usize]).collect(), closed });
        }
    }
    out
}

/// Cotangent-formula mean curvature `H = |Δx|/2` at every vertex not on the
/// boundary, using barycentric (one third) vertex areas. Triangles with
/// aspect ratio above `max_aspect` are skipped; their count is returned.
pub fn cotan_mean_curvature(mesh: &TriMesh, max_aspect: f64) -> (Vec<Option<f64>>, usize) {
    let nv = mesh.vertices.len();
    let mut lap = vec![[0.0; 3]; nv];
    let mut area = vec![0.0; nv];
    let mut skipped = 0;
    let mut on_boundary = vec![false; nv];
    for [a, b] in mesh.boundary_edges() {
        on_boundary[a as usize] = true;
        on_boundary[b as usize] = true;
    }
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if mesh.aspect(t) > max_aspect {
            skipped += 1;
            for &v in tri {
                on_boundary[v as usize] = true;
            }
            continue;
        }
        let ar = mesh.triangle_area(t);
        for k in 0..3 {
            let i = tri[k] as usize;
            let j = tri[(k + 1) % 3] as usize;
            let o = tri[(k + 2) % 3] as usize;
            let (pi, pj, po) = (mesh.vertices[i], mesh.vertices[j], mesh.vertices[o]);
            let u = sub(pi, po);
            let v = sub(pj, po);
            let cot = dot(u, v) / norm(cross(u, v)).max(1e-300);
            let d = sub(pj, pi);
            lap[i] = axpy(lap[i], 0.5 * cot, d);
            lap[j] = axpy(lap[j], -0.5 * cot, d);
            area[i] += ar / 3.0;
        }
    }
    let h = (0..nv)
        .map(|i| {
            if on_boundary[i] || area[i] <= 0.0 {
                None
            } else {
                Some(0.5 * norm(lap[i]) / area[i])
            }
        })
        .collect();
    (h, skipped)
}

/// Directed Hausdorff distance from the segment set `a` to the segment set `b`,
/// sampled at segment endpoints and midpoints of `a`.
pub fn directed_hausdorff(a: &[(Vec3, Vec3)], b: &[(Vec3, Vec3)]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if b.is_empty() {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for &(p, q) in a {
        for x in [p, q, scale(add(p, q), 0.5)] {
            let d = b.iter().map(|&(u, v)| crate::linalg::point_segment(x, u, v).0).fold(f64::INFINITY, f64::min);
            worst = worst.max(d);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn sample_grid<F: Fn(Vec3) -> f64>(n: usize, lo: f64, h: f64, f: F) -> TriMesh {
        let mut b = IsoBuilder::new();
        let id = |i: usize, j: usize, k: usize| (i + (n + 1) * (j + (n + 1) * k)) as u64;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let corner = |c: usize| {
                        let (di, dj, dk) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
                        let p = [lo + (i + di) as f64 * h, lo + (j + dj) as f64 * h, lo + (k + dk) as f64 * h];
                        (id(i + di, j + dj, k + dk), p)
                    };
                    for tet in KUHN_TETS {
                        let c = tet.map(corner);
                        b.add_tet(c.map(|x| x.0), c.map(|x| f(x.1)), c.map(|x| x.1), 0);
                    }
                }
            }
        }
        b.finish().0
    }

    #[test]
    fn sphere_area_and_closure() {
        let m = sample_grid(40, -1.25, 2.5 / 40.0, |p| norm(p) - 1.0);
        let area = m.area();
        assert!((area - 4.0 * core::f64::consts::PI).abs() < 0.02 * 4.0 * core::f64::consts::PI, "{area}");
        assert!(m.boundary_edges().is_empty());
        for t in 0..m.triangles.len() {
            let c = m.centroid(t);
            assert!(dot(m.face_normal(t), c) > 0.0);
        }
    }

    #[test]
    fn plane_through_grid_nodes_has_no_slivers() {
        let m = sample_grid(8, -1.0, 0.25, |p| p[2]);
        assert_abs_diff_eq!(m.area(), 4.0, epsilon = 1e-12);
        assert_eq!(m.boundary_edges().len(), 32);
        let loops = chain_edges(&m.vertices, &m.boundary_edges());
        assert_eq!(loops.len(), 1);
        assert!(loops[0].closed);
        assert_abs_diff_eq!(loops[0].length(), 8.0, epsilon = 1e-12);
        let (h, _) = cotan_mean_curvature(&m, 50.0);
        assert!(h.iter().flatten().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn circle_curvature() {
        let n = 64;
        let rho = 1.7;
        let pts = (0..n)
            .map(|i| {
                let a = i as f64 * core::f64::consts::TAU / n as f64;
                [rho * a.cos(), rho * a.sin(), 0.3]
            })
            .collect();
        let p = Polyline { points: pts, closed: true };
        for k in p.circumradius_curvatures() {
            assert_abs_diff_eq!(k, 1.0 / rho, epsilon = 1e-12);
        }
        assert!((p.length() - core::f64::consts::TAU * rho).abs() < 0.01);
    }

    #[test]
    fn chain_open_path() {
        let pts = vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let lines = chain_edges(&pts, &[[1, 2], [0, 1], [2, 3]]);
        assert_eq!(lines.len(), 1);
        assert!(!lines[0].closed);
        assert_abs_diff_eq!(lines[0].length(), 3.0);
    }
}
