//! The limit functional `E₀(T, S)` and its first-order optimality checks.
//!
//! With `σ = 2 s_* c_*` the functional reads
//!
//! ```text
//! E₀ = σ E₀(𝓜, e3) + 2σ ∫_G |cos θ| + (π/2) s_*² β 𝕄(S) + 2σ 𝕄(T ∩ Ω)
//! ```
//!
//! where `E₀(𝓜, e3) = ∫_{ν3>0} (1 − cos θ) + ∫_{ν3≤0} (1 + cos θ)` and `G` is
//! the part of the particle surface covered by `T` (mod 2). The same number is
//! `σ ∫_F (1 − cos θ) + σ ∫_{𝓜∖F} (1 + cos θ)` plus the line and sheet terms;
//! both forms are evaluated and compared.
//!
//! Surface integrals use lumped vertex areas, which integrate piecewise-linear
//! data exactly.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::defects::{distance_to_lines, ray_triangle, region_f, DefectGeometry};
use crate::error::{Error, Result};
use crate::grid::{ParticleShape, SurfaceMesh};
use crate::linalg::{cross, dist, dot, normalize, scale, sub, Vec3, E3};
use crate::mesh::{cotan_mean_curvature, total_length, Polyline, TriMesh};
use crate::potentials::MaterialParams;

/// Agreement required between the two forms of the functional.
pub const FORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct E0Breakdown {
    /// `2 s_* c_* E₀(𝓜, e3)`.
    pub term_surface_base: f64,
    /// `4 s_* c_* ∫_G |cos θ|`.
    pub term_g: f64,
    /// `(π/2) s_*² β 𝕄(S)`.
    pub term_line: f64,
    /// `4 s_* c_* 𝕄(T ∩ Ω)`.
    pub term_bulk_t: f64,
    pub total: f64,
    /// Total evaluated through the region `F`.
    pub f_form_total: f64,
}

/// `∫_𝓜 (1 − |ν3|)`, i.e. `E₀(𝓜, e3)`. Equals `2π` on the unit sphere.
pub fn e0_surface_base(surface: &SurfaceMesh) -> f64 {
    surface.normals.iter().zip(&surface.areas).map(|(nu, a)| a * (1.0 - nu[2].abs())).sum()
}

/// Assemble `E₀` from its ingredients: surface `𝓜`, the covered set `G` (one
/// flag per surface vertex), the length of `S` and the area of `T ∩ Ω`.
pub fn e0_from_parts(surface: &SurfaceMesh, g: &[bool], s_length: f64, t_area: f64, beta: f64, m: &MaterialParams) -> Result<E0Breakdown> {
    if g.len() != surface.len() {
        return Err(Error::InvalidInput(format!("G has {} flags for {} surface vertices", g.len(), surface.len())));
    }
    if !(beta > 0.0) || !(s_length >= 0.0) || !(t_area >= 0.0) {
        return Err(Error::InvalidInput(format!("need beta > 0 and nonnegative measures, got beta = {beta}, |S| = {s_length}, |T| = {t_area}")));
    }
    let sigma = 2.0 * m.s_star * m.c_star;
    let term_surface_base = sigma * e0_surface_base(surface);
    let covered: f64 = surface.normals.iter().zip(&surface.areas).zip(g).filter(|(_, &in_g)| in_g).map(|((nu, a), _)| a * nu[2].abs()).sum();
    let term_g = 2.0 * sigma * covered;
    let term_line = 0.5 * PI * m.s_star * m.s_star * beta * s_length;
    let term_bulk_t = 2.0 * sigma * t_area;
    let total = term_surface_base + term_g + term_line + term_bulk_t;

    let f = region_f(surface, g);
    let mut on_f = 0.0;
    let mut off_f = 0.0;
    for ((nu, a), &inside) in surface.normals.iter().zip(&surface.areas).zip(&f.member) {
        if inside {
            on_f += a * (1.0 - nu[2]);
        } else {
            off_f += a * (1.0 + nu[2]);
        }
    }
    let f_form_total = sigma * (on_f + off_f) + term_line + term_bulk_t;
    if (f_form_total - total).abs() > FORM_TOL * total.abs().max(1.0) {
        return Err(Error::Consistency(format!("E0 forms disagree: {total} via G, {f_form_total} via F")));
    }
    Ok(E0Breakdown { term_surface_base, term_g, term_line, term_bulk_t, total, f_form_total })
}

/// `E₀` of an extracted defect geometry.
pub fn e0_total(geom: &DefectGeometry, surface: &SurfaceMesh, beta: f64, m: &MaterialParams) -> Result<E0Breakdown> {
    e0_from_parts(surface, &geom.g, geom.s_length, geom.t.omega_area, beta, m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct YoungReport {
    /// `|ν_{∂T}·ν_{∂F⁺} − ν_𝓜·e3|` at every contact edge that was kept.
    pub residuals: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    /// Contact edges dropped for being close to `S`.
    pub excluded: usize,
}

/// Contact-angle condition along `∂T ∩ 𝓜`.
///
/// Contact edges are boundary edges of `t` with both ends within `contact_tol`
/// of the particle. `ν_{∂T}` is the conormal pointing into `T`; `ν_{∂F⁺}` is
/// the conormal of `∂F` on the surface pointing away from `F`, with `F` given
/// per surface vertex. Edges whose midpoint is within `exclude` of `S` are skipped.
pub fn young_law_residual(
    t: &TriMesh,
    shape: &ParticleShape,
    surface: &SurfaceMesh,
    f_member: &[bool],
    s: &[Polyline],
    contact_tol: f64,
    exclude: f64,
) -> Result<YoungReport> {
    if f_member.len() != surface.len() {
        return Err(Error::InvalidInput(format!("F has {} flags for {} surface vertices", f_member.len(), surface.len())));
    }
    let boundary: Vec<[u32; 2]> = t.boundary_edges();
    let mut owner = alloc::collections::BTreeMap::new();
    for (i, tri) in t.triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            owner.insert((a.min(b), a.max(b)), (i, tri[(k + 2) % 3]));
        }
    }
    let step = surface_spacing(surface);
    let nearest = |x: Vec3| -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, &p) in surface.mesh.vertices.iter().enumerate() {
            let d = dist(p, x);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    };
    let mut residuals = Vec::new();
    let mut excluded = 0;
    for [a, b] in boundary {
        let (pa, pb) = (t.vertices[a as usize], t.vertices[b as usize]);
        if shape.phi(pa).abs() > contact_tol || shape.phi(pb).abs() > contact_tol {
            continue;
        }
        let mid = scale(crate::linalg::add(pa, pb), 0.5);
        if !s.is_empty() && distance_to_lines(mid, s) < exclude {
            excluded += 1;
            continue;
        }
        let Some(&(_, opp)) = owner.get(&(a.min(b), a.max(b))) else { continue };
        let Some(tangent) = normalize(sub(pb, pa)) else { continue };
        let into = sub(t.vertices[opp as usize], pa);
        let Some(conormal_t) = normalize(sub(into, scale(tangent, dot(into, tangent)))) else { continue };
        let p = shape.closest_point(mid);
        let nu = shape.normal(p);
        let Some(mut conormal_f) = normalize(cross(nu, tangent)) else { continue };
        let probe = shape.closest_point(crate::linalg::axpy(p, 2.0 * step, conormal_f));
        if f_member[nearest(probe)] {
            conormal_f = scale(conormal_f, -1.0);
        }
        residuals.push((dot(conormal_t, conormal_f) - dot(nu, E3)).abs());
    }
    let mean = if residuals.is_empty() { 0.0 } else { residuals.iter().sum::<f64>() / residuals.len() as f64 };
    let max = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(YoungReport { residuals, mean, max, excluded })
}

fn surface_spacing(surface: &SurfaceMesh) -> f64 {
    let m = &surface.mesh;
    if m.triangles.is_empty() {
        return 0.0;
    }
    let total: f64 = m.triangles.iter().map(|tri| dist(m.vertices[tri[0] as usize], m.vertices[tri[1] as usize])).sum();
    total / m.triangles.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureReport {
    /// Area-weighted mean of `|H|` over interior vertices of `T`. The weighting
    /// keeps the sliver clusters of marching meshes from dominating.
    pub t_mean_abs_h: f64,
    pub t_median_abs_h: f64,
    pub t_max_abs_h: f64,
    /// Triangles of `T` skipped for aspect ratio.
    pub t_skipped: usize,
    /// `(8/π)(c_*/s_*)/β`.
    pub s_target: f64,
    pub s_mean: f64,
    /// Largest `|κ − target| / target` over the vertices of `S`.
    pub s_max_rel_dev: f64,
    /// Largest `|κ − mean| / mean`, the constancy of the curvature alone.
    pub s_spread: f64,
}

/// Mean curvature of the sheet and curvature of the line against their optimal values.
pub fn curvature_diagnostics(t: &TriMesh, s: &[Polyline], beta: f64, m: &MaterialParams, max_aspect: f64) -> CurvatureReport {
    let (h, t_skipped) = cotan_mean_curvature(t, max_aspect);
    let areas = t.vertex_areas();
    let (mut num, mut den) = (0.0, 0.0);
    let mut hs = Vec::new();
    for (hv, a) in h.into_iter().zip(areas) {
        if let Some(hv) = hv {
            num += a * hv.abs();
            den += a;
            hs.push(hv.abs());
        }
    }
    let t_mean_abs_h = if den > 0.0 { num / den } else { 0.0 };
    let t_max_abs_h = hs.iter().cloned().fold(0.0, f64::max);
    hs.sort_by(f64::total_cmp);
    let t_median_abs_h = if hs.is_empty() { 0.0 } else { hs[hs.len() / 2] };
    let s_target = 8.0 / PI * (m.c_star / m.s_star) / beta;
    let ks: Vec<f64> = s.iter().flat_map(|l| l.circumradius_curvatures()).collect();
    let s_mean = if ks.is_empty() { 0.0 } else { ks.iter().sum::<f64>() / ks.len() as f64 };
    let s_max_rel_dev = ks.iter().map(|k| (k - s_target).abs() / s_target).fold(0.0, f64::max);
    let s_spread = if s_mean > 0.0 { ks.iter().map(|k| (k - s_mean).abs() / s_mean).fold(0.0, f64::max) } else { 0.0 };
    CurvatureReport { t_mean_abs_h, t_median_abs_h, t_max_abs_h, t_skipped, s_target, s_mean, s_max_rel_dev, s_spread }
}

/// Rejects surfaces that are not convex: every vertex must lie below the
/// tangent plane (given by the vertex normal) of every other vertex, up to a
/// twentieth of the mean edge length.
pub fn check_convex(surface: &SurfaceMesh) -> Result<()> {
    let tol = 0.05 * surface_spacing(surface);
    let pts = &surface.mesh.vertices;
    for (i, (&p, &nu)) in pts.iter().zip(&surface.normals).enumerate() {
        let rise = pts.iter().map(|&q| dot(sub(q, p), nu)).fold(f64::NEG_INFINITY, f64::max);
        if rise > tol {
            return Err(Error::UnsupportedGeometry(format!("surface is not convex at vertex {i}: rise {rise:e}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport {
    pub original: E0Breakdown,
    pub reduced: E0Breakdown,
    /// Covered set after moving `T ∩ Ω` onto the surface.
    pub g_reduced: Vec<bool>,
    /// `S` moved onto the surface.
    pub s_projected: Vec<Polyline>,
    pub non_increasing: bool,
}

/// Move `T ∩ Ω` and `S` onto a convex particle by nearest-point projection.
///
/// For a convex body the preimage of a surface point is its outward normal
/// ray, so the projected sheet covers `ω` with the parity of the crossings of
/// that ray with `T ∩ Ω`; it is added to `G` mod 2. The projected line is
/// measured as a polyline, without mod-2 cancellation.
pub fn convex_projection_reduce(
    t_omega: &TriMesh,
    s: &[Polyline],
    g: &[bool],
    surface: &SurfaceMesh,
    shape: &ParticleShape,
    beta: f64,
    m: &MaterialParams,
) -> Result<ProjectionReport> {
    check_convex(surface)?;
    let original = e0_from_parts(surface, g, total_length(s), t_omega.area(), beta, m)?;
    let boxes: Vec<(Vec3, Vec3)> = (0..t_omega.triangles.len())
        .map(|i| {
            let c = t_omega.corners(i);
            let lo = [0, 1, 2].map(|a| c[0][a].min(c[1][a]).min(c[2][a]));
            let hi = [0, 1, 2].map(|a| c[0][a].max(c[1][a]).max(c[2][a]));
            (lo, hi)
        })
        .collect();
    let g_reduced: Vec<bool> = surface
        .mesh
        .vertices
        .iter()
        .zip(&surface.normals)
        .zip(g)
        .map(|((&p, &nu), &in_g)| {
            let hits = boxes
                .iter()
                .enumerate()
                .filter(|(_, (lo, hi))| ray_hits_box(p, nu, *lo, *hi))
                .filter(|(i, _)| matches!(ray_triangle(p, nu, t_omega.corners(*i)), Some(d) if d > 0.0))
                .count();
            in_g ^ (hits % 2 == 1)
        })
        .collect();
    let s_projected: Vec<Polyline> =
        s.iter().map(|l| Polyline { points: l.points.iter().map(|&x| shape.closest_point(x)).collect(), closed: l.closed }).collect();
    let reduced = e0_from_parts(surface, &g_reduced, total_length(&s_projected), 0.0, beta, m)?;
    let non_increasing = reduced.total <= original.total + 1e-9;
    Ok(ProjectionReport { original, reduced, g_reduced, s_projected, non_increasing })
}

fn ray_hits_box(o: Vec3, d: Vec3, lo: Vec3, hi: Vec3) -> bool {
    let mut t0: f64 = 0.0;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < 1e-300 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return false;
            }
            continue;
        }
        let (mut u, mut v) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
        if u > v {
            core::mem::swap(&mut u, &mut v);
        }
        t0 = t0.max(u);
        t1 = t1.min(v);
        if t0 > t1 + 1e-12 {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{add, norm};
    use crate::mesh::parametric;
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_sphere(h: f64) -> (ParticleShape, SurfaceMesh) {
        let shape = ParticleShape::unit_sphere();
        let s = SurfaceMesh::from_shape(&shape, h).unwrap();
        (shape, s)
    }

    fn mat() -> MaterialParams {
        MaterialParams::new(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn sphere_base_term_and_symmetries() {
        let (_, s) = unit_sphere(0.04);
        assert_relative_eq!(e0_surface_base(&s), 2.0 * PI, max_relative = 0.01);
        // Reflection z → −z leaves the functional unchanged.
        let mut flipped = s.mesh.clone();
        for v in flipped.vertices.iter_mut() {
            v[2] = -v[2];
        }
        let f = SurfaceMesh::from_mesh(flipped, |p| normalize(p).unwrap());
        assert_relative_eq!(e0_surface_base(&f), e0_surface_base(&s), max_relative = 1e-12);
        // Radius r scales it by r².
        let mut big = s.mesh.clone();
        for v in big.vertices.iter_mut() {
            *v = scale(*v, 2.5);
        }
        let b = SurfaceMesh::from_mesh(big, |p| normalize(p).unwrap());
        assert_relative_eq!(e0_surface_base(&b), 6.25 * e0_surface_base(&s), max_relative = 1e-12);
    }

    #[test]
    fn equator_ring_terms() {
        let m = mat();
        let (_, s) = unit_sphere(0.05);
        let g = vec![false; s.len()];
        let ring = Polyline::circle([0.0; 3], 1.0, 400);
        let e = e0_from_parts(&s, &g, ring.length(), 0.0, 0.5, &m).unwrap();
        assert_relative_eq!(e.term_line, 0.5 * PI * m.s_star * m.s_star * 0.5 * 2.0 * PI, max_relative = 1e-4);
        assert_eq!(e.term_g, 0.0);
        let e2 = e0_from_parts(&s, &g, ring.length(), 0.0, 1.0, &m).unwrap();
        assert_relative_eq!(e2.term_line, 2.0 * e.term_line, max_relative = 1e-12);
        assert_relative_eq!(e2.term_surface_base, e.term_surface_base, max_relative = 1e-12);
        // Additivity: two particles share nothing but the sum of their terms.
        let e_sum = e.term_surface_base * 2.0 + e.term_line;
        let mut two = s.mesh.clone();
        let mut shifted = s.mesh.clone();
        for v in shifted.vertices.iter_mut() {
            v[0] += 5.0;
        }
        two.append(&shifted);
        let ts = SurfaceMesh::from_mesh(two, |p| if p[0] > 2.5 { normalize(add(p, [-5.0, 0.0, 0.0])).unwrap() } else { normalize(p).unwrap() });
        let e3 = e0_from_parts(&ts, &vec![false; ts.len()], ring.length(), 0.0, 0.5, &m).unwrap();
        assert_relative_eq!(e3.total, e_sum, max_relative = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn forms_agree_on_random_g(seed in 0u64..1_000_000, beta in 0.05f64..5.0, len in 0.0f64..10.0, area in 0.0f64..10.0) {
            let (_, s) = unit_sphere(0.2);
            let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let g: Vec<bool> = (0..s.len()).map(|_| { x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); x >> 63 == 1 }).collect();
            let e = e0_from_parts(&s, &g, len, area, beta, &mat()).unwrap();
            prop_assert!((e.total - e.f_form_total).abs() <= 1e-9 * e.total);
            prop_assert!(e.term_g >= 0.0 && e.total >= e.term_surface_base);
        }
    }

    /// Cone of generators at angle `phi` above horizontal, leaving the unit
    /// sphere along the circle at polar angle `theta0`.
    fn cone(theta0: f64, phi: f64, len: f64) -> TriMesh {
        parametric(24, 240, true, |u, v| {
            let r = theta0.sin() + u * len * phi.cos();
            let z = theta0.cos() + u * len * phi.sin();
            let a = 2.0 * PI * v;
            [r * a.cos(), r * a.sin(), z]
        })
    }

    fn cap_f(s: &SurfaceMesh, theta0: f64) -> Vec<bool> {
        // G is the band between the contact circle and the equator; F is the polar cap.
        let g: Vec<bool> = s.theta.iter().map(|&t| t > theta0 && t < 0.5 * PI).collect();
        crate::defects::region_f(s, &g).member
    }

    #[test]
    fn young_law_on_horizontal_plane_and_tilts() {
        let (shape, s) = unit_sphere(0.05);
        let theta0 = 1.0;
        let f = cap_f(&s, theta0);
        let flat = young_law_residual(&cone(theta0, 0.0, 1.0), &shape, &s, &f, &[], 1e-9, 0.0).unwrap();
        assert!(flat.residuals.len() == 240);
        assert!(flat.max < 0.05, "{}", flat.max);
        for tilt in [10f64.to_radians(), -10f64.to_radians()] {
            let r = young_law_residual(&cone(theta0, tilt, 1.0), &shape, &s, &f, &[], 1e-9, 0.0).unwrap();
            let expect = ((theta0 + tilt).cos() - theta0.cos()).abs();
            assert!((r.mean - expect).abs() < 0.02, "{} vs {expect}", r.mean);
        }
        // Edges near S are excluded.
        let ring = Polyline::circle([0.0, 0.0, theta0.cos()], theta0.sin(), 100);
        let r = young_law_residual(&cone(theta0, 0.0, 1.0), &shape, &s, &f, &[ring], 1e-9, 0.1).unwrap();
        assert_eq!(r.residuals.len(), 0);
        assert_eq!(r.excluded, 240);
    }

    #[test]
    fn curvature_of_planes_catenoids_and_circles() {
        let m = mat();
        let plane = parametric(20, 20, false, |u, v| [u, v, 0.3]);
        let catenoid = parametric(40, 120, true, |u, v| {
            let t = -0.8 + 1.6 * u;
            let a = 2.0 * PI * v;
            [t.cosh() * a.cos(), t.cosh() * a.sin(), t]
        });
        let target_r = 1.0 / (8.0 / PI * (m.c_star / m.s_star));
        let ring = Polyline::circle([0.0; 3], target_r, 200);
        let c = curvature_diagnostics(&plane, &[ring.clone()], 1.0, &m, 50.0);
        assert!(c.t_max_abs_h < 1e-12);
        assert!(c.s_max_rel_dev < 1e-3 && c.s_spread < 1e-9);
        let c = curvature_diagnostics(&catenoid, &[], 1.0, &m, 50.0);
        assert!(c.t_mean_abs_h < 0.02, "{}", c.t_mean_abs_h);
        let sphere = unit_sphere(0.1).1.mesh;
        let c = curvature_diagnostics(&sphere, &[Polyline::circle([0.0; 3], 2.0 * target_r, 200)], 1.0, &m, 50.0);
        assert!((c.t_mean_abs_h - 1.0).abs() < 0.1, "{}", c.t_mean_abs_h);
        assert!((c.t_median_abs_h - 1.0).abs() < 0.1, "{}", c.t_median_abs_h);
        assert_relative_eq!(c.s_max_rel_dev, 0.5, max_relative = 1e-3);
    }

    #[test]
    fn projection_does_not_increase_energy() {
        let m = mat();
        let (shape, s) = unit_sphere(0.08);
        // Horizontal plate above the sphere bounded by a circle S.
        for (height, radius) in [(1.3, 0.6), (1.5, 0.9), (2.0, 0.3)] {
            let plate = parametric(12, 96, true, |u, v| {
                let r = radius * u.max(1e-9);
                let a = 2.0 * PI * v;
                [r * a.cos(), r * a.sin(), height]
            });
            let ring = Polyline::circle([0.0, 0.0, height], radius, 96);
            let g = vec![false; s.len()];
            let rep = convex_projection_reduce(&plate, &[ring], &g, &s, &shape, 0.7, &m).unwrap();
            assert!(rep.non_increasing, "{rep:?}");
            assert!(rep.reduced.total <= rep.original.total + 1e-9);
            let cap = s.mesh.vertices.iter().zip(&rep.g_reduced).filter(|(p, &in_g)| in_g && p[2] > 0.0).count();
            assert!(cap > 0);
            // The projected cap is bounded by the projected circle.
            let top = rep.s_projected[0].points[0];
            assert_relative_eq!(norm(top), 1.0, max_relative = 1e-12);
            let inside = s.mesh.vertices.iter().zip(&rep.g_reduced).all(|(p, &in_g)| !in_g || p[2] >= top[2] - 0.1);
            assert!(inside);
        }
    }

    #[test]
    fn projection_rejects_nonconvex_surfaces() {
        let m = mat();
        // Unit sphere with a dimple pushed in around the north pole.
        let (shape, s) = unit_sphere(0.1);
        let mut dented = s.mesh.clone();
        for v in dented.vertices.iter_mut() {
            if v[2] > 0.8 {
                v[2] = 1.6 - v[2];
            }
        }
        let d = SurfaceMesh::from_mesh(dented, |p| normalize(p).unwrap());
        let err = convex_projection_reduce(&TriMesh::default(), &[], &vec![false; d.len()], &d, &shape, 1.0, &m).unwrap_err();
        assert!(matches!(err, Error::UnsupportedGeometry(_)));
        assert!(check_convex(&s).is_ok());
    }
}
