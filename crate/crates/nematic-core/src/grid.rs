//! Particle geometry, voxel grids and the surface mesh of the particle.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{add, axpy, dist, dot, norm, normalize, scale, sub, Vec3, E1};
use crate::mesh::{chain_edges, IsoBuilder, Polyline, TriMesh, KUHN_TETS};
use crate::potentials::MaterialParams;
use crate::tensor::QTensor;

/// Signed distance samples on a cubic lattice centred at the origin, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetVolume {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub data: Vec<f64>,
}

impl LevelSetVolume {
    pub fn new(dims: [usize; 3], spacing: f64, data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) || !(spacing > 0.0) || data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidInput(format!(
                "level-set volume {dims:?} with spacing {spacing} has {} samples",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("level-set volume contains non-finite samples".into()));
        }
        Ok(LevelSetVolume { dims, spacing, data })
    }

    pub fn origin(&self) -> Vec3 {
        [0, 1, 2].map(|a| -0.5 * (self.dims[a] - 1) as f64 * self.spacing)
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    /// Trilinear interpolation; outside the lattice the nearest boundary
    /// sample plus the distance to the lattice is returned.
    pub fn sample(&self, x: Vec3) -> f64 {
        let o = self.origin();
        let mut idx = [0usize; 3];
        let mut fr = [0.0; 3];
        let mut outside = 0.0;
        for a in 0..3 {
            let u = (x[a] - o[a]) / self.spacing;
            let max = (self.dims[a] - 1) as f64;
            let uc = u.clamp(0.0, max);
            outside += ((u - uc) * self.spacing).powi(2);
            let i0 = (uc.floor() as usize).min(self.dims[a] - 2);
            idx[a] = i0;
            fr[a] = uc - i0 as f64;
        }
        let [i, j, k] = idx;
        let [fx, fy, fz] = fr;
        let mut v = 0.0;
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = (if dx == 1 { fx } else { 1.0 - fx }) * (if dy == 1 { fy } else { 1.0 - fy }) * (if dz == 1 { fz } else { 1.0 - fz });
            v += w * self.at(i + dx, j + dy, k + dz);
        }
        v + outside.sqrt()
    }

    pub fn extent(&self) -> (Vec3, Vec3) {
        let o = self.origin();
        (o, [0, 1, 2].map(|a| o[a] + (self.dims[a] - 1) as f64 * self.spacing))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParticleShape {
    Sphere { center: Vec3, radius: f64 },
    Ellipsoid { center: Vec3, semi_axes: Vec3 },
    /// Sampled signed distance with a user-supplied inner-ball radius.
    LevelSet { volume: LevelSetVolume, inner_radius: f64 },
}

impl ParticleShape {
    pub fn unit_sphere() -> Self {
        ParticleShape::Sphere { center: [0.0; 3], radius: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ParticleShape::Sphere { radius, .. } if !(*radius > 0.0) => {
                Err(Error::InvalidInput(format!("sphere radius must be positive, got {radius}")))
            }
            ParticleShape::Ellipsoid { semi_axes, .. } if semi_axes.iter().any(|a| !(*a > 0.0)) => {
                Err(Error::InvalidInput(format!("ellipsoid semi-axes must be positive, got {semi_axes:?}")))
            }
            ParticleShape::LevelSet { inner_radius, .. } if !(*inner_radius > 0.0) => {
                Err(Error::InvalidInput(format!("level-set inner radius must be positive, got {inner_radius}")))
            }
            _ => Ok(()),
        }
    }

    /// Signed distance, negative inside the particle.
    pub fn phi(&self, x: Vec3) -> f64 {
        match self {
            ParticleShape::Sphere { center, radius } => dist(x, *center) - radius,
            ParticleShape::Ellipsoid { center, semi_axes } => {
                let y = sub(x, *center);
                let c = ellipsoid_closest(*semi_axes, y);
                let d = dist(y, c);
                let inside: f64 = (0..3).map(|a| (y[a] / semi_axes[a]).powi(2)).sum();
                if inside < 1.0 {
                    -d
                } else {
                    d
                }
            }
            ParticleShape::LevelSet { volume, .. } => volume.sample(x),
        }
    }

    /// Nearest point on the particle surface.
    pub fn closest_point(&self, x: Vec3) -> Vec3 {
        match self {
            ParticleShape::Sphere { center, radius } => {
                let d = sub(x, *center);
                let u = normalize(d).unwrap_or(crate::linalg::E3);
                axpy(*center, *radius, u)
            }
            ParticleShape::Ellipsoid { center, semi_axes } => add(*center, ellipsoid_closest(*semi_axes, sub(x, *center))),
            ParticleShape::LevelSet { .. } => {
                let mut p = x;
                for _ in 0..8 {
                    let g = self.fd_gradient(p);
                    let g2 = dot(g, g);
                    if g2 < 1e-20 {
                        break;
                    }
                    let f = self.phi(p);
                    p = axpy(p, -f / g2, g);
                    if f.abs() < 1e-12 {
                        break;
                    }
                }
                p
            }
        }
    }

    fn fd_gradient(&self, x: Vec3) -> Vec3 {
        let e = match self {
            ParticleShape::LevelSet { volume, .. } => 0.5 * volume.spacing,
            _ => 1e-6,
        };
        [0, 1, 2].map(|a| {
            let mut p = x;
            let mut m = x;
            p[a] += e;
            m[a] -= e;
            (self.phi(p) - self.phi(m)) / (2.0 * e)
        })
    }

    /// Unit outward normal field: the normal at the nearest surface point.
    pub fn normal(&self, x: Vec3) -> Vec3 {
        match self {
            ParticleShape::Sphere { center, .. } => normalize(sub(x, *center)).unwrap_or(crate::linalg::E3),
            ParticleShape::Ellipsoid { center, semi_axes } => {
                let c = ellipsoid_closest(*semi_axes, sub(x, *center));
                let g = [0, 1, 2].map(|a| c[a] / (semi_axes[a] * semi_axes[a]));
                normalize(g).unwrap_or(crate::linalg::E3)
            }
            ParticleShape::LevelSet { .. } => normalize(self.fd_gradient(x)).unwrap_or(crate::linalg::E3),
        }
    }

    /// Radius of the interior/exterior ball condition.
    pub fn inner_radius(&self) -> f64 {
        match self {
            ParticleShape::Sphere { radius, .. } => *radius,
            ParticleShape::Ellipsoid { semi_axes, .. } => {
                let amax = semi_axes.iter().cloned().fold(0.0, f64::max);
                let amin = semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
                amin * amin / amax
            }
            ParticleShape::LevelSet { inner_radius, .. } => *inner_radius,
        }
    }

    /// Axis-aligned bounding box of the particle.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        match self {
            ParticleShape::Sphere { center, radius } => (center.map(|c| c - radius), center.map(|c| c + radius)),
            ParticleShape::Ellipsoid { center, semi_axes } => {
                ([0, 1, 2].map(|a| center[a] - semi_axes[a]), [0, 1, 2].map(|a| center[a] + semi_axes[a]))
            }
            ParticleShape::LevelSet { volume, .. } => {
                // Bounding box of the non-positive samples, padded by one spacing.
                let o = volume.origin();
                let mut lo = [f64::INFINITY; 3];
                let mut hi = [f64::NEG_INFINITY; 3];
                for k in 0..volume.dims[2] {
                    for j in 0..volume.dims[1] {
                        for i in 0..volume.dims[0] {
                            if volume.at(i, j, k) <= 0.0 {
                                let p = [i as f64, j as f64, k as f64];
                                for a in 0..3 {
                                    let x = o[a] + p[a] * volume.spacing;
                                    lo[a] = lo[a].min(x - volume.spacing);
                                    hi[a] = hi[a].max(x + volume.spacing);
                                }
                            }
                        }
                    }
                }
                (lo, hi)
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max)
    }
}

/// Nearest point on the origin-centred ellipsoid `Σ (x_a/e_a)² = 1` to `y`.
///
/// The point is `x_a = e_a² y_a / (e_a² + t)` with `t` the root of
/// `Σ (e_a y_a / (e_a² + t))² = 1` in `(−min e², ∞)`, found by bisection. When
/// `y` is inside and on the plane of the shortest axis the root may not exist
/// (medial sheet); the shortest-axis coordinate is then reconstructed from the
/// surface equation.
pub fn ellipsoid_closest(e: Vec3, y: Vec3) -> Vec3 {
    let mut amin = 0;
    for a in 1..3 {
        if e[a] < e[amin] {
            amin = a;
        }
    }
    let emin2 = e[amin] * e[amin];
    let big_g = |t: f64| -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            let den = e[a] * e[a] + t;
            if den <= 0.0 {
                if y[a] != 0.0 {
                    return f64::INFINITY;
                }
                continue;
            }
            s += (e[a] * y[a] / den).powi(2);
        }
        s - 1.0
    };
    let emax = e.iter().cloned().fold(0.0, f64::max);
    let mut lo = -emin2;
    let mut hi = (emax * norm(y)).max(1e-300);
    if big_g(lo) < 0.0 {
        // Medial sheet: t = −e_min², shortest-axis coordinate from the surface equation.
        let mut x = [0.0; 3];
        let mut rest = 0.0;
        for a in 0..3 {
            if a == amin {
                continue;
            }
            let den = e[a] * e[a] - emin2;
            x[a] = if den > 0.0 { e[a] * e[a] * y[a] / den } else { 0.0 };
            rest += (x[a] / e[a]).powi(2);
        }
        let s = if y[amin] < 0.0 { -1.0 } else { 1.0 };
        x[amin] = s * e[amin] * (1.0 - rest).max(0.0).sqrt();
        return x;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if big_g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    [0, 1, 2].map(|a| {
        let den = e[a] * e[a] + t;
        if den > 0.0 {
            e[a] * e[a] * y[a] / den
        } else {
            0.0
        }
    })
}

/// Uniform voxel grid; voxel `(i, j, k)` has centre `lo + (i + ½, j + ½, k + ½) h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub h: f64,
    pub lo: Vec3,
    pub periodic: [bool; 3],
}

impl Grid {
    /// Grid covering `[lo, hi]`; the upper corner is snapped to a whole number of voxels.
    pub fn new(lo: Vec3, hi: Vec3, h: f64, periodic: [bool; 3]) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!("grid spacing must be positive, got {h}")));
        }
        let mut dims = [0; 3];
        for a in 0..3 {
            let n = ((hi[a] - lo[a]) / h).round();
            if !(n >= 1.0) {
                return Err(Error::InvalidInput(format!("empty box along axis {a}: [{}, {}]", lo[a], hi[a])));
            }
            dims[a] = n as usize;
        }
        Ok(Grid { dims, h, lo, periodic })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.lo[0] + (i as f64 + 0.5) * self.h,
            self.lo[1] + (j as f64 + 0.5) * self.h,
            self.lo[2] + (k as f64 + 0.5) * self.h,
        ]
    }

    pub fn center_of(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        self.center(i, j, k)
    }

    pub fn hi(&self) -> Vec3 {
        [0, 1, 2].map(|a| self.lo[a] + self.dims[a] as f64 * self.h)
    }

    /// Neighbour index along `axis` in direction `+1`/`−1`, wrapping on periodic axes.
    #[inline]
    pub fn neighbor(&self, c: [usize; 3], axis: usize, forward: bool) -> Option<[usize; 3]> {
        let n = self.dims[axis];
        let mut d = c;
        if forward {
            if c[axis] + 1 < n {
                d[axis] += 1;
            } else if self.periodic[axis] {
                d[axis] = 0;
            } else {
                return None;
            }
        } else if c[axis] > 0 {
            d[axis] -= 1;
        } else if self.periodic[axis] {
            d[axis] = n - 1;
        } else {
            return None;
        }
        Some(d)
    }

    /// Minimum-image displacement `b − a` on periodic axes.
    pub fn min_image(&self, a: Vec3, b: Vec3) -> Vec3 {
        let mut d = sub(b, a);
        for ax in 0..3 {
            if self.periodic[ax] {
                let l = self.dims[ax] as f64 * self.h;
                d[ax] -= l * (d[ax] / l).round();
            }
        }
        d
    }

    /// Voxels in a slab of constant `k`.
    pub fn slab_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoxelClass {
    /// Inside the particle beyond the band.
    Interior,
    /// Within `band_width · h` of the particle surface.
    Band,
    Fluid,
    /// Outer layer on non-periodic box faces.
    FarField,
}

/// The computational domain: grid, particle, signed distance and voxel classes.
#[derive(Debug, Clone)]
pub struct Domain {
    pub grid: Grid,
    pub shape: Option<ParticleShape>,
    pub phi: Vec<f64>,
    pub class: Vec<VoxelClass>,
    pub band_width: f64,
    pub warnings: Vec<String>,
}

impl Domain {
    /// Classifies every voxel. A particle touching or leaving the box is a
    /// geometry error; a thin margin or a coarse particle only produce warnings.
    pub fn build(shape: Option<ParticleShape>, grid: Grid, band_width: f64) -> Result<Domain> {
        let mut warnings = Vec::new();
        if let Some(s) = &shape {
            s.validate()?;
            let (plo, phi_) = s.bounds();
            let (glo, ghi) = (grid.lo, grid.hi());
            for a in 0..3 {
                if grid.periodic[a] {
                    return Err(Error::Geometry(format!("particle in a box periodic along axis {a}")));
                }
                if plo[a] <= glo[a] + grid.h || phi_[a] >= ghi[a] - grid.h {
                    return Err(Error::Geometry(format!(
                        "particle [{}, {}] meets the box [{}, {}] along axis {a}",
                        plo[a], phi_[a], glo[a], ghi[a]
                    )));
                }
            }
            let d = s.diameter();
            if d / grid.h < 16.0 {
                warnings.push(format!("particle spans only {:.1} voxels", d / grid.h));
            }
            let margin = (0..3).map(|a| (plo[a] - glo[a]).min(ghi[a] - phi_[a])).fold(f64::INFINITY, f64::min);
            if margin < 2.0 * d {
                warnings.push(format!("box margin {margin:.3} is below two particle diameters ({:.3})", 2.0 * d));
            }
        }
        let n = grid.len();
        let mut phi = vec![f64::INFINITY; n];
        let mut class = vec![VoxelClass::Fluid; n];
        for idx in 0..n {
            let c = grid.coords(idx);
            let x = grid.center(c[0], c[1], c[2]);
            if let Some(s) = &shape {
                phi[idx] = s.phi(x);
            }
            let bw = band_width * grid.h;
            class[idx] = if phi[idx] < -bw {
                VoxelClass::Interior
            } else if phi[idx] <= bw {
                VoxelClass::Band
            } else if (0..3).any(|a| !grid.periodic[a] && (c[a] == 0 || c[a] + 1 == grid.dims[a])) {
                VoxelClass::FarField
            } else {
                VoxelClass::Fluid
            };
        }
        Ok(Domain { grid, shape, phi, class, band_width, warnings })
    }

    /// Domain without a particle.
    pub fn empty(grid: Grid) -> Domain {
        Domain::build(None, grid, 1.0).expect("a particle-free domain is always valid")
    }

    #[inline]
    pub fn pinned(&self, idx: usize) -> bool {
        self.class[idx] != VoxelClass::Fluid
    }

    /// Voxel lies in the fluid region `Ω` (contributes energy).
    #[inline]
    pub fn active(&self, idx: usize) -> bool {
        self.phi[idx] > 0.0
    }

    /// Outward normal at the voxel (nearest surface point).
    pub fn normal(&self, idx: usize) -> Vec3 {
        match &self.shape {
            Some(s) => s.normal(self.grid.center_of(idx)),
            None => E1,
        }
    }

    /// Homeotropic anchoring value `s_*(ν̄⊗ν̄ − Id/3)` extended off the surface.
    pub fn anchoring(&self, idx: usize, m: &MaterialParams) -> QTensor {
        m.vacuum(self.normal(idx))
    }

    pub fn count(&self, c: VoxelClass) -> usize {
        self.class.iter().filter(|&&k| k == c).count()
    }
}

/// Triangulated particle surface with per-vertex normals, areas and polar angle.
#[derive(Debug, Clone, Default)]
pub struct SurfaceMesh {
    pub mesh: TriMesh,
    pub normals: Vec<Vec3>,
    pub areas: Vec<f64>,
    /// `θ = arccos(ν·e3)`.
    pub theta: Vec<f64>,
}

impl SurfaceMesh {
    /// Marching tetrahedra on `φ` sampled with spacing `h` over the particle's
    /// bounding box, vertices moved onto the exact surface.
    pub fn from_shape(shape: &ParticleShape, h: f64) -> Result<SurfaceMesh> {
        shape.validate()?;
        let (lo, hi) = shape.bounds();
        let lo = lo.map(|x| x - 2.0 * h);
        let dims = [0, 1, 2].map(|a| ((hi[a] + 2.0 * h - lo[a]) / h).ceil() as usize + 1);
        let node = |i: usize, j: usize, k: usize| [lo[0] + i as f64 * h, lo[1] + j as f64 * h, lo[2] + k as f64 * h];
        let id = |i: usize, j: usize, k: usize| (i + dims[0] * (j + dims[1] * k)) as u64;
        let mut values = vec![0.0; dims[0] * dims[1] * dims[2]];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    values[id(i, j, k) as usize] = shape.phi(node(i, j, k));
                }
            }
        }
        let mut b = IsoBuilder::new();
        for k in 0..dims[2] - 1 {
            for j in 0..dims[1] - 1 {
                for i in 0..dims[0] - 1 {
                    let corner = |c: usize| {
                        let (ii, jj, kk) = (i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                        let g = id(ii, jj, kk);
                        (g, values[g as usize], node(ii, jj, kk))
                    };
                    let cs: [(u64, f64, Vec3); 8] = core::array::from_fn(corner);
                    let all_pos = cs.iter().all(|c| c.1 >= 0.0);
                    let all_neg = cs.iter().all(|c| c.1 < 0.0);
                    if all_pos || all_neg {
                        continue;
                    }
                    for tet in KUHN_TETS {
                        let t = tet.map(|c| cs[c]);
                        b.add_tet(t.map(|c| c.0), t.map(|c| c.1), t.map(|c| c.2), 0);
                    }
                }
            }
        }
        let (mut mesh, _) = b.finish();
        for v in mesh.vertices.iter_mut() {
            *v = shape.closest_point(*v);
        }
        Ok(SurfaceMesh::from_mesh(mesh, |p| shape.normal(p)))
    }

    pub fn from_mesh<N: Fn(Vec3) -> Vec3>(mesh: TriMesh, normal: N) -> SurfaceMesh {
        let normals: Vec<Vec3> = mesh.vertices.iter().map(|&p| normal(p)).collect();
        let theta = normals.iter().map(|n| n[2].clamp(-1.0, 1.0).acos()).collect();
        let areas = mesh.vertex_areas();
        SurfaceMesh { mesh, normals, areas, theta }
    }

    pub fn area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.mesh.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mesh.vertices.is_empty()
    }
}

/// Anchoring tensors `s_*(ν⊗ν − Id/3)` at every surface vertex.
pub fn boundary_q(surface: &SurfaceMesh, m: &MaterialParams) -> Vec<QTensor> {
    surface.normals.iter().map(|&n| m.vacuum(n)).collect()
}

/// Reference direction field used to fix eigenvector signs.
#[derive(Debug, Clone)]
pub struct NormalExtension {
    pub v: Vec<Vec3>,
    /// Largest difference quotient `|v(x) − v(y)|/h` over neighbouring fluid voxels.
    pub lipschitz: f64,
}

/// Extension `v` of the outward normal to the fluid voxels.
///
/// Any continuous field equal to `ν` on a closed surface vanishes somewhere
/// outside it if it is constant at infinity, so `v` is the normal at the
/// nearest surface point everywhere (nonvanishing outside a convex particle);
/// without a particle it is `e1`.
pub fn extend_normal(domain: &Domain) -> Result<NormalExtension> {
    let g = &domain.grid;
    let v: Vec<Vec3> = (0..g.len()).map(|i| domain.normal(i)).collect();
    let mut lip = 0.0f64;
    let mut min_norm = f64::INFINITY;
    for idx in 0..g.len() {
        if !domain.active(idx) {
            continue;
        }
        min_norm = min_norm.min(norm(v[idx]));
        let c = g.coords(idx);
        for a in 0..3 {
            if let Some(d) = g.neighbor(c, a, true) {
                let j = g.index(d[0], d[1], d[2]);
                if domain.active(j) {
                    lip = lip.max(dist(v[idx], v[j]) / g.h);
                }
            }
        }
    }
    if min_norm < 0.2 {
        return Err(Error::ExtensionFailure { min_norm });
    }
    Ok(NormalExtension { v, lipschitz: lip })
}

/// The curve `Γ = {ν3 = 0}` on the surface mesh, by linear interpolation of
/// `ν3` along edges. With a shape the points are moved onto the surface.
pub fn gamma_curve(surface: &SurfaceMesh, shape: Option<&ParticleShape>) -> Result<Vec<Polyline>> {
    let m = &surface.mesh;
    let n3: Vec<f64> = surface.normals.iter().map(|n| n[2]).collect();
    let mut keys: alloc::collections::BTreeMap<(u32, u32), u32> = alloc::collections::BTreeMap::new();
    let mut pts: Vec<Vec3> = Vec::new();
    let mut edges: Vec<[u32; 2]> = Vec::new();
    for tri in &m.triangles {
        if tri.iter().all(|&v| n3[v as usize] == 0.0) {
            return Err(Error::Geometry("nu3 vanishes on a whole face; the curve Gamma is degenerate".into()));
        }
        let mut cross_pts = Vec::new();
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let (fa, fb) = (n3[a as usize], n3[b as usize]);
            if (fa >= 0.0) != (fb >= 0.0) {
                let key = (a.min(b), a.max(b));
                let id = *keys.entry(key).or_insert_with(|| {
                    let (lo, hi) = (key.0 as usize, key.1 as usize);
                    let t = n3[lo] / (n3[lo] - n3[hi]);
                    let mut p = axpy(m.vertices[lo], t, sub(m.vertices[hi], m.vertices[lo]));
                    if let Some(s) = shape {
                        p = s.closest_point(p);
                    }
                    pts.push(p);
                    (pts.len() - 1) as u32
                });
                cross_pts.push(id);
            }
        }
        if cross_pts.len() == 2 {
            edges.push([cross_pts[0], cross_pts[1]]);
        }
    }
    Ok(chain_edges(&pts, &edges))
}

/// Points `ω + t ν(ω)` for `t` in `[0, len]`, used for ray probes off the surface.
pub fn normal_ray(p: Vec3, n: Vec3, t: f64) -> Vec3 {
    add(p, scale(n, t))
}
