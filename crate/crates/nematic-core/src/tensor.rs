//! Traceless symmetric 3×3 tensors.
//!
//! A [`QTensor`] stores the five independent entries `q11, q12, q13, q22, q23`;
//! `q33 = -q11 - q22`. The uniaxial/biaxial decomposition used throughout is
//!
//! ```text
//! Q = s ((n⊗n − Id/3) + r (m⊗m − Id/3)),   s ≥ 0, r ∈ [0, 1],
//! ```
//!
//! whose eigenvalues are `s(2−r)/3 ≥ s(2r−1)/3 ≥ −s(1+r)/3`. The vacuum
//! manifold is `N = {s_*(n⊗n − Id/3)}` and the biaxial cone is `C = {λ1 = λ2}`.

use core::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use alloc::format;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{self, any_orthogonal, cross, dot, normalize, Vec3, E3};

pub type Mat3 = [[f64; 3]; 3];

/// Eigenvalue separation below which two eigenvalues are treated as equal.
pub const CONE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QTensor {
    pub q11: f64,
    pub q12: f64,
    pub q13: f64,
    pub q22: f64,
    pub q23: f64,
}

impl QTensor {
    pub const ZERO: QTensor = QTensor { q11: 0.0, q12: 0.0, q13: 0.0, q22: 0.0, q23: 0.0 };

    pub const fn new(q11: f64, q12: f64, q13: f64, q22: f64, q23: f64) -> Self {
        QTensor { q11, q12, q13, q22, q23 }
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        QTensor::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.q11, self.q12, self.q13, self.q22, self.q23]
    }

    #[inline]
    pub fn q33(&self) -> f64 {
        -self.q11 - self.q22
    }

    /// Traceless part of the symmetric part of `m`.
    pub fn from_matrix(m: &Mat3) -> Self {
        let tr = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
        QTensor {
            q11: m[0][0] - tr,
            q12: 0.5 * (m[0][1] + m[1][0]),
            q13: 0.5 * (m[0][2] + m[2][0]),
            q22: m[1][1] - tr,
            q23: 0.5 * (m[1][2] + m[2][1]),
        }
    }

    pub fn to_matrix(&self) -> Mat3 {
        [
            [self.q11, self.q12, self.q13],
            [self.q12, self.q22, self.q23],
            [self.q13, self.q23, self.q33()],
        ]
    }

    /// `s (n⊗n − Id/3)`.
    #[inline]
    pub fn uniaxial(s: f64, n: Vec3) -> Self {
        let third = 1.0 / 3.0;
        QTensor {
            q11: s * (n[0] * n[0] - third),
            q12: s * n[0] * n[1],
            q13: s * n[0] * n[2],
            q22: s * (n[1] * n[1] - third),
            q23: s * n[1] * n[2],
        }
    }

    /// Frobenius inner product of the full 3×3 matrices.
    #[inline]
    pub fn dot(&self, o: &QTensor) -> f64 {
        self.q11 * o.q11
            + self.q22 * o.q22
            + (self.q11 + self.q22) * (o.q11 + o.q22)
            + 2.0 * (self.q12 * o.q12 + self.q13 * o.q13 + self.q23 * o.q23)
    }

    /// `|Q|² = tr Q²`.
    #[inline]
    pub fn norm_sq(&self) -> f64 {
        2.0 * (self.q11 * self.q11 + self.q22 * self.q22 + self.q11 * self.q22)
            + 2.0 * (self.q12 * self.q12 + self.q13 * self.q13 + self.q23 * self.q23)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn det(&self) -> f64 {
        let (a, b, c, d, e, f) = (self.q11, self.q12, self.q13, self.q22, self.q23, self.q33());
        a * (d * f - e * e) - b * (b * f - e * c) + c * (b * e - d * c)
    }

    /// `tr Q³` (equal to `3 det Q` for traceless Q).
    #[inline]
    pub fn tr_cube(&self) -> f64 {
        3.0 * self.det()
    }

    /// Traceless part of `Q²`.
    pub fn square_traceless(&self) -> QTensor {
        let m = self.to_matrix();
        let mut p = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                p[i][j] = (0..3).map(|k| m[i][k] * m[k][j]).sum();
            }
        }
        QTensor::from_matrix(&p)
    }

    /// `x · Q x`.
    pub fn quad_form(&self, x: Vec3) -> f64 {
        let m = self.to_matrix();
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                acc += x[i] * m[i][j] * x[j];
            }
        }
        acc
    }

    /// `R Q Rᵀ`.
    pub fn rotate(&self, r: &Mat3) -> QTensor {
        let q = self.to_matrix();
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        acc += r[i][k] * q[k][l] * r[j][l];
                    }
                }
                out[i][j] = acc;
            }
        }
        QTensor::from_matrix(&out)
    }

    pub fn is_finite(&self) -> bool {
        self.q11.is_finite()
            && self.q12.is_finite()
            && self.q13.is_finite()
            && self.q22.is_finite()
            && self.q23.is_finite()
    }

    /// Spectral data, eigenvalues in descending order.
    pub fn spectral(&self) -> Spectral {
        symmetric_eigen(self)
    }
}

impl Add for QTensor {
    type Output = QTensor;
    #[inline]
    fn add(self, o: QTensor) -> QTensor {
        QTensor::new(self.q11 + o.q11, self.q12 + o.q12, self.q13 + o.q13, self.q22 + o.q22, self.q23 + o.q23)
    }
}

impl Sub for QTensor {
    type Output = QTensor;
    #[inline]
    fn sub(self, o: QTensor) -> QTensor {
        QTensor::new(self.q11 - o.q11, self.q12 - o.q12, self.q13 - o.q13, self.q22 - o.q22, self.q23 - o.q23)
    }
}

impl Mul<f64> for QTensor {
    type Output = QTensor;
    #[inline]
    fn mul(self, s: f64) -> QTensor {
        QTensor::new(self.q11 * s, self.q12 * s, self.q13 * s, self.q22 * s, self.q23 * s)
    }
}

impl Neg for QTensor {
    type Output = QTensor;
    #[inline]
    fn neg(self) -> QTensor {
        self * -1.0
    }
}

impl AddAssign for QTensor {
    #[inline]
    fn add_assign(&mut self, o: QTensor) {
        *self = *self + o;
    }
}

impl SubAssign for QTensor {
    #[inline]
    fn sub_assign(&mut self, o: QTensor) {
        *self = *self - o;
    }
}

/// Eigenvalues `λ1 ≥ λ2 ≥ λ3` with orthonormal eigenvectors `n, m, p`
/// (right-handed, `p = n × m`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectral {
    pub values: [f64; 3],
    pub vectors: [Vec3; 3],
}

impl Spectral {
    pub fn reconstruct(&self) -> QTensor {
        let mut m = [[0.0; 3]; 3];
        for k in 0..3 {
            let v = self.vectors[k];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += self.values[k] * v[i] * v[j];
                }
            }
        }
        QTensor::from_matrix(&m)
    }
}

fn eigvec_cross(q: &QTensor, lambda: f64) -> Option<Vec3> {
    let m = q.to_matrix();
    let r0 = [m[0][0] - lambda, m[0][1], m[0][2]];
    let r1 = [m[1][0], m[1][1] - lambda, m[1][2]];
    let r2 = [m[2][0], m[2][1], m[2][2] - lambda];
    let c = [cross(r0, r1), cross(r0, r2), cross(r1, r2)];
    let mut best = c[0];
    let mut bn = linalg::norm2(c[0]);
    for v in &c[1..] {
        let n = linalg::norm2(*v);
        if n > bn {
            bn = n;
            best = *v;
        }
    }
    normalize(best)
}

/// Closed-form symmetric eigen-solver.
///
/// The best separated eigenvalue is found from the trigonometric solution of
/// the characteristic cubic and its eigenvector from cross products of rows of
/// `Q − λ Id`. The remaining pair is solved exactly as a 2×2 problem in the
/// orthogonal plane, which stays accurate when the two eigenvalues coincide.
pub fn symmetric_eigen(q: &QTensor) -> Spectral {
    let nsq = q.norm_sq();
    let identity = Spectral { values: [0.0; 3], vectors: [linalg::E1, linalg::E2, E3] };
    if !(nsq > 1e-300) || !nsq.is_finite() {
        return identity;
    }
    let p = (nsq / 6.0).sqrt();
    let b = *q * (1.0 / p);
    let half_det = (b.det() / 2.0).clamp(-1.0, 1.0);
    let phi = half_det.acos() / 3.0;
    let two_pi_3 = 2.0 * core::f64::consts::PI / 3.0;
    let l1 = 2.0 * p * phi.cos();
    let l3 = 2.0 * p * (phi + two_pi_3).cos();
    let l2 = -l1 - l3;

    let top_isolated = l1 - l2 >= l2 - l3;
    let iso = if top_isolated { l1 } else { l3 };
    let v = match eigvec_cross(q, iso) {
        Some(v) => v,
        None => return identity,
    };
    let iso = q.quad_form(v);
    let u = any_orthogonal(v);
    let w = cross(v, u);
    let m = q.to_matrix();
    let apply = |x: Vec3| -> Vec3 {
        [
            m[0][0] * x[0] + m[0][1] * x[1] + m[0][2] * x[2],
            m[1][0] * x[0] + m[1][1] * x[1] + m[1][2] * x[2],
            m[2][0] * x[0] + m[2][1] * x[1] + m[2][2] * x[2],
        ]
    };
    let au = apply(u);
    let aw = apply(w);
    let a = dot(u, au);
    let bb = 0.5 * (dot(u, aw) + dot(w, au));
    let c = dot(w, aw);
    let mean = 0.5 * (a + c);
    let half = 0.5 * (a - c);
    let d = (half * half + bb * bb).sqrt();
    let theta = 0.5 * (2.0 * bb).atan2(a - c);
    let (ct, st) = (theta.cos(), theta.sin());
    let e_plus = [ct * u[0] + st * w[0], ct * u[1] + st * w[1], ct * u[2] + st * w[2]];
    let e_minus = [-st * u[0] + ct * w[0], -st * u[1] + ct * w[1], -st * u[2] + ct * w[2]];
    let mut pairs = if top_isolated {
        [(iso, v), (mean + d, e_plus), (mean - d, e_minus)]
    } else {
        [(mean + d, e_plus), (mean - d, e_minus), (iso, v)]
    };
    // Guard against tiny ordering violations near a triple point.
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(core::cmp::Ordering::Equal));
    let n = pairs[0].1;
    let mv = pairs[1].1;
    let pv = cross(n, mv);
    Spectral { values: [pairs[0].0, pairs[1].0, pairs[2].0], vectors: [n, mv, pv] }
}

/// Degeneracy status of a decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecompFlag {
    Regular,
    /// `λ1 = λ2` within [`CONE_TOL`]: `r = 1` and `n, m` span the top eigenspace.
    OnCone,
    /// `Q = 0`: `s = 0, r = 0` and the frame is arbitrary.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompParams {
    pub s: f64,
    pub r: f64,
    pub n: Vec3,
    pub m: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub params: DecompParams,
    pub flag: DecompFlag,
}

/// `s((n⊗n − Id/3) + r(m⊗m − Id/3))`.
pub fn compose(p: &DecompParams) -> Result<QTensor> {
    let nn = linalg::norm(p.n);
    let nm = linalg::norm(p.m);
    if (nn - 1.0).abs() > 1e-8 || (nm - 1.0).abs() > 1e-8 || dot(p.n, p.m).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "frame not orthonormal: |n| = {nn}, |m| = {nm}, n·m = {}",
            dot(p.n, p.m)
        )));
    }
    if !(p.s >= 0.0) || !(0.0..=1.0).contains(&p.r) {
        return Err(Error::InvalidInput(format!("need s >= 0 and r in [0,1], got s = {}, r = {}", p.s, p.r)));
    }
    Ok(QTensor::uniaxial(p.s, p.n) + QTensor::uniaxial(p.s * p.r, p.m))
}

/// Inverse of [`compose`]; total, with degenerate cases flagged.
pub fn decompose(q: &QTensor) -> Decomposition {
    let sp = q.spectral();
    let [l1, l2, l3] = sp.values;
    let s = l1 - l3;
    let scale = q.norm().max(1.0);
    if s <= 1e-12 * scale {
        return Decomposition {
            params: DecompParams { s: 0.0, r: 0.0, n: sp.vectors[0], m: sp.vectors[1] },
            flag: DecompFlag::Zero,
        };
    }
    let on_cone = l1 - l2 <= CONE_TOL * scale;
    let r = if on_cone { 1.0 } else { ((l2 - l3) / s).clamp(0.0, 1.0) };
    Decomposition {
        params: DecompParams { s, r, n: sp.vectors[0], m: sp.vectors[1] },
        flag: if on_cone { DecompFlag::OnCone } else { DecompFlag::Regular },
    }
}

/// Eigenvalue gap `λ1 − λ2`; zero exactly on the biaxial cone.
pub fn cone_gap(q: &QTensor) -> f64 {
    let v = q.spectral().values;
    (v[0] - v[1]).max(0.0)
}

/// Nearest point projection onto `N`: `s_*(n⊗n − Id/3)` with `n` the leading eigenvector.
pub fn retract_to_n(q: &QTensor, s_star: f64) -> Result<QTensor> {
    let sp = q.spectral();
    let gap = sp.values[0] - sp.values[1];
    if gap <= CONE_TOL * q.norm().max(1.0) {
        return Err(Error::ConeDegenerate { gap });
    }
    Ok(QTensor::uniaxial(s_star, sp.vectors[0]))
}

/// Frobenius distance from `q` to `N`.
///
/// Minimized by `n` the leading eigenvector (also on the cone), so the distance
/// is between spectra: `Σ (λi − μi)²` with `μ = s_*(2/3, −1/3, −1/3)`.
pub fn dist_to_n(q: &QTensor, s_star: f64) -> f64 {
    let [l1, l2, l3] = q.spectral().values;
    let t = s_star / 3.0;
    ((l1 - 2.0 * t).powi(2) + (l2 + t).powi(2) + (l3 + t).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedN3 {
    pub n3: f64,
    /// The reference direction is (nearly) orthogonal to the director.
    pub ambiguous: bool,
    /// The sign-fixed director.
    pub n: Vec3,
}

/// `n·e3` for the leading eigenvector with its sign fixed by `n·reference ≥ 0`.
pub fn oriented_n3(q: &QTensor, reference: Vec3) -> Result<OrientedN3> {
    let sp = q.spectral();
    let gap = sp.values[0] - sp.values[1];
    if gap <= CONE_TOL * q.norm().max(1.0) {
        return Err(Error::ConeDegenerate { gap });
    }
    let mut n = sp.vectors[0];
    let d = dot(n, reference);
    if d < 0.0 {
        n = linalg::scale(n, -1.0);
    }
    Ok(OrientedN3 { n3: n[2], ambiguous: d.abs() < 1e-8, n })
}

/// A point of the complex `T` in the parametrization `λ(n⊗n − R_nᵀ M R_n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalTPoint {
    pub lambda: f64,
    /// Horizontal director `(n1, n2)`.
    pub n: [f64; 2],
    /// Symmetric 2×2 block with unit trace.
    pub m_prime: [[f64; 2]; 2],
}

impl CalTPoint {
    pub fn validate(&self) -> Result<()> {
        let nn = (self.n[0] * self.n[0] + self.n[1] * self.n[1]).sqrt();
        let m = self.m_prime;
        let tr = m[0][0] + m[1][1];
        let asym = (m[0][1] - m[1][0]).abs();
        let mean = 0.5 * tr;
        let rad = (0.25 * (m[0][0] - m[1][1]).powi(2) + m[0][1] * m[0][1]).sqrt();
        if !(self.lambda > 0.0) || (nn - 1.0).abs() > 1e-8 || (tr - 1.0).abs() > 1e-10 || asym > 1e-12 || mean - rad <= -1.0 {
            return Err(Error::InvalidInput(format!(
                "invalid complex point: lambda = {}, |n| = {nn}, tr M' = {tr}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn n3d(&self) -> Vec3 {
        [self.n[0], self.n[1], 0.0]
    }
}

/// Rotation by π/2 about `u = n × e3`; it maps the horizontal unit vector `n` to `e3`.
pub fn rotation_rn(n: [f64; 2]) -> Mat3 {
    let u = [n[1], -n[0], 0.0];
    skew_plus_outer(u, u)
}

/// `[a]× + a bᵀ` for the rotation family `R = [u]× + u uᵀ` and its derivatives.
fn skew_plus_outer(a: Vec3, b: Vec3) -> Mat3 {
    [
        [a[0] * b[0], -a[2] + a[0] * b[1], a[1] + a[0] * b[2]],
        [a[2] + a[1] * b[0], a[1] * b[1], -a[0] + a[1] * b[2]],
        [-a[1] + a[2] * b[0], a[0] + a[2] * b[1], a[2] * b[2]],
    ]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn transpose(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

fn block(m: [[f64; 2]; 2]) -> Mat3 {
    [[m[0][0], m[0][1], 0.0], [m[1][0], m[1][1], 0.0], [0.0, 0.0, 0.0]]
}

fn outer_sym(a: Vec3, b: Vec3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[i] * b[j] + b[i] * a[j];
        }
    }
    m
}

fn mat_sub(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = *a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] -= b[i][j];
        }
    }
    c
}

/// `λ(n⊗n − R_nᵀ M R_n)` with `M = diag(M', 0)`.
pub fn calt_compose(p: &CalTPoint) -> Result<QTensor> {
    p.validate()?;
    let r = rotation_rn(p.n);
    let rt = transpose(&r);
    let rmr = mat_mul(&rt, &mat_mul(&block(p.m_prime), &r));
    let n = p.n3d();
    let mut nn = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            nn[i][j] = n[i] * n[j];
        }
    }
    let q = QTensor::from_matrix(&mat_sub(&nn, &rmr)) * p.lambda;
    Ok(q)
}

/// Recovers `(λ, n)` from a uniaxial tensor with horizontal director (the
/// `M' = Id/2` points of the complex).
fn uniaxial_horizontal(q: &QTensor) -> Result<(f64, [f64; 2])> {
    let d = decompose(q);
    let p = d.params;
    let tol = 1e-8;
    if d.flag != DecompFlag::Regular || p.r > tol || p.n[2].abs() > tol {
        return Err(Error::InvalidInput(format!(
            "expected uniaxial tensor with horizontal director, got r = {}, n3 = {}",
            p.r, p.n[2]
        )));
    }
    let h = (p.n[0] * p.n[0] + p.n[1] * p.n[1]).sqrt();
    Ok((2.0 * p.s / 3.0, [p.n[0] / h, p.n[1] / h]))
}

/// Normal `N_Q` of the complex at a uniaxial point: `N13 = N31 = (3/2)λ n1`, `N23 = N32 = (3/2)λ n2`.
pub fn calt_normal(q: &QTensor) -> Result<QTensor> {
    let (lambda, n) = uniaxial_horizontal(q)?;
    Ok(calt_normal_at(lambda, n))
}

pub fn calt_normal_at(lambda: f64, n: [f64; 2]) -> QTensor {
    let k = 1.5 * lambda;
    QTensor::new(0.0, 0.0, k * n[0], 0.0, k * n[1])
}

/// Tangent vectors `T1..T4` of the complex at a uniaxial point.
///
/// `T1 = ∂/∂λ`, `T2` the derivative along a unit-speed rotation of the
/// horizontal director, `T3, T4` the variations of `M'` along `diag(1,−1)` and
/// the off-diagonal direction.
pub fn calt_tangent_basis(q: &QTensor) -> Result<[QTensor; 4]> {
    let (lambda, n) = uniaxial_horizontal(q)?;
    Ok(calt_tangent_basis_at(lambda, n))
}

pub fn calt_tangent_basis_at(lambda: f64, n: [f64; 2]) -> [QTensor; 4] {
    let half = [[0.5, 0.0], [0.0, 0.5]];
    let m = block(half);
    let r = rotation_rn(n);
    let rt = transpose(&r);
    let n3 = [n[0], n[1], 0.0];
    let ndot = [-n[1], n[0], 0.0];
    let u = [n[1], -n[0], 0.0];
    let udot = cross(ndot, E3);

    let mut nn = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            nn[i][j] = n3[i] * n3[j];
        }
    }
    let t1 = QTensor::from_matrix(&mat_sub(&nn, &mat_mul(&rt, &mat_mul(&m, &r))));

    // d/dφ of [u]× + u uᵀ is [u̇]× + u̇ uᵀ + u u̇ᵀ.
    let mut rdot = skew_plus_outer(udot, u);
    for i in 0..3 {
        for j in 0..3 {
            rdot[i][j] += u[i] * udot[j];
        }
    }
    let rdot_t = transpose(&rdot);
    let a = mat_mul(&rdot_t, &mat_mul(&m, &r));
    let b = mat_mul(&rt, &mat_mul(&m, &rdot));
    let mut t2 = outer_sym(ndot, n3);
    for i in 0..3 {
        for j in 0..3 {
            t2[i][j] -= a[i][j] + b[i][j];
        }
    }
    let t2 = QTensor::from_matrix(&t2) * lambda;

    let d1 = block([[1.0, 0.0], [0.0, -1.0]]);
    let d2 = block([[0.0, 1.0], [1.0, 0.0]]);
    let t3 = QTensor::from_matrix(&mat_mul(&rt, &mat_mul(&d1, &r))) * lambda;
    let t4 = QTensor::from_matrix(&mat_mul(&rt, &mat_mul(&d2, &r))) * lambda;
    [t1, t2, t3, t4]
}

/// Rotation matrix about a unit axis by `angle` (Rodrigues).
pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    let (s, c) = (angle.sin(), angle.cos());
    let [x, y, z] = axis;
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{E1, E2};
    use approx::assert_abs_diff_eq;

    fn diag(a: f64, b: f64) -> QTensor {
        QTensor::new(a, 0.0, 0.0, b, 0.0)
    }

    #[test]
    fn compose_examples() {
        let q = compose(&DecompParams { s: 1.0, r: 0.0, n: E3, m: E1 }).unwrap();
        assert_abs_diff_eq!(q.q11, -1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.q22, -1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.q33(), 2.0 / 3.0, epsilon = 1e-15);
        let q = compose(&DecompParams { s: 1.0, r: 1.0, n: E3, m: E1 }).unwrap();
        assert_abs_diff_eq!(q.q11, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.q22, -2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.q33(), 1.0 / 3.0, epsilon = 1e-15);
        let q = compose(&DecompParams { s: 0.0, r: 0.3, n: E2, m: E1 }).unwrap();
        assert_eq!(q.norm(), 0.0);
        assert!(compose(&DecompParams { s: 1.0, r: 0.0, n: E3, m: [0.0, 0.6, 0.8] }).is_err());
    }

    #[test]
    fn decompose_examples() {
        let d = decompose(&diag(-1.0 / 3.0, -1.0 / 3.0));
        assert_eq!(d.flag, DecompFlag::Regular);
        assert_abs_diff_eq!(d.params.s, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.params.r, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.params.n[2].abs(), 1.0, epsilon = 1e-12);
        let d = decompose(&QTensor::ZERO);
        assert_eq!(d.flag, DecompFlag::Zero);
        assert_eq!((d.params.s, d.params.r), (0.0, 0.0));
        let d = decompose(&diag(1.0 / 3.0, -2.0 / 3.0));
        assert_eq!(d.flag, DecompFlag::OnCone);
        assert_abs_diff_eq!(d.params.s, 1.0, epsilon = 1e-12);
        assert_eq!(d.params.r, 1.0);
    }

    #[test]
    fn retraction_and_distance() {
        let s = 1.5;
        let p = QTensor::uniaxial(s, E3);
        assert_abs_diff_eq!((retract_to_n(&p, s).unwrap() - p).norm(), 0.0, epsilon = 1e-14);
        let q = QTensor::uniaxial(2.0 * s, E1);
        assert_abs_diff_eq!((retract_to_n(&q, s).unwrap() - QTensor::uniaxial(s, E1)).norm(), 0.0, epsilon = 1e-14);
        let q = compose(&DecompParams { s, r: 0.5, n: E3, m: E1 }).unwrap();
        assert_abs_diff_eq!((retract_to_n(&q, s).unwrap() - p).norm(), 0.0, epsilon = 1e-13);
        assert!(matches!(retract_to_n(&QTensor::ZERO, s), Err(Error::ConeDegenerate { .. })));
        assert_abs_diff_eq!(dist_to_n(&QTensor::ZERO, s), s * (2.0f64 / 3.0).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(dist_to_n(&p, s), 0.0, epsilon = 1e-7);
        let eps = 0.1;
        assert_abs_diff_eq!(dist_to_n(&(p * (1.0 + eps)), s), eps * s * (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn gap_and_orientation() {
        let s = 1.5;
        assert_abs_diff_eq!(cone_gap(&QTensor::uniaxial(s, [0.0, 0.6, 0.8])), s, epsilon = 1e-13);
        assert_eq!(cone_gap(&QTensor::ZERO), 0.0);
        let c = compose(&DecompParams { s: 1.0, r: 1.0, n: E2, m: E3 }).unwrap();
        assert!(cone_gap(&c) < 1e-14);
        let o = oriented_n3(&QTensor::uniaxial(s, E3), E3).unwrap();
        assert_abs_diff_eq!(o.n3, 1.0, epsilon = 1e-14);
        let o = oriented_n3(&QTensor::uniaxial(s, E1), E1).unwrap();
        assert_abs_diff_eq!(o.n3, 0.0, epsilon = 1e-14);
        let h = 0.5f64.sqrt();
        let q = compose(&DecompParams { s, r: 0.0, n: [h, 0.0, h], m: E2 }).unwrap();
        let o = oriented_n3(&q, E1).unwrap();
        assert_abs_diff_eq!(o.n3, h, epsilon = 1e-13);
        let o = oriented_n3(&QTensor::uniaxial(s, E1), E3).unwrap();
        assert!(o.ambiguous);
    }

    #[test]
    fn calt_half_identity_is_uniaxial() {
        let th: f64 = 0.7;
        let p = CalTPoint { lambda: 0.9, n: [th.cos(), th.sin()], m_prime: [[0.5, 0.0], [0.0, 0.5]] };
        let q = calt_compose(&p).unwrap();
        let expect = QTensor::uniaxial(1.5 * 0.9, p.n3d());
        assert_abs_diff_eq!((q - expect).norm(), 0.0, epsilon = 1e-14);
        let r = rotation_rn(p.n);
        let n = p.n3d();
        let rn: Vec3 = [0, 1, 2].map(|i| (0..3).map(|k| r[i][k] * n[k]).sum());
        assert_abs_diff_eq!(rn[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn tangent_two_matches_director_rotation() {
        let th: f64 = 1.1;
        let lambda = 0.8;
        let t = calt_tangent_basis_at(lambda, [th.cos(), th.sin()]);
        let n = [th.cos(), th.sin(), 0.0];
        let nd = [-th.sin(), th.cos(), 0.0];
        let expect = QTensor::from_matrix(&outer_sym(n, nd)) * (1.5 * lambda);
        assert_abs_diff_eq!((t[1] - expect).norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(t[0].norm_sq(), 1.5, epsilon = 1e-14);
    }
}
