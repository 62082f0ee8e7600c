//! Bulk and magnetic energy densities and the `(η, ξ)` regime bookkeeping.
//!
//! ```text
//! f(Q) = C − (a/2) tr Q² − (b/3) tr Q³ + (c/4) (tr Q²)²
//! g(Q) = (2/3) s_* − Q33
//! e(Q, ∇Q) = ½|∇Q|² + f(Q)/ξ² + g(Q)/η² + C₀
//! ```
//!
//! `C` makes `min f = 0`, attained on `N`; `C₀` makes the far-field value
//! `Q∞ = s_{*,t}(e3⊗e3 − Id/3)`, `t = ξ²/η²`, a zero of `e`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{Vec3, E3};
use crate::rng;
use crate::tensor::{dist_to_n, retract_to_n, QTensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Additive constant making `min f = 0`.
    pub big_c: f64,
    pub s_star: f64,
    /// Magnetic scale with `c_*² = s_*`.
    pub c_star: f64,
}

impl MaterialParams {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && c > 0.0) || !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::InvalidInput(format!("bulk coefficients must be positive, got a = {a}, b = {b}, c = {c}")));
        }
        let s_star = (b + (b * b + 24.0 * a * c).sqrt()) / (4.0 * c);
        let mut m = MaterialParams { a, b, c, big_c: 0.0, s_star, c_star: s_star.sqrt() };
        m.big_c = -m.f_uniaxial(s_star);
        Ok(m)
    }

    /// `f(s(n⊗n − Id/3))`.
    pub fn f_uniaxial(&self, s: f64) -> f64 {
        self.big_c - self.a * s * s / 3.0 - 2.0 * self.b * s * s * s / 27.0 + self.c * s * s * s * s / 9.0
    }

    /// Derivative of [`Self::f_uniaxial`].
    pub fn f_uniaxial_prime(&self, s: f64) -> f64 {
        -2.0 * self.a * s / 3.0 - 2.0 * self.b * s * s / 9.0 + 4.0 * self.c * s * s * s / 9.0
    }

    /// `f_u(s_* + δ)` from its Taylor polynomial at `s_*`, free of cancellation for small `δ`.
    pub fn f_uniaxial_near(&self, delta: f64) -> f64 {
        let s = self.s_star;
        let d2 = -2.0 * self.a / 3.0 - 4.0 * self.b * s / 9.0 + 4.0 * self.c * s * s / 3.0;
        let d3 = -4.0 * self.b / 9.0 + 8.0 * self.c * s / 3.0;
        let d4 = 8.0 * self.c / 3.0;
        delta * delta * (d2 / 2.0 + delta * (d3 / 6.0 + delta * d4 / 24.0))
    }

    /// `s_*(n⊗n − Id/3)`.
    pub fn vacuum(&self, n: Vec3) -> QTensor {
        QTensor::uniaxial(self.s_star, n)
    }

    pub fn q_infinity(&self) -> QTensor {
        self.vacuum(E3)
    }
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams::new(1.0, 1.0, 1.0).expect("unit coefficients are valid")
    }
}

pub fn f_bulk(q: &QTensor, m: &MaterialParams) -> f64 {
    // Expanded around the vacuum invariants x* = 2s*²/3, y* = 2s*³/9 so that
    // the large constant C never appears.
    let s = m.s_star;
    let xs = 2.0 * s * s / 3.0;
    let ys = 2.0 * s * s * s / 9.0;
    let x = q.norm_sq();
    let y = q.tr_cube();
    -0.5 * m.a * (x - xs) - m.b / 3.0 * (y - ys) + 0.25 * m.c * (x - xs) * (x + xs)
}

/// Frobenius gradient of `f` restricted to `Sym₀`.
pub fn f_grad(q: &QTensor, m: &MaterialParams) -> QTensor {
    let x = q.norm_sq();
    *q * (-m.a + m.c * x) - q.square_traceless() * m.b
}

pub fn g_mag(q: &QTensor, m: &MaterialParams) -> f64 {
    2.0 * m.s_star / 3.0 - q.q33()
}

/// Frobenius gradient of `g` on `Sym₀`: `−(e3⊗e3 − Id/3)`.
pub fn g_grad(_q: &QTensor, _m: &MaterialParams) -> QTensor {
    QTensor::new(1.0 / 3.0, 0.0, 0.0, 1.0 / 3.0, 0.0)
}

/// `|g(s_*(n⊗n − Id/3)) − c_*²(1 − n3²)|`.
pub fn g_uniaxial_residual(n: Vec3, m: &MaterialParams) -> f64 {
    (g_mag(&m.vacuum(n), m) - m.c_star * m.c_star * (1.0 - n[2] * n[2])).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeParams {
    pub eta: f64,
    pub xi: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c0: f64,
    pub s_star_t: f64,
    pub q_inf: QTensor,
}

impl RegimeParams {
    /// Regime for explicit `(η, ξ)`; `β` is recorded as `η|ln ξ|`.
    pub fn new(eta: f64, xi: f64, gamma: f64, m: &MaterialParams) -> Result<Self> {
        if !(eta > 0.0) || !(xi > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidInput(format!("need eta > 0 and xi > 0, got eta = {eta}, xi = {xi}")));
        }
        if !(gamma > 0.5 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("collar exponent gamma must lie in (1/2, 1), got {gamma}")));
        }
        if xi >= eta {
            return Err(Error::RegimeViolation { eta, xi });
        }
        let (s_star_t, q_inf) = farfield_minimizer(eta, xi, m)?;
        let c0 = -f_bulk(&q_inf, m) / (xi * xi) - g_mag(&q_inf, m) / (eta * eta);
        Ok(RegimeParams { eta, xi, beta: eta * xi.ln().abs(), gamma, c0, s_star_t, q_inf })
    }

    /// Regime on the schedule `ξ = exp(−β/η)`.
    pub fn from_beta(beta: f64, eta: f64, gamma: f64, m: &MaterialParams) -> Result<Self> {
        if !(beta > 0.0) || !(eta > 0.0 && eta < 1.0) {
            return Err(Error::InvalidInput(format!("need beta > 0 and eta in (0,1), got beta = {beta}, eta = {eta}")));
        }
        let xi = (-beta / eta).exp();
        let mut r = RegimeParams::new(eta, xi, gamma, m)?;
        r.beta = beta;
        Ok(r)
    }

    /// `t = ξ²/η²`.
    pub fn t(&self) -> f64 {
        (self.xi / self.eta).powi(2)
    }

    /// Collar length `η^γ`.
    pub fn collar(&self) -> f64 {
        self.eta.powf(self.gamma)
    }
}

/// Far-field minimizer `s_{*,t}(e3⊗e3 − Id/3)` of `f/ξ² + g/η²`.
///
/// Along the uniaxial `e3` family the objective is `f_u(s)/ξ² + (2/3)(s_* − s)/η²`,
/// so the minimizer solves `f_u'(s) = 2t/3`; it lies above `s_*` and is found
/// by bisection on `[s_*, 3 s_*]`.
pub fn farfield_minimizer(eta: f64, xi: f64, m: &MaterialParams) -> Result<(f64, QTensor)> {
    if xi >= eta {
        return Err(Error::RegimeViolation { eta, xi });
    }
    let t = (xi / eta).powi(2);
    let target = 2.0 * t / 3.0;
    let (mut lo, mut hi) = (m.s_star, 3.0 * m.s_star);
    if m.f_uniaxial_prime(hi) < target {
        return Err(Error::NumericalFailure(format!("far-field minimizer escapes [0, {hi}] at t = {t}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-15 * m.s_star {
            break;
        }
        if m.f_uniaxial_prime(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    Ok((s, QTensor::uniaxial(s, E3)))
}

/// `½|∇Q|² + f/ξ² + g/η² + C₀` with `grad = [∂1 Q, ∂2 Q, ∂3 Q]`.
pub fn combined_density(q: &QTensor, grad: &[QTensor; 3], r: &RegimeParams, m: &MaterialParams) -> f64 {
    let dir: f64 = grad.iter().map(QTensor::norm_sq).sum();
    0.5 * dir + potential_density(q, r, m)
}

/// `f/ξ² + g/η² + C₀`.
#[inline]
pub fn potential_density(q: &QTensor, r: &RegimeParams, m: &MaterialParams) -> f64 {
    f_bulk(q, m) / (r.xi * r.xi) + g_mag(q, m) / (r.eta * r.eta) + r.c0
}

/// Frobenius gradient of [`potential_density`].
#[inline]
pub fn potential_grad(q: &QTensor, r: &RegimeParams, m: &MaterialParams) -> QTensor {
    f_grad(q, m) * (1.0 / (r.xi * r.xi)) + g_grad(q, m) * (1.0 / (r.eta * r.eta))
}

/// Regimes `ξ = exp(−β/η)` for each `η` in the list.
pub fn schedule(beta: f64, gamma: f64, etas: &[f64], m: &MaterialParams) -> Result<Vec<RegimeParams>> {
    etas.iter().map(|&eta| RegimeParams::from_beta(beta, eta, gamma, m)).collect()
}

/// Fitted constants `K_s = max |s_{*,t} − s_*| / t` and `K_0 = max C₀ η⁴/ξ²` over a schedule.
pub fn fit_regime_constants(regimes: &[RegimeParams], m: &MaterialParams) -> (f64, f64) {
    let mut ks = 0.0f64;
    let mut k0 = 0.0f64;
    for r in regimes {
        let t = r.t();
        ks = ks.max((r.s_star_t - m.s_star).abs() / t);
        k0 = k0.max(r.c0 * r.eta.powi(4) / (r.xi * r.xi));
    }
    (ks, k0)
}

/// Monte-Carlo check of the structural assumptions on `f` and `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub samples: usize,
    /// `min f/dist²(·,N)` over samples with `dist ≤ δ₀`.
    pub gamma1: f64,
    /// `min f/(|Q|² − 2s_*²/3)²`.
    pub c1: f64,
    /// `C2 = max(C1'|Q|⁴ − Df(Q):Q)` for `C1' = c/2`.
    pub c2: f64,
    /// `max |g(Q) − g(R(Q))|/dist(Q,N)` near `N`.
    pub g_lipschitz: f64,
    pub g_growth: f64,
    pub dg_growth: f64,
    /// `min (f + t g + ξ²C₀)/(dist(Q,N) − slack)²` near `N`, for the audit regime.
    pub gamma2: f64,
    pub violations: Vec<String>,
}

/// Samples near `N` (within `δ₀`) and in a ball of radius `3 s_*`.
pub fn assumption_audit(m: &MaterialParams, regime: Option<&RegimeParams>, samples: usize, delta0: f64, seed: u64) -> AuditReport {
    let mut rng = rng::seeded(seed);
    let s = m.s_star;
    let mut rep = AuditReport {
        samples,
        gamma1: f64::INFINITY,
        c1: f64::INFINITY,
        c2: f64::NEG_INFINITY,
        g_lipschitz: 0.0,
        g_growth: 0.0,
        dg_growth: 0.0,
        gamma2: f64::INFINITY,
        violations: Vec::new(),
    };
    let c1p = 0.5 * m.c;
    let grad_g_norm = g_grad(&QTensor::ZERO, m).norm();
    let xs = 2.0 * s * s / 3.0;
    let slack = regime.map(|r| 2.0 * (2.0f64 / 3.0).sqrt() * (r.s_star_t - s).abs()).unwrap_or(0.0);
    for i in 0..samples {
        let near = i % 2 == 0;
        let q = if near {
            let n = rng::unit_vec(&mut rng);
            m.vacuum(n) + rng::ball_sym0(&mut rng, delta0)
        } else {
            rng::ball_sym0(&mut rng, 3.0 * s)
        };
        let f = f_bulk(&q, m);
        let d = dist_to_n(&q, s);
        let x = q.norm_sq();
        if f < -1e-12 {
            rep.violations.push(format!("f < 0 at sample {i}: {f:e}"));
        }
        if near && d > 1e-6 && d <= delta0 {
            rep.gamma1 = rep.gamma1.min(f / (d * d));
            if let Ok(rq) = retract_to_n(&q, s) {
                let l = (g_mag(&q, m) - g_mag(&rq, m)).abs() / d;
                rep.g_lipschitz = rep.g_lipschitz.max(l);
            }
            if let Some(r) = regime {
                let dd = d - slack;
                if dd > 1e-6 {
                    let t = r.t();
                    let v = f + t * g_mag(&q, m) + r.xi * r.xi * r.c0;
                    rep.gamma2 = rep.gamma2.min(v / (dd * dd));
                }
            }
        }
        let den = (x - xs) * (x - xs);
        if den > 1e-8 {
            rep.c1 = rep.c1.min(f / den);
        }
        let dfq = f_grad(&q, m).dot(&q);
        rep.c2 = rep.c2.max(c1p * x * x - dfq);
        rep.g_growth = rep.g_growth.max(g_mag(&q, m).abs() / (1.0 + x * x));
        rep.dg_growth = rep.dg_growth.max(grad_g_norm / (1.0 + x.powf(1.5)));
    }
    if !(rep.gamma1 > 0.0) {
        rep.violations.push(format!("quadratic lower bound near N fails: gamma1 = {}", rep.gamma1));
    }
    if !(rep.c1 > 0.0) {
        rep.violations.push(format!("quartic lower bound fails: C1 = {}", rep.c1));
    }
    if rep.g_lipschitz > grad_g_norm * (1.0 + 1e-9) {
        rep.violations.push(format!("g Lipschitz constant {} exceeds |Dg| = {grad_g_norm}", rep.g_lipschitz));
    }
    if regime.is_some() && !(rep.gamma2 > 0.0) {
        rep.violations.push(format!("combined lower bound fails: gamma2 = {}", rep.gamma2));
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::E1;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_coefficients() {
        let m = MaterialParams::default();
        assert_eq!(m.s_star, 1.5);
        // Independent scan of the uniaxial polynomial without C.
        let mut best = f64::INFINITY;
        for k in 0..=300_000 {
            let s = k as f64 * 1e-5;
            best = best.min(-s * s / 3.0 - 2.0 * s * s * s / 27.0 + s * s * s * s / 9.0);
        }
        assert_abs_diff_eq!(best, -0.4375, epsilon = 1e-9);
        assert_abs_diff_eq!(f_bulk(&QTensor::ZERO, &m), 0.4375, epsilon = 1e-14);
        assert_abs_diff_eq!(m.big_c, 0.4375, epsilon = 1e-14);
    }

    #[test]
    fn vacuum_and_magnetic_values() {
        let m = MaterialParams::default();
        for n in [E1, E3, [0.0, 0.6, 0.8]] {
            assert!(f_bulk(&m.vacuum(n), &m).abs() < 1e-12);
            assert!(g_uniaxial_residual(n, &m) < 1e-12);
        }
        assert_abs_diff_eq!(g_mag(&m.vacuum(E3), &m), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g_mag(&m.vacuum(E1), &m), m.s_star, epsilon = 1e-15);
        assert_abs_diff_eq!(g_mag(&QTensor::ZERO, &m), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn taylor_form_matches_polynomial() {
        let m = MaterialParams::new(0.7, 1.3, 0.9).unwrap();
        for d in [-0.3, -0.01, 0.02, 0.5] {
            let a = m.f_uniaxial(m.s_star + d);
            assert_abs_diff_eq!(m.f_uniaxial_near(d), a, epsilon = 1e-13);
        }
    }

    #[test]
    fn farfield_limits() {
        let m = MaterialParams::default();
        let (s, _) = farfield_minimizer(1.0, 1e-4, &m).unwrap();
        assert!((s - m.s_star).abs() < 1e-6);
        let r = RegimeParams::new(0.2, 0.01, 0.7, &m).unwrap();
        assert!(r.s_star_t > m.s_star);
        assert!(f_bulk(&r.q_inf, &m) >= 0.0);
        assert!(r.c0 >= 0.0);
        let d = potential_density(&r.q_inf, &r, &m);
        assert!(d.abs() <= 1e-15 * r.c0.max(1.0), "{d}");
    }

    #[test]
    fn schedule_examples() {
        let m = MaterialParams::default();
        let sched = schedule(1.0, 0.7, &[0.25, 0.1], &m).unwrap();
        assert_abs_diff_eq!(sched[0].xi, 0.018315638888734, epsilon = 1e-12);
        assert_abs_diff_eq!(sched[1].xi, 4.5399929762484854e-5, epsilon = 1e-16);
        assert!(matches!(schedule(0.01, 0.7, &[0.5], &m), Err(Error::RegimeViolation { .. })));
    }

    #[test]
    fn audit_has_no_violations() {
        let m = MaterialParams::default();
        let r = RegimeParams::from_beta(1.0, 0.25, 0.7, &m).unwrap();
        let rep = assumption_audit(&m, Some(&r), 20_000, 0.1, 1);
        assert!(rep.violations.is_empty(), "{:?}", rep.violations);
        assert!(rep.gamma1 > 0.0 && rep.c1 > 0.0 && rep.gamma2 > 0.0);
    }
}
