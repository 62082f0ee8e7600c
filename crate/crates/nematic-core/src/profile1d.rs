//! The one-dimensional transition problem
//!
//! ```text
//! I(r₁, r₂, a, b) = inf ∫_{r₁}^{r₂} s_*² |n₃'|²/(1 − n₃²) + c_*² (1 − n₃²) dr,   n₃(r₁) = a, n₃(r₂) = b,
//! ```
//!
//! its closed-form minimizer on the half line, a numerical solver and the
//! variant `I_α` with a perturbed endpoint.
//!
//! With `n₃ = cos ψ` the integrand becomes `s_*² ψ'² + c_*² sin² ψ`, which is
//! what [`solve_bvp`] discretizes.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::Vec3;
use crate::potentials::MaterialParams;
use crate::rng::{halton, sym0_from_coords};
use crate::tensor::QTensor;

/// Truncation length of the half line, in units of `s_*/c_*`.
pub const TRUNCATION: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileQuery {
    pub r1: f64,
    /// May be `f64::INFINITY`.
    pub r2: f64,
    pub a: f64,
    pub b: f64,
}

impl ProfileQuery {
    pub fn new(r1: f64, r2: f64, a: f64, b: f64) -> Result<Self> {
        if !(r1 >= 0.0 && r2 >= r1 && r1.is_finite()) {
            return Err(Error::InvalidInput("profile interval needs 0 <= r1 <= r2".into()));
        }
        if !(a.abs() <= 1.0 && b.abs() <= 1.0) {
            return Err(Error::InvalidInput("profile endpoint values must lie in [-1, 1]".into()));
        }
        Ok(ProfileQuery { r1, r2, a, b })
    }

    /// The canonical half-line problem `(0, ∞, cos θ, 1)`.
    pub fn half_line(theta: f64) -> Self {
        ProfileQuery { r1: 0.0, r2: f64::INFINITY, a: theta.cos(), b: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSolution {
    pub r: Vec<f64>,
    pub n3: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Sup norm of the discrete first variation divided by the node weights.
    pub residual: f64,
}

/// `A(θ) = (1 + cos θ)/(1 − cos θ)`.
pub fn a_theta(theta: f64) -> f64 {
    (1.0 + theta.cos()) / (1.0 - theta.cos())
}

/// Minimizer of `I(0, ∞, cos θ, 1)` at `r`. The flag marks the degenerate
/// ends: `θ = 0` (`A = ∞`, constant 1) and `θ = π` (`A = 0`, where every
/// translate of the `−1 → 1` kink is optimal; the one centred at half the
/// truncation length is returned).
pub fn optimal_n3(r: f64, theta: f64, m: &MaterialParams) -> (f64, bool) {
    if theta == 0.0 {
        return (1.0, true);
    }
    if a_theta(theta) == 0.0 {
        let r0 = 0.5 * TRUNCATION * m.s_star / m.c_star;
        return ((m.c_star / m.s_star * (r - r0)).tanh(), true);
    }
    let e = (-2.0 * m.c_star / m.s_star * r).exp();
    let a = a_theta(theta);
    ((a - e) / (a + e), false)
}

/// Polar angle of the optimal profile, `tan(ψ/2) = tan(θ/2) e^{−c_* r/s_*}`.
pub fn optimal_psi(r: f64, theta: f64, m: &MaterialParams) -> f64 {
    2.0 * ((0.5 * theta).tan() * (-m.c_star / m.s_star * r).exp()).atan()
}

/// `I(0, ∞, cos θ, ±1) = 2 s_* c_* (1 ∓ cos θ)`; `sign` is `+1` or `-1`.
pub fn i_closed_form(theta: f64, sign: f64, m: &MaterialParams) -> f64 {
    2.0 * m.s_star * m.c_star * (1.0 - sign.signum() * theta.cos())
}

fn nodes(q: &ProfileQuery, samples: usize, m: &MaterialParams) -> Vec<f64> {
    if q.r2.is_finite() {
        let l = q.r2 - q.r1;
        (0..=samples).map(|i| q.r1 + l * i as f64 / samples as f64).collect()
    } else {
        // sinh stretching: fine near r₁ where the transition sits.
        let l = TRUNCATION * m.s_star / m.c_star;
        let k = 3.0;
        (0..=samples).map(|i| q.r1 + l * (k * i as f64 / samples as f64).sinh() / k.sinh()).collect()
    }
}

struct Discrete<'a> {
    r: &'a [f64],
    s2: f64,
    c2: f64,
}

impl Discrete<'_> {
    fn energy(&self, psi: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..psi.len() - 1 {
            let d = self.r[i + 1] - self.r[i];
            if d <= 0.0 {
                continue;
            }
            let mid = 0.5 * (psi[i] + psi[i + 1]);
            e += self.s2 * (psi[i + 1] - psi[i]).powi(2) / d + self.c2 * d * mid.sin().powi(2);
        }
        e
    }

    /// Gradient and tridiagonal Hessian `(diag, off)` with `off[i]` coupling `i` and `i+1`.
    fn derivatives(&self, psi: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = psi.len();
        let mut g = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n.saturating_sub(1)];
        for i in 0..n - 1 {
            let d = self.r[i + 1] - self.r[i];
            if d <= 0.0 {
                continue;
            }
            let mid = 0.5 * (psi[i] + psi[i + 1]);
            let dir = 2.0 * self.s2 * (psi[i + 1] - psi[i]) / d;
            let pot = 0.5 * self.c2 * d * (2.0 * mid).sin();
            g[i] += -dir + pot;
            g[i + 1] += dir + pot;
            let kd = 2.0 * self.s2 / d;
            let kp = 0.5 * self.c2 * d * (2.0 * mid).cos();
            diag[i] += kd + kp;
            diag[i + 1] += kd + kp;
            off[i] += -kd + kp;
        }
        (g, diag, off)
    }

    fn weights(&self) -> Vec<f64> {
        let n = self.r.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { self.r[i] - self.r[i - 1] } else { 0.0 };
                let right = if i + 1 < n { self.r[i + 1] - self.r[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    fn residual(&self, psi: &[f64]) -> f64 {
        let (g, _, _) = self.derivatives(psi);
        let w = self.weights();
        (1..psi.len() - 1).map(|i| (g[i] / w[i]).abs()).fold(0.0, f64::max)
    }
}

/// Solves `(D + μ) x = rhs` for a symmetric tridiagonal matrix; `None` when a
/// pivot is not positive.
fn solve_tridiagonal(diag: &[f64], off: &[f64], mu: f64, rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0] + mu;
    if piv <= 0.0 {
        return None;
    }
    d[0] = rhs[0] / piv;
    for i in 1..n {
        c[i - 1] = off[i - 1] / piv;
        piv = diag[i] + mu - off[i - 1] * c[i - 1];
        if piv <= 0.0 {
            return None;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

/// Discretized minimization of `I(r₁, r₂, a, b)` in the angle `ψ`.
///
/// Damped Newton iteration on the interior nodes with a Levenberg shift when
/// the Hessian is not positive and a backtracking line search on the energy.
/// An infinite `r₂` is truncated at `20 s_*/c_*` on a sinh-stretched grid.
pub fn solve_bvp(q: &ProfileQuery, samples: usize, m: &MaterialParams) -> Result<ProfileSolution> {
    if samples < 64 {
        return Err(Error::InvalidInput("solve_bvp needs at least 64 samples".into()));
    }
    let r = nodes(q, samples, m);
    let (pa, pb) = (q.a.clamp(-1.0, 1.0).acos(), q.b.clamp(-1.0, 1.0).acos());
    let n = r.len();
    let span = r[n - 1] - r[0];
    let mut psi: Vec<f64> = if q.r2.is_infinite() && q.b.abs() == 1.0 && q.a.abs() < 1.0 {
        // The closed-form profile already satisfies the data (up to the truncation).
        let theta = if q.b > 0.0 { pa } else { core::f64::consts::PI - pa };
        r.iter()
            .map(|&x| {
                let t = optimal_psi(x - q.r1, theta, m);
                if q.b > 0.0 { t } else { core::f64::consts::PI - t }
            })
            .collect()
    } else if span > 0.0 {
        r.iter().map(|&x| pa + (pb - pa) * (x - r[0]) / span).collect()
    } else {
        vec![pa; n]
    };
    psi[0] = pa;
    psi[n - 1] = pb;
    let sys = Discrete { r: &r, s2: m.s_star * m.s_star, c2: m.c_star * m.c_star };
    let tol = 1e-9;
    let mut energy = sys.energy(&psi);
    let mut iterations = 0;
    let mut mu = 0.0;
    while n > 2 && iterations <= 500 {
        let res = sys.residual(&psi);
        if res < tol {
            break;
        }
        if iterations >= 500 {
            return Err(Error::SolverFailure { residual: res });
        }
        iterations += 1;
        let (g, diag, off) = sys.derivatives(&psi);
        let inner = 1..n - 1;
        let rhs: Vec<f64> = g[inner.clone()].iter().map(|x| -x).collect();
        let scale = diag[inner.clone()].iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let step = loop {
            match solve_tridiagonal(&diag[inner.clone()], &off[1..n - 2], mu, &rhs) {
                Some(s) => break s,
                None => mu = if mu == 0.0 { 1e-8 * scale } else { 4.0 * mu },
            }
        };
        mu *= 0.25;
        if step.iter().all(|x| x.abs() < 1e-13) {
            break;
        }
        let mut t = 1.0;
        let mut trial = psi.clone();
        let mut accepted = false;
        for _ in 0..60 {
            for (k, i) in inner.clone().enumerate() {
                trial[i] = psi[i] + t * step[k];
            }
            let e = sys.energy(&trial);
            if e < energy {
                energy = e;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Rounding-level plateau: no representable decrease remains.
            break;
        }
        core::mem::swap(&mut psi, &mut trial);
    }
    let residual = if n > 2 { sys.residual(&psi) } else { 0.0 };
    Ok(ProfileSolution { n3: psi.iter().map(|p| p.cos()).collect(), r, value: energy, iterations, residual })
}

/// Sup-norm residual of the discrete first variation at the closed-form
/// profile on a uniform grid of `[0, 20 s_*/c_*]`.
pub fn euler_lagrange_residual(theta: f64, samples: usize, m: &MaterialParams) -> f64 {
    let l = TRUNCATION * m.s_star / m.c_star;
    let r: Vec<f64> = (0..=samples).map(|i| l * i as f64 / samples as f64).collect();
    let psi: Vec<f64> = r.iter().map(|&x| optimal_psi(x, theta, m)).collect();
    Discrete { r: &r, s2: m.s_star * m.s_star, c2: m.c_star * m.c_star }.residual(&psi)
}

/// Integral of the density along the closed-form profile by composite
/// Gauss–Legendre quadrature (5 points per panel).
pub fn closed_form_quadrature(theta: f64, panels: usize, m: &MaterialParams) -> f64 {
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1, 0.236_926_885_056_189_1];
    let l = TRUNCATION * m.s_star / m.c_star;
    let k = m.c_star / m.s_star;
    let density = |r: f64| {
        let psi = optimal_psi(r, theta, m);
        // ψ' = −(c_*/s_*) sin ψ along the minimizer.
        let dpsi = -k * psi.sin();
        m.s_star * m.s_star * dpsi * dpsi + m.c_star * m.c_star * psi.sin().powi(2)
    };
    let h = l / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let c = (p as f64 + 0.5) * h;
        for j in 0..5 {
            s += W[j] * 0.5 * h * density(c + 0.5 * h * X[j]);
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct IAlphaResult {
    pub value: f64,
    /// Best relaxed endpoint `n₃(Q)` found.
    pub endpoint: f64,
    pub samples: usize,
    /// Doubling the sample count changed the value by less than 0.1%.
    pub stable: bool,
}

/// Horizontal leading eigenvector `v` of `s_*(n⊗n − Id/3) − Y` fixes
/// `n ∝ (λ + Y) v`; returns `n₃` of that uniaxial tensor.
fn n3_with_horizontal_perturbed_director(y: &QTensor, v: Vec3, s: f64) -> Option<f64> {
    let ym = y.to_matrix();
    let yv = [0, 1, 2].map(|i| ym[i][0] * v[0] + ym[i][1] * v[1] + ym[i][2] * v[2]);
    let vyv = v[0] * yv[0] + v[1] * yv[1] + v[2] * yv[2];
    let yv2 = yv[0] * yv[0] + yv[1] * yv[1] + yv[2] * yv[2];
    // λ² + (2 vYv − s) λ + |Yv|² − s vYv = 0, root near s.
    let bq = 2.0 * vyv - s;
    let disc = bq * bq - 4.0 * (yv2 - s * vyv);
    if disc < 0.0 {
        return None;
    }
    let lam = 0.5 * (-bq + disc.sqrt());
    let w = [lam * v[0] + yv[0], lam * v[1] + yv[1], lam * v[2] + yv[2]];
    let nw = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    if nw == 0.0 {
        return None;
    }
    let n = [w[0] / nw, w[1] / nw, w[2] / nw];
    // Accept only when v really is the leading eigenvector of Q − Y.
    let q = QTensor::uniaxial(s, n) - *y;
    let sp = q.spectral();
    let lead = sp.vectors[0];
    let align = (lead[0] * v[0] + lead[1] * v[1] + lead[2] * v[2]).abs();
    (align > 1.0 - 1e-9).then_some(n[2])
}

fn i_alpha_with(q: &ProfileQuery, alpha: f64, samples: usize, bvp_samples: usize, m: &MaterialParams, exec: &impl Exec) -> Result<(f64, f64)> {
    let s = m.s_star;
    let dirs = 128;
    // Per Y sample the attainable range of n₃ over horizontal directors.
    let ranges = exec.map(samples, |k| {
        let y = if k == 0 {
            QTensor::ZERO
        } else {
            let mut idx = k as u64;
            loop {
                let u: [f64; 5] = halton(idx);
                let c = u.map(|x| 2.0 * x - 1.0);
                let r2: f64 = c.iter().map(|x| x * x).sum();
                if r2 <= 1.0 {
                    break sym0_from_coords(c) * alpha;
                }
                idx += samples as u64;
            }
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in 0..dirs {
            let phi = core::f64::consts::PI * j as f64 / dirs as f64;
            if let Some(n3) = n3_with_horizontal_perturbed_director(&y, [phi.cos(), phi.sin(), 0.0], s) {
                // The director is defined up to sign.
                for v in [n3, -n3] {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        (lo, hi)
    });
    // Closest attainable endpoint to a from either side.
    let mut below = f64::NEG_INFINITY;
    let mut above = f64::INFINITY;
    for (lo, hi) in ranges {
        if lo > hi {
            continue;
        }
        if lo <= q.a && q.a <= hi {
            below = q.a;
            above = q.a;
        } else if hi < q.a {
            below = below.max(hi);
        } else {
            above = above.min(lo);
        }
    }
    let mut best = (f64::INFINITY, q.b);
    for b in [below, above] {
        if b.is_finite() {
            let v = solve_bvp(&ProfileQuery { b, ..*q }, bvp_samples, m)?.value;
            if v < best.0 {
                best = (v, b);
            }
        }
    }
    Ok(best)
}

/// `I_α(r₁, r₂, a, 0)`: the endpoint is relaxed to `n₃(Q)` for uniaxial
/// `Q ∈ N` with `n₃(Q − Y) = 0`, `Y` in the `α`-ball of `Sym₀` (Halton
/// points, `Y = 0` always included).
pub fn i_alpha<E: Exec>(q: &ProfileQuery, alpha: f64, samples: usize, m: &MaterialParams, exec: &E) -> Result<IAlphaResult> {
    if q.b != 0.0 {
        return Err(Error::InvalidInput("I_alpha is defined for b = 0".into()));
    }
    if !(alpha >= 0.0 && alpha < 0.1 * m.s_star) {
        return Err(Error::InvalidInput("I_alpha needs 0 <= alpha < s*/10".into()));
    }
    let bvp_samples = 1024;
    if alpha == 0.0 {
        let v = solve_bvp(q, bvp_samples, m)?.value;
        return Ok(IAlphaResult { value: v, endpoint: 0.0, samples: 0, stable: true });
    }
    let samples = samples.max(256);
    let (half, _) = i_alpha_with(q, alpha, samples / 2, bvp_samples, m, exec)?;
    let (value, endpoint) = i_alpha_with(q, alpha, samples, bvp_samples, m, exec)?;
    let stable = (half - value).abs() <= 1e-3 * value.abs();
    Ok(IAlphaResult { value, endpoint, samples, stable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    #[test]
    fn optimal_profile_examples() {
        let m = MaterialParams::default();
        for th in [0.3, 1.0, PI / 2.0, 2.5, PI] {
            assert!((optimal_n3(0.0, th, &m).0 - th.cos()).abs() < 1e-8);
            assert!((optimal_n3(200.0, th, &m).0 - 1.0).abs() < 1e-12);
        }
        let r = m.s_star / m.c_star;
        assert!((optimal_n3(r, PI / 2.0, &m).0 - 1.0f64.tanh()).abs() < 1e-12);
        assert_eq!(optimal_n3(1.0, 0.0, &m), (1.0, true));
        assert!((optimal_n3(0.0, PI / 2.0, &m).0 - optimal_psi(0.0, PI / 2.0, &m).cos()).abs() < 1e-15);
    }

    #[test]
    fn closed_form_values() {
        let m = MaterialParams::default();
        assert_eq!(i_closed_form(0.0, 1.0, &m), 0.0);
        assert!((i_closed_form(PI, 1.0, &m) - 4.0 * m.s_star * m.c_star).abs() < 1e-12);
        assert!((i_closed_form(PI / 2.0, 1.0, &m) - 3.674235).abs() < 1e-6);
    }

    #[test]
    fn bvp_matches_closed_form() {
        let m = MaterialParams::default();
        for th in [PI / 6.0, PI / 2.0, 5.0 * PI / 6.0] {
            let sol = solve_bvp(&ProfileQuery::half_line(th), 512, &m).unwrap();
            let exact = i_closed_form(th, 1.0, &m);
            assert!((sol.value - exact).abs() < 5e-3 * exact, "{th}: {} vs {exact}", sol.value);
            assert!(sol.n3.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        }
        let full = solve_bvp(&ProfileQuery::new(0.0, f64::INFINITY, -1.0, 1.0).unwrap(), 512, &m).unwrap();
        let exact = 4.0 * m.s_star * m.c_star;
        assert!((full.value - exact).abs() < 5e-3 * exact, "{}", full.value);
        let flat = solve_bvp(&ProfileQuery::new(0.0, f64::INFINITY, 1.0, 1.0).unwrap(), 64, &m).unwrap();
        assert_eq!(flat.value, 0.0);
        assert!(flat.n3.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn linear_guess_converges_to_same_value() {
        // From a = 1 to b = 0 on a long interval the optimal cost tends to 2 s_* c_*.
        let m = MaterialParams::default();
        let l = TRUNCATION * m.s_star / m.c_star;
        let sol = solve_bvp(&ProfileQuery::new(0.0, l, 1.0, 0.0).unwrap(), 2048, &m).unwrap();
        let exact = 2.0 * m.s_star * m.c_star;
        assert!((sol.value - exact).abs() < 5e-3 * exact, "{}", sol.value);
        assert!(sol.value >= exact - 1e-3);
    }

    #[test]
    fn euler_lagrange_and_quadrature() {
        let m = MaterialParams::default();
        for th in [PI / 6.0, PI / 2.0, 5.0 * PI / 6.0] {
            assert!(euler_lagrange_residual(th, 4096, &m) < 1e-4);
            let q = closed_form_quadrature(th, 400, &m);
            let exact = i_closed_form(th, 1.0, &m);
            assert!((q - exact).abs() < 1e-4 * exact);
        }
    }

    #[test]
    fn i_alpha_behaviour() {
        let m = MaterialParams::default();
        let q = ProfileQuery::new(0.0, f64::INFINITY, 1.0, 0.0).unwrap();
        let base = solve_bvp(&q, 1024, &m).unwrap().value;
        let zero = i_alpha(&q, 0.0, 256, &m, &Sequential).unwrap();
        assert_eq!(zero.value, base);
        let small = i_alpha(&q, 1e-3 * m.s_star, 256, &m, &Sequential).unwrap();
        assert!(small.value <= base + 1e-12);
        assert!((small.value - base).abs() < 0.01 * base);
        let large = i_alpha(&q, 0.1, 256, &m, &Sequential).unwrap();
        assert!(large.value <= small.value + 1e-12);
        assert!(i_alpha(&q, 0.2, 256, &m, &Sequential).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn sign_symmetry(th in 0.1f64..3.0) {
            let m = MaterialParams::default();
            prop_assert!((i_closed_form(th, -1.0, &m) - i_closed_form(PI - th, 1.0, &m)).abs() < 1e-12);
            let neg = solve_bvp(&ProfileQuery::new(0.0, f64::INFINITY, th.cos(), -1.0).unwrap(), 256, &m).unwrap();
            let pos = solve_bvp(&ProfileQuery::half_line(PI - th), 256, &m).unwrap();
            prop_assert!((neg.value - pos.value).abs() < 1e-8 * pos.value.max(1.0));
            prop_assert!(pos.value >= i_closed_form(PI - th, 1.0, &m) * (1.0 - 1e-3));
        }
    }
}
