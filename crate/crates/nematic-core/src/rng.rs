//! Seeded random sampling helpers and low-discrepancy sequences.

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{normalize, Vec3};
use crate::tensor::{axis_angle, Mat3, QTensor};

pub type DetRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tensor with the given coordinates in a Frobenius-orthonormal basis of `Sym₀`.
pub fn sym0_from_coords(c: [f64; 5]) -> QTensor {
    let r2 = core::f64::consts::FRAC_1_SQRT_2;
    let r6 = 1.0 / 6.0f64.sqrt();
    // (e1e1 − e2e2)/√2, (e1e1 + e2e2 − 2e3e3)/√6, and the symmetrized off-diagonals /√2.
    QTensor::new(c[0] * r2 + c[1] * r6, c[2] * r2, c[3] * r2, -c[0] * r2 + c[1] * r6, c[4] * r2)
}

pub fn gaussian5<R: Rng + ?Sized>(rng: &mut R) -> [f64; 5] {
    let mut c = [0.0; 5];
    for x in c.iter_mut() {
        *x = StandardNormal.sample(rng);
    }
    c
}

/// Uniform point on the unit sphere of `Sym₀`.
pub fn unit_sym0<R: Rng + ?Sized>(rng: &mut R) -> QTensor {
    loop {
        let q = sym0_from_coords(gaussian5(rng));
        let n = q.norm();
        if n > 1e-12 {
            return q * (1.0 / n);
        }
    }
}

/// Uniform point in the ball of radius `radius` of `Sym₀`.
pub fn ball_sym0<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> QTensor {
    let u: f64 = rng.gen();
    unit_sym0(rng) * (radius * u.powf(0.2))
}

pub fn unit_vec<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = [StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng)];
        if let Some(u) = normalize(v) {
            return u;
        }
    }
}

/// Uniformly distributed rotation (random axis, angle with density ∝ 1 − cos).
pub fn rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    // A unit quaternion drawn from the 4-sphere gives the Haar measure.
    let q: [f64; 4] = loop {
        let q = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n: f64 = q.iter().map(|x: &f64| x * x).sum::<f64>();
        if n > 1e-12 {
            let inv = 1.0 / n.sqrt();
            break [q[0] * inv, q[1] * inv, q[2] * inv, q[3] * inv];
        }
    };
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Rotation about `e3` by a uniform angle.
pub fn rotation_about_e3<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let angle: f64 = rng.gen_range(0.0..core::f64::consts::TAU);
    axis_angle(crate::linalg::E3, angle)
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// `index`-th point of the Halton sequence in `[0,1)^D`, `D ≤ 8`.
pub fn halton<const D: usize>(index: u64) -> [f64; D] {
    let mut p = [0.0; D];
    for (d, x) in p.iter_mut().enumerate() {
        *x = radical_inverse(index, PRIMES[d]);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthonormal() {
        for i in 0..5 {
            for j in 0..5 {
                let mut a = [0.0; 5];
                let mut b = [0.0; 5];
                a[i] = 1.0;
                b[j] = 1.0;
                let d = sym0_from_coords(a).dot(&sym0_from_coords(b));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-15, "{i} {j} {d}");
            }
        }
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = seeded(3);
        for _ in 0..1000 {
            assert!(ball_sym0(&mut rng, 0.5).norm() <= 0.5 + 1e-15);
        }
    }

    #[test]
    fn rotations_are_orthogonal() {
        let mut rng = seeded(9);
        for _ in 0..100 {
            let r = rotation(&mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((d - e).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn halton_first_points() {
        assert_eq!(halton::<2>(1), [0.5, 1.0 / 3.0]);
        assert_eq!(halton::<2>(2), [0.25, 2.0 / 3.0]);
        assert!((radical_inverse(3, 2) - 0.75).abs() < 1e-16);
    }
}
