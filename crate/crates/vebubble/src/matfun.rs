//! Spectral calculus for symmetric 2x2 matrices.
//!
//! Everything here is generic over the floating point type so the same code
//! serves `f32` experiments and the `f64` solver.

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use num_traits::Float;

use crate::error::{Error, Result};

/// floating point: f32 or f64
pub trait Real: Float + Debug + Send + Sync + 'static {}

impl<T> Real for T where T: Float + Debug + Send + Sync + 'static {}

#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from(x).unwrap()
}

/// Symmetric 2x2 matrix, off-diagonal stored once.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SymMat2<T> {
    pub a11: T,
    pub a12: T,
    pub a22: T,
}

impl<T: Real> SymMat2<T> {
    pub fn new(a11: T, a12: T, a22: T) -> Self {
        Self { a11, a12, a22 }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::one())
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn diag(d1: T, d2: T) -> Self {
        Self::new(d1, T::zero(), d2)
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.a11, self.a12, self.a22]
    }

    /// Full 2x2 representation, row major.
    pub fn to_full(self) -> [[T; 2]; 2] {
        [[self.a11, self.a12], [self.a12, self.a22]]
    }

    pub fn trace(self) -> T {
        self.a11 + self.a22
    }

    pub fn det(self) -> T {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    /// Frobenius product `A : B`.
    pub fn frob(self, other: Self) -> T {
        self.a11 * other.a11 + (self.a12 * other.a12 + self.a12 * other.a12) + self.a22 * other.a22
    }

    /// Frobenius norm `|A|`.
    pub fn norm(self) -> T {
        self.frob(self).sqrt()
    }

    pub fn max_abs(self) -> T {
        self.a11.abs().max(self.a12.abs()).max(self.a22.abs())
    }

    pub fn is_finite(self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a22.is_finite()
    }

    /// Matrix product, which is not symmetric in general.
    pub fn matmul(self, other: Self) -> [[T; 2]; 2] {
        let a = self.to_full();
        let b = other.to_full();
        let mut c = [[T::zero(); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        c
    }

    /// Inverse via the adjugate. Fails on a singular matrix.
    pub fn inverse(self) -> Result<Self> {
        let d = self.det();
        if d == T::zero() || !d.is_finite() {
            return Err(Error::DomainError(0.0));
        }
        Ok(Self::new(self.a22 / d, -self.a12 / d, self.a11 / d))
    }

    pub fn min_eig(self) -> T {
        eig_sym2(self).eig2
    }
}

impl<T: Real> Add for SymMat2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.a11 + o.a11, self.a12 + o.a12, self.a22 + o.a22)
    }
}

impl<T: Real> Sub for SymMat2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.a11 - o.a11, self.a12 - o.a12, self.a22 - o.a22)
    }
}

impl<T: Real> Neg for SymMat2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.a11, -self.a12, -self.a22)
    }
}

impl<T: Real> Mul<T> for SymMat2<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.a11 * s, self.a12 * s, self.a22 * s)
    }
}

/// `m = U diag(eig1, eig2) U^T` with `U = [[c, -s], [s, c]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralDecomp<T> {
    pub eig1: T,
    pub eig2: T,
    pub cos_t: T,
    pub sin_t: T,
}

impl<T: Real> SpectralDecomp<T> {
    pub fn reconstruct(&self) -> SymMat2<T> {
        self.with_eigs(self.eig1, self.eig2)
    }

    fn with_eigs(&self, e1: T, e2: T) -> SymMat2<T> {
        let (c, s) = (self.cos_t, self.sin_t);
        SymMat2::new(c * c * e1 + s * s * e2, c * s * (e1 - e2), s * s * e1 + c * c * e2)
    }
}

/// Closed-form eigendecomposition, eigenvalues in descending order.
pub fn eig_sym2<T: Real>(m: SymMat2<T>) -> SpectralDecomp<T> {
    let two = lit::<T>(2.0);
    let mean = (m.a11 + m.a22) / two;
    let half_diff = (m.a11 - m.a22) / two;
    let r = half_diff.hypot(m.a12);
    let det = m.det();
    // the eigenvalue of larger magnitude is free of cancellation; the other
    // one comes from the determinant
    let (e1, e2) = if mean >= T::zero() {
        let e1 = mean + r;
        let e2 = if e1 != T::zero() { det / e1 } else { mean - r };
        (e1, e2.min(e1))
    } else {
        let e2 = mean - r;
        let e1 = if e2 != T::zero() { det / e2 } else { mean + r };
        (e1.max(e2), e2)
    };
    let tol = lit::<T>(1e-14) * T::one().max(e1.abs());
    let (c, s) = if (e1 - e2).abs() < tol || r == T::zero() {
        (T::one(), T::zero())
    } else {
        let theta = m.a12.atan2(half_diff) / two;
        (theta.cos(), theta.sin())
    };
    SpectralDecomp { eig1: e1, eig2: e2, cos_t: c, sin_t: s }
}

/// `f(m)` by applying `f` to the spectrum. Non-finite values of `f` are
/// reported as a domain error.
pub fn matfun_apply<T: Real, F: Fn(T) -> T>(m: SymMat2<T>, f: F) -> Result<SymMat2<T>> {
    let sd = eig_sym2(m);
    let f1 = f(sd.eig1);
    let f2 = f(sd.eig2);
    if !f1.is_finite() {
        return Err(Error::DomainError(sd.eig1.to_f64().unwrap_or(f64::NAN)));
    }
    if !f2.is_finite() {
        return Err(Error::DomainError(sd.eig2.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(sd.with_eigs(f1, f2))
}

fn check_delta<T: Real>(delta: T) -> Result<()> {
    if delta > T::zero() && delta < T::one() {
        Ok(())
    } else {
        Err(Error::InvalidDelta(delta.to_f64().unwrap_or(f64::NAN)))
    }
}

fn check_spd<T: Real>(sd: &SpectralDecomp<T>) -> Result<()> {
    if sd.eig2 > T::zero() {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite(sd.eig2.to_f64().unwrap_or(f64::NAN)))
    }
}

/// Scalar regularized logarithm `g_delta(s)` and cut-off `beta_delta(s) = max(s, delta)`.
pub fn regularized_log_pair<T: Real>(s: T, delta: T) -> Result<(T, T)> {
    check_delta(delta)?;
    Ok(reg_pair_unchecked(s, delta))
}

fn reg_pair_unchecked<T: Real>(s: T, delta: T) -> (T, T) {
    if s < delta {
        (s / delta + delta.ln() - T::one(), delta)
    } else {
        (s.ln(), s)
    }
}

pub fn log<T: Real>(m: SymMat2<T>) -> Result<SymMat2<T>> {
    let sd = eig_sym2(m);
    check_spd(&sd)?;
    Ok(sd.with_eigs(sd.eig1.ln(), sd.eig2.ln()))
}

/// `tr ln m`, summed over the spectrum.
pub fn trace_log<T: Real>(m: SymMat2<T>) -> Result<T> {
    let sd = eig_sym2(m);
    check_spd(&sd)?;
    Ok(sd.eig1.ln() + sd.eig2.ln())
}

pub fn g_delta<T: Real>(m: SymMat2<T>, delta: T) -> Result<SymMat2<T>> {
    check_delta(delta)?;
    let sd = eig_sym2(m);
    Ok(sd.with_eigs(reg_pair_unchecked(sd.eig1, delta).0, reg_pair_unchecked(sd.eig2, delta).0))
}

pub fn beta_delta<T: Real>(m: SymMat2<T>, delta: T) -> Result<SymMat2<T>> {
    check_delta(delta)?;
    let sd = eig_sym2(m);
    Ok(sd.with_eigs(sd.eig1.max(delta), sd.eig2.max(delta)))
}

/// `g_delta'(m) = beta_delta(m)^{-1}`.
pub fn g_delta_prime<T: Real>(m: SymMat2<T>, delta: T) -> Result<SymMat2<T>> {
    check_delta(delta)?;
    let sd = eig_sym2(m);
    Ok(sd.with_eigs(T::one() / sd.eig1.max(delta), T::one() / sd.eig2.max(delta)))
}

/// Spectral negative part, `s -> min(s, 0)`.
pub fn negative_part<T: Real>(m: SymMat2<T>) -> SymMat2<T> {
    let sd = eig_sym2(m);
    sd.with_eigs(sd.eig1.min(T::zero()), sd.eig2.min(T::zero()))
}

/// `W(b) = G/2 tr(b - ln b - I)`, or the regularized `W_delta` when `delta` is given.
pub fn elastic_energy_density<T: Real>(b: SymMat2<T>, g_mod: T, delta: Option<T>) -> Result<T> {
    let half = lit::<T>(0.5);
    let sd = eig_sym2(b);
    let logs = match delta {
        None => {
            check_spd(&sd)?;
            sd.eig1.ln() + sd.eig2.ln()
        }
        Some(d) => {
            check_delta(d)?;
            reg_pair_unchecked(sd.eig1, d).0 + reg_pair_unchecked(sd.eig2, d).0
        }
    };
    Ok(half * g_mod * (b.trace() - logs - lit(2.0)))
}

/// `tr(B + B^{-1} - 2I)` with `B = b` or `B = beta_delta(b)`.
pub fn relaxation_trace<T: Real>(b: SymMat2<T>, delta: Option<T>) -> Result<T> {
    let sd = eig_sym2(b);
    let (e1, e2) = match delta {
        None => {
            check_spd(&sd)?;
            (sd.eig1, sd.eig2)
        }
        Some(d) => {
            check_delta(d)?;
            (sd.eig1.max(d), sd.eig2.max(d))
        }
    };
    let two = lit::<T>(2.0);
    Ok(e1 + T::one() / e1 - two + e2 + T::one() / e2 - two)
}

/// Left minus right hand sides of the regularization inequalities for a pair
/// `(b, g)`, in the order: cut-off trace, cut-off monotonicity, convexity,
/// trace bound by `|b|/2`, trace bound by the negative part, and the
/// `b : (I - g')` bound. Every entry is nonnegative when the inequalities hold.
pub fn regularization_gaps<T: Real>(b: SymMat2<T>, g: SymMat2<T>, delta: T) -> Result<[T; 6]> {
    let half = lit::<T>(0.5);
    let id = SymMat2::identity();
    let beta = beta_delta(b, delta)?;
    let gp = g_delta_prime(b, delta)?;
    let gb = g_delta(b, delta)?;
    let gg = g_delta(g, delta)?;
    let t_b = relaxation_trace(b, Some(delta))?;
    let t_d = (b - beta).frob(id - gp);
    let t_e = (g - b).frob(gp) - (gg.trace() - gb.trace());
    let tr = (b - gb).trace();
    let t_g1 = tr - half * b.norm();
    let t_g2 = tr - negative_part(b).norm() / (lit::<T>(2.0) * delta);
    let t_h = b.frob(id - gp) - (half * b.norm() - lit(2.0));
    Ok([t_b, t_d, t_e, t_g1, t_g2, t_h])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type M = SymMat2<f64>;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
    }

    #[test]
    fn identity_and_diagonal_eigs() {
        let sd = eig_sym2(M::identity());
        assert_eq!((sd.eig1, sd.eig2), (1.0, 1.0));
        let sd = eig_sym2(M::diag(3.0, 1.0));
        assert_eq!((sd.eig1, sd.eig2, sd.cos_t, sd.sin_t), (3.0, 1.0, 1.0, 0.0));
        let sd = eig_sym2(M::diag(1.0, 3.0));
        assert_eq!((sd.eig1, sd.eig2), (3.0, 1.0));
        assert!(sd.reconstruct().a11 - 1.0 < 1e-15);
    }

    #[test]
    fn log_sqrt_closed_forms() {
        assert_eq!(matfun_apply(M::identity(), f64::ln).unwrap(), M::zero());
        let r = matfun_apply(M::diag(4.0, 1.0), f64::sqrt).unwrap();
        assert_eq!(r, M::diag(2.0, 1.0));
        assert!(matches!(matfun_apply(M::diag(-1.0, 1.0), f64::ln), Err(Error::DomainError(_))));
    }

    #[test]
    fn regularized_pair_examples() {
        let (g, b) = regularized_log_pair(0.1, 0.1).unwrap();
        assert!(close(g, 0.1f64.ln(), 1e-15) && b == 0.1);
        assert_eq!(regularized_log_pair(1.0, 0.5).unwrap(), (0.0, 1.0));
        let (g, b) = regularized_log_pair(-2.0, 0.5).unwrap();
        assert!(close(g, -4.0 + 0.5f64.ln() - 1.0, 1e-15) && b == 0.5);
        assert!(matches!(regularized_log_pair(1.0, 1.0), Err(Error::InvalidDelta(_))));
        assert!(matches!(regularized_log_pair(1.0, 0.0), Err(Error::InvalidDelta(_))));
    }

    #[test]
    fn energy_examples() {
        assert_eq!(elastic_energy_density(M::identity(), 1.0, None).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let w = elastic_energy_density(M::diag(e, 1.0), 2.0, None).unwrap();
        assert!(close(w, e - 2.0, 1e-15));
        let w = elastic_energy_density(M::diag(-1.0, 2.0), 1.0, Some(0.5)).unwrap();
        let g1 = -1.0 / 0.5 + 0.5f64.ln() - 1.0;
        let g2 = 2f64.ln();
        assert!(close(w, 0.5 * (1.0 - g1 - g2 - 2.0), 1e-14));
        assert!(matches!(elastic_energy_density(M::diag(-1.0, 2.0), 1.0, None), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn relaxation_trace_examples() {
        assert_eq!(relaxation_trace(M::identity(), None).unwrap(), 0.0);
        assert_eq!(relaxation_trace(M::diag(4.0, 1.0), None).unwrap(), 2.25);
    }

    #[test]
    fn single_precision_works() {
        let m = SymMat2::<f32>::new(2.0, 0.5, 1.0);
        let sd = eig_sym2(m);
        let r = sd.reconstruct();
        assert!((r.a12 - 0.5).abs() < 1e-6);
        assert!(elastic_energy_density(m, 1.0f32, None).unwrap() >= 0.0);
    }

    fn sym() -> impl Strategy<Value = M> {
        (-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64).prop_map(|(a, b, c)| M::new(a, b, c))
    }

    fn spd() -> impl Strategy<Value = M> {
        (-4.0..4.0f64, -4.0..4.0f64, 0.0..std::f64::consts::PI).prop_map(|(l1, l2, th)| {
            let sd = SpectralDecomp { eig1: l1.exp(), eig2: l2.exp(), cos_t: th.cos(), sin_t: th.sin() };
            sd.reconstruct()
        })
    }

    proptest! {
        #[test]
        fn eigenvalues_solve_characteristic_polynomial(m in sym()) {
            let sd = eig_sym2(m);
            prop_assert!(sd.eig1 >= sd.eig2);
            let scale = 1f64.max(m.max_abs());
            for s in [sd.eig1, sd.eig2] {
                // det(m - sI) = s^2 - tr s + det
                let p = s * s - m.trace() * s + m.det();
                prop_assert!(p.abs() <= 1e-12 * scale * scale);
            }
            prop_assert!((sd.cos_t.powi(2) + sd.sin_t.powi(2) - 1.0).abs() < 1e-12);
            let r = sd.reconstruct();
            prop_assert!((r - m).max_abs() <= 1e-12 * scale);
        }

        #[test]
        fn inverse_multiplies_back(m in spd()) {
            let inv = matfun_apply(m, |s| 1.0 / s).unwrap();
            let p = inv.matmul(m);
            let scale = m.max_abs() * inv.max_abs();
            prop_assert!((p[0][0] - 1.0).abs() < 1e-12 * scale);
            prop_assert!((p[1][1] - 1.0).abs() < 1e-12 * scale);
            prop_assert!(p[0][1].abs() < 1e-12 * scale && p[1][0].abs() < 1e-12 * scale);
        }

        #[test]
        fn identity_function_reproduces(m in sym()) {
            let r = matfun_apply(m, |s| s).unwrap();
            prop_assert!((r - m).max_abs() <= 1e-12 * 1f64.max(m.max_abs()));
        }

        #[test]
        fn trace_log_is_log_det(m in spd()) {
            let t = trace_log(m).unwrap();
            prop_assert!((t - m.det().ln()).abs() < 1e-10 * 1f64.max(t.abs()));
        }

        #[test]
        fn relaxation_trace_is_squared_norm(m in sym()) {
            let d = 0.1;
            let t = relaxation_trace(m, Some(d)).unwrap();
            let root = matfun_apply(m, |s| s.max(d).sqrt() - 1.0 / s.max(d).sqrt()).unwrap();
            prop_assert!(t >= 0.0);
            prop_assert!((t - root.frob(root)).abs() < 1e-10 * 1f64.max(t));
        }

        #[test]
        fn regularization_converges_monotonically(m in spd()) {
            let target = log(m).unwrap();
            let mut last = f64::INFINITY;
            for d in [1e-1, 1e-2, 1e-3] {
                let e = (g_delta(m, d).unwrap() - target).norm()
                    + (beta_delta(m, d).unwrap() - m).norm();
                prop_assert!(e <= last + 1e-14);
                last = e;
            }
        }

        #[test]
        fn regularization_inequalities(b in sym(), g in sym(), d in 0.001..0.5f64) {
            for gap in regularization_gaps(b, g, d).unwrap() {
                prop_assert!(gap >= -1e-12 * 1f64.max(b.max_abs() + g.max_abs()) / d);
            }
        }
    }
}
