//! The element-wise transport tensor `Lambda_{i,j}(B)` that makes the
//! discrete chain rule for `tr ln B` hold exactly, and its regularized form.

use crate::error::{Error, Result};
use crate::matfun::{beta_delta, eig_sym2, lit, trace_log, Real, SymMat2};

/// Affine map `x = p0 + A x_hat` from the reference triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefMapping<T> {
    /// Columns are `p1 - p0` and `p2 - p0`.
    pub a: [[T; 2]; 2],
    pub p0: [T; 2],
}

impl<T: Real> RefMapping<T> {
    pub fn from_vertices(p: [[T; 2]; 3]) -> Self {
        Self { a: [[p[1][0] - p[0][0], p[2][0] - p[0][0]], [p[1][1] - p[0][1], p[2][1] - p[0][1]]], p0: p[0] }
    }

    pub fn det(&self) -> T {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    /// `(A^T)^{-1}`, which maps reference gradients to physical ones.
    pub fn inv_transpose(&self) -> Result<[[T; 2]; 2]> {
        let d = self.det();
        if d == T::zero() || !d.is_finite() {
            return Err(Error::SingularSystem("degenerate element mapping".into()));
        }
        let a = self.a;
        Ok([[a[1][1] / d, -a[1][0] / d], [-a[0][1] / d, a[0][0] / d]])
    }
}

/// `Lambda_{i,j}`, constant on one element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaElement<T> {
    pub l: [[SymMat2<T>; 2]; 2],
}

fn cutoff<T: Real>(b: SymMat2<T>, delta: Option<T>) -> Result<SymMat2<T>> {
    match delta {
        Some(d) => beta_delta(b, d),
        None => {
            let e = eig_sym2(b).eig2;
            if e > T::zero() {
                Ok(b)
            } else {
                Err(Error::NotPositiveDefinite(e.to_f64().unwrap_or(f64::NAN)))
            }
        }
    }
}

fn nearly_equal<T: Real>(b0: SymMat2<T>, bi: SymMat2<T>) -> bool {
    let tol = lit::<T>(1e-14) * T::one().max(b0.max_abs());
    (bi - b0).max_abs() <= tol
}

/// The convex weight `lambda_i`, or `None` on the equal branch.
pub fn lambda_coefficient<T: Real>(b0: SymMat2<T>, bi: SymMat2<T>, delta: Option<T>) -> Result<Option<T>> {
    let b0 = cutoff(b0, delta)?;
    let bi = cutoff(bi, delta)?;
    if nearly_equal(b0, bi) {
        return Ok(None);
    }
    let inv0 = b0.inverse()?;
    let invi = bi.inverse()?;
    let diff_inv = inv0 - invi;
    // tr ln B^{-1} = -tr ln B
    let num = -trace_log(bi)? + trace_log(b0)? + bi.frob(diff_inv);
    let den = (bi - b0).frob(diff_inv);
    if !(den > T::zero()) {
        return Ok(None);
    }
    Ok(Some(num / den))
}

/// `hat Lambda_i = B_i + lambda_i (B_0 - B_i)`.
pub fn lambda_hat<T: Real>(b0: SymMat2<T>, bi: SymMat2<T>, delta: Option<T>) -> Result<SymMat2<T>> {
    let c0 = cutoff(b0, delta)?;
    let ci = cutoff(bi, delta)?;
    Ok(match lambda_coefficient(b0, bi, delta)? {
        None => ci,
        Some(l) => ci + (c0 - ci) * l,
    })
}

pub fn assemble_lambda<T: Real>(
    b: &[SymMat2<T>; 3],
    map: &RefMapping<T>,
    delta: Option<T>,
) -> Result<LambdaElement<T>> {
    let hat = [lambda_hat(b[0], b[1], delta)?, lambda_hat(b[0], b[2], delta)?];
    let ait = map.inv_transpose()?;
    let at = [[map.a[0][0], map.a[1][0]], [map.a[0][1], map.a[1][1]]];
    let mut l = [[SymMat2::zero(); 2]; 2];
    for (i, row) in l.iter_mut().enumerate() {
        for (j, lij) in row.iter_mut().enumerate() {
            for m in 0..2 {
                *lij = *lij + hat[m] * (ait[i][m] * at[m][j]);
            }
        }
    }
    Ok(LambdaElement { l })
}

/// Outcome of a two-sided chain-rule evaluation on one element.
#[derive(Clone, Copy, Debug)]
pub struct ChainRuleCheck<T> {
    /// max over `i` of the absolute discrepancy
    pub residual: T,
    /// magnitude of the terms entering the left side, for relative checks
    pub scale: T,
}

impl<T: Real> ChainRuleCheck<T> {
    pub fn relative(&self) -> T {
        if self.scale > T::zero() {
            self.residual / self.scale
        } else {
            self.residual
        }
    }
}

/// Physical gradient of the P1 interpolant with nodal values `v`.
pub fn p1_gradient<T: Real>(ait: &[[T; 2]; 2], v: [T; 3]) -> [T; 2] {
    let dh = [v[1] - v[0], v[2] - v[0]];
    [ait[0][0] * dh[0] + ait[0][1] * dh[1], ait[1][0] * dh[0] + ait[1][1] * dh[1]]
}

/// Component-wise gradient of a P1 tensor field.
pub fn p1_tensor_gradient<T: Real>(ait: &[[T; 2]; 2], v: &[SymMat2<T>; 3]) -> [SymMat2<T>; 2] {
    let g11 = p1_gradient(ait, [v[0].a11, v[1].a11, v[2].a11]);
    let g12 = p1_gradient(ait, [v[0].a12, v[1].a12, v[2].a12]);
    let g22 = p1_gradient(ait, [v[0].a22, v[1].a22, v[2].a22]);
    [SymMat2::new(g11[0], g12[0], g22[0]), SymMat2::new(g11[1], g12[1], g22[1])]
}

/// Evaluates `sum_j Lambda_ij : d_j I1[B^{-1}]` against `d_i I1[tr ln B^{-1}]`
/// (with `B` replaced by `beta_delta(B)` when `delta` is given).
pub fn verify_chain_rule<T: Real>(
    b: &[SymMat2<T>; 3],
    map: &RefMapping<T>,
    delta: Option<T>,
) -> Result<ChainRuleCheck<T>> {
    let lam = assemble_lambda(b, map, delta)?;
    let ait = map.inv_transpose()?;
    let mut inv = [SymMat2::zero(); 3];
    let mut tl = [T::zero(); 3];
    for k in 0..3 {
        let c = cutoff(b[k], delta)?;
        inv[k] = c.inverse()?;
        tl[k] = -trace_log(c)?;
    }
    let grad_inv = p1_tensor_gradient(&ait, &inv);
    let grad_tl = p1_gradient(&ait, tl);
    // nodal magnitudes times the gradient operator: the size of the terms
    // before they cancel into differences
    let op = ait.iter().flatten().fold(T::zero(), |m, v| m.max(v.abs()));
    let mut lam_max = T::zero();
    for row in &lam.l {
        for m in row {
            lam_max = lam_max.max(m.norm());
        }
    }
    let mut scale = T::zero();
    for k in 0..3 {
        scale = scale.max(op * tl[k].abs()).max(op * lam_max * inv[k].norm());
    }
    let mut residual = T::zero();
    for i in 0..2 {
        let mut lhs = T::zero();
        let mut mag = T::zero();
        for j in 0..2 {
            lhs = lhs + lam.l[i][j].frob(grad_inv[j]);
            mag = mag + lam.l[i][j].norm() * grad_inv[j].norm();
        }
        residual = residual.max((lhs - grad_tl[i]).abs());
        scale = scale.max(mag).max(grad_tl[i].abs());
    }
    Ok(ChainRuleCheck { residual, scale })
}

/// Both sides of the element inequality
/// `-int_K grad B : grad I1[beta(B)^{-1}] >= 1/2 |grad I1 tr ln beta(B)|^2 |K|`.
pub fn nonobtuse_diffusion_sides<T: Real>(b: &[SymMat2<T>; 3], map: &RefMapping<T>, delta: T) -> Result<(T, T)> {
    let ait = map.inv_transpose()?;
    let area = map.det().abs() * lit(0.5);
    let mut inv = [SymMat2::zero(); 3];
    let mut tl = [T::zero(); 3];
    for k in 0..3 {
        let c = beta_delta(b[k], delta)?;
        inv[k] = c.inverse()?;
        tl[k] = trace_log(c)?;
    }
    let gb = p1_tensor_gradient(&ait, b);
    let gi = p1_tensor_gradient(&ait, &inv);
    let gt = p1_gradient(&ait, tl);
    let lhs = -(gb[0].frob(gi[0]) + gb[1].frob(gi[1])) * area;
    let rhs = lit::<T>(0.5) * (gt[0] * gt[0] + gt[1] * gt[1]) * area;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type M = SymMat2<f64>;

    fn spd() -> impl Strategy<Value = M> {
        (-2.0..2.0f64, -2.0..2.0f64, 0.0..3.2f64).prop_map(|(l1, l2, th)| {
            let (c, s) = (th.cos(), th.sin());
            let (e1, e2) = (l1.exp(), l2.exp());
            M::new(c * c * e1 + s * s * e2, c * s * (e1 - e2), s * s * e1 + c * c * e2)
        })
    }

    fn sym() -> impl Strategy<Value = M> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b, c)| M::new(a, b, c))
    }

    fn triangle() -> impl Strategy<Value = RefMapping<f64>> {
        prop::array::uniform3(prop::array::uniform2(-1.0..1.0f64))
            .prop_filter("non-degenerate", |p| {
                let m = RefMapping::from_vertices(*p);
                m.det().abs() > 1e-2
            })
            .prop_map(RefMapping::from_vertices)
    }

    #[test]
    fn equal_inputs_use_the_equal_branch() {
        let m = M::new(2.0, 0.3, 1.0);
        assert_eq!(lambda_hat(m, m, None).unwrap(), m);
        assert_eq!(lambda_coefficient(m, m, None).unwrap(), None);
    }

    #[test]
    fn multiples_of_identity_reduce_to_scalar_secant() {
        // 1D secant of -ln between 1 and 2
        let lam = 2.0 - 2.0 * 2f64.ln();
        let l = lambda_coefficient(M::identity(), M::identity() * 2.0, None).unwrap().unwrap();
        assert!((l - lam).abs() < 1e-14);
        let h = lambda_hat(M::identity(), M::identity() * 2.0, None).unwrap();
        assert!((h.a11 - (2.0 - lam)).abs() < 1e-14 && h.a12 == 0.0);
        assert!((h.a11 - h.a22).abs() < 1e-15);
    }

    #[test]
    fn regularized_path_accepts_indefinite_input() {
        let h = lambda_hat(M::diag(-1.0, 1.0), M::identity(), Some(0.5)).unwrap();
        assert!(h.is_finite());
        // the cut-off images are diag(0.5, 1) and I
        let l = lambda_coefficient(M::diag(-1.0, 1.0), M::identity(), Some(0.5)).unwrap().unwrap();
        let b0 = M::diag(0.5, 1.0);
        let expected = M::identity() + (b0 - M::identity()) * l;
        assert!((h - expected).max_abs() < 1e-15);
        assert!((0.0..=1.0).contains(&l));
        assert!(lambda_hat(M::diag(-1.0, 1.0), M::identity(), None).is_err());
    }

    #[test]
    fn constant_field_gives_kronecker_b() {
        let m = M::new(1.5, -0.2, 0.7);
        let map = RefMapping::from_vertices([[0.1, 0.0], [1.0, 0.3], [0.2, 0.9]]);
        let lam = assemble_lambda(&[m; 3], &map, None).unwrap();
        assert!((lam.l[0][0] - m).max_abs() < 1e-14);
        assert!((lam.l[1][1] - m).max_abs() < 1e-14);
        assert!(lam.l[0][1].max_abs() < 1e-14 && lam.l[1][0].max_abs() < 1e-14);
        let c = verify_chain_rule(&[m; 3], &map, None).unwrap();
        assert_eq!(c.residual, 0.0);
    }

    #[test]
    fn reference_mapping_keeps_hats_on_the_diagonal() {
        let map = RefMapping::from_vertices([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let b = [M::new(1.0, 0.1, 2.0), M::new(3.0, -0.4, 1.0), M::new(0.5, 0.0, 0.8)];
        let lam = assemble_lambda(&b, &map, None).unwrap();
        assert_eq!(lam.l[0][0], lambda_hat(b[0], b[1], None).unwrap());
        assert_eq!(lam.l[1][1], lambda_hat(b[0], b[2], None).unwrap());
        assert_eq!(lam.l[0][1], M::zero());
        assert_eq!(lam.l[1][0], M::zero());
    }

    #[test]
    fn lambda_converges_to_b_under_refinement() {
        let field = |x: f64, y: f64| M::new(1.0 + 0.5 * x * x, 0.3 * (x + y).sin(), 2.0 + y);
        let mut errs = vec![];
        for h in [0.1, 0.05, 0.025] {
            let p = [[0.3, 0.4], [0.3 + h, 0.4], [0.3, 0.4 + h]];
            let map = RefMapping::from_vertices(p);
            let b = [field(p[0][0], p[0][1]), field(p[1][0], p[1][1]), field(p[2][0], p[2][1])];
            let lam = assemble_lambda(&b, &map, None).unwrap();
            let c = field(0.3 + h / 3.0, 0.4 + h / 3.0);
            let mut e: f64 = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let target = if i == j { c } else { M::zero() };
                    e = e.max((lam.l[i][j] - target).max_abs());
                }
            }
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 1.7 && errs[1] / errs[2] > 1.7, "{errs:?}");
    }

    proptest! {
        #[test]
        fn chain_rule_holds(b in prop::array::uniform3(spd()), map in triangle()) {
            let c = verify_chain_rule(&b, &map, None).unwrap();
            prop_assert!(c.relative() < 1e-10, "{:?}", c);
        }

        #[test]
        fn chain_rule_holds_regularized(b in prop::array::uniform3(sym()), map in triangle()) {
            let c = verify_chain_rule(&b, &map, Some(0.1)).unwrap();
            prop_assert!(c.relative() < 1e-10, "{:?}", c);
        }

        #[test]
        fn lambda_in_unit_interval(b0 in spd(), bi in spd(), s0 in sym(), si in sym()) {
            if let Some(l) = lambda_coefficient(b0, bi, None).unwrap() {
                prop_assert!((0.0..=1.0).contains(&l));
            }
            if let Some(l) = lambda_coefficient(s0, si, Some(0.1)).unwrap() {
                prop_assert!((0.0..=1.0).contains(&l));
            }
        }

        #[test]
        fn lambda_depends_continuously(b in prop::array::uniform3(spd()), map in triangle()) {
            let eps = 1e-7;
            let base = assemble_lambda(&b, &map, None).unwrap();
            let mut pert = b;
            pert[1].a12 += eps;
            let moved = assemble_lambda(&pert, &map, None).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let slope = (moved.l[i][j] - base.l[i][j]).max_abs() / eps;
                    prop_assert!(slope < 1e4, "slope {}", slope);
                }
            }
        }
    }
}
