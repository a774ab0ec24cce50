//! Mappings of the punctured unit ball and their Jacobian matrices.
//!
//! A [`MappingSpec`] bundles a dimension, an evaluation rule and an optional
//! analytic Jacobian rule. Maps without an analytic rule fall back to central
//! finite differences with step `h = cbrt(eps) * max(|x|, 1)`, the accuracy
//! floor for user-supplied maps.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

type EvalRule = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacRule = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type ProfileRule = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A mapping of the punctured unit ball `0 < |x| < 1` into R^n.
///
/// Values are immutable after construction and safe to share across workers.
#[derive(Clone)]
pub struct MappingSpec {
    n: usize,
    label: String,
    params: Vec<(String, f64)>,
    eval: EvalRule,
    jac: Option<JacRule>,
    /// User-asserted: the map sends insides of spheres to insides of their
    /// images. Not verifiable pointwise; recorded for reporting only.
    preserves_ring_insides: bool,
    /// Present for radial stretchings; enables the closed-form dilatation
    /// fast path, which stays finite where the Jacobian entries underflow.
    radial_profile: Option<RadialProfile>,
}

impl fmt::Debug for MappingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MappingSpec")
            .field("n", &self.n)
            .field("label", &self.label)
            .field("params", &self.params)
            .field("analytic_jacobian", &self.jac.is_some())
            .finish()
    }
}

impl MappingSpec {
    pub fn new(
        n: usize,
        label: impl Into<String>,
        params: Vec<(String, f64)>,
        eval: EvalRule,
        jac: Option<JacRule>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::Argument(format!("dimension must be >= 2, got {n}")));
        }
        Ok(Self {
            n,
            label: label.into(),
            params,
            eval,
            jac,
            preserves_ring_insides: true,
            radial_profile: None,
        })
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    pub fn preserves_ring_insides(&self) -> bool {
        self.preserves_ring_insides
    }

    pub fn set_preserves_ring_insides(&mut self, flag: bool) {
        self.preserves_ring_insides = flag;
    }

    /// The radial profile, for radial stretchings.
    pub fn radial_profile(&self) -> Option<&RadialProfile> {
        self.radial_profile.as_ref()
    }
}

fn check_domain(map: &MappingSpec, x: &DVector<f64>) -> Result<f64> {
    if x.len() != map.n {
        return Err(Error::Argument(format!(
            "point has {} coordinates, map expects {}",
            x.len(),
            map.n
        )));
    }
    let norm = x.norm();
    if norm == 0.0 || norm >= 1.0 || !norm.is_finite() {
        return Err(Error::OutsideDomain { norm });
    }
    Ok(norm)
}

/// Evaluate `f(x)` for `0 < |x| < 1`.
pub fn evaluate(map: &MappingSpec, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_domain(map, x)?;
    let y = (map.eval)(x);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "evaluate" });
    }
    Ok(y)
}

/// Finite-difference step for a point in the open unit ball.
fn fd_step(x: &DVector<f64>) -> f64 {
    f64::EPSILON.cbrt() * x.norm().max(1.0)
}

/// Jacobian matrix `f'(x)`, analytic when the map carries a rule,
/// otherwise central differences per coordinate.
pub fn jacobian(map: &MappingSpec, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_domain(map, x)?;
    let j = match &map.jac {
        Some(rule) => rule(x),
        None => finite_difference_jacobian(map, x)?,
    };
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "jacobian" });
    }
    Ok(j)
}

/// Central-difference Jacobian, independent of any analytic rule.
pub fn finite_difference_jacobian(map: &MappingSpec, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = map.n;
    let h = fd_step(x);
    let mut j = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    let mut xm = x.clone();
    for col in 0..n {
        xp[col] = x[col] + h;
        xm[col] = x[col] - h;
        let fp = evaluate(map, &xp)?;
        let fm = evaluate(map, &xm)?;
        for row in 0..n {
            j[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
        }
        xp[col] = x[col];
        xm[col] = x[col];
    }
    Ok(j)
}

/// Radial profile t -> Phi(t), strictly increasing, with its derivative.
#[derive(Clone)]
pub struct RadialProfile {
    phi: ProfileRule,
    dphi: ProfileRule,
    /// Optional closed form of the stretch ratio t Phi'(t)/Phi(t); avoids
    /// 0/0 when Phi itself underflows near the puncture (e.g. e^{1-1/t}).
    stretch: Option<ProfileRule>,
}

impl RadialProfile {
    pub fn new(phi: ProfileRule, dphi: ProfileRule) -> Self {
        Self {
            phi,
            dphi,
            stretch: None,
        }
    }

    /// Attach an analytic stretch-ratio rule t -> t Phi'(t)/Phi(t).
    pub fn with_stretch(mut self, stretch: ProfileRule) -> Self {
        self.stretch = Some(stretch);
        self
    }

    /// The stretch ratio t Phi'(t)/Phi(t), computed stably when a closed
    /// form is attached.
    pub fn stretch_ratio(&self, t: f64) -> f64 {
        match &self.stretch {
            Some(rule) => rule(t),
            None => t * self.dphi(t) / self.phi(t),
        }
    }

    pub fn phi(&self, t: f64) -> f64 {
        (self.phi)(t)
    }

    pub fn dphi(&self, t: f64) -> f64 {
        (self.dphi)(t)
    }

    /// Spot-check monotonicity of Phi on a grid over (lo, hi).
    pub fn check_increasing(&self, lo: f64, hi: f64, samples: usize) -> bool {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..samples {
            let t = lo + (hi - lo) * (i as f64 + 0.5) / samples as f64;
            let v = self.phi(t);
            if !(v > prev) {
                return false;
            }
            prev = v;
        }
        true
    }

    /// Profile of the cavitating stretching: Phi(t) = (1 + t^alpha) / 2.
    pub fn f1(alpha: f64) -> Result<Self> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::Argument(format!(
                "f1 requires 0 < alpha < 1, got {alpha}"
            )));
        }
        Ok(Self::new(
            Arc::new(move |t: f64| 0.5 * (1.0 + t.powf(alpha))),
            Arc::new(move |t: f64| 0.5 * alpha * t.powf(alpha - 1.0)),
        )
        .with_stretch(Arc::new(move |t: f64| {
            let ta = t.powf(alpha);
            alpha * ta / (1.0 + ta)
        })))
    }

    /// Profile of the non-cavitating stretching: Phi(t) = t e^{1 - 1/t}.
    pub fn f2() -> Self {
        Self::new(
            Arc::new(|t: f64| t * (1.0 - 1.0 / t).exp()),
            Arc::new(|t: f64| (1.0 - 1.0 / t).exp() * (1.0 + 1.0 / t)),
        )
        .with_stretch(Arc::new(|t: f64| 1.0 + 1.0 / t))
    }

    /// Identity profile Phi(t) = t.
    pub fn identity() -> Self {
        Self::new(Arc::new(|t| t), Arc::new(|_| 1.0)).with_stretch(Arc::new(|_| 1.0))
    }
}

/// Radial stretching x -> Phi(|x|) x / |x| with the diagonal-structure
/// Jacobian `Phi'(t) u u^T + (Phi(t)/t)(I - u u^T)`.
pub fn radial_map(n: usize, profile: RadialProfile, label: impl Into<String>) -> Result<MappingSpec> {
    let p_eval = profile.clone();
    let p_keep = profile.clone();
    let p_jac = profile;
    let eval: EvalRule = Arc::new(move |x: &DVector<f64>| {
        let t = x.norm();
        x * (p_eval.phi(t) / t)
    });
    let jac: JacRule = Arc::new(move |x: &DVector<f64>| {
        let n = x.len();
        let t = x.norm();
        let u = x / t;
        let dphi = p_jac.dphi(t);
        let phi_over_t = p_jac.phi(t) / t;
        let mut j = DMatrix::identity(n, n) * phi_over_t;
        for row in 0..n {
            for col in 0..n {
                j[(row, col)] += (dphi - phi_over_t) * u[row] * u[col];
            }
        }
        j
    });
    let mut map = MappingSpec::new(n, label, vec![], eval, Some(jac))?;
    map.radial_profile = Some(p_keep);
    Ok(map)
}

fn identity_map(n: usize) -> Result<MappingSpec> {
    let eval: EvalRule = Arc::new(|x: &DVector<f64>| x.clone());
    let jac: JacRule = Arc::new(|x: &DVector<f64>| DMatrix::identity(x.len(), x.len()));
    MappingSpec::new(n, "identity", vec![], eval, Some(jac))
}

fn scaling_map(n: usize, c: f64) -> Result<MappingSpec> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Argument(format!("scaling requires c > 0, got {c}")));
    }
    let eval: EvalRule = Arc::new(move |x: &DVector<f64>| x * c);
    let jac: JacRule = Arc::new(move |x: &DVector<f64>| DMatrix::identity(x.len(), x.len()) * c);
    MappingSpec::new(n, "scaling", vec![("c".into(), c)], eval, Some(jac))
}

/// The quick rotation acting on z = x1 + i x2 by z -> z e^{2 i log |z|},
/// leaving the remaining coordinates fixed. On the axis |z| = 0 the rotation
/// angle is undefined; the map extends by the identity there.
fn quick_rotation_map(n: usize) -> Result<MappingSpec> {
    let eval: EvalRule = Arc::new(|x: &DVector<f64>| {
        let mut y = x.clone();
        let (x1, x2) = (x[0], x[1]);
        let s = (x1 * x1 + x2 * x2).sqrt();
        if s > 0.0 {
            let theta = 2.0 * s.ln();
            let (sin, cos) = theta.sin_cos();
            y[0] = cos * x1 - sin * x2;
            y[1] = sin * x1 + cos * x2;
        }
        y
    });
    // J = R(theta) (I2 + 2 S w w^T) on the z-plane, identity elsewhere,
    // with w the unit z-direction and S the quarter-turn matrix.
    let jac: JacRule = Arc::new(|x: &DVector<f64>| {
        let n = x.len();
        let mut j = DMatrix::identity(n, n);
        let (x1, x2) = (x[0], x[1]);
        let s = (x1 * x1 + x2 * x2).sqrt();
        if s > 0.0 {
            let (w1, w2) = (x1 / s, x2 / s);
            // I2 + 2 S w w^T, S = [[0,-1],[1,0]]
            let b11 = 1.0 - 2.0 * w2 * w1;
            let b12 = -2.0 * w2 * w2;
            let b21 = 2.0 * w1 * w1;
            let b22 = 1.0 + 2.0 * w1 * w2;
            let theta = 2.0 * s.ln();
            let (sin, cos) = theta.sin_cos();
            j[(0, 0)] = cos * b11 - sin * b21;
            j[(0, 1)] = cos * b12 - sin * b22;
            j[(1, 0)] = sin * b11 + cos * b21;
            j[(1, 1)] = sin * b12 + cos * b22;
        }
        j
    });
    MappingSpec::new(n, "f3", vec![], eval, Some(jac))
}

fn get_param(params: &[(String, f64)], key: &str) -> Option<f64> {
    params.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
}

/// Look up a catalog map by name.
///
/// Names: `identity`, `scaling` (param `c`), `f1` (param `alpha` in (0,1)),
/// `f2`, `f3`.
pub fn catalog_get(name: &str, n: usize, params: &[(String, f64)]) -> Result<MappingSpec> {
    match name {
        "identity" => identity_map(n),
        "scaling" => scaling_map(n, get_param(params, "c").unwrap_or(1.0)),
        "f1" => {
            let alpha = get_param(params, "alpha")
                .ok_or_else(|| Error::Argument("f1 requires parameter alpha".into()))?;
            let mut map = radial_map(n, RadialProfile::f1(alpha)?, "f1")?;
            map.params = vec![("alpha".into(), alpha)];
            Ok(map)
        }
        "f2" => radial_map(n, RadialProfile::f2(), "f2"),
        "f3" => quick_rotation_map(n),
        "radial" => Err(Error::Argument(
            "radial maps are constructed via `radial_map` with an explicit profile".into(),
        )),
        other => Err(Error::UnknownMap(other.into())),
    }
}

/// Names accepted by [`catalog_get`], with a short description each.
pub fn catalog_list() -> Vec<(&'static str, &'static str)> {
    vec![
        ("identity", "x -> x"),
        ("scaling", "x -> c x (param c > 0, default 1)"),
        (
            "f1",
            "x -> (1 + |x|^alpha) x / (2|x|), cavitating radial stretching (param alpha in (0,1))",
        ),
        ("f2", "x -> x e^{1 - 1/|x|}, non-cavitating radial stretching"),
        ("f3", "quick rotation z -> z e^{2 i log |z|} on the first two coordinates"),
    ]
}

/// Conjugate a map by a rotation: `A . f . A^{-1}` with Jacobian
/// `A f'(A^{-1} x) A^T`.
pub fn conjugate_rotation(map: &MappingSpec, a: &DMatrix<f64>) -> Result<MappingSpec> {
    let n = map.n;
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Argument(format!(
            "rotation matrix is {}x{}, map dimension is {n}",
            a.nrows(),
            a.ncols()
        )));
    }
    let gram = a.transpose() * a;
    let ortho_defect = (&gram - DMatrix::identity(n, n)).abs().max();
    if ortho_defect > 1e-12 {
        return Err(Error::Argument(format!(
            "matrix is not orthogonal (defect {ortho_defect:.3e})"
        )));
    }
    let det = a.clone().lu().determinant();
    if (det - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "matrix is not in SO(n) (det = {det})"
        )));
    }

    let inner = map.clone();
    let (a_eval, at_eval) = (a.clone(), a.transpose());
    let eval: EvalRule = Arc::new(move |x: &DVector<f64>| {
        let pre = &at_eval * x;
        &a_eval * (inner.eval)(&pre)
    });
    let inner_jac = map.clone();
    let (a_jac, at_jac) = (a.clone(), a.transpose());
    let jac: JacRule = Arc::new(move |x: &DVector<f64>| {
        let pre = &at_jac * x;
        let j = match &inner_jac.jac {
            Some(rule) => rule(&pre),
            None => finite_difference_jacobian(&inner_jac, &pre)
                .expect("finite-difference jacobian inside conjugation"),
        };
        &a_jac * j * &at_jac
    });
    let mut conj = MappingSpec::new(
        n,
        format!("conj({})", map.label),
        map.params.clone(),
        eval,
        Some(jac),
    )?;
    // a radial stretching conjugated by a rotation is the same map
    conj.radial_profile = map.radial_profile.clone();
    Ok(conj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn pt(coords: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(coords)
    }

    #[test]
    fn identity_evaluates_to_itself() {
        let map = catalog_get("identity", 3, &[]).unwrap();
        let x = dvector![0.3, 0.0, 0.0];
        assert_eq!(evaluate(&map, &x).unwrap(), x);
        assert_eq!(jacobian(&map, &x).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn f1_hand_evaluated_point() {
        let map = catalog_get("f1", 3, &[("alpha".into(), 0.5)]).unwrap();
        let y = evaluate(&map, &pt(&[0.25, 0.0, 0.0])).unwrap();
        assert_relative_eq!(y[0], 0.75, max_relative = 1e-14);
        assert_relative_eq!(y[1], 0.0);
        assert_relative_eq!(y[2], 0.0);
    }

    #[test]
    fn f2_hand_evaluated_point() {
        let map = catalog_get("f2", 3, &[]).unwrap();
        let y = evaluate(&map, &pt(&[0.5, 0.0, 0.0])).unwrap();
        assert_relative_eq!(y[0], 0.5 * (-1.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn f1_jacobian_on_axis_is_diagonal() {
        // Phi'(t) = alpha t^{alpha-1}/2 = 0.5, Phi(t)/t = 3 at t = 0.25, alpha = 1/2.
        let map = catalog_get("f1", 3, &[("alpha".into(), 0.5)]).unwrap();
        let j = jacobian(&map, &pt(&[0.25, 0.0, 0.0])).unwrap();
        let expected = DMatrix::from_diagonal(&dvector![0.5, 3.0, 3.0]);
        assert_relative_eq!(j, expected, max_relative = 1e-13);
    }

    #[test]
    fn f3_on_real_axis() {
        let map = catalog_get("f3", 3, &[]).unwrap();
        let (r, x3) = (0.4, 0.2);
        let y = evaluate(&map, &pt(&[r, 0.0, x3])).unwrap();
        let theta = 2.0 * r.ln();
        assert_relative_eq!(y[0], r * theta.cos(), max_relative = 1e-14);
        assert_relative_eq!(y[1], r * theta.sin(), max_relative = 1e-14);
        assert_relative_eq!(y[2], x3);
    }

    #[test]
    fn domain_errors() {
        let map = catalog_get("identity", 2, &[]).unwrap();
        assert!(matches!(
            evaluate(&map, &dvector![0.0, 0.0]),
            Err(Error::OutsideDomain { .. })
        ));
        assert!(matches!(
            evaluate(&map, &dvector![1.0, 0.0]),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn f1_rejects_out_of_range_alpha() {
        assert!(catalog_get("f1", 3, &[("alpha".into(), 1.5)]).is_err());
        assert!(catalog_get("f1", 3, &[("alpha".into(), 0.0)]).is_err());
    }

    #[test]
    fn scaling_jacobian() {
        let map = catalog_get("scaling", 4, &[("c".into(), 2.5)]).unwrap();
        let x = pt(&[0.1, 0.2, -0.1, 0.05]);
        let j = jacobian(&map, &x).unwrap();
        assert_relative_eq!(j, DMatrix::identity(4, 4) * 2.5);
    }

    #[test]
    fn fd_jacobian_matches_analytic_for_catalog_maps() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let maps = [
            catalog_get("f1", 3, &[("alpha".into(), 0.5)]).unwrap(),
            catalog_get("f2", 3, &[]).unwrap(),
            catalog_get("f3", 3, &[]).unwrap(),
            catalog_get("f2", 2, &[]).unwrap(),
        ];
        for map in &maps {
            let n = map.dimension();
            let mut worst: f64 = 0.0;
            let mut tried = 0;
            while tried < 1000 {
                let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                let norm = x.norm();
                if !(0.05..0.95).contains(&norm) {
                    continue;
                }
                tried += 1;
                let ja = jacobian(map, &x).unwrap();
                let jf = finite_difference_jacobian(map, &x).unwrap();
                let scale = ja.abs().max().max(1e-300);
                worst = worst.max((&ja - &jf).abs().max() / scale);
            }
            assert!(
                worst < 1e-6,
                "map {} worst FD relative error {worst:.3e}",
                map.label()
            );
        }
    }

    #[test]
    fn conjugation_consistency() {
        use crate::quadrature::random_rotation;
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let map = catalog_get("f3", 3, &[]).unwrap();
        for _ in 0..20 {
            let a = random_rotation(3, &mut rng);
            let conj = conjugate_rotation(&map, &a).unwrap();
            let x = loop {
                let x = DVector::from_fn(3, |_, _| rng.gen_range(-0.6..0.6));
                let nrm = x.norm();
                if nrm > 0.1 && nrm < 0.9 {
                    break x;
                }
            };
            let ax = &a * &x;
            // evaluations: conj(Ax) = A f(x)
            let lhs = evaluate(&conj, &ax).unwrap();
            let rhs = &a * evaluate(&map, &x).unwrap();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
            // jacobians: conj'(Ax) = A f'(x) A^T
            let jl = jacobian(&conj, &ax).unwrap();
            let jr = &a * jacobian(&map, &x).unwrap() * a.transpose();
            assert!((jl - jr).abs().max() < 1e-9);
        }
    }

    #[test]
    fn conjugation_rejects_non_orthogonal() {
        let map = catalog_get("identity", 2, &[]).unwrap();
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(conjugate_rotation(&map, &bad).is_err());
    }

    #[test]
    fn radial_profile_monotone_check() {
        assert!(RadialProfile::f1(0.5).unwrap().check_increasing(0.01, 0.99, 64));
        assert!(RadialProfile::f2().check_increasing(0.01, 0.99, 64));
    }
}
