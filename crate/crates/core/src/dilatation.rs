//! Pointwise dilatations from a Jacobian matrix and a reference direction.
//!
//! Closed forms: the outer/inner dilatations K and L come from the extreme
//! singular values, the angular dilatation D uses the dual-norm identity
//! `ell = 1 / |J^{-T} u|`, and the normal dilatation Q uses the radial
//! stretch `|J u|`. The dual dilatation T has no general closed form and is
//! estimated by multi-start ascent over the unit sphere; a brute-force grid
//! oracle validates the closed forms independently.

use nalgebra::{DMatrix, DVector};

use crate::mapping::RadialProfile;
use crate::{Error, Result};

/// det J floor and condition-number ceiling for calling a point regular.
pub const DET_FLOOR: f64 = 1e-300;
pub const COND_CEILING: f64 = 1e12;

/// All pointwise dilatations at one point.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DilatationSample {
    /// Outer dilatation, >= 1 at regular points.
    pub k: f64,
    /// Inner dilatation, >= 1 at regular points.
    pub l: f64,
    /// Angular dilatation with respect to the origin.
    pub d: f64,
    /// Normal dilatation with respect to the origin.
    pub q: f64,
    /// Dual dilatation (best-effort estimate), when computed.
    pub t: Option<f64>,
    /// Jacobian determinant.
    pub det_j: f64,
    /// det J > 0, finite entries, condition number below the ceiling.
    pub regular: bool,
}

/// Brute-force min/max of the directional stretch quotients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalExtremes {
    /// min over the grid of |J h| / |h . u|.
    pub ell: f64,
    /// max over the grid of |J h| * |h . u|.
    pub cal_l: f64,
}

/// Result of the dual-dilatation ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualEstimate {
    pub value: f64,
    /// False when no restart converged; the value is then only a lower bound.
    pub converged: bool,
}

fn check_finite(j: &DMatrix<f64>) -> Result<()> {
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "dilatation" });
    }
    Ok(())
}

/// Singular values of J in ascending order.
pub fn singular_values(j: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(j)?;
    let mut sv: Vec<f64> = j.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(sv)
}

fn det(j: &DMatrix<f64>) -> f64 {
    j.clone().lu().determinant()
}

/// Outer and inner dilatations (K, L) = (sigma_max^n / det J, det J / sigma_min^n).
pub fn classical_dilatations(j: &DMatrix<f64>) -> Result<(f64, f64)> {
    let sv = singular_values(j)?;
    let n = j.nrows();
    let dj = det(j);
    if dj <= 0.0 {
        return Err(Error::Irregular(format!("det J = {dj} <= 0")));
    }
    let smin = sv[0];
    let smax = sv[n - 1];
    Ok((smax.powi(n as i32) / dj, dj / smin.powi(n as i32)))
}

fn solve_transpose(j: &DMatrix<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    j.transpose()
        .lu()
        .solve(u)
        .ok_or_else(|| Error::Irregular("singular Jacobian in J^{-T} u".into()))
}

/// Angular dilatation D = det J * |J^{-T} u|^n (via ell = 1 / |J^{-T} u|).
pub fn angular_dilatation(j: &DMatrix<f64>, u: &DVector<f64>) -> Result<f64> {
    check_finite(j)?;
    let dj = det(j);
    if dj <= 0.0 {
        return Err(Error::Irregular(format!("det J = {dj} <= 0")));
    }
    let y = solve_transpose(j, u)?;
    Ok(dj * y.norm().powi(j.nrows() as i32))
}

/// Normal dilatation Q = (|J u|^n / det J)^{1/(n-1)}.
pub fn normal_dilatation(j: &DMatrix<f64>, u: &DVector<f64>) -> Result<f64> {
    check_finite(j)?;
    let n = j.nrows();
    let dj = det(j);
    if dj <= 0.0 {
        return Err(Error::Irregular(format!("det J = {dj} <= 0")));
    }
    let stretch = (j * u).norm();
    Ok((stretch.powi(n as i32) / dj).powf(1.0 / (n as f64 - 1.0)))
}

/// Quasi-uniform deterministic sphere grid used by the brute-force oracle
/// and as seeds for the dual-dilatation ascent.
pub fn direction_grid(n: usize, level: u32) -> Vec<DVector<f64>> {
    match n {
        2 => {
            let m = (1usize << level) * 64;
            (0..m)
                .map(|i| {
                    let a = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                    DVector::from_column_slice(&[a.cos(), a.sin()])
                })
                .collect()
        }
        3 => {
            // Fibonacci sphere
            let m = (1usize << level) * 256;
            let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
            (0..m)
                .map(|i| {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / m as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
                    DVector::from_column_slice(&[rho * phi.cos(), rho * phi.sin(), z])
                })
                .collect()
        }
        _ => {
            use rand::prelude::*;
            use rand_distr::StandardNormal;
            let m = (1usize << level) * 512;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5EED ^ level as u64);
            (0..m)
                .map(|_| {
                    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let nrm = v.norm();
                    v / nrm
                })
                .collect()
        }
    }
}

/// Orthonormal tangent basis of the sphere at h (n-1 vectors).
fn tangent_basis(h: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = h.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v -= h * h.dot(&v);
        for b in &basis {
            let d = b.dot(&v);
            v -= b * d;
        }
        let nrm = v.norm();
        if nrm > 1e-8 {
            basis.push(v / nrm);
        }
        if basis.len() == n - 1 {
            break;
        }
    }
    basis
}

/// Deterministic local refinement on the sphere: shrinking coordinate steps
/// along a tangent frame from a grid-scan starting point.
fn polish_on_sphere<F: Fn(&DVector<f64>) -> f64>(
    obj: &F,
    start: &DVector<f64>,
    maximize: bool,
    init_step: f64,
) -> f64 {
    let sign = if maximize { 1.0 } else { -1.0 };
    let mut h = start.clone();
    let mut best = sign * obj(&h);
    let mut step = init_step;
    for _ in 0..60 {
        let mut moved = false;
        for b in tangent_basis(&h) {
            for dir in [1.0, -1.0] {
                let cand = {
                    let v = &h + &b * (dir * step);
                    let nrm = v.norm();
                    v / nrm
                };
                let val = sign * obj(&cand);
                if val > best {
                    best = val;
                    h = cand;
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
            if step < 1e-9 {
                break;
            }
        }
    }
    sign * best
}

/// Grid-plus-polish oracle for ell and cal L; independent of the closed
/// forms above.
pub fn brute_force_directional(
    j: &DMatrix<f64>,
    u: &DVector<f64>,
    grid_level: u32,
) -> Result<DirectionalExtremes> {
    check_finite(j)?;
    let n = j.nrows();
    let ell_obj = |h: &DVector<f64>| {
        let dot = h.dot(u).abs();
        if dot > 1e-12 {
            (j * h).norm() / dot
        } else {
            f64::INFINITY
        }
    };
    let cal_obj = |h: &DVector<f64>| (j * h).norm() * h.dot(u).abs();
    let grid = direction_grid(n, grid_level);
    let mut ell_arg = u.clone();
    let mut ell = ell_obj(u);
    let mut cal_arg = u.clone();
    let mut cal_l = cal_obj(u);
    for h in &grid {
        let e = ell_obj(h);
        if e < ell {
            ell = e;
            ell_arg = h.clone();
        }
        let c = cal_obj(h);
        if c > cal_l {
            cal_l = c;
            cal_arg = h.clone();
        }
    }
    // covering radius of the grid, used as the initial polish step
    let step = (4.0 / (grid.len() as f64).sqrt()).min(0.3);
    Ok(DirectionalExtremes {
        ell: polish_on_sphere(&ell_obj, &ell_arg, false, step),
        cal_l: polish_on_sphere(&cal_obj, &cal_arg, true, step),
    })
}

/// Dual dilatation T = (cal L^n / det J)^{1/(n-1)}, with cal L maximized by
/// projected-gradient ascent of F(h) = (h^T J^T J h)(u.h)^2 from multiple
/// seeds. The result is a certified lower estimate only.
pub fn dual_dilatation(j: &DMatrix<f64>, u: &DVector<f64>, restarts: usize) -> Result<DualEstimate> {
    check_finite(j)?;
    let n = j.nrows();
    let dj = det(j);
    if dj <= 0.0 {
        return Err(Error::Irregular(format!("det J = {dj} <= 0")));
    }
    let a = j.transpose() * j;
    let f = |h: &DVector<f64>| -> f64 {
        let q = (h.transpose() * &a * h)[(0, 0)];
        let c = h.dot(u);
        q * c * c
    };

    // seeds: coarse grid top candidates plus u itself
    let mut seeds: Vec<(f64, DVector<f64>)> = direction_grid(n, 2)
        .into_iter()
        .map(|h| (f(&h), h))
        .collect();
    seeds.push((f(u), u.clone()));
    seeds.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    seeds.truncate(restarts.max(1));

    let mut best = 0.0f64;
    let mut any_converged = false;
    for (_, seed) in seeds {
        let mut h = seed;
        let mut val = f(&h);
        let mut step = 0.1;
        let mut converged = false;
        for _ in 0..200 {
            // gradient of F on the sphere
            let ah = &a * &h;
            let c = h.dot(u);
            let q = h.dot(&ah);
            let grad = ah * (2.0 * c * c) + u * (2.0 * q * c);
            let mut advanced = false;
            for _ in 0..30 {
                let cand = &h + &grad * step;
                let cand = &cand / cand.norm();
                let cv = f(&cand);
                if cv > val {
                    h = cand;
                    val = cv;
                    advanced = true;
                    step *= 1.5;
                    break;
                }
                step *= 0.5;
            }
            if !advanced {
                converged = true;
                break;
            }
        }
        any_converged |= converged;
        best = best.max(val);
    }
    let cal_l = best.sqrt();
    Ok(DualEstimate {
        value: (cal_l.powi(n as i32) / dj).powf(1.0 / (n as f64 - 1.0)),
        converged: any_converged,
    })
}

/// Full sample from a Jacobian and the radial direction u = x/|x|.
/// T is filled only when `with_dual` is set.
pub fn sample(j: &DMatrix<f64>, u: &DVector<f64>, with_dual: bool) -> Result<DilatationSample> {
    check_finite(j)?;
    let sv = singular_values(j)?;
    let n = j.nrows();
    let dj = det(j);
    let regular = dj > DET_FLOOR && sv[0] > 0.0 && sv[n - 1] / sv[0] < COND_CEILING;
    if !regular {
        return Err(Error::Irregular(format!(
            "det J = {dj:.3e}, condition = {:.3e}",
            if sv[0] > 0.0 { sv[n - 1] / sv[0] } else { f64::INFINITY }
        )));
    }
    let (k, l) = classical_dilatations(j)?;
    let d = angular_dilatation(j, u)?;
    let q = normal_dilatation(j, u)?;
    let t = if with_dual {
        Some(dual_dilatation(j, u, 8)?.value)
    } else {
        None
    };
    Ok(DilatationSample {
        k,
        l,
        d,
        q,
        t,
        det_j: dj,
        regular: true,
    })
}

/// Closed-form dilatations of a radial stretching at radius t.
pub fn radial_oracle(profile: &RadialProfile, t: f64, n: usize) -> Result<DilatationSample> {
    if !(0.0 < t && t < 1.0) {
        return Err(Error::Argument(format!("radius t = {t} outside (0,1)")));
    }
    let nf = n as f64;
    // the stretch ratio stays finite even where Phi itself underflows
    let q = profile.stretch_ratio(t);
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::Irregular(format!(
            "radial profile with stretch ratio {q} at t = {t}"
        )));
    }
    let d = q.powf(1.0 - nf);
    let k = q.powf(nf - 1.0).max(q.recip());
    let l = q.powf(1.0 - nf).max(q);
    let t_dual = if q >= std::f64::consts::FRAC_1_SQRT_2 {
        q
    } else {
        (2.0 * (1.0 - q * q).sqrt()).powf(nf / (1.0 - nf)) * q.powf(1.0 / (1.0 - nf))
    };
    // informational only; may underflow to 0 where Phi does
    let det_j = profile.dphi(t) * (profile.phi(t) / t).powf(nf - 1.0);
    Ok(DilatationSample {
        k,
        l,
        d,
        q,
        t: Some(t_dual),
        det_j,
        regular: true,
    })
}

/// Slack check for the chain K^{-1} <= L^{1/(1-n)} <= D^{1/(1-n)} <= Q
/// <= [T <=] K^{1/(n-1)} <= L. Returns the worst violation (<= 0 when the
/// chain holds).
pub fn chain_violation(s: &DilatationSample, n: usize) -> f64 {
    let nf = n as f64;
    let mut seq = vec![
        s.k.recip(),
        s.l.powf(1.0 / (1.0 - nf)),
        s.d.powf(1.0 / (1.0 - nf)),
        s.q,
    ];
    if let Some(t) = s.t {
        seq.push(t);
    }
    seq.push(s.k.powf(1.0 / (nf - 1.0)));
    seq.push(s.l);
    seq.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{self, catalog_get};
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::prelude::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn singular_values_of_diagonal() {
        let sv = singular_values(&diag(&[0.5, 3.0, 3.0])).unwrap();
        assert_relative_eq!(sv[0], 0.5);
        assert_relative_eq!(sv[1], 3.0);
        assert_relative_eq!(sv[2], 3.0);
    }

    #[test]
    fn classical_for_identity_and_f1() {
        let (k, l) = classical_dilatations(&DMatrix::identity(3, 3)).unwrap();
        assert_relative_eq!(k, 1.0);
        assert_relative_eq!(l, 1.0);

        // f1 with alpha = 1/2 at t = 0.25: J = diag(0.5, 3, 3),
        // K = (1 + t^{-alpha})/alpha = 6, L = K^{n-1} = 36.
        let (k, l) = classical_dilatations(&diag(&[0.5, 3.0, 3.0])).unwrap();
        assert_relative_eq!(k, 6.0, max_relative = 1e-12);
        assert_relative_eq!(l, 36.0, max_relative = 1e-12);
    }

    #[test]
    fn classical_for_quick_rotation() {
        let map = catalog_get("f3", 3, &[]).unwrap();
        let j = mapping::jacobian(&map, &dvector![0.3, 0.2, 0.4]).unwrap();
        let (k, l) = classical_dilatations(&j).unwrap();
        let expect = (2.0f64.sqrt() + 1.0).powi(3);
        assert_relative_eq!(k, expect, max_relative = 1e-12);
        assert_relative_eq!(l, expect, max_relative = 1e-12);
    }

    #[test]
    fn angular_normal_for_f1_axis_point() {
        let j = diag(&[0.5, 3.0, 3.0]);
        let u = dvector![1.0, 0.0, 0.0];
        // tPhi'/Phi = 1/6 at t = 0.25, alpha = 1/2
        assert_relative_eq!(angular_dilatation(&j, &u).unwrap(), 36.0, max_relative = 1e-12);
        assert_relative_eq!(normal_dilatation(&j, &u).unwrap(), 1.0 / 6.0, max_relative = 1e-12);
    }

    #[test]
    fn angular_dilatation_of_quick_rotation_is_one() {
        let map = catalog_get("f3", 3, &[]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = DVector::from_fn(3, |_, _| rng.gen_range(-0.5..0.5));
            if x.norm() < 0.05 || x.norm() > 0.95 {
                continue;
            }
            let u = &x / x.norm();
            let j = mapping::jacobian(&map, &x).unwrap();
            assert_relative_eq!(angular_dilatation(&j, &u).unwrap(), 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn normal_dilatation_of_quick_rotation() {
        // Q_f3 = (1 + 4 q^2)^{n/2(n-1)} with q the transverse part
        // (u1^2 + u2^2)^{1/2} of the unit radial vector.
        let map = catalog_get("f3", 3, &[]).unwrap();
        let x = dvector![0.3, 0.1, 0.2];
        let u = &x / x.norm();
        let j = mapping::jacobian(&map, &x).unwrap();
        let q2 = u[0] * u[0] + u[1] * u[1];
        let expect = (1.0 + 4.0 * q2).powf(3.0 / 4.0);
        assert_relative_eq!(normal_dilatation(&j, &u).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn dual_identity_is_one() {
        let est = dual_dilatation(&DMatrix::identity(3, 3), &dvector![0.0, 0.0, 1.0], 4).unwrap();
        assert_relative_eq!(est.value, 1.0, max_relative = 1e-9);
        assert!(est.converged);
    }

    #[test]
    fn dual_matches_radial_piecewise_formula() {
        // f1 (alpha = 1/2, t = 0.25, n = 3): Q = 1/6 < 1/sqrt(2), so
        // T = (2 sqrt(1 - Q^2))^{n/(1-n)} Q^{1/(1-n)}.
        let j = diag(&[0.5, 3.0, 3.0]);
        let u = dvector![1.0, 0.0, 0.0];
        let q: f64 = 1.0 / 6.0;
        let expect = (2.0 * (1.0 - q * q).sqrt()).powf(3.0 / -2.0) * q.powf(-0.5);
        assert_relative_eq!(expect, 0.88451, max_relative = 1e-4);
        let est = dual_dilatation(&j, &u, 8).unwrap();
        assert_relative_eq!(est.value, expect, max_relative = 1e-6);
    }

    #[test]
    fn radial_oracle_identity_profile() {
        let s = radial_oracle(&RadialProfile::identity(), 0.4, 3).unwrap();
        for v in [s.k, s.l, s.d, s.q, s.t.unwrap()] {
            assert_relative_eq!(v, 1.0);
        }
    }

    #[test]
    fn radial_oracle_f1_and_f2() {
        let s = radial_oracle(&RadialProfile::f1(0.5).unwrap(), 0.25, 3).unwrap();
        assert_relative_eq!(s.d, 36.0, max_relative = 1e-12);
        assert_relative_eq!(s.q, 1.0 / 6.0, max_relative = 1e-12);
        assert_relative_eq!(s.k, 6.0, max_relative = 1e-12);
        assert_relative_eq!(s.l, 36.0, max_relative = 1e-12);

        for t in [0.2, 0.5, 0.8] {
            let s = radial_oracle(&RadialProfile::f2(), t, 3).unwrap();
            let q = 1.0 + 1.0 / t;
            assert_relative_eq!(s.q, q, max_relative = 1e-12);
            assert_relative_eq!(s.d, q.powi(-2), max_relative = 1e-12);
        }
    }

    #[test]
    fn radial_oracle_matches_generic_path() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let cases = [
            ("f1", catalog_get("f1", 3, &[("alpha".into(), 0.5)]).unwrap(), RadialProfile::f1(0.5).unwrap()),
            ("f2", catalog_get("f2", 3, &[]).unwrap(), RadialProfile::f2()),
        ];
        for (name, map, profile) in &cases {
            for _ in 0..100 {
                let t = rng.gen_range(0.05..0.95);
                let mut u = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0f64));
                if u.norm() < 1e-3 {
                    u = dvector![1.0, 0.0, 0.0];
                }
                u /= u.norm();
                let x = &u * t;
                let j = mapping::jacobian(map, &x).unwrap();
                let oracle = radial_oracle(profile, t, 3).unwrap();
                assert_relative_eq!(
                    angular_dilatation(&j, &u).unwrap(),
                    oracle.d,
                    max_relative = 1e-8
                );
                assert_relative_eq!(
                    normal_dilatation(&j, &u).unwrap(),
                    oracle.q,
                    max_relative = 1e-8
                );
                let (k, l) = classical_dilatations(&j).unwrap();
                assert_relative_eq!(k, oracle.k, max_relative = 1e-8);
                assert_relative_eq!(l, oracle.l, max_relative = 1e-8);
                let _ = name;
            }
        }
    }

    #[test]
    fn brute_force_identity() {
        let ext = brute_force_directional(
            &DMatrix::identity(3, 3),
            &dvector![1.0, 0.0, 0.0],
            3,
        )
        .unwrap();
        assert_relative_eq!(ext.ell, 1.0, max_relative = 1e-4);
        assert_relative_eq!(ext.cal_l, 1.0, max_relative = 1e-4);
    }

    #[test]
    fn brute_force_agrees_with_closed_form_ell() {
        let j = diag(&[0.5, 3.0, 3.0]);
        let u = dvector![1.0, 0.0, 0.0];
        let ext = brute_force_directional(&j, &u, 5).unwrap();
        let closed = 1.0 / solve_transpose(&j, &u).unwrap().norm();
        assert_relative_eq!(closed, 0.5, max_relative = 1e-12);
        assert_relative_eq!(ext.ell, closed, max_relative = 1e-4);
    }

    #[test]
    fn sample_rejects_singular() {
        let j = diag(&[1.0, 0.0, 1.0]);
        assert!(sample(&j, &dvector![1.0, 0.0, 0.0], false).is_err());
    }

    #[test]
    fn chain_holds_on_random_well_conditioned_matrices() {
        use crate::quadrature::random_rotation;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for &n in &[2usize, 3] {
            for _ in 0..200 {
                let q1 = random_rotation(n, &mut rng);
                let q2 = random_rotation(n, &mut rng);
                let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(0.5..2.0)));
                let j = q1 * d * q2;
                let mut u = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0f64));
                u /= u.norm();
                let s = sample(&j, &u, true).unwrap();
                assert!(
                    chain_violation(&s, n) <= 1e-9,
                    "chain violated by {:.3e} for {s:?}",
                    chain_violation(&s, n)
                );
            }
        }
    }

    #[test]
    fn dilatations_scale_invariant() {
        let j = diag(&[0.5, 3.0, 3.0]);
        let u = dvector![1.0, 0.0, 0.0];
        let s1 = sample(&j, &u, false).unwrap();
        let s2 = sample(&(j * 7.25), &u, false).unwrap();
        assert_relative_eq!(s1.k, s2.k, max_relative = 1e-12);
        assert_relative_eq!(s1.l, s2.l, max_relative = 1e-12);
        assert_relative_eq!(s1.d, s2.d, max_relative = 1e-12);
        assert_relative_eq!(s1.q, s2.q, max_relative = 1e-12);
    }
}
