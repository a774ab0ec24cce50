//! Ring-modulus bounds for spherical rings, the four cavitation integrals,
//! and the cavitation classifier.
//!
//! The modulus of the image curve family M(f(Gamma)) is never computed by
//! curve enumeration; everything goes through the bound formulas. The lower
//! bound integrates the normal dilatation Q along rays, the upper bound
//! integrates the angular dilatation D over spheres with the extremal radial
//! density. For radial stretchings both bounds coincide analytically.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dilatation::{angular_dilatation, classical_dilatations, normal_dilatation};
use crate::mapping::{self, MappingSpec, RadialProfile};
use crate::quadrature::{
    limit_classify, pairwise_sum, radial_nodes, sphere_area, sphere_nodes, ClassifyConfig,
    LimitRole, LimitVerdict, QuadratureGrid, RadialRule, SphereRule, VerdictKind,
    IRREGULAR_NODE_LIMIT,
};
use crate::{Error, Result};

/// Modulus of the spherical ring A(r, R): log(R/r).
pub fn ring_modulus_spherical(r: f64, big_r: f64) -> Result<f64> {
    if !(0.0 < r && r < big_r) {
        return Err(Error::Argument(format!("bad ring radii ({r}, {big_r})")));
    }
    Ok((big_r / r).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModulusDirection {
    /// ring modulus -> curve-family modulus: M = omega / v^{n-1}
    RingToFamily,
    /// curve-family modulus -> ring modulus: mo = (omega / v)^{1/(n-1)}
    FamilyToRing,
}

/// The bijection mo R = [omega_{n-1} / M(Gamma_R)]^{1/(n-1)}.
pub fn modulus_conversions(value: f64, direction: ModulusDirection, n: usize) -> Result<f64> {
    if !(value > 0.0) {
        return Err(Error::Argument(format!("modulus must be positive, got {value}")));
    }
    let omega = sphere_area(n);
    let nf = n as f64;
    Ok(match direction {
        ModulusDirection::RingToFamily => omega / value.powf(nf - 1.0),
        ModulusDirection::FamilyToRing => (omega / value).powf(1.0 / (nf - 1.0)),
    })
}

/// Pointwise dilatations sampled on a sphere x radial product grid.
/// Irregular nodes hold NaN in every slot.
pub struct DilatationField {
    /// normal dilatation Q, indexed [sphere][radial]
    pub q: Vec<Vec<f64>>,
    /// outer dilatation K
    pub k: Vec<Vec<f64>>,
    /// angular dilatation D
    pub d: Vec<Vec<f64>>,
    /// inner dilatation L
    pub l: Vec<Vec<f64>>,
    pub irregular: usize,
    pub total: usize,
}

/// Evaluate Q, K, D, L at every product node. Fails when the irregular-node
/// fraction exceeds the integration limit.
pub fn sample_field(
    map: &MappingSpec,
    sphere: &SphereRule,
    radial: &RadialRule,
) -> Result<DilatationField> {
    // Radial stretchings: closed forms of the radial-stretching lemma,
    // direction-independent and stable where the Jacobian entries underflow.
    if let Some(profile) = map.radial_profile() {
        let n = map.dimension();
        let m = radial.nodes.len();
        let mut q = vec![f64::NAN; m];
        let mut k = vec![f64::NAN; m];
        let mut d = vec![f64::NAN; m];
        let mut l = vec![f64::NAN; m];
        let mut irregular_per_row = 0usize;
        for (i, &t) in radial.nodes.iter().enumerate() {
            match crate::dilatation::radial_oracle(profile, t, n) {
                Ok(s) => {
                    q[i] = s.q;
                    k[i] = s.k;
                    d[i] = s.d;
                    l[i] = s.l;
                }
                Err(_) => irregular_per_row += 1,
            }
        }
        let total = sphere.nodes.len() * m;
        let irregular = irregular_per_row * sphere.nodes.len();
        let fraction = irregular as f64 / total as f64;
        if fraction > IRREGULAR_NODE_LIMIT {
            return Err(Error::IrregularFraction {
                fraction,
                limit: IRREGULAR_NODE_LIMIT,
            });
        }
        let rows = sphere.nodes.len();
        return Ok(DilatationField {
            q: vec![q; rows],
            k: vec![k; rows],
            d: vec![d; rows],
            l: vec![l; rows],
            irregular,
            total,
        });
    }

    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, usize)> = sphere
        .nodes
        .par_iter()
        .map(|u| {
            let m = radial.nodes.len();
            let mut q = vec![f64::NAN; m];
            let mut k = vec![f64::NAN; m];
            let mut d = vec![f64::NAN; m];
            let mut l = vec![f64::NAN; m];
            let mut irregular = 0usize;
            for (i, &t) in radial.nodes.iter().enumerate() {
                let x = u * t;
                let ok = mapping::jacobian(map, &x).ok().and_then(|j| {
                    let (kk, ll) = classical_dilatations(&j).ok()?;
                    let dd = angular_dilatation(&j, u).ok()?;
                    let qq = normal_dilatation(&j, u).ok()?;
                    Some((kk, ll, dd, qq))
                });
                match ok {
                    Some((kk, ll, dd, qq)) => {
                        q[i] = qq;
                        k[i] = kk;
                        d[i] = dd;
                        l[i] = ll;
                    }
                    None => irregular += 1,
                }
            }
            (q, k, d, l, irregular)
        })
        .collect();
    let total = sphere.nodes.len() * radial.nodes.len();
    let irregular: usize = rows.iter().map(|r| r.4).sum();
    let fraction = irregular as f64 / total as f64;
    if fraction > IRREGULAR_NODE_LIMIT {
        return Err(Error::IrregularFraction {
            fraction,
            limit: IRREGULAR_NODE_LIMIT,
        });
    }
    let mut field = DilatationField {
        q: Vec::with_capacity(rows.len()),
        k: Vec::with_capacity(rows.len()),
        d: Vec::with_capacity(rows.len()),
        l: Vec::with_capacity(rows.len()),
        irregular,
        total,
    };
    for (q, k, d, l, _) in rows {
        field.q.push(q);
        field.k.push(k);
        field.d.push(d);
        field.l.push(l);
    }
    Ok(field)
}

/// Sharp lower bound for M(f(Gamma)): the sphere integral of
/// (per-direction log-radial integrals of Q)^{1-n}.
pub fn lower_bound_sigma(map: &MappingSpec, grid: &QuadratureGrid) -> Result<f64> {
    let field = sample_field(map, &grid.sphere, &grid.radial)?;
    Ok(lower_bound_from_field(&field.q, grid))
}

fn lower_bound_from_field(q: &[Vec<f64>], grid: &QuadratureGrid) -> f64 {
    let nf = grid.n as f64;
    let terms: Vec<f64> = q
        .iter()
        .zip(&grid.sphere.weights)
        .filter_map(|(row, wu)| {
            let vals: Vec<f64> = row
                .iter()
                .zip(&grid.radial.weights_log)
                .filter(|(v, _)| v.is_finite())
                .map(|(v, w)| v * w)
                .collect();
            let inner = pairwise_sum(&vals);
            // directions with a nonpositive inner integral carry no information
            if inner > 0.0 {
                Some(inner.powf(1.0 - nf) * wu)
            } else {
                None
            }
        })
        .collect();
    pairwise_sum(&terms)
}

/// Extremal upper bound for M(f(Gamma)): the radial functional of the
/// per-radius sphere integrals of D.
pub fn upper_bound_extremal(map: &MappingSpec, grid: &QuadratureGrid) -> Result<f64> {
    let field = sample_field(map, &grid.sphere, &grid.radial)?;
    Ok(upper_bound_from_field(&field.d, grid))
}

fn upper_bound_from_field(d: &[Vec<f64>], grid: &QuadratureGrid) -> f64 {
    let nf = grid.n as f64;
    let m = grid.radial.nodes.len();
    let mut radial_terms = Vec::with_capacity(m);
    for i in 0..m {
        let t = grid.radial.nodes[i];
        let vals: Vec<f64> = d
            .iter()
            .zip(&grid.sphere.weights)
            .filter(|(row, _)| row[i].is_finite())
            .map(|(row, wu)| row[i] * t.powf(nf - 1.0) * wu)
            .collect();
        let phi = pairwise_sum(&vals);
        if phi > 0.0 {
            radial_terms.push(phi.powf(1.0 / (1.0 - nf)) * grid.radial.weights_linear[i]);
        }
    }
    pairwise_sum(&radial_terms).powf(1.0 - nf)
}

/// Exact image-ring curve-family modulus for a radial stretching:
/// omega_{n-1} (log Phi(R)/Phi(r))^{1-n}.
pub fn exact_family_modulus_radial(
    profile: &RadialProfile,
    r: f64,
    big_r: f64,
    n: usize,
) -> f64 {
    let nf = n as f64;
    sphere_area(n) * (profile.phi(big_r) / profile.phi(r)).ln().powf(1.0 - nf)
}

type RadialDensity = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type SphereDensity = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Admissible density pair (rho, p) for the double modulus bound:
/// int rho dt = 1 on (r,R) and int p^{n-1} dsigma = 1 on the sphere.
#[derive(Clone)]
pub struct DensityPair {
    pub rho: RadialDensity,
    pub p: SphereDensity,
}

impl DensityPair {
    /// The canonical pair: rho = 1/(t log(R/r)), p = omega^{1/(1-n)}.
    pub fn canonical(r: f64, big_r: f64, n: usize) -> Self {
        let log_ratio = (big_r / r).ln();
        let p_const = sphere_area(n).powf(1.0 / (1.0 - n as f64));
        Self {
            rho: Arc::new(move |t| 1.0 / (t * log_ratio)),
            p: Arc::new(move |_| p_const),
        }
    }

    /// Admissibility residuals (|int rho dt - 1|, |int p^{n-1} dsigma - 1|).
    pub fn residuals(&self, grid: &QuadratureGrid) -> (f64, f64) {
        let rho_vals: Vec<f64> = grid
            .radial
            .nodes
            .iter()
            .zip(&grid.radial.weights_linear)
            .map(|(t, w)| (self.rho)(*t) * w)
            .collect();
        let nf = grid.n as f64;
        let p_vals: Vec<f64> = grid
            .sphere
            .nodes
            .iter()
            .zip(&grid.sphere.weights)
            .map(|(u, w)| (self.p)(u).powf(nf - 1.0) * w)
            .collect();
        (
            (pairwise_sum(&rho_vals) - 1.0).abs(),
            (pairwise_sum(&p_vals) - 1.0).abs(),
        )
    }
}

/// Scale a raw density pair onto the admissibility constraints.
pub fn admissible_normalize(raw: &DensityPair, grid: &QuadratureGrid) -> Result<DensityPair> {
    let rho_vals: Vec<f64> = grid
        .radial
        .nodes
        .iter()
        .zip(&grid.radial.weights_linear)
        .map(|(t, w)| (raw.rho)(*t) * w)
        .collect();
    let rho_total = pairwise_sum(&rho_vals);
    let nf = grid.n as f64;
    let p_vals: Vec<f64> = grid
        .sphere
        .nodes
        .iter()
        .zip(&grid.sphere.weights)
        .map(|(u, w)| (raw.p)(u).powf(nf - 1.0) * w)
        .collect();
    let p_total = pairwise_sum(&p_vals);
    if !(rho_total > 0.0) || !(p_total > 0.0) {
        return Err(Error::Argument(
            "density with zero or negative integral cannot be normalized".into(),
        ));
    }
    let rho = raw.rho.clone();
    let p = raw.p.clone();
    let p_scale = p_total.powf(1.0 / (1.0 - nf));
    Ok(DensityPair {
        rho: Arc::new(move |t| rho(t) / rho_total),
        p: Arc::new(move |u| p(u) * p_scale),
    })
}

/// The double modulus bound evaluated with a supplied admissible pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModulusBounds {
    pub r: f64,
    pub big_r: f64,
    pub lower: f64,
    pub upper: f64,
    /// Known closed form of M(f(Gamma)), radial/conformal maps only.
    pub exact: Option<f64>,
    pub curve_family_note: String,
    /// Admissibility residuals of the densities that produced the bounds,
    /// when a user pair was supplied.
    pub density_residuals: Option<(f64, f64)>,
}

const DENSITY_RESIDUAL_LIMIT: f64 = 1e-6;

/// Evaluate both sides of the double bound with a specific density pair.
pub fn double_bound_with_densities(
    map: &MappingSpec,
    densities: &DensityPair,
    grid: &QuadratureGrid,
) -> Result<ModulusBounds> {
    let (res_rho, res_p) = densities.residuals(grid);
    if res_rho > DENSITY_RESIDUAL_LIMIT || res_p > DENSITY_RESIDUAL_LIMIT {
        return Err(Error::Argument(format!(
            "density pair not admissible (residuals {res_rho:.3e}, {res_p:.3e})"
        )));
    }
    let field = sample_field(map, &grid.sphere, &grid.radial)?;
    let nf = grid.n as f64;

    // lower: (int p(u)^n Q dm/|x|^n)^{1-n}; the measure reduces to dt/t dsigma
    let lower_terms: Vec<f64> = field
        .q
        .iter()
        .zip(grid.sphere.nodes.iter().zip(&grid.sphere.weights))
        .map(|(row, (u, wu))| {
            let pu = (densities.p)(u).powf(nf);
            let vals: Vec<f64> = row
                .iter()
                .zip(&grid.radial.weights_log)
                .filter(|(v, _)| v.is_finite())
                .map(|(v, w)| v * w)
                .collect();
            pu * pairwise_sum(&vals) * wu
        })
        .collect();
    let lower = pairwise_sum(&lower_terms).powf(1.0 - nf);

    // upper: int rho(|x|)^n D dm
    let upper_terms: Vec<f64> = field
        .d
        .iter()
        .zip(&grid.sphere.weights)
        .map(|(row, wu)| {
            let vals: Vec<f64> = row
                .iter()
                .zip(grid.radial.nodes.iter().zip(&grid.radial.weights_linear))
                .filter(|(v, _)| v.is_finite())
                .map(|(v, (t, w))| {
                    (densities.rho)(*t).powf(nf) * v * t.powf(nf - 1.0) * w
                })
                .collect();
            pairwise_sum(&vals) * wu
        })
        .collect();
    let upper = pairwise_sum(&upper_terms);

    Ok(ModulusBounds {
        r: grid.r,
        big_r: grid.big_r,
        lower,
        upper,
        exact: None,
        curve_family_note: "curves joining the boundary spheres of A(r,R)".into(),
        density_residuals: Some((res_rho, res_p)),
    })
}

/// Cavitation verdict categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CavitationVerdict {
    Cavitation,
    NoCavitation,
    Undetermined,
}

/// One of the four improper integrals with its verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegralResult {
    pub verdict: LimitVerdict,
    /// Best available value: the extrapolated limit for convergent
    /// integrals, the last partial otherwise.
    pub best_value: f64,
}

/// The four cavitation integrals and the theorem-backed classification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CavitationReport {
    pub iq: IntegralResult,
    pub ik: IntegralResult,
    pub id: IntegralResult,
    pub il: IntegralResult,
    pub verdict: CavitationVerdict,
    pub fired_rule: String,
    /// Set when both a positivity and a divergence rule fire; numerically
    /// impossible for true values and a sign of misclassification.
    pub contradiction: bool,
}

/// Grid and threshold configuration for the cavitation pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CavitationConfig {
    pub k0: u32,
    pub kmax: u32,
    pub sphere_level: u32,
    pub radial_m: usize,
    pub classify: ClassifyConfig,
    /// "I > 0" means ConvergesTo a value above this multiple of omega_{n-1}.
    pub positivity_rel: f64,
    pub seed: u64,
}

impl Default for CavitationConfig {
    fn default() -> Self {
        Self {
            k0: 3,
            kmax: 16,
            sphere_level: 4,
            radial_m: 2048,
            classify: ClassifyConfig::default(),
            positivity_rel: 1e-6,
            seed: 0,
        }
    }
}

/// Truncated partials of the four integrals at every epsilon = 2^{-k}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CavitationPartials {
    /// (epsilon, I_Q(eps), I_K(eps), I_D(eps), I_L(eps)), epsilon decreasing.
    pub rows: Vec<(f64, f64, f64, f64, f64)>,
}

/// Compute the truncated cavitation integrals on a nested log-radial grid.
///
/// The radial grid covers (2^{-kmax}, 1) with nodes aligned to the octave
/// boundaries 2^{-k}, so every truncation is an exact node subset.
pub fn cavitation_partials(map: &MappingSpec, cfg: &CavitationConfig) -> Result<CavitationPartials> {
    let n = map.dimension();
    let nf = n as f64;
    if cfg.k0 < 1 || cfg.kmax <= cfg.k0 {
        return Err(Error::Argument(format!(
            "bad epsilon range k = {}..{}",
            cfg.k0, cfg.kmax
        )));
    }
    let m_oct = cfg.radial_m.div_ceil(cfg.kmax as usize).max(8);
    let m = m_oct * cfg.kmax as usize;
    let eps_min = 2.0f64.powi(-(cfg.kmax as i32));
    let sphere = sphere_nodes(n, cfg.sphere_level, cfg.seed)?;
    let radial = radial_nodes(eps_min, 1.0, m)?;
    let field = sample_field(map, &sphere, &radial)?;
    let ds = radial.weights_log[0];

    // per-direction suffix sums of Q dt/t and K^{1/(n-1)} dt/t at octave cuts
    let n_dirs = sphere.nodes.len();
    let ks: Vec<u32> = (cfg.k0..=cfg.kmax).collect();
    let boundary = |k: u32| (cfg.kmax - k) as usize * m_oct;

    let mut rows = Vec::with_capacity(ks.len());
    for &k in &ks {
        let b = boundary(k);
        let eps = 2.0f64.powi(-(k as i32));

        // I_Q and I_K: sphere integrals of inner radial powers
        let mut iq_terms = Vec::with_capacity(n_dirs);
        let mut ik_terms = Vec::with_capacity(n_dirs);
        for (dir, wu) in (0..n_dirs).zip(&sphere.weights) {
            let q_inner: Vec<f64> = field.q[dir][b..]
                .iter()
                .filter(|v| v.is_finite())
                .map(|v| v * ds)
                .collect();
            let k_inner: Vec<f64> = field.k[dir][b..]
                .iter()
                .filter(|v| v.is_finite())
                .map(|v| v.powf(1.0 / (nf - 1.0)) * ds)
                .collect();
            let qi = pairwise_sum(&q_inner);
            let ki = pairwise_sum(&k_inner);
            if qi > 0.0 {
                iq_terms.push(qi.powf(1.0 - nf) * wu);
            }
            if ki > 0.0 {
                ik_terms.push(ki.powf(1.0 - nf) * wu);
            }
        }

        // I_D and I_L: radial integrals of inner sphere powers
        let mut id_terms = Vec::with_capacity(m - b);
        let mut il_terms = Vec::with_capacity(m - b);
        for i in b..m {
            let t = radial.nodes[i];
            let tw = t.powf(nf - 1.0);
            let d_vals: Vec<f64> = (0..n_dirs)
                .filter(|&dir| field.d[dir][i].is_finite())
                .map(|dir| field.d[dir][i] * tw * sphere.weights[dir])
                .collect();
            let l_vals: Vec<f64> = (0..n_dirs)
                .filter(|&dir| field.l[dir][i].is_finite())
                .map(|dir| field.l[dir][i] * tw * sphere.weights[dir])
                .collect();
            let dphi = pairwise_sum(&d_vals);
            let lphi = pairwise_sum(&l_vals);
            if dphi > 0.0 {
                id_terms.push(dphi.powf(1.0 / (1.0 - nf)) * radial.weights_linear[i]);
            }
            if lphi > 0.0 {
                il_terms.push(lphi.powf(1.0 / (1.0 - nf)) * radial.weights_linear[i]);
            }
        }

        rows.push((
            eps,
            pairwise_sum(&iq_terms),
            pairwise_sum(&ik_terms),
            pairwise_sum(&id_terms),
            pairwise_sum(&il_terms),
        ));
    }
    Ok(CavitationPartials { rows })
}

fn integral_result(partials: Vec<(f64, f64)>, role: LimitRole, cfg: &ClassifyConfig) -> Result<IntegralResult> {
    let verdict = limit_classify(&partials, role, cfg)?;
    let best_value = verdict
        .value
        .unwrap_or_else(|| partials.last().map(|&(_, v)| v).unwrap_or(f64::NAN));
    Ok(IntegralResult { verdict, best_value })
}

/// Classify the four integrals and apply the cavitation rules.
pub fn classify_cavitation(
    partials: &CavitationPartials,
    n: usize,
    cfg: &CavitationConfig,
) -> Result<CavitationReport> {
    let column = |idx: usize| -> Vec<(f64, f64)> {
        partials
            .rows
            .iter()
            .map(|&(e, q, k, d, l)| (e, [q, k, d, l][idx]))
            .collect()
    };
    let iq = integral_result(column(0), LimitRole::OuterValue, &cfg.classify)?;
    let ik = integral_result(column(1), LimitRole::OuterValue, &cfg.classify)?;
    let id = integral_result(column(2), LimitRole::OuterValue, &cfg.classify)?;
    let il = integral_result(column(3), LimitRole::OuterValue, &cfg.classify)?;

    let threshold = cfg.positivity_rel * sphere_area(n);
    let positive = |res: &IntegralResult| {
        res.verdict.kind == VerdictKind::ConvergesTo
            && res.verdict.value.map(|v| v > threshold).unwrap_or(false)
    };
    let divergent =
        |res: &IntegralResult| res.verdict.kind == VerdictKind::DivergesToInfinity;

    let cav_rule = if positive(&iq) {
        Some("Thm 3.2 (I_Q > 0)")
    } else if positive(&ik) {
        Some("Thm 3.3 (I_K > 0)")
    } else {
        None
    };
    let nocav_rule = if divergent(&id) {
        Some("Thm 3.4 (I_D = \u{221e})")
    } else if divergent(&il) {
        Some("Thm 3.5 (I_L = \u{221e})")
    } else {
        None
    };

    let (verdict, fired_rule, contradiction) = match (cav_rule, nocav_rule) {
        (Some(rule), None) => (CavitationVerdict::Cavitation, rule.to_string(), false),
        (None, Some(rule)) => (CavitationVerdict::NoCavitation, rule.to_string(), false),
        (Some(a), Some(b)) => (
            CavitationVerdict::Undetermined,
            format!("contradiction: {a} and {b}"),
            true,
        ),
        (None, None) => (CavitationVerdict::Undetermined, "none".to_string(), false),
    };

    Ok(CavitationReport {
        iq,
        ik,
        id,
        il,
        verdict,
        fired_rule,
        contradiction,
    })
}

/// Full pipeline: partials then classification.
pub fn cavitation_report(map: &MappingSpec, cfg: &CavitationConfig) -> Result<(CavitationPartials, CavitationReport)> {
    let partials = cavitation_partials(map, cfg)?;
    let report = classify_cavitation(&partials, map.dimension(), cfg)?;
    Ok((partials, report))
}

/// The separating-ring constant A_n: exact pi for n = 2, the explicit upper
/// bound 2 log(1+sqrt 2) + 2 log 2/(n-1) + 2n(n-2)/(n-1) for n >= 3.
pub fn teichmuller_constant_bound(n: usize) -> Result<(f64, bool)> {
    if n < 2 {
        return Err(Error::Argument(format!("dimension must be >= 2, got {n}")));
    }
    if n == 2 {
        return Ok((std::f64::consts::PI, true));
    }
    let nf = n as f64;
    let value = 2.0 * (1.0 + 2.0f64.sqrt()).ln()
        + 2.0 * 2.0f64.ln() / (nf - 1.0)
        + 2.0 * nf * (nf - 2.0) / (nf - 1.0);
    Ok((value, false))
}

/// Max and min of |f| over the sphere sample at radius t.
pub fn sphere_extrema(map: &MappingSpec, t: f64, sphere: &SphereRule) -> Result<(f64, f64)> {
    if !(0.0 < t && t < 1.0) {
        return Err(Error::Argument(format!("radius t = {t} outside (0,1)")));
    }
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for u in &sphere.nodes {
        let y = mapping::evaluate(map, &(u * t))?;
        let nrm = y.norm();
        max = max.max(nrm);
        min = min.min(nrm);
    }
    Ok((max, min))
}

/// Bracket on the cavity radius R_0(r) from the modulus interval of the
/// image ring f(A(r,1)).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadiusBracket {
    pub lower_r0: f64,
    /// Only applicable when the ring-modulus interval lies above A_n.
    pub upper_r0: Option<f64>,
    /// Interval for the ring modulus M(r) = mo f(A(r,1)).
    pub m_interval: (f64, f64),
    /// min |f| on the outer sphere sample.
    pub r1: f64,
}

/// R_1 e^{-M(r)} <= R_0(r) <= R_1 e^{A_n - M(r)}; the bracket is evaluated
/// conservatively from the endpoints of the computed M-interval.
pub fn radius_bracket(map: &MappingSpec, r: f64, cfg: &CavitationConfig) -> Result<RadiusBracket> {
    let n = map.dimension();
    let grid = QuadratureGrid::build(n, r, 1.0, cfg.sphere_level, cfg.radial_m, cfg.seed)?;
    let field = sample_field(map, &grid.sphere, &grid.radial)?;
    let m_family_lower = lower_bound_from_field(&field.q, &grid);
    let m_family_upper = upper_bound_from_field(&field.d, &grid);
    // mo is decreasing in the family modulus
    let mo_lower = modulus_conversions(m_family_upper, ModulusDirection::FamilyToRing, n)?;
    let mo_upper = modulus_conversions(m_family_lower, ModulusDirection::FamilyToRing, n)?;
    let t_outer = *grid.radial.nodes.last().unwrap();
    let (_, r1) = sphere_extrema(map, t_outer, &grid.sphere)?;
    let (a_n, _) = teichmuller_constant_bound(n)?;
    let upper_r0 = if mo_lower > a_n {
        Some(r1 * (a_n - mo_lower).exp())
    } else {
        None
    };
    Ok(RadiusBracket {
        lower_r0: r1 * (-mo_upper).exp(),
        upper_r0,
        m_interval: (mo_lower, mo_upper),
        r1,
    })
}

/// Residual of the growth inequality
/// log(m_f(R)/M_f(r)) - log(R/r) <= (1/omega) int (L_f - 1)/|x|^n dm.
/// Nonnegative residual confirms the inequality on this instance.
pub fn check_bgmv(map: &MappingSpec, grid: &QuadratureGrid) -> Result<f64> {
    let n = map.dimension();
    let field = sample_field(map, &grid.sphere, &grid.radial)?;
    let rhs = l_integral(&field.l, grid, true)? / sphere_area(n);
    let t_lo = grid.r;
    let t_hi = grid.big_r.min(1.0 - 1e-12);
    let (max_at_r, _) = sphere_extrema(map, t_lo, &grid.sphere)?;
    let (_, min_at_big_r) = sphere_extrema(map, t_hi, &grid.sphere)?;
    let lhs = (min_at_big_r / max_at_r).ln() - (grid.big_r / grid.r).ln();
    Ok(rhs - lhs)
}

/// Residual of the fundamental inequality K mo A(r,R) - mo f(A(r,R)),
/// with mo f(A) bounded by the L-integral form (1/omega) int L_f/|x|^n dm.
/// `k` is the quasiconformality constant, i.e. an essential upper bound for
/// the inner dilatation L_f on the ring.
pub fn check_fundamental(map: &MappingSpec, k: f64, grid: &QuadratureGrid) -> Result<f64> {
    let n = map.dimension();
    let field = sample_field(map, &grid.sphere, &grid.radial)?;
    let upper_mo = l_integral(&field.l, grid, false)? / sphere_area(n);
    Ok(k * (grid.big_r / grid.r).ln() - upper_mo)
}

/// [`check_fundamental`] with the quasiconformality constant taken as the
/// maximum of L over the integration grid itself. Returns (residual, K).
pub fn check_fundamental_auto(map: &MappingSpec, grid: &QuadratureGrid) -> Result<(f64, f64)> {
    let n = map.dimension();
    let field = sample_field(map, &grid.sphere, &grid.radial)?;
    let k = field
        .l
        .iter()
        .flatten()
        .copied()
        .filter(|v| v.is_finite())
        .fold(1.0f64, f64::max);
    let upper_mo = l_integral(&field.l, grid, false)? / sphere_area(n);
    Ok((k * (grid.big_r / grid.r).ln() - upper_mo, k))
}

/// int over the annulus of L/|x|^n dm (or (L-1)/|x|^n when `minus_one`),
/// reduced to the log-radial rule.
fn l_integral(l: &[Vec<f64>], grid: &QuadratureGrid, minus_one: bool) -> Result<f64> {
    let terms: Vec<f64> = l
        .iter()
        .zip(&grid.sphere.weights)
        .map(|(row, wu)| {
            let vals: Vec<f64> = row
                .iter()
                .zip(&grid.radial.weights_log)
                .filter(|(v, _)| v.is_finite())
                .map(|(v, w)| (if minus_one { v - 1.0 } else { *v }) * w)
                .collect();
            pairwise_sum(&vals) * wu
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::catalog_get;
    use approx::assert_relative_eq;

    fn grid3(r: f64, big_r: f64) -> QuadratureGrid {
        QuadratureGrid::build(3, r, big_r, 4, 1024, 0).unwrap()
    }

    #[test]
    fn spherical_ring_modulus() {
        assert_relative_eq!(ring_modulus_spherical(0.1, 1.0).unwrap(), 10.0f64.ln());
        let r = 0.3;
        assert_relative_eq!(
            ring_modulus_spherical(r, r * std::f64::consts::E).unwrap(),
            1.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(ring_modulus_spherical(0.5, 1.0).unwrap(), 2.0f64.ln());
        assert!(ring_modulus_spherical(1.0, 0.5).is_err());
    }

    #[test]
    fn conversions_round_trip_and_values() {
        let v = 10.0f64.ln();
        let m = modulus_conversions(v, ModulusDirection::RingToFamily, 3).unwrap();
        assert_relative_eq!(m, 4.0 * std::f64::consts::PI / v.powi(2), max_relative = 1e-14);
        let back = modulus_conversions(m, ModulusDirection::FamilyToRing, 3).unwrap();
        assert_relative_eq!(back, v, max_relative = 1e-12);

        // n = 2: ring mod 2 pi <-> family mod 1
        let m2 = modulus_conversions(2.0 * std::f64::consts::PI, ModulusDirection::RingToFamily, 2).unwrap();
        assert_relative_eq!(m2, 1.0, max_relative = 1e-14);
        assert!(modulus_conversions(-1.0, ModulusDirection::RingToFamily, 3).is_err());
    }

    #[test]
    fn identity_bounds_are_tight() {
        let map = catalog_get("identity", 3, &[]).unwrap();
        let grid = grid3(0.1, 1.0);
        let expect = 4.0 * std::f64::consts::PI / 10.0f64.ln().powi(2);
        let lo = lower_bound_sigma(&map, &grid).unwrap();
        let up = upper_bound_extremal(&map, &grid).unwrap();
        assert_relative_eq!(lo, expect, max_relative = 1e-3);
        assert_relative_eq!(up, expect, max_relative = 1e-3);
        assert_relative_eq!(expect, 2.370164, max_relative = 1e-6);
    }

    #[test]
    fn scaling_bounds_match_identity() {
        let map = catalog_get("scaling", 3, &[("c".into(), 0.5)]).unwrap();
        let grid = grid3(0.1, 1.0);
        let expect = 4.0 * std::f64::consts::PI / 10.0f64.ln().powi(2);
        assert_relative_eq!(lower_bound_sigma(&map, &grid).unwrap(), expect, max_relative = 1e-3);
        assert_relative_eq!(upper_bound_extremal(&map, &grid).unwrap(), expect, max_relative = 1e-3);
    }

    #[test]
    fn f1_bounds_match_hand_integral() {
        let map = catalog_get("f1", 3, &[("alpha".into(), 0.5)]).unwrap();
        let grid = grid3(0.1, 1.0);
        let expect = 4.0 * std::f64::consts::PI
            / (2.0 / (1.0 + 0.1f64.sqrt())).ln().powi(2);
        let lo = lower_bound_sigma(&map, &grid).unwrap();
        let up = upper_bound_extremal(&map, &grid).unwrap();
        assert_relative_eq!(lo, expect, max_relative = 5e-3);
        assert_relative_eq!(up, expect, max_relative = 5e-3);
        // closed form also available through the radial helper
        let exact = exact_family_modulus_radial(&RadialProfile::f1(0.5).unwrap(), 0.1, 1.0, 3);
        assert_relative_eq!(exact, expect, max_relative = 1e-12);
    }

    #[test]
    fn f3_upper_bound_is_conformal() {
        let map = catalog_get("f3", 3, &[]).unwrap();
        let grid = grid3(0.2, 0.9);
        let expect = 4.0 * std::f64::consts::PI / (0.9f64 / 0.2).ln().powi(2);
        assert_relative_eq!(upper_bound_extremal(&map, &grid).unwrap(), expect, max_relative = 1e-3);
    }

    #[test]
    fn canonical_densities_reproduce_tight_bounds() {
        let map = catalog_get("identity", 3, &[]).unwrap();
        let grid = grid3(0.1, 1.0);
        let pair = DensityPair::canonical(0.1, 1.0, 3);
        let bounds = double_bound_with_densities(&map, &pair, &grid).unwrap();
        let expect = 4.0 * std::f64::consts::PI * 10.0f64.ln().powi(-2);
        assert_relative_eq!(bounds.lower, expect, max_relative = 1e-3);
        assert_relative_eq!(bounds.upper, expect, max_relative = 1e-3);
        assert!(bounds.lower <= bounds.upper * (1.0 + 1e-6));
    }

    #[test]
    fn unnormalized_density_is_rejected() {
        let map = catalog_get("identity", 3, &[]).unwrap();
        let grid = grid3(0.1, 1.0);
        let raw = DensityPair {
            rho: Arc::new(|_| 1.0),
            p: Arc::new(|_| 1.0),
        };
        assert!(double_bound_with_densities(&map, &raw, &grid).is_err());
        let fixed = admissible_normalize(&raw, &grid).unwrap();
        let (r1, r2) = fixed.residuals(&grid);
        assert!(r1 < 1e-8 && r2 < 1e-8, "residuals {r1:.2e} {r2:.2e}");
        assert!(double_bound_with_densities(&map, &fixed, &grid).is_ok());
    }

    #[test]
    fn normalize_matches_hand_scalings() {
        let grid = grid3(0.2, 0.8);
        // rho == 1 -> 1/(R - r)
        let raw = DensityPair {
            rho: Arc::new(|_| 1.0),
            p: Arc::new(|_| 1.0),
        };
        let fixed = admissible_normalize(&raw, &grid).unwrap();
        assert_relative_eq!((fixed.rho)(0.5), 1.0 / 0.6, max_relative = 1e-9);
        // p == 1, n = 3 -> (4 pi)^{-1/2}
        let u = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        assert_relative_eq!(
            (fixed.p)(&u),
            (4.0 * std::f64::consts::PI).powf(-0.5),
            max_relative = 1e-9
        );
        // rho = 1/t -> 1/(t log(R/r))
        let raw = DensityPair {
            rho: Arc::new(|t| 1.0 / t),
            p: Arc::new(|_| 1.0),
        };
        let fixed = admissible_normalize(&raw, &grid).unwrap();
        // 1/t is not integrated exactly by the linear-weight rule, so the
        // normalization carries the quadrature error (~1e-7 at m = 1024)
        assert_relative_eq!(
            (fixed.rho)(0.5),
            1.0 / (0.5 * 4.0f64.ln()),
            max_relative = 1e-6
        );
    }

    #[test]
    fn extremal_upper_bound_dominates_density_upper_bounds() {
        let map = catalog_get("f1", 3, &[("alpha".into(), 0.5)]).unwrap();
        let grid = grid3(0.1, 1.0);
        let extremal = upper_bound_extremal(&map, &grid).unwrap();
        for rho_kind in 0..3 {
            let raw = DensityPair {
                rho: match rho_kind {
                    0 => Arc::new(|_| 1.0),
                    1 => Arc::new(|t: f64| 1.0 / t),
                    _ => Arc::new(|t: f64| t * t),
                },
                p: Arc::new(|_| 1.0),
            };
            let pair = admissible_normalize(&raw, &grid).unwrap();
            let bounds = double_bound_with_densities(&map, &pair, &grid).unwrap();
            assert!(
                bounds.upper >= extremal - 1e-6 * extremal,
                "density upper bound {} below extremal {}",
                bounds.upper,
                extremal
            );
        }
    }

    #[test]
    fn teichmuller_constant_values() {
        let (a2, exact) = teichmuller_constant_bound(2).unwrap();
        assert!(exact);
        assert_relative_eq!(a2, std::f64::consts::PI);
        let (a3, exact) = teichmuller_constant_bound(3).unwrap();
        assert!(!exact);
        assert_relative_eq!(a3, 5.45589, max_relative = 1e-5);
        let (a4, _) = teichmuller_constant_bound(4).unwrap();
        let expect = 2.0 * (1.0 + 2.0f64.sqrt()).ln() + 2.0 / 3.0 * 2.0f64.ln() + 16.0 / 3.0;
        assert_relative_eq!(a4, expect, max_relative = 1e-12);
        assert_relative_eq!(a4, 7.558, max_relative = 1e-3);
        assert!(teichmuller_constant_bound(1).is_err());
    }

    #[test]
    fn sphere_extrema_radial_maps() {
        let sphere = sphere_nodes(3, 3, 0).unwrap();
        let identity = catalog_get("identity", 3, &[]).unwrap();
        let (max, min) = sphere_extrema(&identity, 0.4, &sphere).unwrap();
        assert_relative_eq!(max, 0.4, max_relative = 1e-12);
        assert_relative_eq!(min, 0.4, max_relative = 1e-12);

        let f3 = catalog_get("f3", 3, &[]).unwrap();
        let (max, min) = sphere_extrema(&f3, 0.4, &sphere).unwrap();
        assert_relative_eq!(max, 0.4, max_relative = 1e-12);
        assert_relative_eq!(min, 0.4, max_relative = 1e-12);

        let f1 = catalog_get("f1", 3, &[("alpha".into(), 0.5)]).unwrap();
        let (max, min) = sphere_extrema(&f1, 0.25, &sphere).unwrap();
        assert_relative_eq!(max, 0.75, max_relative = 1e-12);
        assert_relative_eq!(min, 0.75, max_relative = 1e-12);
    }

    #[test]
    fn bgmv_residuals() {
        let grid = grid3(0.1, 1.0);
        let identity = catalog_get("identity", 3, &[]).unwrap();
        let res = check_bgmv(&identity, &grid).unwrap();
        assert!(res.abs() < 1e-9, "identity residual {res:.3e}");

        // f3: LHS = 0, RHS = ((sqrt2+1)^n - 1) log(R/r)
        let f3 = catalog_get("f3", 3, &[]).unwrap();
        let res = check_bgmv(&f3, &grid).unwrap();
        let expect = ((2.0f64.sqrt() + 1.0).powi(3) - 1.0) * 10.0f64.ln();
        assert_relative_eq!(res, expect, max_relative = 1e-6);

        let f1 = catalog_get("f1", 3, &[("alpha".into(), 0.5)]).unwrap();
        assert!(check_bgmv(&f1, &grid).unwrap() >= 0.0);
    }

    #[test]
    fn fundamental_residuals() {
        let grid = grid3(0.1, 1.0);
        let identity = catalog_get("identity", 3, &[]).unwrap();
        let res = check_fundamental(&identity, 1.0, &grid).unwrap();
        assert!(res.abs() < 1e-9, "identity residual {res:.3e}");

        // f3 saturates: L constant equals K
        let f3 = catalog_get("f3", 3, &[]).unwrap();
        let k = (2.0f64.sqrt() + 1.0).powi(3);
        let res = check_fundamental(&f3, k, &grid).unwrap();
        assert!(res.abs() < 1e-6 * k, "f3 residual {res:.3e}");
    }

    #[test]
    fn radius_bracket_for_f1() {
        let map = catalog_get("f1", 3, &[("alpha".into(), 0.5)]).unwrap();
        let cfg = CavitationConfig {
            radial_m: 1024,
            ..CavitationConfig::default()
        };
        let bracket = radius_bracket(&map, 0.25, &cfg).unwrap();
        // image of A(0.25, 1) is A(0.75, 1): M = log(4/3), R1 = 1
        assert_relative_eq!(bracket.m_interval.0, (4.0f64 / 3.0).ln(), max_relative = 5e-3);
        assert_relative_eq!(bracket.lower_r0, 0.75, max_relative = 5e-3);
        assert!(bracket.upper_r0.is_none(), "M below A_n, upper not applicable");
    }

    #[test]
    fn radius_bracket_identity_is_exact() {
        let map = catalog_get("identity", 3, &[]).unwrap();
        let cfg = CavitationConfig {
            radial_m: 1024,
            ..CavitationConfig::default()
        };
        let bracket = radius_bracket(&map, 0.2, &cfg).unwrap();
        assert_relative_eq!(bracket.lower_r0, 0.2, max_relative = 5e-3);
    }
}
