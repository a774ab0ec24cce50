//! Sphere and radial quadrature grids, annulus integration, and
//! classification of improper-integral limits.
//!
//! Sphere rules: uniform circle (n = 2), product Gauss-Legendre x uniform
//! azimuth (n = 3), seeded Monte Carlo with Gaussian-normalization sampling
//! (n >= 4). Radial rules are composite midpoint in the log variable, so
//! `dt/t` integrands are handled with uniform weights. All reductions use a
//! fixed pairwise order and are bit-reproducible for a fixed grid.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fraction of irregular nodes above which integration aborts.
pub const IRREGULAR_NODE_LIMIT: f64 = 1e-3;

/// Surface area of the unit sphere in R^n: omega_{n-1} = 2 pi^{n/2} / Gamma(n/2).
pub fn sphere_area(n: usize) -> f64 {
    let nf = n as f64;
    2.0 * std::f64::consts::PI.powf(nf / 2.0) / gamma_half_integer(n)
}

/// Gamma(n/2) for integer n >= 1.
fn gamma_half_integer(n: usize) -> f64 {
    if n % 2 == 0 {
        // Gamma(k) = (k-1)!
        let k = n / 2;
        (1..k).map(|i| i as f64).product()
    } else {
        // Gamma(k + 1/2) = (2k)! sqrt(pi) / (4^k k!)
        let k = (n - 1) / 2;
        let mut v = std::f64::consts::PI.sqrt();
        for i in 1..=k {
            v *= i as f64 - 0.5;
        }
        v
    }
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        len => {
            let mid = len / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // evaluate P_m and P_m' by recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

/// Quadrature rule on the unit sphere S^{n-1}: weights sum to omega_{n-1}.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub nodes: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

/// Sphere nodes/weights at a refinement level. `seed` only matters for the
/// Monte Carlo rule (n >= 4) and is part of the grid identity.
pub fn sphere_nodes(n: usize, level: u32, seed: u64) -> Result<SphereRule> {
    if n < 2 {
        return Err(Error::Argument(format!("dimension must be >= 2, got {n}")));
    }
    if level < 1 {
        return Err(Error::Argument("sphere level must be >= 1".into()));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    match n {
        2 => {
            let m = (1usize << level) * 8;
            let w = two_pi / m as f64;
            let nodes = (0..m)
                .map(|i| {
                    let a = two_pi * i as f64 / m as f64;
                    DVector::from_column_slice(&[a.cos(), a.sin()])
                })
                .collect();
            Ok(SphereRule {
                nodes,
                weights: vec![w; m],
            })
        }
        3 => {
            // product rule: Gauss-Legendre in cos(theta), uniform azimuth
            let n_theta = (1usize << level) * 2;
            let n_phi = 2 * n_theta;
            let (gl_nodes, gl_weights) = gauss_legendre(n_theta);
            let wphi = two_pi / n_phi as f64;
            let mut nodes = Vec::with_capacity(n_theta * n_phi);
            let mut weights = Vec::with_capacity(n_theta * n_phi);
            for (ct, wt) in gl_nodes.iter().zip(&gl_weights) {
                let st = (1.0 - ct * ct).sqrt();
                for j in 0..n_phi {
                    let phi = two_pi * j as f64 / n_phi as f64;
                    nodes.push(DVector::from_column_slice(&[
                        st * phi.cos(),
                        st * phi.sin(),
                        *ct,
                    ]));
                    weights.push(wt * wphi);
                }
            }
            Ok(SphereRule { nodes, weights })
        }
        _ => {
            let m = (1usize << level) * 256;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let w = sphere_area(n) / m as f64;
            let nodes = (0..m)
                .map(|_| {
                    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let nrm = v.norm();
                    v / nrm
                })
                .collect();
            Ok(SphereRule {
                nodes,
                weights: vec![w; m],
            })
        }
    }
}

/// Log-uniform radial rule on (r, R) with weights for both `dt` and `dt/t`.
#[derive(Debug, Clone)]
pub struct RadialRule {
    pub nodes: Vec<f64>,
    /// Composite-midpoint weights for integrals against dt,
    /// normalized to sum exactly to R - r.
    pub weights_linear: Vec<f64>,
    /// Uniform weights for integrals against dt/t (exact in the log variable).
    pub weights_log: Vec<f64>,
}

pub fn radial_nodes(r: f64, big_r: f64, m: usize) -> Result<RadialRule> {
    if !(0.0 < r && r < big_r && big_r <= 1.0) {
        return Err(Error::Argument(format!(
            "bad radial interval ({r}, {big_r})"
        )));
    }
    if m < 8 {
        return Err(Error::Argument(format!("need at least 8 radial nodes, got {m}")));
    }
    let (s0, s1) = (r.ln(), big_r.ln());
    let ds = (s1 - s0) / m as f64;
    let nodes: Vec<f64> = (0..m)
        .map(|i| (s0 + (i as f64 + 0.5) * ds).exp())
        .collect();
    let weights_log = vec![ds; m];
    let raw: Vec<f64> = nodes.iter().map(|t| t * ds).collect();
    let total = pairwise_sum(&raw);
    let scale = (big_r - r) / total;
    let weights_linear = raw.into_iter().map(|w| w * scale).collect();
    Ok(RadialRule {
        nodes,
        weights_linear,
        weights_log,
    })
}

/// Combined sphere x radial grid over an annulus A(r, R).
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub n: usize,
    pub sphere: SphereRule,
    pub radial: RadialRule,
    pub r: f64,
    pub big_r: f64,
    pub sphere_level: u32,
    pub radial_m: usize,
    pub seed: u64,
}

impl QuadratureGrid {
    pub fn build(
        n: usize,
        r: f64,
        big_r: f64,
        sphere_level: u32,
        radial_m: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            n,
            sphere: sphere_nodes(n, sphere_level, seed)?,
            radial: radial_nodes(r, big_r, radial_m)?,
            r,
            big_r,
            sphere_level,
            radial_m,
            seed,
        })
    }
}

/// Integrate `g` over the annulus: sum of g(t u) t^{n-1} w_t w_u.
///
/// Non-finite values of `g` mark irregular nodes; those are skipped, and the
/// integration aborts when their fraction exceeds [`IRREGULAR_NODE_LIMIT`].
pub fn integrate_annulus<G>(g: G, grid: &QuadratureGrid) -> Result<f64>
where
    G: Fn(&DVector<f64>) -> f64 + Sync,
{
    use rayon::prelude::*;
    let nf = grid.n as f64;
    let per_direction: Vec<(f64, usize)> = grid
        .sphere
        .nodes
        .par_iter()
        .zip(grid.sphere.weights.par_iter())
        .map(|(u, wu)| {
            let mut irregular = 0usize;
            let vals: Vec<f64> = grid
                .radial
                .nodes
                .iter()
                .zip(&grid.radial.weights_linear)
                .map(|(t, wt)| {
                    let x = u * *t;
                    let v = g(&x);
                    if v.is_finite() {
                        v * t.powf(nf - 1.0) * wt * wu
                    } else {
                        irregular += 1;
                        0.0
                    }
                })
                .collect();
            (pairwise_sum(&vals), irregular)
        })
        .collect();
    let irregular: usize = per_direction.iter().map(|(_, c)| c).sum();
    let total_nodes = grid.sphere.nodes.len() * grid.radial.nodes.len();
    let fraction = irregular as f64 / total_nodes as f64;
    if fraction > IRREGULAR_NODE_LIMIT {
        return Err(Error::IrregularFraction {
            fraction,
            limit: IRREGULAR_NODE_LIMIT,
        });
    }
    let sums: Vec<f64> = per_direction.into_iter().map(|(s, _)| s).collect();
    Ok(pairwise_sum(&sums))
}

/// What an epsilon-indexed sequence of partial values represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LimitRole {
    /// Truncated inner integrals (divergence certifies a vanishing outer value).
    InnerIntegral,
    /// Truncated outer values themselves.
    OuterValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictKind {
    ConvergesTo,
    DivergesToInfinity,
    TendsToZero,
    Inconclusive,
}

/// Classification of an epsilon -> 0 improper-integral limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitVerdict {
    pub kind: VerdictKind,
    /// Finite limit; present only for `ConvergesTo`.
    pub value: Option<f64>,
    /// The (epsilon, partial value) pairs the verdict is based on.
    pub evidence: Vec<(f64, f64)>,
    /// Slope of log|v| against log log(1/epsilon) over the fit window.
    pub fit_exponent: Option<f64>,
}

/// Thresholds for [`limit_classify`]; defaults classify the catalog maps
/// correctly at the default grid resolution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassifyConfig {
    /// Number of trailing points used for the fit.
    pub window: usize,
    /// Successive-difference contraction factor for convergence.
    pub contraction: f64,
    /// An extrapolated limit below this fraction of the last value counts
    /// as a vanishing limit.
    pub zero_fraction: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            window: 6,
            contraction: 0.75,
            zero_fraction: 0.1,
        }
    }
}

/// Classify the epsilon -> 0 behavior of a sequence of truncated values.
///
/// `partials` must hold (epsilon, value) pairs with strictly decreasing
/// epsilon (a geometric grid 2^{-k} in practice) and at least `window`
/// points. The decision is scale-invariant: classify(c v) has the same kind
/// as classify(v) for any c > 0.
pub fn limit_classify(
    partials: &[(f64, f64)],
    _role: LimitRole,
    cfg: &ClassifyConfig,
) -> Result<LimitVerdict> {
    if partials.len() < cfg.window {
        return Err(Error::TooFewPoints {
            needed: cfg.window,
            got: partials.len(),
        });
    }
    for pair in partials.windows(2) {
        if !(pair[1].0 < pair[0].0) {
            return Err(Error::Argument(
                "epsilon values must be strictly decreasing".into(),
            ));
        }
    }
    let tail = &partials[partials.len() - cfg.window..];
    let v: Vec<f64> = tail.iter().map(|&(_, val)| val).collect();
    let eps: Vec<f64> = tail.iter().map(|&(e, _)| e).collect();
    let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let evidence = partials.to_vec();

    // log|v| against log log(1/eps); reported as diagnostic only
    let fit_exponent = fit_log_exponent(&eps, &v);

    let verdict = |kind, value| LimitVerdict {
        kind,
        value,
        evidence: evidence.clone(),
        fit_exponent,
    };

    let vlast = *v.last().unwrap();
    let diffs: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.iter().all(|d| d.abs() <= 1e-13 * scale.max(1e-300)) {
        return Ok(verdict(VerdictKind::ConvergesTo, Some(vlast)));
    }
    let increasing = diffs.iter().all(|&d| d >= 0.0);
    let decreasing = diffs.iter().all(|&d| d <= 0.0);
    let positive = v.iter().all(|&x| x > 0.0);

    // contraction of successive differences
    let mut max_ratio = 0.0f64;
    let mut contracting = true;
    for w in diffs.windows(2) {
        if w[0].abs() <= 1e-13 * scale.max(1e-300) {
            continue;
        }
        let ratio = w[1].abs() / w[0].abs();
        max_ratio = max_ratio.max(ratio);
        if ratio > cfg.contraction {
            contracting = false;
        }
    }

    if contracting {
        // geometric Richardson extrapolation from the last two differences
        let d_last = diffs[diffs.len() - 1];
        let d_prev = diffs[diffs.len() - 2];
        let rho = if d_prev.abs() > 0.0 { d_last / d_prev } else { 0.0 };
        let limit = if rho.abs() < 1.0 {
            vlast + d_last * rho / (1.0 - rho)
        } else {
            vlast
        };
        if decreasing && positive && limit <= cfg.zero_fraction * vlast {
            return Ok(verdict(VerdictKind::TendsToZero, None));
        }
        return Ok(verdict(VerdictKind::ConvergesTo, Some(limit)));
    }
    if increasing {
        return Ok(verdict(VerdictKind::DivergesToInfinity, None));
    }
    if decreasing && positive && vlast / v[0] <= cfg.contraction {
        return Ok(verdict(VerdictKind::TendsToZero, None));
    }
    Ok(verdict(VerdictKind::Inconclusive, None))
}

fn fit_log_exponent(eps: &[f64], v: &[f64]) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&e, &val) in eps.iter().zip(v) {
        if val.abs() > 0.0 && e < 1.0 {
            xs.push((1.0 / e).ln().ln());
            ys.push(val.abs().ln());
        }
    }
    if xs.len() < 3 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Random SO(n) matrix: QR of a Gaussian matrix with sign fixing.
pub fn random_rotation<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    loop {
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = g.qr();
        let mut q = qr.q();
        let rdiag = qr.r();
        for i in 0..n {
            if rdiag[(i, i)] < 0.0 {
                for row in 0..n {
                    q[(row, i)] = -q[(row, i)];
                }
            }
        }
        if q.clone().lu().determinant() < 0.0 {
            for row in 0..n {
                q[(row, 0)] = -q[(row, 0)];
            }
        }
        let defect = (q.transpose() * &q - DMatrix::identity(n, n)).abs().max();
        if defect < 1e-13 {
            return q;
        }
    }
}
