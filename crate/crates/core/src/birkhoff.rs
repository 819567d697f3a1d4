//! Special Birkhoff sums S(k,l) of singular cocycles: pointwise orbit
//! summation, exact renormalized means via tower floor integrals, edge
//! constant bookkeeping along renormalization, growth diagnostics of the
//! p_a seminorm and plain Birkhoff sums with the Zorich decomposition bound.

use crate::error::{Error, Result};
use crate::linalg::big_to_f64;
use crate::renorm::RenormState;
use crate::singular::SingularCocycle;
use num::ToPrimitive;

/// Mutable orbit budget shared across calls of one experiment.
#[derive(Clone, Debug)]
pub struct OrbitBudget {
    pub remaining: u64,
}

impl OrbitBudget {
    pub fn new(limit: u64) -> Self {
        OrbitBudget { remaining: limit }
    }

    pub fn standard() -> Self {
        // default orbit budget per call chain
        OrbitBudget::new(100_000_000)
    }

    /// Public spending entry for cross-module consumers.
    pub fn spend_public(&mut self, n: u64) -> Result<()> {
        self.spend(n)
    }

    fn spend(&mut self, n: u64) -> Result<()> {
        if n > self.remaining {
            return Err(Error::BudgetExceeded(format!(
                "orbit budget exhausted: needed {n}, left {}",
                self.remaining
            )));
        }
        self.remaining -= n;
        Ok(())
    }
}

/// Tower heights at level k as u64, or an overflow error.
fn heights_u64(state: &RenormState, k: usize) -> Result<Vec<u64>> {
    state
        .heights(k)
        .iter()
        .map(|h| {
            h.to_u64()
                .ok_or(Error::HeightOverflowBudget { level: k })
        })
        .collect()
}

/// S(k)phi(x) by direct orbit summation: x must lie in the interior of some
/// I_beta^(k); the sum runs over the return word of length Q_beta(k).
pub fn sbs_eval(
    phi: &SingularCocycle,
    state: &RenormState,
    k: usize,
    x: f64,
    budget: &mut OrbitBudget,
) -> Result<f64> {
    let level = state.iet_at(k);
    let beta = level.symbol_of(x)?;
    let heights = heights_u64(state, k)?;
    let q = heights[beta];
    budget.spend(q)?;
    let mut sum = 0.0;
    let mut y = x;
    for i in 0..q {
        sum += phi.eval(y)?;
        if i + 1 < q {
            y = state.base.apply(y)?;
        }
    }
    Ok(sum)
}

/// Derivative of S(k)phi at x (the base map is a piecewise translation, so
/// the chain rule contributes nothing).
pub fn sbs_deriv(
    phi: &SingularCocycle,
    state: &RenormState,
    k: usize,
    x: f64,
    budget: &mut OrbitBudget,
) -> Result<f64> {
    let level = state.iet_at(k);
    let beta = level.symbol_of(x)?;
    let heights = heights_u64(state, k)?;
    let q = heights[beta];
    budget.spend(q)?;
    let mut sum = 0.0;
    let mut y = x;
    for i in 0..q {
        sum += phi.deriv(y)?;
        if i + 1 < q {
            y = state.base.apply(y)?;
        }
    }
    Ok(sum)
}

/// S(k,l) of a caller-supplied cocycle on I^(k): sums over the return word
/// of T^(k) with multiplicities Q(k,l).
pub fn sbs_eval_between<F>(
    state: &RenormState,
    k: usize,
    l: usize,
    x: f64,
    mut eval_k: F,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let level_k = state.iet_at(k);
    let level_l = state.iet_at(l);
    let beta = level_l.symbol_of(x)?;
    let q = state.q_product(k, l).row_sums()[beta]
        .to_u64()
        .ok_or(Error::HeightOverflowBudget { level: l })?;
    let mut sum = 0.0;
    let mut y = x;
    for i in 0..q {
        sum += eval_k(y)?;
        if i + 1 < q {
            y = level_k.apply(y)?;
        }
    }
    Ok(sum)
}

/// Exact mean vector v_k = M^(k)(S(k) phi): for each alpha the mean over
/// I_alpha^(k), computed as the sum of closed-form integrals of phi over the
/// tower floors divided by |I_alpha^(k)|. No quadrature error at the
/// singularities.
pub fn sbs_mean_vector(
    phi: &SingularCocycle,
    state: &RenormState,
    k: usize,
    budget: &mut OrbitBudget,
) -> Result<Vec<f64>> {
    let d = state.d();
    let heights = heights_u64(state, k)?;
    let total: u64 = heights.iter().sum();
    budget.spend(total)?;
    let level = state.iet_at(k);
    let mut out = vec![0.0; d];
    for alpha in 0..d {
        let len = level.lengths()[alpha];
        let mut x = level.left_endpoint(alpha);
        let mut acc = 0.0;
        for i in 0..heights[alpha] {
            // each floor [x, x + len) sits inside one base interval; the
            // midpoint identifies the branch even when the floor is flush
            // against a division point
            let mid = x + 0.5 * len;
            let s = state.base.symbol_of(mid)?;
            acc += phi.integral_on(s, x, x + len);
            if i + 1 < heights[alpha] {
                x += state.base.translations()[s];
            }
        }
        out[alpha] = acc / len;
    }
    Ok(out)
}

/// Mean vectors for all levels 0..=kmax that fit in the budget; stops at
/// the largest feasible level and reports it.
pub struct MeanSequence {
    pub vectors: Vec<Vec<f64>>,
    /// largest level with an exact mean vector
    pub kmax: usize,
    pub budget_hit: bool,
}

pub fn sbs_mean_sequence(
    phi: &SingularCocycle,
    state: &RenormState,
    kmax: usize,
    budget: &mut OrbitBudget,
) -> Result<MeanSequence> {
    let mut vectors = Vec::new();
    let mut budget_hit = false;
    let top = kmax.min(state.depth());
    for k in 0..=top {
        match sbs_mean_vector(phi, state, k, budget) {
            Ok(v) => vectors.push(v),
            Err(Error::BudgetExceeded(_)) | Err(Error::HeightOverflowBudget { .. }) => {
                budget_hit = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if vectors.is_empty() {
        return Err(Error::BudgetExceeded("no level fits the orbit budget".into()));
    }
    Ok(MeanSequence { kmax: vectors.len() - 1, vectors, budget_hit })
}

/// Edge-constant bookkeeping along renormalization: which base endpoint each
/// level-k endpoint orbit hits. chi gives the right-edge inheritance;
/// alpha_star sees two hits, alpha_sub none.
#[derive(Clone, Debug)]
pub struct EdgeBookkeeping {
    pub level: usize,
    /// per symbol: base symbol whose left endpoint the l-orbit hits
    pub left_hits: Vec<usize>,
    /// per symbol: base symbols whose right endpoint the r-orbit hits
    pub right_hits: Vec<Vec<usize>>,
    /// chi on symbols with exactly one right hit
    pub chi: Vec<Option<usize>>,
    pub alpha_star: Option<usize>,
    pub alpha_sub: Option<usize>,
}

pub fn sbs_edge_constants(
    state: &RenormState,
    k: usize,
    budget: &mut OrbitBudget,
) -> Result<EdgeBookkeeping> {
    let d = state.d();
    let base = &state.base;
    let eps = base.keane_eps();
    let heights = heights_u64(state, k)?;
    budget.spend(heights.iter().sum::<u64>() * 2)?;
    let level = state.iet_at(k);
    let lefts: Vec<f64> = (0..d).map(|s| base.left_endpoint(s)).collect();
    let rights: Vec<f64> = (0..d).map(|s| base.right_endpoint(s)).collect();
    // hit tolerance grows with the accumulated rounding of the orbit; it
    // stays far below the level-(k+1) interval scale, so no false positives
    let tol = |step: u64| eps.max(4e-16 * base.total() * (step as f64 + 8.0));

    let mut left_hits = vec![usize::MAX; d];
    let mut right_hits: Vec<Vec<usize>> = vec![Vec::new(); d];
    for alpha in 0..d {
        // left endpoints travel with the forward map; snapping to the hit
        // division point re-anchors the orbit and selects the correct
        // (left-closed) branch
        let mut x = level.left_endpoint(alpha);
        for step in 0..heights[alpha] {
            let t = tol(step);
            let mut matches = lefts
                .iter()
                .enumerate()
                .filter(|(_, &e)| (x - e).abs() < t)
                .map(|(s, _)| s);
            if let Some(s) = matches.next() {
                if matches.next().is_some() {
                    return Err(Error::AmbiguousHit { step: step as usize });
                }
                if left_hits[alpha] != usize::MAX && left_hits[alpha] != s {
                    return Err(Error::AmbiguousHit { step: step as usize });
                }
                left_hits[alpha] = s;
                x = lefts[s];
            }
            if step + 1 < heights[alpha] {
                x = base.apply(x)?;
            }
        }
        // right endpoints travel with the right-continuous map
        let mut y = level.left_endpoint(alpha) + level.lengths()[alpha];
        for step in 0..heights[alpha] {
            let t = tol(step);
            let hits: Vec<usize> = rights
                .iter()
                .enumerate()
                .filter(|(_, &e)| (y - e).abs() < t)
                .map(|(s, _)| s)
                .collect();
            match hits.len() {
                0 => {}
                1 => {
                    right_hits[alpha].push(hits[0]);
                    y = rights[hits[0]];
                }
                _ => return Err(Error::AmbiguousHit { step: step as usize }),
            }
            if step + 1 < heights[alpha] {
                y = base.apply_half_open(y)?;
            }
        }
    }
    let mut chi = vec![None; d];
    let mut alpha_star = None;
    let mut alpha_sub = None;
    for alpha in 0..d {
        match right_hits[alpha].len() {
            0 => alpha_sub = Some(alpha),
            1 => chi[alpha] = Some(right_hits[alpha][0]),
            2 => alpha_star = Some(alpha),
            _ => return Err(Error::AmbiguousHit { step: 0 }),
        }
    }
    Ok(EdgeBookkeeping { level: k, left_hits, right_hits, chi, alpha_star, alpha_sub })
}

/// Riemann zeta on (1, inf) by direct summation with an Euler-Maclaurin
/// tail, accurate to ~1e-12 for s >= 1.05.
pub fn zeta(s: f64) -> f64 {
    let n = 2000usize;
    let mut sum = 0.0;
    for k in 1..n {
        sum += (k as f64).powf(-s);
    }
    let nf = n as f64;
    sum + nf.powf(1.0 - s) / (s - 1.0) + 0.5 * nf.powf(-s) + s * nf.powf(-s - 1.0) / 12.0
}

/// Grid-based estimate of p_a(S(k) phi) with the rhs of the renormalized
/// seminorm bound for comparison.
#[derive(Clone, Debug)]
pub struct PaGrowthEntry {
    pub k: usize,
    pub estimate: f64,
    pub bound_rhs: f64,
}

pub fn pa_growth_diag(
    phi: &SingularCocycle,
    state: &RenormState,
    kmax: usize,
    grid_per_half: usize,
    budget: &mut OrbitBudget,
) -> Result<Vec<PaGrowthEntry>> {
    let a = phi.a;
    let d = state.d() as f64;
    let (p_lo, p_hi) = phi.p_a_seminorm(256);
    let _ = p_lo;
    let mut out = Vec::new();
    for k in 0..=kmax.min(state.depth()) {
        let level = state.iet_at(k);
        let mut est: f64 = 0.0;
        for alpha in 0..state.d() {
            let l = level.left_endpoint(alpha);
            let r = level.right_endpoint(alpha);
            let mid = 0.5 * (l + r);
            for half in 0..2 {
                for g in 1..=grid_per_half {
                    let dist = (mid - l) * 2f64.powi(-(g as i32));
                    let x = if half == 0 { l + dist } else { r - dist };
                    let deriv = sbs_deriv(phi, state, k, x, budget)?;
                    let w = dist.powf(1.0 + a);
                    est = est.max((deriv * w).abs());
                }
            }
        }
        let lmax = level.lengths().iter().cloned().fold(0.0f64, f64::max);
        let lmin = level.lengths().iter().cloned().fold(f64::INFINITY, f64::min);
        let bound_rhs = if a > 0.0 {
            (2.0 + 2.0 * d * zeta(1.0 + a) * (lmax / lmin).powf(1.0 + a)) * p_hi
        } else {
            let qnorm = state.levels[k].q0k.norm_f64();
            p_hi * (2.0 + 2.0 * d * (1.0 + qnorm.ln()) * (lmax / lmin))
        };
        out.push(PaGrowthEntry { k, estimate: est, bound_rhs });
    }
    Ok(out)
}

/// Plain Birkhoff sum phi^(n)(x).
pub fn birkhoff_sum(
    phi: &SingularCocycle,
    state: &RenormState,
    x: f64,
    n: u64,
    budget: &mut OrbitBudget,
) -> Result<f64> {
    budget.spend(n)?;
    let mut sum = 0.0;
    let mut y = x;
    for i in 0..n {
        sum += phi.eval(y)?;
        if i + 1 < n {
            y = state.base.apply(y)?;
        }
    }
    Ok(sum)
}

/// Zorich decomposition upper bound 2 sum_{l <= m(n)} ||Z(l+1)|| sup|S(l)phi|
/// with the sup taken over points at distance >= trunc from the level-l
/// division points (the singular sup is infinite without a truncation).
pub fn zorich_decomposition_bound(
    phi: &SingularCocycle,
    state: &RenormState,
    mean_vectors: &[Vec<f64>],
    n: u64,
    trunc: f64,
) -> f64 {
    let a = phi.a;
    let (_, p_hi) = phi.p_a_seminorm(128);
    let m = state.m_max(n).min(mean_vectors.len().saturating_sub(1));
    let mut bound = 0.0;
    for l in 0..=m {
        let z_next = if l + 1 <= state.depth() {
            state.levels[l + 1].z.as_ref().map(|z| z.norm_f64()).unwrap_or(1.0)
        } else {
            1.0
        };
        let v_norm = mean_vectors[l]
            .iter()
            .cloned()
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        let lmin = state.levels[l]
            .lambda
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let osc = if a > 0.0 {
            p_hi * (1.0 / (a * trunc.powf(a))
                + 2f64.powf(a + 2.0) / (a * (1.0 - a) * lmin.powf(a)))
        } else {
            p_hi * ((lmin / (2.0 * trunc)).max(1.0).ln() + 2.0)
        };
        bound += z_next * (v_norm + osc);
    }
    2.0 * bound
}

/// Lower-bound check of the renormalized derivative near a left endpoint
/// carrying a nonzero edge constant, per the renormalization lower bound.
#[derive(Clone, Debug)]
pub struct BelowRenormReport {
    pub alpha: usize,
    pub level: usize,
    /// (x - l, |S(k)phi'(x)|, guaranteed lower bound) per grid point
    pub samples: Vec<(f64, f64, f64)>,
    pub min_margin: f64,
}

pub fn below_renorm_check(
    phi: &SingularCocycle,
    state: &RenormState,
    k: usize,
    alpha: usize,
    grid: usize,
    budget: &mut OrbitBudget,
) -> Result<BelowRenormReport> {
    let a = phi.a;
    let cplus = phi.pieces[alpha].cplus;
    if cplus == 0.0 {
        return Err(Error::PreconditionFailed("C+_alpha(phi) = 0".into()));
    }
    // delta such that |(x - l_alpha)^{1+a} phi'(x)| >= |C+|/2 on (l, l+delta]
    let (l0, r0) = phi.intervals[alpha];
    let mut delta = (r0 - l0) * 0.5;
    loop {
        let mut ok = true;
        for g in 0..64 {
            let x = l0 + delta * (g as f64 + 0.5) / 64.0;
            if ((x - l0).powf(1.0 + a) * phi.deriv(x)?).abs() < cplus.abs() / 2.0 {
                ok = false;
                break;
            }
        }
        if ok {
            break;
        }
        delta *= 0.5;
        if delta < 1e-12 * (r0 - l0) {
            return Err(Error::PreconditionFailed(
                "no neighbourhood realizes the |C+|/2 envelope".into(),
            ));
        }
    }
    if state.levels[k].interval_len > delta {
        return Err(Error::PreconditionFailed(format!(
            "|I^(k)| = {} exceeds delta = {delta}",
            state.levels[k].interval_len
        )));
    }
    let level = state.iet_at(k);
    let lk = level.left_endpoint(alpha);
    let lak = level.lengths()[alpha];
    let lmax = level.lengths().iter().cloned().fold(0.0f64, f64::max);
    let lmin = level.lengths().iter().cloned().fold(f64::INFINITY, f64::min);
    let (_, p_hi) = phi.p_a_seminorm(128);
    let subtract = 2f64.powf(2.0 + a) * state.d() as f64 * zeta(1.0 + a) * p_hi
        / lak.powf(1.0 + a)
        * (lmax / lmin).powf(1.0 + a);
    let mut samples = Vec::with_capacity(grid);
    let mut min_margin = f64::INFINITY;
    for g in 1..=grid {
        let dist = 0.5 * lak * 2f64.powi(-(g as i32));
        let x = lk + dist;
        let deriv = sbs_deriv(phi, state, k, x, budget)?;
        let lower = cplus.abs() / (2.0 * dist.powf(1.0 + a)) - subtract;
        samples.push((dist, deriv.abs(), lower));
        min_margin = min_margin.min(deriv.abs() - lower);
    }
    Ok(BelowRenormReport { alpha, level: k, samples, min_margin })
}

/// Exact matrix route for piecewise-constant cocycles: S(k)h = Q(0,k) h.
pub fn matrix_route(state: &RenormState, k: usize, h: &[f64]) -> Vec<f64> {
    state.levels[k].q0k.mul_vec_f64(h)
}

/// Exact integer matrix route when h is integer-valued.
pub fn matrix_route_exact(state: &RenormState, k: usize, h: &[i64]) -> Vec<f64> {
    let big: Vec<num::BigInt> = h.iter().map(|&x| num::BigInt::from(x)).collect();
    state.levels[k]
        .q0k
        .mul_vec_big(&big)
        .iter()
        .map(big_to_f64)
        .collect()
}
