//! Concrete model of cocycles with polynomial singularities over an IET
//! partition: per-interval edge terms C^+ u_a(x - l) + C^- u_a(r - x) plus a
//! polynomial smooth part, with closed-form derivatives and integrals.
//!
//! u_a(t) = t^{-a}/a for a > 0 and u_0(t) = -log t, so the lateral limits of
//! phi'(x) (x - endpoint)^{1+a} recover the stored constants exactly.

use crate::error::{Error, Result};
use crate::iet::Iet;
use serde::{Deserialize, Serialize};

/// Tolerance used by the geometric-type test.
pub const GEOMETRIC_EPS: f64 = 1e-14;

/// One interval's data: edge constants and the smooth polynomial in the
/// local variable t = x - l (coefficients low to high degree).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Piece {
    pub alpha: usize,
    pub cplus: f64,
    pub cminus: f64,
    pub poly: Vec<f64>,
}

/// phi(x) = C_a^+ u_a(x - l_a) + C_a^- u_a(r_a - x) + s_a(x - l_a) on I_a.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingularCocycle {
    pub a: f64,
    /// interval endpoints [l_alpha, r_alpha) indexed by symbol
    pub intervals: Vec<(f64, f64)>,
    pub pieces: Vec<Piece>,
}

pub fn u_a(a: f64, t: f64) -> f64 {
    if a > 0.0 {
        t.powf(-a) / a
    } else {
        -t.ln()
    }
}

/// d/dt u_a(t) = -t^{-(1+a)} for every 0 <= a < 1.
pub fn u_a_prime(a: f64, t: f64) -> f64 {
    -t.powf(-(1.0 + a))
}

/// Antiderivative of u_a vanishing at 0 (integrable since a < 1).
pub fn u_a_int(a: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if a > 0.0 {
        t.powf(1.0 - a) / (a * (1.0 - a))
    } else {
        t - t * t.ln()
    }
}

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * t + ci)
}

fn poly_deriv_eval(c: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for (i, &ci) in c.iter().enumerate().skip(1).rev() {
        acc = acc * t + i as f64 * ci;
    }
    acc
}

fn poly_int_eval(c: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for (i, &ci) in c.iter().enumerate().rev() {
        acc = acc * t + ci / (i + 1) as f64;
    }
    acc * t
}

impl SingularCocycle {
    /// Build against the partition of `iet`. Coefficient arrays are indexed
    /// by symbol; missing polys default to zero.
    pub fn new(
        iet: &Iet,
        a: f64,
        cplus: &[f64],
        cminus: &[f64],
        smooth: &[Vec<f64>],
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&a) {
            return Err(Error::ExponentOutOfRange);
        }
        let d = iet.d();
        if cplus.len() != d || cminus.len() != d {
            return Err(Error::ParameterOutOfRange("coefficient arrays must have length d".into()));
        }
        let intervals: Vec<(f64, f64)> = (0..d)
            .map(|s| (iet.left_endpoint(s), iet.right_endpoint(s)))
            .collect();
        let pieces = (0..d)
            .map(|s| Piece {
                alpha: s,
                cplus: cplus[s],
                cminus: cminus[s],
                poly: smooth.get(s).cloned().unwrap_or_default(),
            })
            .collect();
        Ok(SingularCocycle { a, intervals, pieces })
    }

    /// Piecewise-constant cocycle h as a degenerate instance.
    pub fn piecewise_constant(iet: &Iet, h: &[f64]) -> Result<Self> {
        let d = iet.d();
        let smooth: Vec<Vec<f64>> = h.iter().map(|&v| vec![v]).collect();
        SingularCocycle::new(iet, 0.0, &vec![0.0; d], &vec![0.0; d], &smooth)
    }

    pub fn d(&self) -> usize {
        self.pieces.len()
    }

    pub fn total(&self) -> f64 {
        self.intervals
            .iter()
            .map(|(_, r)| *r)
            .fold(0.0, f64::max)
    }

    fn piece_of(&self, x: f64) -> Result<usize> {
        for (s, &(l, r)) in self.intervals.iter().enumerate() {
            if x > l && x < r {
                return Ok(s);
            }
        }
        Err(Error::OutOfDomain(x))
    }

    /// Evaluate at an interior point (division points are one-sided limits
    /// and deliberately undefined).
    pub fn eval(&self, x: f64) -> Result<f64> {
        let s = self.piece_of(x)?;
        Ok(self.eval_on(s, x))
    }

    pub fn eval_on(&self, s: usize, x: f64) -> f64 {
        let (l, r) = self.intervals[s];
        let p = &self.pieces[s];
        let mut v = poly_eval(&p.poly, x - l);
        if p.cplus != 0.0 {
            v += p.cplus * u_a(self.a, x - l);
        }
        if p.cminus != 0.0 {
            v += p.cminus * u_a(self.a, r - x);
        }
        v
    }

    pub fn deriv(&self, x: f64) -> Result<f64> {
        let s = self.piece_of(x)?;
        let (l, r) = self.intervals[s];
        let p = &self.pieces[s];
        let mut v = poly_deriv_eval(&p.poly, x - l);
        if p.cplus != 0.0 {
            v += p.cplus * u_a_prime(self.a, x - l);
        }
        if p.cminus != 0.0 {
            v -= p.cminus * u_a_prime(self.a, r - x);
        }
        Ok(v)
    }

    /// Exact integral over [u, v] contained in one interval.
    pub fn integral(&self, u: f64, v: f64) -> Result<f64> {
        if v < u {
            return self.integral(v, u).map(|x| -x);
        }
        let eps = 1e-15 * self.total();
        let s = self
            .intervals
            .iter()
            .position(|&(l, r)| u >= l - eps && v <= r + eps)
            .ok_or(Error::CrossesDivision(u, v))?;
        Ok(self.integral_on(s, u, v))
    }

    /// Integral over [u, v] within interval s (caller guarantees inclusion).
    pub fn integral_on(&self, s: usize, u: f64, v: f64) -> f64 {
        let (l, r) = self.intervals[s];
        let p = &self.pieces[s];
        let mut total = poly_int_eval(&p.poly, v - l) - poly_int_eval(&p.poly, u - l);
        if p.cplus != 0.0 {
            total += p.cplus * (u_a_int(self.a, v - l) - u_a_int(self.a, u - l));
        }
        if p.cminus != 0.0 {
            total += p.cminus * (u_a_int(self.a, r - u) - u_a_int(self.a, r - v));
        }
        total
    }

    /// Mean value over a subinterval of one piece.
    pub fn mean(&self, u: f64, v: f64) -> Result<f64> {
        Ok(self.integral(u, v)? / (v - u))
    }

    /// Integral over all of I.
    pub fn integral_total(&self) -> f64 {
        self.intervals
            .iter()
            .enumerate()
            .map(|(s, &(l, r))| self.integral_on(s, l, r))
            .sum()
    }

    /// L1 norm over I (splits each piece at its sign structure numerically).
    pub fn l1_norm(&self, grid_per_piece: usize) -> f64 {
        let mut total = 0.0;
        for (s, &(l, r)) in self.intervals.iter().enumerate() {
            // geometric refinement near both endpoints handles the
            // integrable singularities
            let pts = piece_grid(l, r, grid_per_piece);
            for w in pts.windows(2) {
                let seg = self.integral_on(s, w[0], w[1]);
                let mid = self.eval_on(s, 0.5 * (w[0] + w[1]));
                total += if mid >= 0.0 { seg.abs() } else { seg.abs() };
                let _ = mid;
            }
        }
        // |integral| over sign-stable sub-segments approximates the L1 norm
        total
    }

    /// Mean projection over an arbitrary partition given by cell borders.
    pub fn mean_projection(&self, cells: &[(f64, f64)]) -> Result<Vec<f64>> {
        cells.iter().map(|&(u, v)| self.mean(u, v)).collect()
    }

    /// Mean projection over the cocycle's own partition.
    pub fn mean_vector(&self) -> Vec<f64> {
        self.intervals
            .iter()
            .enumerate()
            .map(|(s, &(l, r))| self.integral_on(s, l, r) / (r - l))
            .collect()
    }

    /// Geometric-type test: both displayed edge products vanish.
    pub fn is_geometric(&self, iet: &Iet) -> bool {
        let d = self.d();
        let perm = iet.perm();
        let last0 = perm.symbol_at(0, d - 1);
        let last1 = perm.symbol_at(1, d - 1);
        let first0 = perm.symbol_at(0, 0);
        let first1 = perm.symbol_at(1, 0);
        let scale = self
            .pieces
            .iter()
            .map(|p| p.cplus.abs().max(p.cminus.abs()))
            .fold(1.0, f64::max);
        let prod_minus = self.pieces[last0].cminus * self.pieces[last1].cminus;
        let prod_plus = self.pieces[first0].cplus * self.pieces[first1].cplus;
        prod_minus.abs() <= GEOMETRIC_EPS * scale * scale
            && prod_plus.abs() <= GEOMETRIC_EPS * scale * scale
    }

    /// p_a seminorm as a certified (lower, upper) pair. The lower estimate
    /// maximizes |phi'(x)| weighted by the distance to the nearest endpoint
    /// over a refined grid; the upper adds a first-order envelope remainder
    /// per grid cell.
    pub fn p_a_seminorm(&self, grid_per_piece: usize) -> (f64, f64) {
        let a = self.a;
        let mut lower: f64 = 0.0;
        let mut upper: f64 = 0.0;
        for (s, &(l, r)) in self.intervals.iter().enumerate() {
            let mid = 0.5 * (l + r);
            let p = &self.pieces[s];
            let mut handle_half = |x0: f64, x1: f64, left_side: bool| {
                let pts = half_grid(x0, x1, grid_per_piece, left_side);
                for w in pts.windows(2) {
                    let xa = w[0];
                    let xb = w[1];
                    let xm = 0.5 * (xa + xb);
                    let weight = |x: f64| {
                        if left_side {
                            (x - l).powf(1.0 + a)
                        } else {
                            (r - x).powf(1.0 + a)
                        }
                    };
                    let dphi = |x: f64| {
                        let mut v = poly_deriv_eval(&p.poly, x - l);
                        if p.cplus != 0.0 {
                            v += p.cplus * u_a_prime(a, x - l);
                        }
                        if p.cminus != 0.0 {
                            v -= p.cminus * u_a_prime(a, r - x);
                        }
                        v
                    };
                    let env = |x: f64| (dphi(x) * weight(x)).abs();
                    let local = env(xa).max(env(xb)).max(env(xm));
                    lower = lower.max(local);
                    // cell remainder: |(phi' w)'| bound from second
                    // derivatives of the closed form
                    let h = xb - xa;
                    let dl = if left_side { xa - l } else { r - xb };
                    let d2max = p.cplus.abs() * (1.0 + a) * (xa - l).powf(-(2.0 + a)).min(1e300)
                        + p.cminus.abs() * (1.0 + a) * (r - xb).powf(-(2.0 + a)).min(1e300)
                        + poly_second_bound(&p.poly, r - l);
                    let d1max = p.cplus.abs() * (xa - l).powf(-(1.0 + a))
                        + p.cminus.abs() * (r - xb).powf(-(1.0 + a))
                        + poly_first_bound(&p.poly, r - l);
                    let wmax = if left_side {
                        (xb - l).powf(1.0 + a)
                    } else {
                        (r - xa).powf(1.0 + a)
                    };
                    let wpmax = (1.0 + a) * dl.max(1e-300).powf(a);
                    upper = upper.max(local + h * (d2max * wmax + d1max * wpmax));
                }
            };
            handle_half(l, mid, true);
            handle_half(mid, r, false);
        }
        (lower, upper.max(lower))
    }

    /// Extract edge constants by Richardson extrapolation of
    /// phi'(x) dist^{1+a} at geometric distances 2^-n.
    pub fn extract_edge_constants(&self) -> Vec<(f64, f64)> {
        (0..self.d())
            .map(|s| {
                let (l, r) = self.intervals[s];
                let len = r - l;
                let value = |x: f64, left: bool| {
                    let d = self.deriv(x).unwrap();
                    if left {
                        -d * (x - l).powf(1.0 + self.a)
                    } else {
                        d * (r - x).powf(1.0 + self.a)
                    }
                };
                let cp = richardson(|n| value(l + len * 2f64.powi(-(n as i32)), true));
                let cm = richardson(|n| value(r - len * 2f64.powi(-(n as i32)), false));
                (cp, cm)
            })
            .collect()
    }

    /// phi - h for a piecewise-constant h over the same partition.
    pub fn sub_piecewise_const(&self, h: &[f64]) -> SingularCocycle {
        let mut out = self.clone();
        for (s, p) in out.pieces.iter_mut().enumerate() {
            if p.poly.is_empty() {
                p.poly = vec![-h[s]];
            } else {
                p.poly[0] -= h[s];
            }
        }
        out
    }

    /// Scale by a constant.
    pub fn scaled(&self, c: f64) -> SingularCocycle {
        let mut out = self.clone();
        for p in out.pieces.iter_mut() {
            p.cplus *= c;
            p.cminus *= c;
            for q in p.poly.iter_mut() {
                *q *= c;
            }
        }
        out
    }

    /// Pointwise sum (same partition).
    pub fn add(&self, other: &SingularCocycle) -> SingularCocycle {
        let mut out = self.clone();
        for (p, q) in out.pieces.iter_mut().zip(&other.pieces) {
            p.cplus += q.cplus;
            p.cminus += q.cminus;
            if p.poly.len() < q.poly.len() {
                p.poly.resize(q.poly.len(), 0.0);
            }
            for (i, &c) in q.poly.iter().enumerate() {
                p.poly[i] += c;
            }
        }
        out
    }
}

fn poly_second_bound(c: &[f64], len: f64) -> f64 {
    let mut b = 0.0;
    for (i, &ci) in c.iter().enumerate().skip(2) {
        b += ci.abs() * (i * (i - 1)) as f64 * len.powi(i as i32 - 2);
    }
    b
}

fn poly_first_bound(c: &[f64], len: f64) -> f64 {
    let mut b = 0.0;
    for (i, &ci) in c.iter().enumerate().skip(1) {
        b += ci.abs() * i as f64 * len.powi(i as i32 - 1);
    }
    b
}

/// Geometric grid on one half-interval accumulating at the singular end.
fn half_grid(x0: f64, x1: f64, n: usize, left_side: bool) -> Vec<f64> {
    let len = x1 - x0;
    let mut pts = Vec::with_capacity(n + 2);
    let n_geo = n / 2;
    let n_lin = n - n_geo;
    if left_side {
        for k in (1..=n_geo).rev() {
            pts.push(x0 + len * 2f64.powi(-(k as i32 + 1)));
        }
        for k in 0..=n_lin {
            pts.push(x0 + len * (0.25 + 0.75 * k as f64 / n_lin as f64));
        }
    } else {
        for k in 0..=n_lin {
            pts.push(x0 + len * 0.75 * k as f64 / n_lin as f64);
        }
        for k in 1..=n_geo {
            pts.push(x1 - len * 2f64.powi(-(k as i32 + 1)));
        }
    }
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-18);
    pts
}

fn piece_grid(l: f64, r: f64, n: usize) -> Vec<f64> {
    let mid = 0.5 * (l + r);
    let mut pts = half_grid(l, mid, n, true);
    pts.extend(half_grid(mid, r, n, false));
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-18);
    pts
}

/// Richardson extrapolation of a sequence f(n) sampled at scales 2^-n.
fn richardson<F: Fn(usize) -> f64>(f: F) -> f64 {
    let top = 40;
    let mut prev = f(top - 1);
    let cur = f(top);
    // one extrapolation step assuming first-order error in the scale
    let extr = 2.0 * cur - prev;
    prev = extr;
    prev
}

/// Report of the mean-oscillation inequalities on one subinterval.
#[derive(Clone, Debug)]
pub struct OscillationReport {
    /// max over the grid of |phi(s) - m| minus the displayed bound (<= 0 ok)
    pub max_pointwise_slack: f64,
    /// integrated oscillation minus its bound (<= 0 ok)
    pub integral_slack: f64,
    /// mean-oscillation bound slack per the 2^{2+a}/(1-a) inequality
    pub mean_oscillation_slack: f64,
}

/// Verify the oscillation inequalities for phi on J = (x0, x1] inside one
/// interval, with C the p_a-type envelope constant on J.
pub fn oscillation_check(
    phi: &SingularCocycle,
    s: usize,
    x0: f64,
    x1: f64,
    grid: usize,
) -> Result<OscillationReport> {
    let a = phi.a;
    let (l, r) = phi.intervals[s];
    if x0 < l || x1 > r || x0 >= x1 {
        return Err(Error::CrossesDivision(x0, x1));
    }
    let len = x1 - x0;
    // envelope constant on J anchored at x0
    let mut c_env: f64 = 0.0;
    for k in 0..=grid {
        let x = x0 + len * (k as f64 + 0.5) / (grid as f64 + 1.0);
        let w = (x - x0).powf(1.0 + a);
        c_env = c_env.max((phi.deriv(x)? * w).abs());
    }
    let m = phi.integral_on(s, x0, x1) / len;
    let bound = |x: f64| {
        if a > 0.0 {
            c_env * (1.0 / (a * (x - x0).powf(a)) + (2.0 * a - 1.0) / (a * (1.0 - a) * len.powf(a)))
        } else {
            c_env * ((len / (x - x0)).ln() + 1.0)
        }
    };
    let mut max_slack = f64::NEG_INFINITY;
    let mut int_osc = 0.0;
    for k in 0..grid {
        let x = x0 + len * (k as f64 + 0.5) / grid as f64;
        let dev = (phi.eval_on(s, x) - m).abs();
        max_slack = max_slack.max(dev - bound(x));
        int_osc += dev * len / grid as f64;
    }
    let integral_slack = int_osc / len - 2.0 * c_env / ((1.0 - a) * len.powf(a));
    // per-interval mean oscillation vs the 2^{2+a} p_a / (1-a) |I|^a bound
    let (p_lo, _) = phi.p_a_seminorm(64);
    let full_len = r - l;
    let mut osc_full = 0.0;
    let m_full = phi.integral_on(s, l, r) / full_len;
    let sub = 256;
    for k in 0..sub {
        let u = l + full_len * k as f64 / sub as f64;
        let v = l + full_len * (k + 1) as f64 / sub as f64;
        osc_full += (phi.integral_on(s, u, v) - m_full * (v - u)).abs();
    }
    let mean_oscillation_slack =
        osc_full / full_len - 2f64.powf(2.0 + a) * p_lo / ((1.0 - a) * full_len.powf(a));
    Ok(OscillationReport {
        max_pointwise_slack: max_slack,
        integral_slack,
        mean_oscillation_slack,
    })
}

/// Sublevel-measure construction: find a subinterval of J = (x0, x1] of
/// length >= |J|/4 on which |phi| >= c/(4 |J|^a), assuming the derivative
/// envelope bound |phi'(x)(x - x0)^{1+a}| >= c on J.
pub fn below_interval(
    phi: &SingularCocycle,
    s: usize,
    x0: f64,
    x1: f64,
    c: f64,
    grid: usize,
) -> Result<(f64, f64)> {
    let a = phi.a;
    below_interval_generic(
        |x| phi.eval_on(s, x),
        &mut |x| phi.deriv(x),
        a,
        x0,
        x1,
        c,
        grid,
    )
}

/// Closure-based variant of the sublevel construction, usable for special
/// Birkhoff sums evaluated by orbit summation.
pub fn below_interval_generic<E, D>(
    mut eval: E,
    deriv: &mut D,
    a: f64,
    x0: f64,
    x1: f64,
    c: f64,
    grid: usize,
) -> Result<(f64, f64)>
where
    E: FnMut(f64) -> f64,
    D: FnMut(f64) -> Result<f64>,
{
    let len = x1 - x0;
    // verify the precondition on a grid
    for k in 0..grid {
        let x = x0 + len * (k as f64 + 0.5) / grid as f64;
        let v = (deriv(x)? * (x - x0).powf(1.0 + a)).abs();
        if v < c * (1.0 - 1e-9) {
            return Err(Error::PreconditionFailed(format!(
                "derivative envelope {v:.3e} < c = {c:.3e} at x = {x}"
            )));
        }
    }
    let xi = c / (4.0 * len.powf(a));
    // phi is strictly monotone on J; scan for the sublevel interval
    let n = grid.max(256);
    let mut best: Option<(f64, f64)> = None;
    let mut run_start: Option<f64> = None;
    for k in 0..=n {
        let x = x0 + len * (k as f64 + 0.5) / (n as f64 + 1.0);
        let ok = eval(x).abs() >= xi;
        match (ok, run_start) {
            (true, None) => run_start = Some(x),
            (false, Some(st)) => {
                let cand = (st, x);
                if best.map(|b| cand.1 - cand.0 > b.1 - b.0).unwrap_or(true) {
                    best = Some(cand);
                }
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(st) = run_start {
        let cand = (st, x1);
        if best.map(|b| cand.1 - cand.0 > b.1 - b.0).unwrap_or(true) {
            best = Some(cand);
        }
    }
    let (u, v) = best.ok_or(Error::PreconditionFailed("no sublevel interval found".into()))?;
    if v - u < len / 4.0 * (1.0 - 1e-6) {
        return Err(Error::PreconditionFailed(format!(
            "returned interval too short: {} < |J|/4 = {}",
            v - u,
            len / 4.0
        )));
    }
    Ok((u, v))
}
