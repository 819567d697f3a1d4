//! Rauzy-Veech induction, Zorich grouping, balanced-return acceleration and
//! the exact integer cocycle bookkeeping (blocks Z(k), products Q(k,l),
//! Rokhlin towers).
//!
//! Lengths are carried as f64 and optionally as exact rationals; cocycle
//! entries are always arbitrary-precision integers because they grow like
//! e^{lambda_1 k} and overflow 64 bits near k ~ 30-40.

use crate::error::{Error, Result};
use crate::iet::{Iet, PermutationPair, KEANE_EPS_REL};
use crate::linalg::{big_log, BMat, IMat};
#[cfg(test)]
use crate::linalg::big_to_f64;
use num::bigint::BigInt;
use num::rational::BigRational;
use num::{ToPrimitive, Zero};
#[cfg(test)]
use num::One;

/// One elementary Rauzy-Veech step.
#[derive(Clone, Debug)]
pub struct RauzyStep {
    /// type bit: 0 when the top (pi0) last interval wins, 1 otherwise
    pub eps: u8,
    /// winner symbol pi_eps^{-1}(d)
    pub winner: usize,
    /// loser symbol pi_{1-eps}^{-1}(d)
    pub loser: usize,
    /// A = Id + E_{winner, loser}, det A = 1
    pub a_matrix: IMat,
    pub new_perm: PermutationPair,
    pub new_lengths: Vec<f64>,
}

/// Internal length state, float or exact rational.
#[derive(Clone, Debug)]
enum Lengths {
    F64(Vec<f64>),
    Rat(Vec<BigRational>),
}

impl Lengths {
    fn to_f64(&self) -> Vec<f64> {
        match self {
            Lengths::F64(v) => v.clone(),
            Lengths::Rat(v) => v.iter().map(|x| x.to_f64().unwrap()).collect(),
        }
    }

    fn total_f64(&self) -> f64 {
        self.to_f64().iter().sum()
    }
}

/// Combinatorial core of one elementary step: decides the type, returns the
/// new permutation and updates lengths in place.
fn rauzy_combinatorics(perm: &PermutationPair, eps: u8) -> PermutationPair {
    let d = perm.d();
    let (top, bottom) = perm.rows();
    let (win_row, lose_row) = if eps == 0 { (&top, &bottom) } else { (&bottom, &top) };
    let winner = win_row[d - 1];
    // position of the winner in the losing row
    let wpos = lose_row.iter().position(|&s| s == winner).unwrap();
    let loser = lose_row[d - 1];
    // the loser moves to just after the winner in the losing row
    let mut new_lose = Vec::with_capacity(d);
    for (p, &s) in lose_row.iter().enumerate() {
        if p == d - 1 {
            break;
        }
        new_lose.push(s);
        if p == wpos {
            new_lose.push(loser);
        }
    }
    let (new_top, new_bottom) = if eps == 0 {
        (top.clone(), new_lose)
    } else {
        (new_lose, bottom.clone())
    };
    PermutationPair::from_rows(&new_top, &new_bottom).expect("Rauzy move preserves irreducibility")
}

fn step_type_f64(perm: &PermutationPair, lambda: &[f64], eps_tol: f64) -> Result<u8> {
    let a0 = perm.symbol_at(0, perm.d() - 1);
    let a1 = perm.symbol_at(1, perm.d() - 1);
    let diff = lambda[a0] - lambda[a1];
    if diff.abs() < eps_tol {
        return Err(Error::DegenerateStep);
    }
    Ok(if diff > 0.0 { 0 } else { 1 })
}

fn step_type_rat(perm: &PermutationPair, lambda: &[BigRational]) -> Result<u8> {
    let a0 = perm.symbol_at(0, perm.d() - 1);
    let a1 = perm.symbol_at(1, perm.d() - 1);
    match lambda[a0].cmp(&lambda[a1]) {
        std::cmp::Ordering::Greater => Ok(0),
        std::cmp::Ordering::Less => Ok(1),
        std::cmp::Ordering::Equal => Err(Error::DegenerateStep),
    }
}

/// One elementary Rauzy-Veech induction step on a float IET.
pub fn rauzy_step(iet: &Iet) -> Result<(Iet, RauzyStep)> {
    let perm = iet.perm().clone();
    let d = perm.d();
    let lambda = iet.lengths().to_vec();
    let eps = step_type_f64(&perm, &lambda, KEANE_EPS_REL * iet.total())?;
    let winner = perm.symbol_at(eps, d - 1);
    let loser = perm.symbol_at(1 - eps, d - 1);
    let new_perm = rauzy_combinatorics(&perm, eps);
    let mut new_lengths = lambda;
    new_lengths[winner] -= new_lengths[loser];
    let a_matrix = IMat::elementary(d, winner, loser);
    let new_iet = Iet::new(new_perm.clone(), new_lengths.clone())?;
    Ok((
        new_iet,
        RauzyStep { eps, winner, loser, a_matrix, new_perm, new_lengths },
    ))
}

/// State advanced by the induction machinery; generic over length arithmetic.
#[derive(Clone, Debug)]
struct Walker {
    perm: PermutationPair,
    lengths: Lengths,
}

impl Walker {
    fn step(&mut self) -> Result<(u8, usize, usize)> {
        let d = self.perm.d();
        let eps = match &self.lengths {
            Lengths::F64(l) => {
                let tot: f64 = l.iter().sum();
                step_type_f64(&self.perm, l, KEANE_EPS_REL * tot)?
            }
            Lengths::Rat(l) => step_type_rat(&self.perm, l)?,
        };
        let winner = self.perm.symbol_at(eps, d - 1);
        let loser = self.perm.symbol_at(1 - eps, d - 1);
        self.perm = rauzy_combinatorics(&self.perm, eps);
        match &mut self.lengths {
            Lengths::F64(l) => l[winner] -= l[loser],
            Lengths::Rat(l) => {
                let t = &l[winner] - &l[loser];
                l[winner] = t;
            }
        }
        Ok((eps, winner, loser))
    }

    fn balance(&self) -> f64 {
        let l = self.lengths.to_f64();
        let total: f64 = l.iter().sum();
        let min = l.iter().cloned().fold(f64::INFINITY, f64::min);
        total / min
    }
}

/// One Zorich step: the maximal run of consecutive same-type elementary
/// steps, its (transposed) matrix product and the run length.
///
/// Returns (next IET, Z block, run length).
pub fn zorich_step(iet: &Iet) -> Result<(Iet, BMat, usize)> {
    let mut walker = Walker {
        perm: iet.perm().clone(),
        lengths: Lengths::F64(iet.lengths().to_vec()),
    };
    let (z, r) = zorich_advance(&mut walker, usize::MAX)?;
    let next = Iet::new(walker.perm, walker.lengths.to_f64())?;
    Ok((next, z, r))
}

/// Advance the walker through one maximal same-type run; Z = (prod A)^t.
fn zorich_advance(walker: &mut Walker, budget: usize) -> Result<(BMat, usize)> {
    let d = walker.perm.d();
    if d == 2 {
        return zorich_advance_d2(walker);
    }
    let mut z = BMat::identity(d);
    let (eps0, w0, l0) = walker.step()?;
    // A = Id + E_{w,l}; Z = A^t accumulated on the left: Z <- A^t * Z,
    // i.e. row l of Z += row w of Z.
    add_row(&mut z, l0, w0);
    let mut r = 1usize;
    loop {
        if r >= budget {
            return Err(Error::BudgetExceeded(format!(
                "Zorich run exceeded {budget} elementary steps"
            )));
        }
        let d_last0 = walker.perm.symbol_at(0, d - 1);
        let d_last1 = walker.perm.symbol_at(1, d - 1);
        let next_eps = match &walker.lengths {
            Lengths::F64(l) => {
                let tot: f64 = l.iter().sum();
                let diff = l[d_last0] - l[d_last1];
                if diff.abs() < KEANE_EPS_REL * tot {
                    return Err(Error::DegenerateStep);
                }
                if diff > 0.0 { 0 } else { 1 }
            }
            Lengths::Rat(l) => match l[d_last0].cmp(&l[d_last1]) {
                std::cmp::Ordering::Greater => 0,
                std::cmp::Ordering::Less => 1,
                std::cmp::Ordering::Equal => return Err(Error::DegenerateStep),
            },
        };
        if next_eps != eps0 {
            break;
        }
        let (_, w, l) = walker.step()?;
        add_row(&mut z, l, w);
        r += 1;
    }
    Ok((z, r))
}

fn add_row(z: &mut BMat, dst: usize, src: usize) {
    let n = z.n;
    for j in 0..n {
        let t = &z[(dst, j)] + &z[(src, j)];
        z[(dst, j)] = t;
    }
}

/// d = 2 fast path: a same-type run is one continued-fraction digit, so the
/// whole run collapses to a single division. The winner keeps its length
/// minus r times the loser's; the loser row of Z gains r times the winner
/// row in one update.
fn zorich_advance_d2(walker: &mut Walker) -> Result<(BMat, usize)> {
    let a0 = walker.perm.symbol_at(0, 1);
    let a1 = walker.perm.symbol_at(1, 1);
    let (r, winner, loser) = match &mut walker.lengths {
        Lengths::F64(l) => {
            let tot = l[0] + l[1];
            let diff = l[a0] - l[a1];
            if diff.abs() < KEANE_EPS_REL * tot {
                return Err(Error::DegenerateStep);
            }
            let (w, lo) = if diff > 0.0 { (a0, a1) } else { (a1, a0) };
            let q = (l[w] / l[lo]).floor();
            let rem = l[w] - q * l[lo];
            // an exact multiple is a Keane violation
            if rem < KEANE_EPS_REL * tot {
                return Err(Error::DegenerateStep);
            }
            l[w] = rem;
            (q as usize, w, lo)
        }
        Lengths::Rat(l) => {
            let (w, lo) = match l[a0].cmp(&l[a1]) {
                std::cmp::Ordering::Greater => (a0, a1),
                std::cmp::Ordering::Less => (a1, a0),
                std::cmp::Ordering::Equal => return Err(Error::DegenerateStep),
            };
            let q = (&l[w] / &l[lo]).floor();
            let rem = &l[w] - &q * &l[lo];
            if rem.is_zero() {
                return Err(Error::DegenerateStep);
            }
            l[w] = rem;
            (q.to_integer().to_usize().ok_or(Error::BudgetExceeded(
                "continued-fraction digit exceeds usize".into(),
            ))?, w, lo)
        }
    };
    // permutation unchanged for d = 2 (the swap is the only irreducible pair)
    let mut z = BMat::identity(2);
    z[(loser, winner)] = BigInt::from(r);
    Ok((z, r))
}

/// One accelerated level of the renormalization ladder.
#[derive(Clone, Debug)]
pub struct Level {
    pub perm: PermutationPair,
    pub lambda: Vec<f64>,
    /// exact lengths when the ladder was built in rational mode
    pub lambda_rat: Option<Vec<BigRational>>,
    /// block matrix from the previous accepted level (Z(k) for level k >= 1)
    pub z: Option<BMat>,
    /// number of Zorich steps grouped into this block
    pub r: usize,
    /// number of elementary Rauzy steps inside the block
    pub rauzy: usize,
    /// cached Q(0,k)
    pub q0k: BMat,
    /// |I^{(k)}|
    pub interval_len: f64,
}

/// Ladder of accelerated renormalization levels with exact cocycle matrices.
#[derive(Clone, Debug)]
pub struct RenormState {
    pub base: Iet,
    pub levels: Vec<Level>,
    pub kappa_target: f64,
}

/// Options controlling `accelerate`.
#[derive(Clone, Debug)]
pub struct AccelOptions {
    /// build exact rational lengths alongside floats
    pub rational: bool,
    /// max Zorich steps tried per accepted level
    pub step_budget: usize,
    /// additionally require each accepted block to be strictly positive;
    /// this inflates per-level growth by roughly the positivity wait time
    /// (2-25 Zorich steps depending on d), so it is off by default and the
    /// orbit-budget-sensitive consumers (towers, special Birkhoff sums)
    /// leave it off
    pub block_positivity: bool,
}

impl Default for AccelOptions {
    fn default() -> Self {
        AccelOptions { rational: false, step_budget: 50_000, block_positivity: false }
    }
}

/// Balance threshold giving waits of ~1-2 Zorich steps per accepted level.
pub fn default_kappa(d: usize) -> f64 {
    (3 * d * d).max(12) as f64
}

/// Balanced-return acceleration: accept a level at the first Zorich time
/// where the balance max_a |I^(k)|/|I_a^(k)| <= kappa_target holds (and,
/// when `block_positivity` is set, the block since the previous accepted
/// level is strictly positive).
pub fn accelerate(iet: &Iet, kappa_target: f64, k_levels: usize, opts: &AccelOptions) -> Result<RenormState> {
    if k_levels < 1 {
        return Err(Error::ParameterOutOfRange("K >= 1 levels required".into()));
    }
    if kappa_target < iet.d() as f64 {
        return Err(Error::ParameterOutOfRange(format!(
            "kappa_target {} below d = {}",
            kappa_target,
            iet.d()
        )));
    }
    let d = iet.d();
    let mut walker = Walker {
        perm: iet.perm().clone(),
        lengths: if opts.rational {
            Lengths::Rat(
                iet.lengths()
                    .iter()
                    .map(|&x| BigRational::from_float(x).ok_or(Error::NonPositiveLength))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            Lengths::F64(iet.lengths().to_vec())
        },
    };
    let lambda_rat = |w: &Walker| match &w.lengths {
        Lengths::Rat(v) => Some(v.clone()),
        Lengths::F64(_) => None,
    };
    let mut levels = vec![Level {
        perm: walker.perm.clone(),
        lambda: walker.lengths.to_f64(),
        lambda_rat: lambda_rat(&walker),
        z: None,
        r: 0,
        rauzy: 0,
        q0k: BMat::identity(d),
        interval_len: walker.lengths.total_f64(),
    }];
    for _ in 1..=k_levels {
        let mut block = BMat::identity(d);
        let mut rauzy_total = 0usize;
        let mut steps = 0usize;
        loop {
            let (z, r) = zorich_advance(&mut walker, opts.step_budget)?;
            block = z.mul(&block);
            rauzy_total += r;
            steps += 1;
            if steps > opts.step_budget {
                return Err(Error::BudgetExceeded(
                    "acceptance failed within the Zorich step budget".into(),
                ));
            }
            let positive_ok = !opts.block_positivity || block.is_strictly_positive();
            if positive_ok && walker.balance() <= kappa_target {
                break;
            }
        }
        let q0k = block.mul(&levels.last().unwrap().q0k);
        levels.push(Level {
            perm: walker.perm.clone(),
            lambda: walker.lengths.to_f64(),
            lambda_rat: lambda_rat(&walker),
            z: Some(block),
            r: steps,
            rauzy: rauzy_total,
            q0k,
            interval_len: walker.lengths.total_f64(),
        });
    }
    Ok(RenormState { base: iet.clone(), levels, kappa_target })
}

impl RenormState {
    pub fn d(&self) -> usize {
        self.base.d()
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Exact product Q(k,l) = Z(l) ... Z(k+1); Q(k,k) = Id.
    pub fn q_product(&self, k: usize, l: usize) -> BMat {
        assert!(k <= l && l <= self.depth());
        if k == 0 {
            return self.levels[l].q0k.clone();
        }
        let mut q = BMat::identity(self.d());
        for m in k + 1..=l {
            q = self.levels[m].z.as_ref().unwrap().mul(&q);
        }
        q
    }

    /// Tower heights Q_alpha(k): row sums of Q(0,k).
    pub fn heights(&self, k: usize) -> Vec<BigInt> {
        self.levels[k].q0k.row_sums()
    }

    /// IET at level k (float lengths).
    pub fn iet_at(&self, k: usize) -> Iet {
        Iet::new(self.levels[k].perm.clone(), self.levels[k].lambda.clone())
            .expect("ladder levels stay valid")
    }

    /// max_alpha |I^(k)| / |I_alpha^(k)|.
    pub fn balance(&self, k: usize) -> f64 {
        let l = &self.levels[k].lambda;
        let min = l.iter().cloned().fold(f64::INFINITY, f64::min);
        self.levels[k].interval_len / min
    }

    /// log ||Q(0,k)|| (max row abs-sum).
    pub fn log_q_norm(&self, k: usize) -> f64 {
        self.levels[k].q0k.log_norm()
    }

    /// Omega matrix at level k, exactly conjugated: Q(0,k) Omega Q(0,k)^t.
    pub fn omega_at(&self, k: usize) -> BMat {
        self.levels[k].perm.omega().to_big()
    }
}

/// Rokhlin tower data at a fixed level.
#[derive(Clone, Debug)]
pub struct Towers {
    pub level: usize,
    pub heights: Vec<BigInt>,
    /// per symbol: base interval [l, r) at level k
    pub bases: Vec<(f64, f64)>,
    /// RTC datum: largest p with pairwise disjoint floors of the full
    /// interval I^(k), and the tower measure p * |I^(k)|
    pub rtc: Option<RtcData>,
}

#[derive(Clone, Debug)]
pub struct RtcData {
    pub p: u64,
    pub measure: f64,
    /// measure / |I|
    pub delta: f64,
}

/// Iterator over floor left-endpoints of one tower, produced lazily by
/// iterating T on the base endpoint.
pub struct FloorIter<'a> {
    iet: &'a Iet,
    x: f64,
    remaining: u64,
    first: bool,
}

impl<'a> Iterator for FloorIter<'a> {
    type Item = f64;
    fn next(&mut self) -> Option<f64> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        if self.first {
            self.first = false;
            return Some(self.x);
        }
        match self.iet.apply(self.x) {
            Ok(y) => {
                self.x = y;
                Some(y)
            }
            Err(_) => None,
        }
    }
}

impl RenormState {
    /// Tower extraction at level k. Heights are exact; the RTC search runs
    /// within `orbit_budget` interval iterations and is skipped (None) when
    /// the total height exceeds it.
    pub fn towers(&self, k: usize, orbit_budget: u64) -> Result<Towers> {
        let heights = self.heights(k);
        let level = &self.levels[k];
        let mut acc = 0.0;
        let mut bases = vec![(0.0, 0.0); self.d()];
        for p in 0..self.d() {
            let s = level.perm.symbol_at(0, p);
            bases[s] = (acc, acc + level.lambda[s]);
            acc += level.lambda[s];
        }
        let total: BigInt = heights.iter().sum();
        let rtc = if total.to_u64().map(|t| t <= orbit_budget).unwrap_or(false) {
            Some(self.rtc_search(k, &heights)?)
        } else {
            None
        };
        Ok(Towers { level: k, heights, bases, rtc })
    }

    /// Largest p <= min_alpha Q_alpha(k) with disjoint floors {T^i I^(k)}.
    fn rtc_search(&self, k: usize, heights: &[BigInt]) -> Result<RtcData> {
        let level = &self.levels[k];
        let ilen = level.interval_len;
        let min_q = heights
            .iter()
            .map(|h| h.to_u64().unwrap_or(u64::MAX))
            .min()
            .unwrap();
        let eps = self.base.keane_eps();
        // pieces of T^i I^(k): track the sub-pieces as they split at
        // division points of the base map.
        let mut pieces: Vec<(f64, f64)> = vec![(0.0, ilen)];
        let mut occupied: Vec<(f64, f64)> = pieces.clone();
        let mut p = 1u64;
        'grow: while p < min_q {
            // push every piece one step, splitting at division points
            let mut next: Vec<(f64, f64)> = Vec::with_capacity(pieces.len() + 2);
            for &(a, b) in &pieces {
                let mut lo = a;
                while lo < b - eps {
                    let s = self.base.symbol_of(lo.max(0.0)).map_err(|_| {
                        Error::PreconditionFailed("floor escaped the domain".into())
                    })?;
                    let hi = b.min(self.base.right_endpoint(s));
                    let w = self.base.translations()[s];
                    next.push((lo + w, hi + w));
                    lo = hi;
                }
            }
            // disjointness against the occupied set
            for &(a, b) in &next {
                for &(c, d) in &occupied {
                    if a < d - eps && c < b - eps {
                        break 'grow;
                    }
                }
            }
            occupied.extend(next.iter().cloned());
            pieces = next;
            p += 1;
        }
        let measure = p as f64 * ilen;
        Ok(RtcData { p, measure, delta: measure / self.base.total() })
    }

    /// Floor left-endpoints of the tower over I_alpha^(k).
    pub fn floors(&self, k: usize, alpha: usize) -> FloorIter<'_> {
        let towers_base = {
            let level = &self.levels[k];
            let mut acc = 0.0;
            let mut base = 0.0;
            for p in 0..self.d() {
                let s = level.perm.symbol_at(0, p);
                if s == alpha {
                    base = acc;
                    break;
                }
                acc += level.lambda[s];
            }
            base
        };
        let h = self.heights(k)[alpha].to_u64().unwrap_or(u64::MAX);
        FloorIter { iet: &self.base, x: towers_base, remaining: h, first: true }
    }

    /// m(x,n): the largest level visited at least twice by the length-n
    /// orbit of x. m(x,0) = -1 encoded as None.
    pub fn m_index(&self, x: f64, n: u64) -> Option<usize> {
        if n == 0 {
            return None;
        }
        let depth = self.depth();
        let mut counts = vec![0u64; depth + 1];
        let mut best: Option<usize> = None;
        let mut y = x;
        for step in 0..=n {
            // levels are nested: I^(0) contains I^(1) contains ...
            for l in 0..=depth {
                if y < self.levels[l].interval_len {
                    counts[l] += 1;
                    if counts[l] >= 2 {
                        best = match best {
                            Some(b) if b >= l => Some(b),
                            _ => Some(l),
                        };
                    }
                } else {
                    break;
                }
            }
            if step < n {
                y = match self.base.apply(y) {
                    Ok(v) => v,
                    Err(_) => return best,
                };
            }
        }
        best
    }

    /// Upper bound on m(x,n) over x from the height sandwich
    /// min_a Q_a(m) <= n <= d max_a Q_a(m+1): the largest m with
    /// min_a Q_a(m) <= n.
    pub fn m_max(&self, n: u64) -> usize {
        let n_big = BigInt::from(n);
        let mut lo = 0usize;
        for m in 0..=self.depth() {
            let min_q = self.heights(m).into_iter().min().unwrap();
            if min_q <= n_big {
                lo = m;
            } else {
                break;
            }
        }
        lo
    }
}

/// A stream of accelerated cocycle blocks for long Lyapunov runs. Lengths
/// are renormalized to unit total every block, which keeps the float
/// dynamics healthy for millions of steps.
pub struct BalancedZorichStream {
    walker: Walker,
    kappa_target: f64,
    step_budget: usize,
    block_positivity: bool,
    /// accumulated block since the last accepted level (positivity mode)
    pending: Option<BMat>,
}

/// One streamed block: small integer matrix plus the elementary step count.
#[derive(Clone, Debug)]
pub struct StreamBlock {
    pub z: BMat,
    pub zorich_steps: usize,
    pub elementary_steps: usize,
}

/// One Zorich step emitted by the stream, with the acceptance flag of the
/// balanced clock. Single steps keep matrix entries within exact f64 range.
#[derive(Clone, Debug)]
pub struct ZorichUnit {
    pub z: BMat,
    pub rauzy_steps: usize,
    /// true when the post-step state passes the acceptance test, i.e. an
    /// accelerated level boundary sits here
    pub accepted: bool,
}

impl BalancedZorichStream {
    pub fn new(iet: &Iet, kappa_target: f64, block_positivity: bool) -> Self {
        let total: f64 = iet.lengths().iter().sum();
        let normalized: Vec<f64> = iet.lengths().iter().map(|x| x / total).collect();
        BalancedZorichStream {
            walker: Walker {
                perm: iet.perm().clone(),
                lengths: Lengths::F64(normalized),
            },
            kappa_target,
            step_budget: 100_000,
            block_positivity,
            pending: None,
        }
    }

    /// Current balance max_a |I|/|I_a| of the streamed state.
    pub fn balance(&self) -> f64 {
        self.walker.balance()
    }

    /// Next single Zorich step plus the acceptance flag. Lengths are kept
    /// renormalized to unit total.
    pub fn next_zorich(&mut self) -> Result<ZorichUnit> {
        let (z, r) = zorich_advance(&mut self.walker, self.step_budget)?;
        if let Lengths::F64(l) = &mut self.walker.lengths {
            let tot: f64 = l.iter().sum();
            for x in l.iter_mut() {
                *x /= tot;
            }
        }
        self.pending = if self.block_positivity {
            Some(match self.pending.take() {
                Some(p) => z.mul(&p),
                None => z.clone(),
            })
        } else {
            None
        };
        let positive_ok = !self.block_positivity
            || self.pending.as_ref().map(|p| p.is_strictly_positive()).unwrap_or(false);
        let accepted = positive_ok && self.walker.balance() <= self.kappa_target;
        if accepted {
            self.pending = None;
        }
        Ok(ZorichUnit { z, rauzy_steps: r, accepted })
    }

    /// Next accepted block (grouping Zorich steps until acceptance).
    pub fn next_block(&mut self) -> Result<StreamBlock> {
        let d = self.walker.perm.d();
        let mut block = BMat::identity(d);
        let mut zorich = 0usize;
        let mut elementary = 0usize;
        loop {
            let unit = self.next_zorich()?;
            block = unit.z.mul(&block);
            zorich += 1;
            elementary += unit.rauzy_steps;
            if unit.accepted {
                break;
            }
            if zorich > self.step_budget {
                return Err(Error::BudgetExceeded("stream acceptance".into()));
            }
        }
        Ok(StreamBlock { z: block, zorich_steps: zorich, elementary_steps: elementary })
    }
}

/// Growth diagnostics along the ladder: per-symbol slopes of log Q_alpha(k)/k
/// fitted over k in [k_min, depth].
pub fn height_slopes(state: &RenormState, k_min: usize) -> Vec<f64> {
    let d = state.d();
    let depth = state.depth();
    (0..d)
        .map(|alpha| {
            let pts: Vec<(f64, f64)> = (k_min..=depth)
                .map(|k| (k as f64, big_log(&state.heights(k)[alpha])))
                .collect();
            crate::flow::fit_line(&pts).0
        })
        .collect()
}

/// Convenience: exact check lambda^(k) = Q(k,l)^t lambda^(l) in floats,
/// returning the max relative error over entries.
pub fn lambda_pullback_error(state: &RenormState, k: usize, l: usize) -> f64 {
    let q = state.q_product(k, l);
    let qt = q.transpose();
    let lam_l = &state.levels[l].lambda;
    let lam_k = &state.levels[k].lambda;
    let recon = qt.mul_vec_f64(lam_l);
    lam_k
        .iter()
        .zip(&recon)
        .map(|(a, b)| ((a - b) / a).abs())
        .fold(0.0, f64::max)
}

/// Exact rational pullback check (only in rational mode).
pub fn lambda_pullback_exact(state: &RenormState, k: usize, l: usize) -> Option<bool> {
    let lam_l = state.levels[l].lambda_rat.as_ref()?;
    let lam_k = state.levels[k].lambda_rat.as_ref()?;
    let q = state.q_product(k, l);
    let recon = q.transpose().mul_vec_rat(lam_l);
    Some(
        recon
            .iter()
            .zip(lam_k)
            .all(|(a, b)| (a - b).is_zero()),
    )
}
