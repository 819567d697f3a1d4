//! Interval exchange transformations: exact combinatorics, evaluation and
//! the antisymmetric translation matrix.
//!
//! Symbols are dense indices 0..d-1 internally; positions in the two rows
//! are 0-based as well. Presentation (JSON, CLI) uses 1-based positions.

use crate::error::{Error, Result};
use crate::linalg::IMat;
use num::rational::BigRational;
use num::{FromPrimitive, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

/// Relative tolerance for endpoint-collision detection (times |I|).
pub const KEANE_EPS_REL: f64 = 1e-13;

/// Pair of bijections alphabet -> positions, stored as symbol -> position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPair {
    pi0: Vec<usize>,
    pi1: Vec<usize>,
}

impl PermutationPair {
    /// Build from the two rows listed by position: `top[p]` is the symbol in
    /// position p of the pi0 row.
    pub fn from_rows(top: &[usize], bottom: &[usize]) -> Result<Self> {
        let d = top.len();
        if d < 2 || bottom.len() != d {
            return Err(Error::ReduciblePermutation);
        }
        let mut pi0 = vec![usize::MAX; d];
        let mut pi1 = vec![usize::MAX; d];
        for (p, &s) in top.iter().enumerate() {
            if s >= d || pi0[s] != usize::MAX {
                return Err(Error::ReduciblePermutation);
            }
            pi0[s] = p;
        }
        for (p, &s) in bottom.iter().enumerate() {
            if s >= d || pi1[s] != usize::MAX {
                return Err(Error::ReduciblePermutation);
            }
            pi1[s] = p;
        }
        let pair = PermutationPair { pi0, pi1 };
        if !pair.is_irreducible() {
            return Err(Error::ReduciblePermutation);
        }
        Ok(pair)
    }

    /// Symmetric pair: top row 0..d-1, bottom row reversed.
    pub fn symmetric(d: usize) -> Self {
        let top: Vec<usize> = (0..d).collect();
        let bottom: Vec<usize> = (0..d).rev().collect();
        Self::from_rows(&top, &bottom).expect("symmetric pair is irreducible")
    }

    pub fn d(&self) -> usize {
        self.pi0.len()
    }

    /// Position of symbol `s` in row eps.
    pub fn pos(&self, eps: u8, s: usize) -> usize {
        match eps {
            0 => self.pi0[s],
            _ => self.pi1[s],
        }
    }

    /// Symbol occupying position `p` in row eps.
    pub fn symbol_at(&self, eps: u8, p: usize) -> usize {
        let row = if eps == 0 { &self.pi0 } else { &self.pi1 };
        row.iter().position(|&q| q == p).expect("bijection")
    }

    /// pi1 o pi0^{-1}{1..k} != {1..k} for every 1 <= k < d.
    pub fn is_irreducible(&self) -> bool {
        let d = self.d();
        // walk positions of row 0 in order; track max image position
        let mut max_img = 0usize;
        for k in 0..d - 1 {
            let s = self.symbol_at(0, k);
            max_img = max_img.max(self.pi1[s]);
            if max_img == k {
                return false;
            }
        }
        true
    }

    /// Antisymmetric sign matrix Omega indexed by symbol pairs.
    pub fn omega(&self) -> IMat {
        let d = self.d();
        let mut m = IMat::zeros(d);
        for a in 0..d {
            for b in 0..d {
                if self.pi1[a] > self.pi1[b] && self.pi0[a] < self.pi0[b] {
                    m[(a, b)] = 1;
                } else if self.pi1[a] < self.pi1[b] && self.pi0[a] > self.pi0[b] {
                    m[(a, b)] = -1;
                }
            }
        }
        m
    }

    /// Genus of the translation surface carrying the IET: rank(Omega)/2.
    pub fn genus(&self) -> usize {
        self.omega().rank() / 2
    }

    /// Rows listed by position (inverse presentation), handy for display.
    pub fn rows(&self) -> (Vec<usize>, Vec<usize>) {
        let d = self.d();
        let top = (0..d).map(|p| self.symbol_at(0, p)).collect();
        let bottom = (0..d).map(|p| self.symbol_at(1, p)).collect();
        (top, bottom)
    }

    pub fn swapped(&self) -> Self {
        PermutationPair { pi0: self.pi1.clone(), pi1: self.pi0.clone() }
    }
}

/// Outcome of a finite Keane-condition scan.
#[derive(Clone, Debug, PartialEq)]
pub enum KeaneOutcome {
    Pass,
    /// T^m l_alpha hits l_beta within tolerance.
    Violation { m: usize, alpha: usize, beta: usize },
}

/// Interval exchange transformation (pi, lambda) with precomputed endpoints
/// and translation vector w = Omega lambda.
#[derive(Clone, Debug)]
pub struct Iet {
    perm: PermutationPair,
    lambda: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    /// endpoints of the image intervals
    left_img: Vec<f64>,
    w: Vec<f64>,
    total: f64,
}

impl Iet {
    pub fn new(perm: PermutationPair, lambda: Vec<f64>) -> Result<Self> {
        let d = perm.d();
        if lambda.len() != d || lambda.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::NonPositiveLength);
        }
        let total: f64 = lambda.iter().sum();
        let mut left = vec![0.0; d];
        let mut right = vec![0.0; d];
        let mut left_img = vec![0.0; d];
        let mut acc = 0.0;
        for p in 0..d {
            let s = perm.symbol_at(0, p);
            left[s] = acc;
            acc += lambda[s];
            right[s] = acc;
        }
        let mut acc1 = 0.0;
        for p in 0..d {
            let s = perm.symbol_at(1, p);
            left_img[s] = acc1;
            acc1 += lambda[s];
        }
        let omega = perm.omega();
        let w: Vec<f64> = (0..d)
            .map(|a| (0..d).map(|b| omega[(a, b)] as f64 * lambda[b]).sum())
            .collect();
        Ok(Iet { perm, lambda, left, right, left_img, w, total })
    }

    pub fn d(&self) -> usize {
        self.perm.d()
    }

    pub fn perm(&self) -> &PermutationPair {
        &self.perm
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lambda
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn translations(&self) -> &[f64] {
        &self.w
    }

    pub fn left_endpoint(&self, s: usize) -> f64 {
        self.left[s]
    }

    pub fn right_endpoint(&self, s: usize) -> f64 {
        self.right[s]
    }

    /// Left endpoint of the image interval T(I_s).
    pub fn image_left_endpoint(&self, s: usize) -> f64 {
        self.left_img[s]
    }

    pub fn keane_eps(&self) -> f64 {
        KEANE_EPS_REL * self.total
    }

    /// Symbol of the interval [l_s, r_s) containing x.
    pub fn symbol_of(&self, x: f64) -> Result<usize> {
        if !(0.0 <= x && x < self.total) {
            return Err(Error::OutOfDomain(x));
        }
        let d = self.d();
        for p in 0..d {
            let s = self.perm.symbol_at(0, p);
            if x < self.right[s] {
                return Ok(s);
            }
        }
        // x in the last interval up to rounding of the accumulated endpoint
        Ok(self.perm.symbol_at(0, d - 1))
    }

    /// Symbol of the half-open-from-the-right interval (l_s, r_s] containing x.
    pub fn symbol_of_half_open(&self, x: f64) -> Result<usize> {
        if !(0.0 < x && x <= self.total) {
            return Err(Error::OutOfDomain(x));
        }
        let d = self.d();
        for p in 0..d {
            let s = self.perm.symbol_at(0, p);
            if x <= self.right[s] {
                return Ok(s);
            }
        }
        Ok(self.perm.symbol_at(0, d - 1))
    }

    /// T(x) = x + w_alpha on [0,|I|).
    pub fn apply(&self, x: f64) -> Result<f64> {
        let s = self.symbol_of(x)?;
        Ok(x + self.w[s])
    }

    /// The variant acting on (0,|I|] with intervals (l_alpha, r_alpha].
    pub fn apply_half_open(&self, x: f64) -> Result<f64> {
        let s = self.symbol_of_half_open(x)?;
        Ok(x + self.w[s])
    }

    /// Inverse IET (exchanges the roles of the two rows).
    pub fn inverse(&self) -> Iet {
        Iet::new(self.perm.swapped(), self.lambda.clone()).expect("inverse of valid IET")
    }

    /// Scan orbits of left endpoints for collisions with division points.
    ///
    /// T^m l_alpha != l_beta for all 1 <= m <= n and pi0(beta) != 1.
    pub fn keane_check(&self, n: usize) -> KeaneOutcome {
        let eps = self.keane_eps();
        let d = self.d();
        let targets: Vec<(usize, f64)> = (0..d)
            .filter(|&b| self.perm.pos(0, b) != 0)
            .map(|b| (b, self.left[b]))
            .collect();
        for a in 0..d {
            let mut x = self.left[a];
            for m in 1..=n {
                x = match self.apply(x) {
                    Ok(y) => y,
                    Err(_) => break,
                };
                for &(b, lb) in &targets {
                    if (x - lb).abs() < eps {
                        return KeaneOutcome::Violation { m, alpha: a, beta: b };
                    }
                }
            }
        }
        KeaneOutcome::Pass
    }

    /// Division points l_alpha (sorted ascending, includes 0).
    pub fn left_endpoints_sorted(&self) -> Vec<f64> {
        let mut v = self.left.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }
}

/// Exact-rational length vector companion used by oracle tests and the
/// rational renormalization ladder.
#[derive(Clone, Debug)]
pub struct RatLengths(pub Vec<BigRational>);

impl RatLengths {
    pub fn from_f64(lambda: &[f64]) -> Self {
        RatLengths(
            lambda
                .iter()
                .map(|&x| BigRational::from_f64(x).expect("finite length"))
                .collect(),
        )
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|x| x.to_f64().unwrap()).collect()
    }

    pub fn total(&self) -> BigRational {
        self.0.iter().cloned().sum()
    }

    pub fn all_positive(&self) -> bool {
        self.0.iter().all(|x| x.is_positive() && !x.is_zero())
    }
}

/// JSON presentation `d; pi0; pi1; lambda[]` with 1-based positions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IetJson {
    pub d: usize,
    pub pi0: Vec<usize>,
    pub pi1: Vec<usize>,
    pub lambda: Vec<f64>,
}

impl IetJson {
    pub fn from_iet(iet: &Iet) -> Self {
        let d = iet.d();
        IetJson {
            d,
            pi0: (0..d).map(|s| iet.perm().pos(0, s) + 1).collect(),
            pi1: (0..d).map(|s| iet.perm().pos(1, s) + 1).collect(),
            lambda: iet.lengths().to_vec(),
        }
    }

    pub fn to_iet(&self) -> Result<Iet> {
        if self.pi0.len() != self.d || self.pi1.len() != self.d {
            return Err(Error::ConfigError("permutation length mismatch".into()));
        }
        let mut top = vec![0usize; self.d];
        let mut bottom = vec![0usize; self.d];
        for s in 0..self.d {
            let p0 = self.pi0[s].checked_sub(1).ok_or(Error::ReduciblePermutation)?;
            let p1 = self.pi1[s].checked_sub(1).ok_or(Error::ReduciblePermutation)?;
            if p0 >= self.d || p1 >= self.d {
                return Err(Error::ReduciblePermutation);
            }
            top[p0] = s;
            bottom[p1] = s;
        }
        Iet::new(PermutationPair::from_rows(&top, &bottom)?, self.lambda.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation(la: f64, lb: f64) -> Iet {
        let perm = PermutationPair::from_rows(&[0, 1], &[1, 0]).unwrap();
        Iet::new(perm, vec![la, lb]).unwrap()
    }

    #[test]
    fn two_interval_rotation_translations() {
        let t = rotation(0.6, 0.4);
        assert!((t.translations()[0] - 0.4).abs() < 1e-15);
        assert!((t.translations()[1] + 0.6).abs() < 1e-15);
    }

    #[test]
    fn identity_pair_is_reducible() {
        assert!(matches!(
            PermutationPair::from_rows(&[0, 1], &[0, 1]),
            Err(Error::ReduciblePermutation)
        ));
    }

    #[test]
    fn symmetric_four_letter_pair() {
        let perm = PermutationPair::symmetric(4);
        let t = Iet::new(perm, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let om = t.perm().omega();
        for a in 0..4 {
            for b in 0..4 {
                let expect = if a < b { 1 } else if a > b { -1 } else { 0 };
                assert_eq!(om[(a, b)], expect);
            }
        }
        // w = Omega lambda, upper triangle all +1
        assert!((t.translations()[0] - (0.2 + 0.3 + 0.4)).abs() < 1e-15);
    }

    #[test]
    fn apply_matches_rotation() {
        let t = rotation(0.6, 0.4);
        assert!((t.apply(0.1).unwrap() - 0.5).abs() < 1e-15);
        assert!((t.apply(0.7).unwrap() - 0.1).abs() < 1e-15);
        assert!(t.apply(1.0).is_err());
        assert!((t.apply_half_open(1.0).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn orbit_stays_in_domain() {
        let t = rotation(0.6180339887498949, 0.3819660112501051);
        let mut x = 0.2345;
        for _ in 0..100_000 {
            x = t.apply(x).unwrap();
            assert!((0.0..t.total()).contains(&x));
        }
    }

    #[test]
    fn keane_rational_rotation_fails_at_once() {
        let t = rotation(0.5, 0.5);
        match t.keane_check(10) {
            KeaneOutcome::Violation { m, .. } => assert_eq!(m, 1),
            KeaneOutcome::Pass => panic!("rational rotation must violate Keane"),
        }
    }

    #[test]
    fn keane_golden_rotation_passes() {
        let phi_inv = 2.0 / (1.0 + 5f64.sqrt());
        let t = rotation(phi_inv, 1.0 - phi_inv);
        assert_eq!(t.keane_check(10_000), KeaneOutcome::Pass);
    }

    #[test]
    fn lebesgue_preserved_on_random_subintervals() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let t = rotation(0.6180339887498949, 0.3819660112501051);
        let inv = t.inverse();
        for _ in 0..1000 {
            let a: f64 = rng.gen_range(0.0..t.total());
            let b: f64 = rng.gen_range(0.0..t.total());
            let (u, v) = if a < b { (a, b) } else { (b, a) };
            // |T^{-1}[u,v)| by splitting at the division points of the image
            let mut pieces = 0.0;
            for s in 0..t.d() {
                let il = t.image_left_endpoint(s);
                let ir = il + t.lengths()[s];
                let lo = u.max(il);
                let hi = v.min(ir);
                if hi > lo {
                    // preimage of [lo,hi) under the isometric branch
                    let plo = lo - t.translations()[s];
                    let phi = hi - t.translations()[s];
                    pieces += phi - plo;
                    // sanity: the preimage sits inside I_s
                    assert!(plo >= t.left_endpoint(s) - 1e-12);
                    assert!(phi <= t.right_endpoint(s) + 1e-12);
                    let _ = inv;
                }
            }
            assert!((pieces - (v - u)).abs() < 1e-12);
        }
    }

    #[test]
    fn image_partition_tiles_interval() {
        let perm = PermutationPair::symmetric(5);
        let t = Iet::new(perm, vec![0.11, 0.23, 0.18, 0.31, 0.17]).unwrap();
        let mut imgs: Vec<(f64, f64)> = (0..5)
            .map(|s| {
                let il = t.image_left_endpoint(s);
                (il, il + t.lengths()[s])
            })
            .collect();
        imgs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let eps = t.keane_eps();
        assert!(imgs[0].0.abs() < eps);
        for w in imgs.windows(2) {
            assert!((w[0].1 - w[1].0).abs() < eps);
        }
        assert!((imgs[4].1 - t.total()).abs() < eps);
    }

    #[test]
    fn json_roundtrip() {
        let perm = PermutationPair::symmetric(3);
        let t = Iet::new(perm, vec![0.2, 0.3, 0.5]).unwrap();
        let j = IetJson::from_iet(&t);
        let s = serde_json::to_string(&j).unwrap();
        let j2: IetJson = serde_json::from_str(&s).unwrap();
        let t2 = j2.to_iet().unwrap();
        assert_eq!(t.perm(), t2.perm());
        assert_eq!(t.lengths(), t2.lengths());
    }
}
