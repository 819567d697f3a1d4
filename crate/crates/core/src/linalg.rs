//! Small exact matrices over i64 / BigInt used by the cocycle bookkeeping.
//!
//! Dimensions are tiny (d <= 8) but entries of accumulated cocycle products
//! grow like e^{lambda_1 k}, so products are kept in arbitrary precision.

use nalgebra::DMatrix;
use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};

/// Dense square matrix with i64 entries (single elementary/Zorich blocks).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IMat {
    pub n: usize,
    pub data: Vec<i64>,
}

impl IMat {
    pub fn zeros(n: usize) -> Self {
        IMat { n, data: vec![0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1;
        }
        m
    }

    /// Id + E_{ij}.
    pub fn elementary(n: usize, i: usize, j: usize) -> Self {
        let mut m = Self::identity(n);
        m[(i, j)] += 1;
        m
    }

    pub fn mul(&self, other: &IMat) -> IMat {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = IMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> IMat {
        let n = self.n;
        let mut out = IMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn to_big(&self) -> BMat {
        BMat {
            n: self.n,
            data: self.data.iter().map(|&x| BigInt::from(x)).collect(),
        }
    }

    /// Rank over the rationals by fraction-free elimination.
    pub fn rank(&self) -> usize {
        self.to_big().rank()
    }
}

impl std::ops::Index<(usize, usize)> for IMat {
    type Output = i64;
    fn index(&self, (i, j): (usize, usize)) -> &i64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for IMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut i64 {
        &mut self.data[i * self.n + j]
    }
}

/// Dense square matrix with BigInt entries (accumulated cocycle products).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BMat {
    pub n: usize,
    pub data: Vec<BigInt>,
}

impl BMat {
    pub fn zeros(n: usize) -> Self {
        BMat { n, data: vec![BigInt::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = BigInt::one();
        }
        m
    }

    pub fn mul(&self, other: &BMat) -> BMat {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = BMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..n {
                    let prod = a * &other[(k, j)];
                    out[(i, j)] += prod;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> BMat {
        let n = self.n;
        let mut out = BMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(j, i)] = self[(i, j)].clone();
            }
        }
        out
    }

    pub fn mul_vec_f64(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(v.len(), n);
        (0..n)
            .map(|i| (0..n).map(|j| big_to_f64(&self[(i, j)]) * v[j]).sum())
            .collect()
    }

    pub fn mul_vec_big(&self, v: &[BigInt]) -> Vec<BigInt> {
        let n = self.n;
        (0..n)
            .map(|i| (0..n).map(|j| &self[(i, j)] * &v[j]).sum())
            .collect()
    }

    pub fn mul_vec_rat(&self, v: &[BigRational]) -> Vec<BigRational> {
        let n = self.n;
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| BigRational::from(self[(i, j)].clone()) * &v[j])
                    .sum()
            })
            .collect()
    }

    pub fn row_sums(&self) -> Vec<BigInt> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)].clone()).sum())
            .collect()
    }

    /// Max row abs-sum norm, the matrix norm used throughout.
    pub fn norm_f64(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| big_to_f64(&self[(i, j)]).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| big_to_f64(&self[(i, j)]))
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.data.iter().all(|x| x.is_positive())
    }

    pub fn min_entry_ge(&self, bound: i64) -> bool {
        let b = BigInt::from(bound);
        self.data.iter().all(|x| x >= &b)
    }

    /// Determinant by fraction-free (Bareiss) elimination; exact.
    pub fn det(&self) -> BigInt {
        let n = self.n;
        let mut m = self.data.clone();
        let mut sign = 1i64;
        let mut prev = BigInt::one();
        for k in 0..n {
            // pivot
            if m[k * n + k].is_zero() {
                let mut found = false;
                for i in k + 1..n {
                    if !m[i * n + k].is_zero() {
                        for j in 0..n {
                            m.swap(i * n + j, k * n + j);
                        }
                        sign = -sign;
                        found = true;
                        break;
                    }
                }
                if !found {
                    return BigInt::zero();
                }
            }
            for i in k + 1..n {
                for j in k + 1..n {
                    let t = &m[i * n + j] * &m[k * n + k] - &m[i * n + k] * &m[k * n + j];
                    m[i * n + j] = &t / &prev;
                }
                m[i * n + k] = BigInt::zero();
            }
            prev = m[k * n + k].clone();
        }
        let d = m[(n - 1) * n + (n - 1)].clone();
        if sign < 0 {
            -d
        } else {
            d
        }
    }

    /// Rank over the rationals by fraction-free elimination.
    pub fn rank(&self) -> usize {
        let n = self.n;
        let mut m = self.data.clone();
        let mut rank = 0;
        let mut row = 0;
        for col in 0..n {
            let mut pivot = None;
            for i in row..n {
                if !m[i * n + col].is_zero() {
                    pivot = Some(i);
                    break;
                }
            }
            let Some(p) = pivot else { continue };
            for j in 0..n {
                m.swap(p * n + j, row * n + j);
            }
            for i in row + 1..n {
                if m[i * n + col].is_zero() {
                    continue;
                }
                let a = m[row * n + col].clone();
                let b = m[i * n + col].clone();
                for j in 0..n {
                    let t = &m[i * n + j] * &a - &b * &m[row * n + j];
                    m[i * n + j] = t;
                }
            }
            row += 1;
            rank += 1;
            if row == n {
                break;
            }
        }
        rank
    }

    /// log of the max row abs-sum norm, safe for huge entries.
    pub fn log_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let s: BigInt = (0..self.n).map(|j| self[(i, j)].abs()).sum();
                big_log(&s)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for BMat {
    type Output = BigInt;
    fn index(&self, (i, j): (usize, usize)) -> &BigInt {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for BMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut BigInt {
        &mut self.data[i * self.n + j]
    }
}

/// f64 conversion keeping 53-bit relative accuracy for entries of any size.
pub fn big_to_f64(x: &BigInt) -> f64 {
    x.to_f64().unwrap_or(f64::INFINITY)
}

/// Natural log of a positive BigInt, accurate for any magnitude.
pub fn big_log(x: &BigInt) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits <= 52 {
        return big_to_f64(x).ln();
    }
    let shift = bits - 52;
    let top = (x.abs() >> shift).to_f64().unwrap();
    top.ln() + (shift as f64) * std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bareiss_det_matches_known() {
        let mut m = BMat::zeros(3);
        let vals = [[2i64, 0, 1], [1, 3, 2], [1, 1, 1]];
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = BigInt::from(vals[i][j]);
            }
        }
        assert_eq!(m.det(), BigInt::from(2 * (3 - 2) - 0 + (1 - 3)));
    }

    #[test]
    fn rank_of_singular_matrix() {
        let mut m = BMat::zeros(3);
        for j in 0..3 {
            m[(0, j)] = BigInt::from(1);
            m[(1, j)] = BigInt::from(2);
        }
        m[(2, 0)] = BigInt::from(1);
        assert_eq!(m.rank(), 2);
    }

    #[test]
    fn big_log_handles_huge_values() {
        let x = BigInt::from(7) << 300;
        let expected = 7f64.ln() + 300.0 * std::f64::consts::LN_2;
        assert!((big_log(&x) - expected).abs() < 1e-9);
    }
}
