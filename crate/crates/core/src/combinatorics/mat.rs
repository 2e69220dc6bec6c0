use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use crate::scalar::Scalar;

/// Dense letter-indexed integer matrix with arbitrary-precision entries.
///
/// Path matrices grow like `exp(theta_1 * Zorich time)`, so fixed-width
/// integers overflow within a few dozen steps; everything here is `BigInt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IMat {
    d: usize,
    a: Vec<BigInt>,
}

impl IMat {
    pub fn zero(d: usize) -> Self {
        IMat {
            d,
            a: vec![BigInt::zero(); d * d],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zero(d);
        for i in 0..d {
            m.a[i * d + i] = BigInt::one();
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &BigInt {
        &self.a[row * self.d + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: BigInt) {
        self.a[row * self.d + col] = v;
    }

    /// `row[to] += k * row[from]`; the in-place form of multiplying on the
    /// left by `I + k E_{to,from}`.
    pub fn row_add(&mut self, to: usize, from: usize, k: &BigInt) {
        assert_ne!(to, from);
        for c in 0..self.d {
            let add = self.get(from, c) * k;
            self.a[to * self.d + c] += add;
        }
    }

    pub fn mul(&self, rhs: &IMat) -> IMat {
        assert_eq!(self.d, rhs.d);
        let d = self.d;
        let mut out = IMat::zero(d);
        for i in 0..d {
            for k in 0..d {
                let lik = self.get(i, k);
                if lik.is_zero() {
                    continue;
                }
                for j in 0..d {
                    let add = lik * rhs.get(k, j);
                    out.a[i * d + j] += add;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> IMat {
        let d = self.d;
        let mut out = IMat::zero(d);
        for i in 0..d {
            for j in 0..d {
                out.a[j * d + i] = self.get(i, j).clone();
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[BigInt]) -> Vec<BigInt> {
        assert_eq!(v.len(), self.d);
        (0..self.d)
            .map(|i| {
                let mut acc = BigInt::zero();
                for j in 0..self.d {
                    acc += self.get(i, j) * &v[j];
                }
                acc
            })
            .collect()
    }

    /// Matrix-vector product over any scalar backend; entries are converted
    /// through `Scalar::from_bigint`.
    pub fn mul_vec_scalar<S: Scalar>(&self, v: &[S]) -> Vec<S> {
        assert_eq!(v.len(), self.d);
        (0..self.d)
            .map(|i| {
                let mut acc = S::zero();
                for j in 0..self.d {
                    let e = self.get(i, j);
                    if !e.is_zero() {
                        acc = acc.add(&S::from_bigint(e).mul(&v[j]));
                    }
                }
                acc
            })
            .collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.a.iter().all(|x| !x.is_negative())
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.a.iter().all(|x| x.is_positive())
    }

    /// Positions of nonzero entries, for support comparisons.
    pub fn support(&self) -> Vec<bool> {
        self.a.iter().map(|x| !x.is_zero()).collect()
    }

    /// Exact determinant by fraction-free (Bareiss) elimination.
    pub fn det(&self) -> BigInt {
        let d = self.d;
        if d == 0 {
            return BigInt::one();
        }
        let mut m = self.a.clone();
        let mut sign = 1i32;
        let mut prev = BigInt::one();
        for k in 0..d - 1 {
            if m[k * d + k].is_zero() {
                match (k + 1..d).find(|&r| !m[r * d + k].is_zero()) {
                    Some(r) => {
                        for c in 0..d {
                            m.swap(k * d + c, r * d + c);
                        }
                        sign = -sign;
                    }
                    None => return BigInt::zero(),
                }
            }
            for i in k + 1..d {
                for j in k + 1..d {
                    let num = &m[i * d + j] * &m[k * d + k] - &m[i * d + k] * &m[k * d + j];
                    m[i * d + j] = num / &prev;
                }
                m[i * d + k] = BigInt::zero();
            }
            prev = m[k * d + k].clone();
        }
        let det = m[(d - 1) * d + (d - 1)].clone();
        if sign < 0 {
            -det
        } else {
            det
        }
    }

    /// Exact rank by integer Gaussian elimination (fraction-free).
    pub fn rank(&self) -> usize {
        let d = self.d;
        let mut m = self.a.clone();
        let mut rank = 0;
        let mut row = 0;
        for col in 0..d {
            let pivot = (row..d).find(|&r| !m[r * d + col].is_zero());
            let Some(p) = pivot else { continue };
            if p != row {
                for c in 0..d {
                    m.swap(row * d + c, p * d + c);
                }
            }
            let pv = m[row * d + col].clone();
            for r in row + 1..d {
                let factor = m[r * d + col].clone();
                if factor.is_zero() {
                    continue;
                }
                for c in 0..d {
                    let t = &m[r * d + c] * &pv - &factor * &m[row * d + c];
                    m[r * d + c] = t;
                }
            }
            rank += 1;
            row += 1;
            if row == d {
                break;
            }
        }
        rank
    }

    /// Basis of the integer kernel, as columns (exact; used for the quotient
    /// cocycle over `ker omega`).
    pub fn kernel_basis(&self) -> Vec<Vec<BigInt>> {
        // Gauss over rationals implemented fraction-free on an augmented copy.
        let d = self.d;
        let mut m: Vec<Vec<BigInt>> = (0..d)
            .map(|i| (0..d).map(|j| self.get(i, j).clone()).collect())
            .collect();
        let mut pivot_col_of_row = Vec::new();
        let mut row = 0;
        for col in 0..d {
            let Some(p) = (row..d).find(|&r| !m[r][col].is_zero()) else {
                continue;
            };
            m.swap(row, p);
            let pv = m[row][col].clone();
            for r in 0..d {
                if r == row || m[r][col].is_zero() {
                    continue;
                }
                let factor = m[r][col].clone();
                for c in 0..d {
                    m[r][c] = &m[r][c] * &pv - &factor * &m[row][c];
                }
            }
            pivot_col_of_row.push(col);
            row += 1;
        }
        let pivot_cols: Vec<usize> = pivot_col_of_row.clone();
        let free_cols: Vec<usize> = (0..d).filter(|c| !pivot_cols.contains(c)).collect();
        let mut basis = Vec::new();
        for &fc in &free_cols {
            // back-substitute with a common denominator to stay integral
            let mut den = BigInt::one();
            for (r, &pc) in pivot_col_of_row.iter().enumerate() {
                if !m[r][fc].is_zero() {
                    den = lcm(&den, &m[r][pc]);
                }
            }
            let mut v = vec![BigInt::zero(); d];
            v[fc] = den.clone();
            for (r, &pc) in pivot_col_of_row.iter().enumerate() {
                if !m[r][fc].is_zero() {
                    v[pc] = -(&m[r][fc] * &den) / &m[r][pc];
                }
            }
            basis.push(v);
        }
        basis
    }
}

fn lcm(a: &BigInt, b: &BigInt) -> BigInt {
    use num_integer::Integer;
    let g = a.gcd(b);
    (a / &g * b).abs()
}

/// Dense matrix over a scalar backend; used for the affine transition
/// matrices `B_gamma[w]`.
#[derive(Debug, Clone)]
pub struct RMat<S: Scalar> {
    d: usize,
    a: Vec<S>,
}

impl<S: Scalar> RMat<S> {
    pub fn identity(d: usize) -> Self {
        let mut a = vec![S::zero(); d * d];
        for i in 0..d {
            a[i * d + i] = S::one();
        }
        RMat { d, a }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &S {
        &self.a[row * self.d + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: S) {
        self.a[row * self.d + col] = v;
    }

    pub fn mul(&self, rhs: &RMat<S>) -> RMat<S> {
        assert_eq!(self.d, rhs.d);
        let d = self.d;
        let mut out = RMat {
            d,
            a: vec![S::zero(); d * d],
        };
        for i in 0..d {
            for k in 0..d {
                let lik = self.get(i, k).clone();
                if lik.is_zero() {
                    continue;
                }
                for j in 0..d {
                    let cur = out.get(i, j).add(&lik.mul(rhs.get(k, j)));
                    out.set(i, j, cur);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(v.len(), self.d);
        (0..self.d)
            .map(|i| {
                let mut acc = S::zero();
                for j in 0..self.d {
                    acc = acc.add(&self.get(i, j).mul(&v[j]));
                }
                acc
            })
            .collect()
    }

    pub fn transpose(&self) -> RMat<S> {
        let d = self.d;
        let mut out = RMat {
            d,
            a: vec![S::zero(); d * d],
        };
        for i in 0..d {
            for j in 0..d {
                out.set(j, i, self.get(i, j).clone());
            }
        }
        out
    }

    pub fn support(&self) -> Vec<bool> {
        self.a.iter().map(|x| !x.is_zero()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(d: usize, vals: &[i64]) -> IMat {
        let mut out = IMat::zero(d);
        for i in 0..d {
            for j in 0..d {
                out.set(i, j, BigInt::from(vals[i * d + j]));
            }
        }
        out
    }

    #[test]
    fn det_small() {
        assert_eq!(m(2, &[1, 1, 0, 1]).det(), BigInt::one());
        assert_eq!(m(2, &[2, 0, 0, 3]).det(), BigInt::from(6));
        assert_eq!(m(3, &[0, 1, 0, 1, 0, 0, 0, 0, 1]).det(), BigInt::from(-1));
        assert_eq!(m(3, &[1, 2, 3, 4, 5, 6, 7, 8, 9]).det(), BigInt::zero());
    }

    #[test]
    fn rank_small() {
        assert_eq!(m(3, &[1, 2, 3, 4, 5, 6, 7, 8, 9]).rank(), 2);
        assert_eq!(m(3, &[0, 1, 1, -1, 0, 1, -1, -1, 0]).rank(), 2);
        assert_eq!(IMat::identity(4).rank(), 4);
        assert_eq!(IMat::zero(3).rank(), 0);
    }

    #[test]
    fn kernel_annihilates() {
        let a = m(3, &[0, 1, 1, -1, 0, 1, -1, -1, 0]);
        let basis = a.kernel_basis();
        assert_eq!(basis.len(), 1);
        for v in &basis {
            let image = a.mul_vec(v);
            assert!(image.iter().all(|x| x.is_zero()));
            assert!(v.iter().any(|x| !x.is_zero()));
        }
    }

    #[test]
    fn row_add_is_elementary_product() {
        let base = m(3, &[1, 2, 3, 4, 5, 6, 7, 8, 10]);
        let mut e = IMat::identity(3);
        e.set(2, 0, BigInt::from(5));
        let product = e.mul(&base);
        let mut incremental = base.clone();
        incremental.row_add(2, 0, &BigInt::from(5));
        assert_eq!(product, incremental);
    }
}
