//! Quadrature and multistep weights, computed in exact rational arithmetic
//! and rounded once to the working precision.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::scalar::Real;

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Bernoulli numbers `B_0 ..= B_n` with the `B_1 = +1/2` convention.
pub fn bernoulli_plus(n: usize) -> Vec<BigRational> {
    let mut b: Vec<BigRational> = Vec::with_capacity(n + 1);
    for m in 0..=n {
        // sum_{k=0}^{m} C(m+1, k) B_k = 0 for m >= 1 (minus convention).
        let mut acc = BigRational::zero();
        let mut binom = BigInt::one();
        for (k, bk) in b.iter().enumerate() {
            acc += BigRational::from_integer(binom.clone()) * bk;
            binom = binom * BigInt::from(m + 1 - k) / BigInt::from(k + 1);
        }
        let bm = if m == 0 {
            BigRational::one()
        } else {
            -acc / BigRational::from_integer(BigInt::from(m + 1))
        };
        b.push(bm);
    }
    if n >= 1 {
        b[1] = rat(1, 2);
    }
    b
}

/// Solves a square linear system exactly by Gaussian elimination.
fn solve_exact(mut a: Vec<Vec<BigRational>>, mut rhs: Vec<BigRational>) -> Vec<BigRational> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero()).expect("singular system");
        a.swap(col, piv);
        rhs.swap(col, piv);
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = &a[r][col] / &a[col][col];
                for c in col..n {
                    let v = &f * &a[col][c];
                    a[r][c] -= v;
                }
                let v = &f * &rhs[col];
                rhs[r] -= v;
            }
        }
    }
    (0..n).map(|i| &rhs[i] / &a[i][i]).collect()
}

/// Gregory endpoint weights `mu_0 .. mu_{q-1}` for
/// `h sum_{m=0}^{n} f_m + h sum_{m<q} mu_m (f_m + f_{n-m})`.
///
/// The left-end conditions `sum_m mu_m m^j = (-1)^{j+1} B_{j+1} / (j+1)`
/// for `j < q` cancel the Euler-Maclaurin terms through order `q`.
pub fn gregory_exact(q: usize) -> Result<Vec<BigRational>> {
    if !(1..=8).contains(&q) {
        return Err(Error::Parameter(format!("Gregory q must lie in 1..=8, got {q}")));
    }
    let b = bernoulli_plus(q);
    let a: Vec<Vec<BigRational>> = (0..q)
        .map(|j| {
            (0..q)
                .map(|m| BigRational::from_integer(BigInt::from(m).pow(j as u32)))
                .collect()
        })
        .collect();
    let rhs: Vec<BigRational> = (0..q)
        .map(|j| {
            let v = &b[j + 1] / BigRational::from_integer(BigInt::from(j + 1));
            if j % 2 == 0 {
                -v
            } else {
                v
            }
        })
        .collect();
    Ok(solve_exact(a, rhs))
}

/// Exact integral over `s in [0, 1]` of the Lagrange basis polynomials with
/// nodes `s = 1 - j` for `j in nodes`.
fn adams_exact(nodes: std::ops::Range<i64>) -> Vec<BigRational> {
    let pts: Vec<BigRational> = nodes.map(|j| BigRational::from_integer(BigInt::from(1 - j))).collect();
    (0..pts.len())
        .map(|i| {
            // Coefficients of prod_{l != i} (s - s_l) / (s_i - s_l), lowest first.
            let mut poly = vec![BigRational::one()];
            let mut denom = BigRational::one();
            for (l, sl) in pts.iter().enumerate() {
                if l == i {
                    continue;
                }
                let mut next = vec![BigRational::zero(); poly.len() + 1];
                for (d, c) in poly.iter().enumerate() {
                    next[d + 1] += c;
                    next[d] -= c * sl;
                }
                poly = next;
                denom *= &pts[i] - sl;
            }
            let integral: BigRational = poly
                .iter()
                .enumerate()
                .map(|(d, c)| c / BigRational::from_integer(BigInt::from(d + 1)))
                .sum();
            integral / denom
        })
        .collect()
}

fn check_order(p: usize) -> Result<()> {
    if !(1..=8).contains(&p) {
        return Err(Error::Parameter(format!("Adams order must lie in 1..=8, got {p}")));
    }
    Ok(())
}

/// Adams-Moulton weights `mu_0 .. mu_{p-1}` multiplying values at `t_{n+1-j}`.
pub fn am_exact(p: usize) -> Result<Vec<BigRational>> {
    check_order(p)?;
    Ok(adams_exact(0..p as i64))
}

/// Adams-Bashforth weights `mu_1 .. mu_p` multiplying values at `t_{n+1-j}`.
pub fn ab_exact(p: usize) -> Result<Vec<BigRational>> {
    check_order(p)?;
    Ok(adams_exact(1..p as i64 + 1))
}

fn round<T: Real>(v: &[BigRational]) -> Vec<T> {
    v.iter()
        .map(|r| {
            let f = r
                .to_f64()
                .unwrap_or_else(|| r.numer().to_f64().unwrap_or(f64::NAN) / r.denom().to_f64().unwrap_or(f64::NAN));
            T::of(f)
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Family {
    Gregory,
    Moulton,
    Bashforth,
}

/// Rounded weights, memoized per family and order.
fn cached<T: Real>(family: Family, order: usize) -> Result<Vec<T>> {
    static CACHE: OnceLock<Mutex<HashMap<(Family, usize), Vec<f64>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(v) = cache.lock().ok().and_then(|c| c.get(&(family, order)).cloned()) {
        return Ok(v.into_iter().map(T::of).collect());
    }
    let exact = match family {
        Family::Gregory => gregory_exact(order)?,
        Family::Moulton => am_exact(order)?,
        Family::Bashforth => ab_exact(order)?,
    };
    let v: Vec<f64> = round(&exact);
    if let Ok(mut c) = cache.lock() {
        c.insert((family, order), v.clone());
    }
    Ok(v.into_iter().map(T::of).collect())
}

pub fn gregory_weights<T: Real>(q: usize) -> Result<Vec<T>> {
    cached(Family::Gregory, q)
}

pub fn am_weights<T: Real>(p: usize) -> Result<Vec<T>> {
    cached(Family::Moulton, p)
}

pub fn ab_weights<T: Real>(p: usize) -> Result<Vec<T>> {
    cached(Family::Bashforth, p)
}

/// Weights for an order-`p` step with `q` Gregory corrections.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable<T: Real> {
    pub p: usize,
    pub q: usize,
    pub am: Vec<T>,
    pub ab: Vec<T>,
    pub greg: Vec<T>,
}

impl<T: Real> WeightTable<T> {
    pub fn new(p: usize, q: usize) -> Result<Self> {
        Ok(Self {
            p,
            q,
            am: am_weights(p)?,
            ab: ab_weights(p)?,
            greg: gregory_weights(q)?,
        })
    }

    pub fn consistency_defect(&self) -> T {
        let one = T::one();
        let am: T = self.am.iter().fold(T::zero(), |a, &b| a + b);
        let ab: T = self.ab.iter().fold(T::zero(), |a, &b| a + b);
        (am - one).abs().max((ab - one).abs())
    }
}

/// Largest `|rule - exact|` of the corrected rule (unit spacing) over
/// monomials `t^j`, `j <= degree`, for every `n` in `ns`. Exact rational
/// evaluation, so the result is free of rounding.
pub fn gregory_exactness_defect(q: usize, degree: u32, ns: std::ops::RangeInclusive<usize>) -> Result<BigRational> {
    let mu = gregory_exact(q)?;
    let mut worst = BigRational::zero();
    for n in ns {
        if n + 1 < q {
            continue;
        }
        for j in 0..=degree {
            let pw = |m: usize| BigRational::from_integer(BigInt::from(m).pow(j));
            let mut rule: BigRational = (0..=n).map(pw).sum();
            for (m, w) in mu.iter().enumerate() {
                rule += w * (pw(m) + pw(n - m));
            }
            let exact =
                BigRational::from_integer(BigInt::from(n).pow(j + 1)) / BigRational::from_integer(BigInt::from(j + 1));
            let err = (rule - exact).abs();
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> BigRational {
        rat(n, d)
    }

    // Gregory coefficients G_1.. (1/2, 1/12, 1/24, 19/720, ...).
    fn gregory_coefficients() -> Vec<BigRational> {
        vec![
            r(1, 2),
            r(1, 12),
            r(1, 24),
            r(19, 720),
            r(3, 160),
            r(863, 60480),
            r(275, 24192),
            r(33953, 3628800),
        ]
    }

    // Left-end difference form: mu_m = -1/2 [m = 0] + sum_k (-1)^{k+1} G_{k+1} (Delta^k)_m.
    fn gregory_oracle(q: usize) -> Vec<BigRational> {
        let g = gregory_coefficients();
        let mut mu = vec![BigRational::zero(); q];
        mu[0] = r(-1, 2);
        for k in 1..q {
            let sign = if k % 2 == 1 { 1 } else { -1 };
            let mut binom = BigInt::one();
            for (m, w) in mu.iter_mut().enumerate().take(k + 1) {
                let dsign = if (k - m) % 2 == 0 { 1 } else { -1 };
                *w += &g[k] * BigRational::from_integer(binom.clone() * (sign * dsign));
                binom = binom * BigInt::from(k - m) / BigInt::from(m + 1);
            }
        }
        mu
    }

    #[test]
    fn bernoulli_values() {
        let b = bernoulli_plus(8);
        assert_eq!(b[1], r(1, 2));
        assert_eq!(b[2], r(1, 6));
        assert_eq!(b[3], BigRational::zero());
        assert_eq!(b[4], r(-1, 30));
        assert_eq!(b[8], r(-1, 30));
    }

    #[test]
    fn gregory_small_q() {
        assert_eq!(gregory_exact(1).unwrap(), vec![r(-1, 2)]);
        assert_eq!(gregory_exact(2).unwrap(), vec![r(-7, 12), r(1, 12)]);
        assert!(gregory_exact(0).is_err());
        assert!(gregory_exact(9).is_err());
    }

    #[test]
    fn gregory_matches_difference_oracle() {
        for q in 1..=8 {
            assert_eq!(gregory_exact(q).unwrap(), gregory_oracle(q), "q={q}");
        }
    }

    #[test]
    fn gregory_exact_below_degree_q() {
        for q in 1..=8 {
            let d = gregory_exactness_defect(q, q as u32 - 1, q - 1..=40).unwrap();
            assert!(d.is_zero(), "q={q}");
        }
        // Odd q gains one more degree by symmetry of the two endpoints.
        for q in [1usize, 3, 5, 7] {
            assert!(gregory_exactness_defect(q, q as u32, 2 * q..=40).unwrap().is_zero());
        }
    }

    #[test]
    fn adams_examples() {
        assert_eq!(am_exact(1).unwrap(), vec![r(1, 1)]);
        assert_eq!(am_exact(2).unwrap(), vec![r(1, 2), r(1, 2)]);
        assert_eq!(ab_exact(2).unwrap(), vec![r(3, 2), r(-1, 2)]);
        assert_eq!(am_exact(4).unwrap(), vec![r(9, 24), r(19, 24), r(-5, 24), r(1, 24)]);
        assert_eq!(ab_exact(4).unwrap(), vec![r(55, 24), r(-59, 24), r(37, 24), r(-9, 24)]);
        assert!(am_exact(0).is_err() && ab_exact(9).is_err());
    }

    #[test]
    fn adams_polynomial_exactness() {
        // y' = P(t) with deg P < p: one step from t_n = 0 with h = 1 is exact.
        for p in 1..=8usize {
            let am = am_exact(p).unwrap();
            let ab = ab_exact(p).unwrap();
            for deg in 0..p as u32 {
                let f = |s: i64| BigRational::from_integer(BigInt::from(s).pow(deg));
                let exact = r(1, deg as i64 + 1);
                let am_sum: BigRational = am.iter().enumerate().map(|(j, w)| w * f(1 - j as i64)).sum();
                let ab_sum: BigRational = ab.iter().enumerate().map(|(j, w)| w * f(-(j as i64))).sum();
                assert_eq!(am_sum, exact, "AM p={p} deg={deg}");
                assert_eq!(ab_sum, exact, "AB p={p} deg={deg}");
            }
        }
    }

    #[test]
    fn table_consistency() {
        for p in 1..=8 {
            let t = WeightTable::<f64>::new(p, p.max(2) - 1).unwrap();
            assert!(t.consistency_defect() < 1e-13);
            assert_eq!(t.am.len(), p);
            assert_eq!(t.ab.len(), p);
        }
        let t = WeightTable::<f32>::new(4, 3).unwrap();
        assert!(t.consistency_defect() < 1e-6);
    }
}
