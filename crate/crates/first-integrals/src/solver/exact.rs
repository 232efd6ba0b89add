//! Exact nullspace extraction by fraction-free (Bareiss) elimination.
//!
//! Rows are cleared of denominators, reduced over the integers with exact
//! divisions, and the kernel basis is then back-substituted in rational
//! arithmetic, one basis vector per free column.

use crate::expr::Rational;
use num::{BigInt, Integer, One, Zero};

/// Kernel basis of the rational matrix (rows of `a`), as rational vectors.
pub fn nullspace_exact(a: &[Vec<Rational>]) -> Vec<Vec<Rational>> {
    if a.is_empty() {
        return Vec::new();
    }
    let cols = a[0].len();
    // clear denominators row by row
    let mut m: Vec<Vec<BigInt>> = a
        .iter()
        .map(|row| {
            let mut lcm = BigInt::one();
            for e in row {
                lcm = lcm.lcm(e.denom());
            }
            row.iter()
                .map(|e| e.numer() * (&lcm / e.denom()))
                .collect()
        })
        .collect();
    // drop zero rows early
    m.retain(|row| row.iter().any(|e| !e.is_zero()));
    let rows = m.len();

    // Bareiss fraction-free forward elimination
    let mut pivot_cols: Vec<usize> = Vec::new();
    let mut prev = BigInt::one();
    let mut r = 0usize;
    for c in 0..cols {
        if r >= rows {
            break;
        }
        // partial pivot: any nonzero entry (prefer the largest magnitude for
        // balance)
        let mut best: Option<usize> = None;
        for (i, row) in m.iter().enumerate().skip(r) {
            if !row[c].is_zero() {
                match best {
                    None => best = Some(i),
                    Some(b) => {
                        if row[c].magnitude() > m[b][c].magnitude() {
                            best = Some(i);
                        }
                    }
                }
            }
        }
        let Some(p) = best else { continue };
        m.swap(r, p);
        for i in (r + 1)..rows {
            for j in (c + 1)..cols {
                let num = &m[r][c] * &m[i][j] - &m[i][c] * &m[r][j];
                debug_assert!((&num % &prev).is_zero(), "Bareiss division not exact");
                m[i][j] = num / &prev;
            }
            m[i][c] = BigInt::zero();
        }
        prev = m[r][c].clone();
        pivot_cols.push(c);
        r += 1;
    }
    let rank = pivot_cols.len();

    // back-substitute one kernel vector per free column
    let free_cols: Vec<usize> = (0..cols).filter(|c| !pivot_cols.contains(c)).collect();
    let mut basis = Vec::with_capacity(free_cols.len());
    for &f in &free_cols {
        let mut x = vec![Rational::zero(); cols];
        x[f] = Rational::one();
        // pivots solved bottom-up
        for k in (0..rank).rev() {
            let c = pivot_cols[k];
            // row k: m[k][c] x_c + Σ_{j>c} m[k][j] x_j = 0
            let mut acc = Rational::zero();
            for j in (c + 1)..cols {
                if !m[k][j].is_zero() && !x[j].is_zero() {
                    acc += Rational::from_integer(m[k][j].clone()) * &x[j];
                }
            }
            x[c] = -acc / Rational::from_integer(m[k][c].clone());
        }
        basis.push(x);
    }
    basis
}

/// Rank of a rational matrix via the same elimination.
pub fn rank_exact(a: &[Vec<Rational>]) -> usize {
    if a.is_empty() {
        return 0;
    }
    let cols = a[0].len();
    cols - nullspace_exact(a).len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::rat;

    fn r(n: i64) -> Rational {
        rat(n, 1)
    }

    #[test]
    fn identity_has_empty_kernel() {
        let a = vec![
            vec![r(1), r(0), r(0)],
            vec![r(0), r(1), r(0)],
            vec![r(0), r(0), r(1)],
        ];
        assert!(nullspace_exact(&a).is_empty());
    }

    #[test]
    fn simple_rank_one_kernel() {
        // x + 2y - z = 0, 2x + 4y - 2z = 0 -> kernel dim 2
        let a = vec![
            vec![r(1), r(2), r(-1)],
            vec![r(2), r(4), r(-2)],
        ];
        let k = nullspace_exact(&a);
        assert_eq!(k.len(), 2);
        for v in &k {
            let resid = &v[0] + rat(2, 1) * &v[1] - &v[2];
            assert!(resid.is_zero());
        }
    }

    #[test]
    fn fractions_are_cleared() {
        let a = vec![vec![rat(1, 3), rat(-1, 6)]];
        let k = nullspace_exact(&a);
        assert_eq!(k.len(), 1);
        // x/3 = y/6 -> y = 2x
        let ratio = &k[0][1] / &k[0][0];
        assert_eq!(ratio, rat(2, 1));
    }

    #[test]
    fn zero_matrix_kernel_is_everything() {
        let a = vec![vec![r(0), r(0)], vec![r(0), r(0)]];
        assert_eq!(nullspace_exact(&a).len(), 2);
        assert_eq!(rank_exact(&a), 0);
    }

    #[test]
    fn kernel_vectors_annihilate_random_matrix() {
        // deterministic pseudo-random integer matrix with a forced kernel
        let mut rng = crate::expr::SplitMix64::new(17);
        let rows = 6;
        let cols = 5;
        let mut a: Vec<Vec<Rational>> = Vec::new();
        for _ in 0..rows {
            let mut row: Vec<Rational> = (0..cols - 1)
                .map(|_| r((rng.next_u64() % 11) as i64 - 5))
                .collect();
            // last column = sum of the others, forcing kernel dim >= 1
            let sum: Rational = row.iter().cloned().sum();
            row.push(-sum);
            a.push(row);
        }
        let k = nullspace_exact(&a);
        assert!(!k.is_empty());
        for v in &k {
            for row in &a {
                let dot: Rational = row.iter().zip(v).map(|(x, y)| x * y).sum();
                assert!(dot.is_zero());
            }
        }
    }
}
