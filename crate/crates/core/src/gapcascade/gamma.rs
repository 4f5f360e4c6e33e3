//! Symbolic extraction of the integer coupling coefficients `Gamma`.
//!
//! For fixed `(n, m, q, q', sigma, tau, alpha)` the gap-carrying polynomial
//! `Psi` is built on the extended chain
//! `x >= xi_1 >= ... >= xi_{j-1} >= s >= xi_j >= ... >= xi_n`, integrated in
//! `s` by split-gap integration and projected onto the gap basis. The
//! coefficient of `Phi_P` is `Gamma_{P; q, q', sigma, tau, alpha}`.
//!
//! Conventions:
//! * the kernel difference is `a(x) - a(x - e) = -sum_{tau>=1} (-1)^tau e^tau/tau! a^(tau)(x)`
//!   where `e` is the last kernel argument (either `s` or a chain entry below it);
//! * `e^tau/tau! = sum_alpha x^{tau-|alpha|}/(tau-|alpha|)! (-1)^{|alpha|} prod g_r^{alpha_r}/alpha_r!`,
//!   `g_r` being the part of the outer gap `Delta_r` that lies above `e`;
//! * `b(s) = sum_sigma (-1)^sigma (x - s)^sigma/sigma! b^(sigma)(x)`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use super::dp::GapPolynomial;
use crate::charkernels::order_preserving_splits;
use crate::error::{domain, Error, Result};
use crate::poly::{multi_indices, multi_indices_upto, Rational};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GammaKey {
    pub n: usize,
    pub m: usize,
    pub p: Vec<u32>,
    pub q: Vec<u32>,
    pub q_prime: Vec<u32>,
    pub sigma: u32,
    pub tau: u32,
    pub alpha: Vec<u32>,
}

/// Index data of one `(q, q', sigma, tau, alpha)` term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GammaTerm {
    pub q: Vec<u32>,
    pub q_prime: Vec<u32>,
    pub sigma: u32,
    pub tau: u32,
    pub alpha: Vec<u32>,
}

fn check_orders(n: usize, m: usize) -> Result<usize> {
    if n < 3 || m < 2 || m >= n {
        return domain(format!(
            "Gamma needs n >= 3 and 2 <= m <= n - 1, got n={n}, m={m}"
        ));
    }
    Ok(n - m + 1)
}

/// `Phi_P` projection (`P -> Gamma`) of one term, summed over the
/// integration index `j` and the order-preserving splits.
pub fn gamma_projection(
    n: usize,
    m: usize,
    term: &GammaTerm,
) -> Result<BTreeMap<Vec<u32>, BigInt>> {
    let p = check_orders(n, m)?;
    if term.q.len() != p || term.q_prime.len() != m || term.alpha.len() != n {
        return domain(format!(
            "index lengths (q {}, q' {}, alpha {}) do not match (k {p}, m {m}, n {n})",
            term.q.len(),
            term.q_prime.len(),
            term.alpha.len()
        ));
    }
    let mut total = GapPolynomial::zero(n);
    let abs_alpha: u32 = term.alpha.iter().sum();
    if term.tau == 0 || abs_alpha > term.tau {
        return Ok(BTreeMap::new());
    }
    for j in 1..=p {
        let below: Vec<usize> = (j..=n).collect();
        for (a_part, c_part) in order_preserving_splits(&below, p - j) {
            if let Some(poly) = psi_integrated(n, m, j, &a_part, &c_part, term) {
                total.add_assign(&poly);
            }
        }
    }
    let ints = total
        .integer_terms()
        .ok_or_else(|| Error::Evaluation("non-integer Gamma coefficient".into()))?;
    Ok(ints
        .into_iter()
        .map(|((g, xp), c)| {
            debug_assert_eq!(xp, 0);
            (g, c)
        })
        .collect())
}

/// Chain position of `xi_i` (1-based) when `s` sits at position `j`.
fn chain_pos(i: usize, j: usize) -> usize {
    if i < j {
        i
    } else {
        i + 1
    }
}

/// Extended variables (gaps of the extended chain) between two chain
/// positions `a < b`.
fn gap_vars(a: usize, b: usize) -> Vec<usize> {
    (a..b).collect()
}

fn psi_integrated(
    n: usize,
    m: usize,
    j: usize,
    a_part: &[usize],
    c_part: &[usize],
    t: &GammaTerm,
) -> Option<GapPolynomial> {
    let nv = n + 1;
    let p = n - m + 1;
    // Kernel chain: x, xi_1..xi_{j-1}, s, A.
    let mut y: Vec<usize> = (0..=j).collect();
    y.extend(a_part.iter().map(|&i| chain_pos(i, j)));
    debug_assert_eq!(y.len(), p + 1);
    let e_pos = *y.last().unwrap();

    // Outer-gap parts above e, as extended variable sets.
    let mut alpha_factor = GapPolynomial::one(nv);
    for (r, &ar) in t.alpha.iter().enumerate() {
        if ar == 0 {
            continue;
        }
        let ext: Vec<usize> = match r + 1 {
            rr if rr < j => vec![r],
            rr if rr == j => vec![j - 1, j],
            _ => vec![r + 1],
        };
        let above: Vec<usize> = ext.into_iter().filter(|&v| v < e_pos).collect();
        if above.is_empty() {
            return None;
        }
        alpha_factor = alpha_factor.mul(&GapPolynomial::divided_power_of_sum(nv, &above, ar));
    }

    let mut psi = alpha_factor;
    for r in 0..p {
        if t.q[r] > 0 {
            psi = psi.mul(&GapPolynomial::divided_power_of_sum(
                nv,
                &gap_vars(y[r], y[r + 1]),
                t.q[r],
            ));
        }
    }
    let mut y2: Vec<usize> = vec![j];
    y2.extend(c_part.iter().map(|&i| chain_pos(i, j)));
    for r in 0..m {
        if t.q_prime[r] > 0 {
            psi = psi.mul(&GapPolynomial::divided_power_of_sum(
                nv,
                &gap_vars(y2[r], y2[r + 1]),
                t.q_prime[r],
            ));
        }
    }
    if t.sigma > 0 {
        psi = psi.mul(&GapPolynomial::divided_power_of_sum(
            nv,
            &gap_vars(0, j),
            t.sigma,
        ));
    }
    let abs_alpha: u32 = t.alpha.iter().sum();
    // -(-1)^tau (-1)^|alpha| (-1)^sigma
    let odd = (1 + t.tau + abs_alpha + t.sigma) % 2 == 1;
    let sign = if odd {
        -Rational::one()
    } else {
        Rational::one()
    };
    Some(psi.scale(&sign).split_integrate(j - 1))
}

/// All nonzero `Gamma` with `|P| <= p_degree_cap` and `tau <= tau_cap`.
pub fn gamma_table(
    n: usize,
    m: usize,
    p_degree_cap: u32,
    tau_cap: u32,
) -> Result<BTreeMap<GammaKey, BigInt>> {
    let p = check_orders(n, m)?;
    let mut out = BTreeMap::new();
    if p_degree_cap == 0 {
        return Ok(out);
    }
    let budget = p_degree_cap - 1;
    for q in multi_indices_upto(p, budget) {
        let dq: u32 = q.iter().sum();
        for q_prime in multi_indices_upto(m, budget - dq) {
            let dqp: u32 = q_prime.iter().sum();
            for sigma in 0..=budget - dq - dqp {
                let left = budget - dq - dqp - sigma;
                for tau in 1..=tau_cap {
                    for abs_alpha in 0..=left.min(tau) {
                        for alpha in multi_indices(n, abs_alpha) {
                            let term = GammaTerm {
                                q: q.clone(),
                                q_prime: q_prime.clone(),
                                sigma,
                                tau,
                                alpha,
                            };
                            for (pp, g) in gamma_projection(n, m, &term)? {
                                if g.is_zero() {
                                    continue;
                                }
                                out.insert(
                                    GammaKey {
                                        n,
                                        m,
                                        p: pp,
                                        q: term.q.clone(),
                                        q_prime: term.q_prime.clone(),
                                        sigma,
                                        tau,
                                        alpha: term.alpha.clone(),
                                    },
                                    g,
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_constraint_holds() {
        let table = gamma_table(3, 2, 4, 2).unwrap();
        assert!(!table.is_empty());
        for key in table.keys() {
            let d = key.q.iter().sum::<u32>()
                + key.q_prime.iter().sum::<u32>()
                + key.sigma
                + key.alpha.iter().sum::<u32>();
            assert_eq!(d + 1, key.p.iter().sum::<u32>());
            assert!(key.alpha.iter().sum::<u32>() <= key.tau);
            assert!(key.tau >= 1);
        }
    }

    #[test]
    fn alpha_above_tau_is_absent() {
        let term = GammaTerm {
            q: vec![0, 0],
            q_prime: vec![0, 0],
            sigma: 0,
            tau: 1,
            alpha: vec![1, 1, 0],
        };
        assert!(gamma_projection(3, 2, &term).unwrap().is_empty());
    }

    #[test]
    fn pdae_entries() {
        // With a = -x (tau = 1) and b = 1 (sigma = 0):
        // c_P = -x * Gamma(alpha = 0) - sum_{|alpha| = 1} Gamma(alpha).
        let base = |alpha: Vec<u32>| GammaTerm {
            q: vec![0, 0],
            q_prime: vec![0, 0],
            sigma: 0,
            tau: 1,
            alpha,
        };
        let g0 = gamma_projection(3, 2, &base(vec![0, 0, 0])).unwrap();
        assert_eq!(g0.get(&vec![1, 0, 0]), Some(&BigInt::from(3)));
        assert_eq!(g0.get(&vec![0, 1, 0]), Some(&BigInt::from(1)));
        assert_eq!(g0.len(), 2);
        let mut first_order: BTreeMap<Vec<u32>, BigInt> = BTreeMap::new();
        for alpha in multi_indices(3, 1) {
            for (p, g) in gamma_projection(3, 2, &base(alpha)).unwrap() {
                *first_order.entry(p).or_insert_with(BigInt::zero) += g;
            }
        }
        first_order.retain(|_, g| !g.is_zero());
        let expect: BTreeMap<Vec<u32>, BigInt> = [
            (vec![2, 0, 0], -6),
            (vec![1, 1, 0], -3),
            (vec![1, 0, 1], -1),
            (vec![0, 2, 0], -1),
        ]
        .into_iter()
        .map(|(p, g)| (p, BigInt::from(g)))
        .collect();
        assert_eq!(first_order, expect);
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(gamma_table(2, 2, 3, 1).is_err());
        assert!(gamma_table(3, 3, 3, 1).is_err());
    }
}
