//! Exact polynomials in the divided-power gap basis.
//!
//! A term with gap exponents `P` and pure-x exponent `sigma` stands for
//! `x^sigma / sigma! * prod_r Delta_r^{P_r} / P_r!`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::poly::{binomial, factorial, multi_indices, rat_to_f64, Rational, UPoly};

pub type DpKey = (Vec<u32>, u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapPolynomial {
    nvars: usize,
    terms: BTreeMap<DpKey, Rational>,
}

impl GapPolynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn one(nvars: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], 0, Rational::one());
        p
    }

    /// `Delta_r^k / k!`.
    pub fn gap_power(nvars: usize, r: usize, k: u32) -> Self {
        let mut e = vec![0; nvars];
        e[r] = k;
        let mut p = Self::zero(nvars);
        p.add_term(e, 0, Rational::one());
        p
    }

    /// `x^k / k!`.
    pub fn x_power(nvars: usize, k: u32) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], k, Rational::one());
        p
    }

    /// `(sum_{r in vars} Delta_r)^k / k!`, which in this basis is the sum of
    /// all monomials of total degree `k` over `vars`, each with coefficient 1.
    pub fn divided_power_of_sum(nvars: usize, vars: &[usize], k: u32) -> Self {
        let mut p = Self::zero(nvars);
        if vars.is_empty() {
            if k == 0 {
                p.add_term(vec![0; nvars], 0, Rational::one());
            }
            return p;
        }
        for part in multi_indices(vars.len(), k) {
            let mut e = vec![0; nvars];
            for (&v, &d) in vars.iter().zip(&part) {
                e[v] += d;
            }
            p.add_term(e, 0, Rational::one());
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &BTreeMap<DpKey, Rational> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, gaps: Vec<u32>, x_pow: u32, c: Rational) {
        debug_assert_eq!(gaps.len(), self.nvars);
        if c.is_zero() {
            return;
        }
        let key = (gaps, x_pow);
        let entry = self.terms.entry(key.clone()).or_insert_with(Rational::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&key);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.nvars, other.nvars);
        for ((g, x), c) in &other.terms {
            self.add_term(g.clone(), *x, c.clone());
        }
    }

    pub fn scale(&self, c: &Rational) -> Self {
        let mut out = Self::zero(self.nvars);
        for ((g, x), v) in &self.terms {
            out.add_term(g.clone(), *x, v * c);
        }
        out
    }

    /// Divided-power product: `Phi_a Phi_b = C(a+b, a) Phi_{a+b}` per variable.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.nvars, other.nvars, "variable count mismatch");
        let mut out = Self::zero(self.nvars);
        for ((ga, xa), ca) in &self.terms {
            for ((gb, xb), cb) in &other.terms {
                let mut w = binomial(xa + xb, *xa);
                let g: Vec<u32> = ga
                    .iter()
                    .zip(gb)
                    .map(|(a, b)| {
                        w *= binomial(a + b, *a);
                        a + b
                    })
                    .collect();
                out.add_term(g, xa + xb, ca * cb * Rational::from_integer(w));
            }
        }
        out
    }

    /// Integrates over a split gap: variables `j` and `j + 1` are the two
    /// parts `theta + omega` of one gap, and
    /// `theta^a/a! omega^b/b!` integrates to `Delta^(a+b+1)/(a+b+1)!`.
    pub fn split_integrate(&self, j: usize) -> Self {
        assert!(j + 1 < self.nvars, "split variable out of range");
        let mut out = Self::zero(self.nvars - 1);
        for ((g, x), c) in &self.terms {
            let mut e = Vec::with_capacity(self.nvars - 1);
            e.extend_from_slice(&g[..j]);
            e.push(g[j] + g[j + 1] + 1);
            e.extend_from_slice(&g[j + 2..]);
            out.add_term(e, *x, c.clone());
        }
        out
    }

    pub fn eval_f64(&self, x: f64, gaps: &[f64]) -> f64 {
        let mut fact_cache: Vec<f64> = vec![1.0];
        let mut fact = |k: u32| -> f64 {
            while fact_cache.len() <= k as usize {
                let l = fact_cache.len();
                fact_cache.push(fact_cache[l - 1] * l as f64);
            }
            fact_cache[k as usize]
        };
        let mut acc = 0.0;
        for ((g, xp), c) in &self.terms {
            let mut t = rat_to_f64(c) * x.powi(*xp as i32) / fact(*xp);
            for (e, d) in g.iter().zip(gaps) {
                if *e > 0 {
                    t *= d.powi(*e as i32) / fact(*e);
                }
            }
            acc += t;
        }
        acc
    }

    /// Gap-basis coefficients: `P -> c_P(x)` with `c_P` in the standard
    /// x-basis.
    pub fn to_coefficients(&self) -> BTreeMap<Vec<u32>, UPoly> {
        let mut out: BTreeMap<Vec<u32>, UPoly> = BTreeMap::new();
        for ((g, xp), c) in &self.terms {
            let mono = UPoly::monomial(c / Rational::from_integer(factorial(*xp)), *xp as usize);
            let e = out.entry(g.clone()).or_default();
            *e = &*e + &mono;
        }
        out.retain(|_, p| !p.is_zero());
        out
    }

    pub fn from_coefficients(nvars: usize, coeffs: &BTreeMap<Vec<u32>, UPoly>) -> Self {
        let mut out = Self::zero(nvars);
        for (g, poly) in coeffs {
            for (k, c) in poly.coeffs().iter().enumerate() {
                out.add_term(
                    g.clone(),
                    k as u32,
                    c * Rational::from_integer(factorial(k as u32)),
                );
            }
        }
        out
    }

    /// Integer coefficients; `None` if some coefficient is not an integer.
    pub fn integer_terms(&self) -> Option<BTreeMap<DpKey, BigInt>> {
        self.terms
            .iter()
            .map(|(k, c)| c.is_integer().then(|| (k.clone(), c.to_integer())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::rat_int;
    use approx::assert_abs_diff_eq;

    #[test]
    fn product_rule() {
        let d = GapPolynomial::gap_power(2, 0, 1);
        let sq = d.mul(&d);
        // Delta * Delta = 2 * Delta^2/2!
        assert_eq!(sq.terms().get(&(vec![2, 0], 0)), Some(&rat_int(2)));
        assert_abs_diff_eq!(sq.eval_f64(0.0, &[0.3, 0.0]), 0.09, epsilon = 1e-15);
        let x = GapPolynomial::x_power(2, 1);
        assert_abs_diff_eq!(x.mul(&x).eval_f64(0.5, &[0.0, 0.0]), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn sum_power_matches_direct() {
        let p = GapPolynomial::divided_power_of_sum(3, &[0, 2], 3);
        let (a, b) = (0.3, 0.45);
        assert_abs_diff_eq!(
            p.eval_f64(0.0, &[a, 9.0, b]),
            (a + b).powi(3) / 6.0,
            epsilon = 1e-14
        );
        assert!(GapPolynomial::divided_power_of_sum(2, &[], 1).is_zero());
        assert_eq!(
            GapPolynomial::divided_power_of_sum(2, &[], 0),
            GapPolynomial::one(2)
        );
    }

    #[test]
    fn split_gap_integration_is_beta_identity() {
        // int_0^D theta^2/2! (D - theta)/1! dtheta = D^4/4!
        let h = GapPolynomial::gap_power(3, 1, 2).mul(&GapPolynomial::gap_power(3, 2, 1));
        let i = h.split_integrate(1);
        assert_eq!(i.nvars(), 2);
        assert_eq!(i.terms().get(&(vec![0, 4], 0)), Some(&rat_int(1)));
    }

    #[test]
    fn coefficient_round_trip() {
        let mut p = GapPolynomial::zero(2);
        p.add_term(vec![1, 0], 2, rat_int(3));
        p.add_term(vec![0, 0], 0, rat_int(-1));
        let c = p.to_coefficients();
        assert_eq!(c[&vec![1, 0]], UPoly::monomial(crate::poly::rat(3, 2), 2));
        assert_eq!(GapPolynomial::from_coefficients(2, &c), p);
    }
}
