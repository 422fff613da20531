//! Sparse multivariate polynomials over `f64` coefficients.
//!
//! Terms are keyed by exponent vector in a `BTreeMap`, so every polynomial has
//! a single canonical form (no duplicate exponents, no explicit zero terms)
//! and every traversal -- evaluation, arithmetic, printing -- runs in a fixed
//! order. Identical inputs therefore produce bit-identical outputs.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolyError {
    #[error("variable count mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parse error at `{token}`: {reason}")]
    Parse { token: String, reason: String },
}

/// One term: a coefficient times a product of variable powers.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub exponents: Vec<u32>,
    pub coefficient: f64,
}

/// Sparse polynomial in `nvars` variables, always in canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, value: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], value);
        p
    }

    /// The monomial `x_{index}` (zero-based index).
    pub fn variable(nvars: usize, index: usize) -> Self {
        assert!(index < nvars, "variable index out of range");
        let mut exps = vec![0; nvars];
        exps[index] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(exps, 1.0);
        p
    }

    pub fn from_terms(nvars: usize, terms: &[Monomial]) -> Result<Self, PolyError> {
        let mut p = Self::zero(nvars);
        for t in terms {
            if t.exponents.len() != nvars {
                return Err(PolyError::DimensionMismatch { expected: nvars, got: t.exponents.len() });
            }
            p.add_term(t.exponents.clone(), t.coefficient);
        }
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(|e| e.iter().sum()).max()
    }

    pub fn terms(&self) -> impl Iterator<Item = Monomial> + '_ {
        self.terms
            .iter()
            .map(|(e, &c)| Monomial { exponents: e.clone(), coefficient: c })
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    fn add_term(&mut self, exps: Vec<u32>, coeff: f64) {
        use std::collections::btree_map::Entry;
        if coeff == 0.0 {
            return;
        }
        match self.terms.entry(exps) {
            Entry::Vacant(slot) => {
                slot.insert(coeff);
            }
            Entry::Occupied(mut slot) => {
                let sum = *slot.get() + coeff;
                if sum == 0.0 {
                    slot.remove();
                } else {
                    *slot.get_mut() = sum;
                }
            }
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<f64, PolyError> {
        if x.len() != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, got: x.len() });
        }
        let mut acc = 0.0;
        for (exps, coeff) in &self.terms {
            let mut term = *coeff;
            for (i, &e) in exps.iter().enumerate() {
                if e > 0 {
                    term *= x[i].powi(e as i32);
                }
            }
            acc += term;
        }
        Ok(acc)
    }

    /// Partial derivative with respect to variable `index`.
    pub fn partial(&self, index: usize) -> Self {
        assert!(index < self.nvars, "variable index out of range");
        let mut p = Self::zero(self.nvars);
        for (exps, coeff) in &self.terms {
            let e = exps[index];
            if e > 0 {
                let mut ne = exps.clone();
                ne[index] = e - 1;
                p.add_term(ne, coeff * e as f64);
            }
        }
        p
    }

    /// All partial derivatives, in variable order.
    pub fn gradient(&self) -> Vec<Self> {
        (0..self.nvars).map(|i| self.partial(i)).collect()
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut p = Self::zero(self.nvars);
        for (exps, coeff) in &self.terms {
            p.add_term(exps.clone(), coeff * factor);
        }
        p
    }

    pub fn add(&self, other: &Self) -> Result<Self, PolyError> {
        if other.nvars != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, got: other.nvars });
        }
        let mut p = self.clone();
        for (exps, coeff) in &other.terms {
            p.add_term(exps.clone(), *coeff);
        }
        Ok(p)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Result<Self, PolyError> {
        if other.nvars != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, got: other.nvars });
        }
        let mut p = Self::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let exps: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                p.add_term(exps, ca * cb);
            }
        }
        Ok(p)
    }

    pub fn pow(&self, exponent: u32) -> Self {
        let mut acc = Self::constant(self.nvars, 1.0);
        for _ in 0..exponent {
            acc = acc.mul(self).expect("same variable space");
        }
        acc
    }

    /// Replaces variable `index` by the polynomial `replacement`.
    pub fn substitute(&self, index: usize, replacement: &Self) -> Result<Self, PolyError> {
        if replacement.nvars != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, got: replacement.nvars });
        }
        assert!(index < self.nvars, "variable index out of range");
        let mut powers: BTreeMap<u32, Polynomial> = BTreeMap::new();
        let mut p = Self::zero(self.nvars);
        for (exps, coeff) in &self.terms {
            let e = exps[index];
            let mut rest = exps.clone();
            rest[index] = 0;
            let mut base = Self::zero(self.nvars);
            base.add_term(rest, *coeff);
            if e == 0 {
                p = p.add(&base)?;
            } else {
                let rp = powers
                    .entry(e)
                    .or_insert_with(|| replacement.pow(e))
                    .clone();
                p = p.add(&base.mul(&rp)?)?;
            }
        }
        Ok(p)
    }

    /// Re-embeds into a space of `new_nvars` variables; `map[i]` is the new
    /// index of old variable `i`.
    pub fn remap_vars(&self, new_nvars: usize, map: &[usize]) -> Result<Self, PolyError> {
        if map.len() != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, got: map.len() });
        }
        assert!(map.iter().all(|&j| j < new_nvars), "remap target out of range");
        let mut p = Self::zero(new_nvars);
        for (exps, coeff) in &self.terms {
            let mut ne = vec![0u32; new_nvars];
            for (i, &e) in exps.iter().enumerate() {
                ne[map[i]] += e;
            }
            p.add_term(ne, *coeff);
        }
        Ok(p)
    }

    /// Parses the text form: signed terms `c*x1^e1*x2^e2` with `*` and `^`
    /// mandatory, variables `x1..xn` (one-based, case-sensitive).
    pub fn parse(input: &str, nvars: usize) -> Result<Self, PolyError> {
        Parser { input: input.as_bytes(), pos: 0, nvars }.parse()
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (exps, coeff)) in self.terms.iter().enumerate() {
            let c = if i == 0 {
                *coeff
            } else {
                f.write_str(if *coeff < 0.0 { "-" } else { "+" })?;
                coeff.abs()
            };
            write!(f, "{c}")?;
            for (v, &e) in exps.iter().enumerate() {
                if e > 0 {
                    write!(f, "*x{}^{}", v + 1, e)?;
                }
            }
        }
        Ok(())
    }
}

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
    nvars: usize,
}

impl<'a> Parser<'a> {
    fn parse(mut self) -> Result<Polynomial, PolyError> {
        let mut poly = Polynomial::zero(self.nvars);
        self.skip_ws();
        if self.peek().is_none() {
            return Err(self.err("", "empty polynomial"));
        }
        let mut first = true;
        while self.peek().is_some() {
            let sign = match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    1.0
                }
                Some(b'-') => {
                    self.pos += 1;
                    -1.0
                }
                Some(_) if first => 1.0,
                Some(c) => {
                    return Err(self.err(&(c as char).to_string(), "expected `+` or `-` between terms"))
                }
                None => break,
            };
            first = false;
            self.skip_ws();
            let (exps, coeff) = self.term()?;
            poly.add_term(exps, sign * coeff);
            self.skip_ws();
        }
        Ok(poly)
    }

    fn term(&mut self) -> Result<(Vec<u32>, f64), PolyError> {
        let coeff = self.number()?;
        let mut exps = vec![0u32; self.nvars];
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    self.skip_ws();
                    let (var, exp) = self.factor()?;
                    exps[var] += exp;
                }
                _ => break,
            }
        }
        Ok((exps, coeff))
    }

    fn factor(&mut self) -> Result<(usize, u32), PolyError> {
        match self.peek() {
            Some(b'x') => self.pos += 1,
            _ => {
                let tok = self.rest_token();
                return Err(self.err(&tok, "expected a variable `x<k>` after `*`"));
            }
        }
        let idx_str = self.digits();
        if idx_str.is_empty() {
            return Err(self.err("x", "variable needs a one-based index, e.g. `x1`"));
        }
        let idx: usize = idx_str
            .parse()
            .map_err(|_| self.err(&format!("x{idx_str}"), "variable index out of range"))?;
        if idx == 0 || idx > self.nvars {
            return Err(self.err(
                &format!("x{idx}"),
                &format!("variable index must be in 1..={}", self.nvars),
            ));
        }
        self.skip_ws();
        match self.peek() {
            Some(b'^') => self.pos += 1,
            _ => {
                let tok = self.rest_token();
                return Err(self.err(&tok, "expected `^<exponent>` after a variable"));
            }
        }
        self.skip_ws();
        let exp_str = self.digits();
        if exp_str.is_empty() {
            let tok = self.rest_token();
            return Err(self.err(&tok, "exponent must be a non-negative integer"));
        }
        let exp: u32 = exp_str
            .parse()
            .map_err(|_| self.err(&exp_str, "exponent out of range"))?;
        Ok((idx - 1, exp))
    }

    fn number(&mut self) -> Result<f64, PolyError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9') | Some(b'.')) {
            self.pos += 1;
        }
        if self.pos == start {
            let tok = self.rest_token();
            return Err(self.err(&tok, "every term must start with a numeric coefficient"));
        }
        // Scientific exponent, accepted only when followed by a sign or digit.
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            let d = self.digits();
            if d.is_empty() {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.input[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map_err(|_| self.err(text, "not a valid coefficient"))
    }

    fn digits(&mut self) -> String {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.input[start..self.pos]).unwrap().to_string()
    }

    fn rest_token(&self) -> String {
        let rest = &self.input[self.pos.min(self.input.len())..];
        let end = rest
            .iter()
            .position(|c| c.is_ascii_whitespace() || matches!(c, b'+' | b'-' | b'*'))
            .unwrap_or(rest.len());
        let tok = std::str::from_utf8(&rest[..end.min(24)]).unwrap_or("?");
        if tok.is_empty() { "<end>".to_string() } else { tok.to_string() }
    }

    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn err(&self, token: &str, reason: &str) -> PolyError {
        PolyError::Parse { token: token.to_string(), reason: reason.to_string() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-12;

    fn circle() -> Polynomial {
        Polynomial::parse("1*x1^2+1*x2^2-1", 2).unwrap()
    }

    fn cubic() -> Polynomial {
        Polynomial::parse("1*x1^3", 2).unwrap()
    }

    fn random_poly(rng: &mut ChaCha8Rng, nvars: usize, max_deg: u32) -> Polynomial {
        let nterms = rng.gen_range(1..=6);
        let mut p = Polynomial::zero(nvars);
        for _ in 0..nterms {
            let exps: Vec<u32> = (0..nvars).map(|_| rng.gen_range(0..=max_deg)).collect();
            p.add_term(exps, rng.gen_range(-2.0..2.0));
        }
        p
    }

    fn random_point(rng: &mut ChaCha8Rng, nvars: usize) -> DVector<f64> {
        DVector::from_fn(nvars, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn eval_matches_known_values() {
        let c = circle();
        assert!(c.eval(&dvector![1.0, 0.0]).unwrap().abs() < TOL);
        assert!((c.eval(&dvector![0.0, 0.0]).unwrap() + 1.0).abs() < TOL);
        let f = cubic();
        let y = 3.0f64.sqrt() / 2.0;
        assert!((f.eval(&dvector![0.5, y]).unwrap() - 0.125).abs() < TOL);
    }

    #[test]
    fn eval_dimension_mismatch_is_reported() {
        let c = circle();
        assert!(matches!(
            c.eval(&dvector![1.0]),
            Err(PolyError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn gradient_matches_hand_derivative() {
        let f = cubic();
        let g = f.gradient();
        let x = dvector![0.5, -0.3];
        assert!((g[0].eval(&x).unwrap() - 3.0 * 0.25).abs() < TOL);
        assert!(g[1].is_zero());
    }

    #[test]
    fn gradient_matches_finite_differences_at_second_order() {
        // Central differences have O(h^2) error; halving h must shrink the
        // error by about 4 on smooth polynomials.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p = random_poly(&mut rng, 3, 4);
            let x = random_point(&mut rng, 3);
            let g = p.gradient();
            for i in 0..3 {
                let exact = g[i].eval(&x).unwrap();
                let fd = |h: f64| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    (p.eval(&xp).unwrap() - p.eval(&xm).unwrap()) / (2.0 * h)
                };
                let e1 = (fd(1e-3) - exact).abs();
                let e2 = (fd(5e-4) - exact).abs();
                if e1 > 1e-9 {
                    let ratio = e1 / e2.max(1e-300);
                    assert!(ratio > 2.5 && ratio < 6.0, "ratio {ratio} e1 {e1} e2 {e2}");
                } else {
                    assert!(e2 < 1e-8);
                }
            }
        }
    }

    #[test]
    fn arithmetic_agrees_with_pointwise_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..40 {
            let a = random_poly(&mut rng, 3, 3);
            let b = random_poly(&mut rng, 3, 3);
            let x = random_point(&mut rng, 3);
            let (ea, eb) = (a.eval(&x).unwrap(), b.eval(&x).unwrap());
            assert!((a.add(&b).unwrap().eval(&x).unwrap() - (ea + eb)).abs() < 1e-10);
            assert!((a.sub(&b).unwrap().eval(&x).unwrap() - (ea - eb)).abs() < 1e-10);
            assert!((a.mul(&b).unwrap().eval(&x).unwrap() - ea * eb).abs() < 1e-9);
            assert!((a.scale(-2.5).eval(&x).unwrap() + 2.5 * ea).abs() < 1e-10);
        }
    }

    #[test]
    fn product_degree_adds() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..40 {
            let a = random_poly(&mut rng, 2, 3);
            let b = random_poly(&mut rng, 2, 3);
            if a.is_zero() || b.is_zero() {
                continue;
            }
            let p = a.mul(&b).unwrap();
            assert_eq!(p.degree(), Some(a.degree().unwrap() + b.degree().unwrap()));
        }
    }

    #[test]
    fn cancellation_yields_canonical_zero() {
        let c = circle();
        let z = c.sub(&c).unwrap();
        assert!(z.is_zero());
        assert_eq!(z.degree(), None);
        assert_eq!(format!("{z}"), "0");
    }

    #[test]
    fn substitute_agrees_with_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let p = random_poly(&mut rng, 2, 3);
            let q = random_poly(&mut rng, 2, 2);
            let s = p.substitute(1, &q).unwrap();
            let x = random_point(&mut rng, 2);
            let mut xq = x.clone();
            xq[1] = q.eval(&x).unwrap();
            assert!((s.eval(&x).unwrap() - p.eval(&xq).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn remap_embeds_into_larger_space() {
        let c = circle();
        let r = c.remap_vars(5, &[2, 4]).unwrap();
        let x = dvector![9.0, 9.0, 0.6, 9.0, 0.8];
        assert!(r.eval(&x).unwrap().abs() < TOL);
    }

    #[test]
    fn parse_rejects_malformed_input_with_offending_token() {
        let nv = 2;
        for (input, needle) in [
            ("1*x1^2+oops", "oops"),
            ("x1^2", "x1^2"),
            ("1*x3^1", "x3"),
            ("1*X1^1", "X1"),
            ("1*x1", "<end>"),
            ("1*x1^", "<end>"),
            ("", ""),
            ("1*x1^2 2*x2^1", "2"),
        ] {
            match Polynomial::parse(input, nv) {
                Err(PolyError::Parse { token, .. }) => {
                    assert!(token.contains(needle), "input {input:?}: token {token:?}")
                }
                other => panic!("input {input:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn parse_accepts_signs_whitespace_and_exponent_notation() {
        let p = Polynomial::parse(" -1.5e-1*x1^2 + 2*x2^3 - 1 ", 2).unwrap();
        let x = dvector![2.0, 1.0];
        assert!((p.eval(&x).unwrap() - (-0.15 * 4.0 + 2.0 - 1.0)).abs() < TOL);
    }

    #[test]
    fn display_round_trips_through_parse() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..30 {
            let p = random_poly(&mut rng, 3, 4);
            let q = Polynomial::parse(&p.to_string(), 3);
            match q {
                Ok(q) => assert_eq!(p, q),
                Err(e) => panic!("failed to reparse {p}: {e}"),
            }
        }
    }
}
