//! Sparse multivariate polynomials with real coefficients.
//!
//! Polynomials are the test functions on which the generator acts. Terms are
//! stored in a `BTreeMap` keyed by [`MultiIndex`], whose ordering is
//! graded-lexicographic: lower total degree first, and within one degree the
//! exponent vectors in descending lexicographic order (`x1^2, x1 x2, x2^2`).
//! The same order defines the monomial basis used by every matrix in the crate.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Exponent vector `(α_1, ..., α_d)` of a monomial `x^α`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    /// The unit multi-index `e_i`.
    pub fn unit(dim: usize, i: usize) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        MultiIndex(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total degree `|α|`.
    pub fn order(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    pub fn checked_add(&self, other: &MultiIndex) -> Result<MultiIndex> {
        check_dim(self.dim(), other.dim())?;
        Ok(MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    /// `self - other`, or `None` when some component would go negative.
    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        if self.dim() != other.dim() {
            return None;
        }
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.checked_sub(*b))
            .collect::<Option<Vec<_>>>()
            .map(MultiIndex)
    }

    /// Componentwise `self <= other`.
    pub fn divides(&self, other: &MultiIndex) -> bool {
        self.dim() == other.dim() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// `α! = Π α_i!`
    pub fn factorial(&self) -> f64 {
        self.0
            .iter()
            .map(|&a| (1..=a).map(f64::from).product::<f64>())
            .product()
    }

    /// All `β` with `β <= self` componentwise, in graded order.
    pub fn sub_indices(&self) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex::zero(self.dim())];
        for (i, &a) in self.0.iter().enumerate() {
            let mut next = Vec::with_capacity(out.len() * (a as usize + 1));
            for base in &out {
                for e in 0..=a {
                    let mut m = base.clone();
                    m.0[i] = e;
                    next.push(m);
                }
            }
            out = next;
        }
        out.sort();
        out
    }

    /// Renders as `x1^2 x3`; the zero index renders as `1`.
    pub fn render(&self) -> String {
        let factors: Vec<String> = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0)
            .map(|(i, &a)| {
                if a == 1 {
                    format!("x{}", i + 1)
                } else {
                    format!("x{}^{}", i + 1, a)
                }
            })
            .collect();
        if factors.is_empty() {
            "1".to_string()
        } else {
            factors.join(" ")
        }
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order().cmp(&other.order()).then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|a| a.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// All multi-indices of order `<= max_degree` in `dim` variables, graded-lex.
/// The length is `C(dim + max_degree, max_degree)`.
pub fn monomial_basis(dim: usize, max_degree: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for degree in 0..=max_degree {
        let mut current = vec![0u32; dim];
        compositions(degree as u32, 0, &mut current, &mut out);
    }
    out
}

// Compositions of `remaining` into the tail of `current`, with the leading
// exponent running downwards so that the output is descending-lex.
fn compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(MultiIndex(current.clone()));
        return;
    }
    if current.is_empty() {
        if remaining == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        compositions(remaining - e, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// Sparse polynomial in `dim` variables. No stored coefficient is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Polynomial {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::monomial(MultiIndex::zero(dim), c)
    }

    pub fn monomial(alpha: MultiIndex, c: f64) -> Self {
        let dim = alpha.dim();
        let mut terms = BTreeMap::new();
        if c != 0.0 {
            terms.insert(alpha, c);
        }
        Polynomial { dim, terms }
    }

    /// The coordinate function `x_{i+1}` (zero-based `i`).
    pub fn variable(dim: usize, i: usize) -> Self {
        Self::monomial(MultiIndex::unit(dim, i), 1.0)
    }

    /// Builds a polynomial from `(exponents, coefficient)` pairs, collecting
    /// repeated monomials.
    pub fn from_terms<I>(dim: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (MultiIndex, f64)>,
    {
        let mut p = Polynomial::zero(dim);
        for (alpha, c) in terms {
            check_dim(dim, alpha.dim())?;
            p.add_term(alpha, c);
        }
        Ok(p)
    }

    fn add_term(&mut self, alpha: MultiIndex, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(alpha);
        match entry {
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let v = *o.get() + c;
                if v == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = v;
                }
            }
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Maximum total degree of the stored terms; 0 for the zero polynomial.
    pub fn degree(&self) -> usize {
        self.terms.keys().next_back().map_or(0, MultiIndex::order)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, alpha: &MultiIndex) -> f64 {
        self.terms.get(alpha).copied().unwrap_or(0.0)
    }

    /// Terms in graded-lex order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(k, &v)| (k, v))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Largest absolute coefficient.
    pub fn coefficient_norm(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial> {
        check_dim(self.dim, other.dim)?;
        let mut out = self.clone();
        for (alpha, &c) in &other.terms {
            out.add_term(alpha.clone(), c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        if s == 0.0 {
            return Polynomial::zero(self.dim);
        }
        let terms = self
            .terms
            .iter()
            .map(|(k, &v)| (k.clone(), v * s))
            .filter(|(_, v)| *v != 0.0)
            .collect();
        Polynomial { dim: self.dim, terms }
    }

    pub fn multiply(&self, other: &Polynomial) -> Result<Polynomial> {
        check_dim(self.dim, other.dim)?;
        let mut out = Polynomial::zero(self.dim);
        for (a, &ca) in &self.terms {
            for (b, &cb) in &other.terms {
                out.add_term(a.checked_add(b)?, ca * cb);
            }
        }
        Ok(out)
    }

    /// Mixed partial derivative `∂^α`.
    pub fn differentiate(&self, alpha: &MultiIndex) -> Polynomial {
        assert_eq!(alpha.dim(), self.dim, "derivative index dimension");
        let mut out = Polynomial::zero(self.dim);
        for (beta, &c) in &self.terms {
            let Some(rest) = beta.checked_sub(alpha) else {
                continue;
            };
            // product of falling factorials b (b-1) ... (b-a+1), exact in f64
            let mut factor = 1.0;
            for (&b, &a) in beta.0.iter().zip(&alpha.0) {
                for j in 0..a {
                    factor *= f64::from(b - j);
                }
            }
            out.add_term(rest, c * factor);
        }
        out
    }

    /// `∂/∂x_{i+1}`.
    pub fn partial(&self, i: usize) -> Polynomial {
        self.differentiate(&MultiIndex::unit(self.dim, i))
    }

    /// Evaluates at `x` using per-coordinate power tables.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim, "evaluation point dimension");
        let degree = self.degree();
        let powers: Vec<Vec<f64>> = x
            .iter()
            .map(|&xi| {
                let mut p = Vec::with_capacity(degree + 1);
                let mut acc = 1.0;
                for _ in 0..=degree {
                    p.push(acc);
                    acc *= xi;
                }
                p
            })
            .collect();
        // Highest degree first keeps the summation order stable.
        self.terms
            .iter()
            .rev()
            .map(|(alpha, &c)| {
                alpha
                    .0
                    .iter()
                    .enumerate()
                    .fold(c, |acc, (i, &a)| acc * powers[i][a as usize])
            })
            .sum()
    }

    /// Parses the textual form, e.g. `2.5*x1^3*x2 - x1 + 1` or the rendered
    /// form `2.5 * x1^3 x2 - 1 * x1 + 1`. A bare `x` means `x1` when `dim == 1`.
    pub fn parse(input: &str, dim: usize) -> Result<Polynomial> {
        parse::parse(input, dim)
    }
}

impl fmt::Display for Polynomial {
    /// `c * x1^a1 x2^a2 ...` terms, highest degree first; zero renders as `0`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (n, (alpha, &c)) in self.terms.iter().rev().enumerate() {
            let magnitude = if n == 0 {
                if c < 0.0 {
                    write!(f, "-")?;
                }
                c.abs()
            } else {
                write!(f, " {} ", if c < 0.0 { '-' } else { '+' })?;
                c.abs()
            };
            if alpha.is_zero() {
                write!(f, "{magnitude}")?;
            } else {
                write!(f, "{magnitude} * {}", alpha.render())?;
            }
        }
        Ok(())
    }
}

/// Indexed monomial basis of the degree-`<= N` polynomials in `d` variables.
#[derive(Clone, Debug)]
pub struct MonomialBasis {
    dim: usize,
    max_degree: usize,
    indices: Vec<MultiIndex>,
    position: HashMap<MultiIndex, usize>,
}

impl MonomialBasis {
    pub fn new(dim: usize, max_degree: usize) -> Self {
        let indices = monomial_basis(dim, max_degree);
        let position = indices.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        MonomialBasis {
            dim,
            max_degree,
            indices,
            position,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.position.get(alpha).copied()
    }

    /// Coefficient vector of `p` in this basis.
    pub fn encode(&self, p: &Polynomial) -> Result<DVector<f64>> {
        check_dim(self.dim, p.dim())?;
        if p.degree() > self.max_degree {
            return Err(Error::DegreeOverflow {
                degree: p.degree(),
                max: self.max_degree,
            });
        }
        let mut v = DVector::zeros(self.len());
        for (alpha, c) in p.terms() {
            v[self.position[alpha]] = c;
        }
        Ok(v)
    }

    pub fn decode(&self, v: &DVector<f64>) -> Polynomial {
        assert_eq!(v.len(), self.len(), "coefficient vector length");
        let mut p = Polynomial::zero(self.dim);
        for (alpha, &c) in self.indices.iter().zip(v.iter()) {
            p.add_term(alpha.clone(), c);
        }
        p
    }

    /// Row vector `(x^α)_α` so that `row · v` evaluates the decoded polynomial.
    pub fn evaluation_row(&self, x: &[f64]) -> DVector<f64> {
        assert_eq!(x.len(), self.dim, "evaluation point dimension");
        DVector::from_iterator(
            self.len(),
            self.indices.iter().map(|alpha| {
                alpha
                    .exponents()
                    .iter()
                    .zip(x)
                    .map(|(&a, &xi)| xi.powi(a as i32))
                    .product::<f64>()
            }),
        )
    }
}

mod parse {
    use super::{MultiIndex, Polynomial};
    use crate::error::{Error, Result};

    #[derive(Debug, Clone, PartialEq)]
    enum Token {
        Number(f64),
        Var(usize),
        Caret,
        Star,
        Plus,
        Minus,
    }

    fn syntax(msg: impl Into<String>) -> Error {
        Error::Syntax(msg.into())
    }

    fn tokenize(input: &str, dim: usize) -> Result<Vec<Token>> {
        let chars: Vec<char> = input.chars().collect();
        let mut tokens = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            match c {
                c if c.is_whitespace() => i += 1,
                '^' => {
                    tokens.push(Token::Caret);
                    i += 1;
                }
                '*' => {
                    tokens.push(Token::Star);
                    i += 1;
                }
                '+' => {
                    tokens.push(Token::Plus);
                    i += 1;
                }
                '-' => {
                    tokens.push(Token::Minus);
                    i += 1;
                }
                'x' => {
                    let start = i + 1;
                    let mut end = start;
                    while end < chars.len() && chars[end].is_ascii_digit() {
                        end += 1;
                    }
                    let var = if end == start {
                        if dim != 1 {
                            return Err(syntax("bare `x` is only allowed in one dimension"));
                        }
                        1
                    } else {
                        chars[start..end]
                            .iter()
                            .collect::<String>()
                            .parse::<usize>()
                            .map_err(|e| syntax(e.to_string()))?
                    };
                    if var == 0 || var > dim {
                        return Err(syntax(format!("variable x{var} outside x1..x{dim}")));
                    }
                    tokens.push(Token::Var(var - 1));
                    i = end;
                }
                c if c.is_ascii_digit() || c == '.' => {
                    let start = i;
                    let mut end = i;
                    while end < chars.len() {
                        let ch = chars[end];
                        let exp_sign = (ch == '-' || ch == '+') && end > start && matches!(chars[end - 1], 'e' | 'E');
                        if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' || exp_sign {
                            end += 1;
                        } else {
                            break;
                        }
                    }
                    let text: String = chars[start..end].iter().collect();
                    let value = text
                        .parse::<f64>()
                        .map_err(|_| syntax(format!("bad number `{text}`")))?;
                    tokens.push(Token::Number(value));
                    i = end;
                }
                other => return Err(syntax(format!("unexpected character `{other}`"))),
            }
        }
        Ok(tokens)
    }

    pub(super) fn parse(input: &str, dim: usize) -> Result<Polynomial> {
        let tokens = tokenize(input, dim)?;
        if tokens.is_empty() {
            return Err(syntax("empty polynomial"));
        }
        let mut poly = Polynomial::zero(dim);
        let mut pos = 0;
        let mut first = true;
        while pos < tokens.len() {
            let mut sign = 1.0;
            match tokens[pos] {
                Token::Plus => pos += 1,
                Token::Minus => {
                    sign = -1.0;
                    pos += 1;
                }
                _ if first => {}
                _ => return Err(syntax("expected `+` or `-` between terms")),
            }
            first = false;
            let mut coeff = sign;
            let mut exps = vec![0u32; dim];
            let mut factors = 0;
            loop {
                match tokens.get(pos) {
                    Some(Token::Number(v)) => {
                        coeff *= v;
                        pos += 1;
                    }
                    Some(Token::Var(k)) => {
                        let k = *k;
                        pos += 1;
                        let mut e = 1u32;
                        if tokens.get(pos) == Some(&Token::Caret) {
                            pos += 1;
                            match tokens.get(pos) {
                                Some(Token::Number(v)) if v.fract() == 0.0 && *v >= 0.0 => {
                                    e = *v as u32;
                                    pos += 1;
                                }
                                _ => return Err(syntax("exponent must be a nonnegative integer")),
                            }
                        }
                        exps[k] += e;
                    }
                    _ => return Err(syntax("expected a number or a variable")),
                }
                factors += 1;
                match tokens.get(pos) {
                    Some(Token::Star) => pos += 1,
                    Some(Token::Number(_)) | Some(Token::Var(_)) => {}
                    _ => break,
                }
            }
            debug_assert!(factors > 0);
            poly.add_term(MultiIndex::new(exps), coeff);
        }
        Ok(poly)
    }
}
