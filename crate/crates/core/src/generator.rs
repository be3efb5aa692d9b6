//! The extended generator of an affine model acting on polynomials.
//!
//! On polynomials the generator decomposes as
//! `A f = A^(0) f + Σ_i x_i A^(i) f`, where every slice `A^(i)` is a Lévy-type
//! operator with constant coefficients:
//!
//! ```text
//! A^(i) f = <β_i, ∇f> + ½ Tr(α_i D²f) + Σ_{|α|≥1} m_{i,α} ∂^α f / α!
//! ```
//!
//! The jump integral is replaced by its Taylor series, which terminates for
//! polynomial `f` and so needs only the kernel's moments. A compensated kernel
//! starts the series at `|α| = 2`.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{validate_admissibility, AffineModel, JumpKernel};
use crate::polyalg::{monomial_basis, MonomialBasis, MultiIndex, Polynomial};
use crate::semigroup::MomentTable;

/// Selects one Lévy-type slice of the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slice {
    /// The state-independent part `(b, a, M_0)`.
    Constant,
    /// The part multiplied by `x_{k+1}` (zero-based `k`).
    Coordinate(usize),
}

fn ensure_admissible(model: &AffineModel) -> Result<()> {
    let violations = validate_admissibility(model);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Inadmissible(violations))
    }
}

fn check_input(model: &AffineModel, f: &Polynomial) -> Result<()> {
    if f.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: f.dim(),
        });
    }
    model.check_degree(f.degree())
}

/// `<drift, ∇f> + ½ Tr(diffusion D²f) + jump Taylor terms`.
fn levy_type(f: &Polynomial, drift: &[f64], diffusion: &DMatrix<f64>, kernel: Option<&JumpKernel>) -> Polynomial {
    let d = f.dim();
    // Uncompensated first moments move into the drift; the jump series then
    // always starts at order two.
    let mut drift = drift.to_vec();
    if let Some(k) = kernel.filter(|k| !k.compensated) {
        for (l, v) in drift.iter_mut().enumerate() {
            *v += k.moment(&MultiIndex::unit(d, l)).unwrap_or(0.0);
        }
    }

    let mut terms: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    let mut accumulate = |p: Polynomial, s: f64| {
        if s == 0.0 {
            return;
        }
        for (alpha, c) in p.terms() {
            *terms.entry(alpha.clone()).or_insert(0.0) += s * c;
        }
    };

    let grads: Vec<Polynomial> = (0..d).map(|k| f.partial(k)).collect();
    for (k, g) in grads.iter().enumerate() {
        accumulate(g.clone(), drift[k]);
    }
    for k in 0..d {
        for l in 0..d {
            let c = diffusion[(k, l)];
            if c != 0.0 {
                accumulate(grads[k].partial(l), 0.5 * c);
            }
        }
    }
    if let Some(k) = kernel {
        for alpha in monomial_basis(d, f.degree()) {
            if alpha.order() < 2 {
                continue;
            }
            let m = k.moment(&alpha).unwrap_or(0.0);
            if m != 0.0 {
                accumulate(f.differentiate(&alpha), m / alpha.factorial());
            }
        }
    }
    Polynomial::from_terms(d, terms).expect("dimensions agree")
}

fn slice_unchecked(model: &AffineModel, slice: Slice, f: &Polynomial) -> Polynomial {
    match slice {
        Slice::Constant => levy_type(f, &model.b, &model.a, model.jump_kernel(0)),
        Slice::Coordinate(k) => {
            let beta: Vec<f64> = model.drift.column(k).iter().copied().collect();
            let zero;
            let diffusion = if k < model.m {
                &model.alpha[k]
            } else {
                zero = DMatrix::zeros(model.dim(), model.dim());
                &zero
            };
            levy_type(f, &beta, diffusion, model.jump_kernel(k + 1))
        }
    }
}

fn generator_unchecked(model: &AffineModel, f: &Polynomial) -> Polynomial {
    let mut out = slice_unchecked(model, Slice::Constant, f);
    for k in 0..model.dim() {
        let s = slice_unchecked(model, Slice::Coordinate(k), f);
        if s.is_zero() {
            continue;
        }
        let xs = s
            .multiply(&Polynomial::variable(model.dim(), k))
            .expect("dimensions agree");
        out = out.add(&xs).expect("dimensions agree");
    }
    out
}

/// The Lévy-type slice `A^(i) f` without the `x_i` factor.
pub fn apply_generator_slice(model: &AffineModel, slice: Slice, f: &Polynomial) -> Result<Polynomial> {
    ensure_admissible(model)?;
    check_input(model, f)?;
    if let Slice::Coordinate(k) = slice {
        if k >= model.dim() {
            return Err(Error::InvalidArgument(format!(
                "slice coordinate {k} outside 0..{}",
                model.dim()
            )));
        }
    }
    Ok(slice_unchecked(model, slice, f))
}

/// `A f`; the result has degree at most `deg f`.
pub fn apply_generator(model: &AffineModel, f: &Polynomial) -> Result<Polynomial> {
    ensure_admissible(model)?;
    check_input(model, f)?;
    Ok(generator_unchecked(model, f))
}

/// `A^k f`.
pub fn generator_power(model: &AffineModel, f: &Polynomial, k: usize) -> Result<Polynomial> {
    ensure_admissible(model)?;
    check_input(model, f)?;
    let mut out = f.clone();
    for _ in 0..k {
        if out.is_zero() {
            break;
        }
        out = generator_unchecked(model, &out);
    }
    Ok(out)
}

/// Matrix of the generator on the degree-`<= N` polynomials.
#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    basis: MonomialBasis,
    entries: DMatrix<f64>,
    model_hash: String,
    linear: bool,
}

impl GeneratorMatrix {
    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn max_degree(&self) -> usize {
        self.basis.max_degree()
    }

    pub fn dim_basis(&self) -> usize {
        self.basis.len()
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    /// True when the originating model has zero constant characteristics.
    pub fn is_linear(&self) -> bool {
        self.linear
    }

    pub fn encode(&self, f: &Polynomial) -> Result<DVector<f64>> {
        self.basis.encode(f)
    }

    pub fn decode(&self, v: &DVector<f64>) -> Polynomial {
        self.basis.decode(v)
    }

    /// `A f` computed through the matrix.
    pub fn apply(&self, f: &Polynomial) -> Result<Polynomial> {
        let v = self.encode(f)?;
        Ok(self.decode(&(&self.entries * v)))
    }

    /// Row-major CSV with the rendered basis monomials as header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.basis.indices().iter().map(MultiIndex::render))?;
        for i in 0..self.entries.nrows() {
            w.write_record((0..self.entries.ncols()).map(|j| format!("{:.16e}", self.entries[(i, j)])))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Column `j` is the coefficient vector of `A` applied to the `j`-th basis monomial.
pub fn generator_matrix(model: &AffineModel, max_degree: usize) -> Result<GeneratorMatrix> {
    ensure_admissible(model)?;
    model.check_degree(max_degree)?;
    let basis = MonomialBasis::new(model.dim(), max_degree);
    let n = basis.len();
    let mut entries = DMatrix::zeros(n, n);
    for (j, alpha) in basis.indices().iter().enumerate() {
        let image = generator_unchecked(model, &Polynomial::monomial(alpha.clone(), 1.0));
        let col = basis.encode(&image)?;
        entries.set_column(j, &col);
    }
    Ok(GeneratorMatrix {
        basis,
        entries,
        model_hash: model.fingerprint(),
        linear: !model.has_constant_part(),
    })
}

// ---------------------------------------------------------------------------
// Cumulants and Lévy generators

/// Largest order accepted by the cumulant recursion.
pub const MAX_CUMULANT_ORDER: usize = 16;

/// Joint cumulants `κ_α` for `1 <= |α| <= max_order`.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulantTable {
    pub dim: usize,
    pub max_order: usize,
    pub values: BTreeMap<MultiIndex, f64>,
}

impl CumulantTable {
    pub fn get(&self, alpha: &MultiIndex) -> f64 {
        self.values.get(alpha).copied().unwrap_or(0.0)
    }
}

fn binomial_table(n: usize) -> Vec<Vec<f64>> {
    let mut t = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..=n {
        t[i][0] = 1.0;
        for j in 1..=i {
            t[i][j] = t[i - 1][j - 1] + if j < i { t[i - 1][j] } else { 0.0 };
        }
    }
    t
}

fn multi_binomial(table: &[Vec<f64>], top: &MultiIndex, bottom: &MultiIndex) -> f64 {
    top.exponents()
        .iter()
        .zip(bottom.exponents())
        .map(|(&t, &b)| table[t as usize][b as usize])
        .product()
}

// Splits α = γ + e_i at its first nonzero coordinate.
fn split_first(alpha: &MultiIndex) -> (MultiIndex, MultiIndex) {
    let i = alpha
        .exponents()
        .iter()
        .position(|&a| a > 0)
        .expect("nonzero multi-index");
    let e = MultiIndex::unit(alpha.dim(), i);
    (alpha.checked_sub(&e).expect("positive coordinate"), e)
}

fn check_order(max_order: usize) -> Result<()> {
    if max_order > MAX_CUMULANT_ORDER {
        Err(Error::InvalidArgument(format!(
            "cumulant order {max_order} exceeds {MAX_CUMULANT_ORDER}"
        )))
    } else {
        Ok(())
    }
}

/// Cumulants from raw moments via `m_α = Σ_{β<=γ} C(γ,β) κ_{β+e} m_{γ-β}`
/// with `α = γ + e`, solved for `κ_α`.
pub fn moments_to_cumulants(moments: &MomentTable) -> Result<CumulantTable> {
    check_order(moments.max_order)?;
    let d = moments.dim;
    let m0 = moments
        .get(&MultiIndex::zero(d))
        .ok_or_else(|| Error::MissingMoment(MultiIndex::zero(d).to_string()))?;
    if (m0 - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("order-0 moment is {m0}, expected 1")));
    }
    let binom = binomial_table(moments.max_order);
    let mut kappa: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    for alpha in monomial_basis(d, moments.max_order).into_iter().skip(1) {
        let m_alpha = moments
            .get(&alpha)
            .ok_or_else(|| Error::MissingMoment(alpha.to_string()))?;
        let (gamma, e) = split_first(&alpha);
        let mut sum = 0.0;
        for beta in gamma.sub_indices() {
            if beta == gamma {
                continue;
            }
            let k = kappa[&beta.checked_add(&e)?];
            let rest = gamma.checked_sub(&beta).expect("β <= γ");
            let m = moments
                .get(&rest)
                .ok_or_else(|| Error::MissingMoment(rest.to_string()))?;
            sum += multi_binomial(&binom, &gamma, &beta) * k * m;
        }
        kappa.insert(alpha, m_alpha - sum);
    }
    Ok(CumulantTable {
        dim: d,
        max_order: moments.max_order,
        values: kappa,
    })
}

/// Raw moments from cumulants; inverse of [`moments_to_cumulants`].
pub fn cumulants_to_moments(cumulants: &CumulantTable, t: f64) -> Result<MomentTable> {
    check_order(cumulants.max_order)?;
    let d = cumulants.dim;
    let binom = binomial_table(cumulants.max_order);
    let mut values = BTreeMap::new();
    values.insert(MultiIndex::zero(d), 1.0);
    for alpha in monomial_basis(d, cumulants.max_order).into_iter().skip(1) {
        let (gamma, e) = split_first(&alpha);
        let mut sum = 0.0;
        for beta in gamma.sub_indices() {
            let k = cumulants.get(&beta.checked_add(&e)?);
            let rest = gamma.checked_sub(&beta).expect("β <= γ");
            sum += multi_binomial(&binom, &gamma, &beta) * k * values[&rest];
        }
        values.insert(alpha, sum);
    }
    Ok(MomentTable {
        dim: d,
        max_order: cumulants.max_order,
        t,
        base_point: None,
        values,
    })
}

/// `L f = Σ_{1<=|α|<=deg f} κ_α ∂^α f / α!`, the generator of the Lévy process
/// whose unit-time cumulants are `κ`.
pub fn levy_generator_apply(cumulants: &CumulantTable, f: &Polynomial) -> Result<Polynomial> {
    if f.dim() != cumulants.dim {
        return Err(Error::DimensionMismatch {
            expected: cumulants.dim,
            found: f.dim(),
        });
    }
    if f.degree() > cumulants.max_order {
        return Err(Error::CumulantOrder {
            needed: f.degree(),
            available: cumulants.max_order,
        });
    }
    let mut out = Polynomial::zero(f.dim());
    for alpha in monomial_basis(f.dim(), f.degree()).into_iter().skip(1) {
        let k = cumulants.get(&alpha);
        if k != 0.0 {
            out = out.add(&f.differentiate(&alpha).scale(k / alpha.factorial()))?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semigroup::exact_semigroup;

    fn x(dim: usize, k: usize) -> Polynomial {
        Polynomial::variable(dim, k)
    }

    fn poly(s: &str, dim: usize) -> Polynomial {
        Polynomial::parse(s, dim).unwrap()
    }

    fn assert_close(a: &Polynomial, b: &Polynomial, tol: f64) {
        let diff = a.sub(b).unwrap();
        assert!(diff.coefficient_norm() <= tol, "{a} vs {b}");
    }

    fn cir() -> AffineModel {
        AffineModel::cir(0.1, -0.5, 0.09)
    }

    fn two_factor() -> AffineModel {
        let mut model = AffineModel::zero(1, 1);
        model.b = vec![0.2, 0.1];
        model.drift = DMatrix::from_row_slice(2, 2, &[-0.5, 0.0, 0.3, -1.0]);
        model.alpha[0] = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]);
        model.a[(1, 1)] = 0.05;
        model
    }

    fn jump_model() -> AffineModel {
        let json = r#"{"m":1,"n":1,"b":[0.1,0.0],"B":[[-0.5,0.0],[0.2,-1.0]],
            "a":[[0,0],[0,0.3]],"alpha":[[[0.04,0.01],[0.01,0.09]]],
            "jumps":[
              {"index":0,"max_degree":6,"compensated":true,"moments":[]},
              {"index":1,"max_degree":6,"compensated":false,"moments":[]}]}"#;
        let mut model = crate::model::load_model(json).unwrap();
        // exponential(mean 0.5) jumps in x1 independent of normal(0, 0.3) in x2
        for kernel in &mut model.jumps {
            let rate = if kernel.index == 0 { 0.4 } else { 1.5 };
            for alpha in monomial_basis(2, 6).into_iter().skip(1) {
                let [p, q] = [alpha.exponents()[0], alpha.exponents()[1]];
                let exp_moment = (1..=p).map(f64::from).product::<f64>() * 0.5f64.powi(p as i32);
                let normal_moment = if q % 2 == 1 {
                    0.0
                } else {
                    (1..q).step_by(2).map(f64::from).product::<f64>() * 0.3f64.powi(q as i32)
                };
                kernel.moments.insert(alpha, rate * exp_moment * normal_moment);
            }
        }
        assert!(validate_admissibility(&model).is_empty());
        model
    }

    #[test]
    fn cir_examples() {
        let model = cir();
        assert_close(
            &apply_generator(&model, &x(1, 0)).unwrap(),
            &poly("0.1 - 0.5 x", 1),
            1e-15,
        );
        assert_close(
            &apply_generator(&model, &poly("x^2", 1)).unwrap(),
            &poly("-x^2 + 0.29 x", 1),
            1e-15,
        );
        assert!(apply_generator(&model, &Polynomial::constant(1, 3.0))
            .unwrap()
            .is_zero());
    }

    // Generator by the semigroup: (P_h f - f)/h with Richardson extrapolation.
    #[test]
    fn cir_generator_matches_finite_difference_of_semigroup() {
        let model = cir();
        let g = generator_matrix(&model, 2).unwrap();
        let f = poly("x^2", 1);
        let expected = apply_generator(&model, &f).unwrap();
        for &x0 in &[0.0, 0.5, 1.0, 3.0] {
            let fd = |h: f64| (exact_semigroup(&g, &f, h).unwrap().evaluate(&[x0]) - f.evaluate(&[x0])) / h;
            let (h, k) = (1e-3, 2.0);
            let extrapolated = (k * fd(h / k) - fd(h)) / (k - 1.0);
            assert!((extrapolated - expected.evaluate(&[x0])).abs() < 1e-6);
        }
    }

    #[test]
    fn slices_reassemble_the_generator() {
        let model = cir();
        let f = poly("x^2", 1);
        let s1 = apply_generator_slice(&model, Slice::Coordinate(0), &f).unwrap();
        assert_close(&s1, &poly("-x + 0.09", 1), 1e-15);
        let s0 = apply_generator_slice(&model, Slice::Constant, &f).unwrap();
        let total = s0.add(&s1.multiply(&x(1, 0)).unwrap()).unwrap();
        assert_close(&total, &poly("-x^2 + 0.29 x", 1), 1e-15);

        let zero = AffineModel::zero(1, 1);
        assert!(apply_generator_slice(&zero, Slice::Coordinate(1), &poly("x1^2 x2", 2))
            .unwrap()
            .is_zero());
        for slice in [Slice::Constant, Slice::Coordinate(0)] {
            assert!(apply_generator_slice(&model, slice, &Polynomial::constant(1, 2.0))
                .unwrap()
                .is_zero());
        }
        assert!(apply_generator_slice(&model, Slice::Coordinate(1), &f).is_err());
    }

    #[test]
    fn decomposition_identity_up_to_degree_six() {
        for model in [cir(), two_factor(), jump_model()] {
            let d = model.dim();
            for alpha in monomial_basis(d, 6) {
                let f = Polynomial::monomial(alpha, 1.0);
                let mut sum = apply_generator_slice(&model, Slice::Constant, &f).unwrap();
                for k in 0..d {
                    let s = apply_generator_slice(&model, Slice::Coordinate(k), &f).unwrap();
                    sum = sum.add(&s.multiply(&x(d, k)).unwrap()).unwrap();
                }
                assert_close(&sum, &apply_generator(&model, &f).unwrap(), 1e-13);
            }
        }
    }

    #[test]
    fn linearity_and_degree() {
        let model = jump_model();
        let f = poly("x1^3 - 2 x1 x2 + 0.5", 2);
        let g = poly("x2^4 + x1^2 x2", 2);
        let lhs = apply_generator(&model, &f.scale(2.0).add(&g.scale(-3.0)).unwrap()).unwrap();
        let rhs = apply_generator(&model, &f)
            .unwrap()
            .scale(2.0)
            .add(&apply_generator(&model, &g).unwrap().scale(-3.0))
            .unwrap();
        assert_close(&lhs, &rhs, 1e-12);
        for alpha in monomial_basis(2, 6) {
            let f = Polynomial::monomial(alpha.clone(), 1.0);
            assert!(apply_generator(&model, &f).unwrap().degree() <= alpha.order());
        }
    }

    #[test]
    fn jump_terms_match_direct_taylor_expansion() {
        // Single constant kernel, compensated=false: A f = ∫ (f(x+ξ) - f(x)) M(dξ).
        // For f = x^3 and exponential(mean 0.5) jumps at rate 0.4:
        // E[(x+ξ)^3 - x^3] = 3x^2 E ξ + 3x E ξ^2 + E ξ^3.
        let mut model = AffineModel::zero(1, 0);
        let mut moments = BTreeMap::new();
        let rate = 0.4;
        for p in 1..=3u32 {
            let m = rate * (1..=p).map(f64::from).product::<f64>() * 0.5f64.powi(p as i32);
            moments.insert(MultiIndex::new(vec![p]), m);
        }
        model.jumps.push(JumpKernel {
            index: 0,
            max_degree: 3,
            moments,
            compensated: false,
        });
        let af = apply_generator(&model, &poly("x^3", 1)).unwrap();
        // 3·0.4·0.5 = 0.6, 3·0.4·0.5 = 0.6, 0.4·0.75 = 0.3
        let expected = poly("0.6 x^2 + 0.6 x + 0.3", 1);
        assert_close(&af, &expected, 1e-15);

        model.jumps[0].compensated = true;
        let af = apply_generator(&model, &poly("x^3", 1)).unwrap();
        assert_close(&af, &poly("0.6 x + 0.3", 1), 1e-15);
    }

    #[test]
    fn degree_beyond_jump_table_is_refused() {
        let model = jump_model();
        assert!(matches!(
            apply_generator(&model, &poly("x1^7", 2)),
            Err(Error::DegreeOverflow { degree: 7, max: 6 })
        ));
        assert!(generator_matrix(&model, 7).is_err());
    }

    #[test]
    fn inadmissible_models_are_refused() {
        let model = AffineModel::cir(-0.1, -0.5, 0.09);
        assert!(matches!(apply_generator(&model, &x(1, 0)), Err(Error::Inadmissible(_))));
    }

    #[test]
    fn powers() {
        let model = cir();
        let f = x(1, 0);
        assert_eq!(generator_power(&model, &f, 0).unwrap(), f);
        let a2 = generator_power(&model, &f, 2).unwrap();
        assert_close(&a2, &poly("-0.05 + 0.25 x", 1), 1e-15);
        let g = generator_matrix(&model, 1).unwrap();
        let v = g.encode(&f).unwrap();
        let gv = g.entries() * (g.entries() * v);
        assert_close(&g.decode(&gv), &a2, 1e-15);

        let mut drift_only = AffineModel::zero(0, 1);
        drift_only.b[0] = 1.0;
        assert!(generator_power(&drift_only, &f, 2).unwrap().is_zero());
    }

    #[test]
    fn matrix_examples() {
        let ou = AffineModel::ornstein_uhlenbeck(0.0, -1.0, 1.0);
        let g = generator_matrix(&ou, 2).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, -2.0]);
        assert_eq!(g.entries(), &expected);

        let zero = generator_matrix(&AffineModel::zero(1, 1), 3).unwrap();
        assert!(zero.entries().iter().all(|&v| v == 0.0));

        let g = generator_matrix(&cir(), 1).unwrap();
        assert_eq!(g.entries(), &DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.0, -0.5]));
    }

    #[test]
    fn matrix_columns_match_apply_generator() {
        for model in [cir(), two_factor(), jump_model()] {
            let g = generator_matrix(&model, 5).unwrap();
            for alpha in g.basis().indices() {
                let p = Polynomial::monomial(alpha.clone(), 1.0);
                let direct = g.encode(&apply_generator(&model, &p).unwrap()).unwrap();
                let via = g.entries() * g.encode(&p).unwrap();
                assert!((direct - via).amax() <= 1e-14);
            }
        }
    }

    #[test]
    fn csv_export() {
        let g = generator_matrix(&AffineModel::ornstein_uhlenbeck(0.0, -1.0, 1.0), 2).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "1,x1,x1^2");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with("1.0000000000000000e0"));
    }

    #[test]
    fn growth_of_powers_is_geometric() {
        let model = cir();
        let cert = crate::semigroup::growth_constant(&model, 2).unwrap();
        let f = poly("x^3 + x", 1);
        let mut p = f.clone();
        for n in 1..=5 {
            p = apply_generator(&model, &p).unwrap();
            assert!(p.coefficient_norm() <= cert.k.powi(n) * f.coefficient_norm());
        }
    }

    fn table(dim: usize, values: &[(Vec<u32>, f64)]) -> MomentTable {
        let max_order = values
            .iter()
            .map(|(a, _)| a.iter().sum::<u32>() as usize)
            .max()
            .unwrap();
        MomentTable {
            dim,
            max_order,
            t: 0.0,
            base_point: None,
            values: values.iter().map(|(a, v)| (MultiIndex::new(a.clone()), *v)).collect(),
        }
    }

    #[test]
    fn univariate_cumulants() {
        let k = moments_to_cumulants(&table(1, &[(vec![0], 1.0), (vec![1], 0.7)])).unwrap();
        assert_eq!(k.get(&MultiIndex::new(vec![1])), 0.7);
        let k = moments_to_cumulants(&table(1, &[(vec![0], 1.0), (vec![1], 0.7), (vec![2], 2.0)])).unwrap();
        assert!((k.get(&MultiIndex::new(vec![2])) - (2.0 - 0.49)).abs() < 1e-15);
        let k = moments_to_cumulants(&table(
            1,
            &[(vec![0], 1.0), (vec![1], 1.0), (vec![2], 2.0), (vec![3], 5.0)],
        ))
        .unwrap();
        assert_eq!(k.get(&MultiIndex::new(vec![3])), 1.0);
    }

    #[test]
    fn missing_moments_are_reported() {
        let err =
            moments_to_cumulants(&table(2, &[(vec![0, 0], 1.0), (vec![1, 0], 0.1), (vec![1, 1], 0.3)])).unwrap_err();
        assert!(matches!(err, Error::MissingMoment(_)));
        let mut t = table(1, &[(vec![0], 1.0), (vec![1], 0.1)]);
        t.max_order = 17;
        assert!(moments_to_cumulants(&t).is_err());
    }

    // Truncated log of the exponential moment generating series, computed with
    // dense series arithmetic independent of the recursion.
    fn cumulants_by_series_log(moments: &MomentTable) -> BTreeMap<MultiIndex, f64> {
        let d = moments.dim;
        let order = moments.max_order;
        let idx = monomial_basis(d, order);
        // u = M(s) - 1 in the basis s^α (coefficients m_α / α!)
        let u: Vec<f64> = idx
            .iter()
            .map(|a| {
                if a.order() == 0 {
                    0.0
                } else {
                    moments.values[a] / a.factorial()
                }
            })
            .collect();
        let mul = |p: &[f64], q: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; idx.len()];
            for (i, a) in idx.iter().enumerate() {
                for (j, b) in idx.iter().enumerate() {
                    let s = a.checked_add(b).unwrap();
                    if s.order() <= order {
                        let k = idx.iter().position(|c| *c == s).unwrap();
                        out[k] += p[i] * q[j];
                    }
                }
            }
            out
        };
        let mut log = vec![0.0; idx.len()];
        let mut power = u.clone();
        for k in 1..=order {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            for (l, p) in log.iter_mut().zip(&power) {
                *l += sign * p / k as f64;
            }
            power = mul(&power, &u);
        }
        idx.iter()
            .zip(log)
            .skip(1)
            .map(|(a, c)| (a.clone(), c * a.factorial()))
            .collect()
    }

    #[test]
    fn recursion_matches_series_logarithm() {
        let m = table(1, &[(vec![0], 1.0), (vec![1], 1.0), (vec![2], 2.0), (vec![3], 5.0)]);
        let oracle = cumulants_by_series_log(&m);
        assert!((oracle[&MultiIndex::new(vec![3])] - 1.0).abs() < 1e-14);

        // bivariate: moments of (N1 + N2, N2) for independent Poissons, up to order 4
        let mut values = vec![];
        for alpha in monomial_basis(2, 4) {
            let [p, q] = [alpha.exponents()[0], alpha.exponents()[1]];
            values.push((
                alpha.exponents().to_vec(),
                1.0 + 0.3 * f64::from(p) + 0.1 * f64::from(p * q) + 0.05 * f64::from(q * q),
            ));
        }
        values[0].1 = 1.0;
        let m = table(2, &values);
        let oracle = cumulants_by_series_log(&m);
        let k = moments_to_cumulants(&m).unwrap();
        for (alpha, v) in oracle {
            assert!((k.get(&alpha) - v).abs() <= 1e-12 * v.abs().max(1.0), "{alpha}");
        }
    }

    #[test]
    fn cumulant_round_trip() {
        let mut values = vec![];
        for alpha in monomial_basis(3, 6) {
            let e = alpha.exponents();
            let v = if alpha.order() == 0 {
                1.0
            } else {
                0.2 * f64::from(e[0]) - 0.1 * f64::from(e[1]) + 0.05 * f64::from(e[2] * e[0]) + 0.3
            };
            values.push((e.to_vec(), v));
        }
        let m = table(3, &values);
        let k = moments_to_cumulants(&m).unwrap();
        let back = cumulants_to_moments(&k, 0.0).unwrap();
        for (alpha, v) in &m.values {
            assert!((back.values[alpha] - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn levy_generator_examples() {
        let normal = CumulantTable {
            dim: 1,
            max_order: 4,
            values: [(MultiIndex::new(vec![2]), 1.0)].into_iter().collect(),
        };
        assert_close(
            &levy_generator_apply(&normal, &poly("x^2", 1)).unwrap(),
            &Polynomial::constant(1, 1.0),
            0.0,
        );

        let drift = CumulantTable {
            dim: 1,
            max_order: 3,
            values: [(MultiIndex::new(vec![1]), 0.7)].into_iter().collect(),
        };
        assert_close(
            &levy_generator_apply(&drift, &poly("x^3", 1)).unwrap(),
            &poly("2.1 x^2", 1),
            1e-15,
        );

        let poisson = CumulantTable {
            dim: 1,
            max_order: 3,
            values: (1..=3).map(|p| (MultiIndex::new(vec![p]), 1.0)).collect(),
        };
        let lf = levy_generator_apply(&poisson, &poly("x^2", 1)).unwrap();
        assert_close(&lf, &poly("2 x + 1", 1), 0.0);
        // d/ds E[(y + N_s)^2] at s = 0 with N Poisson(1): E = y^2 + 2ys + s + s^2
        for &y in &[0.0, 1.5, -2.0] {
            let mean_square = |s: f64| y * y + 2.0 * y * s + s + s * s;
            let s = 1e-7;
            let fd = (mean_square(s) - mean_square(0.0)) / s;
            assert!((fd - lf.evaluate(&[y])).abs() < 1e-6);
        }

        assert!(matches!(
            levy_generator_apply(&poisson, &poly("x^4", 1)),
            Err(Error::CumulantOrder {
                needed: 4,
                available: 3
            })
        ));
    }
}
