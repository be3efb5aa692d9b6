//! The moment semigroup `P_t = e^{tG}` on polynomials, Dynkin expansions,
//! growth bounds, and the checks of the operator identities it satisfies.
//!
//! Because the generator of an affine process maps polynomials of degree
//! `<= N` into themselves, `E^x[f(X_t)]` for polynomial `f` is the polynomial
//! whose coefficient vector is `e^{tG} f̂`. Everything here is exact up to the
//! matrix exponential's rounding.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generator::{apply_generator, generator_power, levy_generator_apply, moments_to_cumulants, GeneratorMatrix};
use crate::linalg::{expm, gauss_legendre};
use crate::model::AffineModel;
use crate::polyalg::{monomial_basis, MultiIndex, Polynomial};

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("time must be finite and >= 0, got {t}")))
    }
}

/// `e^{tG}` as a matrix on the basis of `g`.
pub fn propagator(g: &GeneratorMatrix, t: f64) -> Result<DMatrix<f64>> {
    check_time(t)?;
    Ok(expm(&(g.entries() * t)))
}

/// `u(t, ·) = E^·[f(X_t)]`, the solution of the Kolmogorov equation with `u(0) = f`.
pub fn exact_semigroup(g: &GeneratorMatrix, f: &Polynomial, t: f64) -> Result<Polynomial> {
    check_time(t)?;
    let v = g.encode(f)?;
    if t == 0.0 {
        return Ok(f.clone());
    }
    Ok(g.decode(&(propagator(g, t)? * v)))
}

/// Raw moments `E^x[X_t^α]` for `|α| <= max_order` from one starting point.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTable {
    pub dim: usize,
    pub max_order: usize,
    pub t: f64,
    pub base_point: Option<Vec<f64>>,
    pub values: BTreeMap<MultiIndex, f64>,
}

impl MomentTable {
    pub fn get(&self, alpha: &MultiIndex) -> Option<f64> {
        self.values.get(alpha).copied()
    }
}

/// Moments of `X_t` started at `x`, read off `e^{tG}` applied to every basis monomial.
pub fn moment_table(g: &GeneratorMatrix, t: f64, x: &[f64], max_order: usize) -> Result<MomentTable> {
    if max_order > g.max_degree() {
        return Err(Error::DegreeOverflow {
            degree: max_order,
            max: g.max_degree(),
        });
    }
    if x.len() != g.basis().dim() {
        return Err(Error::DimensionMismatch {
            expected: g.basis().dim(),
            found: x.len(),
        });
    }
    let p = propagator(g, t)?;
    let row = g.basis().evaluation_row(x);
    // row · P gives E^x[X_t^α] for every basis monomial at once
    let evaluated = row.transpose() * &p;
    let values = g
        .basis()
        .indices()
        .iter()
        .enumerate()
        .filter(|(_, a)| a.order() <= max_order)
        .map(|(j, a)| (a.clone(), evaluated[j]))
        .collect();
    Ok(MomentTable {
        dim: x.len(),
        max_order,
        t,
        base_point: Some(x.to_vec()),
        values,
    })
}

// ---------------------------------------------------------------------------
// Dynkin expansion

/// Taylor coefficients `A^k f / k!`, `k = 0..=nu`, of `t ↦ P_t f`.
#[derive(Clone, Debug)]
pub struct ExpansionResult {
    pub nu: usize,
    pub terms: Vec<Polynomial>,
    pub model_hash: String,
}

impl ExpansionResult {
    /// `Σ_k t^k terms[k](x)`.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> f64 {
        self.terms.iter().rev().fold(0.0, |acc, p| acc * t + p.evaluate(x))
    }

    pub fn polynomial(&self, t: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.terms[0].dim());
        let mut tk = 1.0;
        for p in &self.terms {
            out = out.add(&p.scale(tk)).expect("dimensions agree");
            tk *= t;
        }
        out
    }
}

pub fn dynkin_expand(model: &AffineModel, f: &Polynomial, nu: usize) -> Result<ExpansionResult> {
    let mut terms = Vec::with_capacity(nu + 1);
    let mut current = generator_power(model, f, 0)?;
    let mut factorial = 1.0;
    terms.push(current.clone());
    for k in 1..=nu {
        current = apply_generator(model, &current)?;
        factorial *= k as f64;
        terms.push(current.scale(1.0 / factorial));
    }
    Ok(ExpansionResult {
        nu,
        terms,
        model_hash: model.fingerprint(),
    })
}

fn check_hash(g: &GeneratorMatrix, hash: &str) -> Result<()> {
    if g.model_hash() == hash {
        Ok(())
    } else {
        Err(Error::ModelMismatch(g.model_hash().to_string(), hash.to_string()))
    }
}

/// `P_t f(x)` minus the truncated expansion at `(t, x)`.
pub fn remainder(g: &GeneratorMatrix, expansion: &ExpansionResult, t: f64, x: &[f64]) -> Result<f64> {
    check_hash(g, &expansion.model_hash)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let exact = exact_semigroup(g, &expansion.terms[0], t)?.evaluate(x);
    Ok(exact - expansion.evaluate(t, x))
}

// ---------------------------------------------------------------------------
// Growth bounds

/// Certificate that `|A F(x)| <= K F(x)` on `D` for `F(x) = 1 + Σ x_i^{2η}`.
#[derive(Clone, Debug)]
pub struct BoundCertificate {
    pub eta: usize,
    pub k: f64,
    pub weight: Polynomial,
    /// Sum of absolute top-degree coefficients of `A F`; bounds the ratio at infinity.
    pub symbolic_bound: f64,
    /// Largest `|A F| / F` found on the grid.
    pub grid_sup: f64,
    pub grid_points: usize,
    pub model_hash: String,
}

impl BoundCertificate {
    pub fn weight_description(&self) -> String {
        self.weight.to_string()
    }
}

const GROWTH_INFLATION: f64 = 1.05;
const TENSOR_GRID_MAX_DIM: usize = 3;
const RANDOM_GRID_POINTS: usize = 10_000;

/// `F_{2η}(x) = 1 + Σ_i x_i^{2η}`.
pub fn polynomial_weight(dim: usize, eta: usize) -> Polynomial {
    let mut f = Polynomial::constant(dim, 1.0);
    for i in 0..dim {
        let mut e = vec![0; dim];
        e[i] = 2 * eta as u32;
        f = f
            .add(&Polynomial::monomial(MultiIndex::new(e), 1.0))
            .expect("dimensions agree");
    }
    f
}

fn coordinate_grid(nonnegative: bool) -> Vec<f64> {
    let positive: Vec<f64> = (-8..=24).map(|k| 10f64.powf(k as f64 / 4.0)).collect();
    let mut grid = vec![0.0];
    grid.extend(&positive);
    if !nonnegative {
        grid.extend(positive.iter().map(|v| -v));
    }
    grid
}

/// Grid over `D`: a full tensor product for `d <= 3`, a fixed random sample otherwise.
fn state_grid(model: &AffineModel) -> Vec<Vec<f64>> {
    let d = model.dim();
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|k| coordinate_grid(model.is_nonnegative_coordinate(k)))
        .collect();
    if d <= TENSOR_GRID_MAX_DIM {
        let mut points = vec![Vec::with_capacity(d)];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        points
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        (0..RANDOM_GRID_POINTS)
            .map(|_| axes.iter().map(|a| a[rng.random_range(0..a.len())]).collect())
            .collect()
    }
}

/// `K` with `|A F| <= K F` for an arbitrary weight of degree `2η`, as the
/// inflated maximum of the symbolic tail bound and the sampled ratio.
pub(crate) fn weight_growth(model: &AffineModel, weight: &Polynomial, eta: usize) -> Result<BoundCertificate> {
    let af = apply_generator(model, weight)?;
    let top = 2 * eta;
    let symbolic_bound: f64 = af.terms().filter(|(a, _)| a.order() == top).map(|(_, c)| c.abs()).sum();
    let grid = state_grid(model);
    let grid_sup = grid
        .iter()
        .map(|x| af.evaluate(x).abs() / weight.evaluate(x))
        .filter(|r| r.is_finite())
        .fold(0.0, f64::max);
    Ok(BoundCertificate {
        eta,
        k: GROWTH_INFLATION * symbolic_bound.max(grid_sup),
        weight: weight.clone(),
        symbolic_bound,
        grid_sup,
        grid_points: grid.len(),
        model_hash: model.fingerprint(),
    })
}

pub fn growth_constant(model: &AffineModel, eta: usize) -> Result<BoundCertificate> {
    model.check_degree(2 * eta)?;
    weight_growth(model, &polynomial_weight(model.dim(), eta), eta)
}

/// `t^{ν+1} K^{ν+1} / ν! · e^{Kt} · ‖f‖ · F(x)`.
pub fn remainder_bound(cert: &BoundCertificate, f_norm: f64, nu: usize, t: f64, x: &[f64]) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let nu_factorial: f64 = (1..=nu).map(|k| k as f64).product();
    let p = (nu + 1) as i32;
    t.powi(p) * cert.k.powi(p) / nu_factorial * (cert.k * t).exp() * f_norm * cert.weight.evaluate(x)
}

/// `P_t F(x) <= e^{Kt} F(x) + 1e-9`.
pub fn gronwall_check(g: &GeneratorMatrix, cert: &BoundCertificate, t: f64, x: &[f64]) -> Result<bool> {
    check_hash(g, &cert.model_hash)?;
    let lhs = exact_semigroup(g, &cert.weight, t)?.evaluate(x);
    let rhs = (cert.k * t).exp() * cert.weight.evaluate(x);
    Ok(lhs <= rhs + 1e-9)
}

// ---------------------------------------------------------------------------
// Space derivatives

/// `∂^α_x u(t, x)` for `u = P_t f`.
pub fn space_derivative(g: &GeneratorMatrix, f: &Polynomial, t: f64, alpha: &MultiIndex, x: &[f64]) -> Result<f64> {
    Ok(exact_semigroup(g, f, t)?.differentiate(alpha).evaluate(x))
}

/// `∂_{x_i} P_t f` computed as `P_t (L f)`, where `L` is the Lévy generator
/// whose unit-time law is that of `X_t` started at `e_i`.
pub fn derivative_representation(
    model: &AffineModel,
    g: &GeneratorMatrix,
    f: &Polynomial,
    t: f64,
    i: usize,
) -> Result<Polynomial> {
    if model.has_constant_part() {
        return Err(Error::ConstantCharacteristics("derivative representation"));
    }
    check_hash(g, &model.fingerprint())?;
    let d = model.dim();
    if i >= d {
        return Err(Error::InvalidArgument(format!("coordinate {i} outside 0..{d}")));
    }
    let mut unit = vec![0.0; d];
    unit[i] = 1.0;
    let moments = moment_table(g, t, &unit, f.degree())?;
    let cumulants = moments_to_cumulants(&moments)?;
    let lf = levy_generator_apply(&cumulants, f)?;
    exact_semigroup(g, &lf, t)
}

/// Moment form of `X^{x+y}_t = X^x_t + X^y_t` (independent summands) for
/// linear models: per coordinate `c` and order `j <= k`,
/// `P_t x_c^j (x+y) = Σ_l C(j,l) P_t x_c^l (x) P_t x_c^{j-l} (y)`.
/// Returns the largest absolute deviation.
pub fn convolution_identity_check(g: &GeneratorMatrix, t: f64, k: usize, x: &[f64], y: &[f64]) -> Result<f64> {
    if !g.is_linear() {
        return Err(Error::ConstantCharacteristics("convolution identity"));
    }
    let d = g.basis().dim();
    if k > g.max_degree() {
        return Err(Error::DegreeOverflow {
            degree: k,
            max: g.max_degree(),
        });
    }
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
    let p = propagator(g, t)?;
    let mut worst: f64 = 0.0;
    for c in 0..d {
        let moments: Vec<Polynomial> = (0..=k)
            .map(|j| {
                let mut e = vec![0; d];
                e[c] = j as u32;
                let v = g.encode(&Polynomial::monomial(MultiIndex::new(e), 1.0))?;
                Ok(g.decode(&(&p * v)))
            })
            .collect::<Result<_>>()?;
        for j in 0..=k {
            let lhs = moments[j].evaluate(&xy);
            let mut rhs = 0.0;
            let mut binom = 1.0;
            for l in 0..=j {
                rhs += binom * moments[l].evaluate(x) * moments[j - l].evaluate(y);
                binom = binom * (j - l) as f64 / (l + 1) as f64;
            }
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Operator identities

/// `‖G e^{tG} f̂ - e^{tG} G f̂‖_∞`.
pub fn commutation_check(g: &GeneratorMatrix, f: &Polynomial, t: f64) -> Result<f64> {
    let v = g.encode(f)?;
    let p = propagator(g, t)?;
    let lhs = g.entries() * (&p * &v);
    let rhs = &p * (g.entries() * &v);
    Ok((lhs - rhs).amax())
}

/// `‖e^{(s+t)G} f̂ - e^{sG} e^{tG} f̂‖_∞ / ‖e^{(s+t)G} f̂‖_∞`.
pub fn semigroup_law_deviation(g: &GeneratorMatrix, f: &Polynomial, s: f64, t: f64) -> Result<f64> {
    let v = g.encode(f)?;
    let joint = propagator(g, s + t)? * &v;
    let split = propagator(g, s)? * (propagator(g, t)? * &v);
    Ok(relative(&(&joint - split), &joint))
}

fn relative(diff: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    let scale = reference.amax();
    if scale == 0.0 {
        diff.amax()
    } else {
        diff.amax() / scale
    }
}

/// `‖(P_{t+δ} f - P_{t-δ} f)/(2δ) - P_t A f‖_∞`.
pub fn kolmogorov_mismatch(g: &GeneratorMatrix, f: &Polynomial, t: f64, delta: f64) -> Result<f64> {
    if delta <= 0.0 || delta > t {
        return Err(Error::InvalidArgument(format!("need 0 < δ <= t, got δ = {delta}")));
    }
    let v = g.encode(f)?;
    let forward = propagator(g, t + delta)? * &v;
    let backward = propagator(g, t - delta)? * &v;
    let derivative = (forward - backward) / (2.0 * delta);
    let generator = propagator(g, t)? * (g.entries() * &v);
    Ok((derivative - generator).amax())
}

/// `‖P_t f - f - ∫_0^t P_s A f ds‖_∞` with 64-point Gauss-Legendre in `s`.
pub fn dynkin_consistency(g: &GeneratorMatrix, f: &Polynomial, t: f64) -> Result<f64> {
    check_time(t)?;
    let v = g.encode(f)?;
    let av = g.entries() * &v;
    let (nodes, weights) = gauss_legendre(64);
    let mut integral = DVector::zeros(v.len());
    for (node, w) in nodes.iter().zip(&weights) {
        let s = 0.5 * t * (node + 1.0);
        integral += propagator(g, s)? * &av * (0.5 * t * w);
    }
    let lhs = propagator(g, t)? * &v - &v;
    Ok((lhs - integral).amax())
}

/// Every basis monomial of degree `<= max_degree`.
pub fn basis_monomials(dim: usize, max_degree: usize) -> Vec<Polynomial> {
    monomial_basis(dim, max_degree)
        .into_iter()
        .map(|a| Polynomial::monomial(a, 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::generator_matrix;

    fn poly(s: &str, dim: usize) -> Polynomial {
        Polynomial::parse(s, dim).unwrap()
    }

    fn cir() -> AffineModel {
        AffineModel::cir(0.1, -0.5, 0.09)
    }

    fn drift_only() -> AffineModel {
        let mut m = AffineModel::zero(0, 1);
        m.b[0] = 1.0;
        m
    }

    fn cir_mean(x: f64, t: f64) -> f64 {
        x * (-0.5 * t).exp() + 0.2 * (1.0 - (-0.5 * t).exp())
    }

    #[test]
    fn semigroup_examples() {
        let g = generator_matrix(&cir(), 3).unwrap();
        let f = poly("x^3 - x", 1);
        assert_eq!(exact_semigroup(&g, &f, 0.0).unwrap(), f);

        let gd = generator_matrix(&drift_only(), 1).unwrap();
        for &t in &[0.3, 2.0, 10.0] {
            let u = exact_semigroup(&gd, &poly("x", 1), t).unwrap();
            assert!((u.coefficient(&MultiIndex::new(vec![0])) - t).abs() < 1e-14 * t.max(1.0));
            assert!((u.coefficient(&MultiIndex::new(vec![1])) - 1.0).abs() < 1e-14);
        }

        let u = exact_semigroup(&g, &poly("x", 1), 1.0).unwrap();
        for &x in &[0.0, 1.0, 2.5] {
            assert!((u.evaluate(&[x]) - cir_mean(x, 1.0)).abs() < 1e-13);
        }

        assert!(exact_semigroup(&g, &poly("x^4", 1), 1.0).is_err());
        assert!(exact_semigroup(&g, &f, f64::NAN).is_err());
        assert!(exact_semigroup(&g, &f, -1.0).is_err());
    }

    #[test]
    fn expansion_examples() {
        let e = dynkin_expand(&cir(), &poly("x^2", 1), 0).unwrap();
        assert_eq!(e.terms.len(), 1);

        let e = dynkin_expand(&drift_only(), &poly("x", 1), 2).unwrap();
        assert_eq!(
            e.terms,
            vec![poly("x", 1), Polynomial::constant(1, 1.0), Polynomial::zero(1)]
        );
        let g = generator_matrix(&drift_only(), 1).unwrap();
        for &t in &[0.0, 0.5, 3.0] {
            assert!(remainder(&g, &e, t, &[1.3]).unwrap().abs() < 1e-13);
        }

        let e = dynkin_expand(&cir(), &poly("x^2", 1), 1).unwrap();
        let diff = e.terms[1].sub(&poly("-x^2 + 0.29 x", 1)).unwrap();
        assert!(diff.coefficient_norm() < 1e-15);
    }

    #[test]
    fn expansion_terms_are_scaled_powers() {
        let model = cir();
        let f = poly("x^3 + x", 1);
        let e = dynkin_expand(&model, &f, 4).unwrap();
        let mut factorial = 1.0;
        for (k, term) in e.terms.iter().enumerate() {
            if k > 0 {
                factorial *= k as f64;
            }
            let expected = generator_power(&model, &f, k).unwrap().scale(1.0 / factorial);
            assert!(term.sub(&expected).unwrap().coefficient_norm() < 1e-14);
            assert!(term.degree() <= f.degree());
        }
        let t = 0.3;
        let x = [1.7];
        assert!((e.polynomial(t).evaluate(&x) - e.evaluate(t, &x)).abs() < 1e-14);
    }

    #[test]
    fn remainder_examples() {
        let model = cir();
        let g = generator_matrix(&model, 1).unwrap();
        let e = dynkin_expand(&model, &poly("x", 1), 1).unwrap();
        assert_eq!(remainder(&g, &e, 0.0, &[1.0]).unwrap(), 0.0);
        let (t, x, b, beta) = (0.1f64, 1.0, 0.1, -0.5f64);
        let closed = x * (beta * t).exp() + b * (1.0 - (beta * t).exp()) / (-beta) - (x + t * (b + beta * x));
        let r = remainder(&g, &e, t, &[x]).unwrap();
        assert!((r - closed).abs() < 1e-15, "{r} vs {closed}");
        // leading term t²/2 · A²x = t²/2 · (β b + β² x) = 0.005 · 0.2
        assert!((r - 1.0e-3).abs() < 2e-5);

        let other = generator_matrix(&AffineModel::cir(0.2, -0.5, 0.09), 1).unwrap();
        assert!(matches!(remainder(&other, &e, t, &[x]), Err(Error::ModelMismatch(..))));
    }

    #[test]
    fn remainder_is_bounded() {
        let model = cir();
        let cert = growth_constant(&model, 1).unwrap();
        let g = generator_matrix(&model, 2).unwrap();
        let f = poly("x", 1);
        let e = dynkin_expand(&model, &f, 1).unwrap();
        let r = remainder(&g, &e, 0.1, &[1.0]).unwrap();
        let bound = remainder_bound(&cert, f.coefficient_norm(), 1, 0.1, &[1.0]);
        assert!(bound > 0.0);
        assert!(r.abs() <= bound);
        assert_eq!(remainder_bound(&cert, 1.0, 1, 0.0, &[1.0]), 0.0);

        let zero = growth_constant(&AffineModel::zero(1, 0), 1).unwrap();
        assert_eq!(zero.k, 0.0);
        for nu in 0..3 {
            assert_eq!(remainder_bound(&zero, 1.0, nu, 0.5, &[2.0]), 0.0);
        }
    }

    #[test]
    fn growth_constant_examples() {
        let ou = growth_constant(&AffineModel::ornstein_uhlenbeck(0.0, -1.0, 1.0), 1).unwrap();
        assert!((ou.k - 2.0).abs() <= 0.1 * 2.0 + 1e-12, "{}", ou.k);
        assert!(ou.k >= 2.0);
        assert_eq!(ou.symbolic_bound, 2.0);

        let drift = growth_constant(&drift_only(), 1).unwrap();
        assert!((drift.k - 1.05).abs() < 1e-12, "{}", drift.k);
        assert_eq!(drift.grid_sup, 1.0);

        let zero = growth_constant(&AffineModel::zero(2, 1), 2).unwrap();
        assert_eq!(zero.k, 0.0);
        assert_eq!(zero.grid_points, 34 * 34 * 67);
        assert_eq!(zero.weight_description(), "1 * x3^4 + 1 * x2^4 + 1 * x1^4 + 1");
    }

    #[test]
    fn growth_constant_respects_jump_tables() {
        let json = r#"{"m":1,"n":0,"jumps":[{"index":1,"max_degree":2,
            "moments":[{"alpha":[1],"value":0.1},{"alpha":[2],"value":0.02}]}]}"#;
        let model = crate::model::load_model(json).unwrap();
        assert!(growth_constant(&model, 1).is_ok());
        assert!(matches!(growth_constant(&model, 2), Err(Error::DegreeOverflow { .. })));
    }

    #[test]
    fn gronwall_examples() {
        let model = cir();
        let cert = growth_constant(&model, 2).unwrap();
        let g = generator_matrix(&model, 4).unwrap();
        assert!(gronwall_check(&g, &cert, 0.0, &[1.0]).unwrap());
        for &t in &[0.5, 1.0] {
            for &x in &[0.5, 1.0, 2.0] {
                assert!(gronwall_check(&g, &cert, t, &[x]).unwrap());
            }
        }
        let zero = AffineModel::zero(1, 0);
        let zg = generator_matrix(&zero, 2).unwrap();
        let zc = growth_constant(&zero, 1).unwrap();
        assert!(gronwall_check(&zg, &zc, 5.0, &[3.0]).unwrap());
    }

    #[test]
    fn space_derivative_examples() {
        let g = generator_matrix(&cir(), 3).unwrap();
        let f = poly("x^3", 1);
        let u = exact_semigroup(&g, &f, 0.7).unwrap().evaluate(&[1.2]);
        assert_eq!(
            space_derivative(&g, &f, 0.7, &MultiIndex::new(vec![0]), &[1.2]).unwrap(),
            u
        );

        let gd = generator_matrix(&drift_only(), 1).unwrap();
        for &t in &[0.0, 1.0, 4.0] {
            let v = space_derivative(&gd, &poly("x", 1), t, &MultiIndex::new(vec![1]), &[-2.0]).unwrap();
            assert!((v - 1.0).abs() < 1e-14);
        }

        let v = space_derivative(&g, &poly("x", 1), 1.0, &MultiIndex::new(vec![1]), &[0.4]).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn derivative_representation_examples() {
        // t = 0: X_0 = e_i, so L is the directional derivative
        let lin = AffineModel::cir(0.0, -0.5, 0.09);
        let g = generator_matrix(&lin, 4).unwrap();
        let f = poly("x^4 - 2 x^2 + x", 1);
        let rep = derivative_representation(&lin, &g, &f, 0.0, 0).unwrap();
        assert!(rep.sub(&f.partial(0)).unwrap().coefficient_norm() < 1e-14);

        // deterministic linear flow
        let mut flow = AffineModel::zero(0, 2);
        flow.drift = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        let gf = generator_matrix(&flow, 1).unwrap();
        let t = 0.8f64;
        let rep = derivative_representation(&flow, &gf, &poly("x1", 2), t, 0).unwrap();
        assert!(
            rep.sub(&Polynomial::constant(2, (-t).exp()))
                .unwrap()
                .coefficient_norm()
                < 1e-14
        );

        // linear CIR, f = x^2, t = 0.5
        let f = poly("x^2", 1);
        let rep = derivative_representation(&lin, &g, &f, 0.5, 0).unwrap();
        let direct = exact_semigroup(&g, &f, 0.5).unwrap().partial(0);
        let scale = direct.coefficient_norm();
        assert!(rep.sub(&direct).unwrap().coefficient_norm() <= 1e-8 * scale);

        let g2 = generator_matrix(&cir(), 2).unwrap();
        assert!(matches!(
            derivative_representation(&cir(), &g2, &f, 0.5, 0),
            Err(Error::ConstantCharacteristics(_))
        ));
    }

    #[test]
    fn convolution_examples() {
        let lin = AffineModel::cir(0.0, -0.5, 0.09);
        let g = generator_matrix(&lin, 4).unwrap();
        assert!(convolution_identity_check(&g, 0.0, 4, &[1.0], &[2.0]).unwrap() < 1e-12);
        assert!(convolution_identity_check(&g, 0.7, 4, &[1.5], &[0.0]).unwrap() <= 1e-12);
        assert!(convolution_identity_check(&g, 0.5, 3, &[1.0], &[2.0]).unwrap() <= 1e-9);
        let gc = generator_matrix(&cir(), 4).unwrap();
        assert!(convolution_identity_check(&gc, 0.5, 3, &[1.0], &[2.0]).is_err());
    }

    #[test]
    fn commutation_examples() {
        let g = generator_matrix(&cir(), 3).unwrap();
        let f = poly("x^3", 1);
        assert_eq!(commutation_check(&g, &f, 0.0).unwrap(), 0.0);
        let scale = (g.entries() * propagator(&g, 2.0).unwrap() * g.encode(&f).unwrap()).amax();
        assert!(commutation_check(&g, &f, 2.0).unwrap() <= 1e-10 * scale);
        let ou = generator_matrix(&AffineModel::ornstein_uhlenbeck(0.3, -1.0, 1.0), 4).unwrap();
        assert!(commutation_check(&ou, &poly("x^4 + x", 1), 1.0).unwrap() <= 1e-10 * 10.0);
    }

    #[test]
    fn semigroup_law_and_kolmogorov() {
        let g = generator_matrix(&cir(), 4).unwrap();
        let f = poly("x^4 - x^2 + 3", 1);
        for &s in &[0.1, 0.7] {
            for &t in &[0.1, 0.7] {
                assert!(semigroup_law_deviation(&g, &f, s, t).unwrap() <= 1e-11);
            }
        }
        let e1 = kolmogorov_mismatch(&g, &f, 1.0, 1e-3).unwrap();
        let e2 = kolmogorov_mismatch(&g, &f, 1.0, 5e-4).unwrap();
        assert!((e1 / e2 - 4.0).abs() <= 0.8, "{}", e1 / e2);
        assert!(kolmogorov_mismatch(&g, &f, 1e-4, 1e-3).is_err());
    }

    #[test]
    fn dynkin_consistency_holds() {
        let g = generator_matrix(&cir(), 4).unwrap();
        for f in basis_monomials(1, 4) {
            assert!(dynkin_consistency(&g, &f, 1.5).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn cir_mean_stays_nonnegative() {
        let g = generator_matrix(&cir(), 1).unwrap();
        for &t in &[0.1, 1.0, 10.0, 100.0] {
            let u = exact_semigroup(&g, &poly("x", 1), t).unwrap();
            for &x in &[0.0, 0.01, 1.0, 50.0] {
                assert!(u.evaluate(&[x]) >= 0.0);
            }
        }
    }

    #[test]
    fn moment_table_from_origin_of_linear_model() {
        let lin = AffineModel::cir(0.0, -0.5, 0.09);
        let g = generator_matrix(&lin, 4).unwrap();
        let m = moment_table(&g, 1.0, &[0.0], 4).unwrap();
        assert_eq!(m.get(&MultiIndex::new(vec![0])), Some(1.0));
        for p in 1..=4 {
            assert_eq!(m.get(&MultiIndex::new(vec![p])), Some(0.0));
        }
        assert!(moment_table(&g, 1.0, &[0.0], 5).is_err());
    }
}
