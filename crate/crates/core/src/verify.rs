//! Verification suites: operator identities, derivative representations and
//! growth bounds, evaluated over fixed parameter grids and reported as rows.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::generator_matrix;
use crate::model::AffineModel;
use crate::polyalg::Polynomial;
use crate::semigroup::{
    basis_monomials, commutation_check, convolution_identity_check, derivative_representation, dynkin_consistency,
    dynkin_expand, exact_semigroup, growth_constant, kolmogorov_mismatch, remainder, remainder_bound,
    semigroup_law_deviation,
};

pub const COMMUTATION_TOL: f64 = 1e-10;
pub const SEMIGROUP_LAW_TOL: f64 = 1e-11;
pub const DYNKIN_TOL: f64 = 1e-10;
pub const KOLMOGOROV_RATIO: f64 = 4.0;
pub const KOLMOGOROV_RATIO_TOL: f64 = 0.8;
pub const DERIVATIVE_TOL: f64 = 1e-8;
pub const CONVOLUTION_TOL: f64 = 1e-9;

/// Largest test-function degree used by the suites.
const MAX_TEST_DEGREE: usize = 4;
/// Both Kolmogorov errors below this are rounding noise and count as a pass.
const KOLMOGOROV_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Identities,
    Derivatives,
    Bounds,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identities" => Ok(Suite::Identities),
            "derivatives" => Ok(Suite::Derivatives),
            "bounds" => Ok(Suite::Bounds),
            "all" => Ok(Suite::All),
            other => Err(Error::Parse(format!(
                "unknown suite '{other}' (expected identities, derivatives, bounds or all)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Identities => "identities",
            Suite::Derivatives => "derivatives",
            Suite::Bounds => "bounds",
            Suite::All => "all",
        })
    }
}

/// One checked identity instance. `pass` is `deviation <= tolerance`, except
/// for the Kolmogorov ratio where it is `|deviation - 4| <= tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationRecord {
    pub identity: String,
    pub model: String,
    pub param: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl VerificationRecord {
    fn bounded(identity: &str, model: &str, param: String, deviation: f64, tolerance: f64) -> Self {
        VerificationRecord {
            identity: identity.into(),
            model: model.into(),
            param,
            deviation,
            tolerance,
            pass: deviation <= tolerance,
        }
    }
}

pub fn all_pass(records: &[VerificationRecord]) -> bool {
    records.iter().all(|r| r.pass)
}

/// CSV `identity,model,param,deviation,tolerance,pass`.
pub fn write_records<W: std::io::Write>(records: &[VerificationRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["identity", "model", "param", "deviation", "tolerance", "pass"])?;
    for r in records {
        w.write_record([
            r.identity.clone(),
            r.model.clone(),
            r.param.clone(),
            format!("{:.16e}", r.deviation),
            format!("{:.16e}", r.tolerance),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn test_degree(model: &AffineModel) -> usize {
    model.max_degree().map_or(MAX_TEST_DEGREE, |m| m.min(MAX_TEST_DEGREE))
}

/// Every basis monomial up to the test degree plus one dense polynomial mixing
/// all of them with distinct coefficients.
pub fn test_functions(dim: usize, max_degree: usize) -> Vec<Polynomial> {
    let mut fs = basis_monomials(dim, max_degree);
    let mut mixed = Polynomial::zero(dim);
    for (k, m) in fs.iter().enumerate() {
        let c = if k % 2 == 0 { 1.0 } else { -0.5 } * (1.0 + k as f64 / 10.0);
        mixed = mixed.add(&m.scale(c)).expect("dimensions agree");
    }
    fs.push(mixed);
    fs
}

/// Runs `suite`. `Derivatives` on a model with constant characteristics is an
/// error; `All` skips that part for such models.
pub fn run_suite(model: &AffineModel, label: &str, suite: Suite) -> Result<Vec<VerificationRecord>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Identities | Suite::All) {
        out.extend(identities(model, label)?);
    }
    match suite {
        Suite::Derivatives => out.extend(derivatives(model, label)?),
        Suite::All if !model.has_constant_part() => out.extend(derivatives(model, label)?),
        _ => {}
    }
    if matches!(suite, Suite::Bounds | Suite::All) {
        out.extend(bounds(model, label)?);
    }
    Ok(out)
}

fn scale_of(p: &Polynomial) -> f64 {
    p.coefficient_norm()
}

fn relative(deviation: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        deviation / scale
    } else {
        deviation
    }
}

/// Commutation, semigroup law, Kolmogorov ratio and the integrated Dynkin formula.
pub fn identities(model: &AffineModel, label: &str) -> Result<Vec<VerificationRecord>> {
    let degree = test_degree(model);
    let g = generator_matrix(model, degree)?;
    let mut out = Vec::new();
    for f in test_functions(model.dim(), degree) {
        for t in [0.1, 1.0, 2.0] {
            let param = format!("f={f};t={t}");
            let scale = scale_of(&g.apply(&exact_semigroup(&g, &f, t)?)?);
            let dev = relative(commutation_check(&g, &f, t)?, scale);
            out.push(VerificationRecord::bounded(
                "commutation",
                label,
                param.clone(),
                dev,
                COMMUTATION_TOL,
            ));

            let dev = semigroup_law_deviation(&g, &f, 0.5 * t, 0.5 * t)?;
            out.push(VerificationRecord::bounded(
                "semigroup_law",
                label,
                param.clone(),
                dev,
                SEMIGROUP_LAW_TOL,
            ));

            let scale = scale_of(&exact_semigroup(&g, &f, t)?).max(scale_of(&f));
            let dev = relative(dynkin_consistency(&g, &f, t)?, scale);
            out.push(VerificationRecord::bounded(
                "dynkin_integral",
                label,
                param,
                dev,
                DYNKIN_TOL,
            ));
        }
        let coarse = kolmogorov_mismatch(&g, &f, 1.0, 1e-3)?;
        let fine = kolmogorov_mismatch(&g, &f, 1.0, 5e-4)?;
        let (ratio, pass) = if coarse <= KOLMOGOROV_FLOOR && fine <= KOLMOGOROV_FLOOR {
            (KOLMOGOROV_RATIO, true)
        } else {
            let r = coarse / fine;
            (r, (r - KOLMOGOROV_RATIO).abs() <= KOLMOGOROV_RATIO_TOL)
        };
        out.push(VerificationRecord {
            identity: "kolmogorov_ratio".into(),
            model: label.into(),
            param: format!("f={f};t=1;delta=1e-3"),
            deviation: ratio,
            tolerance: KOLMOGOROV_RATIO_TOL,
            pass,
        });
    }
    Ok(out)
}

/// Derivative representation against direct differentiation, and the
/// convolution identity. Requires zero constant characteristics.
pub fn derivatives(model: &AffineModel, label: &str) -> Result<Vec<VerificationRecord>> {
    if model.has_constant_part() {
        return Err(Error::ConstantCharacteristics("the derivatives suite"));
    }
    let degree = test_degree(model);
    let g = generator_matrix(model, degree)?;
    let d = model.dim();
    let mut out = Vec::new();
    for f in test_functions(d, degree) {
        for t in [0.1, 0.5, 1.0] {
            let u = exact_semigroup(&g, &f, t)?;
            for i in 0..d {
                let direct = u.partial(i);
                let represented = derivative_representation(model, &g, &f, t, i)?;
                let dev = relative(direct.sub(&represented)?.coefficient_norm(), direct.coefficient_norm());
                out.push(VerificationRecord::bounded(
                    "derivative_representation",
                    label,
                    format!("f={f};t={t};i={}", i + 1),
                    dev,
                    DERIVATIVE_TOL,
                ));
            }
        }
    }
    for t in [0.25, 1.0] {
        for (x, y) in [(1.0, 2.0), (0.5, 0.5)] {
            for k in 1..=degree {
                let dev = convolution_identity_check(&g, t, k, &vec![x; d], &vec![y; d])?;
                out.push(VerificationRecord::bounded(
                    "convolution",
                    label,
                    format!("k={k};t={t};x={x};y={y}"),
                    dev,
                    CONVOLUTION_TOL,
                ));
            }
        }
    }
    Ok(out)
}

/// Every point of `{0.5, 1, 2}^d`.
fn bound_points(dim: usize) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for _ in 0..dim {
        points = points
            .into_iter()
            .flat_map(|p| {
                [0.5, 1.0, 2.0].into_iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points
}

/// Gronwall bound on the weight and Dynkin remainders against their bound.
/// Deviations are ratios `lhs / bound`, passing at `<= 1`.
pub fn bounds(model: &AffineModel, label: &str) -> Result<Vec<VerificationRecord>> {
    let max_eta = test_degree(model) / 2;
    let d = model.dim();
    let mut out = Vec::new();
    for eta in 1..=max_eta {
        let cert = growth_constant(model, eta)?;
        let g = generator_matrix(model, 2 * eta)?;
        for t in [0.5, 1.0] {
            for x in bound_points(d) {
                let lhs = exact_semigroup(&g, &cert.weight, t)?.evaluate(&x);
                let rhs = (cert.k * t).exp() * cert.weight.evaluate(&x);
                out.push(VerificationRecord::bounded(
                    "gronwall",
                    label,
                    format!("eta={eta};K={:.6};t={t};x={x:?}", cert.k),
                    lhs / rhs,
                    1.0,
                ));
            }
        }
    }
    if max_eta == 0 {
        return Ok(out);
    }
    let cert = growth_constant(model, max_eta)?;
    let g = generator_matrix(model, 2 * max_eta)?;
    let f = test_functions(d, 2 * max_eta).pop().expect("nonempty");
    let x = vec![1.0; d];
    for nu in 1..=2 {
        let expansion = dynkin_expand(model, &f, nu)?;
        for j in 0..=6 {
            let t = 0.4 * 0.5f64.powi(j);
            let r = remainder(&g, &expansion, t, &x)?.abs();
            let bound = remainder_bound(&cert, f.coefficient_norm(), nu, t, &x);
            out.push(VerificationRecord::bounded(
                "remainder_bound",
                label,
                format!("nu={nu};t={t};x={x:?}"),
                r / bound,
                1.0,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn two_dim(b: f64) -> AffineModel {
        let mut m = AffineModel::zero(1, 1);
        m.b = vec![b, 0.0];
        m.drift = DMatrix::from_row_slice(2, 2, &[-0.5, 0.0, 0.3, -1.0]);
        m.alpha[0] = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]);
        m
    }

    #[test]
    fn suites_pass_on_test_models() {
        for (model, label) in [
            (AffineModel::cir(0.1, -0.5, 0.09), "cir"),
            (AffineModel::ornstein_uhlenbeck(0.0, -1.0, 1.0), "ou"),
            (two_dim(0.05), "two_dim"),
        ] {
            let records = run_suite(&model, label, Suite::Identities).unwrap();
            let failed: Vec<_> = records.iter().filter(|r| !r.pass).collect();
            assert!(failed.is_empty(), "{failed:?}");
            let records = run_suite(&model, label, Suite::Bounds).unwrap();
            let failed: Vec<_> = records.iter().filter(|r| !r.pass).collect();
            assert!(failed.is_empty(), "{failed:?}");
        }
    }

    #[test]
    fn derivatives_on_linear_models() {
        for model in [AffineModel::cir(0.0, -0.5, 0.09), two_dim(0.0)] {
            let records = run_suite(&model, "linear", Suite::All).unwrap();
            assert!(records.iter().any(|r| r.identity == "convolution"));
            let failed: Vec<_> = records.iter().filter(|r| !r.pass).collect();
            assert!(failed.is_empty(), "{failed:?}");
        }
    }

    #[test]
    fn derivatives_need_linear_model() {
        let err = run_suite(&AffineModel::cir(0.1, -0.5, 0.09), "cir", Suite::Derivatives).unwrap_err();
        assert!(err.to_string().contains("requires zero constant characteristics"));
        let records = run_suite(&AffineModel::cir(0.1, -0.5, 0.09), "cir", Suite::All).unwrap();
        assert!(records.iter().all(|r| r.identity != "derivative_representation"));
    }

    #[test]
    fn zero_model_has_zero_deviations() {
        let records = run_suite(&AffineModel::zero(1, 1), "zero", Suite::Identities).unwrap();
        assert!(all_pass(&records));
        for r in records.iter().filter(|r| r.identity != "kolmogorov_ratio") {
            assert_eq!(r.deviation, 0.0, "{r:?}");
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for s in [Suite::Identities, Suite::Derivatives, Suite::Bounds, Suite::All] {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
        }
        assert!("everything".parse::<Suite>().unwrap_err().is_usage());
    }

    #[test]
    fn csv_header_and_format() {
        let records = vec![VerificationRecord::bounded("x", "m", "p".into(), 0.5, 1.0)];
        let mut buf = Vec::new();
        write_records(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "identity,model,param,deviation,tolerance,pass\nx,m,p,5.0000000000000000e-1,1.0000000000000000e0,true\n"
        );
    }
}
