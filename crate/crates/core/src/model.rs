//! Affine characteristics on the canonical state space `D = R_+^m x R^n`.
//!
//! A model is given by its drift `b + B x`, diffusion `a + Σ_{i∈I} x_i α_i`
//! and jump kernels `M_0 + Σ_{i∈I} x_i M_i`, where the kernels are known only
//! through finitely many polynomial moments. Coordinates `0..m` form the
//! nonnegative block `I`, coordinates `m..m+n` the real block `J`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::polyalg::MultiIndex;

/// Moment data `∫ ξ^α M(dξ)` of a jump kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpKernel {
    /// `0` for the constant kernel, `i` (1-based) for the kernel scaled by `x_i`.
    pub index: usize,
    pub max_degree: usize,
    pub moments: BTreeMap<MultiIndex, f64>,
    /// First-order moments are already part of the drift.
    pub compensated: bool,
}

impl JumpKernel {
    pub fn moment(&self, alpha: &MultiIndex) -> Option<f64> {
        self.moments.get(alpha).copied()
    }

    /// Largest `N <= max_degree` such that every `1 <= |α| <= N` has a moment.
    pub fn covered_degree(&self, dim: usize) -> usize {
        let mut covered = 0;
        for degree in 1..=self.max_degree {
            let complete = crate::polyalg::monomial_basis(dim, degree)
                .iter()
                .filter(|a| a.order() == degree)
                .all(|a| self.moments.contains_key(a));
            if !complete {
                break;
            }
            covered = degree;
        }
        covered
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineModel {
    pub m: usize,
    pub n: usize,
    /// Constant drift.
    pub b: Vec<f64>,
    /// Linear drift; column `k` is `β_k`, so the drift is `b + B x`.
    pub drift: DMatrix<f64>,
    /// Constant diffusion.
    pub a: DMatrix<f64>,
    /// One diffusion matrix per coordinate in `I`.
    pub alpha: Vec<DMatrix<f64>>,
    pub jumps: Vec<JumpKernel>,
}

impl AffineModel {
    /// The model with all characteristics zero.
    pub fn zero(m: usize, n: usize) -> Self {
        let d = m + n;
        AffineModel {
            m,
            n,
            b: vec![0.0; d],
            drift: DMatrix::zeros(d, d),
            a: DMatrix::zeros(d, d),
            alpha: vec![DMatrix::zeros(d, d); m],
            jumps: Vec::new(),
        }
    }

    /// One-dimensional square-root diffusion `dX = (b + βX)dt + σ sqrt(X) dW`.
    pub fn cir(b: f64, beta: f64, sigma2: f64) -> Self {
        let mut model = Self::zero(1, 0);
        model.b[0] = b;
        model.drift[(0, 0)] = beta;
        model.alpha[0][(0, 0)] = sigma2;
        model
    }

    /// One-dimensional Ornstein-Uhlenbeck `dX = (b + βX)dt + sqrt(a) dW`.
    pub fn ornstein_uhlenbeck(b: f64, beta: f64, a: f64) -> Self {
        let mut model = Self::zero(0, 1);
        model.b[0] = b;
        model.drift[(0, 0)] = beta;
        model.a[(0, 0)] = a;
        model
    }

    pub fn dim(&self) -> usize {
        self.m + self.n
    }

    pub fn is_nonnegative_coordinate(&self, k: usize) -> bool {
        k < self.m
    }

    pub fn has_jumps(&self) -> bool {
        !self.jumps.is_empty()
    }

    pub fn jump_kernel(&self, index: usize) -> Option<&JumpKernel> {
        self.jumps.iter().find(|k| k.index == index)
    }

    /// True if `b`, `a` and the constant jump kernel all vanish, i.e. the
    /// characteristic exponent is linear in the starting point.
    pub fn has_constant_part(&self) -> bool {
        self.b.iter().any(|&v| v != 0.0) || self.a.iter().any(|&v| v != 0.0) || self.jump_kernel(0).is_some()
    }

    /// Largest polynomial degree the generator may act on; `None` if unbounded.
    pub fn max_degree(&self) -> Option<usize> {
        let d = self.dim();
        self.jumps.iter().map(|k| k.covered_degree(d)).min()
    }

    /// Fails with [`Error::DegreeOverflow`] if `degree` exceeds the jump tables.
    pub fn check_degree(&self, degree: usize) -> Result<()> {
        match self.max_degree() {
            Some(max) if degree > max => Err(Error::DegreeOverflow { degree, max }),
            _ => Ok(()),
        }
    }

    pub fn in_state_space(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().all(|v| v.is_finite()) && x[..self.m].iter().all(|&v| v >= 0.0)
    }

    /// Hex fingerprint of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&ModelConfig::from(self)).expect("model serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelConfig::from(self)).expect("model serializes")
    }
}

// ---------------------------------------------------------------------------
// Admissibility

fn max_norm(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn is_symmetric(a: &DMatrix<f64>) -> bool {
    let tol = 1e-12 * max_norm(a);
    (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol))
}

/// Eigenvalues `>= -1e-10 * max|a_ij|` count as nonnegative.
pub(crate) fn is_psd(a: &DMatrix<f64>) -> bool {
    let scale = max_norm(a);
    if scale == 0.0 {
        return true;
    }
    let eig = SymmetricEigen::new(a.clone());
    eig.eigenvalues.iter().all(|&l| l >= -1e-10 * scale)
}

/// Lists every violated admissibility condition; empty means admissible.
pub fn validate_admissibility(model: &AffineModel) -> Vec<String> {
    let mut out = Vec::new();
    let (m, d) = (model.m, model.dim());

    if model.b.len() != d
        || model.drift.shape() != (d, d)
        || model.a.shape() != (d, d)
        || model.alpha.len() != m
        || model.alpha.iter().any(|a| a.shape() != (d, d))
    {
        out.push(format!("characteristics must have dimension d = {d}"));
        return out;
    }
    let all_finite = model.b.iter().all(|v| v.is_finite())
        && model.drift.iter().all(|v| v.is_finite())
        && model.a.iter().all(|v| v.is_finite())
        && model.alpha.iter().all(|a| a.iter().all(|v| v.is_finite()));
    if !all_finite {
        out.push("characteristics must be finite".to_string());
        return out;
    }

    if !is_symmetric(&model.a) {
        out.push("constant diffusion not symmetric".to_string());
    } else if !is_psd(&model.a) {
        out.push("constant diffusion not PSD".to_string());
    }
    if (0..m).any(|k| (0..d).any(|l| model.a[(k, l)] != 0.0 || model.a[(l, k)] != 0.0)) {
        out.push("constant diffusion must vanish on I".to_string());
    }

    for (i, alpha) in model.alpha.iter().enumerate() {
        let label = i + 1;
        if !is_symmetric(alpha) {
            out.push(format!("alpha_{label} not symmetric"));
        } else if !is_psd(alpha) {
            out.push(format!("alpha_{label} not PSD"));
        }
        let in_block = |k: usize| k == i || k >= m;
        let outside = (0..d).any(|k| (0..d).any(|l| (!in_block(k) || !in_block(l)) && alpha[(k, l)] != 0.0));
        if outside {
            out.push(format!("alpha_{label} must vanish outside the block {{{label}}} ∪ J"));
        }
    }

    if model.b[..m].iter().any(|&v| v < 0.0) {
        out.push("b_I must be ≥ 0".to_string());
    }
    for k in 0..m {
        for i in 0..m {
            if k != i && model.drift[(k, i)] < 0.0 {
                out.push(format!(
                    "B_{{{},{}}} must be ≥ 0 (off-diagonal I×I drift)",
                    k + 1,
                    i + 1
                ));
            }
        }
        for j in m..d {
            if model.drift[(k, j)] != 0.0 {
                out.push(format!("B_{{{},{}}} must vanish (I×J drift)", k + 1, j + 1));
            }
        }
    }

    let mut seen = Vec::new();
    for kernel in &model.jumps {
        let idx = kernel.index;
        if idx > m {
            out.push(format!("jump kernel index {idx} must lie in 0..={m}"));
            continue;
        }
        if seen.contains(&idx) {
            out.push(format!("jump kernel index {idx} given twice"));
        }
        seen.push(idx);
        for (alpha, &value) in &kernel.moments {
            if alpha.dim() != d || alpha.order() == 0 || alpha.order() > kernel.max_degree {
                out.push(format!("jump kernel {idx}: moment index {alpha} out of range"));
                continue;
            }
            if !value.is_finite() {
                out.push(format!("jump kernel {idx}: moment {alpha} not finite"));
                continue;
            }
            // ξ ∈ D: ξ_I ≥ 0, so moments even in every J-coordinate are ≥ 0
            let even_on_j = alpha.exponents()[m..].iter().all(|e| e % 2 == 0);
            if even_on_j && value < 0.0 {
                out.push(format!(
                    "jump kernel {idx}: moment {alpha} must be ≥ 0 for support in D"
                ));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Configuration files

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentEntry {
    alpha: Vec<u32>,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JumpConfig {
    index: usize,
    max_degree: usize,
    moments: Vec<MomentEntry>,
    #[serde(default)]
    compensated: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfig {
    m: usize,
    n: usize,
    #[serde(default)]
    b: Option<Vec<f64>>,
    #[serde(rename = "B", default)]
    drift: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    a: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    alpha: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    jumps: Vec<JumpConfig>,
}

fn rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

fn matrix(name: &str, rows: Vec<Vec<f64>>, d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Parse(format!("`{name}` must be a {d}x{d} matrix")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

impl From<&AffineModel> for ModelConfig {
    fn from(model: &AffineModel) -> Self {
        ModelConfig {
            m: model.m,
            n: model.n,
            b: Some(model.b.clone()),
            drift: Some(rows(&model.drift)),
            a: Some(rows(&model.a)),
            alpha: Some(model.alpha.iter().map(rows).collect()),
            jumps: model
                .jumps
                .iter()
                .map(|k| JumpConfig {
                    index: k.index,
                    max_degree: k.max_degree,
                    moments: k
                        .moments
                        .iter()
                        .map(|(alpha, &value)| MomentEntry {
                            alpha: alpha.exponents().to_vec(),
                            value,
                        })
                        .collect(),
                    compensated: k.compensated,
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelConfig> for AffineModel {
    type Error = Error;

    fn try_from(cfg: ModelConfig) -> Result<Self> {
        let d = cfg.m + cfg.n;
        if d == 0 {
            return Err(Error::Parse("m + n must be at least 1".into()));
        }
        let b = cfg.b.unwrap_or_else(|| vec![0.0; d]);
        if b.len() != d {
            return Err(Error::Parse(format!("`b` must have {d} entries")));
        }
        let drift = match cfg.drift {
            Some(r) => matrix("B", r, d)?,
            None => DMatrix::zeros(d, d),
        };
        let a = match cfg.a {
            Some(r) => matrix("a", r, d)?,
            None => DMatrix::zeros(d, d),
        };
        let alpha = match cfg.alpha {
            Some(list) => {
                if list.len() != cfg.m {
                    return Err(Error::Parse(format!("`alpha` must list m = {} matrices", cfg.m)));
                }
                list.into_iter()
                    .enumerate()
                    .map(|(i, r)| matrix(&format!("alpha[{i}]"), r, d))
                    .collect::<Result<Vec<_>>>()?
            }
            None => vec![DMatrix::zeros(d, d); cfg.m],
        };
        let jumps = cfg
            .jumps
            .into_iter()
            .map(|j| {
                let mut moments = BTreeMap::new();
                for entry in j.moments {
                    if entry.alpha.len() != d {
                        return Err(Error::Parse(format!(
                            "jump moment index {:?} must have {d} entries",
                            entry.alpha
                        )));
                    }
                    if moments
                        .insert(MultiIndex::new(entry.alpha.clone()), entry.value)
                        .is_some()
                    {
                        return Err(Error::Parse(format!("duplicate jump moment {:?}", entry.alpha)));
                    }
                }
                Ok(JumpKernel {
                    index: j.index,
                    max_degree: j.max_degree,
                    moments,
                    compensated: j.compensated,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AffineModel {
            m: cfg.m,
            n: cfg.n,
            b,
            drift,
            a,
            alpha,
            jumps,
        })
    }
}

/// Parses a JSON model document and checks admissibility.
pub fn load_model(json: &str) -> Result<AffineModel> {
    let cfg: ModelConfig = serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    let model = AffineModel::try_from(cfg)?;
    let violations = validate_admissibility(&model);
    if violations.is_empty() {
        Ok(model)
    } else {
        Err(Error::Inadmissible(violations))
    }
}

pub fn load_model_file(path: &std::path::Path) -> Result<AffineModel> {
    let text = std::fs::read_to_string(path)?;
    load_model(&text)
}
