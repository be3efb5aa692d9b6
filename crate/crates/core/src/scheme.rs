//! Weak time-stepping: the order-ν operator scheme `Q_h = Σ_{k<=ν} (hG)^k / k!`,
//! the telescoping decomposition of its global error, a full-truncation Euler
//! Monte Carlo sampler, and log-log convergence fits.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::{generator_matrix, GeneratorMatrix};
use crate::linalg::{matrix_power, psd_sqrt};
use crate::model::AffineModel;
use crate::polyalg::{MonomialBasis, Polynomial};
use crate::semigroup::{exact_semigroup, propagator, weight_growth};

/// Errors at or below this level are treated as rounding noise.
pub const ERROR_FLOOR: f64 = 1e-12;

/// Paths per Monte Carlo work unit; fixed so results do not depend on threading.
const CHUNK_PATHS: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    /// Repeated application of `Q_h` on polynomial coefficients.
    Deterministic { nu: usize },
    /// Full-truncation Euler with `paths` samples.
    EulerMc { paths: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeConfig {
    pub method: Method,
    pub horizon: f64,
    pub steps: usize,
    pub x0: Vec<f64>,
}

impl SchemeConfig {
    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self, model: &AffineModel) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidArgument("horizon T must be > 0".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if let Method::EulerMc { paths: 0, .. } = self.method {
            return Err(Error::InvalidArgument("paths must be >= 1".into()));
        }
        if !model.in_state_space(&self.x0) {
            return Err(Error::InvalidArgument(format!("x0 = {:?} is not in D", self.x0)));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Operator scheme

/// `Q_h` on the basis of the generator matrix it was built from.
#[derive(Clone, Debug)]
pub struct StepOperator {
    pub h: f64,
    pub nu: usize,
    matrix: DMatrix<f64>,
    basis: MonomialBasis,
}

impl StepOperator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

pub fn step_operator(g: &GeneratorMatrix, h: f64, nu: usize) -> Result<StepOperator> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be > 0, got {h}")));
    }
    let n = g.dim_basis();
    let hg = g.entries() * h;
    let mut term = DMatrix::identity(n, n);
    let mut q = term.clone();
    for k in 1..=nu {
        term = &term * &hg / k as f64;
        q += &term;
    }
    Ok(StepOperator {
        h,
        nu,
        matrix: q,
        basis: g.basis().clone(),
    })
}

/// `Q_h^N f`.
pub fn propagate(q: &StepOperator, steps: usize, f: &Polynomial) -> Result<Polynomial> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let v = q.basis.encode(f)?;
    Ok(q.basis.decode(&(matrix_power(&q.matrix, steps) * v)))
}

/// Per-step contributions to the global error at `x0`.
#[derive(Clone, Debug)]
pub struct TelescopingAudit {
    /// `Q_h^{N-k} (P_h - Q_h) P_{t_{k-1}} f (x0)` for `k = 1..=N`.
    pub terms: Vec<f64>,
    pub total: f64,
    /// `P_T f(x0) - Q_h^N f(x0)` computed directly.
    pub direct: f64,
    /// `P_T f(x0)`, the scale against which the mismatch is measured.
    pub exact: f64,
}

impl TelescopingAudit {
    /// `|total - direct|` relative to `max(|P_T f(x0)|, |direct|)`.
    pub fn relative_mismatch(&self) -> f64 {
        let scale = self.exact.abs().max(self.direct.abs());
        if scale == 0.0 {
            (self.total - self.direct).abs()
        } else {
            (self.total - self.direct).abs() / scale
        }
    }
}

/// Splits `P_T f - Q_h^N f` into the propagated one-step errors.
pub fn telescoping_audit(
    g: &GeneratorMatrix,
    q: &StepOperator,
    steps: usize,
    f: &Polynomial,
    x0: &[f64],
) -> Result<TelescopingAudit> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let v = g.encode(f)?;
    let p_h = propagator(g, q.h)?;
    let local = &p_h - &q.matrix;

    // semigroup images P_{t_{k-1}} f, k = 1..=N
    let mut images = Vec::with_capacity(steps);
    let mut current = v.clone();
    for _ in 0..steps {
        images.push(current.clone());
        current = &p_h * current;
    }
    let exact_end = current;

    // rows r Q^j, j = 0..N, with r the evaluation row at x0
    let row = g.basis().evaluation_row(x0).transpose();
    let mut rows = Vec::with_capacity(steps + 1);
    let mut r = row.clone();
    for _ in 0..=steps {
        rows.push(r.clone());
        r *= &q.matrix;
    }

    let terms: Vec<f64> = (1..=steps)
        .map(|k| (&rows[steps - k] * (&local * &images[k - 1]))[0])
        .collect();
    let total = terms.iter().sum();
    let scheme_end: DVector<f64> = matrix_power(&q.matrix, steps) * &v;
    let exact = (&row * &exact_end)[0];
    let direct = (&row * (exact_end - scheme_end))[0];
    Ok(TelescopingAudit {
        terms,
        total,
        direct,
        exact,
    })
}

// ---------------------------------------------------------------------------
// Euler Monte Carlo

/// Sample mean of `f(X̂_T)` and its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

struct EulerDynamics {
    m: usize,
    d: usize,
    b: Vec<f64>,
    drift: DMatrix<f64>,
    a: DMatrix<f64>,
    alpha: Vec<DMatrix<f64>>,
}

impl EulerDynamics {
    fn new(model: &AffineModel) -> Result<Self> {
        if model.has_jumps() {
            return Err(Error::JumpsUnsupported);
        }
        Ok(EulerDynamics {
            m: model.m,
            d: model.dim(),
            b: model.b.clone(),
            drift: model.drift.clone(),
            a: model.a.clone(),
            alpha: model.alpha.clone(),
        })
    }

    /// One step `x += (b + B x⁺) h + Σ(x⁺)^{1/2} ΔW`, where `x⁺` clamps the
    /// `I`-coordinates at zero.
    fn step(&self, x: &mut [f64], h: f64, dw: &[f64], clamped: &mut [f64]) -> Result<()> {
        for (k, c) in clamped.iter_mut().enumerate() {
            *c = if k < self.m { x[k].max(0.0) } else { x[k] };
        }
        if self.d == 1 {
            let mut var = self.a[(0, 0)];
            if self.m == 1 {
                var += clamped[0] * self.alpha[0][(0, 0)];
            }
            let drift = self.b[0] + self.drift[(0, 0)] * clamped[0];
            x[0] += drift * h + var.max(0.0).sqrt() * dw[0];
            return Ok(());
        }
        let mut cov = self.a.clone();
        for (alpha, &xi) in self.alpha.iter().zip(clamped.iter()) {
            if xi > 0.0 {
                cov += alpha * xi;
            }
        }
        let root = psd_sqrt(&cov).ok_or_else(|| Error::Factorization(format!("at state {x:?}")))?;
        let xc = DVector::from_column_slice(clamped);
        let drift = &self.drift * xc;
        for k in 0..self.d {
            let mut noise = 0.0;
            for l in 0..self.d {
                noise += root[(k, l)] * dw[l];
            }
            x[k] += (self.b[k] + drift[k]) * h + noise;
        }
        Ok(())
    }
}

/// Brownian path on the uniform grid `0, h, ..., T`, built by midpoint
/// bisection in breadth-first order. When `steps` is a power of two the
/// coarse grid values are shared with every finer power-of-two grid for the
/// same random stream.
fn brownian_path(rng: &mut ChaCha8Rng, steps: usize, horizon: f64, dim: usize, w: &mut [f64]) {
    let h = horizon / steps as f64;
    w[..dim].fill(0.0);
    for c in 0..dim {
        let z: f64 = StandardNormal.sample(rng);
        w[steps * dim + c] = horizon.sqrt() * z;
    }
    let mut queue = std::collections::VecDeque::new();
    queue.push_back((0usize, steps));
    while let Some((l, r)) = queue.pop_front() {
        if r - l < 2 {
            continue;
        }
        let mid = (l + r) / 2;
        let (tl, tm, tr) = (l as f64 * h, mid as f64 * h, r as f64 * h);
        let weight = (tm - tl) / (tr - tl);
        let sd = ((tm - tl) * (tr - tm) / (tr - tl)).sqrt();
        for c in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            let (wl, wr) = (w[l * dim + c], w[r * dim + c]);
            w[mid * dim + c] = wl + weight * (wr - wl) + sd * z;
        }
        queue.push_back((l, mid));
        queue.push_back((mid, r));
    }
}

/// Runs the paths in fixed-size chunks; `observe(n, state, acc)` is called
/// after every step `n = 1..=steps` and the per-chunk accumulators are
/// merged in chunk order.
fn simulate<A, F, M>(
    model: &AffineModel,
    config: &SchemeConfig,
    paths: usize,
    seed: u64,
    init: impl Fn() -> A + Sync,
    observe: F,
    merge: M,
) -> Result<A>
where
    A: Send,
    F: Fn(usize, &[f64], &mut A) + Sync,
    M: Fn(&mut A, A),
{
    let dynamics = EulerDynamics::new(model)?;
    let d = model.dim();
    let steps = config.steps;
    let h = config.step_size();
    let chunks = paths.div_ceil(CHUNK_PATHS);
    let partials: Vec<Result<(A, usize)>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut acc = init();
            let mut w = vec![0.0; (steps + 1) * d];
            let mut x = vec![0.0; d];
            let mut clamped = vec![0.0; d];
            let mut dw = vec![0.0; d];
            let mut bad = 0;
            let start = chunk * CHUNK_PATHS;
            let end = (start + CHUNK_PATHS).min(paths);
            for path in start..end {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(path as u64);
                brownian_path(&mut rng, steps, config.horizon, d, &mut w);
                x.copy_from_slice(&config.x0);
                for n in 0..steps {
                    for c in 0..d {
                        dw[c] = w[(n + 1) * d + c] - w[n * d + c];
                    }
                    dynamics.step(&mut x, h, &dw, &mut clamped)?;
                    observe(n + 1, &x, &mut acc);
                }
                if x.iter().any(|v| !v.is_finite()) {
                    bad += 1;
                }
            }
            Ok((acc, bad))
        })
        .collect();
    let mut total = init();
    let mut bad = 0;
    for partial in partials {
        let (acc, b) = partial?;
        bad += b;
        merge(&mut total, acc);
    }
    if bad > 0 {
        return Err(Error::NonFinitePaths(bad));
    }
    Ok(total)
}

/// Full-truncation Euler estimate of `E[f(X_T)]`.
///
/// Path `i` draws from ChaCha8 seeded with `seed` on stream `i`, so the
/// estimate depends only on `(seed, paths, steps)`.
pub fn euler_mc(model: &AffineModel, f: &Polynomial, config: &SchemeConfig) -> Result<McEstimate> {
    config.validate(model)?;
    let Method::EulerMc { paths, seed } = config.method else {
        return Err(Error::InvalidArgument("euler_mc needs an EulerMc configuration".into()));
    };
    if f.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: f.dim(),
        });
    }
    let steps = config.steps;
    let (sum, sum_sq) = simulate(
        model,
        config,
        paths,
        seed,
        || (0.0, 0.0),
        |n, x, acc: &mut (f64, f64)| {
            if n == steps {
                let v = f.evaluate(x);
                acc.0 += v;
                acc.1 += v * v;
            }
        },
        |total, part| {
            total.0 += part.0;
            total.1 += part.1;
        },
    )?;
    Ok(mean_and_stderr(sum, sum_sq, paths))
}

fn mean_and_stderr(sum: f64, sum_sq: f64, count: usize) -> McEstimate {
    let n = count as f64;
    let mean = sum / n;
    let var = if count > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    McEstimate {
        estimate: mean,
        stderr: (var / n).sqrt(),
    }
}

/// Empirical `E|X̂_{t_n}|^α` against `e^{K t_n} F(x0) (1 + 5 stderr/mean)`, where
/// `F(x) = 1 + |x|^{2⌈α/2⌉}` and `K` is the growth constant of `F`.
#[derive(Clone, Debug, Serialize)]
pub struct MomentStability {
    pub alpha: u32,
    pub k: f64,
    /// Largest ratio of empirical moment to its bound over all steps.
    pub worst_ratio: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentStabilityReport {
    pub orders: Vec<MomentStability>,
}

impl MomentStabilityReport {
    pub fn passed(&self) -> bool {
        self.orders.iter().all(|o| o.passed)
    }
}

/// `(1 + Σ x_i²)^η - ... `: the weight `1 + |x|^{2η}` as a polynomial.
fn euclidean_weight(dim: usize, eta: usize) -> Polynomial {
    let mut square = Polynomial::zero(dim);
    for i in 0..dim {
        let xi = Polynomial::variable(dim, i);
        square = square.add(&xi.multiply(&xi).expect("dims")).expect("dims");
    }
    let mut power = Polynomial::constant(dim, 1.0);
    for _ in 0..eta {
        power = power.multiply(&square).expect("dims");
    }
    power.add(&Polynomial::constant(dim, 1.0)).expect("dims")
}

pub fn moment_stability_check(
    model: &AffineModel,
    config: &SchemeConfig,
    alpha_max: u32,
) -> Result<MomentStabilityReport> {
    config.validate(model)?;
    let Method::EulerMc { paths, seed } = config.method else {
        return Err(Error::InvalidArgument(
            "moment check needs an EulerMc configuration".into(),
        ));
    };
    if alpha_max == 0 {
        return Err(Error::InvalidArgument("alpha_max must be >= 1".into()));
    }
    let steps = config.steps;
    let orders = alpha_max as usize;
    // acc[(n-1) * orders + (α-1)] = (Σ|x|^α, Σ|x|^{2α})
    let acc = simulate(
        model,
        config,
        paths,
        seed,
        || vec![(0.0, 0.0); steps * orders],
        |n, x, acc: &mut Vec<(f64, f64)>| {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut p = 1.0;
            for a in 0..orders {
                p *= r;
                let slot = &mut acc[(n - 1) * orders + a];
                slot.0 += p;
                slot.1 += p * p;
            }
        },
        |total, part| {
            for (t, p) in total.iter_mut().zip(part) {
                t.0 += p.0;
                t.1 += p.1;
            }
        },
    )?;

    let h = config.step_size();
    let r0 = config.x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = Vec::with_capacity(orders);
    for alpha in 1..=alpha_max {
        let eta = (alpha as usize).div_ceil(2);
        let weight = euclidean_weight(model.dim(), eta);
        let k = weight_growth(model, &weight, eta)?.k;
        let f0 = 1.0 + r0.powi(2 * eta as i32);
        let mut worst: f64 = 0.0;
        for n in 1..=steps {
            let (s, sq) = acc[(n - 1) * orders + (alpha as usize - 1)];
            let est = mean_and_stderr(s, sq, paths);
            let rel = if est.estimate > 0.0 {
                est.stderr / est.estimate
            } else {
                0.0
            };
            let bound = (k * n as f64 * h).exp() * f0 * (1.0 + 5.0 * rel);
            worst = worst.max(est.estimate / bound);
        }
        out.push(MomentStability {
            alpha,
            k,
            worst_ratio: worst,
            passed: worst.is_finite() && worst <= 1.0,
        });
    }
    Ok(MomentStabilityReport { orders: out })
}

// ---------------------------------------------------------------------------
// Convergence studies

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub error: f64,
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// Sorted by `h`, largest first.
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log error` against `log h`; `None` when fewer
    /// than two errors exceed the floor (the scheme is exact).
    pub fitted_order: Option<f64>,
    pub intercept: Option<f64>,
    pub residual_max: Option<f64>,
    pub reference: f64,
}

/// Ordinary least squares `y = slope · x + intercept`; returns the largest residual too.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).abs())
        .fold(0.0, f64::max);
    (slope, intercept, residual)
}

impl ConvergenceReport {
    pub fn from_rows(mut rows: Vec<ConvergenceRow>, reference: f64) -> Self {
        rows.sort_by(|a, b| b.h.total_cmp(&a.h));
        let (xs, ys): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.error > ERROR_FLOOR)
            .map(|r| (r.h.ln(), r.error.ln()))
            .unzip();
        let (fitted_order, intercept, residual_max) = if xs.len() >= 2 {
            let (s, i, r) = fit_line(&xs, &ys);
            (Some(s), Some(i), Some(r))
        } else {
            (None, None, None)
        };
        ConvergenceReport {
            rows,
            fitted_order,
            intercept,
            residual_max,
            reference,
        }
    }

    /// CSV `h,error,stderr,log_h,log_error` with 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["h", "error", "stderr", "log_h", "log_error"])?;
        for r in &self.rows {
            w.write_record([
                format!("{:.16e}", r.h),
                format!("{:.16e}", r.error),
                r.stderr.map(|s| format!("{s:.16e}")).unwrap_or_default(),
                format!("{:.16e}", r.h.ln()),
                format!("{:.16e}", r.error.ln()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `{"fitted_order": ..., "intercept": ...}`; an exact scheme reports `"exact"`.
    pub fn summary_json(&self) -> serde_json::Value {
        match (self.fitted_order, self.intercept) {
            (Some(order), Some(intercept)) => serde_json::json!({
                "fitted_order": order,
                "intercept": intercept,
                "residual_max": self.residual_max,
                "reference": self.reference,
                "points": self.rows.len(),
            }),
            _ => serde_json::json!({
                "fitted_order": "exact",
                "intercept": null,
                "residual_max": null,
                "reference": self.reference,
                "points": self.rows.len(),
            }),
        }
    }
}

fn steps_for(horizon: f64, h: f64) -> Result<usize> {
    let steps = (horizon / h).round();
    if h.is_nan() || h <= 0.0 || steps < 1.0 || ((steps * h - horizon).abs() > 1e-9 * horizon) {
        return Err(Error::InvalidArgument(format!("h = {h} does not divide T = {horizon}")));
    }
    Ok(steps as usize)
}

/// Errors of the chosen method against `P_T f(x0)` over a grid of step sizes.
pub fn convergence_study(
    model: &AffineModel,
    f: &Polynomial,
    x0: &[f64],
    horizon: f64,
    h_grid: &[f64],
    method: &Method,
) -> Result<ConvergenceReport> {
    if h_grid.len() < 4 {
        return Err(Error::InvalidArgument("h grid needs at least 4 points".into()));
    }
    let hmax = h_grid.iter().copied().fold(f64::MIN, f64::max);
    let hmin = h_grid.iter().copied().fold(f64::MAX, f64::min);
    if hmax < 8.0 * hmin * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument("h grid must span at least a factor 8".into()));
    }
    let g = generator_matrix(model, f.degree())?;
    let reference = exact_semigroup(&g, f, horizon)?.evaluate(x0);
    let mut rows = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let steps = steps_for(horizon, h)?;
        let config = SchemeConfig {
            method: method.clone(),
            horizon,
            steps,
            x0: x0.to_vec(),
        };
        config.validate(model)?;
        let row = match *method {
            Method::Deterministic { nu } => {
                let q = step_operator(&g, h, nu)?;
                let value = propagate(&q, steps, f)?.evaluate(x0);
                ConvergenceRow {
                    h,
                    error: (value - reference).abs(),
                    stderr: None,
                }
            }
            Method::EulerMc { .. } => {
                let est = euler_mc(model, f, &config)?;
                ConvergenceRow {
                    h,
                    error: (est.estimate - reference).abs(),
                    stderr: Some(est.stderr),
                }
            }
        };
        rows.push(row);
    }
    Ok(ConvergenceReport::from_rows(rows, reference))
}
