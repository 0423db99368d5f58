//! Weighted nonlinear least squares and the model fits built on it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::fluorescence::DecimatedCurve;
use crate::error::{Error, Result};
use crate::gates::flip_probability;

/// Converged least-squares solution. `covariance` is `(JᵀJ)⁻¹` of the
/// weighted residuals, i.e. it assumes the supplied errors are correct.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub params: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub dof: usize,
}

impl LeastSquares {
    pub fn se(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }
}

fn jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: &[f64], r0: &[f64]) -> DMatrix<f64> {
    let m = r0.len();
    let n = x.len();
    let mut j = DMatrix::zeros(m, n);
    for k in 0..n {
        let h = 1e-6 * x[k].abs().max(1e-6);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += h;
        xm[k] -= h;
        let (rp, rm) = (f(&xp), f(&xm));
        for i in 0..m {
            j[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    j
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Levenberg–Marquardt on weighted residuals `f(x)` (central-difference
/// Jacobian).
pub fn levenberg_marquardt<F: Fn(&[f64]) -> Vec<f64>>(f: F, x0: &[f64]) -> Result<LeastSquares> {
    let mut x = x0.to_vec();
    let mut r = f(&x);
    let mut cost = sum_sq(&r);
    if !cost.is_finite() {
        return Err(Error::Fit("non-finite residuals at the starting point".into()));
    }
    let n = x.len();
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let j = jacobian(&f, &x, &r);
        let jtj = j.tr_mul(&j);
        let g = j.tr_mul(&DVector::from_column_slice(&r));
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rn = f(&xn);
            let cn = sum_sq(&rn);
            if cn.is_finite() && cn <= cost {
                let rel = (cost - cn) / cost.max(1e-300);
                x = xn;
                r = rn;
                cost = cn;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < 1e-12 || step.norm() < 1e-12 * (1.0 + x.iter().map(|v| v.abs()).sum::<f64>()) {
                    return finish(&f, x, r, cost);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    finish(&f, x, r, cost)
}

fn finish<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: Vec<f64>, r: Vec<f64>, cost: f64) -> Result<LeastSquares> {
    let j = jacobian(f, &x, &r);
    let covariance = j
        .tr_mul(&j)
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular normal matrix: parameters are not determined by the data".into()))?;
    let dof = r.len().saturating_sub(x.len());
    Ok(LeastSquares { params: x, covariance, chi2: cost, dof })
}

/// Weighted linear least squares `y ≈ X β`; returns `(β, cov)`.
pub fn linear_least_squares(x: &DMatrix<f64>, y: &DVector<f64>, sigma: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let w = DVector::from_iterator(sigma.len(), sigma.iter().map(|s| 1.0 / s));
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let yw = y.component_mul(&w);
    let normal = xw.tr_mul(&xw);
    let cov = normal
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular design matrix".into()))?;
    Ok((&cov * xw.tr_mul(&yw), cov))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Value {
    pub value: f64,
    pub se: f64,
}

impl Value {
    pub fn half_width(&self) -> f64 {
        2.0 * self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Rate extrapolated to `t = 0` (counts/µs).
    pub initial_rate: Value,
    /// Decay time (µs).
    pub decay_time: Value,
    pub floor: Option<Value>,
    pub chi2_per_dof: f64,
    pub warning: Option<String>,
}

/// Fit `a·e^(−t/τ)` (plus a constant floor if `with_floor`). `τ` is first
/// located on a log grid by profiling the linear parameters, then refined.
pub fn fit_exponential_decay(curve: &DecimatedCurve, with_floor: bool) -> Result<DecayFit> {
    let n = curve.times.len();
    if n < 10 {
        return Err(Error::InsufficientData(format!("exponential fit needs >= 10 bins, got {n}")));
    }
    if !(curve.rates[0] > 0.0) {
        return Err(Error::Fit("initial bin has no counts".into()));
    }
    let t = &curve.times;
    let span = t[n - 1] - t[0];
    let dt = (span / (n - 1) as f64).max(1e-12);
    let (tau_lo, tau_hi) = (dt / 10.0, 100.0 * span);
    let y = DVector::from_column_slice(&curve.rates);
    let design = |tau: f64| {
        let cols = if with_floor { 2 } else { 1 };
        let mut x = DMatrix::zeros(n, cols);
        for i in 0..n {
            x[(i, 0)] = (-t[i] / tau).exp();
            if with_floor {
                x[(i, 1)] = 1.0;
            }
        }
        x
    };
    let profile = |tau: f64| -> f64 {
        match linear_least_squares(&design(tau), &y, &curve.errors) {
            Ok((b, _)) => {
                let fit = design(tau) * b;
                (0..n).map(|i| ((y[i] - fit[i]) / curve.errors[i]).powi(2)).sum()
            }
            Err(_) => f64::INFINITY,
        }
    };
    let grid: Vec<f64> = (0..=400).map(|k| tau_lo * (tau_hi / tau_lo).powf(k as f64 / 400.0)).collect();
    let (best_k, _) = grid
        .iter()
        .enumerate()
        .map(|(k, &tau)| (k, profile(tau)))
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let tau0 = grid[best_k];
    let (b0, cov0) = linear_least_squares(&design(tau0), &y, &curve.errors)?;
    // no resolvable decay: amplitude consistent with zero or τ unbounded
    if best_k == grid.len() - 1 || b0[0].abs() < 2.0 * cov0[(0, 0)].sqrt() {
        let (b, _) = linear_least_squares(&design(tau_hi), &y, &curve.errors)?;
        return Ok(DecayFit {
            initial_rate: Value { value: b[0] + if with_floor { b[1] } else { 0.0 }, se: f64::NAN },
            decay_time: Value { value: tau_hi, se: f64::INFINITY },
            floor: with_floor.then_some(Value { value: b[1], se: f64::NAN }),
            chi2_per_dof: f64::NAN,
            warning: Some("no decay resolved: decay time ran to the grid maximum".into()),
        });
    }
    let model = |p: &[f64], t: f64| p[0] * (-t / p[1]).exp() + if with_floor { p[2] } else { 0.0 };
    let solve = |sigma: &[f64], x0: &[f64]| {
        let resid = |p: &[f64]| -> Vec<f64> { (0..n).map(|i| (y[i] - model(p, t[i])) / sigma[i]).collect() };
        levenberg_marquardt(resid, x0)
    };
    let mut x0 = vec![b0[0], tau0];
    if with_floor {
        x0.push(b0[1]);
    }
    let mut ls = solve(&curve.errors, &x0)?;
    // Weights from observed counts bias low-count bins; with a known
    // exposure, reweight from the model prediction (Pearson χ²).
    if let Some(e) = curve.exposure.filter(|e| *e > 0.0) {
        for _ in 0..4 {
            let sigma: Vec<f64> = t.iter().map(|&ti| (model(&ls.params, ti) * e).max(1.0).sqrt() / e).collect();
            ls = solve(&sigma, &ls.params)?;
        }
    }
    let chi2_per_dof = ls.chi2 / ls.dof.max(1) as f64;
    let warning = (ls.params[1] <= 0.0 || chi2_per_dof > 5.0)
        .then(|| format!("poor exponential fit: χ²/dof = {chi2_per_dof:.2}"));
    Ok(DecayFit {
        initial_rate: Value { value: ls.params[0], se: ls.se(0) },
        decay_time: Value { value: ls.params[1], se: ls.se(1) },
        floor: with_floor.then(|| Value { value: ls.params[2], se: ls.se(2) }),
        chi2_per_dof,
        warning,
    })
}

/// A detuned two-level contribution to a Rabi curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiLine {
    pub detuning: f64,
    pub weight: f64,
}

/// `(1/Σw) Σ w_j p(Ω, δ_j, t)`.
pub fn multi_line_flip(lines: &[RabiLine], rabi: f64, t: f64) -> f64 {
    let wsum: f64 = lines.iter().map(|l| l.weight).sum();
    lines.iter().map(|l| l.weight * flip_probability(rabi, l.detuning, t)).sum::<f64>() / wsum
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiFit {
    pub rabi: Value,
    /// Max − min of the fitted curve over the sampled durations.
    pub visibility: Value,
    pub offset: Value,
    pub amplitude: Value,
    pub chi2_per_dof: f64,
}

/// Fit `P(t) = c − A · multi_line_flip(Ω, t)` for `(c, A, Ω)`.
pub fn fit_rabi(durations: &[f64], p: &[f64], errors: &[f64], lines: &[RabiLine]) -> Result<RabiFit> {
    let n = durations.len();
    if n != p.len() || n != errors.len() || n < 4 || lines.is_empty() {
        return Err(Error::Fit("Rabi fit needs >= 4 points with errors and at least one line".into()));
    }
    let spread = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - p.iter().cloned().fold(f64::INFINITY, f64::min);
    let noise = errors.iter().sum::<f64>() / n as f64;
    if !(spread > 2.0 * noise) {
        return Err(Error::Fit("flat data: no oscillation above noise".into()));
    }
    let t_max = durations.iter().cloned().fold(0.0, f64::max);
    let y = DVector::from_column_slice(p);
    let design = |rabi: f64| {
        let mut x = DMatrix::zeros(n, 2);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = -multi_line_flip(lines, rabi, durations[i]);
        }
        x
    };
    let chi2 = |rabi: f64| -> f64 {
        match linear_least_squares(&design(rabi), &y, errors) {
            Ok((b, _)) => {
                let fit = design(rabi) * b;
                (0..n).map(|i| ((y[i] - fit[i]) / errors[i]).powi(2)).sum()
            }
            Err(_) => f64::INFINITY,
        }
    };
    // Ω between a quarter period and ~n/2 periods over the sampled range
    let (lo, hi) = (0.25 / t_max.max(1e-9), 0.5 * n as f64 / t_max.max(1e-9));
    let grid: Vec<f64> = (0..=2000).map(|k| lo + (hi - lo) * k as f64 / 2000.0).collect();
    let rabi0 = grid.iter().cloned().map(|r| (r, chi2(r))).fold((lo, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a }).0;
    let (b0, _) = linear_least_squares(&design(rabi0), &y, errors)?;
    let resid = |q: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| (y[i] - (q[0] - q[1] * multi_line_flip(lines, q[2], durations[i]))) / errors[i])
            .collect()
    };
    let ls = levenberg_marquardt(resid, &[b0[0], b0[1], rabi0])?;
    let dense: Vec<f64> = {
        let t_min = durations.iter().cloned().fold(f64::INFINITY, f64::min);
        // sampled durations included so the fitted range is never below the data's
        (0..=1000).map(|k| t_min + (t_max - t_min) * k as f64 / 1000.0).chain(durations.iter().copied()).collect()
    };
    let vis = |q: &[f64]| -> f64 {
        let v: Vec<f64> = dense.iter().map(|&t| q[1] * multi_line_flip(lines, q[2], t)).collect();
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let v0 = vis(&ls.params);
    let grad: Vec<f64> = (0..3)
        .map(|k| {
            let h = 1e-6 * ls.params[k].abs().max(1e-6);
            let mut qp = ls.params.clone();
            let mut qm = ls.params.clone();
            qp[k] += h;
            qm[k] -= h;
            (vis(&qp) - vis(&qm)) / (2.0 * h)
        })
        .collect();
    let g = DVector::from_vec(grad);
    let var = (g.transpose() * &ls.covariance * &g)[(0, 0)];
    Ok(RabiFit {
        rabi: Value { value: ls.params[2].abs(), se: ls.se(2) },
        visibility: Value { value: v0, se: var.max(0.0).sqrt() },
        offset: Value { value: ls.params[0], se: ls.se(0) },
        amplitude: Value { value: ls.params[1], se: ls.se(1) },
        chi2_per_dof: ls.chi2 / ls.dof.max(1) as f64,
    })
}

/// Linear fit `y = c + a·cos(2πνt)` at a known frequency; returns `(c, a)`.
pub fn fit_cosine(times: &[f64], y: &[f64], errors: &[f64], frequency: f64) -> Result<(Value, Value)> {
    let n = times.len();
    let mut x = DMatrix::zeros(n, 2);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = (2.0 * std::f64::consts::PI * frequency * times[i]).cos();
    }
    let (b, cov) = linear_least_squares(&x, &DVector::from_column_slice(y), errors)?;
    Ok((Value { value: b[0], se: cov[(0, 0)].sqrt() }, Value { value: b[1], se: cov[(1, 1)].sqrt() }))
}
