//! State evolution for both models, evaluated with the realized θ* and ε.
//!
//! Sparse:  α*_t² = γ*_t² + ‖ε‖²,  τ*_t = argmin_τ E‖θ* − ST_τ(θ* + α*_t g)‖²,
//!          γ*_{t+1}² = that minimum.
//! Robust:  b*_t solves (b/(1+b)) (1/p) Σ_i P(|ε_i + γ*_t g_i| < λ(1+b)) = 1,
//!          α*_t² = (n b*/(p(1+b*)))² Σ_i E min{(ε_i + γ*_t g_i)², λ²(1+b*)²},
//!          γ*_{t+1}² = (p/n) α*_t².
//! Both start from γ*_1 = ‖θ*‖₂ and use g ~ N(0, I/n).

use std::fmt::Write as _;

use crate::amp::{AmpTrace, Mode};
use crate::denoise::{active_prob_sd, huber_moment, st_risk_coord};
use crate::linalg;
use crate::model::LinearModel;
use crate::optim::{bisect_increasing, GridGolden};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseSeStep {
    pub alpha: f64,
    pub tau_star: f64,
    pub gamma_next: f64,
}

/// One sparse step. τ* is searched on [0, ‖θ*‖∞ + 20 α/√n] with the same
/// grid + golden scheme used for τ_t.
pub fn se_step_sparse(
    theta_star: &[f64],
    eps_norm2: f64,
    gamma_t: f64,
    n: usize,
    search: &GridGolden,
) -> Result<SparseSeStep> {
    if !(gamma_t >= 0.0 && gamma_t.is_finite()) {
        return Err(Error::param("gamma_t", format!("must be finite and >= 0, got {gamma_t}")));
    }
    let alpha = (gamma_t * gamma_t + eps_norm2).sqrt();
    if alpha == 0.0 {
        return Ok(SparseSeStep {
            alpha,
            tau_star: 0.0,
            gamma_next: 0.0,
        });
    }
    let s = alpha / (n as f64).sqrt();
    let cap = linalg::max_abs(theta_star) + 20.0 * s;
    // the risk depends on |θ_j| only; typical signals take few magnitudes
    let groups = magnitude_groups(theta_star);
    let risk = |tau: f64| groups.iter().map(|&(t, m)| m * st_risk_coord(t, s, tau)).sum::<f64>();
    let best = search.minimize(risk, 0.0, cap)?;
    let gamma2 = risk(best.x);
    Ok(SparseSeStep {
        alpha,
        tau_star: best.x,
        gamma_next: gamma2.max(0.0).sqrt(),
    })
}

/// Distinct |θ_j| with their multiplicities.
fn magnitude_groups(theta: &[f64]) -> Vec<(f64, f64)> {
    let mut mags: Vec<f64> = theta.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let mut groups: Vec<(f64, f64)> = Vec::new();
    for m in mags {
        match groups.last_mut() {
            Some((v, c)) if *v == m => *c += 1.0,
            _ => groups.push((m, 1.0)),
        }
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustSeStep {
    pub b_star: f64,
    pub alpha: f64,
    pub gamma_next: f64,
    /// Calibration left side minus 1 at b*.
    pub calibration_residual: f64,
}

/// (b/(1+b)) (1/p) Σ_i P(|ε_i + γ g_i| < λ(1+b)), continuous and increasing in b.
pub fn robust_calibration(eps: &[f64], lambda: f64, n: usize, p: usize, gamma: f64, b: f64) -> f64 {
    let s = gamma / (n as f64).sqrt();
    let c = lambda * (1.0 + b);
    let total: f64 = eps.iter().map(|&e| active_prob_sd(e, s, c)).sum();
    b / (1.0 + b) * total / p as f64
}

pub fn se_step_robust(eps: &[f64], lambda: f64, n: usize, p: usize, gamma_t: f64) -> Result<RobustSeStep> {
    if p >= n {
        return Err(Error::param("p", format!("robust mode needs p < n, got p = {p}, n = {n}")));
    }
    if !(gamma_t > 0.0 && gamma_t.is_finite()) {
        return Err(Error::param("gamma_t", format!("must be finite and > 0, got {gamma_t}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("must be finite and > 0, got {lambda}")));
    }
    let cal = |b: f64| robust_calibration(eps, lambda, n, p, gamma_t, b) - 1.0;
    // the left side is below (b/(1+b)) n/p, so b* > p/(n − p)
    let mut lo = p as f64 / (n - p) as f64;
    let mut hi = 2.0 * lo;
    while cal(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::CalibrationFailure { lo, hi });
        }
    }
    let (lo, hi) = bisect_increasing(cal, lo, hi, 1e-16);
    let (rl, rh) = (cal(lo), cal(hi));
    let (b, resid) = if rl.abs() <= rh.abs() { (lo, rl) } else { (hi, rh) };
    let m = huber_moment(eps, gamma_t, lambda * (1.0 + b), n)?;
    let scale = n as f64 * b / (p as f64 * (1.0 + b));
    let alpha = scale * m.sqrt();
    Ok(RobustSeStep {
        b_star: b,
        alpha,
        gamma_next: (p as f64 / n as f64).sqrt() * alpha,
        calibration_residual: resid,
    })
}

/// Inputs of a state-evolution recursion.
#[derive(Debug, Clone)]
pub enum SeProblem<'a> {
    Sparse {
        theta_star: &'a [f64],
        eps_norm2: f64,
        n: usize,
        search: GridGolden,
    },
    Robust {
        eps: &'a [f64],
        lambda: f64,
        n: usize,
        p: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeEntry {
    pub t: usize,
    pub alpha_star: f64,
    pub gamma_star: f64,
    /// τ*_t or b*_t
    pub inner_param: f64,
    /// Robust calibration residual at b*_t (0 for sparse).
    pub calibration_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub alpha: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub converged: bool,
    /// |Δγ²_{t+1}| / |Δγ²_t| for t = 2, 3, …, with Δγ²_t = γ*_t² − γ*_{t−1}².
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeTrace {
    pub mode: Mode,
    /// Entries for t = 1, …, t_max.
    pub entries: Vec<SeEntry>,
    /// γ*_{t_max + 1}
    pub gamma_last: f64,
    pub fixed_point: Option<FixedPoint>,
}

impl<'a> SeProblem<'a> {
    pub fn from_model(model: &'a LinearModel, mode: Mode) -> Self {
        match mode {
            Mode::Sparse => SeProblem::Sparse {
                theta_star: &model.signal,
                eps_norm2: model.noise_norm2(),
                n: model.n,
                search: GridGolden::default(),
            },
            Mode::Robust { lambda } => SeProblem::Robust {
                eps: &model.noise,
                lambda,
                n: model.n,
                p: model.p,
            },
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            SeProblem::Sparse { .. } => Mode::Sparse,
            SeProblem::Robust { lambda, .. } => Mode::Robust { lambda: *lambda },
        }
    }

    /// (α*_t, inner parameter, γ*_{t+1}, calibration residual)
    pub fn step(&self, t: usize, gamma: f64) -> Result<SeEntry> {
        let tag = |e: Error| match e {
            Error::NumericFailure { what, .. } => Error::NumericFailure { iteration: t, what },
            other => other,
        };
        match self {
            SeProblem::Sparse {
                theta_star,
                eps_norm2,
                n,
                search,
            } => {
                let s = se_step_sparse(theta_star, *eps_norm2, gamma, *n, search).map_err(tag)?;
                Ok(SeEntry {
                    t,
                    alpha_star: s.alpha,
                    gamma_star: s.gamma_next,
                    inner_param: s.tau_star,
                    calibration_residual: 0.0,
                })
            }
            SeProblem::Robust { eps, lambda, n, p } => {
                let s = se_step_robust(eps, *lambda, *n, *p, gamma).map_err(tag)?;
                Ok(SeEntry {
                    t,
                    alpha_star: s.alpha,
                    gamma_star: s.gamma_next,
                    inner_param: s.b_star,
                    calibration_residual: s.calibration_residual,
                })
            }
        }
    }

    /// Runs t = 1, …, t_max starting from γ*_1 = `gamma_1` (‖θ*‖₂).
    pub fn run(&self, gamma_1: f64, t_max: usize) -> Result<SeTrace> {
        let mut entries = Vec::with_capacity(t_max);
        let mut gamma = gamma_1;
        for t in 1..=t_max {
            let e = self.step(t, gamma)?;
            // `step` reports γ*_{t+1} in gamma_star; store γ*_t instead
            entries.push(SeEntry { gamma_star: gamma, ..e });
            gamma = e.gamma_star;
            if !gamma.is_finite() {
                return Err(Error::NumericFailure {
                    iteration: t,
                    what: "gamma_star".into(),
                });
            }
        }
        Ok(SeTrace {
            mode: self.mode(),
            entries,
            gamma_last: gamma,
            fixed_point: None,
        })
    }

    /// Iterates until |γ*_{t+1} − γ*_t| < tol or t = t_cap.
    pub fn fixed_point(&self, gamma_1: f64, tol: f64, t_cap: usize) -> Result<SeTrace> {
        if !(tol > 0.0) {
            return Err(Error::param("tol", "must be > 0"));
        }
        let mut entries = Vec::new();
        let mut gamma = gamma_1;
        let mut converged = false;
        for t in 1..=t_cap.max(1) {
            let e = self.step(t, gamma)?;
            entries.push(SeEntry { gamma_star: gamma, ..e });
            let next = e.gamma_star;
            let done = (next - gamma).abs() < tol;
            gamma = next;
            if done {
                converged = true;
                break;
            }
        }
        let mut g2: Vec<f64> = entries.iter().map(|e| e.gamma_star * e.gamma_star).collect();
        g2.push(gamma * gamma);
        let ratios = contraction_ratios(&g2);
        let last = entries.last().unwrap();
        let fp = FixedPoint {
            alpha: last.alpha_star,
            gamma,
            iterations: entries.len(),
            converged,
            ratios,
        };
        Ok(SeTrace {
            mode: self.mode(),
            entries,
            gamma_last: gamma,
            fixed_point: Some(fp),
        })
    }
}

/// `g2[i]` is γ*_{i+1}²; returns |Δ_{t+1}|/|Δ_t| for t ≥ 2.
pub fn contraction_ratios(g2: &[f64]) -> Vec<f64> {
    let deltas: Vec<f64> = g2.windows(2).map(|w| w[1] - w[0]).collect();
    // deltas[i] = Δ_{i+2}
    deltas
        .windows(2)
        .map(|w| if w[0] == 0.0 { 0.0 } else { (w[1] / w[0]).abs() })
        .collect()
}

pub fn run_se(model: &LinearModel, mode: Mode, t_max: usize) -> Result<SeTrace> {
    SeProblem::from_model(model, mode).run(model.signal_norm(), t_max)
}

impl SeTrace {
    /// γ*_t for t in 1..=t_max + 1.
    pub fn gamma(&self, t: usize) -> f64 {
        if t == self.entries.len() + 1 {
            self.gamma_last
        } else {
            self.entries[t - 1].gamma_star
        }
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.entries[t - 1].alpha_star
    }

    /// CSV with header `t,alpha_star,gamma_star,inner_param`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,alpha_star,gamma_star,inner_param\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{}", e.t, e.alpha_star, e.gamma_star, e.inner_param);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalSeRow {
    pub t: usize,
    /// ‖γ_t‖ = ‖F_t(β_t)‖₂
    pub gamma_emp: f64,
    /// ‖α_t‖ = ‖G_t(s_t)‖₂
    pub alpha_emp: f64,
    pub gamma_star: f64,
    pub alpha_star: f64,
    /// |‖γ_t‖² − γ*_t²|
    pub gamma2_gap: f64,
    /// |‖α_t‖² − α*_t²|
    pub alpha2_gap: f64,
}

/// Pairs the empirical norms of an AMP trace with the SE prediction.
pub fn empirical_se(trace: &AmpTrace, se: &SeTrace) -> Vec<EmpiricalSeRow> {
    let t_max = trace.t_max().min(se.entries.len());
    (1..=t_max)
        .map(|t| {
            let st = &trace.states[t];
            let (ge, ae) = (st.gamma_norm, st.alpha_norm);
            let (gs, as_) = (se.gamma(t), se.alpha(t));
            EmpiricalSeRow {
                t,
                gamma_emp: ge,
                alpha_emp: ae,
                gamma_star: gs,
                alpha_star: as_,
                gamma2_gap: (ge * ge - gs * gs).abs(),
                alpha2_gap: (ae * ae - as_ * as_).abs(),
            }
        })
        .collect()
}
