//! The AMP recursion
//!
//! ```text
//! r_t     = y − X f_t(θ_t) + ⟨f_t'(θ_t)⟩ ⟨g_{t−1}'(r_{t−1})⟩⁻¹ g_{t−1}(r_{t−1})
//! θ_{t+1} = ⟨g_t'(r_t)⟩⁻¹ Xᵀ g_t(r_t) + f_t(θ_t)
//! ```
//!
//! with ⟨v⟩ = (1/n) Σ v_i for every vector length, f_1 ≡ 0 and g_0 ≡ 0.
//! Sparse mode uses f_t = ST_{τ_t}, g_t = identity and picks τ_t by minimizing
//! ‖r_t(τ)‖₂. Robust mode uses f_t = identity, g_t = (n/p) Ψ(·, b_t) and
//! calibrates b_t so that ⟨g_t'(r_t)⟩ = 1.
//!
//! The error form in terms of β_t = θ_t − θ*, s_t = r_t − ε is
//!
//! ```text
//! s_t     = X F_t(β_t) − ⟨F_t'(β_t)⟩ G_{t−1}(s_{t−1})
//! β_{t+1} = Xᵀ G_t(s_t) − ⟨G_t'(s_t)⟩ F_t(β_t)
//! ```
//!
//! with F_t(β) = θ* − f_t(β + θ*) and G_t(s) = ⟨g_t'(r_t)⟩⁻¹ g_t(s + ε). The
//! normalizer inside G_t is frozen at the realized r_t.

use serde::{Deserialize, Serialize};

use crate::denoise::{big_psi, big_psi_deriv, st, st_deriv};
use crate::error::ensure_finite;
use crate::linalg::{self, Matrix};
use crate::model::LinearModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Mode {
    Sparse,
    Robust { lambda: f64 },
}

impl Mode {
    pub fn is_sparse(&self) -> bool {
        matches!(self, Mode::Sparse)
    }
}

/// f_t, applied to θ_t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalFn {
    Zero,
    SoftThreshold(f64),
    Identity,
}

impl SignalFn {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            SignalFn::Zero => 0.0,
            SignalFn::SoftThreshold(tau) => st(x, tau),
            SignalFn::Identity => x,
        }
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            SignalFn::Zero => 0.0,
            SignalFn::SoftThreshold(tau) => st_deriv(x, tau),
            SignalFn::Identity => 1.0,
        }
    }
}

/// g_t, applied to r_t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualFn {
    Zero,
    Identity,
    /// scale · Ψ(x, b) with Huber knee λ; scale = n/p.
    Huber { lambda: f64, b: f64, scale: f64 },
}

impl ResidualFn {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            ResidualFn::Zero => 0.0,
            ResidualFn::Identity => x,
            ResidualFn::Huber { lambda, b, scale } => scale * big_psi(x, b, lambda),
        }
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            ResidualFn::Zero => 0.0,
            ResidualFn::Identity => 1.0,
            ResidualFn::Huber { lambda, b, scale } => scale * big_psi_deriv(x, b, lambda),
        }
    }
}

/// The scalar functions used at one iteration, enough to evaluate F_t and G_t
/// anywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepFns {
    pub f: SignalFn,
    pub g: ResidualFn,
    /// ⟨g_t'(r_t)⟩ at the realized residual.
    pub g_norm: f64,
}

impl StepFns {
    /// F_t(β) = θ* − f_t(β + θ*)
    pub fn big_f(&self, beta: &[f64], theta_star: &[f64]) -> Vec<f64> {
        beta.iter()
            .zip(theta_star)
            .map(|(b, t)| t - self.f.apply(b + t))
            .collect()
    }

    pub fn big_f_deriv(&self, beta: &[f64], theta_star: &[f64]) -> Vec<f64> {
        beta.iter()
            .zip(theta_star)
            .map(|(b, t)| -self.f.deriv(b + t))
            .collect()
    }

    /// G_t(s) = g_t(s + ε) / ⟨g_t'(r_t)⟩
    pub fn big_g(&self, s: &[f64], eps: &[f64]) -> Vec<f64> {
        if self.g == ResidualFn::Zero {
            return vec![0.0; s.len()];
        }
        s.iter()
            .zip(eps)
            .map(|(x, e)| self.g.apply(x + e) / self.g_norm)
            .collect()
    }

    pub fn big_g_deriv(&self, s: &[f64], eps: &[f64]) -> Vec<f64> {
        if self.g == ResidualFn::Zero {
            return vec![0.0; s.len()];
        }
        s.iter()
            .zip(eps)
            .map(|(x, e)| self.g.deriv(x + e) / self.g_norm)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpOptions {
    /// Tolerance on |⟨g_t'⟩ − 1| in robust calibration.
    pub calibration_tol: f64,
    /// Keep every θ_t, r_t. When false only a two-step window is retained and
    /// the decomposition cannot be built from the trace.
    pub keep_history: bool,
}

impl Default for AmpOptions {
    fn default() -> Self {
        AmpOptions {
            calibration_tol: 1e-6,
            keep_history: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub t: usize,
    /// θ_t
    pub theta: Vec<f64>,
    /// r_t
    pub r: Vec<f64>,
    /// τ_t (sparse, t ≥ 2) or b_t (robust, t ≥ 1).
    pub param: Option<f64>,
    pub fns: StepFns,
    /// ⟨f_t'(θ_t)⟩
    pub f_prime_mean: f64,
    /// ⟨f_t'⟩ ⟨g_{t−1}'⟩⁻¹, the coefficient of g_{t−1}(r_{t−1}) in r_t.
    pub onsager: f64,
    /// b_t sits on a jump of the count function (robust only).
    pub jump: bool,
    /// ‖θ_t − θ*‖₂
    pub risk: f64,
    /// ‖F_t(β_t)‖₂
    pub gamma_norm: f64,
    /// ‖G_t(s_t)‖₂
    pub alpha_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpTrace {
    pub mode: Mode,
    pub n: usize,
    pub p: usize,
    /// States t = 0, …, t_max; state 0 holds θ_0 = 0, r_0 = 0.
    pub states: Vec<AmpState>,
    /// θ_{t_max + 1}
    pub theta_last: Vec<f64>,
    pub full_history: bool,
}

impl AmpTrace {
    pub fn t_max(&self) -> usize {
        self.states.len() - 1
    }

    /// θ_t for t in 0..=t_max + 1.
    pub fn theta(&self, t: usize) -> &[f64] {
        if t == self.states.len() {
            &self.theta_last
        } else {
            &self.states[t].theta
        }
    }

    pub fn beta(&self, t: usize, model: &LinearModel) -> Vec<f64> {
        linalg::sub(self.theta(t), &model.signal)
    }

    pub fn s(&self, t: usize, model: &LinearModel) -> Vec<f64> {
        linalg::sub(&self.states[t].r, &model.noise)
    }

    /// Parameters τ_t / b_t in trace order (None where not defined).
    pub fn params(&self) -> Vec<Option<f64>> {
        self.states.iter().map(|s| s.param).collect()
    }

    pub fn fns(&self) -> Vec<StepFns> {
        self.states.iter().map(|s| s.fns).collect()
    }

    fn require_history(&self) -> Result<()> {
        if self.full_history {
            Ok(())
        } else {
            Err(Error::param("trace", "low-memory trace has no history"))
        }
    }
}

/// ‖r(τ)‖₂ for r(τ) = y − X ST_τ(θ) + (#{|θ_j| > τ}/n) h.
///
/// On each interval between consecutive |θ_j| the active set is fixed and
/// r(τ) = c + τ d is affine, so ‖r(τ)‖² is a quadratic whose coefficients are
/// precomputed for all segments in O(np). Evaluation is then a binary search.
pub struct TauObjective {
    mags_desc: Vec<f64>,
    // per active-set size m: (‖c‖², ⟨c, d⟩, ‖d‖²)
    quad: Vec<[f64; 3]>,
}

impl TauObjective {
    /// `xt` is Xᵀ stored row-major (p × n), so its rows are the columns of X.
    pub fn new(xt: &Matrix, y: &[f64], theta: &[f64], h: &[f64]) -> Self {
        let n = y.len();
        let mut order: Vec<usize> = (0..theta.len()).filter(|&j| theta[j] != 0.0).collect();
        order.sort_by(|&a, &b| theta[b].abs().total_cmp(&theta[a].abs()).then(a.cmp(&b)));
        let mags_desc: Vec<f64> = order.iter().map(|&j| theta[j].abs()).collect();

        let mut c = y.to_vec();
        let mut d = vec![0.0; n];
        let hh = linalg::norm2(h);
        let mut quad = Vec::with_capacity(order.len() + 1);
        let push = |m: usize, c: &[f64], d: &[f64], quad: &mut Vec<[f64; 3]>| {
            let w = m as f64 / n as f64;
            let cc = linalg::norm2(c);
            let ch = linalg::dot(c, h);
            let cd = linalg::dot(c, d);
            let hd = linalg::dot(h, d);
            let dd = linalg::norm2(d);
            quad.push([cc + 2.0 * w * ch + w * w * hh, cd + w * hd, dd]);
        };
        push(0, &c, &d, &mut quad);
        for (m, &j) in order.iter().enumerate() {
            let col = xt.row(j);
            linalg::axpy(-theta[j], col, &mut c);
            linalg::axpy(theta[j].signum(), col, &mut d);
            push(m + 1, &c, &d, &mut quad);
        }
        TauObjective { mags_desc, quad }
    }

    pub fn upper(&self) -> f64 {
        self.mags_desc.first().copied().unwrap_or(0.0)
    }

    pub fn eval(&self, tau: f64) -> f64 {
        let m = self.mags_desc.partition_point(|&v| v > tau);
        let [a, b, c] = self.quad[m];
        (a + 2.0 * tau * b + tau * tau * c).max(0.0).sqrt()
    }

    /// Exact minimizer over [0, upper]. With m active coordinates the
    /// objective is a quadratic on [|θ|_(m+1), |θ|_(m)); candidates are the
    /// segment ends and interior vertices. Ends are pulled inside their
    /// segment by a relative `BREAK_MARGIN`, so no |θ_j| sits exactly on the
    /// returned τ and rounding of θ cannot flip its active set. Ties go to
    /// the smallest τ.
    pub fn argmin(&self) -> TauChoice {
        let mut best = TauChoice {
            tau: 0.0,
            objective: self.eval(0.0),
        };
        let mut consider = |tau: f64| {
            let v = self.eval(tau);
            if v < best.objective || (v == best.objective && tau < best.tau) {
                best = TauChoice { tau, objective: v };
            }
        };
        let len = self.mags_desc.len();
        for m in 1..=len {
            let hi = self.mags_desc[m - 1];
            let lo = if m == len { 0.0 } else { self.mags_desc[m] };
            let (lo_in, hi_in) = (lo * (1.0 + BREAK_MARGIN), hi * (1.0 - BREAK_MARGIN));
            if lo_in >= hi_in {
                if lo < hi {
                    consider(0.5 * (lo + hi));
                }
                continue;
            }
            consider(lo_in);
            consider(hi_in);
            let [_, b, c] = self.quad[m];
            if c > 0.0 {
                let vertex = -b / c;
                if vertex > lo_in && vertex < hi_in {
                    consider(vertex);
                }
            }
        }
        if len > 0 {
            // nothing active; the objective is constant from here on
            consider(self.upper() * (1.0 + BREAK_MARGIN));
        }
        best
    }
}

/// Relative distance kept between a selected τ_t or b_t and the nearest
/// breakpoint of its piecewise objective.
const BREAK_MARGIN: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauChoice {
    pub tau: f64,
    pub objective: f64,
}

/// τ minimizing ‖r(τ)‖₂ over [0, ‖θ‖∞]; `r_prev` is the memory vector
/// ⟨g_{t−1}'⟩⁻¹ g_{t−1}(r_{t−1}) (equal to r_{t−1} in sparse mode).
pub fn select_tau(xt: &Matrix, y: &[f64], theta: &[f64], r_prev: &[f64]) -> Result<TauChoice> {
    let choice = TauObjective::new(xt, y, theta, r_prev).argmin();
    if choice.objective.is_finite() {
        Ok(choice)
    } else {
        Err(Error::NumericFailure {
            iteration: 0,
            what: format!("tau objective is {}", choice.objective),
        })
    }
}

/// Direct evaluation of ‖r(τ)‖₂, independent of the segment bookkeeping.
pub fn tau_objective_direct(x: &Matrix, y: &[f64], theta: &[f64], r_prev: &[f64], tau: f64) -> f64 {
    let n = y.len();
    let est: Vec<f64> = theta.iter().map(|&v| st(v, tau)).collect();
    let active = theta.iter().filter(|v| v.abs() > tau).count();
    let w = active as f64 / n as f64;
    let xe = x.matvec(&est);
    let r: Vec<f64> = (0..n).map(|i| y[i] - xe[i] + w * r_prev[i]).collect();
    linalg::norm(&r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BChoice {
    pub b: f64,
    /// (b/(1+b)) k(b)/p, which equals ⟨g'(r)⟩.
    pub g_prime_mean: f64,
    pub jump: bool,
}

/// Solves (b/(1+b)) k(b)/p = 1 with k(b) = #{i : |r_i| < λ(1+b)}.
///
/// The left side is nondecreasing in b and is at most 1 at b₀ = p/(n−p). If
/// it jumps over 1 at some b, that jump point is returned with `jump` set,
/// moved below the jump by a relative 1e−11 so the count is robustly the
/// left limit.
pub fn select_b(r: &[f64], lambda: f64, n: usize, p: usize, tol: f64) -> Result<BChoice> {
    if p >= n {
        return Err(Error::param("p", format!("robust mode needs p < n, got p = {p}, n = {n}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("must be finite and > 0, got {lambda}")));
    }
    let mut mags: Vec<f64> = r.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let h = |b: f64| {
        let k = mags.partition_point(|&v| v < lambda * (1.0 + b));
        b / (1.0 + b) * k as f64 / p as f64
    };
    let done = |b: f64| BChoice {
        b,
        g_prime_mean: h(b),
        jump: false,
    };

    let b0 = p as f64 / (n - p) as f64;
    if h(b0) >= 1.0 - tol {
        return Ok(done(b0));
    }
    let (mut lo, mut hi) = (b0, 2.0 * b0);
    while h(hi) < 1.0 - tol {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::CalibrationFailure { lo, hi });
        }
    }
    if h(hi) <= 1.0 + tol {
        return Ok(done(hi));
    }
    // h(lo) < 1 − tol, h(hi) > 1 + tol
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = h(mid);
        if (v - 1.0).abs() <= tol {
            return Ok(done(mid));
        }
        if v < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The bracket collapsed onto a discontinuity at some |r_i| = λ(1 + b).
    // b sits just below the jump, so the residual that defines it stays
    // outside λ(1 + b) under rounding of r.
    let i = mags.partition_point(|&v| v < lambda * (1.0 + lo));
    let at_jump = mags[i.min(mags.len() - 1)] / lambda - 1.0;
    let mut b_jump = (1.0 + at_jump) * (1.0 - BREAK_MARGIN) - 1.0;
    if i > 0 {
        // never cross the next residual below
        let prev = mags[i - 1] / lambda - 1.0;
        if b_jump <= prev {
            b_jump = 0.5 * (prev + at_jump);
        }
    }
    Ok(BChoice {
        b: b_jump,
        g_prime_mean: h(b_jump),
        jump: true,
    })
}

/// How the error-form engine obtains τ_t / b_t.
#[derive(Debug, Clone, Copy)]
pub enum ParamSource<'a> {
    /// Calibrate from the error-form iterates themselves.
    Select,
    /// Reuse the parameters of an existing trace (indexed by t).
    Given(&'a [Option<f64>]),
}

struct Engine<'a> {
    model: &'a LinearModel,
    xt: Matrix,
    mode: Mode,
    opts: AmpOptions,
}

impl<'a> Engine<'a> {
    fn new(model: &'a LinearModel, mode: Mode, opts: AmpOptions) -> Result<Self> {
        if let Mode::Robust { lambda } = mode {
            if model.p >= model.n {
                return Err(Error::param(
                    "p",
                    format!("robust mode needs p < n, got p = {}, n = {}", model.p, model.n),
                ));
            }
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::param("lambda", format!("must be finite and > 0, got {lambda}")));
            }
        }
        if model.design.rows() != model.n || model.design.cols() != model.p {
            return Err(Error::DimensionMismatch("design does not match n, p".into()));
        }
        Ok(Engine {
            model,
            xt: model.design.transpose(),
            mode,
            opts,
        })
    }

    /// Chooses f_t given θ_t and the memory vector.
    fn signal_fn(&self, t: usize, theta: &[f64], memory: &[f64], given: Option<Option<f64>>) -> Result<SignalFn> {
        if t == 1 {
            return Ok(SignalFn::Zero);
        }
        Ok(match self.mode {
            Mode::Robust { .. } => SignalFn::Identity,
            Mode::Sparse => {
                let tau = match given {
                    Some(Some(tau)) => tau,
                    Some(None) => {
                        return Err(Error::param("schedule", format!("missing tau at t = {t}")))
                    }
                    None => {
                        select_tau(&self.xt, &self.model.observations, theta, memory)
                            .map_err(|e| with_iteration(e, t))?
                            .tau
                    }
                };
                SignalFn::SoftThreshold(tau)
            }
        })
    }

    /// Chooses g_t given r_t; returns (g_t, jump flag).
    fn residual_fn(&self, t: usize, r: &[f64], given: Option<Option<f64>>) -> Result<(ResidualFn, bool)> {
        let (n, p) = (self.model.n, self.model.p);
        Ok(match self.mode {
            Mode::Sparse => (ResidualFn::Identity, false),
            Mode::Robust { lambda } => {
                let (b, jump) = match given {
                    Some(Some(b)) => (b, false),
                    Some(None) => {
                        return Err(Error::param("schedule", format!("missing b at t = {t}")))
                    }
                    None => {
                        let c = select_b(r, lambda, n, p, self.opts.calibration_tol)?;
                        (c.b, c.jump)
                    }
                };
                let scale = n as f64 / p as f64;
                (ResidualFn::Huber { lambda, b, scale }, jump)
            }
        })
    }
}

fn with_iteration(e: Error, t: usize) -> Error {
    match e {
        Error::NumericFailure { what, .. } => Error::NumericFailure { iteration: t, what },
        other => other,
    }
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

/// Runs the recursion for t = 1, …, t_max.
pub fn run_amp(model: &LinearModel, mode: Mode, t_max: usize, opts: AmpOptions) -> Result<AmpTrace> {
    if t_max < 1 {
        return Err(Error::param("t_max", "must be >= 1"));
    }
    let eng = Engine::new(model, mode, opts)?;
    let (n, p) = (model.n, model.p);
    let y = &model.observations;

    let zero_fns = StepFns {
        f: SignalFn::Zero,
        g: ResidualFn::Zero,
        g_norm: 0.0,
    };
    let mut states = vec![AmpState {
        t: 0,
        theta: vec![0.0; p],
        r: vec![0.0; n],
        param: None,
        fns: zero_fns,
        f_prime_mean: 0.0,
        onsager: 0.0,
        jump: false,
        risk: model.signal_norm(),
        gamma_norm: f64::NAN,
        alpha_norm: f64::NAN,
    }];
    let mut theta = vec![0.0; p]; // θ_1
    let mut memory = vec![0.0; n]; // ⟨g_{t−1}'⟩⁻¹ g_{t−1}(r_{t−1})

    for t in 1..=t_max {
        let f = eng.signal_fn(t, &theta, &memory, None)?;
        let f_vals: Vec<f64> = theta.iter().map(|&v| f.apply(v)).collect();
        let f_prime_mean = mean(theta.iter().map(|&v| f.deriv(v)), n);

        let xf = model.design.matvec(&f_vals);
        let r: Vec<f64> = (0..n).map(|i| y[i] - xf[i] + f_prime_mean * memory[i]).collect();
        ensure_finite(&r, t, "r")?;

        let (g, jump) = eng.residual_fn(t, &r, None)?;
        let g_vals: Vec<f64> = r.iter().map(|&v| g.apply(v)).collect();
        let g_norm = mean(r.iter().map(|&v| g.deriv(v)), n);
        if !(g_norm > 0.0 && g_norm.is_finite()) {
            return Err(Error::NumericFailure {
                iteration: t,
                what: format!("<g'> = {g_norm}"),
            });
        }
        let mut next = model.design.matvec_t(&g_vals);
        for (nx, fv) in next.iter_mut().zip(&f_vals) {
            *nx = *nx / g_norm + fv;
        }
        ensure_finite(&next, t, "theta")?;

        let prev_norm = states[t - 1].fns.g_norm;
        let onsager = if t == 1 { 0.0 } else { f_prime_mean / prev_norm };
        let param = match f {
            SignalFn::SoftThreshold(tau) => Some(tau),
            _ => match g {
                ResidualFn::Huber { b, .. } => Some(b),
                _ => None,
            },
        };
        let fns = StepFns { f, g, g_norm };
        let gamma_norm = linalg::norm(
            &model
                .signal
                .iter()
                .zip(&f_vals)
                .map(|(s, v)| s - v)
                .collect::<Vec<_>>(),
        );
        let alpha_norm = linalg::norm(&g_vals) / g_norm;
        let risk = linalg::norm(&linalg::sub(&theta, &model.signal));

        memory = g_vals.iter().map(|v| v / g_norm).collect();
        let state = AmpState {
            t,
            theta: std::mem::replace(&mut theta, next),
            r,
            param,
            fns,
            f_prime_mean,
            onsager,
            jump,
            risk,
            gamma_norm,
            alpha_norm,
        };
        states.push(state);
        if !opts.keep_history && t >= 2 {
            let old = &mut states[t - 2];
            old.theta = Vec::new();
            old.r = Vec::new();
        }
    }
    Ok(AmpTrace {
        mode,
        n,
        p,
        states,
        theta_last: theta,
        full_history: opts.keep_history,
    })
}

/// Iterates of the error-form recursion: β_1..β_{t_max+1}, s_1..s_{t_max}
/// (index 0 holds zeros) and the step functions used.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorFormTrace {
    pub beta: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub fns: Vec<StepFns>,
}

/// One step of the error form: given β_t, the previous step's G-vector
/// G_{t−1}(s_{t−1}) and the step functions of iteration t, returns
/// (s_t, β_{t+1}).
pub fn error_form_step(
    model: &LinearModel,
    beta_t: &[f64],
    g_prev: &[f64],
    fns: &StepFns,
) -> (Vec<f64>, Vec<f64>) {
    let n = model.n;
    let big_f = fns.big_f(beta_t, &model.signal);
    let f_prime = mean(fns.big_f_deriv(beta_t, &model.signal).into_iter(), n);
    let xf = model.design.matvec(&big_f);
    let s: Vec<f64> = (0..n).map(|i| xf[i] - f_prime * g_prev[i]).collect();
    let big_g = fns.big_g(&s, &model.noise);
    let g_prime = mean(fns.big_g_deriv(&s, &model.noise).into_iter(), n);
    let mut beta_next = model.design.matvec_t(&big_g);
    linalg::axpy(-g_prime, &big_f, &mut beta_next);
    (s, beta_next)
}

pub fn run_error_form(
    model: &LinearModel,
    mode: Mode,
    t_max: usize,
    source: ParamSource<'_>,
    opts: AmpOptions,
) -> Result<ErrorFormTrace> {
    if t_max < 1 {
        return Err(Error::param("t_max", "must be >= 1"));
    }
    let eng = Engine::new(model, mode, opts)?;
    let (n, p) = (model.n, model.p);
    let given = |t: usize| match source {
        ParamSource::Select => None,
        ParamSource::Given(ps) => Some(ps.get(t).copied().flatten()),
    };
    let theta_star = &model.signal;
    let eps = &model.noise;

    let mut beta = vec![vec![0.0; p], linalg::scaled(-1.0, theta_star)]; // β_1 = −θ*
    let mut s_hist = vec![vec![0.0; n]];
    let mut fns_hist = vec![StepFns {
        f: SignalFn::Zero,
        g: ResidualFn::Zero,
        g_norm: 0.0,
    }];
    let mut g_prev = vec![0.0; n]; // G_0 = 0

    for t in 1..=t_max {
        let beta_t = &beta[t];
        let theta_t = linalg::add(beta_t, theta_star);
        let memory: Vec<f64> = if t == 1 { vec![0.0; n] } else { g_prev.clone() };
        // sparse: memory = G_{t−1}(s_{t−1}) = s_{t−1} + ε = r_{t−1}
        let f = eng.signal_fn(t, &theta_t, &memory, given(t))?;

        // s_t does not depend on g_t, so compute it before calibrating.
        let probe = StepFns {
            f,
            g: ResidualFn::Zero,
            g_norm: 1.0,
        };
        let big_f = probe.big_f(beta_t, theta_star);
        let f_prime = mean(probe.big_f_deriv(beta_t, theta_star).into_iter(), n);
        let xf = model.design.matvec(&big_f);
        let s: Vec<f64> = (0..n).map(|i| xf[i] - f_prime * g_prev[i]).collect();
        ensure_finite(&s, t, "s")?;

        let r = linalg::add(&s, eps);
        let (g, _) = eng.residual_fn(t, &r, given(t))?;
        let g_norm = mean(r.iter().map(|&v| g.deriv(v)), n);
        if !(g_norm > 0.0 && g_norm.is_finite()) {
            return Err(Error::NumericFailure {
                iteration: t,
                what: format!("<g'> = {g_norm}"),
            });
        }
        let fns = StepFns { f, g, g_norm };
        let (s2, beta_next) = error_form_step(model, beta_t, &g_prev, &fns);
        debug_assert_eq!(s, s2);
        ensure_finite(&beta_next, t, "beta")?;
        g_prev = fns.big_g(&s, eps);
        s_hist.push(s);
        beta.push(beta_next);
        fns_hist.push(fns);
    }
    Ok(ErrorFormTrace {
        beta,
        s: s_hist,
        fns: fns_hist,
    })
}

/// Checks that the trace keeps full history, for consumers that need it.
pub fn require_full_history(trace: &AmpTrace) -> Result<()> {
    trace.require_history()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, NoiseSpec, SignalSpec};

    fn model(n: usize, p: usize, k: usize, noise: NoiseSpec, seed: u64) -> LinearModel {
        ModelSpec {
            n,
            p,
            k,
            signal: SignalSpec::default(),
            noise,
        }
        .generate(seed, 0)
        .unwrap()
    }

    #[test]
    fn first_residual_is_y() {
        let m = model(40, 20, 5, NoiseSpec::gaussian_with_norm(40, 0.5), 1);
        for mode in [Mode::Sparse, Mode::Robust { lambda: 0.2 }] {
            let tr = run_amp(&m, mode, 1, AmpOptions::default()).unwrap();
            assert_eq!(tr.states.len(), 2);
            assert_eq!(tr.states[1].r, m.observations);
            assert!(tr.states[1].theta.iter().all(|&v| v == 0.0));
            // F_1(β_1) = θ*
            assert_eq!(tr.states[1].gamma_norm, m.signal_norm());
        }
    }

    #[test]
    fn trace_length() {
        let m = model(40, 20, 5, NoiseSpec::gaussian_with_norm(40, 0.5), 2);
        let tr = run_amp(&m, Mode::Sparse, 6, AmpOptions::default()).unwrap();
        assert_eq!(tr.states.len(), 7);
        assert_eq!(tr.theta(7), &tr.theta_last[..]);
        assert!(tr.states[1].param.is_none());
        assert!(tr.states[2].param.is_some());
    }

    #[test]
    fn zero_theta_picks_zero_tau() {
        let m = model(30, 10, 2, NoiseSpec::gaussian(0.01), 3);
        let xt = m.design.transpose();
        let c = select_tau(&xt, &m.observations, &[0.0; 10], &[0.1; 30])
            .unwrap();
        assert_eq!(c.tau, 0.0);
    }

    #[test]
    fn argmin_beats_fine_grid() {
        let m = model(50, 30, 6, NoiseSpec::gaussian(0.02), 5);
        let xt = m.design.transpose();
        for shift in 0..5 {
            let theta: Vec<f64> = (0..30).map(|j| (((j + shift) * 37 % 11) as f64 - 5.0) / 7.0).collect();
            let h: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7 + shift as f64).cos()).collect();
            let obj = TauObjective::new(&xt, &m.observations, &theta, &h);
            let best = obj.argmin();
            assert_eq!(best.objective, obj.eval(best.tau));
            for i in 0..=20_000 {
                let tau = obj.upper() * i as f64 / 20_000.0;
                assert!(best.objective <= obj.eval(tau) + 1e-12, "tau {tau}");
            }
        }
    }

    #[test]
    fn segment_objective_matches_direct() {
        let m = model(50, 30, 6, NoiseSpec::gaussian(0.02), 4);
        let xt = m.design.transpose();
        let theta: Vec<f64> = (0..30).map(|j| ((j * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let h: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let obj = TauObjective::new(&xt, &m.observations, &theta, &h);
        for i in 0..200 {
            let tau = obj.upper() * i as f64 / 199.0;
            let d = tau_objective_direct(&m.design, &m.observations, &theta, &h, tau);
            assert!((obj.eval(tau) - d).abs() < 1e-12 * d.max(1.0), "tau {tau}");
        }
    }

    #[test]
    fn noiseless_fixed_point() {
        // θ_t = θ*, τ = 0, noiseless: r_t = 0 and θ_{t+1} = θ*
        let m = model(40, 20, 5, NoiseSpec::gaussian(0.0), 5);
        let fns = StepFns {
            f: SignalFn::SoftThreshold(0.0),
            g: ResidualFn::Identity,
            g_norm: 1.0,
        };
        let (s, beta_next) = error_form_step(&m, &[0.0; 20], &[0.0; 40], &fns);
        assert!(linalg::norm(&s) < 1e-15);
        assert!(linalg::norm(&beta_next) < 1e-15);
    }

    #[test]
    fn select_b_saturated() {
        // every |r_i| tiny: count is n for all b ≥ b₀, so b/(1+b) = p/n
        let r = vec![1e-6; 40];
        let c = select_b(&r, 1.0, 40, 20, 1e-6).unwrap();
        assert!((c.b - 1.0).abs() < 1e-12);
        assert!(!c.jump);
    }

    #[test]
    fn select_b_jump() {
        // half the residuals inside for all relevant b, then the count jumps to n
        let r = [0.01, -0.01, 0.02, 0.015, 100.0, -100.0, 100.0, 100.0];
        let c = select_b(&r, 1.0, 8, 4, 1e-6).unwrap();
        assert!(c.jump);
        // just below the jump at λ(1 + b) = 100
        assert!(1.0 + c.b < 100.0 && (1.0 + c.b) / 100.0 > 1.0 - 1e-10);
        assert!(c.g_prime_mean < 1.0);
    }

    #[test]
    fn select_b_failure_and_domain() {
        assert!(matches!(select_b(&[1.0; 4], 1.0, 4, 4, 1e-6), Err(Error::InvalidParameter { .. })));
        // only 1 of 8 residuals can ever be inside relative to p = 4: h ≤ 1/4
        let r = [0.0, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY];
        assert!(matches!(select_b(&r, 1.0, 8, 4, 1e-6), Err(Error::CalibrationFailure { .. })));
    }

    #[test]
    fn low_memory_keeps_scalars() {
        let m = model(40, 20, 5, NoiseSpec::gaussian_with_norm(40, 0.5), 6);
        let opts = AmpOptions {
            keep_history: false,
            ..Default::default()
        };
        let tr = run_amp(&m, Mode::Sparse, 5, opts).unwrap();
        let full = run_amp(&m, Mode::Sparse, 5, AmpOptions::default()).unwrap();
        assert!(tr.states[1].theta.is_empty());
        assert_eq!(tr.theta_last, full.theta_last);
        assert_eq!(tr.states[5].gamma_norm, full.states[5].gamma_norm);
        assert!(require_full_history(&tr).is_err());
    }
}
