//! Exact Gaussian decomposition of the AMP iterates.
//!
//! With orthonormal bases a_k = normalized P⊥_{U_{k−1}} G_k(s_k),
//! b_k = normalized P⊥_{V_{k−1}} F_k(β_k) and projected designs
//! X_k = (I − U_{k−1}U_{k−1}ᵀ) X (I − V_{k−1}V_{k−1}ᵀ),
//!
//! ```text
//! φ_k = X_k b_k + Σ_{i<k} g_k^i a_i
//! ψ_k = (I − b_k b_kᵀ) X_kᵀ a_k + Σ_{i≤k} q_k^i b_i       g, q ~ N(0, 1/n)
//! s_t     = Σ_k γ_t^k φ_k + ξ_t,   γ_t^k = ⟨F_t(β_t), b_k⟩
//! β_{t+1} = Σ_k α_t^k ψ_k + ζ_t,   α_t^k = ⟨G_t(s_t), a_k⟩
//! ```
//!
//! with ξ_t ∈ span{a_1..a_{t−1}} and ζ_t ∈ span{b_1..b_t}. The hat sequences
//! refine ξ and ζ further (see [`HatState`]).

use std::fmt::Write as _;

use crate::amp::{AmpTrace, ResidualFn, StepFns};
use crate::linalg::{self, dot, norm, project_out, Matrix};
use crate::model::LinearModel;
use crate::rng::{Purpose, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompOptions {
    /// Seed of the auxiliary stream (independent of the model streams).
    pub aux_seed: u64,
    pub aux_trial: u64,
    /// Materialize X_t when n·p is at most this.
    pub dense_budget: usize,
    /// Also build the hat sequences.
    pub hat: bool,
}

impl Default for DecompOptions {
    fn default() -> Self {
        DecompOptions {
            aux_seed: 0,
            aux_trial: 0,
            dense_budget: 1 << 16,
            hat: false,
        }
    }
}

/// Per-step exactness checks. Relative quantities are scaled by the norm of
/// the vector being decomposed (s_t or β_{t+1}).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepCheck {
    pub t: usize,
    /// ‖P⊥_{U_{t−1}} ξ_t‖ / ‖s_t‖
    pub xi_span: f64,
    /// ‖P⊥_{V_t} ζ_t‖ / ‖β_{t+1}‖
    pub zeta_span: f64,
    /// ‖ξ_t − ξ_t(explicit formula)‖ / ‖s_t‖
    pub xi_formula: f64,
    /// ‖ζ_t − ζ_t(explicit formula)‖ / ‖β_{t+1}‖
    pub zeta_formula: f64,
    /// |‖γ_t‖ − ‖F_t(β_t)‖|
    pub gamma_norm_gap: f64,
    /// |‖α_t‖ − ‖G_t(s_t)‖|
    pub alpha_norm_gap: f64,
    /// ‖G_t(s_t) − Σ α_t^k a_k‖
    pub g_reconstruction: f64,
    /// max |UᵀU − I|, |VᵀV − I|
    pub orthonormality: f64,
}

#[derive(Debug, Clone)]
pub struct DecompState {
    pub n: usize,
    pub p: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// X_{t+1} after t steps, when materialized.
    pub projected: Option<Matrix>,
    pub phi: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    /// g_aux[k−1][i−1] = g_k^i, i < k
    pub g_aux: Vec<Vec<f64>>,
    /// q_aux[k−1][i−1] = q_k^i, i ≤ k
    pub q_aux: Vec<Vec<f64>>,
    /// gamma[t−1] = γ_t
    pub gamma: Vec<Vec<f64>>,
    /// alpha[t−1] = α_t
    pub alpha: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub zeta: Vec<Vec<f64>>,
    /// u[t−1] = u_t = Σ γ_t^k φ_k
    pub u: Vec<Vec<f64>>,
    /// v[t−1] = v_{t+1} = Σ α_t^k ψ_k
    pub v: Vec<Vec<f64>>,
    pub checks: Vec<StepCheck>,
    /// Why the construction stopped before the end of the trace, if it did.
    pub stopped: Option<String>,
    aux: Stream,
}

impl DecompState {
    pub fn new(n: usize, p: usize, design: &Matrix, opts: &DecompOptions) -> Self {
        let projected = (n.saturating_mul(p) <= opts.dense_budget).then(|| design.clone());
        DecompState {
            n,
            p,
            a: Vec::new(),
            b: Vec::new(),
            projected,
            phi: Vec::new(),
            psi: Vec::new(),
            g_aux: Vec::new(),
            q_aux: Vec::new(),
            gamma: Vec::new(),
            alpha: Vec::new(),
            xi: Vec::new(),
            zeta: Vec::new(),
            u: Vec::new(),
            v: Vec::new(),
            checks: Vec::new(),
            stopped: None,
            aux: Stream::new(opts.aux_seed, opts.aux_trial, Purpose::Auxiliary),
        }
    }

    /// Number of completed steps.
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Appends a_t and b_t, first advancing a materialized X_{t−1} to X_t.
    pub fn extend_bases(&mut self, g_vec: &[f64], f_vec: &[f64]) -> Result<()> {
        let t = self.a.len() + 1;
        let pa = project_out(g_vec, &self.a);
        let pb = project_out(f_vec, &self.b);
        let (na, nb) = (norm(&pa), norm(&pb));
        if na < 1e-12 {
            return Err(Error::DegenerateDirection { t, norm: na });
        }
        if nb < 1e-12 {
            return Err(Error::DegenerateDirection { t, norm: nb });
        }
        if let (Some(x), Some(a_prev), Some(b_prev)) = (self.projected.as_mut(), self.a.last(), self.b.last()) {
            x.project_rank_one(a_prev, b_prev);
        }
        self.a.push(linalg::scaled(1.0 / na, &pa));
        self.b.push(linalg::scaled(1.0 / nb, &pb));
        Ok(())
    }

    /// φ_k and ψ_k for the newest k, drawing fresh g_k^i and q_k^i.
    pub fn draw_phi_psi(&mut self, design: &Matrix) {
        let k = self.a.len();
        assert!(k > self.phi.len(), "extend_bases must run first");
        let (ak, bk) = (&self.a[k - 1], &self.b[k - 1]);
        let (xb, xta) = match &self.projected {
            Some(xk) => (xk.matvec(bk), xk.matvec_t(ak)),
            None => {
                let (u_prev, v_prev) = (&self.a[..k - 1], &self.b[..k - 1]);
                let xb = project_out(&design.matvec(&project_out(bk, v_prev)), u_prev);
                let xta = project_out(&design.matvec_t(&project_out(ak, u_prev)), v_prev);
                (xb, xta)
            }
        };
        let sd = 1.0 / (self.n as f64).sqrt();
        let g: Vec<f64> = (1..k).map(|_| sd * self.aux.gaussian()).collect();
        let q: Vec<f64> = (1..=k).map(|_| sd * self.aux.gaussian()).collect();

        let mut phi = xb;
        for (gi, ai) in g.iter().zip(&self.a) {
            linalg::axpy(*gi, ai, &mut phi);
        }
        let mut psi = xta;
        let c = dot(bk, &psi);
        linalg::axpy(-c, bk, &mut psi);
        for (qi, bi) in q.iter().zip(&self.b) {
            linalg::axpy(*qi, bi, &mut psi);
        }
        self.phi.push(phi);
        self.psi.push(psi);
        self.g_aux.push(g);
        self.q_aux.push(q);
    }

    /// α_t^k = ⟨G_t(s_t), a_k⟩ and γ_t^k = ⟨F_t(β_t), b_k⟩ for k ≤ t.
    pub fn compute_coefficients(&mut self, g_vec: &[f64], f_vec: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let alpha: Vec<f64> = self.a.iter().map(|a| dot(g_vec, a)).collect();
        let gamma: Vec<f64> = self.b.iter().map(|b| dot(f_vec, b)).collect();
        self.alpha.push(alpha.clone());
        self.gamma.push(gamma.clone());
        (alpha, gamma)
    }

    /// ξ_t = s_t − Σ γ_t^k φ_k and ζ_t = β_{t+1} − Σ α_t^k ψ_k.
    pub fn residuals(&mut self, s_t: &[f64], beta_next: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let t = self.gamma.len();
        let mut u = vec![0.0; self.n];
        for (g, phi) in self.gamma[t - 1].iter().zip(&self.phi) {
            linalg::axpy(*g, phi, &mut u);
        }
        let mut v = vec![0.0; self.p];
        for (a, psi) in self.alpha[t - 1].iter().zip(&self.psi) {
            linalg::axpy(*a, psi, &mut v);
        }
        let xi = linalg::sub(s_t, &u);
        let zeta = linalg::sub(beta_next, &v);
        self.u.push(u);
        self.v.push(v);
        self.xi.push(xi.clone());
        self.zeta.push(zeta.clone());
        (xi, zeta)
    }

    /// ξ_t from the closed-form expansion
    /// Σ_{k<t} a_k [⟨ψ_k, F_t⟩ − ⟨F_t'⟩ α_{t−1}^k − Σ_{i≤k} γ_t^i q_k^i − Σ_{j=k+1}^{t} γ_t^j g_j^k].
    fn xi_formula(&self, t: usize, f_vec: &[f64], f_prime_mean: f64) -> Vec<f64> {
        let gam = &self.gamma[t - 1];
        let mut out = vec![0.0; self.n];
        for k in 1..t {
            let mut c = dot(&self.psi[k - 1], f_vec) - f_prime_mean * self.alpha[t - 2][k - 1];
            for i in 1..=k {
                c -= gam[i - 1] * self.q_aux[k - 1][i - 1];
            }
            for j in k + 1..=t {
                c -= gam[j - 1] * self.g_aux[j - 1][k - 1];
            }
            linalg::axpy(c, &self.a[k - 1], &mut out);
        }
        out
    }

    /// ζ_t from
    /// Σ_{k≤t} b_k [⟨φ_k, G_t⟩ − ⟨G_t'⟩ γ_t^k − Σ_{i<k} α_t^i g_k^i − Σ_{i=k}^{t} α_t^i q_i^k].
    fn zeta_formula(&self, t: usize, g_vec: &[f64], g_prime_mean: f64) -> Vec<f64> {
        let (alp, gam) = (&self.alpha[t - 1], &self.gamma[t - 1]);
        let mut out = vec![0.0; self.p];
        for k in 1..=t {
            let mut c = dot(&self.phi[k - 1], g_vec) - g_prime_mean * gam[k - 1];
            for i in 1..k {
                c -= alp[i - 1] * self.g_aux[k - 1][i - 1];
            }
            for i in k..=t {
                c -= alp[i - 1] * self.q_aux[i - 1][k - 1];
            }
            linalg::axpy(c, &self.b[k - 1], &mut out);
        }
        out
    }

    fn orthonormality(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for basis in [&self.a, &self.b] {
            for (i, x) in basis.iter().enumerate() {
                for (j, y) in basis.iter().enumerate().take(i + 1) {
                    let want = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((dot(x, y) - want).abs());
                }
            }
        }
        worst
    }
}

/// Inputs for one decomposition step, all evaluated on the AMP trace.
struct StepData {
    s: Vec<f64>,
    beta: Vec<f64>,
    beta_next: Vec<f64>,
    g_vec: Vec<f64>,
    f_vec: Vec<f64>,
    f_prime_mean: f64,
    g_prime_mean: f64,
}

fn step_data(model: &LinearModel, trace: &AmpTrace, t: usize) -> StepData {
    let fns: &StepFns = &trace.states[t].fns;
    let s = trace.s(t, model);
    let beta = trace.beta(t, model);
    let beta_next = trace.beta(t + 1, model);
    let g_vec = fns.big_g(&s, &model.noise);
    let f_vec = fns.big_f(&beta, &model.signal);
    // Onsager means as the recursion used them; re-evaluating derivatives at
    // s_t + ε can land on the other side of a kink after rounding.
    let state = &trace.states[t];
    let f_prime_mean = -state.f_prime_mean;
    let g_prime_mean = stored_g_deriv(trace, t).iter().sum::<f64>() / model.n as f64;
    StepData {
        s,
        beta,
        beta_next,
        g_vec,
        f_vec,
        f_prime_mean,
        g_prime_mean,
    }
}

/// Builds the decomposition for t = 1, …, t_max of a full-history trace. A
/// degenerate direction ends the construction early; `stopped` records why.
pub fn decompose(model: &LinearModel, trace: &AmpTrace, opts: &DecompOptions) -> Result<DecompState> {
    crate::amp::require_full_history(trace)?;
    let mut st = DecompState::new(model.n, model.p, &model.design, opts);
    let t_max = trace.t_max().min(model.n).min(model.p);
    for t in 1..=t_max {
        let d = step_data(model, trace, t);
        if let Err(e) = st.extend_bases(&d.g_vec, &d.f_vec) {
            st.stopped = Some(e.to_string());
            break;
        }
        st.draw_phi_psi(&model.design);
        st.compute_coefficients(&d.g_vec, &d.f_vec);
        let (xi, zeta) = st.residuals(&d.s, &d.beta_next);

        let s_scale = norm(&d.s).max(f64::MIN_POSITIVE);
        let b_scale = norm(&d.beta_next).max(f64::MIN_POSITIVE);
        let xi_perp = project_out(&xi, &st.a[..t - 1]);
        let zeta_perp = project_out(&zeta, &st.b[..t]);
        let xi_f = st.xi_formula(t, &d.f_vec, d.f_prime_mean);
        let zeta_f = st.zeta_formula(t, &d.g_vec, d.g_prime_mean);
        let recon = {
            let mut r = d.g_vec.clone();
            for (c, a) in st.alpha[t - 1].iter().zip(&st.a) {
                linalg::axpy(-c, a, &mut r);
            }
            norm(&r)
        };
        let check = StepCheck {
            t,
            xi_span: norm(&xi_perp) / s_scale,
            zeta_span: norm(&zeta_perp) / b_scale,
            xi_formula: norm(&linalg::sub(&xi, &xi_f)) / s_scale,
            zeta_formula: norm(&linalg::sub(&zeta, &zeta_f)) / b_scale,
            gamma_norm_gap: (norm(&st.gamma[t - 1]) - norm(&d.f_vec)).abs(),
            alpha_norm_gap: (norm(&st.alpha[t - 1]) - norm(&d.g_vec)).abs(),
            g_reconstruction: recon,
            orthonormality: st.orthonormality(),
        };
        let _ = d.beta;
        st.checks.push(check);
    }
    Ok(st)
}

/// Hat sequences: coefficient vectors γ̂_t, α̂_t and proxies β̂_{t+1}, ŝ_{t+1}.
///
/// Starting from α̂_0 = 0, ŝ_1 = u_1, β̂_1 = v_1 = 0:
///
/// ```text
/// γ̂_t^t = ⟨G_t'(ŝ_t) − G_t'(s_t)⟩ + ⟨u_t, G_t(s_t) − G_t(ŝ_t)⟩ / ‖γ_t‖²
/// γ̂_t^k = α̂_{t−1}^k ⟨G_t'(ŝ_t) ∘ G_k'(u_k)⟩                       (k < t)
/// β̂_{t+1} = v_{t+1} + Σ_{k≤t} γ̂_t^k F_k(v_k)
/// α̂_t^t = ⟨F_{t+1}'(β̂_{t+1}) − F_{t+1}'(β_{t+1})⟩
///          + ⟨v_{t+1}, F_{t+1}(β_{t+1}) − F_{t+1}(β̂_{t+1})⟩ / ‖α_t‖²
/// α̂_t^k = γ̂_t^{k+1} ⟨F_{t+1}'(β̂_{t+1}) ∘ F_{k+1}'(v_{k+1})⟩         (k < t)
/// ŝ_{t+1} = u_{t+1} + Σ_{k≤t} α̂_t^k G_k(u_k)
/// ```
///
/// Residual norms: ξ̂_{t+1} = ξ_{t+1} − Σ_{k≤t} α̂_t^k G_k(s_k) and
/// ζ̂_t = ζ_t − Σ_{k≤t} γ̂_t^k F_k(β_k).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HatState {
    /// gamma_hat[t−1] = γ̂_t
    pub gamma_hat: Vec<Vec<f64>>,
    /// alpha_hat[t−1] = α̂_t
    pub alpha_hat: Vec<Vec<f64>>,
    /// beta_hat[t−1] = β̂_{t+1}
    pub beta_hat: Vec<Vec<f64>>,
    /// s_hat[t−1] = ŝ_t
    pub s_hat: Vec<Vec<f64>>,
    /// xi_hat_norm[t−1] = ‖ξ̂_{t+1}‖
    pub xi_hat_norm: Vec<f64>,
    /// zeta_hat_norm[t−1] = ‖ζ̂_t‖
    pub zeta_hat_norm: Vec<f64>,
}

/// G_t'(s_t) evaluated at the stored residual r_t = s_t + ε.
fn stored_g_deriv(trace: &AmpTrace, t: usize) -> Vec<f64> {
    let fns = &trace.states[t].fns;
    match fns.g {
        ResidualFn::Zero => vec![0.0; trace.n],
        g => trace.states[t].r.iter().map(|&r| g.deriv(r) / fns.g_norm).collect(),
    }
}

fn mean_n(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

/// One hat step at iteration t. γ̂_t and β̂_{t+1} need decomposition data
/// through t; α̂_t and ŝ_{t+1} also need it through t + 1 and are skipped
/// otherwise.
pub fn hat_step(
    model: &LinearModel,
    trace: &AmpTrace,
    dec: &DecompState,
    hat: &mut HatState,
    t: usize,
) -> Result<()> {
    let n = model.n;
    let (theta_star, eps) = (&model.signal, &model.noise);
    let fns = |k: usize| &trace.states[k].fns;
    let u = |k: usize| &dec.u[k - 1];
    // v_k = Σ_{j<k} α_{k−1}^j ψ_j, with v_1 = 0
    let v = |k: usize| -> Vec<f64> {
        if k == 1 {
            vec![0.0; model.p]
        } else {
            dec.v[k - 2].clone()
        }
    };
    if t == 1 {
        hat.s_hat.clear();
        hat.s_hat.push(u(1).clone());
    }
    if hat.s_hat.len() != t || dec.len() < t {
        return Err(Error::param("t", format!("hat step {t} out of order")));
    }

    // γ̂_t
    let s_t = trace.s(t, model);
    let s_hat = hat.s_hat[t - 1].clone();
    let ft = fns(t);
    let gp_hat = ft.big_g_deriv(&s_hat, eps);
    let gp = stored_g_deriv(trace, t);
    let gamma_t2 = linalg::norm2(&dec.gamma[t - 1]);
    if gamma_t2 < 1e-20 {
        return Err(Error::DegenerateNorm { t, norm2: gamma_t2 });
    }
    let g_s = ft.big_g(&s_t, eps);
    let g_shat = ft.big_g(&s_hat, eps);
    let mut gh = vec![0.0; t];
    gh[t - 1] = mean_n(gp_hat.iter().zip(&gp).map(|(a, b)| a - b), n)
        + dot(u(t), &linalg::sub(&g_s, &g_shat)) / gamma_t2;
    for k in 1..t {
        let gk = fns(k).big_g_deriv(u(k), eps);
        let ah = hat.alpha_hat[t - 2][k - 1];
        gh[k - 1] = ah * mean_n(gp_hat.iter().zip(&gk).map(|(a, b)| a * b), n);
    }

    // β̂_{t+1}
    let mut beta_hat = dec.v[t - 1].clone();
    for k in 1..=t {
        let fk = fns(k).big_f(&v(k), theta_star);
        linalg::axpy(gh[k - 1], &fk, &mut beta_hat);
    }

    // ζ̂_t = ζ_t − Σ_{k≤t} γ̂_t^k F_k(β_k)
    let mut zeta_hat = dec.zeta[t - 1].clone();
    for k in 1..=t {
        let fk = fns(k).big_f(&trace.beta(k, model), theta_star);
        linalg::axpy(-gh[k - 1], &fk, &mut zeta_hat);
    }
    hat.gamma_hat.push(gh.clone());
    hat.beta_hat.push(beta_hat.clone());
    hat.zeta_hat_norm.push(norm(&zeta_hat));

    if dec.len() < t + 1 || trace.t_max() < t + 1 {
        return Ok(());
    }

    // α̂_t
    let f_next = fns(t + 1);
    let beta_next = trace.beta(t + 1, model);
    let fp_hat = f_next.big_f_deriv(&beta_hat, theta_star);
    let fp: Vec<f64> = trace.theta(t + 1).iter().map(|&x| -f_next.f.deriv(x)).collect();
    let alpha_t2 = linalg::norm2(&dec.alpha[t - 1]);
    if alpha_t2 < 1e-20 {
        return Err(Error::DegenerateNorm { t, norm2: alpha_t2 });
    }
    let f_b = f_next.big_f(&beta_next, theta_star);
    let f_bhat = f_next.big_f(&beta_hat, theta_star);
    let mut ah = vec![0.0; t];
    ah[t - 1] = mean_n(fp_hat.iter().zip(&fp).map(|(a, b)| a - b), n)
        + dot(&dec.v[t - 1], &linalg::sub(&f_b, &f_bhat)) / alpha_t2;
    for k in 1..t {
        let fk = fns(k + 1).big_f_deriv(&v(k + 1), theta_star);
        ah[k - 1] = gh[k] * mean_n(fp_hat.iter().zip(&fk).map(|(a, b)| a * b), n);
    }

    // ŝ_{t+1}
    let mut s_next = u(t + 1).clone();
    for k in 1..=t {
        let gk = fns(k).big_g(u(k), eps);
        linalg::axpy(ah[k - 1], &gk, &mut s_next);
    }

    // ξ̂_{t+1} = ξ_{t+1} − Σ_{k≤t} α̂_t^k G_k(s_k)
    let mut xi_hat = dec.xi[t].clone();
    for k in 1..=t {
        let gk = fns(k).big_g(&trace.s(k, model), eps);
        linalg::axpy(-ah[k - 1], &gk, &mut xi_hat);
    }
    hat.alpha_hat.push(ah);
    hat.s_hat.push(s_next);
    hat.xi_hat_norm.push(norm(&xi_hat));
    Ok(())
}

/// Runs [`hat_step`] for every t the decomposition allows.
pub fn hat_sequences(model: &LinearModel, trace: &AmpTrace, dec: &DecompState) -> Result<HatState> {
    let mut hat = HatState::default();
    for t in 1..=dec.len() {
        hat_step(model, trace, dec, &mut hat, t)?;
        if hat.s_hat.len() < t + 1 {
            break;
        }
    }
    Ok(hat)
}

/// CSV with header `t,xi_norm,zeta_norm,gamma_norm,alpha_norm,gamma_hat_tt,alpha_hat_tt`;
/// hat columns are empty where not computed.
pub fn decomp_csv(dec: &DecompState, hat: Option<&HatState>) -> String {
    let mut out = String::from("t,xi_norm,zeta_norm,gamma_norm,alpha_norm,gamma_hat_tt,alpha_hat_tt\n");
    for t in 1..=dec.len() {
        let gh = hat
            .and_then(|h| h.gamma_hat.get(t - 1))
            .map(|v| v[t - 1].to_string())
            .unwrap_or_default();
        let ah = hat
            .and_then(|h| h.alpha_hat.get(t - 1))
            .map(|v| v[t - 1].to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{t},{},{},{},{},{gh},{ah}",
            norm(&dec.xi[t - 1]),
            norm(&dec.zeta[t - 1]),
            norm(&dec.gamma[t - 1]),
            norm(&dec.alpha[t - 1]),
        );
    }
    out
}
