//! Distributional and numerical diagnostics: 1D W₁, risk gaps, scaling fits
//! and the H-functions behind the threshold and calibration arguments.

use std::fmt::Write as _;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::AmpTrace;
use crate::denoise::st;
use crate::normal::{cdf, inv_cdf, pdf, prob_between, sf};
use crate::se::SeTrace;
use crate::{svg, Error, Result};

/// W₁ between the empirical law of `sample` and N(0, σ²), using the plug-in
/// (1/m) Σ |x_(i) − σ Φ⁻¹((i − ½)/m)|.
pub fn w1_gaussian_1d(sample: &[f64], sigma: f64) -> Result<f64> {
    if sample.len() < 2 {
        return Err(Error::param("sample", "need at least 2 points"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", format!("must be positive, got {sigma}")));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("sample has non-finite entries".into()));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    let total: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (x - sigma * inv_cdf((i as f64 + 0.5) / m)).abs())
        .sum();
    Ok(total / m)
}

/// ‖F_t(β_t)‖₂ − γ*_t for t = 1, …, min(t_max, SE length). Both sequences
/// start at ‖θ*‖₂, so the first entry is 0.
pub fn risk_gap(trace: &AmpTrace, se: &SeTrace) -> Vec<f64> {
    let len = trace.t_max().min(se.entries.len());
    (1..=len).map(|t| trace.states[t].gamma_norm - se.gamma(t)).collect()
}

/// ‖θ_{t+1} − θ*‖₂ − γ*_t, the robust-mode reading with the iterate one step
/// ahead, for t = 1, …, t_max − 1.
pub fn risk_gap_ahead(trace: &AmpTrace, se: &SeTrace) -> Vec<f64> {
    let len = trace.t_max().min(se.entries.len() + 1);
    (1..len).map(|t| trace.states[t + 1].risk - se.gamma(t)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares of log(value) on log(n).
pub fn scaling_fit(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::InvalidData(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(&(n, v)) = points.iter().find(|(n, v)| !(*n > 0.0 && *v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidData(format!("non-positive point ({n}, {v})")));
    }
    let xs: Vec<f64> = points.iter().map(|(n, _)| n.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, v)| v.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidData("all n equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(ScalingFit { slope, intercept, r2 })
}

// ---------------------------------------------------------------- quadrature

const GL_ORDER: usize = 15;

fn gl_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        // Newton on P_n from the Chebyshev guess.
        let n = GL_ORDER;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    })
}

fn gl_once(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    h * gl_rule().iter().map(|(x, w)| w * f(c + h * x)).sum::<f64>()
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> Option<f64> {
    let m = 0.5 * (a + b);
    let (l, r) = (gl_once(f, a, m), gl_once(f, m, b));
    if (l + r - whole).abs() <= tol {
        return Some(l + r);
    }
    if depth == 0 {
        return None;
    }
    Some(adapt(f, a, m, l, 0.5 * tol, depth - 1)? + adapt(f, m, b, r, 0.5 * tol, depth - 1)?)
}

/// Adaptive Gauss–Legendre on [a, b] to absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let f: &dyn Fn(f64) -> f64 = &f;
    adapt(f, a, b, gl_once(f, a, b), tol, 40).ok_or_else(|| Error::NumericFailure {
        iteration: 0,
        what: format!("quadrature did not converge on [{a}, {b}]"),
    })
}

/// Gaussian truncation for [`gaussian_expectation`].
pub const GAUSS_RANGE: f64 = 12.0;
pub const QUAD_TOL: f64 = 1e-8;

/// E f(G), G ~ N(0,1), integrating f·φ over [−12, 12] split at `breaks`
/// (discontinuities of f).
pub fn gaussian_expectation(f: impl Fn(f64) -> f64, breaks: &[f64]) -> Result<f64> {
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|b| b.abs() < GAUSS_RANGE)
        .chain([-GAUSS_RANGE, GAUSS_RANGE])
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let tol = QUAD_TOL / (pts.len() - 1) as f64;
    let g = |x: f64| f(x) * pdf(x);
    pts.windows(2).map(|w| integrate(g, w[0], w[1], tol)).sum()
}

// ----------------------------------------------------------- lasso H terms

/// Gaussian expectations entering the lasso H-functions at (ω, θ), G ~ N(0,1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoTerms {
    /// E[(ω − G sign(θ + G)) 1(|θ + G| > ω)]
    pub a: f64,
    /// E[(ST_ω(θ + G) − θ 1(|θ + G| > ω)) G]
    pub b: f64,
    /// E[ST_ω(|G|)]
    pub m: f64,
    /// E[ST_ω(G) G]
    pub st_g_g: f64,
    /// P(|G| ≥ ω)
    pub tail: f64,
}

pub fn lasso_terms(omega: f64, theta: f64) -> LassoTerms {
    let (u, l) = (omega - theta, -omega - theta);
    let a = omega * (sf(u) + cdf(l)) - pdf(u) - pdf(l);
    let b = -theta * pdf(u) + theta * pdf(l) + sf(u) + cdf(l);
    LassoTerms {
        a,
        b,
        m: 2.0 * (pdf(omega) - omega * sf(omega)),
        st_g_g: 2.0 * sf(omega),
        tail: 2.0 * sf(omega),
    }
}

/// The same expectations by quadrature.
pub fn lasso_terms_quad(omega: f64, theta: f64) -> Result<LassoTerms> {
    let breaks = [omega - theta, -omega - theta, omega, -omega];
    let active = |g: f64| (theta + g).abs() > omega;
    let a = gaussian_expectation(
        |g| if active(g) { omega - g * (theta + g).signum() } else { 0.0 },
        &breaks,
    )?;
    let b = gaussian_expectation(
        |g| {
            let v = st(theta + g, omega) - if active(g) { theta } else { 0.0 };
            v * g
        },
        &breaks,
    )?;
    let m = gaussian_expectation(|g| st(g.abs(), omega), &breaks)?;
    let st_g_g = gaussian_expectation(|g| st(g, omega) * g, &breaks)?;
    let tail = gaussian_expectation(|g| if g.abs() >= omega { 1.0 } else { 0.0 }, &breaks)?;
    Ok(LassoTerms { a, b, m, st_g_g, tail })
}

/// Grids for the inner sup over θ (lasso) or ε (robust).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HOptions {
    /// θ ∈ [0, theta_max] in steps of theta_step, plus θ → ∞.
    pub theta_max: f64,
    pub theta_step: f64,
    /// Only θ with 1 + A/M ≥ pk_min enter the lasso sup.
    pub pk_min: f64,
    /// ε ∈ [0, τ + eps_extra] in steps of eps_step.
    pub eps_extra: f64,
    pub eps_step: f64,
}

impl Default for HOptions {
    fn default() -> Self {
        HOptions {
            theta_max: 20.0,
            theta_step: 0.01,
            pk_min: 2.3,
            eps_extra: 10.0,
            eps_step: 0.005,
        }
    }
}

impl HOptions {
    fn check(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.theta_max) && ok(self.theta_step) && ok(self.eps_extra) && ok(self.eps_step)) {
            return Err(Error::param("h_options", "grid bounds and steps must be positive"));
        }
        if !(self.pk_min > 1.0) {
            return Err(Error::param("pk_min", "must exceed 1"));
        }
        Ok(())
    }
}

/// An H value and where the inner sup was attained (∞ for the tail limit,
/// NaN when no inner point qualified).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HValue {
    pub value: f64,
    pub argsup: f64,
}

fn grid(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> {
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=count).map(move |i| lo + i as f64 * step)
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

/// sup of `ratio` over the feasible θ grid and the θ → ∞ limit.
fn lasso_sup(omega: f64, opts: &HOptions, ratio: impl Fn(&LassoTerms, f64) -> f64) -> HValue {
    let mut best = HValue { value: 0.0, argsup: f64::NAN };
    let mut consider = |t: &LassoTerms, theta: f64| {
        let q = 1.0 + t.a / t.m;
        if q >= opts.pk_min {
            let v = ratio(t, q.ln());
            if v > best.value || best.argsup.is_nan() {
                best = HValue { value: v, argsup: theta };
            }
        }
    };
    for theta in grid(0.0, opts.theta_max, opts.theta_step) {
        consider(&lasso_terms(omega, theta), theta);
    }
    let mut limit = lasso_terms(omega, 0.0);
    limit.a = omega;
    limit.b = 1.0;
    consider(&limit, f64::INFINITY);
    best
}

/// 1 − sup_θ (1 + P(|G| ≥ ω) A/M) / (2 log(1 + A/M)).
pub fn lasso_h1(omega: f64) -> Result<HValue> {
    lasso_h1_with(omega, &HOptions::default())
}

pub fn lasso_h1_with(omega: f64, opts: &HOptions) -> Result<HValue> {
    check_positive("omega", omega)?;
    opts.check()?;
    let s = lasso_sup(omega, opts, |t, log_q| (1.0 + t.tail * t.a / t.m) / (2.0 * log_q));
    Ok(HValue { value: 1.0 - s.value, argsup: s.argsup })
}

/// 1 − sup_θ |B + (E[ST_ω(G)G]/M) A| / (2 log(1 + A/M)).
pub fn lasso_h2(omega: f64) -> Result<HValue> {
    lasso_h2_with(omega, &HOptions::default())
}

pub fn lasso_h2_with(omega: f64, opts: &HOptions) -> Result<HValue> {
    check_positive("omega", omega)?;
    opts.check()?;
    let s = lasso_sup(omega, opts, |t, log_q| (t.b + t.st_g_g / t.m * t.a).abs() / (2.0 * log_q));
    Ok(HValue { value: 1.0 - s.value, argsup: s.argsup })
}

// ---------------------------------------------------------- robust H terms

/// E[min{G², τ²}]
pub fn truncated_second_moment(tau: f64) -> f64 {
    let inside = prob_between(-tau, tau);
    inside - 2.0 * tau * pdf(tau) + 2.0 * tau * tau * sf(tau)
}

/// (1/P(|G| > τ)) (1 − E[min{G², τ²}] / P(|G| < τ))
pub fn robust_h1(tau: f64) -> Result<f64> {
    check_positive("tau", tau)?;
    // 1 − E[min]/P(|G|<τ) = 2τ(φ(τ) − τΦ̄(τ)) / P(|G|<τ), kept in this form
    // to avoid the cancellation for large τ.
    let inside = prob_between(-tau, tau);
    Ok(2.0 * tau * (pdf(tau) - tau * sf(tau)) / (inside * 2.0 * sf(tau)))
}

/// Numerator and denominator of the robust H₂ ratio at (τ, ε).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustTerms {
    /// E[G(ε + G) 1(|ε + G| < τ)]
    pub num: f64,
    /// E[(ε + G)² ∧ τ²]
    pub den: f64,
}

pub fn robust_terms(tau: f64, eps: f64) -> RobustTerms {
    let (l, u) = (-tau - eps, tau - eps);
    let p = prob_between(l, u);
    let e1 = pdf(l) - pdf(u);
    let e2 = p - (u * pdf(u) - l * pdf(l));
    RobustTerms {
        num: eps * e1 + e2,
        den: eps * eps * p + 2.0 * eps * e1 + e2 + tau * tau * (1.0 - p),
    }
}

pub fn robust_terms_quad(tau: f64, eps: f64) -> Result<RobustTerms> {
    let breaks = [-tau - eps, tau - eps];
    let num = gaussian_expectation(|g| if (eps + g).abs() < tau { g * (eps + g) } else { 0.0 }, &breaks)?;
    let den = gaussian_expectation(|g| ((eps + g) * (eps + g)).min(tau * tau), &breaks)?;
    Ok(RobustTerms { num, den })
}

fn robust_sup(tau: f64, eps: impl Iterator<Item = f64>) -> HValue {
    let mut best = HValue { value: f64::NEG_INFINITY, argsup: f64::NAN };
    for e in eps {
        let t = robust_terms(tau, e);
        let v = t.num.abs() / t.den;
        if v > best.value {
            best = HValue { value: v, argsup: e };
        }
    }
    best
}

/// 1 − sup_ε |E[G(ε + G)1(|ε + G| < τ)]| / E[(ε + G)² ∧ τ²], over ε ≥ 0 (the
/// ratio is even in ε).
pub fn robust_h2(tau: f64) -> Result<HValue> {
    robust_h2_with(tau, &HOptions::default())
}

pub fn robust_h2_with(tau: f64, opts: &HOptions) -> Result<HValue> {
    check_positive("tau", tau)?;
    opts.check()?;
    let s = robust_sup(tau, grid(0.0, tau + opts.eps_extra, opts.eps_step));
    Ok(HValue { value: 1.0 - s.value, argsup: s.argsup })
}

/// H₂ with the sup restricted to ε ≥ τ, where 1 − 2/τ is a lower bound.
pub fn robust_h2_far_branch(tau: f64, opts: &HOptions) -> Result<HValue> {
    check_positive("tau", tau)?;
    opts.check()?;
    let s = robust_sup(tau, grid(tau, tau + opts.eps_extra, opts.eps_step));
    Ok(HValue { value: 1.0 - s.value, argsup: s.argsup })
}

// ------------------------------------------------------------------ curves

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HFamily {
    #[serde(rename = "lasso-H1")]
    LassoH1,
    #[serde(rename = "lasso-H2")]
    LassoH2,
    #[serde(rename = "robust-H1")]
    RobustH1,
    #[serde(rename = "robust-H2")]
    RobustH2,
}

impl HFamily {
    pub const ALL: [HFamily; 4] = [HFamily::LassoH1, HFamily::LassoH2, HFamily::RobustH1, HFamily::RobustH2];

    pub fn name(self) -> &'static str {
        match self {
            HFamily::LassoH1 => "lasso-H1",
            HFamily::LassoH2 => "lasso-H2",
            HFamily::RobustH1 => "robust-H1",
            HFamily::RobustH2 => "robust-H2",
        }
    }

    pub fn abscissa(self) -> &'static str {
        match self {
            HFamily::LassoH1 | HFamily::LassoH2 => "omega",
            HFamily::RobustH1 | HFamily::RobustH2 => "tau",
        }
    }

    pub fn eval(self, x: f64, opts: &HOptions) -> Result<HValue> {
        match self {
            HFamily::LassoH1 => lasso_h1_with(x, opts),
            HFamily::LassoH2 => lasso_h2_with(x, opts),
            HFamily::RobustH1 => robust_h1(x).map(|value| HValue { value, argsup: f64::NAN }),
            HFamily::RobustH2 => robust_h2_with(x, opts),
        }
    }
}

impl std::str::FromStr for HFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::param("family", format!("unknown H family '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HCurve {
    pub family: HFamily,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub argsup: Vec<f64>,
    /// Step of the inner θ or ε grid (0 for robust-H1, which has no sup).
    pub inner_sup_resolution: f64,
}

/// Grid lo, lo + step, …, ≤ hi.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && lo.is_finite() && hi >= lo) {
        return Err(Error::param("grid", format!("bad grid [{lo}, {hi}] step {step}")));
    }
    Ok(grid(lo, hi, step).collect())
}

pub fn h_curve(family: HFamily, grid: &[f64], opts: &HOptions) -> Result<HCurve> {
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("grid", "must be non-empty and strictly increasing"));
    }
    let vals: Vec<HValue> = grid.par_iter().map(|&x| family.eval(x, opts)).collect::<Result<_>>()?;
    if let Some((x, v)) = grid.iter().zip(&vals).find(|(_, v)| !v.value.is_finite()) {
        return Err(Error::NumericFailure {
            iteration: 0,
            what: format!("{} at {x} is {}", family.name(), v.value),
        });
    }
    let inner_sup_resolution = match family {
        HFamily::LassoH1 | HFamily::LassoH2 => opts.theta_step,
        HFamily::RobustH2 => opts.eps_step,
        HFamily::RobustH1 => 0.0,
    };
    Ok(HCurve {
        family,
        grid: grid.to_vec(),
        values: vals.iter().map(|v| v.value).collect(),
        argsup: vals.iter().map(|v| v.argsup).collect(),
        inner_sup_resolution,
    })
}

impl HCurve {
    /// Header `<abscissa>,value,argsup`; argsup is empty when undefined.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},value,argsup\n", self.family.abscissa());
        for ((x, v), a) in self.grid.iter().zip(&self.values).zip(&self.argsup) {
            let a = if a.is_nan() { String::new() } else { a.to_string() };
            let _ = writeln!(out, "{x},{v},{a}");
        }
        out
    }

    pub fn to_svg(&self) -> String {
        svg::line_plot(
            self.family.name(),
            self.family.abscissa(),
            "H",
            &[svg::Series {
                name: self.family.name(),
                x: &self.grid,
                y: &self.values,
            }],
        )
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn w1_plug_in() {
        let m = 50;
        let base: Vec<f64> = (0..m).map(|i| 2.0 * inv_cdf((i as f64 + 0.5) / m as f64)).collect();
        assert!(w1_gaussian_1d(&base, 2.0).unwrap() < 1e-15);
        let shifted: Vec<f64> = base.iter().map(|x| x - 0.3).collect();
        assert!((w1_gaussian_1d(&shifted, 2.0).unwrap() - 0.3).abs() < 1e-12);
        assert!(w1_gaussian_1d(&[1.0], 1.0).is_err());
        assert!(w1_gaussian_1d(&[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn scaling_exact() {
        let pts: Vec<(f64, f64)> = [500.0, 1000.0, 2000.0, 4000.0].iter().map(|&n: &f64| (n, 3.0 * n.powf(-1.0 / 3.0))).collect();
        let fit = scaling_fit(&pts).unwrap();
        assert!((fit.slope + 1.0 / 3.0).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        let flat = scaling_fit(&[(1.0, 2.0), (2.0, 2.0), (4.0, 2.0)]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!(matches!(scaling_fit(&[(1.0, 2.0), (2.0, 0.0), (4.0, 2.0)]), Err(Error::InvalidData(_))));
        assert!(scaling_fit(&[(1.0, 2.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn quadrature_basics() {
        let w: f64 = gl_rule().iter().map(|(_, w)| w).sum();
        assert!((w - 2.0).abs() < 1e-14);
        let v = integrate(|x| x.powi(28), -1.0, 1.0, 1e-12).unwrap();
        assert!((v - 2.0 / 29.0).abs() < 1e-12);
        let e2 = gaussian_expectation(|g| g * g, &[]).unwrap();
        assert!((e2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lasso_terms_match_quadrature() {
        for &omega in &[0.1, 0.5, 1.0, 2.0, 4.0] {
            for &theta in &[0.0, 0.3, 1.0, 2.5, 7.0] {
                let c = lasso_terms(omega, theta);
                let q = lasso_terms_quad(omega, theta).unwrap();
                for (x, y) in [(c.a, q.a), (c.b, q.b), (c.m, q.m), (c.st_g_g, q.st_g_g), (c.tail, q.tail)] {
                    assert!((x - y).abs() < 1e-8, "ω={omega} θ={theta}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn st_g_g_at_zero_threshold() {
        let t = lasso_terms_quad(1e-12, 0.0).unwrap();
        assert!((t.st_g_g - 1.0).abs() < 1e-8);
        assert!((lasso_terms(0.0, 0.0).st_g_g - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lasso_tail_limit() {
        let far = lasso_terms(1.0, 40.0);
        assert!((far.a - 1.0).abs() < 1e-12 && (far.b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lasso_h_shape() {
        let opts = HOptions { theta_step: 0.05, ..Default::default() };
        // no θ reaches 1 + A/M ≥ 2.3 below ω ≈ 0.5, so the sup is empty
        let low = lasso_h2_with(0.3, &opts).unwrap();
        assert_eq!(low.value, 1.0);
        assert!(low.argsup.is_nan());
        // just past the onset the large-θ limit pushes both below zero
        assert!(lasso_h2_with(0.55, &opts).unwrap().value < 0.0);
        assert!(lasso_h1_with(0.6, &opts).unwrap().value < 0.0);
        for i in 14..=100 {
            let omega = 0.05 * i as f64;
            let h2 = lasso_h2_with(omega, &opts).unwrap();
            let h1 = lasso_h1_with(omega, &opts).unwrap();
            assert!(h2.value > 0.0 && h1.value > 0.0, "ω={omega}: {h1:?} {h2:?}");
        }
    }

    #[test]
    fn robust_terms_match_quadrature() {
        for &tau in &[0.3, 1.0, 2.0, 5.0] {
            for &eps in &[0.0, 0.5, 1.0, 3.0, 8.0] {
                let c = robust_terms(tau, eps);
                let q = robust_terms_quad(tau, eps).unwrap();
                assert!((c.num - q.num).abs() < 1e-8 && (c.den - q.den).abs() < 1e-8, "{tau} {eps}");
            }
        }
    }

    #[test]
    fn robust_h1_limits() {
        assert!((truncated_second_moment(12.0) - 1.0).abs() < 1e-8);
        let t = 1.3;
        let direct = (1.0 - truncated_second_moment(t) / prob_between(-t, t)) / (2.0 * sf(t));
        assert!((robust_h1(t).unwrap() - direct).abs() < 1e-12);
        let q = gaussian_expectation(|g| (g * g).min(t * t), &[-t, t]).unwrap();
        assert!((truncated_second_moment(t) - q).abs() < 1e-9);
    }

    #[test]
    fn robust_h2_far_branch_bound() {
        let opts = HOptions { eps_step: 0.02, ..Default::default() };
        for i in 0..=14 {
            let tau = 3.0 + 0.5 * i as f64;
            let h = robust_h2_far_branch(tau, &opts).unwrap();
            assert!(h.value >= 1.0 - 2.0 / tau, "τ={tau}: {h:?}");
        }
    }

    #[test]
    fn curve_csv_deterministic() {
        let g = uniform_grid(0.5, 1.5, 0.25).unwrap();
        let opts = HOptions { theta_step: 0.1, eps_step: 0.05, ..Default::default() };
        for fam in HFamily::ALL {
            let a = h_curve(fam, &g, &opts).unwrap().to_csv();
            let b = h_curve(fam, &g, &opts).unwrap().to_csv();
            assert_eq!(a, b);
            assert_eq!(a.lines().count(), 6);
        }
        assert!(h_curve(HFamily::RobustH1, &[1.0, 1.0], &opts).is_err());
        assert_eq!("LASSO-h2".parse::<HFamily>().unwrap(), HFamily::LassoH2);
    }

    proptest! {
        #[test]
        fn w1_shift_is_lipschitz(xs in prop::collection::vec(-3.0f64..3.0, 2..60), c in -2.0f64..2.0) {
            let base = w1_gaussian_1d(&xs, 1.0).unwrap();
            let moved: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let shifted = w1_gaussian_1d(&moved, 1.0).unwrap();
            prop_assert!((shifted - base).abs() <= c.abs() + 1e-12);
        }
    }
}
