//! Seeded multi-trial experiments: per-trial CSV rows, aggregate JSON and
//! optional n-scaling fits.
//!
//! Per-trial CSV columns, one row per t = 0, …, t_max (empty = undefined):
//!
//! | column     | value                                   |
//! |------------|-----------------------------------------|
//! | risk       | ‖θ_t − θ*‖₂                             |
//! | gamma_emp  | ‖F_t(β_t)‖₂                             |
//! | gamma_star | γ*_t                                    |
//! | alpha_emp  | ‖G_t(s_t)‖₂                             |
//! | alpha_star | α*_t                                    |
//! | tau_or_b   | τ_t (sparse) or b_t (robust)            |
//! | xi_norm    | ‖ξ_t‖₂                                  |
//! | zeta_norm  | ‖ζ_t‖₂                                  |
//! | w1_coord   | W₁ of the entries of √n v_{t+1}/‖α_t‖ vs N(0,1) |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::amp::{run_amp, AmpOptions, AmpTrace};
use crate::config::{ExperimentConfig, ModeKind, Size};
use crate::decomp::{decompose, hat_sequences, DecompOptions, DecompState, HatState};
use crate::diag::{self, scaling_fit, w1_gaussian_1d, HFamily, HOptions, ScalingFit};
use crate::linalg::norm;
use crate::model::LinearModel;
use crate::se::{run_se, SeTrace};
use crate::{svg, Error, Result};

pub const CSV_HEADER: &str = "trial,t,risk,gamma_emp,gamma_star,alpha_emp,alpha_star,tau_or_b,xi_norm,zeta_norm,w1_coord";

/// One t of one trial. The first block is written to CSV; the rest feed
/// the aggregate only.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrialRow {
    pub t: usize,
    pub risk: f64,
    pub gamma_emp: Option<f64>,
    pub gamma_star: Option<f64>,
    pub alpha_emp: Option<f64>,
    pub alpha_star: Option<f64>,
    pub tau_or_b: Option<f64>,
    pub xi_norm: Option<f64>,
    pub zeta_norm: Option<f64>,
    pub w1_coord: Option<f64>,
    /// ‖θ_{t+1} − θ*‖₂ − γ*_t
    pub risk_gap_ahead: Option<f64>,
    /// ‖v_{t+1}‖₂ / ‖α_t‖₂
    pub v_norm_ratio: Option<f64>,
    pub xi_hat_norm: Option<f64>,
    pub zeta_hat_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: u64,
    pub outcome: std::result::Result<Vec<TrialRow>, String>,
}

/// Everything computed for one trial, for callers that want the objects.
pub struct TrialData {
    pub model: LinearModel,
    pub trace: AmpTrace,
    pub se: SeTrace,
    pub decomp: Option<DecompState>,
    pub hat: Option<HatState>,
}

pub fn trial_data(cfg: &ExperimentConfig, size: Size, trial: u64) -> Result<TrialData> {
    let diag = cfg.diagnostics;
    let need_decomp = diag.decomp || diag.w1 || diag.hat;
    let model = cfg.model_spec(size).generate(cfg.seed, trial)?;
    let mode = cfg.mode_for(size.n);
    let opts = AmpOptions {
        keep_history: need_decomp,
        ..AmpOptions::default()
    };
    let trace = run_amp(&model, mode, cfg.t_max, opts)?;
    let se = run_se(&model, mode, cfg.t_max)?;
    let (decomp, hat) = if need_decomp {
        let dopts = DecompOptions {
            aux_seed: cfg.seed,
            aux_trial: trial,
            ..DecompOptions::default()
        };
        let dec = decompose(&model, &trace, &dopts)?;
        let hat = if diag.hat { Some(hat_sequences(&model, &trace, &dec)?) } else { None };
        (Some(dec), hat)
    } else {
        (None, None)
    };
    Ok(TrialData { model, trace, se, decomp, hat })
}

pub fn trial_rows(cfg: &ExperimentConfig, data: &TrialData) -> Result<Vec<TrialRow>> {
    let TrialData { model, trace, se, decomp, hat } = data;
    let diag = cfg.diagnostics;
    let n = model.n as f64;
    let mut rows = vec![TrialRow {
        t: 0,
        risk: trace.states[0].risk,
        ..TrialRow::default()
    }];
    for t in 1..=trace.t_max() {
        let st = &trace.states[t];
        let mut row = TrialRow {
            t,
            risk: st.risk,
            gamma_emp: Some(st.gamma_norm),
            gamma_star: Some(se.gamma(t)),
            alpha_emp: Some(st.alpha_norm),
            alpha_star: Some(se.alpha(t)),
            tau_or_b: st.param,
            risk_gap_ahead: (t < trace.t_max()).then(|| trace.states[t + 1].risk - se.gamma(t)),
            ..TrialRow::default()
        };
        if let Some(dec) = decomp.as_ref().filter(|d| d.len() >= t) {
            if diag.decomp {
                row.xi_norm = Some(norm(&dec.xi[t - 1]));
                row.zeta_norm = Some(norm(&dec.zeta[t - 1]));
            }
            let alpha = norm(&dec.alpha[t - 1]);
            let v = &dec.v[t - 1];
            if alpha > 0.0 {
                row.v_norm_ratio = Some(norm(v) / alpha);
                if diag.w1 {
                    let scaled: Vec<f64> = v.iter().map(|x| n.sqrt() * x / alpha).collect();
                    row.w1_coord = Some(w1_gaussian_1d(&scaled, 1.0)?);
                }
            }
        }
        if let Some(h) = hat {
            row.zeta_hat_norm = h.zeta_hat_norm.get(t - 1).copied();
            // ξ̂_t = ξ_t − Σ_{k<t} α̂_{t−1}^k G_k(s_k)
            row.xi_hat_norm = if t >= 2 { h.xi_hat_norm.get(t - 2).copied() } else { row.xi_norm };
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn run_trial(cfg: &ExperimentConfig, size: Size, trial: u64) -> Result<Vec<TrialRow>> {
    trial_rows(cfg, &trial_data(cfg, size, trial)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn trials_csv(results: &[TrialResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        let Ok(rows) = &r.outcome else { continue };
        for row in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.trial,
                row.t,
                row.risk,
                opt(row.gamma_emp),
                opt(row.gamma_star),
                opt(row.alpha_emp),
                opt(row.alpha_star),
                opt(row.tau_or_b),
                opt(row.xi_norm),
                opt(row.zeta_norm),
                opt(row.w1_coord),
            );
        }
    }
    out
}

// ---------------------------------------------------------------- aggregate

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Standard error of the mean (0 with one value).
    pub se: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let se = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, se, count: values.len() })
    }
}

/// Aggregated metrics, by name, at each t.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TStats {
    pub t: usize,
    pub metrics: BTreeMap<&'static str, Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialFailure {
    pub trial: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeReport {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub succeeded: usize,
    pub failed: Vec<TrialFailure>,
    pub per_t: Vec<TStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingEntry {
    /// (n, mean value) at the scaling iteration.
    pub points: Vec<(f64, f64)>,
    pub fit: Option<ScalingFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scaling {
    pub t: usize,
    pub metrics: BTreeMap<&'static str, ScalingEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub mode: ModeKind,
    pub trials: usize,
    pub t_max: usize,
    pub seed: u64,
    pub warnings: Vec<&'static str>,
    pub sizes: Vec<SizeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling: Option<Scaling>,
}

/// Metrics extracted from a row; absolute values for the gaps.
fn row_metrics(row: &TrialRow) -> [(&'static str, Option<f64>); 15] {
    let gap2 = row.gamma_emp.zip(row.gamma_star).map(|(e, s)| (e * e - s * s).abs());
    let gap = row.gamma_emp.zip(row.gamma_star).map(|(e, s)| (e - s).abs());
    [
        ("risk", Some(row.risk)),
        ("gamma_emp", row.gamma_emp),
        ("gamma_star", row.gamma_star),
        ("alpha_emp", row.alpha_emp),
        ("alpha_star", row.alpha_star),
        ("tau_or_b", row.tau_or_b),
        ("xi_norm", row.xi_norm),
        ("zeta_norm", row.zeta_norm),
        ("w1_coord", row.w1_coord),
        ("gamma2_gap", gap2),
        ("risk_gap", gap),
        ("risk_gap_ahead", row.risk_gap_ahead.map(f64::abs)),
        ("v_norm_ratio", row.v_norm_ratio),
        ("xi_hat_norm", row.xi_hat_norm),
        ("zeta_hat_norm", row.zeta_hat_norm),
    ]
}

pub const SCALING_METRICS: [&str; 6] = ["gamma2_gap", "risk_gap", "risk_gap_ahead", "xi_norm", "zeta_norm", "w1_coord"];

pub fn size_report(size: Size, results: &[TrialResult], t_max: usize) -> SizeReport {
    let ok: Vec<&Vec<TrialRow>> = results.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let failed = results
        .iter()
        .filter_map(|r| r.outcome.as_ref().err().map(|e| TrialFailure { trial: r.trial, error: e.clone() }))
        .collect();
    let per_t = (0..=t_max)
        .map(|t| {
            let mut cols: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
            for rows in &ok {
                if let Some(row) = rows.get(t) {
                    for (name, v) in row_metrics(row) {
                        if let Some(v) = v.filter(|v| v.is_finite()) {
                            cols.entry(name).or_default().push(v);
                        }
                    }
                }
            }
            TStats {
                t,
                metrics: cols.into_iter().filter_map(|(k, v)| Stat::of(&v).map(|s| (k, s))).collect(),
            }
        })
        .collect();
    SizeReport {
        n: size.n,
        p: size.p,
        k: size.k,
        succeeded: ok.len(),
        failed,
        per_t,
    }
}

pub fn scaling(reports: &[SizeReport], t: usize) -> Scaling {
    let metrics = SCALING_METRICS
        .iter()
        .map(|&name| {
            let points: Vec<(f64, f64)> = reports
                .iter()
                .filter_map(|r| r.per_t.get(t)?.metrics.get(name).map(|s| (r.n as f64, s.mean)))
                .collect();
            let (fit, error) = match scaling_fit(&points) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            (name, ScalingEntry { points, fit, error })
        })
        .collect();
    Scaling { t, metrics }
}

// ----------------------------------------------------------------- driver

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; None uses rayon's default.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub aggregate: Aggregate,
    pub files: Vec<PathBuf>,
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::param("threads", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// All trials for one size, in trial order regardless of scheduling.
pub fn run_size(cfg: &ExperimentConfig, size: Size) -> Vec<TrialResult> {
    (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| TrialResult {
            trial,
            outcome: run_trial(cfg, size, trial).map_err(|e| format!("{}: {e}", e.kind())),
        })
        .collect()
}

fn write(path: PathBuf, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, contents)?;
    files.push(path);
    Ok(())
}

/// Runs every size of the experiment and writes `trials.csv` (or
/// `trials_n{n}.csv` per size for sweeps), `aggregate.json`, `risk_n{n}.svg`,
/// `scaling.svg` for sweeps and H-curves when requested. Fails only if every
/// trial failed, after writing the outputs.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir)?;
    let sizes = cfg.sizes();
    let sweep = cfg.n_sweep.is_some();
    let results: Vec<(Size, Vec<TrialResult>)> =
        with_pool(opts.threads, || sizes.iter().map(|&s| (s, run_size(cfg, s))).collect())?;

    let mut files = Vec::new();
    let mut reports = Vec::new();
    for (size, res) in &results {
        let name = if sweep { format!("trials_n{}.csv", size.n) } else { "trials.csv".to_string() };
        write(out_dir.join(name), &trials_csv(res), &mut files)?;
        let report = size_report(*size, res, cfg.t_max);
        write(out_dir.join(format!("risk_n{}.svg", size.n)), &risk_plot(&report), &mut files)?;
        reports.push(report);
    }
    let scaling = sweep.then(|| scaling(&reports, cfg.scaling_t()));
    let aggregate = Aggregate {
        mode: cfg.mode,
        trials: cfg.trials,
        t_max: cfg.t_max,
        seed: cfg.seed,
        warnings: cfg.warnings.iter().map(|w| w.message()).collect(),
        sizes: reports,
        scaling,
    };
    let json = serde_json::to_string_pretty(&aggregate).map_err(|e| Error::Format(e.to_string()))?;
    write(out_dir.join("aggregate.json"), &(json + "\n"), &mut files)?;
    if let Some(s) = &aggregate.scaling {
        write(out_dir.join("scaling.svg"), &scaling_plot(s), &mut files)?;
    }
    if cfg.diagnostics.hfun {
        let families = match cfg.mode {
            ModeKind::Sparse => [HFamily::LassoH1, HFamily::LassoH2],
            ModeKind::Robust => [HFamily::RobustH1, HFamily::RobustH2],
        };
        for fam in families {
            let curve = default_h_curve(fam)?;
            write(out_dir.join(format!("{}.csv", fam.name())), &curve.to_csv(), &mut files)?;
            write(out_dir.join(format!("{}.svg", fam.name())), &curve.to_svg(), &mut files)?;
        }
    }
    if aggregate.sizes.iter().all(|r| r.succeeded == 0) {
        let first = aggregate.sizes.iter().flat_map(|r| &r.failed).next();
        return Err(Error::NumericFailure {
            iteration: 0,
            what: format!("all trials failed; first: {}", first.map(|f| f.error.as_str()).unwrap_or("?")),
        });
    }
    Ok(RunSummary { aggregate, files })
}

/// Default grids: ω ∈ [0.01, 5] and τ ∈ [0.01, 5] in steps of 0.01.
pub fn default_h_curve(family: HFamily) -> Result<diag::HCurve> {
    let grid = diag::uniform_grid(0.01, 5.0, 0.01)?;
    diag::h_curve(family, &grid, &HOptions::default())
}

fn risk_plot(r: &SizeReport) -> String {
    let ts: Vec<f64> = r.per_t.iter().map(|s| s.t as f64).collect();
    let col = |name: &str| -> Vec<f64> {
        r.per_t
            .iter()
            .map(|s| s.metrics.get(name).map_or(f64::NAN, |v| v.mean))
            .collect()
    };
    let (emp, star) = (col("gamma_emp"), col("gamma_star"));
    svg::line_plot(
        &format!("n = {}, p = {}, k = {}", r.n, r.p, r.k),
        "t",
        "gamma",
        &[
            svg::Series { name: "empirical", x: &ts, y: &emp },
            svg::Series { name: "state evolution", x: &ts, y: &star },
        ],
    )
}

fn scaling_plot(s: &Scaling) -> String {
    let data: Vec<(&str, Vec<f64>, Vec<f64>)> = s
        .metrics
        .iter()
        .filter(|(_, e)| !e.points.is_empty() && e.points.iter().all(|p| p.1 > 0.0))
        .map(|(name, e)| {
            (
                *name,
                e.points.iter().map(|p| p.0.ln()).collect(),
                e.points.iter().map(|p| p.1.ln()).collect(),
            )
        })
        .collect();
    let series: Vec<svg::Series> = data.iter().map(|(name, x, y)| svg::Series { name, x, y }).collect();
    svg::line_plot(&format!("scaling at t = {}", s.t), "log n", "log mean", &series)
}
