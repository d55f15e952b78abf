use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use amp_lab::config::{parse_config, ExperimentConfig};
use amp_lab::decomp::decomp_csv;
use amp_lab::diag::{h_curve, uniform_grid, HFamily, HOptions};
use amp_lab::experiment::{run_experiment, trial_data, RunOptions};
use amp_lab::se::SeProblem;
use amp_lab::Error;

#[derive(Parser)]
#[command(name = "amp-lab", version, about = "AMP, state evolution and decomposition diagnostics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a seeded multi-trial experiment
    Run(Common),
    /// Run an n-scaling study (config must set n_sweep)
    Sweep(Common),
    /// State evolution for one trial's instance
    Se {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Decomposition diagnostics for one trial
    Decomp {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Also compute the hat sequences
        #[arg(long)]
        hat: bool,
    },
    /// Tabulate an H-function
    Hfun(HfunArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    seed_override: Option<u64>,
    #[arg(long, env = "AMP_LAB_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct HfunArgs {
    /// lasso-H1, lasso-H2, robust-H1 or robust-H2
    #[arg(long)]
    family: HFamily,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    #[arg(long)]
    step: f64,
    /// Write <family>.csv and <family>.svg here instead of printing the CSV
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = HOptions::default().theta_max)]
    theta_max: f64,
    #[arg(long, default_value_t = HOptions::default().theta_step)]
    theta_step: f64,
    #[arg(long, default_value_t = HOptions::default().pk_min)]
    pk_min: f64,
    #[arg(long, default_value_t = HOptions::default().eps_extra)]
    eps_extra: f64,
    #[arg(long, default_value_t = HOptions::default().eps_step)]
    eps_step: f64,
    #[arg(long, env = "AMP_LAB_THREADS")]
    threads: Option<usize>,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidParameter { .. } => Failure::Usage(e.to_string()),
            e => Failure::Run(e.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", common.config.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(s) = common.seed_override {
        cfg.seed = s;
    }
    for w in &cfg.warnings {
        eprintln!("warning: {}", w.message());
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Run(e.to_string()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Run(common) => experiment(&common, false),
        Cmd::Sweep(common) => experiment(&common, true),
        Cmd::Se { common, trial } => {
            let cfg = load(&common)?;
            let size = cfg.sizes()[0];
            let model = cfg.model_spec(size).generate(cfg.seed, trial)?;
            let problem = SeProblem::from_model(&model, cfg.mode_for(size.n));
            let trace = problem.run(model.signal_norm(), cfg.t_max)?;
            write(&common.out_dir, "se.csv", &trace.to_csv())?;
            let fp = problem.fixed_point(model.signal_norm(), 1e-12, 1000)?;
            let f = fp.fixed_point.expect("fixed_point fills this");
            let json = serde_json::json!({
                "alpha": f.alpha,
                "gamma": f.gamma,
                "iterations": f.iterations,
                "converged": f.converged,
                "contraction_ratios": f.ratios,
            });
            write(&common.out_dir, "se_fixed_point.json", &format!("{json:#}\n"))
        }
        Cmd::Decomp { common, trial, hat } => {
            let mut cfg = load(&common)?;
            cfg.diagnostics.decomp = true;
            cfg.diagnostics.hat |= hat;
            let data = trial_data(&cfg, cfg.sizes()[0], trial)?;
            let dec = data.decomp.as_ref().expect("decomp enabled");
            if let Some(why) = &dec.stopped {
                eprintln!("warning: decomposition stopped at t = {}: {why}", dec.len() + 1);
            }
            write(&common.out_dir, "decomp.csv", &decomp_csv(dec, data.hat.as_ref()))
        }
        Cmd::Hfun(a) => {
            if !(a.to >= a.from) {
                return Err(Failure::Usage(format!("empty grid: --from {} --to {}", a.from, a.to)));
            }
            let grid = uniform_grid(a.from, a.to, a.step)?;
            let opts = HOptions {
                theta_max: a.theta_max,
                theta_step: a.theta_step,
                pk_min: a.pk_min,
                eps_extra: a.eps_extra,
                eps_step: a.eps_step,
            };
            let curve = pool(a.threads)?.install(|| h_curve(a.family, &grid, &opts))?;
            match &a.out_dir {
                Some(dir) => {
                    write(dir, &format!("{}.csv", a.family.name()), &curve.to_csv())?;
                    write(dir, &format!("{}.svg", a.family.name()), &curve.to_svg())
                }
                None => {
                    print!("{}", curve.to_csv());
                    Ok(())
                }
            }
        }
    }
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t.max(1));
    }
    b.build().map_err(|e| Failure::Run(e.to_string()))
}

fn experiment(common: &Common, sweep: bool) -> Result<(), Failure> {
    let cfg = load(common)?;
    if sweep && cfg.n_sweep.is_none() {
        return Err(Failure::Usage("sweep needs n_sweep in the config".into()));
    }
    let summary = run_experiment(&cfg, &common.out_dir, &RunOptions { threads: common.threads })?;
    for f in &summary.files {
        println!("{}", f.display());
    }
    for r in &summary.aggregate.sizes {
        for f in &r.failed {
            eprintln!("trial {} (n = {}) failed: {}", f.trial, r.n, f.error);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
    }
}
