//! Experiment configuration (TOML).
//!
//! ```toml
//! mode = "sparse"          # or "robust"
//! n = 2000
//! p = 1000
//! k = 250                  # optional in robust mode (default p)
//! lambda = 0.0224          # robust only; default 1/√n
//! t_max = 25               # default 25
//! trials = 20              # default 20
//! seed = 0                 # default 0
//! n_sweep = [500, 1000]    # optional; p and k scale with n
//! scaling_t = 10           # optional; iteration used for scaling fits
//!
//! [signal]                 # default: signed-uniform-support, ‖θ*‖₂ = 1
//! kind = "signed-uniform-support"
//! magnitude = 0.05
//!
//! [noise]                  # sparse default: gaussian, norm = 0.5
//! kind = "gaussian"        # or "huber-mixture"
//! norm = 0.5               # σ² = norm²/n; or give sigma2 directly
//! eps_h = 0.05             # huber-mixture only
//! contam = { kind = "point-mass", value = 0.1 }   # default 5σ
//!
//! [diagnostics]
//! decomp = true
//! hat = false
//! w1 = true
//! hfun = false
//! ```

use serde::{Deserialize, Serialize};

use crate::amp::Mode;
use crate::model::{Contamination, ModelSpec, NoiseKind, NoiseSpec, SignalSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    Sparse,
    Robust,
}

/// Noise settings before n is known.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: Option<NoiseKind>,
    pub sigma2: Option<f64>,
    /// Target ‖ε‖₂ of the Gaussian part; σ² = norm²/n.
    pub norm: Option<f64>,
    pub eps_h: Option<f64>,
    pub contam: Option<Contamination>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Diagnostics {
    pub decomp: bool,
    pub hat: bool,
    pub w1: bool,
    pub hfun: bool,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Diagnostics {
            decomp: true,
            hat: false,
            w1: true,
            hfun: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfigWarning {
    /// n ≤ 2k log(p/k)
    FewSamples,
    /// p ≤ 2.3k
    DenseSignal,
}

impl ConfigWarning {
    pub fn message(self) -> &'static str {
        match self {
            ConfigWarning::FewSamples => "n <= 2k log(p/k): outside the sample-size regime of the sparse guarantees",
            ConfigWarning::DenseSignal => "p <= 2.3k: outside the sparsity regime of the sparse guarantees",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: ModeKind,
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub signal: SignalSpec,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub n_sweep: Option<Vec<usize>>,
    #[serde(default)]
    pub scaling_t: Option<usize>,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub warnings: Vec<ConfigWarning>,
}

fn default_t_max() -> usize {
    25
}

fn default_trials() -> usize {
    20
}

/// Problem size of one run within an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Size {
    pub n: usize,
    pub p: usize,
    pub k: usize,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("", e.message().to_string()))?;
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let key = if key == "." { String::new() } else { key };
        Error::config(key, e.into_inner().message().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Checks invariants and fills `warnings`.
    pub fn validate(&mut self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n", "must be >= 1"));
        }
        if self.p == 0 {
            return Err(Error::config("p", "must be >= 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be >= 1"));
        }
        if self.t_max == 0 {
            return Err(Error::config("t_max", "must be >= 1"));
        }
        let k = match (self.mode, self.k) {
            (_, Some(k)) => k,
            (ModeKind::Robust, None) => self.p,
            (ModeKind::Sparse, None) => return Err(Error::config("k", "required in sparse mode")),
        };
        if k == 0 || k > self.p {
            return Err(Error::config("k", format!("need 1 <= k <= p, got k = {k}, p = {}", self.p)));
        }
        if self.mode == ModeKind::Robust && self.p >= self.n {
            return Err(Error::config("p", format!("robust mode needs p < n, got p = {}, n = {}", self.p, self.n)));
        }
        if let Some(l) = self.lambda {
            if self.mode == ModeKind::Sparse {
                return Err(Error::config("lambda", "only used in robust mode"));
            }
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::config("lambda", format!("must be positive, got {l}")));
            }
        }
        if let Some(sweep) = &self.n_sweep {
            if sweep.len() < 3 {
                return Err(Error::config("n_sweep", "need at least 3 sizes for a scaling fit"));
            }
            if sweep.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config("n_sweep", "must be strictly increasing"));
            }
        }
        if let Some(t) = self.scaling_t {
            if t == 0 || t > self.t_max {
                return Err(Error::config("scaling_t", format!("must lie in 1..={}", self.t_max)));
            }
        }
        let nc = &self.noise;
        if nc.sigma2.is_some() && nc.norm.is_some() {
            return Err(Error::config("noise", "give at most one of sigma2 and norm"));
        }
        if nc.kind == Some(NoiseKind::Gaussian) && (nc.eps_h.is_some_and(|e| e > 0.0) || nc.contam.is_some()) {
            return Err(Error::config("noise.kind", "gaussian noise takes no contamination"));
        }
        for size in self.sizes() {
            let spec = self.model_spec(size);
            spec.noise.validate().map_err(|e| Error::config("noise", e.to_string()))?;
            spec.validate().map_err(|e| Error::config("", e.to_string()))?;
            if self.mode == ModeKind::Robust && size.p >= size.n {
                return Err(Error::config("n_sweep", format!("robust mode needs p < n at n = {}", size.n)));
            }
            if size.n < 2 || size.p < 1 {
                return Err(Error::config("n_sweep", format!("size {size:?} too small")));
            }
        }
        if let SignalSpec::ExplicitVector { values } = &self.signal {
            if self.n_sweep.is_some() {
                return Err(Error::config("signal", "an explicit vector cannot be rescaled by n_sweep"));
            }
            if values.len() != self.p {
                return Err(Error::config("signal.values", format!("length {} != p = {}", values.len(), self.p)));
            }
        }
        self.k = Some(k);
        self.warnings.clear();
        if self.mode == ModeKind::Sparse {
            let (n, p, k) = (self.n as f64, self.p as f64, k as f64);
            if n <= 2.0 * k * (p / k).ln() {
                self.warnings.push(ConfigWarning::FewSamples);
            }
            if p <= 2.3 * k {
                self.warnings.push(ConfigWarning::DenseSignal);
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or(self.p)
    }

    /// Base size, or one size per entry of `n_sweep` with p, k scaled.
    pub fn sizes(&self) -> Vec<Size> {
        let base = Size { n: self.n, p: self.p, k: self.k() };
        match &self.n_sweep {
            None => vec![base],
            Some(ns) => ns
                .iter()
                .map(|&n| {
                    let scale = |v: usize| ((v as f64 * n as f64 / self.n as f64).round() as usize).max(1);
                    Size { n, p: scale(base.p), k: scale(base.k).min(scale(base.p)) }
                })
                .collect(),
        }
    }

    pub fn mode_for(&self, n: usize) -> Mode {
        match self.mode {
            ModeKind::Sparse => Mode::Sparse,
            ModeKind::Robust => Mode::Robust {
                lambda: self.lambda.unwrap_or(1.0 / (n as f64).sqrt()),
            },
        }
    }

    pub fn noise_for(&self, n: usize) -> NoiseSpec {
        let nc = &self.noise;
        let kind = nc.kind.unwrap_or(match self.mode {
            ModeKind::Sparse => NoiseKind::Gaussian,
            ModeKind::Robust => NoiseKind::HuberMixture,
        });
        let default_norm = match self.mode {
            ModeKind::Sparse => 0.5,
            ModeKind::Robust => 1.0,
        };
        let sigma2 = nc
            .sigma2
            .unwrap_or_else(|| nc.norm.unwrap_or(default_norm).powi(2) / n as f64);
        match kind {
            NoiseKind::Gaussian => NoiseSpec::gaussian(sigma2),
            NoiseKind::HuberMixture => NoiseSpec {
                kind,
                sigma2,
                eps_h: nc.eps_h.unwrap_or(0.05),
                contam: nc.contam.unwrap_or(Contamination::PointMass {
                    value: 5.0 * sigma2.sqrt(),
                }),
            },
        }
    }

    pub fn model_spec(&self, size: Size) -> ModelSpec {
        ModelSpec {
            n: size.n,
            p: size.p,
            k: size.k,
            signal: self.signal.clone(),
            noise: self.noise_for(size.n),
        }
    }

    pub fn scaling_t(&self) -> usize {
        self.scaling_t.unwrap_or(self.t_max.min(10))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_defaults() {
        let c = parse_config("mode = \"sparse\"\nn = 400\np = 200\nk = 20\n").unwrap();
        assert_eq!((c.trials, c.t_max, c.seed), (20, 25, 0));
        assert_eq!(c.signal, SignalSpec::default());
        assert_eq!(c.noise_for(400), NoiseSpec::gaussian(0.25 / 400.0));
        assert!(c.warnings.is_empty());
        assert_eq!(c.mode_for(400), Mode::Sparse);
        assert_eq!(c.scaling_t(), 10);
    }

    #[test]
    fn robust_defaults() {
        let c = parse_config("mode = \"robust\"\nn = 400\np = 200\n").unwrap();
        assert_eq!(c.k(), 200);
        assert_eq!(c.mode_for(400), Mode::Robust { lambda: 0.05 });
        assert_eq!(c.noise_for(400), NoiseSpec::robust_default(400, 0.05));
    }

    #[test]
    fn robust_needs_p_below_n() {
        let e = parse_config("mode = \"robust\"\nn = 200\np = 200\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "p"), "{e}");
    }

    #[test]
    fn sparse_warning_flags() {
        let c = parse_config("mode = \"sparse\"\nn = 50\np = 100\nk = 20\n").unwrap();
        assert!(c.warnings.contains(&ConfigWarning::FewSamples));
        let c = parse_config("mode = \"sparse\"\nn = 500\np = 40\nk = 20\n").unwrap();
        assert!(c.warnings.contains(&ConfigWarning::DenseSignal));
    }

    #[test]
    fn unknown_and_mistyped_keys() {
        let e = parse_config("mode = \"sparse\"\nn = 50\np = 100\nk = 20\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config { .. }), "{e}");
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = parse_config("mode = \"sparse\"\nn = 50\np = 100\nk = 20\n[noise]\nsigma2 = \"x\"\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "noise.sigma2"), "{e}");
        let e = parse_config("mode = \"sparse\"\np = 100\nk = 20\n").unwrap_err();
        assert!(e.to_string().contains('n'), "{e}");
    }

    #[test]
    fn sweep_scales_dimensions() {
        let c = parse_config("mode = \"sparse\"\nn = 1000\np = 500\nk = 125\nn_sweep = [500, 1000, 2000]\n").unwrap();
        let s = c.sizes();
        assert_eq!(s[0], Size { n: 500, p: 250, k: 63 });
        assert_eq!(s[2], Size { n: 2000, p: 1000, k: 250 });
        assert!(parse_config("mode = \"sparse\"\nn = 1000\np = 500\nk = 125\nn_sweep = [500, 400, 2000]\n").is_err());
    }

    #[test]
    fn roundtrip() {
        let c = parse_config(
            "mode = \"robust\"\nn = 300\np = 100\nlambda = 0.1\n[noise]\nkind = \"huber-mixture\"\nsigma2 = 0.01\neps_h = 0.1\ncontam = { kind = \"heavy-tail\", scale = 1.0 }\n[diagnostics]\nhat = true\n",
        )
        .unwrap();
        let back = parse_config(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        assert!(back.diagnostics.hat && back.diagnostics.decomp);
    }
}
