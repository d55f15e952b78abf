//! Problem instances y = Xθ* + ε with an i.i.d. N(0, 1/n) design.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::linalg::{self, Matrix};
use crate::rng::{Purpose, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SignalSpec {
    /// k entries ±magnitude on a uniformly random support. The default
    /// magnitude 1/√k gives ‖θ*‖₂ = 1.
    SignedUniformSupport {
        #[serde(default)]
        magnitude: Option<f64>,
    },
    ExplicitVector { values: Vec<f64> },
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec::SignedUniformSupport { magnitude: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    HuberMixture,
}

/// Law H of the contaminated coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Contamination {
    None,
    PointMass { value: f64 },
    /// Cauchy with the given scale.
    HeavyTail { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma2: f64,
    pub eps_h: f64,
    pub contam: Contamination,
}

impl NoiseSpec {
    pub fn gaussian(sigma2: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Gaussian,
            sigma2,
            eps_h: 0.0,
            contam: Contamination::None,
        }
    }

    /// σ² = target²/n so that ‖ε‖₂ concentrates at `target`.
    pub fn gaussian_with_norm(n: usize, target: f64) -> Self {
        Self::gaussian(target * target / n as f64)
    }

    /// σ² = 1/n with a point mass at 5σ carrying weight `eps_h`.
    pub fn robust_default(n: usize, eps_h: f64) -> Self {
        let sigma2 = 1.0 / n as f64;
        NoiseSpec {
            kind: NoiseKind::HuberMixture,
            sigma2,
            eps_h,
            contam: Contamination::PointMass {
                value: 5.0 * sigma2.sqrt(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::param("sigma2", format!("must be finite and >= 0, got {}", self.sigma2)));
        }
        if !(0.0..1.0).contains(&self.eps_h) {
            return Err(Error::InvalidFraction(self.eps_h));
        }
        match self.contam {
            Contamination::PointMass { value } if !value.is_finite() => {
                Err(Error::param("contam.value", "must be finite"))
            }
            Contamination::HeavyTail { scale } if !(scale > 0.0 && scale.is_finite()) => {
                Err(Error::param("contam.scale", "must be finite and > 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub values: Vec<f64>,
    /// Sorted indices of contaminated coordinates (empty for Gaussian noise).
    pub contaminated: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub signal: SignalSpec,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub design: Matrix,
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
    pub observations: Vec<f64>,
    pub contaminated: Vec<usize>,
    pub seed: u64,
    pub trial: u64,
}

fn design_from(stream: &mut Stream, n: usize, p: usize) -> Matrix {
    let mut x = Matrix::zeros(n, p);
    stream.fill_gaussian(x.as_mut_slice(), 1.0 / (n as f64).sqrt());
    x
}

/// n×p matrix with i.i.d. N(0, 1/n) entries, filled row-major from the
/// design stream of trial 0.
pub fn gen_design(n: usize, p: usize, seed: u64) -> Matrix {
    design_from(&mut Stream::new(seed, 0, Purpose::Design), n, p)
}

fn signal_from(stream: &mut Stream, p: usize, k: usize, spec: &SignalSpec) -> Result<Vec<f64>> {
    match spec {
        SignalSpec::ExplicitVector { values } => {
            if values.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "explicit signal has {} entries, p = {p}",
                    values.len()
                )));
            }
            Ok(values.clone())
        }
        SignalSpec::SignedUniformSupport { magnitude } => {
            if k == 0 || k > p {
                return Err(Error::InvalidSparsity { k, p });
            }
            let mag = magnitude.unwrap_or(1.0 / (k as f64).sqrt());
            if !(mag > 0.0 && mag.is_finite()) {
                return Err(Error::param("signal.magnitude", "must be finite and > 0"));
            }
            // partial Fisher–Yates: the first k slots are a uniform k-subset
            let mut idx: Vec<usize> = (0..p).collect();
            for i in 0..k {
                let j = i + stream.below((p - i) as u64) as usize;
                idx.swap(i, j);
            }
            let mut theta = vec![0.0; p];
            for &j in &idx[..k] {
                theta[j] = if stream.next_u64() >> 63 == 1 { mag } else { -mag };
            }
            Ok(theta)
        }
    }
}

pub fn gen_signal(p: usize, k: usize, spec: &SignalSpec, seed: u64) -> Result<Vec<f64>> {
    signal_from(&mut Stream::new(seed, 0, Purpose::Signal), p, k, spec)
}

fn noise_from(stream: &mut Stream, n: usize, spec: &NoiseSpec) -> Result<NoiseDraw> {
    spec.validate()?;
    // Gaussian part first, so eps_h = 0 reproduces the pure Gaussian vector.
    let mut values = vec![0.0; n];
    stream.fill_gaussian(&mut values, spec.sigma2.sqrt());
    let mut contaminated = Vec::new();
    if spec.kind == NoiseKind::HuberMixture && spec.eps_h > 0.0 {
        for i in 0..n {
            if stream.uniform() < spec.eps_h {
                contaminated.push(i);
            }
        }
        for &i in &contaminated {
            values[i] = match spec.contam {
                Contamination::None => values[i],
                Contamination::PointMass { value } => value,
                Contamination::HeavyTail { scale } => {
                    scale * (std::f64::consts::PI * (stream.uniform() - 0.5)).tan()
                }
            };
        }
    }
    Ok(NoiseDraw {
        values,
        contaminated,
    })
}

pub fn gen_noise(n: usize, spec: &NoiseSpec, seed: u64) -> Result<NoiseDraw> {
    noise_from(&mut Stream::new(seed, 0, Purpose::Noise), n, spec)
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::param("n, p", "must be >= 1"));
        }
        if self.n.checked_mul(self.p).is_none_or(|np| np > (1usize << 40)) {
            return Err(Error::param("n, p", "design too large"));
        }
        if self.k == 0 || self.k > self.p {
            return Err(Error::InvalidSparsity { k: self.k, p: self.p });
        }
        self.noise.validate()
    }

    /// Instance for one trial; each component reads its own stream.
    pub fn generate(&self, seed: u64, trial: u64) -> Result<LinearModel> {
        self.validate()?;
        let design = design_from(&mut Stream::new(seed, trial, Purpose::Design), self.n, self.p);
        let signal = signal_from(
            &mut Stream::new(seed, trial, Purpose::Signal),
            self.p,
            self.k,
            &self.signal,
        )?;
        let noise = noise_from(&mut Stream::new(seed, trial, Purpose::Noise), self.n, &self.noise)?;
        LinearModel::assemble(design, signal, noise, self.k, seed, trial)
    }
}

impl LinearModel {
    pub fn assemble(
        design: Matrix,
        signal: Vec<f64>,
        noise: NoiseDraw,
        k: usize,
        seed: u64,
        trial: u64,
    ) -> Result<Self> {
        let (n, p) = (design.rows(), design.cols());
        if signal.len() != p || noise.values.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "design {n}x{p}, signal {}, noise {}",
                signal.len(),
                noise.values.len()
            )));
        }
        let mut observations = design.matvec(&signal);
        for (y, e) in observations.iter_mut().zip(&noise.values) {
            *y += e;
        }
        Ok(LinearModel {
            n,
            p,
            k,
            design,
            signal,
            noise: noise.values,
            observations,
            contaminated: noise.contaminated,
            seed,
            trial,
        })
    }

    pub fn signal_norm(&self) -> f64 {
        linalg::norm(&self.signal)
    }

    pub fn noise_norm2(&self) -> f64 {
        linalg::norm2(&self.noise)
    }

    /// Writes the versioned binary container: magic `AMPLAB`, format version,
    /// dimensions, then the row-major design and the vectors, all little endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for v in [self.n, self.p, self.k].map(|x| x as u64).into_iter().chain([self.seed, self.trial]) {
            w.write_all(&v.to_le_bytes())?;
        }
        for block in [
            self.design.as_slice(),
            &self.signal,
            &self.noise,
            &self.observations,
        ] {
            for x in block {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.write_all(&(self.contaminated.len() as u64).to_le_bytes())?;
        for &i in &self.contaminated {
            w.write_all(&(i as u64).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut u64s = [0u64; 5];
        for v in u64s.iter_mut() {
            *v = read_u64(&mut r)?;
        }
        let [n, p, k, seed, trial] = u64s;
        let (n, p, k) = (n as usize, p as usize, k as usize);
        if n == 0 || p == 0 || n.checked_mul(p).is_none_or(|np| np > (1usize << 40)) {
            return Err(Error::Format(format!("implausible dimensions {n}x{p}")));
        }
        let design = Matrix::from_row_major(n, p, read_f64s(&mut r, n * p)?)?;
        let signal = read_f64s(&mut r, p)?;
        let noise = read_f64s(&mut r, n)?;
        let observations = read_f64s(&mut r, n)?;
        let m = read_u64(&mut r)? as usize;
        if m > n {
            return Err(Error::Format("contaminated count exceeds n".into()));
        }
        let mut contaminated = Vec::with_capacity(m);
        for _ in 0..m {
            contaminated.push(read_u64(&mut r)? as usize);
        }
        Ok(LinearModel {
            n,
            p,
            k,
            design,
            signal,
            noise,
            observations,
            contaminated,
            seed,
            trial,
        })
    }
}

const MAGIC: &[u8; 6] = b"AMPLAB";
const FORMAT_VERSION: u32 = 1;

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, p: usize, k: usize) -> ModelSpec {
        ModelSpec {
            n,
            p,
            k,
            signal: SignalSpec::default(),
            noise: NoiseSpec::gaussian_with_norm(n, 0.5),
        }
    }

    #[test]
    fn design_unit_variance_over_seeds() {
        let m = 1_000_000u64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for seed in 0..m {
            let x = gen_design(1, 1, seed).get(0, 0);
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / m as f64;
        let var = s2 / m as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.01, "var = {var}");
    }

    #[test]
    fn design_mean_near_zero() {
        let x = gen_design(400, 200, 7);
        let mean = x.as_slice().iter().sum::<f64>() / (400.0 * 200.0);
        // entries have sd 1/√400
        let bound = 4.0 / (400.0 * 200.0 * 400.0f64).sqrt();
        assert!(mean.abs() < bound, "mean = {mean}");
    }

    #[test]
    fn design_spectral_norm_concentrates() {
        let target = 1.0 + 0.5f64.sqrt();
        let hits = (0..100)
            .filter(|&s| (gen_design(400, 200, s).spectral_norm(60) - target).abs() <= 0.2)
            .count();
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn signal_examples() {
        let full = gen_signal(4, 4, &SignalSpec::default(), 3).unwrap();
        assert!(full.iter().all(|&x| (x.abs() - 0.5).abs() < 1e-15));
        assert!((linalg::norm(&full) - 1.0).abs() < 1e-15);

        let one = gen_signal(10, 1, &SignalSpec::default(), 3).unwrap();
        assert_eq!(one.iter().filter(|&&x| x != 0.0).count(), 1);
        assert_eq!(one.iter().map(|x| x.abs()).sum::<f64>(), 1.0);

        let big = gen_signal(1000, 250, &SignalSpec::default(), 9).unwrap();
        assert_eq!(big.iter().filter(|&&x| x != 0.0).count(), 250);
        let l1: f64 = big.iter().map(|x| x.abs()).sum();
        assert!((l1 - 250f64.sqrt()).abs() < 1e-12);

        assert!(matches!(
            gen_signal(3, 4, &SignalSpec::default(), 0),
            Err(Error::InvalidSparsity { k: 4, p: 3 })
        ));
    }

    #[test]
    fn gaussian_noise_energy() {
        let n = 50;
        let s2 = 0.49;
        let spec = NoiseSpec::gaussian(s2 / n as f64);
        let mean: f64 = (0..1000)
            .map(|seed| linalg::norm2(&gen_noise(n, &spec, seed).unwrap().values))
            .sum::<f64>()
            / 1000.0;
        assert!((mean / s2 - 1.0).abs() < 0.05, "mean = {mean}");
    }

    #[test]
    fn degenerate_mixture_is_gaussian() {
        let g = gen_noise(100, &NoiseSpec::gaussian(0.3), 4).unwrap();
        let mut mix = NoiseSpec::robust_default(100, 0.0);
        mix.sigma2 = 0.3;
        let h = gen_noise(100, &mix, 4).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn contamination_count() {
        let n = 10_000;
        let spec = NoiseSpec {
            kind: NoiseKind::HuberMixture,
            sigma2: 1.0 / n as f64,
            eps_h: 0.1,
            contam: Contamination::PointMass {
                value: 5.0 / (n as f64).sqrt(),
            },
        };
        let draw = gen_noise(n, &spec, 1).unwrap();
        let c = draw.contaminated.len() as f64;
        assert!((c - 1000.0).abs() < 3.0 * (n as f64 * 0.09).sqrt(), "count {c}");
        for &i in &draw.contaminated {
            assert_eq!(draw.values[i], 0.05);
        }
        let bad = NoiseSpec { eps_h: 1.0, ..spec };
        assert!(matches!(gen_noise(5, &bad, 0), Err(Error::InvalidFraction(_))));
    }

    #[test]
    fn reconstruction_and_determinism() {
        let s = spec(40, 20, 5);
        let a = s.generate(3, 2).unwrap();
        let b = s.generate(3, 2).unwrap();
        assert_eq!(a, b);
        let c = s.generate(3, 3).unwrap();
        assert_ne!(a.design, c.design);
        let xt = a.design.matvec(&a.signal);
        let resid: Vec<f64> = (0..a.n).map(|i| a.observations[i] - xt[i] - a.noise[i]).collect();
        assert!(linalg::norm(&resid) <= 1e-12 * linalg::norm(&a.observations));
    }

    #[test]
    fn container_round_trip() {
        let mut s = spec(12, 8, 3);
        s.noise = NoiseSpec::robust_default(12, 0.3);
        let a = s.generate(1, 0).unwrap();
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        let b = LinearModel::read_from(&buf[..]).unwrap();
        assert_eq!(a, b);
        buf[0] = b'X';
        assert!(matches!(LinearModel::read_from(&buf[..]), Err(Error::Format(_))));
        assert!(LinearModel::read_from(&buf[..10]).is_err());
    }
}
