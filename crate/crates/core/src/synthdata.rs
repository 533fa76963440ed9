//! Synthetic user data with ball-supported samples and tunable intra-user
//! correlation, plus adversarial corruption of whole users.
//!
//! With correlation `ρ`, user `i` draws a shift `s_i` uniform on the sphere of
//! radius `ρ·r/√m`; each sample is `μ + s_i + noise`, pulled back into
//! `B(μ, r)` when needed. The cross term `E⟨X_ij − μ, X_ij' − μ⟩` is then
//! at most `ρ²·r²/m`.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DpError, Result};
use crate::geometry::{clip_to_ball, sample_ball_into, Point};
use crate::rng::{derive_seed, seeded};
use crate::userlevel::{DiscreteCounts, DiscreteSamples, UserDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Family {
    UniformBall,
    /// Gaussian noise with per-coordinate scale `r/(2√d)`, clipped to the ball.
    ScaledGaussianClipped,
    PointMass,
    /// Categories `1..=len` with the given probabilities.
    Discrete { probabilities: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub r: f64,
    pub mu: Point,
    pub family: Family,
    #[serde(default)]
    pub rho: f64,
    pub seed: u64,
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 {
            return Err(DpError::invalid("n, m and d must be at least 1"));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(DpError::invalid(format!("r must be positive and finite, got {}", self.r)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(DpError::invalid(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if let Family::Discrete { probabilities } = &self.family {
            if probabilities.len() != self.d {
                return Err(DpError::DimensionMismatch { expected: self.d, got: probabilities.len() });
            }
            if probabilities.iter().any(|p| !(*p >= 0.0)) || (probabilities.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(DpError::invalid("probabilities must be non-negative and sum to 1"));
            }
        } else if self.mu.dim() != self.d {
            return Err(DpError::DimensionMismatch { expected: self.d, got: self.mu.dim() });
        }
        Ok(())
    }

    /// Mean of the sampling distribution (the probabilities for discrete data).
    pub fn true_mean(&self) -> Vec<f64> {
        match &self.family {
            Family::Discrete { probabilities } => probabilities.clone(),
            _ => self.mu.coords().to_vec(),
        }
    }
}

fn gen_user(spec: &DataSpec, i: usize, out: &mut [f64]) {
    let (m, d, r) = (spec.m, spec.d, spec.r);
    let mu = spec.mu.coords();
    if spec.family == Family::PointMass {
        out.chunks_exact_mut(d).for_each(|s| s.copy_from_slice(mu));
        return;
    }
    let mut rng = seeded(derive_seed(spec.seed, i as u64, 0));
    let mut shift = vec![0.0; d];
    if spec.rho > 0.0 {
        let mut sq: f64 = 0.0;
        while sq == 0.0 {
            sq = 0.0;
            for s in shift.iter_mut() {
                *s = rng.sample(StandardNormal);
                sq += *s * *s;
            }
        }
        let scale = spec.rho * r / (m as f64).sqrt() / sq.sqrt();
        shift.iter_mut().for_each(|s| *s *= scale);
    }
    let zero = vec![0.0; d];
    let sigma = r / (2.0 * (d as f64).sqrt());
    for s in out.chunks_exact_mut(d) {
        match spec.family {
            Family::UniformBall => sample_ball_into(&zero, r, &mut rng, s),
            Family::ScaledGaussianClipped => {
                for x in s.iter_mut() {
                    *x = sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
            _ => unreachable!("non-real family"),
        }
        for ((x, c), sh) in s.iter_mut().zip(mu).zip(&shift) {
            *x += c + sh;
        }
        clip_to_ball(mu, r, s);
    }
}

/// Real-valued dataset for the `uniform_ball`, `scaled_gaussian_clipped` and
/// `point_mass` families.
pub fn generate(spec: &DataSpec) -> Result<UserDataset> {
    spec.validate()?;
    if matches!(spec.family, Family::Discrete { .. }) {
        return Err(DpError::invalid("discrete family produces category data; use generate_discrete"));
    }
    let w = spec.m * spec.d;
    let mut data = vec![0.0; spec.n * w];
    data.par_chunks_mut(w).enumerate().for_each(|(i, u)| gen_user(spec, i, u));
    UserDataset::new(spec.n, spec.m, spec.d, data)
}

fn discrete_probs(spec: &DataSpec) -> Result<&[f64]> {
    spec.validate()?;
    match &spec.family {
        Family::Discrete { probabilities } => Ok(probabilities),
        _ => Err(DpError::invalid("category data needs the discrete family")),
    }
}

/// Category samples in `1..=d`, i.i.d. within and across users.
pub fn generate_discrete(spec: &DataSpec) -> Result<DiscreteSamples> {
    let probs = discrete_probs(spec)?;
    let mut cdf: Vec<f64> = probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    *cdf.last_mut().expect("d >= 1") = f64::INFINITY;
    let mut data = vec![0u32; spec.n * spec.m];
    data.par_chunks_mut(spec.m).enumerate().for_each(|(i, row)| {
        let mut rng = seeded(derive_seed(spec.seed, i as u64, 1));
        for c in row.iter_mut() {
            let u: f64 = rng.random();
            *c = cdf.partition_point(|&x| x <= u) as u32 + 1;
        }
    });
    DiscreteSamples::new(spec.n, spec.m, spec.d, data)
}

/// Per-user category counts drawn as a multinomial through sequential
/// binomials; scales to large `m` without materializing samples.
pub fn generate_discrete_counts(spec: &DataSpec) -> Result<DiscreteCounts> {
    let probs = discrete_probs(spec)?;
    let d = spec.d;
    let mut counts = vec![0u64; spec.n * d];
    counts.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        let mut rng = seeded(derive_seed(spec.seed, i as u64, 2));
        let mut left = spec.m as u64;
        let mut mass = 1.0;
        for (j, c) in row.iter_mut().enumerate() {
            if j + 1 == d {
                *c = left;
                break;
            }
            let p = if mass > 0.0 { (probs[j] / mass).clamp(0.0, 1.0) } else { 0.0 };
            *c = Binomial::new(left, p).expect("valid binomial").sample(&mut rng);
            left -= *c;
            mass -= probs[j];
        }
    });
    DiscreteCounts::new(spec.n, spec.m, d, counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "strategy")]
pub enum Strategy {
    /// Every sample of a corrupted user becomes `target`.
    FarCluster { target: Point },
    /// Samples reflect through the empirical mean of the whole dataset.
    Mirror,
    /// Each corrupted user collapses to its own random point `1000·r` away
    /// from the empirical mean; `r` is the largest sample distance from it.
    Scatter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarySpec {
    pub fraction: f64,
    #[serde(flatten)]
    pub strategy: Strategy,
}

fn empirical_mean(ds: &UserDataset) -> Vec<f64> {
    let d = ds.d();
    let mut mean = vec![0.0; d];
    for s in ds.as_flat().chunks_exact(d) {
        mean.iter_mut().zip(s).for_each(|(a, x)| *a += x);
    }
    let total = (ds.n() * ds.m()) as f64;
    mean.iter_mut().for_each(|a| *a /= total);
    mean
}

/// Replaces `⌊fraction·n⌋` users chosen by the adversary. Returns the new
/// dataset and the sorted indices of the touched users.
pub fn corrupt<R: Rng + ?Sized>(
    dataset: &UserDataset,
    adversary: &AdversarySpec,
    rng: &mut R,
) -> Result<(UserDataset, Vec<usize>)> {
    if !(0.0..0.5).contains(&adversary.fraction) {
        return Err(DpError::invalid(format!("corruption fraction must lie in [0, 0.5), got {}", adversary.fraction)));
    }
    let n = dataset.n();
    let count = (adversary.fraction * n as f64).floor() as usize;
    let mut out = dataset.clone();
    if count == 0 {
        return Ok((out, Vec::new()));
    }
    let mut chosen = sample_indices(rng, n, count).into_vec();
    chosen.sort_unstable();
    let d = dataset.d();
    let mean = empirical_mean(dataset);
    match &adversary.strategy {
        Strategy::FarCluster { target } => {
            if target.dim() != d {
                return Err(DpError::DimensionMismatch { expected: d, got: target.dim() });
            }
            for &i in &chosen {
                out.user_mut(i).chunks_exact_mut(d).for_each(|s| s.copy_from_slice(target));
            }
        }
        Strategy::Mirror => {
            for &i in &chosen {
                for s in out.user_mut(i).chunks_exact_mut(d) {
                    s.iter_mut().zip(&mean).for_each(|(x, c)| *x = 2.0 * c - *x);
                }
            }
        }
        Strategy::Scatter => {
            let spread = dataset
                .as_flat()
                .chunks_exact(d)
                .map(|s| crate::geometry::dist_sq(s, &mean))
                .fold(0.0, f64::max)
                .sqrt()
                .max(1.0);
            for &i in &chosen {
                let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = crate::geometry::norm(&dir).max(f64::MIN_POSITIVE);
                dir.iter_mut().zip(&mean).for_each(|(x, c)| *x = c + 1000.0 * spread * *x / norm);
                out.user_mut(i).chunks_exact_mut(d).for_each(|s| s.copy_from_slice(&dir));
            }
        }
    }
    Ok((out, chosen))
}
