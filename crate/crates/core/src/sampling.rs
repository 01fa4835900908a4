//! Sample distributions over phase space for training batches and
//! similarity estimates: uniform boxes, Gaussians, linear images of
//! either, and the asymptotic distribution of a noisy system.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynsys::{SystemSpec, VectorField};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pool draws must leave this much headroom over the batch size.
const POOL_FACTOR: usize = 10;

#[derive(Debug, Clone)]
enum Kind {
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Uniform-with-replacement draws from a precomputed state pool.
    Asymptotic { dim: usize, pool: std::sync::Arc<Vec<Vec<f64>>> },
    /// Rows of the inner sampler mapped through `x ↦ Ax + b`.
    LinearImage { inner: Box<Kind>, a: Tensor, bias: Option<Vec<f64>> },
}

impl Kind {
    fn dim(&self) -> usize {
        match self {
            Kind::UniformBox { lo, .. } => lo.len(),
            Kind::Gaussian { mean, .. } => mean.len(),
            Kind::Asymptotic { dim, .. } => *dim,
            Kind::LinearImage { a, .. } => a.rows(),
        }
    }
}

/// A seeded point source. Draws are i.i.d. given the seed stream;
/// clones share pools but can be re-seeded independently.
#[derive(Debug, Clone)]
pub struct Sampler {
    kind: Kind,
    rng: ChaCha8Rng,
    discarded_trials: usize,
}

impl Sampler {
    pub fn uniform_box(lo: Vec<f64>, hi: Vec<f64>, seed: u64) -> Result<Sampler> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidArgument("box bounds must have matching nonzero length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| l >= h) {
            return Err(Error::InvalidArgument("box bounds must satisfy lo < hi per dimension".into()));
        }
        Ok(Sampler {
            kind: Kind::UniformBox { lo, hi },
            rng: ChaCha8Rng::seed_from_u64(seed),
            discarded_trials: 0,
        })
    }

    pub fn gaussian(mean: Vec<f64>, std: f64, seed: u64) -> Result<Sampler> {
        if mean.is_empty() || std <= 0.0 {
            return Err(Error::InvalidArgument("gaussian sampler needs a mean vector and std > 0".into()));
        }
        Ok(Sampler {
            kind: Kind::Gaussian { mean, std },
            rng: ChaCha8Rng::seed_from_u64(seed),
            discarded_trials: 0,
        })
    }

    pub fn standard_normal(dim: usize, seed: u64) -> Sampler {
        Sampler::gaussian(vec![0.0; dim], 1.0, seed).expect("valid by construction")
    }

    /// Box preset covering the Van der Pol limit cycle.
    pub fn vdp_box(seed: u64) -> Sampler {
        Sampler::uniform_box(vec![-3.0, -4.0], vec![3.0, 4.0], seed).expect("static bounds")
    }

    /// Box preset covering all pitchfork fixed points for the given μ.
    pub fn pitchfork_box(mu: f64, seed: u64) -> Sampler {
        let r = 1.5 * mu.max(0.0).sqrt();
        Sampler::uniform_box(vec![-r, -1.0], vec![r, 1.0], seed).expect("static bounds")
    }

    /// Builds the stationary-state pool of the noisy system and samples
    /// from it uniformly with replacement.
    pub fn asymptotic(field: &VectorField, params: &AsymptoticParams, seed: u64) -> Result<Sampler> {
        let outcome = asymptotic_states(field, params, seed)?;
        Ok(Sampler {
            kind: Kind::Asymptotic {
                dim: field.dim(),
                pool: std::sync::Arc::new(outcome.points),
            },
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5a)),
            discarded_trials: outcome.discarded_trials,
        })
    }

    /// Uniform-with-replacement draws from a fixed point pool.
    pub fn from_pool(points: Vec<Vec<f64>>, seed: u64) -> Result<Sampler> {
        if points.is_empty() || points[0].is_empty() {
            return Err(Error::InvalidArgument("point pool must be nonempty".into()));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidArgument("point pool has ragged rows".into()));
        }
        Ok(Sampler {
            kind: Kind::Asymptotic { dim, pool: std::sync::Arc::new(points) },
            rng: ChaCha8Rng::seed_from_u64(seed),
            discarded_trials: 0,
        })
    }

    /// Pushes a sampler through `x ↦ Ax + b`; used to cover the domain of
    /// a conjugate partner with the image of the source domain.
    pub fn linear_image(self, a: Tensor, bias: Option<Vec<f64>>) -> Result<Sampler> {
        if a.rank() != 2 || a.cols() != self.kind.dim() {
            return Err(Error::ShapeMismatch {
                context: "sampler linear_image",
                expected: format!("[?, {}]", self.kind.dim()),
                got: format!("{:?}", a.shape()),
            });
        }
        Ok(Sampler {
            kind: Kind::LinearImage { inner: Box::new(self.kind), a, bias },
            rng: self.rng,
            discarded_trials: self.discarded_trials,
        })
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// Trials dropped for divergence while building an asymptotic pool.
    pub fn discarded_trials(&self) -> usize {
        self.discarded_trials
    }

    /// Restarts the draw stream; pools are kept.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// `count` points as a `[count, n]` batch, deterministic under seed.
    pub fn draw(&mut self, count: usize) -> Result<Tensor> {
        if count < 1 {
            return Err(Error::InvalidArgument("draw count must be at least 1".into()));
        }
        let dim = self.kind.dim();
        let mut out = Tensor::zeros(vec![count, dim]);
        for i in 0..count {
            let row = Self::draw_one(&self.kind, &mut self.rng, count)?;
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }

    fn draw_one(kind: &Kind, rng: &mut ChaCha8Rng, batch: usize) -> Result<Vec<f64>> {
        match kind {
            Kind::UniformBox { lo, hi } => Ok(lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| l + (h - l) * rng.gen::<f64>())
                .collect()),
            Kind::Gaussian { mean, std } => Ok(mean
                .iter()
                .map(|&m| m + std * rng.sample::<f64, _>(StandardNormal))
                .collect()),
            Kind::Asymptotic { pool, .. } => {
                if pool.len() < POOL_FACTOR * batch {
                    return Err(Error::InvalidArgument(format!(
                        "asymptotic pool of {} states is too small for batches of {batch} \
                         (needs at least {}x the batch size)",
                        pool.len(),
                        POOL_FACTOR
                    )));
                }
                Ok(pool[rng.gen_range(0..pool.len())].clone())
            }
            Kind::LinearImage { inner, a, bias } => {
                let x = Self::draw_one(inner, rng, batch)?;
                let mut y = a.matvec(&x).expect("checked at construction");
                if let Some(b) = bias {
                    for (yi, bi) in y.iter_mut().zip(b) {
                        *yi += bi;
                    }
                }
                Ok(y)
            }
        }
    }
}

/// Euler-Maruyama settings for asymptotic-state pools.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsymptoticParams {
    /// Diffusion coefficient σ in `dx = f dt + σ dW`.
    pub sigma: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_burn")]
    pub t_burn: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Keep every k-th post-burn-in state; thins the pool without
    /// changing its distribution.
    #[serde(default = "default_save_every")]
    pub save_every: usize,
}

fn default_dt() -> f64 {
    0.01
}
fn default_t_burn() -> f64 {
    50.0
}
fn default_t_end() -> f64 {
    100.0
}
fn default_trials() -> usize {
    1000
}
fn default_save_every() -> usize {
    10
}

impl Default for AsymptoticParams {
    fn default() -> Self {
        AsymptoticParams {
            sigma: 1.5,
            dt: default_dt(),
            t_burn: default_t_burn(),
            t_end: default_t_end(),
            trials: default_trials(),
            save_every: default_save_every(),
        }
    }
}

pub struct AsymptoticOutcome {
    pub points: Vec<Vec<f64>>,
    pub discarded_trials: usize,
}

/// Integrates `trials` independent noisy trajectories from standard-normal
/// initial conditions and pools the states observed in `(t_burn, t_end]`.
/// Trials that blow past `‖x‖ > 1e6` are discarded; losing all of them is
/// an error.
pub fn asymptotic_states(
    field: &VectorField,
    params: &AsymptoticParams,
    seed: u64,
) -> Result<AsymptoticOutcome> {
    if params.dt <= 0.0 || params.t_end <= params.t_burn || params.trials == 0 {
        return Err(Error::InvalidArgument(
            "asymptotic sampling needs dt > 0, t_end > t_burn and at least one trial".into(),
        ));
    }
    let dim = field.dim();
    let steps = (params.t_end / params.dt).round() as usize;
    let sqrt_dt = params.dt.sqrt();
    let save_every = params.save_every.max(1);
    let mut points = Vec::new();
    let mut discarded = 0;
    for trial in 0..params.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, trial as u64));
        let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut trial_points = Vec::new();
        let mut diverged = false;
        for step in 1..=steps {
            let v = field.eval(&x)?;
            for (xi, vi) in x.iter_mut().zip(&v) {
                *xi += vi * params.dt;
                if params.sigma != 0.0 {
                    *xi += params.sigma * sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let norm2: f64 = x.iter().map(|v| v * v).sum();
            if !norm2.is_finite() || norm2 > 1e12 {
                diverged = true;
                break;
            }
            let t = step as f64 * params.dt;
            if t > params.t_burn && step % save_every == 0 {
                trial_points.push(x.clone());
            }
        }
        if diverged {
            discarded += 1;
        } else {
            points.extend(trial_points);
        }
    }
    if points.is_empty() {
        return Err(Error::DegenerateBatch(format!(
            "all {} asymptotic trials diverged or produced no post-burn-in states",
            params.trials
        )));
    }
    Ok(AsymptoticOutcome { points, discarded_trials: discarded })
}

/// SplitMix64 step; derives independent seeds for sub-streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Sampler description embedded in experiment configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: f64 },
    StandardNormal { dim: usize },
    Asymptotic {
        system: SystemSpec,
        #[serde(flatten)]
        params: AsymptoticParams,
    },
}

impl SamplerSpec {
    pub fn build(&self, seed: u64) -> Result<Sampler> {
        match self {
            SamplerSpec::UniformBox { lo, hi } => Sampler::uniform_box(lo.clone(), hi.clone(), seed),
            SamplerSpec::Gaussian { mean, std } => Sampler::gaussian(mean.clone(), *std, seed),
            SamplerSpec::StandardNormal { dim } => Ok(Sampler::standard_normal(*dim, seed)),
            SamplerSpec::Asymptotic { system, params } => {
                let field = system.build()?;
                Sampler::asymptotic(&field, params, seed)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_box_respects_bounds_and_centers() {
        let mut s = Sampler::uniform_box(vec![-1.0, -1.0], vec![1.0, 1.0], 42).unwrap();
        let batch = s.draw(1000).unwrap();
        let mut sums = [0.0, 0.0];
        for i in 0..1000 {
            let row = batch.row(i);
            assert!(row.iter().all(|v| (-1.0..=1.0).contains(v)));
            sums[0] += row[0];
            sums[1] += row[1];
        }
        // Mean of U[-1,1] has std 1/sqrt(3·1000) ≈ 0.018; allow 3σ.
        for s in sums {
            assert!((s / 1000.0).abs() < 0.055);
        }
    }

    #[test]
    fn gaussian_sample_covariance_is_near_identity() {
        let mut s = Sampler::standard_normal(2, 7);
        let n = 10_000;
        let batch = s.draw(n).unwrap();
        let mut cov = [[0.0; 2]; 2];
        for i in 0..n {
            let r = batch.row(i);
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += r[a] * r[b];
                }
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                let c = cov[a][b] / n as f64;
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((c - target).abs() < 0.05, "cov[{a}][{b}] = {c}");
            }
        }
    }

    #[test]
    fn draws_are_deterministic_under_seed() {
        let mut a = Sampler::vdp_box(99);
        let mut b = Sampler::vdp_box(99);
        assert_eq!(a.draw(16).unwrap().data(), b.draw(16).unwrap().data());
    }

    #[test]
    fn noiseless_contraction_collapses_to_origin() {
        let field = VectorField::Linear { a: Tensor::identity(2).scale(-1.0), bias: None };
        let params = AsymptoticParams {
            sigma: 0.0,
            dt: 0.01,
            t_burn: 10.0,
            t_end: 12.0,
            trials: 20,
            save_every: 10,
        };
        let out = asymptotic_states(&field, &params, 3).unwrap();
        assert_eq!(out.discarded_trials, 0);
        for p in &out.points {
            let norm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < 1e-3, "state {norm} has not contracted");
        }
    }

    #[test]
    fn ou_stationary_variance_matches_closed_form() {
        // dx = -x dt + dW has stationary variance 1/2 per coordinate.
        let field = VectorField::Linear { a: Tensor::identity(1).scale(-1.0), bias: None };
        let params = AsymptoticParams {
            sigma: 1.0,
            dt: 0.01,
            t_burn: 20.0,
            t_end: 40.0,
            trials: 1000,
            save_every: 10,
        };
        let out = asymptotic_states(&field, &params, 11).unwrap();
        let n = out.points.len() as f64;
        let var: f64 = out.points.iter().map(|p| p[0] * p[0]).sum::<f64>() / n;
        assert!((var - 0.5).abs() < 0.05, "stationary variance {var}");
    }

    #[test]
    fn divergent_trials_are_discarded_and_all_lost_is_an_error() {
        let field = VectorField::Linear { a: Tensor::identity(1).scale(40.0), bias: None };
        let params = AsymptoticParams {
            sigma: 0.0,
            dt: 0.5,
            t_burn: 1.0,
            t_end: 40.0,
            trials: 5,
            save_every: 1,
        };
        assert!(asymptotic_states(&field, &params, 1).is_err());
    }

    #[test]
    fn pool_enforces_headroom_over_batch_size() {
        let field = VectorField::Linear { a: Tensor::identity(1).scale(-1.0), bias: None };
        let params = AsymptoticParams {
            sigma: 0.5,
            dt: 0.01,
            t_burn: 1.0,
            t_end: 2.0,
            trials: 3,
            save_every: 10,
        };
        let mut s = Sampler::asymptotic(&field, &params, 5).unwrap();
        assert!(s.draw(1000).is_err());
        assert!(s.draw(2).is_ok());
    }

    #[test]
    fn linear_image_maps_the_box() {
        let q = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 1.0]);
        let mut s = Sampler::uniform_box(vec![-1.0, -1.0], vec![1.0, 1.0], 4)
            .unwrap()
            .linear_image(q, None)
            .unwrap();
        let batch = s.draw(500).unwrap();
        for i in 0..500 {
            let r = batch.row(i);
            assert!(r[0].abs() <= 2.0 && r[1].abs() <= 1.0);
        }
    }
}
