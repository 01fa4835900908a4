//! Bidirectional alignment training: alternating batch updates for the
//! two maps, Adam with post-step spectral-norm projection, seeded
//! restarts, and similarity tracking.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynsys::VectorField;
use crate::error::{Error, Result};
use crate::iresnet::{IResNet, TapeNet};
use crate::loss::{record_batch_losses, LossBreakdown, LossWeights, SimilarityReport};
use crate::sampling::{derive_seed, Sampler};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Samples per batch draw.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub weights: LossWeights,
    /// Spectral-norm cap applied after every update.
    #[serde(default = "default_cap")]
    pub cap: f64,
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Bidirectional iterations; each runs two update calls, one per map.
    pub batches: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    /// Similarity-trace cadence in batches.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Monte-Carlo size of the final similarity estimate.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Monte-Carlo size of in-training trace evaluations.
    #[serde(default = "default_trace_samples")]
    pub trace_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

fn default_batch_size() -> usize {
    128
}
fn default_lr() -> f64 {
    0.001
}
fn default_cap() -> f64 {
    0.99
}
fn default_layers() -> usize {
    10
}
fn default_restarts() -> usize {
    3
}
fn default_eval_every() -> usize {
    200
}
fn default_eval_samples() -> usize {
    10_000
}
fn default_trace_samples() -> usize {
    1000
}

impl TrainConfig {
    pub fn new(batches: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: default_batch_size(),
            lr: default_lr(),
            weights: LossWeights::default(),
            cap: default_cap(),
            layers: default_layers(),
            batches,
            restarts: default_restarts(),
            seed,
            eval_every: default_eval_every(),
            eval_samples: default_eval_samples(),
            trace_samples: default_trace_samples(),
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(0.0 < self.cap && self.cap < 1.0) {
            return Err(Error::InvalidArgument("lipschitz cap must lie in (0, 1)".into()));
        }
        if self.restarts < 1 || self.layers < 1 || self.eval_every < 1 {
            return Err(Error::InvalidArgument(
                "restarts, layers and eval_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Adam moments for one parameter list, in `IResNet::params()` order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> AdamState {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. A non-finite gradient aborts the step
    /// before any parameter moves.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        assert_eq!(params.len(), grads.len(), "gradients misaligned with parameters");
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient for parameter {i}")));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One update call: draw from `p`, record the bidirectional loss for
/// `(f, g, net_a, net_b)`, backpropagate the total, Adam-update both
/// parameter sets, then re-project every weight matrix to the cap.
pub fn train_batch(
    f: &VectorField,
    g: &VectorField,
    p: &mut Sampler,
    net_a: &mut IResNet,
    net_b: &mut IResNet,
    opt_a: &mut AdamState,
    opt_b: &mut AdamState,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    let x = p.draw(config.batch_size)?;
    let mut tape = Tape::new();
    let bound_a = TapeNet::bind(&mut tape, net_a);
    let bound_b = TapeNet::bind(&mut tape, net_b);
    let rec = record_batch_losses(&mut tape, f, g, &x, &bound_a, &bound_b, config.weights)?;
    if !rec.breakdown.total.is_finite() {
        return Err(Error::NonFinite("batch loss".into()));
    }
    let mut grads = tape.backward(rec.total)?;
    let grads_a: Vec<Tensor> = bound_a
        .param_ids()
        .iter()
        .map(|&id| grads.take_or_zeros(id, tape.value(id).shape()))
        .collect();
    let grads_b: Vec<Tensor> = bound_b
        .param_ids()
        .iter()
        .map(|&id| grads.take_or_zeros(id, tape.value(id).shape()))
        .collect();
    opt_a.step(&mut net_a.params_mut(), &grads_a, config.lr)?;
    opt_b.step(&mut net_b.params_mut(), &grads_b, config.lr)?;
    net_a.project_spectral_norms();
    net_b.project_spectral_norms();
    Ok(rec.breakdown)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracePoint {
    pub batch: usize,
    pub sim_forward: f64,
    pub sim_backward: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartRecord {
    pub restart: usize,
    pub trace: Vec<TracePoint>,
    pub final_report: Option<SimilarityReport>,
    /// Failure reason when the restart was aborted or diverged.
    pub failed: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    /// Batch-count convention used by `batches`.
    pub convention: String,
    pub restarts: Vec<RestartRecord>,
    pub best_restart: usize,
    pub final_report: SimilarityReport,
    pub wall_ms: u64,
    /// Config deviations applied at run time (e.g. budget fallbacks).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deviations: Vec<String>,
}

pub struct TrainOutput {
    pub phi: IResNet,
    pub psi: IResNet,
    pub record: RunRecord,
}

/// Hooks for logging and checkpointing during a run.
pub trait TrainObserver {
    fn on_batch(&mut self, _restart: usize, _batch: usize, _first: &LossBreakdown, _second: &LossBreakdown) {}
    fn on_eval(&mut self, _restart: usize, _batch: usize, _report: &SimilarityReport) {}
    fn on_checkpoint(&mut self, _restart: usize, _batch: usize, _phi: &IResNet, _psi: &IResNet) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

pub fn train(
    f: &VectorField,
    g: &VectorField,
    p: &Sampler,
    q: &Sampler,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    train_observed(f, g, p, q, config, &mut NoopObserver)
}

/// Full training: `restarts` independent runs of `batches` bidirectional
/// iterations each, alternating an update for the forward map with the
/// mirrored update for the reverse map. The restart with the highest
/// final min-of-directions similarity is returned.
pub fn train_observed(
    f: &VectorField,
    g: &VectorField,
    p: &Sampler,
    q: &Sampler,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutput> {
    config.validate()?;
    let dim = f.dim();
    if g.dim() != dim || p.dim() != dim || q.dim() != dim {
        return Err(Error::ShapeMismatch {
            context: "train",
            expected: format!("all dimensions equal to {dim}"),
            got: format!("g: {}, p: {}, q: {}", g.dim(), p.dim(), q.dim()),
        });
    }
    let start = Instant::now();
    let mut records = Vec::with_capacity(config.restarts);
    let mut best: Option<(usize, f64, IResNet, IResNet)> = None;

    for r in 0..config.restarts {
        let outcome = run_restart(f, g, p, q, config, r, observer);
        let record = match outcome {
            Ok((phi, psi, record)) => {
                if record.failed.is_none() {
                    let sim = record.final_report.as_ref().map(|x| x.similarity).unwrap_or(f64::NEG_INFINITY);
                    let better = best.as_ref().map(|(_, s, _, _)| sim > *s).unwrap_or(true);
                    if better {
                        best = Some((r, sim, phi, psi));
                    }
                }
                record
            }
            Err(e) => RestartRecord {
                restart: r,
                trace: Vec::new(),
                final_report: None,
                failed: Some(e.to_string()),
            },
        };
        records.push(record);
    }

    let (best_restart, _, phi, psi) = best.ok_or_else(|| {
        Error::NonFinite("all restarts failed; no usable alignment was produced".into())
    })?;
    let final_report = records[best_restart]
        .final_report
        .clone()
        .expect("best restart carries a final report");
    Ok(TrainOutput {
        phi,
        psi,
        record: RunRecord {
            config: config.clone(),
            convention: "one batch = one bidirectional iteration (two update calls)".into(),
            restarts: records,
            best_restart,
            final_report,
            wall_ms: start.elapsed().as_millis() as u64,
            deviations: Vec::new(),
        },
    })
}

#[allow(clippy::type_complexity)]
fn run_restart(
    f: &VectorField,
    g: &VectorField,
    p: &Sampler,
    q: &Sampler,
    config: &TrainConfig,
    r: usize,
    observer: &mut dyn TrainObserver,
) -> Result<(IResNet, IResNet, RestartRecord)> {
    let dim = f.dim();
    let seed = config.seed;
    let mut phi = IResNet::init(dim, config.layers, config.cap, derive_seed(seed, 1000 + r as u64))?;
    let mut psi = IResNet::init(dim, config.layers, config.cap, derive_seed(seed, 2000 + r as u64))?;
    let mut opt_phi = AdamState::new(&phi.params());
    let mut opt_psi = AdamState::new(&psi.params());
    let mut p_run = p.clone();
    p_run.reseed(derive_seed(seed, 3000 + r as u64));
    let mut q_run = q.clone();
    q_run.reseed(derive_seed(seed, 4000 + r as u64));

    let mut trace = Vec::new();
    let mut initial_total: Option<f64> = None;
    let mut high_streak = 0usize;
    let mut failed: Option<String> = None;

    for batch in 0..config.batches {
        let step = (|| -> Result<(LossBreakdown, LossBreakdown)> {
            let b1 = train_batch(f, g, &mut p_run, &mut phi, &mut psi, &mut opt_phi, &mut opt_psi, config)?;
            let b2 = train_batch(g, f, &mut q_run, &mut psi, &mut phi, &mut opt_psi, &mut opt_phi, config)?;
            Ok((b1, b2))
        })();
        let (b1, b2) = match step {
            Ok(x) => x,
            Err(e) => {
                failed = Some(format!("batch {batch}: {e}"));
                break;
            }
        };
        observer.on_batch(r, batch, &b1, &b2);
        let total = b1.total + b2.total;
        let initial = *initial_total.get_or_insert(total);
        if total > 10.0 * initial.max(1e-9) {
            high_streak += 1;
            if high_streak >= 200 {
                failed = Some(format!(
                    "diverged: loss {total:.3e} stayed above 10x the initial {initial:.3e} for 200 batches"
                ));
                break;
            }
        } else {
            high_streak = 0;
        }

        if (batch + 1) % config.eval_every == 0 && batch + 1 < config.batches {
            let report = evaluate(f, g, &phi, &psi, p, q, config, seed, r, batch + 1, config.trace_samples)?;
            observer.on_eval(r, batch + 1, &report);
            trace.push(TracePoint {
                batch: batch + 1,
                sim_forward: report.sim_forward,
                sim_backward: report.sim_backward,
                similarity: report.similarity,
            });
        }
        if let Some(every) = config.checkpoint_every {
            if (batch + 1) % every == 0 {
                observer.on_checkpoint(r, batch + 1, &phi, &psi);
            }
        }
    }

    let final_report = if failed.is_none() {
        // Always recomputed with the full estimator.
        let report = evaluate(f, g, &phi, &psi, p, q, config, seed, r, usize::MAX, config.eval_samples)?;
        trace.push(TracePoint {
            batch: config.batches,
            sim_forward: report.sim_forward,
            sim_backward: report.sim_backward,
            similarity: report.similarity,
        });
        Some(report)
    } else {
        None
    };

    Ok((
        phi,
        psi,
        RestartRecord { restart: r, trace, final_report, failed },
    ))
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    f: &VectorField,
    g: &VectorField,
    phi: &IResNet,
    psi: &IResNet,
    p: &Sampler,
    q: &Sampler,
    _config: &TrainConfig,
    seed: u64,
    restart: usize,
    batch: usize,
    samples: usize,
) -> Result<SimilarityReport> {
    let stream = (restart as u64)
        .wrapping_mul(7919)
        .wrapping_add(batch as u64);
    let mut p_eval = p.clone();
    p_eval.reseed(derive_seed(seed, 0x9000u64.wrapping_add(stream)));
    let mut q_eval = q.clone();
    q_eval.reseed(derive_seed(seed, 0xa000u64.wrapping_add(stream)));
    crate::loss::similarity(f, g, phi, psi, &mut p_eval, &mut q_eval, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let snapshot = p.clone();
        let mut state = AdamState::new(&[&p]);
        let grads = vec![Tensor::zeros(vec![2])];
        state.step(&mut [&mut p], &grads, 0.001).unwrap();
        assert_eq!(p, snapshot);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_matches_hand_evaluation() {
        // θ = 0, g = 1: bias-corrected step is lr·1/(1+ε) ≈ lr.
        let mut p = Tensor::scalar(0.0);
        let mut state = AdamState::new(&[&p]);
        state.step(&mut [&mut p], &[Tensor::scalar(1.0)], 0.001).unwrap();
        assert!((p.data()[0] + 0.001).abs() < 1e-9, "got {}", p.data()[0]);
    }

    #[test]
    fn adam_two_constant_steps_reach_twice_the_rate() {
        let mut p = Tensor::scalar(0.0);
        let mut state = AdamState::new(&[&p]);
        for _ in 0..2 {
            state.step(&mut [&mut p], &[Tensor::scalar(1.0)], 0.001).unwrap();
        }
        assert!((p.data()[0] + 0.002).abs() < 1e-6, "got {}", p.data()[0]);
    }

    #[test]
    fn adam_rejects_nan_gradients_before_moving() {
        let mut p = Tensor::scalar(3.0);
        let mut state = AdamState::new(&[&p]);
        let err = state.step(&mut [&mut p], &[Tensor::scalar(f64::NAN)], 0.001);
        assert!(err.is_err());
        assert_eq!(p.data()[0], 3.0);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn identical_fields_at_identity_leave_weights_unchanged() {
        let f = VectorField::VanDerPol { mu: 2.0 };
        let mut phi = IResNet::init(2, 4, 0.99, 5).unwrap();
        let mut psi = IResNet::init(2, 4, 0.99, 6).unwrap();
        let snap_phi: Vec<Tensor> = phi.params().into_iter().cloned().collect();
        let mut opt_phi = AdamState::new(&phi.params());
        let mut opt_psi = AdamState::new(&psi.params());
        let mut p = Sampler::vdp_box(7);

        // Gradients are exactly zero: u = v bitwise in both directions.
        {
            let x = p.clone().draw(32).unwrap();
            let mut tape = Tape::new();
            let ba = TapeNet::bind(&mut tape, &phi);
            let bb = TapeNet::bind(&mut tape, &psi);
            let rec = record_batch_losses(&mut tape, &f, &f, &x, &ba, &bb, LossWeights::default())
                .unwrap();
            let grads = tape.backward(rec.total).unwrap();
            for id in ba.param_ids().into_iter().chain(bb.param_ids()) {
                if let Some(g) = grads.get(id) {
                    assert_eq!(g.norm_inf(), 0.0);
                }
            }
        }

        let config = TrainConfig::new(1, 0);
        let b = train_batch(&f, &f, &mut p, &mut phi, &mut psi, &mut opt_phi, &mut opt_psi, &config)
            .unwrap();
        assert_eq!(b.total, 0.0);
        // Zero update; only the idempotent projection touches weights,
        // and only within its own estimate tolerance.
        for (now, before) in phi.params().iter().zip(&snap_phi) {
            let diff = now.sub(before).unwrap().norm_inf();
            assert!(diff < 1e-9, "weights moved by {diff} under zero gradients");
        }
    }

    #[test]
    fn one_step_on_a_real_pair_leaves_identity() {
        let f = VectorField::VanDerPol { mu: 2.0 };
        let g = VectorField::Pitchfork { mu: 3.0 };
        let mut phi = IResNet::init(2, 3, 0.99, 8).unwrap();
        let mut psi = IResNet::init(2, 3, 0.99, 9).unwrap();
        let mut opt_phi = AdamState::new(&phi.params());
        let mut opt_psi = AdamState::new(&psi.params());
        let mut p = Sampler::vdp_box(10);
        let config = TrainConfig::new(1, 0);
        train_batch(&f, &g, &mut p, &mut phi, &mut psi, &mut opt_phi, &mut opt_psi, &config)
            .unwrap();
        let x = Tensor::matrix(1, 2, vec![0.5, -0.5]);
        let y = phi.forward(&x).unwrap();
        assert!(
            y.sub(&x).unwrap().norm_inf() > 0.0,
            "a nonzero-gradient step must move the map off the identity"
        );
    }

    #[test]
    fn weights_stay_capped_after_steps() {
        let f = VectorField::VanDerPol { mu: 2.0 };
        let g = VectorField::Pitchfork { mu: 3.0 };
        let mut phi = IResNet::init(2, 3, 0.99, 18).unwrap();
        let mut psi = IResNet::init(2, 3, 0.99, 19).unwrap();
        let mut opt_phi = AdamState::new(&phi.params());
        let mut opt_psi = AdamState::new(&psi.params());
        let mut p = Sampler::vdp_box(20);
        let config = TrainConfig::new(1, 0);
        for _ in 0..25 {
            train_batch(&f, &g, &mut p, &mut phi, &mut psi, &mut opt_phi, &mut opt_psi, &config)
                .unwrap();
        }
        for (s1, s2) in phi.spectral_norms() {
            assert!(s1 <= 0.99 + 1e-6 && s2 <= 0.99 + 1e-6, "σ = ({s1}, {s2})");
        }
    }

    #[test]
    fn zero_batches_returns_identity_alignment() {
        let f = VectorField::VanDerPol { mu: 2.0 };
        let g = f.clone();
        let p = Sampler::vdp_box(30);
        let q = Sampler::vdp_box(31);
        let mut config = TrainConfig::new(0, 77);
        config.restarts = 1;
        config.eval_samples = 500;
        let out = train(&f, &g, &p, &q, &config).unwrap();
        assert!((out.record.final_report.similarity - 1.0).abs() < 1e-12);
        let x = Tensor::matrix(1, 2, vec![1.0, 1.0]);
        assert_eq!(out.phi.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let f = VectorField::VanDerPol { mu: 2.0 };
        let g = VectorField::Pitchfork { mu: 2.5 };
        let p = Sampler::vdp_box(1);
        let q = Sampler::pitchfork_box(2.5, 2);
        let mut config = TrainConfig::new(5, 123);
        config.restarts = 2;
        config.batch_size = 16;
        config.eval_samples = 200;
        config.trace_samples = 100;
        config.eval_every = 2;
        let a = train(&f, &g, &p, &q, &config).unwrap();
        let b = train(&f, &g, &p, &q, &config).unwrap();
        for (pa, pb) in a.phi.params().iter().zip(b.phi.params().iter()) {
            assert_eq!(pa.data(), pb.data());
        }
        let mut ra = a.record.clone();
        let mut rb = b.record.clone();
        ra.wall_ms = 0;
        rb.wall_ms = 0;
        assert_eq!(
            serde_json::to_string(&ra).unwrap(),
            serde_json::to_string(&rb).unwrap()
        );
    }
}
