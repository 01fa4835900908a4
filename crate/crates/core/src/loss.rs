//! The orbital similarity loss and metric.
//!
//! Per sample, with `u = ∂H/∂x·f(x)` and `v = g(H(x))`, the loss is
//! `‖u/‖u‖ − v/‖v‖‖²` and the metric is `cos∠(u, v)`; the two are tied
//! by `loss = 2 − 2·cos`. Batches reduce by the arithmetic mean with a
//! fixed summation order. A bidirectional training batch combines the
//! forward term, the same term for the reverse map at the transformed
//! samples, and a reconstruction penalty tying the two maps together.

use serde::{Deserialize, Serialize};

use crate::dynsys::VectorField;
use crate::error::{Error, Result};
use crate::iresnet::{IResNet, TapeNet};
use crate::sampling::Sampler;
use crate::tape::{DualValue, Tape, ValueId};
use crate::tensor::Tensor;
use crate::transform::Transform;

/// Velocities at or below this norm mark a sample as degenerate (the loss
/// is undefined where either field vanishes); such samples are excluded
/// and counted rather than regularized.
pub const DEGENERATE_VELOCITY_EPS: f64 = 1e-8;

/// Relative weights `(w_f, w_b, w_i)` of the three loss terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub forward: f64,
    pub backward: f64,
    pub inverse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { forward: 1.0, backward: 1.0, inverse: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub forward_loss: f64,
    pub backward_loss: f64,
    pub inverse_loss: f64,
    pub total: f64,
    pub weights: LossWeights,
    pub excluded_forward: usize,
    pub excluded_backward: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// Mean cosine over samples from the source domain.
    pub sim_forward: f64,
    /// Mean cosine over samples from the target domain.
    pub sim_backward: f64,
    /// The lower of the two directional means.
    pub similarity: f64,
    /// Samples attempted per direction.
    pub sample_count: usize,
    /// Degenerate samples excluded across both directions.
    pub excluded_count: usize,
    pub cosine_min: f64,
    pub cosine_median: f64,
    pub cosine_max: f64,
}

/// One directional orbital term recorded on a tape.
pub struct OrbitalTerm {
    pub loss: ValueId,
    /// Rows kept after degeneracy filtering.
    pub kept: Vec<usize>,
    pub excluded: usize,
}

/// Records `mean ‖u/‖u‖ − v/‖v‖‖²` over non-degenerate rows. `seed` is the
/// source velocity used as the tangent seed; rows where it or the target
/// velocity `v` are (numerically) zero drop out of the mean.
pub fn record_orbital_term(
    tape: &mut Tape,
    u: ValueId,
    v: ValueId,
    seed: ValueId,
) -> Result<OrbitalTerm> {
    let rows = tape.value(u).rows();
    let seed_norms = tape.value(seed).row_norms();
    let v_norms = tape.value(v).row_norms();
    let kept: Vec<usize> = (0..rows)
        .filter(|&i| {
            seed_norms.data()[i] > DEGENERATE_VELOCITY_EPS
                && v_norms.data()[i] > DEGENERATE_VELOCITY_EPS
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::DegenerateBatch(format!(
            "all {rows} samples have vanishing source or target velocity"
        )));
    }
    let excluded = rows - kept.len();
    let us = tape.select_rows(u, kept.clone());
    let vs = tape.select_rows(v, kept.clone());
    let nu = tape.row_norms(us);
    let nv = tape.row_norms(vs);
    let uhat = tape.div_rows(us, nu)?;
    let vhat = tape.div_rows(vs, nv)?;
    let d = tape.sub(uhat, vhat)?;
    let sq = tape.row_dots(d, d)?;
    let total = tape.sum(sq);
    let loss = tape.scale(total, 1.0 / kept.len() as f64);
    Ok(OrbitalTerm { loss, kept, excluded })
}

/// Everything recorded for one bidirectional batch; value ids stay live
/// so the caller can run the reverse sweep.
pub struct RecordedBatch {
    pub total: ValueId,
    pub breakdown: LossBreakdown,
    pub transformed: DualValue,
}

/// Records the full batch loss on `tape`:
/// forward term for `(f, g, φ)` at `x`, backward term for `(g, f, ψ)` at
/// `ŷ = φ(x)`, and the reconstruction error between `x` and `ψ(φ(x))`.
/// Both parameter sets receive gradients through one reverse sweep.
pub fn record_batch_losses(
    tape: &mut Tape,
    f: &VectorField,
    g: &VectorField,
    x: &Tensor,
    phi: &TapeNet,
    psi: &TapeNet,
    weights: LossWeights,
) -> Result<RecordedBatch> {
    let f_idx = tape.register_field(f.as_field_ref());
    let g_idx = tape.register_field(g.as_field_ref());

    let fx = crate::tape::TapeField::eval_batch(f, x);
    let x_id = tape.constant(x.clone());
    let fx_id = tape.constant(fx);
    let dual_x = DualValue { primal: x_id, tangent: fx_id };

    // Forward: u = ∂φ/∂x·f(x), v = g(φ(x)).
    let yhat = phi.forward_dual(tape, dual_x)?;
    let v = tape.field(g_idx, yhat.primal);
    let forward = record_orbital_term(tape, yhat.tangent, v, fx_id)?;

    // Backward: treat ŷ as samples of the target domain, seed ψ's tangent
    // with g(ŷ) — a live tape value, so gradients flow through it.
    let dual_y = DualValue { primal: yhat.primal, tangent: v };
    let xback = psi.forward_dual(tape, dual_y)?;
    let vb = tape.field(f_idx, xback.primal);
    let backward = record_orbital_term(tape, xback.tangent, vb, v)?;

    // Reconstruction: MSE(x, ψ(φ(x))) over all entries.
    let d = tape.sub(x_id, xback.primal)?;
    let sq = tape.row_dots(d, d)?;
    let ssum = tape.sum(sq);
    let ji = tape.scale(ssum, 1.0 / (x.rows() * x.cols()) as f64);

    let wf = tape.scale(forward.loss, weights.forward);
    let wb = tape.scale(backward.loss, weights.backward);
    let wi = tape.scale(ji, weights.inverse);
    let partial = tape.add(wf, wb)?;
    let total = tape.add(partial, wi)?;

    let breakdown = LossBreakdown {
        forward_loss: tape.scalar_value(forward.loss),
        backward_loss: tape.scalar_value(backward.loss),
        inverse_loss: tape.scalar_value(ji),
        total: tape.scalar_value(total),
        weights,
        excluded_forward: forward.excluded,
        excluded_backward: backward.excluded,
    };
    Ok(RecordedBatch { total, breakdown, transformed: yhat })
}

/// Value of the one-directional orbital loss for a fixed batch.
pub fn orbital_loss(
    f: &VectorField,
    g: &VectorField,
    h: &IResNet,
    batch: &Tensor,
) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let g_idx = tape.register_field(g.as_field_ref());
    let bound = TapeNet::bind(&mut tape, h);
    let fx = crate::tape::TapeField::eval_batch(f, batch);
    let dual = tape.dual_constant(batch.clone(), fx);
    let seed = dual.tangent;
    let out = bound.forward_dual(&mut tape, dual)?;
    let v = tape.field(g_idx, out.primal);
    let term = record_orbital_term(&mut tape, out.tangent, v, seed)?;
    Ok((tape.scalar_value(term.loss), term.excluded))
}

/// Draws a batch from `p` and evaluates the three loss terms without
/// touching any weights.
pub fn batch_losses(
    f: &VectorField,
    g: &VectorField,
    p: &mut Sampler,
    phi: &IResNet,
    psi: &IResNet,
    weights: LossWeights,
    batch_size: usize,
) -> Result<LossBreakdown> {
    let x = p.draw(batch_size)?;
    let mut tape = Tape::new();
    let phi_b = TapeNet::bind(&mut tape, phi);
    let psi_b = TapeNet::bind(&mut tape, psi);
    Ok(record_batch_losses(&mut tape, f, g, &x, &phi_b, &psi_b, weights)?.breakdown)
}

/// Per-row cosines between transported source velocities and target
/// velocities, excluding degenerate rows.
fn directional_cosines(
    source: &VectorField,
    target: &VectorField,
    map: &dyn Transform,
    x: &Tensor,
) -> Result<(Vec<f64>, usize)> {
    let sv = crate::tape::TapeField::eval_batch(source, x);
    let (y, u) = map.forward_with_tangent(x, &sv)?;
    let tv = crate::tape::TapeField::eval_batch(target, &y);
    let mut cosines = Vec::with_capacity(x.rows());
    let mut excluded = 0;
    for i in 0..x.rows() {
        let sn = norm(sv.row(i));
        let vn = norm(tv.row(i));
        if sn <= DEGENERATE_VELOCITY_EPS || vn <= DEGENERATE_VELOCITY_EPS {
            excluded += 1;
            continue;
        }
        let un = norm(u.row(i));
        let dot: f64 = u.row(i).iter().zip(tv.row(i)).map(|(a, b)| a * b).sum();
        cosines.push(dot / (un * vn));
    }
    Ok((cosines, excluded))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Bidirectional orbital similarity: mean cosine with `x ~ p` through
/// `φ`, mean cosine with `y ~ q` through `ψ`, and the lower of the two.
pub fn similarity(
    f: &VectorField,
    g: &VectorField,
    phi: &dyn Transform,
    psi: &dyn Transform,
    p: &mut Sampler,
    q: &mut Sampler,
    samples: usize,
) -> Result<SimilarityReport> {
    if samples < 1 {
        return Err(Error::InvalidArgument("similarity needs at least one sample".into()));
    }
    let chunk = 2048usize;
    let mut all = Vec::with_capacity(2 * samples);
    let mut excluded = 0;
    let mut run_direction = |source: &VectorField,
                             target: &VectorField,
                             map: &dyn Transform,
                             sampler: &mut Sampler|
     -> Result<f64> {
        let mut cosines = Vec::with_capacity(samples);
        let mut remaining = samples;
        while remaining > 0 {
            let take = remaining.min(chunk);
            let x = sampler.draw(take)?;
            let (mut c, e) = directional_cosines(source, target, map, &x)?;
            excluded += e;
            cosines.append(&mut c);
            remaining -= take;
        }
        if cosines.is_empty() {
            return Err(Error::DegenerateBatch(
                "all similarity samples were degenerate in one direction".into(),
            ));
        }
        let m = mean(&cosines);
        all.append(&mut cosines);
        Ok(m)
    };
    let sim_forward = run_direction(f, g, phi, p)?;
    let sim_backward = run_direction(g, f, psi, q)?;

    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cosine_median = if all.len() % 2 == 1 {
        all[all.len() / 2]
    } else {
        0.5 * (all[all.len() / 2 - 1] + all[all.len() / 2])
    };
    Ok(SimilarityReport {
        sim_forward,
        sim_backward,
        similarity: sim_forward.min(sim_backward),
        sample_count: samples,
        excluded_count: excluded,
        cosine_min: all[0],
        cosine_median,
        cosine_max: *all.last().unwrap(),
    })
}

/// Mean cosine over a fixed batch through one direction; the counterpart
/// of `orbital_loss` for the identity `loss = 2 − 2·mean cosine`.
pub fn batch_mean_cosine(
    f: &VectorField,
    g: &VectorField,
    h: &dyn Transform,
    batch: &Tensor,
) -> Result<(f64, usize)> {
    let (cosines, excluded) = directional_cosines(f, g, h, batch)?;
    if cosines.is_empty() {
        return Err(Error::DegenerateBatch("all samples degenerate".into()));
    }
    Ok((mean(&cosines), excluded))
}
