//! Trajectory-space baseline similarity: simulate state ensembles,
//! reduce to the subspace holding 95% of variance, project back, and
//! align two models' ensembles by canonical correlation analysis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dynsys::VectorField;
use crate::error::{Error, Result};
use crate::linalg;
use crate::sampling::{derive_seed, Sampler};
use crate::tensor::Tensor;

/// Eigenvalues below this fraction of the largest count as null
/// directions and are excluded from whitening.
const RANK_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    /// All recorded states, `[total rows, n]`, trials stacked in order.
    pub states: Tensor,
    /// Rows contributed by each surviving trial.
    pub trial_lengths: Vec<usize>,
    /// Indices of trials that did not diverge.
    pub trial_ids: Vec<usize>,
    pub dt: f64,
    pub horizon: f64,
    pub integrator: &'static str,
}

impl TrajectoryEnsemble {
    pub fn rows(&self) -> usize {
        self.states.rows()
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }
}

/// Integrates `trials` trajectories from sampled initial conditions,
/// recording every step (initial state included). Noisy systems use
/// Euler-Maruyama; `sigma = 0` falls back to deterministic RK4.
pub fn simulate_ensemble(
    field: &VectorField,
    init: &mut Sampler,
    trials: usize,
    dt: f64,
    horizon: f64,
    sigma: f64,
    seed: u64,
) -> Result<TrajectoryEnsemble> {
    if dt <= 0.0 || horizon <= 0.0 || trials == 0 {
        return Err(Error::InvalidArgument(
            "ensemble simulation needs dt > 0, horizon > 0 and at least one trial".into(),
        ));
    }
    let dim = field.dim();
    let steps = (horizon / dt).round() as usize;
    let sqrt_dt = dt.sqrt();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(trials * (steps + 1));
    let mut trial_lengths = Vec::with_capacity(trials);
    let mut trial_ids = Vec::with_capacity(trials);
    for trial in 0..trials {
        let ic = init.draw(1)?;
        let mut x = ic.row(0).to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, trial as u64));
        let mut trial_rows = vec![x.clone()];
        let mut diverged = false;
        for _ in 0..steps {
            if sigma == 0.0 {
                rk4_step(field, &mut x, dt)?;
            } else {
                let v = field.eval(&x)?;
                for (xi, vi) in x.iter_mut().zip(&v) {
                    *xi += vi * dt + sigma * sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let norm2: f64 = x.iter().map(|v| v * v).sum();
            if !norm2.is_finite() || norm2 > 1e12 {
                diverged = true;
                break;
            }
            trial_rows.push(x.clone());
        }
        if diverged {
            continue;
        }
        trial_lengths.push(trial_rows.len());
        trial_ids.push(trial);
        rows.extend(trial_rows);
    }
    if rows.is_empty() {
        return Err(Error::DegenerateBatch(format!("all {trials} ensemble trials diverged")));
    }
    let total = rows.len();
    let mut states = Tensor::zeros(vec![total, dim]);
    for (i, r) in rows.into_iter().enumerate() {
        states.row_mut(i).copy_from_slice(&r);
    }
    Ok(TrajectoryEnsemble {
        states,
        trial_lengths,
        trial_ids,
        dt,
        horizon,
        integrator: if sigma == 0.0 { "rk4" } else { "euler_maruyama" },
    })
}

fn rk4_step(field: &VectorField, x: &mut [f64], dt: f64) -> Result<()> {
    let n = x.len();
    let k1 = field.eval(x)?;
    let mut tmp: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k1[i]).collect();
    let k2 = field.eval(&tmp)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    let k3 = field.eval(&tmp)?;
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    let k4 = field.eval(&tmp)?;
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Pca95 {
    /// Orthonormal principal axes kept, `[n, k]` columns.
    pub basis: Tensor,
    pub mean: Vec<f64>,
    /// Retained-variance ratio of the kept axes.
    pub explained: f64,
    /// States reduced to the kept axes and projected back into the
    /// original phase space.
    pub states: Tensor,
}

impl Pca95 {
    pub fn retained(&self) -> usize {
        self.basis.cols()
    }
}

/// PCA keeping the smallest axis count whose cumulative explained
/// variance reaches 95%, then back-projecting into the full space.
pub fn pca_95(states: &Tensor) -> Result<Pca95> {
    if states.rows() < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two rows".into()));
    }
    let (rows, n) = (states.rows(), states.cols());
    let mean: Vec<f64> = {
        let sums = states.col_sums();
        sums.data().iter().map(|s| s / rows as f64).collect()
    };
    let mut centered = states.clone();
    for i in 0..rows {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let cov = centered.matmul_tn(&centered)?.scale(1.0 / (rows - 1) as f64);
    let (eigvals, eigvecs) = linalg::sym_eig(&cov)?;
    let total: f64 = eigvals.iter().map(|&l| l.max(0.0)).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateBatch("ensemble has zero variance (rank 0)".into()));
    }
    let mut cum = 0.0;
    let mut k = n;
    for (i, &l) in eigvals.iter().enumerate() {
        cum += l.max(0.0);
        if cum / total >= 0.95 {
            k = i + 1;
            break;
        }
    }
    let mut basis = Tensor::zeros(vec![n, k]);
    for j in 0..k {
        for i in 0..n {
            basis.set(i, j, eigvecs.at(i, j));
        }
    }
    let explained = eigvals.iter().take(k).map(|&l| l.max(0.0)).sum::<f64>() / total;
    // Back-projection: (X − μ)·V·Vᵀ + μ.
    let reduced = centered.matmul(&basis)?;
    let mut back = reduced.matmul_bt(&basis)?;
    for i in 0..rows {
        for (v, m) in back.row_mut(i).iter_mut().zip(&mean) {
            *v += m;
        }
    }
    Ok(Pca95 { basis, mean, explained, states: back })
}

/// Whitened coordinates: centered states projected on the above-cutoff
/// eigenvectors and scaled to unit sample variance.
fn whiten(states: &Tensor) -> Result<Tensor> {
    let (rows, n) = (states.rows(), states.cols());
    if rows < 2 {
        return Err(Error::InvalidArgument("CCA needs at least two rows".into()));
    }
    let sums = states.col_sums();
    let mean: Vec<f64> = sums.data().iter().map(|s| s / rows as f64).collect();
    let mut centered = states.clone();
    for i in 0..rows {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let cov = centered.matmul_tn(&centered)?.scale(1.0 / (rows - 1) as f64);
    let (eigvals, eigvecs) = linalg::sym_eig(&cov)?;
    let lmax = eigvals.first().copied().unwrap_or(0.0).max(0.0);
    if lmax <= 0.0 {
        return Err(Error::DegenerateBatch("CCA input has zero variance".into()));
    }
    let kept: Vec<usize> = (0..n).filter(|&i| eigvals[i] > lmax * RANK_CUTOFF).collect();
    let mut proj = Tensor::zeros(vec![n, kept.len()]);
    for (jn, &jo) in kept.iter().enumerate() {
        let scale = 1.0 / eigvals[jo].sqrt();
        for i in 0..n {
            proj.set(i, jn, eigvecs.at(i, jo) * scale);
        }
    }
    centered.matmul(&proj)
}

/// Mean canonical correlation between two row-matched state ensembles.
/// Whitening uses truncated eigendecompositions; correlations are the
/// singular values of the whitened cross-covariance.
pub fn cca_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch {
            context: "cca row pairing",
            expected: format!("{} rows", a.rows()),
            got: format!("{} rows", b.rows()),
        });
    }
    let za = whiten(a)?;
    let zb = whiten(b)?;
    let rows = a.rows() as f64;
    let m = za.matmul_tn(&zb)?.scale(1.0 / (rows - 1.0));
    let shared = za.cols().min(zb.cols());
    // Singular values via the spectrum of MᵀM (or MMᵀ, whichever is smaller).
    let gram = if m.rows() <= m.cols() {
        m.matmul_bt(&m)?
    } else {
        m.matmul_tn(&m)?
    };
    let (eigvals, _) = linalg::sym_eig(&gram)?;
    let mean: f64 = eigvals
        .iter()
        .take(shared)
        .map(|&l| l.max(0.0).sqrt().min(1.0))
        .sum::<f64>()
        / shared as f64;
    Ok(mean)
}

/// Ensemble pipeline for one model pair: simulate both with matched
/// initial-condition seeds, PCA-reduce each to 95% variance, back-project
/// and canonically correlate.
#[allow(clippy::too_many_arguments)]
pub fn svcca_similarity(
    field_a: &VectorField,
    field_b: &VectorField,
    init_a: &Sampler,
    init_b: &Sampler,
    trials: usize,
    dt: f64,
    horizon: f64,
    sigma: f64,
    seed: u64,
) -> Result<f64> {
    let mut ia = init_a.clone();
    ia.reseed(derive_seed(seed, 0x111));
    let mut ib = init_b.clone();
    ib.reseed(derive_seed(seed, 0x111));
    let ea = simulate_ensemble(field_a, &mut ia, trials, dt, horizon, sigma, derive_seed(seed, 1))?;
    let eb = simulate_ensemble(field_b, &mut ib, trials, dt, horizon, sigma, derive_seed(seed, 1))?;
    let pa = pca_95(&ea.states)?;
    let pb = pca_95(&eb.states)?;
    cca_similarity(&pa.states, &pb.states)
}

/// CSV export: `trial,time,x0..x{n-1}` per recorded state.
pub fn ensemble_to_csv(e: &TrajectoryEnsemble) -> String {
    let n = e.dim();
    let mut out = String::from("trial,time");
    for j in 0..n {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    let mut row = 0;
    for (ti, &len) in e.trial_ids.iter().zip(&e.trial_lengths) {
        for s in 0..len {
            out.push_str(&format!("{ti},{}", s as f64 * e.dt));
            for j in 0..n {
                out.push_str(&format!(",{}", e.states.at(row, j)));
            }
            out.push('\n');
            row += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_cloud(rows: usize, dim: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        linalg::gaussian_matrix(&mut rng, rows, dim, 1.0)
    }

    #[test]
    fn contracting_system_decays_monotonically() {
        let field = VectorField::Linear { a: Tensor::identity(2).scale(-1.0), bias: None };
        let mut init = Sampler::gaussian(vec![1.0, 1.0], 0.01, 3).unwrap();
        let e = simulate_ensemble(&field, &mut init, 2, 0.05, 2.0, 0.0, 5).unwrap();
        let mut row = 0;
        for &len in &e.trial_lengths {
            let mut prev = f64::INFINITY;
            for s in 0..len {
                let norm: f64 = e.states.row(row + s).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(norm <= prev + 1e-12, "norm grew on a contracting flow");
                prev = norm;
            }
            row += len;
        }
    }

    #[test]
    fn ensemble_row_bookkeeping_is_exact() {
        let field = VectorField::Linear { a: Tensor::identity(2).scale(-0.5), bias: None };
        let mut init = Sampler::standard_normal(2, 4);
        let e = simulate_ensemble(&field, &mut init, 7, 0.1, 1.0, 0.2, 6).unwrap();
        assert_eq!(e.trial_lengths.len(), 7);
        assert_eq!(e.trial_ids, vec![0, 1, 2, 3, 4, 5, 6]);
        let expected_rows: usize = e.trial_lengths.iter().sum();
        assert_eq!(e.rows(), expected_rows);
        assert_eq!(e.trial_lengths[0], 11, "steps + initial state");
    }

    #[test]
    fn isotropic_cloud_needs_both_axes() {
        let states = gaussian_cloud(10_000, 2, 9);
        let p = pca_95(&states).unwrap();
        assert_eq!(p.retained(), 2);
        assert!(p.explained >= 0.95);
    }

    #[test]
    fn near_line_data_reduces_to_one_axis() {
        let mut states = gaussian_cloud(5000, 2, 10);
        for i in 0..states.rows() {
            let t = states.at(i, 0);
            let noise = states.at(i, 1) * 0.01;
            states.set(i, 0, t);
            states.set(i, 1, 2.0 * t + noise);
        }
        let p = pca_95(&states).unwrap();
        assert_eq!(p.retained(), 1);
    }

    #[test]
    fn pca_back_projection_is_idempotent() {
        let mut states = gaussian_cloud(2000, 3, 11);
        for i in 0..states.rows() {
            let v = states.at(i, 2) * 0.02;
            states.set(i, 2, v);
        }
        let p1 = pca_95(&states).unwrap();
        let p2 = pca_95(&p1.states).unwrap();
        assert_eq!(p1.retained(), p2.retained());
        let proj1 = p1.basis.matmul_bt(&p1.basis).unwrap();
        let proj2 = p2.basis.matmul_bt(&p2.basis).unwrap();
        assert!(proj1.sub(&proj2).unwrap().norm_inf() < 1e-8);
    }

    #[test]
    fn rank_zero_data_is_an_error() {
        let states = Tensor::zeros(vec![50, 3]);
        assert!(pca_95(&states).is_err());
    }

    #[test]
    fn identical_ensembles_correlate_perfectly() {
        let a = gaussian_cloud(4000, 4, 12);
        let r = cca_similarity(&a, &a).unwrap();
        assert!((r - 1.0).abs() < 1e-9, "got {r}");
    }

    #[test]
    fn orthogonal_transform_is_invisible_to_cca() {
        let a = gaussian_cloud(4000, 4, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let q = linalg::random_orthogonal(&mut rng, 4);
        let b = a.matmul_bt(&q).unwrap();
        let r = cca_similarity(&a, &b).unwrap();
        assert!(r >= 0.999, "got {r}");
    }

    #[test]
    fn invertible_transform_is_invisible_to_cca() {
        let a = gaussian_cloud(4000, 3, 15);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let t = linalg::random_well_conditioned(&mut rng, 3, 0.5, 2.0);
        let b = a.matmul_bt(&t).unwrap();
        let r = cca_similarity(&a, &b).unwrap();
        assert!(r >= 0.999, "got {r}");
    }

    #[test]
    fn independent_noise_correlates_near_zero() {
        let a = gaussian_cloud(10_000, 4, 17);
        let b = gaussian_cloud(10_000, 4, 18);
        let r = cca_similarity(&a, &b).unwrap();
        assert!((0.0..0.1).contains(&r), "got {r}");
    }

    #[test]
    fn mismatched_rows_are_a_contract_error() {
        let a = gaussian_cloud(100, 2, 19);
        let b = gaussian_cloud(99, 2, 20);
        assert!(cca_similarity(&a, &b).is_err());
    }

    #[test]
    fn csv_export_has_one_line_per_state() {
        let field = VectorField::Linear { a: Tensor::identity(2).scale(-1.0), bias: None };
        let mut init = Sampler::standard_normal(2, 21);
        let e = simulate_ensemble(&field, &mut init, 3, 0.1, 0.5, 0.0, 22).unwrap();
        let csv = ensemble_to_csv(&e);
        assert_eq!(csv.lines().count(), 1 + e.rows());
        assert!(csv.starts_with("trial,time,x0,x1"));
    }
}
