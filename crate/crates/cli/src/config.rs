//! Experiment configuration schemas. Configs are schema-validated before
//! any compute and echoed verbatim into every output artifact.

use serde::{Deserialize, Serialize};
use vfalign::dynsys::SystemSpec;
use vfalign::sampling::SamplerSpec;
use vfalign::train::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentConfig {
    /// One pair of named systems, trained and scored.
    Align {
        seed: u64,
        system_a: SystemSpec,
        system_b: SystemSpec,
        sampler_a: SamplerSpec,
        sampler_b: SamplerSpec,
        train: TrainConfig,
    },
    /// Replicated conjugate pairs of one family.
    ConjugatePair {
        seed: u64,
        family: Family,
        replicates: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu_range: Option<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rank: Option<usize>,
        #[serde(default)]
        conjugacy: Conjugacy,
        train: TrainConfig,
    },
    /// Replicated pairs of topologically equivalent linear systems.
    LinearEquivalenceClass {
        seed: u64,
        dim: usize,
        class: EquivClass,
        pairs: usize,
        train: TrainConfig,
    },
    /// Pairwise similarity between groups of linear systems with a fixed
    /// count of right-half-plane eigenvalues per group.
    SignGrid {
        seed: u64,
        dim: usize,
        /// Right-half-plane eigenvalue counts, one per group.
        groups: Vec<usize>,
        pairs_per_cell: usize,
        train: TrainConfig,
    },
    /// Alignment and trajectory-CCA matrices over a set of models.
    PairwiseMatrix {
        seed: u64,
        models: ModelSet,
        sampler: MatrixSampler,
        train: TrainConfig,
        #[serde(default)]
        svcca: SvccaParams,
    },
    /// Trajectory-CCA similarity between two systems.
    SvccaCompare {
        seed: u64,
        system_a: SystemSpec,
        system_b: SystemSpec,
        init_a: SamplerSpec,
        init_b: SamplerSpec,
        #[serde(default)]
        params: SvccaParams,
    },
    /// Vector-field grid dump for plotting, optionally with a trained
    /// checkpoint's push-forward.
    FieldGridDump {
        seed: u64,
        system: SystemSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        checkpoint: Option<String>,
        grid: GridSpec,
        #[serde(default)]
        trajectories: TrajectorySpec,
    },
    /// Round-trip residuals of a checkpoint's inverse.
    InvertCheck {
        seed: u64,
        checkpoint: String,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_point_std")]
        point_std: f64,
    },
}

fn default_points() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    100
}
fn default_point_std() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    VanDerPol,
    Pitchfork,
    LowRankRnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Conjugacy {
    /// Standard-normal matrix with determinant forced positive.
    #[default]
    Gaussian,
    Orthogonal,
    /// Random well-conditioned invertible matrix.
    Invertible,
    Identity,
}

/// How the second linear system of a pair relates to the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivClass {
    /// `A2 = Q·A1·Qᵀ` for random orthogonal `Q`.
    Orthogonal,
    /// `A2 = Q·A1·Q⁻¹` for random invertible `Q`.
    Invertible,
    /// Independent draw with identical eigenvalue signature.
    SameSignAndType,
    /// Independent draw with the same half-plane counts only.
    SameSignOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSet {
    /// Explicit system list.
    Specs(Vec<SystemSpec>),
    /// Directory of RNN weight files (lexicographic order).
    Dir { dir: String },
    /// Generated low-rank RNNs.
    Generated { count: usize, dim: usize, rank: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSampler {
    StandardNormal,
    /// Per-model asymptotic pools under the given noise.
    Asymptotic {
        sigma: f64,
        #[serde(default = "default_asym_dt")]
        dt: f64,
        #[serde(default = "default_asym_burn")]
        t_burn: f64,
        #[serde(default = "default_asym_end")]
        t_end: f64,
        #[serde(default = "default_asym_trials")]
        trials: usize,
    },
}

fn default_asym_dt() -> f64 {
    0.01
}
fn default_asym_burn() -> f64 {
    50.0
}
fn default_asym_end() -> f64 {
    100.0
}
fn default_asym_trials() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvccaParams {
    #[serde(default = "default_svcca_trials")]
    pub trials: usize,
    #[serde(default = "default_svcca_dt")]
    pub dt: f64,
    #[serde(default = "default_svcca_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub sigma: f64,
}

fn default_svcca_trials() -> usize {
    1000
}
fn default_svcca_dt() -> f64 {
    0.02
}
fn default_svcca_horizon() -> f64 {
    10.0
}

impl Default for SvccaParams {
    fn default() -> Self {
        SvccaParams {
            trials: default_svcca_trials(),
            dt: default_svcca_dt(),
            horizon: default_svcca_horizon(),
            sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySpec {
    #[serde(default = "default_traj_count")]
    pub count: usize,
    #[serde(default = "default_traj_dt")]
    pub dt: f64,
    #[serde(default = "default_traj_horizon")]
    pub horizon: f64,
}

fn default_traj_count() -> usize {
    8
}
fn default_traj_dt() -> f64 {
    0.01
}
fn default_traj_horizon() -> f64 {
    10.0
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            count: default_traj_count(),
            dt: default_traj_dt(),
            horizon: default_traj_horizon(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<ExperimentConfig, String> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| format!("config parse error: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::Align { seed, .. }
            | ExperimentConfig::ConjugatePair { seed, .. }
            | ExperimentConfig::LinearEquivalenceClass { seed, .. }
            | ExperimentConfig::SignGrid { seed, .. }
            | ExperimentConfig::PairwiseMatrix { seed, .. }
            | ExperimentConfig::SvccaCompare { seed, .. }
            | ExperimentConfig::FieldGridDump { seed, .. }
            | ExperimentConfig::InvertCheck { seed, .. } => *seed,
        }
    }

    pub fn set_seed(&mut self, new: u64) {
        match self {
            ExperimentConfig::Align { seed, .. }
            | ExperimentConfig::ConjugatePair { seed, .. }
            | ExperimentConfig::LinearEquivalenceClass { seed, .. }
            | ExperimentConfig::SignGrid { seed, .. }
            | ExperimentConfig::PairwiseMatrix { seed, .. }
            | ExperimentConfig::SvccaCompare { seed, .. }
            | ExperimentConfig::FieldGridDump { seed, .. }
            | ExperimentConfig::InvertCheck { seed, .. } => *seed = new,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            ExperimentConfig::Align { train, .. } => {
                train.validate().map_err(|e| e.to_string())?;
            }
            ExperimentConfig::ConjugatePair { family, replicates, mu_range, dim, rank, train, .. } => {
                train.validate().map_err(|e| e.to_string())?;
                if *replicates == 0 {
                    return Err("replicates must be at least 1".into());
                }
                match family {
                    Family::VanDerPol | Family::Pitchfork => {
                        if let Some([lo, hi]) = mu_range {
                            if lo >= hi || *lo <= 0.0 {
                                return Err("mu_range must satisfy 0 < lo < hi".into());
                            }
                        }
                    }
                    Family::LowRankRnn => {
                        if dim.unwrap_or(16) < 1 {
                            return Err("rnn dim must be at least 1".into());
                        }
                        if rank.is_some() && rank.unwrap() > dim.unwrap_or(16) {
                            return Err("rnn rank cannot exceed dim".into());
                        }
                    }
                }
            }
            ExperimentConfig::LinearEquivalenceClass { dim, pairs, train, .. } => {
                train.validate().map_err(|e| e.to_string())?;
                if *dim < 2 || *pairs == 0 {
                    return Err("equivalence classes need dim >= 2 and pairs >= 1".into());
                }
            }
            ExperimentConfig::SignGrid { dim, groups, pairs_per_cell, train, .. } => {
                train.validate().map_err(|e| e.to_string())?;
                if groups.is_empty() || *pairs_per_cell == 0 {
                    return Err("sign grid needs groups and pairs_per_cell >= 1".into());
                }
                if groups.iter().any(|g| g > dim) {
                    return Err("group eigenvalue counts cannot exceed the dimension".into());
                }
            }
            ExperimentConfig::PairwiseMatrix { models, train, .. } => {
                train.validate().map_err(|e| e.to_string())?;
                if let ModelSet::Generated { count, dim, rank } = models {
                    if *count < 2 {
                        return Err("pairwise matrix needs at least two models".into());
                    }
                    if rank > dim {
                        return Err("rnn rank cannot exceed dim".into());
                    }
                }
            }
            ExperimentConfig::SvccaCompare { params, .. } => {
                if params.trials == 0 || params.dt <= 0.0 || params.horizon <= 0.0 {
                    return Err("svcca needs trials >= 1, dt > 0, horizon > 0".into());
                }
            }
            ExperimentConfig::FieldGridDump { grid, .. } => {
                if grid.nx < 2 || grid.ny < 2 || grid.x_min >= grid.x_max || grid.y_min >= grid.y_max {
                    return Err("grid needs nx, ny >= 2 and min < max per axis".into());
                }
            }
            ExperimentConfig::InvertCheck { points, tol, max_iter, .. } => {
                if *points == 0 || *tol <= 0.0 || *max_iter == 0 {
                    return Err("invert check needs points >= 1, tol > 0, max_iter >= 1".into());
                }
            }
        }
        Ok(())
    }

    /// Experiment name as written in output rows.
    pub fn kind_name(&self) -> &'static str {
        match self {
            ExperimentConfig::Align { .. } => "align",
            ExperimentConfig::ConjugatePair { .. } => "conjugate-pair",
            ExperimentConfig::LinearEquivalenceClass { .. } => "linear-equivalence-class",
            ExperimentConfig::SignGrid { .. } => "sign-grid",
            ExperimentConfig::PairwiseMatrix { .. } => "pairwise-matrix",
            ExperimentConfig::SvccaCompare { .. } => "svcca-compare",
            ExperimentConfig::FieldGridDump { .. } => "field-grid-dump",
            ExperimentConfig::InvertCheck { .. } => "invert-check",
        }
    }
}
