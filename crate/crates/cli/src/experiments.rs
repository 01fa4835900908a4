//! Experiment runners. Each takes a validated config and returns the
//! artifacts to write; jobs are scheduled on a worker pool and collected
//! in deterministic order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use vfalign::dynsys::{
    load_rnn_weights, make_conjugate, random_conjugacy, random_linear_with_signature,
    random_linear_with_signs, random_lowrank_rnn, EigenPairing, EigenSignature, VectorField,
};
use vfalign::error::Error;
use vfalign::iresnet::IResNet;
use vfalign::linalg;
use vfalign::loss::LossBreakdown;
use vfalign::sampling::{derive_seed, AsymptoticParams, Sampler};
use vfalign::svcca;
use vfalign::tensor::Tensor;
use vfalign::train::{train, train_observed, RunRecord, TrainObserver};

use crate::config::{
    Conjugacy, EquivClass, ExperimentConfig, Family, GridSpec, MatrixSampler, ModelSet,
    TrajectorySpec,
};
use crate::report::{envelope, rows_to_csv, Artifact, PairRow};

pub struct ExpContext {
    pub workers: usize,
    pub stable_output: bool,
}

type ExpResult = Result<Vec<Artifact>, Error>;

pub fn run_experiment(config: &ExperimentConfig, ctx: &ExpContext) -> ExpResult {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    pool.install(|| match config {
        ExperimentConfig::Align { .. } => run_align(config, ctx),
        ExperimentConfig::ConjugatePair { .. } => run_conjugate_suite(config, ctx),
        ExperimentConfig::LinearEquivalenceClass { .. } => run_linear_class(config, ctx),
        ExperimentConfig::SignGrid { .. } => run_sign_grid(config, ctx),
        ExperimentConfig::PairwiseMatrix { .. } => run_pairwise_matrix(config, ctx),
        ExperimentConfig::SvccaCompare { .. } => run_svcca_compare(config, ctx),
        ExperimentConfig::FieldGridDump { .. } => run_field_grid(config, ctx),
        ExperimentConfig::InvertCheck { .. } => run_invert_check(config, ctx),
    })
}

fn echo(config: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(config).expect("configs serialize")
}

fn scrub_record(record: &mut RunRecord, stable: bool) {
    if stable {
        record.wall_ms = 0;
    }
}

fn row_from_record(
    experiment: &str,
    i: usize,
    j: usize,
    seed: u64,
    record: &RunRecord,
) -> PairRow {
    PairRow {
        experiment: experiment.to_string(),
        i,
        j,
        seed,
        sim_forward: record.final_report.sim_forward,
        sim_backward: record.final_report.sim_backward,
        similarity: record.final_report.similarity,
        batches: record.config.batches,
        restarts: record.config.restarts,
        wall_ms: record.wall_ms,
    }
}

// ── align ────────────────────────────────────────────────────────────

/// Observer writing the line-delimited training log and periodic
/// checkpoints.
struct AlignObserver {
    log: String,
    checkpoints: Vec<Artifact>,
}

impl TrainObserver for AlignObserver {
    fn on_batch(&mut self, restart: usize, batch: usize, first: &LossBreakdown, second: &LossBreakdown) {
        for (call, b) in [("forward", first), ("mirror", second)] {
            self.log.push_str(
                &serde_json::json!({
                    "restart": restart,
                    "batch": batch,
                    "call": call,
                    "j_f": b.forward_loss,
                    "j_b": b.backward_loss,
                    "j_i": b.inverse_loss,
                    "total": b.total,
                })
                .to_string(),
            );
            self.log.push('\n');
        }
    }

    fn on_checkpoint(&mut self, restart: usize, batch: usize, phi: &IResNet, psi: &IResNet) {
        for (name, net) in [("phi", phi), ("psi", psi)] {
            self.checkpoints.push(Artifact::json(
                &format!("checkpoint_r{restart}_b{batch}_{name}.json"),
                &net.to_checkpoint_json(),
            ));
        }
    }
}

fn run_align(config: &ExperimentConfig, ctx: &ExpContext) -> ExpResult {
    let ExperimentConfig::Align { seed, system_a, system_b, sampler_a, sampler_b, train: tc } =
        config
    else {
        unreachable!()
    };
    let f = system_a.build()?;
    let g = system_b.build()?;
    let p = sampler_a.build(derive_seed(*seed, 1))?;
    let q = sampler_b.build(derive_seed(*seed, 2))?;
    let mut tc = tc.clone();
    tc.seed = *seed;
    let mut obs = AlignObserver { log: String::new(), checkpoints: Vec::new() };
    let mut out = train_observed(&f, &g, &p, &q, &tc, &mut obs)?;
    scrub_record(&mut out.record, ctx.stable_output);

    let row = row_from_record("align", 0, 1, *seed, &out.record);
    let mut artifacts = vec![
        Artifact::json(
            "run_record.json",
            &envelope(&echo(config), *seed, ctx.stable_output, serde_json::to_value(&out.record).unwrap()),
        ),
        Artifact::text("results.csv", rows_to_csv(&[row])),
        Artifact::json("phi.json", &out.phi.to_checkpoint_json()),
        Artifact::json("psi.json", &out.psi.to_checkpoint_json()),
        Artifact::text("train_log.ndjson", obs.log),
    ];
    artifacts.extend(obs.checkpoints);
    Ok(artifacts)
}

// ── conjugate suite (analytic families and low-rank RNNs) ───────────

fn conjugacy_matrix(kind: Conjugacy, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    match kind {
        Conjugacy::Gaussian => random_conjugacy(rng, n),
        Conjugacy::Orthogonal => linalg::random_rotation(rng, n),
        Conjugacy::Invertible => {
            let mut m = linalg::random_well_conditioned(rng, n, 0.5, 2.0);
            if linalg::det(&m).map(|d| d < 0.0).unwrap_or(false) {
                for j in 0..n {
                    let v = -m.at(0, j);
                    m.set(0, j, v);
                }
            }
            m
        }
        Conjugacy::Identity => Tensor::identity(n),
    }
}

struct SuiteOutcome {
    rows: Vec<PairRow>,
    failures: Vec<serde_json::Value>,
    records: Vec<serde_json::Value>,
}

fn collect_suite<J>(jobs: Vec<J>, run: impl Fn(usize, &J) -> Result<(PairRow, RunRecord), Error> + Sync) -> SuiteOutcome
where
    J: Sync,
{
    let results: Vec<(usize, Result<(PairRow, RunRecord), Error>)> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, j)| (i, run(i, j)))
        .collect();
    let mut outcome = SuiteOutcome { rows: Vec::new(), failures: Vec::new(), records: Vec::new() };
    let mut sorted = results;
    sorted.sort_by_key(|(i, _)| *i);
    for (i, r) in sorted {
        match r {
            Ok((row, record)) => {
                outcome.rows.push(row);
                outcome.records.push(serde_json::to_value(&record).unwrap());
            }
            Err(e) => outcome.failures.push(serde_json::json!({ "replicate": i, "error": e.to_string() })),
        }
    }
    outcome
}

fn summary_stats(rows: &[PairRow]) -> serde_json::Value {
    if rows.is_empty() {
        return serde_json::json!({ "count": 0 });
    }
    let mut sims: Vec<f64> = rows.iter().map(|r| r.similarity).collect();
    sims.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    let median = if sims.len() % 2 == 1 {
        sims[sims.len() / 2]
    } else {
        0.5 * (sims[sims.len() / 2 - 1] + sims[sims.len() / 2])
    };
    serde_json::json!({ "count": sims.len(), "mean": mean, "median": median, "min": sims[0], "max": *sims.last().unwrap() })
}

fn run_conjugate_suite(config: &ExperimentConfig, ctx: &ExpContext) -> ExpResult {
    let ExperimentConfig::ConjugatePair {
        seed,
        family,
        replicates,
        mu_range,
        dim,
        rank,
        conjugacy,
        train: tc,
    } = config
    else {
        unreachable!()
    };
    let jobs: Vec<u64> = (0..*replicates as u64).collect();
    let stable = ctx.stable_output;
    let outcome = collect_suite(jobs, |i, &rep| {
        let rep_seed = derive_seed(*seed, rep);
        let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
        let (f, p, n) = match family {
            Family::VanDerPol => {
                let [lo, hi] = mu_range.unwrap_or([1.5, 3.5]);
                let mu = lo + (hi - lo) * rng.gen::<f64>();
                (VectorField::VanDerPol { mu }, Sampler::vdp_box(derive_seed(rep_seed, 1)), 2)
            }
            Family::Pitchfork => {
                let [lo, hi] = mu_range.unwrap_or([2.0, 4.0]);
                let mu = lo + (hi - lo) * rng.gen::<f64>();
                (
                    VectorField::Pitchfork { mu },
                    Sampler::pitchfork_box(mu, derive_seed(rep_seed, 1)),
                    2,
                )
            }
            Family::LowRankRnn => {
                let n = dim.unwrap_or(16);
                let k = rank.unwrap_or(2);
                let spec = random_lowrank_rnn(n, k, &mut rng, true);
                (spec.field(), Sampler::standard_normal(n, derive_seed(rep_seed, 1)), n)
            }
        };
        let q_mat = conjugacy_matrix(*conjugacy, n, &mut rng);
        let g = make_conjugate(&f, &q_mat)?;
        // The target domain is the image of the source domain under the
        // ground-truth map, so both systems' limit sets are covered.
        let q = p.clone().linear_image(q_mat, None)?;
        let mut tc = tc.clone();
        tc.seed = rep_seed;
        let mut out = train(&f, &g, &p, &q, &tc)?;
        scrub_record(&mut out.record, stable);
        Ok((row_from_record("conjugate-pair", i, 0, rep_seed, &out.record), out.record))
    });

    let results = serde_json::json!({
        "family": family,
        "summary": summary_stats(&outcome.rows),
        "failures": outcome.failures,
        "runs": outcome.records,
    });
    Ok(vec![
        Artifact::text("results.csv", rows_to_csv(&outcome.rows)),
        Artifact::json("suite.json", &envelope(&echo(config), *seed, ctx.stable_output, results)),
    ])
}

// ── linear equivalence classes ───────────────────────────────────────

fn random_signature(n: usize, rng: &mut ChaCha8Rng) -> EigenSignature {
    let n_pos = rng.gen_range(0..=n);
    split_signature(n_pos, n - n_pos, rng)
}

fn split_signature(n_pos: usize, n_neg: usize, rng: &mut ChaCha8Rng) -> EigenSignature {
    let pos_pairs = if n_pos >= 2 { rng.gen_range(0..=(n_pos / 2)) } else { 0 };
    let neg_pairs = if n_neg >= 2 { rng.gen_range(0..=(n_neg / 2)) } else { 0 };
    EigenSignature {
        pos_real: n_pos - 2 * pos_pairs,
        neg_real: n_neg - 2 * neg_pairs,
        pos_complex_pairs: pos_pairs,
        neg_complex_pairs: neg_pairs,
    }
}

fn run_linear_class(config: &ExperimentConfig, ctx: &ExpContext) -> ExpResult {
    let ExperimentConfig::LinearEquivalenceClass { seed, dim, class, pairs, train: tc } = config
    else {
        unreachable!()
    };
    let n = *dim;
    let jobs: Vec<u64> = (0..*pairs as u64).collect();
    let stable = ctx.stable_output;
    let outcome = collect_suite(jobs, |i, &rep| {
        let rep_seed = derive_seed(*seed, rep);
        let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
        let sig = random_signature(n, &mut rng);
        let a1 = random_linear_with_signature(&sig, &mut rng).a;
        let a2 = match class {
            EquivClass::Orthogonal => {
                let q = linalg::random_rotation(&mut rng, n);
                q.matmul(&a1).unwrap().matmul(&q.transpose()).unwrap()
            }
            EquivClass::Invertible => {
                let q = linalg::random_well_conditioned(&mut rng, n, 0.5, 2.0);
                let q_inv = linalg::inverse(&q)?;
                q.matmul(&a1).unwrap().matmul(&q_inv).unwrap()
            }
            EquivClass::SameSignAndType => random_linear_with_signature(&sig, &mut rng).a,
            EquivClass::SameSignOnly => {
                let sig2 = split_signature(sig.n_pos(), n - sig.n_pos(), &mut rng);
                random_linear_with_signature(&sig2, &mut rng).a
            }
        };
        let f = VectorField::Linear { a: a1, bias: None };
        let g = VectorField::Linear { a: a2, bias: None };
        // Standard normal on both sides to emphasize the only fixed point.
        let p = Sampler::standard_normal(n, derive_seed(rep_seed, 1));
        let q = Sampler::standard_normal(n, derive_seed(rep_seed, 2));
        let mut tc = tc.clone();
        tc.seed = rep_seed;
        let mut out = train(&f, &g, &p, &q, &tc)?;
        scrub_record(&mut out.record, stable);
        Ok((row_from_record("linear-equivalence-class", i, 0, rep_seed, &out.record), out.record))
    });

    let results = serde_json::json!({
        "class": class,
        "dim": n,
        "summary": summary_stats(&outcome.rows),
        "failures": outcome.failures,
        "runs": outcome.records,
    });
    Ok(vec![
        Artifact::text("results.csv", rows_to_csv(&outcome.rows)),
        Artifact::json("suite.json", &envelope(&echo(config), *seed, ctx.stable_output, results)),
    ])
}

// ── sign grid ────────────────────────────────────────────────────────

fn run_sign_grid(config: &ExperimentConfig, ctx: &ExpContext) -> ExpResult {
    let ExperimentConfig::SignGrid { seed, dim, groups, pairs_per_cell, train: tc } = config
    else {
        unreachable!()
    };
    let n = *dim;
    // One job per (cell, replicate); cells cover the upper triangle
    // including the diagonal and are mirrored on write.
    let mut jobs = Vec::new();
    for gi in 0..groups.len() {
        for gj in gi..groups.len() {
            for rep in 0..*pairs_per_cell {
                jobs.push((gi, gj, rep));
            }
        }
    }
    let stable = ctx.stable_output;
    let outcome = collect_suite(jobs, |idx, &(gi, gj, rep)| {
        let rep_seed = derive_seed(*seed, (idx as u64) << 8 | rep as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
        let s1 = random_linear_with_signs(n, groups[gi], EigenPairing::Real, &mut rng)?;
        let s2 = random_linear_with_signs(n, groups[gj], EigenPairing::Real, &mut rng)?;
        let f = s1.field();
        let g = s2.field();
        let p = Sampler::standard_normal(n, derive_seed(rep_seed, 1));
        let q = Sampler::standard_normal(n, derive_seed(rep_seed, 2));
        let mut tc = tc.clone();
        tc.seed = rep_seed;
        let mut out = train(&f, &g, &p, &q, &tc)?;
        scrub_record(&mut out.record, stable);
        Ok((row_from_record("sign-grid", gi, gj, rep_seed, &out.record), out.record))
    });

    // Cell means, mirrored across the diagonal.
    let k = groups.len();
    let mut cell_sum = vec![vec![0.0; k]; k];
    let mut cell_count = vec![vec![0usize; k]; k];
    for row in &outcome.rows {
        cell_sum[row.i][row.j] += row.similarity;
        cell_count[row.i][row.j] += 1;
    }
    let mut matrix_csv = String::from("group_i,group_j,n_pos_i,n_pos_j,mean_similarity,pairs\n");
    let mut matrix = vec![vec![f64::NAN; k]; k];
    for gi in 0..k {
        for gj in 0..k {
            let (a, b) = if gi <= gj { (gi, gj) } else { (gj, gi) };
            if cell_count[a][b] > 0 {
                matrix[gi][gj] = cell_sum[a][b] / cell_count[a][b] as f64;
            }
            matrix_csv.push_str(&format!(
                "{gi},{gj},{},{},{},{}\n",
                groups[gi], groups[gj], matrix[gi][gj], cell_count[a][b]
            ));
        }
    }

    // Aggregate by proportion of equally-signed eigenvalues.
    let mut by_proportion: Vec<(f64, f64, usize)> = Vec::new();
    for gi in 0..k {        for gj in gi..k {
            if cell_count[gi][gj] == 0 {
                continue;
            }
            let diff = groups[gi].abs_diff(groups[gj]);
            let proportion = 1.0 - diff as f64 / n as f64;
            match by_proportion.iter_mut().find(|(p, _, _)| (*p - proportion).abs() < 1e-12) {
                Some(entry) => {
                    entry.1 += cell_sum[gi][gj];
                    entry.2 += cell_count[gi][gj];
                }
                None => by_proportion.push((proportion, cell_sum[gi][gj], cell_count[gi][gj])),
            }
        }
    }
    by_proportion.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut proportions_csv = String::from("same_sign_proportion,mean_similarity,pairs\n");
    for (p, sum, count) in &by_proportion {
        proportions_csv.push_str(&format!("{p},{},{count}\n", sum / *count as f64));
    }

    let results = serde_json::json!({
        "groups": groups,
        "matrix": matrix,
        "proportion_means": by_proportion
            .iter()
            .map(|(p, s, c)| serde_json::json!({ "proportion": p, "mean": s / *c as f64, "pairs": c }))
            .collect::<Vec<_>>(),
        "failures": outcome.failures,
    });
    Ok(vec![
        Artifact::text("pairs.csv", rows_to_csv(&outcome.rows)),
        Artifact::text("matrix.csv", matrix_csv),
        Artifact::text("proportions.csv", proportions_csv),
        Artifact::json("sign_grid.json", &envelope(&echo(config), *seed, ctx.stable_output, results)),
    ])
}

// ── pairwise matrix ──────────────────────────────────────────────────

fn build_models(models: &ModelSet, seed: u64) -> Result<Vec<(String, VectorField)>, Error> {
    match models {
        ModelSet::Specs(specs) => specs
            .iter()
            .enumerate()
            .map(|(i, s)| Ok((format!("model_{i}"), s.build()?)))
            .collect(),
        ModelSet::Dir { dir } => {
            let mut paths: Vec<_> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
                .collect();
            paths.sort();
            if paths.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "model directory {dir} holds {} usable files, need at least 2",
                    paths.len()
                )));
            }
            Ok(paths
                .into_iter()
                .filter_map(|p| {
                    let name = p.file_stem().map(|s| s.to_string_lossy().into_owned())?;
                    match load_rnn_weights(&p) {
                        Ok(spec) => Some((name, spec.field())),
                        Err(e) => {
                            eprintln!("skipping unreadable model {}: {e}", p.display());
                            None
                        }
                    }
                })
                .collect())
        }
        ModelSet::Generated { count, dim, rank } => Ok((0..*count)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xe0 + i as u64));
                (format!("rnn_{i}"), random_lowrank_rnn(*dim, *rank, &mut rng, true).field())
            })
            .collect()),
    }
}

fn matrix_to_csv(names: &[String], m: &[Vec<f64>]) -> String {
    let mut out = String::from("model");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (i, row) in m.iter().enumerate() {
        out.push_str(&names[i]);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

fn run_pairwise_matrix(config: &ExperimentConfig, ctx: &ExpContext) -> ExpResult {
    let ExperimentConfig::PairwiseMatrix { seed, models, sampler, train: tc, svcca: sv } = config
    else {
        unreachable!()
    };
    let models = build_models(models, *seed)?;
    let m = models.len();
    if m < 2 {
        return Err(Error::InvalidArgument("pairwise matrix needs at least two models".into()));
    }
    // Per-model samplers, built once and shared.
    let samplers: Vec<Sampler> = models
        .iter()
        .enumerate()
        .map(|(i, (_, field))| match sampler {
            MatrixSampler::StandardNormal => {
                Ok(Sampler::standard_normal(field.dim(), derive_seed(*seed, 0x50 + i as u64)))
            }
            MatrixSampler::Asymptotic { sigma, dt, t_burn, t_end, trials } => Sampler::asymptotic(
                field,
                &AsymptoticParams {
                    sigma: *sigma,
                    dt: *dt,
                    t_burn: *t_burn,
                    t_end: *t_end,
                    trials: *trials,
                    save_every: 10,
                },
                derive_seed(*seed, 0x50 + i as u64),
            ),
        })
        .collect::<Result<_, Error>>()?;

    let mut jobs = Vec::new();
    for i in 0..m {
        for j in i..m {
            jobs.push((i, j));
        }
    }
    let stable = ctx.stable_output;
    let results: Vec<(usize, usize, Result<(PairRow, f64), Error>)> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let pair_seed = derive_seed(*seed, (i as u64) << 16 | j as u64);
            let run = (|| {
                let f = &models[i].1;
                let g = &models[j].1;
                let mut tc = tc.clone();
                tc.seed = pair_seed;
                let mut out = train(f, g, &samplers[i], &samplers[j], &tc)?;
                scrub_record(&mut out.record, stable);
                let cca = svcca::svcca_similarity(
                    f,
                    g,
                    &samplers[i],
                    &samplers[j],
                    sv.trials,
                    sv.dt,
                    sv.horizon,
                    sv.sigma,
                    derive_seed(pair_seed, 0xcca),
                )?;
                Ok((row_from_record("pairwise-matrix", i, j, pair_seed, &out.record), cca))
            })();
            (i, j, run)
        })
        .collect();

    let mut dform = vec![vec![f64::NAN; m]; m];
    let mut svcca_m = vec![vec![f64::NAN; m]; m];
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut sorted = results;
    sorted.sort_by_key(|(i, j, _)| (*i, *j));
    for (i, j, r) in sorted {
        match r {
            Ok((row, cca)) => {
                dform[i][j] = row.similarity;
                dform[j][i] = row.similarity;
                svcca_m[i][j] = cca;
                svcca_m[j][i] = cca;
                rows.push(row);
            }
            Err(e) => failures.push(serde_json::json!({ "i": i, "j": j, "error": e.to_string() })),
        }
    }

    let names: Vec<String> = models.iter().map(|(n, _)| n.clone()).collect();
    let results = serde_json::json!({
        "models": names,
        "dform": dform,
        "svcca": svcca_m,
        "failures": failures,
    });
    Ok(vec![
        Artifact::text("pairs.csv", rows_to_csv(&rows)),
        Artifact::text("dform_matrix.csv", matrix_to_csv(&names, &dform)),
        Artifact::text("svcca_matrix.csv", matrix_to_csv(&names, &svcca_m)),
        Artifact::json("matrix.json", &envelope(&echo(config), *seed, ctx.stable_output, results)),
    ])
}

// ── svcca compare ────────────────────────────────────────────────────

fn run_svcca_compare(config: &ExperimentConfig, ctx: &ExpContext) -> ExpResult {
    let ExperimentConfig::SvccaCompare { seed, system_a, system_b, init_a, init_b, params } =
        config
    else {
        unreachable!()
    };
    let f = system_a.build()?;
    let g = system_b.build()?;
    let ia = init_a.build(derive_seed(*seed, 1))?;
    let ib = init_b.build(derive_seed(*seed, 2))?;
    let value = svcca::svcca_similarity(
        &f,
        &g,
        &ia,
        &ib,
        params.trials,
        params.dt,
        params.horizon,
        params.sigma,
        *seed,
    )?;
    let results = serde_json::json!({ "svcca": value });
    Ok(vec![
        Artifact::text(
            "results.csv",
            format!("experiment,seed,svcca\nsvcca-compare,{seed},{value}\n"),
        ),
        Artifact::json("svcca.json", &envelope(&echo(config), *seed, ctx.stable_output, results)),
    ])
}

// ── field grid dump ──────────────────────────────────────────────────

#[derive(serde::Serialize, serde::Deserialize)]
pub struct FieldGrid {
    pub grid: GridSpec,
    /// Grid points, row-major over (y, x).
    pub points: Vec<[f64; 2]>,
    /// Field vectors at the grid points.
    pub vectors: Vec<[f64; 2]>,
    /// With a checkpoint: transformed points and push-forward vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pushforward_points: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pushforward_vectors: Option<Vec<[f64; 2]>>,
    /// Sample trajectories of the source field (push-forwarded when a
    /// checkpoint is given).
    pub trajectories: Vec<Vec<[f64; 2]>>,
}

pub fn parse_field_grid(text: &str) -> Result<FieldGrid, Error> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: "field grid".into(),
        message: e.to_string(),
    })
}

fn run_field_grid(config: &ExperimentConfig, ctx: &ExpContext) -> ExpResult {
    let ExperimentConfig::FieldGridDump { seed, system, checkpoint, grid, trajectories } = config
    else {
        unreachable!()
    };
    let field = system.build()?;
    if field.dim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "field grid dumps are for planar systems, got dimension {}",
            field.dim()
        )));
    }
    let net = checkpoint
        .as_ref()
        .map(|p| IResNet::load(std::path::Path::new(p)))
        .transpose()?;
    if let Some(net) = &net {
        if net.dim() != 2 {
            return Err(Error::InvalidArgument("checkpoint is not a planar network".into()));
        }
    }

    let mut points = Vec::with_capacity(grid.nx * grid.ny);
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let x = grid.x_min + (grid.x_max - grid.x_min) * ix as f64 / (grid.nx - 1) as f64;
            let y = grid.y_min + (grid.y_max - grid.y_min) * iy as f64 / (grid.ny - 1) as f64;
            points.push([x, y]);
        }
    }
    let mut vectors = Vec::with_capacity(points.len());
    for p in &points {
        let v = field.eval(p)?;
        vectors.push([v[0], v[1]]);
    }
    let (pushforward_points, pushforward_vectors) = match &net {
        Some(net) => {
            let mut pp = Vec::with_capacity(points.len());
            let mut pv = Vec::with_capacity(points.len());
            for (p, v) in points.iter().zip(&vectors) {
                let x = Tensor::matrix(1, 2, p.to_vec());
                let d = Tensor::matrix(1, 2, v.to_vec());
                let (y, t) = net.forward_with_tangent(&x, &d)?;
                pp.push([y.data()[0], y.data()[1]]);
                pv.push([t.data()[0], t.data()[1]]);
            }
            (Some(pp), Some(pv))
        }
        None => (None, None),
    };

    // Trajectories from initial conditions spread over the grid box.
    let mut init = Sampler::uniform_box(
        vec![grid.x_min, grid.y_min],
        vec![grid.x_max, grid.y_max],
        derive_seed(*seed, 3),
    )?;
    let TrajectorySpec { count, dt, horizon } = *trajectories;
    let mut trajs = Vec::with_capacity(count);
    if count > 0 {
        let ensemble = svcca::simulate_ensemble(&field, &mut init, count, dt, horizon, 0.0, *seed)?;
        let mut row = 0;
        for &len in &ensemble.trial_lengths {
            let mut t = Vec::with_capacity(len);
            for s in 0..len {
                let state = ensemble.states.row(row + s);
                let mapped = match &net {
                    Some(net) => {
                        let y = net.forward(&Tensor::matrix(1, 2, state.to_vec()))?;
                        [y.data()[0], y.data()[1]]
                    }
                    None => [state[0], state[1]],
                };
                t.push(mapped);
            }
            trajs.push(t);
            row += len;
        }
    }

    let out = FieldGrid {
        grid: grid.clone(),
        points,
        vectors,
        pushforward_points,
        pushforward_vectors,
        trajectories: trajs,
    };
    Ok(vec![Artifact::json(
        "field_grid.json",
        &envelope(&echo(config), *seed, ctx.stable_output, serde_json::to_value(&out).unwrap()),
    )])
}

// ── invert check ─────────────────────────────────────────────────────

fn run_invert_check(config: &ExperimentConfig, ctx: &ExpContext) -> ExpResult {
    let ExperimentConfig::InvertCheck { seed, checkpoint, points, tol, max_iter, point_std } =
        config
    else {
        unreachable!()
    };
    let net = IResNet::load(std::path::Path::new(checkpoint))?;
    let mut sampler = Sampler::gaussian(vec![0.0; net.dim()], *point_std, *seed)?;
    let x = sampler.draw(*points)?;
    let y = net.forward(&x)?;
    let back = net.inverse(&y, *tol, *max_iter)?;
    let mut worst = 0.0_f64;
    let mut sum = 0.0;
    for i in 0..x.rows() {
        let err: f64 = x
            .row(i)
            .iter()
            .zip(back.row(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(err);
        sum += err;
    }
    let results = serde_json::json!({
        "points": points,
        "tol": tol,
        "max_iter": max_iter,
        "max_residual": worst,
        "mean_residual": sum / *points as f64,
    });
    Ok(vec![Artifact::json(
        "invert_check.json",
        &envelope(&echo(config), *seed, ctx.stable_output, results),
    )])
}
