//! Output artifacts: the pair/replicate CSV schema and the JSON envelope
//! carrying config echo, seed, build id and convention notes.

use serde::Serialize;

pub const BUILD_ID: &str = env!("BUILD_ID");

pub const CSV_HEADER: &str =
    "experiment,i,j,seed,sim_forward,sim_backward,similarity,batches,restarts,wall_ms";

#[derive(Debug, Clone, Serialize)]
pub struct PairRow {
    pub experiment: String,
    pub i: usize,
    pub j: usize,
    pub seed: u64,
    pub sim_forward: f64,
    pub sim_backward: f64,
    pub similarity: f64,
    pub batches: usize,
    pub restarts: usize,
    pub wall_ms: u64,
}

impl PairRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            self.i,
            self.j,
            self.seed,
            self.sim_forward,
            self.sim_backward,
            self.similarity,
            self.batches,
            self.restarts,
            self.wall_ms
        )
    }
}

pub fn rows_to_csv(rows: &[PairRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Wraps experiment results with everything needed to reproduce them.
pub fn envelope(
    config_echo: &serde_json::Value,
    seed: u64,
    stable_output: bool,
    results: serde_json::Value,
) -> serde_json::Value {
    serde_json::json!({
        "config": config_echo,
        "seed": seed,
        "build_id": if stable_output { "stable" } else { BUILD_ID },
        "conventions": {
            "batch": "one batch = one bidirectional iteration (two update calls)",
            "rnn_j_scaling": "entrywise std 0.5/sqrt(n) (spectral radius near 0.5)",
            "similarity": "min of the two directional mean cosines",
        },
        "results": results,
    })
}

/// An artifact ready to be written under the output directory.
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn json(name: &str, value: &serde_json::Value) -> Artifact {
        let mut bytes = serde_json::to_vec_pretty(value).expect("json artifacts serialize");
        bytes.push(b'\n');
        Artifact { name: name.to_string(), bytes }
    }

    pub fn text(name: &str, text: String) -> Artifact {
        Artifact { name: name.to_string(), bytes: text.into_bytes() }
    }
}
