//! Phase-level measurement harness. Runs full simulated sessions over a
//! sweep of party counts and reports, per phase, the wall time and the exact
//! number of bytes that crossed the hub. Byte counts come straight from the
//! session transcript, so they are deterministic and reproducible run to
//! run; times are advisory (they depend on the machine and thread
//! scheduling).

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::einfer::compile::WeightForm;
use crate::einfer::{InputShape, LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::protocol::session::{run_simulated_session, SessionConfig, SessionOutcome};
use crate::protocol::Transcript;
use crate::ring::CryptoParams;
use crate::vpack::ColumnPartition;

/// One measurement row. `bytes` equals the transcript sum for the phase,
/// exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchRecord {
    pub phase: String,
    pub n: usize,
    pub wall_time_sec: f64,
    pub bytes: u64,
    pub preset: String,
}

/// Reporting phases and the transcript phases + server clock buckets that
/// feed them. Evaluation appears twice because the weight form changes what
/// the server computes but not the message flow.
const KEYGEN_PHASES: &[&str] = &[
    "hello", "tpk", "cpk", "rotKeys", "relinR1", "relinR2", "setupDone",
];
const CONCAT_PHASES: &[&str] = &["query", "input"];
const EVAL_PHASES: &[&str] = &["evaluate"];
const DECRYPT_PHASES: &[&str] = &["ksShare", "result"];

fn phase_bytes(transcript: &Transcript, phases: &[&str]) -> u64 {
    transcript
        .canonical()
        .iter()
        .filter(|e| phases.contains(&e.phase.as_str()))
        .map(|e| e.bytes as u64)
        .sum()
}

fn phase_time(times: &BTreeMap<String, f64>, key: &str) -> f64 {
    times.get(key).copied().unwrap_or(0.0)
}

/// Measurement model: 28 features in a 2 x 14 matrix (14 columns split
/// across up to 14 parties), dense 28->8, square, dense 8->4. Depth 3,
/// weights fixed and formulaic so every run measures identical work.
pub fn bench_model() -> ModelSpec {
    let dense = |rows: usize, cols: usize, salt: usize| -> LayerSpec {
        let weights = (0..rows * cols)
            .map(|i| ((i * 7 + salt) % 11) as f64 / 11.0 - 0.5)
            .collect();
        let bias = (0..rows).map(|i| ((i + salt) % 5) as f64 / 10.0 - 0.2).collect();
        LayerSpec::Dense { rows, cols, weights, bias }
    };
    ModelSpec {
        input_shape: InputShape { rows: 2, cols: 14 },
        normalization: None,
        layers: vec![
            dense(8, 28, 3),
            LayerSpec::Activation { coeffs: vec![0.0, 0.0, 1.0] },
            dense(4, 8, 5),
        ],
    }
}

/// Even column split: party i gets [i*cols/n, (i+1)*cols/n).
pub fn even_partition(cols: usize, n: usize) -> Result<ColumnPartition> {
    if n == 0 || n > cols {
        return Err(Error::InvalidParams(format!(
            "cannot split {cols} columns across {n} parties"
        )));
    }
    ColumnPartition::new(cols, (0..n).map(|i| i * cols / n).collect())
}

fn one_sweep_point(
    preset: &str,
    params: &CryptoParams,
    spec: &ModelSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    let structure = spec.structure();
    let (rows, cols) = (structure.input_shape.rows, structure.input_shape.cols);
    let partition = even_partition(cols, n)?;
    let table = vec![(0..rows * cols)
        .map(|i| (i % 7) as f64 / 3.5 - 1.0)
        .collect::<Vec<f64>>()];
    let mut session_id = [0u8; 16];
    session_id[..8].copy_from_slice(&seed.to_le_bytes());
    session_id[8..].copy_from_slice(&(n as u64).to_le_bytes());
    let cfg = SessionConfig::new(params.clone(), n, session_id);
    let run = |form: WeightForm| -> Result<SessionOutcome> {
        run_simulated_session(&cfg, spec, &partition, &table, &[0], form, seed ^ n as u64)
    };
    let plain = run(WeightForm::Plain)?;
    let cipher = run(WeightForm::Encrypted)?;

    let row = |phase: &str, secs: f64, bytes: u64| BenchRecord {
        phase: phase.into(),
        n,
        wall_time_sec: secs,
        bytes,
        preset: preset.into(),
    };
    Ok(vec![
        row(
            "keygen",
            phase_time(&plain.phase_seconds, "keygen"),
            phase_bytes(&plain.transcript, KEYGEN_PHASES),
        ),
        row(
            "concat",
            phase_time(&plain.phase_seconds, "concat"),
            phase_bytes(&plain.transcript, CONCAT_PHASES),
        ),
        row(
            "inferPlain",
            phase_time(&plain.phase_seconds, "evaluate"),
            phase_bytes(&plain.transcript, EVAL_PHASES),
        ),
        row(
            "inferCipher",
            phase_time(&cipher.phase_seconds, "evaluate"),
            phase_bytes(&cipher.transcript, EVAL_PHASES),
        ),
        row(
            "distDecrypt",
            phase_time(&plain.phase_seconds, "distDecrypt"),
            phase_bytes(&plain.transcript, DECRYPT_PHASES),
        ),
    ])
}

/// Sweeps the party count, one full session pair (plain- and
/// encrypted-weight) per point. Five rows per N: keygen, concat, inferPlain,
/// inferCipher, distDecrypt.
pub fn run_bench(
    preset: &str,
    spec: &ModelSpec,
    n_range: RangeInclusive<usize>,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    let params = CryptoParams::preset(preset)?;
    let mut out = Vec::new();
    for n in n_range {
        out.extend(one_sweep_point(preset, &params, spec, n, seed)?);
    }
    Ok(out)
}

pub fn to_csv<W: std::io::Write>(records: &[BenchRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|rec| Ok(rec?)).collect()
}

/// Per-phase second differences of bytes over consecutive N. All zero iff
/// bytes grow affinely in the party count.
pub fn affine_residuals(records: &[BenchRecord]) -> BTreeMap<String, Vec<i64>> {
    let mut by_phase: BTreeMap<String, Vec<(usize, u64)>> = BTreeMap::new();
    for r in records {
        by_phase.entry(r.phase.clone()).or_default().push((r.n, r.bytes));
    }
    by_phase
        .into_iter()
        .map(|(phase, mut points)| {
            points.sort_by_key(|&(n, _)| n);
            let diffs: Vec<i64> = points
                .windows(2)
                .map(|w| w[1].1 as i64 - w[0].1 as i64)
                .collect();
            let second: Vec<i64> = diffs.windows(2).map(|w| w[1] - w[0]).collect();
            (phase, second)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_emits_five_rows_per_party_count() {
        let records = run_bench("tiny256", &bench_model(), 2..=3, 7).unwrap();
        assert_eq!(records.len(), 10);
        for phase in ["keygen", "concat", "inferPlain", "inferCipher", "distDecrypt"] {
            assert_eq!(records.iter().filter(|r| r.phase == phase).count(), 2);
        }
        assert!(records.iter().all(|r| r.bytes > 0 && r.preset == "tiny256"));
    }

    #[test]
    fn csv_roundtrips_with_stable_header() {
        let records = run_bench("tiny256", &bench_model(), 2..=2, 3).unwrap();
        let mut buf = Vec::new();
        to_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("phase,n,wallTimeSec,bytes,preset\n"), "header: {text}");
        let back = from_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            assert_eq!((&a.phase, a.n, a.bytes), (&b.phase, b.n, b.bytes));
        }
    }

    #[test]
    fn byte_columns_are_reproducible() {
        let a = run_bench("tiny256", &bench_model(), 2..=4, 11).unwrap();
        let b = run_bench("tiny256", &bench_model(), 2..=4, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((&x.phase, x.n, x.bytes), (&y.phase, y.n, y.bytes));
        }
    }

    #[test]
    fn bytes_grow_affinely_with_party_count() {
        let records = run_bench("tiny256", &bench_model(), 2..=6, 19).unwrap();
        for (phase, second_diffs) in affine_residuals(&records) {
            assert!(
                second_diffs.iter().all(|&d| d == 0),
                "phase {phase} bytes are not affine in N: second differences {second_diffs:?}"
            );
        }
    }

    #[test]
    fn party_count_beyond_columns_is_rejected() {
        assert!(matches!(
            run_bench("tiny256", &bench_model(), 15..=15, 1),
            Err(Error::InvalidParams(_))
        ));
        assert!(even_partition(14, 0).is_err());
    }
}
