//! Operator entry points: split a dataset column-wise, run the key ceremony,
//! run a session role (or the whole session in one process), and produce
//! measurement CSVs.

mod config;
mod data;

use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use vertinfer_core::bench;
use vertinfer_core::einfer::{
    fixtures, InputShape, LayerSpec, ModelSpec, ModelStructure, Normalization,
};
use vertinfer_core::protocol::session::{
    run_client, run_coordinator, run_simulated_session, serve_tcp, ClientInput,
};
use vertinfer_core::protocol::{TcpTransport, Transcript};
use vertinfer_core::ring::{Context, CryptoParams};
use vertinfer_core::vpack::ColumnPartition;

use config::{ClientConfig, CoordinatorConfig, ServerConfig, SimulateConfig};

#[derive(Parser)]
#[command(name = "vertinfer", version, about = "Joint inference over column-split data")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Role {
    Client,
    Server,
    Coordinator,
    /// All parties in one process over in-process links.
    Simulate,
}

#[derive(Subcommand)]
enum Cmd {
    /// Split a full record table into per-party files by feature column.
    Split {
        /// Full table (recordId,f0,f1,...).
        #[arg(long)]
        input: PathBuf,
        /// Column partition JSON ({"width": W, "cuts": [0, ...]}).
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Rejoin per-party files into a full table (inverse of split).
    Join {
        /// Per-party CSVs, any order.
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the collective key ceremony and stop (no queries).
    KeygenCeremony {
        #[arg(long)]
        role: Role,
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one session role to completion.
    Run {
        #[arg(long)]
        role: Role,
        #[arg(long)]
        config: PathBuf,
    },
    /// Sweep the party count and write per-phase time/byte measurements.
    Bench {
        #[arg(long, default_value = "tiny256")]
        preset: String,
        /// mlp: built-in 28-feature dense model; cnn: the 1198-parameter
        /// convolutional fixture (needs the paper8192 preset's slot count).
        #[arg(long, default_value = "mlp")]
        model: String,
        #[arg(long, default_value_t = 2)]
        n_lo: usize,
        #[arg(long, default_value_t = 14)]
        n_hi: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a ready-to-run demo directory: model, structure, partition,
    /// data (full + split), and one config per role.
    GenFixtures {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "tiny256")]
        preset: String,
        #[arg(long, default_value_t = 3)]
        parties: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "127.0.0.1:7801")]
        server_addr: String,
        /// Number of synthetic records.
        #[arg(long, default_value_t = 6)]
        records: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Split { input, partition, out_dir } => cmd_split(&input, &partition, &out_dir),
        Cmd::Join { inputs, out } => cmd_join(&inputs, &out),
        Cmd::KeygenCeremony { role, config } => cmd_run(role, &config, true),
        Cmd::Run { role, config } => cmd_run(role, &config, false),
        Cmd::Bench { preset, model, n_lo, n_hi, seed, out } => {
            cmd_bench(&preset, &model, n_lo, n_hi, seed, &out)
        }
        Cmd::GenFixtures { out_dir, preset, parties, seed, server_addr, records } => {
            cmd_gen_fixtures(&out_dir, &preset, parties, seed, &server_addr, records)
        }
    };
    if let Err(e) = result {
        eprintln!("vertinfer: {e:#}");
        std::process::exit(1);
    }
}

fn debug_log(msg: &str) {
    if std::env::var("VERTINFER_LOG").is_ok_and(|v| v.eq_ignore_ascii_case("debug")) {
        eprintln!("vertinfer[debug]: {msg}");
    }
}

fn cmd_split(input: &Path, partition_path: &Path, out_dir: &Path) -> Result<()> {
    let table = data::read_table(input)?;
    let partition: ColumnPartition = config::load(partition_path)?;
    let parts = data::split_table(&table, &partition)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    for (i, part) in parts.iter().enumerate() {
        let path = out_dir.join(format!("client{i}.csv"));
        data::write_table(&path, part)?;
        println!(
            "wrote {} ({} records x {} features)",
            path.display(),
            part.record_ids.len(),
            part.feature_indices.len()
        );
    }
    Ok(())
}

fn cmd_join(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let parts = inputs.iter().map(|p| data::read_table(p)).collect::<Result<Vec<_>>>()?;
    let joined = data::join_tables(&parts)?;
    data::write_table(out, &joined)?;
    println!(
        "joined {} parts -> {} ({} records x {} features)",
        parts.len(),
        out.display(),
        joined.record_ids.len(),
        joined.feature_indices.len()
    );
    Ok(())
}

fn write_transcript(path: Option<&PathBuf>, transcript: &Transcript) -> Result<()> {
    if let Some(path) = path {
        std::fs::write(path, transcript.to_jsonl() + "\n")
            .with_context(|| format!("writing transcript {}", path.display()))?;
        println!("transcript: {} frames -> {}", transcript.len(), path.display());
    }
    Ok(())
}

fn print_scores(records: &[u64], scores: &[Vec<f64>]) {
    for (record, y) in records.iter().zip(scores) {
        let argmax = y
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let formatted: Vec<String> = y.iter().map(|v| format!("{v:.6}")).collect();
        println!("record {record}: y = [{}], argmax = {argmax}", formatted.join(", "));
    }
}

fn cmd_run(role: Role, config_path: &Path, setup_only: bool) -> Result<()> {
    match role {
        Role::Server => {
            let c: ServerConfig = config::load(config_path)?;
            let (ctx, session) = c.session.resolve()?;
            let spec = ModelSpec::load(&c.model, Some(ctx.max_level()))?;
            let listener = TcpListener::bind(&c.session.server_addr)
                .with_context(|| format!("binding {}", c.session.server_addr))?;
            eprintln!("server: listening on {}", listener.local_addr()?);
            let report = serve_tcp(
                &listener,
                &session,
                &spec,
                c.weight_form.into(),
                &mut StdRng::from_os_rng(),
            )?;
            for (phase, secs) in &report.phase_seconds {
                debug_log(&format!("phase {phase}: {secs:.3}s"));
            }
            write_transcript(c.transcript_out.as_ref(), &report.transcript)?;
            println!("server: session complete ({} frames)", report.transcript.len());
        }
        Role::Client => {
            let c: ClientConfig = config::load(config_path)?;
            let (_ctx, session) = c.session.resolve()?;
            let structure: ModelStructure = config::load(&c.structure)?;
            let partition: ColumnPartition = config::load(&c.partition)?;
            let table = data::read_table(&c.data)?;
            check_client_columns(&table, &structure, &partition, c.party_id)?;
            let values = table.parse_values()?;
            debug_log(&format!(
                "client {}: {} records, {} own values each",
                c.party_id,
                values.len(),
                table.feature_indices.len()
            ));
            let transport = TcpTransport::connect(&c.session.server_addr)?;
            let input = ClientInput {
                structure: &structure,
                partition: &partition,
                table: &values,
            };
            run_client(&session, c.party_id, input, transport, &mut StdRng::from_os_rng())?;
            println!("client {}: session complete", c.party_id);
        }
        Role::Coordinator => {
            let c: CoordinatorConfig = config::load(config_path)?;
            let (_ctx, session) = c.session.resolve()?;
            let structure: ModelStructure = config::load(&c.structure)?;
            let records = if setup_only { Vec::new() } else { c.records.clone() };
            let transport = TcpTransport::connect(&c.session.server_addr)?;
            let scores = run_coordinator(
                &session,
                structure.output_len()?,
                &records,
                transport,
                &mut StdRng::from_os_rng(),
            )?;
            print_scores(&records, &scores);
            println!("coordinator: session complete ({} records)", records.len());
        }
        Role::Simulate => {
            let c: SimulateConfig = config::load(config_path)?;
            let (ctx, session) = c.session.resolve()?;
            let spec = ModelSpec::load(&c.model, Some(ctx.max_level()))?;
            let partition: ColumnPartition = config::load(&c.partition)?;
            let table = data::read_table(&c.data)?.parse_values()?;
            let records = if setup_only { Vec::new() } else { c.records.clone() };
            let out = run_simulated_session(
                &session,
                &spec,
                &partition,
                &table,
                &records,
                c.weight_form.into(),
                c.seed,
            )?;
            print_scores(&records, &out.scores);
            write_transcript(c.transcript_out.as_ref(), &out.transcript)?;
            println!("simulate: session complete ({} records)", records.len());
        }
    }
    Ok(())
}

/// A client file must carry exactly the flat positions its column range
/// implies; anything else means the split and the partition disagree.
fn check_client_columns(
    table: &data::Table,
    structure: &ModelStructure,
    partition: &ColumnPartition,
    party_id: u16,
) -> Result<()> {
    let (rows, cols) = (structure.input_shape.rows, structure.input_shape.cols);
    if partition.width != cols {
        bail!("partition width {} != model columns {cols}", partition.width);
    }
    let range = partition.range(party_id as usize)?;
    let mut expected = Vec::with_capacity(rows * range.len());
    for r in 0..rows {
        expected.extend(range.clone().map(|c| r * cols + c));
    }
    if table.feature_indices != expected {
        bail!(
            "data file columns {:?} do not match party {party_id}'s range (expected {:?})",
            table.feature_indices,
            expected
        );
    }
    Ok(())
}

fn cmd_bench(
    preset: &str,
    model: &str,
    n_lo: usize,
    n_hi: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    if n_lo < 2 || n_hi < n_lo {
        bail!("party range must satisfy 2 <= n_lo <= n_hi");
    }
    let spec = match model {
        "mlp" => bench::bench_model(),
        "cnn" => fixtures::digit_cnn(seed),
        other => bail!("unknown bench model {other:?} (use mlp or cnn)"),
    };
    let records = bench::run_bench(preset, &spec, n_lo..=n_hi, seed)?;
    let file = std::fs::File::create(out)
        .with_context(|| format!("creating {}", out.display()))?;
    bench::to_csv(&records, file)?;
    println!("phase        N={n_hi:2}   wall s      bytes");
    for r in records.iter().filter(|r| r.n == n_hi) {
        println!("{:12} {:4} {:9.3} {:10}", r.phase, r.n, r.wall_time_sec, r.bytes);
    }
    println!("wrote {} rows to {}", records.len(), out.display());
    Ok(())
}

/// Demo model: a 2x5 feature matrix (5 columns to split), dense 10->6,
/// square, dense 6->3, with per-feature normalization. Depth 3.
fn demo_model(seed: u64) -> ModelSpec {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut dense = |rows: usize, cols: usize| -> LayerSpec {
        let weights = (0..rows * cols).map(|_| rng.random_range(-0.5..0.5)).collect();
        let bias = (0..rows).map(|_| rng.random_range(-0.25..0.25)).collect();
        LayerSpec::Dense { rows, cols, weights, bias }
    };
    let l1 = dense(6, 10);
    let l2 = dense(3, 6);
    ModelSpec {
        input_shape: InputShape { rows: 2, cols: 5 },
        normalization: Some(Normalization {
            scale: vec![0.1; 10],
            shift: (0..10).map(|i| -(i as f64)).collect(),
        }),
        layers: vec![l1, LayerSpec::Activation { coeffs: vec![0.0, 0.0, 1.0] }, l2],
    }
}

fn cmd_gen_fixtures(
    out_dir: &Path,
    preset: &str,
    parties: usize,
    seed: u64,
    server_addr: &str,
    records: usize,
) -> Result<()> {
    if records == 0 {
        bail!("need at least one record");
    }
    let params = CryptoParams::preset(preset)?;
    let ctx = Context::new(params)?;
    let spec = demo_model(seed);
    let structure = spec.structure();
    let cols = structure.input_shape.cols;
    let partition = bench::even_partition(cols, parties)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    spec.save(&out_dir.join("model.json"))?;
    config::save(&out_dir.join("structure.json"), &structure)?;
    config::save(&out_dir.join("partition.json"), &partition)?;

    let mut rng = StdRng::seed_from_u64(seed ^ 0xDA7A);
    let feature_count = structure.input_shape.rows * cols;
    let table = data::Table {
        feature_indices: (0..feature_count).collect(),
        record_ids: (0..records).map(|r| format!("r{r:04}")).collect(),
        cells: (0..records)
            .map(|_| {
                (0..feature_count)
                    // Raw features on the scale normalization expects.
                    .map(|_| format!("{}", rng.random_range(0.0..20.0_f64)))
                    .collect()
            })
            .collect(),
    };
    data::write_table(&out_dir.join("full.csv"), &table)?;
    for (i, part) in data::split_table(&table, &partition)?.iter().enumerate() {
        data::write_table(&out_dir.join(format!("client{i}.csv")), part)?;
    }

    let mut session_id = [0u8; 16];
    rng.fill(&mut session_id);
    let session = config::SessionBlock {
        preset: preset.into(),
        params_hash: hex::encode(ctx.params_hash()),
        session_id: hex::encode(session_id),
        parties,
        server_addr: server_addr.into(),
        timeout_secs: 30,
    };
    let all_records: Vec<u64> = (0..records as u64).collect();
    config::save(
        &out_dir.join("server.json"),
        &ServerConfig {
            session: session.clone(),
            model: out_dir.join("model.json"),
            weight_form: config::WeightFormName::Plain,
            transcript_out: Some(out_dir.join("transcript.jsonl")),
        },
    )?;
    config::save(
        &out_dir.join("coordinator.json"),
        &CoordinatorConfig {
            session: session.clone(),
            structure: out_dir.join("structure.json"),
            records: all_records.clone(),
        },
    )?;
    for i in 0..parties {
        config::save(
            &out_dir.join(format!("client{i}.json")),
            &ClientConfig {
                session: session.clone(),
                party_id: i as u16,
                structure: out_dir.join("structure.json"),
                partition: out_dir.join("partition.json"),
                data: out_dir.join(format!("client{i}.csv")),
            },
        )?;
    }
    config::save(
        &out_dir.join("simulate.json"),
        &SimulateConfig {
            session,
            model: out_dir.join("model.json"),
            partition: out_dir.join("partition.json"),
            data: out_dir.join("full.csv"),
            records: all_records,
            weight_form: config::WeightFormName::Plain,
            transcript_out: None,
            seed,
        },
    )?;
    println!(
        "fixtures for {parties} parties in {}: model/structure/partition, {records} records (full + per-client), configs for every role",
        out_dir.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use vertinfer_core::einfer::infer_clear;

    #[test]
    fn demo_model_validates_and_has_depth_three() {
        let spec = demo_model(42);
        spec.validate().unwrap();
        assert_eq!(spec.structure().depth(), 3);
        assert_eq!(demo_model(42), demo_model(42));
    }

    #[test]
    fn demo_model_normalization_keeps_features_small() {
        let spec = demo_model(1);
        let raw: Vec<f64> = (0..10).map(|i| 2.0 * i as f64).collect();
        let normalized = spec.normalize(&raw).unwrap();
        assert!(normalized.iter().all(|v| v.abs() <= 2.0));
        infer_clear(&spec, &normalized).unwrap();
    }
}
