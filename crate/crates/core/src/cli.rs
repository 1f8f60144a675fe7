//! The `halo-gnn` command line.
//!
//! Every subcommand accepts `--config FILE`, a JSON object whose keys are the
//! subcommand's long flag names in snake case. Flags given on the command line
//! win over the file. `HALO_GNN_RANKS` (a count or comma-separated list)
//! overrides the rank flags of `partition`, `train`, `verify` and `bench`.
//!
//! Exit codes: 0 on success, 1 when a verification check fails or a run
//! errors out, 2 on usage errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::comm::ExchangeMode;
use crate::error::{Error, Result};
use crate::gnn::{write_loss_trace, GnnConfig, TrainConfig, Trainer};
use crate::graph::io::{write_graphs, GraphFormat};
use crate::graph::{build_distributed_graph, halo_stats, HaloStats};
use crate::harness::{self, ScalingOptions, VerifyRow};
use crate::meshgen::{build_box_mesh, partition_mesh, read_mesh_json, write_mesh_json, MeshConfig, PartitionStrategy};
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint};

pub const RANKS_ENV: &str = "HALO_GNN_RANKS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "halo-gnn", version, about = "Consistent distributed GNN on spectral-element meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a structured hexahedral mesh and write it as JSON.
    Mesh(MeshArgs),
    /// Partition a mesh and write one graph file per rank.
    Partition(PartitionArgs),
    /// Train the model on the Taylor-Green field.
    Train(TrainArgs),
    /// Check loss, output and gradient consistency against a single rank.
    Verify(VerifyArgs),
    /// Run the weak-scaling benchmark.
    Bench(BenchArgs),
    /// Render a CSV written by `verify` or `bench`.
    Report(ReportArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MeshArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Elements per axis.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    elements: Option<usize>,
    /// Polynomial order.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    order: Option<usize>,
    /// Store node positions in the dump.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    embed_positions: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PartitionArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Mesh JSON written by `mesh`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mesh: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ranks: Option<usize>,
    /// slab, block or block:AxBxC.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<String>,
    /// json, binary or auto (binary above 20k rows).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    format: Option<String>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    elements: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    order: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ranks: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<String>,
    /// small or large.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    /// none, a2a or na2a.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Replica audit interval in steps (0 disables).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    audit_interval: Option<usize>,
    /// Target CSV with columns gid,y0,y1,y2. Defaults to the input features.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    targets: Option<PathBuf>,
    /// Per-iteration loss trace CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_trace: Option<PathBuf>,
    /// Per-rank communication counters CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    comm_report: Option<PathBuf>,
    /// Write the trained parameters here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
    /// Start from these parameters instead of a fresh initialization.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct VerifyArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    elements: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    order: Option<usize>,
    /// Rank counts, e.g. 1,2,4,8.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    ranks: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Finite-difference samples for the gradient check.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    fd_samples: Option<usize>,
    /// Skip the gradient check.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    skip_gradients: bool,
    /// Also compare this many training iterations against R=1.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_iterations: Option<usize>,
    /// CSV of individual checks.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BenchArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Local nodes per rank.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    loading: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    ranks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<Vec<String>>,
    /// Polynomial order; picked from the loading when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    order: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    warmup: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    memory_budget_mib: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// CSV file to render.
    input: PathBuf,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_env(args, std::env::var(RANKS_ENV).ok())
}

/// [`run`] with an explicit value for `HALO_GNN_RANKS`.
pub fn run_with_env<I, T>(args: I, env_ranks: Option<String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let env_ranks = env_ranks.filter(|s| !s.trim().is_empty());
    let result = match cli.command {
        Command::Mesh(a) => cmd_mesh(a),
        Command::Partition(a) => cmd_partition(a, env_ranks.as_deref()),
        Command::Train(a) => cmd_train(a, env_ranks.as_deref()),
        Command::Verify(a) => cmd_verify(a, env_ranks.as_deref()),
        Command::Bench(a) => cmd_bench(a, env_ranks.as_deref()),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage_error(&e) {
                EXIT_USAGE
            } else {
                EXIT_FAILED
            }
        }
    }
}

fn is_usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::InvalidOrder(_)
            | Error::InvalidMesh(_)
            | Error::Partition(_)
            | Error::EmptyPartition(_)
            | Error::TooLarge(_)
    )
}

/// Overlays the explicitly given flags of `args` onto the JSON object in `config`.
fn resolve<T: Serialize + DeserializeOwned>(args: T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return Ok(args);
    };
    let base: Value = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let Value::Object(mut map) = base else {
        return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
    };
    if let Value::Object(flags) = serde_json::to_value(&args)? {
        map.extend(flags);
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_rank_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{RANKS_ENV}: `{t}` is not a rank count")))
        })
        .collect()
}

fn env_single_rank(env: Option<&str>) -> Result<Option<usize>> {
    match env {
        None => Ok(None),
        Some(s) => match parse_rank_list(s)?.as_slice() {
            [r] => Ok(Some(*r)),
            _ => Err(Error::Config(format!("{RANKS_ENV} must hold a single count for this command"))),
        },
    }
}

fn check_ranks(ranks: &[usize]) -> Result<()> {
    if ranks.is_empty() || ranks.contains(&0) {
        return Err(Error::Config("rank counts must be at least 1".into()));
    }
    Ok(())
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing required flag --{flag}")))
}

fn model_config(name: &str, mode: &str) -> Result<GnnConfig> {
    Ok(GnnConfig::preset(name)?.with_mode(mode.parse()?))
}

fn mesh_config(elements: usize, order: usize) -> Result<MeshConfig> {
    let cfg = MeshConfig::unit_cube(elements, order);
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn print_halo_table(stats: &HaloStats) {
    println!("{}", HaloStats::header());
    println!("{stats}");
}

fn cmd_mesh(args: MeshArgs) -> Result<i32> {
    let config = args.config.clone();
    let a = resolve(args, config.as_deref())?;
    let cfg = mesh_config(required(a.elements, "elements")?, required(a.order, "order")?)?;
    let out = required(a.out, "out")?;
    let mesh = build_box_mesh(cfg)?;
    write_mesh_json(&mesh, &out, a.embed_positions)?;
    println!(
        "mesh E={} p={}: {} elements, {} unique nodes -> {}",
        cfg.elements_per_axis,
        cfg.poly_order,
        cfg.num_elements(),
        cfg.num_unique_nodes(),
        out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_partition(args: PartitionArgs, env: Option<&str>) -> Result<i32> {
    let config = args.config.clone();
    let a = resolve(args, config.as_deref())?;
    let ranks = match env_single_rank(env)? {
        Some(r) => r,
        None => required(a.ranks, "ranks")?,
    };
    check_ranks(&[ranks])?;
    let strategy: PartitionStrategy = a.strategy.as_deref().unwrap_or("block").parse()?;
    let format = match a.format.as_deref().unwrap_or("auto") {
        "auto" => None,
        "json" => Some(GraphFormat::Json),
        "binary" => Some(GraphFormat::Binary),
        other => return Err(Error::Config(format!("unknown graph format `{other}` (json|binary|auto)"))),
    };
    let mesh_path = required(a.mesh, "mesh")?;
    let out = required(a.out, "out")?;

    let mesh = read_mesh_json(&mesh_path)?;
    let part = partition_mesh(&mesh, ranks, strategy)?;
    let graphs = build_distributed_graph(&mesh, &part)?;
    let paths = write_graphs(&out, &graphs, format)?;
    println!(
        "partition {} into R={} ({}) -> {} files in {}",
        mesh_path.display(),
        ranks,
        strategy.name(),
        paths.len(),
        out.display()
    );
    print_halo_table(&halo_stats(&graphs));
    Ok(EXIT_OK)
}

fn cmd_train(args: TrainArgs, env: Option<&str>) -> Result<i32> {
    let config = args.config.clone();
    let a = resolve(args, config.as_deref())?;
    let ranks = match env_single_rank(env)? {
        Some(r) => r,
        None => a.ranks.unwrap_or(1),
    };
    check_ranks(&[ranks])?;
    let mesh = mesh_config(a.elements.unwrap_or(4), a.order.unwrap_or(3))?;
    let strategy: PartitionStrategy = a.strategy.as_deref().unwrap_or("block").parse()?;
    let model = model_config(a.model.as_deref().unwrap_or("small"), a.mode.as_deref().unwrap_or("na2a"))?;
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        iterations: a.iterations.unwrap_or(defaults.iterations),
        lr: a.lr.unwrap_or(defaults.lr),
        seed: a.seed.unwrap_or(0),
        audit_interval: a.audit_interval.unwrap_or(defaults.audit_interval),
        ..defaults
    };
    train.validate()?;

    let problem = harness::build_problem(&mesh, ranks, strategy)?;
    let targets = match &a.targets {
        Some(p) => Some(harness::read_targets_csv(
            BufReader::new(File::open(p)?),
            &problem.ranks,
            model.out_dim,
        )?),
        None => None,
    };
    let mut params = model.init_params(train.seed)?;
    if let Some(p) = &a.resume {
        load_checkpoint(p, &mut params, Some(model.config_hash()))?;
    }
    println!(
        "train E={} p={} R={} strategy={} model={} mode={} params={} seed={} lr={} iterations={}",
        mesh.elements_per_axis,
        mesh.poly_order,
        ranks,
        strategy.name(),
        model.name(),
        model.exchange_mode,
        model.param_count(),
        train.seed,
        train.lr,
        train.iterations
    );
    let mut trainer = Trainer::with_params(model, train, problem.ranks, targets, params)?;
    let every = (train.iterations / 10).max(1);
    let mut records = Vec::with_capacity(train.iterations);
    for _ in 0..train.iterations {
        let rec = trainer.step()?;
        if rec.iteration == 1 || rec.iteration % every == 0 {
            println!(
                "  iter {:>5}  loss {:.10e}  sim {:>8.2} ms  halo {:>10} B",
                rec.iteration, rec.loss, rec.wall_ms, rec.bytes_halo
            );
        }
        records.push(rec);
    }
    if let Some(p) = &a.loss_trace {
        write_loss_trace(&records, create(p)?)?;
    }
    if let Some(p) = &a.comm_report {
        let mut w = create(p)?;
        trainer.runtime().comm_report().write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(p) = &a.checkpoint {
        save_checkpoint(p, trainer.params(), model.config_hash())?;
        println!("checkpoint -> {}", p.display());
    }
    Ok(EXIT_OK)
}

fn cmd_verify(args: VerifyArgs, env: Option<&str>) -> Result<i32> {
    let config = args.config.clone();
    let a = resolve(args, config.as_deref())?;
    let ranks = match env {
        Some(s) => parse_rank_list(s)?,
        None => a.ranks.clone().unwrap_or_else(|| vec![1, 2, 4, 8]),
    };
    check_ranks(&ranks)?;
    let mesh = mesh_config(a.elements.unwrap_or(4), a.order.unwrap_or(3))?;
    let strategy: PartitionStrategy = a.strategy.as_deref().unwrap_or("block").parse()?;
    let model = model_config(a.model.as_deref().unwrap_or("small"), a.mode.as_deref().unwrap_or("na2a"))?;
    let seed = a.seed.unwrap_or(0);
    let max_r = *ranks.iter().max().expect("non-empty");

    let report = harness::verify_consistency(&mesh, &ranks, &model, seed, strategy)?;
    print!("{report}");
    let mut rows: Vec<VerifyRow> = report.checks();

    if !a.skip_gradients {
        let g = harness::verify_gradients(&mesh, max_r, &model, seed, strategy, a.fd_samples.unwrap_or(10))?;
        print!("{g}");
        rows.extend(g.checks());
    }
    if let Some(iters) = a.train_iterations.filter(|&n| n > 0) {
        let train = TrainConfig {
            iterations: iters,
            seed,
            ..TrainConfig::default()
        };
        let cmp = harness::compare_training(&mesh, max_r, &model, &train, strategy)?;
        let dev = cmp.max_rel_dev();
        println!(
            "training: {iters} iterations at R={max_r}, max loss rel dev {dev:.3e}, none departs at {:?}",
            cmp.inconsistent_departure(harness::TRACE_TOLERANCE)
        );
        rows.push(VerifyRow {
            check: "trace_rel_dev".into(),
            seed,
            ranks: max_r,
            mode: cmp.mode,
            value: dev,
            tolerance: Some(harness::TRACE_TOLERANCE),
            passed: dev <= harness::TRACE_TOLERANCE,
        });
    }

    if let Some(p) = &a.out {
        harness::write_verify_csv(&rows, create(p)?)?;
    }
    let failed: Vec<&VerifyRow> = rows.iter().filter(|r| !r.passed).collect();
    for r in &failed {
        println!("FAIL {} R={} mode={} value={:e} tol={:?}", r.check, r.ranks, r.mode, r.value, r.tolerance);
    }
    println!("{} checks, {} failed (seed {seed})", rows.len(), failed.len());
    Ok(if failed.is_empty() { EXIT_OK } else { EXIT_FAILED })
}

fn cmd_bench(args: BenchArgs, env: Option<&str>) -> Result<i32> {
    let config = args.config.clone();
    let a = resolve(args, config.as_deref())?;
    let defaults = ScalingOptions::default();
    let ranks = match env {
        Some(s) => parse_rank_list(s)?,
        None => a.ranks.clone().unwrap_or(defaults.ranks),
    };
    check_ranks(&ranks)?;
    let models = match &a.model {
        Some(names) => names.iter().map(|n| GnnConfig::preset(n)).collect::<Result<Vec<_>>>()?,
        None => defaults.models,
    };
    let modes = match &a.mode {
        Some(names) => names.iter().map(|n| n.parse()).collect::<Result<Vec<ExchangeMode>>>()?,
        None => defaults.modes,
    };
    let opts = ScalingOptions {
        loading: a.loading.unwrap_or(defaults.loading),
        ranks,
        models,
        modes,
        order: a.order.or(defaults.order),
        warmup: a.warmup.unwrap_or(defaults.warmup),
        iterations: a.iterations.unwrap_or(defaults.iterations),
        seed: a.seed.unwrap_or(defaults.seed),
        memory_budget: a.memory_budget_mib.map_or(defaults.memory_budget, |m| m << 20),
    };
    println!(
        "bench loading={} ranks={:?} seed={} (times are simulated)",
        opts.loading, opts.ranks, opts.seed
    );
    let report = harness::weak_scaling(&opts)?;
    print!("{}", report.summary());
    if let Some(p) = &a.out {
        report.write_csv(create(p)?)?;
    }
    if report.bytes_ordering_holds() {
        Ok(EXIT_OK)
    } else {
        println!("FAIL neighbor all-to-all moved more bytes than all-to-all");
        Ok(EXIT_FAILED)
    }
}

fn cmd_report(a: ReportArgs) -> Result<i32> {
    let mut rdr = csv::Reader::from_path(&a.input)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let rows: Vec<Vec<String>> = rdr
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    print!("{}", render_table(&headers, &rows));

    let Some(col) = headers.iter().position(|h| h == "passed") else {
        println!("{} rows", rows.len());
        return Ok(EXIT_OK);
    };
    let failed = rows.iter().filter(|r| r.get(col).map(String::as_str) != Some("true")).count();
    println!("{} rows, {} failed", rows.len(), failed);
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILED })
}

/// Right-aligns every column to its widest cell.
pub fn render_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut s = line(headers);
    for r in rows {
        s.push_str(&line(r));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run_with_env(["halo-gnn", "mesh", "--bogus"], None), EXIT_USAGE);
        assert_eq!(run_with_env(["halo-gnn"], None), EXIT_USAGE);
        assert_eq!(run_with_env(["halo-gnn", "--help"], None), EXIT_OK);
    }

    #[test]
    fn zero_elements_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("m.json");
        let code = run_with_env(
            ["halo-gnn", "mesh", "--elements", "0", "--order", "2", "--out", out.to_str().unwrap()],
            None,
        );
        assert_eq!(code, EXIT_USAGE);
        assert!(!out.exists());
    }

    #[test]
    fn flags_win_over_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"elements": 3, "order": 2, "embed_positions": true}"#).unwrap();
        let a = MeshArgs {
            order: Some(4),
            ..MeshArgs::default()
        };
        let r = resolve(a, Some(&cfg)).unwrap();
        assert_eq!((r.elements, r.order, r.embed_positions), (Some(3), Some(4), true));
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"elemnts": 3}"#).unwrap();
        assert!(matches!(resolve(MeshArgs::default(), Some(&cfg)), Err(Error::Config(_))));
    }

    #[test]
    fn env_rank_lists() {
        assert_eq!(parse_rank_list("1, 2,8").unwrap(), vec![1, 2, 8]);
        assert!(parse_rank_list("2,x").is_err());
        assert_eq!(env_single_rank(Some("4")).unwrap(), Some(4));
        assert!(env_single_rank(Some("2,4")).is_err());
    }

    #[test]
    fn table_alignment() {
        let t = render_table(
            &["a".into(), "value".into()],
            &[vec!["10".into(), "1".into()], vec!["2".into(), "300".into()]],
        );
        assert_eq!(t, " a  value\n10      1\n 2    300\n");
    }
}
