use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use tanszoo::bench::{self, BenchConfig};
use tanszoo::config::{from_layers, kv_from_pairs, read_kv, KvMap};
use tanszoo::contrastive::{meta_train, TrainConfig};
use tanszoo::retrieval::{
    build_index, constraint_cases, evaluate_constrained, evaluate_retrieval, load_index,
    save_index, RERANK_K,
};
use tanszoo::seed::sha256_hex;
use tanszoo::synth::{build_full_zoo, SynthConfig};
use tanszoo::zoo::{load_zoo, save_zoo, Constraints};
use tanszoo::zoo_builder::{construct_zoo, BuilderConfig, Strategy};
use tanszoo::{Error, ErrorKind};

const SEED_ENV: &str = "TANSZOO_SEED";

#[derive(Parser)]
#[command(
    name = "tanszoo",
    version,
    about = "Retrieve pretrained networks for new datasets"
)]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Where to write the run manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat `key = value` file, or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic universe zoo.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Meta-train the encoders and surrogate, write the index.
    Train {
        #[arg(long)]
        zoo: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV; defaults to `<out>.loss.csv`.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Re-embed a zoo with the encoders stored in an existing index.
    Index {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        zoo: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank networks for a probe set.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        /// JSON lines, one feature vector per line.
        #[arg(long, required_unless_present = "dataset")]
        probe: Option<PathBuf>,
        /// Use a zoo dataset's probe set instead of `--probe`.
        #[arg(long, requires = "zoo")]
        dataset: Option<String>,
        #[arg(long)]
        zoo: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        max_params: Option<u64>,
        #[arg(long)]
        max_flops: Option<u64>,
        #[arg(long)]
        max_latency: Option<f64>,
        #[arg(long)]
        rerank: bool,
    },
    /// Predicted accuracy of one network on one dataset.
    Predict {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        zoo: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        model: String,
    },
    /// Retrieval metrics of an index against a zoo.
    Eval {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        zoo: PathBuf,
        /// Constrained-retrieval cases to add; 0 skips them.
        #[arg(long, default_value_t = 0)]
        constraint_cases: usize,
        #[arg(long)]
        json: bool,
    },
    /// Select a budgeted subset of a universe zoo.
    ConstructZoo {
        #[arg(long)]
        universe: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, value_parser = ["greedy", "random", "largest-param"])]
        strategy: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Full reproduction run: report and CSVs.
    Bench {
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    wall_time_s: f64,
    artifact_sha256: BTreeMap<String, String>,
}

fn cli_err(e: Error) -> (ErrorKind, String) {
    (e.kind(), e.to_string())
}

type CmdResult<T> = std::result::Result<T, (ErrorKind, String)>;

fn io_err(path: &Path, e: std::io::Error) -> (ErrorKind, String) {
    (
        ErrorKind::Io,
        format!("I/O error on {}: {e}", path.display()),
    )
}

/// Layers: defaults < `TANSZOO_SEED` < config file < `--set` < `--seed`.
fn layered<T: serde::de::DeserializeOwned>(args: &ConfigArgs, seed_key: &str) -> CmdResult<T> {
    let mut env = KvMap::new();
    if let Ok(s) = std::env::var(SEED_ENV) {
        let s = s.trim().to_string();
        if s.parse::<u64>().is_err() {
            return Err((
                ErrorKind::Validation,
                format!("{SEED_ENV} must be an integer, got `{s}`"),
            ));
        }
        env.insert(seed_key.to_string(), s);
    }
    let file = match &args.config {
        Some(p) => config_file(p)?,
        None => KvMap::new(),
    };
    let set = kv_from_pairs(&args.set).map_err(cli_err)?;
    let mut flag = KvMap::new();
    if let Some(s) = args.seed {
        flag.insert(seed_key.to_string(), s.to_string());
    }
    from_layers(&[&env, &file, &set, &flag]).map_err(cli_err)
}

/// A `key = value` file, or the `config` object of a manifest.
fn config_file(path: &Path) -> CmdResult<KvMap> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| (ErrorKind::Validation, format!("{}: {e}", path.display())))?;
        let Some(Value::Object(cfg)) = v.get("config") else {
            return Err((
                ErrorKind::Validation,
                format!("{} has no config object", path.display()),
            ));
        };
        return Ok(cfg
            .iter()
            .map(|(k, v)| {
                let s = match v {
                    Value::Null => String::new(),
                    Value::String(s) => s.clone(),
                    o => o.to_string(),
                };
                (k.clone(), s)
            })
            .collect());
    }
    read_kv(path).map_err(cli_err)
}

fn hash_file(path: &Path) -> CmdResult<String> {
    fs::read(path)
        .map(|b| sha256_hex(&b))
        .map_err(|e| io_err(path, e))
}

fn read_probe(path: &Path) -> CmdResult<Vec<Vec<f64>>> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = serde_json::from_str(&line).map_err(|e| {
            (
                ErrorKind::Validation,
                format!("parse error at {}:{}: {e}", path.display(), n + 1),
            )
        })?;
        out.push(row);
    }
    Ok(out)
}

/// Write to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = writeln!(out, "{text}").and_then(|()| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: writing output: {e}");
        }
    }
}

fn print_json(v: &impl Serialize) {
    emit(&serde_json::to_string_pretty(v).expect("results serialize"));
}

struct Outcome {
    config: Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Outcome {
    fn new(config: impl Serialize, inputs: &[&Path], outputs: &[&Path]) -> Self {
        Self {
            config: serde_json::to_value(config).expect("config serializes"),
            seeds: BTreeMap::new(),
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            outputs: outputs.iter().map(|p| p.to_path_buf()).collect(),
        }
    }

    fn seed(mut self, name: &str, v: u64) -> Self {
        self.seeds.insert(name.to_string(), v);
        self
    }
}

fn run(command: &Command) -> CmdResult<Outcome> {
    match command {
        Command::Gen { out, cfg } => {
            let c: SynthConfig = layered(cfg, "rng_seed")?;
            let zoo = build_full_zoo(&c).map_err(cli_err)?;
            save_zoo(&zoo, out).map_err(cli_err)?;
            info!("wrote {} entries to {}", zoo.len(), out.display());
            let side = tanszoo::zoo::sidecar_path(out);
            Ok(Outcome::new(&c, &[], &[out, &side]).seed("rng_seed", c.rng_seed))
        }
        Command::Train {
            zoo,
            out,
            trace,
            cfg,
        } => {
            let c: TrainConfig = layered(cfg, "rng_seed")?;
            let z = load_zoo(zoo).map_err(cli_err)?;
            let trained = meta_train(&z, &c).map_err(cli_err)?;
            let index = build_index(&z, &trained.model).map_err(cli_err)?;
            save_index(&index, out).map_err(cli_err)?;
            let trace_path = trace.clone().unwrap_or_else(|| suffixed(out, "loss.csv"));
            let mut csv = String::from("epoch,l_m,l_q,l_s,total\n");
            for e in &trained.trace {
                let p = e.parts;
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    e.epoch, p.l_m, p.l_q, p.l_s, p.total
                ));
            }
            fs::write(&trace_path, csv).map_err(|e| io_err(&trace_path, e))?;
            Ok(Outcome::new(&c, &[zoo], &[out, &trace_path])
                .seed("rng_seed", c.rng_seed)
                .seed("noise_seed", c.noise_seed))
        }
        Command::Index { index, zoo, out } => {
            let old = load_index(index).map_err(cli_err)?;
            let z = load_zoo(zoo).map_err(cli_err)?;
            let fresh = build_index(&z, &old.model).map_err(cli_err)?;
            save_index(&fresh, out).map_err(cli_err)?;
            let c = old.model.config.clone();
            Ok(Outcome::new(&c, &[index, zoo], &[out]).seed("rng_seed", c.rng_seed))
        }
        Command::Retrieve {
            index,
            probe,
            dataset,
            zoo,
            k,
            max_params,
            max_flops,
            max_latency,
            rerank,
        } => {
            let idx = load_index(index).map_err(cli_err)?;
            let mut inputs: Vec<&Path> = vec![index];
            let probe_set = match (probe, dataset, zoo) {
                (Some(p), _, _) => {
                    inputs.push(p);
                    read_probe(p)?
                }
                (None, Some(d), Some(z)) => {
                    inputs.push(z);
                    load_zoo(z)
                        .map_err(cli_err)?
                        .dataset(d)
                        .map_err(cli_err)?
                        .probe_set()
                }
                _ => return Err((ErrorKind::Validation, "a probe set is required".into())),
            };
            let cons = Constraints {
                max_params: *max_params,
                max_flops: *max_flops,
                max_latency: *max_latency,
            };
            let r = idx
                .retrieve(&probe_set, *k, &cons, *rerank)
                .map_err(cli_err)?;
            print_json(&r);
            let cfg = json!({ "k": k, "constraints": cons, "rerank": rerank, "dataset": dataset });
            Ok(Outcome::new(cfg, &inputs, &[]))
        }
        Command::Predict {
            index,
            zoo,
            dataset,
            model,
        } => {
            let idx = load_index(index).map_err(cli_err)?;
            let z = load_zoo(zoo).map_err(cli_err)?;
            let probe = z.dataset(dataset).map_err(cli_err)?.probe_set();
            let p = idx.predict(&probe, model).map_err(cli_err)?;
            print_json(
                &json!({ "dataset_id": dataset, "model_id": model, "predicted_accuracy": p }),
            );
            Ok(Outcome::new(
                json!({ "dataset": dataset, "model": model }),
                &[index, zoo],
                &[],
            ))
        }
        Command::Eval {
            index,
            zoo,
            constraint_cases: n,
            json,
        } => {
            let idx = load_index(index).map_err(cli_err)?;
            let z = load_zoo(zoo).map_err(cli_err)?;
            let m = evaluate_retrieval(&idx, &z).map_err(cli_err)?;
            let constrained = if *n > 0 {
                let cases = constraint_cases(&z, *n, idx.model.config.rng_seed).map_err(cli_err)?;
                Some(evaluate_constrained(&idx, &z, &cases, RERANK_K, true).map_err(cli_err)?)
            } else {
                None
            };
            if *json {
                print_json(&json!({ "retrieval": m, "constrained": constrained }));
            } else {
                let mut table = format!(
                    "| metric | value |\n|---|---|\n| R@1 | {:.3} |\n| R@5 | {:.3} |\n| R@10 | {:.3} |\n| mean rank | {:.2} |\n| median rank | {:.1} |",
                    m.r_at_1, m.r_at_5, m.r_at_10, m.mean_rank, m.median_rank
                );
                if let Some(c) = &constrained {
                    table.push_str(&format!(
                        "\n| bounds satisfied | {:.3} |\n| top-1 matches best feasible | {:.3} |",
                        c.satisfaction_rate, c.hit_rate
                    ));
                }
                emit(&table);
            }
            Ok(Outcome::new(
                json!({ "constraint_cases": n }),
                &[index, zoo],
                &[],
            ))
        }
        Command::ConstructZoo {
            universe,
            budget,
            out,
            trace,
            strategy,
            cfg,
        } => {
            let mut args = cfg.clone();
            if let Some(b) = budget {
                args.set.push(format!("budget={b}"));
            }
            if let Some(s) = strategy {
                args.set.push(format!("strategy={s}"));
            }
            let c: BuilderConfig = layered(&args, "rng_seed")?;
            let u = load_zoo(universe).map_err(cli_err)?;
            let built = construct_zoo(&u, &c).map_err(cli_err)?;
            save_zoo(&built.zoo, out).map_err(cli_err)?;
            let trace_path = trace.clone().unwrap_or_else(|| suffixed(out, "trace.csv"));
            let mut csv = String::from("iteration,pair_id,total_hypervolume\n");
            for t in &built.trace {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    t.iteration, t.pair_id, t.total_hypervolume
                ));
            }
            fs::write(&trace_path, csv).map_err(|e| io_err(&trace_path, e))?;
            if c.strategy != Strategy::Greedy {
                info!("strategy {:?}", c.strategy);
            }
            let side = tanszoo::zoo::sidecar_path(out);
            Ok(Outcome::new(&c, &[universe], &[out, &side, &trace_path])
                .seed("rng_seed", c.rng_seed))
        }
        Command::Bench { out, cfg } => {
            let c: BenchConfig = layered(cfg, "seed")?;
            let report = bench::run(&c).map_err(cli_err)?;
            report.write(out).map_err(cli_err)?;
            emit(&report.hash);
            let files: Vec<PathBuf> = report
                .files
                .keys()
                .map(|n| out.join(n))
                .chain([out.join("report.sha256")])
                .collect();
            let refs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
            Ok(Outcome::new(&c, &[], &refs).seed("seed", c.seed))
        }
    }
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Gen { .. } => "gen",
        Command::Train { .. } => "train",
        Command::Index { .. } => "index",
        Command::Retrieve { .. } => "retrieve",
        Command::Predict { .. } => "predict",
        Command::Eval { .. } => "eval",
        Command::ConstructZoo { .. } => "construct-zoo",
        Command::Bench { .. } => "bench",
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Io => 2,
        ErrorKind::Validation => 3,
        ErrorKind::Numerical => 4,
    }
}

fn write_manifest(cli: &Cli, o: &Outcome, wall: f64) -> CmdResult<()> {
    let mut hashes = BTreeMap::new();
    for p in o.inputs.iter().chain(&o.outputs) {
        hashes.insert(p.display().to_string(), hash_file(p)?);
    }
    let m = RunManifest {
        command: command_name(&cli.command).to_string(),
        config: o.config.clone(),
        seeds: o.seeds.clone(),
        inputs: o.inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: o.outputs.iter().map(|p| p.display().to_string()).collect(),
        wall_time_s: wall,
        artifact_sha256: hashes,
    };
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    let target = cli.manifest.clone().or_else(|| {
        o.outputs.first().map(|p| {
            if p.is_dir() {
                p.join("manifest.json")
            } else {
                suffixed(p, "manifest.json")
            }
        })
    });
    match target {
        Some(p) => fs::write(&p, text + "\n").map_err(|e| io_err(&p, e)),
        None => {
            eprintln!(
                "manifest: {}",
                serde_json::to_string(&m).expect("manifest serializes")
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let start = Instant::now();
    let result =
        run(&cli.command).and_then(|o| write_manifest(&cli, &o, start.elapsed().as_secs_f64()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((kind, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(kind))
        }
    }
}
