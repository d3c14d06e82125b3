use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use convsearch_core::data::{all_instances, load_corpus, load_sd_data, load_sessions, validate_gold, QueryInstance};
use convsearch_core::distill::{run_sdpwu, save_sdpwu, Generator, RemoteGenerator, TemplateGenerator};
use convsearch_core::format::DEFAULT_EXAMPLE;
use convsearch_core::grpo::{
    action_table, config_fingerprint, evaluate_policy, greedy_run, mle_warmup, qrels_for, raw_run, run_metrics, train,
    write_log_jsonl, Checkpoint, StepLog, ToyPolicy,
};
use convsearch_core::metrics::{export_trec, import_trec, MetricReport, Run};
use convsearch_core::pipeline::run_ablation;
use convsearch_core::retrieval::{DenseIndex, HashEmbedder, IndexFile, InvertedIndex, Retriever};
use convsearch_core::synthetic::{SyntheticBenchmark, DEFAULT_SEED};

use crate::config::{Config, GeneratorKind, Override};
use crate::error::CliError;
use crate::service::{self, Mode, ServiceState};

#[derive(Debug, Parser)]
#[command(name = "convsearch", version, about = "Conversational query reformulation with retrieval-shaped rewards")]
pub struct Cli {
    /// TOML config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.seed=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic coreference benchmark (corpus + sessions).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate corpus and sessions and write the query instances.
    Ingest {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the BM25 (and optional dense) index file.
    Index {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_dense: bool,
    },
    /// Print the top-k ranking for one query as JSON.
    Retrieve {
        #[arg(long)]
        query: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, value_parser = parse_mode, default_value = "sparse")]
        mode: Mode,
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Few-shot self-distillation with format and rank-1 filtering.
    Distill {
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_parser = parse_mode, default_value = "sparse")]
        mode: Mode,
    },
    /// Fit the toy policy to the retained samples.
    Warmup {
        #[arg(long)]
        sd_data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// GRPO from the warm-up checkpoint (or uniform with --from-scratch).
    Train {
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long, conflicts_with = "from")]
        from_scratch: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode, default_value = "sparse")]
        mode: Mode,
    },
    /// Metrics for a TREC run/qrels pair, the raw queries, or a trained policy.
    Eval {
        #[arg(long, requires = "qrels")]
        run: Option<PathBuf>,
        #[arg(long, requires = "run")]
        qrels: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["run", "raw"])]
        policy: Option<PathBuf>,
        #[arg(long, conflicts_with = "run")]
        raw: bool,
        #[arg(long, value_parser = parse_mode, default_value = "sparse")]
        mode: Mode,
        /// Also write the run and qrels as TREC files with this prefix.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Render a training log as CSV, one row per step.
    Report {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP reward service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Four-arm comparison on the synthetic benchmark.
    Ablation {
        /// Benchmark generation seed.
        #[arg(long)]
        data_seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "sparse" => Ok(Mode::Sparse),
        "dense" => Ok(Mode::Dense),
        _ => Err(format!("unknown retrieval mode {s:?} (sparse|dense)")),
    }
}

fn path_override(key: &str, p: &Option<PathBuf>) -> Option<Override> {
    p.as_ref()
        .map(|p| Override::new(key, toml::Value::String(p.display().to_string())))
}

impl Command {
    /// Subcommand flags expressed as config overrides, applied after `--set`.
    fn overrides(&self) -> Result<Vec<Override>, CliError> {
        let int = |key: &str, v: Option<u64>| -> Result<Option<Override>, CliError> {
            v.map(|v| {
                i64::try_from(v)
                    .map(|v| Override::new(key, toml::Value::Integer(v)))
                    .map_err(|_| CliError::Usage(format!("{key} out of range")))
            })
            .transpose()
        };
        let o = match self {
            Command::Ingest { corpus, sessions, out } => vec![
                path_override("paths.corpus", corpus),
                path_override("paths.sessions", sessions),
                path_override("paths.instances", out),
            ],
            Command::Index { corpus, out, no_dense } => vec![
                path_override("paths.corpus", corpus),
                path_override("paths.index", out),
                no_dense.then(|| Override::new("retrieval.dense.enabled", toml::Value::Boolean(false))),
            ],
            Command::Retrieve { index, .. } => vec![path_override("paths.index", index)],
            Command::Distill { sessions, index, out, samples, .. } => vec![
                path_override("paths.sessions", sessions),
                path_override("paths.index", index),
                path_override("paths.distill_dir", out),
                int("distill.samples_per_instance", samples.map(|v| v as u64))?,
            ],
            Command::Warmup { out, .. } => vec![path_override("paths.warmup_policy", out)],
            Command::Train { from, seed, max_steps, out, .. } => vec![
                path_override("paths.warmup_policy", from),
                int("train.seed", *seed)?,
                int("train.max_steps", max_steps.map(|v| v as u64))?,
                path_override("paths.policy", out),
            ],
            Command::Eval { policy, .. } => vec![path_override("paths.policy", policy)],
            Command::Serve { bind, index } => vec![
                bind.as_ref().map(|b| Override::new("service.bind", toml::Value::String(b.clone()))),
                path_override("paths.index", index),
            ],
            Command::Synth { .. } | Command::Report { .. } | Command::Ablation { .. } => vec![],
        };
        Ok(o.into_iter().flatten().collect())
    }
}

/// Effective configuration for `cli`: defaults, then `--config`, then flags.
pub fn resolve_config(cli: &Cli) -> Result<Config, CliError> {
    let mut overrides = cli
        .overrides
        .iter()
        .map(|s| Override::parse(s))
        .collect::<Result<Vec<_>, _>>()?;
    overrides.extend(cli.command.overrides()?);
    Config::load(cli.config.as_deref(), &overrides)
}

fn stdout_err(e: std::io::Error) -> Result<(), CliError> {
    // A closed pipe (`| head`) is not a failure.
    if e.kind() == std::io::ErrorKind::BrokenPipe {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("stdout: {e}")))
    }
}

fn out_line(s: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{s}").or_else(stdout_err)
}

fn json_line<T: serde::Serialize>(v: &T) -> Result<(), CliError> {
    out_line(&serde_json::to_string(v).expect("output serializes"))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            std::fs::create_dir_all(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        }
        _ => Ok(()),
    }
}

fn load_index(cfg: &Config) -> Result<IndexFile, CliError> {
    Ok(IndexFile::load(&cfg.paths.index)?)
}

fn retriever(index: &IndexFile, mode: Mode) -> Result<&dyn Retriever, CliError> {
    match mode {
        Mode::Sparse => Ok(&index.sparse),
        Mode::Dense => index
            .dense
            .as_ref()
            .map(|d| d as &dyn Retriever)
            .ok_or_else(|| CliError::Data(format!("index has no dense part; rebuild without --no-dense"))),
    }
}

fn load_instances(cfg: &Config) -> Result<Vec<QueryInstance>, CliError> {
    let sessions = load_sessions(&cfg.paths.sessions)?;
    let instances = all_instances(&sessions);
    if instances.is_empty() {
        return Err(CliError::Data(format!("{}: no labeled turns", cfg.paths.sessions.display())));
    }
    Ok(instances)
}

fn build_index(cfg: &Config) -> Result<IndexFile, CliError> {
    let corpus = load_corpus(&cfg.paths.corpus)?;
    let r = &cfg.retrieval;
    let sparse = InvertedIndex::build(&corpus, r.tokenizer, r.limits, r.bm25)?;
    let dense = if r.dense.enabled {
        Some(DenseIndex::build(&corpus, HashEmbedder::new(r.dense.dim, r.dense.seed))?)
    } else {
        None
    };
    Ok(IndexFile::new(sparse, dense))
}

fn generator(cfg: &Config) -> Result<Box<dyn Generator>, CliError> {
    Ok(match cfg.generator.kind {
        GeneratorKind::Template => Box::new(TemplateGenerator::new(cfg.generator.seed)),
        GeneratorKind::Remote => {
            let remote = cfg.generator.remote.clone().expect("validated");
            Box::new(RemoteGenerator::new(remote).map_err(|e| CliError::Usage(e.to_string()))?)
        }
    })
}

fn print_metrics(prefix: &str, m: &MetricReport) -> Result<(), CliError> {
    for (name, v) in [("MRR@3", m.mrr3), ("NDCG@3", m.ndcg3), ("R@10", m.recall10), ("R@100", m.recall100)] {
        out_line(&format!("{prefix}{name} = {v}"))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli)?;
    tracing::info!(config = %cfg.echo(), "effective config");
    match cli.command {
        Command::Synth { out, seed } => {
            let b = SyntheticBenchmark::generate(seed.unwrap_or(DEFAULT_SEED));
            b.save(&out)?;
            json_line(&serde_json::json!({
                "passages": b.corpus.len(),
                "sessions": b.sessions.len(),
                "instances": b.instances().len(),
                "out": out,
            }))
        }
        Command::Ingest { .. } => {
            let corpus = load_corpus(&cfg.paths.corpus)?;
            let sessions = load_sessions(&cfg.paths.sessions)?;
            validate_gold(&sessions, &corpus)?;
            let instances = all_instances(&sessions);
            ensure_parent(&cfg.paths.instances)?;
            let mut body = String::new();
            for i in &instances {
                body.push_str(&serde_json::to_string(i).expect("instance serializes"));
                body.push('\n');
            }
            std::fs::write(&cfg.paths.instances, body)
                .map_err(|e| CliError::Data(format!("{}: {e}", cfg.paths.instances.display())))?;
            json_line(&serde_json::json!({
                "passages": corpus.len(),
                "sessions": sessions.len(),
                "instances": instances.len(),
            }))
        }
        Command::Index { .. } => {
            let file = build_index(&cfg)?;
            ensure_parent(&cfg.paths.index)?;
            file.save(&cfg.paths.index)?;
            json_line(&serde_json::json!({
                "header": file.header,
                "dense": file.dense.is_some(),
                "fingerprint": file.fingerprint(),
            }))
        }
        Command::Retrieve { query, k, mode, .. } => {
            if k == 0 {
                return Err(CliError::Usage("k must be at least 1".into()));
            }
            let index = load_index(&cfg)?;
            json_line(&retriever(&index, mode)?.retrieve(&query, k)?)
        }
        Command::Distill { mode, .. } => {
            let instances = load_instances(&cfg)?;
            let index = load_index(&cfg)?;
            let g = generator(&cfg)?;
            let out = run_sdpwu(&instances, &g, &[DEFAULT_EXAMPLE], retriever(&index, mode)?, &cfg.distill)?;
            save_sdpwu(&out, &cfg.paths.distill_dir)?;
            json_line(&out.report)
        }
        Command::Warmup { sd_data, .. } => {
            let path = sd_data.unwrap_or_else(|| cfg.paths.sd_data());
            let samples = load_sd_data(&path)?;
            let (policy, report) = mle_warmup(&ToyPolicy::uniform(cfg.policy.buckets), &samples);
            ensure_parent(&cfg.paths.warmup_policy)?;
            Checkpoint {
                config_fingerprint: config_fingerprint(&cfg),
                policy,
            }
            .save(&cfg.paths.warmup_policy)?;
            json_line(&report)
        }
        Command::Train { from_scratch, mode, .. } => {
            let instances = load_instances(&cfg)?;
            let index = load_index(&cfg)?;
            let start = if from_scratch {
                ToyPolicy::uniform(cfg.policy.buckets)
            } else {
                Checkpoint::<ToyPolicy>::load(&cfg.paths.warmup_policy)?.policy
            };
            let reference = start.clone();
            let mut policy = start;
            let logs = train(
                &mut policy,
                &reference,
                &instances,
                retriever(&index, mode)?,
                &cfg.reward,
                &cfg.train,
                |log, _| tracing::info!(step = log.step, reward = log.mean_reward, rank1 = log.rank1_rate, "step"),
            )?;
            std::fs::create_dir_all(&cfg.paths.logs)
                .map_err(|e| CliError::Data(format!("{}: {e}", cfg.paths.logs.display())))?;
            write_log_jsonl(&logs, &cfg.paths.train_log())?;
            ensure_parent(&cfg.paths.policy)?;
            Checkpoint {
                config_fingerprint: config_fingerprint(&cfg),
                policy,
            }
            .save(&cfg.paths.policy)?;
            json_line(&serde_json::json!({
                "steps": logs.len(),
                "last": logs.last(),
                "log": cfg.paths.train_log(),
            }))
        }
        Command::Eval {
            run: Some(run),
            qrels: Some(qrels),
            ..
        } => {
            let (run, qrels) = import_trec(&run, &qrels)?;
            print_metrics("", &MetricReport::compute(&run, &qrels)?)
        }
        Command::Eval { raw, mode, export, .. } => {
            let instances = load_instances(&cfg)?;
            let index = load_index(&cfg)?;
            let r = retriever(&index, mode)?;
            let depth = cfg.train.search_depth;
            let run: Run = if raw {
                raw_run(&instances, r, depth)?
            } else {
                let policy = Checkpoint::<ToyPolicy>::load(&cfg.paths.policy)?.policy;
                let table = action_table(&policy, &instances, r, depth)?;
                let e = evaluate_policy(&policy, &instances, &table, cfg.train.temperature)?;
                out_line(&format!("expected MRR@3 = {}", e.expected_mrr3))?;
                out_line(&format!("expected rank1 = {}", e.expected_rank1_rate))?;
                greedy_run(&policy, &instances, r, depth)?
            };
            print_metrics("", &run_metrics(&run, &instances)?)?;
            if let Some(prefix) = export {
                let p = prefix.display().to_string();
                ensure_parent(&prefix)?;
                export_trec(
                    &run,
                    &qrels_for(&instances),
                    Path::new(&format!("{p}.run")),
                    Path::new(&format!("{p}.qrels")),
                    "convsearch",
                )?;
            }
            Ok(())
        }
        Command::Report { log, out } => {
            let path = log.unwrap_or_else(|| cfg.paths.train_log());
            let csv = report_csv(&path)?;
            match out {
                Some(o) => {
                    ensure_parent(&o)?;
                    std::fs::write(&o, csv).map_err(|e| CliError::Data(format!("{}: {e}", o.display())))
                }
                None => {
                    let mut stdout = std::io::stdout().lock();
                    stdout.write_all(csv.as_bytes()).or_else(stdout_err)
                }
            }
        }
        Command::Serve { .. } => {
            let state = Arc::new(ServiceState::new(cfg.reward, cfg.service.default_depth));
            let index_path = cfg.paths.index.clone();
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            rt.block_on(service::serve(&cfg.service.bind, state, move || {
                IndexFile::load(&index_path).map_err(|e| e.to_string())
            }))
            .map_err(|e| match e {
                service::ServeError::Load(_) => CliError::Data(e.to_string()),
                service::ServeError::Server(_) => CliError::Runtime(e.to_string()),
            })
        }
        Command::Ablation { data_seed, out } => {
            let b = SyntheticBenchmark::generate(data_seed.unwrap_or(DEFAULT_SEED));
            let r = &cfg.retrieval;
            let index = InvertedIndex::build(&b.corpus, r.tokenizer, r.limits, r.bm25)?;
            let report = run_ablation(&b.instances(), &TemplateGenerator::new(cfg.generator.seed), &index, &cfg.pipeline())?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
                let body = serde_json::to_string_pretty(&report).expect("report serializes");
                std::fs::write(dir.join("ablation.json"), body + "\n")
                    .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
                write_log_jsonl(&report.rl_only_log, &dir.join("rl_only_log.jsonl"))?;
                write_log_jsonl(&report.full_log, &dir.join("full_log.jsonl"))?;
            }
            out_line(report.table().trim_end())
        }
    }
}

/// CSV text with a header row and one row per logged step.
pub fn report_csv(log: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(log).map_err(|e| CliError::Data(format!("{}: {e}", log.display())))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let step: StepLog = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", log.display(), n + 1)))?;
        w.serialize(step).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
