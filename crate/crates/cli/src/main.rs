mod manifest;

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use lsgt::eval::{evaluate_model, merge_reports, random_baseline, EvalOptions, EvalReport};
use lsgt::graph::{
    ingest, read_session_log, read_triples, split_edges, write_session_log, write_triples, Graph, IngestConfig,
    Split, SplitGraph, SplitManifest,
};
use lsgt::model::{AblationFlags, ModelConfig, ModelParams, VocabSizes};
use lsgt::oracle::{read_dataset, sample, write_dataset, SampledQuery};
use lsgt::query::{parse, QueryType};
use lsgt::tensor::Checkpoint;
use lsgt::train::{prepare, train, TrainConfig};
use lsgt::wl::{augment, build_proxy, lemma3_check, wl1};

use manifest::{sha256_file, Recorder};

#[derive(Parser)]
#[command(name = "lsgt", version, about = "Logical session query answering pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, env = "LSGT_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory; receives the artifacts and a manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct Data {
    /// Directory written by `ingest`.
    #[arg(long)]
    graph: PathBuf,
    /// `split.json` written by `split`.
    #[arg(long)]
    split: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the graph from a session log and attribute triples.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "toy", requires = "triples")]
        sessions: Option<PathBuf>,
        #[arg(long, requires = "sessions")]
        triples: Option<PathBuf>,
        /// Use the bundled toy dataset.
        #[arg(long, conflicts_with_all = ["sessions", "triples"])]
        toy: bool,
    },
    /// Partition relational edges into train/valid/test.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        graph: PathBuf,
        /// Three comma-separated fractions summing to 1.
        #[arg(long, value_parser = parse_fractions)]
        fractions: Option<[f64; 3]>,
    },
    /// Sample queries with exact answers.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        /// Query types for the train split: tags, `training` or `all`.
        #[arg(long)]
        train_types: Option<String>,
        /// Query types for valid and test.
        #[arg(long)]
        eval_types: Option<String>,
        #[arg(long)]
        train_count: Option<usize>,
        #[arg(long)]
        eval_count: Option<usize>,
    },
    /// Train the encoder on sampled training queries.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        drop_logic_tokens: bool,
        #[arg(long)]
        drop_session_positions: bool,
    },
    /// Filtered MRR of a checkpoint, or of random scores.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, required_unless_present = "random_baseline")]
        checkpoint: Option<PathBuf>,
        /// Score with uniform random numbers instead of a model.
        #[arg(long)]
        random_baseline: bool,
        /// Rank against all candidates.
        #[arg(long)]
        unfiltered: bool,
    },
    /// Run the graph-theoretic checks.
    Verify {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Check isomorphism equivalence of graphs and their augmented proxies.
        #[arg(long, required_unless_present = "proxy")]
        lemma3: bool,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 6)]
        size_bound: usize,
        /// Print the proxy graph of a query (needs --graph).
        #[arg(long, requires = "graph")]
        proxy: Option<String>,
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Merge evaluation reports into one table.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// `report.json` files; each row is named after its directory.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SplitSection {
    fractions: [f64; 3],
    seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            fractions: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SampleSection {
    train_types: Vec<QueryType>,
    eval_types: Vec<QueryType>,
    train_count: usize,
    eval_count: usize,
    seed: u64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            train_types: QueryType::TRAINING.to_vec(),
            eval_types: QueryType::ALL.to_vec(),
            train_count: 1000,
            eval_count: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalSection {
    seed: u64,
    unfiltered: bool,
}

/// Everything a run can be configured with; each command reads its part.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    ingest: IngestConfig,
    split: SplitSection,
    sample: SampleSection,
    model: ModelConfig,
    train: TrainConfig,
    ablation: AblationFlags,
    eval: EvalSection,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn parse_types(spec: &str) -> Result<Vec<QueryType>> {
    match spec {
        "all" => Ok(QueryType::ALL.to_vec()),
        "training" => Ok(QueryType::TRAINING.to_vec()),
        "ood" => Ok(QueryType::OOD.to_vec()),
        _ => spec
            .split(',')
            .map(|t| t.trim().parse::<QueryType>().map_err(|e| anyhow!("{e}")))
            .collect(),
    }
}

const GRAPH_SESSIONS: &str = "sessions.jsonl";
const GRAPH_TRIPLES: &str = "triples.tsv";
const GRAPH_META: &str = "graph.json";

fn load_graph(dir: &Path, rec: Option<&mut Recorder>) -> Result<Graph> {
    let sessions = dir.join(GRAPH_SESSIONS);
    let triples = dir.join(GRAPH_TRIPLES);
    let meta = dir.join(GRAPH_META);
    if let Some(rec) = rec {
        for p in [&sessions, &triples, &meta] {
            rec.input(p)?;
        }
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(&meta)?)
        .with_context(|| format!("parsing {}", meta.display()))?;
    let cfg: IngestConfig = serde_json::from_value(meta["ingest"].clone()).context("graph.json: ingest config")?;
    let s = read_session_log(BufReader::new(File::open(&sessions)?))?;
    let t = read_triples(BufReader::new(File::open(&triples)?))?;
    Ok(ingest(s, t, &cfg)?)
}

fn load_split(data: &Data, rec: &mut Recorder) -> Result<SplitGraph> {
    let graph = load_graph(&data.graph, Some(rec))?;
    rec.input(&data.split)?;
    let manifest: SplitManifest = serde_json::from_str(&fs::read_to_string(&data.split)?)
        .with_context(|| format!("parsing {}", data.split.display()))?;
    Ok(SplitGraph::from_manifest(&graph, &manifest)?)
}

fn load_queries(path: &Path, graph: &Graph, rec: &mut Recorder) -> Result<Vec<SampledQuery>> {
    rec.input(path)?;
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_dataset(BufReader::new(f), graph.vocab())?)
}

fn cmd_ingest(common: &Common, sessions: Option<&Path>, triples: Option<&Path>, toy: bool) -> Result<()> {
    let mut cfg = load_config(common.config.as_deref())?;
    let mut rec = Recorder::new("ingest", &common.out)?;
    let graph = if toy {
        rec.input_bytes("toy:sessions.jsonl", lsgt::toy::SESSIONS_JSONL.as_bytes());
        rec.input_bytes("toy:triples.tsv", lsgt::toy::TRIPLES_TSV.as_bytes());
        cfg.ingest = lsgt::toy::config();
        lsgt::toy::graph()
    } else {
        let (s, t) = (sessions.expect("clap enforces"), triples.expect("clap enforces"));
        rec.input(s)?;
        rec.input(t)?;
        let sr = read_session_log(BufReader::new(File::open(s)?))?;
        let tr = read_triples(BufReader::new(File::open(t)?))?;
        ingest(sr, tr, &cfg.ingest)?
    };
    let mut buf = Vec::new();
    write_session_log(&graph, &mut buf)?;
    rec.write(GRAPH_SESSIONS, &buf)?;
    buf.clear();
    write_triples(&graph, &mut buf)?;
    rec.write(GRAPH_TRIPLES, &buf)?;
    let stats = graph.stats();
    let meta = json!({ "ingest": cfg.ingest, "stats": stats });
    rec.write(GRAPH_META, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    println!(
        "{} sessions, {} items, {} attributes, {} relations, {} edges",
        stats.sessions, stats.items, stats.attributes, stats.relations, stats.edges
    );
    rec.finish(common.seed.unwrap_or(0), json!({ "ingest": cfg.ingest }), json!(stats))?;
    Ok(())
}

fn parse_fractions(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<Vec<f64>, String>>()?;
    <[f64; 3]>::try_from(parts).map_err(|p| format!("expected 3 fractions, got {}", p.len()))
}

fn cmd_split(common: &Common, graph_dir: &Path, fractions: Option<[f64; 3]>) -> Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let mut rec = Recorder::new("split", &common.out)?;
    let graph = load_graph(graph_dir, Some(&mut rec))?;
    let fr = fractions.unwrap_or(cfg.split.fractions);
    let seed = common.seed.unwrap_or(cfg.split.seed);
    let (sg, warnings) = split_edges(&graph, fr, seed)?;
    for w in &warnings {
        warn!("{w}");
    }
    rec.write("split.json", serde_json::to_string(&sg.manifest)?.as_bytes())?;
    let mut counts = serde_json::Map::new();
    for s in Split::ALL {
        let n = sg.manifest.assignments.iter().filter(|a| a.split == s).count();
        counts.insert(s.name().to_string(), json!(n));
    }
    println!(
        "train {} / valid {} / test {} edges",
        counts["train"], counts["valid"], counts["test"]
    );
    rec.finish(
        seed,
        json!({ "fractions": fr }),
        json!({ "edges": counts, "warnings": warnings }),
    )?;
    Ok(())
}

fn cmd_sample(
    common: &Common,
    data: &Data,
    train_types: Option<&str>,
    eval_types: Option<&str>,
    train_count: Option<usize>,
    eval_count: Option<usize>,
) -> Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let mut s = cfg.sample.clone();
    if let Some(t) = train_types {
        s.train_types = parse_types(t)?;
    }
    if let Some(t) = eval_types {
        s.eval_types = parse_types(t)?;
    }
    s.train_count = train_count.unwrap_or(s.train_count);
    s.eval_count = eval_count.unwrap_or(s.eval_count);
    let seed = common.seed.unwrap_or(s.seed);
    let mut rec = Recorder::new("sample", &common.out)?;
    let sg = load_split(data, &mut rec)?;
    let mut summary = serde_json::Map::new();
    for split in Split::ALL {
        let (types, n) = if split == Split::Train {
            (&s.train_types, s.train_count)
        } else {
            (&s.eval_types, s.eval_count)
        };
        let mut all = Vec::new();
        let mut counts = serde_json::Map::new();
        for &t in types {
            let (qs, warning) = sample(&sg, t, n, seed, split);
            if let Some(w) = warning {
                warn!("{w}");
            }
            counts.insert(t.tag().to_string(), json!(qs.len()));
            all.extend(qs);
        }
        let mut buf = Vec::new();
        write_dataset(&all, sg.test.vocab(), &mut buf)?;
        rec.write(&format!("queries-{}.jsonl", split.name()), &buf)?;
        println!("{}: {} queries", split.name(), all.len());
        summary.insert(split.name().to_string(), serde_json::Value::Object(counts));
    }
    rec.finish(seed, serde_json::to_value(&s)?, serde_json::Value::Object(summary))?;
    Ok(())
}

fn checkpoint_with_meta(params: &ModelParams, flags: AblationFlags, tc: &TrainConfig, step: usize) -> Checkpoint {
    let mut ck = params.to_checkpoint();
    ck.step = Some(step);
    ck.meta["flags"] = json!(flags);
    ck.meta["train"] = json!(tc);
    ck
}

fn cmd_train(
    common: &Common,
    data: &Data,
    queries: &Path,
    steps: Option<usize>,
    drop_logic: bool,
    drop_positions: bool,
) -> Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let mut tc = cfg.train;
    tc.seed = common.seed.unwrap_or(tc.seed);
    tc.steps = steps.unwrap_or(tc.steps);
    tc.warmup_steps = tc.warmup_steps.min(tc.steps);
    let flags = AblationFlags {
        drop_logic_tokens: cfg.ablation.drop_logic_tokens || drop_logic,
        drop_session_positions: cfg.ablation.drop_session_positions || drop_positions,
    };
    let mut rec = Recorder::new("train", &common.out)?;
    let sg = load_split(data, &mut rec)?;
    let qs = load_queries(queries, &sg.train, &mut rec)?;
    let train_qs: Vec<SampledQuery> = qs.into_iter().filter(|q| q.split == Split::Train).collect();
    let params = ModelParams::init(cfg.model, VocabSizes::of(sg.train.vocab()), tc.seed)?;
    let prepared = prepare(&params, &train_qs, flags)?;
    info!("{} training queries", prepared.len());
    let mut saved: Vec<(usize, Checkpoint)> = Vec::new();
    let outcome = train(&tc, &prepared, params, |step, p| {
        saved.push((step, checkpoint_with_meta(p, flags, &tc, step)));
    })?;
    let last = saved.len().saturating_sub(1);
    for (i, (step, ck)) in saved.iter().enumerate() {
        let name = if i == last {
            "model.json".to_string()
        } else {
            format!("checkpoints/step-{step:06}.json")
        };
        rec.write(&name, ck.to_json()?.as_bytes())?;
    }
    rec.write("loss.tsv", outcome.loss_tsv().as_bytes())?;
    let final_loss = outcome.losses.last().map(|(_, l)| *l);
    let summary = json!({
        "steps_completed": outcome.losses.len(),
        "final_loss": final_loss,
        "diverged_at": outcome.diverged_at,
        "parameters": outcome.params.parameter_count(),
        "training_queries": prepared.len(),
    });
    rec.finish(
        tc.seed,
        json!({ "model": cfg.model, "train": tc, "ablation": flags }),
        summary,
    )?;
    if let Some(step) = outcome.diverged_at {
        bail!("training diverged at step {step}; model.json holds the last finite parameters");
    }
    println!(
        "trained {} steps, final batch loss {:.4}",
        outcome.losses.len(),
        final_loss.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_eval(
    common: &Common,
    data: &Data,
    queries: &Path,
    checkpoint: Option<&Path>,
    random: bool,
    unfiltered: bool,
) -> Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(cfg.eval.seed);
    let mut rec = Recorder::new("eval", &common.out)?;
    let sg = load_split(data, &mut rec)?;
    let qs = load_queries(queries, &sg.test, &mut rec)?;
    let test: Vec<SampledQuery> = qs.into_iter().filter(|q| q.split == Split::Test).collect();
    if test.is_empty() {
        bail!("{} holds no test-split queries", queries.display());
    }
    let mut fingerprint = sha256_file(queries)?;
    let report = if random {
        fingerprint = format!("random:{seed}:{}", &fingerprint[..16]);
        let opts = EvalOptions {
            unfiltered: unfiltered || cfg.eval.unfiltered,
            fingerprint,
        };
        random_baseline(&test, &VocabSizes::of(sg.test.vocab()), seed, &opts)?
    } else {
        let path = checkpoint.expect("clap enforces");
        rec.input(path)?;
        let ck = Checkpoint::load(path)?;
        let params = ModelParams::from_checkpoint(&ck)?;
        if params.sizes != VocabSizes::of(sg.test.vocab()) {
            bail!("checkpoint vocabulary sizes {:?} do not match the graph", params.sizes);
        }
        let flags: AblationFlags = serde_json::from_value(ck.meta["flags"].clone()).unwrap_or_default();
        fingerprint = format!("{}:{}", &sha256_file(path)?[..16], &fingerprint[..16]);
        let opts = EvalOptions {
            unfiltered: unfiltered || cfg.eval.unfiltered,
            fingerprint,
        };
        evaluate_model(&params, flags, &test, seed, &opts)?
    };
    rec.write("report.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
    rec.write("report.tsv", report.to_tsv().as_bytes())?;
    print!("{}", report.to_tsv());
    rec.finish(seed, json!({ "eval": cfg.eval, "random_baseline": random }), json!(report))?;
    Ok(())
}

/// Returns whether every check passed.
fn cmd_verify(
    seed: Option<u64>,
    out: Option<&Path>,
    lemma3: bool,
    trials: usize,
    size_bound: usize,
    proxy: Option<&str>,
    graph: Option<&Path>,
) -> Result<bool> {
    let seed = seed.unwrap_or(0);
    let mut text = String::new();
    let mut ok = true;
    let mut summary = serde_json::Map::new();
    let mut inputs = Vec::new();
    if let (Some(src), Some(dir)) = (proxy, graph) {
        let g = load_graph(dir, None)?;
        inputs.extend([GRAPH_SESSIONS, GRAPH_TRIPLES, GRAPH_META].map(|f| dir.join(f)));
        let q = parse(src, g.vocab())?;
        let p = build_proxy(&q)?;
        let a = augment(&p);
        let h = wl1(&a, a.vertex_count());
        text += &format!("proxy {p}\naugmented {a}\n");
        text += &format!(
            "refinement stable after {} rounds, {} colors{}\n",
            h.stable_at,
            h.counts.len(),
            if h.collision { ", hash collision detected" } else { "" }
        );
        ok &= !h.collision;
        summary.insert("proxy".into(), json!({ "vertices": p.vertex_count(), "edges": p.edge_count() }));
    }
    if lemma3 {
        let r = lemma3_check(trials, size_bound, seed);
        text += &r.to_string();
        ok &= r.passed();
        summary.insert("lemma3".into(), json!(r));
    }
    print!("{text}");
    if let Some(out) = out {
        let mut rec = Recorder::new("verify", out)?;
        for p in &inputs {
            rec.input(p)?;
        }
        rec.write("verify.txt", text.as_bytes())?;
        rec.finish(
            seed,
            json!({ "trials": trials, "size_bound": size_bound }),
            serde_json::Value::Object(summary),
        )?;
    }
    Ok(ok)
}

fn cmd_report(out: &Path, reports: &[PathBuf]) -> Result<()> {
    let mut rec = Recorder::new("report", out)?;
    let mut named = Vec::new();
    for p in reports {
        rec.input(p)?;
        let r: EvalReport = serde_json::from_str(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?;
        let name = p
            .parent()
            .and_then(|d| d.file_name())
            .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        named.push((name, r));
    }
    let table = merge_reports(&named);
    rec.write("table.tsv", table.as_bytes())?;
    std::io::stdout().write_all(table.as_bytes())?;
    rec.finish(0, json!({}), json!({ "runs": named.len() }))?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Ingest {
            common,
            sessions,
            triples,
            toy,
        } => cmd_ingest(common, sessions.as_deref(), triples.as_deref(), *toy)?,
        Command::Split {
            common,
            graph,
            fractions,
        } => cmd_split(common, graph, *fractions)?,
        Command::Sample {
            common,
            data,
            train_types,
            eval_types,
            train_count,
            eval_count,
        } => cmd_sample(
            common,
            data,
            train_types.as_deref(),
            eval_types.as_deref(),
            *train_count,
            *eval_count,
        )?,
        Command::Train {
            common,
            data,
            queries,
            steps,
            drop_logic_tokens,
            drop_session_positions,
        } => cmd_train(common, data, queries, *steps, *drop_logic_tokens, *drop_session_positions)?,
        Command::Eval {
            common,
            data,
            queries,
            checkpoint,
            random_baseline,
            unfiltered,
        } => cmd_eval(common, data, queries, checkpoint.as_deref(), *random_baseline, *unfiltered)?,
        Command::Verify {
            seed,
            out,
            lemma3,
            trials,
            size_bound,
            proxy,
            graph,
        } => {
            return cmd_verify(
                *seed,
                out.as_deref(),
                *lemma3,
                *trials,
                *size_bound,
                proxy.as_deref(),
                graph.as_deref(),
            )
        }
        Command::Report { out, reports } => cmd_report(out, reports)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
