use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use difflink::data;
use difflink::error::{Error, Result};
use difflink::graph::{HeteroGraph, Side};
use difflink::metapath;
use difflink::metrics;
use difflink::model::{self, MarginVariant, ModelParams, NegCombine, Prepared, TrainConfig};
use difflink::rng;

#[derive(Parser)]
#[command(name = "difflink", version, about = "Diffusion-augmented link prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a planted-block synthetic dataset
    Synth(SynthArgs),
    /// Build capped meta-path neighbor lists from an edge file
    Metapath(MetapathArgs),
    /// Train a model and write a checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out edges
    Eval(EvalArgs),
    /// Rank targets for one source node
    Predict(PredictArgs),
    /// Finite-difference verification of the full model gradient
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    na: usize,
    #[arg(long, default_value_t = 100)]
    nb: usize,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 0.3)]
    pin: f64,
    #[arg(long, default_value_t = 0.01)]
    pout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct MetapathArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long, default_value_t = 30)]
    tau: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct HyperArgs {
    /// Optional JSON config file; explicit flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    alpha_start: Option<f64>,
    #[arg(long)]
    alpha_end: Option<f64>,
    /// Four comma-separated sample weights, strictly decreasing
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    per_drug_negatives: Option<usize>,
    #[arg(long)]
    no_diffusion: bool,
    #[arg(long)]
    no_homogeneous: bool,
    #[arg(long)]
    no_heterogeneous: bool,
    #[arg(long)]
    neg_combine: Option<String>,
    #[arg(long)]
    margin_variant: Option<String>,
    #[arg(long)]
    margin: Option<f64>,
}

impl HyperArgs {
    fn resolve(&self, seed: u64) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                serde_json::from_str::<TrainConfig>(&text)
                    .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        cfg.seed = seed;
        if let Some(v) = self.batch {
            cfg.batch_size = v;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.alpha_start {
            cfg.alpha_start = v;
        }
        if let Some(v) = self.alpha_end {
            cfg.alpha_end = v;
        }
        if let Some(w) = &self.weights {
            let parts: Vec<f64> = w
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("bad --weights: {e}")))?;
            if parts.len() != 4 {
                return Err(Error::Config(format!(
                    "--weights needs exactly 4 values, got {}",
                    parts.len()
                )));
            }
            cfg.weights = [parts[0], parts[1], parts[2], parts[3]];
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout_rate = v;
        }
        if let Some(v) = self.per_drug_negatives {
            cfg.per_drug_negatives = v;
        }
        if self.no_diffusion {
            cfg.use_diffusion = false;
        }
        if self.no_homogeneous {
            cfg.use_homogeneous = false;
        }
        if self.no_heterogeneous {
            cfg.use_heterogeneous = false;
        }
        if let Some(v) = &self.neg_combine {
            cfg.neg_combine = v.parse::<NegCombine>()?;
        }
        if let Some(v) = &self.margin_variant {
            cfg.margin_variant = v.parse::<MarginVariant>()?;
        }
        if let Some(v) = self.margin {
            cfg.margin = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long, default_value = "holdout8020")]
    split: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file(s); with --per-fold, pair positionally with --edges
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    /// Held-out positive edge file(s)
    #[arg(long, required = true)]
    edges: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Emit one MetricReport per fold (requires matching checkpoint/edge lists)
    #[arg(long)]
    per_fold: bool,
    /// Degree-percentile bin count for the breakdown (0 = off)
    #[arg(long, default_value_t = 0)]
    percentiles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Source-side (drug) id to rank targets for
    #[arg(long)]
    drug: String,
    #[arg(long, default_value_t = 20)]
    topk: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 3)]
    seed: u64,
    /// Negate one group's analytic gradient (verification hook)
    #[arg(long, hide = true)]
    flip_sign: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    fnv1a64: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<InputDigest>,
    artifacts: Vec<String>,
    started_at: String,
    finished_at: String,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn digest_file(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path)?;
    Ok(InputDigest {
        path: path.display().to_string(),
        fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
    })
}

struct ManifestBuilder {
    command: String,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<InputDigest>,
    artifacts: Vec<String>,
    started_at: String,
}

impl ManifestBuilder {
    fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            started_at: chrono::Utc::now().to_rfc3339(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    fn write(self, out: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            artifacts: self.artifacts,
            started_at: self.started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
        };
        let path = out.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap() + "\n")?;
        Ok(())
    }
}

/// Everything eval/predict needs travels inside the checkpoint: the training
/// config, both id maps, and the edges the model was trained on.
#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    train: TrainConfig,
    n_a: usize,
    n_b: usize,
    trained: bool,
    ids_a: Vec<String>,
    ids_b: Vec<String>,
    edges: Vec<(usize, usize)>,
}

impl CheckpointMeta {
    fn graph(&self) -> HeteroGraph {
        let mut g = HeteroGraph::new();
        for id in &self.ids_a {
            g.intern(Side::A, id);
        }
        for id in &self.ids_b {
            g.intern(Side::B, id);
        }
        for &(a, b) in &self.edges {
            g.push_edge(a, b);
        }
        g
    }
}

fn save_model(
    path: &Path,
    m: &ModelParams,
    cfg: &TrainConfig,
    graph: &HeteroGraph,
    train_edges: &[(usize, usize)],
) -> Result<()> {
    let meta = CheckpointMeta {
        train: cfg.clone(),
        n_a: graph.n_a(),
        n_b: graph.n_b(),
        trained: m.trained,
        ids_a: graph.ids(Side::A).names().to_vec(),
        ids_b: graph.ids(Side::B).names().to_vec(),
        edges: train_edges.to_vec(),
    };
    let config = serde_json::to_value(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    data::save_checkpoint(&m.store, &config, cfg.seed, path)
}

fn load_model(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let (store, config, _seed) = data::load_checkpoint(path)?;
    let meta: CheckpointMeta = serde_json::from_value(config)
        .map_err(|e| Error::Checkpoint(format!("checkpoint metadata: {e}")))?;
    let model = ModelParams::from_store(store, meta.trained)?;
    if model.n_a != meta.n_a || model.n_b != meta.n_b || model.dim != meta.train.dim {
        return Err(Error::Checkpoint("metadata/parameter shape disagreement".into()));
    }
    Ok((model, meta))
}

fn env_seed(flag_seed: u64) -> Result<u64> {
    match std::env::var("DIFFLINK_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("DIFFLINK_SEED '{v}' is not a u64"))),
        Err(_) => Ok(flag_seed),
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let seed = env_seed(args.seed)?;
    let spec = data::SyntheticSpec {
        n_a: args.na,
        n_b: args.nb,
        n_blocks: args.blocks,
        p_in: args.pin,
        p_out: args.pout,
        seed,
    };
    let (graph, blocks_a, blocks_b) = data::generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out)?;
    let mut manifest = ManifestBuilder::new("synth", seed, serde_json::to_value(&spec).unwrap());

    let edges_path = args.out.join("edges.tsv");
    data::write_edge_file(&graph, None, &edges_path)?;
    let blocks_path = args.out.join("blocks.tsv");
    let mut lines = String::new();
    for (i, b) in blocks_a.iter().enumerate() {
        lines.push_str(&format!("{}\t{b}\n", graph.ids(Side::A).name(i)));
    }
    for (j, b) in blocks_b.iter().enumerate() {
        lines.push_str(&format!("{}\t{b}\n", graph.ids(Side::B).name(j)));
    }
    fs::write(&blocks_path, lines)?;

    manifest.artifact(&edges_path);
    manifest.artifact(&blocks_path);
    manifest.write(&args.out)?;
    println!(
        "synth: {} x {} nodes, {} edges -> {}",
        graph.n_a(),
        graph.n_b(),
        graph.edges().len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_metapath(args: &MetapathArgs) -> Result<()> {
    let seed = env_seed(args.seed)?;
    let (graph, stats) = data::parse_edge_file(&args.edges, None)?;
    if stats.duplicates > 0 {
        eprintln!("warning: {} duplicate edges collapsed", stats.duplicates);
    }
    let relations = metapath::build_metapaths(&graph, args.tau, seed)?;
    fs::create_dir_all(&args.out)?;
    let mut manifest = ManifestBuilder::new(
        "metapath",
        seed,
        serde_json::json!({"tau": args.tau, "edges": args.edges.display().to_string()}),
    );
    manifest.input(&args.edges)?;

    let write_side = |lists: &[Vec<usize>], side: Side, path: &Path| -> Result<()> {
        let ids = graph.ids(side);
        let mut text = String::new();
        for (i, neigh) in lists.iter().enumerate() {
            let joined: Vec<&str> = neigh.iter().map(|&j| ids.name(j)).collect();
            text.push_str(&format!("{}\t{}\n", ids.name(i), joined.join(",")));
        }
        fs::write(path, text)?;
        Ok(())
    };
    let pa = args.out.join("neighbors_a.tsv");
    let pb = args.out.join("neighbors_b.tsv");
    write_side(&relations.neighbors_a, Side::A, &pa)?;
    write_side(&relations.neighbors_b, Side::B, &pb)?;
    manifest.artifact(&pa);
    manifest.artifact(&pb);
    manifest.write(&args.out)?;
    println!(
        "metapath: tau={} stored {} neighbor entries",
        relations.tau,
        relations.stored_entries()
    );
    Ok(())
}

fn write_split_edges(graph: &HeteroGraph, edges: &[(usize, usize)], path: &Path) -> Result<()> {
    let sub = graph.with_edges(edges);
    data::write_edge_file(&sub, None, path)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let seed = env_seed(args.seed)?;
    let cfg = args.hyper.resolve(seed)?;
    let (graph, stats) = data::parse_edge_file(&args.edges, None)?;
    if stats.duplicates > 0 {
        eprintln!("warning: {} duplicate edges collapsed", stats.duplicates);
    }
    fs::create_dir_all(&args.out)?;
    let mut manifest =
        ManifestBuilder::new("train", seed, serde_json::to_value(&cfg).unwrap());
    manifest.input(&args.edges)?;

    let mut history_csv = String::from("fold,epoch,l_diffusion,l_ce,l_margin,l_total\n");
    match args.split.as_str() {
        "holdout8020" => {
            let (train_e, test_e) = metrics::holdout_split(graph.edges(), 0.8, seed);
            let train_graph = graph.with_edges(&train_e);
            let (model, history) = model::train(&cfg, &train_graph)?;
            for (e, r) in history.iter().enumerate() {
                history_csv.push_str(&format!(
                    "0,{e},{},{},{},{}\n",
                    r.l_diffusion, r.l_ce, r.l_margin, r.l_total
                ));
            }
            let ckpt = args.out.join("checkpoint.ckpt");
            save_model(&ckpt, &model, &cfg, &graph, &train_e)?;
            let test_path = args.out.join("test_edges.tsv");
            write_split_edges(&graph, &test_e, &test_path)?;
            manifest.artifact(&ckpt);
            manifest.artifact(&test_path);
            println!(
                "train: {} train / {} test edges, {} epochs -> {}",
                train_e.len(),
                test_e.len(),
                history.len(),
                ckpt.display()
            );
        }
        "cv5" => {
            let folds = metrics::kfold_split(graph.edges(), 5, seed)?;
            for (i, test_e) in folds.iter().enumerate() {
                let train_e: Vec<(usize, usize)> = folds
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .flat_map(|(_, f)| f.iter().copied())
                    .collect();
                let train_graph = graph.with_edges(&train_e);
                let (model, history) = model::train(&cfg, &train_graph)?;
                for (e, r) in history.iter().enumerate() {
                    history_csv.push_str(&format!(
                        "{i},{e},{},{},{},{}\n",
                        r.l_diffusion, r.l_ce, r.l_margin, r.l_total
                    ));
                }
                let ckpt = args.out.join(format!("fold{i}.ckpt"));
                save_model(&ckpt, &model, &cfg, &graph, &train_e)?;
                let test_path = args.out.join(format!("fold{i}_test.tsv"));
                write_split_edges(&graph, test_e, &test_path)?;
                manifest.artifact(&ckpt);
                manifest.artifact(&test_path);
                println!("train: fold {i} done ({} train / {} test)", train_e.len(), test_e.len());
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown split '{other}' (holdout8020|cv5)"
            )))
        }
    }
    let hist_path = args.out.join("loss_history.csv");
    fs::write(&hist_path, history_csv)?;
    manifest.artifact(&hist_path);
    manifest.write(&args.out)?;
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Score one fold: test positives plus one sampled unlinked negative per
/// positive (disjoint from train and test edges). Returns
/// (sigmoid scores, labels, side-A index per pair).
fn fold_scores(
    model: &ModelParams,
    meta: &CheckpointMeta,
    test_edges: &[(usize, usize)],
    seed: u64,
) -> Result<(Vec<f64>, Vec<u8>, Vec<usize>)> {
    let cfg = &meta.train;
    let train_graph = meta.graph();
    let prep = Prepared::build(&train_graph, cfg)?;
    let known: BTreeSet<(usize, usize)> = meta
        .edges
        .iter()
        .copied()
        .chain(test_edges.iter().copied())
        .collect();
    let n_b = meta.n_b;
    let mut neg_rng = rng::derived_rng(seed, "eval/negatives");
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(2 * test_edges.len());
    let mut labels: Vec<u8> = Vec::with_capacity(2 * test_edges.len());
    for &(a, b) in test_edges {
        pairs.push((a, b));
        labels.push(1);
        // balanced negative for the same source node
        use rand::Rng;
        let linked: usize = (0..n_b).filter(|&g| known.contains(&(a, g))).count();
        if linked >= n_b {
            continue;
        }
        loop {
            let g = neg_rng.random_range(0..n_b);
            if !known.contains(&(a, g)) {
                pairs.push((a, g));
                labels.push(0);
                break;
            }
        }
    }
    let raw = model::score_pairs(model, &prep, cfg, &pairs, seed)?;
    let scores: Vec<f64> = raw.into_iter().map(sigmoid).collect();
    let side_a: Vec<usize> = pairs.iter().map(|&(a, _)| a).collect();
    Ok((scores, labels, side_a))
}

fn report_to_csv_row(scope: &str, r: &metrics::MetricReport) -> String {
    format!(
        "{scope},{},{},{},{},{},{},{},{},{},{},{}\n",
        r.auc, r.aupr, r.recall, r.precision, r.f1, r.mcc, r.specificity, r.npv, r.threshold,
        r.n_pos, r.n_neg
    )
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let seed = env_seed(args.seed)?;
    if args.checkpoint.len() != args.edges.len() {
        return Err(Error::Config(format!(
            "{} checkpoints but {} edge files; they pair positionally",
            args.checkpoint.len(),
            args.edges.len()
        )));
    }
    if args.per_fold && args.checkpoint.len() < 2 {
        eprintln!("note: --per-fold with a single checkpoint is the global report");
    }
    fs::create_dir_all(&args.out)?;
    let mut manifest = ManifestBuilder::new(
        "eval",
        seed,
        serde_json::json!({"threshold": args.threshold, "percentiles": args.percentiles,
                           "per_fold": args.per_fold}),
    );

    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    let mut all_side_a = Vec::new();
    let mut per_fold = Vec::new();
    let mut degrees: Option<Vec<usize>> = None;
    for (ckpt_path, edges_path) in args.checkpoint.iter().zip(&args.edges) {
        manifest.input(ckpt_path)?;
        manifest.input(edges_path)?;
        let (model, meta) = load_model(ckpt_path)?;
        let full_graph = meta.graph();
        let records = data::parse_edge_records(edges_path, None)?;
        let mut test_edges = Vec::new();
        for r in &records {
            let a = full_graph.ids(Side::A).get(&r.source).ok_or_else(|| {
                Error::Lookup(format!("unknown source id '{}' in {}", r.source, edges_path.display()))
            })?;
            let b = full_graph.ids(Side::B).get(&r.target).ok_or_else(|| {
                Error::Lookup(format!("unknown target id '{}' in {}", r.target, edges_path.display()))
            })?;
            test_edges.push((a, b));
        }
        if degrees.is_none() {
            // known-interaction counts from the training edges
            let mut d = vec![0usize; meta.n_a];
            for &(a, _) in &meta.edges {
                d[a] += 1;
            }
            degrees = Some(d);
        }
        let (scores, labels, side_a) = fold_scores(&model, &meta, &test_edges, seed)?;
        if args.per_fold {
            per_fold.push(metrics::metric_report(&scores, &labels, args.threshold)?);
        }
        all_scores.extend(scores);
        all_labels.extend(labels);
        all_side_a.extend(side_a);
    }

    let global = metrics::metric_report(&all_scores, &all_labels, args.threshold)?;
    let mut json = serde_json::to_value(&global).unwrap();
    let mut csv = String::from(
        "scope,auc,aupr,recall,precision,f1,mcc,specificity,npv,threshold,n_pos,n_neg\n",
    );
    csv.push_str(&report_to_csv_row("global", &global));
    if args.per_fold {
        json["per_fold"] = serde_json::to_value(&per_fold).unwrap();
        for (i, r) in per_fold.iter().enumerate() {
            csv.push_str(&report_to_csv_row(&format!("fold{i}"), r));
        }
    }
    if args.percentiles > 0 {
        let bins = metrics::degree_percentile_report(
            &all_scores,
            &all_labels,
            &all_side_a,
            degrees.as_ref().unwrap(),
            args.percentiles,
            args.threshold,
        );
        json["per_bin"] = serde_json::to_value(&bins).unwrap();
        for (i, r) in bins.iter().enumerate() {
            if let Some(r) = r {
                csv.push_str(&report_to_csv_row(&format!("bin{i}"), r));
            }
        }
    }
    let json_path = args.out.join("metrics.json");
    fs::write(&json_path, serde_json::to_string_pretty(&json).unwrap() + "\n")?;
    let csv_path = args.out.join("metrics.csv");
    fs::write(&csv_path, csv)?;
    manifest.artifact(&json_path);
    manifest.artifact(&csv_path);
    manifest.write(&args.out)?;
    println!("eval: auc {:.4} aupr {:.4} ({} pairs)", global.auc, global.aupr, all_scores.len());
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let seed = env_seed(args.seed)?;
    let (model, meta) = load_model(&args.checkpoint)?;
    let graph = meta.graph();
    let drug = graph.ids(Side::A).get(&args.drug).ok_or_else(|| {
        Error::Lookup(format!(
            "unknown drug id '{}'; nearest: {}",
            args.drug,
            graph.ids(Side::A).nearest(&args.drug, 3).join(", ")
        ))
    })?;
    let cfg = &meta.train;
    let prep = Prepared::build(&graph, cfg)?;
    let pairs: Vec<(usize, usize)> = (0..meta.n_b).map(|g| (drug, g)).collect();
    let scores = model::score_pairs(&model, &prep, cfg, &pairs, seed)?;
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| graph.ids(Side::B).name(a.0).cmp(graph.ids(Side::B).name(b.0)))
    });
    ranked.truncate(args.topk);

    fs::create_dir_all(&args.out)?;
    let mut manifest = ManifestBuilder::new(
        "predict",
        seed,
        serde_json::json!({"drug": args.drug, "topk": args.topk}),
    );
    manifest.input(&args.checkpoint)?;
    let mut text = String::new();
    for (g, s) in &ranked {
        text.push_str(&format!("{}\t{}\n", graph.ids(Side::B).name(*g), s));
    }
    let path = args.out.join("predictions.tsv");
    fs::write(&path, text)?;
    manifest.artifact(&path);
    manifest.write(&args.out)?;
    println!("predict: wrote top {} targets for {}", ranked.len(), args.drug);
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let seed = env_seed(args.seed)?;
    let report = model::gradcheck_report(seed, args.flip_sign.as_deref())?;
    fs::create_dir_all(&args.out)?;
    let mut manifest = ManifestBuilder::new(
        "gradcheck",
        seed,
        serde_json::json!({"flip_sign": args.flip_sign}),
    );
    let mut text = String::new();
    for g in &report.groups {
        let line = format!("group {:14} max_rel_error {:.6e}", g.name, g.max_rel_error);
        println!("{line}");
        text.push_str(&line);
        text.push('\n');
    }
    let ok = report.all_within(1e-4);
    let verdict = format!(
        "{} (max relative error {:.6e}, tolerance 1e-4)",
        if ok { "PASS" } else { "FAIL" },
        report.max_rel_error()
    );
    println!("{verdict}");
    text.push_str(&verdict);
    text.push('\n');
    let path = args.out.join("gradcheck.txt");
    fs::write(&path, text)?;
    manifest.artifact(&path);
    manifest.write(&args.out)?;
    if !ok {
        return Err(Error::Verification(format!(
            "gradient check failed: {verdict}"
        )));
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Dimension(_) | Error::Contract(_) | Error::Config(_) => 1,
        Error::Parse { .. }
        | Error::Schema(_)
        | Error::UndefinedMetric(_)
        | Error::Lookup(_)
        | Error::Checkpoint(_)
        | Error::Io(_) => 2,
        Error::Verification(_) => 3,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match &cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Metapath(a) => cmd_metapath(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Predict(a) => cmd_predict(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
