mod compare;
mod outdir;

use std::fmt;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cast_core::analysis::{attention_to_csv, report_to_csv, similarity_distribution, record_attention};
use cast_core::config::{Override, RunConfig};
use cast_core::corpus::{dataset_stats, generate_corpus, read_corpus, split_dataset, write_corpus, write_stats_csv, CorpusSample, Property};
use cast_core::fusion::{encode_attention_dump, Variant};
use cast_core::nn::Checkpoint;
use cast_core::trainer::{
    evaluate, finetune, frozen_parts, load_model, pretrain_contrastive, pretrain_mnp, Dataset, SplitName,
};

use outdir::{sha256_hex, OutDir};

#[derive(Parser)]
#[command(name = "cast", version, about = "Crystal graph and text fusion: corpus, training and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration (defaults apply to anything it leaves out)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set finetune.peak_lr=1e-3`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory for every artifact of the run; must not exist yet
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PretrainTask {
    Mnp,
    Contrastive,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Val => SplitName::Val,
            SplitArg::Test => SplitName::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with descriptions, targets and filter decisions
    GenCorpus {
        #[command(flatten)]
        common: Common,
        /// Number of samples (`corpus.size`)
        #[arg(long)]
        n: Option<usize>,
        /// Corpus seed (`corpus.seed`)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain by masked-node prediction or contrastive alignment
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "mnp")]
        task: PretrainTask,
        /// `cast` or `graph-only` (masked-node prediction only)
        #[arg(long, default_value = "cast")]
        variant: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fine-tune a regression head, optionally from a pretrained checkpoint
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Pretrained checkpoint; fresh initialization when absent
        #[arg(long)]
        init: Option<PathBuf>,
        /// cast, graph-only, text-only, concat, concat-frozen-text or desc
        #[arg(long, default_value = "cast")]
        variant: String,
        /// E_tot, bandgap, logG or logK
        #[arg(long)]
        property: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a fine-tuned checkpoint on one split
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Pairwise cosine similarity of node attention rows per fusion layer
    AnalyzeAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// One distribution per head instead of pooling heads
        #[arg(long)]
        per_head: bool,
        /// Comma-separated fusion layers to report (all by default)
        #[arg(long, value_delimiter = ',')]
        layers: Vec<usize>,
        /// Also write the binary attention dump of every analyzed sample
        #[arg(long)]
        dump: bool,
        /// Write long-format attention CSVs for the first K samples
        #[arg(long, default_value_t = 0, value_name = "K")]
        export: usize,
    },
    /// Baselines, CAST-base and CAST over several seeds, as a mean (std) MAE table
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        properties: Vec<String>,
        /// Subset of table rows, comma-separated
        #[arg(long, value_delimiter = ',')]
        rows: Vec<String>,
    },
}

/// Marks failures caused by the configuration rather than the run.
#[derive(Debug)]
struct ConfigFailure(String);

impl fmt::Display for ConfigFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigFailure {}

fn config_err(e: impl fmt::Display) -> anyhow::Error {
    ConfigFailure(e.to_string()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigFailure>() || matches!(cause.downcast_ref(), Some(cast_core::Error::Config { .. })) {
            return 3;
        }
    }
    4
}

struct Run {
    command: &'static str,
    config: RunConfig,
    overrides: Vec<String>,
    inputs: serde_json::Map<String, serde_json::Value>,
    out: OutDir,
}

impl Run {
    /// Loads the configuration, folding flag values in after `--set`, and
    /// reserves the output directory.
    fn start(command: &'static str, common: &Common, flags: Vec<String>) -> Result<Self> {
        let text = match &common.config {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| config_err(format!("reading config {}: {e}", p.display())))?,
            None => String::new(),
        };
        let overrides: Vec<String> = common.set.iter().cloned().chain(flags).collect();
        let parsed = overrides
            .iter()
            .map(|o| o.parse::<Override>().map_err(config_err))
            .collect::<Result<Vec<_>>>()?;
        let config = RunConfig::load(&text, &parsed).map_err(config_err)?;
        let mut inputs = serde_json::Map::new();
        if let Some(p) = &common.config {
            inputs.insert("config".into(), sha256_hex(text.as_bytes()).into());
            inputs.insert("config_path".into(), p.display().to_string().into());
        }
        let out = OutDir::create(&common.out)?;
        Ok(Self {
            command,
            config,
            overrides,
            inputs,
            out,
        })
    }

    fn read_input(&mut self, key: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(key.into(), sha256_hex(&bytes).into());
        Ok(bytes)
    }

    fn corpus(&mut self, path: &Path) -> Result<Vec<CorpusSample>> {
        let bytes = self.read_input("corpus", path)?;
        read_corpus(BufReader::new(bytes.as_slice())).with_context(|| format!("parsing {}", path.display()))
    }

    fn checkpoint(&mut self, path: &Path) -> Result<Checkpoint> {
        let bytes = self.read_input("checkpoint", path)?;
        Checkpoint::decode(&bytes).with_context(|| format!("decoding {}", path.display()))
    }

    fn finish(mut self) -> Result<PathBuf> {
        let snapshot = self.config.to_toml();
        self.out.write("config.toml", snapshot.as_bytes())?;
        let mut m = serde_json::Map::new();
        m.insert("tool".into(), "cast".into());
        m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        m.insert("command".into(), self.command.into());
        m.insert("argv".into(), std::env::args().collect::<Vec<_>>().into());
        m.insert("overrides".into(), self.overrides.into());
        m.insert("inputs".into(), self.inputs.into());
        m.insert(
            "reproduce".into(),
            "rerun the same command with --config config.toml and no --set flags".into(),
        );
        self.out.commit(m)
    }
}

fn parse_variant(s: &str) -> Result<Variant> {
    s.parse::<Variant>().map_err(config_err)
}

fn quoted_list<T: fmt::Display>(v: &[T], quote: bool) -> String {
    let items: Vec<String> = v
        .iter()
        .map(|x| if quote { format!("\"{x}\"") } else { x.to_string() })
        .collect();
    format!("[{}]", items.join(","))
}

fn json_pretty(v: &serde_json::Value) -> Vec<u8> {
    serde_json::to_string_pretty(v).expect("json").into_bytes()
}

fn gen_corpus(common: &Common, n: Option<usize>, seed: Option<u64>) -> Result<PathBuf> {
    let mut flags = Vec::new();
    if let Some(n) = n {
        flags.push(format!("corpus.size={n}"));
    }
    if let Some(s) = seed {
        flags.push(format!("corpus.seed={s}"));
    }
    let mut run = Run::start("gen-corpus", common, flags)?;
    let samples = generate_corpus(&run.config.corpus)?;
    let mut buf = Vec::new();
    write_corpus(&mut buf, &samples)?;
    run.out.write("corpus.jsonl", &buf)?;

    let kept: Vec<&CorpusSample> = samples.iter().filter(|s| s.kept()).collect();
    let mut rows = vec![dataset_stats("all", &kept)];
    if kept.len() >= 3 {
        let split = split_dataset(kept.len(), run.config.data.split_ratios, run.config.data.split_seed)?;
        for (name, idx) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
            let part: Vec<&CorpusSample> = idx.iter().map(|&i| kept[i]).collect();
            rows.push(dataset_stats(name, &part));
        }
    }
    let mut stats = Vec::new();
    write_stats_csv(&mut stats, &rows)?;
    run.out.write("stats.csv", &stats)?;
    log::info!("{} samples, {} kept", samples.len(), kept.len());
    run.finish()
}

fn pretrain(common: &Common, corpus: &Path, task: PretrainTask, variant: &str, seed: Option<u64>) -> Result<PathBuf> {
    let section = match task {
        PretrainTask::Mnp => "pretrain",
        PretrainTask::Contrastive => "contrastive",
    };
    let flags = seed.map(|s| format!("{section}.seed={s}")).into_iter().collect();
    let mut run = Run::start("pretrain", common, flags)?;
    let samples = run.corpus(corpus)?;
    let data = Dataset::prepare(&samples, &run.config.model, &run.config.data)?;
    let (ckpt, log) = match task {
        PretrainTask::Mnp => {
            let v = parse_variant(variant)?;
            let o = pretrain_mnp(&data, v, &run.config.model, &run.config.pretrain)?;
            (o.checkpoint, o.log)
        }
        PretrainTask::Contrastive => pretrain_contrastive(&data, &run.config.model, &run.config.contrastive)?,
    };
    run.out.write("checkpoint.ckpt", &ckpt.encode())?;
    run.out.write("runlog.csv", log.to_csv().as_bytes())?;
    run.out.write("summary.json", log.summary_json().as_bytes())?;
    run.out.write("vocab.txt", data.vocab.to_text().as_bytes())?;
    run.finish()
}

fn finetune_cmd(
    common: &Common,
    corpus: &Path,
    init: Option<&Path>,
    variant: &str,
    property: Option<&str>,
    seed: Option<u64>,
) -> Result<PathBuf> {
    let mut flags = Vec::new();
    if let Some(p) = property {
        let p: Property = p.parse().map_err(config_err)?;
        flags.push(format!("finetune.task=\"regression:{p}\""));
    }
    if let Some(s) = seed {
        flags.push(format!("finetune.seed={s}"));
    }
    let mut run = Run::start("finetune", common, flags)?;
    let variant = parse_variant(variant)?;
    let samples = run.corpus(corpus)?;
    let init = init.map(|p| run.checkpoint(p)).transpose()?;
    let data = Dataset::prepare(&samples, &run.config.model, &run.config.data)?;
    let out = finetune(init.as_ref(), &data, variant, &run.config.model, &run.config.finetune)?;
    run.out.write("checkpoint.ckpt", &out.checkpoint.encode())?;
    run.out.write("runlog.csv", out.log.to_csv().as_bytes())?;
    run.out.write("summary.json", out.log.summary_json().as_bytes())?;
    let mut metrics = serde_json::Map::new();
    for (name, split) in [("val_mae", SplitName::Val), ("test_mae", SplitName::Test)] {
        let idx = data.indices(split);
        if !idx.is_empty() {
            let e = evaluate(&out.trained, &data, idx)?;
            metrics.insert(name.into(), e.mae.into());
            if split == SplitName::Test {
                run.out.write("predictions.csv", e.to_csv().as_bytes())?;
            }
        }
    }
    run.out.write("metrics.json", &json_pretty(&metrics.into()))?;
    run.finish()
}

/// Corpus rows prepared with the vocabulary and schema stored in the
/// checkpoint.
fn frozen_dataset(run: &mut Run, corpus: &Path, ckpt: &Path) -> Result<(cast_core::trainer::Trained, Dataset)> {
    let samples = run.corpus(corpus)?;
    let trained = load_model(&run.checkpoint(ckpt)?)?;
    let (vocab, schema) = frozen_parts(&trained)?;
    let data = Dataset::with_frozen(&samples, &trained.meta.config, &run.config.data, vocab, schema)?;
    Ok((trained, data))
}

fn evaluate_cmd(common: &Common, corpus: &Path, ckpt: &Path, split: SplitArg) -> Result<PathBuf> {
    let mut run = Run::start("evaluate", common, Vec::new())?;
    let (trained, data) = frozen_dataset(&mut run, corpus, ckpt)?;
    let e = evaluate(&trained, &data, data.indices(split.into()))?;
    run.out.write("predictions.csv", e.to_csv().as_bytes())?;
    let metrics = serde_json::json!({
        "property": e.property.to_string(),
        "split": format!("{:?}", SplitName::from(split)).to_lowercase(),
        "count": e.predictions.len(),
        "mae": e.mae,
    });
    run.out.write("metrics.json", &json_pretty(&metrics))?;
    run.finish()
}

#[allow(clippy::too_many_arguments)]
fn analyze(
    common: &Common,
    corpus: &Path,
    ckpt: &Path,
    split: SplitArg,
    per_head: bool,
    layers: &[usize],
    dump: bool,
    export: usize,
) -> Result<PathBuf> {
    let mut flags = Vec::new();
    if per_head {
        flags.push("analysis.per_head=true".to_string());
    }
    if !layers.is_empty() {
        flags.push(format!("analysis.layers={}", quoted_list(layers, false)));
    }
    let mut run = Run::start("analyze-attention", common, flags)?;
    let (trained, data) = frozen_dataset(&mut run, corpus, ckpt)?;
    let idx = data.indices(split.into()).to_vec();
    let report = similarity_distribution(&trained, &data, &idx, &run.config.analysis)?;
    run.out.write("similarity.csv", report_to_csv(&report).as_bytes())?;
    run.out.write("similarity.json", report.summary_json().as_bytes())?;
    if dump || export > 0 {
        let mut order: Vec<usize> = idx.clone();
        order.sort_by(|&a, &b| data.inputs[a].id.cmp(&data.inputs[b].id));
        let mut records = Vec::new();
        for (k, &i) in order.iter().enumerate() {
            let s = record_attention(&trained, &data.vocab, &data.inputs[i])?;
            if k < export {
                run.out.write(&format!("attention/{}.csv", s.sample_id), attention_to_csv(&s).as_bytes())?;
            }
            if dump {
                records.extend(s.to_records());
            }
        }
        if dump {
            run.out.write("attention.bin", &encode_attention_dump(&records))?;
        }
    }
    run.finish()
}

fn compare_cmd(common: &Common, corpus: &Path, seeds: &[u64], properties: &[String], rows: &[String]) -> Result<PathBuf> {
    let mut flags = Vec::new();
    if !seeds.is_empty() {
        flags.push(format!("compare.seeds={}", quoted_list(seeds, false)));
    }
    if !properties.is_empty() {
        flags.push(format!("compare.properties={}", quoted_list(properties, true)));
    }
    if !rows.is_empty() {
        flags.push(format!("compare.rows={}", quoted_list(rows, true)));
    }
    let mut run = Run::start("compare", common, flags)?;
    compare::selected_rows(&run.config).map_err(config_err)?;
    let samples = run.corpus(corpus)?;
    let data = Dataset::prepare(&samples, &run.config.model, &run.config.data)?;
    let cells = compare::run(&run.config, &data)?;
    run.out.write("results.csv", compare::results_csv(&cells).as_bytes())?;
    run.out.write("table.md", compare::table(&cells, &run.config.compare.properties).as_bytes())?;
    for c in &cells {
        run.out.write(
            &format!("logs/{}-{}-{}.csv", c.row, c.property, c.seed),
            c.log.to_csv().as_bytes(),
        )?;
    }
    print!("{}", compare::table(&cells, &run.config.compare.properties));
    run.finish()
}

fn dispatch(cli: Cli) -> Result<PathBuf> {
    match cli.command {
        Command::GenCorpus { common, n, seed } => gen_corpus(&common, n, seed),
        Command::Pretrain {
            common,
            corpus,
            task,
            variant,
            seed,
        } => pretrain(&common, &corpus, task, &variant, seed),
        Command::Finetune {
            common,
            corpus,
            init,
            variant,
            property,
            seed,
        } => finetune_cmd(&common, &corpus, init.as_deref(), &variant, property.as_deref(), seed),
        Command::Evaluate {
            common,
            corpus,
            checkpoint,
            split,
        } => evaluate_cmd(&common, &corpus, &checkpoint, split),
        Command::AnalyzeAttention {
            common,
            corpus,
            checkpoint,
            split,
            per_head,
            layers,
            dump,
            export,
        } => analyze(&common, &corpus, &checkpoint, split, per_head, &layers, dump, export),
        Command::Compare {
            common,
            corpus,
            seeds,
            properties,
            rows,
        } => compare_cmd(&common, &corpus, &seeds, &properties, &rows),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(dir) => {
            eprintln!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

