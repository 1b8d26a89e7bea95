//! Command-line front end: train/eval on TSV or synthetic data, run the
//! gradient-check suite, export activation grids, and report parameter
//! counts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use clstm::data::{self, PairDataset, Split, Task, Vocab};
use clstm::error::Error;
use clstm::model::count_report;
use clstm::training::{self, Hyper};
use clstm::{checkpoint, Arch, CellKind, DirectionMode, Head, Model, ModelConfig, Result};

#[derive(Parser)]
#[command(name = "clstm", about = "Coupled-LSTM sentence pair matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file and write checkpoint + metric log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split of the configured dataset.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Finite-difference check of the backward pass over a matrix of small
    /// models; nonzero exit if any parameter exceeds the tolerance.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Export one hidden slice of the final aggregated grid as CSV.
    Activations {
        #[arg(long)]
        checkpoint: PathBuf,
        /// First sentence, whitespace-separated tokens.
        #[arg(long)]
        x: String,
        /// Second sentence, whitespace-separated tokens.
        #[arg(long)]
        y: String,
        /// Neuron index within the hidden vector.
        #[arg(long, default_value_t = 0)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print parameter counts for the configured model and the reference
    /// configurations.
    Count {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic dataset and write its splits as TSV files.
    Synth {
        /// Task name: same-seq, contains, or cross-match.
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 1000)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Table-1 defaults for the RTE-style setting.
fn default_hidden() -> usize {
    50
}
fn default_embed_dim() -> usize {
    100
}
fn default_one() -> usize {
    1
}
fn default_lr() -> f64 {
    0.005
}
fn default_l2() -> f64 {
    1e-5
}
fn default_clip() -> f64 {
    10.0
}
fn default_eps() -> f64 {
    1e-8
}
fn default_epochs() -> usize {
    25
}
fn default_arch() -> String {
    "clstm".into()
}
fn default_cell() -> String {
    "tc".into()
}
fn default_directions() -> String {
    "four".into()
}
fn default_task() -> String {
    "classification".into()
}
fn default_classes() -> usize {
    2
}
fn default_synth_size() -> usize {
    1000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelSection {
    arch: String,
    cell: String,
    blocks: usize,
    hidden: usize,
    embed_dim: usize,
    pool_p: usize,
    pool_q: usize,
    fc_width: usize,
    directions: String,
    shared_encoders: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            arch: default_arch(),
            cell: default_cell(),
            blocks: default_one(),
            hidden: default_hidden(),
            embed_dim: default_embed_dim(),
            pool_p: default_one(),
            pool_q: default_one(),
            fc_width: default_hidden(),
            directions: default_directions(),
            shared_encoders: false,
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DataSection {
    #[serde(default = "default_task")]
    task: String,
    #[serde(default = "default_classes")]
    classes: usize,
    /// Synthetic task name; mutually exclusive with the TSV paths.
    #[serde(default)]
    synth: Option<String>,
    #[serde(default = "default_synth_size")]
    synth_size: usize,
    #[serde(default)]
    train: Option<PathBuf>,
    #[serde(default)]
    dev: Option<PathBuf>,
    #[serde(default)]
    test: Option<PathBuf>,
    /// GloVe-format text embeddings used to initialize the lookup table.
    #[serde(default)]
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OptimSection {
    lr: f64,
    l2: f64,
    clip: f64,
    eps: f64,
    epochs: usize,
}

impl Default for OptimSection {
    fn default() -> Self {
        OptimSection {
            lr: default_lr(),
            l2: default_l2(),
            clip: default_clip(),
            eps: default_eps(),
            epochs: default_epochs(),
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    data: DataSection,
    #[serde(default)]
    optim: OptimSection,
}

impl RunConfig {
    fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn task(&self) -> Result<Task> {
        match self.data.task.as_str() {
            "classification" => Ok(Task::Classification {
                classes: self.data.classes,
            }),
            "ranking" => Ok(Task::Ranking),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }

    fn dataset(&self, seed: u64) -> Result<PairDataset> {
        if let Some(name) = &self.data.synth {
            if self.data.train.is_some() {
                return Err(Error::Config(
                    "config sets both synth task and TSV paths".into(),
                ));
            }
            return data::synth_tasks(name, self.data.synth_size, seed);
        }
        let task = self.task()?;
        let need = |p: &Option<PathBuf>, which: &str| -> Result<PathBuf> {
            p.clone()
                .ok_or_else(|| Error::Config(format!("data.{which} path missing")))
        };
        let train = data::load_tsv(&need(&self.data.train, "train")?, task)?;
        let dev = data::load_tsv(&need(&self.data.dev, "dev")?, task)?;
        let test = data::load_tsv(&need(&self.data.test, "test")?, task)?;
        Ok(data::build_dataset(train, dev, test, task))
    }

    fn model_config(&self, task: Task, vocab_size: usize) -> Result<ModelConfig> {
        let arch = match self.model.arch.as_str() {
            "clstm" => Arch::Clstm,
            "nbow" => Arch::Nbow,
            "parallel" => Arch::Parallel,
            other => return Err(Error::Config(format!("unknown arch {other:?}"))),
        };
        let cell_kind = match self.model.cell.as_str() {
            "lc" => CellKind::Lc,
            "tc" => CellKind::Tc,
            other => return Err(Error::Config(format!("unknown cell {other:?}"))),
        };
        let directions = match self.model.directions.as_str() {
            "single" => DirectionMode::Single,
            "four" => DirectionMode::Four,
            other => return Err(Error::Config(format!("unknown directions {other:?}"))),
        };
        let head = match task {
            Task::Classification { classes } => Head::Classification(classes),
            Task::Ranking => Head::Ranking,
        };
        let cfg = ModelConfig {
            arch,
            cell_kind,
            blocks: self.model.blocks,
            hidden: self.model.hidden,
            embed_dim: self.model.embed_dim,
            pool_p: self.model.pool_p,
            pool_q: self.model.pool_q,
            fc_width: self.model.fc_width,
            head,
            directions,
            vocab_size,
            shared_encoders: self.model.shared_encoders,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_train(config: &Path, seed: u64, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let dataset = cfg.dataset(seed)?;
    let model_cfg = cfg.model_config(dataset.task, dataset.vocab.len())?;
    let mut model = Model::new(model_cfg, seed)?;
    if let Some(path) = &cfg.data.embeddings {
        let (matrix, coverage) =
            data::load_embeddings(path, &dataset.vocab, cfg.model.embed_dim, seed)?;
        *model.registry.get_mut(model.embedding_id()) = matrix;
        println!("embedding coverage: {:.1}%", coverage * 100.0);
    }
    let hyper = Hyper {
        lr: cfg.optim.lr,
        l2: cfg.optim.l2,
        clip: cfg.optim.clip,
        eps: cfg.optim.eps,
        epochs: cfg.optim.epochs,
        seed,
    };
    let start = std::time::Instant::now();
    let outcome = training::train(&mut model, &dataset, &hyper)?;
    let elapsed = start.elapsed();
    std::fs::create_dir_all(out)?;
    // the metric log holds no wall-clock fields so identical runs stay
    // byte-identical; timing goes to stdout only
    let log_path = out.join("metrics.tsv");
    std::fs::write(&log_path, outcome.log.join("\n") + "\n")?;
    let ckpt_path = out.join("model.ckpt");
    checkpoint::save(&ckpt_path, &model, &dataset.vocab)?;
    let test = training::evaluate(&model, &dataset, Split::Test)?;
    println!(
        "best dev {:.4} at epoch {}; test {:.4}",
        outcome.best_metric, outcome.best_epoch, test
    );
    println!("wrote {} and {}", ckpt_path.display(), log_path.display());
    println!("trained in {:.1}s", elapsed.as_secs_f64());
    Ok(())
}

/// Re-expresses dataset token ids in the checkpoint's vocabulary so a model
/// trained elsewhere sees the ids it was trained with.
fn remap(dataset: &mut PairDataset, vocab: &Vocab) {
    let translate = |ids: &mut Vec<u32>, old: &Vocab| {
        for id in ids {
            *id = vocab.get(old.token(*id));
        }
    };
    let old = dataset.vocab.clone();
    for s in &mut dataset.samples {
        translate(&mut s.x, &old);
        translate(&mut s.y, &old);
    }
    dataset.vocab = vocab.clone();
}

fn cmd_eval(config: &Path, ckpt: &Path, seed: u64) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let mut dataset = cfg.dataset(seed)?;
    let (model, vocab) = checkpoint::load(ckpt)?;
    remap(&mut dataset, &vocab);
    for (split, name) in [(Split::Dev, "dev"), (Split::Test, "test")] {
        let metric = training::evaluate(&model, &dataset, split)?;
        let label = match dataset.task {
            Task::Classification { .. } => "accuracy",
            Task::Ranking => "P@1",
        };
        println!("{name}\t{label}\t{metric:.4}");
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let x: Vec<u32> = vec![2, 3, 4];
    let y: Vec<u32> = vec![5, 6, 2, 7];
    let mut worst = 0.0f64;
    let mut failed = false;
    for cell_kind in [CellKind::Lc, CellKind::Tc] {
        for blocks in [1usize, 2] {
            for head in [Head::Ranking, Head::Classification(3)] {
                for hidden in [2usize, 5] {
                    let cfg = ModelConfig {
                        arch: Arch::Clstm,
                        cell_kind,
                        blocks,
                        hidden,
                        embed_dim: 6,
                        pool_p: 2,
                        pool_q: 2,
                        fc_width: 4,
                        head,
                        directions: DirectionMode::Four,
                        vocab_size: 8,
                        shared_encoders: false,
                    };
                    let report =
                        clstm::model::model_gradcheck(&cfg, seed, &x, &y, 1e-5, 1e-4)?;
                    let tag = format!(
                        "{:?} blocks={} {:?} d={}",
                        cell_kind, blocks, head, hidden
                    );
                    println!(
                        "{tag}: max rel err {:.3e} [{}]",
                        report.max_rel_err,
                        if report.ok { "ok" } else { "FAIL" }
                    );
                    if !report.ok {
                        failed = true;
                        println!("{}", report.summary());
                    }
                    worst = worst.max(report.max_rel_err);
                }
            }
        }
    }
    println!("worst over all configurations: {worst:.3e}");
    if failed {
        return Err(Error::Numeric(
            "gradient check exceeded tolerance 1e-4".into(),
        ));
    }
    Ok(())
}

fn cmd_activations(ckpt: &Path, x: &str, y: &str, k: usize, out: &Path) -> Result<()> {
    let (model, vocab) = checkpoint::load(ckpt)?;
    if k >= model.cfg.hidden {
        return Err(Error::Config(format!(
            "neuron index {k} out of range (hidden width {})",
            model.cfg.hidden
        )));
    }
    let x_tokens: Vec<String> = x.split_whitespace().map(|t| t.to_lowercase()).collect();
    let y_tokens: Vec<String> = y.split_whitespace().map(|t| t.to_lowercase()).collect();
    if x_tokens.is_empty() || y_tokens.is_empty() {
        return Err(Error::Config("both sentences need at least one token".into()));
    }
    let x_ids: Vec<u32> = x_tokens.iter().map(|t| vocab.get(t)).collect();
    let y_ids: Vec<u32> = y_tokens.iter().map(|t| vocab.get(t)).collect();
    let grid = model.final_grid(&x_ids, &y_ids)?;
    let mut csv = String::new();
    csv.push_str(&format!(",{}\n", y_tokens.join(",")));
    for (i, tok) in x_tokens.iter().enumerate() {
        csv.push_str(tok);
        for j in 0..y_tokens.len() {
            // `{}` prints the shortest f64 representation that parses back
            // to the same value, so the file round-trips exactly
            csv.push_str(&format!(",{}", grid.at(i, j)[k]));
        }
        csv.push('\n');
    }
    std::fs::write(out, csv)?;
    println!(
        "wrote {} ({}x{} slice, neuron {k})",
        out.display(),
        x_tokens.len(),
        y_tokens.len()
    );
    Ok(())
}

fn cmd_count(config: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let task = cfg.task()?;
    // vocab size is irrelevant to the non-embedding count
    let model_cfg = cfg.model_config(task, 100)?;
    println!("configured model:");
    print!("{}", count_report(&model_cfg)?);
    println!();
    println!("reference configurations (d=50, embeddings excluded):");
    for (name, cell_kind, blocks, target) in [
        ("LC-LSTM 1 block", CellKind::Lc, 1usize, 45_000.0f64),
        ("TC-LSTM 1 block", CellKind::Tc, 1, 77_500.0),
        ("LC-LSTM 4 blocks", CellKind::Lc, 4, 135_000.0),
        ("TC-LSTM 4 blocks", CellKind::Tc, 4, 190_000.0),
    ] {
        let rc = ModelConfig {
            arch: Arch::Clstm,
            cell_kind,
            blocks,
            hidden: 50,
            embed_dim: 100,
            pool_p: 1,
            pool_q: 1,
            fc_width: 50,
            head: Head::Classification(3),
            directions: DirectionMode::Four,
            vocab_size: 100,
            shared_encoders: false,
        };
        let model = Model::new(rc, 0)?;
        let count = model.registry.count_params(false) as f64;
        let dev = (count - target) / target * 100.0;
        println!(
            "  {name}: {count} parameters, target {target}, deviation {dev:+.1}%"
        );
    }
    Ok(())
}

fn cmd_synth(task: &str, size: usize, seed: u64, out: &Path) -> Result<()> {
    let dataset = data::synth_tasks(task, size, seed)?;
    std::fs::create_dir_all(out)?;
    for (split, name) in [
        (Split::Train, "train"),
        (Split::Dev, "dev"),
        (Split::Test, "test"),
    ] {
        let mut text = String::new();
        for &i in dataset.split(split) {
            let s = &dataset.samples[i];
            let words = |ids: &[u32]| {
                ids.iter()
                    .map(|&t| dataset.vocab.token(t))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            text.push_str(&format!("{}\t{}\t{}\n", s.label, words(&s.x), words(&s.y)));
        }
        let path = out.join(format!("{name}.tsv"));
        std::fs::write(&path, text)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => cmd_train(&config, seed, &out),
        Command::Eval {
            config,
            checkpoint,
            seed,
        } => cmd_eval(&config, &checkpoint, seed),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
        Command::Activations {
            checkpoint,
            x,
            y,
            k,
            out,
        } => cmd_activations(&checkpoint, &x, &y, k, &out),
        Command::Count { config } => cmd_count(&config),
        Command::Synth {
            task,
            size,
            seed,
            out,
        } => cmd_synth(&task, size, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Numeric(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
