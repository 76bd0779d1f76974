use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use limelens_core::compare::{compare_explanations, CompareConfig, ComparisonReport};
use limelens_core::data::{load_dataset, load_image, split, synthesize_dataset, write_png, Dataset, Label, SplitRatios};
use limelens_core::lime::{explain, render_overlay_png, segment_grid_dims, Explanation, ExplanationConfig, GridShape, OVERLAY_SUFFIX};
use limelens_core::metrics::{classification_report, confusion, MetricsReport};
use limelens_core::models::{load_weights, save_weights, train_with_observer, Architecture, Network, TrainingConfig};
use limelens_core::numerics::Tensor;

use crate::service::{self, ServiceConfig};
use crate::EXPLANATION_SUFFIX;

#[derive(Parser, Debug)]
#[command(name = "limelens", version, about = "Train malaria cell classifiers and explain their predictions")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic labelled dataset (parasitized/ and uninfected/ PNGs).
    Synth {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a labelled image directory and save its weights.
    Train {
        #[arg(long, value_enum)]
        arch: Arch,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Seeds weight init, the data split and batch shuffling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 150)]
        epochs: usize,
        #[arg(long, default_value_t = 10)]
        patience: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
    },
    /// Print the classification report of a model on a labelled directory.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `test` re-creates the held-out split used by `train` (same seed).
        #[arg(long, value_enum, default_value_t = EvalSplit::All)]
        split: EvalSplit,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Explain one prediction; writes <stem>.explanation.json and <stem>.explained.png.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        lime: LimeArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Compare the explanations of two models over a labelled directory.
    Compare {
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        lime: LimeArgs,
        /// Only the first N images (in directory order).
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value = "comparison.json")]
        out: PathBuf,
        /// Also write both explanations and overlays per image here.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Run the local HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory of *.lmnw weight files.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Request log (newline-delimited JSON); defaults to <models>/requests.ndjson.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Arch {
    Mlp,
    Cnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EvalSplit {
    All,
    Test,
}

#[derive(Args, Debug)]
struct LimeArgs {
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "8x8")]
    grid: String,
}

impl LimeArgs {
    fn config(&self) -> Result<ExplanationConfig> {
        Ok(ExplanationConfig {
            k: self.k,
            num_samples: self.samples,
            seed: self.seed,
            grid: GridShape::parse(&self.grid)?,
            ..ExplanationConfig::default()
        })
    }
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 on a
/// usage error, 2 on a runtime error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let _ = e.print();
                    1
                }
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            2
        }
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { n, size, seed, out } => synth(n, size, seed, &out),
        Command::Train { arch, data, out, size, seed, lr, epochs, patience, batch } => {
            let architecture = match arch {
                Arch::Mlp => Architecture::Mlp,
                Arch::Cnn => Architecture::Cnn,
            };
            let config = TrainingConfig { batch_size: batch, max_epochs: epochs, patience, lr, momentum: 0.9, seed };
            train(architecture, &data, &out, size, &config)
        }
        Command::Evaluate { model, data, split, json } => {
            let report = evaluate(&model, &data, split == EvalSplit::Test)?;
            println!("{report}");
            if let Some(path) = json {
                write_json(&path, &report)?;
            }
            Ok(())
        }
        Command::Explain { model, image, lime, out_dir } => {
            let network = open_model(&model)?;
            let config = lime.config()?;
            let artifacts = explain_path(&network, &image, &config)?;
            let (doc, png) = artifacts.write(&out_dir)?;
            print_explanation(&artifacts.explanation);
            println!("wrote {}", doc.display());
            println!("wrote {}", png.display());
            Ok(())
        }
        Command::Compare { model_a, model_b, data, lime, limit, out, artifacts } => {
            let a = open_model(&model_a)?;
            let b = open_model(&model_b)?;
            let config = CompareConfig { explanation: lime.config()?, ..CompareConfig::default() };
            let report = compare(&a, &b, &data, &config, limit, artifacts.as_deref())?;
            println!("{report}");
            fs::write(&out, report.to_document()?).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Serve { host, port, models, data, log } => {
            let config = ServiceConfig::new(models, data, log);
            let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
            runtime.block_on(service::serve(&host, port, config))
        }
    }
}

fn synth(n: usize, size: usize, seed: u64, out: &Path) -> Result<()> {
    let dataset = synthesize_dataset(n, size, seed)?;
    for label in Label::ALL {
        fs::create_dir_all(out.join(label.name())).with_context(|| format!("creating {}", out.display()))?;
    }
    for sample in dataset.samples() {
        let path = out.join(sample.label.name()).join(format!("{}.png", sample.id));
        write_png(&sample.pixels, &path)?;
    }
    println!("wrote {} images to {}", dataset.len(), out.display());
    Ok(())
}

fn train(architecture: Architecture, data: &Path, out: &Path, size: usize, config: &TrainingConfig) -> Result<()> {
    let dataset = load_dataset(data, size)?;
    let (train_set, val_set, test_set) = split(&dataset, SplitRatios::default(), config.seed)?;
    eprintln!(
        "{}: {} train / {} val / {} test images at {size}x{size}",
        architecture.name(),
        train_set.len(),
        val_set.len(),
        test_set.len()
    );
    let mut network = Network::build(architecture, [3, size, size], config.seed)?;
    network.id = model_id(out);
    let (trained, history) = train_with_observer(&network, &train_set, &val_set, config, |e| {
        eprintln!(
            "epoch {:>3}  train {:.4}  val {:.4}  val acc {:.4}",
            e.epoch, e.train_loss, e.val_loss, e.val_accuracy
        );
    })?;
    eprintln!("stopped after epoch {}, keeping epoch {}", history.stopped_epoch, history.best_epoch);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    save_weights(&trained, out)?;
    println!("{}", report_on(&trained, &test_set)?);
    println!("wrote {}", out.display());
    Ok(())
}

/// Loads a weights file; the model id is the file stem.
pub fn open_model(path: &Path) -> Result<Network> {
    let mut network = load_weights(path)?;
    network.id = model_id(path);
    Ok(network)
}

pub fn model_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn evaluate(model: &Path, data: &Path, test_split: bool) -> Result<MetricsReport> {
    let network = open_model(model)?;
    let size = network.input_shape()[1];
    let dataset = load_dataset(data, size)?;
    let dataset = if test_split { split(&dataset, SplitRatios::default(), network.seed())?.2 } else { dataset };
    report_on(&network, &dataset)
}

fn report_on(network: &Network, dataset: &Dataset) -> Result<MetricsReport> {
    let images: Vec<&Tensor> = dataset.samples().iter().map(|s| &s.pixels).collect();
    let predictions: Vec<Label> = network.predict_batch(&images)?.into_iter().map(Label::from_probability).collect();
    let truths: Vec<Label> = dataset.samples().iter().map(|s| s.label).collect();
    Ok(classification_report(&confusion(&predictions, &truths)?)?)
}

/// An explanation with its serialized document and overlay PNG.
pub struct ExplanationArtifacts {
    pub explanation: Explanation,
    pub document: Vec<u8>,
    pub overlay: Vec<u8>,
}

impl ExplanationArtifacts {
    /// Writes `<image_id>.explanation.json` and `<image_id>.explained.png`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let stem = &self.explanation.image_id;
        let doc = dir.join(format!("{stem}{EXPLANATION_SUFFIX}"));
        let png = dir.join(format!("{stem}{OVERLAY_SUFFIX}"));
        fs::write(&doc, &self.document).with_context(|| format!("writing {}", doc.display()))?;
        fs::write(&png, &self.overlay).with_context(|| format!("writing {}", png.display()))?;
        Ok((doc, png))
    }
}

/// The single explanation path shared by the CLI and the service.
pub fn explain_image(network: &Network, image: &Tensor, image_id: &str, config: &ExplanationConfig) -> Result<ExplanationArtifacts> {
    let [_, h, w] = network.input_shape();
    let segmap = segment_grid_dims(h, w, config.grid)?;
    let explanation = explain(network, image, image_id, &segmap, config)?;
    let document = explanation.to_document()?;
    let overlay = render_overlay_png(image, &segmap, &explanation)?;
    Ok(ExplanationArtifacts { explanation, document, overlay })
}

/// Loads an image file at the model's input size; the image id is the file
/// stem.
pub fn explain_path(network: &Network, image: &Path, config: &ExplanationConfig) -> Result<ExplanationArtifacts> {
    let pixels = load_image(image, network.input_shape()[1])?;
    explain_image(network, &pixels, &model_id(image), config)
}

fn print_explanation(e: &Explanation) {
    println!(
        "{} on {}: {} (p(parasitized) = {:.4}), surrogate r2 = {:.4}",
        e.model_id, e.image_id, e.predicted_class, e.probability, e.r2
    );
    for &id in &e.ranking {
        let s = &e.segments[id];
        let sign = s.sign.map(|s| format!("{s:?}").to_lowercase()).unwrap_or_default();
        println!("  segment {:>3}  weight {:+.5}  {}", id, s.weight, sign);
    }
}

pub fn compare(
    a: &Network,
    b: &Network,
    data: &Path,
    config: &CompareConfig,
    limit: Option<usize>,
    artifacts: Option<&Path>,
) -> Result<ComparisonReport> {
    if a.input_shape() != b.input_shape() {
        bail!("models take different input shapes ({:?} vs {:?})", a.input_shape(), b.input_shape());
    }
    let [_, h, w] = a.input_shape();
    let dataset = load_dataset(data, h)?;
    let dataset = match limit {
        Some(n) => dataset.take(n),
        None => dataset,
    };
    let segmap = segment_grid_dims(h, w, config.explanation.grid)?;
    let mut rows = Vec::with_capacity(dataset.len());
    for sample in dataset.samples() {
        let art_a = explain_image(a, &sample.pixels, &sample.id, &config.explanation)?;
        let art_b = explain_image(b, &sample.pixels, &sample.id, &config.explanation)?;
        let mut row = compare_explanations(&art_a.explanation, &art_b.explanation, &sample.pixels, &segmap, Some(sample.label), config)?;
        if let Some(dir) = artifacts {
            row.artifact_a = Some(art_a.write(&dir.join(&a.id))?.1.display().to_string());
            row.artifact_b = Some(art_b.write(&dir.join(&b.id))?.1.display().to_string());
        }
        rows.push(row);
    }
    Ok(ComparisonReport::from_rows(&a.id, &b.id, config.clone(), rows)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
