//! `busseg`: synthesize, train, segment, evaluate, extract shape features,
//! select features and classify, one subcommand per stage.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use busseg::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use busseg::config::parse_config;
use busseg::data::{
    augment, list_pngs, load_dataset, preprocess, read_image, read_manifest, read_mask, save_dataset, split, synth_phantoms, write_json,
    write_mask, AugmentPlan, Label, Sample,
};
use busseg::error::ErrorClass;
use busseg::eval::evaluate_dir;
use busseg::gan::{segment_images, write_history, DiscriminatorConfig, GeneratorConfig, Trainer};
use busseg::shape::{classify_evaluate, efs_select, encode_labels, ClassificationReport, CvScheme, FeatureTable, ForestConfig};
use busseg::tensor::RngStream;
use busseg::Error;

#[derive(Parser)]
#[command(name = "busseg", version, about = "Breast-ultrasound tumor segmentation and shape classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic phantoms in the dataset layout.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the generator/discriminator pair and write a checkpoint.
    Train(TrainArgs),
    /// Segment one image (or every PNG in a directory).
    Segment {
        #[arg(long)]
        ckpt: PathBuf,
        /// PNG file or directory of PNGs.
        #[arg(long)]
        image: PathBuf,
        /// Mask file, or a directory when `--image` is one.
        #[arg(long)]
        out: PathBuf,
        /// Seed of the inference dropout stream.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        batch: usize,
    },
    /// Score predicted masks against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shape features of every mask in a directory.
    Features {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exhaustive feature-group selection.
    Efs {
        #[arg(long)]
        features: PathBuf,
        /// CSV `id,label`.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `loocv` or `kfold:K`.
        #[arg(long, default_value = "loocv")]
        cv: CvScheme,
        #[command(flatten)]
        forest: ForestArgs,
    },
    /// Leave-one-out random-forest classification on a feature subset.
    Classify {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Comma-separated feature-group names.
        #[arg(long)]
        subset: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        forest: ForestArgs,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `key = value` file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long = "lambda-l1")]
    lambda_l1: Option<String>,
    #[arg(long = "alpha-ssim")]
    alpha_ssim: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long = "split-seed")]
    split_seed: Option<String>,
    /// Expand the training split with the flip/rotation/gamma/scale variants.
    #[arg(long)]
    augment: bool,
    /// Loss history CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long = "rf-seed", default_value_t = 0)]
    rf_seed: u64,
}

impl ForestArgs {
    fn config(&self) -> ForestConfig {
        ForestConfig {
            trees: self.trees,
            seed: self.rf_seed,
            ..ForestConfig::default()
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SplitIds<'a> {
    train: Vec<&'a str>,
    val: Vec<&'a str>,
    test: Vec<&'a str>,
}

fn ids(s: &[Sample]) -> Vec<&str> {
    s.iter().map(|s| s.id.as_str()).collect()
}

fn train(a: &TrainArgs) -> Result<()> {
    let overrides: Vec<(String, String)> = [
        ("epochs", &a.epochs),
        ("batch_size", &a.batch),
        ("lr", &a.lr),
        ("lambda_l1", &a.lambda_l1),
        ("alpha_ssim", &a.alpha_ssim),
        ("seed", &a.seed),
        ("split_seed", &a.split_seed),
    ]
    .into_iter()
    .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
    .collect();
    let cfg = parse_config(a.config.as_deref(), &overrides)?;
    let samples: Vec<Sample> = load_dataset(&a.data)
        .with_context(|| format!("loading {}", a.data.display()))?
        .iter()
        .map(preprocess)
        .collect();
    let parts = split(&samples, &cfg.split)?;
    for w in &parts.warnings {
        log::warn!("{w}");
    }
    let train_set = if a.augment {
        let plan = AugmentPlan::default();
        parts.train.iter().flat_map(|s| augment(s, &plan)).collect()
    } else {
        parts.train.clone()
    };
    log::info!(
        "training on {} samples ({} val, {} test held out) for {} epochs",
        train_set.len(),
        parts.val.len(),
        parts.test.len(),
        cfg.train.epochs
    );
    let mut trainer = Trainer::new(cfg.train, cfg.weights, GeneratorConfig::default(), DiscriminatorConfig::default())?;
    trainer.fit(&train_set)?;
    ensure_parent(&a.out)?;
    save_checkpoint(&Checkpoint::from_trainer(&trainer), &a.out)?;
    let history = a.history.clone().unwrap_or_else(|| sibling(&a.out, ".history.csv"));
    write_history(&history, &trainer.history)?;
    write_json(
        &sibling(&a.out, ".split.json"),
        &SplitIds {
            train: ids(&parts.train),
            val: ids(&parts.val),
            test: ids(&parts.test),
        },
    )?;
    Ok(())
}

fn segment(ckpt: &Path, image: &Path, out: &Path, seed: u64, batch: usize) -> Result<()> {
    let (ckpt, integrity) = load_checkpoint(ckpt)?;
    if !integrity.is_ok() {
        return Err(Error::Data("checkpoint checksum mismatch; refusing to segment with corrupted weights".into()).into());
    }
    let mut gen = ckpt.generator()?;
    let mut rng = RngStream::new(seed);
    if image.is_dir() {
        let files = list_pngs(image)?;
        let images = files.values().map(|p| read_image(p)).collect::<busseg::Result<Vec<_>>>()?;
        let masks = segment_images(&mut gen, &images, batch, &mut rng)?;
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        for (stem, m) in files.keys().zip(&masks) {
            write_mask(&out.join(format!("{stem}.png")), m)?;
        }
    } else {
        let img = read_image(image)?;
        let m = segment_images(&mut gen, &[img], 1, &mut rng)?.remove(0);
        ensure_parent(out)?;
        write_mask(out, &m)?;
    }
    Ok(())
}

fn features(masks: &Path, out: &Path) -> Result<()> {
    let files = list_pngs(masks)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no PNG masks in {}", masks.display())).into());
    }
    let loaded = files
        .iter()
        .map(|(stem, p)| Ok((stem.clone(), read_mask(p)?)))
        .collect::<busseg::Result<Vec<_>>>()?;
    let table = FeatureTable::from_masks(&loaded)?;
    ensure_parent(out)?;
    table.write_csv(out)?;
    Ok(())
}

fn labelled_table(features: &Path, labels: &Path) -> Result<(FeatureTable, Vec<Label>)> {
    let table = FeatureTable::read_csv(features).with_context(|| format!("reading {}", features.display()))?;
    let manifest: BTreeMap<String, Label> = read_manifest(labels).with_context(|| format!("reading {}", labels.display()))?;
    let missing: Vec<&String> = table.ids.iter().filter(|id| !manifest.contains_key(*id)).collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("no label for feature rows {missing:?}")).into());
    }
    let labels = table.ids.iter().map(|id| manifest[id]).collect();
    Ok((table, labels))
}

fn efs(features: &Path, labels: &Path, out: &Path, cv: CvScheme, forest: ForestConfig) -> Result<()> {
    let (table, labels) = labelled_table(features, labels)?;
    let y = encode_labels(&labels)?;
    let result = efs_select(&table.rows, &y, &table.groups(), cv, &forest)?;
    log::info!("selected {:?} at accuracy {:.4}", result.chosen_names(), result.accuracy);
    ensure_parent(out)?;
    write_json(out, &result)?;
    Ok(())
}

#[derive(Serialize)]
struct ClassificationOut<'a> {
    subset: Vec<&'a str>,
    cv: &'static str,
    forest: ForestConfig,
    #[serde(flatten)]
    report: ClassificationReport,
}

fn classify(features: &Path, labels: &Path, subset: &str, out: &Path, forest: ForestConfig) -> Result<()> {
    let (table, labels) = labelled_table(features, labels)?;
    let groups = table.groups();
    let names: Vec<&str> = subset.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(Error::InvalidArgument("--subset needs at least one feature-group name".into()).into());
    }
    let mut columns = Vec::new();
    for n in &names {
        let g = groups.iter().find(|g| g.name == *n).ok_or_else(|| {
            let known: Vec<&str> = groups.iter().map(|g| g.name.as_str()).collect();
            Error::InvalidArgument(format!("unknown feature group `{n}` (known: {})", known.join(", ")))
        })?;
        columns.extend(&g.columns);
    }
    let report = classify_evaluate(&table.rows, &labels, &columns, &forest)?;
    log::info!(
        "accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
        report.accuracy,
        report.precision,
        report.recall,
        report.f1
    );
    ensure_parent(out)?;
    write_json(
        out,
        &ClassificationOut {
            subset: names,
            cv: "loocv",
            forest,
            report,
        },
    )?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { count, out, seed } => {
            let samples = synth_phantoms(count, seed)?;
            save_dataset(&out, &samples)?;
        }
        Command::Train(a) => train(&a)?,
        Command::Segment {
            ckpt,
            image,
            out,
            seed,
            batch,
        } => segment(&ckpt, &image, &out, seed, batch)?,
        Command::Evaluate { pred, gt, out } => {
            let report = evaluate_dir(&pred, &gt)?;
            let dice = report.aggregate["DIC"];
            log::info!("{} samples, Dice {:.4} ± {:.4}", report.rows.len(), dice.mean, dice.std);
            report.write(&out)?;
        }
        Command::Features { masks, out } => features(&masks, &out)?,
        Command::Efs {
            features,
            labels,
            out,
            cv,
            forest,
        } => efs(&features, &labels, &out, cv, forest.config())?,
        Command::Classify {
            features,
            labels,
            subset,
            out,
            forest,
        } => classify(&features, &labels, &subset, &out, forest.config())?,
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("BUSSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("BUSSEG_THREADS must be a non-negative integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let class = e.chain().find_map(|c| c.downcast_ref::<Error>()).map(Error::class);
    match class {
        Some(ErrorClass::Usage) => 1,
        Some(ErrorClass::Numeric) => 3,
        Some(ErrorClass::Data) | None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(u8::from(usage));
        }
    };
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
