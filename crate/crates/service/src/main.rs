use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use instqc_core::augment::{augment_manifest, build_recipe, materialize, AugmentationRecipe};
use instqc_core::dataset::{
    defect_contingency, generate_synthetic_corpus, read_manifest, write_manifest, CorpusSpec, DefectLabel,
    InstrumentLabel, Split,
};
use instqc_core::imaging::load_png;
use instqc_core::metrics::benchmark_latency;
use instqc_core::pipeline::run_scan;
use instqc_service::backends::load_pipeline;
use instqc_service::config::Config;
use instqc_service::reports;
use instqc_service::training::{
    ensure_split, evaluate, extract_training_features, load_record_image, train_baselines,
};

#[derive(Parser)]
#[command(name = "instqc", version, about = "Surgical instrument inspection: scan, train, evaluate, serve")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log debug output to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline on PNG files and print one JSON result per line.
    Scan {
        paths: Vec<PathBuf>,
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Expand a manifest with one record per augmentation transform.
    Augment {
        manifest: PathBuf,
        /// Output manifest; defaults to `<manifest stem>.augmented.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Recipe JSON overriding the config and the built-in recipe.
        #[arg(long)]
        recipe: Option<PathBuf>,
        /// Also render the augmented images.
        #[arg(long)]
        materialize: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        image_root: Option<PathBuf>,
    },
    /// Train the baseline instrument and defect models.
    TrainBaseline {
        manifest: PathBuf,
        #[arg(long)]
        model_dir: Option<PathBuf>,
        #[arg(long)]
        image_root: Option<PathBuf>,
    },
    /// Score a model directory on one split of a manifest.
    Evaluate {
        manifest: PathBuf,
        backend: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Per-label CSV, with training accuracy from the train split.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        image_root: Option<PathBuf>,
    },
    /// Statistical tests as CSV tables.
    Stats {
        #[arg(value_enum)]
        test: StatsTest,
        /// chi2: a manifest (.jsonl) or a count table (.csv).
        /// anova: CSV with columns instrument, adjustment, level, accuracy.
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time full scans over a manifest's images.
    Benchmark {
        manifest: PathBuf,
        #[arg(long)]
        model_dir: Option<PathBuf>,
        /// Leading images scanned untimed.
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        /// Restrict to one split.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long)]
        image_root: Option<PathBuf>,
    },
    /// Run the HTTP API and review UI.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        store_dir: Option<PathBuf>,
        #[arg(long)]
        model_dir: Option<PathBuf>,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Write a synthetic labeled corpus for smoke tests and demos.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        per_cell: usize,
        #[arg(long, default_value_t = 128)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated instrument names; all instruments when omitted.
        #[arg(long, value_delimiter = ',')]
        instruments: Vec<InstrumentLabel>,
        /// Comma-separated defect names; all defects when omitted.
        #[arg(long, value_delimiter = ',')]
        defects: Vec<DefectLabel>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StatsTest {
    Chi2,
    Anova,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(if cli.verbose { tracing::Level::DEBUG } else { tracing::Level::INFO })
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Images resolve against `image_root`, else the manifest's directory.
fn root_for(manifest: &Path, image_root: Option<PathBuf>) -> PathBuf {
    image_root.unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut config = Config::load(cli.config.as_deref())?;
    let model_dir = |dir: Option<PathBuf>, config: &Config| dir.unwrap_or_else(|| config.service.model_dir.clone());
    match cli.command {
        Command::Scan { paths, model_dir: dir } => {
            let pipeline = load_pipeline(&model_dir(dir, &config), &config)?;
            let mut failed = false;
            for path in paths {
                let line = match load_png(&path).map_err(anyhow::Error::from).and_then(|img| {
                    run_scan(&img, &pipeline).map_err(anyhow::Error::from)
                }) {
                    Ok(result) => serde_json::json!({ "path": path, "result": result }),
                    Err(e) => {
                        failed = true;
                        serde_json::json!({ "path": path, "error": format!("{e:#}") })
                    }
                };
                println!("{line}");
            }
            return Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS });
        }
        Command::Augment {
            manifest: path,
            out,
            recipe,
            materialize: render,
            seed,
            image_root,
        } => {
            let manifest = read_manifest(&path)?;
            let recipe = match recipe.or(config.augment.recipe.clone()) {
                Some(p) => AugmentationRecipe::from_json(
                    &std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                )?,
                None => build_recipe(),
            };
            let augmented = augment_manifest(&manifest, &recipe)?;
            let out = out.unwrap_or_else(|| path.with_extension("augmented.jsonl"));
            write_manifest(&augmented, &out)?;
            eprintln!(
                "{} records -> {} records in {}",
                manifest.records().len(),
                augmented.records().len(),
                out.display()
            );
            if render {
                let root = root_for(&path, image_root);
                let written = materialize(&augmented, &recipe, seed.unwrap_or(config.augment.seed), &root)?;
                eprintln!("rendered {written} images under {}", root.display());
            }
        }
        Command::TrainBaseline {
            manifest: path,
            model_dir: dir,
            image_root,
        } => {
            let root = root_for(&path, image_root);
            let manifest = ensure_split(&read_manifest(&path)?, &config)?;
            let features = extract_training_features(&manifest, &root, &config.preprocess)?;
            let trained = train_baselines(&manifest, &features, &config.training)?;
            let dir = model_dir(dir, &config);
            trained.save(&dir)?;
            eprintln!(
                "instrument model: best epoch {} of {}, val loss {:.4}; {} defect models; saved to {}",
                trained.instrument.log.best_epoch,
                trained.instrument.log.epochs.len(),
                trained.instrument.checkpoint.val_loss,
                trained.defects.len(),
                dir.display()
            );
        }
        Command::Evaluate {
            manifest: path,
            backend,
            split,
            csv,
            image_root,
        } => {
            let root = root_for(&path, image_root);
            let manifest = ensure_split(&read_manifest(&path)?, &config)?;
            let pipeline = load_pipeline(&backend, &config)?;
            let report = evaluate(&manifest, split.into(), &root, &pipeline)?;
            print_json(&report)?;
            if let Some(csv) = csv {
                let has_train = manifest.in_split(Split::Train).next().is_some();
                let train = match split {
                    SplitArg::Train => Some(report.clone()),
                    _ if has_train => Some(evaluate(&manifest, Split::Train, &root, &pipeline)?),
                    _ => None,
                };
                reports::write_metrics_csv(&report, train.as_ref(), output(Some(&csv))?)?;
            }
        }
        Command::Stats { test, input, out } => match test {
            StatsTest::Chi2 => {
                let table = if input.extension().is_some_and(|e| e == "csv") {
                    reports::read_contingency_csv(File::open(&input)?)?
                } else {
                    defect_contingency(&read_manifest(&input)?)?
                };
                let rows = reports::defect_distribution(&table)?;
                reports::write_distribution_csv(&rows, output(out.as_deref())?)?;
            }
            StatsTest::Anova => {
                let observations = reports::read_observations(File::open(&input)?)?;
                let table = reports::adjustment_anova(&observations)?;
                reports::write_anova_csv(&table, output(out.as_deref())?)?;
            }
        },
        Command::Benchmark {
            manifest: path,
            model_dir: dir,
            warmup,
            split,
            image_root,
        } => {
            let root = root_for(&path, image_root);
            let manifest = read_manifest(&path)?;
            let pipeline = load_pipeline(&model_dir(dir, &config), &config)?;
            let images = manifest
                .records()
                .iter()
                .filter(|r| split.is_none_or(|s| manifest.split_of(&r.record_id) == Some(s.into())))
                .map(|r| load_record_image(&root, r))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let stats = benchmark_latency(|img| run_scan(img, &pipeline), &images, warmup)?;
            print_json(&stats)?;
        }
        Command::Serve {
            bind,
            port,
            store_dir,
            model_dir: dir,
            ui_dir,
        } => {
            let svc = &mut config.service;
            if let Some(b) = bind {
                svc.bind = b;
            }
            if let Some(p) = port {
                svc.port = p;
            }
            if let Some(d) = store_dir {
                svc.store_dir = d;
            }
            if let Some(d) = dir {
                svc.model_dir = d;
            }
            if ui_dir.is_some() {
                svc.ui_dir = ui_dir;
            }
            tokio::runtime::Runtime::new()?.block_on(instqc_service::server::serve(config))?;
        }
        Command::Generate {
            out,
            per_cell,
            size,
            seed,
            instruments,
            defects,
        } => {
            let instruments = if instruments.is_empty() { InstrumentLabel::ALL.to_vec() } else { instruments };
            let defects = if defects.is_empty() { DefectLabel::ALL.to_vec() } else { defects };
            let corpus = generate_synthetic_corpus(&CorpusSpec::grid(&instruments, &defects, per_cell, size, seed))?;
            corpus.write_to(&out)?;
            eprintln!(
                "wrote {} images and {}",
                corpus.images.len(),
                out.join("manifest.jsonl").display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
