use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use shdl::ols::selection_report;
use shdl::pipeline::{
    evaluate, load_model, prepare_test, prepare_train, save_model, sweep_sizes, train_pipeline, PipelineConfig,
    TrainReport,
};
use shdl::scatter::{write_feature_dump, FeatureHeader, Scatterer};
use shdl::{Result, ShdlError};

#[derive(Parser, Debug)]
#[command(name = "shdl", version, about = "Scattering + PCA + OLS + SVM image classifier")]
struct Cli {
    /// TOML config; the desk preset when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from a named preset instead of a file.
    #[arg(long, global = true, value_parser = ["desk", "full"])]
    preset: Option<String>,
    /// Dotted override, e.g. `pca.k_l3=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on the configured training split and write `model.shdl`.
    Train,
    /// Evaluate a model on the configured test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
    /// Train and evaluate one model per (size, seed).
    Sweep,
    /// Dump scattering features, or full features through a model.
    ExtractFeatures {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Print a model's manifest and OLS selection.
    InspectModel {
        #[arg(long)]
        model: PathBuf,
    },
    /// Write the PCA cross-validation curves of a training report as CSV.
    CvCurves {
        #[arg(long)]
        report: PathBuf,
    },
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    match (&cli.config, &cli.preset) {
        (Some(_), Some(_)) => Err(ShdlError::Config("--config and --preset are exclusive".into())),
        (None, Some(p)) => PipelineConfig::from_toml(&PipelineConfig::preset(p)?.to_toml()?, &overrides),
        (path, None) => PipelineConfig::load(path.as_deref(), &overrides),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        shdl::par::init_threads(t).map_err(ShdlError::Config)?;
    }
    let out = &cli.out;
    match &cli.command {
        Command::Train => {
            let cfg = config(cli)?;
            let train = prepare_train(&cfg)?;
            fs::create_dir_all(out)?;
            let (model, report) = train_pipeline(&cfg, &train)?;
            save_model(&model, &out.join("model.shdl"))?;
            write(&out.join("train_report.json"), &json(&report))?;
            write(&out.join("config.toml"), &cfg.to_toml()?)?;
            write_curves(&report, out)?;
            println!("trained on {} images in {:.1}s", train.len(), report.total_seconds());
            for d in &model.manifest.dimensions {
                println!("  {:<10} {:>8} -> {}", d.stage, d.input, d.output);
            }
        }
        Command::Eval { model } => {
            let model = load_model(model)?;
            let mut cfg = model.manifest.config.clone();
            if cli.config.is_some() || cli.preset.is_some() {
                cfg.data = config(cli)?.data;
            } else {
                cfg = PipelineConfig::from_toml(&cfg.to_toml()?, &cli.overrides)?;
            }
            let test = prepare_test(&cfg)?;
            let report = evaluate(&model, &test)?;
            fs::create_dir_all(out)?;
            write(&out.join("metrics.json"), &report.to_json())?;
            write(&out.join("metrics.csv"), &report.to_csv())?;
            write(&out.join("confusion.csv"), &report.confusion_csv())?;
            println!(
                "accuracy {:.4}  mean per-class {:.4}  ({} images)",
                report.overall_accuracy, report.mean_per_class_accuracy, report.samples
            );
            if !report.unseen_classes.is_empty() {
                println!("unseen classes: {}", report.unseen_classes.join(", "));
            }
        }
        Command::Sweep => {
            let mut cfg = config(cli)?;
            let sizes = cfg.sweep.sizes.clone();
            let seeds = cfg.sweep.seeds.clone();
            cfg.data.train_per_class = None;
            let train = prepare_train(&cfg)?;
            let test = prepare_test(&cfg)?;
            let report = sweep_sizes(&cfg, &train, &test, &sizes, &seeds)?;
            fs::create_dir_all(out)?;
            write(&out.join("sweep.csv"), &report.to_csv())?;
            write(&out.join("sweep.json"), &json(&report))?;
            print!("{}", report.to_csv());
        }
        Command::ExtractFeatures { model, split } => {
            let cfg = config(cli)?;
            let data = match split {
                SplitArg::Train => prepare_train(&cfg)?,
                SplitArg::Test => prepare_test(&cfg)?,
            };
            fs::create_dir_all(out)?;
            let (header, rows): (FeatureHeader, Vec<Vec<f32>>) = match model {
                Some(path) => {
                    let model = load_model(path)?;
                    let x = model.full_features(&data.images)?;
                    let rows = x.outer_iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
                    (model.feature_header()?, rows)
                }
                None => {
                    let mut sc = Scatterer::new(cfg.scatter_config())?;
                    if cfg.scatter.select_k {
                        sc.select_log_params(&data.images)?;
                    }
                    let feats = sc.transform_batch(&data.images)?;
                    let header: FeatureHeader = feats
                        .first()
                        .map(|f| f.header())
                        .ok_or_else(|| ShdlError::Validation("no images".into()))?;
                    let rows = feats.iter().map(|f| f.flatten().into_iter().map(|v| v as f32).collect()).collect();
                    (header, rows)
                }
            };
            let prefix = out.join("features");
            write_feature_dump(&prefix, &header, &rows, &data.labels)?;
            println!("{} rows x {} features -> {}", rows.len(), header.dim(), prefix.display());
        }
        Command::InspectModel { model } => {
            let m = load_model(model)?;
            let man = &m.manifest;
            println!("classes      {}", man.class_names.join(","));
            println!("trained on   {} images (seed {}, dataset {})", man.train_samples, man.seed, man.dataset_hash);
            println!("features     {} -> {} selected", man.feature_dim, man.selected.len());
            println!("svm          C={} gamma={:.6e} support={}", man.svm_c, man.svm_gamma, m.svm.support.nrows());
            for s in &man.pca {
                println!(
                    "pca {:<5} L3 {}/{} k={}  L4 {}/{} k={}",
                    s.name,
                    s.layer3.optimal_count,
                    s.layer3.filters,
                    s.layer3.log_param,
                    s.layer4.optimal_count,
                    s.layer4.filters,
                    s.layer4.log_param
                );
            }
            for d in &man.dimensions {
                println!("dim {:<10} {:>8} -> {}", d.stage, d.input, d.output);
            }
            fs::create_dir_all(out)?;
            write(&out.join("manifest.json"), &json(man))?;
            write(
                &out.join("ols_selection.txt"),
                &selection_report(&man.ols, Some(&m.feature_header()?)),
            )?;
        }
        Command::CvCurves { report } => {
            let text = fs::read_to_string(report)?;
            let report: TrainReport = serde_json::from_str(&text)
                .map_err(|e| ShdlError::Validation(format!("{}: {e}", report.display())))?;
            fs::create_dir_all(out)?;
            write_curves(&report, out)?;
            for c in &report.cv_curves {
                println!(
                    "{} {} {}: best {} (mean accuracy {:.4})",
                    c.stream,
                    c.layer,
                    c.parameter,
                    c.best_value(),
                    c.mean_accuracy[c.best]
                );
            }
        }
    }
    Ok(())
}

fn write_curves(report: &TrainReport, out: &Path) -> Result<()> {
    if report.cv_curves.is_empty() {
        return Ok(());
    }
    let dir = out.join("cv_curves");
    fs::create_dir_all(&dir)?;
    for c in &report.cv_curves {
        write(&dir.join(format!("{}_{}_{}.csv", c.stream, c.layer, c.parameter)), &c.to_csv())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
