mod args;

use std::path::PathBuf;

use anyhow::{Context, Result};
use aure_core::dataset::{generate_synthetic, SynthConfig};
use aure_core::pipeline::{
    embed_store, evaluate_stores, ingest, preprocess_all, read_stores, run_pipeline, store_path, write_outputs,
    RunOutput,
};
use aure_core::report::{render_roc_plots, RunReport};
use clap::{Parser, Subcommand};

use crate::args::PipelineArgs;

#[derive(Debug, Parser)]
#[command(name = "aure", version, about = "Ear biometric verification and longitudinal evaluation")]
struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic longitudinal ear dataset.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        subjects: u64,
        #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(1..))]
        collections: u32,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
        samples: u64,
        /// Fractional shape change per collection.
        #[arg(long, default_value_t = 0.0)]
        drift: f64,
        #[arg(long, default_value_t = 256)]
        image_size: u32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Write canonical 224x224 ear crops as `<subject>/<session>/<basename>.png`.
    Preprocess(PipelineArgs),
    /// Preprocess and write one embedding store per backend.
    Embed(PipelineArgs),
    /// Fuse, project and evaluate previously written embedding stores.
    Evaluate {
        /// Directory holding `embeddings/<backend>.aure` (default: the output directory).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Run the whole pipeline end to end.
    Run(PipelineArgs),
    /// Re-render ROC plots from a report JSON.
    Report {
        #[arg(long)]
        report: PathBuf,
        /// Default: the report's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn summarize(output: &RunOutput) {
    for e in &output.report.experiments {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}%", 100.0 * v));
        match &e.flagged {
            Some(reason) => println!("{:<14} flagged: {reason}", e.protocol.label()),
            None => println!(
                "{:<14} TAR {:>8}  FAR {:>7}  EER {}",
                e.protocol.label(),
                pct(e.tar),
                pct(e.far),
                pct(e.eer)
            ),
        }
    }
}

fn finish(output: &RunOutput, out_dir: &std::path::Path) -> Result<()> {
    write_outputs(output, out_dir).context("writing outputs")?;
    summarize(output);
    println!("report written to {}", out_dir.join("report.json").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out_dir,
            subjects,
            collections,
            samples,
            drift,
            image_size,
            seed,
        } => {
            let cfg = SynthConfig {
                n_subjects: subjects as usize,
                n_collections: collections,
                samples_per_subject_per_collection: samples as usize,
                drift_per_collection: drift,
                image_size,
                seed,
            };
            let manifest = generate_synthetic(&cfg, &out_dir)?;
            println!(
                "{} records across {} sessions written to {}",
                manifest.records.len(),
                manifest.sessions().len(),
                out_dir.join("manifest.csv").display()
            );
        }
        Command::Preprocess(args) => {
            let cfg = args.resolve()?;
            let manifest = ingest(&cfg.manifest)?;
            let images = preprocess_all(&manifest, &cfg.clahe)?;
            for (img, rec) in images.iter().zip(&manifest.records) {
                img.save_png(&cfg.out_dir, rec)?;
            }
            println!("{} crops written under {}", images.len(), cfg.out_dir.display());
        }
        Command::Embed(args) => {
            let cfg = args.resolve()?;
            let manifest = ingest(&cfg.manifest)?;
            let images = preprocess_all(&manifest, &cfg.clahe)?;
            for spec in &cfg.backends {
                let store = embed_store(spec, &images)?;
                let path = store_path(&cfg.out_dir, &store.backend);
                std::fs::create_dir_all(path.parent().expect("store path has a parent"))?;
                aure_core::embed::write_store(&path, &store)?;
                println!("{}: {} vectors of {} values -> {}", store.backend, store.vectors.len(), store.dim, path.display());
            }
        }
        Command::Evaluate { embeddings, pipeline } => {
            let cfg = pipeline.resolve()?;
            let manifest = ingest(&cfg.manifest)?;
            let stores = read_stores(&cfg, embeddings.as_deref().unwrap_or(&cfg.out_dir))?;
            let output = evaluate_stores(&cfg, &manifest, stores)?;
            finish(&output, &cfg.out_dir)?;
        }
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let output = run_pipeline(&cfg)?;
            finish(&output, &cfg.out_dir)?;
        }
        Command::Report { report, out_dir } => {
            let parsed = RunReport::read(&report)?;
            let dir = out_dir.unwrap_or_else(|| report.parent().map(PathBuf::from).unwrap_or_default());
            let written = render_roc_plots(&parsed, &dir)?;
            println!("{} plots written under {}", written.len(), dir.join("roc").display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    run(cli)
}
