use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use somtex::cli;
use somtex::config::RunConfig;
use somtex::synth;

#[derive(Parser)]
#[command(name = "somtex", version, about = "GLCM texture features, Fisherfaces and SOM prototypes for mammogram categorization")]
struct Args {
    /// Run configuration (TOML).
    #[arg(short, long, env = "SOMTEX_CONFIG", default_value = "somtex.toml", global = true)]
    config: PathBuf,

    /// More logging (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read the index, check every image and write the manifest.
    Ingest {
        /// Fail on the first unreadable image instead of skipping it.
        #[arg(long)]
        strict: bool,
    },
    /// Preprocess images and write one feature table per ROI mode.
    Extract,
    /// Fit Fisherfaces on all images and write reduced tables.
    Reduce,
    /// Fit SOMs on all images and write prototype feature tables.
    Som,
    /// Cross-validate every configured cell and write the report.
    Evaluate,
    /// ingest, extract, reduce, som and evaluate in one go.
    Run {
        #[arg(long)]
        strict: bool,
    },
    /// Convert a feature CSV to ARFF.
    ExportArff {
        csv: PathBuf,
        /// Output path; defaults to the CSV path with an .arff extension.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "somtex")]
        relation: String,
        /// Class order for the nominal attribute, comma separated.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
    },
    /// Write a synthetic MIAS-shaped corpus and a config that runs on it.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &std::path::Path) -> somtex::Result<RunConfig> {
    RunConfig::load(path)
}

fn run(args: Args) -> somtex::Result<()> {
    match args.command {
        Command::Ingest { strict } => {
            let s = cli::cmd_ingest(&load(&args.config)?, strict)?;
            println!("{} images in manifest, {} skipped", s.entries.len(), s.skipped.len());
        }
        Command::Extract => {
            for (mode, ds) in cli::cmd_extract(&load(&args.config)?)? {
                println!("{mode}: {} images x {} features", ds.len(), ds.dim());
            }
        }
        Command::Reduce => cli::cmd_reduce(&load(&args.config)?)?,
        Command::Som => cli::cmd_som(&load(&args.config)?)?,
        Command::Evaluate => print!("{}", cli::cmd_evaluate(&load(&args.config)?)?.render_text()),
        Command::Run { strict } => print!("{}", cli::cmd_run(&load(&args.config)?, strict)?.render_text()),
        Command::ExportArff {
            csv,
            output,
            relation,
            classes,
        } => {
            let out = output.unwrap_or_else(|| csv.with_extension("arff"));
            cli::cmd_export_arff(&csv, &out, &relation, classes.as_deref())?;
            println!("wrote {}", out.display());
        }
        Command::Synth { dir, size, seed } => {
            synth::write_corpus(&dir, &synth::MIAS_SAMPLE_COUNTS, size, seed)?;
            let cfg = RunConfig {
                data: somtex::config::DataConfig {
                    root: PathBuf::from("."),
                    ..Default::default()
                },
                ..Default::default()
            };
            cli::write_atomic(&dir.join("somtex.toml"), cfg.to_toml().as_bytes())?;
            println!("wrote corpus and {}", dir.join("somtex.toml").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
