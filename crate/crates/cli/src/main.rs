use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use shiftseg::bench::{base_schema, generate_benchmark, preset, preset_mock_responses, preset_names, DEFAULT_ROWS};
use shiftseg::config::{DataSource, RunConfig};
use shiftseg::error::{EXIT_OK, EXIT_VALIDATION};
use shiftseg::pipeline::{run_pipeline, run_stage, Evaluation, RunOptions, Stage};
use shiftseg::Error;

/// Attribute a shift between two snapshots of a table to a readable segment
/// of rows while discounting rows that look like data-quality noise.
#[derive(Parser)]
#[command(name = "shiftseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Run config (`.toml` or `.json`).
    #[arg(short, long)]
    config: PathBuf,
    /// Permit the HTTP provider, which reads its endpoint and credentials
    /// from SHIFTSEG_LLM_ENDPOINT, SHIFTSEG_LLM_MODEL and SHIFTSEG_LLM_API_KEY.
    #[arg(long)]
    allow_live: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage in order.
    Run(StageArgs),
    /// Pair the tables, infer noise labels and build both insight documents.
    Summarize(StageArgs),
    /// Ask the provider for features for both tasks.
    Synthesize(StageArgs),
    /// Train the shift and noise models and score every paired row.
    Train(StageArgs),
    /// Search the noise penalty and extract the segment and the baseline.
    Segment(StageArgs),
    /// Score the emitted segment and baseline masks against ground truth.
    Eval(StageArgs),
    /// Generate a benchmark dataset with a ready-to-run config.
    Bench {
        /// Preset name; `--preset list` prints the available ones.
        #[arg(long, default_value = "t1")]
        preset: String,
        #[arg(long, default_value = "n0")]
        regime: String,
        #[arg(long, default_value_t = DEFAULT_ROWS)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for control.csv, test.csv, truth.csv, mock_responses.json and
        /// run.toml; required unless listing presets.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_evaluation(ev: &Option<Evaluation>, out: &Path) {
    if ev.is_some() {
        if let Ok(text) = std::fs::read_to_string(out.join(shiftseg::pipeline::REPORT_TEXT)) {
            print!("{text}");
        }
    }
}

fn stage_command(args: &StageArgs, stage: Option<Stage>) -> Result<(), Error> {
    let cfg = RunConfig::load(&args.config)?;
    let opts = RunOptions {
        allow_live: args.allow_live,
    };
    let ev = match stage {
        None => run_pipeline(&cfg, &opts)?,
        Some(s) => run_stage(&cfg, s, &opts)?,
    };
    print_evaluation(&ev, &cfg.output_dir);
    info!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}

fn bench(name: &str, regime: &str, rows: usize, seed: u64, out: Option<&Path>) -> Result<(), Error> {
    if name == "list" {
        for n in preset_names() {
            let p = preset(n)?;
            println!("{n}\t{}\tregimes: {}", p.description, p.regimes().join(", "));
        }
        return Ok(());
    }
    let out = out.ok_or_else(|| Error::Config("bench needs --out".into()))?;
    let p = preset(name)?;
    let data = generate_benchmark(&p, regime, rows, seed)?;
    data.write(out)?;
    let mock = out.join("mock_responses.json");
    std::fs::write(&mock, preset_mock_responses(name)?).map_err(|e| Error::Io {
        path: mock.clone(),
        source: e,
    })?;
    let mut cfg = RunConfig::for_bench(name, regime, rows, seed, PathBuf::from("run"));
    cfg.data = DataSource::Files {
        control: "control.csv".into(),
        test: "test.csv".into(),
        truth: Some("truth.csv".into()),
        schema: base_schema(&p.target)?,
    };
    cfg.noise.rules = p.noise_rules.clone();
    cfg.provider.responses = Some("mock_responses.json".into());
    let path = out.join("run.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| Error::Io { path, source: e })?;
    println!(
        "{} rows: {} intervention, {} noisy; wrote {}",
        data.truth.keys.len(),
        data.truth.n_intervention(),
        data.truth.n_noise(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let res = match &cli.command {
        Command::Run(a) => stage_command(a, None),
        Command::Summarize(a) => stage_command(a, Some(Stage::Summarize)),
        Command::Synthesize(a) => stage_command(a, Some(Stage::Synthesize)),
        Command::Train(a) => stage_command(a, Some(Stage::Train)),
        Command::Segment(a) => stage_command(a, Some(Stage::Segment)),
        Command::Eval(a) => stage_command(a, Some(Stage::Eval)),
        Command::Bench {
            preset,
            regime,
            rows,
            seed,
            out,
        } => bench(preset, regime, *rows, *seed, out.as_deref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
