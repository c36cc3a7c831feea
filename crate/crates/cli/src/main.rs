//! `lqtrack`: degrade sequences, track, evaluate, self-verify and render overlays.
//!
//! Exit status is 0 on success, 1 for bad usage, configuration or input
//! files, and 2 for failures while running (I/O, image decoding).

mod error;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use lqtrack::degrade::{degrade_sequence, DegradationConfig, MANIFEST_FILE};
use lqtrack::metrics::evaluate;
use lqtrack::mot_io::{load_sequence, read_mot_path, records_to_trackset, write_mot_file};
use lqtrack::render::render_overlay;
use lqtrack::selftest::{run_all, run_battery, Battery};
use lqtrack::tracker::{run_sequence, GridEmbedder, TrackerConfig};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "lqtrack", version, about = "Low-quality video tracking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Degrade the leading part of a sequence and write a replay manifest.
    Degrade(DegradeArgs),
    /// Track a sequence from a detection file.
    Track(TrackArgs),
    /// Score a result file against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the built-in verification batteries.
    Selftest(SelftestArgs),
    /// Draw identity-coloured boxes from a result file onto the frames.
    RenderOverlay(RenderArgs),
}

#[derive(Debug, Args)]
struct DegradeArgs {
    /// Clean sequence directory (seqinfo.ini + PNG frames).
    input: PathBuf,
    /// Output sequence directory.
    output: PathBuf,
    /// TOML file with degradation settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Leading share of frames to degrade, in [0, 1].
    #[arg(long)]
    fraction: Option<f64>,
    /// Number of cascaded degradation stages.
    #[arg(long)]
    stages: Option<u32>,
    /// Keep the resampled size instead of restoring the original resolution.
    #[arg(long)]
    keep_resampled_size: bool,
}

#[derive(Debug, Args)]
struct TrackArgs {
    /// Sequence directory.
    sequence: PathBuf,
    /// Detection file in MOT format.
    detections: PathBuf,
    /// Result file to write.
    output: PathBuf,
    /// TOML file with tracker settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// IoU weight in the association score; 1 disables appearance.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    proposal_threshold: Option<f64>,
    #[arg(long)]
    propagate_threshold: Option<f64>,
    #[arg(long)]
    max_age: Option<usize>,
    #[arg(long)]
    match_floor: Option<f64>,
    #[arg(long)]
    fusion_seed: Option<u64>,
    /// Write the per-frame log here instead of standard error.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Ground-truth file in MOT format.
    ground_truth: PathBuf,
    /// Result file in MOT format.
    prediction: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    /// Run only the named batteries (repeatable).
    #[arg(long = "battery")]
    batteries: Vec<String>,
    /// Damage the fixture of one battery; used to test the harness.
    #[arg(long, hide = true)]
    corrupt_fixture: Option<String>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Sequence directory.
    sequence: PathBuf,
    /// Result file in MOT format.
    result: PathBuf,
    /// Directory for the annotated frames.
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Degrade(a) => cmd_degrade(a),
        Command::Track(a) => cmd_track(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Selftest(a) => cmd_selftest(a),
        Command::RenderOverlay(a) => cmd_render(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind as u8)
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::validation(e.to_string()).at(path))?;
    toml::from_str(&text).map_err(|e| CliError::validation(e.to_string()).at(path))
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::validation("file not found").at(path))
    }
}

/// One JSON line on standard error with everything the run depends on.
fn echo_config(command: &str, config: &impl Serialize, inputs: serde_json::Value) {
    let line = json!({ "command": command, "config": config, "inputs": inputs });
    eprintln!("{line}");
}

fn cmd_degrade(a: DegradeArgs) -> Result<ExitCode, CliError> {
    let mut cfg: DegradationConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(fraction) = a.fraction {
        cfg.fraction = fraction;
    }
    if let Some(stages) = a.stages {
        cfg.stages = stages;
    }
    if a.keep_resampled_size {
        cfg.restore_original_size = false;
    }
    cfg.validate()?;
    echo_config("degrade", &cfg, json!({ "input": a.input, "output": a.output }));
    let manifest = degrade_sequence(&a.input, &a.output, &cfg)?;
    let degraded = manifest.iter().filter(|m| m.degraded).count();
    println!(
        "degraded {degraded} of {} frames; manifest {}",
        manifest.len(),
        a.output.join(MANIFEST_FILE).display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_track(a: TrackArgs) -> Result<ExitCode, CliError> {
    let mut cfg: TrackerConfig = load_config(a.config.as_deref())?;
    let overrides = [
        (a.lambda, &mut cfg.lambda),
        (a.proposal_threshold, &mut cfg.proposal_threshold),
        (a.propagate_threshold, &mut cfg.propagate_threshold),
        (a.match_floor, &mut cfg.match_floor),
    ];
    for (flag, field) in overrides {
        if let Some(v) = flag {
            *field = v;
        }
    }
    if let Some(v) = a.max_age {
        cfg.max_age = v;
    }
    if let Some(v) = a.fusion_seed {
        cfg.fusion_seed = v;
    }
    cfg.validate()?;
    require_file(&a.detections)?;
    let seq = load_sequence(&a.sequence)?;
    let dets = read_mot_path(&a.detections).map_err(|e| CliError::from(e).at(&a.detections))?;
    echo_config(
        "track",
        &cfg,
        json!({ "sequence": a.sequence, "detections": a.detections, "output": a.output }),
    );
    let out = run_sequence(&seq, &dets, &GridEmbedder::default(), &cfg)?;
    match &a.log {
        Some(path) => fs::write(path, out.log_jsonl()).map_err(|e| CliError::from(e).at(path))?,
        None => std::io::stderr().write_all(out.log_jsonl().as_bytes())?,
    }
    fs::write(&a.output, write_mot_file(&out.records)).map_err(|e| CliError::from(e).at(&a.output))?;
    println!("wrote {} records to {}", out.records.len(), a.output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<ExitCode, CliError> {
    echo_config(
        "evaluate",
        &json!({ "format": format!("{:?}", a.format).to_lowercase() }),
        json!({ "ground_truth": a.ground_truth, "prediction": a.prediction }),
    );
    let mut sets = Vec::new();
    for path in [&a.ground_truth, &a.prediction] {
        require_file(path)?;
        let records = read_mot_path(path).map_err(|e| CliError::from(e).at(path))?;
        sets.push(records_to_trackset(&records).map_err(|e| CliError::from(e).at(path))?);
    }
    let report = evaluate(&sets[0], &sets[1])?;
    match a.format {
        ReportFormat::Text => print!("{}", report.to_text()),
        ReportFormat::Json => println!("{}", report.to_json()),
    }
    Ok(ExitCode::SUCCESS)
}

fn battery_named(name: &str) -> Result<Battery, CliError> {
    Battery::from_name(name).ok_or_else(|| {
        let known: Vec<&str> = Battery::ALL.iter().map(|b| b.name()).collect();
        CliError::validation(format!("unknown battery `{name}`; known: {}", known.join(", ")))
    })
}

fn cmd_selftest(a: SelftestArgs) -> Result<ExitCode, CliError> {
    let corrupt = a.corrupt_fixture.as_deref().map(battery_named).transpose()?;
    let selected: Vec<Battery> = a.batteries.iter().map(|n| battery_named(n)).collect::<Result<_, _>>()?;
    let names: Vec<&str> = selected.iter().map(|b| b.name()).collect();
    echo_config(
        "selftest",
        &json!({ "batteries": names, "corrupt_fixture": corrupt.map(|b| b.name()) }),
        json!({}),
    );
    let print = |o: &lqtrack::selftest::Outcome| println!("{o}");
    let outcomes = if selected.is_empty() {
        run_all(corrupt, print)
    } else {
        selected
            .iter()
            .map(|&b| {
                let o = run_battery(b, corrupt == Some(b));
                print(&o);
                o
            })
            .collect()
    };
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.battery.name()).collect();
    if failed.is_empty() {
        println!("all {} batteries passed", outcomes.len());
        Ok(ExitCode::SUCCESS)
    } else {
        Err(CliError::validation(format!("failed batteries: {}", failed.join(", "))))
    }
}

fn cmd_render(a: RenderArgs) -> Result<ExitCode, CliError> {
    echo_config(
        "render-overlay",
        &json!({}),
        json!({ "sequence": a.sequence, "result": a.result, "output": a.output }),
    );
    let seq = load_sequence(&a.sequence)?;
    require_file(&a.result)?;
    let records = read_mot_path(&a.result).map_err(|e| CliError::from(e).at(&a.result))?;
    let annotated = render_overlay(&seq, &records, &a.output)?;
    println!(
        "wrote {} frames ({annotated} annotated) to {}",
        seq.frames.len(),
        a.output.display()
    );
    Ok(ExitCode::SUCCESS)
}
