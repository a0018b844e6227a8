use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fegp::config::RunConfig;
use fegp::error::{Error, Result};
use fegp::eval::{self, EvalReport};
use fegp::gp::ModelDocument;
use fegp::series::Decomposition;

/// Traffic forecasting with a feature-embedding Gaussian process.
///
/// Every subcommand reads an optional `--config FILE` (key = value lines)
/// and then any number of `--key value` or `--key=value` overrides.
/// Run `fegp keys` for the list of keys.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic series (and its event log) to the output directory
    Synth(Opts),
    /// Split a series into daily baseline and residual
    Decompose(Opts),
    /// Fit the feature-embedded model on the training span and save it
    Train(Opts),
    /// One-step forecast from a saved model
    Forecast(Opts),
    /// Full rolling evaluation of all configured methods
    Eval(Opts),
    /// Rebuild reports and ACE curves from stored forecast CSVs
    Report(Opts),
    /// Print the effective configuration
    Keys(Opts),
}

#[derive(clap::Args)]
struct Opts {
    /// `--config FILE` followed by `--key value` overrides
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "ARGS"
    )]
    args: Vec<String>,
}

impl Opts {
    fn config(&self) -> Result<RunConfig> {
        let mut config_file: Option<PathBuf> = None;
        let mut rest = Vec::new();
        let mut it = self.args.iter();
        while let Some(a) = it.next() {
            if let Some(path) = a.strip_prefix("--config=") {
                config_file = Some(path.into());
            } else if a == "--config" {
                let path = it
                    .next()
                    .ok_or_else(|| Error::Config("--config needs a file".into()))?;
                config_file = Some(path.into());
            } else {
                rest.push(a.clone());
            }
        }
        let mut cfg = match config_file {
            Some(p) => RunConfig::from_file(&p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&rest)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summary(reports: &[EvalReport]) {
    println!(
        "{:<10} {:>14} {:>14} {:>14}",
        "method", "ace_total", "ace_spike", "ace_average"
    );
    for r in reports {
        println!(
            "{:<10} {:>14.3} {:>14.3} {:>14.3}",
            r.method.name(),
            r.ace_total,
            r.spike_ace(),
            r.average_ace()
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(o) => {
            let cfg = o.config()?;
            let s = fegp::series::synthesize_with_events(&cfg.synthetic)
                .map_err(|e| e.in_stage("synth", None))?;
            fs::create_dir_all(&cfg.output_dir)?;
            let csv_path = cfg.output_dir.join("synthetic.csv");
            s.series
                .write_csv(BufWriter::new(File::create(&csv_path)?))?;
            let events_path = cfg.output_dir.join("synthetic_events.json");
            fs::write(
                &events_path,
                serde_json::to_string_pretty(&s.events)? + "\n",
            )?;
            println!(
                "{} ({} values, {} events)",
                csv_path.display(),
                s.series.len(),
                s.events.len()
            );
        }
        Command::Decompose(o) => {
            let cfg = o.config()?;
            let p = eval::prepare(&cfg)?;
            let residual = fegp::series::TrafficSeries::new(
                p.series.start_time(),
                p.series.slot_width(),
                p.residual.clone(),
            )?;
            let d = Decomposition {
                baseline: p.baseline.clone(),
                residual,
            };
            fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("decomposition.csv");
            d.write_csv(BufWriter::new(File::create(&path)?))
                .map_err(|e| e.in_stage("decompose", None))?;
            println!("{}", path.display());
        }
        Command::Train(o) => {
            let cfg = o.config()?;
            let p = eval::prepare(&cfg)?;
            let t = eval::train_fegp(&p, &cfg)?;
            let path = cfg.model_path();
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(&path, t.document(&p).to_json()? + "\n")?;
            let h = t.model.hyper;
            println!(
                "sigma {} beta {} sigma_n {} (nlml {})",
                h.sigma, h.beta, h.sigma_n, t.fit.nlml
            );
            println!("weights {:?}", t.relief.weights.as_slice());
            println!("{}", path.display());
        }
        Command::Forecast(o) => {
            let cfg = o.config()?;
            let path = cfg.model_path();
            let doc = ModelDocument::from_json(&fs::read_to_string(&path)?)
                .map_err(|e| e.in_stage("load model", None))?;
            let (series, _) = eval::load_series(&cfg).map_err(|e| e.in_stage("ingest", None))?;
            let at = cfg.forecast_at.unwrap_or(series.len());
            let p = eval::prepare_series(&cfg, series, Vec::new())?;
            let intervals = eval::risk_intervals(&cfg, &p);
            let rec = eval::forecast_from_document(&doc, p.raw(), at, &intervals, Some(cfg.top_k))
                .map_err(|e| e.in_stage("forecast", Some(at)))?;
            println!("{}", serde_json::to_string_pretty(&rec)?);
        }
        Command::Eval(o) => {
            let cfg = o.config()?;
            let reports = eval::run(&cfg)?;
            fs::write(cfg.output_dir.join("run_config.txt"), cfg.to_text())?;
            print_summary(&reports);
        }
        Command::Report(o) => {
            let cfg = o.config()?;
            let reports =
                eval::rerender(&cfg, &cfg.output_dir).map_err(|e| e.in_stage("report", None))?;
            print_summary(&reports);
        }
        Command::Keys(o) => print!("{}", o.config()?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
