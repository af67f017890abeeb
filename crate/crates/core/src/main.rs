use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use dualbench::scenario::{run, write_bundle, ScenarioConfig, ScenarioKind};
use dualbench::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Scenario {
    Duality,
    #[value(alias = "breakdown_frequency")]
    BreakdownFrequency,
    #[value(alias = "breakdown_time")]
    BreakdownTime,
    #[value(alias = "gamma_sweep")]
    GammaSweep,
    Ingest,
}

impl From<Scenario> for ScenarioKind {
    fn from(s: Scenario) -> Self {
        match s {
            Scenario::Duality => ScenarioKind::Duality,
            Scenario::BreakdownFrequency => ScenarioKind::BreakdownFrequency,
            Scenario::BreakdownTime => ScenarioKind::BreakdownTime,
            Scenario::GammaSweep => ScenarioKind::GammaSweep,
            Scenario::Ingest => ScenarioKind::Ingest,
        }
    }
}

/// Simulate the two-photon entanglement-duality experiment.
#[derive(Debug, Parser)]
#[command(name = "dualbench", version)]
struct Cli {
    scenario: Scenario,
    /// Scenario configuration (JSON). Without it, defaults for the scenario are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use exact probabilities instead of Poisson sampling.
    #[arg(long)]
    exact: bool,
    /// Pairs emitted per measurement setting.
    #[arg(long)]
    pairs: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write gnuplot-ready .dat curves.
    #[arg(long)]
    emit_plots: bool,
    /// Polarization-labeling count file for `ingest`.
    #[arg(long)]
    counts_polarization: Option<PathBuf>,
    /// Path-labeling count file for `ingest`.
    #[arg(long)]
    counts_path: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, Error> {
    let kind = ScenarioKind::from(cli.scenario);
    let mut cfg = match &cli.config {
        Some(path) => {
            let cfg = ScenarioConfig::load(path)?;
            if cfg.scenario != kind {
                return Err(Error::Config(format!(
                    "config describes scenario {} but {} was requested",
                    cfg.scenario.as_str(),
                    kind.as_str()
                )));
            }
            cfg
        }
        None => ScenarioConfig::new(kind),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.exact {
        cfg.exact = true;
    }
    if let Some(pairs) = cli.pairs {
        cfg.pairs_per_setting = pairs;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(p) = &cli.counts_polarization {
        cfg.ingest.counts_polarization = Some(p.clone());
    }
    if let Some(p) = &cli.counts_path {
        cfg.ingest.counts_path = Some(p.clone());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| {
        let bundle = run(&cfg)?;
        write_bundle(&bundle, &cfg.output_dir, cli.emit_plots)?;
        Ok(bundle)
    });
    match result {
        Ok(bundle) => {
            for r in &bundle.runs {
                let m = &r.metrics;
                println!(
                    "{:<13} F = {:.4}  C = {:.4}  V_Z = {:.4}  V_X = {:.4}",
                    r.labeling.qubit_name(),
                    m.fidelity,
                    m.concurrence,
                    m.visibility_z,
                    m.visibility_x
                );
            }
            for row in &bundle.sweep {
                println!(
                    "gamma {:.3}  C_path {:.6}  C_pol {:.6}  V_X {:.6}",
                    row.gamma, row.c_path, row.c_pol, row.visibility_x
                );
            }
            for c in &bundle.checks {
                println!(
                    "{} {} = {:.6} ({} {})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.relation,
                    c.threshold
                );
            }
            println!("output written to {}", bundle.config.output_dir.display());
            if bundle.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
