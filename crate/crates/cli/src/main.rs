use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use setpoint_core::config::{parse_config, parse_config_str, ParsedConfig};
use setpoint_core::output::{
    compare, compare_csv, compare_table, noise_csv, read_summary, sweep_csv, trajectory_csv, Summary,
};
use setpoint_core::scenario::{noise_experiment, run_scenario, sensitivity_sweep, ControlMode};
use setpoint_core::{Error, ScenarioId};

#[derive(Parser, Debug)]
#[command(name = "setpoint-lab", version, about = "Ramp-metering experiments with online set-point estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run scenarios and write trajectory.csv and summary.json for each.
    Run(Common),
    /// Sweep the reference-model coefficients and write sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// K_r grid as START:END:STEP.
        #[arg(long, default_value = "1:20:1")]
        kr_range: String,
        /// C_r grid as START:END:STEP.
        #[arg(long, default_value = "1:9:1")]
        cr_range: String,
    },
    /// Compare summaries against a baseline summary.
    Compare {
        baseline: PathBuf,
        #[arg(required = true)]
        others: Vec<PathBuf>,
        /// Also write compare.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat an adaptive scenario under detector noise.
    Noise {
        #[command(flatten)]
        common: Common,
        /// Comma-separated noise levels (relative std).
        #[arg(long, value_delimiter = ',', default_value = "0,0.02,0.05")]
        noise_std: Vec<f64>,
        /// Number of seeds, counted up from --seed.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated scenario ids; defaults to the config's scenario.
    #[arg(long, value_delimiter = ',')]
    scenario: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Config(String),
    Simulation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Domain(_) | Error::Comparison(_) => Failure::Config(e.to_string()),
            _ => Failure::Simulation(e.to_string()),
        }
    }
}

fn io(e: std::io::Error) -> Failure {
    Failure::Simulation(format!("i/o error: {e}"))
}

impl Common {
    fn load(&self) -> Result<ParsedConfig, Failure> {
        Ok(match &self.config {
            Some(p) => parse_config(p)?,
            None => parse_config_str("")?,
        })
    }

    fn scenarios(&self, parsed: &ParsedConfig) -> Result<Vec<ScenarioId>, Failure> {
        if self.scenario.is_empty() {
            return Ok(vec![parsed.default_scenario()]);
        }
        self.scenario
            .iter()
            .map(|s| s.parse().map_err(Failure::from))
            .collect()
    }

    fn build(&self, parsed: &ParsedConfig, id: ScenarioId) -> Result<setpoint_core::ScenarioConfig, Failure> {
        let mut cfg = parsed.build(id)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn parse_range(text: &str, name: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Config(format!("invalid configuration: field `{name}`: expected START:END:STEP, got `{text}`"));
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [a, b, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0 && a <= b && a.is_finite() && b.is_finite()) {
        return Err(bad());
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| a + i as f64 * step).collect())
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

fn cmd_run(common: &Common) -> Result<(), Failure> {
    let parsed = common.load()?;
    let ids = common.scenarios(&parsed)?;
    let configs = ids
        .iter()
        .map(|&id| common.build(&parsed, id))
        .collect::<Result<Vec<_>, _>>()?;

    let mut baseline_cfg = configs[0].clone();
    baseline_cfg.control = ControlMode::None;
    let baseline = run_scenario(&baseline_cfg).ok().map(|r| r.tts);

    let mut failed = None;
    for cfg in &configs {
        let dir = common.out.join(cfg.id.to_string());
        let step_s = cfg.model.t * 3600.0;
        match run_scenario(cfg) {
            Ok(run) => {
                write(&dir.join("trajectory.csv"), &trajectory_csv(&run))?;
                let summary = Summary::from_run(&run, baseline, step_s, parsed.overrides.clone());
                write(&dir.join("summary.json"), &summary.to_json())?;
                println!("{}: TTS {:.1} veh h", cfg.id, run.tts);
            }
            Err(e) => {
                let summary = Summary::failed(&cfg.id.to_string(), cfg.steps, step_s, &e, parsed.overrides.clone());
                write(&dir.join("summary.json"), &summary.to_json())?;
                eprintln!("{}: {e}", cfg.id);
                failed.get_or_insert(e);
            }
        }
    }
    match failed {
        Some(e) => Err(Failure::Simulation(e.to_string())),
        None => Ok(()),
    }
}

fn cmd_sweep(common: &Common, kr: &str, cr: &str) -> Result<(), Failure> {
    let parsed = common.load()?;
    let id = common.scenarios(&parsed)?[0];
    let base = common.build(&parsed, id)?;
    let rows = sensitivity_sweep(&base, &parse_range(kr, "kr_range")?, &parse_range(cr, "cr_range")?)?;
    write(&common.out.join("sweep.csv"), &sweep_csv(&rows))?;
    let missing = rows.iter().filter(|r| r.tts.is_none()).count();
    println!("{} grid cells, {missing} missing", rows.len());
    if missing > 0 {
        return Err(Failure::Simulation(format!("{missing} sweep cells failed")));
    }
    Ok(())
}

fn cmd_compare(baseline: &Path, others: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let load = |p: &Path| read_summary(p).map_err(|e| Failure::Config(e.to_string()));
    let base = load(baseline)?;
    let others = others.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
    let rows = compare(&base, &others)?;
    print!("{}", compare_table(&base, &rows));
    if let Some(dir) = out {
        write(&dir.join("compare.csv"), &compare_csv(&rows))?;
    }
    Ok(())
}

fn cmd_noise(common: &Common, levels: &[f64], count: u64) -> Result<(), Failure> {
    let parsed = common.load()?;
    let id = common.scenarios(&parsed)?[0];
    let base = common.build(&parsed, id)?;
    let first = common.seed.unwrap_or(0);
    let seeds: Vec<u64> = (first..first + count).collect();
    let rows = noise_experiment(&base, levels, &seeds)?;
    write(&common.out.join("noise.csv"), &noise_csv(&rows))?;
    for r in &rows {
        println!(
            "noise {:.3}: final estimate {:.2} ± {:.2} ({:+.2}%)",
            r.noise_std, r.mean_final, r.std_final, r.bias_pct
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(common) => cmd_run(common),
        Command::Sweep { common, kr_range, cr_range } => cmd_sweep(common, kr_range, cr_range),
        Command::Compare { baseline, others, out } => cmd_compare(baseline, others, out.as_deref()),
        Command::Noise { common, noise_std, seeds } => cmd_noise(common, noise_std, *seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Simulation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        let v = match parse_range("1:2:0.5", "kr_range") {
            Ok(v) => v,
            Err(_) => panic!("range rejected"),
        };
        assert_eq!(v, vec![1.0, 1.5, 2.0]);
        assert!(parse_range("1:20:1", "kr_range").is_ok_and(|v| v.len() == 20));
        assert!(parse_range("3:1:1", "kr_range").is_err());
        assert!(parse_range("1:2", "kr_range").is_err());
        assert!(parse_range("1:x:1", "kr_range").is_err());
    }
}
