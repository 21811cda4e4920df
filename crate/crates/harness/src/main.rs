use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aiekf_core::contact::GaitKind;
use aiekf_core::Variant;
use aiekf_harness::eval::sweep_to_text;
use aiekf_harness::{calibrate_velocity_noise, noise_sweep, run_eval, FilterConfig, HarnessError};
use aiekf_sim::{
    generate, load_sensor_log, load_truth_log, save_sensor_log, save_truth_log, ScenarioConfig, SensorLog, TruthLog,
};
use clap::{Args, Parser, Subcommand};

const SENSOR_FILE: &str = "sensors.log";
const TRUTH_FILE: &str = "truth.log";
const SCENARIO_FILE: &str = "scenario.txt";

#[derive(Parser)]
#[command(name = "aiekf", version, about = "Adaptive invariant EKF evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write sensor and truth logs.
    Gen {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Replay logs (or a freshly simulated scenario) through filter variants.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Directory written by `gen`; replaces simulation.
        #[arg(long)]
        logs: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Variant to run; repeat for several. Defaults to all four.
        #[arg(long)]
        variant: Vec<Variant>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Write per-leg contact / slip / alpha traces.
        #[arg(long)]
        traces: bool,
    },
    /// RMSE as a function of the contact foot noise.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "IEKF")]
        variant: Variant,
        /// Comma-separated foot-noise values (m/s).
        #[arg(long, default_value = "0.002,0.02,0.2", value_delimiter = ',')]
        grid: Vec<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Estimate the velocity-kinematics noise from a standstill simulation.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
    },
    /// Full gait x terrain x variant RMSE matrix.
    Table {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20.0)]
        duration: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file in `key = value` format; defaults to a flat trot.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig, HarnessError> {
        let mut cfg = match &self.scenario {
            Some(path) => ScenarioConfig::parse(&read(path)?).map_err(|e| config_err(path, e))?,
            None => ScenarioConfig::preset(GaitKind::Trot, false),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("{}: {e}", path.display()))
}

fn load_filter_config(path: Option<&Path>) -> Result<FilterConfig, HarnessError> {
    match path {
        Some(p) => FilterConfig::parse(&read(p)?).map_err(|e| config_err(p, e)),
        None => Ok(FilterConfig::default()),
    }
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn scenario_name(cfg: &ScenarioConfig) -> String {
    let terrain = if cfg.terrain_amplitude > 0.0 { "rough" } else { "flat" };
    format!("{}_{terrain}_seed{}", cfg.gait, cfg.seed)
}

fn simulate(cfg: &ScenarioConfig) -> Result<aiekf_sim::Scenario, HarnessError> {
    generate(cfg).map_err(|e| HarnessError::Config(e.to_string()))
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Gen { scenario, out } => {
            let cfg = scenario.load()?;
            let sc = simulate(&cfg)?;
            fs::create_dir_all(&out)?;
            let n_legs = cfg.n_legs();
            let log_err = |e: aiekf_sim::LogError| HarnessError::Config(e.to_string());
            save_sensor_log(
                &out.join(SENSOR_FILE),
                &SensorLog {
                    n_legs,
                    dt: cfg.dt,
                    frames: sc.sensors,
                },
            )
            .map_err(log_err)?;
            save_truth_log(
                &out.join(TRUTH_FILE),
                &TruthLog {
                    n_legs,
                    dt: cfg.dt,
                    frames: sc.truth,
                },
            )
            .map_err(log_err)?;
            write(&out.join(SCENARIO_FILE), &cfg.to_text())?;
            println!("wrote {} ticks to {}", cfg.n_ticks(), out.display());
        }
        Command::Run {
            scenario,
            logs,
            config,
            variant,
            out,
            traces,
        } => {
            let fc = load_filter_config(config.as_deref())?;
            let variants = if variant.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variant
            };
            let (cfg, sensors, truth) = match logs {
                Some(dir) => {
                    let cfg = match &scenario.scenario {
                        Some(_) => scenario.load()?,
                        None => {
                            let p = dir.join(SCENARIO_FILE);
                            ScenarioConfig::parse(&read(&p)?).map_err(|e| config_err(&p, e))?
                        }
                    };
                    let s =
                        load_sensor_log(&dir.join(SENSOR_FILE)).map_err(|e| config_err(&dir.join(SENSOR_FILE), e))?;
                    let t = load_truth_log(&dir.join(TRUTH_FILE)).map_err(|e| config_err(&dir.join(TRUTH_FILE), e))?;
                    (cfg, s.frames, t.frames)
                }
                None => {
                    let cfg = scenario.load()?;
                    let sc = simulate(&cfg)?;
                    (cfg, sc.sensors, sc.truth)
                }
            };
            let name = scenario_name(&cfg);
            let trace_dir = traces.then(|| out.join("traces"));
            let report = run_eval(
                &name,
                &sensors,
                &truth,
                &cfg.schedule(),
                &variants,
                &fc,
                trace_dir.as_deref(),
            )?;
            let text = report.to_text();
            write(&out.join(format!("{name}_report.csv")), &text)?;
            print!("{text}");
        }
        Command::Sweep {
            scenario,
            config,
            variant,
            grid,
            out,
        } => {
            let fc = load_filter_config(config.as_deref())?;
            let cfg = scenario.load()?;
            let sc = simulate(&cfg)?;
            let rows = noise_sweep(&sc.sensors, &sc.truth, &cfg.schedule(), &grid, variant, &fc)?;
            let text = sweep_to_text(variant, &rows);
            write(&out.join(format!("{}_sweep.csv", scenario_name(&cfg))), &text)?;
            print!("{text}");
        }
        Command::Calibrate { config, seed, duration } => {
            let fc = load_filter_config(config.as_deref())?;
            let mut cfg = ScenarioConfig::standstill();
            cfg.seed = seed;
            cfg.duration = duration;
            let sc = simulate(&cfg)?;
            let qv = calibrate_velocity_noise(&sc.sensors, &sc.truth, &fc, 1.0)?;
            println!("vel_kin_var = {},{},{}", qv.x, qv.y, qv.z);
        }
        Command::Table {
            config,
            seed,
            duration,
            out,
        } => {
            let fc = load_filter_config(config.as_deref())?;
            let mut table = String::new();
            for gait in [GaitKind::Trot, GaitKind::FlyingTrot, GaitKind::Pronk] {
                for rough in [false, true] {
                    let mut cfg = ScenarioConfig::preset(gait, rough);
                    cfg.seed = seed;
                    cfg.duration = duration;
                    let sc = simulate(&cfg)?;
                    let report = run_eval(
                        &scenario_name(&cfg),
                        &sc.sensors,
                        &sc.truth,
                        &cfg.schedule(),
                        &Variant::ALL,
                        &fc,
                        None,
                    )?;
                    table.push_str(&report.to_text());
                    table.push('\n');
                }
            }
            write(&out.join("table.csv"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
