//! Command-line experiments: configuration, dispatch and artifact writing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::certify::{certify_exactness, Status};
use crate::error::{Error, Result};
use crate::maps::{make_catalog_map, IntervalMap, MapKind, MapSpec};
use crate::plot::{emit_plot, PlotData};
use crate::sampling::{
    sample_invariant_state, sample_ou, sample_rng, sample_wiener, write_samples_csv, PathSample,
};
use crate::semiflow::{
    linear_semiflow, maturity_model_reduction, nonlinear_density_flow, sample_state,
    size_structured_step, stationarity_test, turbulence_report, write_trajectory_csv, GridFunction,
    SizeModel,
};
use crate::transfer::{
    birkhoff_average, invariant_density, iterate_density, ulam_matrix, GridDensity,
    DEFAULT_POWER_MAX_ITERS, DEFAULT_POWER_TOL,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "ERGOKIT_THREADS";

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 2;
pub const EXIT_INCONCLUSIVE: u8 = 3;
pub const EXIT_PRECONDITION: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Certify,
    Invariant,
    Iterate,
    Birkhoff,
    Semiflow,
    Turbulence,
    Stationarity,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Observable {
    Identity,
    Square,
    /// `ln|S'(x)|`
    Lyapunov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SemiflowModel {
    Linear,
    Density,
    Size,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Process {
    Wiener,
    Ou,
    Invariant,
}

/// One experiment. Fields left out take command-specific defaults; the
/// resolved form, with every default that the command uses filled in, is
/// echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapKind>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lag: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<Observable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<SemiflowModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<Process>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub plot: bool,
}

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        ExperimentConfig {
            command,
            map: None,
            params: BTreeMap::new(),
            bins: None,
            grid: None,
            seed: None,
            tol: None,
            max_iters: None,
            horizon: None,
            steps: None,
            dt: None,
            lambda: None,
            samples: None,
            stride: None,
            x0: None,
            max_lag: None,
            observable: None,
            model: None,
            process: None,
            out: None,
            plot: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn allowed_params(&self) -> Vec<&'static str> {
        match self.command {
            Command::Certify | Command::Invariant | Command::Iterate | Command::Birkhoff => {
                vec!["K", "k", "lambda"]
            }
            Command::Semiflow => match self.model.unwrap_or(SemiflowModel::Linear) {
                SemiflowModel::Linear => vec!["c"],
                SemiflowModel::Density => vec![],
                SemiflowModel::Size => vec!["g", "m", "d"],
            },
            Command::Stationarity => vec!["push-lambda"],
            Command::Turbulence | Command::Sample => vec![],
        }
    }

    /// Fills in the defaults used by the command and validates the knobs.
    pub fn resolve(&self) -> Result<Self> {
        let mut c = self.clone();
        if let Some(bad) = c
            .params
            .keys()
            .find(|k| !c.allowed_params().contains(&k.as_str()))
        {
            return Err(Error::InvalidParameter(format!(
                "parameter `{bad}` is not used by `{}`",
                serde_json::to_value(c.command)?
                    .as_str()
                    .unwrap_or("command")
            )));
        }
        c.out.get_or_insert_with(|| PathBuf::from("ergokit-out"));
        match c.command {
            Command::Certify => {
                c.map.get_or_insert(MapKind::Cubic);
                c.grid.get_or_insert(100_000);
            }
            Command::Invariant => {
                c.map.get_or_insert(MapKind::Logistic);
                c.bins.get_or_insert(1024);
                c.tol.get_or_insert(DEFAULT_POWER_TOL);
                c.max_iters.get_or_insert(DEFAULT_POWER_MAX_ITERS);
            }
            Command::Iterate => {
                c.map.get_or_insert(MapKind::Logistic);
                c.bins.get_or_insert(1024);
                c.steps.get_or_insert(20);
                c.tol.get_or_insert(DEFAULT_POWER_TOL);
                c.max_iters.get_or_insert(DEFAULT_POWER_MAX_ITERS);
            }
            Command::Birkhoff => {
                c.map.get_or_insert(MapKind::Logistic);
                c.steps.get_or_insert(1_000_000);
                c.seed.get_or_insert(0);
                c.observable.get_or_insert(Observable::Identity);
            }
            Command::Semiflow => {
                let model = *c.model.get_or_insert(SemiflowModel::Linear);
                c.grid.get_or_insert(201);
                c.horizon.get_or_insert(2.0);
                c.steps.get_or_insert(20);
                c.stride.get_or_insert(1);
                c.seed.get_or_insert(0);
                match model {
                    SemiflowModel::Linear => {
                        if let Some(rate) = c.params.get("c") {
                            let red = maturity_model_reduction(*rate);
                            if c.lambda.is_some_and(|l| l != red.lambda) {
                                return Err(Error::InvalidParameter(
                                    "give either lambda or the maturity rate c, not both".into(),
                                ));
                            }
                            c.lambda = Some(red.lambda);
                        }
                        c.lambda.get_or_insert(1.0);
                    }
                    SemiflowModel::Density => {}
                    SemiflowModel::Size => {
                        c.dt.get_or_insert(1e-3);
                        c.params.entry("g".into()).or_insert(1.0);
                        c.params.entry("m".into()).or_insert(0.5);
                        c.params.entry("d".into()).or_insert(0.0);
                    }
                }
            }
            Command::Turbulence => {
                let lambda = *c.lambda.get_or_insert(1.0);
                c.horizon.get_or_insert(1e4);
                c.dt.get_or_insert(0.01);
                c.max_lag.get_or_insert(5.0 / lambda);
                c.seed.get_or_insert(0);
            }
            Command::Stationarity => {
                let lambda = *c.lambda.get_or_insert(1.0);
                c.horizon.get_or_insert(0.5);
                c.samples.get_or_insert(10_000);
                c.grid.get_or_insert(201);
                c.seed.get_or_insert(0);
                c.params.entry("push-lambda".into()).or_insert(lambda);
            }
            Command::Sample => {
                let process = *c.process.get_or_insert(Process::Ou);
                c.samples.get_or_insert(100);
                c.seed.get_or_insert(0);
                if process == Process::Invariant {
                    c.grid.get_or_insert(201);
                } else {
                    c.horizon.get_or_insert(1.0);
                    c.steps.get_or_insert(100);
                }
                if process != Process::Wiener {
                    c.lambda.get_or_insert(1.0);
                }
            }
        }
        Ok(c)
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Map kind: tent, logistic, cubic, beverton-holt, ricker
    #[arg(long)]
    pub map: Option<String>,
    /// Named parameter, repeatable (e.g. `--param lambda=0.4`)
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Time horizon (semiflow, turbulence, stationarity, sample)
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Step count (iterate, birkhoff, semiflow snapshots, sample)
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Keep every n-th grid node in trajectory output
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub max_lag: Option<f64>,
    #[arg(long, value_enum)]
    pub observable: Option<Observable>,
    #[arg(long, value_enum)]
    pub model: Option<SemiflowModel>,
    #[arg(long, value_enum)]
    pub process: Option<Process>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write an SVG plot
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Parser)]
#[command(
    name = "ergokit",
    version,
    about = "Transfer operators, exactness certificates and chaotic semiflows"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Certify exactness of a smooth unimodal map
    Certify(Flags),
    /// Ulam invariant density
    Invariant(Flags),
    /// Iterate the transfer operator from the uniform density
    Iterate(Flags),
    /// Time average along an orbit
    Birkhoff(Flags),
    /// Evolve a state under one of the semiflow models
    Semiflow(Flags),
    /// Autocorrelation diagnostics of the boundary trace
    Turbulence(Flags),
    /// Invariance test of the Gaussian measure under the linear semiflow
    Stationarity(Flags),
    /// Draw an ensemble of sample paths
    Sample(Flags),
    /// Run an experiment described by a JSON file
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the output directory of the file
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_param(s: &str) -> Result<(String, f64)> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidParameter(format!("expected NAME=VALUE, got `{s}`")))?;
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("`{value}` is not a number")))?;
    Ok((name.trim().to_string(), v))
}

impl Flags {
    pub fn into_config(self, command: Command) -> Result<ExperimentConfig> {
        let mut params = BTreeMap::new();
        for p in &self.params {
            let (k, v) = parse_param(p)?;
            params.insert(k, v);
        }
        Ok(ExperimentConfig {
            command,
            map: self.map.as_deref().map(str::parse).transpose()?,
            params,
            bins: self.bins,
            grid: self.grid,
            seed: self.seed,
            tol: self.tol,
            max_iters: self.max_iters,
            horizon: self.horizon,
            steps: self.steps,
            dt: self.dt,
            lambda: self.lambda,
            samples: self.samples,
            stride: self.stride,
            x0: self.x0,
            max_lag: self.max_lag,
            observable: self.observable,
            model: self.model,
            process: self.process,
            out: self.out,
            plot: self.plot,
        })
    }
}

impl CliCommand {
    pub fn into_config(self) -> Result<ExperimentConfig> {
        let (cmd, flags) = match self {
            CliCommand::Certify(f) => (Command::Certify, f),
            CliCommand::Invariant(f) => (Command::Invariant, f),
            CliCommand::Iterate(f) => (Command::Iterate, f),
            CliCommand::Birkhoff(f) => (Command::Birkhoff, f),
            CliCommand::Semiflow(f) => (Command::Semiflow, f),
            CliCommand::Turbulence(f) => (Command::Turbulence, f),
            CliCommand::Stationarity(f) => (Command::Stationarity, f),
            CliCommand::Sample(f) => (Command::Sample, f),
            CliCommand::Run { config, out } => {
                let text = std::fs::read_to_string(&config)?;
                let mut cfg = ExperimentConfig::from_json(&text)?;
                if out.is_some() {
                    cfg.out = out;
                }
                return Ok(cfg);
            }
        };
        flags.into_config(cmd)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: u8,
    pub artifacts: Vec<PathBuf>,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    fn plot(&mut self, name: &str, data: &PlotData) -> Result<()> {
        let path = self.dir.join(name);
        emit_plot(data, &path)?;
        self.written.push(path);
        Ok(())
    }
}

fn catalog_map(cfg: &ExperimentConfig) -> Result<MapSpec> {
    make_catalog_map(cfg.map.expect("resolved"), &cfg.params)
}

fn density_plot(map: &MapSpec, density: &GridDensity, title: &str) -> PlotData {
    let n = density.bins();
    let edges: Vec<f64> = (0..=n)
        .map(|i| density.domain_len() * i as f64 / n as f64)
        .collect();
    let overlay = match map.kind() {
        MapKind::Logistic => Some(
            (1..400)
                .map(|i| {
                    let x = i as f64 / 400.0;
                    (x, 1.0 / (std::f64::consts::PI * (x * (1.0 - x)).sqrt()))
                })
                .collect(),
        ),
        MapKind::Tent => Some(vec![(0.0, 1.0), (1.0, 1.0)]),
        _ => None,
    };
    PlotData::Density {
        edges,
        values: density.values(),
        overlay,
        title: title.to_string(),
    }
}

/// Executes a resolved experiment and writes its artifacts. The report is
/// `report.json`; timing goes to `report.run.json` so that data files are
/// byte-identical across repeated runs.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    let cfg = config.resolve()?;
    let mut art = Artifacts::new(cfg.out.as_deref().expect("resolved"))?;
    let mut exit_code = EXIT_OK;

    let result: Value = match cfg.command {
        Command::Certify => {
            let map = catalog_map(&cfg)?;
            let rep = certify_exactness(&map, cfg.grid.unwrap())?;
            exit_code = match rep.status {
                Status::Certified => EXIT_OK,
                Status::Inconclusive => EXIT_INCONCLUSIVE,
                Status::PreconditionFailed => EXIT_PRECONDITION,
            };
            serde_json::to_value(rep)?
        }
        Command::Invariant => {
            let map = catalog_map(&cfg)?;
            let m = ulam_matrix(&map, cfg.bins.unwrap())?;
            let inv = invariant_density(&m, cfg.tol.unwrap(), cfg.max_iters.unwrap())?;
            inv.density.write_csv(art.create("density.csv")?)?;
            if cfg.plot {
                art.plot(
                    "density.svg",
                    &density_plot(&map, &inv.density, "invariant density"),
                )?;
            }
            json!({ "bins": inv.density.bins(), "iterations": inv.iterations, "residual": inv.residual })
        }
        Command::Iterate => {
            let map = catalog_map(&cfg)?;
            let bins = cfg.bins.unwrap();
            let m = ulam_matrix(&map, bins)?;
            let reference =
                invariant_density(&m, cfg.tol.unwrap(), cfg.max_iters.unwrap())?.density;
            let f0 = GridDensity::uniform(map.domain_len(), bins);
            let trace = iterate_density(&map, &f0, cfg.steps.unwrap(), Some(&reference))?;
            trace.density.write_csv(art.create("density.csv")?)?;
            if cfg.plot {
                art.plot(
                    "density.svg",
                    &density_plot(&map, &trace.density, "iterated density"),
                )?;
            }
            json!({ "initial": "uniform", "l1_to_invariant": trace.distances })
        }
        Command::Birkhoff => {
            let map = catalog_map(&cfg)?;
            let len = map.domain_len();
            let x0 = match cfg.x0 {
                Some(x) => x,
                None => len * sample_rng(cfg.seed.unwrap(), 0).random_range(0.001..0.999),
            };
            let obs = cfg.observable.unwrap();
            let avg = birkhoff_average(
                &map,
                x0,
                |x| match obs {
                    Observable::Identity => x,
                    Observable::Square => x * x,
                    Observable::Lyapunov => map.slope(x).abs().ln(),
                },
                cfg.steps.unwrap(),
            )?;
            json!({ "x0": x0, "average": avg })
        }
        Command::Semiflow => run_semiflow(&cfg, &mut art)?,
        Command::Turbulence => {
            let lambda = cfg.lambda.unwrap();
            let dt = cfg.dt.unwrap();
            let max_lag = cfg.max_lag.unwrap();
            let lag_step = 10.0 * dt;
            let count = (max_lag / lag_step).round() as usize;
            let lags: Vec<f64> = (0..=count).map(|k| k as f64 * lag_step).collect();
            let rep =
                turbulence_report(lambda, cfg.seed.unwrap(), cfg.horizon.unwrap(), dt, &lags)?;
            let mut w = art.create("gamma.csv")?;
            writeln!(w, "lag,gamma")?;
            for (l, g) in rep.lags.iter().zip(&rep.gamma) {
                writeln!(w, "{l},{g}")?;
            }
            drop(w);
            if cfg.plot {
                art.plot(
                    "gamma.svg",
                    &PlotData::Decay {
                        lags: rep.lags.clone(),
                        gamma: rep.gamma.clone(),
                        lambda,
                    },
                )?;
            }
            serde_json::to_value(rep)?
        }
        Command::Stationarity => {
            let rep = stationarity_test(
                cfg.lambda.unwrap(),
                cfg.params["push-lambda"],
                cfg.horizon.unwrap(),
                cfg.samples.unwrap(),
                cfg.grid.unwrap(),
                cfg.seed.unwrap(),
            )?;
            serde_json::to_value(rep)?
        }
        Command::Sample => {
            let seed = cfg.seed.unwrap();
            let n = cfg.samples.unwrap() as u64;
            let process = cfg.process.unwrap();
            let paths: Vec<PathSample> = match process {
                Process::Invariant => {
                    let g = cfg.grid.unwrap();
                    let xs: Vec<f64> = (0..g).map(|i| i as f64 / (g - 1) as f64).collect();
                    (0..n)
                        .into_par_iter()
                        .map(|i| {
                            Ok(PathSample {
                                times: xs.clone(),
                                values: sample_invariant_state(
                                    cfg.lambda.unwrap(),
                                    &xs,
                                    seed,
                                    i,
                                    false,
                                )?,
                                seed,
                                index: i,
                            })
                        })
                        .collect::<Result<_>>()?
                }
                Process::Wiener | Process::Ou => {
                    let steps = cfg.steps.unwrap();
                    let h = cfg.horizon.unwrap();
                    let times: Vec<f64> =
                        (0..=steps).map(|k| h * k as f64 / steps as f64).collect();
                    (0..n)
                        .into_par_iter()
                        .map(|i| match process {
                            Process::Wiener => sample_wiener(&times, seed, i),
                            _ => sample_ou(cfg.lambda.unwrap(), &times, seed, i),
                        })
                        .collect::<Result<_>>()?
                }
            };
            write_samples_csv(&paths, art.create("samples.csv")?)?;
            json!({ "process": process, "samples": paths.len() })
        }
    };

    // The output location is not part of the experiment, so two runs that
    // differ only in where they write produce the same report.
    let mut recorded = cfg.clone();
    recorded.out = None;
    let report = json!({
        "schema": SCHEMA_VERSION,
        "tool": "ergokit",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": recorded,
        "result": result,
    });
    {
        let mut w = art.create("report.json")?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        writeln!(w)?;
        w.flush()?;
    }
    let unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let run_info = json!({
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
        "finished_unix": unix,
        "threads": rayon::current_num_threads(),
    });
    {
        let mut w = art.create("report.run.json")?;
        serde_json::to_writer_pretty(&mut w, &run_info)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(RunOutcome {
        exit_code,
        artifacts: art.written,
    })
}

fn run_semiflow(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    let grid = cfg.grid.unwrap();
    let horizon = cfg.horizon.unwrap();
    let snaps = cfg.steps.unwrap().max(1);
    let times: Vec<f64> = (0..=snaps)
        .map(|k| horizon * k as f64 / snaps as f64)
        .collect();
    let seed = cfg.seed.unwrap();
    let (states, summary): (Vec<GridFunction>, Value) = match cfg.model.unwrap() {
        SemiflowModel::Linear => {
            let lambda = cfg.lambda.unwrap();
            let v = sample_state(lambda, grid, seed, 0, false)?;
            let states = times
                .iter()
                .map(|&t| linear_semiflow(lambda, &v, t))
                .collect::<Result<Vec<_>>>()?;
            let red = cfg.params.get("c").map(|c| maturity_model_reduction(*c));
            (
                states,
                json!({ "model": "linear", "lambda": lambda, "maturity": red }),
            )
        }
        SemiflowModel::Density => {
            let v = sample_state(1.0, grid, seed, 0, true)?;
            let p0 = v.normalized()?;
            let states = times
                .iter()
                .map(|&t| nonlinear_density_flow(&p0, t))
                .collect::<Result<Vec<_>>>()?;
            (
                states,
                json!({ "model": "density", "initial": "normalized |zeta|" }),
            )
        }
        SemiflowModel::Size => {
            let model = SizeModel::new(cfg.params["g"], cfg.params["m"], cfg.params["d"])?;
            let dt = cfg.dt.unwrap();
            let mut u =
                GridFunction::from_fn(grid, false, |x| (std::f64::consts::PI * x).sin().powi(2))?;
            let mut states = vec![u.clone()];
            let mut clipped = 0;
            let per_snap = ((horizon / snaps as f64) / dt).round().max(1.0) as usize;
            for _ in 0..snaps {
                let out = size_structured_step(model, &u, dt, per_snap)?;
                clipped += out.clipped_nodes;
                u = out.u;
                states.push(u.clone());
            }
            let times_used: Vec<f64> = (0..=snaps).map(|k| (k * per_snap) as f64 * dt).collect();
            let summary = json!({
                "model": "size",
                "rates": model,
                "steps_per_snapshot": per_snap,
                "clipped_nodes": clipped,
                "outside_domain": "u(t, 2x) taken as 0 where 2x > 1",
                "snapshot_times": times_used,
            });
            (states, summary)
        }
    };
    write_trajectory_csv(
        &times,
        &states,
        cfg.stride.unwrap(),
        art.create("trajectory.csv")?,
    )?;
    if cfg.plot {
        let stride = cfg.stride.unwrap().max(1);
        let rows = states
            .iter()
            .map(|s| s.values().iter().step_by(stride).copied().collect())
            .collect();
        art.plot(
            "trajectory.svg",
            &PlotData::HeatMap {
                times: times.clone(),
                rows,
            },
        )?;
    }
    Ok(summary)
}

/// Sizes the global thread pool from `ERGOKIT_THREADS` when it is set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| {
            Error::InvalidParameter(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))
        })?;
        if n == 0 {
            return Err(Error::InvalidParameter(format!(
                "{THREADS_ENV} must be positive"
            )));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    Ok(())
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_FAILURE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = configure_threads()
        .and_then(|_| cli.command.into_config())
        .and_then(|cfg| run(&cfg));
    match outcome {
        Ok(o) => {
            for a in &o.artifacts {
                println!("{}", a.display());
            }
            ExitCode::from(o.exit_code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
