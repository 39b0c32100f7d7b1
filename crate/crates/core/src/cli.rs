//! Command-line front end.
//!
//! Every subcommand accepts `--n`, `--out DIR` and `--config FILE`. The JSON
//! config holds the same keys as the long flags (with underscores) and its
//! values replace the flag values.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::adiabatic::{greedy_schedule, spectrum_scan, ControlOperators, GreedyConfig};
use crate::analysis::{population_histogram, q_function, Block, DEFAULT_AZIMUTH_SAMPLES, DEFAULT_POLAR_SAMPLES};
use crate::error::{Error, Result};
use crate::evolve::eigendecompose;
use crate::hilbert::{build_space, spin_coherent_state, HilbertSpace, StateVector};
use crate::io::{histogram_table, qgrid_table, schedule_table, spectrum_table, trajectory_table, write_report};
use crate::operators::linear_combine;
use crate::protocols::{
    adiabatic_squeeze_run, cat_generate, dynamic_squeeze, Deexcitation, DynamicConfig, PrepMode, ProtocolReport, StepOrder,
    DEFAULT_CHIRP_RAMP_TIME,
};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "RYDSPIN_OUT";
pub const DEFAULT_OUT: &str = "rydspin-out";

#[derive(Debug, Parser)]
#[command(name = "rydspin", version, about = "Spin squeezing and cat states in a Rydberg-blockaded ensemble")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dynamic squeezing by free JC evolution.
    Dynamic(DynamicArgs),
    /// Greedy adiabatic ramp from Jx to H_JC.
    Adiabatic(AdiabaticArgs),
    /// Cat-state generation.
    Cat(CatArgs),
    /// Eigenvalues of x H_JC + (1 - x) Jx.
    Spectrum(SpectrumArgs),
    /// Q-function of a coherent, squeezed or cat state.
    Qfunction(QfunctionArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicArgs {
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file whose keys override the flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Fixed JC evolution time [1/Omega_JC].
    #[arg(long)]
    pub evolve_time: Option<f64>,
    /// Scan the evolution time for the narrowest Jz distribution.
    #[arg(long)]
    pub optimize: bool,
    /// `ideal` or `pulsed`.
    #[arg(long, default_value = "pulsed")]
    pub prep: PrepMode,
    /// `chirp-then-rotate` or `rotate-then-chirp`.
    #[arg(long, default_value = "chirp-then-rotate")]
    pub order: StepOrder,
    /// `chirp` or `ideal`.
    #[arg(long, default_value = "chirp")]
    pub deexcitation: Deexcitation,
    /// Chirp detuning magnitude [Omega_JC]; 20 sqrt(N) by default.
    #[arg(long)]
    pub chirp_detuning: Option<f64>,
    /// Chirp ramp time [1/Omega_JC].
    #[arg(long, default_value_t = DEFAULT_CHIRP_RAMP_TIME)]
    pub chirp_ramp_time: f64,
    /// Scan window start, in units of N.
    #[arg(long, default_value_t = 0.25)]
    pub scan_min: f64,
    /// Scan window end, in units of N.
    #[arg(long, default_value_t = 2.0)]
    pub scan_max: f64,
    #[arg(long, default_value_t = 48)]
    pub scan_points: usize,
}

impl DynamicArgs {
    pub fn protocol_config(&self) -> DynamicConfig {
        DynamicConfig {
            evolve_time: self.evolve_time,
            optimize: self.optimize,
            prep: self.prep,
            order: self.order,
            deexcitation: self.deexcitation,
            chirp_detuning: self.chirp_detuning,
            chirp_ramp_time: self.chirp_ramp_time,
            scan_min: self.scan_min,
            scan_max: self.scan_max,
            scan_points: self.scan_points,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdiabaticArgs {
    #[arg(long, default_value_t = 15)]
    pub n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Largest accepted out-of-branch probability per step.
    #[arg(long, default_value_t = 2e-3)]
    pub leakage_tol: f64,
    /// Controller time step [1/Omega_JC].
    #[arg(long, default_value_t = 0.05)]
    pub dt: f64,
    #[arg(long, default_value_t = 1.0)]
    pub f2_max: f64,
    /// Give up when the ramp is not done by this time [1/Omega_JC].
    #[arg(long, default_value_t = 20000.0)]
    pub max_duration: f64,
    /// Ramp without the counterdiabatic controls.
    #[arg(long)]
    pub uncompensated: bool,
    /// Also run the other variant and report the comparison.
    #[arg(long)]
    pub compare: bool,
}

impl AdiabaticArgs {
    fn greedy(&self, compensate: bool) -> GreedyConfig {
        GreedyConfig {
            f2_max: self.f2_max,
            leakage_tol: self.leakage_tol,
            dt: self.dt,
            compensate,
            max_duration: self.max_duration,
            ..GreedyConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatArgs {
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumArgs {
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Number of equally spaced x values in [0, 1].
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum QSource {
    Coherent,
    Dynamic,
    Cat,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QfunctionArgs {
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cat")]
    pub source: QSource,
    /// `final` or a named view of the source (`rotated_x`, `rotated_y`, `rotated_phi` for cat).
    #[arg(long, default_value = "final")]
    pub view: String,
    #[arg(long, default_value_t = DEFAULT_POLAR_SAMPLES)]
    pub polar_samples: usize,
    #[arg(long, default_value_t = DEFAULT_AZIMUTH_SAMPLES)]
    pub azimuth_samples: usize,
}

/// Result of one command: the report that went to `report.json` and the
/// directory holding all outputs.
#[derive(Debug)]
pub struct Outcome {
    pub report: ProtocolReport,
    pub out_dir: PathBuf,
}

impl Outcome {
    pub fn summary(&self) -> String {
        let keys: &[&str] = match self.report.protocol.as_str() {
            "dynamic" => &["evolve_time", "delta_jz", "squeezing_db", "residual_rydberg"],
            "adiabatic" => &["duration", "initial_s", "final_s", "max_relative_energy_deviation", "duration_ratio"],
            "cat" => &["even_weight", "odd_weight", "residual_rydberg", "phi_star", "odd_weight_rotated"],
            "spectrum" => &["max_eigenvalue_x0", "max_eigenvalue_x1", "max_eigenvalue_jump"],
            _ => &["q_max", "q_argmax_theta", "q_argmax_phi"],
        };
        let mut line = format!("{} N={}", self.report.protocol, self.report.atoms);
        for k in keys {
            if let Some(v) = self.report.metric(k) {
                line.push_str(&format!(" {k}={v:.6}"));
            }
        }
        for f in &self.report.flags {
            line.push_str(&format!(" [{f}]"));
        }
        line.push_str(&format!(" -> {}", self.out_dir.display()));
        line
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(outcome) => {
            println!("{}", outcome.summary());
            if outcome.report.flags.is_empty() {
                0
            } else {
                eprintln!("warning: {}", outcome.report.flags.join(", "));
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Numerical(_) | Error::NotNormalized(_) | Error::NotHermitian(_) => 2,
        _ => 1,
    }
}

/// Replaces fields of `args` with the keys of the JSON object in `path`.
pub fn apply_config<A: Serialize + DeserializeOwned>(args: &A, path: &Path) -> Result<A> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let overrides: serde_json::Value = serde_json::from_str(&text)?;
    let serde_json::Value::Object(overrides) = overrides else {
        return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
    };
    let mut merged = serde_json::to_value(args)?;
    let fields = merged.as_object_mut().expect("argument structs serialize to objects");
    for (key, value) in overrides {
        if !fields.contains_key(&key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        fields.insert(key, value);
    }
    Ok(serde_json::from_value(merged)?)
}

fn resolve<A: Serialize + DeserializeOwned>(args: A, config: Option<&PathBuf>) -> Result<A> {
    match config {
        Some(path) => apply_config(&args, path),
        None => Ok(args),
    }
}

fn out_dir(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn coherent(space: &Arc<HilbertSpace>) -> StateVector {
    spin_coherent_state(space, std::f64::consts::FRAC_PI_2, 0.0)
}

/// Runs a parsed command and writes its files.
pub fn execute(command: Command) -> Result<Outcome> {
    match command {
        Command::Dynamic(args) => {
            let args = resolve(args.clone(), args.config.as_ref())?;
            let config = args.protocol_config();
            config.validate()?;
            let space = build_space(args.n)?;
            let dir = out_dir(args.out.clone());
            let report = dynamic_squeeze(&space, &config)?;
            let start = population_histogram(&coherent(&space), Block::All)?;
            let end = population_histogram(&report.final_state, Block::All)?;
            histogram_table(args.n, &[("final", &end), ("coherent", &start)])?.write(&dir.join("histogram.csv"))?;
            finish(report, dir)
        }
        Command::Adiabatic(args) => {
            let args = resolve(args.clone(), args.config.as_ref())?;
            let compensate = !args.uncompensated;
            let greedy = args.greedy(compensate);
            greedy.validate()?;
            let space = build_space(args.n)?;
            let dir = out_dir(args.out.clone());
            let outcome = greedy_schedule(&space, &greedy)?;
            let mut report = adiabatic_squeeze_run(&space, &outcome.schedule, compensate)?;
            report.metrics.insert("rejected_steps".into(), outcome.rejected_steps as f64);
            report.metrics.insert("hold_steps".into(), outcome.hold_steps as f64);
            if args.compare {
                let other = greedy_schedule(&space, &args.greedy(!compensate))?;
                let same_schedule = adiabatic_squeeze_run(&space, &outcome.schedule, !compensate)?;
                let (fast, slow) = if compensate {
                    (outcome.duration(), other.duration())
                } else {
                    (other.duration(), outcome.duration())
                };
                report.metrics.insert("other_duration".into(), other.duration());
                report.metrics.insert("duration_ratio".into(), slow / fast);
                for key in ["max_relative_energy_deviation", "max_leakage", "final_s"] {
                    if let Some(v) = same_schedule.metric(key) {
                        report.metrics.insert(format!("other_{key}"), v);
                    }
                }
                if let Some(points) = &same_schedule.trajectory {
                    trajectory_table(points)?.write(&dir.join("sfunction_other.csv"))?;
                }
            }
            schedule_table(&outcome.schedule)?.write(&dir.join("schedule.csv"))?;
            if let Some(points) = &report.trajectory {
                trajectory_table(points)?.write(&dir.join("sfunction.csv"))?;
            }
            let start = population_histogram(&coherent(&space), Block::All)?;
            let end = population_histogram(&report.final_state, Block::All)?;
            histogram_table(args.n, &[("final", &end), ("coherent", &start)])?.write(&dir.join("histogram.csv"))?;
            finish(report, dir)
        }
        Command::Cat(args) => {
            let args = resolve(args.clone(), args.config.as_ref())?;
            let space = build_space(args.n)?;
            let dir = out_dir(args.out.clone());
            let report = cat_generate(&space)?;
            let mut hists = vec![
                ("final".to_string(), population_histogram(&report.final_state, Block::All)?),
                ("coherent".to_string(), population_histogram(&coherent(&space), Block::All)?),
            ];
            for (name, state) in &report.views {
                hists.push((name.clone(), population_histogram(state, Block::All)?));
            }
            let columns: Vec<_> = hists.iter().map(|(n, h)| (n.as_str(), h)).collect();
            histogram_table(args.n, &columns)?.write(&dir.join("histogram.csv"))?;
            finish(report, dir)
        }
        Command::Spectrum(args) => {
            let args = resolve(args.clone(), args.config.as_ref())?;
            if args.grid < 2 {
                return Err(Error::Config(format!("grid needs at least 2 points, got {}", args.grid)));
            }
            let space = build_space(args.n)?;
            let dir = out_dir(args.out.clone());
            let report = spectrum_report(&space, args.grid, &dir)?;
            finish(report, dir)
        }
        Command::Qfunction(args) => {
            let args = resolve(args.clone(), args.config.as_ref())?;
            if args.polar_samples < 2 || args.azimuth_samples < 1 {
                return Err(Error::Config("Q grid needs at least 2 polar and 1 azimuth samples".into()));
            }
            let space = build_space(args.n)?;
            let dir = out_dir(args.out.clone());
            let source = match args.source {
                QSource::Coherent => ProtocolReport {
                    protocol: "coherent".into(),
                    atoms: args.n,
                    metrics: Default::default(),
                    flags: Vec::new(),
                    trajectory: None,
                    final_state: coherent(&space),
                    views: Vec::new(),
                },
                QSource::Dynamic => dynamic_squeeze(&space, &DynamicConfig { optimize: true, ..DynamicConfig::default() })?,
                QSource::Cat => cat_generate(&space)?,
            };
            let state = match args.view.as_str() {
                "final" => source.final_state.clone(),
                name => source
                    .view(name)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("source {:?} has no view `{name}`", args.source)))?,
            };
            let grid = q_function(&state, args.polar_samples, args.azimuth_samples)?;
            qgrid_table(&grid)?.write(&dir.join("qfunction.csv"))?;
            let (i, j, q) = grid.argmax();
            let mut report = source;
            report.protocol = "qfunction".into();
            report.metrics.insert("q_max".into(), q);
            report.metrics.insert("q_argmax_theta".into(), grid.polar(i));
            report.metrics.insert("q_argmax_phi".into(), grid.azimuth(j));
            report.metrics.insert("q_ground_weight".into(), grid.ground_weight);
            report.final_state = state;
            finish(report, dir)
        }
    }
}

fn spectrum_report(space: &Arc<HilbertSpace>, grid: usize, dir: &Path) -> Result<ProtocolReport> {
    let xs: Vec<f64> = (0..grid).map(|k| k as f64 / (grid - 1) as f64).collect();
    let table = spectrum_scan(space, &xs)?;
    spectrum_table(&table)?.write(&dir.join("spectrum.csv"))?;

    let ops = ControlOperators::new(space);
    let (jx, jc) = (ops.bare(1.0, 0.0), ops.bare(0.0, 1.0));
    // Weyl: eigenvalues move by at most the norm of the perturbation.
    let slope = linear_combine(&[(1.0, &jc), (-1.0, &jx)])?.row_sum_norm();
    let mut max_jump: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for k in 1..xs.len() {
        let dx = xs[k] - xs[k - 1];
        for (a, b) in table.eigenvalues[k].iter().zip(&table.eigenvalues[k - 1]) {
            max_jump = max_jump.max((a - b).abs());
            worst_ratio = worst_ratio.max((a - b).abs() / (slope * dx));
        }
    }
    let top = eigendecompose(&jc)?;
    let d = top.dim();
    let state = StateVector::normalized(space.clone(), top.eigenvector(d - 1))?;
    let first = &table.eigenvalues[0];
    let last = &table.eigenvalues[table.eigenvalues.len() - 1];

    let mut report = ProtocolReport {
        protocol: "spectrum".into(),
        atoms: space.atoms(),
        metrics: Default::default(),
        flags: Vec::new(),
        trajectory: None,
        final_state: state,
        views: Vec::new(),
    };
    report.metrics.insert("max_eigenvalue_x0".into(), first[first.len() - 1]);
    report.metrics.insert("min_eigenvalue_x0".into(), first[0]);
    report.metrics.insert("max_eigenvalue_x1".into(), last[last.len() - 1]);
    report.metrics.insert("min_eigenvalue_x1".into(), last[0]);
    report.metrics.insert("max_eigenvalue_jump".into(), max_jump);
    report.metrics.insert("jump_bound_ratio".into(), worst_ratio);
    if worst_ratio > 1.0 + 1e-9 {
        report.flags.push("spectrum_jump_above_bound".into());
    }
    Ok(report)
}

fn finish(report: ProtocolReport, dir: PathBuf) -> Result<Outcome> {
    report.validate()?;
    write_report(&report, &dir.join("report.json"))?;
    Ok(Outcome { report, out_dir: dir })
}
