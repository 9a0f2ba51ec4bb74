//! Experiment runner: parses a [`RunConfig`] (JSON file plus flag
//! overrides), runs one mode and writes CSV/JSON outputs together with a
//! `resolved_config.json` sidecar that reproduces the run.

pub mod config;
pub mod output;
pub mod validate;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::hilbert::{build_operators, embed_manifold_point, evolve_master, FockConfig};
use crate::mbe::{evolve_mbe, find_equilibria_with, scaled_to_raw, steady_state_curve, EquilibriumOptions};
use crate::montecarlo::{dwell_statistics, histogram2d, run_ensemble, DwellStatistics, EnsembleConfig};
use crate::sde::{reconstruct_photocurrent, replay_filter, SDEConfig, SdeModel};
use crate::{Error, Result};

pub use config::{resolve, Mode, Overrides, RunConfig};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Debug, Parser)]
#[command(name = "cqed-proj", version, about = "Projected cavity-QED models and simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare the projected master equation with the closed-form equations.
    ValidateProjection(Overrides),
    /// Steady-state curves y(x_r) and equilibria at the configured drive.
    MbeSteady(Overrides),
    /// Deterministic integration of the projected or classical equations.
    MbeEvolve(Overrides),
    /// Stochastic trajectories, histogram and dwell statistics.
    SdeRun(Overrides),
    /// Full master equation in a truncated Fock space.
    MasterEvolve(Overrides),
    /// Projected homodyne filter driven by a photocurrent file.
    FilterReplay(Overrides),
}

impl Command {
    pub fn split(&self) -> (Mode, &Overrides) {
        match self {
            Command::ValidateProjection(o) => (Mode::ValidateProjection, o),
            Command::MbeSteady(o) => (Mode::MbeSteady, o),
            Command::MbeEvolve(o) => (Mode::MbeEvolve, o),
            Command::SdeRun(o) => (Mode::SdeRun, o),
            Command::MasterEvolve(o) => (Mode::MasterEvolve, o),
            Command::FilterReplay(o) => (Mode::FilterReplay, o),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub params_digest: String,
    pub wall_time_s: f64,
    pub outputs: Vec<PathBuf>,
    /// Set when a numerical abort left partial outputs.
    pub partial: Option<String>,
}

impl RunSummary {
    pub fn line(&self) -> String {
        let mut s = format!(
            "mode={} params={} wall={:.3}s outputs={}",
            self.mode.as_str(),
            self.params_digest,
            self.wall_time_s,
            self.outputs.len()
        );
        if let Some(p) = &self.partial {
            s.push_str(&format!(" PARTIAL: {p}"));
        }
        s
    }
}

pub fn run_cli(cli: &Cli) -> Result<RunSummary> {
    let (mode, ov) = cli.command.split();
    let cfg = resolve(mode, ov)?;
    run(&cfg)
}

/// Runs a validated configuration. Everything is computed before the first
/// file is written.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let start = Instant::now();
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let files = match cfg.mode {
        Mode::ValidateProjection => run_validate(&cfg)?,
        Mode::MbeSteady => run_steady(&cfg)?,
        Mode::MbeEvolve => run_mbe_evolve(&cfg)?,
        Mode::SdeRun => run_sde(&cfg)?,
        Mode::MasterEvolve => run_master(&cfg)?,
        Mode::FilterReplay => run_filter(&cfg)?,
    };
    std::fs::create_dir_all(&cfg.out)?;
    let mut outputs = Vec::new();
    for artifact in &files.artifacts {
        let path = cfg.out.join(artifact.name());
        artifact.write(&path)?;
        outputs.push(path);
    }
    let cfg_path = cfg.out.join(RESOLVED_CONFIG);
    output::write_json(&cfg_path, &cfg)?;
    outputs.push(cfg_path);
    Ok(RunSummary {
        mode: cfg.mode,
        params_digest: cfg.params_digest()?,
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs,
        partial: files.partial,
    })
}

enum Artifact {
    Json(&'static str, serde_json::Value),
    Trajectory(&'static str, crate::montecarlo::TrajectoryRecord, f64),
    Steady(Vec<crate::mbe::SteadyPoint>),
    Summary(crate::montecarlo::EnsembleSummary),
    Master(crate::hilbert::MasterTrajectory),
    Photocurrent(crate::sde::Photocurrent),
}

impl Artifact {
    fn name(&self) -> &'static str {
        match self {
            Artifact::Json(n, _) | Artifact::Trajectory(n, _, _) => n,
            Artifact::Steady(_) => "steady_curve.csv",
            Artifact::Summary(_) => "ensemble_summary.csv",
            Artifact::Master(_) => "master_trajectory.csv",
            Artifact::Photocurrent(_) => "photocurrent.csv",
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        match self {
            Artifact::Json(_, v) => output::write_json(path, v),
            Artifact::Trajectory(_, rec, scale) => output::write_trajectory_csv(path, rec, *scale),
            Artifact::Steady(p) => output::write_steady_csv(path, p),
            Artifact::Summary(s) => output::write_summary_csv(path, s),
            Artifact::Master(m) => output::write_master_csv(path, m),
            Artifact::Photocurrent(pc) => output::write_photocurrent_csv(path, pc),
        }
    }
}

struct Products {
    artifacts: Vec<Artifact>,
    partial: Option<String>,
}

impl Products {
    fn complete(artifacts: Vec<Artifact>) -> Self {
        Self {
            artifacts,
            partial: None,
        }
    }
}

fn derived(cfg: &RunConfig) -> Result<config::DerivedParams> {
    cfg.resolve_params()
}

fn n_max(cfg: &RunConfig) -> Option<usize> {
    match cfg.numerics.n_max {
        config::NMax::Auto => None,
        config::NMax::Fixed(n) => Some(n),
    }
}

fn run_validate(cfg: &RunConfig) -> Result<Products> {
    let d = derived(cfg)?;
    let report = validate::projection_report(
        &d.physical,
        cfg.validate.n_points,
        cfg.validate.max_field,
        cfg.seed,
        n_max(cfg),
    )?;
    Ok(Products::complete(vec![Artifact::Json(
        "validation_report.json",
        serde_json::to_value(&report)?,
    )]))
}

fn run_steady(cfg: &RunConfig) -> Result<Products> {
    let p = derived(cfg)?.dimensionless;
    let s = &cfg.steady;
    let grid: Vec<f64> = (0..s.n_points)
        .map(|i| s.x_min + (s.x_max - s.x_min) * i as f64 / (s.n_points - 1) as f64)
        .collect();
    let mut curve = Vec::new();
    let mut equilibria = serde_json::Map::new();
    for mode in cfg.f_mode_choice().modes() {
        curve.extend(steady_state_curve(&p, &grid, mode)?);
        let search = find_equilibria_with(&p, mode, p.y, &EquilibriumOptions::default());
        equilibria.insert(mode.as_str().into(), serde_json::to_value(&search)?);
    }
    Ok(Products::complete(vec![
        Artifact::Steady(curve),
        Artifact::Json("equilibria.json", serde_json::Value::Object(equilibria)),
    ]))
}

fn run_mbe_evolve(cfg: &RunConfig) -> Result<Products> {
    let p = derived(cfg)?.dimensionless;
    let mode = cfg.f_mode_choice().single()?;
    let n = &cfg.numerics;
    let rec = evolve_mbe(&cfg.initial_state(), &p, mode, n.t_final, n.dt, n.sample_stride)?;
    let partial = rec.abort.clone();
    Ok(Products {
        artifacts: vec![Artifact::Trajectory("trajectory.csv", rec, 1.0)],
        partial,
    })
}

fn sde_config(cfg: &RunConfig) -> SDEConfig {
    SDEConfig {
        dt: cfg.numerics.dt,
        seed: cfg.seed,
        renormalize: cfg.sde.renormalize,
        purity_tolerance: cfg.sde.purity_tolerance,
        pure_state_field: cfg.sde.pure_state_field,
        scheme: cfg.sde.scheme,
        record_noise: cfg.sde.write_photocurrent,
        sample_stride: cfg.numerics.sample_stride,
    }
}

#[derive(Serialize)]
struct DwellReport<'a> {
    low: f64,
    high: f64,
    trajectories: Vec<&'a DwellStatistics>,
    upward_jumps: usize,
}

fn run_sde(cfg: &RunConfig) -> Result<Products> {
    let p = derived(cfg)?.dimensionless;
    if cfg.sde.write_photocurrent && (cfg.model != SdeModel::Homodyne || cfg.numerics.sample_stride != 1) {
        return Err(Error::Config(
            "sde.write_photocurrent: needs model homodyne and numerics.sample_stride = 1".into(),
        ));
    }
    let ens = EnsembleConfig {
        n_traj: cfg.ensemble.n_traj,
        base_seed: cfg.seed,
        burn_in: cfg.ensemble.burn_in,
        sample_stride: cfg.numerics.sample_stride,
        workers: cfg.ensemble.workers,
    };
    let out = run_ensemble(cfg.model, &cfg.initial_state(), &p, &sde_config(cfg), &ens, cfg.numerics.t_final)?;
    let hist = histogram2d(&out.records, &cfg.histogram, cfg.ensemble.burn_in)?;
    let dwell: Vec<DwellStatistics> = out
        .records
        .iter()
        .map(|r| dwell_statistics(r, cfg.dwell.low, cfg.dwell.high))
        .collect::<Result<_>>()?;
    let report = DwellReport {
        low: cfg.dwell.low,
        high: cfg.dwell.high,
        upward_jumps: dwell.iter().map(|d| d.upward_jumps()).sum(),
        trajectories: dwell.iter().collect(),
    };
    let partial = (!out.summary.aborted.is_empty()).then(|| {
        format!("{} of {} trajectories aborted", out.summary.aborted.len(), out.records.len())
    });

    let mut artifacts = vec![
        Artifact::Json("histogram.json", serde_json::to_value(&hist)?),
        Artifact::Json("dwell.json", serde_json::to_value(&report)?),
        Artifact::Json(
            "events.json",
            serde_json::to_value(
                out.records
                    .iter()
                    .map(|r| serde_json::json!({
                        "seed": r.seed,
                        "event_count": r.event_count,
                        "events": r.events,
                        "abort": r.abort,
                    }))
                    .collect::<Vec<_>>(),
            )?,
        ),
        Artifact::Summary(out.summary),
    ];
    let mut records = out.records.into_iter();
    let first = records.next().expect("n_traj >= 1");
    if cfg.sde.write_photocurrent {
        artifacts.push(Artifact::Photocurrent(reconstruct_photocurrent(&first, cfg.gamma_perp())?));
    }
    artifacts.insert(0, Artifact::Trajectory("trajectory.csv", first, 1.0));
    Ok(Products { artifacts, partial })
}

fn run_master(cfg: &RunConfig) -> Result<Products> {
    let d = derived(cfg)?;
    let phys = d.physical;
    let point = scaled_to_raw(&cfg.initial_state(), 1.0);
    let fock = match n_max(cfg) {
        Some(n) => FockConfig::new(n),
        None => {
            // cover both the initial field and the empty-cavity steady state
            let steady = phys.drive.norm() / phys.kappa.max(f64::MIN_POSITIVE);
            FockConfig::auto(point.alpha(&phys).norm().max(steady))
        }
    };
    let ops = build_operators(&phys, fock)?;
    let theta0 = embed_manifold_point(&point, &phys, &fock)?;
    let g = phys.gamma_perp;
    let n = &cfg.numerics;
    let traj = evolve_master(&theta0, &ops, &phys, n.t_final / g, n.dt / g, n.sample_stride, false)?;
    Ok(Products::complete(vec![Artifact::Master(traj)]))
}

fn run_filter(cfg: &RunConfig) -> Result<Products> {
    let d = derived(cfg)?;
    let path = cfg.photocurrent.as_ref().expect("checked in validate");
    let pc = output::read_photocurrent_csv(path)?;
    let g = cfg.gamma_perp();
    let fcfg = SDEConfig::new(cfg.numerics.dt / g, cfg.seed);
    let mut rec = replay_filter(&cfg.initial_state(), &d.dimensionless, g, &fcfg, &pc)?;
    if pc.is_empty() {
        log::warn!("photocurrent file {} has no samples", path.display());
        rec = crate::montecarlo::TrajectoryRecord {
            normalization: Some(Vec::new()),
            ..crate::montecarlo::TrajectoryRecord::new(rec.f_mode)
        };
    }
    let partial = rec.abort.clone();
    Ok(Products {
        artifacts: vec![Artifact::Trajectory("filter_trajectory.csv", rec, g)],
        partial,
    })
}

