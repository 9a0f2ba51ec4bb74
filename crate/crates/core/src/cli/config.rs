//! Run configuration: JSON file merged with command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::hilbert::PhysicalParams;
use crate::mbe::{scale_params, DimensionlessParams, FMode, MBEState};
use crate::montecarlo::GridSpec;
use crate::sde::{Scheme, SdeModel};
use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ValidateProjection,
    MbeSteady,
    MbeEvolve,
    SdeRun,
    MasterEvolve,
    FilterReplay,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::ValidateProjection => "validate-projection",
            Mode::MbeSteady => "mbe-steady",
            Mode::MbeEvolve => "mbe-evolve",
            Mode::SdeRun => "sde-run",
            Mode::MasterEvolve => "master-evolve",
            Mode::FilterReplay => "filter-replay",
        }
    }
}

/// Dimensionless inputs; `n0` is derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionlessInput {
    #[serde(rename = "C")]
    pub c: f64,
    pub k: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub theta: f64,
    pub y_re: f64,
    #[serde(default)]
    pub y_im: f64,
}

impl DimensionlessInput {
    pub fn absorptive_bistability() -> Self {
        Self {
            c: 10.0,
            k: 0.1,
            delta: 0.0,
            theta: 0.0,
            y_re: 11.3,
            y_im: 0.0,
        }
    }

    pub fn build(&self) -> Result<DimensionlessParams> {
        DimensionlessParams::new(self.c, self.k, self.delta, self.theta, C64::new(self.y_re, self.y_im))
    }

    fn from_params(p: &DimensionlessParams) -> Self {
        Self {
            c: p.c,
            k: p.k,
            delta: p.delta,
            theta: p.theta,
            y_re: p.y.re,
            y_im: p.y.im,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimensionless: Option<DimensionlessInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical: Option<PhysicalParams>,
}

/// Both parameter families, echoed for audit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub dimensionless: DimensionlessParams,
    pub physical: PhysicalParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FModeChoice {
    Projected,
    Classical,
    Both,
}

impl FModeChoice {
    pub fn modes(&self) -> Vec<FMode> {
        match self {
            FModeChoice::Projected => vec![FMode::Projected],
            FModeChoice::Classical => vec![FMode::Classical],
            FModeChoice::Both => vec![FMode::Projected, FMode::Classical],
        }
    }

    pub fn single(&self) -> Result<FMode> {
        match self {
            FModeChoice::Projected => Ok(FMode::Projected),
            FModeChoice::Classical => Ok(FMode::Classical),
            FModeChoice::Both => Err(Error::Config(
                "f_mode: this mode needs projected or classical, not both".into(),
            )),
        }
    }
}

impl std::str::FromStr for FModeChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projected" => Ok(FModeChoice::Projected),
            "classical" => Ok(FModeChoice::Classical),
            "both" => Ok(FModeChoice::Both),
            other => Err(Error::Config(format!(
                "f_mode must be projected|classical|both, got {other}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NMax {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for NMax {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(NMax::Auto);
        }
        s.parse()
            .map(NMax::Fixed)
            .map_err(|_| Error::Config(format!("n_max must be \"auto\" or an integer, got {s}")))
    }
}

impl Serialize for NMax {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NMax::Auto => s.serialize_str("auto"),
            NMax::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for NMax {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(NMax::Fixed(n)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    /// Step in scaled time `gamma_perp t`.
    pub dt: f64,
    pub t_final: f64,
    pub n_max: NMax,
    pub sample_stride: usize,
    /// Time unit used when only dimensionless parameters are given.
    pub gamma_perp: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 100.0,
            n_max: NMax::Auto,
            sample_stride: 10,
            gamma_perp: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_traj: usize,
    pub burn_in: f64,
    pub workers: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            n_traj: 1,
            burn_in: 10.0,
            workers: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeSection {
    pub renormalize: bool,
    pub purity_tolerance: f64,
    pub pure_state_field: bool,
    pub scheme: Scheme,
    /// Write the reconstructed photocurrent of trajectory 0 (homodyne only;
    /// requires `sample_stride = 1`).
    pub write_photocurrent: bool,
}

impl Default for SdeSection {
    fn default() -> Self {
        Self {
            renormalize: false,
            purity_tolerance: 1e-2,
            pure_state_field: false,
            scheme: Scheme::EulerMaruyama,
            write_photocurrent: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DwellSection {
    pub low: f64,
    pub high: f64,
}

impl Default for DwellSection {
    fn default() -> Self {
        Self { low: 3.0, high: 6.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub n_points: usize,
    /// Field samples satisfy `|x| <= max_field`.
    pub max_field: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            n_points: 100,
            max_field: super::validate::DEFAULT_MAX_FIELD,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadySection {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl Default for SteadySection {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 12.0,
            n_points: 1201,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub params: ParamsSection,
    /// Recomputed on every run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived: Option<DerivedParams>,
    /// Defaults to `both` for `mbe-steady` and `projected` elsewhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_mode: Option<FModeChoice>,
    #[serde(default = "default_model")]
    pub model: SdeModel,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub sde: SdeSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub dwell: DwellSection,
    #[serde(default)]
    pub histogram: GridSpec,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub steady: SteadySection,
    /// Initial state; ground state with zero field when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<MBEState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photocurrent: Option<PathBuf>,
}

fn default_model() -> SdeModel {
    SdeModel::Heterodyne
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            params: ParamsSection::default(),
            derived: None,
            f_mode: None,
            model: default_model(),
            numerics: Numerics::default(),
            ensemble: EnsembleSection::default(),
            sde: SdeSection::default(),
            seed: 0,
            out: default_out(),
            dwell: DwellSection::default(),
            histogram: GridSpec::default(),
            validate: ValidateSection::default(),
            steady: SteadySection::default(),
            initial: None,
            photocurrent: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn f_mode_choice(&self) -> FModeChoice {
        self.f_mode.unwrap_or(if self.mode == Mode::MbeSteady {
            FModeChoice::Both
        } else {
            FModeChoice::Projected
        })
    }

    pub fn initial_state(&self) -> MBEState {
        self.initial.unwrap_or_else(MBEState::ground)
    }

    /// Both parameter families. The physical family fixes `gamma_perp`;
    /// otherwise `numerics.gamma_perp` sets the time unit.
    pub fn resolve_params(&self) -> Result<DerivedParams> {
        match (&self.params.dimensionless, &self.params.physical) {
            (Some(d), None) => {
                let dimensionless = d.build()?;
                let physical = dimensionless.to_physical(self.numerics.gamma_perp)?;
                Ok(DerivedParams {
                    dimensionless,
                    physical,
                })
            }
            (None, Some(p)) => Ok(DerivedParams {
                dimensionless: scale_params(p)?,
                physical: *p,
            }),
            (Some(_), Some(_)) => Err(Error::Config(
                "params: give exactly one of `dimensionless` or `physical`, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "params: one of `dimensionless` or `physical` is required".into(),
            )),
        }
    }

    pub fn gamma_perp(&self) -> f64 {
        self.params
            .physical
            .map(|p| p.gamma_perp)
            .unwrap_or(self.numerics.gamma_perp)
    }

    /// Field-level checks and derived-parameter echo.
    pub fn validate(&mut self) -> Result<()> {
        let derived = self.resolve_params()?;
        self.derived = Some(derived);
        let n = &self.numerics;
        if !(n.dt > 0.0 && n.dt.is_finite()) {
            return Err(Error::Config(format!("numerics.dt: must be > 0, got {}", n.dt)));
        }
        if !(n.t_final >= 0.0 && n.t_final.is_finite()) {
            return Err(Error::Config(format!(
                "numerics.t_final: must be >= 0, got {}",
                n.t_final
            )));
        }
        if n.sample_stride == 0 {
            return Err(Error::Config("numerics.sample_stride: must be >= 1".into()));
        }
        if !(n.gamma_perp > 0.0 && n.gamma_perp.is_finite()) {
            return Err(Error::Config(format!(
                "numerics.gamma_perp: must be > 0, got {}",
                n.gamma_perp
            )));
        }
        if self.ensemble.n_traj == 0 {
            return Err(Error::Config("ensemble.n_traj: must be >= 1".into()));
        }
        if self.ensemble.workers == 0 {
            return Err(Error::Config("ensemble.workers: must be >= 1".into()));
        }
        if !(self.ensemble.burn_in >= 0.0) {
            return Err(Error::Config(format!(
                "ensemble.burn_in: must be >= 0, got {}",
                self.ensemble.burn_in
            )));
        }
        if !(self.dwell.low < self.dwell.high) {
            return Err(Error::Config(format!(
                "dwell: low ({}) must be below high ({})",
                self.dwell.low, self.dwell.high
            )));
        }
        self.histogram
            .validate()
            .map_err(|e| Error::Config(format!("histogram: {e}")))?;
        if self.steady.n_points < 2 || !(self.steady.x_min < self.steady.x_max) {
            return Err(Error::Config(
                "steady: need n_points >= 2 and x_min < x_max".into(),
            ));
        }
        if self.mode == Mode::SdeRun && self.model == SdeModel::Filter {
            return Err(Error::Config(
                "model: sde-run needs homodyne or heterodyne; use filter-replay for the filter".into(),
            ));
        }
        if self.mode == Mode::FilterReplay && self.photocurrent.is_none() {
            return Err(Error::Config(
                "photocurrent: filter-replay needs a photocurrent file".into(),
            ));
        }
        if self.mode != Mode::MbeSteady {
            self.f_mode_choice().single()?;
        }
        Ok(())
    }

    /// Short hex digest of the resolved parameters.
    pub fn params_digest(&self) -> Result<String> {
        let derived = self.resolve_params()?;
        let bytes = serde_json::to_vec(&derived)?;
        Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
    }
}

/// Command-line overrides; every `Some` replaces the file value.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "params.C")]
    pub c: Option<f64>,
    #[arg(long = "params.k")]
    pub k: Option<f64>,
    #[arg(long = "params.delta", allow_hyphen_values = true)]
    pub delta: Option<f64>,
    #[arg(long = "params.theta", allow_hyphen_values = true)]
    pub theta: Option<f64>,
    #[arg(long = "params.y-re", allow_hyphen_values = true)]
    pub y_re: Option<f64>,
    #[arg(long = "params.y-im", allow_hyphen_values = true)]
    pub y_im: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub dt: Option<f64>,
    #[arg(long = "t-final", allow_hyphen_values = true)]
    pub t_final: Option<f64>,
    #[arg(long = "n-traj")]
    pub n_traj: Option<usize>,
    /// homodyne | heterodyne
    #[arg(long)]
    pub model: Option<SdeModel>,
    /// projected | classical | both
    #[arg(long = "f-mode")]
    pub f_mode: Option<FModeChoice>,
    /// Integer or "auto".
    #[arg(long = "n-max")]
    pub n_max: Option<NMax>,
    /// Photocurrent CSV with columns t, dy.
    #[arg(long)]
    pub photocurrent: Option<PathBuf>,
}

impl Overrides {
    fn touches_dimensionless(&self) -> bool {
        [self.c, self.k, self.delta, self.theta, self.y_re, self.y_im]
            .iter()
            .any(Option::is_some)
    }
}

/// File (if any) then flags. Dimensionless flags applied to a physical
/// parameter set convert it to the dimensionless family first, keeping its
/// `gamma_perp` as the time unit; with no parameters at all they start from
/// the absorptive-bistability set.
pub fn resolve(mode: Mode, ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &ov.config {
        Some(path) => {
            let mut c = RunConfig::load(path)?;
            if c.mode != mode {
                log::info!(
                    "config file mode {} replaced by subcommand {}",
                    c.mode.as_str(),
                    mode.as_str()
                );
                c.mode = mode;
            }
            c
        }
        None => RunConfig::new(mode),
    };

    if ov.touches_dimensionless() {
        let mut d = match (&cfg.params.dimensionless, &cfg.params.physical) {
            (Some(d), None) => *d,
            (None, Some(p)) => {
                cfg.numerics.gamma_perp = p.gamma_perp;
                DimensionlessInput::from_params(&scale_params(p)?)
            }
            (None, None) => DimensionlessInput::absorptive_bistability(),
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "params: give exactly one of `dimensionless` or `physical`, not both".into(),
                ))
            }
        };
        if let Some(v) = ov.c {
            d.c = v;
        }
        if let Some(v) = ov.k {
            d.k = v;
        }
        if let Some(v) = ov.delta {
            d.delta = v;
        }
        if let Some(v) = ov.theta {
            d.theta = v;
        }
        if let Some(v) = ov.y_re {
            d.y_re = v;
        }
        if let Some(v) = ov.y_im {
            d.y_im = v;
        }
        cfg.params = ParamsSection {
            dimensionless: Some(d),
            physical: None,
        };
    }
    if let Some(v) = ov.seed {
        cfg.seed = v;
    }
    if let Some(v) = &ov.out {
        cfg.out = v.clone();
    }
    if let Some(v) = ov.dt {
        cfg.numerics.dt = v;
    }
    if let Some(v) = ov.t_final {
        cfg.numerics.t_final = v;
    }
    if let Some(v) = ov.n_traj {
        cfg.ensemble.n_traj = v;
    }
    if let Some(v) = ov.model {
        cfg.model = v;
    }
    if let Some(v) = ov.f_mode {
        cfg.f_mode = Some(v);
    }
    if let Some(v) = ov.n_max {
        cfg.numerics.n_max = v;
    }
    if let Some(v) = &ov.photocurrent {
        cfg.photocurrent = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n_max_parses_both_forms() {
        let a: Numerics = serde_json::from_str(
            r#"{"dt":0.1,"t_final":1,"n_max":"auto","sample_stride":1,"gamma_perp":1}"#,
        )
        .unwrap();
        assert_eq!(a.n_max, NMax::Auto);
        let b: NMax = serde_json::from_str("12").unwrap();
        assert_eq!(b, NMax::Fixed(12));
        assert!(serde_json::from_str::<NMax>("\"many\"").is_err());
    }

    #[test]
    fn exactly_one_family() {
        let mut cfg = RunConfig::new(Mode::MbeSteady);
        assert!(cfg.validate().is_err());
        cfg.params.dimensionless = Some(DimensionlessInput::absorptive_bistability());
        cfg.validate().unwrap();
        cfg.params.physical = Some(cfg.derived.unwrap().physical);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("exactly one"), "{err}");
    }

    #[test]
    fn physical_family_derives_dimensionless() {
        let mut cfg = RunConfig::new(Mode::MbeSteady);
        let phys = DimensionlessParams::absorptive_bistability().to_physical(2.0).unwrap();
        cfg.params.physical = Some(phys);
        cfg.validate().unwrap();
        let d = cfg.derived.unwrap().dimensionless;
        assert!((d.c - 10.0).abs() < 1e-12 && (d.y.re - 11.3).abs() < 1e-12);
        assert_eq!(cfg.gamma_perp(), 2.0);
    }

    #[test]
    fn dimensionless_flag_converts_physical_family() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut cfg = RunConfig::new(Mode::MbeSteady);
        cfg.params.physical = Some(DimensionlessParams::absorptive_bistability().to_physical(3.0).unwrap());
        std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
        let ov = Overrides {
            config: Some(path),
            y_re: Some(9.0),
            ..Default::default()
        };
        let r = resolve(Mode::MbeSteady, &ov).unwrap();
        let d = r.params.dimensionless.unwrap();
        assert!(r.params.physical.is_none());
        assert_eq!(d.y_re, 9.0);
        assert!((d.c - 10.0).abs() < 1e-12);
        assert_eq!(r.numerics.gamma_perp, 3.0);
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"mode":"mbe-steady","nonsense":1}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("nonsense"), "{err}");
    }

    #[test]
    fn f_mode_defaults() {
        assert_eq!(RunConfig::new(Mode::MbeSteady).f_mode_choice(), FModeChoice::Both);
        assert_eq!(RunConfig::new(Mode::SdeRun).f_mode_choice(), FModeChoice::Projected);
    }
}
