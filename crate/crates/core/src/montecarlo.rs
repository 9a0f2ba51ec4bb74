//! Trajectory ensembles and their statistics: per-time moments, 2-D
//! occupation histograms of the field quadratures and jump/dwell analysis of
//! `x_r`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mbe::{DimensionlessParams, FMode, MBEState};
use crate::sde::{purity, simulate_indexed, NoiseRecord, SDEConfig, SdeModel};
use crate::{Error, Result};

/// At most this many events are stored per trajectory; `event_count` keeps
/// the full tally.
pub const MAX_STORED_EVENTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Event {
    /// Purity left the tolerance band (logged once per excursion).
    PurityDrift { time: f64, purity: f64 },
    /// Atomic variables were rescaled onto the purity shell.
    Renormalized { time: f64, purity: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedProvenance {
    pub base_seed: u64,
    pub trajectory: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<MBEState>,
    pub purity: Vec<f64>,
    pub events: Vec<Event>,
    pub event_count: usize,
    pub seed: Option<SeedProvenance>,
    /// Set when integration stopped early; samples up to that point are kept.
    pub abort: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseRecord>,
    /// Filter normalization `n`, one per sample.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Vec<f64>>,
    pub f_mode: FMode,
}

impl TrajectoryRecord {
    pub fn new(f_mode: FMode) -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            purity: Vec::new(),
            events: Vec::new(),
            event_count: 0,
            seed: None,
            abort: None,
            noise: None,
            normalization: None,
            f_mode,
        }
    }

    pub fn push(&mut self, t: f64, state: MBEState) {
        debug_assert!(self.times.last().is_none_or(|&last| t > last));
        self.times.push(t);
        self.purity.push(purity(&state));
        self.states.push(state);
    }

    pub fn note(&mut self, event: Event) {
        self.event_count += 1;
        if self.events.len() < MAX_STORED_EVENTS {
            self.events.push(event);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn f_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(move |s| self.f_mode.factor(s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub base_seed: u64,
    /// Scaled time discarded before histogramming.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_burn_in() -> f64 {
    10.0
}

fn default_stride() -> usize {
    1
}

fn default_workers() -> usize {
    1
}

impl EnsembleConfig {
    pub fn new(n_traj: usize, base_seed: u64) -> Self {
        Self {
            n_traj,
            base_seed,
            burn_in: default_burn_in(),
            sample_stride: default_stride(),
            workers: default_workers(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::InvalidParams("n_traj must be >= 1".into()));
        }
        if !(self.burn_in >= 0.0) || !self.burn_in.is_finite() {
            return Err(Error::InvalidParams(format!("burn_in must be >= 0, got {}", self.burn_in)));
        }
        if self.workers == 0 {
            return Err(Error::InvalidParams("workers must be >= 1".into()));
        }
        if self.sample_stride == 0 {
            return Err(Error::InvalidParams("sample_stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-sample-index ensemble moments over the trajectories that reached it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    /// `[p_r, p_i, D, x_r, x_i]`
    pub mean: Vec<[f64; 5]>,
    /// Unbiased sample variance; zero with fewer than two contributors.
    pub variance: Vec<[f64; 5]>,
    pub count: Vec<usize>,
    pub aborted: Vec<(usize, String)>,
}

impl EnsembleSummary {
    pub fn from_records(records: &[TrajectoryRecord]) -> Self {
        let longest = records.iter().max_by_key(|r| r.len());
        let times = longest.map(|r| r.times.clone()).unwrap_or_default();
        let mut mean = vec![[0.0; 5]; times.len()];
        let mut m2 = vec![[0.0; 5]; times.len()];
        let mut count = vec![0usize; times.len()];
        for r in records {
            for (i, s) in r.states.iter().enumerate() {
                count[i] += 1;
                let c = count[i] as f64;
                let v = s.to_array();
                for j in 0..5 {
                    let delta = v[j] - mean[i][j];
                    mean[i][j] += delta / c;
                    m2[i][j] += delta * (v[j] - mean[i][j]);
                }
            }
        }
        let variance = m2
            .iter()
            .zip(&count)
            .map(|(m, &c)| {
                if c < 2 {
                    [0.0; 5]
                } else {
                    m.map(|v| v / (c - 1) as f64)
                }
            })
            .collect();
        let aborted = records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.abort.clone().map(|a| (i, a)))
            .collect();
        Self {
            times,
            mean,
            variance,
            count,
            aborted,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutput {
    pub records: Vec<TrajectoryRecord>,
    pub summary: EnsembleSummary,
}

/// Runs `n_traj` trajectories; trajectory `i` uses noise stream `i` of
/// `base_seed`, so the output does not depend on `workers`.
pub fn run_ensemble(
    model: SdeModel,
    state0: &MBEState,
    params: &DimensionlessParams,
    sde_config: &SDEConfig,
    ens_config: &EnsembleConfig,
    t_final: f64,
) -> Result<EnsembleOutput> {
    ens_config.validate()?;
    sde_config.validate()?;
    if model == SdeModel::Filter {
        return Err(Error::Unsupported(
            "ensembles are generated by the homodyne or heterodyne model".into(),
        ));
    }
    let cfg = SDEConfig {
        seed: ens_config.base_seed,
        sample_stride: ens_config.sample_stride,
        ..*sde_config
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ens_config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let records: Vec<TrajectoryRecord> = pool.install(|| {
        (0..ens_config.n_traj)
            .into_par_iter()
            .map(|i| simulate_indexed(model, state0, params, &cfg, t_final, None, i as u64, 1.0))
            .collect::<Result<Vec<_>>>()
    })?;
    for (i, r) in records.iter().enumerate() {
        if let Some(reason) = &r.abort {
            log::warn!("trajectory {i} aborted: {reason}");
        }
    }
    let summary = EnsembleSummary::from_records(&records);
    Ok(EnsembleOutput { records, summary })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub x_r_min: f64,
    pub x_r_max: f64,
    pub x_r_bins: usize,
    pub x_i_min: f64,
    pub x_i_max: f64,
    pub x_i_bins: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_r_min: -2.0,
            x_r_max: 12.0,
            x_r_bins: 140,
            x_i_min: -7.0,
            x_i_max: 7.0,
            x_i_bins: 140,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64, n: usize| lo.is_finite() && hi.is_finite() && lo < hi && n > 0;
        if !ok(self.x_r_min, self.x_r_max, self.x_r_bins) || !ok(self.x_i_min, self.x_i_max, self.x_i_bins)
        {
            return Err(Error::InvalidParams(format!(
                "histogram bounds must be finite with min < max and bins > 0: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn x_r_width(&self) -> f64 {
        (self.x_r_max - self.x_r_min) / self.x_r_bins as f64
    }

    pub fn x_i_width(&self) -> f64 {
        (self.x_i_max - self.x_i_min) / self.x_i_bins as f64
    }

    /// Bin indices; the upper edge belongs to the last bin.
    pub fn locate(&self, x_r: f64, x_i: f64) -> Option<(usize, usize)> {
        let idx = |v: f64, lo: f64, hi: f64, n: usize| {
            if !(v >= lo && v <= hi) {
                return None;
            }
            let k = ((v - lo) / (hi - lo) * n as f64).floor() as usize;
            Some(k.min(n - 1))
        };
        Some((
            idx(x_r, self.x_r_min, self.x_r_max, self.x_r_bins)?,
            idx(x_i, self.x_i_min, self.x_i_max, self.x_i_bins)?,
        ))
    }

    pub fn x_r_center(&self, row: usize) -> f64 {
        self.x_r_min + (row as f64 + 0.5) * self.x_r_width()
    }

    pub fn x_i_center(&self, col: usize) -> f64 {
        self.x_i_min + (col as f64 + 0.5) * self.x_i_width()
    }
}

/// Occupation counts of `(x_r, x_i)`. Row index is the `x_r` bin, column
/// index the `x_i` bin, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramGrid {
    pub spec: GridSpec,
    pub counts: Vec<u64>,
    /// All post-burn-in samples, in range or not.
    pub total_samples: u64,
    pub overflow: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl HistogramGrid {
    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.spec.x_i_bins + col]
    }

    pub fn binned(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Center and count of the most populated bin.
    pub fn mode(&self) -> Option<(f64, f64, u64)> {
        let (k, &c) = self
            .counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        if c == 0 {
            return None;
        }
        let (row, col) = (k / self.spec.x_i_bins, k % self.spec.x_i_bins);
        Some((self.spec.x_r_center(row), self.spec.x_i_center(col), c))
    }

    /// Bin counts whose center satisfies `region`.
    fn region_counts(&self, region: impl Fn(f64, f64) -> bool) -> Vec<u64> {
        let n_i = self.spec.x_i_bins;
        self.counts
            .iter()
            .enumerate()
            .filter(|(k, _)| region(self.spec.x_r_center(k / n_i), self.spec.x_i_center(k % n_i)))
            .map(|(_, &c)| c)
            .collect()
    }

    /// Fraction of all post-burn-in samples in bins whose center satisfies
    /// `region`.
    pub fn mass_fraction(&self, region: impl Fn(f64, f64) -> bool) -> f64 {
        if self.total_samples == 0 {
            return 0.0;
        }
        self.region_counts(region).iter().sum::<u64>() as f64 / self.total_samples as f64
    }

    /// Smallest number of bins in `region` that together hold `fraction` of
    /// the region's mass.
    pub fn bins_to_cover(&self, region: impl Fn(f64, f64) -> bool, fraction: f64) -> usize {
        let mut c = self.region_counts(region);
        let total: u64 = c.iter().sum();
        if total == 0 {
            return 0;
        }
        c.sort_unstable_by(|a, b| b.cmp(a));
        let target = fraction * total as f64;
        let mut acc = 0u64;
        for (i, v) in c.iter().enumerate() {
            acc += v;
            if acc as f64 >= target {
                return i + 1;
            }
        }
        c.len()
    }

    pub fn occupied_bins(&self, region: impl Fn(f64, f64) -> bool) -> usize {
        self.region_counts(region).iter().filter(|&&c| c > 0).count()
    }
}

/// Bins samples with `t >= burn_in` of every record.
pub fn histogram2d(records: &[TrajectoryRecord], spec: &GridSpec, burn_in: f64) -> Result<HistogramGrid> {
    spec.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidParams("histogram needs at least one record".into()));
    }
    let mut counts = vec![0u64; spec.x_r_bins * spec.x_i_bins];
    let mut total = 0u64;
    let mut overflow = 0u64;
    for r in records {
        for (t, s) in r.times.iter().zip(&r.states) {
            if *t < burn_in {
                continue;
            }
            total += 1;
            match spec.locate(s.x_r, s.x_i) {
                Some((row, col)) => counts[row * spec.x_i_bins + col] += 1,
                None => overflow += 1,
            }
        }
    }
    let diagnostic = (overflow == total).then(|| {
        format!("no in-range samples after burn-in ({total} samples, all outside the grid)")
    });
    if let Some(d) = &diagnostic {
        log::warn!("{d}");
    }
    Ok(HistogramGrid {
        spec: *spec,
        counts,
        total_samples: total,
        overflow,
        diagnostic,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    High,
    /// Before the first threshold crossing when the record starts in the band.
    Undetermined,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dwell {
    pub level: Level,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub from: Level,
    pub to: Level,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DwellStatistics {
    /// Consecutive intervals tiling `[t_first, t_last]`.
    pub dwells: Vec<Dwell>,
    /// Switches between `Low` and `High`.
    pub jumps: Vec<Jump>,
    pub note: Option<String>,
}

impl DwellStatistics {
    pub fn upward_jumps(&self) -> usize {
        self.jumps
            .iter()
            .filter(|j| j.from == Level::Low && j.to == Level::High)
            .count()
    }

    pub fn dwell_times(&self, level: Level) -> Vec<f64> {
        self.dwells
            .iter()
            .filter(|d| d.level == level)
            .map(|d| d.end - d.start)
            .collect()
    }
}

/// Hysteresis classification of `x_r`: the level becomes `High` once
/// `x_r > high` and `Low` once `x_r < low`, and is kept in between.
pub fn dwell_statistics(record: &TrajectoryRecord, low: f64, high: f64) -> Result<DwellStatistics> {
    if !(low < high) {
        return Err(Error::InvalidParams(format!(
            "low threshold {low} must be below high threshold {high}"
        )));
    }
    let mut out = DwellStatistics::default();
    let (Some(&t0), Some(&t_end)) = (record.times.first(), record.times.last()) else {
        out.note = Some("empty record".into());
        return Ok(out);
    };
    let classify = |x: f64| {
        if x < low {
            Some(Level::Low)
        } else if x > high {
            Some(Level::High)
        } else {
            None
        }
    };
    let mut level = Level::Undetermined;
    let mut start = t0;
    for (t, s) in record.times.iter().zip(&record.states) {
        let Some(next) = classify(s.x_r) else { continue };
        if next == level {
            continue;
        }
        if *t > start {
            out.dwells.push(Dwell { level, start, end: *t });
        }
        if level != Level::Undetermined {
            out.jumps.push(Jump {
                time: *t,
                from: level,
                to: next,
            });
        }
        level = next;
        start = *t;
    }
    out.dwells.push(Dwell {
        level,
        start,
        end: t_end,
    });

    let (min, max) = record
        .states
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.x_r), b.max(s.x_r)));
    if max <= high {
        out.note = Some(format!("x_r never exceeds the high threshold {high} (max {max})"));
    } else if min >= low {
        out.note = Some(format!("x_r never falls below the low threshold {low} (min {min})"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::simulate_trajectory;

    fn record_from(xs: &[f64], dt: f64) -> TrajectoryRecord {
        let mut r = TrajectoryRecord::new(FMode::Projected);
        for (i, &x) in xs.iter().enumerate() {
            r.push(
                i as f64 * dt,
                MBEState {
                    x_r: x,
                    ..MBEState::ground()
                },
            );
        }
        r
    }

    #[test]
    fn constant_record_is_one_low_dwell() {
        let r = record_from(&[1.0; 50], 0.1);
        let d = dwell_statistics(&r, 3.0, 6.0).unwrap();
        assert!(d.jumps.is_empty());
        assert_eq!(d.dwells.len(), 1);
        assert_eq!(d.dwells[0].level, Level::Low);
        assert_eq!(d.dwells[0].start, 0.0);
        assert!((d.dwells[0].end - 4.9).abs() < 1e-12);
        assert!(d.note.is_some());
    }

    #[test]
    fn square_wave_jump_count() {
        let xs: Vec<f64> = (0..100).map(|i| if (i / 10) % 2 == 0 { 1.0 } else { 8.0 }).collect();
        let r = record_from(&xs, 1.0);
        let d = dwell_statistics(&r, 3.0, 6.0).unwrap();
        assert_eq!(d.jumps.len(), 9);
        assert_eq!(d.upward_jumps(), 5);
        assert_eq!(d.dwells.len(), 10);
        for w in d.dwells.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
        assert_eq!(d.dwells.last().unwrap().end, 99.0);
    }

    #[test]
    fn chatter_inside_band_is_ignored() {
        let r = record_from(&[1.0, 4.0, 2.9, 5.9, 3.1, 6.1, 5.0, 3.5, 6.5, 2.0], 1.0);
        let d = dwell_statistics(&r, 3.0, 6.0).unwrap();
        assert_eq!(d.jumps.len(), 2);
        assert_eq!(d.jumps[0].time, 5.0);
        assert_eq!(d.jumps[1].time, 9.0);
    }

    #[test]
    fn undetermined_start() {
        let r = record_from(&[4.0, 5.0, 7.0, 7.0], 1.0);
        let d = dwell_statistics(&r, 3.0, 6.0).unwrap();
        assert!(d.jumps.is_empty());
        assert_eq!(d.dwells[0].level, Level::Undetermined);
        assert_eq!(d.dwells[1].level, Level::High);
    }

    #[test]
    fn thresholds_must_be_ordered() {
        assert!(dwell_statistics(&record_from(&[1.0], 1.0), 6.0, 3.0).is_err());
    }

    #[test]
    fn single_point_histogram() {
        let r = record_from(&[1.03; 20], 1.0);
        let h = histogram2d(&[r], &GridSpec::default(), 0.0).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        let (xr, xi, c) = h.mode().unwrap();
        assert!((xr - 1.05).abs() < 1e-12 && (xi - 0.05).abs() < 1e-12);
        assert_eq!(c, 20);
    }

    #[test]
    fn histogram_conservation_and_burn_in() {
        let xs: Vec<f64> = (0..200).map(|i| -5.0 + 0.1 * i as f64).collect();
        let r = record_from(&xs, 1.0);
        let h = histogram2d(&[r.clone(), r], &GridSpec::default(), 50.0).unwrap();
        assert_eq!(h.total_samples, 300);
        assert_eq!(h.binned() + h.overflow, h.total_samples);
        assert!(h.overflow > 0);
        let empty = histogram2d(&[record_from(&[100.0; 3], 1.0)], &GridSpec::default(), 0.0).unwrap();
        assert!(empty.diagnostic.is_some());
        assert!(histogram2d(&[], &GridSpec::default(), 0.0).is_err());
    }

    #[test]
    fn region_helpers() {
        let mut xs = vec![1.0; 90];
        xs.extend((0..10).map(|i| 6.05 + 0.2 * i as f64));
        let h = histogram2d(&[record_from(&xs, 1.0)], &GridSpec::default(), 0.0).unwrap();
        let high = |x: f64, _: f64| x > 6.0;
        assert!((h.mass_fraction(high) - 0.1).abs() < 1e-12);
        assert_eq!(h.occupied_bins(high), 10);
        assert_eq!(h.bins_to_cover(high, 0.9), 9);
    }

    #[test]
    fn single_trajectory_ensemble_matches_direct_run() {
        let p = DimensionlessParams::absorptive_bistability();
        let sde = SDEConfig::new(1e-3, 77);
        let ens = EnsembleConfig {
            burn_in: 0.0,
            ..EnsembleConfig::new(1, 77)
        };
        let out = run_ensemble(SdeModel::Heterodyne, &MBEState::ground(), &p, &sde, &ens, 2.0).unwrap();
        let direct = simulate_trajectory(SdeModel::Heterodyne, &MBEState::ground(), &p, &sde, 2.0, None).unwrap();
        assert_eq!(out.records, vec![direct]);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let p = DimensionlessParams::absorptive_bistability();
        let sde = SDEConfig::new(1e-3, 0);
        let mut ens = EnsembleConfig {
            sample_stride: 10,
            ..EnsembleConfig::new(6, 2024)
        };
        let a = run_ensemble(SdeModel::Homodyne, &MBEState::ground(), &p, &sde, &ens, 1.0).unwrap();
        ens.workers = 3;
        let b = run_ensemble(SdeModel::Homodyne, &MBEState::ground(), &p, &sde, &ens, 1.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.records[0].states, a.records[1].states);
    }

    #[test]
    fn summary_moments() {
        let a = record_from(&[1.0, 2.0], 1.0);
        let b = record_from(&[3.0, 6.0, 9.0], 1.0);
        let s = EnsembleSummary::from_records(&[a, b]);
        assert_eq!(s.count, vec![2, 2, 1]);
        assert_eq!(s.mean[0][3], 2.0);
        assert_eq!(s.variance[0][3], 2.0);
        assert_eq!(s.mean[1][3], 4.0);
        assert_eq!(s.variance[1][3], 8.0);
        assert_eq!(s.variance[2][3], 0.0);
    }

    #[test]
    fn ensemble_config_validation() {
        assert!(EnsembleConfig::new(0, 1).validate().is_err());
        let bad = EnsembleConfig {
            burn_in: -1.0,
            ..EnsembleConfig::new(1, 1)
        };
        assert!(bad.validate().is_err());
    }
}
