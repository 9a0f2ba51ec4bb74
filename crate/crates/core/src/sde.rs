//! Stochastic semiclassical models from projected quantum filters for the
//! atomic fluorescence.
//!
//! * [`projected_filter_step`] advances the projected homodyne filter driven
//!   by a measured photocurrent. It works in unscaled time with an explicit
//!   `gamma_perp`.
//! * [`homodyne_sim_step`] and [`heterodyne_sim_step`] advance the
//!   self-contained simulation models, in scaled time `gamma_perp t`.
//!
//! All models share the deterministic drift of [`mbe_rhs`] in projected mode.
//! The noise terms vanish at the ground state `p = 0, D = 1` and preserve the
//! purity shell `2p_r^2 + 2p_i^2 + D^2 = 1` in continuous time.

use nalgebra::Vector5;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mbe::{mbe_jacobian, mbe_rhs, DimensionlessParams, FMode, MBEState, DIVERGENCE_LIMIT};
use crate::montecarlo::{Event, SeedProvenance, TrajectoryRecord};
use crate::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    /// Scalar-noise Milstein; homodyne model only.
    Milstein,
    /// Strong order 1.5 Ito-Taylor scheme; homodyne model only. Draws two
    /// Gaussians per step.
    #[serde(rename = "taylor-1.5")]
    Taylor15,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SDEConfig {
    /// Step in scaled time (unscaled for the filter model).
    pub dt: f64,
    pub seed: u64,
    /// Rescale `(p_r, p_i, D)` back onto the purity shell when it drifts by
    /// more than `purity_tolerance`.
    #[serde(default)]
    pub renormalize: bool,
    #[serde(default = "default_purity_tolerance")]
    pub purity_tolerance: f64,
    /// Use the pure-state field equations (`F = 1`). Only honoured together
    /// with `renormalize`.
    #[serde(default)]
    pub pure_state_field: bool,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub record_noise: bool,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
}

fn default_purity_tolerance() -> f64 {
    1e-2
}

fn default_stride() -> usize {
    1
}

impl SDEConfig {
    pub fn new(dt: f64, seed: u64) -> Self {
        Self {
            dt,
            seed,
            renormalize: false,
            purity_tolerance: default_purity_tolerance(),
            pure_state_field: false,
            scheme: Scheme::EulerMaruyama,
            record_noise: false,
            sample_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParams(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.purity_tolerance > 0.0) {
            return Err(Error::InvalidParams(format!(
                "purity_tolerance must be > 0, got {}",
                self.purity_tolerance
            )));
        }
        Ok(())
    }

    pub fn field_mode(&self) -> FMode {
        if self.renormalize && self.pure_state_field {
            FMode::Classical
        } else {
            FMode::Projected
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdeModel {
    Homodyne,
    Heterodyne,
    /// Projected homodyne filter replaying a photocurrent record.
    Filter,
}

impl std::str::FromStr for SdeModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homodyne" => Ok(SdeModel::Homodyne),
            "heterodyne" => Ok(SdeModel::Heterodyne),
            "filter" => Ok(SdeModel::Filter),
            other => Err(Error::Config(format!(
                "model must be homodyne|heterodyne, got {other}"
            ))),
        }
    }
}

/// Per-step Wiener increments, each with variance `dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseRecord {
    Homodyne { dt: f64, dw: Vec<f64> },
    Heterodyne { dt: f64, dw_r: Vec<f64>, dw_i: Vec<f64> },
}

/// Gaussian increments for one trajectory: ChaCha8 seeded with `seed`, on
/// stream `trajectory`. Draw `k` of a trajectory depends only on
/// `(seed, trajectory, k)`.
pub struct NoiseStream {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
}

impl NoiseStream {
    pub fn new(seed: u64, trajectory: u64, dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trajectory);
        Self {
            rng,
            sqrt_dt: dt.sqrt(),
        }
    }

    pub fn next_increment(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        z * self.sqrt_dt
    }

    /// `(dW, dZ)` with `dZ` the time integral of `W - W_start` over the step.
    pub fn next_pair(&mut self) -> (f64, f64) {
        let z1: f64 = self.rng.sample(StandardNormal);
        let z2: f64 = self.rng.sample(StandardNormal);
        let h = self.sqrt_dt;
        (h * z1, 0.5 * h * h * h * (z1 + z2 / 3f64.sqrt()))
    }
}

/// Normalized filter variables plus the normalization `n` of the underlying
/// unnormalized state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub n: f64,
    pub p_r: f64,
    pub p_i: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub x_r: f64,
    pub x_i: f64,
}

impl FilterState {
    pub fn from_state(s: &MBEState, n: f64) -> Self {
        Self {
            n,
            p_r: s.p_r,
            p_i: s.p_i,
            d: s.d,
            x_r: s.x_r,
            x_i: s.x_i,
        }
    }

    pub fn state(&self) -> MBEState {
        MBEState {
            p_r: self.p_r,
            p_i: self.p_i,
            d: self.d,
            x_r: self.x_r,
            x_i: self.x_i,
        }
    }
}

/// One Euler step of the projected homodyne filter in unscaled time.
///
/// `dy` is the photocurrent increment over `[t, t + dt]`. The normalization
/// follows its Ito form `dn = -2 sqrt(gamma) p_r n dy`.
pub fn projected_filter_step(
    state: &FilterState,
    params: &DimensionlessParams,
    gamma_perp: f64,
    dy: f64,
    dt: f64,
) -> FilterState {
    let FilterState { n, p_r, p_i, d, x_r, x_i } = *state;
    let g = gamma_perp;
    let sg = g.sqrt();
    let p = params;
    let f = crate::mbe::f_factor(&state.state());

    let dp_r = g * (-3.0 * p_r + p.delta * p_i + 2.0 * p_r * d + d * x_r + 4.0 * p_r.powi(3)) * dt
        + sg * (2.0 * p_r * p_r + d - 1.0) * dy;
    let dp_i = g * (-p.delta * p_r - p_i + d * x_i + 4.0 * p_r * p_r * p_i) * dt
        + 2.0 * sg * p_r * p_i * dy;
    let dd = g
        * (2.0 - 2.0 * d - 2.0 * p_r * x_r - 2.0 * p_i * x_i - 4.0 * p_r * p_r
            + 4.0 * p_r * p_r * d)
        * dt
        - 2.0 * sg * (p_r - p_r * d) * dy;
    let dx_r = -p.k * g * (x_r - p.theta * x_i - p.y.re + 2.0 * p.c * p_r * f) * dt;
    let dx_i = -p.k * g * (x_i + p.theta * x_r - p.y.im + 2.0 * p.c * p_i * f) * dt;
    let dn = -2.0 * sg * p_r * n * dy;

    FilterState {
        n: n + dn,
        p_r: p_r + dp_r,
        p_i: p_i + dp_i,
        d: d + dd,
        x_r: x_r + dx_r,
        x_i: x_i + dx_i,
    }
}

/// Noise coefficients of `(p_r, p_i, D)` in the homodyne model.
pub fn homodyne_diffusion(s: &MBEState) -> [f64; 3] {
    [
        2.0 * s.p_r * s.p_r + s.d - 1.0,
        2.0 * s.p_r * s.p_i,
        2.0 * s.p_r * (s.d - 1.0),
    ]
}

/// Noise coefficients of `(p_r, p_i, D)` for the two heterodyne quadratures.
pub fn heterodyne_diffusion(s: &MBEState) -> ([f64; 3], [f64; 3]) {
    let on_r = [
        FRAC_1_SQRT_2 * (2.0 * s.p_r * s.p_r + s.d - 1.0),
        SQRT_2 * s.p_r * s.p_i,
        SQRT_2 * s.p_r * (s.d - 1.0),
    ];
    let on_i = [
        -SQRT_2 * s.p_r * s.p_i,
        -FRAC_1_SQRT_2 * (2.0 * s.p_i * s.p_i + s.d - 1.0),
        -SQRT_2 * s.p_i * (s.d - 1.0),
    ];
    (on_r, on_i)
}

/// `(b . grad) b` for the homodyne diffusion `b`.
fn homodyne_milstein_correction(s: &MBEState) -> [f64; 3] {
    let [b_r, b_i, b_d] = homodyne_diffusion(s);
    [
        4.0 * s.p_r * b_r + b_d,
        2.0 * s.p_i * b_r + 2.0 * s.p_r * b_i,
        2.0 * (s.d - 1.0) * b_r + 2.0 * s.p_r * b_d,
    ]
}

fn add_atomic(s: &MBEState, v: [f64; 3], scale: f64) -> MBEState {
    MBEState {
        p_r: s.p_r + scale * v[0],
        p_i: s.p_i + scale * v[1],
        d: s.d + scale * v[2],
        ..*s
    }
}

/// Euler-Maruyama step of the homodyne simulation model with the F-bearing
/// field equations.
pub fn homodyne_sim_step(
    state: &MBEState,
    params: &DimensionlessParams,
    dw: f64,
    dt: f64,
) -> MBEState {
    homodyne_step_with(state, params, dw, dt, Scheme::EulerMaruyama, FMode::Projected)
}

pub fn homodyne_step_with(
    state: &MBEState,
    params: &DimensionlessParams,
    dw: f64,
    dt: f64,
    scheme: Scheme,
    field: FMode,
) -> MBEState {
    assert!(
        scheme != Scheme::Taylor15,
        "the order 1.5 scheme needs the path integral; use homodyne_taylor_step"
    );
    let drift = mbe_rhs(state, params, field);
    let mut next = state.add_scaled(dt, &drift);
    next = add_atomic(&next, homodyne_diffusion(state), dw);
    if scheme == Scheme::Milstein {
        next = add_atomic(
            &next,
            homodyne_milstein_correction(state),
            0.5 * (dw * dw - dt),
        );
    }
    next
}

fn vec5(s: &MBEState) -> Vector5<f64> {
    Vector5::from(s.to_array())
}

fn state5(v: &Vector5<f64>) -> MBEState {
    MBEState::from_array([v[0], v[1], v[2], v[3], v[4]])
}

fn diffusion5(s: &MBEState) -> Vector5<f64> {
    let [b_r, b_i, b_d] = homodyne_diffusion(s);
    Vector5::new(b_r, b_i, b_d, 0.0, 0.0)
}

/// Strong order 1.5 Ito-Taylor step of the homodyne model. `dz` is the
/// integral of the Wiener path over the step, see [`NoiseStream::next_pair`].
///
/// Second directional derivatives are taken by central differences; the
/// diffusion is quadratic, so for it they are exact.
pub fn homodyne_taylor_step(
    state: &MBEState,
    params: &DimensionlessParams,
    dw: f64,
    dz: f64,
    dt: f64,
    field: FMode,
) -> MBEState {
    let x = vec5(state);
    let drift = |v: &Vector5<f64>| vec5(&mbe_rhs(&state5(v), params, field));
    let a = drift(&x);
    let b = diffusion5(state);
    let jb = |v: &Vector5<f64>| {
        let s = state5(v);
        let m = homodyne_milstein_correction(&s);
        Vector5::new(m[0], m[1], m[2], 0.0, 0.0)
    };
    let diff = |v: &Vector5<f64>| diffusion5(&state5(v));

    let l1b = jb(&x);
    let l1a = mbe_jacobian(state, params, field) * b;

    // (grad b) a: b depends on the atomic variables only
    let [pr, pi, d] = [state.p_r, state.p_i, state.d];
    let grad_b = nalgebra::Matrix3::new(
        4.0 * pr, 0.0, 1.0,
        2.0 * pi, 2.0 * pr, 0.0,
        2.0 * (d - 1.0), 0.0, 2.0 * pr,
    );
    let ga = grad_b * nalgebra::Vector3::new(a[0], a[1], a[2]);
    let hess_b = diff(&(x + b)) + diff(&(x - b)) - 2.0 * b;
    let l0b = Vector5::new(ga[0], ga[1], ga[2], 0.0, 0.0) + 0.5 * hess_b;

    let h = 1e-4;
    let hess_a = (drift(&(x + h * b)) + drift(&(x - h * b)) - 2.0 * a) / (h * h);
    let l0a = mbe_jacobian(state, params, field) * a + 0.5 * hess_a;
    let l1l1b = (jb(&(x + h * b)) - jb(&(x - h * b))) / (2.0 * h);

    let next = x
        + a * dt
        + b * dw
        + 0.5 * l1b * (dw * dw - dt)
        + l1a * dz
        + l0b * (dw * dt - dz)
        + 0.5 * l0a * dt * dt
        + 0.5 * l1l1b * (dw * dw / 3.0 - dt) * dw;
    state5(&next)
}

/// Euler-Maruyama step of the heterodyne simulation model.
pub fn heterodyne_sim_step(
    state: &MBEState,
    params: &DimensionlessParams,
    dw_r: f64,
    dw_i: f64,
    dt: f64,
) -> MBEState {
    heterodyne_step_with(state, params, dw_r, dw_i, dt, FMode::Projected)
}

pub fn heterodyne_step_with(
    state: &MBEState,
    params: &DimensionlessParams,
    dw_r: f64,
    dw_i: f64,
    dt: f64,
    field: FMode,
) -> MBEState {
    let drift = mbe_rhs(state, params, field);
    let (on_r, on_i) = heterodyne_diffusion(state);
    let next = state.add_scaled(dt, &drift);
    add_atomic(&add_atomic(&next, on_r, dw_r), on_i, dw_i)
}

/// `2 p_r^2 + 2 p_i^2 + D^2`
pub fn purity(state: &MBEState) -> f64 {
    state.bloch_norm_sq()
}

/// Photocurrent record `(t, dy)` in unscaled time; `dy` is the increment
/// over `[t, t + dt]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Photocurrent {
    pub times: Vec<f64>,
    pub dy: Vec<f64>,
}

impl Photocurrent {
    pub fn len(&self) -> usize {
        self.dy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dy.is_empty()
    }

    /// Checks strictly increasing times spaced by `dt` (relative tolerance
    /// 1e-6). Reports the first offending row, 1-based over data rows.
    pub fn check_spacing(&self, dt: f64) -> Result<()> {
        if self.times.len() != self.dy.len() {
            return Err(Error::Photocurrent("times and dy differ in length".into()));
        }
        for (i, w) in self.times.windows(2).enumerate() {
            let gap = w[1] - w[0];
            if !(gap > 0.0) {
                return Err(Error::Photocurrent(format!(
                    "row {}: time {} does not increase",
                    i + 2,
                    w[1]
                )));
            }
            if (gap - dt).abs() > 1e-6 * dt {
                return Err(Error::Photocurrent(format!(
                    "row {}: time step {gap} inconsistent with dt = {dt}",
                    i + 2
                )));
            }
        }
        Ok(())
    }
}

/// Photocurrent the homodyne filter would see along a simulated homodyne
/// trajectory: `dy = dW - 2 sqrt(gamma) p_r dt` in unscaled units, i.e.
/// `(dW_s - 2 p_r dt_s) / sqrt(gamma)` from scaled increments.
///
/// Needs a trajectory recorded with `sample_stride = 1` and `record_noise`.
pub fn reconstruct_photocurrent(record: &TrajectoryRecord, gamma_perp: f64) -> Result<Photocurrent> {
    let Some(NoiseRecord::Homodyne { dt, dw }) = &record.noise else {
        return Err(Error::Photocurrent(
            "trajectory has no homodyne noise record".into(),
        ));
    };
    if record.states.len() < dw.len() + 1 && !dw.is_empty() {
        return Err(Error::Photocurrent(
            "trajectory must be sampled every step to rebuild the photocurrent".into(),
        ));
    }
    let sg = gamma_perp.sqrt();
    let mut out = Photocurrent::default();
    for (k, w) in dw.iter().enumerate() {
        out.times.push(k as f64 * dt / gamma_perp);
        out.dy.push((w - 2.0 * record.states[k].p_r * dt) / sg);
    }
    Ok(out)
}

pub fn simulate_trajectory(
    model: SdeModel,
    state0: &MBEState,
    params: &DimensionlessParams,
    config: &SDEConfig,
    t_final: f64,
    input: Option<&Photocurrent>,
) -> Result<TrajectoryRecord> {
    simulate_indexed(model, state0, params, config, t_final, input, 0, 1.0)
}

/// Filter replay in unscaled time. `config.dt` must match the record spacing;
/// `t_final` is taken from the record length.
pub fn replay_filter(
    state0: &MBEState,
    params: &DimensionlessParams,
    gamma_perp: f64,
    config: &SDEConfig,
    input: &Photocurrent,
) -> Result<TrajectoryRecord> {
    simulate_indexed(SdeModel::Filter, state0, params, config, 0.0, Some(input), 0, gamma_perp)
}

/// Fixed-step integration of trajectory `index` in an ensemble seeded by
/// `config.seed`. Divergence stops the run and is reported in
/// `record.abort`, keeping the samples taken so far.
#[allow(clippy::too_many_arguments)]
pub fn simulate_indexed(
    model: SdeModel,
    state0: &MBEState,
    params: &DimensionlessParams,
    config: &SDEConfig,
    t_final: f64,
    input: Option<&Photocurrent>,
    index: u64,
    gamma_perp: f64,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    params.validate()?;
    let dt = config.dt;
    let stride = config.sample_stride.max(1);
    let field = config.field_mode();
    if config.scheme != Scheme::EulerMaruyama && model != SdeModel::Homodyne {
        return Err(Error::Unsupported(format!(
            "{:?} scheme is implemented for the homodyne model only",
            config.scheme
        )));
    }

    let (steps, t0) = match model {
        SdeModel::Filter => {
            let Some(pc) = input else {
                return Err(Error::Config("filter model needs a photocurrent record".into()));
            };
            pc.check_spacing(dt)?;
            (pc.len(), pc.times.first().copied().unwrap_or(0.0))
        }
        _ => {
            if !(t_final >= 0.0) {
                return Err(Error::InvalidParams(format!("t_final must be >= 0, got {t_final}")));
            }
            ((t_final / dt).round() as usize, 0.0)
        }
    };

    let mut rec = TrajectoryRecord::new(field);
    rec.seed = Some(SeedProvenance {
        base_seed: config.seed,
        trajectory: index,
    });
    let mut noise = NoiseStream::new(config.seed, index, dt);
    let mut dw_log = Vec::new();
    let mut dwi_log = Vec::new();
    let mut norm_log = Vec::new();

    let mut s = *state0;
    let mut n = 1.0;
    rec.push(t0, s);
    if model == SdeModel::Filter {
        norm_log.push(n);
    }
    let mut outside = false;

    for step in 1..=steps {
        let next = match model {
            SdeModel::Homodyne if config.scheme == Scheme::Taylor15 => {
                let (dw, dz) = noise.next_pair();
                if config.record_noise {
                    dw_log.push(dw);
                }
                homodyne_taylor_step(&s, params, dw, dz, dt, field)
            }
            SdeModel::Homodyne => {
                let dw = noise.next_increment();
                if config.record_noise {
                    dw_log.push(dw);
                }
                homodyne_step_with(&s, params, dw, dt, config.scheme, field)
            }
            SdeModel::Heterodyne => {
                let dw_r = noise.next_increment();
                let dw_i = noise.next_increment();
                if config.record_noise {
                    dw_log.push(dw_r);
                    dwi_log.push(dw_i);
                }
                heterodyne_step_with(&s, params, dw_r, dw_i, dt, field)
            }
            SdeModel::Filter => {
                let dy = input.map(|pc| pc.dy[step - 1]).unwrap_or(0.0);
                let fs = projected_filter_step(
                    &FilterState::from_state(&s, n),
                    params,
                    gamma_perp,
                    dy,
                    dt,
                );
                n = fs.n;
                fs.state()
            }
        };
        let t = t0 + step as f64 * dt;
        if !next.is_finite() || next.max_abs() > DIVERGENCE_LIMIT {
            rec.abort = Some(format!(
                "state diverged at t={t}: {next:?}; last valid sample at t={}",
                rec.times.last().copied().unwrap_or(t0)
            ));
            break;
        }
        s = next;

        let q = purity(&s);
        if (q - 1.0).abs() > config.purity_tolerance {
            if config.renormalize && q > 0.0 {
                let scale = 1.0 / q.sqrt();
                s.p_r *= scale;
                s.p_i *= scale;
                s.d *= scale;
                rec.note(Event::Renormalized { time: t, purity: q });
            } else if !outside {
                outside = true;
                rec.note(Event::PurityDrift { time: t, purity: q });
            }
        } else {
            outside = false;
        }

        if step % stride == 0 || step == steps {
            rec.push(t, s);
            if model == SdeModel::Filter {
                norm_log.push(n);
            }
        }
    }

    if config.record_noise {
        rec.noise = match model {
            SdeModel::Homodyne => Some(NoiseRecord::Homodyne { dt, dw: dw_log }),
            SdeModel::Heterodyne => Some(NoiseRecord::Heterodyne {
                dt,
                dw_r: dw_log,
                dw_i: dwi_log,
            }),
            SdeModel::Filter => None,
        };
    }
    if model == SdeModel::Filter {
        rec.normalization = Some(norm_log);
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn bistable() -> DimensionlessParams {
        DimensionlessParams::absorptive_bistability()
    }

    fn random_state(rng: &mut ChaCha8Rng) -> MBEState {
        MBEState {
            p_r: rng.random_range(-0.7..0.7),
            p_i: rng.random_range(-0.7..0.7),
            d: rng.random_range(-1.0..1.0),
            x_r: rng.random_range(-5.0..5.0),
            x_i: rng.random_range(-5.0..5.0),
        }
    }

    #[test]
    fn noise_vanishes_at_ground_state() {
        let g = MBEState::ground();
        assert_eq!(homodyne_diffusion(&g), [0.0; 3]);
        let (a, b) = heterodyne_diffusion(&g);
        assert_eq!(a, [0.0; 3]);
        assert_eq!(b, [0.0; 3]);
        let f = FilterState::from_state(&g, 1.0);
        let p = DimensionlessParams::new(10.0, 0.1, 0.0, 0.0, C64::new(0.0, 0.0)).unwrap();
        let a = projected_filter_step(&f, &p, 1.0, 0.3, 1e-3);
        let b = projected_filter_step(&f, &p, 1.0, -7.0, 1e-3);
        assert_eq!(a, b);
        assert_eq!(a.state(), g);
    }

    #[test]
    fn ground_state_steps_are_deterministic() {
        let g = MBEState {
            x_r: 0.4,
            ..MBEState::ground()
        };
        let p = bistable();
        let a = homodyne_sim_step(&g, &p, 0.9, 1e-3);
        let b = homodyne_sim_step(&g, &p, 0.0, 1e-3);
        assert_eq!(a, b);
        let c = heterodyne_sim_step(&g, &p, -0.4, 1.3, 1e-3);
        assert_eq!(a, c);
    }

    #[test]
    fn zero_noise_reduces_to_projected_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = DimensionlessParams::new(4.0, 0.3, 0.5, -0.2, C64::new(3.0, -1.0)).unwrap();
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let dt = 1e-3;
            let expected = s.add_scaled(dt, &mbe_rhs(&s, &p, FMode::Projected));
            let h = homodyne_sim_step(&s, &p, 0.0, dt);
            let het = heterodyne_sim_step(&s, &p, 0.0, 0.0, dt);
            assert!(h.add_scaled(-1.0, &expected).max_abs() < 1e-12);
            assert!(het.add_scaled(-1.0, &h).max_abs() < 1e-12);
        }
    }

    #[test]
    fn filter_drift_matches_hand_evaluation() {
        let s = FilterState {
            n: 1.3,
            p_r: 0.21,
            p_i: -0.34,
            d: 0.47,
            x_r: 1.9,
            x_i: -0.6,
        };
        let p = DimensionlessParams::new(2.0, 0.5, 0.3, 0.7, C64::new(1.5, 0.25)).unwrap();
        let g = 2.5;
        let dt = 1e-4;
        let out = projected_filter_step(&s, &p, g, 0.0, dt);
        // drift terms written out once more, term by term
        let (pr, pi, d, xr, xi) = (0.21f64, -0.34f64, 0.47f64, 1.9f64, -0.6f64);
        let f = 2.0 / (1.0 + 2.0 * pr * pr + 2.0 * pi * pi + d * d);
        let e_pr = pr + g * dt * (-3.0 * pr + 0.3 * pi + 2.0 * pr * d + d * xr + 4.0 * pr * pr * pr);
        let e_pi = pi + g * dt * (-0.3 * pr - pi + d * xi + 4.0 * pr * pr * pi);
        let e_d = d + g * dt * (2.0 - 2.0 * d - 2.0 * pr * xr - 2.0 * pi * xi - 4.0 * pr * pr + 4.0 * pr * pr * d);
        let e_xr = xr - 0.5 * g * dt * (xr - 0.7 * xi - 1.5 + 2.0 * 2.0 * pr * f);
        let e_xi = xi - 0.5 * g * dt * (xi + 0.7 * xr - 0.25 + 2.0 * 2.0 * pi * f);
        assert_abs_diff_eq!(out.p_r, e_pr, epsilon = 1e-12);
        assert_abs_diff_eq!(out.p_i, e_pi, epsilon = 1e-12);
        assert_abs_diff_eq!(out.d, e_d, epsilon = 1e-12);
        assert_abs_diff_eq!(out.x_r, e_xr, epsilon = 1e-12);
        assert_abs_diff_eq!(out.x_i, e_xi, epsilon = 1e-12);
        assert_eq!(out.n, s.n);
    }

    #[test]
    fn filter_with_expected_signal_matches_noiseless_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = bistable();
        for _ in 0..20 {
            let mut s = random_state(&mut rng);
            // pure atomic state
            let q = purity(&s).sqrt();
            s.p_r /= q;
            s.p_i /= q;
            s.d /= q;
            let g: f64 = 1.7;
            let dt_s = 1e-3;
            let dt_u = dt_s / g;
            let dy = -2.0 * g.sqrt() * s.p_r * dt_u;
            let f = projected_filter_step(&FilterState::from_state(&s, 1.0), &p, g, dy, dt_u);
            let h = homodyne_sim_step(&s, &p, 0.0, dt_s);
            assert!(f.state().add_scaled(-1.0, &h).max_abs() < 1e-12);
        }
    }

    #[test]
    fn shared_drift_at_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let p = bistable();
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let a = homodyne_sim_step(&s, &p, 0.0, 0.01);
            let b = heterodyne_sim_step(&s, &p, 0.0, 0.0, 0.01);
            assert!(a.add_scaled(-1.0, &b).max_abs() < 1e-12);
        }
    }

    #[test]
    fn purity_cases() {
        assert_eq!(purity(&MBEState::ground()), 1.0);
        assert_eq!(purity(&MBEState::default()), 0.0);
    }

    #[test]
    fn purity_is_preserved_to_first_order_in_one_step() {
        // noise coefficients are tangent to the shell: dQ = 4 p_r (Q - 1) dW
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let mut s = random_state(&mut rng);
            let q = purity(&s).sqrt();
            s.p_r /= q;
            s.p_i /= q;
            s.d /= q;
            let b = homodyne_diffusion(&s);
            let grad = [4.0 * s.p_r, 4.0 * s.p_i, 2.0 * s.d];
            let dot: f64 = (0..3).map(|i| b[i] * grad[i]).sum();
            assert!(dot.abs() < 1e-12);
            let (br, bi) = heterodyne_diffusion(&s);
            let dr: f64 = (0..3).map(|i| br[i] * grad[i]).sum();
            let di: f64 = (0..3).map(|i| bi[i] * grad[i]).sum();
            assert!(dr.abs() < 1e-12 && di.abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_mean_of_one_step_matches_drift() {
        let s = MBEState {
            p_r: 0.4,
            p_i: -0.2,
            d: 0.5,
            x_r: 2.0,
            x_i: 0.3,
        };
        let p = bistable();
        let dt = 1e-2;
        let mut noise = NoiseStream::new(123, 0, dt);
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| (homodyne_sim_step(&s, &p, noise.next_increment(), dt).d - s.d) / dt)
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let drift = mbe_rhs(&s, &p, FMode::Projected).d;
        assert!((mean - drift).abs() < 3.0 * se, "{mean} vs {drift} (se {se})");
    }

    #[test]
    fn milstein_correction_matches_finite_difference() {
        let s = MBEState {
            p_r: 0.3,
            p_i: -0.25,
            d: 0.4,
            x_r: 0.0,
            x_i: 0.0,
        };
        let b = homodyne_diffusion(&s);
        let h = 1e-6;
        let shifted = |sign: f64| {
            homodyne_diffusion(&add_atomic(&s, b, sign * h))
        };
        let plus = shifted(1.0);
        let minus = shifted(-1.0);
        let corr = homodyne_milstein_correction(&s);
        for i in 0..3 {
            assert_abs_diff_eq!(corr[i], (plus[i] - minus[i]) / (2.0 * h), epsilon = 1e-8);
        }
    }

    #[test]
    fn undriven_ground_state_trajectory_is_constant() {
        let p = DimensionlessParams::new(10.0, 0.1, 0.0, 0.0, C64::new(0.0, 0.0)).unwrap();
        for model in [SdeModel::Homodyne, SdeModel::Heterodyne] {
            let rec = simulate_trajectory(model, &MBEState::ground(), &p, &SDEConfig::new(1e-3, 5), 2.0, None)
                .unwrap();
            assert!(rec.states.iter().all(|s| *s == MBEState::ground()));
            assert!(rec.abort.is_none());
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SDEConfig {
            sample_stride: 7,
            record_noise: true,
            ..SDEConfig::new(1e-3, 42)
        };
        let a = simulate_trajectory(SdeModel::Heterodyne, &MBEState::ground(), &bistable(), &cfg, 5.0, None).unwrap();
        let b = simulate_trajectory(SdeModel::Heterodyne, &MBEState::ground(), &bistable(), &cfg, 5.0, None).unwrap();
        assert_eq!(a, b);
        let other = SDEConfig { seed: 43, ..cfg };
        let c = simulate_trajectory(SdeModel::Heterodyne, &MBEState::ground(), &bistable(), &other, 5.0, None).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn filter_replay_reproduces_homodyne_simulation() {
        let gamma = 2.0;
        let cfg = SDEConfig {
            record_noise: true,
            ..SDEConfig::new(1e-3, 9)
        };
        let sim = simulate_trajectory(SdeModel::Homodyne, &MBEState::ground(), &bistable(), &cfg, 3.0, None).unwrap();
        let pc = reconstruct_photocurrent(&sim, gamma).unwrap();
        let fcfg = SDEConfig::new(cfg.dt / gamma, 0);
        let rep = replay_filter(&MBEState::ground(), &bistable(), gamma, &fcfg, &pc).unwrap();
        assert_eq!(rep.states.len(), sim.states.len());
        for (a, b) in rep.states.iter().zip(&sim.states) {
            assert!(a.add_scaled(-1.0, b).max_abs() < 1e-10);
        }
    }

    #[test]
    fn filter_needs_input_and_consistent_spacing() {
        let cfg = SDEConfig::new(0.1, 0);
        assert!(simulate_trajectory(SdeModel::Filter, &MBEState::ground(), &bistable(), &cfg, 1.0, None).is_err());
        let pc = Photocurrent {
            times: vec![0.0, 0.1, 0.25],
            dy: vec![0.0; 3],
        };
        let err = replay_filter(&MBEState::ground(), &bistable(), 1.0, &cfg, &pc).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
        let empty = Photocurrent::default();
        let rec = replay_filter(&MBEState::ground(), &bistable(), 1.0, &cfg, &empty).unwrap();
        assert_eq!(rec.states.len(), 1);
    }

    #[test]
    fn renormalization_keeps_purity_and_logs_events() {
        let cfg = SDEConfig {
            renormalize: true,
            purity_tolerance: 1e-6,
            ..SDEConfig::new(1e-2, 3)
        };
        let rec = simulate_trajectory(SdeModel::Heterodyne, &MBEState::ground(), &bistable(), &cfg, 20.0, None).unwrap();
        assert!(rec.event_count > 0);
        for q in &rec.purity {
            assert!((q - 1.0).abs() <= 1e-6 + 1e-12);
        }
        let plain = SDEConfig {
            purity_tolerance: 1e-6,
            ..SDEConfig::new(1e-2, 3)
        };
        let rec = simulate_trajectory(SdeModel::Heterodyne, &MBEState::ground(), &bistable(), &plain, 20.0, None).unwrap();
        assert!(rec
            .events
            .iter()
            .any(|e| matches!(e, Event::PurityDrift { .. })));
    }

    #[test]
    fn path_integral_moments() {
        let dt = 0.01;
        let mut noise = NoiseStream::new(11, 3, dt);
        let n = 200_000;
        let (mut sww, mut swz, mut szz) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (w, z) = noise.next_pair();
            sww += w * w;
            swz += w * z;
            szz += z * z;
        }
        let n = n as f64;
        assert!((sww / n / dt - 1.0).abs() < 0.02);
        assert!((swz / n / (dt * dt / 2.0) - 1.0).abs() < 0.02);
        assert!((szz / n / (dt.powi(3) / 3.0) - 1.0).abs() < 0.02);
    }

    #[test]
    fn taylor_step_at_ground_state_ignores_noise() {
        let g = MBEState {
            x_r: 0.4,
            ..MBEState::ground()
        };
        let p = bistable();
        let a = homodyne_taylor_step(&g, &p, 0.05, 1e-6, 1e-3, FMode::Projected);
        let b = homodyne_taylor_step(&g, &p, 0.0, 0.0, 1e-3, FMode::Projected);
        assert!(a.add_scaled(-1.0, &b).max_abs() < 1e-15);
    }

    #[test]
    fn taylor_scheme_in_simulation() {
        let cfg = SDEConfig {
            scheme: Scheme::Taylor15,
            record_noise: true,
            ..SDEConfig::new(1e-3, 1)
        };
        let rec = simulate_trajectory(SdeModel::Homodyne, &MBEState::ground(), &bistable(), &cfg, 1.0, None).unwrap();
        assert_eq!(rec.states.len(), 1001);
        assert!(rec.purity.iter().all(|q| (q - 1.0).abs() < 1e-3));
        let again = simulate_trajectory(SdeModel::Homodyne, &MBEState::ground(), &bistable(), &cfg, 1.0, None).unwrap();
        assert_eq!(rec, again);
    }

    #[test]
    fn taylor_keeps_purity_better_than_milstein() {
        let p = bistable();
        let dt = 1e-3;
        let mut noise = NoiseStream::new(5, 0, dt);
        let mut m = MBEState::ground();
        let mut t = MBEState::ground();
        let (mut dev_m, mut dev_t) = (0.0f64, 0.0f64);
        for _ in 0..5000 {
            let (dw, dz) = noise.next_pair();
            m = homodyne_step_with(&m, &p, dw, dt, Scheme::Milstein, FMode::Projected);
            t = homodyne_taylor_step(&t, &p, dw, dz, dt, FMode::Projected);
            dev_m = dev_m.max((purity(&m) - 1.0).abs());
            dev_t = dev_t.max((purity(&t) - 1.0).abs());
        }
        assert!(dev_t < dev_m, "{dev_t} vs {dev_m}");
    }

    #[test]
    fn milstein_rejected_for_heterodyne() {
        let cfg = SDEConfig {
            scheme: Scheme::Milstein,
            ..SDEConfig::new(1e-3, 0)
        };
        assert!(simulate_trajectory(SdeModel::Heterodyne, &MBEState::ground(), &bistable(), &cfg, 1.0, None).is_err());
    }

    #[test]
    fn divergence_aborts_with_partial_record() {
        let p = DimensionlessParams::new(10.0, 0.1, 0.0, 0.0, C64::new(1e12, 0.0)).unwrap();
        let rec = simulate_trajectory(SdeModel::Heterodyne, &MBEState::ground(), &p, &SDEConfig::new(1.0, 0), 100.0, None)
            .unwrap();
        assert!(rec.abort.is_some());
        assert!(!rec.states.is_empty());
    }
}
