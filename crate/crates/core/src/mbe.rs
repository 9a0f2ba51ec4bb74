//! Deterministic Maxwell-Bloch-type equations.
//!
//! In units where time is `gamma_perp t` and the field is measured in
//! `sqrt(n0)`:
//!
//! ```text
//! dp_r/dt = -p_r + Delta p_i + D x_r
//! dp_i/dt = -p_i - Delta p_r + D x_i
//! dD/dt   = -2(D - 1) - 2(p_r x_r + p_i x_i)
//! dx_r/dt = -k (x_r - Theta x_i - Re y + 2C p_r F)
//! dx_i/dt = -k (x_i + Theta x_r - Im y + 2C p_i F)
//! F = 2 / (1 + 2p_r^2 + 2p_i^2 + D^2)
//! ```
//!
//! `FMode::Classical` sets `F = 1`, which gives the usual MBEs.
//!
//! The manifold coordinates are already in these units: `alpha = sqrt(n0) x`,
//! `<sigma> = -(p_r + i p_i)/sqrt2` and `<sigma_z> = -D`, so the undriven
//! fixed point is `D = +1`. Converting a projected increment to this model
//! only divides rates by `gamma_perp` (see [`scaled_rates`]).

use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use crate::hilbert::PhysicalParams;
use crate::manifold::{ProjectedIncrement, RawManifoldPoint};
use crate::montecarlo::TrajectoryRecord;
use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionlessParams {
    /// Cooperativity `g0^2 / (2 kappa gamma_perp)`.
    #[serde(rename = "C")]
    pub c: f64,
    /// `kappa / gamma_perp`
    pub k: f64,
    /// `Delta_a / gamma_perp`
    pub delta: f64,
    /// `Delta_c / kappa`
    pub theta: f64,
    /// `E / (kappa sqrt(n0))`
    pub y: C64,
    /// Critical photon number `gamma_perp^2 / (2 g0^2) = 1 / (4 k C)`.
    pub n0: f64,
}

impl DimensionlessParams {
    pub fn new(c: f64, k: f64, delta: f64, theta: f64, y: C64) -> Result<Self> {
        let p = Self {
            c,
            k,
            delta,
            theta,
            y,
            n0: 1.0 / (4.0 * k * c),
        };
        p.validate()?;
        Ok(p)
    }

    /// Absorptive-bistability parameters `C=10, k=0.1, Delta=Theta=0, y=11.3`.
    pub fn absorptive_bistability() -> Self {
        Self::new(10.0, 0.1, 0.0, 0.0, C64::new(11.3, 0.0)).expect("valid constants")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.k > 0.0 && self.n0 > 0.0) {
            return Err(Error::InvalidParams(format!(
                "need C > 0, k > 0, n0 > 0 (got C={}, k={}, n0={})",
                self.c, self.k, self.n0
            )));
        }
        let all = [self.c, self.k, self.delta, self.theta, self.y.re, self.y.im, self.n0];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParams("non-finite dimensionless parameter".into()));
        }
        Ok(())
    }

    pub fn with_y(&self, y: C64) -> Self {
        Self { y, ..*self }
    }

    /// Physical rates reproducing these parameters for a chosen
    /// `gamma_perp`, which sets the overall time unit.
    pub fn to_physical(&self, gamma_perp: f64) -> Result<PhysicalParams> {
        self.validate()?;
        if !(gamma_perp > 0.0) {
            return Err(Error::InvalidParams("gamma_perp must be > 0".into()));
        }
        let kappa = self.k * gamma_perp;
        let g0 = gamma_perp / (2.0 * self.n0).sqrt();
        Ok(PhysicalParams {
            g0,
            kappa,
            gamma_perp,
            delta_c: self.theta * kappa,
            delta_a: self.delta * gamma_perp,
            drive: self.y * (kappa * self.n0.sqrt()),
        })
    }
}

pub fn scale_params(phys: &PhysicalParams) -> Result<DimensionlessParams> {
    phys.validate_strict()?;
    let g = phys.gamma_perp;
    let n0 = g * g / (2.0 * phys.g0 * phys.g0);
    Ok(DimensionlessParams {
        c: phys.g0 * phys.g0 / (2.0 * phys.kappa * g),
        k: phys.kappa / g,
        delta: phys.delta_a / g,
        theta: phys.delta_c / phys.kappa,
        y: phys.drive / (phys.kappa * n0.sqrt()),
        n0,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MBEState {
    pub p_r: f64,
    pub p_i: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub x_r: f64,
    pub x_i: f64,
}

impl MBEState {
    pub fn ground() -> Self {
        Self {
            d: 1.0,
            ..Self::default()
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.p_r, self.p_i, self.d, self.x_r, self.x_i]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            p_r: a[0],
            p_i: a[1],
            d: a[2],
            x_r: a[3],
            x_i: a[4],
        }
    }

    /// `|S|^2 = 2p_r^2 + 2p_i^2 + D^2`
    pub fn bloch_norm_sq(&self) -> f64 {
        2.0 * self.p_r * self.p_r + 2.0 * self.p_i * self.p_i + self.d * self.d
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self + s * other`
    pub fn add_scaled(&self, s: f64, other: &MBEState) -> MBEState {
        let a = self.to_array();
        let b = other.to_array();
        MBEState::from_array(std::array::from_fn(|i| a[i] + s * b[i]))
    }
}

/// Normalized atomic variables `p/n`, `D/n`; the field is unchanged.
pub fn raw_to_scaled(point: &RawManifoldPoint) -> MBEState {
    MBEState {
        p_r: point.p_r / point.n,
        p_i: point.p_i / point.n,
        d: point.d / point.n,
        x_r: point.x_r,
        x_i: point.x_i,
    }
}

pub fn scaled_to_raw(state: &MBEState, n: f64) -> RawManifoldPoint {
    RawManifoldPoint {
        n,
        p_r: state.p_r * n,
        p_i: state.p_i * n,
        d: state.d * n,
        x_r: state.x_r,
        x_i: state.x_i,
    }
}

/// Rates of a normalized (`n = 1`) projected increment per unit of scaled
/// time `gamma_perp t`.
pub fn scaled_rates(inc: &ProjectedIncrement, phys: &PhysicalParams) -> MBEState {
    let g = phys.gamma_perp;
    MBEState {
        p_r: inc.dp_r / g,
        p_i: inc.dp_i / g,
        d: inc.dd / g,
        x_r: inc.dx_r / g,
        x_i: inc.dx_i / g,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FMode {
    #[default]
    Projected,
    Classical,
}

impl FMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FMode::Projected => "projected",
            FMode::Classical => "classical",
        }
    }

    pub fn factor(&self, state: &MBEState) -> f64 {
        match self {
            FMode::Projected => f_factor(state),
            FMode::Classical => 1.0,
        }
    }
}

impl std::str::FromStr for FMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projected" => Ok(FMode::Projected),
            "classical" => Ok(FMode::Classical),
            other => Err(Error::Config(format!(
                "f-mode must be projected|classical, got {other}"
            ))),
        }
    }
}

/// `F = 2 / (1 + |S|^2)`
pub fn f_factor(state: &MBEState) -> f64 {
    2.0 / (1.0 + state.bloch_norm_sq())
}

pub fn mbe_rhs(state: &MBEState, params: &DimensionlessParams, mode: FMode) -> MBEState {
    let MBEState { p_r, p_i, d, x_r, x_i } = *state;
    let f = mode.factor(state);
    let p = params;
    MBEState {
        p_r: -p_r + p.delta * p_i + d * x_r,
        p_i: -p_i - p.delta * p_r + d * x_i,
        d: -2.0 * (d - 1.0) - 2.0 * (p_r * x_r + p_i * x_i),
        x_r: -p.k * (x_r - p.theta * x_i - p.y.re + 2.0 * p.c * p_r * f),
        x_i: -p.k * (x_i + p.theta * x_r - p.y.im + 2.0 * p.c * p_i * f),
    }
}

/// Jacobian of [`mbe_rhs`] with respect to `(p_r, p_i, D, x_r, x_i)`.
pub fn mbe_jacobian(state: &MBEState, params: &DimensionlessParams, mode: FMode) -> Matrix5<f64> {
    let MBEState { p_r, p_i, d, x_r, x_i } = *state;
    let p = params;
    let (f, f_pr, f_pi, f_d) = match mode {
        FMode::Classical => (1.0, 0.0, 0.0, 0.0),
        FMode::Projected => {
            let f = f_factor(state);
            // dF/dQ = -F^2/2 with Q = 2p_r^2 + 2p_i^2 + D^2
            (f, -2.0 * f * f * p_r, -2.0 * f * f * p_i, -f * f * d)
        }
    };
    let ck2 = 2.0 * p.c * p.k;
    Matrix5::new(
        -1.0, p.delta, x_r, d, 0.0,
        -p.delta, -1.0, x_i, 0.0, d,
        -2.0 * x_r, -2.0 * x_i, -2.0, -2.0 * p_r, -2.0 * p_i,
        -ck2 * (f + p_r * f_pr), -ck2 * p_r * f_pi, -ck2 * p_r * f_d, -p.k, p.k * p.theta,
        -ck2 * p_i * f_pr, -ck2 * (f + p_i * f_pi), -ck2 * p_i * f_d, -p.k * p.theta, -p.k,
    )
}

/// States with any component beyond this are treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Fixed-step RK4; samples every `stride` steps (plus the final step).
pub fn evolve_mbe(
    state0: &MBEState,
    params: &DimensionlessParams,
    mode: FMode,
    t_final: f64,
    dt: f64,
    stride: usize,
) -> Result<TrajectoryRecord> {
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "need dt > 0 and t_final >= 0, got dt={dt}, t_final={t_final}"
        )));
    }
    if dt * params.k.max(1.0) > 0.1 {
        log::warn!("dt = {dt} is coarse for k = {}", params.k);
    }
    let stride = stride.max(1);
    let steps = (t_final / dt).round() as usize;
    let mut rec = TrajectoryRecord::new(mode);
    let mut s = *state0;
    rec.push(0.0, s);
    let f = |s: &MBEState| mbe_rhs(s, params, mode);
    for step in 1..=steps {
        let k1 = f(&s);
        let k2 = f(&s.add_scaled(0.5 * dt, &k1));
        let k3 = f(&s.add_scaled(0.5 * dt, &k2));
        let k4 = f(&s.add_scaled(dt, &k3));
        s = s
            .add_scaled(dt / 6.0, &k1)
            .add_scaled(dt / 3.0, &k2)
            .add_scaled(dt / 3.0, &k3)
            .add_scaled(dt / 6.0, &k4);
        let t = step as f64 * dt;
        if !s.is_finite() || s.max_abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                time: t,
                reason: format!(
                    "state {s:?} left |.| < {DIVERGENCE_LIMIT:e}; last sample at t={}",
                    rec.times.last().copied().unwrap_or(0.0)
                ),
            });
        }
        if step % stride == 0 || step == steps {
            rec.push(t, s);
        }
    }
    Ok(rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyPoint {
    pub x_r: f64,
    pub y: f64,
    pub mode: FMode,
}

impl SteadyPoint {
    /// Full five-variable state on the resonant steady-state branch.
    pub fn state(&self) -> MBEState {
        let d = 1.0 / (1.0 + self.x_r * self.x_r);
        MBEState {
            p_r: d * self.x_r,
            p_i: 0.0,
            d,
            x_r: self.x_r,
            x_i: 0.0,
        }
    }
}

/// Input-output curve `y(x_r)` of the resonant (`Theta = Delta = 0`) steady
/// state: `D = 1/(1 + x^2)`, `p_r = D x`, `y = x + 2C p_r F`.
pub fn steady_state_curve(
    params: &DimensionlessParams,
    x_grid: &[f64],
    mode: FMode,
) -> Result<Vec<SteadyPoint>> {
    if params.theta != 0.0 || params.delta != 0.0 {
        return Err(Error::Unsupported(
            "steady_state_curve needs Theta = Delta = 0; use find_equilibria".into(),
        ));
    }
    Ok(x_grid
        .iter()
        .map(|&x_r| {
            let probe = SteadyPoint { x_r, y: 0.0, mode };
            let s = probe.state();
            SteadyPoint {
                y: x_r + 2.0 * params.c * s.p_r * mode.factor(&s),
                ..probe
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumOptions {
    pub n_starts: usize,
    pub max_iter: usize,
    pub residual_tol: f64,
    pub dedup_distance: f64,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            n_starts: 30,
            max_iter: 200,
            residual_tol: 1e-10,
            dedup_distance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSearch {
    pub equilibria: Vec<MBEState>,
    pub converged_starts: usize,
    pub diagnostic: Option<String>,
}

pub fn find_equilibria(params: &DimensionlessParams, mode: FMode, y: C64) -> Vec<MBEState> {
    find_equilibria_with(params, mode, y, &EquilibriumOptions::default()).equilibria
}

/// Atomic steady state in a fixed field `X`:
/// `D = 1/(1 + |X|^2/(1 + Delta^2))`, `p = D X / (1 + i Delta)`.
fn atomic_steady_state(x: C64, delta: f64) -> MBEState {
    let d = 1.0 / (1.0 + x.norm_sqr() / (1.0 + delta * delta));
    let p = x * d / C64::new(1.0, delta);
    MBEState {
        p_r: p.re,
        p_i: p.im,
        d,
        x_r: x.re,
        x_i: x.im,
    }
}

fn newton(
    start: MBEState,
    params: &DimensionlessParams,
    mode: FMode,
    opts: &EquilibriumOptions,
) -> Option<MBEState> {
    let norm = |s: &MBEState| Vector5::from(mbe_rhs(s, params, mode).to_array()).norm();
    let mut s = start;
    let mut r = norm(&s);
    for _ in 0..opts.max_iter {
        if r < 1e-13 {
            break;
        }
        let jac = mbe_jacobian(&s, params, mode);
        let f = Vector5::from(mbe_rhs(&s, params, mode).to_array());
        let step = jac.lu().solve(&(-f))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = s.add_scaled(lambda, &MBEState::from_array(step.into()));
            let rt = norm(&trial);
            if rt.is_finite() && rt < (1.0 - 1e-4 * lambda) * r {
                s = trial;
                r = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (r < opts.residual_tol).then_some(s)
}

/// All roots of `mbe_rhs = 0` reachable by damped Newton from starts on the
/// atomic steady-state branch with `x_r` spread over `[0, 1.5 |y|]`.
pub fn find_equilibria_with(
    params: &DimensionlessParams,
    mode: FMode,
    y: C64,
    opts: &EquilibriumOptions,
) -> EquilibriumSearch {
    let p = params.with_y(y);
    let n = opts.n_starts.max(1);
    let x_max = 1.5 * y.norm();
    let mut out = EquilibriumSearch::default();
    for i in 0..n {
        let x0 = if n == 1 {
            0.0
        } else {
            x_max * i as f64 / (n - 1) as f64
        };
        let start = atomic_steady_state(C64::new(x0, 0.0), p.delta);
        let Some(root) = newton(start, &p, mode, opts) else {
            continue;
        };
        out.converged_starts += 1;
        let dup = out.equilibria.iter().any(|e| {
            let a = e.to_array();
            let b = root.to_array();
            a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
                < opts.dedup_distance
        });
        if !dup {
            out.equilibria.push(root);
        }
    }
    out.equilibria
        .sort_by(|a, b| a.x_r.partial_cmp(&b.x_r).unwrap_or(std::cmp::Ordering::Equal));
    if out.equilibria.is_empty() {
        let msg = format!("Newton failed from all {n} starts");
        log::warn!("{msg}");
        out.diagnostic = Some(msg);
    }
    out
}
