//! Comparison of the numerically projected master equation with the
//! closed-form projected equations at random manifold points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hilbert::{FockConfig, PhysicalParams};
use crate::manifold::{numeric_mbe_rhs_detailed, verify_cavity_output_vanishes, RawManifoldPoint};
use crate::mbe::{mbe_rhs, raw_to_scaled, scale_params, scaled_rates, FMode};
use crate::Result;

/// Default bound on `|x|` for sampled points.
pub const DEFAULT_MAX_FIELD: f64 = 4.0;

/// Rates smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub point: RawManifoldPoint,
    pub n_max: usize,
    /// Closed-form rates of `(p_r, p_i, D, x_r, x_i)` in scaled time.
    pub closed_form: [f64; 5],
    pub numeric: [f64; 5],
    pub abs_error: [f64; 5],
    /// `|numeric - closed| / max(|closed|, REL_FLOOR)`
    pub rel_error: [f64; 5],
    /// Projected `dn/dt` in scaled time.
    pub dn: f64,
    pub projection_error: f64,
    pub rhs_norm: f64,
    /// Largest normalized-variable rate from cavity-output conditioning.
    pub cavity_output_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub n_points: usize,
    pub max_rel_error: f64,
    pub max_abs_dn: f64,
    pub max_cavity_output_residual: f64,
    pub max_projection_error: f64,
    pub points: Vec<PointReport>,
}

/// Uniform sample of the unit Bloch ball (`n = 1`) times the disk
/// `|x| <= max_field`.
pub fn random_point(rng: &mut ChaCha8Rng, max_field: f64) -> RawManifoldPoint {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (p_r, p_i, d) = loop {
        let p_r = rng.random_range(-h..=h);
        let p_i = rng.random_range(-h..=h);
        let d = rng.random_range(-1.0..=1.0);
        if 2.0 * p_r * p_r + 2.0 * p_i * p_i + d * d <= 1.0 {
            break (p_r, p_i, d);
        }
    };
    let r = max_field * rng.random::<f64>().sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    RawManifoldPoint {
        n: 1.0,
        p_r,
        p_i,
        d,
        x_r: r * phi.cos(),
        x_i: r * phi.sin(),
    }
}

pub fn check_point(
    point: &RawManifoldPoint,
    params: &PhysicalParams,
    fock: &FockConfig,
) -> Result<PointReport> {
    let dimless = scale_params(params)?;
    let num = numeric_mbe_rhs_detailed(point, params, fock)?;
    let numeric = scaled_rates(&num.increment, params).to_array();
    let closed_form = mbe_rhs(&raw_to_scaled(point), &dimless, FMode::Projected).to_array();
    let mut abs_error = [0.0; 5];
    let mut rel_error = [0.0; 5];
    for i in 0..5 {
        abs_error[i] = (numeric[i] - closed_form[i]).abs();
        rel_error[i] = abs_error[i] / closed_form[i].abs().max(REL_FLOOR);
    }
    let cavity = verify_cavity_output_vanishes(point, params, fock)?;
    Ok(PointReport {
        point: *point,
        n_max: fock.n_max,
        closed_form,
        numeric,
        abs_error,
        rel_error,
        dn: num.increment.dn / params.gamma_perp,
        projection_error: num.projection_error,
        rhs_norm: num.rhs_norm,
        cavity_output_residual: cavity.max(),
    })
}

/// `n_max = None` sizes the cutoff per point.
pub fn projection_report(
    params: &PhysicalParams,
    n_points: usize,
    max_field: f64,
    seed: u64,
    n_max: Option<usize>,
) -> Result<ValidationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let pt = random_point(&mut rng, max_field);
        let fock = match n_max {
            Some(n) => FockConfig::new(n),
            None => pt.auto_fock(params),
        };
        points.push(check_point(&pt, params, &fock)?);
    }
    let max = |f: &dyn Fn(&PointReport) -> f64| points.iter().map(f).fold(0.0_f64, f64::max);
    Ok(ValidationReport {
        seed,
        n_points,
        max_rel_error: max(&|p| p.rel_error.iter().cloned().fold(0.0, f64::max)),
        max_abs_dn: max(&|p| p.dn.abs()),
        max_cavity_output_residual: max(&|p| p.cavity_output_residual),
        max_projection_error: max(&|p| p.projection_error),
        points,
    })
}
