//! Orthogonal projection onto the semiclassical manifold
//! `rho = (n I - sqrt2 p_r sx + sqrt2 p_i sy - D sz)/2 (x) |alpha><alpha|`,
//! `alpha = sqrt(n0) (x_r + i x_i)`.
//!
//! The Hilbert-Schmidt inner product `<X, Y> = Tr[X^dag Y]` is used
//! throughout. Tangent vectors are mutually orthogonal, so each coordinate
//! rate is a single inner product divided by that vector's squared norm.

use serde::{Deserialize, Serialize};

use crate::hilbert::{
    self, atomic_block, build_operators, coherent_vector, embed_manifold_point, CMatrix,
    DensityMatrix, FockConfig, PhysicalParams,
};
use crate::{Error, Result, C64};

/// Tolerance on the imaginary part of a projection inner product, relative
/// to `max(1, |X| |Y|)`.
pub const IMAG_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawManifoldPoint {
    pub n: f64,
    pub p_r: f64,
    pub p_i: f64,
    pub d: f64,
    pub x_r: f64,
    pub x_i: f64,
}

impl RawManifoldPoint {
    /// Semiclassical ground state: atom in `|g>`, field in vacuum.
    pub fn ground() -> Self {
        Self {
            n: 1.0,
            p_r: 0.0,
            p_i: 0.0,
            d: 1.0,
            x_r: 0.0,
            x_i: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.n, self.p_r, self.p_i, self.d, self.x_r, self.x_i]
            .iter()
            .all(|v| v.is_finite())
    }

    /// `2 p_r^2 + 2 p_i^2 + D^2`
    pub fn bloch_norm_sq(&self) -> f64 {
        2.0 * self.p_r * self.p_r + 2.0 * self.p_i * self.p_i + self.d * self.d
    }

    /// `n^2 + 2 p_r^2 + 2 p_i^2 + D^2`, the squared norm of both field
    /// tangent vectors.
    pub fn field_norm_sq(&self) -> f64 {
        self.n * self.n + self.bloch_norm_sq()
    }

    /// Bloch-ball constraint. Violations are reported, not rejected, since
    /// unnormalized filter states may leave the ball.
    pub fn is_physical(&self) -> bool {
        self.bloch_norm_sq() <= self.n * self.n * (1.0 + 1e-12)
    }

    pub fn alpha(&self, params: &PhysicalParams) -> C64 {
        C64::new(self.x_r, self.x_i) * params.field_scale()
    }

    /// Cutoff from [`FockConfig::auto`] for this point's field amplitude.
    pub fn auto_fock(&self, params: &PhysicalParams) -> FockConfig {
        FockConfig::auto(self.alpha(params).norm())
    }
}

/// Tangent vectors of the manifold at one point.
///
/// `d_xr`, `d_xi` are the derivatives with respect to `Re alpha` and
/// `Im alpha`; their squared norms are `field_norm_sq`. The coordinate
/// tangents are `jacobian * d_xr`, `jacobian * d_xi` with
/// `jacobian = d alpha / d x`.
#[derive(Clone, Debug)]
pub struct TangentFrame {
    pub point: RawManifoldPoint,
    pub d_n: DensityMatrix,
    pub d_pr: DensityMatrix,
    pub d_pi: DensityMatrix,
    pub d_d: DensityMatrix,
    pub d_xr: DensityMatrix,
    pub d_xi: DensityMatrix,
    pub field_norm_sq: f64,
    pub jacobian: f64,
    /// Numerically evaluated `<v, v>` for `(d_n, d_pr, d_pi, d_d, d_xr, d_xi)`.
    pub norms_sq: [f64; 6],
}

impl TangentFrame {
    pub fn vectors(&self) -> [&DensityMatrix; 6] {
        [
            &self.d_n, &self.d_pr, &self.d_pi, &self.d_d, &self.d_xr, &self.d_xi,
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectedIncrement {
    pub dn: f64,
    pub dp_r: f64,
    pub dp_i: f64,
    pub dd: f64,
    pub dx_r: f64,
    pub dx_i: f64,
}

impl ProjectedIncrement {
    pub fn to_array(&self) -> [f64; 6] {
        [self.dn, self.dp_r, self.dp_i, self.dd, self.dx_r, self.dx_i]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            dn: a[0],
            dp_r: a[1],
            dp_i: a[2],
            dd: a[3],
            dx_r: a[4],
            dx_i: a[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Rates of the normalized variables `p/n`, `D/n` (and the field, which
    /// is not normalized) implied by this increment at `point`.
    pub fn normalized_rates(&self, point: &RawManifoldPoint) -> [f64; 5] {
        let n = point.n;
        [
            (self.dp_r - point.p_r / n * self.dn) / n,
            (self.dp_i - point.p_i / n * self.dn) / n,
            (self.dd - point.d / n * self.dn) / n,
            self.dx_r,
            self.dx_i,
        ]
    }
}

pub fn hs_inner(x: &DensityMatrix, y: &DensityMatrix) -> Result<C64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(x
        .matrix()
        .iter()
        .zip(y.matrix().iter())
        .map(|(a, b)| a.conj() * b)
        .sum())
}

pub fn tangent_frame(
    point: &RawManifoldPoint,
    params: &PhysicalParams,
    fock: &FockConfig,
) -> Result<TangentFrame> {
    if !point.is_finite() {
        return Err(Error::InvalidParams(format!("non-finite manifold point {point:?}")));
    }
    let alpha = point.alpha(params);
    let v = coherent_vector(alpha, fock)?;
    let proj = &v * v.adjoint();
    let [sx, sy, sz] = hilbert::pauli();
    let half = C64::new(0.5, 0.0);
    let inv_r2 = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);

    let d_n = CMatrix::identity(2, 2).kronecker(&proj) * half;
    let d_d = sz.kronecker(&proj) * (-half);
    let d_pr = sx.kronecker(&proj) * (-inv_r2);
    let d_pi = sy.kronecker(&proj) * inv_r2;

    // (a^dag - alpha*) |alpha>, the displaced one-photon state
    let a_dag = hilbert::field_annihilation(fock.n_max).adjoint();
    let w = &a_dag * &v - &v * alpha.conj();
    let wv = &w * v.adjoint();
    let vw = &v * w.adjoint();
    let i = C64::new(0.0, 1.0);
    let q_r = &wv + &vw;
    let q_i = (&wv - &vw) * i;
    let rho_at = atomic_block(point);
    let d_xr = rho_at.kronecker(&q_r);
    let d_xi = rho_at.kronecker(&q_i);

    let vectors = [d_n, d_pr, d_pi, d_d, d_xr, d_xi].map(DensityMatrix::from_matrix);
    let mut norms_sq = [0.0; 6];
    for (k, vec) in vectors.iter().enumerate() {
        norms_sq[k] = hs_inner(vec, vec)?.re;
    }
    let [d_n, d_pr, d_pi, d_d, d_xr, d_xi] = vectors;
    Ok(TangentFrame {
        point: *point,
        d_n,
        d_pr,
        d_pi,
        d_d,
        d_xr,
        d_xi,
        field_norm_sq: point.field_norm_sq(),
        jacobian: params.field_scale(),
        norms_sq,
    })
}

fn real_inner(x: &DensityMatrix, y: &DensityMatrix) -> Result<f64> {
    let z = hs_inner(x, y)?;
    let scale = (x.frobenius_norm() * y.frobenius_norm()).max(1.0);
    if z.im.abs() > IMAG_TOL * scale {
        return Err(Error::NonHermitian {
            deviation: z.im.abs() / scale,
        });
    }
    Ok(z.re)
}

/// Coordinates of the orthogonal projection of `dtheta` onto the tangent
/// span at `frame.point`.
pub fn project_increment(
    dtheta: &DensityMatrix,
    frame: &TangentFrame,
) -> Result<ProjectedIncrement> {
    if dtheta.dim() != frame.d_n.dim() {
        return Err(Error::DimensionMismatch {
            expected: frame.d_n.dim(),
            got: dtheta.dim(),
        });
    }
    let herm = dtheta.hermiticity_deviation();
    if herm > IMAG_TOL * dtheta.frobenius_norm().max(1.0) {
        return Err(Error::NonHermitian { deviation: herm });
    }
    let c = |v: &DensityMatrix| real_inner(v, dtheta);
    let field = frame.field_norm_sq * frame.jacobian;
    Ok(ProjectedIncrement {
        dn: c(&frame.d_n)? / frame.norms_sq[0],
        dp_r: c(&frame.d_pr)? / frame.norms_sq[1],
        dp_i: c(&frame.d_pi)? / frame.norms_sq[2],
        dd: c(&frame.d_d)? / frame.norms_sq[3],
        dx_r: c(&frame.d_xr)? / field,
        dx_i: c(&frame.d_xi)? / field,
    })
}

/// `sum_i c_i nu_i`, the tangent vector with coordinates `increment`.
pub fn tangent_combination(increment: &ProjectedIncrement, frame: &TangentFrame) -> DensityMatrix {
    let mut out = DensityMatrix::zeros(frame.d_n.dim());
    out.axpy(increment.dn, &frame.d_n);
    out.axpy(increment.dp_r, &frame.d_pr);
    out.axpy(increment.dp_i, &frame.d_pi);
    out.axpy(increment.dd, &frame.d_d);
    out.axpy(increment.dx_r * frame.jacobian, &frame.d_xr);
    out.axpy(increment.dx_i * frame.jacobian, &frame.d_xi);
    out
}

/// Hilbert-Schmidt norm of the component of `dtheta` orthogonal to the
/// manifold.
pub fn projection_error(
    dtheta: &DensityMatrix,
    increment: &ProjectedIncrement,
    frame: &TangentFrame,
) -> Result<f64> {
    let residual = dtheta.sub(&tangent_combination(increment, frame));
    Ok(hs_inner(&residual, &residual)?.re.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CavityOutputResidual {
    /// Largest normalized-variable rate from the homodyne innovation.
    pub homodyne: f64,
    /// Same for the second heterodyne quadrature.
    pub quadrature: f64,
    /// `dn / n` from the homodyne innovation; the whole update is a rescaling
    /// of the state by this factor.
    pub homodyne_norm_rate: f64,
}

impl CavityOutputResidual {
    pub fn max(&self) -> f64 {
        self.homodyne.max(self.quadrature)
    }
}

/// Projects the cavity-output conditioning terms at `point` and reports what
/// survives in the normalized variables `(p/n, D/n, x)`. Whatever is left in
/// the raw coordinates must be a rescaling along the state itself, which the
/// normalization absorbs.
pub fn verify_cavity_output_vanishes(
    point: &RawManifoldPoint,
    params: &PhysicalParams,
    fock: &FockConfig,
) -> Result<CavityOutputResidual> {
    let ops = build_operators(params, *fock)?;
    let theta = embed_manifold_point(point, params, fock)?;
    let frame = tangent_frame(point, params, fock)?;
    let worst = |inc: &ProjectedIncrement| {
        inc.normalized_rates(point)
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    };
    let hom = hilbert::conditioning_superop_cavity_homodyne(&theta, &ops, params.kappa)?;
    let hom_inc = project_increment(&hom, &frame)?;
    let quad = hilbert::conditioning_superop_cavity_quadrature(&theta, &ops, params.kappa)?;
    let quad_inc = project_increment(&quad, &frame)?;
    Ok(CavityOutputResidual {
        homodyne: worst(&hom_inc),
        quadrature: worst(&quad_inc),
        homodyne_norm_rate: hom_inc.dn / point.n,
    })
}

/// Projection of the unconditional master-equation right-hand side at
/// `point`, in raw coordinates per unit unscaled time.
pub fn numeric_mbe_rhs(
    point: &RawManifoldPoint,
    params: &PhysicalParams,
    fock: &FockConfig,
) -> Result<ProjectedIncrement> {
    Ok(numeric_mbe_rhs_detailed(point, params, fock)?.increment)
}

#[derive(Clone, Copy, Debug)]
pub struct NumericProjection {
    pub increment: ProjectedIncrement,
    /// `|dtheta - drho|`
    pub projection_error: f64,
    /// `|dtheta|`
    pub rhs_norm: f64,
}

pub fn numeric_mbe_rhs_detailed(
    point: &RawManifoldPoint,
    params: &PhysicalParams,
    fock: &FockConfig,
) -> Result<NumericProjection> {
    let ops = build_operators(params, *fock)?;
    let theta = embed_manifold_point(point, params, fock)?;
    let dtheta = hilbert::lindblad_rhs(&theta, &ops, params)?;
    let frame = tangent_frame(point, params, fock)?;
    let increment = project_increment(&dtheta, &frame)?;
    Ok(NumericProjection {
        increment,
        projection_error: projection_error(&dtheta, &increment, &frame)?,
        rhs_norm: dtheta.frobenius_norm(),
    })
}
