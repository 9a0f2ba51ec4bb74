//! Exact atom-cavity model on a truncated Fock space.
//!
//! States live on `C^2 (x) C^(n_max+1)` with the atom as the first tensor
//! factor. Atomic basis order is `(|e>, |g>)`, so `sigma_z |e> = +|e>` and
//! `sigma = (sigma_x - i sigma_y)/2 = |g><e|`. A basis index is
//! `atom * (n_max + 1) + photons`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::manifold::RawManifoldPoint;
use crate::{Error, Result, C64};

pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Default bound on the coherent-state norm lost above `n_max`.
pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-10;

const EXCITED: usize = 0;
const GROUND: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FockConfig {
    pub n_max: usize,
    #[serde(default = "default_truncation_tol")]
    pub truncation_tol: f64,
}

fn default_truncation_tol() -> f64 {
    DEFAULT_TRUNCATION_TOL
}

impl FockConfig {
    pub fn new(n_max: usize) -> Self {
        Self {
            n_max,
            truncation_tol: DEFAULT_TRUNCATION_TOL,
        }
    }

    /// Cutoff `ceil(|alpha|^2 + 8|alpha| + 20)`, enough for a Poisson tail
    /// far below the default tolerance.
    pub fn auto(alpha_abs: f64) -> Self {
        let a = alpha_abs.abs();
        Self::new((a * a + 8.0 * a + 20.0).ceil() as usize)
    }

    pub fn field_dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn dim(&self) -> usize {
        2 * self.field_dim()
    }

    pub fn index(&self, excited: bool, photons: usize) -> usize {
        let atom = if excited { EXCITED } else { GROUND };
        atom * self.field_dim() + photons
    }

    /// Probability mass of the Poisson(|alpha|^2) distribution above `n_max`,
    /// summed directly from the tail to avoid cancellation.
    pub fn truncation_loss(&self, alpha: C64) -> f64 {
        poisson_tail(alpha.norm_sqr(), self.n_max)
    }

    pub fn check(&self, alpha: C64) -> Result<()> {
        let loss = self.truncation_loss(alpha);
        if loss > self.truncation_tol {
            let mut suggested = self.n_max + 1;
            while poisson_tail(alpha.norm_sqr(), suggested) > self.truncation_tol {
                suggested += 1;
            }
            return Err(Error::Truncation {
                alpha: alpha.norm(),
                n_max: self.n_max,
                loss,
                tolerance: self.truncation_tol,
                suggested_n_max: suggested,
            });
        }
        Ok(())
    }
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// `sum_{n > n_max} e^{-mean} mean^n / n!`
fn poisson_tail(mean: f64, n_max: usize) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    let start = n_max + 1;
    let mut log_term = -mean + start as f64 * mean.ln() - ln_factorial(start);
    let mut sum = 0.0;
    let mut n = start;
    loop {
        let term = log_term.exp();
        sum += term;
        n += 1;
        log_term += mean.ln() - (n as f64).ln();
        // past the Poisson mode the terms decay geometrically
        if (n as f64) > mean && term < 1e-18 * sum.max(1e-300) {
            break;
        }
        if n > start + 100_000 {
            break;
        }
    }
    sum
}

/// Rates of the driven, damped Jaynes-Cummings model in the frame rotating at
/// the drive frequency (hbar = 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub g0: f64,
    pub kappa: f64,
    pub gamma_perp: f64,
    pub delta_c: f64,
    pub delta_a: f64,
    pub drive: C64,
}

impl PhysicalParams {
    /// Finite entries and nonnegative rates. Zero rates are allowed so that
    /// individual terms of the master equation can be isolated.
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.g0,
            self.kappa,
            self.gamma_perp,
            self.delta_c,
            self.delta_a,
            self.drive.re,
            self.drive.im,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite physical parameter".into()));
        }
        for (name, v) in [("g0", self.g0), ("kappa", self.kappa), ("gamma_perp", self.gamma_perp)] {
            if v < 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `g0, kappa, gamma_perp > 0`, required wherever the dimensionless
    /// parametrization is used.
    pub fn validate_strict(&self) -> Result<()> {
        self.validate()?;
        for (name, v) in [("g0", self.g0), ("kappa", self.kappa), ("gamma_perp", self.gamma_perp)] {
            if v <= 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `d alpha / d x = gamma_perp / (sqrt(2) g0)`, the square root of the
    /// critical photon number.
    pub fn field_scale(&self) -> f64 {
        self.gamma_perp / (std::f64::consts::SQRT_2 * self.g0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn from_matrix(m: CMatrix) -> Self {
        assert!(m.is_square(), "density matrix must be square");
        Self(m)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    /// `|psi><psi|`
    pub fn pure(psi: &CVector) -> Self {
        Self(psi * psi.adjoint())
    }

    pub fn basis_projector(fock: &FockConfig, excited: bool, photons: usize) -> Self {
        let mut m = CMatrix::zeros(fock.dim(), fock.dim());
        let i = fock.index(excited, photons);
        m[(i, i)] = C64::new(1.0, 0.0);
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// `max |M - M^dag|` over entries.
    pub fn hermiticity_deviation(&self) -> f64 {
        let n = self.dim();
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                dev = dev.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn hermitize(&mut self) {
        let adj = self.0.adjoint();
        self.0 = (&self.0 + adj) * C64::new(0.5, 0.0);
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let mut h = self.clone();
        h.hermitize();
        let eig = nalgebra::linalg::SymmetricEigen::new(h.0);
        eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(&self.0 * C64::new(s, 0.0))
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &DensityMatrix) {
        self.0.zip_apply(&other.0, |a, b| *a += b * s);
    }

    pub fn sub(&self, other: &DensityMatrix) -> Self {
        Self(&self.0 - &other.0)
    }

    fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

/// `Tr[X Y]` without forming the product.
pub fn trace_product(x: &CMatrix, y: &CMatrix) -> C64 {
    let n = x.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += x[(i, k)] * y[(k, i)];
        }
    }
    acc
}

#[derive(Clone, Debug)]
pub struct OperatorSet {
    pub fock: FockConfig,
    pub a: CMatrix,
    pub a_dag: CMatrix,
    pub sigma: CMatrix,
    pub sigma_dag: CMatrix,
    pub sigma_x: CMatrix,
    pub sigma_y: CMatrix,
    pub sigma_z: CMatrix,
    pub identity: CMatrix,
    pub hamiltonian: CMatrix,
    /// `a^dag a`
    pub number: CMatrix,
    /// `sigma^dag sigma`
    pub excited: CMatrix,
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn field_annihilation(n_max: usize) -> CMatrix {
    let n = n_max + 1;
    let mut a = CMatrix::zeros(n, n);
    for k in 1..n {
        a[(k - 1, k)] = c((k as f64).sqrt(), 0.0);
    }
    a
}

pub fn pauli() -> [CMatrix; 3] {
    let sx = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]);
    let sy = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]);
    let sz = CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]);
    [sx, sy, sz]
}

pub fn build_operators(params: &PhysicalParams, fock: FockConfig) -> Result<OperatorSet> {
    params.validate()?;
    if fock.n_max == 0 && params.drive.norm() > 0.0 {
        log::warn!("n_max = 0 with nonzero drive: field dynamics are meaningless");
    }
    let nf = fock.field_dim();
    let id_f = CMatrix::identity(nf, nf);
    let id_a = CMatrix::identity(2, 2);
    let af = field_annihilation(fock.n_max);
    let [sx, sy, sz] = pauli();
    let sm = (&sx - &sy * c(0., 1.)) * c(0.5, 0.);

    let a = id_a.kronecker(&af);
    let a_dag = a.adjoint();
    let sigma = sm.kronecker(&id_f);
    let sigma_dag = sigma.adjoint();
    let sigma_x = sx.kronecker(&id_f);
    let sigma_y = sy.kronecker(&id_f);
    let sigma_z = sz.kronecker(&id_f);
    let identity = CMatrix::identity(fock.dim(), fock.dim());
    let number = &a_dag * &a;
    let excited = &sigma_dag * &sigma;

    let i = c(0., 1.);
    let e = params.drive;
    let coupling = (&a_dag * &sigma - &a * &sigma_dag) * (i * params.g0);
    let drive = &a_dag * (i * e) - &a * (i * e.conj());
    let hamiltonian = &number * c(params.delta_c, 0.)
        + &excited * c(params.delta_a, 0.)
        + coupling
        + drive;

    Ok(OperatorSet {
        fock,
        a,
        a_dag,
        sigma,
        sigma_dag,
        sigma_x,
        sigma_y,
        sigma_z,
        identity,
        hamiltonian,
        number,
        excited,
    })
}

/// Unconditional master equation
/// `-i[H, theta] + kappa D[a] theta + gamma_perp D[sigma] theta`
/// with `D[L] X = 2 L X L^dag - L^dag L X - X L^dag L`.
pub fn lindblad_rhs(
    theta: &DensityMatrix,
    ops: &OperatorSet,
    params: &PhysicalParams,
) -> Result<DensityMatrix> {
    theta.check_dim(ops.fock.dim())?;
    let t = theta.matrix();
    // H_eff = H - i kappa a^dag a - i gamma sigma^dag sigma
    let h_eff = &ops.hamiltonian
        - &ops.number * c(0., params.kappa)
        - &ops.excited * c(0., params.gamma_perp);
    let h_t = &h_eff * t;
    let mut out = (&h_t - h_t.adjoint()) * c(0., -1.);
    let at = &ops.a * t;
    out += &at * &ops.a_dag * c(2.0 * params.kappa, 0.);
    let st = &ops.sigma * t;
    out += &st * &ops.sigma_dag * c(2.0 * params.gamma_perp, 0.);
    Ok(DensityMatrix(out))
}

/// Innovation superoperator for homodyne detection of the cavity output:
/// `sqrt(2 kappa) (a theta + theta a^dag)`.
pub fn conditioning_superop_cavity_homodyne(
    theta: &DensityMatrix,
    ops: &OperatorSet,
    kappa: f64,
) -> Result<DensityMatrix> {
    theta.check_dim(ops.fock.dim())?;
    let at = &ops.a * theta.matrix();
    let m = (&at + at.adjoint()) * c((2.0 * kappa).sqrt(), 0.);
    Ok(DensityMatrix(m))
}

/// Second heterodyne quadrature of the cavity-output innovation:
/// `i sqrt(2 kappa) (a theta - theta a^dag)`.
pub fn conditioning_superop_cavity_quadrature(
    theta: &DensityMatrix,
    ops: &OperatorSet,
    kappa: f64,
) -> Result<DensityMatrix> {
    theta.check_dim(ops.fock.dim())?;
    let at = &ops.a * theta.matrix();
    let m = (&at - at.adjoint()) * c(0., (2.0 * kappa).sqrt());
    Ok(DensityMatrix(m))
}

/// Truncated coherent state `c_n = e^{-|alpha|^2/2} alpha^n / sqrt(n!)`.
pub fn coherent_vector(alpha: C64, fock: &FockConfig) -> Result<CVector> {
    fock.check(alpha)?;
    let mut v = CVector::zeros(fock.field_dim());
    let mut amp = c((-0.5 * alpha.norm_sqr()).exp(), 0.);
    v[0] = amp;
    for n in 1..fock.field_dim() {
        amp = amp * alpha / (n as f64).sqrt();
        v[n] = amp;
    }
    Ok(v)
}

/// Atomic factor `(n I - sqrt2 p_r sx + sqrt2 p_i sy - D sz) / 2`.
pub fn atomic_block(point: &RawManifoldPoint) -> CMatrix {
    let [sx, sy, sz] = pauli();
    let r2 = std::f64::consts::SQRT_2;
    (CMatrix::identity(2, 2) * c(point.n, 0.) - sx * c(r2 * point.p_r, 0.)
        + sy * c(r2 * point.p_i, 0.)
        - sz * c(point.d, 0.))
        * c(0.5, 0.)
}

/// `rho_atom (x) |alpha><alpha|` with `alpha = field_scale * (x_r + i x_i)`.
pub fn embed_manifold_point(
    point: &RawManifoldPoint,
    params: &PhysicalParams,
    fock: &FockConfig,
) -> Result<DensityMatrix> {
    let alpha = point.alpha(params);
    let v = coherent_vector(alpha, fock)?;
    let proj = &v * v.adjoint();
    Ok(DensityMatrix(atomic_block(point).kronecker(&proj)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub a: C64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    pub trace: C64,
    /// `Tr[X theta]`, meaningful for unnormalized filter states.
    pub raw: Moments,
    /// `Tr[X theta] / Tr[theta]`; `None` when the trace vanishes.
    pub normalized: Option<Moments>,
}

pub fn expectations(theta: &DensityMatrix, ops: &OperatorSet) -> Result<Expectations> {
    theta.check_dim(ops.fock.dim())?;
    let t = theta.matrix();
    let trace = theta.trace();
    let raw = Moments {
        a: trace_product(&ops.a, t),
        sigma_x: trace_product(&ops.sigma_x, t).re,
        sigma_y: trace_product(&ops.sigma_y, t).re,
        sigma_z: trace_product(&ops.sigma_z, t).re,
    };
    let normalized = if trace.norm() < 1e-14 {
        None
    } else {
        let tr = trace.re;
        Some(Moments {
            a: raw.a / trace,
            sigma_x: raw.sigma_x / tr,
            sigma_y: raw.sigma_y / tr,
            sigma_z: raw.sigma_z / tr,
        })
    };
    Ok(Expectations {
        trace,
        raw,
        normalized,
    })
}

#[derive(Clone, Debug)]
pub struct MasterTrajectory {
    pub times: Vec<f64>,
    pub expectations: Vec<Expectations>,
    /// `<sigma^dag sigma>` at each sample.
    pub excited_population: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub final_state: DensityMatrix,
}

/// Abort threshold for trace or Hermiticity drift during integration.
pub const MASTER_INVARIANT_TOL: f64 = 1e-6;

/// Fixed-step RK4 integration of [`lindblad_rhs`].
///
/// Samples (expectations, and the full state if `keep_states`) are taken
/// every `stride` steps, including the initial and final step.
pub fn evolve_master(
    theta0: &DensityMatrix,
    ops: &OperatorSet,
    params: &PhysicalParams,
    t_final: f64,
    dt: f64,
    stride: usize,
    keep_states: bool,
) -> Result<MasterTrajectory> {
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "need dt > 0 and t_final >= 0, got dt={dt}, t_final={t_final}"
        )));
    }
    let max_rate = params
        .g0
        .abs()
        .max(params.kappa)
        .max(params.gamma_perp)
        .max(params.delta_a.abs())
        .max(params.delta_c.abs())
        .max(params.drive.norm());
    if dt * max_rate > 0.1 {
        log::warn!("dt * max rate = {:.3} is not small", dt * max_rate);
    }
    let stride = stride.max(1);
    let steps = (t_final / dt).round() as usize;
    let tr0 = theta0.trace().re;

    let mut out = MasterTrajectory {
        times: Vec::new(),
        expectations: Vec::new(),
        excited_population: Vec::new(),
        states: Vec::new(),
        final_state: theta0.clone(),
    };
    let record = |k: usize, th: &DensityMatrix, out: &mut MasterTrajectory| -> Result<()> {
        out.times.push(k as f64 * dt);
        out.expectations.push(expectations(th, ops)?);
        out.excited_population
            .push(trace_product(&ops.excited, th.matrix()).re);
        if keep_states {
            out.states.push(th.clone());
        }
        Ok(())
    };

    let mut theta = theta0.clone();
    record(0, &theta, &mut out)?;
    for step in 1..=steps {
        let k1 = lindblad_rhs(&theta, ops, params)?;
        let mut tmp = theta.clone();
        tmp.axpy(0.5 * dt, &k1);
        let k2 = lindblad_rhs(&tmp, ops, params)?;
        tmp = theta.clone();
        tmp.axpy(0.5 * dt, &k2);
        let k3 = lindblad_rhs(&tmp, ops, params)?;
        tmp = theta.clone();
        tmp.axpy(dt, &k3);
        let k4 = lindblad_rhs(&tmp, ops, params)?;
        theta.axpy(dt / 6.0, &k1);
        theta.axpy(dt / 3.0, &k2);
        theta.axpy(dt / 3.0, &k3);
        theta.axpy(dt / 6.0, &k4);

        let herm = theta.hermiticity_deviation();
        let time = step as f64 * dt;
        if herm > MASTER_INVARIANT_TOL {
            return Err(Error::InvariantBreach {
                step,
                time,
                what: "hermiticity deviation",
                value: herm,
            });
        }
        let trace_drift = (theta.trace().re - tr0).abs();
        if trace_drift > MASTER_INVARIANT_TOL || !trace_drift.is_finite() {
            return Err(Error::InvariantBreach {
                step,
                time,
                what: "trace drift",
                value: trace_drift,
            });
        }
        theta.hermitize();
        if step % stride == 0 || step == steps {
            record(step, &theta, &mut out)?;
        }
    }
    out.final_state = theta;
    Ok(out)
}
