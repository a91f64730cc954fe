//! Exact modal solver for the linear selfadjoint problem and numerical checks
//! of its stability and error bounds.
//!
//! When `L` has eigenpairs `(lambda_m, phi_m)`, the system `W_t = G W`
//! decouples into 3x3 problems `W_m' = G_m W_m` with
//! `G_m = [[-b lambda, -d, 0], [a lambda, 0, -a lambda], [0, 1, 0]]`, and the
//! smoother acts on mode `m` as the scalar `q_m`. Everything here works on
//! those per-mode systems.

use nalgebra::Matrix3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::marcher::Direction;
use crate::params::{smoothing_factor, BoundConstants, SchemeParams};
use crate::smoother::continuous_eigenvalue;

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, x: &Vec3) -> Vec3 {
    [
        a[0][0] * x[0] + a[0][1] * x[1] + a[0][2] * x[2],
        a[1][0] * x[0] + a[1][1] * x[1] + a[1][2] * x[2],
        a[2][0] * x[0] + a[2][1] * x[1] + a[2][2] * x[2],
    ]
}

fn mat_scale(a: &Mat3, s: f64) -> Mat3 {
    a.map(|row| row.map(|x| x * s))
}

fn mat_add(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += b[i][j];
        }
    }
    out
}

fn one_norm(a: &Mat3) -> f64 {
    (0..3)
        .map(|j| (0..3).map(|i| a[i][j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_norm(x: &Vec3) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

fn vec_sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm_sq(x: &Vec3) -> f64 {
    x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
}

/// `exp(t M)` by scaling and squaring with a truncated Taylor series.
///
/// `t M` is scaled by `2^-s` until its 1-norm is at most 1/2, the series is
/// summed until the terms stop contributing, and the result squared `s` times.
pub fn matrix_exponential_3x3(m: &Mat3, t: f64) -> Mat3 {
    let a = mat_scale(m, t);
    let norm = one_norm(&a);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let b = mat_scale(&a, 0.5f64.powi(squarings));
    let mut sum = IDENTITY;
    let mut term = IDENTITY;
    for k in 1..=30 {
        term = mat_scale(&mat_mul(&term, &b), 1.0 / k as f64);
        sum = mat_add(&sum, &term);
        if one_norm(&term) <= f64::EPSILON * 1e-3 * one_norm(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = mat_mul(&sum, &sum);
    }
    sum
}

/// One eigenmode of the linear problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModalSystem {
    pub lambda: f64,
    pub zeta: f64,
    pub g: Mat3,
    pub q: f64,
}

impl ModalSystem {
    /// Mode with eigenvalue `lambda`; `q` from `omega`, `p` and `|dt|`.
    pub fn new(lambda: f64, params: &SchemeParams) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::param("lambda", format!("must be positive, got {lambda}")));
        }
        let zeta = params.rho * (1.0 + lambda);
        let q = smoothing_factor(zeta, params.omega, params.dt, params.p)?;
        Ok(ModalSystem {
            lambda,
            zeta,
            g: block_matrix(lambda, params.a, params.b, params.d),
            q,
        })
    }

    /// Same mode with an externally supplied smoothing factor.
    pub fn with_q(self, q: f64) -> Self {
        ModalSystem { q, ..self }
    }

    /// `exp(t G_m)`.
    pub fn propagator(&self, t: f64) -> Mat3 {
        matrix_exponential_3x3(&self.g, t)
    }

    /// `q (I + dt G)`.
    pub fn step_matrix(&self, dt: f64) -> Mat3 {
        mat_scale(&mat_add(&IDENTITY, &mat_scale(&self.g, dt)), self.q)
    }

    /// Largest singular value of `q (I + dt G)`.
    pub fn step_norm(&self, dt: f64) -> f64 {
        let r = self.step_matrix(dt);
        let m = Matrix3::from_fn(|i, j| r[i][j]);
        m.singular_values().max()
    }

    /// Exact solution and scheme iterate over `n_steps` steps of signed `dt`.
    pub fn trajectory(&self, w0: &Vec3, dt: f64, n_steps: usize) -> ModalTrajectory {
        let prop = self.propagator(dt);
        let mut exact = vec![*w0];
        let mut scheme = vec![*w0];
        for n in 0..n_steps {
            exact.push(mat_vec(&prop, &exact[n]));
            scheme.push(scheme_step_modal(&scheme[n], self, dt));
        }
        let errors = exact.iter().zip(&scheme).map(|(e, s)| vec_norm(&vec_sub(s, e))).collect();
        ModalTrajectory {
            dt,
            exact,
            scheme,
            errors,
        }
    }
}

pub fn block_matrix(lambda: f64, a: f64, b: f64, d: f64) -> Mat3 {
    [[-b * lambda, -d, 0.0], [a * lambda, 0.0, -a * lambda], [0.0, 1.0, 0.0]]
}

#[derive(Clone, Debug)]
pub struct ModalTrajectory {
    pub dt: f64,
    pub exact: Vec<Vec3>,
    pub scheme: Vec<Vec3>,
    pub errors: Vec<f64>,
}

/// `q (I + dt G) U`.
pub fn scheme_step_modal(u: &Vec3, sys: &ModalSystem, dt: f64) -> Vec3 {
    let gu = mat_vec(&sys.g, u);
    [
        sys.q * (u[0] + dt * gu[0]),
        sys.q * (u[1] + dt * gu[1]),
        sys.q * (u[2] + dt * gu[2]),
    ]
}

/// `count` points log-spaced over `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1).max(1) as f64).exp())
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Lemma1Report {
    pub samples: usize,
    /// Smallest `(1 + |dt| zeta_J) - q(zeta) (1 + |dt| zeta)`.
    pub worst_margin: f64,
    pub worst_zeta: f64,
    pub failures: Vec<f64>,
}

impl Lemma1Report {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub const LEMMA1_TOLERANCE: f64 = 1e-12;

fn check_lemma1_hypothesis(params: &SchemeParams) -> Result<()> {
    let floor = params.omega_floor();
    if params.omega < floor {
        return Err(Error::Precondition {
            lemma: "Lemma 1",
            detail: format!("omega = {:e} is below zeta_J^(1-p) = {floor:e}", params.omega),
        });
    }
    Ok(())
}

/// Checks `q(zeta)(1 + |dt| zeta) <= 1 + |dt| zeta_J` at every sample.
pub fn verify_lemma1(params: &SchemeParams, zeta_samples: &[f64]) -> Result<Lemma1Report> {
    check_lemma1_hypothesis(params)?;
    let h = params.dt_abs();
    let cap = 1.0 + h * params.zeta_j;
    let mut report = Lemma1Report {
        samples: zeta_samples.len(),
        worst_margin: f64::INFINITY,
        worst_zeta: f64::NAN,
        failures: Vec::new(),
    };
    for &zeta in zeta_samples {
        let q = smoothing_factor(zeta, params.omega, h, params.p)?;
        let margin = cap - q * (1.0 + h * zeta);
        if margin < report.worst_margin {
            report.worst_margin = margin;
            report.worst_zeta = zeta;
        }
        if margin < -LEMMA1_TOLERANCE {
            report.failures.push(zeta);
        }
    }
    Ok(report)
}

/// Modes `1 <= j, k <= modes` of `-Delta` on the unit square.
#[derive(Clone, Debug)]
pub struct ModalGrid {
    pub modes: usize,
    pub systems: Vec<ModalSystem>,
}

impl ModalGrid {
    pub fn square(params: &SchemeParams, modes: usize) -> Result<Self> {
        let mut systems = Vec::with_capacity(modes * modes);
        for j in 1..=modes {
            for k in 1..=modes {
                systems.push(ModalSystem::new(continuous_eigenvalue(j, k), params)?);
            }
        }
        Ok(ModalGrid { modes, systems })
    }

    /// `(j, k)` of the mode stored at `index`.
    pub fn indices(&self, index: usize) -> (usize, usize) {
        (index / self.modes + 1, index % self.modes + 1)
    }

    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }
}

/// Coefficients `exp(-(j^2 + k^2)) * U(-1, 1)` per mode and component.
pub fn smooth_modal_data(grid: &ModalGrid, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..grid.len())
        .map(|idx| {
            let (j, k) = grid.indices(idx);
            let decay = (-((j * j + k * k) as f64)).exp();
            [0; 3].map(|_| decay * rng.random_range(-1.0..1.0))
        })
        .collect()
}

/// Random per-mode perturbation with total norm `delta`, spread over the
/// lowest `span x span` modes.
pub fn perturbation(grid: &ModalGrid, delta: f64, span: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec3> = (0..grid.len())
        .map(|idx| {
            let (j, k) = grid.indices(idx);
            if j <= span && k <= span {
                [0; 3].map(|_| rng.random_range(-1.0..1.0))
            } else {
                [0.0; 3]
            }
        })
        .collect();
    let norm = out.iter().map(norm_sq).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut out {
            *v = v.map(|x| x * delta / norm);
        }
    }
    out
}

pub fn modal_norm(data: &[Vec3]) -> f64 {
    data.iter().map(norm_sq).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct Lemma2Report {
    /// Largest `||q_m (I + dt G_m)||_2` over all modes.
    pub max_step_norm: f64,
    pub step_cap: f64,
    /// Largest `||U^n|| / (exp(n |dt| zeta_J) ||U^0||)` over the march.
    pub worst_envelope_ratio: f64,
    pub steps: usize,
}

impl Lemma2Report {
    pub fn passed(&self) -> bool {
        self.max_step_norm <= self.step_cap && self.worst_envelope_ratio <= 1.0
    }
}

/// Per-mode step norms and an `n_steps` march of `data` against the
/// envelope `exp(n |dt| zeta_J)`.
pub fn verify_lemma2(params: &SchemeParams, grid: &ModalGrid, data: &[Vec3], dt: f64, n_steps: usize) -> Lemma2Report {
    let step_cap = 1.0 + dt.abs() * params.zeta_j;
    let max_step_norm = grid
        .systems
        .par_iter()
        .map(|s| s.step_norm(dt))
        .reduce(|| 0.0, f64::max);
    let initial = modal_norm(data);
    let mut state = data.to_vec();
    let mut worst = 0.0f64;
    for n in 1..=n_steps {
        state
            .par_iter_mut()
            .zip(grid.systems.par_iter())
            .for_each(|(u, sys)| *u = scheme_step_modal(u, sys, dt));
        let envelope = (n as f64 * dt.abs() * params.zeta_j).exp() * initial;
        if envelope > 0.0 {
            worst = worst.max(modal_norm(&state) / envelope);
        }
    }
    Lemma2Report {
        max_step_norm,
        step_cap,
        worst_envelope_ratio: worst,
        steps: n_steps,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundRow {
    pub step: usize,
    pub time: f64,
    pub error: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SupNorms {
    pub pw: f64,
    pub pgw: f64,
    pub g2w: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TheoremReport {
    pub direction: Direction,
    pub delta: f64,
    pub sup: SupNorms,
    pub k5: f64,
    pub rows: Vec<BoundRow>,
    pub violations: usize,
    pub first_violation: Option<BoundRow>,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// `step,ER_norm,bound_value,margin`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,ER_norm,bound_value,margin")?;
        for r in &self.rows {
            writeln!(out, "{},{:e},{:e},{:e}", r.step, r.error, r.bound, r.margin)?;
        }
        Ok(())
    }
}

/// Right-hand side of the forward/backward error bounds at elapsed marching
/// time `tau`: `delta e^{tau zJ} + omega (e^{tau zJ} - 1)/zJ |||PW|||
/// + (e^{tau zJ} - 1)/zJ (omega |dt| |||PGW||| + |dt|/2 |||G^2W|||)`.
pub fn error_bound(params: &SchemeParams, delta: f64, tau: f64, sup: &SupNorms) -> f64 {
    let zj = params.zeta_j;
    let h = params.dt_abs();
    let growth = (tau * zj).exp();
    let ramp = (tau * zj).exp_m1() / zj;
    delta * growth + params.omega * ramp * sup.pw + ramp * (params.omega * h * sup.pgw + 0.5 * h * sup.g2w)
}

const CHUNKS: usize = 64;

/// Relative rounding allowance when comparing an error with its bound.
pub const BOUND_RTOL: f64 = 1e-12;

type ChunkSums = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Runs the scheme against the exact solution on every mode of `grid`.
///
/// `w0` is the exact solution at `t = 0`. Forward: the scheme starts from
/// `w0 + perturb` and is compared at `t = n |dt|`. Backward: the scheme starts
/// from `W(T_max) + perturb` and is compared at `s = T_max - n |dt|`. The sup
/// norms over `[0, T_max]` are the maxima over step times and midpoints.
pub fn verify_theorem_bounds(
    params: &SchemeParams,
    grid: &ModalGrid,
    w0: &[Vec3],
    perturb: &[Vec3],
    direction: Direction,
) -> TheoremReport {
    assert_eq!(w0.len(), grid.len());
    assert_eq!(perturb.len(), grid.len());
    let n = params.n_steps;
    let h = params.dt_abs();
    let samples = 2 * n + 1;
    let dt = direction.sign() * h;
    let pw_exp = params.p;

    // fixed chunking keeps the reductions in a deterministic order
    let chunk_len = grid.len().div_ceil(CHUNKS).max(1);
    let partials: Vec<ChunkSums> = grid
        .systems
        .par_chunks(chunk_len)
        .enumerate()
        .map(|(c, systems)| {
            let mut pw = vec![0.0; samples];
            let mut pgw = vec![0.0; samples];
            let mut g2w = vec![0.0; samples];
            let mut err = vec![0.0; n + 1];
            let mut exact = vec![[0.0; 3]; samples];
            for (offset, sys) in systems.iter().enumerate() {
                let idx = c * chunk_len + offset;
                let half = sys.propagator(0.5 * h);
                let g2 = mat_mul(&sys.g, &sys.g);
                let weight = sys.zeta.powf(pw_exp);
                exact[0] = w0[idx];
                for k in 1..samples {
                    exact[k] = mat_vec(&half, &exact[k - 1]);
                }
                for (k, w) in exact.iter().enumerate() {
                    let gw = mat_vec(&sys.g, w);
                    pw[k] += weight * weight * norm_sq(w);
                    pgw[k] += weight * weight * norm_sq(&gw);
                    g2w[k] += norm_sq(&mat_vec(&g2, w));
                }
                let reference = |step: usize| match direction {
                    Direction::Forward => exact[2 * step],
                    Direction::Backward => exact[2 * (n - step)],
                };
                let start = reference(0);
                let mut u = [start[0] + perturb[idx][0], start[1] + perturb[idx][1], start[2] + perturb[idx][2]];
                err[0] += norm_sq(&vec_sub(&u, &start));
                for (step, e) in err.iter_mut().enumerate().skip(1) {
                    u = scheme_step_modal(&u, sys, dt);
                    *e += norm_sq(&vec_sub(&u, &reference(step)));
                }
            }
            (pw, pgw, g2w, err)
        })
        .collect();

    let mut pw = vec![0.0; samples];
    let mut pgw = vec![0.0; samples];
    let mut g2w = vec![0.0; samples];
    let mut err = vec![0.0; n + 1];
    for (a, b, c, e) in &partials {
        for k in 0..samples {
            pw[k] += a[k];
            pgw[k] += b[k];
            g2w[k] += c[k];
        }
        for k in 0..=n {
            err[k] += e[k];
        }
    }
    let sup_of = |v: &[f64]| v.iter().fold(0.0f64, |acc, &x| acc.max(x)).sqrt();
    let sup = SupNorms {
        pw: sup_of(&pw),
        pgw: sup_of(&pgw),
        g2w: sup_of(&g2w),
    };
    let delta = modal_norm(perturb);
    let rows: Vec<BoundRow> = (0..=n)
        .map(|step| {
            let error = err[step].sqrt();
            let bound = error_bound(params, delta, step as f64 * h, &sup);
            BoundRow {
                step,
                time: match direction {
                    Direction::Forward => step as f64 * h,
                    Direction::Backward => params.t_max - step as f64 * h,
                },
                error,
                bound,
                margin: bound - error,
            }
        })
        .collect();
    let violations: Vec<&BoundRow> = rows
        .iter()
        .filter(|r| !(r.error <= r.bound * (1.0 + BOUND_RTOL)))
        .collect();
    let constants = params.compute_constants();
    TheoremReport {
        direction,
        delta,
        sup,
        k5: constants.k5(sup.pw, sup.pgw, sup.g2w),
        violations: violations.len(),
        first_violation: violations.first().map(|r| **r),
        rows,
    }
}

/// `K5` from the three sup norms.
pub fn compute_k5(constants: &BoundConstants, sup: &SupNorms) -> f64 {
    constants.k5(sup.pw, sup.pgw, sup.g2w)
}
