//! Scheme parameters, derived constants and the constants of the error bounds.

use crate::error::{Error, Result};

/// Short assimilation horizon, 1200 reference steps.
pub const T_MAX_SHORT: f64 = 1.6e-4;
/// Long assimilation horizon, five times the short one.
pub const T_MAX_LONG: f64 = 8.0e-4;
/// Magnitude of the reference time step, 4/3 x 10^-7.
pub const DT_REFERENCE: f64 = 4.0e-7 / 3.0;

/// `rho = 1 + d + d^2 + 2a^2 + 2b + sqrt(2a^2 + 2b^2)`.
pub fn compute_rho(a: f64, b: f64, d: f64) -> Result<f64> {
    for (name, value) in [("a", a), ("b", b), ("d", d)] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::param(name, format!("must be positive, got {value}")));
        }
    }
    Ok(1.0 + d + d * d + 2.0 * a * a + 2.0 * b + (2.0 * a * a + 2.0 * b * b).sqrt())
}

/// Per-mode damping factor `exp(-omega |dt| zeta^p)`.
pub fn smoothing_factor(zeta_m: f64, omega: f64, dt: f64, p: f64) -> Result<f64> {
    if !(zeta_m > 0.0) {
        return Err(Error::param("zeta_m", format!("must be positive, got {zeta_m}")));
    }
    if !(omega > 0.0) {
        return Err(Error::param("omega", format!("must be positive, got {omega}")));
    }
    if !(p > 1.0) {
        return Err(Error::param("p", format!("must exceed 1, got {p}")));
    }
    Ok((-omega * dt.abs() * zeta_m.powf(p)).exp())
}

/// Unresolved parameter set as read from a configuration file.
///
/// `omega` defaults to `zeta_J^(1-p)` and `rho` to [`compute_rho`]; both may
/// be overridden.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub p: f64,
    pub omega: Option<f64>,
    pub zeta_j: f64,
    pub eps: f64,
    pub q_exp: f64,
    pub dt: f64,
    pub t_max: f64,
    pub rho: Option<f64>,
}

impl Default for ParamSet {
    /// a=6, b=5, d=0.95, p=q=3.35, omega=eps=8e-11, zeta_J=19800,
    /// dt=-4/3e-7, T_max=1.6e-4.
    fn default() -> Self {
        ParamSet {
            a: 6.0,
            b: 5.0,
            d: 0.95,
            p: 3.35,
            omega: Some(8.0e-11),
            zeta_j: 19800.0,
            eps: 8.0e-11,
            q_exp: 3.35,
            dt: -DT_REFERENCE,
            t_max: T_MAX_SHORT,
            rho: None,
        }
    }
}

impl ParamSet {
    pub fn resolve(&self) -> Result<SchemeParams> {
        let rho_formula = compute_rho(self.a, self.b, self.d)?;
        check_gt("p", self.p, 1.0)?;
        check_gt("zeta_J", self.zeta_j, 1.0)?;
        check_gt("eps", self.eps, 0.0)?;
        check_gt("q", self.q_exp, 1.0)?;
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            return Err(Error::param("t_max", format!("must be finite and >= 0, got {}", self.t_max)));
        }
        if self.dt == 0.0 || !self.dt.is_finite() {
            return Err(Error::param("dt", "must be finite and nonzero"));
        }
        let omega = match self.omega {
            Some(omega) => {
                check_gt("omega", omega, 0.0)?;
                omega
            }
            None => self.zeta_j.powf(1.0 - self.p),
        };
        let rho = match self.rho {
            Some(rho) => {
                if !(rho >= 1.0) || !rho.is_finite() {
                    return Err(Error::param("rho", format!("must be >= 1, got {rho}")));
                }
                rho
            }
            None => rho_formula,
        };
        let n_steps = step_count(self.t_max, self.dt)?;
        Ok(SchemeParams {
            a: self.a,
            b: self.b,
            d: self.d,
            p: self.p,
            omega,
            zeta_j: self.zeta_j,
            dt: self.dt,
            t_max: self.t_max,
            n_steps,
            eps: self.eps,
            q_exp: self.q_exp,
            rho,
        })
    }
}

fn check_gt(name: &'static str, value: f64, bound: f64) -> Result<()> {
    if value > bound && value.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must exceed {bound}, got {value}")))
    }
}

/// `N = T_max / |dt|`, required to be an integer to within 1 part in 10^9.
fn step_count(t_max: f64, dt: f64) -> Result<usize> {
    if t_max == 0.0 {
        return Ok(0);
    }
    let ratio = t_max / dt.abs();
    let n = ratio.round();
    if n < 1.0 || ((n * dt.abs() - t_max) / t_max).abs() > 1e-9 {
        return Err(Error::param(
            "t_max",
            format!("T_max / |dt| = {ratio} is not a positive integer"),
        ));
    }
    Ok(n as usize)
}

/// Resolved, validated scheme parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeParams {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub p: f64,
    pub omega: f64,
    pub zeta_j: f64,
    /// Signed step; negative marches backward.
    pub dt: f64,
    pub t_max: f64,
    pub n_steps: usize,
    pub eps: f64,
    pub q_exp: f64,
    pub rho: f64,
}

impl SchemeParams {
    /// The default [`ParamSet`], resolved.
    pub fn reference() -> Self {
        ParamSet::default()
            .resolve()
            .expect("reference parameters are valid")
    }

    pub fn dt_abs(&self) -> f64 {
        self.dt.abs()
    }

    /// Same parameters with a new horizon; the step count is recomputed.
    pub fn with_t_max(&self, t_max: f64) -> Result<Self> {
        check_gt("t_max", t_max, 0.0)?;
        Ok(SchemeParams {
            t_max,
            n_steps: step_count(t_max, self.dt)?,
            ..self.clone()
        })
    }

    /// Same horizon, `|dt|` divided by `factor` and the step count multiplied.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let dt = self.dt / factor as f64;
        Ok(SchemeParams {
            dt,
            n_steps: step_count(self.t_max, dt)?,
            ..self.clone()
        })
    }

    /// `zeta_J^(1-p)`, the smallest `omega` admitted by the Lemma 1 hypothesis.
    pub fn omega_floor(&self) -> f64 {
        self.zeta_j.powf(1.0 - self.p)
    }

    pub fn compute_constants(&self) -> BoundConstants {
        BoundConstants::evaluate(self.zeta_j, self.omega, self.dt, self.t_max)
    }
}

/// Constants `K1..K4` of the forward/backward error bounds; `K5` depends on
/// the solution and is evaluated by [`BoundConstants::k5`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    /// `1 + K1^2`, the factor multiplying the data error over a round trip.
    pub delta_amplification: f64,
}

impl BoundConstants {
    pub fn evaluate(zeta_j: f64, omega: f64, dt: f64, t_max: f64) -> Self {
        let k1 = (zeta_j * t_max).exp();
        // exp_m1 keeps K2 exact at small horizons
        let k2 = omega * (zeta_j * t_max).exp_m1() / zeta_j;
        let k3 = dt.abs() * k2;
        let k4 = k3 / (2.0 * omega);
        BoundConstants {
            k1,
            k2,
            k3,
            k4,
            delta_amplification: 1.0 + k1 * k1,
        }
    }

    /// `K5 = K2 |||PW||| + K3 |||PGW||| + K4 |||G^2 W|||`.
    pub fn k5(&self, sup_pw: f64, sup_pgw: f64, sup_g2w: f64) -> f64 {
        self.k2 * sup_pw + self.k3 * sup_pgw + self.k4 * sup_g2w
    }

    /// Right-hand side of the round-trip bound `delta (1 + K1^2) + K5 (1 + K1)`.
    pub fn roundtrip_bound(&self, delta: f64, k5: f64) -> f64 {
        delta * self.delta_amplification + k5 * (1.0 + self.k1)
    }
}

/// Formats with three significant digits.
pub fn sig3(x: f64) -> String {
    format!("{x:.2e}")
}
