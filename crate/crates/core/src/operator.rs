//! The elliptic-advective operator `L` and the block operator `G`.
//!
//! `L z = -kappa s(z_lag) div(q grad z) - c (z_x + z_y)` with
//! `s(z) = exp(gain z)` and `q(x, y) = 1 + amp sin(pi x) sin(pi y)`. The
//! divergence uses the 5-point flux form with `q` averaged onto cell edges;
//! first derivatives are centered. By default only the scalar factor `s` is
//! lagged; [`LagMode::Full`] also differences the lagged level.

use ndarray::{Array2, Axis, Zip};
use rayon::prelude::*;

use crate::domain::{DomainMask, Grid2D};
use crate::error::{Error, Result};
use crate::params::SchemeParams;
use crate::Field;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub enum LagMode {
    /// `s(z_lag) div(q grad z)`.
    #[default]
    Coefficient,
    /// `L` evaluated entirely at the lagged level.
    Full,
}

/// Coefficients of `L`, with `q` tabulated at nodes and edge midpoints.
#[derive(Clone, Debug)]
pub struct OperatorCoefficients {
    pub kappa: f64,
    pub advection: f64,
    pub s_gain: f64,
    pub q_amplitude: f64,
    pub lag_mode: LagMode,
    grid: Grid2D,
    q_node: Field,
    /// `q` at `(i + 1/2, j)`, shape `(n, n + 1)`.
    q_half_x: Field,
    /// `q` at `(i, j + 1/2)`, shape `(n + 1, n)`.
    q_half_y: Field,
}

impl OperatorCoefficients {
    pub fn new(grid: Grid2D, kappa: f64, advection: f64, s_gain: f64, q_amplitude: f64) -> Self {
        use std::f64::consts::PI;
        let q_node = grid.sample(|x, y| 1.0 + q_amplitude * (PI * x).sin() * (PI * y).sin());
        let n = grid.n();
        let q_half_x = Array2::from_shape_fn((n, n + 1), |(i, j)| 0.5 * (q_node[[i, j]] + q_node[[i + 1, j]]));
        let q_half_y = Array2::from_shape_fn((n + 1, n), |(i, j)| 0.5 * (q_node[[i, j]] + q_node[[i, j + 1]]));
        OperatorCoefficients {
            kappa,
            advection,
            s_gain,
            q_amplitude,
            lag_mode: LagMode::Coefficient,
            grid,
            q_node,
            q_half_x,
            q_half_y,
        }
    }

    /// `kappa = 0.00085`, advection `2.75`, `s(z) = exp(0.005 z)`,
    /// `q = 1 + 2 sin(pi x) sin(pi y)`.
    pub fn nonlinear(grid: Grid2D) -> Self {
        Self::new(grid, 0.00085, 2.75, 0.005, 2.0)
    }

    /// `L = -Delta_h`: unit diffusion, no advection, no nonlinearity, `q = 1`.
    pub fn linear(grid: Grid2D) -> Self {
        Self::new(grid, 1.0, 0.0, 0.0, 0.0)
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn q_node(&self) -> &Field {
        &self.q_node
    }

    /// Eigenvalue of `L` on `sin(j pi x) sin(k pi y)` in the linear
    /// configuration: `kappa (4 / dx^2) (sin^2(j pi dx / 2) + sin^2(k pi dx / 2))`.
    pub fn discrete_eigenvalue(&self, j: usize, k: usize) -> f64 {
        discrete_laplacian_eigenvalue(self.grid, j, k) * self.kappa
    }
}

/// Eigenvalue of the 5-point negative Laplacian for mode `(j, k)`.
pub fn discrete_laplacian_eigenvalue(grid: Grid2D, j: usize, k: usize) -> f64 {
    let h = grid.dx();
    let sx = (j as f64 * std::f64::consts::PI * h / 2.0).sin();
    let sy = (k as f64 * std::f64::consts::PI * h / 2.0).sin();
    4.0 / (h * h) * (sx * sx + sy * sy)
}

/// Temperature `u`, wave velocity `v` and wave displacement `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateField {
    pub u: Field,
    pub v: Field,
    pub w: Field,
}

impl StateField {
    pub fn new(u: Field, v: Field, w: Field) -> Self {
        assert_eq!(u.dim(), v.dim());
        assert_eq!(u.dim(), w.dim());
        StateField { u, v, w }
    }

    pub fn zeros(grid: Grid2D) -> Self {
        StateField::new(grid.zeros(), grid.zeros(), grid.zeros())
    }

    pub fn components(&self) -> [&Field; 3] {
        [&self.u, &self.v, &self.w]
    }

    pub fn map(&self, mut f: impl FnMut(&Field) -> Field) -> StateField {
        StateField::new(f(&self.u), f(&self.v), f(&self.w))
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &StateField) -> StateField {
        let comb = |x: &Field, y: &Field| {
            let mut out = x.clone();
            out.scaled_add(alpha, y);
            out
        };
        StateField::new(comb(&self.u, &other.u), comb(&self.v, &other.v), comb(&self.w, &other.w))
    }

    pub fn scale(&self, alpha: f64) -> StateField {
        self.map(|f| f * alpha)
    }

    /// Per-component discrete L2 norms `sqrt(dx^2 sum z^2)`.
    pub fn norms(&self, dx: f64) -> [f64; 3] {
        self.components().map(|f| (crate::sum_squares(f) * dx * dx).sqrt())
    }

    /// `||W|| = sqrt(||u||^2 + ||v||^2 + ||w||^2)`.
    pub fn norm(&self, dx: f64) -> f64 {
        self.norms(dx).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        self.components()
            .into_iter()
            .map(crate::max_abs)
            .fold(0.0, |acc: f64, x| if x.is_nan() { f64::NAN } else { acc.max(x) })
    }
}

fn check_finite(field: &Field, what: &'static str) -> Result<()> {
    if field.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Applies `L` to `z` with `s` evaluated at `z_lag`; zero off the interior.
pub fn apply_l(z: &Field, z_lag: &Field, coeffs: &OperatorCoefficients, mask: &DomainMask) -> Result<Field> {
    let grid = mask.grid();
    assert_eq!(z.dim(), grid.shape());
    assert_eq!(z_lag.dim(), grid.shape());
    assert_eq!(coeffs.grid, grid, "coefficients built for another grid");
    check_finite(z, "apply_l input")?;
    check_finite(z_lag, "apply_l lagged input")?;

    let n = grid.n();
    let h = grid.dx();
    let inv_h2 = 1.0 / (h * h);
    let inv_2h = 0.5 / h;
    let (qx, qy) = (&coeffs.q_half_x, &coeffs.q_half_y);
    let mut out = grid.zeros();
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            if i == 0 || i == n {
                return;
            }
            for j in 1..n {
                if !mask.is_interior(i, j) {
                    continue;
                }
                let c = z[[i, j]];
                let flux = qx[[i, j]] * (z[[i + 1, j]] - c) - qx[[i - 1, j]] * (c - z[[i - 1, j]])
                    + qy[[i, j]] * (z[[i, j + 1]] - c)
                    - qy[[i, j - 1]] * (c - z[[i, j - 1]]);
                let s = (coeffs.s_gain * z_lag[[i, j]]).exp();
                let zx = (z[[i + 1, j]] - z[[i - 1, j]]) * inv_2h;
                let zy = (z[[i, j + 1]] - z[[i, j - 1]]) * inv_2h;
                row[j] = -coeffs.kappa * s * flux * inv_h2 - coeffs.advection * (zx + zy);
            }
        });
    Ok(out)
}

/// `G W = (-b L u - d v, a L u - a L w, v)` with `L u` lagged on `u_lag`
/// and `L w` on `w_lag`, as selected by `coeffs.lag_mode`.
pub fn apply_g(
    state: &StateField,
    lag: &StateField,
    params: &SchemeParams,
    coeffs: &OperatorCoefficients,
    mask: &DomainMask,
) -> Result<StateField> {
    let (u, w) = match coeffs.lag_mode {
        LagMode::Coefficient => (&state.u, &state.w),
        LagMode::Full => (&lag.u, &lag.w),
    };
    let lu = apply_l(u, &lag.u, coeffs, mask)?;
    let lw = apply_l(w, &lag.w, coeffs, mask)?;
    let (a, b, d) = (params.a, params.b, params.d);
    let mut gu = mask.grid().zeros();
    Zip::from(&mut gu)
        .and(&lu)
        .and(&state.v)
        .for_each(|o, &l, &v| *o = -b * l - d * v);
    mask.zero_outside(&mut gu);
    let mut gv = mask.grid().zeros();
    Zip::from(&mut gv).and(&lu).and(&lw).for_each(|o, &l1, &l2| *o = a * l1 - a * l2);
    let gw = crate::domain::extend_by_zero(&state.v, mask);
    Ok(StateField::new(gu, gv, gw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainKind;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn square(n: usize) -> DomainMask {
        DomainMask::full_square(Grid2D::new(n).unwrap())
    }

    fn quarter(n: usize) -> DomainMask {
        DomainMask::build(Grid2D::new(n).unwrap(), DomainKind::QuarterCircle)
    }

    fn interior_field(mask: &DomainMask, f: impl Fn(f64, f64) -> f64) -> Field {
        let mut z = mask.grid().sample(f);
        mask.zero_outside(&mut z);
        z
    }

    fn inner(a: &Field, b: &Field) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn q_field_range() {
        let c = OperatorCoefficients::nonlinear(Grid2D::new(64).unwrap());
        let q = c.q_node();
        for ((i, j), &v) in q.indexed_iter() {
            if i > 0 && j > 0 && i < 64 && j < 64 {
                assert!(v > 1.0 && v <= 3.0);
            }
        }
        assert_relative_eq!(q[[32, 32]], 3.0, max_relative = 1e-15);
    }

    #[test]
    fn zero_field_maps_to_zero() {
        let m = quarter(64);
        let c = OperatorCoefficients::nonlinear(m.grid());
        let z = m.grid().zeros();
        assert!(apply_l(&z, &z, &c, &m).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_profile_sees_only_advection() {
        // z = x, q constant, s = 1: the flux difference of a linear profile
        // vanishes and the advection term is -2.75 * (1 + 0)
        let m = square(64);
        let c = OperatorCoefficients::new(m.grid(), 0.00085, 2.75, 0.0, 0.0);
        let z = m.grid().sample(|x, _| x);
        let lz = apply_l(&z, &z, &c, &m).unwrap();
        for i in 2..63 {
            for j in 2..63 {
                assert!((lz[[i, j]] + 2.75).abs() < 1e-9, "({i},{j}) -> {}", lz[[i, j]]);
            }
        }
    }

    #[test]
    fn eigenmode_scaled_by_discrete_eigenvalue() {
        let m = square(128);
        let c = OperatorCoefficients::new(m.grid(), 0.00085, 0.0, 0.0, 0.0);
        let z = interior_field(&m, |x, y| (PI * x).sin() * (PI * y).sin());
        let lz = apply_l(&z, &z, &c, &m).unwrap();
        let h = m.grid().dx();
        let mu = 0.00085 * 2.0 * 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        assert_relative_eq!(mu, c.discrete_eigenvalue(1, 1), max_relative = 1e-14);
        for (a, b) in lz.iter().zip(z.iter()) {
            assert!((a - mu * b).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let m = square(16);
        let c = OperatorCoefficients::linear(m.grid());
        let mut z = m.grid().zeros();
        z[[3, 3]] = f64::NAN;
        assert!(matches!(apply_l(&z, &m.grid().zeros(), &c, &m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn diffusion_part_is_symmetric_and_nonnegative() {
        let m = quarter(64);
        let c = OperatorCoefficients::new(m.grid(), 0.00085, 0.0, 0.0, 2.0);
        let z1 = interior_field(&m, |x, y| (7.0 * x * y).sin() + x * x);
        let z2 = interior_field(&m, |x, y| (3.0 * x - 5.0 * y).cos());
        let l1 = apply_l(&z1, &z1, &c, &m).unwrap();
        let l2 = apply_l(&z2, &z2, &c, &m).unwrap();
        let (a, b) = (inner(&l1, &z2), inner(&z1, &l2));
        assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()));
        assert!(inner(&l1, &z1) >= 0.0);

        // with advection on, the diffusion contribution alone stays >= 0
        let with_adv = OperatorCoefficients::new(m.grid(), 0.00085, 2.75, 0.0, 2.0);
        let full = apply_l(&z1, &z1, &with_adv, &m).unwrap();
        let adv_only = OperatorCoefficients::new(m.grid(), 0.0, 2.75, 0.0, 2.0);
        let adv = apply_l(&z1, &z1, &adv_only, &m).unwrap();
        assert!(inner(&(&full - &adv), &z1) >= 0.0);
    }

    #[test]
    fn output_zero_off_interior() {
        let m = quarter(64);
        let c = OperatorCoefficients::nonlinear(m.grid());
        let z = m.grid().sample(|x, y| 100.0 * (x + y));
        let lz = apply_l(&z, &z, &c, &m).unwrap();
        for ((i, j), &v) in lz.indexed_iter() {
            if !m.is_interior(i, j) {
                assert_eq!(v, 0.0);
            }
        }
    }

    fn setup() -> (DomainMask, OperatorCoefficients, SchemeParams) {
        let m = quarter(48);
        let c = OperatorCoefficients::nonlinear(m.grid());
        (m, c, SchemeParams::reference())
    }

    #[test]
    fn g_of_zero_and_velocity_only() {
        let (m, c, p) = setup();
        let zero = StateField::zeros(m.grid());
        let gz = apply_g(&zero, &zero, &p, &c, &m).unwrap();
        assert_eq!(gz, zero);

        let g = interior_field(&m, |x, y| 50.0 * (x - y));
        let state = StateField::new(m.grid().zeros(), g.clone(), m.grid().zeros());
        let out = apply_g(&state, &state, &p, &c, &m).unwrap();
        assert_eq!(out.u, &g * -p.d);
        assert!(out.v.iter().all(|&x| x == 0.0));
        assert_eq!(out.w, g);
    }

    #[test]
    fn equal_u_and_w_cancel_exactly() {
        let (m, c, p) = setup();
        let f = interior_field(&m, |x, y| 200.0 * (9.0 * x).sin() * (4.0 * y).cos());
        let v = interior_field(&m, |x, _| x);
        let state = StateField::new(f.clone(), v, f.clone());
        let out = apply_g(&state, &state, &p, &c, &m).unwrap();
        assert!(out.v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn g_linear_for_fixed_lag() {
        let (m, c, p) = setup();
        let f1 = StateField::new(
            interior_field(&m, |x, y| (5.0 * x + y).sin()),
            interior_field(&m, |x, y| x * y),
            interior_field(&m, |x, y| (2.0 * y).cos() * x),
        );
        let f2 = f1.map(|f| f.mapv(|v| v * v - 0.3));
        let lag = f1.map(|f| f * 80.0);
        let (alpha, beta) = (1.7, -0.45);
        let lhs = apply_g(&f1.scale(alpha).axpy(beta, &f2), &lag, &p, &c, &m).unwrap();
        let g1 = apply_g(&f1, &lag, &p, &c, &m).unwrap();
        let g2 = apply_g(&f2, &lag, &p, &c, &m).unwrap();
        let rhs = g1.scale(alpha).axpy(beta, &g2);
        for (a, b) in lhs.components().iter().zip(rhs.components()) {
            let scale = crate::max_abs(b).max(1.0);
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn full_lag_differences_the_lagged_level() {
        let (m, mut c, p) = setup();
        let current = StateField::new(
            interior_field(&m, |x, y| 40.0 * (3.0 * x).sin() * y),
            interior_field(&m, |x, _| x),
            interior_field(&m, |x, y| 25.0 * x * y),
        );
        let lag = current.map(|f| f * 1.1 + 2.0);
        let lag = lag.map(|f| {
            let mut f = f.clone();
            m.zero_outside(&mut f);
            f
        });
        c.lag_mode = LagMode::Full;
        let full = apply_g(&current, &lag, &p, &c, &m).unwrap();
        c.lag_mode = LagMode::Coefficient;
        let at_lag = apply_g(&StateField::new(lag.u.clone(), current.v.clone(), lag.w.clone()), &lag, &p, &c, &m).unwrap();
        assert_eq!(full, at_lag);
        assert_ne!(full, apply_g(&current, &lag, &p, &c, &m).unwrap());
    }
}
