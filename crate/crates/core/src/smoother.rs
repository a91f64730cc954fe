//! Laplacian smoothing `Q = exp(-eps |dt| Gamma^q)`, `Gamma = rho (I - Delta)`,
//! synthesized on the unit square with 2D type-I discrete sine transforms.

use std::io::Write;
use std::sync::Arc;

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;
use rustdct::{Dst1, DctPlanner};

use crate::domain::Grid2D;
use crate::error::{Error, Result};
use crate::operator::{discrete_laplacian_eigenvalue, StateField};
use crate::Field;

/// Largest exponent kept before the multiplier is flushed to zero.
const EXPONENT_CUTOFF: f64 = 745.0;

/// Eigenvalues of `-Delta` used to build the table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EigenvalueMode {
    /// `pi^2 (j^2 + k^2)`.
    #[default]
    Continuous,
    /// Eigenvalues of the 5-point stencil on the grid.
    Discrete,
}

/// Per-mode damping factors for modes `1 <= j, k <= n - 1`.
#[derive(Clone)]
pub struct SpectralMultiplierTable {
    grid: Grid2D,
    /// `mult[[j - 1, k - 1]]`, `j` the x-mode and `k` the y-mode.
    mult: Array2<f64>,
    pub eps: f64,
    pub q_exp: f64,
    pub dt_abs: f64,
    pub rho: f64,
    pub mode: EigenvalueMode,
    dst: Arc<dyn Dst1<f64>>,
}

impl std::fmt::Debug for SpectralMultiplierTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralMultiplierTable")
            .field("n", &self.grid.n())
            .field("eps", &self.eps)
            .field("q_exp", &self.q_exp)
            .field("dt_abs", &self.dt_abs)
            .field("rho", &self.rho)
            .field("mode", &self.mode)
            .finish()
    }
}

fn plan(grid: Grid2D) -> Arc<dyn Dst1<f64>> {
    DctPlanner::new().plan_dst1(grid.n() - 1)
}

/// `exp(-eps |dt| (rho (1 + lambda))^q)`, zero once the exponent passes the
/// underflow cutoff.
pub fn multiplier(lambda: f64, eps: f64, q_exp: f64, dt_abs: f64, rho: f64) -> f64 {
    let exponent = eps * dt_abs * (rho * (1.0 + lambda)).powf(q_exp);
    if exponent > EXPONENT_CUTOFF || !exponent.is_finite() {
        0.0
    } else {
        (-exponent).exp()
    }
}

/// Continuous Dirichlet eigenvalue `pi^2 (j^2 + k^2)` of `-Delta` on the unit square.
pub fn continuous_eigenvalue(j: usize, k: usize) -> f64 {
    std::f64::consts::PI.powi(2) * ((j * j + k * k) as f64)
}

impl SpectralMultiplierTable {
    pub fn build(grid: Grid2D, eps: f64, q_exp: f64, dt: f64, rho: f64) -> Result<Self> {
        Self::build_with_mode(grid, eps, q_exp, dt, rho, EigenvalueMode::Continuous)
    }

    pub fn build_with_mode(
        grid: Grid2D,
        eps: f64,
        q_exp: f64,
        dt: f64,
        rho: f64,
        mode: EigenvalueMode,
    ) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::param("eps", format!("must be positive, got {eps}")));
        }
        if !(q_exp > 1.0) {
            return Err(Error::param("q", format!("must exceed 1, got {q_exp}")));
        }
        if dt == 0.0 || !dt.is_finite() {
            return Err(Error::param("dt", "must be finite and nonzero"));
        }
        if !(rho >= 1.0) {
            return Err(Error::param("rho", format!("must be >= 1, got {rho}")));
        }
        let m = grid.n() - 1;
        let dt_abs = dt.abs();
        let mult = Array2::from_shape_fn((m, m), |(j, k)| {
            let lambda = match mode {
                EigenvalueMode::Continuous => continuous_eigenvalue(j + 1, k + 1),
                EigenvalueMode::Discrete => discrete_laplacian_eigenvalue(grid, j + 1, k + 1),
            };
            multiplier(lambda, eps, q_exp, dt_abs, rho)
        });
        Ok(SpectralMultiplierTable {
            grid,
            mult,
            eps,
            q_exp,
            dt_abs,
            rho,
            mode,
            dst: plan(grid),
        })
    }

    /// All multipliers 1: the smoother reduces to a transform round trip.
    pub fn identity(grid: Grid2D) -> Self {
        let m = grid.n() - 1;
        SpectralMultiplierTable {
            grid,
            mult: Array2::ones((m, m)),
            eps: 0.0,
            q_exp: 1.0,
            dt_abs: 0.0,
            rho: 1.0,
            mode: EigenvalueMode::Continuous,
            dst: plan(grid),
        }
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    /// Multiplier of mode `(j, k)`, both 1-based.
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.mult[[j - 1, k - 1]]
    }

    pub fn multipliers(&self) -> &Array2<f64> {
        &self.mult
    }

    /// Writes `j,k,multiplier` rows for modes `1..=limit` in each direction.
    pub fn write_csv<W: Write>(&self, mut out: W, limit: usize) -> std::io::Result<()> {
        let limit = limit.min(self.grid.n() - 1);
        writeln!(out, "j,k,multiplier")?;
        for j in 1..=limit {
            for k in 1..=limit {
                writeln!(out, "{j},{k},{:e}", self.get(j, k))?;
            }
        }
        Ok(())
    }

    /// Sine-transform coefficients of the interior block, transposed:
    /// entry `[k - 1, j - 1]` belongs to mode `(j, k)`.
    fn forward(&self, field: &Field) -> Array2<f64> {
        let n = self.grid.n();
        let mut block = field.slice(s![1..n, 1..n]).to_owned();
        self.rows(&mut block);
        let mut block = block.t().as_standard_layout().into_owned();
        self.rows(&mut block);
        block
    }

    fn rows(&self, block: &mut Array2<f64>) {
        let len = self.dst.len();
        let scratch_len = self.dst.get_scratch_len();
        block
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .for_each_init(
                || (vec![0.0; len], vec![0.0; scratch_len]),
                |(buf, scratch), mut row| {
                    for (b, &v) in buf.iter_mut().zip(row.iter()) {
                        *b = v;
                    }
                    self.dst.process_dst1_with_scratch(buf, scratch);
                    for (v, &b) in row.iter_mut().zip(buf.iter()) {
                        *v = b;
                    }
                },
            );
    }

    /// Applies the smoother to a field on the square.
    ///
    /// Values on the edge of the square are ignored; the result is zero there.
    pub fn apply(&self, field: &Field) -> Result<Field> {
        assert_eq!(field.dim(), self.grid.shape(), "field does not match the table grid");
        if !field.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("smoother input"));
        }
        let n = self.grid.n();
        let mut coeffs = self.forward(field);
        // DST-I applied twice is ((N + 1) / 2) times the identity, per axis
        let norm = (2.0 / n as f64).powi(2);
        let mt = self.mult.t();
        ndarray::Zip::from(&mut coeffs).and(&mt).for_each(|c, &m| *c *= m * norm);
        self.rows(&mut coeffs);
        let mut block = coeffs.t().as_standard_layout().into_owned();
        self.rows(&mut block);
        let mut out = self.grid.zeros();
        out.slice_mut(s![1..n, 1..n]).assign(&block);
        Ok(out)
    }

    /// Block-diagonal smoothing of all three components.
    pub fn apply_state(&self, state: &StateField) -> Result<StateField> {
        Ok(StateField::new(
            self.apply(&state.u)?,
            self.apply(&state.v)?,
            self.apply(&state.w)?,
        ))
    }
}
