//! Stabilized explicit marching `U^{m+1} = S (I + dt G) U^m`.
//!
//! Each step applies `I + dt G` on the region, extends the result by zero
//! to the square, smooths every component with the sine-transform smoother
//! and keeps only the region values. `dt < 0` marches backward.

use serde::Serialize;

use crate::domain::{extend_by_zero, restrict_to_region, DomainMask, Grid2D};
use crate::error::{Error, Result};
use crate::imaging::{l1_norm, l1_relative_error};
use crate::operator::{apply_g, OperatorCoefficients, StateField};
use crate::params::SchemeParams;
use crate::smoother::SpectralMultiplierTable;

pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Everything fixed for the lifetime of a run: region, operator and smoother.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub mask: DomainMask,
    pub coeffs: OperatorCoefficients,
    pub table: SpectralMultiplierTable,
}

impl Discretization {
    pub fn new(mask: DomainMask, coeffs: OperatorCoefficients, table: SpectralMultiplierTable) -> Self {
        assert_eq!(mask.grid(), coeffs.grid());
        assert_eq!(mask.grid(), table.grid());
        Discretization { mask, coeffs, table }
    }

    pub fn grid(&self) -> Grid2D {
        self.mask.grid()
    }
}

#[derive(Clone, Debug)]
pub struct MarchConfig {
    pub direction: Direction,
    pub n_steps: usize,
    pub smoothing: bool,
    /// Steps between recorded norms.
    pub snapshot_stride: usize,
    /// Steps between stored field frames; `None` stores none.
    pub frame_stride: Option<usize>,
    pub blowup_threshold: f64,
}

impl MarchConfig {
    pub fn new(direction: Direction, n_steps: usize) -> Self {
        MarchConfig {
            direction,
            n_steps,
            smoothing: true,
            snapshot_stride: 1,
            frame_stride: None,
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.snapshot_stride == 0 {
            return Err(Error::param("snapshot_stride", "must be at least 1"));
        }
        if self.frame_stride == Some(0) {
            return Err(Error::param("frame_stride", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub norm_u: f64,
    pub norm_v: f64,
    pub norm_w: f64,
    pub norm_total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Blowup {
    pub step: usize,
    pub max_norm: f64,
}

#[derive(Clone, Debug)]
pub struct MarchReport {
    pub direction: Direction,
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
    /// Last state reached; on blowup, the last state below the threshold.
    pub final_state: StateField,
    pub steps_completed: usize,
    pub blowup: Option<Blowup>,
    pub frames: Vec<(usize, StateField)>,
}

impl MarchReport {
    /// Writes `step,time,norm_u,norm_v,norm_w,norm_W`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,time,norm_u,norm_v,norm_w,norm_W")?;
        for s in &self.snapshots {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e}",
                s.step, s.time, s.norm_u, s.norm_v, s.norm_w, s.norm_total
            )?;
        }
        Ok(())
    }
}

/// Binds parameters to a discretization.
#[derive(Clone, Copy, Debug)]
pub struct Marcher<'a> {
    pub params: &'a SchemeParams,
    pub disc: &'a Discretization,
}

impl<'a> Marcher<'a> {
    pub fn new(params: &'a SchemeParams, disc: &'a Discretization) -> Self {
        Marcher { params, disc }
    }

    /// One step with signed `dt`; `lag` supplies the nonlinear coefficient.
    ///
    /// Fails with [`Error::Blowup`] (step index 0, the caller renumbers) when
    /// the max-norm of the result exceeds `threshold` or is not finite.
    pub fn step(&self, state: &StateField, lag: &StateField, dt: f64, smoothing: bool, threshold: f64) -> Result<StateField> {
        let mask = &self.disc.mask;
        let g = apply_g(state, lag, self.params, &self.disc.coeffs, mask)?;
        let advanced = state.axpy(dt, &g).map(|f| extend_by_zero(f, mask));
        let raw_max = advanced.max_norm();
        if !raw_max.is_finite() {
            return Err(Error::Blowup { step: 0, max_norm: raw_max });
        }
        let next = if smoothing {
            self.disc.table.apply_state(&advanced)?.map(|f| restrict_to_region(f, mask))
        } else {
            advanced
        };
        let max_norm = next.max_norm();
        if !(max_norm <= threshold) {
            return Err(Error::Blowup { step: 0, max_norm });
        }
        Ok(next)
    }

    fn snapshot(&self, step: usize, time: f64, state: &StateField) -> Snapshot {
        let [norm_u, norm_v, norm_w] = state.norms(self.disc.grid().dx());
        Snapshot {
            step,
            time,
            norm_u,
            norm_v,
            norm_w,
            norm_total: (norm_u * norm_u + norm_v * norm_v + norm_w * norm_w).sqrt(),
        }
    }

    /// Marches `cfg.n_steps` steps from `start` at time `t0`.
    ///
    /// The lagged level starts equal to `start` and then trails the current
    /// level by one step. Blowup ends the march early with the partial
    /// history; other numeric errors propagate.
    pub fn march(&self, start: &StateField, t0: f64, cfg: &MarchConfig) -> Result<MarchReport> {
        cfg.validate()?;
        let dt = cfg.direction.sign() * self.params.dt_abs();
        let mut state = start.map(|f| restrict_to_region(f, &self.disc.mask));
        let mut lag = state.clone();
        let mut snapshots = vec![self.snapshot(0, t0, &state)];
        let mut frames = Vec::new();
        if cfg.frame_stride.is_some() {
            frames.push((0, state.clone()));
        }
        let mut blowup = None;
        let mut completed = 0;
        for m in 1..=cfg.n_steps {
            match self.step(&state, &lag, dt, cfg.smoothing, cfg.blowup_threshold) {
                Ok(next) => {
                    lag = std::mem::replace(&mut state, next);
                    completed = m;
                }
                Err(Error::Blowup { max_norm, .. }) => {
                    blowup = Some(Blowup { step: m, max_norm });
                    break;
                }
                Err(e) => return Err(e),
            }
            let time = t0 + m as f64 * dt;
            if m % cfg.snapshot_stride == 0 || m == cfg.n_steps {
                snapshots.push(self.snapshot(m, time, &state));
            }
            if let Some(stride) = cfg.frame_stride {
                if m % stride == 0 || m == cfg.n_steps {
                    frames.push((m, state.clone()));
                }
            }
        }
        Ok(MarchReport {
            direction: cfg.direction,
            dt,
            snapshots,
            final_state: state,
            steps_completed: completed,
            blowup,
            frames,
        })
    }

    /// Backward march from `target` at `T_max` to `t = 0`, then forward
    /// march from the reconstruction back to `T_max`.
    ///
    /// Signed values are kept at `t = 0`. The forward leg is skipped when the
    /// backward leg blows up.
    pub fn assimilate_roundtrip(&self, target: &StateField, smoothing: bool, snapshot_stride: usize) -> Result<Roundtrip> {
        let n = self.params.n_steps;
        let mut cfg = MarchConfig::new(Direction::Backward, n);
        cfg.smoothing = smoothing;
        cfg.snapshot_stride = snapshot_stride;
        let backward = self.march(target, self.params.t_max, &cfg)?;
        if backward.blowup.is_some() {
            return Ok(Roundtrip {
                backward,
                forward: None,
                metrics: None,
            });
        }
        cfg.direction = Direction::Forward;
        let forward = self.march(&backward.final_state, 0.0, &cfg)?;
        let metrics = if forward.blowup.is_none() {
            Some(AssimilationMetrics::compute(target, &forward.final_state, &self.disc.mask)?)
        } else {
            None
        };
        Ok(Roundtrip {
            backward,
            forward: Some(forward),
            metrics,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Roundtrip {
    pub backward: MarchReport,
    pub forward: Option<MarchReport>,
    pub metrics: Option<AssimilationMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldMetrics {
    pub field: &'static str,
    pub desired_l1: f64,
    pub evolved_l1: f64,
    /// Percent; `None` when the desired field vanishes.
    pub rel_err_pct: Option<f64>,
}

/// L1 comparison at `T_max`, rows in image order `u`, `w`, `v`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssimilationMetrics {
    pub rows: Vec<FieldMetrics>,
}

impl AssimilationMetrics {
    pub fn compute(desired: &StateField, evolved: &StateField, mask: &DomainMask) -> Result<Self> {
        let pairs = [
            ("u", &desired.u, &evolved.u),
            ("w", &desired.w, &evolved.w),
            ("v", &desired.v, &evolved.v),
        ];
        let rows = pairs
            .into_iter()
            .map(|(field, want, got)| {
                Ok(FieldMetrics {
                    field,
                    desired_l1: l1_norm(want, mask)?,
                    evolved_l1: l1_norm(got, mask)?,
                    rel_err_pct: l1_relative_error(got, want, mask),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AssimilationMetrics { rows })
    }

    pub fn get(&self, field: &str) -> Option<&FieldMetrics> {
        self.rows.iter().find(|r| r.field == field)
    }

    /// `field,desired_L1,evolved_L1,rel_err_pct`; `NA` for undefined errors.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "field,desired_L1,evolved_L1,rel_err_pct")?;
        for r in &self.rows {
            let err = r.rel_err_pct.map_or_else(|| "NA".to_string(), |e| format!("{e:.2}"));
            writeln!(out, "{},{:.2},{:.2},{}", r.field, r.desired_l1, r.evolved_l1, err)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainKind;
    use crate::modal::{scheme_step_modal, ModalSystem};
    use crate::params::DT_REFERENCE;
    use crate::Field;
    use std::f64::consts::PI;

    fn linear_square(n: usize, params: &SchemeParams) -> Discretization {
        let grid = Grid2D::new(n).unwrap();
        let table = SpectralMultiplierTable::build(grid, params.eps, params.q_exp, params.dt, params.rho).unwrap();
        Discretization::new(
            DomainMask::build(grid, DomainKind::Square),
            OperatorCoefficients::linear(grid),
            table,
        )
    }

    fn nonlinear_circle(n: usize, params: &SchemeParams) -> Discretization {
        let grid = Grid2D::new(n).unwrap();
        let table = SpectralMultiplierTable::build(grid, params.eps, params.q_exp, params.dt, params.rho).unwrap();
        Discretization::new(DomainMask::quarter_circle(grid), OperatorCoefficients::nonlinear(grid), table)
    }

    fn mode(grid: Grid2D, j: usize, k: usize) -> Field {
        grid.sample(|x, y| (j as f64 * PI * x).sin() * (k as f64 * PI * y).sin())
    }

    fn short(steps: usize) -> SchemeParams {
        SchemeParams::reference().with_t_max(steps as f64 * DT_REFERENCE).unwrap()
    }

    #[test]
    fn zero_state_stays_zero() {
        let params = short(20);
        let disc = nonlinear_circle(32, &params);
        let zero = StateField::zeros(disc.grid());
        let report = Marcher::new(&params, &disc)
            .march(&zero, params.t_max, &MarchConfig::new(Direction::Backward, 20))
            .unwrap();
        assert!(report.blowup.is_none());
        assert_eq!(report.final_state, zero);
        assert_eq!(report.snapshots.len(), 21);
    }

    #[test]
    fn zero_dt_without_smoothing_is_identity() {
        let params = short(5);
        let disc = nonlinear_circle(32, &params);
        let grid = disc.grid();
        let f = restrict_to_region(&grid.sample(|x, y| 100.0 * x + 50.0 * y), &disc.mask);
        let state = StateField::new(f.clone(), f.clone(), f);
        let next = Marcher::new(&params, &disc)
            .step(&state, &state, 0.0, false, DEFAULT_BLOWUP_THRESHOLD)
            .unwrap();
        assert_eq!(next, state);
    }

    #[test]
    fn zero_steps_report() {
        let params = short(5);
        let disc = nonlinear_circle(16, &params);
        let start = StateField::zeros(disc.grid());
        let report = Marcher::new(&params, &disc)
            .march(&start, 0.0, &MarchConfig::new(Direction::Forward, 0))
            .unwrap();
        assert_eq!(report.steps_completed, 0);
        assert_eq!(report.snapshots.len(), 1);
        assert_eq!(report.final_state, start);
    }

    #[test]
    fn rejects_zero_stride() {
        let params = short(5);
        let disc = nonlinear_circle(16, &params);
        let mut cfg = MarchConfig::new(Direction::Forward, 3);
        cfg.snapshot_stride = 0;
        let start = StateField::zeros(disc.grid());
        assert!(Marcher::new(&params, &disc).march(&start, 0.0, &cfg).is_err());
    }

    #[test]
    fn single_mode_matches_modal_scheme() {
        let params = short(100);
        let disc = linear_square(64, &params);
        let grid = disc.grid();
        for (j, k) in [(1, 1), (3, 2), (4, 4)] {
            let phi = mode(grid, j, k);
            let amp = [1.0, -0.4, 0.7];
            let start = StateField::new(&phi * amp[0], &phi * amp[1], &phi * amp[2]);
            let report = Marcher::new(&params, &disc)
                .march(&start, params.t_max, &MarchConfig::new(Direction::Backward, 100))
                .unwrap();
            let sys = ModalSystem::new(disc.coeffs.discrete_eigenvalue(j, k), &params)
                .unwrap()
                .with_q(disc.table.get(j, k));
            let mut c = amp;
            for _ in 0..100 {
                c = scheme_step_modal(&c, &sys, params.dt);
            }
            let got = &report.final_state;
            for (field, coef) in [(&got.u, c[0]), (&got.v, c[1]), (&got.w, c[2])] {
                let expected = &phi * coef;
                let diff = (field - &expected).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(diff <= 1e-8 * scale, "mode ({j},{k}): {diff} vs {scale}");
            }
        }
    }

    #[test]
    fn linear_configuration_is_linear() {
        let params = short(30);
        let disc = linear_square(32, &params);
        let grid = disc.grid();
        let start = StateField::new(mode(grid, 1, 2), mode(grid, 3, 1) * 0.5, mode(grid, 2, 2));
        let cfg = MarchConfig::new(Direction::Backward, 30);
        let marcher = Marcher::new(&params, &disc);
        let base = marcher.march(&start, params.t_max, &cfg).unwrap();
        let scaled = marcher.march(&start.scale(-2.5), params.t_max, &cfg).unwrap();
        let expected = base.final_state.scale(-2.5);
        for (a, b) in scaled.final_state.components().iter().zip(expected.components()) {
            let diff = (*a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff <= 1e-12);
        }
    }

    #[test]
    fn outside_region_stays_zero() {
        let params = short(10);
        let disc = nonlinear_circle(32, &params);
        let grid = disc.grid();
        let f = grid.sample(|x, y| 200.0 * (x * y).sqrt());
        let start = StateField::new(f.clone(), f.clone() * 0.1, f);
        let report = Marcher::new(&params, &disc)
            .march(&start, params.t_max, &MarchConfig::new(Direction::Backward, 10))
            .unwrap();
        for field in report.final_state.components() {
            for ((i, j), v) in field.indexed_iter() {
                if !disc.mask.is_interior(i, j) {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn smoothed_march_respects_stability_envelope() {
        let params = short(300);
        let disc = linear_square(64, &params);
        let grid = disc.grid();
        let dx = grid.dx();
        let f = grid.sample(|x, y| if (x - 0.5).abs() < 0.2 && (y - 0.4).abs() < 0.3 { 1.0 } else { 0.0 });
        let start = restrict_to_region(&f, &disc.mask);
        let start = StateField::new(start.clone(), start.clone() * -0.5, start);
        let report = Marcher::new(&params, &disc)
            .march(&start, params.t_max, &MarchConfig::new(Direction::Backward, 300))
            .unwrap();
        let initial = start.norm(dx);
        for s in &report.snapshots {
            let envelope = (s.step as f64 * params.dt_abs() * params.zeta_j).exp() * initial;
            assert!(s.norm_total <= envelope, "step {}", s.step);
        }
    }

    #[test]
    fn unsmoothed_backward_march_blows_up() {
        let params = SchemeParams::reference();
        let disc = linear_square(128, &params);
        let grid = disc.grid();
        let f = grid.sample(|x, y| if x < 0.5 && y > 0.3 { 1.0 } else { 0.0 });
        let start = StateField::new(f.clone(), f.clone(), f);
        let mut cfg = MarchConfig::new(Direction::Backward, params.n_steps);
        cfg.smoothing = false;
        cfg.snapshot_stride = 50;
        let report = Marcher::new(&params, &disc).march(&start, params.t_max, &cfg).unwrap();
        let blowup = report.blowup.expect("no blowup");
        assert!(blowup.step < params.n_steps);
        assert_eq!(report.steps_completed, blowup.step - 1);
        assert!(report.final_state.max_norm() <= DEFAULT_BLOWUP_THRESHOLD);
    }

    #[test]
    fn halving_dt_reduces_roundtrip_error() {
        let coarse = short(100);
        let fine = coarse.refined(2).unwrap();
        let errors: Vec<f64> = [coarse, fine]
            .iter()
            .map(|params| {
                let disc = linear_square(32, params);
                let grid = disc.grid();
                let f = mode(grid, 1, 1) + mode(grid, 3, 2) * 0.5;
                let target = StateField::new(f.clone(), f.clone() * 0.3, f);
                let trip = Marcher::new(params, &disc).assimilate_roundtrip(&target, true, 10).unwrap();
                let back = trip.forward.unwrap().final_state;
                (back.axpy(-1.0, &target)).norm(grid.dx()) / target.norm(grid.dx())
            })
            .collect();
        assert!(errors[1] < errors[0], "{errors:?}");
    }

    #[test]
    fn identity_horizon_roundtrip() {
        let set = crate::params::ParamSet { t_max: 0.0, ..Default::default() };
        let params = set.resolve().unwrap();
        assert_eq!(params.n_steps, 0);
        let disc = nonlinear_circle(32, &params);
        let grid = disc.grid();
        let f = restrict_to_region(&grid.sample(|x, _| 50.0 + 100.0 * x), &disc.mask);
        let target = StateField::new(f.clone(), f.clone(), f);
        let trip = Marcher::new(&params, &disc).assimilate_roundtrip(&target, true, 1).unwrap();
        let metrics = trip.metrics.unwrap();
        for row in &metrics.rows {
            assert_eq!(row.rel_err_pct, Some(0.0));
            assert_eq!(row.desired_l1, row.evolved_l1);
        }
        let mut csv = Vec::new();
        metrics.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("field,desired_L1,evolved_L1,rel_err_pct\nu,"));
    }

    #[test]
    fn march_csv_layout() {
        let params = short(4);
        let disc = nonlinear_circle(16, &params);
        let mut cfg = MarchConfig::new(Direction::Forward, 4);
        cfg.snapshot_stride = 3;
        let report = Marcher::new(&params, &disc)
            .march(&StateField::zeros(disc.grid()), 0.0, &cfg)
            .unwrap();
        let steps: Vec<usize> = report.snapshots.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 3, 4]);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next(), Some("step,time,norm_u,norm_v,norm_w,norm_W"));
        assert_eq!(text.lines().count(), 4);
    }
}
