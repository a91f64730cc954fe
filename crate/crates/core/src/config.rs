//! Plain-text `key = value` run configuration.
//!
//! One key per line, `#` starts a comment. Numbers may be written as
//! fractions, e.g. `dt = -4e-7/3`.

use std::path::Path;

use serde::Serialize;

use crate::domain::{DomainKind, DomainMask, Grid2D};
use crate::error::{Error, Result};
use crate::marcher::Discretization;
use crate::operator::{LagMode, OperatorCoefficients};
use crate::params::{ParamSet, SchemeParams};
use crate::smoother::{EigenvalueMode, SpectralMultiplierTable};

pub const DEFAULT_GRID: usize = 512;

/// Coefficients of the spatial operator; defaults are the nonlinear problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoefficientSet {
    pub kappa: f64,
    pub advection: f64,
    pub s_gain: f64,
    pub q_amplitude: f64,
    pub lag: LagMode,
}

impl CoefficientSet {
    pub const NONLINEAR: CoefficientSet = CoefficientSet {
        kappa: 0.00085,
        advection: 2.75,
        s_gain: 0.005,
        q_amplitude: 2.0,
        lag: LagMode::Coefficient,
    };

    /// `L = -Delta`.
    pub const LINEAR: CoefficientSet = CoefficientSet {
        kappa: 1.0,
        advection: 0.0,
        s_gain: 0.0,
        q_amplitude: 0.0,
        lag: LagMode::Coefficient,
    };

    pub fn build(&self, grid: Grid2D) -> OperatorCoefficients {
        let mut coeffs = OperatorCoefficients::new(grid, self.kappa, self.advection, self.s_gain, self.q_amplitude);
        coeffs.lag_mode = self.lag;
        coeffs
    }
}

impl Default for CoefficientSet {
    fn default() -> Self {
        CoefficientSet::NONLINEAR
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub params: ParamSet,
    pub coefficients: CoefficientSet,
    pub domain: DomainKind,
    pub eigenvalues: EigenvalueMode,
    pub grid: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: ParamSet::default(),
            coefficients: CoefficientSet::default(),
            domain: DomainKind::QuarterCircle,
            eigenvalues: EigenvalueMode::Continuous,
            grid: DEFAULT_GRID,
        }
    }
}

impl RunConfig {
    /// Starts from [`RunConfig::default`] and applies every key in `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected key = value, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let num = || parse_number(value).map_err(|message| Error::Config { line: line_no, message });
            match key {
                "a" => cfg.params.a = num()?,
                "b" => cfg.params.b = num()?,
                "d" => cfg.params.d = num()?,
                "p" => cfg.params.p = num()?,
                "omega" => cfg.params.omega = if value == "auto" { None } else { Some(num()?) },
                "zeta_J" | "zeta_j" => cfg.params.zeta_j = num()?,
                "eps" => cfg.params.eps = num()?,
                "q" => cfg.params.q_exp = num()?,
                "dt" => cfg.params.dt = num()?,
                "t_max" => cfg.params.t_max = num()?,
                "rho" => cfg.params.rho = Some(num()?),
                "kappa" => cfg.coefficients.kappa = num()?,
                "advection" => cfg.coefficients.advection = num()?,
                "s_gain" => cfg.coefficients.s_gain = num()?,
                "q_amp" => cfg.coefficients.q_amplitude = num()?,
                "lag" => {
                    cfg.coefficients.lag = match value {
                        "coefficient" => LagMode::Coefficient,
                        "full" => LagMode::Full,
                        other => {
                            return Err(Error::Config {
                                line: line_no,
                                message: format!("unknown lag mode {other:?}"),
                            })
                        }
                    }
                }
                "grid" => {
                    cfg.grid = value.parse().map_err(|_| Error::Config {
                        line: line_no,
                        message: format!("grid must be a positive integer, got {value:?}"),
                    })?
                }
                "domain" => {
                    cfg.domain = match value {
                        "quarter_circle" => DomainKind::QuarterCircle,
                        "square" => DomainKind::Square,
                        other => {
                            return Err(Error::Config {
                                line: line_no,
                                message: format!("unknown domain {other:?}"),
                            })
                        }
                    }
                }
                "eigenvalues" => {
                    cfg.eigenvalues = match value {
                        "continuous" => EigenvalueMode::Continuous,
                        "discrete" => EigenvalueMode::Discrete,
                        other => {
                            return Err(Error::Config {
                                line: line_no,
                                message: format!("unknown eigenvalue mode {other:?}"),
                            })
                        }
                    }
                }
                other => {
                    return Err(Error::Config {
                        line: line_no,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn scheme_params(&self) -> Result<SchemeParams> {
        self.params.resolve()
    }

    /// Region, operator and smoother for `params` on this grid.
    pub fn discretization(&self, params: &SchemeParams) -> Result<Discretization> {
        let grid = Grid2D::new(self.grid)?;
        let mask = DomainMask::build(grid, self.domain);
        let coeffs = self.coefficients.build(grid);
        let table = SpectralMultiplierTable::build_with_mode(grid, params.eps, params.q_exp, params.dt, params.rho, self.eigenvalues)?;
        Ok(Discretization::new(mask, coeffs, table))
    }

    /// Canonical text form; parsing it gives back the same configuration.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("a", format!("{:?}", p.a));
        put("b", format!("{:?}", p.b));
        put("d", format!("{:?}", p.d));
        put("p", format!("{:?}", p.p));
        put("omega", p.omega.map_or_else(|| "auto".to_string(), |o| format!("{o:?}")));
        put("zeta_J", format!("{:?}", p.zeta_j));
        put("eps", format!("{:?}", p.eps));
        put("q", format!("{:?}", p.q_exp));
        put("dt", format!("{:?}", p.dt));
        put("t_max", format!("{:?}", p.t_max));
        if let Some(rho) = p.rho {
            put("rho", format!("{rho:?}"));
        }
        let c = &self.coefficients;
        put("kappa", format!("{:?}", c.kappa));
        put("advection", format!("{:?}", c.advection));
        put("s_gain", format!("{:?}", c.s_gain));
        put("q_amp", format!("{:?}", c.q_amplitude));
        put(
            "lag",
            match c.lag {
                LagMode::Coefficient => "coefficient",
                LagMode::Full => "full",
            }
            .to_string(),
        );
        put(
            "domain",
            match self.domain {
                DomainKind::QuarterCircle => "quarter_circle",
                DomainKind::Square => "square",
            }
            .to_string(),
        );
        put(
            "eigenvalues",
            match self.eigenvalues {
                EigenvalueMode::Continuous => "continuous",
                EigenvalueMode::Discrete => "discrete",
            }
            .to_string(),
        );
        put("grid", self.grid.to_string());
        out
    }
}

/// A float, or `num/den` with both parts floats.
pub fn parse_number(text: &str) -> std::result::Result<f64, String> {
    let value = match text.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| format!("bad numerator in {text:?}"))?;
            let den: f64 = den.trim().parse().map_err(|_| format!("bad denominator in {text:?}"))?;
            if den == 0.0 {
                return Err(format!("zero denominator in {text:?}"));
            }
            num / den
        }
        None => text.parse().map_err(|_| format!("not a number: {text:?}"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("not finite: {text:?}"))
    }
}
