//! Built-in test problems: a scalar problem with closed-form Riccati
//! solutions, two scalar indefinite problems that become definite after a
//! weight shift, and a two-dimensional asset-liability model.

use nalgebra::{DMatrix, DVector};

use crate::equivalence::FunctionalShift;
use crate::error::{Error, Result};
use crate::problem::{
    validate_spec, CostWeights, Dynamics, JumpAtom, JumpMeasure, MatrixPath, Problem,
    ProblemSpec, TimeGrid,
};

/// Identifiers accepted by [`ExampleId::parse`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleId {
    ClosedForm,
    ShiftedScalar,
    Fbsde,
    AssetLiability,
}

impl ExampleId {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "5.1" => Ok(ExampleId::ClosedForm),
            "5.2" => Ok(ExampleId::ShiftedScalar),
            "5.3" => Ok(ExampleId::Fbsde),
            "5.4" => Ok(ExampleId::AssetLiability),
            other => Err(Error::UnknownExample(other.to_string())),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ExampleId::ClosedForm => "5.1",
            ExampleId::ShiftedScalar => "5.2",
            ExampleId::Fbsde => "5.3",
            ExampleId::AssetLiability => "5.4",
        }
    }

    pub fn all() -> [ExampleId; 4] {
        [
            ExampleId::ClosedForm,
            ExampleId::ShiftedScalar,
            ExampleId::Fbsde,
            ExampleId::AssetLiability,
        ]
    }
}

fn s(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

#[allow(clippy::too_many_arguments)]
fn scalar_dynamics(grid: TimeGrid, a: f64, a_bar: f64, b: f64, b_bar: f64, c: f64, d: f64, d_bar: f64) -> Dynamics {
    Dynamics {
        a: MatrixPath::scalar(grid, a),
        a_bar: MatrixPath::scalar(grid, a_bar),
        b: MatrixPath::scalar(grid, b),
        b_bar: MatrixPath::scalar(grid, b_bar),
        c: MatrixPath::scalar(grid, c),
        c_bar: MatrixPath::scalar(grid, 0.0),
        d: MatrixPath::scalar(grid, d),
        d_bar: MatrixPath::scalar(grid, d_bar),
    }
}

fn scalar_atom(grid: TimeGrid, rate: f64, mark: f64, e: f64, e_bar: f64, f: f64, f_bar: f64) -> JumpAtom {
    JumpAtom {
        rate,
        mark,
        e: MatrixPath::scalar(grid, e),
        e_bar: MatrixPath::scalar(grid, e_bar),
        f: MatrixPath::scalar(grid, f),
        f_bar: MatrixPath::scalar(grid, f_bar),
    }
}

/// Mark of the single atom carrying the jump noise of the closed-form
/// problem.
pub const CLOSED_FORM_MARK: f64 = 1.0;

/// Scalar problem with `P = 2`, `Pi = delta / (2T - 2t + delta)`.
///
/// The jump noise enters only through `E[u]` with loading `exp(-theta)`; a
/// single atom at `theta = 1` with rate `delta * e^2` reproduces
/// `int exp(-2 theta) nu(d theta) = delta`.
pub fn example_5_1(horizon: f64, delta: f64, steps: usize) -> Result<Problem> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Invalid(vec![crate::error::Violation::InvalidValue {
            field: "delta".into(),
            reason: format!("must be positive, got {delta}"),
        }]));
    }
    let grid = TimeGrid::new(horizon, steps)?;
    let theta = CLOSED_FORM_MARK;
    let rate = delta * (2.0 * theta).exp();
    let spec = ProblemSpec {
        n: 1,
        m: 1,
        grid,
        dynamics: scalar_dynamics(grid, 1.0, -1.0, 1.0, 1.0, 0.0, 2.0, -1.0),
        jumps: JumpMeasure {
            atoms: vec![scalar_atom(grid, rate, theta, 0.0, 0.0, 0.0, (-theta).exp())],
        },
        weights: CostWeights {
            q: MatrixPath::scalar(grid, -3.0),
            q_bar: MatrixPath::scalar(grid, 3.0),
            s: MatrixPath::scalar(grid, 0.0),
            s_bar: MatrixPath::scalar(grid, 0.0),
            r: MatrixPath::scalar(grid, -4.0),
            r_bar: MatrixPath::scalar(grid, 2.0),
            g: s(2.0),
            g_bar: s(-1.0),
        },
        x0: DVector::from_element(1, 1.0),
    };
    validate_spec(spec)
}

/// Closed-form quantities of [`example_5_1`].
pub mod closed_form {
    pub fn p(_t: f64) -> f64 {
        2.0
    }

    pub fn pi(t: f64, horizon: f64, delta: f64) -> f64 {
        delta / (2.0 * horizon - 2.0 * t + delta)
    }

    pub fn centered_gain(_t: f64) -> f64 {
        0.5
    }

    pub fn mean_gain(t: f64, horizon: f64, delta: f64) -> f64 {
        1.0 / (2.0 * horizon - 2.0 * t + delta)
    }

    pub fn value(x: f64, horizon: f64, delta: f64) -> f64 {
        delta / (2.0 * (2.0 * horizon + delta)) * x * x
    }

    pub fn mean(t: f64, x0: f64, horizon: f64, delta: f64) -> f64 {
        x0 * (2.0 * horizon - 2.0 * t + delta) / (2.0 * horizon + delta)
    }
}

/// Default terminal weight of [`example_5_2`], `(T + 1)^2`.
pub fn default_alpha(horizon: f64) -> f64 {
    (horizon + 1.0).powi(2)
}

/// Jump loadings of the scalar shift problem: `E = 1/2`, `E_bar = 1/2`
/// with unit rate, so the two jump integrals are `1/4` and `1`.
pub const SHIFT_JUMP_E: f64 = 0.5;
pub const SHIFT_JUMP_E_BAR: f64 = 0.5;

/// Scalar problem with `R = (t+1)^3 - 2(t+1)^2` negative near `t = 0` and
/// terminal weights `alpha`, `-(alpha + 1)`.
pub fn example_5_2(horizon: f64, alpha: f64, steps: usize) -> Result<Problem> {
    let grid = TimeGrid::new(horizon, steps)?;
    let spec = ProblemSpec {
        n: 1,
        m: 1,
        grid,
        dynamics: scalar_dynamics(grid, 2.0, -1.0, 1.0, 0.0, 0.0, 2.0, 0.0),
        jumps: JumpMeasure {
            atoms: vec![scalar_atom(grid, 1.0, 0.0, SHIFT_JUMP_E, SHIFT_JUMP_E_BAR, 0.0, 0.0)],
        },
        weights: CostWeights {
            q: MatrixPath::scalar(grid, 0.0),
            q_bar: MatrixPath::scalar(grid, 4.0),
            s: MatrixPath::scalar(grid, 0.0),
            s_bar: MatrixPath::scalar(grid, 2.0),
            r: MatrixPath::scalar_fn(grid, |t| (t + 1.0).powi(3) - 2.0 * (t + 1.0).powi(2)),
            r_bar: MatrixPath::scalar_fn(grid, |t| 1.0 - (t + 1.0).powi(3)),
            g: s(alpha),
            g_bar: s(-(alpha + 1.0)),
        },
        x0: DVector::from_element(1, 1.0),
    };
    validate_spec(spec)
}

/// `H = (t+1)^2 / 2`, `K = 1/(1 + T - t) - 2` with exact derivatives.
pub fn example_5_2_shift(grid: TimeGrid) -> Result<FunctionalShift> {
    let horizon = grid.horizon();
    FunctionalShift::new(
        MatrixPath::scalar_fn(grid, |t| 0.5 * (t + 1.0).powi(2)),
        MatrixPath::scalar_fn(grid, |t| 1.0 / (1.0 + horizon - t) - 2.0),
        MatrixPath::scalar_fn(grid, |t| t + 1.0),
        MatrixPath::scalar_fn(grid, |t| 1.0 / (1.0 + horizon - t).powi(2)),
    )
}

/// Scalar problem whose optimality system is a fully coupled mean-field
/// FBSDE with `u = Y + Z`.
pub fn example_5_3(horizon: f64, steps: usize) -> Result<Problem> {
    let grid = TimeGrid::new(horizon, steps)?;
    let spec = ProblemSpec {
        n: 1,
        m: 1,
        grid,
        dynamics: scalar_dynamics(grid, 2.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0),
        jumps: JumpMeasure {
            atoms: vec![scalar_atom(grid, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0)],
        },
        weights: CostWeights {
            q: MatrixPath::scalar(grid, -1.0),
            q_bar: MatrixPath::scalar(grid, 1.0),
            s: MatrixPath::scalar(grid, 0.0),
            s_bar: MatrixPath::scalar(grid, 0.0),
            r: MatrixPath::scalar(grid, -1.0),
            r_bar: MatrixPath::scalar(grid, 0.0),
            g: s(2.0),
            g_bar: s(-1.0),
        },
        x0: DVector::from_element(1, 1.0),
    };
    validate_spec(spec)
}

/// Constant shift `H = 2`, `K = 1`.
pub fn example_5_3_shift(grid: TimeGrid) -> Result<FunctionalShift> {
    FunctionalShift::new(
        MatrixPath::scalar(grid, 2.0),
        MatrixPath::scalar(grid, 1.0),
        MatrixPath::scalar(grid, 0.0),
        MatrixPath::scalar(grid, 0.0),
    )
}

/// Market and liability parameters of the asset-liability model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    pub horizon: f64,
    /// Initial asset.
    pub n0: f64,
    /// Initial liability.
    pub l0: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Risk-free rate.
    pub r: f64,
    /// Liability appreciation rate.
    pub a: f64,
    /// Liability volatility.
    pub b: f64,
    /// Coupling of the liability drift to the expected asset.
    pub c: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        MarketParams {
            horizon: 1.0,
            n0: 1.0,
            l0: 0.5,
            mu: 0.3,
            sigma: 0.5,
            r: 0.05,
            a: 0.2,
            b: 0.3,
            c: 0.5,
        }
    }
}

impl MarketParams {
    /// Sets a parameter by name; `None` if the name is unknown.
    pub fn with(mut self, name: &str, value: f64) -> Option<Self> {
        match name {
            "T" | "horizon" => self.horizon = value,
            "n0" => self.n0 = value,
            "l0" => self.l0 = value,
            "mu" => self.mu = value,
            "sigma" => self.sigma = value,
            "r" => self.r = value,
            "a" => self.a = value,
            "b" => self.b = value,
            "c" => self.c = value,
            _ => return None,
        }
        Some(self)
    }

    /// Growth rate and squared coupling of the scalar Riccati equation for
    /// the net-wealth shift: `d lambda/dt = growth * lambda + coupling^2 * lambda^2`.
    pub fn shift_ode_coefficients(&self) -> (f64, f64) {
        let theta = (self.mu - self.r) / self.sigma;
        let growth = theta * theta - 2.0 * self.r;
        let kappa = self.r - self.a + self.b * theta;
        (growth, kappa * kappa)
    }

    /// Closed-form solution of the shift ODE with `lambda(T) = 1/2`.
    ///
    /// `w = 1 / lambda` is linear: `dw/dt = -growth w - coupling^2`.
    /// `None` if the solution blows up before `t`.
    pub fn shift_lambda(&self, t: f64) -> Option<f64> {
        let (growth, k2) = self.shift_ode_coefficients();
        let tau = self.horizon - t;
        let w_t = 2.0;
        let w = if growth.abs() < 1e-12 {
            w_t + k2 * tau
        } else {
            (w_t + k2 / growth) * (growth * tau).exp() - k2 / growth
        };
        (w > 0.0).then(|| 1.0 / w)
    }
}

/// The asset-liability model with state `(L, I)` and control the amount
/// held in the stock.
pub fn example_5_4(params: &MarketParams, steps: usize) -> Result<Problem> {
    let grid = TimeGrid::new(params.horizon, steps)?;
    let p = *params;
    let m = |rows: usize, cols: usize, v: &[f64]| DMatrix::from_row_slice(rows, cols, v);
    let spec = ProblemSpec {
        n: 2,
        m: 1,
        grid,
        dynamics: Dynamics {
            a: MatrixPath::constant(grid, m(2, 2, &[p.a, 0.0, p.r - p.a, p.r])),
            a_bar: MatrixPath::constant(grid, m(2, 2, &[p.c, p.c, -p.c, -p.c])),
            b: MatrixPath::constant(grid, m(2, 1, &[0.0, p.mu - p.r])),
            b_bar: MatrixPath::zeros(grid, 2, 1),
            c: MatrixPath::constant(grid, m(2, 2, &[p.b, 0.0, -p.b, 0.0])),
            c_bar: MatrixPath::zeros(grid, 2, 2),
            d: MatrixPath::constant(grid, m(2, 1, &[0.0, p.sigma])),
            d_bar: MatrixPath::zeros(grid, 2, 1),
        },
        jumps: JumpMeasure::empty(),
        weights: CostWeights {
            q: MatrixPath::constant(grid, DMatrix::identity(2, 2)),
            q_bar: MatrixPath::constant(grid, m(2, 2, &[0.0, 0.0, 0.0, -1.0])),
            s: MatrixPath::zeros(grid, 2, 1),
            s_bar: MatrixPath::zeros(grid, 2, 1),
            r: MatrixPath::zeros(grid, 1, 1),
            r_bar: MatrixPath::zeros(grid, 1, 1),
            g: m(2, 2, &[0.0, 0.0, 0.0, 1.0]),
            g_bar: m(2, 2, &[0.0, 0.0, 0.0, -1.0]),
        },
        x0: DVector::from_row_slice(&[p.l0, p.n0 - p.l0]),
    };
    validate_spec(spec)
}

/// `H = diag(0, lambda)`, `K = 0`, with `dH/dt` taken from the shift ODE.
pub fn example_5_4_shift(params: &MarketParams, grid: TimeGrid) -> Result<FunctionalShift> {
    let (growth, k2) = params.shift_ode_coefficients();
    let mut lam = Vec::with_capacity(grid.len());
    for t in grid.nodes() {
        let l = params.shift_lambda(t).ok_or(Error::NonFiniteState { t })?;
        lam.push(l);
    }
    let diag = |v: f64| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, v]);
    let h = MatrixPath::new(grid, lam.iter().map(|&l| diag(l)).collect())?;
    let h_dot = MatrixPath::new(
        grid,
        lam.iter().map(|&l| diag(growth * l + k2 * l * l)).collect(),
    )?;
    FunctionalShift::new(
        h,
        MatrixPath::zeros(grid, 2, 2),
        h_dot,
        MatrixPath::zeros(grid, 2, 2),
    )
}

/// Risk-free rates of the first sweep (liability rate fixed at 0.2).
pub const RATE_SWEEP: [f64; 4] = [0.05, 0.1, 0.15, 0.2];
/// Liability appreciation rates of the second sweep (risk-free rate 0.05).
pub const LIABILITY_SWEEP: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
