//! Equivalent cost functionals obtained by shifting the weights with a pair
//! of symmetric matrix paths `(H, K)`, the maps carrying Riccati solutions
//! and optimality systems back to the original problem, and the reduction
//! that removes the state-control cross weights.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, max_abs_diff, relative_asymmetry, solve, symmetrize};
use crate::problem::{
    AtomCoefficients, CostWeights, Dynamics, JumpAtom, JumpMeasure, MatrixPath, Problem,
    ProblemSpec, TimeGrid,
};
use crate::riccati::{riccati_rhs, RiccatiBundle, RiccatiSolution};
use crate::synthesis::HamiltonianTuple;

/// Where the time derivatives of a shift came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeSource {
    Analytic,
    FiniteDifference,
}

/// A pair `(H, K)` of symmetric differentiable matrix paths together with
/// their derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalShift {
    pub h: MatrixPath,
    pub k: MatrixPath,
    pub h_dot: MatrixPath,
    pub k_dot: MatrixPath,
    pub source: DerivativeSource,
}

impl FunctionalShift {
    /// Shift with analytically supplied derivatives.
    pub fn new(h: MatrixPath, k: MatrixPath, h_dot: MatrixPath, k_dot: MatrixPath) -> Result<Self> {
        let shift = FunctionalShift {
            h,
            k,
            h_dot,
            k_dot,
            source: DerivativeSource::Analytic,
        };
        shift.check()?;
        Ok(shift)
    }

    /// Shift whose derivatives are estimated by second-order finite
    /// differences (central inside, one-sided at the ends).
    pub fn from_finite_differences(h: MatrixPath, k: MatrixPath) -> Result<Self> {
        let h_dot = differentiate(&h);
        let k_dot = differentiate(&k);
        let shift = FunctionalShift {
            h,
            k,
            h_dot,
            k_dot,
            source: DerivativeSource::FiniteDifference,
        };
        shift.check()?;
        Ok(shift)
    }

    pub fn zero(grid: TimeGrid, n: usize) -> Self {
        let z = MatrixPath::zeros(grid, n, n);
        FunctionalShift {
            h: z.clone(),
            k: z.clone(),
            h_dot: z.clone(),
            k_dot: z,
            source: DerivativeSource::Analytic,
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.h.grid()
    }

    fn check(&self) -> Result<()> {
        let grid = self.h.grid();
        let (n, cols) = self.h.shape();
        if n != cols {
            return Err(Error::ShapeMismatch(format!("shift H is {n}x{cols}")));
        }
        for (name, p) in [("K", &self.k), ("Hdot", &self.h_dot), ("Kdot", &self.k_dot)] {
            if p.grid() != grid {
                return Err(Error::GridMismatch(format!("shift {name} is on a different grid")));
            }
            if p.shape() != (n, n) {
                return Err(Error::ShapeMismatch(format!(
                    "shift {name} is {}x{}, expected {n}x{n}",
                    p.shape().0,
                    p.shape().1
                )));
            }
        }
        for (name, p) in [("H", &self.h), ("K", &self.k), ("Hdot", &self.h_dot), ("Kdot", &self.k_dot)] {
            for (node, s) in p.samples().iter().enumerate() {
                if relative_asymmetry(s) > crate::problem::SYMMETRY_TOL {
                    return Err(Error::Invalid(vec![crate::error::Violation::AsymmetricWeight {
                        field: format!("shift.{name}"),
                        node,
                        asymmetry: relative_asymmetry(s),
                    }]));
                }
            }
        }
        Ok(())
    }

    /// Largest gap between the supplied derivatives and central differences
    /// of `H`, `K` at interior nodes.
    pub fn derivative_mismatch(&self) -> f64 {
        let fd_h = differentiate(&self.h);
        let fd_k = differentiate(&self.k);
        let mut worst = 0.0_f64;
        for k in 1..self.grid().steps() {
            worst = worst
                .max(max_abs_diff(fd_h.node(k), self.h_dot.node(k)))
                .max(max_abs_diff(fd_k.node(k), self.k_dot.node(k)));
        }
        worst
    }
}

/// Second-order finite-difference derivative of a path on its own grid.
pub fn differentiate(p: &MatrixPath) -> MatrixPath {
    let grid = p.grid();
    let m = grid.steps();
    let dt = grid.dt();
    let s = p.samples();
    let mut out = Vec::with_capacity(grid.len());
    out.push((&s[1] * 4.0 - &s[0] * 3.0 - &s[2]) / (2.0 * dt));
    for k in 1..m {
        out.push((&s[k + 1] - &s[k - 1]) / (2.0 * dt));
    }
    out.push((&s[m] * 3.0 - &s[m - 1] * 4.0 + &s[m - 2]) / (2.0 * dt));
    MatrixPath::new(grid, out).expect("derivative path has the source shape")
}

/// Weights of the equivalent cost functional `J^{HK}`.
pub fn shift_weights(problem: &Problem, shift: &FunctionalShift) -> Result<CostWeights> {
    let grid = problem.grid;
    if shift.grid() != grid {
        return Err(Error::GridMismatch(
            "shift and problem use different grids".into(),
        ));
    }
    if shift.h.shape() != (problem.n, problem.n) {
        return Err(Error::ShapeMismatch(format!(
            "shift is {}x{}, problem state dimension is {}",
            shift.h.shape().0,
            shift.h.shape().1,
            problem.n
        )));
    }
    let mut cols: [Vec<DMatrix<f64>>; 6] = Default::default();
    for k in 0..grid.len() {
        let t = grid.node(k);
        let c = problem.coefficients_at_node(k);
        let centered = RiccatiBundle::centered(&c, t);
        let mean = RiccatiBundle::mean(&c, t);
        let h = shift.h.node(k);
        let kk = shift.k.node(k);

        let q = symmetrize(&(centered.linear(h, h) + shift.h_dot.node(k)));
        let s = centered.cross(h, h);
        let r = centered.sigma(h);
        let qs = symmetrize(&(mean.linear(kk, h) + shift.k_dot.node(k)));
        let ss = mean.cross(kk, h);
        let rs = mean.sigma(h);

        cols[1].push(symmetrize(&(&qs - &q)));
        cols[3].push(&ss - &s);
        cols[5].push(symmetrize(&(&rs - &r)));
        cols[0].push(q);
        cols[2].push(s);
        cols[4].push(r);
    }
    let [q, q_bar, s, s_bar, r, r_bar] = cols;
    let h_t = shift.h.node(grid.steps());
    let k_t = shift.k.node(grid.steps());
    let g = symmetrize(&(&problem.weights.g - h_t));
    let gg = symmetrize(&(&problem.weights.g + &problem.weights.g_bar - k_t));
    Ok(CostWeights {
        q: MatrixPath::new(grid, q)?,
        q_bar: MatrixPath::new(grid, q_bar)?,
        s: MatrixPath::new(grid, s)?,
        s_bar: MatrixPath::new(grid, s_bar)?,
        r: MatrixPath::new(grid, r)?,
        r_bar: MatrixPath::new(grid, r_bar)?,
        g_bar: &gg - &g,
        g,
    })
}

/// The shift `H = P`, `K = Pi` with derivatives read off the Riccati
/// right-hand side.
pub fn canonical_shift(problem: &Problem, sol: &RiccatiSolution) -> Result<FunctionalShift> {
    let grid = problem.grid;
    if sol.grid() != grid {
        return Err(Error::GridMismatch(
            "solution and problem use different grids".into(),
        ));
    }
    let mut pd = Vec::with_capacity(grid.len());
    let mut qd = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let (a, b) = riccati_rhs(problem, sol.p.node(k), sol.pi.node(k), grid.node(k))?;
        pd.push(a);
        qd.push(b);
    }
    FunctionalShift::new(
        sol.p.clone(),
        sol.pi.clone(),
        MatrixPath::new(grid, pd)?,
        MatrixPath::new(grid, qd)?,
    )
}

/// Maps a Riccati solution of the shifted problem to one of the original:
/// `P = P^{HK} + H`, `Pi = Pi^{HK} + K`.
pub fn pullback_riccati(
    problem: &Problem,
    shifted: &RiccatiSolution,
    shift: &FunctionalShift,
) -> Result<RiccatiSolution> {
    let p = shifted.p.zip_with(&shift.h, |a, b| a + b)?;
    let pi = shifted.pi.zip_with(&shift.k, |a, b| a + b)?;
    RiccatiSolution::from_paths(problem, p, pi, shifted.stats)
}

/// Maps an optimality-system tuple of the shifted problem to one of the
/// original problem. `X`, `u` and their means are unchanged.
pub fn pullback_hamiltonian(
    tuple: &HamiltonianTuple,
    shift: &FunctionalShift,
    problem: &Problem,
) -> Result<HamiltonianTuple> {
    let grid = problem.grid;
    if tuple.grid != grid || shift.grid() != grid {
        return Err(Error::GridMismatch(
            "tuple, shift and problem must share a grid".into(),
        ));
    }
    let mut out = tuple.clone();
    for k in 0..grid.len() {
        let c = &problem.coefficients_at_node(k);
        let h = shift.h.node(k);
        let kk = shift.k.node(k);
        let m = &tuple.mean_x[k];
        let ub = &tuple.mean_u[k];
        out.mean_y[k] += kk * m;
        out.mean_z[k] += h * ((&c.c + &c.c_bar) * m + (&c.d + &c.d_bar) * ub);
        for (i, a) in c.atoms.iter().enumerate() {
            out.mean_r[k][i] += h * ((&a.e + &a.e_bar) * m + (&a.f + &a.f_bar) * ub);
        }
        for p in 0..tuple.paths() {
            let x = &tuple.x[p][k];
            let u = &tuple.u[p][k];
            out.y[p][k] += h * (x - m) + kk * m;
            out.z[p][k] += h * (&c.c * x + &c.c_bar * m + &c.d * u + &c.d_bar * ub);
            for (i, a) in c.atoms.iter().enumerate() {
                out.r[p][k][i] += h * (&a.e * x + &a.e_bar * m + &a.f * u + &a.f_bar * ub);
            }
        }
    }
    Ok(out)
}

/// `R^{-1} S'` and `(R + R_bar)^{-1} (S + S_bar)'` at one node.
struct CrossGains {
    centered: DMatrix<f64>,
    mean: DMatrix<f64>,
}

fn cross_gains(c: &crate::problem::Coefficients, t: f64) -> Result<CrossGains> {
    let centered = solve(&c.r, &c.s.transpose()).ok_or(Error::RSingular { t, which: "R" })?;
    let rs = &c.r + &c.r_bar;
    let mean = solve(&rs, &(&c.s + &c.s_bar).transpose())
        .ok_or(Error::RSingular { t, which: "R+R_bar" })?;
    if !(max_abs(&centered).is_finite() && max_abs(&mean).is_finite()) {
        return Err(Error::RSingular { t, which: "R" });
    }
    Ok(CrossGains { centered, mean })
}

fn r_checked(c: &crate::problem::Coefficients, t: f64) -> Result<CrossGains> {
    // LU succeeds on some numerically singular matrices; use the same
    // conditioning guard as the Riccati solver.
    let rs = &c.r + &c.r_bar;
    if crate::linalg::condition_number(&c.r) > crate::linalg::CONDITION_GUARD {
        return Err(Error::RSingular { t, which: "R" });
    }
    if crate::linalg::condition_number(&rs) > crate::linalg::CONDITION_GUARD {
        return Err(Error::RSingular { t, which: "R+R_bar" });
    }
    cross_gains(c, t)
}

/// Removes the cross weights `S`, `S_bar` by the feedback change of control
/// variable, returning the equivalent problem with `S = S_bar = 0`.
pub fn nc_reduce(problem: &Problem) -> Result<Problem> {
    let grid = problem.grid;
    let len = grid.len();
    let mut a = Vec::with_capacity(len);
    let mut a_bar = Vec::with_capacity(len);
    let mut c1 = Vec::with_capacity(len);
    let mut c1_bar = Vec::with_capacity(len);
    let mut q = Vec::with_capacity(len);
    let mut q_bar = Vec::with_capacity(len);
    let n_atoms = problem.jumps.atoms.len();
    let mut e = vec![Vec::with_capacity(len); n_atoms];
    let mut e_bar = vec![Vec::with_capacity(len); n_atoms];

    for k in 0..len {
        let t = grid.node(k);
        let c = problem.coefficients_at_node(k);
        let g = r_checked(&c, t)?;
        let bs = &c.b + &c.b_bar;
        let ds = &c.d + &c.d_bar;
        let ss = &c.s + &c.s_bar;

        let a1 = &c.a - &c.b * &g.centered;
        let a1s = &c.a + &c.a_bar - &bs * &g.mean;
        let cc = &c.c - &c.d * &g.centered;
        let ccs = &c.c + &c.c_bar - &ds * &g.mean;
        let q1 = symmetrize(&(&c.q - &c.s * &g.centered));
        let q1s = symmetrize(&(&c.q + &c.q_bar - &ss * &g.mean));
        for (i, at) in c.atoms.iter().enumerate() {
            let e1 = &at.e - &at.f * &g.centered;
            let e1s = &at.e + &at.e_bar - (&at.f + &at.f_bar) * &g.mean;
            e_bar[i].push(&e1s - &e1);
            e[i].push(e1);
        }
        a_bar.push(&a1s - &a1);
        a.push(a1);
        c1_bar.push(&ccs - &cc);
        c1.push(cc);
        q_bar.push(symmetrize(&(&q1s - &q1)));
        q.push(q1);
    }

    let src = problem.spec();
    let atoms = src
        .jumps
        .atoms
        .iter()
        .zip(e.into_iter().zip(e_bar))
        .map(|(atom, (e, eb))| {
            Ok(JumpAtom {
                rate: atom.rate,
                mark: atom.mark,
                e: MatrixPath::new(grid, e)?,
                e_bar: MatrixPath::new(grid, eb)?,
                f: atom.f.clone(),
                f_bar: atom.f_bar.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = ProblemSpec {
        n: src.n,
        m: src.m,
        grid,
        dynamics: Dynamics {
            a: MatrixPath::new(grid, a)?,
            a_bar: MatrixPath::new(grid, a_bar)?,
            b: src.dynamics.b.clone(),
            b_bar: src.dynamics.b_bar.clone(),
            c: MatrixPath::new(grid, c1)?,
            c_bar: MatrixPath::new(grid, c1_bar)?,
            d: src.dynamics.d.clone(),
            d_bar: src.dynamics.d_bar.clone(),
        },
        jumps: JumpMeasure { atoms },
        weights: CostWeights {
            q: MatrixPath::new(grid, q)?,
            q_bar: MatrixPath::new(grid, q_bar)?,
            s: MatrixPath::zeros(grid, src.n, src.m),
            s_bar: MatrixPath::zeros(grid, src.n, src.m),
            r: src.weights.r.clone(),
            r_bar: src.weights.r_bar.clone(),
            g: src.weights.g.clone(),
            g_bar: src.weights.g_bar.clone(),
        },
        x0: src.x0.clone(),
    };
    crate::problem::validate_spec(spec)
}

/// The cross-weight-free coefficient bundle at one instant: the snapshot
/// counterpart of [`nc_reduce`], for checking the Riccati identity on
/// arbitrary coefficients.
pub fn nc_reduce_coefficients(
    c: &crate::problem::Coefficients,
    t: f64,
) -> Result<crate::problem::Coefficients> {
    let g = cross_gains(c, t)?;
    let bs = &c.b + &c.b_bar;
    let ds = &c.d + &c.d_bar;
    let ss = &c.s + &c.s_bar;
    let a1 = &c.a - &c.b * &g.centered;
    let c1 = &c.c - &c.d * &g.centered;
    let q1 = &c.q - &c.s * &g.centered;
    Ok(crate::problem::Coefficients {
        a_bar: &c.a + &c.a_bar - &bs * &g.mean - &a1,
        c_bar: &c.c + &c.c_bar - &ds * &g.mean - &c1,
        q_bar: &c.q + &c.q_bar - &ss * &g.mean - &q1,
        a: a1,
        c: c1,
        q: q1,
        b: c.b.clone(),
        b_bar: c.b_bar.clone(),
        d: c.d.clone(),
        d_bar: c.d_bar.clone(),
        atoms: c
            .atoms
            .iter()
            .map(|at| {
                let e1 = &at.e - &at.f * &g.centered;
                AtomCoefficients {
                    rate: at.rate,
                    e_bar: &at.e + &at.e_bar - (&at.f + &at.f_bar) * &g.mean - &e1,
                    e: e1,
                    f: at.f.clone(),
                    f_bar: at.f_bar.clone(),
                }
            })
            .collect(),
        s: DMatrix::zeros(c.s.nrows(), c.s.ncols()),
        s_bar: DMatrix::zeros(c.s.nrows(), c.s.ncols()),
        r: c.r.clone(),
        r_bar: c.r_bar.clone(),
    })
}

/// Direction of [`transform_pair`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Original control to the control of the cross-weight-free problem.
    ToNc,
    FromNc,
}

/// State and control samples with their mean paths, indexed `[path][node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPaths {
    pub x: Vec<Vec<nalgebra::DVector<f64>>>,
    pub u: Vec<Vec<nalgebra::DVector<f64>>>,
    pub mean_x: Vec<nalgebra::DVector<f64>>,
    pub mean_u: Vec<nalgebra::DVector<f64>>,
}

/// Applies the block-triangular change of control variable linking the
/// original problem to its cross-weight-free reduction. The state is
/// unchanged; the centered control moves by `R^{-1} S' (X - E[X])` and the
/// mean control by `(R + R_bar)^{-1} (S + S_bar)' E[X]`.
pub fn transform_pair(pair: &PairPaths, problem: &Problem, direction: Direction) -> Result<PairPaths> {
    let grid = problem.grid;
    if pair.mean_x.len() != grid.len() || pair.mean_u.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "mean paths have {} nodes, grid has {}",
            pair.mean_x.len(),
            grid.len()
        )));
    }
    let sign = match direction {
        Direction::ToNc => 1.0,
        Direction::FromNc => -1.0,
    };
    let gains = (0..grid.len())
        .map(|k| r_checked(&problem.coefficients_at_node(k), grid.node(k)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = pair.clone();
    for (k, g) in gains.iter().enumerate() {
        let m = &pair.mean_x[k];
        let mean_shift = &g.mean * m * sign;
        out.mean_u[k] = &pair.mean_u[k] + &mean_shift;
        for p in 0..pair.x.len() {
            if pair.x[p].len() != grid.len() || pair.u[p].len() != grid.len() {
                return Err(Error::GridMismatch(format!("path {p} has the wrong length")));
            }
            let x = &pair.x[p][k];
            out.u[p][k] = &pair.u[p][k] + &g.centered * (x - m) * sign + &mean_shift;
        }
    }
    Ok(out)
}
