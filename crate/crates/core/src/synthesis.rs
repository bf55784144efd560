//! Feedback synthesis from a Riccati solution, the affine representation of
//! the adjoint processes, and the pointwise stationarity diagnostic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::quad_form;
use crate::problem::{Coefficients, MatrixPath, Problem, TimeGrid};
use crate::riccati::{RiccatiBundle, RiccatiSolution};
use crate::simulation::PathEnsemble;

/// `u = -K0 (X - E[X]) - K1 E[X]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    /// Gain on the centered state (m x n).
    pub k0: MatrixPath,
    /// Gain on the mean state (m x n).
    pub k1: MatrixPath,
}

impl FeedbackLaw {
    pub fn grid(&self) -> TimeGrid {
        self.k0.grid()
    }

    pub fn zero(grid: TimeGrid, n: usize, m: usize) -> Self {
        FeedbackLaw {
            k0: MatrixPath::zeros(grid, m, n),
            k1: MatrixPath::zeros(grid, m, n),
        }
    }

    /// Control at node `k` for state `x` and mean state `mean`.
    pub fn control(&self, k: usize, x: &DVector<f64>, mean: &DVector<f64>) -> DVector<f64> {
        -(self.k0.node(k) * (x - mean)) - self.k1.node(k) * mean
    }
}

/// Gains of the feedback law: `Sigma0^{-1} N0'` and `Sigma1^{-1} N1'`.
pub fn synthesize_feedback(problem: &Problem, sol: &RiccatiSolution) -> Result<FeedbackLaw> {
    let grid = problem.grid;
    if sol.grid() != grid {
        return Err(Error::GridMismatch(
            "solution and problem use different grids".into(),
        ));
    }
    let mut k0 = Vec::with_capacity(grid.len());
    let mut k1 = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let t = grid.node(k);
        let c = problem.coefficients_at_node(k);
        let p = sol.p.node(k);
        k0.push(RiccatiBundle::centered(&c, t).gain(p, p)?.0);
        k1.push(RiccatiBundle::mean(&c, t).gain(sol.pi.node(k), p)?.0);
    }
    Ok(FeedbackLaw {
        k0: MatrixPath::new(grid, k0)?,
        k1: MatrixPath::new(grid, k1)?,
    })
}

/// `x' Pi(0) x / 2`.
pub fn optimal_value(sol: &RiccatiSolution, x: &DVector<f64>) -> f64 {
    0.5 * quad_form(sol.pi.node(0), x)
}

/// A pair of gains acting on `(X - E[X], E[X])`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGains {
    pub centered: MatrixPath,
    pub mean: MatrixPath,
}

impl AffineGains {
    pub fn apply(&self, k: usize, x: &DVector<f64>, mean: &DVector<f64>) -> DVector<f64> {
        self.centered.node(k) * (x - mean) + self.mean.node(k) * mean
    }

    pub fn apply_mean(&self, k: usize, mean: &DVector<f64>) -> DVector<f64> {
        self.mean.node(k) * mean
    }
}

/// Affine representation of the adjoint processes `(Y, Z, r_i)` along the
/// optimal state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTriple {
    pub y: AffineGains,
    pub z: AffineGains,
    /// One entry per jump atom.
    pub r: Vec<AffineGains>,
}

pub fn adjoint_representation(problem: &Problem, sol: &RiccatiSolution) -> Result<AdjointTriple> {
    let law = synthesize_feedback(problem, sol)?;
    let grid = problem.grid;
    let n_atoms = problem.jumps.atoms.len();
    let mut zc = Vec::with_capacity(grid.len());
    let mut zm = Vec::with_capacity(grid.len());
    let mut rc = vec![Vec::with_capacity(grid.len()); n_atoms];
    let mut rm = vec![Vec::with_capacity(grid.len()); n_atoms];
    for k in 0..grid.len() {
        let c = problem.coefficients_at_node(k);
        let p = sol.p.node(k);
        let k0 = law.k0.node(k);
        let k1 = law.k1.node(k);
        zc.push(p * &c.c - p * &c.d * k0);
        zm.push(p * (&c.c + &c.c_bar) - p * (&c.d + &c.d_bar) * k1);
        for (i, a) in c.atoms.iter().enumerate() {
            rc[i].push(p * &a.e - p * &a.f * k0);
            rm[i].push(p * (&a.e + &a.e_bar) - p * (&a.f + &a.f_bar) * k1);
        }
    }
    let r = rc
        .into_iter()
        .zip(rm)
        .map(|(c, m)| {
            Ok(AffineGains {
                centered: MatrixPath::new(grid, c)?,
                mean: MatrixPath::new(grid, m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AdjointTriple {
        y: AffineGains {
            centered: sol.p.clone(),
            mean: sol.pi.clone(),
        },
        z: AffineGains {
            centered: MatrixPath::new(grid, zc)?,
            mean: MatrixPath::new(grid, zm)?,
        },
        r,
    })
}

/// Explicit samples of `(X, u, Y, Z, r)` and their expectations, indexed
/// `[path][node]` (and `[atom]` for `r`).
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianTuple {
    pub grid: TimeGrid,
    pub x: Vec<Vec<DVector<f64>>>,
    pub u: Vec<Vec<DVector<f64>>>,
    pub y: Vec<Vec<DVector<f64>>>,
    pub z: Vec<Vec<DVector<f64>>>,
    pub r: Vec<Vec<Vec<DVector<f64>>>>,
    pub mean_x: Vec<DVector<f64>>,
    pub mean_u: Vec<DVector<f64>>,
    pub mean_y: Vec<DVector<f64>>,
    pub mean_z: Vec<DVector<f64>>,
    pub mean_r: Vec<Vec<DVector<f64>>>,
}

impl HamiltonianTuple {
    pub fn paths(&self) -> usize {
        self.x.len()
    }

    /// Evaluates the adjoint representation along an ensemble.
    pub fn from_ensemble(ensemble: &PathEnsemble, triple: &AdjointTriple) -> Result<Self> {
        let grid = ensemble.grid();
        if triple.y.centered.grid() != grid {
            return Err(Error::GridMismatch(
                "adjoint gains and ensemble use different grids".into(),
            ));
        }
        let len = grid.len();
        let mean = ensemble.mean();
        let mean_x: Vec<DVector<f64>> = (0..len).map(|k| mean.m[k].clone()).collect();
        let mean_u: Vec<DVector<f64>> = (0..len).map(|k| mean.ubar[k].clone()).collect();
        let mean_y = (0..len).map(|k| triple.y.apply_mean(k, &mean_x[k])).collect();
        let mean_z = (0..len).map(|k| triple.z.apply_mean(k, &mean_x[k])).collect();
        let mean_r = (0..len)
            .map(|k| triple.r.iter().map(|g| g.apply_mean(k, &mean_x[k])).collect())
            .collect();
        let mut x = Vec::with_capacity(ensemble.paths());
        let mut u = Vec::with_capacity(ensemble.paths());
        let mut y = Vec::with_capacity(ensemble.paths());
        let mut z = Vec::with_capacity(ensemble.paths());
        let mut r = Vec::with_capacity(ensemble.paths());
        for p in 0..ensemble.paths() {
            let xs: Vec<DVector<f64>> = (0..len).map(|k| ensemble.state(p, k)).collect();
            let us: Vec<DVector<f64>> = (0..len).map(|k| ensemble.control(p, k)).collect();
            y.push((0..len).map(|k| triple.y.apply(k, &xs[k], &mean_x[k])).collect());
            z.push((0..len).map(|k| triple.z.apply(k, &xs[k], &mean_x[k])).collect());
            r.push(
                (0..len)
                    .map(|k| triple.r.iter().map(|g| g.apply(k, &xs[k], &mean_x[k])).collect())
                    .collect(),
            );
            x.push(xs);
            u.push(us);
        }
        Ok(HamiltonianTuple {
            grid,
            x,
            u,
            y,
            z,
            r,
            mean_x,
            mean_u,
            mean_y,
            mean_z,
            mean_r,
        })
    }
}

/// One evaluation of the stationarity expression
/// `R u + R_bar E[u] + S' X + S_bar' E[X] + B' Y + B_bar' E[Y] + D' Z
///  + D_bar' E[Z] + sum_i lambda_i (F_i' r_i + F_bar_i' E[r_i])`.
#[allow(clippy::too_many_arguments)]
pub fn stationarity_value(
    c: &Coefficients,
    x: &DVector<f64>,
    mean_x: &DVector<f64>,
    u: &DVector<f64>,
    mean_u: &DVector<f64>,
    y: &DVector<f64>,
    mean_y: &DVector<f64>,
    z: &DVector<f64>,
    mean_z: &DVector<f64>,
    r: &[DVector<f64>],
    mean_r: &[DVector<f64>],
) -> DVector<f64> {
    let mut out = &c.r * u
        + &c.r_bar * mean_u
        + c.s.transpose() * x
        + c.s_bar.transpose() * mean_x
        + c.b.transpose() * y
        + c.b_bar.transpose() * mean_y
        + c.d.transpose() * z
        + c.d_bar.transpose() * mean_z;
    for (i, a) in c.atoms.iter().enumerate() {
        out += (a.f.transpose() * &r[i] + a.f_bar.transpose() * &mean_r[i]) * a.rate;
    }
    out
}

fn max_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Largest absolute stationarity residual over all paths and nodes of an
/// explicit tuple, against `problem`'s coefficients and weights.
pub fn tuple_stationarity_residual(problem: &Problem, tuple: &HamiltonianTuple) -> Result<f64> {
    let grid = problem.grid;
    if tuple.grid != grid {
        return Err(Error::GridMismatch(
            "tuple and problem use different grids".into(),
        ));
    }
    let mut worst = 0.0_f64;
    for k in 0..grid.len() {
        let c = problem.coefficients_at_node(k);
        for p in 0..tuple.paths() {
            let v = stationarity_value(
                &c,
                &tuple.x[p][k],
                &tuple.mean_x[k],
                &tuple.u[p][k],
                &tuple.mean_u[k],
                &tuple.y[p][k],
                &tuple.mean_y[k],
                &tuple.z[p][k],
                &tuple.mean_z[k],
                &tuple.r[p][k],
                &tuple.mean_r[k],
            );
            worst = worst.max(max_norm(&v));
        }
    }
    Ok(worst)
}

/// Largest absolute stationarity residual along an ensemble, with the
/// adjoint processes given by their affine representation. The state
/// argument is the state the control acted on at each node.
pub fn stationarity_residual(
    problem: &Problem,
    ensemble: &PathEnsemble,
    triple: &AdjointTriple,
) -> Result<f64> {
    let grid = problem.grid;
    if ensemble.grid() != grid || triple.y.centered.grid() != grid {
        return Err(Error::GridMismatch(
            "ensemble, adjoint gains and problem must share a grid".into(),
        ));
    }
    let mean = ensemble.mean();
    let mut worst = 0.0_f64;
    for k in 0..grid.len() {
        let c = problem.coefficients_at_node(k);
        let m = &mean.m[k];
        let ub = &mean.ubar[k];
        let ey = triple.y.apply_mean(k, m);
        let ez = triple.z.apply_mean(k, m);
        let er: Vec<DVector<f64>> = triple.r.iter().map(|g| g.apply_mean(k, m)).collect();
        for p in 0..ensemble.paths() {
            let x = ensemble.state(p, k);
            let u = ensemble.control(p, k);
            let y = triple.y.apply(k, &x, m);
            let z = triple.z.apply(k, &x, m);
            let r: Vec<DVector<f64>> = triple.r.iter().map(|g| g.apply(k, &x, m)).collect();
            let v = stationarity_value(&c, &x, m, &u, ub, &y, &ey, &z, &ez, &r, &er);
            worst = worst.max(max_norm(&v));
        }
    }
    Ok(worst)
}

/// Largest absolute residual of the mean adjoint equation
/// `d E[Y]/dt = -[(A+A_bar)' E[Y] + (C+C_bar)' E[Z] + sum_i lambda_i (E_i+E_bar_i)' E[r_i]
///  + (Q+Q_bar) E[X] + (S+S_bar) E[u]]`, by central differences at interior nodes.
pub fn mean_adjoint_residual(problem: &Problem, tuple: &HamiltonianTuple) -> Result<f64> {
    let grid = problem.grid;
    if tuple.grid != grid {
        return Err(Error::GridMismatch(
            "tuple and problem use different grids".into(),
        ));
    }
    let dt = grid.dt();
    let mut worst = 0.0_f64;
    for k in 1..grid.steps() {
        let c = problem.coefficients_at_node(k);
        let mut driver = (&c.a + &c.a_bar).transpose() * &tuple.mean_y[k]
            + (&c.c + &c.c_bar).transpose() * &tuple.mean_z[k]
            + (&c.q + &c.q_bar) * &tuple.mean_x[k]
            + (&c.s + &c.s_bar) * &tuple.mean_u[k];
        for (i, a) in c.atoms.iter().enumerate() {
            driver += (&a.e + &a.e_bar).transpose() * &tuple.mean_r[k][i] * a.rate;
        }
        let dy = (&tuple.mean_y[k + 1] - &tuple.mean_y[k - 1]) / (2.0 * dt);
        worst = worst.max(max_norm(&(dy + driver)));
    }
    Ok(worst)
}

/// Largest deviation of `Z` and `r_i` in the tuple from `P` times the
/// diffusion and jump amplitudes of the state,
/// `P (C X + C_bar E[X] + D u + D_bar E[u])` and
/// `P (E_i X + E_bar_i E[X] + F_i u + F_bar_i E[u])`. These are the
/// integrands of the martingale part of `Y = P (X - E[X]) + Pi E[X]`.
pub fn martingale_residual(
    problem: &Problem,
    sol: &RiccatiSolution,
    tuple: &HamiltonianTuple,
) -> Result<f64> {
    let grid = problem.grid;
    if tuple.grid != grid || sol.grid() != grid {
        return Err(Error::GridMismatch(
            "tuple, solution and problem must share a grid".into(),
        ));
    }
    let mut worst = 0.0_f64;
    for k in 0..grid.len() {
        let c = problem.coefficients_at_node(k);
        let p = sol.p.node(k);
        let m = &tuple.mean_x[k];
        let ub = &tuple.mean_u[k];
        for q in 0..tuple.paths() {
            let x = &tuple.x[q][k];
            let u = &tuple.u[q][k];
            let z = p * (&c.c * x + &c.c_bar * m + &c.d * u + &c.d_bar * ub);
            worst = worst.max(max_norm(&(&tuple.z[q][k] - z)));
            for (i, a) in c.atoms.iter().enumerate() {
                let r = p * (&a.e * x + &a.e_bar * m + &a.f * u + &a.f_bar * ub);
                worst = worst.max(max_norm(&(&tuple.r[q][k][i] - r)));
            }
        }
    }
    Ok(worst)
}

/// Residual of the terminal condition `Y_T = G X_T + G_bar E[X_T]`.
pub fn terminal_adjoint_residual(problem: &Problem, tuple: &HamiltonianTuple) -> f64 {
    let last = problem.grid.steps();
    let g = &problem.weights.g;
    let gb = &problem.weights.g_bar;
    let m = &tuple.mean_x[last];
    let mut worst = 0.0_f64;
    for p in 0..tuple.paths() {
        let want = g * &tuple.x[p][last] + gb * m;
        worst = worst.max(max_norm(&(&tuple.y[p][last] - want)));
    }
    worst
}

/// Gain schedule of a feedback law as rows `(t, K0 row-major, K1 row-major)`.
pub fn gain_rows(law: &FeedbackLaw) -> Vec<Vec<f64>> {
    let grid = law.grid();
    (0..grid.len())
        .map(|k| {
            let mut row = vec![grid.node(k)];
            row.extend(row_major(law.k0.node(k)));
            row.extend(row_major(law.k1.node(k)));
            row
        })
        .collect()
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::riccati::solve_riccati;

    #[test]
    fn closed_form_gains() {
        let prob = builtin::example_5_1(1.0, 1.0, 200).unwrap();
        let sol = solve_riccati(&prob, 1).unwrap();
        let law = synthesize_feedback(&prob, &sol).unwrap();
        for (k, t) in prob.grid.nodes().enumerate() {
            assert!((law.k0.node(k)[(0, 0)] - 0.5).abs() < 1e-10);
            let want = builtin::closed_form::mean_gain(t, 1.0, 1.0);
            assert!((law.k1.node(k)[(0, 0)] - want).abs() < 1e-8);
        }
    }

    #[test]
    fn value_is_quadratic() {
        let prob = builtin::example_5_1(1.0, 1.0, 50).unwrap();
        let sol = solve_riccati(&prob, 1).unwrap();
        let x = DVector::from_element(1, 0.7);
        let v = optimal_value(&sol, &x);
        assert!((optimal_value(&sol, &(&x * 3.0)) - 9.0 * v).abs() < 1e-14);
        assert_eq!(optimal_value(&sol, &DVector::zeros(1)), 0.0);
    }

    #[test]
    fn adjoint_terminal_gains_are_terminal_weights() {
        let prob = builtin::example_5_2(1.0, 4.0, 50).unwrap();
        let sol = solve_riccati(&prob, 1).unwrap();
        let tr = adjoint_representation(&prob, &sol).unwrap();
        assert_eq!(tr.y.centered.node(50), &prob.weights.g);
        assert_eq!(tr.y.mean.node(50), &(&prob.weights.g + &prob.weights.g_bar));
    }
}
