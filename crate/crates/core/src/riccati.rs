//! Backward integration of the coupled Riccati pair for `P` (centered part)
//! and `Pi` (mean part), plus the effective control weights and
//! a-posteriori residuals.

use nalgebra::DMatrix;

use crate::error::{Error, Result, SigmaKind};
use crate::linalg::{condition_number, max_abs, negative_count, solve, symmetrize, CONDITION_GUARD};
use crate::problem::{Coefficients, MatrixPath, Problem, TimeGrid};

/// Coefficient bundle entering one Riccati right-hand side.
///
/// The centered bundle holds `(A, B, C, D, E_i, F_i; Q, R, S)`; the mean
/// bundle holds the summed coefficients `(A + A_bar, ..., S + S_bar)`.
#[derive(Debug, Clone)]
pub struct RiccatiBundle {
    pub t: f64,
    pub kind: SigmaKind,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// `(rate, E_i, F_i)` per atom.
    pub jumps: Vec<(f64, DMatrix<f64>, DMatrix<f64>)>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl RiccatiBundle {
    pub fn centered(c: &Coefficients, t: f64) -> Self {
        RiccatiBundle {
            t,
            kind: SigmaKind::Centered,
            a: c.a.clone(),
            b: c.b.clone(),
            c: c.c.clone(),
            d: c.d.clone(),
            jumps: c
                .atoms
                .iter()
                .map(|a| (a.rate, a.e.clone(), a.f.clone()))
                .collect(),
            q: c.q.clone(),
            r: c.r.clone(),
            s: c.s.clone(),
        }
    }

    pub fn mean(c: &Coefficients, t: f64) -> Self {
        RiccatiBundle {
            t,
            kind: SigmaKind::Mean,
            a: &c.a + &c.a_bar,
            b: &c.b + &c.b_bar,
            c: &c.c + &c.c_bar,
            d: &c.d + &c.d_bar,
            jumps: c
                .atoms
                .iter()
                .map(|a| (a.rate, &a.e + &a.e_bar, &a.f + &a.f_bar))
                .collect(),
            q: &c.q + &c.q_bar,
            r: &c.r + &c.r_bar,
            s: &c.s + &c.s_bar,
        }
    }

    /// `R + D' P D + sum_i lambda_i F_i' P F_i`, symmetrized.
    pub fn sigma(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.r + self.d.transpose() * p * &self.d;
        for (rate, _, f) in &self.jumps {
            out += f.transpose() * p * f * *rate;
        }
        symmetrize(&out)
    }

    /// `S + P_drift B + C' P D + sum_i lambda_i E_i' P F_i` (n x m).
    pub fn cross(&self, drift_p: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.s + drift_p * &self.b + self.c.transpose() * p * &self.d;
        for (rate, e, f) in &self.jumps {
            out += e.transpose() * p * f * *rate;
        }
        out
    }

    /// `P_drift A + A' P_drift + C' P C + sum_i lambda_i E_i' P E_i + Q`.
    pub fn linear(&self, drift_p: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = drift_p * &self.a
            + self.a.transpose() * drift_p
            + self.c.transpose() * p * &self.c
            + &self.q;
        for (rate, e, _) in &self.jumps {
            out += e.transpose() * p * e * *rate;
        }
        out
    }

    /// `sigma^{-1} cross'`, the feedback gain, together with the condition
    /// number of `sigma`.
    pub fn gain(&self, drift_p: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
        let sigma = self.sigma(p);
        let cross = self.cross(drift_p, p);
        guarded_solve(&sigma, &cross.transpose(), self.t, self.kind)
    }
}

/// Solves `sigma x = rhs` after checking the conditioning of `sigma`.
pub(crate) fn guarded_solve(
    sigma: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    t: f64,
    which: SigmaKind,
) -> Result<(DMatrix<f64>, f64)> {
    let condition = condition_number(sigma);
    if condition.is_nan() || condition > CONDITION_GUARD {
        return Err(Error::SigmaSingular {
            t,
            which,
            condition,
        });
    }
    let x = solve(sigma, rhs).ok_or(Error::SigmaSingular {
        t,
        which,
        condition,
    })?;
    Ok((x, condition))
}

/// The function whose zero defines each Riccati equation:
/// `linear - cross sigma^{-1} cross'`, with `P` in every slot.
pub fn g_function(bundle: &RiccatiBundle, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    g_coupled(bundle, p, p)
}

/// As [`g_function`], but with `drift_p` multiplying `A` and `B` while `p`
/// multiplies the diffusion and jump coefficients. The mean equation uses
/// `drift_p = Pi`.
pub fn g_coupled(
    bundle: &RiccatiBundle,
    drift_p: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    Ok(g_with_condition(bundle, drift_p, p)?.0)
}

fn g_with_condition(
    bundle: &RiccatiBundle,
    drift_p: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, f64)> {
    let cross = bundle.cross(drift_p, p);
    let (gain, cond) = guarded_solve(&bundle.sigma(p), &cross.transpose(), bundle.t, bundle.kind)?;
    Ok((symmetrize(&(bundle.linear(drift_p, p) - cross * gain)), cond))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPair {
    pub sigma0: DMatrix<f64>,
    pub sigma1: DMatrix<f64>,
}

/// Effective control weights at time `t` for a given `P`.
pub fn sigma_pair(problem: &Problem, p: &DMatrix<f64>, t: f64) -> SigmaPair {
    let c = problem.coefficients_at(t);
    SigmaPair {
        sigma0: RiccatiBundle::centered(&c, t).sigma(p),
        sigma1: RiccatiBundle::mean(&c, t).sigma(p),
    }
}

/// Time derivatives `(dP/dt, dPi/dt)` prescribed by the Riccati pair.
pub fn riccati_rhs(
    problem: &Problem,
    p: &DMatrix<f64>,
    pi: &DMatrix<f64>,
    t: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let c = problem.coefficients_at(t);
    let (gp, gpi, _) = stage(&Bundles::new(&c, t), p, pi)?;
    Ok((-gp, -gpi))
}

struct Bundles {
    centered: RiccatiBundle,
    mean: RiccatiBundle,
}

impl Bundles {
    fn new(c: &Coefficients, t: f64) -> Self {
        Bundles {
            centered: RiccatiBundle::centered(c, t),
            mean: RiccatiBundle::mean(c, t),
        }
    }
}

fn sigma_inertia(b: &Bundles, p: &DMatrix<f64>) -> (usize, usize) {
    (negative_count(&b.centered.sigma(p)), negative_count(&b.mean.sigma(p)))
}

/// `(dP/ds, dPi/ds, max condition)` in reversed time `s = T - t`.
fn stage(
    b: &Bundles,
    p: &DMatrix<f64>,
    pi: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let (gp, c0) = g_with_condition(&b.centered, p, p)?;
    let (gpi, c1) = g_with_condition(&b.mean, pi, p)?;
    Ok((gp, gpi, c0.max(c1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct SolverStats {
    pub steps: usize,
    pub max_condition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: MatrixPath,
    pub pi: MatrixPath,
    pub sigma0: MatrixPath,
    pub sigma1: MatrixPath,
    pub stats: SolverStats,
}

impl RiccatiSolution {
    pub fn grid(&self) -> TimeGrid {
        self.p.grid()
    }

    /// Assembles a solution from node values of `P` and `Pi`, recomputing the
    /// effective control weights against `problem`.
    pub fn from_paths(
        problem: &Problem,
        p: MatrixPath,
        pi: MatrixPath,
        stats: SolverStats,
    ) -> Result<Self> {
        if p.grid() != problem.grid || pi.grid() != problem.grid {
            return Err(Error::GridMismatch(
                "solution paths are not on the problem grid".into(),
            ));
        }
        let grid = problem.grid;
        let mut s0 = Vec::with_capacity(grid.len());
        let mut s1 = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let c = problem.coefficients_at_node(k);
            let t = grid.node(k);
            s0.push(RiccatiBundle::centered(&c, t).sigma(p.node(k)));
            s1.push(RiccatiBundle::mean(&c, t).sigma(p.node(k)));
        }
        Ok(RiccatiSolution {
            sigma0: MatrixPath::new(grid, s0)?,
            sigma1: MatrixPath::new(grid, s1)?,
            p,
            pi,
            stats,
        })
    }
}

fn check_finite(m: &DMatrix<f64>, t: f64) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { t })
    }
}

/// Integrates the Riccati pair backward from `P(T) = G`, `Pi(T) = G + G_bar`
/// with classical RK4, `substeps` steps per grid interval, `P` and `Pi`
/// stepped jointly.
///
/// Fails with [`Error::SigmaSingular`] when either Sigma matrix is too
/// ill-conditioned at a stage, or when its inertia changes between two
/// steps (an eigenvalue crossed zero between samples).
pub fn solve_riccati(problem: &Problem, substeps: usize) -> Result<RiccatiSolution> {
    let substeps = substeps.max(1);
    let grid = problem.grid;
    let m_steps = grid.steps();
    let g = problem.weights.g.clone();
    let gg = &problem.weights.g + &problem.weights.g_bar;

    let mut p_nodes = vec![DMatrix::zeros(0, 0); grid.len()];
    let mut pi_nodes = vec![DMatrix::zeros(0, 0); grid.len()];
    p_nodes[m_steps] = g.clone();
    pi_nodes[m_steps] = gg.clone();

    let mut p = symmetrize(&g);
    let mut pi = symmetrize(&gg);
    let mut max_condition = 0.0_f64;
    let dt = grid.dt();
    let h = dt / substeps as f64;
    // A change in the inertia of either Sigma between steps means an
    // eigenvalue crossed zero, and the true solution hit a pole in between.
    let terminal = Bundles::new(&problem.coefficients_at_node(m_steps), grid.horizon());
    let mut inertia = sigma_inertia(&terminal, &p);

    for k in (0..m_steps).rev() {
        let t_hi = grid.node(k + 1);
        let mut upper = Bundles::new(&problem.coefficients_at_node(k + 1), t_hi);
        for j in 0..substeps {
            let t = t_hi - j as f64 * h;
            let t_mid = t - 0.5 * h;
            let (t_lo, lower) = if j + 1 == substeps {
                let t_lo = grid.node(k);
                (t_lo, Bundles::new(&problem.coefficients_at_node(k), t_lo))
            } else {
                let t_lo = t - h;
                (t_lo, Bundles::new(&problem.coefficients_at(t_lo), t_lo))
            };
            let mid = Bundles::new(&problem.coefficients_at(t_mid), t_mid);

            let (k1p, k1q, c1) = stage(&upper, &p, &pi)?;
            let p2 = symmetrize(&(&p + &k1p * (0.5 * h)));
            let q2 = symmetrize(&(&pi + &k1q * (0.5 * h)));
            let (k2p, k2q, c2) = stage(&mid, &p2, &q2)?;
            let p3 = symmetrize(&(&p + &k2p * (0.5 * h)));
            let q3 = symmetrize(&(&pi + &k2q * (0.5 * h)));
            let (k3p, k3q, c3) = stage(&mid, &p3, &q3)?;
            let p4 = symmetrize(&(&p + &k3p * h));
            let q4 = symmetrize(&(&pi + &k3q * h));
            let (k4p, k4q, c4) = stage(&lower, &p4, &q4)?;

            p = symmetrize(&(&p + (k1p + (k2p + k3p) * 2.0 + k4p) * (h / 6.0)));
            pi = symmetrize(&(&pi + (k1q + (k2q + k3q) * 2.0 + k4q) * (h / 6.0)));
            check_finite(&p, t_lo)?;
            check_finite(&pi, t_lo)?;
            let now = sigma_inertia(&lower, &p);
            if now != inertia {
                let which = if now.0 != inertia.0 { SigmaKind::Centered } else { SigmaKind::Mean };
                return Err(Error::SigmaSingular {
                    t: t_lo,
                    which,
                    condition: f64::INFINITY,
                });
            }
            inertia = now;
            max_condition = max_condition.max(c1).max(c2).max(c3).max(c4);
            upper = lower;
        }
        p_nodes[k] = p.clone();
        pi_nodes[k] = pi.clone();
    }

    let stats = SolverStats {
        steps: m_steps * substeps,
        max_condition,
    };
    let sol = RiccatiSolution::from_paths(
        problem,
        MatrixPath::new(grid, p_nodes)?,
        MatrixPath::new(grid, pi_nodes)?,
        stats,
    )?;
    // Node k = 0 sigma values were never seen by a stage when M*substeps
    // integration ends there, so fold them into the statistic.
    let mut stats = sol.stats;
    for k in 0..grid.len() {
        stats.max_condition = stats
            .max_condition
            .max(condition_number(sol.sigma0.node(k)))
            .max(condition_number(sol.sigma1.node(k)));
    }
    Ok(RiccatiSolution { stats, ..sol })
}

/// Maximum absolute residuals of the Riccati pair along `sol`, using central
/// differences at interior nodes.
pub fn riccati_residual(problem: &Problem, sol: &RiccatiSolution) -> Result<(f64, f64)> {
    let grid = problem.grid;
    if sol.grid() != grid {
        return Err(Error::GridMismatch(
            "solution is not on the problem grid".into(),
        ));
    }
    let dt = grid.dt();
    let mut res_p = 0.0_f64;
    let mut res_pi = 0.0_f64;
    for k in 1..grid.steps() {
        let t = grid.node(k);
        let c = problem.coefficients_at_node(k);
        let (gp, gpi, _) = stage(&Bundles::new(&c, t), sol.p.node(k), sol.pi.node(k))?;
        let dp = (sol.p.node(k + 1) - sol.p.node(k - 1)) / (2.0 * dt);
        let dpi = (sol.pi.node(k + 1) - sol.pi.node(k - 1)) / (2.0 * dt);
        res_p = res_p.max(max_abs(&(dp + gp)));
        res_pi = res_pi.max(max_abs(&(dpi + gpi)));
    }
    Ok((res_p, res_pi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    #[test]
    fn sigma_pair_vanishing_p_returns_control_weights() {
        let prob = builtin::example_5_1(1.0, 1.0, 20).unwrap();
        let z = DMatrix::zeros(1, 1);
        let sp = sigma_pair(&prob, &z, 0.3);
        assert_eq!(sp.sigma0[(0, 0)], -4.0);
        assert_eq!(sp.sigma1[(0, 0)], -2.0);
    }

    #[test]
    fn singular_sigma_is_an_error() {
        // P = 1 makes sigma0 = -4 + 4P vanish in the closed-form example.
        let prob = builtin::example_5_1(1.0, 1.0, 20).unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        let err = riccati_rhs(&prob, &one, &one, 0.5).unwrap_err();
        assert!(matches!(
            err,
            Error::SigmaSingular {
                which: SigmaKind::Centered,
                ..
            }
        ));
    }

    #[test]
    fn terminal_samples_are_exact() {
        let prob = builtin::example_5_1(1.0, 0.7, 50).unwrap();
        let sol = solve_riccati(&prob, 1).unwrap();
        assert_eq!(sol.p.node(50), &prob.weights.g);
        assert_eq!(
            sol.pi.node(50),
            &(&prob.weights.g + &prob.weights.g_bar)
        );
        assert_eq!(sol.stats.steps, 50);
    }
}
