//! Monte Carlo simulation of the controlled jump diffusion.
//!
//! Expectations entering the dynamics are taken from the deterministic mean
//! equation, so paths are independent given the control and can be
//! simulated in parallel. Path `i` draws from its own ChaCha stream `i`
//! under the base seed; results do not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{bilinear, mean_and_se, quad_form};
use crate::problem::{CostWeights, MatrixPath, Problem, TimeGrid};
use crate::riccati::RiccatiSolution;
use crate::synthesis::FeedbackLaw;

/// Paths per parallel work unit. Fixed so reductions are reproducible.
const CHUNK: usize = 256;

/// `E[X]` and `E[u]` at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanTrajectory {
    pub grid: TimeGrid,
    pub m: Vec<DVector<f64>>,
    pub ubar: Vec<DVector<f64>>,
}

/// A feedback law, a deterministic open-loop offset, or both:
/// `u = -K0 (X - E[X]) - K1 E[X] + v`. Neither gives `u = 0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Control {
    pub law: Option<FeedbackLaw>,
    /// `m x 1` offset, held constant on each grid interval.
    pub offset: Option<MatrixPath>,
}

impl Control {
    pub fn feedback(law: FeedbackLaw) -> Self {
        Control {
            law: Some(law),
            offset: None,
        }
    }

    pub fn zero() -> Self {
        Control::default()
    }

    pub fn open_loop(offset: MatrixPath) -> Self {
        Control {
            law: None,
            offset: Some(offset),
        }
    }

    pub fn with_offset(mut self, offset: MatrixPath) -> Self {
        self.offset = Some(offset);
        self
    }

    fn check(&self, problem: &Problem) -> Result<()> {
        let grid = problem.grid;
        let (n, m) = (problem.n, problem.m);
        if let Some(law) = &self.law {
            if law.grid() != grid {
                return Err(Error::GridMismatch("feedback law grid".into()));
            }
            if law.k0.shape() != (m, n) || law.k1.shape() != (m, n) {
                return Err(Error::ShapeMismatch(format!("feedback gains must be {m}x{n}")));
            }
        }
        if let Some(v) = &self.offset {
            if v.grid() != grid {
                return Err(Error::GridMismatch("control offset grid".into()));
            }
            if v.shape() != (m, 1) {
                return Err(Error::ShapeMismatch(format!("control offset must be {m}x1")));
            }
        }
        Ok(())
    }

    fn gains_at(&self, t: f64, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        match &self.law {
            Some(l) => (l.k0.at(t), l.k1.at(t)),
            None => (DMatrix::zeros(m, n), DMatrix::zeros(m, n)),
        }
    }

    fn gains_node(&self, k: usize, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        match &self.law {
            Some(l) => (l.k0.node(k).clone(), l.k1.node(k).clone()),
            None => (DMatrix::zeros(m, n), DMatrix::zeros(m, n)),
        }
    }

    fn offset_node(&self, k: usize, m: usize) -> DVector<f64> {
        match &self.offset {
            Some(v) => v.node(k).column(0).into_owned(),
            None => DVector::zeros(m),
        }
    }
}

/// Integrates `dm/dt = (A + A_bar) m + (B + B_bar) ubar`,
/// `ubar = -K1 m + v`, forward with RK4 (one step per grid interval).
pub fn solve_mean_ode(problem: &Problem, control: &Control) -> Result<MeanTrajectory> {
    control.check(problem)?;
    let grid = problem.grid;
    let (n, m_dim) = (problem.n, problem.m);
    let dt = grid.dt();
    let d = &problem.dynamics;
    let rhs = |t: f64, x: &DVector<f64>, v: &DVector<f64>| -> DVector<f64> {
        let (_, k1) = control.gains_at(t, n, m_dim);
        let a = d.a.at(t) + d.a_bar.at(t);
        let b = d.b.at(t) + d.b_bar.at(t);
        let ub = -(k1 * x) + v;
        a * x + b * ub
    };
    let mut m = Vec::with_capacity(grid.len());
    let mut x = problem.x0.clone();
    m.push(x.clone());
    for k in 0..grid.steps() {
        let t = grid.node(k);
        let v = control.offset_node(k, m_dim);
        let k1 = rhs(t, &x, &v);
        let k2 = rhs(t + 0.5 * dt, &(&x + &k1 * (0.5 * dt)), &v);
        let k3 = rhs(t + 0.5 * dt, &(&x + &k2 * (0.5 * dt)), &v);
        let k4 = rhs(grid.node(k + 1), &(&x + &k3 * dt), &v);
        x += (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { t: grid.node(k + 1) });
        }
        m.push(x.clone());
    }
    let ubar = (0..grid.len())
        .map(|k| {
            let (_, k1) = control.gains_node(k, n, m_dim);
            -(k1 * &m[k]) + control.offset_node(k, m_dim)
        })
        .collect();
    Ok(MeanTrajectory { grid, m, ubar })
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    crate::synthesis::row_major(m).collect()
}

/// `out = a x + out` for row-major `a`.
#[inline]
fn mv_add(out: &mut [f64], a: &[f64], x: &[f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a[i * cols..(i + 1) * cols];
        let mut s = 0.0;
        for j in 0..cols {
            s += row[j] * x[j];
        }
        *o += s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x' M y` for row-major `M`.
#[inline]
fn bilin(x: &[f64], mtx: &[f64], y: &[f64]) -> f64 {
    let cols = y.len();
    let mut s = 0.0;
    for (i, xi) in x.iter().enumerate() {
        let row = &mtx[i * cols..(i + 1) * cols];
        s += xi * dot(row, y);
    }
    s
}

struct AtomKernel {
    e: Vec<f64>,
    f: Vec<f64>,
    offset: Vec<f64>,
}

/// Everything one Euler step needs at a node, flattened.
struct NodeKernel {
    neg_k0: Vec<f64>,
    u_offset: Vec<f64>,
    /// `A - sum_i lambda_i E_i`.
    a: Vec<f64>,
    /// `B - sum_i lambda_i F_i`.
    b: Vec<f64>,
    drift_offset: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    diffusion_offset: Vec<f64>,
    atoms: Vec<AtomKernel>,
}

struct Kernel {
    grid: TimeGrid,
    n: usize,
    m: usize,
    x0: Vec<f64>,
    nodes: Vec<NodeKernel>,
    poisson: Vec<Poisson<f64>>,
}

impl Kernel {
    fn new(problem: &Problem, control: &Control, mean: &MeanTrajectory) -> Result<Self> {
        control.check(problem)?;
        let grid = problem.grid;
        if mean.grid != grid || mean.m.len() != grid.len() || mean.ubar.len() != grid.len() {
            return Err(Error::GridMismatch("mean trajectory grid".into()));
        }
        let (n, m_dim) = (problem.n, problem.m);
        let dt = grid.dt();
        let mut nodes = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let c = problem.coefficients_at_node(k);
            let (k0, k1) = control.gains_node(k, n, m_dim);
            let mk = &mean.m[k];
            let ub = &mean.ubar[k];
            let u_offset = (&k0 - &k1) * mk + control.offset_node(k, m_dim);
            let mut a = c.a.clone();
            let mut b = c.b.clone();
            let mut drift_offset = &c.a_bar * mk + &c.b_bar * ub;
            let mut atoms = Vec::with_capacity(c.atoms.len());
            for at in &c.atoms {
                let off = &at.e_bar * mk + &at.f_bar * ub;
                a -= &at.e * at.rate;
                b -= &at.f * at.rate;
                drift_offset -= &off * at.rate;
                atoms.push(AtomKernel {
                    e: flat(&at.e),
                    f: flat(&at.f),
                    offset: off.iter().copied().collect(),
                });
            }
            nodes.push(NodeKernel {
                neg_k0: flat(&(-k0)),
                u_offset: u_offset.iter().copied().collect(),
                a: flat(&a),
                b: flat(&b),
                drift_offset: drift_offset.iter().copied().collect(),
                c: flat(&c.c),
                d: flat(&c.d),
                diffusion_offset: (&c.c_bar * mk + &c.d_bar * ub).iter().copied().collect(),
                atoms,
            });
        }
        let poisson = problem
            .jumps
            .atoms
            .iter()
            .map(|a| {
                Poisson::new(a.rate * dt).map_err(|e| Error::Invalid(vec![
                    crate::error::Violation::InvalidValue {
                        field: "jumps.rate".into(),
                        reason: e.to_string(),
                    },
                ]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Kernel {
            grid,
            n,
            m: m_dim,
            x0: problem.x0.iter().copied().collect(),
            nodes,
            poisson,
        })
    }

    fn rng(seed: u64, path: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        rng
    }

    /// Simulates one path into `x`, `x_minus` (both `(M+1) n`) and `u`
    /// (`(M+1) m`).
    fn run(&self, seed: u64, path: usize, x: &mut [f64], x_minus: &mut [f64], u: &mut [f64]) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let dt = self.grid.dt();
        let sqdt = dt.sqrt();
        let mut rng = Self::rng(seed, path);
        x[..n].copy_from_slice(&self.x0);
        x_minus[..n].copy_from_slice(&self.x0);
        let mut drift = vec![0.0; n];
        let mut diff = vec![0.0; n];
        let mut jump = vec![0.0; n];
        let steps = self.grid.steps();
        for k in 0..=steps {
            let nk = &self.nodes[k];
            let (xs, rest) = x.split_at_mut((k + 1) * n);
            let xk = &xs[k * n..];
            let uk = &mut u[k * m..(k + 1) * m];
            uk.copy_from_slice(&nk.u_offset);
            mv_add(uk, &nk.neg_k0, xk);
            if k == steps {
                break;
            }
            let z: f64 = rng.sample(StandardNormal);
            let dw = sqdt * z;
            drift.copy_from_slice(&nk.drift_offset);
            mv_add(&mut drift, &nk.a, xk);
            mv_add(&mut drift, &nk.b, uk);
            diff.copy_from_slice(&nk.diffusion_offset);
            mv_add(&mut diff, &nk.c, xk);
            mv_add(&mut diff, &nk.d, uk);
            let xn = &mut rest[..n];
            for i in 0..n {
                xn[i] = xk[i] + drift[i] * dt + diff[i] * dw;
            }
            x_minus[(k + 1) * n..(k + 2) * n].copy_from_slice(xn);
            for (atom, dist) in nk.atoms.iter().zip(&self.poisson) {
                let count: f64 = dist.sample(&mut rng);
                if count > 0.0 {
                    jump.copy_from_slice(&atom.offset);
                    mv_add(&mut jump, &atom.e, xk);
                    mv_add(&mut jump, &atom.f, uk);
                    for i in 0..n {
                        xn[i] += count * jump[i];
                    }
                }
            }
            if xn.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    t: self.grid.node(k + 1),
                });
            }
        }
        Ok(())
    }
}

/// Per-node weights flattened for pathwise cost evaluation, with the
/// deterministic mean-field part precomputed.
struct CostKernel {
    q: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    g: Vec<f64>,
    /// `dt * (m'Q_bar m + 2 m'S_bar ubar + ubar'R_bar ubar)` summed over
    /// intervals, plus `m_T' G_bar m_T`.
    mean_part: f64,
    dt: f64,
    n: usize,
    m: usize,
}

impl CostKernel {
    fn new(problem: &Problem, weights: &CostWeights, mean: &MeanTrajectory) -> Result<Self> {
        let grid = problem.grid;
        if weights.grid() != grid || weights.r_bar.grid() != grid || weights.s.grid() != grid {
            return Err(Error::GridMismatch("cost weights grid".into()));
        }
        let (n, m) = (problem.n, problem.m);
        if weights.q.shape() != (n, n) || weights.s.shape() != (n, m) || weights.r.shape() != (m, m) || weights.g.shape() != (n, n) {
            return Err(Error::ShapeMismatch("cost weights do not match the problem dimensions".into()));
        }
        let dt = grid.dt();
        let mut mean_part = 0.0;
        for k in 0..grid.steps() {
            let mk = &mean.m[k];
            let ub = &mean.ubar[k];
            mean_part += dt
                * (quad_form(weights.q_bar.node(k), mk)
                    + 2.0 * bilinear(mk, weights.s_bar.node(k), ub)
                    + quad_form(weights.r_bar.node(k), ub));
        }
        mean_part += quad_form(&weights.g_bar, &mean.m[grid.steps()]);
        Ok(CostKernel {
            q: weights.q.samples().iter().map(flat).collect(),
            s: weights.s.samples().iter().map(flat).collect(),
            r: weights.r.samples().iter().map(flat).collect(),
            g: flat(&weights.g),
            mean_part,
            dt,
            n,
            m,
        })
    }

    /// Half of the left-endpoint quadrature of the running cost plus the
    /// terminal cost for one path.
    fn path_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let (n, m) = (self.n, self.m);
        let steps = self.q.len() - 1;
        let mut running = 0.0;
        for k in 0..steps {
            let xk = &x[k * n..(k + 1) * n];
            let uk = &u[k * m..(k + 1) * m];
            running += bilin(xk, &self.q[k], xk) + 2.0 * bilin(xk, &self.s[k], uk) + bilin(uk, &self.r[k], uk);
        }
        let xt = &x[steps * n..(steps + 1) * n];
        0.5 * (running * self.dt + bilin(xt, &self.g, xt) + self.mean_part)
    }
}

/// Stored Monte Carlo sample: for each path and node the state `X_k`, the
/// pre-jump left limit `X_k-` and the control `u_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    n: usize,
    m: usize,
    paths: usize,
    seed: u64,
    x: Vec<f64>,
    x_minus: Vec<f64>,
    u: Vec<f64>,
    mean: MeanTrajectory,
}

impl PathEnsemble {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream id of path `p` under the base seed.
    pub fn stream(&self, p: usize) -> u64 {
        p as u64
    }

    pub fn mean(&self) -> &MeanTrajectory {
        &self.mean
    }

    fn node_slice(buf: &[f64], dim: usize, len: usize, p: usize, k: usize) -> &[f64] {
        let base = (p * len + k) * dim;
        &buf[base..base + dim]
    }

    pub fn state(&self, p: usize, k: usize) -> DVector<f64> {
        DVector::from_column_slice(Self::node_slice(&self.x, self.n, self.grid.len(), p, k))
    }

    pub fn state_minus(&self, p: usize, k: usize) -> DVector<f64> {
        DVector::from_column_slice(Self::node_slice(&self.x_minus, self.n, self.grid.len(), p, k))
    }

    pub fn control(&self, p: usize, k: usize) -> DVector<f64> {
        DVector::from_column_slice(Self::node_slice(&self.u, self.m, self.grid.len(), p, k))
    }

    fn path_x(&self, p: usize) -> &[f64] {
        let w = self.grid.len() * self.n;
        &self.x[p * w..(p + 1) * w]
    }

    fn path_u(&self, p: usize) -> &[f64] {
        let w = self.grid.len() * self.m;
        &self.u[p * w..(p + 1) * w]
    }

    /// States and controls of the first `count` paths in nested form.
    pub fn pair_paths(&self, count: usize) -> crate::equivalence::PairPaths {
        let count = count.min(self.paths);
        let len = self.grid.len();
        crate::equivalence::PairPaths {
            x: (0..count).map(|p| (0..len).map(|k| self.state(p, k)).collect()).collect(),
            u: (0..count).map(|p| (0..len).map(|k| self.control(p, k)).collect()).collect(),
            mean_x: self.mean.m.clone(),
            mean_u: self.mean.ubar.clone(),
        }
    }

    /// Ensemble average of `X` at every node.
    pub fn sample_mean(&self) -> Vec<DVector<f64>> {
        let len = self.grid.len();
        (0..len)
            .map(|k| {
                DVector::from_fn(self.n, |i, _| {
                    let xs: Vec<f64> = (0..self.paths).map(|p| self.x[(p * len + k) * self.n + i]).collect();
                    crate::linalg::pairwise_sum(&xs) / self.paths as f64
                })
            })
            .collect()
    }
}

/// Simulates `paths` paths under `control` and stores them.
pub fn simulate_paths(
    problem: &Problem,
    control: &Control,
    mean: &MeanTrajectory,
    seed: u64,
    paths: usize,
) -> Result<PathEnsemble> {
    let kern = Kernel::new(problem, control, mean)?;
    let len = kern.grid.len();
    let (n, m) = (kern.n, kern.m);
    let mut x = vec![0.0; paths * len * n];
    let mut x_minus = vec![0.0; paths * len * n];
    let mut u = vec![0.0; paths * len * m];
    x.par_chunks_mut(len * n)
        .zip(x_minus.par_chunks_mut(len * n))
        .zip(u.par_chunks_mut(len * m))
        .enumerate()
        .try_for_each(|(p, ((xp, xmp), up))| kern.run(seed, p, xp, xmp, up))?;
    Ok(PathEnsemble {
        grid: kern.grid,
        n,
        m,
        paths,
        seed,
        x,
        x_minus,
        u,
        mean: mean.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub paths: usize,
}

impl CostEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let (mean, standard_error) = mean_and_se(samples);
        CostEstimate {
            mean,
            standard_error,
            paths: samples.len(),
        }
    }
}

/// Monte Carlo estimate of the cost of the stored ensemble under `weights`
/// (the problem's own or a shifted set).
pub fn estimate_cost(problem: &Problem, ensemble: &PathEnsemble, weights: &CostWeights) -> Result<CostEstimate> {
    if ensemble.grid != problem.grid {
        return Err(Error::GridMismatch("ensemble grid".into()));
    }
    Ok(CostEstimate::from_samples(&path_costs(problem, ensemble, weights)?))
}

/// Per-path costs of a stored ensemble, in path order.
pub fn path_costs(problem: &Problem, ensemble: &PathEnsemble, weights: &CostWeights) -> Result<Vec<f64>> {
    if ensemble.grid != problem.grid {
        return Err(Error::GridMismatch("ensemble grid".into()));
    }
    let ck = CostKernel::new(problem, weights, &ensemble.mean)?;
    Ok((0..ensemble.paths)
        .into_par_iter()
        .map(|p| ck.path_cost(ensemble.path_x(p), ensemble.path_u(p)))
        .collect())
}

/// Result of a streaming simulation: per-path costs for each requested
/// weight set and per-node sample moments of `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub paths: usize,
    /// `costs[w][p]`: cost of path `p` under weight set `w`.
    pub costs: Vec<Vec<f64>>,
    pub sample_mean: Vec<DVector<f64>>,
    pub sample_std: Vec<DVector<f64>>,
    pub mean: MeanTrajectory,
}

impl SimulationSummary {
    pub fn estimate(&self, w: usize) -> CostEstimate {
        CostEstimate::from_samples(&self.costs[w])
    }

    /// Largest `|sample mean - m| / (std / sqrt(N))` over nodes and
    /// components; zero-variance components count only if they disagree.
    pub fn mean_consistency(&self) -> f64 {
        let sq = (self.paths as f64).sqrt();
        let mut worst = 0.0_f64;
        for k in 0..self.sample_mean.len() {
            for i in 0..self.sample_mean[k].len() {
                let gap = (self.sample_mean[k][i] - self.mean.m[k][i]).abs();
                let se = self.sample_std[k][i] / sq;
                let z = if se > 0.0 {
                    gap / se
                } else if gap > 1e-12 {
                    f64::INFINITY
                } else {
                    0.0
                };
                worst = worst.max(z);
            }
        }
        worst
    }
}

struct ChunkResult {
    costs: Vec<Vec<f64>>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

/// Simulates without storing paths, evaluating each weight set on every
/// path. Costs are bit-identical to [`path_costs`] on the stored ensemble
/// with the same seed.
pub fn simulate_summary(
    problem: &Problem,
    control: &Control,
    mean: &MeanTrajectory,
    seed: u64,
    paths: usize,
    weights: &[&CostWeights],
) -> Result<SimulationSummary> {
    let kern = Kernel::new(problem, control, mean)?;
    let cks = weights
        .iter()
        .map(|w| CostKernel::new(problem, w, mean))
        .collect::<Result<Vec<_>>>()?;
    let len = kern.grid.len();
    let (n, m) = (kern.n, kern.m);
    let chunks = paths.div_ceil(CHUNK);
    let results = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<ChunkResult> {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(paths);
            let mut x = vec![0.0; len * n];
            let mut xm = vec![0.0; len * n];
            let mut u = vec![0.0; len * m];
            let mut out = ChunkResult {
                costs: vec![Vec::with_capacity(hi - lo); cks.len()],
                sum: vec![0.0; len * n],
                sum_sq: vec![0.0; len * n],
            };
            for p in lo..hi {
                kern.run(seed, p, &mut x, &mut xm, &mut u)?;
                for (w, ck) in cks.iter().enumerate() {
                    out.costs[w].push(ck.path_cost(&x, &u));
                }
                for (i, v) in x.iter().enumerate() {
                    out.sum[i] += v;
                    out.sum_sq[i] += v * v;
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut costs = vec![Vec::with_capacity(paths); cks.len()];
    let mut sum = vec![0.0; len * n];
    let mut sum_sq = vec![0.0; len * n];
    for r in results {
        for (w, c) in r.costs.into_iter().enumerate() {
            costs[w].extend(c);
        }
        for i in 0..sum.len() {
            sum[i] += r.sum[i];
            sum_sq[i] += r.sum_sq[i];
        }
    }
    let nf = paths as f64;
    let sample_mean = (0..len)
        .map(|k| DVector::from_fn(n, |i, _| sum[k * n + i] / nf))
        .collect::<Vec<_>>();
    let sample_std = (0..len)
        .map(|k| {
            DVector::from_fn(n, |i, _| {
                let mu = sum[k * n + i] / nf;
                let var = (sum_sq[k * n + i] - nf * mu * mu) / (nf - 1.0).max(1.0);
                var.max(0.0).sqrt()
            })
        })
        .collect();
    Ok(SimulationSummary {
        paths,
        costs,
        sample_mean,
        sample_std,
        mean: mean.clone(),
    })
}

/// Cost estimate of explicit `(X, u)` samples with their means, by the same
/// quadrature as [`estimate_cost`].
pub fn pair_cost(problem: &Problem, pair: &crate::equivalence::PairPaths, weights: &CostWeights) -> Result<CostEstimate> {
    let grid = problem.grid;
    let mean = MeanTrajectory {
        grid,
        m: pair.mean_x.clone(),
        ubar: pair.mean_u.clone(),
    };
    let ck = CostKernel::new(problem, weights, &mean)?;
    let costs: Vec<f64> = pair
        .x
        .iter()
        .zip(&pair.u)
        .map(|(xs, us)| {
            let x: Vec<f64> = xs.iter().flat_map(|v| v.iter().copied()).collect();
            let u: Vec<f64> = us.iter().flat_map(|v| v.iter().copied()).collect();
            ck.path_cost(&x, &u)
        })
        .collect();
    Ok(CostEstimate::from_samples(&costs))
}

/// Expected value of the per-path cost estimator under the Euler scheme,
/// computed from the exact recursion of the first and second moments of
/// the discretized state. This is the `N -> infinity` limit of
/// [`estimate_cost`] at the same grid, without sampling error.
pub fn euler_expected_cost(
    problem: &Problem,
    control: &Control,
    mean: &MeanTrajectory,
    weights: &CostWeights,
) -> Result<f64> {
    control.check(problem)?;
    let grid = problem.grid;
    if mean.grid != grid || weights.grid() != grid {
        return Err(Error::GridMismatch("mean trajectory or weights grid".into()));
    }
    let (n, m_dim) = (problem.n, problem.m);
    let dt = grid.dt();
    let ck = CostKernel::new(problem, weights, mean)?;
    let mut mu = problem.x0.clone();
    let mut second = &mu * mu.transpose();
    // E[(P X + p)(Q X + q)'] for the current moments.
    let cross = |mu: &DVector<f64>, s: &DMatrix<f64>, pm: &DMatrix<f64>, pv: &DVector<f64>, qm: &DMatrix<f64>, qv: &DVector<f64>| {
        pm * s * qm.transpose() + pm * mu * qv.transpose() + pv * (qm * mu).transpose() + pv * qv.transpose()
    };
    let mut running = 0.0;
    for k in 0..grid.len() {
        let c = problem.coefficients_at_node(k);
        let (k0, k1) = control.gains_node(k, n, m_dim);
        let mk = &mean.m[k];
        let ub = &mean.ubar[k];
        let gain = -&k0;
        let u_off = (&k0 - &k1) * mk + control.offset_node(k, m_dim);
        if k == grid.steps() {
            running *= dt;
            let g = &weights.g;
            return Ok(0.5 * (running + (g * &second).trace() + ck.mean_part));
        }
        let q = weights.q.node(k);
        let sw = weights.s.node(k);
        let r = weights.r.node(k);
        running += (q * &second).trace()
            + 2.0 * ((sw * &gain * &second).trace() + mu.dot(&(sw * &u_off)))
            + (gain.transpose() * r * &gain * &second).trace()
            + 2.0 * mu.dot(&(gain.transpose() * r * &u_off))
            + u_off.dot(&(r * &u_off));

        let mut a = c.a.clone();
        let mut b = c.b.clone();
        let mut off = &c.a_bar * mk + &c.b_bar * ub;
        let mut jumps = Vec::with_capacity(c.atoms.len());
        for at in &c.atoms {
            a -= &at.e * at.rate;
            b -= &at.f * at.rate;
            let jo = &at.f * &u_off + &at.e_bar * mk + &at.f_bar * ub;
            off -= &(&at.e_bar * mk + &at.f_bar * ub) * at.rate;
            jumps.push((at.rate * dt, &at.e - &at.f * &k0, jo));
        }
        let lin = DMatrix::identity(n, n) + (&a - &b * &k0) * dt;
        let lin_off = (&b * &u_off + off) * dt;
        let wm = &c.c - &c.d * &k0;
        let wv = &c.d * &u_off + &c.c_bar * mk + &c.d_bar * ub;

        let mut next_second = cross(&mu, &second, &lin, &lin_off, &lin, &lin_off)
            + cross(&mu, &second, &wm, &wv, &wm, &wv) * dt;
        let mut next_mu = &lin * &mu + &lin_off;
        for (i, (rate_dt, jm, jv)) in jumps.iter().enumerate() {
            let lj = cross(&mu, &second, &lin, &lin_off, jm, jv);
            next_second += (&lj + lj.transpose()) * *rate_dt;
            next_second += cross(&mu, &second, jm, jv, jm, jv) * (rate_dt + rate_dt * rate_dt);
            for (j, (rate_dt2, jm2, jv2)) in jumps.iter().enumerate() {
                if i != j {
                    next_second += cross(&mu, &second, jm, jv, jm2, jv2) * (rate_dt * rate_dt2);
                }
            }
            next_mu += (jm * &mu + jv) * *rate_dt;
        }
        mu = next_mu;
        second = next_second;
    }
    unreachable!("the loop returns at the terminal node")
}

/// Random open-loop direction: piecewise constant on `segments` equal
/// pieces of `[0, T]`, entries uniform on `[-1, 1]`, scaled to unit
/// `L^2` norm under the left-endpoint rule.
pub fn random_direction(grid: TimeGrid, m: usize, segments: usize, rng: &mut impl Rng) -> MatrixPath {
    let segments = segments.clamp(1, grid.steps());
    let levels: Vec<DVector<f64>> = (0..segments)
        .map(|_| DVector::from_fn(m, |_, _| rng.random_range(-1.0..=1.0)))
        .collect();
    let seg_of = |k: usize| ((k * segments) / grid.steps()).min(segments - 1);
    let raw: Vec<DVector<f64>> = (0..grid.len()).map(|k| levels[seg_of(k)].clone()).collect();
    let norm2: f64 = raw[..grid.steps()].iter().map(|v| v.norm_squared()).sum::<f64>() * grid.dt();
    let scale = if norm2 > 0.0 { 1.0 / norm2.sqrt() } else { 0.0 };
    MatrixPath::new(grid, raw.into_iter().map(|v| DMatrix::from_column_slice(m, 1, (v * scale).as_slice())).collect())
        .expect("direction samples match the grid")
}

/// Stream used for the perturbation directions, disjoint from path streams.
const DIRECTION_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationRecord {
    pub direction: usize,
    pub epsilon: f64,
    /// Estimated `J[u* + eps v] - J[u*]` under common random numbers.
    pub delta: f64,
    pub standard_error: f64,
    /// `eps^2 / 2 * int v' Sigma1 v dt`, the exact increment for the
    /// continuous-time problem.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRecord {
    pub direction: usize,
    pub epsilon: f64,
    /// `delta(eps) / delta(eps / 2)`; `None` when `delta(eps) < 10 SE`.
    pub ratio: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub base: CostEstimate,
    pub records: Vec<PerturbationRecord>,
    pub ratios: Vec<RatioRecord>,
    /// Every increment is at least `-3 SE`.
    pub nonnegative: bool,
    pub pass: bool,
}

/// Settings of [`perturbation_test`].
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationConfig {
    pub directions: usize,
    pub epsilons: Vec<f64>,
    pub segments: usize,
    pub seed: u64,
    pub paths: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            directions: 8,
            epsilons: vec![0.4, 0.2],
            segments: 8,
            seed: 42,
            paths: 100_000,
        }
    }
}

/// Empirical optimality check: perturbs `law` by `eps v` for random
/// deterministic directions `v` and compares costs under common random
/// numbers. A minimizer shows increments that are nonnegative and
/// quadratic in `eps`.
pub fn perturbation_test(
    problem: &Problem,
    law: &FeedbackLaw,
    sol: &RiccatiSolution,
    cfg: &PerturbationConfig,
) -> Result<PerturbationReport> {
    let grid = problem.grid;
    let base_control = Control::feedback(law.clone());
    let base_mean = solve_mean_ode(problem, &base_control)?;
    let base = simulate_summary(problem, &base_control, &base_mean, cfg.seed, cfg.paths, &[&problem.weights])?;
    let base_costs = &base.costs[0];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(DIRECTION_STREAM);
    let mut records = Vec::new();
    let mut ratios = Vec::new();
    for d in 0..cfg.directions {
        let v = random_direction(grid, problem.m, cfg.segments, &mut rng);
        let mut deltas = Vec::with_capacity(cfg.epsilons.len());
        for &eps in &cfg.epsilons {
            let offset = v.map(|s| s * eps);
            let predicted = 0.5
                * grid.dt()
                * (0..grid.steps())
                    .map(|k| quad_form(sol.sigma1.node(k), &offset.node(k).column(0).into_owned()))
                    .sum::<f64>();
            let control = base_control.clone().with_offset(offset);
            let mean = solve_mean_ode(problem, &control)?;
            let run = simulate_summary(problem, &control, &mean, cfg.seed, cfg.paths, &[&problem.weights])?;
            let diff: Vec<f64> = run.costs[0].iter().zip(base_costs).map(|(a, b)| a - b).collect();
            let (delta, se) = mean_and_se(&diff);
            deltas.push((eps, delta, se));
            records.push(PerturbationRecord {
                direction: d,
                epsilon: eps,
                delta,
                standard_error: se,
                predicted,
            });
        }
        for (i, &(eps, delta, se)) in deltas.iter().enumerate() {
            let half = deltas[i + 1..].iter().find(|(e, _, _)| (e * 2.0 - eps).abs() <= 1e-12 * eps.abs());
            if let Some(&(_, dh, _)) = half {
                let ratio = (delta >= 10.0 * se).then(|| delta / dh);
                let pass = ratio.is_none_or(|r| (3.5..=4.5).contains(&r));
                ratios.push(RatioRecord {
                    direction: d,
                    epsilon: eps,
                    ratio,
                    pass,
                });
            }
        }
    }
    let nonnegative = records.iter().all(|r| r.delta >= -3.0 * r.standard_error);
    let pass = nonnegative && ratios.iter().all(|r| r.pass);
    Ok(PerturbationReport {
        base: base.estimate(0),
        records,
        ratios,
        nonnegative,
        pass,
    })
}
