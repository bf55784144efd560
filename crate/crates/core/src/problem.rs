//! Problem instances: time grid, sampled coefficient paths, the atomic jump
//! measure, cost weights, validation and the standard definiteness check.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result, Violation};
use crate::linalg::{min_eigenvalue, relative_asymmetry, solve};

/// Relative tolerance for the symmetry of weight matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Default tolerance for the `>= 0` eigenvalue conditions.
pub const DEFAULT_EIG_TOL: f64 = 1e-10;

/// Uniform grid `t_k = k T / M`, `k = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        let mut v = Vec::new();
        if !(horizon.is_finite() && horizon > 0.0) {
            v.push(Violation::InvalidValue {
                field: "grid.horizon".into(),
                reason: format!("must be positive and finite, got {horizon}"),
            });
        }
        if steps < 2 {
            v.push(Violation::InvalidValue {
                field: "grid.steps".into(),
                reason: format!("must be at least 2, got {steps}"),
            });
        }
        if v.is_empty() {
            Ok(TimeGrid { horizon, steps })
        } else {
            Err(Error::Invalid(v))
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.node(k))
    }

    /// Interval index and interpolation weight for `t`, clamped to
    /// `[0, T]`. Times within `1e-9` steps of a node snap to that node with
    /// weight zero.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let s = (t / self.horizon * self.steps as f64).clamp(0.0, self.steps as f64);
        let r = s.round();
        if (s - r).abs() <= 1e-9 {
            return (r as usize, 0.0);
        }
        let k = s.floor() as usize;
        (k, s - k as f64)
    }

    /// Grid with every interval split in two.
    pub fn refined(&self) -> TimeGrid {
        TimeGrid {
            horizon: self.horizon,
            steps: self.steps * 2,
        }
    }
}

/// Matrix-valued function of time stored as samples on a grid, evaluated by
/// piecewise-linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPath {
    grid: TimeGrid,
    rows: usize,
    cols: usize,
    samples: Vec<DMatrix<f64>>,
}

impl MatrixPath {
    pub fn new(grid: TimeGrid, samples: Vec<DMatrix<f64>>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} samples, found {}",
                grid.len(),
                samples.len()
            )));
        }
        let (rows, cols) = samples[0].shape();
        if let Some((k, m)) = samples
            .iter()
            .enumerate()
            .find(|(_, m)| m.shape() != (rows, cols))
        {
            return Err(Error::ShapeMismatch(format!(
                "sample {k} is {}x{}, expected {rows}x{cols}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(MatrixPath {
            grid,
            rows,
            cols,
            samples,
        })
    }

    pub fn constant(grid: TimeGrid, value: DMatrix<f64>) -> Self {
        let (rows, cols) = value.shape();
        MatrixPath {
            grid,
            rows,
            cols,
            samples: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: TimeGrid, rows: usize, cols: usize) -> Self {
        Self::constant(grid, DMatrix::zeros(rows, cols))
    }

    pub fn scalar(grid: TimeGrid, value: f64) -> Self {
        Self::constant(grid, DMatrix::from_element(1, 1, value))
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(f64) -> DMatrix<f64>) -> Self {
        let samples: Vec<_> = grid.nodes().map(&mut f).collect();
        let (rows, cols) = samples[0].shape();
        MatrixPath {
            grid,
            rows,
            cols,
            samples,
        }
    }

    pub fn scalar_fn(grid: TimeGrid, mut f: impl FnMut(f64) -> f64) -> Self {
        Self::from_fn(grid, |t| DMatrix::from_element(1, 1, f(t)))
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }

    pub fn node(&self, k: usize) -> &DMatrix<f64> {
        &self.samples[k]
    }

    pub fn at(&self, t: f64) -> DMatrix<f64> {
        let (k, w) = self.grid.locate(t);
        if w == 0.0 {
            return self.samples[k].clone();
        }
        &self.samples[k] * (1.0 - w) + &self.samples[k + 1] * w
    }

    pub fn map(&self, mut f: impl FnMut(&DMatrix<f64>) -> DMatrix<f64>) -> MatrixPath {
        Self::from_samples_unchecked(self.grid, self.samples.iter().map(&mut f).collect())
    }

    pub fn zip_with(
        &self,
        other: &MatrixPath,
        mut f: impl FnMut(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>,
    ) -> Result<MatrixPath> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("paths live on different grids".into()));
        }
        Ok(Self::from_samples_unchecked(
            self.grid,
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| f(a, b))
                .collect(),
        ))
    }

    pub(crate) fn from_samples_unchecked(grid: TimeGrid, samples: Vec<DMatrix<f64>>) -> Self {
        let (rows, cols) = samples[0].shape();
        MatrixPath {
            grid,
            rows,
            cols,
            samples,
        }
    }

    /// Copy sampled on a different grid by interpolation.
    pub fn resample(&self, grid: TimeGrid) -> MatrixPath {
        let mut grid = grid;
        grid.horizon = self.grid.horizon;
        MatrixPath::from_fn(grid, |t| self.at(t))
    }
}

/// One atom `lambda * delta_theta` of the jump measure with its
/// mark-dependent coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpAtom {
    pub rate: f64,
    pub mark: f64,
    pub e: MatrixPath,
    pub e_bar: MatrixPath,
    pub f: MatrixPath,
    pub f_bar: MatrixPath,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JumpMeasure {
    pub atoms: Vec<JumpAtom>,
}

impl JumpMeasure {
    pub fn empty() -> Self {
        JumpMeasure { atoms: Vec::new() }
    }

    pub fn total_rate(&self) -> f64 {
        self.atoms.iter().map(|a| a.rate).sum()
    }
}

/// Which per-atom coefficient (or sum) enters a jump integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    E,
    EBar,
    ESum,
    F,
    FBar,
    FSum,
}

impl Selector {
    fn pick(self, atom: &AtomCoefficients) -> DMatrix<f64> {
        match self {
            Selector::E => atom.e.clone(),
            Selector::EBar => atom.e_bar.clone(),
            Selector::ESum => &atom.e + &atom.e_bar,
            Selector::F => atom.f.clone(),
            Selector::FBar => atom.f_bar.clone(),
            Selector::FSum => &atom.f + &atom.f_bar,
        }
    }
}

/// `sum_i lambda_i L_i(t)' P R_i(t)`: the jump-measure integral of a
/// bilinear form for an atomic measure. `control_dim` fixes the shape of the
/// (zero) result when the measure has no atoms.
pub fn jump_bilinear(
    jumps: &JumpMeasure,
    left: Selector,
    p: &DMatrix<f64>,
    right: Selector,
    t: f64,
    control_dim: usize,
) -> Result<DMatrix<f64>> {
    let atoms: Vec<AtomCoefficients> = jumps.atoms.iter().map(|a| a.at(t)).collect();
    bilinear_sum(&atoms, left, p, right, control_dim)
}

impl Selector {
    fn dim(self, n: usize, m: usize) -> usize {
        match self {
            Selector::E | Selector::EBar | Selector::ESum => n,
            Selector::F | Selector::FBar | Selector::FSum => m,
        }
    }
}

pub(crate) fn bilinear_sum(
    atoms: &[AtomCoefficients],
    left: Selector,
    p: &DMatrix<f64>,
    right: Selector,
    m: usize,
) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    let mut acc = DMatrix::zeros(left.dim(n, m), right.dim(n, m));
    for atom in atoms {
        let l = left.pick(atom);
        let r = right.pick(atom);
        if l.nrows() != p.nrows() || p.ncols() != r.nrows() || l.ncols() != acc.nrows() || r.ncols() != acc.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "jump integrand ({}x{})' * {}x{} * {}x{}",
                l.nrows(),
                l.ncols(),
                p.nrows(),
                p.ncols(),
                r.nrows(),
                r.ncols()
            )));
        }
        acc += l.transpose() * p * r * atom.rate;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    pub a: MatrixPath,
    pub a_bar: MatrixPath,
    pub b: MatrixPath,
    pub b_bar: MatrixPath,
    pub c: MatrixPath,
    pub c_bar: MatrixPath,
    pub d: MatrixPath,
    pub d_bar: MatrixPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: MatrixPath,
    pub q_bar: MatrixPath,
    pub s: MatrixPath,
    pub s_bar: MatrixPath,
    pub r: MatrixPath,
    pub r_bar: MatrixPath,
    pub g: DMatrix<f64>,
    pub g_bar: DMatrix<f64>,
}

impl CostWeights {
    pub fn grid(&self) -> TimeGrid {
        self.q.grid()
    }

    pub fn zeros(grid: TimeGrid, n: usize, m: usize) -> Self {
        CostWeights {
            q: MatrixPath::zeros(grid, n, n),
            q_bar: MatrixPath::zeros(grid, n, n),
            s: MatrixPath::zeros(grid, n, m),
            s_bar: MatrixPath::zeros(grid, n, m),
            r: MatrixPath::zeros(grid, m, m),
            r_bar: MatrixPath::zeros(grid, m, m),
            g: DMatrix::zeros(n, n),
            g_bar: DMatrix::zeros(n, n),
        }
    }

    /// Largest absolute entry-wise difference over all weights and nodes.
    pub fn max_abs_diff(&self, other: &CostWeights) -> f64 {
        use crate::linalg::max_abs_diff as d;
        let paths = [
            (&self.q, &other.q),
            (&self.q_bar, &other.q_bar),
            (&self.s, &other.s),
            (&self.s_bar, &other.s_bar),
            (&self.r, &other.r),
            (&self.r_bar, &other.r_bar),
        ];
        let mut worst = d(&self.g, &other.g).max(d(&self.g_bar, &other.g_bar));
        for (a, b) in paths {
            for (x, y) in a.samples().iter().zip(b.samples()) {
                worst = worst.max(d(x, y));
            }
        }
        worst
    }
}

/// An MF-LQJ instance as supplied by the user; see [`validate_spec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub n: usize,
    pub m: usize,
    pub grid: TimeGrid,
    pub dynamics: Dynamics,
    pub jumps: JumpMeasure,
    pub weights: CostWeights,
    pub x0: DVector<f64>,
}

/// Coefficients of one atom frozen at a time instant.
#[derive(Debug, Clone)]
pub struct AtomCoefficients {
    pub rate: f64,
    pub e: DMatrix<f64>,
    pub e_bar: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub f_bar: DMatrix<f64>,
}

impl JumpAtom {
    pub fn at(&self, t: f64) -> AtomCoefficients {
        AtomCoefficients {
            rate: self.rate,
            e: self.e.at(t),
            e_bar: self.e_bar.at(t),
            f: self.f.at(t),
            f_bar: self.f_bar.at(t),
        }
    }

    fn node(&self, k: usize) -> AtomCoefficients {
        AtomCoefficients {
            rate: self.rate,
            e: self.e.node(k).clone(),
            e_bar: self.e_bar.node(k).clone(),
            f: self.f.node(k).clone(),
            f_bar: self.f_bar.node(k).clone(),
        }
    }
}

/// All time-dependent data of a problem frozen at one instant.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub a: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub d_bar: DMatrix<f64>,
    pub atoms: Vec<AtomCoefficients>,
    pub q: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub s_bar: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub r_bar: DMatrix<f64>,
}

impl Coefficients {
    pub fn jump_bilinear(
        &self,
        left: Selector,
        p: &DMatrix<f64>,
        right: Selector,
    ) -> Result<DMatrix<f64>> {
        bilinear_sum(&self.atoms, left, p, right, self.b.ncols())
    }
}

impl ProblemSpec {
    pub fn coefficients_at(&self, t: f64) -> Coefficients {
        let (k, w) = self.grid.locate(t);
        if w == 0.0 {
            return self.coefficients_at_node(k);
        }
        let d = &self.dynamics;
        let c = &self.weights;
        Coefficients {
            a: d.a.at(t),
            a_bar: d.a_bar.at(t),
            b: d.b.at(t),
            b_bar: d.b_bar.at(t),
            c: d.c.at(t),
            c_bar: d.c_bar.at(t),
            d: d.d.at(t),
            d_bar: d.d_bar.at(t),
            atoms: self.jumps.atoms.iter().map(|a| a.at(t)).collect(),
            q: c.q.at(t),
            q_bar: c.q_bar.at(t),
            s: c.s.at(t),
            s_bar: c.s_bar.at(t),
            r: c.r.at(t),
            r_bar: c.r_bar.at(t),
        }
    }

    pub fn coefficients_at_node(&self, k: usize) -> Coefficients {
        let d = &self.dynamics;
        let c = &self.weights;
        Coefficients {
            a: d.a.node(k).clone(),
            a_bar: d.a_bar.node(k).clone(),
            b: d.b.node(k).clone(),
            b_bar: d.b_bar.node(k).clone(),
            c: d.c.node(k).clone(),
            c_bar: d.c_bar.node(k).clone(),
            d: d.d.node(k).clone(),
            d_bar: d.d_bar.node(k).clone(),
            atoms: self.jumps.atoms.iter().map(|a| a.node(k)).collect(),
            q: c.q.node(k).clone(),
            q_bar: c.q_bar.node(k).clone(),
            s: c.s.node(k).clone(),
            s_bar: c.s_bar.node(k).clone(),
            r: c.r.node(k).clone(),
            r_bar: c.r_bar.node(k).clone(),
        }
    }
}

/// A [`ProblemSpec`] that passed [`validate_spec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Problem(ProblemSpec);

impl Deref for Problem {
    type Target = ProblemSpec;
    fn deref(&self) -> &ProblemSpec {
        &self.0
    }
}

impl Problem {
    pub fn spec(&self) -> &ProblemSpec {
        &self.0
    }

    pub fn into_spec(self) -> ProblemSpec {
        self.0
    }

    /// Same dynamics with a different (for instance shifted) weight set.
    pub fn with_weights(&self, weights: CostWeights) -> Result<Problem> {
        let mut spec = self.0.clone();
        spec.weights = weights;
        validate_spec(spec)
    }

    pub fn with_x0(&self, x0: DVector<f64>) -> Result<Problem> {
        let mut spec = self.0.clone();
        spec.x0 = x0;
        validate_spec(spec)
    }
}

fn check_path(
    v: &mut Vec<Violation>,
    name: &str,
    path: &MatrixPath,
    grid: &TimeGrid,
    shape: (usize, usize),
) {
    if path.grid() != *grid {
        v.push(Violation::GridMismatch {
            field: name.to_string(),
            expected: grid.len(),
            found: path.samples().len(),
        });
    }
    if path.shape() != shape {
        v.push(Violation::ShapeMismatch {
            field: name.to_string(),
            expected: shape,
            found: path.shape(),
        });
    }
    if let Some(k) = path
        .samples()
        .iter()
        .position(|s| s.iter().any(|x| !x.is_finite()))
    {
        v.push(Violation::InvalidValue {
            field: name.to_string(),
            reason: format!("non-finite entry at node {k}"),
        });
    }
}

fn check_symmetric_path(v: &mut Vec<Violation>, name: &str, path: &MatrixPath) {
    if path.shape().0 != path.shape().1 {
        return;
    }
    for (k, s) in path.samples().iter().enumerate() {
        let asym = relative_asymmetry(s);
        if asym > SYMMETRY_TOL {
            v.push(Violation::AsymmetricWeight {
                field: name.to_string(),
                node: k,
                asymmetry: asym,
            });
            return;
        }
    }
}

/// Checks dimensions, grids and weight symmetry.
pub fn validate_spec(spec: ProblemSpec) -> Result<Problem> {
    let mut v = Vec::new();
    let (n, m, grid) = (spec.n, spec.m, spec.grid);
    if n == 0 || m == 0 {
        v.push(Violation::InvalidValue {
            field: "dimensions".into(),
            reason: format!("n and m must be positive, got n={n}, m={m}"),
        });
        return Err(Error::Invalid(v));
    }
    let d = &spec.dynamics;
    for (name, p, shape) in [
        ("dynamics.A", &d.a, (n, n)),
        ("dynamics.A_bar", &d.a_bar, (n, n)),
        ("dynamics.B", &d.b, (n, m)),
        ("dynamics.B_bar", &d.b_bar, (n, m)),
        ("dynamics.C", &d.c, (n, n)),
        ("dynamics.C_bar", &d.c_bar, (n, n)),
        ("dynamics.D", &d.d, (n, m)),
        ("dynamics.D_bar", &d.d_bar, (n, m)),
    ] {
        check_path(&mut v, name, p, &grid, shape);
    }
    for (i, atom) in spec.jumps.atoms.iter().enumerate() {
        if !(atom.rate.is_finite() && atom.rate > 0.0) {
            v.push(Violation::InvalidValue {
                field: format!("jumps[{i}].rate"),
                reason: format!("must be positive and finite, got {}", atom.rate),
            });
        }
        for (name, p, shape) in [
            ("E", &atom.e, (n, n)),
            ("E_bar", &atom.e_bar, (n, n)),
            ("F", &atom.f, (n, m)),
            ("F_bar", &atom.f_bar, (n, m)),
        ] {
            check_path(&mut v, &format!("jumps[{i}].{name}"), p, &grid, shape);
        }
    }
    let w = &spec.weights;
    for (name, p, shape, sym) in [
        ("weights.Q", &w.q, (n, n), true),
        ("weights.Q_bar", &w.q_bar, (n, n), true),
        ("weights.S", &w.s, (n, m), false),
        ("weights.S_bar", &w.s_bar, (n, m), false),
        ("weights.R", &w.r, (m, m), true),
        ("weights.R_bar", &w.r_bar, (m, m), true),
    ] {
        check_path(&mut v, name, p, &grid, shape);
        if sym && p.shape() == shape {
            check_symmetric_path(&mut v, name, p);
        }
    }
    for (name, g) in [("weights.G", &w.g), ("weights.G_bar", &w.g_bar)] {
        if g.shape() != (n, n) {
            v.push(Violation::ShapeMismatch {
                field: name.into(),
                expected: (n, n),
                found: g.shape(),
            });
        } else {
            let asym = relative_asymmetry(g);
            if asym > SYMMETRY_TOL {
                v.push(Violation::AsymmetricWeight {
                    field: name.into(),
                    node: grid.steps(),
                    asymmetry: asym,
                });
            }
        }
    }
    if spec.x0.len() != n {
        v.push(Violation::ShapeMismatch {
            field: "x0".into(),
            expected: (n, 1),
            found: (spec.x0.len(), 1),
        });
    }
    if v.is_empty() {
        Ok(Problem(spec))
    } else {
        Err(Error::Invalid(v))
    }
}

/// Outcome of the definiteness check on a weight set.
#[derive(Debug, Clone, Serialize)]
pub struct SReport {
    /// Smallest eigenvalue of `R` and `R + R_bar` over all nodes: the
    /// certified uniform lower bound.
    pub alpha0: f64,
    pub pass: bool,
    pub violations: Vec<SViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SViolation {
    pub quantity: &'static str,
    pub node: usize,
    pub min_eigenvalue: f64,
}

impl SReport {
    pub fn violates(&self, quantity: &str) -> bool {
        self.violations.iter().any(|v| v.quantity == quantity)
    }
}

fn schur(q: &DMatrix<f64>, s: &DMatrix<f64>, r: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let x = solve(r, &s.transpose())?;
    Some(q - s * x)
}

/// Checks, node by node, `R, R + R_bar >= alpha0_min I`, both Schur-type
/// state weights `>= 0` and `G, G + G_bar >= 0` (the last three up to
/// `-eig_tol`).
pub fn check_assumption_s(
    weights: &CostWeights,
    grid: &TimeGrid,
    alpha0_min: f64,
    eig_tol: f64,
) -> SReport {
    let mut violations = Vec::new();
    let mut alpha0 = f64::INFINITY;
    for k in 0..grid.len() {
        let q = weights.q.node(k);
        let s = weights.s.node(k);
        let r = weights.r.node(k);
        let qs = q + weights.q_bar.node(k);
        let ss = s + weights.s_bar.node(k);
        let rs = r + weights.r_bar.node(k);

        let lr = min_eigenvalue(r);
        let lrs = min_eigenvalue(&rs);
        alpha0 = alpha0.min(lr).min(lrs);
        if lr.is_nan() || lr < alpha0_min {
            violations.push(SViolation {
                quantity: "R",
                node: k,
                min_eigenvalue: lr,
            });
        }
        if lrs.is_nan() || lrs < alpha0_min {
            violations.push(SViolation {
                quantity: "R+R_bar",
                node: k,
                min_eigenvalue: lrs,
            });
        }
        let l1 = schur(q, s, r).map_or(f64::NEG_INFINITY, |m| min_eigenvalue(&m));
        if l1.is_nan() || l1 < -eig_tol {
            violations.push(SViolation {
                quantity: "Q-SR^-1S'",
                node: k,
                min_eigenvalue: l1,
            });
        }
        let l2 = schur(&qs, &ss, &rs).map_or(f64::NEG_INFINITY, |m| min_eigenvalue(&m));
        if l2.is_nan() || l2 < -eig_tol {
            violations.push(SViolation {
                quantity: "(Q+Q_bar)-(S+S_bar)(R+R_bar)^-1(S+S_bar)'",
                node: k,
                min_eigenvalue: l2,
            });
        }
    }
    let lg = min_eigenvalue(&weights.g);
    if lg.is_nan() || lg < -eig_tol {
        violations.push(SViolation {
            quantity: "G",
            node: grid.steps(),
            min_eigenvalue: lg,
        });
    }
    let lgg = min_eigenvalue(&(&weights.g + &weights.g_bar));
    if lgg.is_nan() || lgg < -eig_tol {
        violations.push(SViolation {
            quantity: "G+G_bar",
            node: grid.steps(),
            min_eigenvalue: lgg,
        });
    }
    SReport {
        alpha0,
        pass: violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 10).unwrap()
    }

    #[test]
    fn grid_rejects_degenerate() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 1).is_err());
        let g = TimeGrid::new(3.0, 7).unwrap();
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(7), 3.0);
        let nodes: Vec<f64> = g.nodes().collect();
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn path_is_exact_at_nodes_and_linear_between() {
        let g = grid();
        let p = MatrixPath::scalar_fn(g, |t| (3.0 * t).sin());
        for (k, t) in g.nodes().enumerate() {
            assert_eq!(p.at(t)[(0, 0)], p.node(k)[(0, 0)]);
        }
        let mid = p.at(0.15)[(0, 0)];
        let want = 0.5 * ((0.3_f64).sin() + (0.6_f64).sin());
        assert!((mid - want).abs() < 1e-15);
    }

    #[test]
    fn path_rejects_wrong_length() {
        let g = grid();
        let err = MatrixPath::new(g, vec![DMatrix::zeros(1, 1); 5]).unwrap_err();
        assert!(matches!(err, Error::GridMismatch(_)));
    }

    #[test]
    fn identity_weights_pass_with_unit_margin() {
        let g = grid();
        let mut w = CostWeights::zeros(g, 2, 2);
        w.q = MatrixPath::constant(g, DMatrix::identity(2, 2));
        w.r = MatrixPath::constant(g, DMatrix::identity(2, 2));
        let rep = check_assumption_s(&w, &g, 1.0, DEFAULT_EIG_TOL);
        assert!(rep.pass, "{:?}", rep.violations);
        assert_eq!(rep.alpha0, 1.0);
    }

    #[test]
    fn singular_r_is_reported_not_thrown() {
        let g = grid();
        let w = CostWeights::zeros(g, 1, 1);
        let rep = check_assumption_s(&w, &g, 1e-3, DEFAULT_EIG_TOL);
        assert!(!rep.pass);
        assert!(rep.violates("R"));
        assert!(rep.violates("Q-SR^-1S'"));
    }

    #[test]
    fn empty_measure_bilinear_is_zero() {
        let p = DMatrix::identity(2, 2);
        let z = bilinear_sum(&[], Selector::F, &p, Selector::E, 3).unwrap();
        assert_eq!(z, DMatrix::zeros(3, 2));
        let z = bilinear_sum(&[], Selector::E, &p, Selector::E, 3).unwrap();
        assert_eq!(z, DMatrix::zeros(2, 2));
    }
}
