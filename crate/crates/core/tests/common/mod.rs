#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use mflqj::problem::{validate_spec, CostWeights, Dynamics, JumpAtom, JumpMeasure, MatrixPath, Problem, ProblemSpec, TimeGrid};

pub fn matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

pub fn symmetric(rng: &mut impl Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = matrix(rng, n, n, scale);
    (&a + a.transpose()) * 0.5
}

/// `A A' + floor I`.
pub fn positive(rng: &mut impl Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let a = matrix(rng, n, n, 1.0);
    &a * a.transpose() + DMatrix::identity(n, n) * floor
}

fn constant(grid: TimeGrid, m: DMatrix<f64>) -> MatrixPath {
    MatrixPath::constant(grid, m)
}

/// Constant-coefficient instance with moderate loadings. With `definite`
/// the weights satisfy the standard assumption (S = 0, Q, G positive
/// semidefinite, R positive definite); otherwise `Q`, `G` are arbitrary
/// symmetric and `S` is nonzero.
pub fn random_problem(rng: &mut impl Rng, n: usize, m: usize, atoms: usize, steps: usize, definite: bool) -> Problem {
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let mut mat = |r, c| constant(grid, matrix(rng, r, c, 0.5));
    let dynamics = Dynamics {
        a: mat(n, n),
        a_bar: mat(n, n),
        b: mat(n, m),
        b_bar: mat(n, m),
        c: mat(n, n),
        c_bar: mat(n, n),
        d: mat(n, m),
        d_bar: mat(n, m),
    };
    let atoms = (0..atoms)
        .map(|i| JumpAtom {
            rate: rng.random_range(0.2..1.5),
            mark: i as f64,
            e: constant(grid, matrix(rng, n, n, 0.5)),
            e_bar: constant(grid, matrix(rng, n, n, 0.5)),
            f: constant(grid, matrix(rng, n, m, 0.5)),
            f_bar: constant(grid, matrix(rng, n, m, 0.5)),
        })
        .collect();
    let weights = if definite {
        CostWeights {
            q: constant(grid, positive(rng, n, 0.0)),
            q_bar: constant(grid, positive(rng, n, 0.0)),
            s: MatrixPath::zeros(grid, n, m),
            s_bar: MatrixPath::zeros(grid, n, m),
            r: constant(grid, positive(rng, m, 0.5)),
            r_bar: constant(grid, positive(rng, m, 0.0)),
            g: positive(rng, n, 0.0),
            g_bar: positive(rng, n, 0.0),
        }
    } else {
        CostWeights {
            q: constant(grid, symmetric(rng, n, 1.0)),
            q_bar: constant(grid, symmetric(rng, n, 1.0)),
            s: constant(grid, matrix(rng, n, m, 0.3)),
            s_bar: constant(grid, matrix(rng, n, m, 0.3)),
            r: constant(grid, positive(rng, m, 0.5)),
            r_bar: constant(grid, symmetric(rng, m, 0.2)),
            g: symmetric(rng, n, 1.0),
            g_bar: symmetric(rng, n, 1.0),
        }
    };
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    validate_spec(ProblemSpec {
        n,
        m,
        grid,
        dynamics,
        jumps: JumpMeasure { atoms },
        weights,
        x0,
    })
    .unwrap()
}

/// A problem with every coefficient and weight zero except `R = I`.
pub fn zero_problem(n: usize, m: usize, steps: usize) -> Problem {
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let z = |r, c| MatrixPath::zeros(grid, r, c);
    let mut weights = CostWeights::zeros(grid, n, m);
    weights.r = MatrixPath::constant(grid, DMatrix::identity(m, m));
    validate_spec(ProblemSpec {
        n,
        m,
        grid,
        dynamics: Dynamics {
            a: z(n, n),
            a_bar: z(n, n),
            b: z(n, m),
            b_bar: z(n, m),
            c: z(n, n),
            c_bar: z(n, n),
            d: z(n, m),
            d_bar: z(n, m),
        },
        jumps: JumpMeasure::empty(),
        weights,
        x0: DVector::from_element(n, 1.0),
    })
    .unwrap()
}
