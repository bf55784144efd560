//! Problem files (JSON) and CSV tables.
//!
//! A problem file has the sections `dimensions`, `grid`, `dynamics`,
//! `jumps`, `weights`, `x0` and an optional `shift`. Every coefficient is
//! either constant or sampled at every node:
//!
//! * a number: a constant `1x1` coefficient;
//! * a nested array of rows, `[[1, 0], [0, 1]]`: a constant matrix;
//! * an array of `M + 1` numbers: per-node samples of a `1x1` coefficient;
//! * an array of `M + 1` nested row arrays: per-node matrix samples.
//!
//! `dynamics.A`, `dynamics.B`, `weights.Q`, `weights.R` and `weights.G` are
//! required; every other coefficient defaults to zero. `G` and `G_bar` must
//! be constant. Jump atoms carry a positive `rate`, an optional `mark` and
//! the loadings `E`, `E_bar`, `F`, `F_bar`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::{Map, Value};

use crate::equivalence::FunctionalShift;
use crate::error::{Error, Result};
use crate::problem::{
    validate_spec, CostWeights, Dynamics, JumpAtom, JumpMeasure, MatrixPath, Problem, ProblemSpec, TimeGrid,
};
use crate::riccati::{RiccatiSolution, SolverStats};
use crate::synthesis::{row_major, AdjointTriple, FeedbackLaw};

/// A parsed problem file.
#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub problem: Problem,
    pub shift: Option<FunctionalShift>,
}

pub fn read_problem_file(path: impl AsRef<Path>, steps: Option<usize>) -> Result<ProblemFile> {
    let text = fs::read_to_string(path)?;
    parse_problem(&text, steps)
}

/// Parses a problem document. `steps` regrids the problem: constant
/// coefficients are rebroadcast and sampled ones interpolated.
pub fn parse_problem(text: &str, steps: Option<usize>) -> Result<ProblemFile> {
    let doc: Value = serde_json::from_str(text)?;
    let root = doc.as_object().ok_or_else(|| Error::parse("$", "expected an object"))?;

    let dims = object(root, "dimensions")?;
    let n = positive_int(dims, "dimensions", "n")?;
    let m = positive_int(dims, "dimensions", "m")?;

    let grid_obj = object(root, "grid")?;
    let horizon = number(required(grid_obj, "grid", "horizon")?, "grid.horizon")?;
    let file_steps = positive_int(grid_obj, "grid", "steps")?;
    let file_grid = TimeGrid::new(horizon, file_steps)?;
    let grid = match steps {
        Some(s) => TimeGrid::new(horizon, s)?,
        None => file_grid,
    };
    let ctx = Ctx { file_grid, grid };

    let dyn_obj = object(root, "dynamics")?;
    let dynamics = Dynamics {
        a: ctx.path(dyn_obj, "dynamics", "A", (n, n), true)?,
        a_bar: ctx.path(dyn_obj, "dynamics", "A_bar", (n, n), false)?,
        b: ctx.path(dyn_obj, "dynamics", "B", (n, m), true)?,
        b_bar: ctx.path(dyn_obj, "dynamics", "B_bar", (n, m), false)?,
        c: ctx.path(dyn_obj, "dynamics", "C", (n, n), false)?,
        c_bar: ctx.path(dyn_obj, "dynamics", "C_bar", (n, n), false)?,
        d: ctx.path(dyn_obj, "dynamics", "D", (n, m), false)?,
        d_bar: ctx.path(dyn_obj, "dynamics", "D_bar", (n, m), false)?,
    };

    let mut atoms = Vec::new();
    if let Some(j) = root.get("jumps") {
        let list = j.as_array().ok_or_else(|| Error::parse("jumps", "expected an array of atoms"))?;
        for (i, a) in list.iter().enumerate() {
            let section = format!("jumps[{i}]");
            let obj = a.as_object().ok_or_else(|| Error::parse(&section, "expected an object"))?;
            let rate = number(required(obj, &section, "rate")?, &format!("{section}.rate"))?;
            let mark = match obj.get("mark") {
                Some(v) => number(v, &format!("{section}.mark"))?,
                None => 0.0,
            };
            atoms.push(JumpAtom {
                rate,
                mark,
                e: ctx.path(obj, &section, "E", (n, n), false)?,
                e_bar: ctx.path(obj, &section, "E_bar", (n, n), false)?,
                f: ctx.path(obj, &section, "F", (n, m), false)?,
                f_bar: ctx.path(obj, &section, "F_bar", (n, m), false)?,
            });
        }
    }

    let w = object(root, "weights")?;
    let weights = CostWeights {
        q: ctx.path(w, "weights", "Q", (n, n), true)?,
        q_bar: ctx.path(w, "weights", "Q_bar", (n, n), false)?,
        s: ctx.path(w, "weights", "S", (n, m), false)?,
        s_bar: ctx.path(w, "weights", "S_bar", (n, m), false)?,
        r: ctx.path(w, "weights", "R", (m, m), true)?,
        r_bar: ctx.path(w, "weights", "R_bar", (m, m), false)?,
        g: constant(w, "weights", "G", (n, n), true)?,
        g_bar: constant(w, "weights", "G_bar", (n, n), false)?,
    };

    let x0 = vector(required(root, "$", "x0")?, "x0", n)?;
    let problem = validate_spec(ProblemSpec {
        n,
        m,
        grid,
        dynamics,
        jumps: JumpMeasure { atoms },
        weights,
        x0,
    })?;

    let shift = match root.get("shift") {
        None => None,
        Some(v) => Some(shift_from(v, &ctx, n)?),
    };
    Ok(ProblemFile { problem, shift })
}

fn shift_from(v: &Value, ctx: &Ctx, n: usize) -> Result<FunctionalShift> {
    let s = v.as_object().ok_or_else(|| Error::parse("shift", "expected an object"))?;
    let h = ctx.path(s, "shift", "H", (n, n), true)?;
    let k = ctx.path(s, "shift", "K", (n, n), true)?;
    let fd = match s.get("finite_difference") {
        None => false,
        Some(b) => b
            .as_bool()
            .ok_or_else(|| Error::parse("shift.finite_difference", "expected a boolean"))?,
    };
    if fd {
        return FunctionalShift::from_finite_differences(h, k);
    }
    for key in ["H_dot", "K_dot"] {
        if !s.contains_key(key) {
            return Err(Error::parse(
                format!("shift.{key}"),
                "derivatives are required unless `finite_difference` is true",
            ));
        }
    }
    let hd = ctx.path(s, "shift", "H_dot", (n, n), true)?;
    let kd = ctx.path(s, "shift", "K_dot", (n, n), true)?;
    FunctionalShift::new(h, k, hd, kd)
}

/// Parses a standalone shift document, either `{"shift": {...}}` or the
/// shift object itself. Sampled entries must lie on `problem`'s grid.
pub fn parse_shift(text: &str, problem: &Problem) -> Result<FunctionalShift> {
    let doc: Value = serde_json::from_str(text)?;
    let v = doc.get("shift").unwrap_or(&doc);
    let ctx = Ctx {
        file_grid: problem.grid,
        grid: problem.grid,
    };
    shift_from(v, &ctx, problem.n)
}

/// Parses asset-liability market parameters given as a JSON object of
/// overrides, e.g. `{"r": 0.1, "a": 0.2}`.
pub fn parse_market_params(text: &str) -> Result<crate::builtin::MarketParams> {
    let doc: Value = serde_json::from_str(text)?;
    let obj = doc.as_object().ok_or_else(|| Error::parse("$", "expected an object"))?;
    let mut params = crate::builtin::MarketParams::default();
    for (key, v) in obj {
        let x = number(v, key)?;
        params = params
            .with(key, x)
            .ok_or_else(|| Error::parse(key, "unknown market parameter"))?;
    }
    Ok(params)
}

struct Ctx {
    file_grid: TimeGrid,
    grid: TimeGrid,
}

impl Ctx {
    fn path(
        &self,
        obj: &Map<String, Value>,
        section: &str,
        key: &str,
        shape: (usize, usize),
        needed: bool,
    ) -> Result<MatrixPath> {
        let field = format!("{section}.{key}");
        let Some(v) = obj.get(key) else {
            if needed {
                return Err(Error::parse(field, "missing required field"));
            }
            return Ok(MatrixPath::zeros(self.grid, shape.0, shape.1));
        };
        match classify(v, &field)? {
            Shape::Number(x) => Ok(MatrixPath::constant(self.grid, check_shape(scalar(x), shape, &field)?)),
            Shape::Rows => Ok(MatrixPath::constant(self.grid, check_shape(matrix(v, &field)?, shape, &field)?)),
            Shape::Samples(items) => {
                if items.len() != self.file_grid.len() {
                    return Err(Error::GridMismatch(format!(
                        "{field}: expected {} samples for {} steps, found {}",
                        self.file_grid.len(),
                        self.file_grid.steps(),
                        items.len()
                    )));
                }
                let samples = items
                    .iter()
                    .enumerate()
                    .map(|(k, it)| {
                        let f = format!("{field}[{k}]");
                        let mtx = match it {
                            Value::Number(_) => scalar(number(it, &f)?),
                            _ => matrix(it, &f)?,
                        };
                        check_shape(mtx, shape, &f)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let path = MatrixPath::new(self.file_grid, samples)?;
                Ok(if self.grid == self.file_grid { path } else { path.resample(self.grid) })
            }
        }
    }
}

enum Shape<'a> {
    Number(f64),
    Rows,
    Samples(&'a [Value]),
}

fn classify<'a>(v: &'a Value, field: &str) -> Result<Shape<'a>> {
    match v {
        Value::Number(_) => Ok(Shape::Number(number(v, field)?)),
        Value::Array(items) => match items.first() {
            None => Err(Error::parse(field, "empty array")),
            Some(Value::Number(_)) => Ok(Shape::Samples(items)),
            Some(Value::Array(inner)) => match inner.first() {
                Some(Value::Array(_)) => Ok(Shape::Samples(items)),
                _ => Ok(Shape::Rows),
            },
            Some(_) => Err(Error::parse(field, "expected numbers or nested arrays")),
        },
        _ => Err(Error::parse(field, "expected a number or an array")),
    }
}

fn scalar(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

fn check_shape(m: DMatrix<f64>, shape: (usize, usize), field: &str) -> Result<DMatrix<f64>> {
    if m.shape() == shape {
        Ok(m)
    } else {
        Err(Error::ShapeMismatch(format!(
            "{field} is {}x{}, expected {}x{}",
            m.nrows(),
            m.ncols(),
            shape.0,
            shape.1
        )))
    }
}

fn matrix(v: &Value, field: &str) -> Result<DMatrix<f64>> {
    let rows = v.as_array().ok_or_else(|| Error::parse(field, "expected an array of rows"))?;
    let parsed = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let f = format!("{field}[{i}]");
            r.as_array()
                .ok_or_else(|| Error::parse(&f, "expected a row array"))?
                .iter()
                .map(|x| number(x, &f))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let cols = parsed.first().map_or(0, Vec::len);
    if cols == 0 || parsed.iter().any(|r| r.len() != cols) {
        return Err(Error::parse(field, "rows must be non-empty and of equal length"));
    }
    Ok(DMatrix::from_fn(parsed.len(), cols, |i, j| parsed[i][j]))
}

fn constant(
    obj: &Map<String, Value>,
    section: &str,
    key: &str,
    shape: (usize, usize),
    needed: bool,
) -> Result<DMatrix<f64>> {
    let field = format!("{section}.{key}");
    match obj.get(key) {
        None if needed => Err(Error::parse(field, "missing required field")),
        None => Ok(DMatrix::zeros(shape.0, shape.1)),
        Some(v) => match classify(v, &field)? {
            Shape::Number(x) => check_shape(scalar(x), shape, &field),
            Shape::Rows => check_shape(matrix(v, &field)?, shape, &field),
            Shape::Samples(_) => Err(Error::parse(field, "terminal weights must be constant")),
        },
    }
}

fn vector(v: &Value, field: &str, n: usize) -> Result<DVector<f64>> {
    let xs = match v {
        Value::Number(_) => vec![number(v, field)?],
        Value::Array(items) => items.iter().map(|x| number(x, field)).collect::<Result<Vec<_>>>()?,
        _ => return Err(Error::parse(field, "expected a number or an array of numbers")),
    };
    if xs.len() != n {
        return Err(Error::ShapeMismatch(format!("{field} has {} entries, expected {n}", xs.len())));
    }
    Ok(DVector::from_vec(xs))
}

fn required<'a>(obj: &'a Map<String, Value>, section: &str, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| {
        let field = if section == "$" { key.to_string() } else { format!("{section}.{key}") };
        Error::parse(field, "missing required field")
    })
}

fn object<'a>(root: &'a Map<String, Value>, key: &str) -> Result<&'a Map<String, Value>> {
    required(root, "$", key)?
        .as_object()
        .ok_or_else(|| Error::parse(key, "expected an object"))
}

fn number(v: &Value, field: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::parse(field, "expected a number"))
}

fn positive_int(obj: &Map<String, Value>, section: &str, key: &str) -> Result<usize> {
    let field = format!("{section}.{key}");
    match required(obj, section, key)?.as_u64() {
        Some(x) if x > 0 => Ok(x as usize),
        _ => Err(Error::parse(field, "expected a positive integer")),
    }
}

/// A numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(headers: Vec<String>) -> Self {
        Table {
            headers,
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Writes a table as RFC 4180 CSV. Numbers use the shortest representation
/// that parses back to the same `f64`.
pub fn write_table(path: impl AsRef<Path>, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.headers)?;
    for row in &table.rows {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.iter().map(str::to_string).collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::parse(format!("row {}", i + 1), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { headers, rows })
}

fn matrix_headers(name: &str, rows: usize, cols: usize) -> impl Iterator<Item = String> + '_ {
    (0..rows).flat_map(move |i| (0..cols).map(move |j| format!("{name}_{i}_{j}")))
}

/// `t`, then each path vectorized row-major, one row per node.
pub fn paths_table(paths: &[(&str, &MatrixPath)]) -> Table {
    let grid = paths[0].1.grid();
    let mut headers = vec!["t".to_string()];
    for (name, p) in paths {
        let (r, c) = p.shape();
        headers.extend(matrix_headers(name, r, c));
    }
    let mut table = Table::new(headers);
    for k in 0..grid.len() {
        let mut row = vec![grid.node(k)];
        for (_, p) in paths {
            row.extend(row_major(p.node(k)));
        }
        table.rows.push(row);
    }
    table
}

pub fn riccati_table(sol: &RiccatiSolution) -> Table {
    paths_table(&[
        ("P", &sol.p),
        ("Pi", &sol.pi),
        ("Sigma0", &sol.sigma0),
        ("Sigma1", &sol.sigma1),
    ])
}

pub fn gains_table(law: &FeedbackLaw) -> Table {
    paths_table(&[("K0", &law.k0), ("K1", &law.k1)])
}

pub fn adjoint_table(triple: &AdjointTriple) -> Table {
    let mut named: Vec<(String, &MatrixPath)> = vec![
        ("Y_centered".into(), &triple.y.centered),
        ("Y_mean".into(), &triple.y.mean),
        ("Z_centered".into(), &triple.z.centered),
        ("Z_mean".into(), &triple.z.mean),
    ];
    for (i, r) in triple.r.iter().enumerate() {
        named.push((format!("r{i}_centered"), &r.centered));
        named.push((format!("r{i}_mean"), &r.mean));
    }
    let refs: Vec<(&str, &MatrixPath)> = named.iter().map(|(s, p)| (s.as_str(), *p)).collect();
    paths_table(&refs)
}

pub fn mean_table(mean: &crate::simulation::MeanTrajectory) -> Table {
    let n = mean.m[0].len();
    let m = mean.ubar[0].len();
    let mut headers = vec!["t".to_string()];
    headers.extend((0..n).map(|i| format!("mean_x_{i}")));
    headers.extend((0..m).map(|i| format!("mean_u_{i}")));
    let mut table = Table::new(headers);
    for k in 0..mean.grid.len() {
        let mut row = vec![mean.grid.node(k)];
        row.extend(mean.m[k].iter());
        row.extend(mean.ubar[k].iter());
        table.rows.push(row);
    }
    table
}

/// The first `count` paths of an ensemble, one row per path and node.
pub fn ensemble_table(ens: &crate::simulation::PathEnsemble, count: usize) -> Table {
    let grid = ens.grid();
    let n = ens.state(0, 0).len();
    let m = ens.control(0, 0).len();
    let mut headers = vec!["path".to_string(), "t".to_string()];
    headers.extend((0..n).map(|i| format!("x_{i}")));
    headers.extend((0..n).map(|i| format!("x_minus_{i}")));
    headers.extend((0..m).map(|i| format!("u_{i}")));
    let mut table = Table::new(headers);
    for p in 0..count.min(ens.paths()) {
        for k in 0..grid.len() {
            let mut row = vec![p as f64, grid.node(k)];
            row.extend(ens.state(p, k).iter());
            row.extend(ens.state_minus(p, k).iter());
            row.extend(ens.control(p, k).iter());
            table.rows.push(row);
        }
    }
    table
}

/// Reads `name_i_j` columns back into a path on the grid implied by the
/// `t` column.
pub fn path_from_table(table: &Table, name: &str) -> Result<MatrixPath> {
    let t = table.column("t").ok_or_else(|| Error::parse("t", "missing column"))?;
    if t.len() < 3 {
        return Err(Error::parse("t", "need at least three rows"));
    }
    let grid = TimeGrid::new(t[t.len() - 1], t.len() - 1)?;
    let mut rows = 0;
    let mut cols = 0;
    let mut idx = Vec::new();
    for (j, h) in table.headers.iter().enumerate() {
        if let Some(rest) = h.strip_prefix(name).and_then(|r| r.strip_prefix('_')) {
            let mut it = rest.split('_').map(str::parse::<usize>);
            if let (Some(Ok(i)), Some(Ok(c)), None) = (it.next(), it.next(), it.next()) {
                rows = rows.max(i + 1);
                cols = cols.max(c + 1);
                idx.push((i, c, j));
            }
        }
    }
    if idx.is_empty() || idx.len() != rows * cols {
        return Err(Error::parse(name, "missing or incomplete matrix columns"));
    }
    let samples = table
        .rows
        .iter()
        .map(|r| {
            let mut m = DMatrix::zeros(rows, cols);
            for &(i, c, j) in &idx {
                m[(i, c)] = r[j];
            }
            m
        })
        .collect();
    MatrixPath::new(grid, samples)
}

pub fn write_riccati_csv(path: impl AsRef<Path>, sol: &RiccatiSolution) -> Result<()> {
    write_table(path, &riccati_table(sol))
}

/// Reads a Riccati export. Solver statistics are not stored and come back
/// zeroed.
pub fn read_riccati_csv(path: impl AsRef<Path>) -> Result<RiccatiSolution> {
    let table = read_table(path)?;
    Ok(RiccatiSolution {
        p: path_from_table(&table, "P")?,
        pi: path_from_table(&table, "Pi")?,
        sigma0: path_from_table(&table, "Sigma0")?,
        sigma1: path_from_table(&table, "Sigma1")?,
        stats: SolverStats::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::riccati::solve_riccati;

    const SCALAR: &str = r#"{
        "dimensions": {"n": 1, "m": 1},
        "grid": {"horizon": 1.0, "steps": 4},
        "dynamics": {"A": 1, "A_bar": -1, "B": 1, "B_bar": 1, "D": 2, "D_bar": -1},
        "jumps": [{"rate": 2.5, "F_bar": 0.5}],
        "weights": {"Q": -3, "Q_bar": 3, "R": -4, "R_bar": 2, "G": 2, "G_bar": -1},
        "x0": [1]
    }"#;

    #[test]
    fn scalars_broadcast() {
        let f = parse_problem(SCALAR, None).unwrap();
        assert_eq!(f.problem.grid.len(), 5);
        assert_eq!(f.problem.dynamics.d.node(3)[(0, 0)], 2.0);
        assert_eq!(f.problem.jumps.atoms[0].rate, 2.5);
        assert!(f.shift.is_none());
    }

    #[test]
    fn missing_terminal_weight_is_named() {
        let text = SCALAR.replace(r#""G": 2, "#, "");
        match parse_problem(&text, None) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "weights.G"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_sample_count_is_grid_mismatch() {
        let text = SCALAR.replace(r#""Q": -3"#, r#""Q": [1, 2, 3, 4, 5, 6]"#);
        assert!(matches!(parse_problem(&text, None), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn asymmetric_weight_is_rejected() {
        let text = r#"{
            "dimensions": {"n": 2, "m": 1},
            "grid": {"horizon": 1.0, "steps": 2},
            "dynamics": {"A": [[0, 1], [0, 0]], "B": [[0], [1]]},
            "weights": {"Q": [[[1, 0], [0, 1]], [[1, 0.5], [0, 1]], [[1, 0], [0, 1]]],
                        "R": 1, "G": [[1, 0], [0, 1]]},
            "x0": [1, 0]
        }"#;
        let err = parse_problem(text, None).unwrap_err();
        assert!(err
            .violations()
            .iter()
            .any(|v| matches!(v, crate::error::Violation::AsymmetricWeight { .. })));
    }

    #[test]
    fn shift_needs_derivatives_or_flag() {
        let with = SCALAR.replace(r#""x0": [1]"#, r#""x0": [1], "shift": {"H": 2, "K": 1}"#);
        assert!(matches!(parse_problem(&with, None), Err(Error::Parse { .. })));
        let fd = SCALAR.replace(
            r#""x0": [1]"#,
            r#""x0": [1], "shift": {"H": 2, "K": 1, "finite_difference": true}"#,
        );
        let s = parse_problem(&fd, None).unwrap().shift.unwrap();
        assert_eq!(s.source, crate::equivalence::DerivativeSource::FiniteDifference);
    }

    #[test]
    fn standalone_shift_and_market_params() {
        let f = parse_problem(SCALAR, None).unwrap();
        let s = parse_shift(r#"{"H": 2, "K": [0, 1, 2, 3, 4], "H_dot": 0, "K_dot": 4}"#, &f.problem).unwrap();
        assert_eq!(s.k.node(2)[(0, 0)], 2.0);
        assert!(s.derivative_mismatch() < 1e-12);
        let p = parse_market_params(r#"{"r": 0.1}"#).unwrap();
        assert_eq!(p.r, 0.1);
        assert!(parse_market_params(r#"{"rho": 0.1}"#).is_err());
    }

    #[test]
    fn regrid_interpolates_samples() {
        let text = SCALAR.replace(r#""Q": -3"#, r#""Q": [0, 1, 2, 3, 4]"#);
        let f = parse_problem(&text, Some(8)).unwrap();
        assert_eq!(f.problem.grid.steps(), 8);
        assert!((f.problem.weights.q.node(3)[(0, 0)] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn riccati_csv_round_trip_is_exact() {
        let prob = builtin::example_5_2(1.0, 4.0, 50).unwrap();
        let sol = solve_riccati(&prob, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("riccati.csv");
        write_riccati_csv(&path, &sol).unwrap();
        let back = read_riccati_csv(&path).unwrap();
        assert_eq!(back.p.samples(), sol.p.samples());
        assert_eq!(back.pi.samples(), sol.pi.samples());
        assert_eq!(back.sigma1.samples(), sol.sigma1.samples());
    }
}
