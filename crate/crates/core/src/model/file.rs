//! TOML encoding of [`ModelSpec`].
//!
//! ```toml
//! n = 1
//! m = 1
//! x0 = [0.0]
//! mu = [0.5]
//! r_min = 1e-8          # optional
//! entry_bound = 1e6     # optional
//!
//! [grid]
//! horizon = 1.0
//! n_steps = 1000
//!
//! [coefficients]
//! interpolation = "piecewise-constant-left"   # or "piecewise-linear"
//! F = [[0.0]]        # constant n×n matrix, given row by row
//! f = [0.0]
//! G = [[1.0]]
//! g = [0.0]
//! Q = [[1.0]]
//! R = [[1.0]]
//! ```
//!
//! Any coefficient may instead be a per-node list (`n_steps + 1` entries),
//! e.g. `F = [[[0.0]], [[0.1]], ...]`. Floats are written in shortest
//! round-trip form, so `load(save(s)) == s` bit for bit.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    CoefficientTable, Interpolation, ModelSpec, TimeGrid, DEFAULT_ENTRY_BOUND, DEFAULT_R_MIN,
};
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
struct SpecFile<T> {
    n: usize,
    m: usize,
    x0: Vec<T>,
    mu: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_min: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entry_bound: Option<T>,
    grid: GridFile<T>,
    coefficients: CoefficientFile<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
struct GridFile<T> {
    horizon: T,
    n_steps: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
struct CoefficientFile<T> {
    #[serde(default)]
    interpolation: Interpolation,
    #[serde(rename = "F")]
    state_matrix: MatrixField<T>,
    #[serde(rename = "f")]
    state_drift: VectorField<T>,
    #[serde(rename = "G")]
    obs_matrix: MatrixField<T>,
    #[serde(rename = "g")]
    obs_drift: VectorField<T>,
    #[serde(rename = "Q")]
    signal_noise: MatrixField<T>,
    #[serde(rename = "R")]
    obs_noise: MatrixField<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged, bound = "T: Scalar")]
enum MatrixField<T> {
    Constant(Vec<Vec<T>>),
    PerNode(Vec<Vec<Vec<T>>>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged, bound = "T: Scalar")]
enum VectorField<T> {
    Constant(Vec<T>),
    PerNode(Vec<Vec<T>>),
}

fn parse_error(field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        field: field.to_string(),
        line: None,
        message: message.into(),
    }
}

fn matrix_from_rows<T: Scalar>(field: &str, rows: &[Vec<T>]) -> Result<DMatrix<T>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(parse_error(field, "ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn rows_of<T: Scalar>(a: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..a.nrows())
        .map(|i| a.row(i).iter().copied().collect())
        .collect()
}

fn expand_matrix<T: Scalar>(
    field: &str,
    value: &MatrixField<T>,
    nodes: usize,
) -> Result<Vec<DMatrix<T>>> {
    match value {
        MatrixField::Constant(rows) => Ok(vec![matrix_from_rows(field, rows)?; nodes]),
        MatrixField::PerNode(list) => {
            if list.len() != nodes {
                return Err(parse_error(
                    field,
                    format!(
                        "per-node table has {} entries, expected {nodes}",
                        list.len()
                    ),
                ));
            }
            list.iter()
                .map(|rows| matrix_from_rows(field, rows))
                .collect()
        }
    }
}

fn expand_vector<T: Scalar>(
    field: &str,
    value: &VectorField<T>,
    nodes: usize,
) -> Result<Vec<DVector<T>>> {
    match value {
        VectorField::Constant(v) => Ok(vec![DVector::from_vec(v.clone()); nodes]),
        VectorField::PerNode(list) => {
            if list.len() != nodes {
                return Err(parse_error(
                    field,
                    format!(
                        "per-node table has {} entries, expected {nodes}",
                        list.len()
                    ),
                ));
            }
            Ok(list.iter().map(|v| DVector::from_vec(v.clone())).collect())
        }
    }
}

fn compress_matrix<T: Scalar>(nodes: &[DMatrix<T>]) -> MatrixField<T> {
    if nodes
        .windows(2)
        .all(|w| bit_equal(w[0].as_slice(), w[1].as_slice()))
    {
        MatrixField::Constant(rows_of(&nodes[0]))
    } else {
        MatrixField::PerNode(nodes.iter().map(rows_of).collect())
    }
}

fn compress_vector<T: Scalar>(nodes: &[DVector<T>]) -> VectorField<T> {
    if nodes
        .windows(2)
        .all(|w| bit_equal(w[0].as_slice(), w[1].as_slice()))
    {
        VectorField::Constant(nodes[0].iter().copied().collect())
    } else {
        VectorField::PerNode(nodes.iter().map(|v| v.iter().copied().collect()).collect())
    }
}

fn bit_equal<T: Scalar>(a: &[T], b: &[T]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
}

fn spec_from_file<T: Scalar>(file: SpecFile<T>) -> Result<ModelSpec<T>> {
    let grid = TimeGrid::new(file.grid.horizon, file.grid.n_steps)
        .map_err(|e| parse_error("grid", e.to_string()))?;
    let nodes = grid.n_nodes();
    let c = &file.coefficients;
    let coeffs = CoefficientTable {
        state_matrix: expand_matrix("F", &c.state_matrix, nodes)?,
        state_drift: expand_vector("f", &c.state_drift, nodes)?,
        obs_matrix: expand_matrix("G", &c.obs_matrix, nodes)?,
        obs_drift: expand_vector("g", &c.obs_drift, nodes)?,
        signal_noise: expand_matrix("Q", &c.signal_noise, nodes)?,
        obs_noise: expand_matrix("R", &c.obs_noise, nodes)?,
        interpolation: c.interpolation,
    };
    Ok(ModelSpec {
        n: file.n,
        m: file.m,
        grid,
        coeffs,
        x0: DVector::from_vec(file.x0),
        mu: DVector::from_vec(file.mu),
        r_min: file.r_min.unwrap_or_else(|| T::lit(DEFAULT_R_MIN)),
        entry_bound: file
            .entry_bound
            .unwrap_or_else(|| T::lit(DEFAULT_ENTRY_BOUND)),
    })
}

fn file_from_spec<T: Scalar>(spec: &ModelSpec<T>) -> SpecFile<T> {
    let c = &spec.coeffs;
    SpecFile {
        n: spec.n,
        m: spec.m,
        x0: spec.x0.iter().copied().collect(),
        mu: spec.mu.iter().copied().collect(),
        r_min: Some(spec.r_min),
        entry_bound: Some(spec.entry_bound),
        grid: GridFile {
            horizon: spec.grid.horizon(),
            n_steps: spec.grid.n_steps(),
        },
        coefficients: CoefficientFile {
            interpolation: c.interpolation,
            state_matrix: compress_matrix(&c.state_matrix),
            state_drift: compress_vector(&c.state_drift),
            obs_matrix: compress_matrix(&c.obs_matrix),
            obs_drift: compress_vector(&c.obs_drift),
            signal_noise: compress_matrix(&c.signal_noise),
            obs_noise: compress_matrix(&c.obs_noise),
        },
    }
}

/// Pulls the offending field name (the first backquoted token) out of a
/// deserializer message, falling back to the key at the error location.
fn field_of(message: &str, text: &str, span: Option<std::ops::Range<usize>>) -> String {
    if let Some(start) = message.find('`') {
        if let Some(len) = message[start + 1..].find('`') {
            return message[start + 1..start + 1 + len].to_string();
        }
    }
    if let Some(span) = span {
        let line_start = text[..span.start.min(text.len())]
            .rfind('\n')
            .map_or(0, |i| i + 1);
        let line = &text[line_start..];
        if let Some(eq) = line.find('=') {
            return line[..eq].trim().to_string();
        }
    }
    "<document>".to_string()
}

/// Parses a model from TOML text.
pub fn parse_spec<T: Scalar>(text: &str) -> Result<ModelSpec<T>> {
    let file: SpecFile<T> = toml::from_str(text).map_err(|e| {
        let span = e.span();
        let line = span
            .as_ref()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let message = e.message().to_string();
        Error::Parse {
            field: field_of(&message, text, span),
            line,
            message,
        }
    })?;
    spec_from_file(file)
}

pub fn render_spec<T: Scalar>(spec: &ModelSpec<T>) -> Result<String> {
    toml::to_string(&file_from_spec(spec)).map_err(|e| parse_error("<document>", e.to_string()))
}

pub fn load_spec<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelSpec<T>> {
    parse_spec(&fs::read_to_string(path)?)
}

/// Writes the spec next to its destination and renames it into place.
pub fn save_spec<T: Scalar>(spec: &ModelSpec<T>, path: impl AsRef<Path>) -> Result<()> {
    crate::report::write_atomic(path.as_ref(), render_spec(spec)?.as_bytes())
}
