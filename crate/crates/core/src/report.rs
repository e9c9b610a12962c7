//! CSV exports. All numerals use shortest round-trip formatting, so files
//! re-read with any IEEE parser reproduce the in-memory values exactly, and
//! every file is written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::filter::FilterOutput;
use crate::riccati::{GainPath, VariancePath};
use crate::sde::PathBundle;
use crate::{ModelSpec, Scalar};

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// In-memory CSV table with a fixed header.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }
}

#[inline]
pub fn num<T: Scalar>(v: T) -> String {
    format!("{v}")
}

fn indexed(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (0..count).map(move |i| format!("{prefix}{i}"))
}

/// `(path_id, k, t, x…, m…, theta…)`, one row per node; theta is blank at the
/// final node because it drives the increment leaving each node.
pub fn path_table<T: Scalar>(spec: &ModelSpec<T>, bundle: &PathBundle<T>) -> Table {
    let mut header = vec!["path_id".to_string(), "k".into(), "t".into()];
    header.extend(indexed("x", spec.n));
    header.extend(indexed("m", spec.m));
    header.extend(indexed("theta", spec.m));
    let mut table = Table::new(header);
    let n_steps = spec.n_steps();
    for path in &bundle.paths {
        for k in 0..=n_steps {
            let mut row = vec![
                path.path_id.to_string(),
                k.to_string(),
                num(spec.grid.node(k)),
            ];
            row.extend(path.x.column(k).iter().map(|&v| num(v)));
            row.extend(path.m.column(k).iter().map(|&v| num(v)));
            if k < n_steps {
                row.extend(path.theta.column(k).iter().map(|&v| num(v)));
            } else {
                row.extend(std::iter::repeat_n(String::new(), spec.m));
            }
            table.push(row);
        }
    }
    table
}

/// `(t, P_ij…, K_ij…)` with matrices flattened column-major.
pub fn riccati_table<T: Scalar>(
    spec: &ModelSpec<T>,
    variance: &VariancePath<T>,
    gains: &GainPath<T>,
) -> Table {
    let (n, m) = (spec.n, spec.m);
    let mut header = vec!["t".to_string()];
    for j in 0..n {
        for i in 0..n {
            header.push(format!("P{i}{j}"));
        }
    }
    for j in 0..m {
        for i in 0..n {
            header.push(format!("K{i}{j}"));
        }
    }
    let mut table = Table::new(header);
    for k in 0..=spec.n_steps() {
        let mut row = vec![num(spec.grid.node(k))];
        row.extend(variance.at(k).iter().map(|&v| num(v)));
        row.extend(gains.at(k).iter().map(|&v| num(v)));
        table.push(row);
    }
    table
}

/// `(k, t, x_true…, xbar…, xhat…, P diag…, innovation…)` for one path.
pub fn filter_table<T: Scalar>(
    spec: &ModelSpec<T>,
    x_true: &nalgebra::DMatrix<T>,
    classical: &FilterOutput<T>,
    corrected: &FilterOutput<T>,
    variance: &VariancePath<T>,
) -> Table {
    let (n, m) = (spec.n, spec.m);
    let mut header = vec!["k".to_string(), "t".into()];
    header.extend(indexed("x_true", n));
    header.extend(indexed("xbar", n));
    header.extend(indexed("xhat", n));
    header.extend(indexed("P", n));
    header.extend(indexed("innovation", m));
    let mut table = Table::new(header);
    let n_steps = spec.n_steps();
    for k in 0..=n_steps {
        let mut row = vec![k.to_string(), num(spec.grid.node(k))];
        row.extend(x_true.column(k).iter().map(|&v| num(v)));
        row.extend(classical.estimate.column(k).iter().map(|&v| num(v)));
        row.extend(corrected.estimate.column(k).iter().map(|&v| num(v)));
        row.extend((0..n).map(|i| num(variance.at(k)[(i, i)])));
        if k < n_steps {
            row.extend(corrected.innovations.column(k).iter().map(|&v| num(v)));
        } else {
            row.extend(std::iter::repeat_n(String::new(), m));
        }
        table.push(row);
    }
    table
}

/// Tidy long-format rows `(path_id, series, component, k, t, value)`.
pub fn long_table<T: Scalar>(
    spec: &ModelSpec<T>,
    series: &[(usize, &str, &nalgebra::DMatrix<T>)],
) -> Table {
    let mut table = Table::new(["path_id", "series", "component", "k", "t", "value"]);
    for &(path_id, name, data) in series {
        for k in 0..data.ncols() {
            for (i, &v) in data.column(k).iter().enumerate() {
                table.push(vec![
                    path_id.to_string(),
                    name.to_string(),
                    i.to_string(),
                    k.to_string(),
                    num(spec.grid.node(k)),
                    num(v),
                ]);
            }
        }
    }
    table
}
