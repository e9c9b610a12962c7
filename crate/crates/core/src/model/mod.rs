//! Linear signal/observation model with drift ambiguity.
//!
//! Under the reference measure the signal `x` and observation `m` follow
//!
//! ```text
//! dx = (F x + f) dt + dw,   x(0) = x0,   Cov(dw) = Q dt
//! dm = (G x + g) dt + dv,   m(0) = 0,    Cov(dv) = R dt
//! ```
//!
//! and the ambiguity set adds an observation drift `theta` with
//! `|theta_i| <= mu_i`. Coefficients are tabulated on a uniform time grid.

mod file;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::Scalar;

pub use file::{load_spec, parse_spec, render_spec, save_spec};

pub const DEFAULT_R_MIN: f64 = 1e-8;
pub const DEFAULT_ENTRY_BOUND: f64 = 1e6;
const SYMMETRY_TOL: f64 = 1e-12;

/// Uniform grid `t_k = k * dt` on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    horizon: T,
    n_steps: usize,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(horizon: T, n_steps: usize) -> Result<Self> {
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::invalid(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::invalid("n_steps must be at least 1"));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> T {
        self.horizon / T::of_usize(self.n_steps)
    }

    /// Node time; the last node is exactly the horizon.
    pub fn node(&self, k: usize) -> T {
        if k >= self.n_steps {
            self.horizon
        } else {
            T::of_usize(k) * self.dt()
        }
    }

    /// Locates `t` as (interval index, fraction within the interval).
    pub fn locate(&self, t: T) -> Result<(usize, T)> {
        if !(t >= T::zero() && t <= self.horizon) {
            return Err(Error::OutOfRangeTime {
                t: t.as_f64(),
                horizon: self.horizon.as_f64(),
            });
        }
        if t == self.horizon {
            return Ok((self.n_steps, T::zero()));
        }
        let scaled = t / self.dt();
        let k = scaled.floor().as_f64() as usize;
        let k = k.min(self.n_steps - 1);
        Ok((k, (scaled - T::of_usize(k)).max(T::zero()).min(T::one())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Value of node `k` on `[t_k, t_{k+1})`.
    #[default]
    PiecewiseConstantLeft,
    PiecewiseLinear,
}

/// Coefficients evaluated at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients<T: Scalar> {
    pub state_matrix: DMatrix<T>,
    pub state_drift: DVector<T>,
    pub obs_matrix: DMatrix<T>,
    pub obs_drift: DVector<T>,
    pub signal_noise: DMatrix<T>,
    pub obs_noise: DMatrix<T>,
}

/// Per-node coefficient samples (`n_steps + 1` entries each).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable<T: Scalar> {
    /// `F`, n×n.
    pub state_matrix: Vec<DMatrix<T>>,
    /// `f`, n.
    pub state_drift: Vec<DVector<T>>,
    /// `G`, m×n.
    pub obs_matrix: Vec<DMatrix<T>>,
    /// `g`, m.
    pub obs_drift: Vec<DVector<T>>,
    /// `Q`, n×n covariance rate of the signal noise.
    pub signal_noise: Vec<DMatrix<T>>,
    /// `R`, m×m covariance rate of the observation noise.
    pub obs_noise: Vec<DMatrix<T>>,
    pub interpolation: Interpolation,
}

impl<T: Scalar> CoefficientTable<T> {
    pub fn constant(c: &Coefficients<T>, n_nodes: usize, interpolation: Interpolation) -> Self {
        Self {
            state_matrix: vec![c.state_matrix.clone(); n_nodes],
            state_drift: vec![c.state_drift.clone(); n_nodes],
            obs_matrix: vec![c.obs_matrix.clone(); n_nodes],
            obs_drift: vec![c.obs_drift.clone(); n_nodes],
            signal_noise: vec![c.signal_noise.clone(); n_nodes],
            obs_noise: vec![c.obs_noise.clone(); n_nodes],
            interpolation,
        }
    }

    pub fn node(&self, k: usize) -> Coefficients<T> {
        Coefficients {
            state_matrix: self.state_matrix[k].clone(),
            state_drift: self.state_drift[k].clone(),
            obs_matrix: self.obs_matrix[k].clone(),
            obs_drift: self.obs_drift[k].clone(),
            signal_noise: self.signal_noise[k].clone(),
            obs_noise: self.obs_noise[k].clone(),
        }
    }

    /// Coefficients inside interval `k` at fraction `frac` in `[0, 1]`.
    ///
    /// Under piecewise-constant-left interpolation the whole closed interval
    /// uses node `k`, which is what one-sided ODE integration over the
    /// interval needs.
    pub fn on_interval(&self, k: usize, frac: T) -> Coefficients<T> {
        let last = self.state_matrix.len() - 1;
        if k >= last
            || frac == T::zero()
            || self.interpolation == Interpolation::PiecewiseConstantLeft
        {
            return self.node(k.min(last));
        }
        if frac == T::one() {
            return self.node(k + 1);
        }
        let w = frac;
        let v = T::one() - frac;
        fn mix<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, v: T, w: T) -> DMatrix<T> {
            a * v + b * w
        }
        fn mixv<T: Scalar>(a: &DVector<T>, b: &DVector<T>, v: T, w: T) -> DVector<T> {
            a * v + b * w
        }
        Coefficients {
            state_matrix: mix(&self.state_matrix[k], &self.state_matrix[k + 1], v, w),
            state_drift: mixv(&self.state_drift[k], &self.state_drift[k + 1], v, w),
            obs_matrix: mix(&self.obs_matrix[k], &self.obs_matrix[k + 1], v, w),
            obs_drift: mixv(&self.obs_drift[k], &self.obs_drift[k + 1], v, w),
            signal_noise: mix(&self.signal_noise[k], &self.signal_noise[k + 1], v, w),
            obs_noise: mix(&self.obs_noise[k], &self.obs_noise[k + 1], v, w),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<T: Scalar> {
    /// Signal dimension.
    pub n: usize,
    /// Observation dimension.
    pub m: usize,
    pub grid: TimeGrid<T>,
    pub coeffs: CoefficientTable<T>,
    pub x0: DVector<T>,
    /// Componentwise bound on the ambiguous observation drift.
    pub mu: DVector<T>,
    /// Required lower bound on the smallest eigenvalue of every `R` node.
    pub r_min: T,
    /// Bound on the magnitude of every coefficient entry.
    pub entry_bound: T,
}

impl<T: Scalar> ModelSpec<T> {
    /// Model with time-constant coefficients.
    pub fn constant(grid: TimeGrid<T>, c: Coefficients<T>, x0: DVector<T>, mu: DVector<T>) -> Self {
        let coeffs = CoefficientTable::constant(&c, grid.n_nodes(), Interpolation::default());
        Self {
            n: x0.len(),
            m: mu.len(),
            grid,
            coeffs,
            x0,
            mu,
            r_min: T::lit(DEFAULT_R_MIN),
            entry_bound: T::lit(DEFAULT_ENTRY_BOUND),
        }
    }

    /// One-dimensional constant-coefficient model.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        state_matrix: f64,
        state_drift: f64,
        obs_matrix: f64,
        obs_drift: f64,
        signal_noise: f64,
        obs_noise: f64,
        x0: f64,
        mu: f64,
        horizon: f64,
        n_steps: usize,
    ) -> Result<Self> {
        let one = |v: f64| DMatrix::from_element(1, 1, T::lit(v));
        let grid = TimeGrid::new(T::lit(horizon), n_steps)?;
        Ok(Self::constant(
            grid,
            Coefficients {
                state_matrix: one(state_matrix),
                state_drift: DVector::from_element(1, T::lit(state_drift)),
                obs_matrix: one(obs_matrix),
                obs_drift: DVector::from_element(1, T::lit(obs_drift)),
                signal_noise: one(signal_noise),
                obs_noise: one(obs_noise),
            },
            DVector::from_element(1, T::lit(x0)),
            DVector::from_element(1, T::lit(mu)),
        ))
    }

    pub fn dt(&self) -> T {
        self.grid.dt()
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    /// Coefficients at time `t`, interpolated per the table's mode.
    pub fn eval_coeffs(&self, t: T) -> Result<Coefficients<T>> {
        let (k, frac) = self.grid.locate(t)?;
        Ok(self.coeffs.on_interval(k, frac))
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    /// Validates and returns the spec, or the full report as an error.
    pub fn checked(&self) -> Result<&Self> {
        let report = validate(self);
        if report.is_ok() {
            Ok(self)
        } else {
            Err(Error::InvalidSpec(report))
        }
    }

    /// Same model with a different ambiguity bound.
    pub fn with_mu(mut self, mu: DVector<T>) -> Self {
        self.m = mu.len();
        self.mu = mu;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NonPositiveDefiniteR,
    AsymmetricCovariance,
    NonPsdQ,
    NegativeMu,
    DimensionMismatch,
    NonFiniteEntry,
    EntryBoundExceeded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub node: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, node: Option<usize>, detail: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            node,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            match v.node {
                Some(k) => write!(f, "{:?} at node {k}: {}", v.kind, v.detail)?,
                None => write!(f, "{:?}: {}", v.kind, v.detail)?,
            }
        }
        Ok(())
    }
}

/// Checks every standing assumption on the model and reports each violation.
pub fn validate<T: Scalar>(spec: &ModelSpec<T>) -> ValidationReport {
    use ViolationKind::*;
    let mut report = ValidationReport::default();
    let (n, m) = (spec.n, spec.m);
    let table = &spec.coeffs;
    let nodes = spec.grid.n_nodes();

    if spec.x0.len() != n {
        report.push(
            DimensionMismatch,
            None,
            format!("x0 has length {}, expected {n}", spec.x0.len()),
        );
    }
    if spec.mu.len() != m {
        report.push(
            DimensionMismatch,
            None,
            format!("mu has length {}, expected {m}", spec.mu.len()),
        );
    }
    let lens = [
        table.state_matrix.len(),
        table.state_drift.len(),
        table.obs_matrix.len(),
        table.obs_drift.len(),
        table.signal_noise.len(),
        table.obs_noise.len(),
    ];
    if lens.iter().any(|&l| l != nodes) {
        report.push(
            DimensionMismatch,
            None,
            format!("coefficient tables must have {nodes} nodes, found {lens:?}"),
        );
        return report;
    }
    if !(spec.r_min > T::zero()) {
        report.push(
            NonPositiveDefiniteR,
            None,
            format!("r_min must be positive, got {}", spec.r_min),
        );
    }

    for (i, &v) in spec.mu.iter().enumerate() {
        if !v.is_finite() {
            report.push(NonFiniteEntry, None, format!("mu[{i}] = {v}"));
        } else if v < T::zero() {
            report.push(NegativeMu, None, format!("mu[{i}] = {v}"));
        }
    }
    if spec.x0.iter().any(|v| !v.is_finite()) {
        report.push(NonFiniteEntry, None, "x0 has a non-finite entry");
    }

    let sym_tol = T::lit(SYMMETRY_TOL);
    for k in 0..nodes {
        let shapes = [
            ("F", table.state_matrix[k].shape(), (n, n)),
            ("f", table.state_drift[k].shape(), (n, 1)),
            ("G", table.obs_matrix[k].shape(), (m, n)),
            ("g", table.obs_drift[k].shape(), (m, 1)),
            ("Q", table.signal_noise[k].shape(), (n, n)),
            ("R", table.obs_noise[k].shape(), (m, m)),
        ];
        let mut shapes_ok = true;
        for (name, got, want) in shapes {
            if got != want {
                shapes_ok = false;
                report.push(
                    DimensionMismatch,
                    Some(k),
                    format!(
                        "{name} is {}x{}, expected {}x{}",
                        got.0, got.1, want.0, want.1
                    ),
                );
            }
        }

        let entries = table.state_matrix[k]
            .iter()
            .chain(table.state_drift[k].iter())
            .chain(table.obs_matrix[k].iter())
            .chain(table.obs_drift[k].iter())
            .chain(table.signal_noise[k].iter())
            .chain(table.obs_noise[k].iter());
        let mut finite = true;
        let mut biggest = T::zero();
        for &v in entries {
            if !v.is_finite() {
                finite = false;
            } else {
                biggest = biggest.max(v.abs());
            }
        }
        if !finite {
            report.push(NonFiniteEntry, Some(k), "coefficient entry is not finite");
            continue;
        }
        if biggest > spec.entry_bound {
            report.push(
                EntryBoundExceeded,
                Some(k),
                format!("|entry| = {biggest} exceeds bound {}", spec.entry_bound),
            );
        }
        if !shapes_ok {
            continue;
        }

        let q = &table.signal_noise[k];
        let r = &table.obs_noise[k];
        if linalg::asymmetry(q) > sym_tol {
            report.push(AsymmetricCovariance, Some(k), "Q is not symmetric");
        } else {
            let lo = linalg::min_eigenvalue(q);
            if lo < -sym_tol {
                report.push(NonPsdQ, Some(k), format!("Q has eigenvalue {lo}"));
            }
        }
        if linalg::asymmetry(r) > sym_tol {
            report.push(AsymmetricCovariance, Some(k), "R is not symmetric");
        } else {
            let lo = linalg::min_eigenvalue(r);
            if lo < spec.r_min {
                report.push(
                    NonPositiveDefiniteR,
                    Some(k),
                    format!("R has eigenvalue {lo} < r_min = {}", spec.r_min),
                );
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar() -> ModelSpec<f64> {
        ModelSpec::scalar(0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.5, 1.0, 10).unwrap()
    }

    #[test]
    fn well_posed_scalar_model_validates() {
        assert!(scalar().validate().is_ok());
    }

    #[test]
    fn zero_r_at_one_node_is_rejected() {
        let mut s = scalar();
        s.coeffs.obs_noise[3][(0, 0)] = 0.0;
        let report = s.validate();
        assert!(report.has(ViolationKind::NonPositiveDefiniteR));
        assert_eq!(report.violations[0].node, Some(3));
        assert!(matches!(s.checked(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn zero_mu_is_a_valid_degenerate_model() {
        let s = scalar().with_mu(DVector::from_element(1, 0.0));
        assert!(s.validate().is_ok());
    }

    #[test]
    fn negative_mu_and_asymmetry_and_nan_are_reported() {
        let mut s = scalar().with_mu(DVector::from_element(1, -0.1));
        assert!(s.validate().has(ViolationKind::NegativeMu));

        s = ModelSpec::constant(
            TimeGrid::new(1.0, 4).unwrap(),
            Coefficients {
                state_matrix: DMatrix::zeros(2, 2),
                state_drift: DVector::zeros(2),
                obs_matrix: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                obs_drift: DVector::zeros(1),
                signal_noise: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]),
                obs_noise: DMatrix::identity(1, 1),
            },
            DVector::zeros(2),
            DVector::from_element(1, 0.5),
        );
        assert!(s.validate().has(ViolationKind::AsymmetricCovariance));

        let mut s = scalar();
        s.coeffs.state_matrix[0][(0, 0)] = f64::NAN;
        assert!(s.validate().has(ViolationKind::NonFiniteEntry));

        let mut s = scalar();
        s.coeffs.state_drift[2] = DVector::zeros(2);
        assert!(s.validate().has(ViolationKind::DimensionMismatch));

        let mut s = scalar();
        s.coeffs.state_drift[1][0] = 2e6;
        assert!(s.validate().has(ViolationKind::EntryBoundExceeded));
    }

    #[test]
    fn grid_nodes_are_strictly_increasing_and_end_at_horizon() {
        let g = TimeGrid::new(0.7f64, 7).unwrap();
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(7), 0.7);
        for k in 0..7 {
            assert!(g.node(k + 1) > g.node(k));
        }
        assert!(TimeGrid::new(0.0f64, 3).is_err());
        assert!(TimeGrid::new(1.0f64, 0).is_err());
    }

    #[test]
    fn constant_table_evaluates_to_constants() {
        let s = scalar();
        for t in [0.0, 0.123, 0.5, 1.0] {
            let c = s.eval_coeffs(t).unwrap();
            assert_eq!(c.obs_matrix[(0, 0)], 1.0);
            assert_eq!(c.signal_noise[(0, 0)], 1.0);
        }
        assert!(matches!(
            s.eval_coeffs(1.5),
            Err(Error::OutOfRangeTime { .. })
        ));
        assert!(s.eval_coeffs(-0.1).is_err());
    }

    #[test]
    fn linear_interpolation_between_nodes() {
        let mut s =
            ModelSpec::<f64>::scalar(0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.5, 1.0, 2).unwrap();
        s.coeffs.interpolation = Interpolation::PiecewiseLinear;
        s.coeffs.state_matrix[0][(0, 0)] = 0.0;
        s.coeffs.state_matrix[1][(0, 0)] = 2.0;
        s.coeffs.state_matrix[2][(0, 0)] = 5.0;
        assert_eq!(s.eval_coeffs(0.25).unwrap().state_matrix[(0, 0)], 1.0);
        assert_eq!(s.eval_coeffs(1.0).unwrap().state_matrix[(0, 0)], 5.0);
        assert_eq!(s.eval_coeffs(0.5).unwrap().state_matrix[(0, 0)], 2.0);

        s.coeffs.interpolation = Interpolation::PiecewiseConstantLeft;
        assert_eq!(s.eval_coeffs(0.25).unwrap().state_matrix[(0, 0)], 0.0);
        assert_eq!(s.eval_coeffs(1.0).unwrap().state_matrix[(0, 0)], 5.0);
    }
}
