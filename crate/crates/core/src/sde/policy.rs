use std::fmt;
use std::ops::{Add, Neg};
use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{Error, Result};
use crate::{ModelSpec, Scalar};

/// Deterministic observation-drift table, one m-vector per grid node.
///
/// Column `k` drives the increment over `[t_k, t_{k+1})`; the last column is
/// only read by quadratures that include the right endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaTable<T: Scalar> {
    values: DMatrix<T>,
}

impl<T: Scalar> ThetaTable<T> {
    pub fn from_matrix(values: DMatrix<T>) -> Self {
        Self { values }
    }

    pub fn zeros(spec: &ModelSpec<T>) -> Self {
        Self {
            values: DMatrix::zeros(spec.m, spec.grid.n_nodes()),
        }
    }

    pub fn constant(spec: &ModelSpec<T>, value: &DVector<T>) -> Self {
        Self::from_fn(spec, |_, _| value.clone())
    }

    pub fn constant_scalar(spec: &ModelSpec<T>, value: T) -> Self {
        Self {
            values: DMatrix::from_element(spec.m, spec.grid.n_nodes(), value),
        }
    }

    pub fn from_fn(spec: &ModelSpec<T>, mut f: impl FnMut(usize, T) -> DVector<T>) -> Self {
        let mut values = DMatrix::zeros(spec.m, spec.grid.n_nodes());
        for k in 0..spec.grid.n_nodes() {
            values.set_column(k, &f(k, spec.grid.node(k)));
        }
        Self { values }
    }

    /// Piecewise-constant table: the horizon is cut into `blocks.len()`
    /// equal index ranges and block `b` holds `blocks[b]`.
    pub fn blocks(spec: &ModelSpec<T>, blocks: &[DVector<T>]) -> Self {
        let n_steps = spec.n_steps();
        let count = blocks.len().max(1);
        Self::from_fn(spec, |k, _| {
            let b = (k.min(n_steps - 1) * count) / n_steps;
            blocks[b].clone()
        })
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.values
    }

    pub fn column(&self, k: usize) -> &[T] {
        let m = self.values.nrows();
        &self.values.as_slice()[k * m..(k + 1) * m]
    }

    pub fn n_nodes(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == T::zero())
    }

    pub fn scale(&self, factor: T) -> Self {
        Self {
            values: &self.values * factor,
        }
    }

    /// Checks `|theta_i| <= mu_i` on every node.
    pub fn check_bound(&self, mu: &DVector<T>) -> Result<()> {
        for k in 0..self.values.ncols() {
            for (i, &v) in self.values.column(k).iter().enumerate() {
                if !(v.abs() <= mu[i]) {
                    return Err(Error::PolicyBoundViolation {
                        step: k,
                        component: i,
                        value: v.as_f64(),
                        bound: mu[i].as_f64(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn check_grid(&self, spec: &ModelSpec<T>) -> Result<()> {
        if self.values.nrows() != spec.m {
            return Err(Error::GridMismatch {
                what: "theta rows",
                expected: spec.m,
                found: self.values.nrows(),
            });
        }
        if self.values.ncols() != spec.grid.n_nodes() {
            return Err(Error::GridMismatch {
                what: "theta nodes",
                expected: spec.grid.n_nodes(),
                found: self.values.ncols(),
            });
        }
        Ok(())
    }

    pub fn clamped(&self, mu: &DVector<T>) -> Self {
        let mut values = self.values.clone();
        for mut col in values.column_iter_mut() {
            for (i, v) in col.iter_mut().enumerate() {
                *v = v.max(-mu[i]).min(mu[i]);
            }
        }
        Self { values }
    }
}

impl<T: Scalar> Add for &ThetaTable<T> {
    type Output = ThetaTable<T>;

    fn add(self, rhs: Self) -> ThetaTable<T> {
        ThetaTable {
            values: &self.values + &rhs.values,
        }
    }
}

impl<T: Scalar> Neg for &ThetaTable<T> {
    type Output = ThetaTable<T>;

    fn neg(self) -> ThetaTable<T> {
        ThetaTable {
            values: -&self.values,
        }
    }
}

/// What a feedback rule may look at when choosing `theta_k`: the observation
/// path up to and including node `k`, never the increment it is about to
/// drive.
pub struct FeedbackInput<'a, T: Scalar> {
    pub step: usize,
    pub time: T,
    /// Observation nodes `m_0..=m_k`, one column each.
    pub observations: DMatrixView<'a, T>,
    pub mu: &'a DVector<T>,
}

pub type FeedbackFn<T> = dyn Fn(&FeedbackInput<'_, T>) -> DVector<T> + Send + Sync;

#[derive(Clone)]
pub enum ThetaSource<T: Scalar> {
    Deterministic(ThetaTable<T>),
    Feedback(Arc<FeedbackFn<T>>),
}

/// A drift-perturbation strategy bounded by `mu`.
#[derive(Clone)]
pub struct ThetaPolicy<T: Scalar> {
    pub source: ThetaSource<T>,
    /// Clamp out-of-bound values instead of rejecting them.
    pub clamp: bool,
    pub label: String,
}

impl<T: Scalar> fmt::Debug for ThetaPolicy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.source {
            ThetaSource::Deterministic(_) => "deterministic",
            ThetaSource::Feedback(_) => "feedback",
        };
        f.debug_struct("ThetaPolicy")
            .field("label", &self.label)
            .field("kind", &kind)
            .field("clamp", &self.clamp)
            .finish()
    }
}

impl<T: Scalar> ThetaPolicy<T> {
    pub fn deterministic(label: impl Into<String>, table: ThetaTable<T>) -> Self {
        Self {
            source: ThetaSource::Deterministic(table),
            clamp: false,
            label: label.into(),
        }
    }

    pub fn feedback(
        label: impl Into<String>,
        rule: impl Fn(&FeedbackInput<'_, T>) -> DVector<T> + Send + Sync + 'static,
    ) -> Self {
        Self {
            source: ThetaSource::Feedback(Arc::new(rule)),
            clamp: false,
            label: label.into(),
        }
    }

    pub fn zero(spec: &ModelSpec<T>) -> Self {
        Self::deterministic("zero", ThetaTable::zeros(spec))
    }

    pub fn constant(spec: &ModelSpec<T>, value: &DVector<T>) -> Self {
        let label = format!(
            "constant{:?}",
            value.iter().map(|v| v.as_f64()).collect::<Vec<_>>()
        );
        Self::deterministic(label, ThetaTable::constant(spec, value))
    }

    /// `theta_k = mu * sign(m_k)` componentwise, with `sign(0) = +1`.
    pub fn sign_feedback() -> Self {
        Self::feedback("sign-feedback", |input: &FeedbackInput<'_, T>| {
            let last = input.observations.column(input.observations.ncols() - 1);
            DVector::from_iterator(
                input.mu.len(),
                last.iter()
                    .zip(input.mu.iter())
                    .map(|(&m, &mu)| if m < T::zero() { -mu } else { mu }),
            )
        })
    }

    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn table(&self) -> Option<&ThetaTable<T>> {
        match &self.source {
            ThetaSource::Deterministic(t) => Some(t),
            ThetaSource::Feedback(_) => None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.table().is_some()
    }

    /// Checks a deterministic table against the grid and, unless clamping,
    /// against the bound. Feedback rules are checked as they emit.
    pub fn check(&self, spec: &ModelSpec<T>) -> Result<()> {
        if let Some(table) = self.table() {
            table.check_grid(spec)?;
            if !self.clamp {
                table.check_bound(&spec.mu)?;
            }
        }
        Ok(())
    }

    /// Writes `theta_k` into `out`, clamping or rejecting out-of-bound values.
    pub fn emit(
        &self,
        step: usize,
        time: T,
        observations: DMatrixView<'_, T>,
        mu: &DVector<T>,
        out: &mut [T],
    ) -> Result<()> {
        match &self.source {
            ThetaSource::Deterministic(table) => out.copy_from_slice(table.column(step)),
            ThetaSource::Feedback(rule) => {
                let v = rule(&FeedbackInput {
                    step,
                    time,
                    observations,
                    mu,
                });
                if v.len() != out.len() {
                    return Err(Error::GridMismatch {
                        what: "feedback theta length",
                        expected: out.len(),
                        found: v.len(),
                    });
                }
                out.copy_from_slice(v.as_slice());
            }
        }
        for (i, v) in out.iter_mut().enumerate() {
            if !(v.abs() <= mu[i]) {
                if self.clamp && !v.as_f64().is_nan() {
                    *v = v.max(-mu[i]).min(mu[i]);
                } else {
                    return Err(Error::PolicyBoundViolation {
                        step,
                        component: i,
                        value: v.as_f64(),
                        bound: mu[i].as_f64(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Values the policy emits along an observation path (`m` nodes), one
    /// column per step.
    pub fn evaluate_along(
        &self,
        spec: &ModelSpec<T>,
        observations: &DMatrix<T>,
    ) -> Result<DMatrix<T>> {
        let n_steps = spec.n_steps();
        let mut out = DMatrix::zeros(spec.m, n_steps);
        let mut buf = vec![T::zero(); spec.m];
        for k in 0..n_steps {
            self.emit(
                k,
                spec.grid.node(k),
                observations.columns(0, k + 1),
                &spec.mu,
                &mut buf,
            )?;
            out.column_mut(k).copy_from_slice(&buf);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec<f64> {
        ModelSpec::scalar(0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.5, 1.0, 8).unwrap()
    }

    #[test]
    fn bound_is_checked_or_clamped() {
        let s = spec();
        let p = ThetaPolicy::constant(&s, &DVector::from_element(1, 0.7));
        assert!(matches!(
            p.check(&s),
            Err(Error::PolicyBoundViolation { .. })
        ));
        let mut out = [0.0];
        let obs = DMatrix::zeros(1, 1);
        assert!(p.emit(0, 0.0, obs.columns(0, 1), &s.mu, &mut out).is_err());
        let p = p.with_clamp(true);
        assert!(p.check(&s).is_ok());
        p.emit(0, 0.0, obs.columns(0, 1), &s.mu, &mut out).unwrap();
        assert_eq!(out, [0.5]);
    }

    #[test]
    fn blocks_split_the_horizon() {
        let s = spec();
        let t = ThetaTable::blocks(
            &s,
            &[
                DVector::from_element(1, 1.0),
                DVector::from_element(1, -1.0),
            ],
        );
        let col: Vec<f64> = (0..9).map(|k| t.column(k)[0]).collect();
        assert_eq!(col, vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn sign_feedback_sees_only_past_observations() {
        let s = spec();
        let p = ThetaPolicy::<f64>::sign_feedback();
        let obs = DMatrix::from_row_slice(1, 3, &[0.0, -0.2, 0.3]);
        let vals = {
            let mut spec2 = s.clone();
            spec2.grid = crate::TimeGrid::new(1.0, 2).unwrap();
            p.evaluate_along(&spec2, &obs).unwrap()
        };
        assert_eq!(vals.as_slice(), &[0.5, -0.5]);
    }
}
