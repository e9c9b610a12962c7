//! Classical and drift-corrected Kalman–Bucy filters.
//!
//! ```text
//! dx̄ = (F x̄ + f) dt + K dI,    dI = dm - (G x̄ + g) dt
//! dx̂ = (F x̂ + f) dt + K dÎ,    dÎ = dm - (G x̂ + g + theta) dt
//! x̂_t = x̄_t - ∫_0^t A(t, s) theta_s ds
//! ```
//!
//! The general corrected filter carries the cross term
//! `E[x_t thetaᵀ | Z_t] - x̂_t thetaᵀ` in both its mean and its covariance
//! equation. When `theta` is deterministic (or already fixed along the
//! observation path it is evaluated on) it factors out of the conditional
//! expectation, the term is identically zero, and the filter above with the
//! unmodified Riccati variance is what remains. Only that case is
//! implemented.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::riccati::{self, GainPath, RiccatiOptions, VariancePath};
use crate::sde::ThetaTable;
use crate::{ModelSpec, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Classical,
    Corrected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput<T: Scalar> {
    /// Estimate at every node, n × (n_steps + 1); column 0 is `x0`.
    pub estimate: DMatrix<T>,
    /// Innovation increments, m × n_steps.
    pub innovations: DMatrix<T>,
    pub kind: FilterKind,
}

/// Filter bound to one model with its variance and gain paths precomputed.
#[derive(Debug, Clone)]
pub struct KalmanBucy<'a, T: Scalar> {
    spec: &'a ModelSpec<T>,
    variance: VariancePath<T>,
    gains: GainPath<T>,
}

impl<'a, T: Scalar> KalmanBucy<'a, T> {
    pub fn new(spec: &'a ModelSpec<T>) -> Result<Self> {
        Self::with_options(spec, RiccatiOptions::default())
    }

    pub fn with_options(spec: &'a ModelSpec<T>, options: RiccatiOptions) -> Result<Self> {
        spec.checked()?;
        let variance = riccati::solve_riccati(spec, options)?;
        let gains = riccati::kalman_gain(&variance, spec)?;
        Ok(Self {
            spec,
            variance,
            gains,
        })
    }

    pub fn spec(&self) -> &'a ModelSpec<T> {
        self.spec
    }

    pub fn variance(&self) -> &VariancePath<T> {
        &self.variance
    }

    pub fn gains(&self) -> &GainPath<T> {
        &self.gains
    }

    fn check_increments(&self, dm: &DMatrix<T>) -> Result<()> {
        if dm.nrows() != self.spec.m {
            return Err(Error::GridMismatch {
                what: "observation rows",
                expected: self.spec.m,
                found: dm.nrows(),
            });
        }
        if dm.ncols() != self.spec.n_steps() {
            return Err(Error::GridMismatch {
                what: "observation increments",
                expected: self.spec.n_steps(),
                found: dm.ncols(),
            });
        }
        Ok(())
    }

    fn check_theta_values(&self, theta: &DMatrix<T>) -> Result<()> {
        if theta.nrows() != self.spec.m {
            return Err(Error::GridMismatch {
                what: "theta rows",
                expected: self.spec.m,
                found: theta.nrows(),
            });
        }
        if theta.ncols() < self.spec.n_steps() {
            return Err(Error::GridMismatch {
                what: "theta values",
                expected: self.spec.n_steps(),
                found: theta.ncols(),
            });
        }
        Ok(())
    }

    /// Euler recursion shared by both filters. `theta = None` adds zeros, so
    /// the classical filter is the corrected filter at `theta = 0` bit for
    /// bit. Stops after `until` steps; innovations are written if requested.
    fn run(
        &self,
        dm: &DMatrix<T>,
        theta: Option<&DMatrix<T>>,
        until: usize,
        mut estimate: Option<&mut DMatrix<T>>,
        mut innovations: Option<&mut DMatrix<T>>,
    ) -> DVector<T> {
        let spec = self.spec;
        let (n, m) = (spec.n, spec.m);
        let dt = spec.dt();
        let c = &spec.coeffs;
        let mut x = spec.x0.clone();
        let mut pred = vec![T::zero(); m];
        let mut innov = vec![T::zero(); m];
        let mut drift = vec![T::zero(); n];
        let zeros = vec![T::zero(); m];
        if let Some(e) = estimate.as_deref_mut() {
            e.set_column(0, &x);
        }
        for k in 0..until {
            let th = match theta {
                Some(t) => &t.as_slice()[k * m..(k + 1) * m],
                None => &zeros[..],
            };
            pred.copy_from_slice(c.obs_drift[k].as_slice());
            linalg::mat_vec_acc(&mut pred, &c.obs_matrix[k], x.as_slice(), T::one());
            for i in 0..m {
                innov[i] = dm[(i, k)] - (pred[i] + th[i]) * dt;
            }
            drift.copy_from_slice(c.state_drift[k].as_slice());
            linalg::mat_vec_acc(&mut drift, &c.state_matrix[k], x.as_slice(), T::one());
            let gain = self.gains.at(k);
            for i in 0..n {
                let mut corr = T::zero();
                for j in 0..m {
                    corr += gain[(i, j)] * innov[j];
                }
                x[i] += drift[i] * dt + corr;
            }
            if let Some(e) = estimate.as_deref_mut() {
                e.set_column(k + 1, &x);
            }
            if let Some(v) = innovations.as_deref_mut() {
                v.column_mut(k).copy_from_slice(&innov);
            }
        }
        x
    }

    fn full(
        &self,
        dm: &DMatrix<T>,
        theta: Option<&DMatrix<T>>,
        kind: FilterKind,
    ) -> FilterOutput<T> {
        let steps = self.spec.n_steps();
        let mut estimate = DMatrix::zeros(self.spec.n, steps + 1);
        let mut innovations = DMatrix::zeros(self.spec.m, steps);
        self.run(
            dm,
            theta,
            steps,
            Some(&mut estimate),
            Some(&mut innovations),
        );
        FilterOutput {
            estimate,
            innovations,
            kind,
        }
    }

    /// Classical filter `x̄` driven by observation increments `dm`.
    pub fn classical_filter(&self, dm: &DMatrix<T>) -> Result<FilterOutput<T>> {
        self.check_increments(dm)?;
        Ok(self.full(dm, None, FilterKind::Classical))
    }

    /// Corrected filter `x̂` for a deterministic drift table.
    pub fn theta_filter(&self, dm: &DMatrix<T>, theta: &ThetaTable<T>) -> Result<FilterOutput<T>> {
        self.check_increments(dm)?;
        theta.check_grid(self.spec)?;
        theta.check_bound(&self.spec.mu)?;
        Ok(self.full(dm, Some(theta.values()), FilterKind::Corrected))
    }

    /// Corrected filter for drift values already fixed along this
    /// observation path (m × n_steps or more columns).
    pub fn theta_filter_along(
        &self,
        dm: &DMatrix<T>,
        theta: &DMatrix<T>,
    ) -> Result<FilterOutput<T>> {
        self.check_increments(dm)?;
        self.check_theta_values(theta)?;
        ThetaTable::from_matrix(theta.columns(0, self.spec.n_steps()).into())
            .check_bound(&self.spec.mu)?;
        Ok(self.full(dm, Some(theta), FilterKind::Corrected))
    }

    /// Estimate at node `t_index` only, without storing the trajectory.
    pub fn run_to(
        &self,
        dm: &DMatrix<T>,
        theta: Option<&DMatrix<T>>,
        t_index: usize,
    ) -> Result<DVector<T>> {
        self.check_increments(dm)?;
        if let Some(t) = theta {
            self.check_theta_values(t)?;
        }
        if t_index > self.spec.n_steps() {
            return Err(Error::GridMismatch {
                what: "node index",
                expected: self.spec.n_steps(),
                found: t_index,
            });
        }
        Ok(self.run(dm, theta, t_index, None, None))
    }

    /// `x̂_k = x̄_k - ∫_0^{t_k} A(t_k, s) theta_s ds`, trapezoidal in `s`.
    ///
    /// With `b_j = K_j theta_j` and `M_j = Φ(t_{j+1}, t_j)` the running sum
    /// `Z_0 = b_0 / 2`, `Z_{k+1} = M_k Z_k + b_{k+1}` gives the integral as
    /// `dt (Z_k - b_k / 2)`, so every node costs one matrix-vector product.
    pub fn decompose(&self, xbar: &DMatrix<T>, theta: &ThetaTable<T>) -> Result<DMatrix<T>> {
        let nodes = self.spec.grid.n_nodes();
        if xbar.nrows() != self.spec.n || xbar.ncols() != nodes {
            return Err(Error::GridMismatch {
                what: "filter estimate nodes",
                expected: nodes,
                found: xbar.ncols(),
            });
        }
        theta.check_grid(self.spec)?;
        let shifts = self.shift_path(theta);
        Ok(xbar - shifts)
    }

    /// `∫_0^{t_k} A(t_k, s) u_s ds` at every node, n × (n_steps + 1).
    pub fn shift_path(&self, u: &ThetaTable<T>) -> DMatrix<T> {
        let nodes = self.spec.grid.n_nodes();
        let dt = self.spec.dt();
        let half = T::lit(0.5);
        let mut out = DMatrix::zeros(self.spec.n, nodes);
        let b = |j: usize| self.gains.at(j) * DVector::from_column_slice(u.column(j));
        let mut b_k = b(0);
        let mut z = &b_k * half;
        for k in 1..nodes {
            let b_next = b(k);
            z = self.variance.propagator(k - 1) * z + &b_next;
            b_k = b_next;
            out.set_column(k, &((&z - &b_k * half) * dt));
        }
        out
    }

    /// Quadrature weights `c_j = w_j Φ(t, t_j) K_j`, j = 0..=t_index, with
    /// trapezoidal `w_j`. `∫_0^t A(t, s) u_s ds ≈ Σ_j c_j u_j`.
    pub fn bias_weights(&self, t_index: usize) -> Result<Vec<DMatrix<T>>> {
        if t_index > self.spec.n_steps() {
            return Err(Error::GridMismatch {
                what: "node index",
                expected: self.spec.n_steps(),
                found: t_index,
            });
        }
        let n = self.spec.n;
        let dt = self.spec.dt();
        let mut out = vec![DMatrix::zeros(n, self.spec.m); t_index + 1];
        if t_index == 0 {
            return Ok(out);
        }
        let mut phi = DMatrix::<T>::identity(n, n);
        for j in (0..=t_index).rev() {
            let w = if j == 0 || j == t_index {
                dt * T::lit(0.5)
            } else {
                dt
            };
            out[j] = &phi * self.gains.at(j) * w;
            if j > 0 {
                phi = &phi * self.variance.propagator(j - 1);
            }
        }
        Ok(out)
    }

    /// `Σ_j c_j u_j` at `t_index`.
    pub fn shift_offset(&self, u: &ThetaTable<T>, t_index: usize) -> Result<DVector<T>> {
        u.check_grid(self.spec)?;
        let weights = self.bias_weights(t_index)?;
        let mut out = DVector::zeros(self.spec.n);
        for (j, c) in weights.iter().enumerate() {
            out += c * DVector::from_column_slice(u.column(j));
        }
        Ok(out)
    }
}

/// `dÎ_k = dm_k - (G_k estimate_k + g_k + theta_k) dt`.
pub fn innovation_path<T: Scalar>(
    spec: &ModelSpec<T>,
    dm: &DMatrix<T>,
    estimate: &DMatrix<T>,
    theta: Option<&DMatrix<T>>,
) -> Result<DMatrix<T>> {
    let (m, steps) = (spec.m, spec.n_steps());
    if dm.nrows() != m || dm.ncols() != steps {
        return Err(Error::GridMismatch {
            what: "observation increments",
            expected: steps,
            found: dm.ncols(),
        });
    }
    if estimate.nrows() != spec.n || estimate.ncols() < steps {
        return Err(Error::GridMismatch {
            what: "estimate nodes",
            expected: steps + 1,
            found: estimate.ncols(),
        });
    }
    if let Some(t) = theta {
        if t.nrows() != m || t.ncols() < steps {
            return Err(Error::GridMismatch {
                what: "theta values",
                expected: steps,
                found: t.ncols(),
            });
        }
    }
    let dt = spec.dt();
    let c = &spec.coeffs;
    let mut out = DMatrix::zeros(m, steps);
    let mut pred = vec![T::zero(); m];
    for k in 0..steps {
        pred.copy_from_slice(c.obs_drift[k].as_slice());
        linalg::mat_vec_acc(
            &mut pred,
            &c.obs_matrix[k],
            &estimate.as_slice()[k * spec.n..(k + 1) * spec.n],
            T::one(),
        );
        for i in 0..m {
            let th = theta.map_or(T::zero(), |t| t[(i, k)]);
            out[(i, k)] = dm[(i, k)] - (pred[i] + th) * dt;
        }
    }
    Ok(out)
}
