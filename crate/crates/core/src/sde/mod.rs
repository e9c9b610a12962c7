//! Euler–Maruyama simulation of the signal/observation pair under the
//! reference measure and under drift-shifted measures.

mod density;
mod policy;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::Result;
use crate::linalg;
use crate::rng::NoiseStream;
use crate::{ModelSpec, Scalar};

pub use density::{convex_mix_theta, girsanov_density, DensityKernel, DensityScheme};
pub use policy::{FeedbackFn, FeedbackInput, ThetaPolicy, ThetaSource, ThetaTable};

/// Measure a bundle was simulated under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Measure {
    Reference,
    Tilted(String),
}

impl Measure {
    pub fn tag(&self) -> &str {
        match self {
            Measure::Reference => "P",
            Measure::Tilted(label) => label,
        }
    }
}

/// One simulated trajectory. States have one column per node, increments
/// one column per step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPath<T: Scalar> {
    pub path_id: u64,
    pub seed: u64,
    /// Signal, n × (n_steps + 1).
    pub x: DMatrix<T>,
    /// Observation, m × (n_steps + 1), `m[0] = 0`.
    pub m: DMatrix<T>,
    /// Observation increments, m × n_steps.
    pub dm: DMatrix<T>,
    /// Signal noise increments, n × n_steps.
    pub dw: DMatrix<T>,
    /// Observation noise increments: `v` under the reference measure,
    /// `v^theta` under a tilted one. m × n_steps.
    pub dv: DMatrix<T>,
    /// Drift perturbation applied on each step, m × n_steps.
    pub theta: DMatrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle<T: Scalar> {
    pub measure: Measure,
    pub seed: u64,
    pub paths: Vec<SimPath<T>>,
}

/// Simulator bound to a validated model, with per-node noise factors cached.
#[derive(Debug, Clone)]
pub struct Simulator<'a, T: Scalar> {
    spec: &'a ModelSpec<T>,
    signal_sqrt: Vec<DMatrix<T>>,
    obs_sqrt: Vec<DMatrix<T>>,
}

impl<'a, T: Scalar> Simulator<'a, T> {
    pub fn new(spec: &'a ModelSpec<T>) -> Result<Self> {
        spec.checked()?;
        let steps = spec.n_steps();
        Ok(Self {
            spec,
            signal_sqrt: spec.coeffs.signal_noise[..steps]
                .iter()
                .map(linalg::psd_sqrt)
                .collect(),
            obs_sqrt: spec.coeffs.obs_noise[..steps]
                .iter()
                .map(linalg::psd_sqrt)
                .collect(),
        })
    }

    pub fn spec(&self) -> &'a ModelSpec<T> {
        self.spec
    }

    /// Simulates path `path_id`; `policy = None` is the reference measure.
    ///
    /// ```text
    /// x_{k+1} = x_k + (F x_k + f) dt + dw_k
    /// dm_k    = (G x_k + g + theta_k) dt + dv_k
    /// ```
    pub fn simulate_path(
        &self,
        policy: Option<&ThetaPolicy<T>>,
        path_id: u64,
        seed: u64,
    ) -> Result<SimPath<T>> {
        let spec = self.spec;
        let (n, m, steps) = (spec.n, spec.m, spec.n_steps());
        let dt = spec.dt();
        let sqrt_dt = dt.sqrt();
        let c = &spec.coeffs;

        let mut x = DMatrix::zeros(n, steps + 1);
        let mut obs = DMatrix::zeros(m, steps + 1);
        let mut dm = DMatrix::zeros(m, steps);
        let mut dw = DMatrix::zeros(n, steps);
        let mut dv = DMatrix::zeros(m, steps);
        let mut theta = DMatrix::zeros(m, steps);
        x.column_mut(0).copy_from(&spec.x0);

        let mut stream = NoiseStream::for_path(seed, path_id);
        let mut zw = vec![T::zero(); n];
        let mut zv = vec![T::zero(); m];
        let mut th = vec![T::zero(); m];
        let mut drift_x = vec![T::zero(); n];
        let mut drift_m = vec![T::zero(); m];
        let mut noise_w = vec![T::zero(); n];
        let mut noise_v = vec![T::zero(); m];
        let mut xk = vec![T::zero(); n];

        for k in 0..steps {
            stream.fill_normal(&mut zw);
            stream.fill_normal(&mut zv);
            if let Some(p) = policy {
                p.emit(
                    k,
                    spec.grid.node(k),
                    obs.columns(0, k + 1),
                    &spec.mu,
                    &mut th,
                )?;
            }

            xk.copy_from_slice(&x.as_slice()[k * n..(k + 1) * n]);
            noise_w.iter_mut().for_each(|v| *v = T::zero());
            noise_v.iter_mut().for_each(|v| *v = T::zero());
            linalg::mat_vec_acc(&mut noise_w, &self.signal_sqrt[k], &zw, sqrt_dt);
            linalg::mat_vec_acc(&mut noise_v, &self.obs_sqrt[k], &zv, sqrt_dt);

            drift_x.copy_from_slice(c.state_drift[k].as_slice());
            linalg::mat_vec_acc(&mut drift_x, &c.state_matrix[k], &xk, T::one());
            drift_m.copy_from_slice(c.obs_drift[k].as_slice());
            linalg::mat_vec_acc(&mut drift_m, &c.obs_matrix[k], &xk, T::one());

            for i in 0..n {
                x[(i, k + 1)] = xk[i] + drift_x[i] * dt + noise_w[i];
                dw[(i, k)] = noise_w[i];
            }
            for i in 0..m {
                let inc = (drift_m[i] + th[i]) * dt + noise_v[i];
                dm[(i, k)] = inc;
                obs[(i, k + 1)] = obs[(i, k)] + inc;
                dv[(i, k)] = noise_v[i];
                theta[(i, k)] = th[i];
            }
        }
        Ok(SimPath {
            path_id,
            seed,
            x,
            m: obs,
            dm,
            dw,
            dv,
            theta,
        })
    }

    /// Maps `f` over freshly simulated paths `0..n_paths`, in path order
    /// regardless of how the work is scheduled.
    pub fn map_paths<R, F>(
        &self,
        policy: Option<&ThetaPolicy<T>>,
        n_paths: usize,
        seed: u64,
        f: F,
    ) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(&SimPath<T>) -> Result<R> + Sync + Send,
    {
        if let Some(p) = policy {
            p.check(self.spec)?;
        }
        (0..n_paths as u64)
            .into_par_iter()
            .map(|id| self.simulate_path(policy, id, seed).and_then(|p| f(&p)))
            .collect()
    }

    pub fn simulate_p(&self, n_paths: usize, seed: u64) -> Result<PathBundle<T>> {
        let paths = self.map_paths(None, n_paths, seed, |p| Ok(p.clone()))?;
        Ok(PathBundle {
            measure: Measure::Reference,
            seed,
            paths,
        })
    }

    pub fn simulate_theta(
        &self,
        policy: &ThetaPolicy<T>,
        n_paths: usize,
        seed: u64,
    ) -> Result<PathBundle<T>> {
        let paths = self.map_paths(Some(policy), n_paths, seed, |p| Ok(p.clone()))?;
        Ok(PathBundle {
            measure: Measure::Tilted(policy.label.clone()),
            seed,
            paths,
        })
    }
}

/// Paths under the reference measure.
pub fn simulate_p<T: Scalar>(
    spec: &ModelSpec<T>,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle<T>> {
    Simulator::new(spec)?.simulate_p(n_paths, seed)
}

/// Paths under the measure tilted by `policy`.
pub fn simulate_theta<T: Scalar>(
    spec: &ModelSpec<T>,
    policy: &ThetaPolicy<T>,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle<T>> {
    Simulator::new(spec)?.simulate_theta(policy, n_paths, seed)
}
