//! Radon–Nikodym densities of drift-shifted measures.
//!
//! With observation noise covariance rate `R`, shifting the drift of `v` by
//! `theta` has density
//!
//! ```text
//! f_T = exp( sum_k theta_kᵀ R_k⁻¹ dv_k  -  ½ sum_k theta_kᵀ R_k⁻¹ theta_k dt )
//! ```
//!
//! which reduces to the textbook form when `R = I`. Under the Euler scheme
//! this is exactly the likelihood ratio of `N(theta dt, R dt)` to
//! `N(0, R dt)` increments.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::{ModelSpec, Scalar};

/// Discretization of the running density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityScheme {
    /// `f_{k+1} = f_k exp(thetaᵀR⁻¹dv - ½ thetaᵀR⁻¹theta dt)`: the exact
    /// discrete likelihood ratio.
    Exponential,
    /// `f_{k+1} = f_k (1 + thetaᵀR⁻¹dv)`: the Euler step of
    /// `df = f thetaᵀR⁻¹ dv`. Linear in `theta`, so mixtures of these
    /// densities are again densities of this form.
    StochasticExponential,
}

/// Per-node `R⁻¹` cache for density evaluation along many paths.
#[derive(Debug, Clone)]
pub struct DensityKernel<T: Scalar> {
    obs_precision: Vec<DMatrix<T>>,
    dt: T,
    n_steps: usize,
    m: usize,
}

impl<T: Scalar> DensityKernel<T> {
    pub fn new(spec: &ModelSpec<T>) -> Result<Self> {
        let n_steps = spec.n_steps();
        let obs_precision = spec.coeffs.obs_noise[..n_steps]
            .iter()
            .enumerate()
            .map(|(k, r)| linalg::spd_inverse(r).ok_or(Error::SingularR { node: k }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            obs_precision,
            dt: spec.dt(),
            n_steps,
            m: spec.m,
        })
    }

    fn check(&self, theta: &DMatrix<T>, dv: &DMatrix<T>) -> Result<()> {
        if theta.nrows() != self.m || dv.nrows() != self.m {
            return Err(Error::GridMismatch {
                what: "density rows",
                expected: self.m,
                found: theta.nrows().min(dv.nrows()),
            });
        }
        if dv.ncols() != self.n_steps {
            return Err(Error::GridMismatch {
                what: "v increments",
                expected: self.n_steps,
                found: dv.ncols(),
            });
        }
        if theta.ncols() != self.n_steps && theta.ncols() != self.n_steps + 1 {
            return Err(Error::GridMismatch {
                what: "theta values",
                expected: self.n_steps,
                found: theta.ncols(),
            });
        }
        Ok(())
    }

    #[inline]
    fn cols<'a>(&self, a: &'a DMatrix<T>, k: usize) -> &'a [T] {
        &a.as_slice()[k * self.m..(k + 1) * self.m]
    }

    #[inline]
    fn log_increment(&self, k: usize, theta: &[T], dv: &[T]) -> T {
        let p = &self.obs_precision[k];
        linalg::quad_form(theta, p, dv) - T::lit(0.5) * linalg::quad_form(theta, p, theta) * self.dt
    }

    #[inline]
    fn linear_factor(&self, k: usize, theta: &[T], dv: &[T]) -> T {
        T::one() + linalg::quad_form(theta, &self.obs_precision[k], dv)
    }

    /// Terminal density `f_T`.
    pub fn terminal(&self, theta: &DMatrix<T>, dv: &DMatrix<T>) -> Result<T> {
        self.at_node(theta, dv, self.n_steps)
    }

    /// Density restricted to the first `node` steps, `f_{t_node}`.
    pub fn at_node(&self, theta: &DMatrix<T>, dv: &DMatrix<T>, node: usize) -> Result<T> {
        self.check(theta, dv)?;
        let mut log_f = T::zero();
        for k in 0..node.min(self.n_steps) {
            log_f += self.log_increment(k, self.cols(theta, k), self.cols(dv, k));
        }
        Ok(log_f.exp())
    }

    /// Running density at every node (`n_steps + 1` values, first is 1).
    pub fn running(
        &self,
        theta: &DMatrix<T>,
        dv: &DMatrix<T>,
        scheme: DensityScheme,
    ) -> Result<Vec<T>> {
        self.check(theta, dv)?;
        let mut out = Vec::with_capacity(self.n_steps + 1);
        out.push(T::one());
        match scheme {
            DensityScheme::Exponential => {
                let mut log_f = T::zero();
                for k in 0..self.n_steps {
                    log_f += self.log_increment(k, self.cols(theta, k), self.cols(dv, k));
                    out.push(log_f.exp());
                }
            }
            DensityScheme::StochasticExponential => {
                let mut f = T::one();
                for k in 0..self.n_steps {
                    f *= self.linear_factor(k, self.cols(theta, k), self.cols(dv, k));
                    if !(f > T::zero()) {
                        return Err(Error::NonPositiveDensity { node: k + 1 });
                    }
                    out.push(f);
                }
            }
        }
        Ok(out)
    }
}

/// Terminal density `dP^theta/dP` along one reference-measure path.
pub fn girsanov_density<T: Scalar>(
    spec: &ModelSpec<T>,
    theta: &DMatrix<T>,
    dv: &DMatrix<T>,
) -> Result<T> {
    DensityKernel::new(spec)?.terminal(theta, dv)
}

/// Mixed drift whose running density is the `lambda1` mixture of the two
/// input densities:
///
/// ```text
/// theta^λ_k = (λ1 θ1_k f1_k + λ2 θ2_k f2_k) / (λ1 f1_k + λ2 f2_k),  λ2 = 1 - λ1
/// ```
///
/// `f1`, `f2` are running densities at the nodes, so `theta^λ_k` only uses
/// information available at `t_k`. Being a convex combination, it keeps
/// every bound the inputs satisfy.
pub fn convex_mix_theta<T: Scalar>(
    theta1: &DMatrix<T>,
    theta2: &DMatrix<T>,
    lambda1: T,
    f1: &[T],
    f2: &[T],
) -> Result<DMatrix<T>> {
    if !(lambda1 >= T::zero() && lambda1 <= T::one()) {
        return Err(Error::invalid(format!(
            "mixture weight {lambda1} outside [0, 1]"
        )));
    }
    if theta1.shape() != theta2.shape() {
        return Err(Error::GridMismatch {
            what: "mixed theta columns",
            expected: theta1.ncols(),
            found: theta2.ncols(),
        });
    }
    let steps = theta1.ncols();
    if f1.len() < steps || f2.len() < steps {
        return Err(Error::GridMismatch {
            what: "running densities",
            expected: steps,
            found: f1.len().min(f2.len()),
        });
    }
    if let Some(k) = (0..steps).find(|&k| !(f1[k] > T::zero() && f2[k] > T::zero())) {
        return Err(Error::NonPositiveDensity { node: k });
    }
    if lambda1 == T::one() {
        return Ok(theta1.clone());
    }
    if lambda1 == T::zero() {
        return Ok(theta2.clone());
    }
    let lambda2 = T::one() - lambda1;
    let mut out = DMatrix::zeros(theta1.nrows(), steps);
    for k in 0..steps {
        let w1 = lambda1 * f1[k];
        let w2 = lambda2 * f2[k];
        let total = w1 + w2;
        for i in 0..theta1.nrows() {
            out[(i, k)] = (w1 * theta1[(i, k)] + w2 * theta2[(i, k)]) / total;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use nalgebra::DVector;

    use super::*;
    use crate::sde::{Simulator, ThetaTable};

    fn bench() -> ModelSpec<f64> {
        ModelSpec::scalar(0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.5, 1.0, 50).unwrap()
    }

    #[test]
    fn zero_theta_gives_unit_density() {
        let spec = bench();
        let sim = Simulator::new(&spec).unwrap();
        let kernel = DensityKernel::new(&spec).unwrap();
        let zero = ThetaTable::zeros(&spec);
        for f in sim
            .map_paths(None, 20, 1, |p| kernel.terminal(zero.values(), &p.dv))
            .unwrap()
        {
            assert_eq!(f, 1.0);
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let spec = bench();
        let theta = DMatrix::zeros(1, 50);
        let dv = DMatrix::zeros(1, 49);
        assert!(matches!(
            girsanov_density(&spec, &theta, &dv),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn general_r_uses_precision_weighting() {
        // Scalar R = 4: exponent is theta dv / 4 - theta² dt / 8.
        let spec =
            ModelSpec::<f64>::scalar(0.0, 0.0, 1.0, 0.0, 1.0, 4.0, 0.0, 0.5, 1.0, 1).unwrap();
        let theta = DMatrix::from_element(1, 1, 0.5);
        let dv = DMatrix::from_element(1, 1, 0.2);
        let f = girsanov_density(&spec, &theta, &dv).unwrap();
        let want = (0.5f64 * 0.2 / 4.0 - 0.5 * 0.25 / 4.0).exp();
        assert!((f - want).abs() < 1e-15);
    }

    #[test]
    fn mixture_degenerate_cases() {
        let t1 = DMatrix::from_row_slice(1, 3, &[0.5, -0.5, 0.1]);
        let t2 = DMatrix::from_row_slice(1, 3, &[-0.5, 0.5, 0.3]);
        let f1 = [1.0, 1.3, 0.7];
        let f2 = [1.0, 0.4, 2.0];
        assert_eq!(convex_mix_theta(&t1, &t2, 1.0, &f1, &f2).unwrap(), t1);
        assert_eq!(convex_mix_theta(&t1, &t2, 0.0, &f1, &f2).unwrap(), t2);
        let same = convex_mix_theta(&t1, &t1, 0.3, &f1, &f2).unwrap();
        assert!((same - &t1).abs().max() < 1e-15);
        let half = convex_mix_theta(&t1, &t2, 0.5, &f1, &f2).unwrap();
        assert_eq!(half[(0, 0)], 0.0);
        assert!(matches!(
            convex_mix_theta(&t1, &t2, 0.5, &[1.0, 0.0, 1.0], &f2),
            Err(Error::NonPositiveDensity { node: 1 })
        ));
        assert!(convex_mix_theta(&t1, &t2, 1.5, &f1, &f2).is_err());
    }

    #[test]
    fn stochastic_exponential_mixture_is_closed() {
        let spec = bench();
        let sim = Simulator::new(&spec).unwrap();
        let kernel = DensityKernel::new(&spec).unwrap();
        let t1 = ThetaTable::constant(&spec, &DVector::from_element(1, 0.5));
        let t2 = ThetaTable::constant(&spec, &DVector::from_element(1, -0.5));
        let path = sim.simulate_path(None, 0, 4).unwrap();
        let scheme = DensityScheme::StochasticExponential;
        let f1 = kernel.running(t1.values(), &path.dv, scheme).unwrap();
        let f2 = kernel.running(t2.values(), &path.dv, scheme).unwrap();
        let steps = spec.n_steps();
        let mix = convex_mix_theta(
            &t1.values().columns(0, steps).into(),
            &t2.values().columns(0, steps).into(),
            0.3,
            &f1,
            &f2,
        )
        .unwrap();
        let g = kernel.running(&mix, &path.dv, scheme).unwrap();
        for k in 0..=steps {
            let direct = 0.3 * f1[k] + 0.7 * f2[k];
            assert!(((g[k] - direct) / direct).abs() < 1e-12);
        }
    }
}
