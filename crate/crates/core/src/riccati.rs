//! Error-covariance Riccati equation, Kalman gain and the closed-loop
//! impulse response of the filter.
//!
//! ```text
//! dP/dt = F P + P Fᵀ - P Gᵀ R⁻¹ G P + Q,   P(0) = 0
//! K_t   = P_t G_tᵀ R_t⁻¹
//! dΦ(r, s)/dr = (F_r - K_r G_r) Φ(r, s),   Φ(s, s) = I
//! A(t, s) = Φ(t, s) K_s
//! ```
//!
//! `P` and the per-interval closed-loop propagator are integrated together
//! with classical RK4, so `Φ(t, s)` is an exact product of stored interval
//! propagators and satisfies the flow property to rounding error.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Coefficients;
use crate::{ModelSpec, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions {
    /// RK4 substeps per grid interval.
    pub substeps: usize,
    /// Negative eigenvalues down to `-psd_tol` are clipped to zero; anything
    /// more negative aborts the solve.
    pub psd_tol: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            substeps: 4,
            psd_tol: 1e-10,
        }
    }
}

/// `P_t` on the grid plus the closed-loop propagator of every interval.
#[derive(Debug, Clone, PartialEq)]
pub struct VariancePath<T: Scalar> {
    nodes: Vec<DMatrix<T>>,
    propagators: Vec<DMatrix<T>>,
    substeps: usize,
}

impl<T: Scalar> VariancePath<T> {
    pub fn at(&self, k: usize) -> &DMatrix<T> {
        &self.nodes[k]
    }

    pub fn nodes(&self) -> &[DMatrix<T>] {
        &self.nodes
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// `Φ(t_{k+1}, t_k)`.
    pub fn propagator(&self, k: usize) -> &DMatrix<T> {
        &self.propagators[k]
    }

    pub fn n_steps(&self) -> usize {
        self.propagators.len()
    }

    /// Mean-square error of the conditional mean at node `k`.
    pub fn trace_at(&self, k: usize) -> T {
        self.nodes[k].trace()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainPath<T: Scalar> {
    nodes: Vec<DMatrix<T>>,
}

impl<T: Scalar> GainPath<T> {
    pub fn at(&self, k: usize) -> &DMatrix<T> {
        &self.nodes[k]
    }

    pub fn nodes(&self) -> &[DMatrix<T>] {
        &self.nodes
    }
}

struct Frozen<T: Scalar> {
    state_matrix: DMatrix<T>,
    info: DMatrix<T>,
    signal_noise: DMatrix<T>,
}

impl<T: Scalar> Frozen<T> {
    fn new(c: Coefficients<T>, node: usize) -> Result<Self> {
        let r_inv = linalg::spd_inverse(&c.obs_noise).ok_or(Error::SingularR { node })?;
        let info = c.obs_matrix.transpose() * r_inv * &c.obs_matrix;
        Ok(Self {
            state_matrix: c.state_matrix,
            info,
            signal_noise: c.signal_noise,
        })
    }

    /// Returns `(dP/dt, F - P Gᵀ R⁻¹ G)`.
    fn rhs(&self, p: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
        let fp = &self.state_matrix * p;
        let dp = &fp + fp.transpose() - p * &self.info * p + &self.signal_noise;
        let closed = &self.state_matrix - p * &self.info;
        (dp, closed)
    }
}

/// Integrates the Riccati equation from `P(0) = 0`.
pub fn solve_riccati<T: Scalar>(
    spec: &ModelSpec<T>,
    options: RiccatiOptions,
) -> Result<VariancePath<T>> {
    let substeps = options.substeps.max(1);
    let n = spec.n;
    let steps = spec.n_steps();
    let h = spec.dt() / T::of_usize(substeps);
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    let psd_tol = T::lit(options.psd_tol);

    let mut nodes = Vec::with_capacity(steps + 1);
    let mut propagators = Vec::with_capacity(steps);
    let mut p = DMatrix::zeros(n, n);
    nodes.push(p.clone());

    for k in 0..steps {
        // coefficient samples at fractions 0, 1/(2s), ..., 1 of the interval
        let samples: Vec<Frozen<T>> = (0..=2 * substeps)
            .map(|j| {
                let frac = T::of_usize(j) / T::of_usize(2 * substeps);
                Frozen::new(spec.coeffs.on_interval(k, frac), k)
            })
            .collect::<Result<_>>()?;
        let mut phi = DMatrix::identity(n, n);
        for s in 0..substeps {
            let (c0, cm, c1) = (&samples[2 * s], &samples[2 * s + 1], &samples[2 * s + 2]);
            let (k1, a1) = c0.rhs(&p);
            let l1 = &a1 * &phi;
            let p2 = &p + &k1 * (h * half);
            let (k2, a2) = cm.rhs(&p2);
            let l2 = &a2 * (&phi + &l1 * (h * half));
            let p3 = &p + &k2 * (h * half);
            let (k3, a3) = cm.rhs(&p3);
            let l3 = &a3 * (&phi + &l2 * (h * half));
            let p4 = &p + &k3 * h;
            let (k4, a4) = c1.rhs(&p4);
            let l4 = &a4 * (&phi + &l3 * h);
            p += (k1 + (k2 + k3) * T::lit(2.0) + k4) * (h * sixth);
            phi += (l1 + (l2 + l3) * T::lit(2.0) + l4) * (h * sixth);
            linalg::symmetrize(&mut p);
        }
        if p.iter().any(|v| !v.is_finite()) || phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup { node: k + 1 });
        }
        let lo = linalg::min_eigenvalue(&p);
        if lo < -psd_tol {
            return Err(Error::PsdViolation {
                node: k + 1,
                eigenvalue: lo.as_f64(),
            });
        }
        if lo < T::zero() {
            p = linalg::clip_psd(&p);
        }
        nodes.push(p.clone());
        propagators.push(phi);
    }
    Ok(VariancePath {
        nodes,
        propagators,
        substeps,
    })
}

/// `K_k = P_k G_kᵀ R_k⁻¹` at every node.
pub fn kalman_gain<T: Scalar>(
    variance: &VariancePath<T>,
    spec: &ModelSpec<T>,
) -> Result<GainPath<T>> {
    if variance.nodes.len() != spec.grid.n_nodes() {
        return Err(Error::GridMismatch {
            what: "variance path",
            expected: spec.grid.n_nodes(),
            found: variance.nodes.len(),
        });
    }
    let nodes = variance
        .nodes
        .iter()
        .enumerate()
        .map(|(k, p)| gain_at(spec, p, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(GainPath { nodes })
}

fn gain_at<T: Scalar>(spec: &ModelSpec<T>, p: &DMatrix<T>, k: usize) -> Result<DMatrix<T>> {
    let r_inv =
        linalg::spd_inverse(&spec.coeffs.obs_noise[k]).ok_or(Error::SingularR { node: k })?;
    Ok(p * spec.coeffs.obs_matrix[k].transpose() * r_inv)
}

/// Closed-loop fundamental matrix `Φ(t_t, t_s)`.
pub fn transition_matrix<T: Scalar>(
    variance: &VariancePath<T>,
    s: usize,
    t: usize,
) -> Result<DMatrix<T>> {
    if s > t {
        return Err(Error::IndexOrder { s, t });
    }
    if t > variance.n_steps() {
        return Err(Error::GridMismatch {
            what: "node index",
            expected: variance.n_steps(),
            found: t,
        });
    }
    let n = variance.nodes[0].nrows();
    let mut phi = DMatrix::identity(n, n);
    for k in s..t {
        phi = &variance.propagators[k] * phi;
    }
    Ok(phi)
}

/// Impulse response `A(t_t, t_s) = Φ(t_t, t_s) K_s`, n × m.
pub fn impulse_response<T: Scalar>(
    spec: &ModelSpec<T>,
    variance: &VariancePath<T>,
    s: usize,
    t: usize,
) -> Result<DMatrix<T>> {
    let phi = transition_matrix(variance, s, t)?;
    Ok(phi * gain_at(spec, &variance.nodes[s], s)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Interpolation;

    fn scalar(f: f64, g: f64, q: f64, r: f64, horizon: f64, steps: usize) -> ModelSpec<f64> {
        ModelSpec::scalar(f, 0.0, g, 0.0, q, r, 0.0, 0.5, horizon, steps).unwrap()
    }

    #[test]
    fn tanh_solution() {
        let spec = scalar(0.0, 1.0, 1.0, 1.0, 1.0, 1000);
        let p = solve_riccati(&spec, RiccatiOptions::default()).unwrap();
        assert_eq!(p.at(0)[(0, 0)], 0.0);
        for k in [250, 500, 1000] {
            let t = spec.grid.node(k);
            assert!((p.at(k)[(0, 0)] - t.tanh()).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_source_stays_zero() {
        let spec = scalar(0.7, 1.0, 0.0, 1.0, 1.0, 50);
        let p = solve_riccati(&spec, RiccatiOptions::default()).unwrap();
        assert!(p.nodes().iter().all(|m| m[(0, 0)] == 0.0));
    }

    #[test]
    fn stable_system_reaches_algebraic_root() {
        let spec = scalar(-1.0, 1.0, 1.0, 1.0, 10.0, 10_000);
        let p = solve_riccati(&spec, RiccatiOptions::default()).unwrap();
        assert!((p.at(10_000)[(0, 0)] - (2f64.sqrt() - 1.0)).abs() < 1e-4);
    }

    #[test]
    fn gain_arithmetic_and_shape() {
        let mut spec = scalar(0.0, 2.0, 1.0, 4.0, 1.0, 2);
        spec.coeffs
            .obs_noise
            .iter_mut()
            .for_each(|r| r[(0, 0)] = 4.0);
        let path = VariancePath {
            nodes: vec![DMatrix::from_element(1, 1, 0.5); 3],
            propagators: vec![DMatrix::identity(1, 1); 2],
            substeps: 1,
        };
        let k = kalman_gain(&path, &spec).unwrap();
        assert_eq!(k.at(1)[(0, 0)], 0.25);

        let spec2 = ModelSpec::<f64>::constant(
            crate::TimeGrid::new(1.0, 10).unwrap(),
            Coefficients {
                state_matrix: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
                state_drift: nalgebra::DVector::zeros(2),
                obs_matrix: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                obs_drift: nalgebra::DVector::zeros(1),
                signal_noise: DMatrix::identity(2, 2),
                obs_noise: DMatrix::identity(1, 1),
            },
            nalgebra::DVector::zeros(2),
            nalgebra::DVector::from_element(1, 0.5),
        );
        let p = solve_riccati(&spec2, RiccatiOptions::default()).unwrap();
        let k = kalman_gain(&p, &spec2).unwrap();
        assert_eq!(k.at(5).shape(), (2, 1));
        assert!(k.nodes().iter().all(|g| g.iter().all(|v| v.is_finite())));
        for m in p.nodes() {
            assert!(linalg::asymmetry(m) == 0.0);
            assert!(linalg::min_eigenvalue(m) >= 0.0);
        }
    }

    #[test]
    fn zero_covariance_means_zero_gain() {
        let spec = scalar(0.3, 1.0, 0.0, 1.0, 1.0, 20);
        let p = solve_riccati(&spec, RiccatiOptions::default()).unwrap();
        let k = kalman_gain(&p, &spec).unwrap();
        assert!(k.nodes().iter().all(|g| g[(0, 0)] == 0.0));
    }

    #[test]
    fn open_loop_transition_is_exponential() {
        let spec = scalar(1.0, 1.0, 0.0, 1.0, 1.0, 1000);
        let p = solve_riccati(&spec, RiccatiOptions::default()).unwrap();
        let phi = transition_matrix(&p, 200, 700).unwrap();
        assert!((phi[(0, 0)] - 0.5f64.exp()).abs() < 1e-6);
        assert_eq!(
            transition_matrix(&p, 300, 300).unwrap(),
            DMatrix::identity(1, 1)
        );
        assert!(matches!(
            transition_matrix(&p, 5, 4),
            Err(Error::IndexOrder { s: 5, t: 4 })
        ));
    }

    #[test]
    fn flow_property() {
        let spec = scalar(-0.4, 1.5, 0.8, 0.5, 2.0, 400);
        let p = solve_riccati(&spec, RiccatiOptions::default()).unwrap();
        let lhs =
            transition_matrix(&p, 150, 390).unwrap() * transition_matrix(&p, 20, 150).unwrap();
        let rhs = transition_matrix(&p, 20, 390).unwrap();
        assert!((lhs - rhs).abs().max() < 1e-8);
    }

    #[test]
    fn impulse_response_properties() {
        let spec = scalar(0.0, 1.0, 1.0, 1.0, 12.0, 12_000);
        let p = solve_riccati(&spec, RiccatiOptions::default()).unwrap();
        let gains = kalman_gain(&p, &spec).unwrap();
        assert_eq!(impulse_response(&spec, &p, 0, 50).unwrap()[(0, 0)], 0.0);
        assert_eq!(
            impulse_response(&spec, &p, 700, 700).unwrap(),
            *gains.at(700)
        );
        // steady state P = 1: A(t, s) = exp(-(t - s))
        let a = impulse_response(&spec, &p, 10_000, 11_500).unwrap()[(0, 0)];
        assert!((a - (-1.5f64).exp()).abs() < 1e-6, "A = {a}");
    }

    #[test]
    fn linear_interpolation_uses_midpoints() {
        // F ramps linearly from 0 to 1 over [0, 1] with Q = 0: Φ(1, 0) = exp(1/2).
        let mut spec = scalar(0.0, 1.0, 0.0, 1.0, 1.0, 10);
        spec.coeffs.interpolation = Interpolation::PiecewiseLinear;
        for k in 0..=10 {
            spec.coeffs.state_matrix[k][(0, 0)] = spec.grid.node(k);
        }
        let p = solve_riccati(&spec, RiccatiOptions::default()).unwrap();
        let phi = transition_matrix(&p, 0, 10).unwrap()[(0, 0)];
        assert!((phi - 0.5f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn single_precision_solve() {
        let spec =
            ModelSpec::<f32>::scalar(0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.5, 1.0, 100).unwrap();
        let p = solve_riccati(&spec, RiccatiOptions::default()).unwrap();
        assert!((p.at(100)[(0, 0)] - 1f32.tanh()).abs() < 1e-5);
    }
}
