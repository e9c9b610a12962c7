//! Monte Carlo measurement: MSE under a tilted measure by direct simulation
//! and by density reweighting, innovation whiteness, and the mixture-density
//! check behind the convexity of the measure set.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::filter::KalmanBucy;
use crate::linalg;
use crate::robust::EstimatorSpec;
use crate::sde::{
    convex_mix_theta, DensityKernel, DensityScheme, Measure, Simulator, ThetaPolicy, ThetaTable,
};
use crate::{ModelSpec, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Direct,
    Importance,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Importance => "importance",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate<T: Scalar> {
    pub mean: T,
    pub std_err: T,
    pub n_paths: usize,
    pub seed: u64,
    pub measure: Measure,
    pub method: Method,
    /// `(Σf)² / Σf²` for importance estimates.
    pub ess: Option<T>,
    /// Set when the effective sample size is below 10% of `n_paths`.
    pub ess_warning: bool,
}

/// Sample mean and its standard error, accumulated in iteration order.
pub fn mean_and_std_err<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> (T, T) {
    let mut n = 0usize;
    let mut sum = T::zero();
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return (T::zero(), T::zero());
    }
    let mean = sum / T::of_usize(n);
    if n < 2 {
        return (mean, T::zero());
    }
    let ss = values.fold(T::zero(), |acc, v| acc + (v - mean) * (v - mean));
    (mean, (ss / T::of_usize(n - 1) / T::of_usize(n)).sqrt())
}

fn need_paths(n_paths: usize) -> Result<()> {
    if n_paths < 2 {
        return Err(Error::InsufficientSample {
            have: n_paths,
            need: 2,
        });
    }
    Ok(())
}

fn measure_of<T: Scalar>(policy: &ThetaPolicy<T>) -> Measure {
    if policy.table().is_some_and(ThetaTable::is_zero) {
        Measure::Reference
    } else {
        Measure::Tilted(policy.label.clone())
    }
}

/// `E_theta |x_t - ζ|²` by simulating under the tilted measure.
pub fn mc_mse<T: Scalar>(
    kb: &KalmanBucy<'_, T>,
    policy: &ThetaPolicy<T>,
    estimator: &EstimatorSpec<T>,
    t_index: usize,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate<T>> {
    need_paths(n_paths)?;
    let est = estimator.prepare(kb, t_index)?;
    let sim = Simulator::new(kb.spec())?;
    let errs = sim.map_paths(Some(policy), n_paths, seed, |path| {
        let zeta = est.apply(kb, &path.dm)?;
        Ok((path.x.column(t_index) - zeta).norm_squared())
    })?;
    let (mean, std_err) = mean_and_std_err(errs.iter().copied());
    Ok(McEstimate {
        mean,
        std_err,
        n_paths,
        seed,
        measure: measure_of(policy),
        method: Method::Direct,
        ess: None,
        ess_warning: false,
    })
}

/// `E_theta |x_t - ζ|² = E[f_t |x_t - ζ|²]` over reference-measure paths.
///
/// The error is known at `t`, so the density is taken at `t` rather than at
/// the horizon; both give the same expectation and the former has lower
/// variance. Feedback drifts are evaluated along each reference path.
pub fn is_mse<T: Scalar>(
    kb: &KalmanBucy<'_, T>,
    policy: &ThetaPolicy<T>,
    estimator: &EstimatorSpec<T>,
    t_index: usize,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate<T>> {
    need_paths(n_paths)?;
    let spec = kb.spec();
    policy.check(spec)?;
    let est = estimator.prepare(kb, t_index)?;
    let sim = Simulator::new(spec)?;
    let kernel = DensityKernel::new(spec)?;
    let pairs = sim.map_paths(None, n_paths, seed, |path| {
        let f = match policy.table() {
            Some(table) => kernel.at_node(table.values(), &path.dv, t_index)?,
            None => kernel.at_node(&policy.evaluate_along(spec, &path.m)?, &path.dv, t_index)?,
        };
        let zeta = est.apply(kb, &path.dm)?;
        Ok((f, (path.x.column(t_index) - zeta).norm_squared()))
    })?;
    let (mean, std_err) = mean_and_std_err(pairs.iter().map(|&(f, e)| f * e));
    let sum_f = pairs.iter().fold(T::zero(), |a, p| a + p.0);
    let sum_f2 = pairs.iter().fold(T::zero(), |a, p| a + p.0 * p.0);
    let ess = sum_f * sum_f / sum_f2;
    Ok(McEstimate {
        mean,
        std_err,
        n_paths,
        seed,
        measure: measure_of(policy),
        method: Method::Importance,
        ess: Some(ess),
        ess_warning: ess < T::lit(0.1) * T::of_usize(n_paths),
    })
}

/// `E f_T` over reference-measure paths; 1 for an exact density.
pub fn density_mean<T: Scalar>(
    spec: &ModelSpec<T>,
    policy: &ThetaPolicy<T>,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate<T>> {
    need_paths(n_paths)?;
    policy.check(spec)?;
    let sim = Simulator::new(spec)?;
    let kernel = DensityKernel::new(spec)?;
    let f = sim.map_paths(None, n_paths, seed, |path| match policy.table() {
        Some(table) => kernel.terminal(table.values(), &path.dv),
        None => kernel.terminal(&policy.evaluate_along(spec, &path.m)?, &path.dv),
    })?;
    let (mean, std_err) = mean_and_std_err(f.iter().copied());
    Ok(McEstimate {
        mean,
        std_err,
        n_paths,
        seed,
        measure: Measure::Reference,
        method: Method::Importance,
        ess: None,
        ess_warning: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhitenessBands {
    /// Half-width of the mean and autocorrelation bands in units of `1/sqrt(N)`.
    pub sigmas: f64,
    /// Allowed relative deviation of the variance ratio from 1.
    pub variance_tol: f64,
    pub min_samples: usize,
}

impl Default for WhitenessBands {
    fn default() -> Self {
        Self {
            sigmas: 4.0,
            variance_tol: 0.05,
            min_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhitenessReport {
    /// Standardized scalar samples.
    pub n: usize,
    pub mean: f64,
    pub variance_ratio: f64,
    pub lag1: f64,
    pub mean_band: f64,
    pub mean_pass: bool,
    pub variance_pass: bool,
    pub autocorr_pass: bool,
}

impl WhitenessReport {
    pub fn pass(&self) -> bool {
        self.mean_pass && self.variance_pass && self.autocorr_pass
    }
}

/// Tests that increments look like `N(0, R dt)` white noise.
///
/// Each increment is standardized by `L⁻¹ / sqrt(dt)` with `R = L Lᵀ`;
/// every component of every path is then one scalar series. Lag-one
/// autocorrelation only pairs consecutive steps of the same series.
pub fn innovation_whiteness<T: Scalar>(
    increments: &[DMatrix<T>],
    obs_noise: &DMatrix<T>,
    dt: T,
    bands: WhitenessBands,
) -> Result<WhitenessReport> {
    let m = obs_noise.nrows();
    let lower = linalg::cholesky_lower(obs_noise).ok_or(Error::SingularR { node: 0 })?;
    let scale = T::one() / dt.sqrt();
    let mut series: Vec<Vec<f64>> = Vec::new();
    for inc in increments {
        if inc.nrows() != m {
            return Err(Error::GridMismatch {
                what: "innovation rows",
                expected: m,
                found: inc.nrows(),
            });
        }
        let z = lower
            .solve_lower_triangular(&(inc * scale))
            .ok_or(Error::SingularR { node: 0 })?;
        for i in 0..m {
            series.push(z.row(i).iter().map(|v| v.as_f64()).collect());
        }
    }
    let n: usize = series.iter().map(Vec::len).sum();
    if n < bands.min_samples {
        return Err(Error::InsufficientSample {
            have: n,
            need: bands.min_samples,
        });
    }
    let nf = n as f64;
    let mean = series.iter().flatten().sum::<f64>() / nf;
    let var = series
        .iter()
        .flatten()
        .map(|z| (z - mean) * (z - mean))
        .sum::<f64>()
        / (nf - 1.0);
    let mut num = 0.0;
    let mut pairs = 0usize;
    for s in &series {
        for w in s.windows(2) {
            num += (w[0] - mean) * (w[1] - mean);
            pairs += 1;
        }
    }
    let lag1 = if pairs > 0 {
        num / pairs as f64 / var
    } else {
        0.0
    };
    let band = bands.sigmas / nf.sqrt();
    Ok(WhitenessReport {
        n,
        mean,
        variance_ratio: var,
        lag1,
        mean_band: band,
        mean_pass: mean.abs() < band,
        variance_pass: (var - 1.0).abs() <= bands.variance_tol,
        autocorr_pass: lag1.abs() < band,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport<T: Scalar> {
    /// Largest node-wise relative gap between the mixed drift's density and
    /// the mixture of densities, linear (stochastic-exponential) scheme.
    pub max_rel_error: T,
    /// Same with the exponential scheme, where the identity only holds in
    /// the limit `dt -> 0`. Diagnostic.
    pub exponential_max_rel_error: T,
    pub terminal_mean: T,
    pub terminal_std_err: T,
    /// `max_i (|theta^λ_i| - mu_i)` over all nodes and paths; `<= 0` when
    /// the bound holds.
    pub bound_excess: T,
    /// Whether `λ1 = 1` reproduced the first density bit for bit on every
    /// path (only meaningful for that weight).
    pub bitwise: bool,
    pub n_paths: usize,
}

impl<T: Scalar> ConvexityReport<T> {
    pub fn identity_pass(&self, rel_tol: T) -> bool {
        self.max_rel_error <= rel_tol
    }

    pub fn mean_pass(&self, sigmas: T) -> bool {
        (self.terminal_mean - T::one()).abs() <= sigmas * self.terminal_std_err
    }

    pub fn bound_pass(&self) -> bool {
        self.bound_excess <= T::zero()
    }
}

/// Mixes two deterministic drifts through their running densities and
/// checks the mixture is again a density of the same form.
pub fn convexity_martingale_check<T: Scalar>(
    spec: &ModelSpec<T>,
    theta1: &ThetaTable<T>,
    theta2: &ThetaTable<T>,
    lambda1: T,
    n_paths: usize,
    seed: u64,
) -> Result<ConvexityReport<T>> {
    need_paths(n_paths)?;
    for t in [theta1, theta2] {
        t.check_grid(spec)?;
        t.check_bound(&spec.mu)?;
    }
    let steps = spec.n_steps();
    let t1: DMatrix<T> = theta1.values().columns(0, steps).into();
    let t2: DMatrix<T> = theta2.values().columns(0, steps).into();
    let lambda2 = T::one() - lambda1;
    let sim = Simulator::new(spec)?;
    let kernel = DensityKernel::new(spec)?;
    let linear = DensityScheme::StochasticExponential;
    let exp = DensityScheme::Exponential;

    struct Row<T> {
        rel: T,
        rel_exp: T,
        terminal: T,
        excess: T,
        bitwise: bool,
    }
    let rel_gap = |mixed: &[T], a: &[T], b: &[T]| {
        mixed
            .iter()
            .zip(a.iter().zip(b))
            .fold(T::zero(), |acc, (&g, (&fa, &fb))| {
                let direct = lambda1 * fa + lambda2 * fb;
                acc.max(((g - direct) / direct).abs())
            })
    };
    let rows = sim.map_paths(None, n_paths, seed, |path| {
        let f1 = kernel.running(&t1, &path.dv, linear)?;
        let f2 = kernel.running(&t2, &path.dv, linear)?;
        let mixed = convex_mix_theta(&t1, &t2, lambda1, &f1, &f2)?;
        let g = kernel.running(&mixed, &path.dv, linear)?;

        let e1 = kernel.running(&t1, &path.dv, exp)?;
        let e2 = kernel.running(&t2, &path.dv, exp)?;
        let mixed_exp = convex_mix_theta(&t1, &t2, lambda1, &e1, &e2)?;
        let ge = kernel.running(&mixed_exp, &path.dv, exp)?;

        let mut excess = T::lit(f64::NEG_INFINITY);
        for k in 0..steps {
            for i in 0..spec.m {
                excess = excess.max(mixed[(i, k)].abs() - spec.mu[i]);
            }
        }
        Ok(Row {
            rel: rel_gap(&g, &f1, &f2),
            rel_exp: rel_gap(&ge, &e1, &e2),
            terminal: lambda1 * f1[steps] + lambda2 * f2[steps],
            excess,
            bitwise: g == f1,
        })
    })?;
    let (terminal_mean, terminal_std_err) = mean_and_std_err(rows.iter().map(|r| r.terminal));
    Ok(ConvexityReport {
        max_rel_error: rows.iter().fold(T::zero(), |a, r| a.max(r.rel)),
        exponential_max_rel_error: rows.iter().fold(T::zero(), |a, r| a.max(r.rel_exp)),
        terminal_mean,
        terminal_std_err,
        bound_excess: rows
            .iter()
            .fold(T::lit(f64::NEG_INFINITY), |a, r| a.max(r.excess)),
        bitwise: rows.iter().all(|r| r.bitwise),
        n_paths,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::DVector;

    use super::*;

    fn bench(steps: usize) -> ModelSpec<f64> {
        ModelSpec::scalar(0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.5, 1.0, steps).unwrap()
    }

    #[test]
    fn standard_error_of_known_sample() {
        let (m, se) = mean_and_std_err([1.0, 2.0, 3.0, 4.0].into_iter());
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_theta_importance_equals_direct() {
        let spec = bench(100);
        let kb = KalmanBucy::new(&spec).unwrap();
        let p = ThetaPolicy::zero(&spec);
        let est = EstimatorSpec::classical(&spec);
        let a = mc_mse(&kb, &p, &est, 100, 500, 3).unwrap();
        let b = is_mse(&kb, &p, &est, 100, 500, 3).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.std_err, b.std_err);
        assert_eq!(b.ess, Some(500.0));
    }

    #[test]
    fn perfect_prior_constant_estimator_is_exact() {
        let spec =
            ModelSpec::<f64>::scalar(0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.5, 0.5, 1.0, 50).unwrap();
        let kb = KalmanBucy::new(&spec).unwrap();
        let est = EstimatorSpec::constant(DVector::from_element(1, 1.5));
        let e = mc_mse(&kb, &ThetaPolicy::zero(&spec), &est, 50, 100, 1).unwrap();
        assert_eq!(e.mean, 0.0);
        assert_eq!(e.std_err, 0.0);
    }

    #[test]
    fn heavy_tilt_raises_ess_warning() {
        let spec =
            ModelSpec::<f64>::scalar(0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 6.0, 1.0, 50).unwrap();
        let kb = KalmanBucy::new(&spec).unwrap();
        let p = ThetaPolicy::constant(&spec, &DVector::from_element(1, 6.0));
        let e = is_mse(&kb, &p, &EstimatorSpec::classical(&spec), 50, 40, 2).unwrap();
        assert!(e.ess_warning);
        assert!(e.ess.unwrap() < 4.0);
    }

    #[test]
    fn too_few_samples_are_refused() {
        let inc = vec![DMatrix::from_element(1, 100, 0.1)];
        let r = innovation_whiteness(
            &inc,
            &DMatrix::identity(1, 1),
            0.01,
            WhitenessBands::default(),
        );
        assert!(matches!(
            r,
            Err(Error::InsufficientSample { have: 100, .. })
        ));
    }

    #[test]
    fn unit_weight_mixture_is_bitwise() {
        let spec = bench(50);
        let t1 = ThetaTable::constant_scalar(&spec, 0.5);
        let t2 = ThetaTable::constant_scalar(&spec, -0.5);
        let r = convexity_martingale_check(&spec, &t1, &t2, 1.0, 20, 7).unwrap();
        assert!(r.bitwise);
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.bound_pass());
    }
}
