//! Worst-case estimation over the drift-ambiguity set.
//!
//! For a deterministic drift `theta` and a shifted-filter estimator
//! `ζ_u = x̄_t - Σ_j c_j u_j` the decomposition of the corrected filter gives
//!
//! ```text
//! E_theta |x_t - ζ_u|² = tr P_t + |Σ_j c_j (u_j - theta_j)|²
//! ```
//!
//! with `c_j` the trapezoidal impulse-response weights. The adversary's
//! problem is then the maximum of a convex function over the zonotope
//! `{Σ_j c_j theta_j : |theta| <= mu}`, attained at a vertex. Closed forms
//! cover signal dimensions one and two; larger dimensions go through
//! [`mc_worst_case`].

mod game;

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{Error, Result};
use crate::eval::{self, McEstimate};
use crate::filter::KalmanBucy;
use crate::sde::{Simulator, ThetaPolicy, ThetaTable};
use crate::{ModelSpec, Scalar};

pub use game::{discrete_game_oracle, AdversaryClass, GameSolution, GameSpec, MixtureAtom};

/// What a custom estimator sees: the observation increments up to `t`, plus
/// the classical estimate there as a convenience.
pub struct CustomInput<'a, T: Scalar> {
    pub t_index: usize,
    pub time: T,
    /// Increments `dm_0..dm_{t_index - 1}`, one column each.
    pub increments: DMatrixView<'a, T>,
    pub xbar: &'a DVector<T>,
}

pub type CustomFn<T> = dyn Fn(&CustomInput<'_, T>) -> DVector<T> + Send + Sync;

/// An estimator of `x_t` built from the observations up to `t`.
#[derive(Clone)]
pub enum EstimatorSpec<T: Scalar> {
    /// `x̂_t` from the corrected filter with this drift table.
    FilterInduced(ThetaTable<T>),
    /// `x̄_t - Σ_j c_j u_j`.
    ShiftedFilter(ThetaTable<T>),
    Custom {
        label: String,
        rule: Arc<CustomFn<T>>,
    },
}

impl<T: Scalar> fmt::Debug for EstimatorSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EstimatorSpec({})", self.label())
    }
}

impl<T: Scalar> EstimatorSpec<T> {
    pub fn classical(spec: &ModelSpec<T>) -> Self {
        Self::FilterInduced(ThetaTable::zeros(spec))
    }

    pub fn custom(
        label: impl Into<String>,
        rule: impl Fn(&CustomInput<'_, T>) -> DVector<T> + Send + Sync + 'static,
    ) -> Self {
        Self::Custom {
            label: label.into(),
            rule: Arc::new(rule),
        }
    }

    /// `x̄_t + offset`.
    pub fn offset(offset: DVector<T>) -> Self {
        let label = format!(
            "offset{:?}",
            offset.iter().map(|v| v.as_f64()).collect::<Vec<_>>()
        );
        Self::custom(label, move |input| input.xbar + &offset)
    }

    /// The constant `value`, ignoring the observations.
    pub fn constant(value: DVector<T>) -> Self {
        let label = format!(
            "constant{:?}",
            value.iter().map(|v| v.as_f64()).collect::<Vec<_>>()
        );
        Self::custom(label, move |_| value.clone())
    }

    pub fn label(&self) -> String {
        match self {
            Self::FilterInduced(t) if t.is_zero() => "classical".into(),
            Self::FilterInduced(_) => "filter-induced".into(),
            Self::ShiftedFilter(_) => "shifted-filter".into(),
            Self::Custom { label, .. } => label.clone(),
        }
    }

    pub fn check(&self, spec: &ModelSpec<T>) -> Result<()> {
        match self {
            Self::FilterInduced(t) => {
                t.check_grid(spec)?;
                t.check_bound(&spec.mu)
            }
            Self::ShiftedFilter(u) => {
                u.check_grid(spec)?;
                if u.values().iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(
                        "shifted-filter table has non-finite entries",
                    ));
                }
                Ok(())
            }
            Self::Custom { .. } => Ok(()),
        }
    }

    /// Precomputes whatever does not depend on the observations.
    pub fn prepare(&self, kb: &KalmanBucy<'_, T>, t_index: usize) -> Result<PreparedEstimator<T>> {
        let spec = kb.spec();
        self.check(spec)?;
        if t_index > spec.n_steps() {
            return Err(Error::GridMismatch {
                what: "node index",
                expected: spec.n_steps(),
                found: t_index,
            });
        }
        let inner = match self {
            Self::FilterInduced(t) if t.is_zero() => Prepared::Classical,
            Self::FilterInduced(t) => Prepared::Filter(t.values().clone()),
            Self::ShiftedFilter(u) => Prepared::Shift(kb.shift_offset(u, t_index)?),
            Self::Custom { rule, .. } => Prepared::Custom(rule.clone()),
        };
        Ok(PreparedEstimator {
            inner,
            t_index,
            time: spec.grid.node(t_index),
        })
    }
}

#[derive(Clone)]
enum Prepared<T: Scalar> {
    Classical,
    Filter(DMatrix<T>),
    Shift(DVector<T>),
    Custom(Arc<CustomFn<T>>),
}

/// An estimator fixed to one node, ready to be applied path by path.
#[derive(Clone)]
pub struct PreparedEstimator<T: Scalar> {
    inner: Prepared<T>,
    t_index: usize,
    time: T,
}

impl<T: Scalar> PreparedEstimator<T> {
    pub fn t_index(&self) -> usize {
        self.t_index
    }

    pub fn apply(&self, kb: &KalmanBucy<'_, T>, dm: &DMatrix<T>) -> Result<DVector<T>> {
        match &self.inner {
            Prepared::Classical => kb.run_to(dm, None, self.t_index),
            Prepared::Filter(theta) => kb.run_to(dm, Some(theta), self.t_index),
            Prepared::Shift(offset) => Ok(kb.run_to(dm, None, self.t_index)? - offset),
            Prepared::Custom(rule) => {
                let xbar = kb.run_to(dm, None, self.t_index)?;
                let input = CustomInput {
                    t_index: self.t_index,
                    time: self.time,
                    increments: dm.columns(0, self.t_index),
                    xbar: &xbar,
                };
                let out = rule(&input);
                if out.len() != kb.spec().n {
                    return Err(Error::GridMismatch {
                        what: "estimate length",
                        expected: kb.spec().n,
                        found: out.len(),
                    });
                }
                Ok(out)
            }
        }
    }
}

/// Adversary's best deterministic reply.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCase<T: Scalar> {
    /// `tr P_t + max |b - Σ c_j theta_j|²`.
    pub value: T,
    pub variance_trace: T,
    /// `b = Σ_j c_j u_j` of the estimator.
    pub offset: DVector<T>,
    /// Lexicographically smallest maximizer (nodes first, then components).
    pub theta_star: ThetaTable<T>,
    /// Every maximizing corner, free entries set to `-mu`.
    pub attaining: Vec<ThetaTable<T>>,
    /// `(node, component)` entries that do not move the value; any value in
    /// the box attains the maximum there.
    pub free: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxSolution<T: Scalar> {
    pub u_star: ThetaTable<T>,
    pub worst: WorstCase<T>,
    /// `c_j = w_j Φ(t, t_j) K_j`, j = 0..=t_index.
    pub weights: Vec<DMatrix<T>>,
    /// All weights vanish (or `mu = 0`): the value is `tr P_t` and every
    /// estimator offset is optimal only at zero.
    pub degenerate: bool,
}

impl<T: Scalar> MinimaxSolution<T> {
    pub fn value(&self) -> T {
        self.worst.value
    }
}

/// `tr P_t + |Σ_j c_j (u_j - theta_j)|²`.
pub fn bias_variance_value<T: Scalar>(
    kb: &KalmanBucy<'_, T>,
    t_index: usize,
    u: &ThetaTable<T>,
    theta: &ThetaTable<T>,
) -> Result<T> {
    theta.check_grid(kb.spec())?;
    let bias = kb.shift_offset(u, t_index)? - kb.shift_offset(theta, t_index)?;
    Ok(kb.variance().trace_at(t_index) + bias.norm_squared())
}

/// Worst case over deterministic `|theta| <= mu` for a shifted-filter or
/// filter-induced estimator (the latter through the decomposition).
pub fn worst_case_mse_deterministic<T: Scalar>(
    kb: &KalmanBucy<'_, T>,
    t_index: usize,
    estimator: &EstimatorSpec<T>,
) -> Result<WorstCase<T>> {
    let spec = kb.spec();
    estimator.check(spec)?;
    let u = match estimator {
        EstimatorSpec::FilterInduced(t) | EstimatorSpec::ShiftedFilter(t) => t,
        EstimatorSpec::Custom { .. } => {
            return Err(Error::UnsupportedEstimator(
                "custom estimators need mc_worst_case",
            ))
        }
    };
    let weights = kb.bias_weights(t_index)?;
    let offset = kb.shift_offset(u, t_index)?;
    maximize_bias(spec, &weights, &offset, kb.variance().trace_at(t_index))
}

/// Minimizes the deterministic worst case over shifted-filter estimators.
///
/// The attainable bias set is a centrally symmetric zonotope, so for any
/// offset `b` and vertex `z`, `max(|b - z|², |b + z|²) >= |z|²`: `b = 0` is
/// optimal and `u* = 0` is the canonical representative.
pub fn minimax_deterministic<T: Scalar>(
    kb: &KalmanBucy<'_, T>,
    t_index: usize,
) -> Result<MinimaxSolution<T>> {
    let spec = kb.spec();
    let weights = kb.bias_weights(t_index)?;
    let offset = DVector::zeros(spec.n);
    let worst = maximize_bias(spec, &weights, &offset, kb.variance().trace_at(t_index))?;
    let degenerate = generators(spec, &weights).is_empty();
    Ok(MinimaxSolution {
        u_star: ThetaTable::zeros(spec),
        worst,
        weights,
        degenerate,
    })
}

struct Generator<T> {
    node: usize,
    comp: usize,
    /// `mu_i c_j[:, i]`.
    dir: DVector<T>,
}

fn generators<T: Scalar>(spec: &ModelSpec<T>, weights: &[DMatrix<T>]) -> Vec<Generator<T>> {
    let mut out = Vec::new();
    for (node, c) in weights.iter().enumerate() {
        for comp in 0..spec.m {
            let dir = c.column(comp) * spec.mu[comp];
            if dir.iter().any(|v| *v != T::zero()) {
                out.push(Generator { node, comp, dir });
            }
        }
    }
    out
}

fn lex_cmp<T: Scalar>(a: &ThetaTable<T>, b: &ThetaTable<T>) -> Ordering {
    for (x, y) in a.values().iter().zip(b.values().iter()) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Builds the corner table for generator signs `signs`; everything else at `-mu`.
fn corner<T: Scalar>(spec: &ModelSpec<T>, gens: &[Generator<T>], signs: &[bool]) -> ThetaTable<T> {
    let mut values = DMatrix::from_fn(spec.m, spec.grid.n_nodes(), |i, _| -spec.mu[i]);
    for (g, &plus) in gens.iter().zip(signs) {
        values[(g.comp, g.node)] = if plus {
            spec.mu[g.comp]
        } else {
            -spec.mu[g.comp]
        };
    }
    ThetaTable::from_matrix(values)
}

fn maximize_bias<T: Scalar>(
    spec: &ModelSpec<T>,
    weights: &[DMatrix<T>],
    offset: &DVector<T>,
    variance_trace: T,
) -> Result<WorstCase<T>> {
    let gens = generators(spec, weights);
    let in_gens: std::collections::HashSet<(usize, usize)> =
        gens.iter().map(|g| (g.node, g.comp)).collect();
    let free = (0..spec.grid.n_nodes())
        .flat_map(|k| (0..spec.m).map(move |i| (k, i)))
        .filter(|e| spec.mu[e.1] > T::zero() && !in_gens.contains(e))
        .collect();

    // sign patterns of the maximizing vertices
    let patterns: Vec<Vec<bool>> = match spec.n {
        _ if gens.is_empty() => vec![Vec::new()],
        1 => {
            let b = offset[0];
            // z = -sign(b) S; at b = 0 both extremes attain
            let mut out = Vec::new();
            for s in [-T::one(), T::one()] {
                if b == T::zero() || (b > T::zero()) == (s < T::zero()) {
                    out.push(gens.iter().map(|g| g.dir[0] * s > T::zero()).collect());
                }
            }
            out
        }
        2 => planar_vertices(&gens, offset),
        n => return Err(Error::UnsupportedDimension { n }),
    };

    let bias_of = |signs: &[bool]| {
        let mut z = offset.clone();
        for (g, &plus) in gens.iter().zip(signs) {
            if plus {
                z -= &g.dir;
            } else {
                z += &g.dir;
            }
        }
        z.norm_squared()
    };
    let mut attaining: Vec<ThetaTable<T>> =
        patterns.iter().map(|p| corner(spec, &gens, p)).collect();
    attaining.sort_by(lex_cmp);
    attaining.dedup();
    let best = patterns
        .iter()
        .map(|p| bias_of(p))
        .fold(T::zero(), |a, b| a.max(b));
    let theta_star = attaining[0].clone();
    Ok(WorstCase {
        value: variance_trace + best,
        variance_trace,
        offset: offset.clone(),
        theta_star,
        attaining,
        free,
    })
}

/// Vertices of the planar zonotope `Σ_g s_g g` maximizing `|b - z|`.
///
/// The vertex extreme in direction `d` has `s_g = sign<g, d>`; it only
/// changes when `d` crosses a normal of some generator, so one direction per
/// arc between consecutive normals visits every vertex.
fn planar_vertices<T: Scalar>(gens: &[Generator<T>], offset: &DVector<T>) -> Vec<Vec<bool>> {
    use std::f64::consts::{FRAC_PI_2, TAU};
    let mut cuts: Vec<f64> = gens
        .iter()
        .flat_map(|g| {
            let phi = g.dir[1].as_f64().atan2(g.dir[0].as_f64());
            [
                (phi + FRAC_PI_2).rem_euclid(TAU),
                (phi - FRAC_PI_2).rem_euclid(TAU),
            ]
        })
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    cuts.dedup();
    let mut candidates: Vec<(Vec<bool>, T)> = Vec::with_capacity(cuts.len());
    for (i, &a) in cuts.iter().enumerate() {
        let b = if i + 1 < cuts.len() {
            cuts[i + 1]
        } else {
            cuts[0] + TAU
        };
        let mid = 0.5 * (a + b);
        let d = (T::lit(mid.cos()), T::lit(mid.sin()));
        // vertex maximizing <z, d>; z is subtracted from b, so flip signs
        let signs: Vec<bool> = gens
            .iter()
            .map(|g| g.dir[0] * d.0 + g.dir[1] * d.1 < T::zero())
            .collect();
        let mut z = offset.clone();
        for (g, &plus) in gens.iter().zip(&signs) {
            if plus {
                z -= &g.dir;
            } else {
                z += &g.dir;
            }
        }
        candidates.push((signs, z.norm_squared()));
    }
    let best = candidates
        .iter()
        .map(|c| c.1)
        .fold(T::zero(), |a, b| a.max(b));
    let tol = best * T::lit(1e-12);
    candidates
        .into_iter()
        .filter(|c| best - c.1 <= tol)
        .map(|c| c.0)
        .collect()
}

/// Monte Carlo MSE of `estimator` under every candidate, all with the same
/// seed so the candidates share their noise.
#[derive(Debug, Clone)]
pub struct McWorstCase<T: Scalar> {
    pub estimates: Vec<McEstimate<T>>,
    /// Index of the first candidate attaining the largest mean.
    pub argmax: usize,
    pub max: T,
}

pub fn mc_worst_case<T: Scalar>(
    kb: &KalmanBucy<'_, T>,
    t_index: usize,
    estimator: &EstimatorSpec<T>,
    candidates: &[ThetaPolicy<T>],
    n_paths: usize,
    seed: u64,
) -> Result<McWorstCase<T>> {
    if candidates.is_empty() {
        return Err(Error::invalid("no theta candidates"));
    }
    let estimates = candidates
        .iter()
        .map(|p| eval::mc_mse(kb, p, estimator, t_index, n_paths, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut argmax = 0;
    for (i, e) in estimates.iter().enumerate() {
        if e.mean > estimates[argmax].mean {
            argmax = i;
        }
    }
    let max = estimates[argmax].mean;
    Ok(McWorstCase {
        estimates,
        argmax,
        max,
    })
}

/// Both sides of the orthogonality condition
/// `inf_ζ sup_theta E_theta[(x_t - x̂_t)·(x_t - ζ)] = sup_theta E_theta|x_t - x̂_t|²`,
/// with the sup over a finite drift grid and the inf over a finite estimator
/// family. A grid approximation, so it can refute but not certify.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalityReport<T: Scalar> {
    pub lhs: T,
    pub lhs_std_err: T,
    pub rhs: T,
    pub rhs_std_err: T,
    /// `|lhs - rhs|`.
    pub residual: T,
    pub residual_std_err: T,
    /// Estimator family member attaining the inf.
    pub zeta_index: usize,
    /// Drift attaining the sup on the right-hand side.
    pub theta_index: usize,
}

pub fn orthogonality_check<T: Scalar>(
    kb: &KalmanBucy<'_, T>,
    t_index: usize,
    candidate: &EstimatorSpec<T>,
    thetas: &[ThetaPolicy<T>],
    family: &[EstimatorSpec<T>],
    n_paths: usize,
    seed: u64,
) -> Result<OrthogonalityReport<T>> {
    if thetas.is_empty() || family.is_empty() {
        return Err(Error::invalid(
            "orthogonality check needs a drift grid and an estimator family",
        ));
    }
    if n_paths < 2 {
        return Err(Error::InsufficientSample {
            have: n_paths,
            need: 2,
        });
    }
    let spec = kb.spec();
    let sim = Simulator::new(spec)?;
    let xhat = candidate.prepare(kb, t_index)?;
    let zetas = family
        .iter()
        .map(|z| z.prepare(kb, t_index))
        .collect::<Result<Vec<_>>>()?;

    // cells[theta][0] is the squared error, cells[theta][1 + l] the product with zeta_l
    let mut cells: Vec<Vec<(T, T)>> = Vec::with_capacity(thetas.len());
    for policy in thetas {
        let rows = sim.map_paths(Some(policy), n_paths, seed, |path| {
            let x = path.x.column(t_index).into_owned();
            let err = &x - xhat.apply(kb, &path.dm)?;
            let mut row = Vec::with_capacity(zetas.len() + 1);
            row.push(err.norm_squared());
            for z in &zetas {
                row.push(err.dot(&(&x - z.apply(kb, &path.dm)?)));
            }
            Ok(row)
        })?;
        let per_cell = (0..=zetas.len())
            .map(|c| eval::mean_and_std_err(rows.iter().map(|r| r[c])))
            .collect();
        cells.push(per_cell);
    }

    let sup_over_theta = |c: usize| {
        let mut best = 0;
        for (i, row) in cells.iter().enumerate() {
            if row[c].0 > cells[best][c].0 {
                best = i;
            }
        }
        (best, cells[best][c])
    };
    let (theta_index, (rhs, rhs_std_err)) = sup_over_theta(0);
    let mut zeta_index = 0;
    let mut lhs_cell = sup_over_theta(1).1;
    for l in 1..zetas.len() {
        let cell = sup_over_theta(l + 1).1;
        if cell.0 < lhs_cell.0 {
            lhs_cell = cell;
            zeta_index = l;
        }
    }
    let (lhs, lhs_std_err) = lhs_cell;
    Ok(OrthogonalityReport {
        lhs,
        lhs_std_err,
        rhs,
        rhs_std_err,
        residual: (lhs - rhs).abs(),
        residual_std_err: (lhs_std_err * lhs_std_err + rhs_std_err * rhs_std_err).sqrt(),
        zeta_index,
        theta_index,
    })
}
