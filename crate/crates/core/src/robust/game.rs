//! Finite estimation game: a few Euler steps with binary noise, an adversary
//! tilting the observation noise, and an estimator of the final state.
//!
//! ```text
//! x_{k+1} = x_k + (F x_k + f) dt + w_k,          w_k = ±sqrt(Q dt), each 1/2
//! y_k     = (G x_{k+1} + g) dt + v_k,            v_k = ±sqrt(R dt)
//! P^theta(v_k = +sqrt(R dt)) = (1 + theta_k sqrt(dt / R)) / 2
//! ```
//!
//! The tilt shifts the mean of `v_k` by exactly `theta_k dt`, the finite
//! counterpart of a Girsanov drift change. `theta_k` is chosen from a finite
//! alphabet as a function of `y_0..y_{k-1}` (adapted class) or of `k` alone
//! (open-loop class). The estimator maps `y_0..y_{K-1}` to a guess of `x_K`
//! and pays the squared error.
//!
//! Both values come out of one primal-dual run. The Bayes risk of an
//! adversary mixture `σ`, `B(σ) = Σ_y [S2 - S1²/S0]`, is concave in `σ`; its
//! gradient is the loss of each pure strategy against the posterior mean, so
//! a best response is a Frank–Wolfe vertex and also certifies an upper
//! bound `max_s L(ζ_σ, s)` on the minimax value. Pairwise steps with exact
//! line search close the gap.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryClass {
    /// `theta_k` depends on the observation history; mixtures allowed.
    #[default]
    Adapted,
    /// `theta_k` depends on `k` only and the adversary may not randomize.
    OpenLoop,
}

fn default_budget() -> f64 {
    1e6
}
fn default_tol() -> f64 {
    1e-9
}
fn default_max_iter() -> usize {
    100_000
}
fn default_cluster_tol() -> f64 {
    1e-9
}

/// Scalar model constants and solver settings for one game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSpec {
    #[serde(default)]
    pub label: String,
    /// Number of observation steps, 1 to 3.
    pub steps: usize,
    pub dt: f64,
    #[serde(rename = "F", default)]
    pub state_matrix: f64,
    #[serde(rename = "f", default)]
    pub state_drift: f64,
    #[serde(rename = "G")]
    pub obs_matrix: f64,
    #[serde(rename = "g", default)]
    pub obs_drift: f64,
    #[serde(rename = "Q")]
    pub signal_noise: f64,
    #[serde(rename = "R")]
    pub obs_noise: f64,
    #[serde(default)]
    pub x0: f64,
    pub mu: f64,
    /// Admissible drift values; `{-mu, 0, mu}` when absent.
    #[serde(default)]
    pub alphabet: Option<Vec<f64>>,
    #[serde(default)]
    pub adversary: AdversaryClass,
    /// Largest admissible number of pure adversary strategies.
    #[serde(default = "default_budget")]
    pub budget: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Relative tolerance for merging equal observation values.
    #[serde(default = "default_cluster_tol")]
    pub cluster_tol: f64,
}

impl GameSpec {
    /// `dt = 0.04`, `G = 1/dt`, `Q = R = 1`, `mu = 1`: observation values of
    /// the two noises collide, so posteriors are not degenerate, and the
    /// largest tilt is `mu sqrt(dt) = 0.2`.
    pub fn benchmark(steps: usize) -> Self {
        Self {
            label: format!("benchmark-k{steps}"),
            steps,
            dt: 0.04,
            state_matrix: 0.0,
            state_drift: 0.0,
            obs_matrix: 25.0,
            obs_drift: 0.0,
            signal_noise: 1.0,
            obs_noise: 1.0,
            x0: 0.0,
            mu: 1.0,
            alphabet: None,
            adversary: AdversaryClass::Adapted,
            budget: default_budget(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            cluster_tol: default_cluster_tol(),
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_alphabet(mut self, alphabet: Vec<f64>) -> Self {
        self.alphabet = Some(alphabet);
        self
    }

    pub fn with_adversary(mut self, adversary: AdversaryClass) -> Self {
        self.adversary = adversary;
        self
    }

    /// Sorted, deduplicated alphabet.
    pub fn actions(&self) -> Vec<f64> {
        let mut a = self
            .alphabet
            .clone()
            .unwrap_or_else(|| vec![-self.mu, 0.0, self.mu]);
        a.sort_by(f64::total_cmp);
        a.dedup();
        a
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.steps) {
            return Err(Error::invalid(format!(
                "game steps must be 1, 2 or 3, got {}",
                self.steps
            )));
        }
        let finite = [
            self.dt,
            self.state_matrix,
            self.state_drift,
            self.obs_matrix,
            self.obs_drift,
            self.signal_noise,
            self.obs_noise,
            self.x0,
            self.mu,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("game constants must be finite"));
        }
        if !(self.dt > 0.0) || !(self.obs_noise > 0.0) || self.signal_noise < 0.0 || self.mu < 0.0 {
            return Err(Error::invalid(
                "game needs dt > 0, R > 0, Q >= 0 and mu >= 0",
            ));
        }
        let actions = self.actions();
        if actions.is_empty() {
            return Err(Error::invalid("empty drift alphabet"));
        }
        let scale = (self.dt / self.obs_noise).sqrt();
        for &a in &actions {
            if !(a.abs() <= self.mu) {
                return Err(Error::PolicyBoundViolation {
                    step: 0,
                    component: 0,
                    value: a,
                    bound: self.mu,
                });
            }
            if !(a.abs() * scale < 1.0) {
                return Err(Error::InvalidTilt { tilt: a * scale });
            }
        }
        Ok(())
    }
}

/// One pure strategy in the reported mixture.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureAtom {
    pub weight: f64,
    /// Drift chosen at each decision point of [`GameSolution::decision_points`].
    pub actions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameSolution {
    /// Best certified upper bound `min_ζ max_s L(ζ, s)`.
    pub minimax: f64,
    /// Best certified lower bound: `max_σ B(σ)` for the adapted class, the
    /// best single strategy for the open-loop class.
    pub maximin: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Observation prefixes at which the adversary acts.
    pub decision_points: Vec<Vec<f64>>,
    pub strategies: f64,
    pub mixture: Vec<MixtureAtom>,
    /// `(y_0..y_{K-1}, estimate)` for every observation history.
    pub estimator: Vec<(Vec<f64>, f64)>,
}

struct Leaf {
    x: f64,
    chance: f64,
    v_plus: Vec<bool>,
    /// Decision-point id at each step.
    decision: Vec<usize>,
    terminal: usize,
}

struct Tree {
    leaves: Vec<Leaf>,
    actions: Vec<f64>,
    /// `sqrt(dt / R)`.
    scale: f64,
    steps: usize,
    /// Step of each decision point and the decision points / terminals
    /// directly below it.
    step_of: Vec<usize>,
    children: Vec<Vec<usize>>,
    terminal_children: Vec<Vec<usize>>,
    leaves_of_terminal: Vec<Vec<usize>>,
    decision_values: Vec<Vec<f64>>,
    terminal_values: Vec<Vec<f64>>,
}

fn cluster(values: &[f64], tol: f64) -> (Vec<usize>, Vec<f64>) {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut reps: Vec<f64> = Vec::new();
    for v in sorted {
        match reps.last() {
            Some(&r) if (v - r).abs() <= tol * r.abs().max(1.0) => {}
            _ => reps.push(v),
        }
    }
    let ids = values
        .iter()
        .map(|&v| {
            reps.iter()
                .position(|&r| (v - r).abs() <= tol * r.abs().max(1.0))
                .expect("every value has a representative")
        })
        .collect();
    (ids, reps)
}

impl Tree {
    fn build(spec: &GameSpec) -> Self {
        let k_steps = spec.steps;
        let sw = (spec.signal_noise * spec.dt).sqrt();
        let sv = (spec.obs_noise * spec.dt).sqrt();
        let n_leaves = 1usize << (2 * k_steps);

        let mut xs = Vec::with_capacity(n_leaves);
        let mut ys = vec![Vec::with_capacity(n_leaves); k_steps];
        let mut v_signs = Vec::with_capacity(n_leaves);
        for idx in 0..n_leaves {
            let mut x = spec.x0;
            let mut signs = Vec::with_capacity(k_steps);
            for (k, y) in ys.iter_mut().enumerate() {
                let w = if idx >> (2 * k) & 1 == 1 { sw } else { -sw };
                let v_plus = idx >> (2 * k + 1) & 1 == 1;
                x += (spec.state_matrix * x + spec.state_drift) * spec.dt + w;
                y.push(
                    (spec.obs_matrix * x + spec.obs_drift) * spec.dt
                        + if v_plus { sv } else { -sv },
                );
                signs.push(v_plus);
            }
            xs.push(x);
            v_signs.push(signs);
        }
        let (symbols, reps): (Vec<Vec<usize>>, Vec<Vec<f64>>) =
            ys.iter().map(|y| cluster(y, spec.cluster_tol)).unzip();

        let mut decision_ids: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let mut terminal_ids: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for idx in 0..n_leaves {
            let word: Vec<usize> = symbols.iter().map(|s| s[idx]).collect();
            for k in 0..k_steps {
                let next = decision_ids.len();
                decision_ids.entry(word[..k].to_vec()).or_insert(next);
            }
            let next = terminal_ids.len();
            terminal_ids.entry(word).or_insert(next);
        }
        // renumber in prefix order so ids are independent of leaf order
        let decision_ids: BTreeMap<Vec<usize>, usize> = decision_ids
            .into_keys()
            .enumerate()
            .map(|(i, w)| (w, i))
            .collect();
        let terminal_ids: BTreeMap<Vec<usize>, usize> = terminal_ids
            .into_keys()
            .enumerate()
            .map(|(i, w)| (w, i))
            .collect();
        let word_values = |w: &[usize]| {
            w.iter()
                .enumerate()
                .map(|(k, &s)| reps[k][s])
                .collect::<Vec<f64>>()
        };

        let n_dec = decision_ids.len();
        let mut step_of = vec![0; n_dec];
        let mut decision_values = vec![Vec::new(); n_dec];
        let mut children = vec![Vec::new(); n_dec];
        let mut terminal_children = vec![Vec::new(); n_dec];
        for (w, &id) in &decision_ids {
            step_of[id] = w.len();
            decision_values[id] = word_values(w);
            if !w.is_empty() {
                children[decision_ids[&w[..w.len() - 1]]].push(id);
            }
        }
        let mut terminal_values = vec![Vec::new(); terminal_ids.len()];
        for (w, &id) in &terminal_ids {
            terminal_values[id] = word_values(w);
            terminal_children[decision_ids[&w[..w.len() - 1]]].push(id);
        }

        let mut leaves_of_terminal = vec![Vec::new(); terminal_ids.len()];
        let chance = 0.5f64.powi(k_steps as i32);
        let leaves = (0..n_leaves)
            .map(|idx| {
                let word: Vec<usize> = (0..k_steps).map(|k| symbols[k][idx]).collect();
                let terminal = terminal_ids[&word];
                leaves_of_terminal[terminal].push(idx);
                Leaf {
                    x: xs[idx],
                    chance,
                    v_plus: v_signs[idx].clone(),
                    decision: (0..k_steps).map(|k| decision_ids[&word[..k]]).collect(),
                    terminal,
                }
            })
            .collect();

        Tree {
            leaves,
            actions: spec.actions(),
            scale: (spec.dt / spec.obs_noise).sqrt(),
            steps: k_steps,
            step_of,
            children,
            terminal_children,
            leaves_of_terminal,
            decision_values,
            terminal_values,
        }
    }

    #[inline]
    fn tilt(&self, action: usize, v_plus: bool) -> f64 {
        let a = self.actions[action] * self.scale;
        0.5 * if v_plus { 1.0 + a } else { 1.0 - a }
    }

    /// Outcome probabilities under a pure behavior strategy.
    fn law(&self, strategy: &[usize]) -> Vec<f64> {
        self.leaves
            .iter()
            .map(|leaf| {
                let mut p = leaf.chance;
                for k in 0..self.steps {
                    p *= self.tilt(strategy[leaf.decision[k]], leaf.v_plus[k]);
                }
                p
            })
            .collect()
    }

    /// Posterior means and Bayes risk of the outcome law `q`.
    fn posterior(&self, q: &[f64]) -> (Vec<f64>, f64) {
        let mut s = vec![[0.0f64; 3]; self.terminal_values.len()];
        for (leaf, &p) in self.leaves.iter().zip(q) {
            let cell = &mut s[leaf.terminal];
            cell[0] += p;
            cell[1] += p * leaf.x;
            cell[2] += p * leaf.x * leaf.x;
        }
        let mut risk = 0.0;
        let zeta = s
            .iter()
            .map(|c| {
                if c[0] > 0.0 {
                    risk += c[2] - c[1] * c[1] / c[0];
                    c[1] / c[0]
                } else {
                    0.0
                }
            })
            .collect();
        (zeta, risk)
    }

    fn loss(&self, q: &[f64], zeta: &[f64]) -> f64 {
        self.leaves
            .iter()
            .zip(q)
            .map(|(leaf, &p)| p * (leaf.x - zeta[leaf.terminal]).powi(2))
            .sum()
    }

    /// Best adapted reply to `zeta`. Every outcome below a decision point
    /// shares its ancestors' decision points, so the ancestors' actions are
    /// passed down and the subproblems below different children separate.
    fn best_response(&self, zeta: &[f64]) -> (Vec<usize>, f64) {
        let mut strategy = vec![0; self.step_of.len()];
        let mut anc = Vec::with_capacity(self.steps);
        let (value, choices) = self.best_below(0, &mut anc, zeta);
        for (id, a) in choices {
            strategy[id] = a;
        }
        (strategy, value)
    }

    fn best_below(
        &self,
        id: usize,
        anc: &mut Vec<usize>,
        zeta: &[f64],
    ) -> (f64, Vec<(usize, usize)>) {
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        for a in 0..self.actions.len() {
            anc.push(a);
            let mut value = 0.0;
            let mut choices = vec![(id, a)];
            for &child in &self.children[id] {
                let (v, c) = self.best_below(child, anc, zeta);
                value += v;
                choices.extend(c);
            }
            for &t in &self.terminal_children[id] {
                for &leaf_id in &self.leaves_of_terminal[t] {
                    let leaf = &self.leaves[leaf_id];
                    let mut p = leaf.chance;
                    for (k, &ak) in anc.iter().enumerate() {
                        p *= self.tilt(ak, leaf.v_plus[k]);
                    }
                    value += p * (leaf.x - zeta[t]).powi(2);
                }
            }
            anc.pop();
            if best.as_ref().is_none_or(|b| value > b.0) {
                best = Some((value, choices));
            }
        }
        best.expect("alphabet is not empty")
    }

    fn open_loop_strategies(&self) -> Vec<Vec<usize>> {
        let n_a = self.actions.len();
        let count = n_a.pow(self.steps as u32);
        (0..count)
            .map(|mut code| {
                let mut per_step = vec![0; self.steps];
                for slot in per_step.iter_mut() {
                    *slot = code % n_a;
                    code /= n_a;
                }
                self.step_of.iter().map(|&k| per_step[k]).collect()
            })
            .collect()
    }
}

struct Atom {
    strategy: Vec<usize>,
    law: Vec<f64>,
    weight: f64,
}

/// Solves the game.
pub fn discrete_game_oracle(spec: &GameSpec) -> Result<GameSolution> {
    spec.validate()?;
    let tree = Tree::build(spec);
    let n_actions = tree.actions.len() as f64;
    let strategies = match spec.adversary {
        AdversaryClass::Adapted => n_actions.powi(tree.step_of.len() as i32),
        AdversaryClass::OpenLoop => n_actions.powi(spec.steps as i32),
    };
    if strategies > spec.budget {
        return Err(Error::BudgetExceeded {
            strategies,
            budget: spec.budget,
        });
    }
    let open_loop = match spec.adversary {
        AdversaryClass::OpenLoop => Some(tree.open_loop_strategies()),
        AdversaryClass::Adapted => None,
    };
    let respond = |zeta: &[f64]| -> (Vec<usize>, f64) {
        match &open_loop {
            None => tree.best_response(zeta),
            Some(set) => {
                let mut best = (Vec::new(), f64::NEG_INFINITY);
                for s in set {
                    let v = tree.loss(&tree.law(s), zeta);
                    if v > best.1 {
                        best = (s.clone(), v);
                    }
                }
                best
            }
        }
    };

    let first = vec![0; tree.step_of.len()];
    let mut atoms = vec![Atom {
        law: tree.law(&first),
        strategy: first,
        weight: 1.0,
    }];
    let mut q = atoms[0].law.clone();
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut best_zeta = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < spec.max_iter {
        iterations += 1;
        if iterations % 256 == 0 {
            q = mixture_law(&atoms, q.len());
        }
        let (zeta, risk) = tree.posterior(&q);
        lower = lower.max(risk);
        let (plus, bound) = respond(&zeta);
        if bound < upper {
            upper = bound;
            best_zeta = zeta.clone();
        }
        if bound - risk <= spec.tol || upper - lower <= spec.tol {
            converged = true;
            break;
        }

        let plus_idx = match atoms.iter().position(|a| a.strategy == plus) {
            Some(i) => i,
            None => {
                atoms.push(Atom {
                    law: tree.law(&plus),
                    strategy: plus,
                    weight: 0.0,
                });
                atoms.len() - 1
            }
        };
        let minus_idx = (0..atoms.len())
            .filter(|&i| atoms[i].weight > 0.0)
            .min_by(|&i, &j| {
                tree.loss(&atoms[i].law, &zeta)
                    .total_cmp(&tree.loss(&atoms[j].law, &zeta))
            })
            .expect("mixture has support");
        if minus_idx == plus_idx {
            converged = true;
            break;
        }

        let dir: Vec<f64> = atoms[plus_idx]
            .law
            .iter()
            .zip(&atoms[minus_idx].law)
            .map(|(a, b)| a - b)
            .collect();
        let slope = |gamma: f64| {
            let trial: Vec<f64> = q.iter().zip(&dir).map(|(a, d)| a + gamma * d).collect();
            let (z, _) = tree.posterior(&trial);
            tree.loss(&atoms[plus_idx].law, &z) - tree.loss(&atoms[minus_idx].law, &z)
        };
        let gamma_max = atoms[minus_idx].weight;
        let gamma = if slope(gamma_max) >= 0.0 {
            gamma_max
        } else {
            let (mut lo, mut hi) = (0.0, gamma_max);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if slope(mid) >= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        if gamma <= 0.0 {
            // no ascent along the pair; the bounds are as tight as this
            // direction allows
            break;
        }
        for (qi, d) in q.iter_mut().zip(&dir) {
            *qi += gamma * d;
        }
        atoms[plus_idx].weight += gamma;
        if gamma == gamma_max {
            atoms.remove(minus_idx);
        } else {
            atoms[minus_idx].weight -= gamma;
        }
    }

    if let Some(set) = &open_loop {
        // without mixing the adversary can only guarantee its best single
        // strategy
        lower = set
            .iter()
            .map(|s| tree.posterior(&tree.law(s)).1)
            .fold(f64::NEG_INFINITY, f64::max);
    }

    let mixture = atoms
        .iter()
        .filter(|a| a.weight > 0.0)
        .map(|a| MixtureAtom {
            weight: a.weight,
            actions: a.strategy.iter().map(|&i| tree.actions[i]).collect(),
        })
        .collect();
    let estimator = tree
        .terminal_values
        .iter()
        .cloned()
        .zip(best_zeta)
        .collect();
    Ok(GameSolution {
        minimax: upper,
        maximin: lower,
        gap: upper - lower,
        iterations,
        converged,
        decision_points: tree.decision_values.clone(),
        strategies,
        mixture,
        estimator,
    })
}

fn mixture_law(atoms: &[Atom], len: usize) -> Vec<f64> {
    let mut q = vec![0.0; len];
    for a in atoms {
        for (qi, p) in q.iter_mut().zip(&a.law) {
            *qi += a.weight * p;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laws_are_probabilities_with_shifted_mean() {
        let spec = GameSpec::benchmark(2);
        let tree = Tree::build(&spec);
        for s in tree.open_loop_strategies() {
            let q = tree.law(&s);
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(q.iter().all(|&p| p > 0.0));
        }
        // benchmark observations collide: fewer histories than outcomes
        assert!(tree.terminal_values.len() < tree.leaves.len());
        assert_eq!(tree.step_of.iter().filter(|&&k| k == 0).count(), 1);
    }

    #[test]
    fn dynamic_programme_matches_enumeration() {
        let spec = GameSpec::benchmark(2);
        let tree = Tree::build(&spec);
        let zeta: Vec<f64> = (0..tree.terminal_values.len())
            .map(|i| 0.05 * (i as f64).sin())
            .collect();
        let (s, v) = tree.best_response(&zeta);
        assert!((tree.loss(&tree.law(&s), &zeta) - v).abs() < 1e-15);
        let n_dec = tree.step_of.len();
        let n_a = tree.actions.len();
        let mut best = f64::NEG_INFINITY;
        for code in 0..n_a.pow(n_dec as u32) {
            let mut c = code;
            let strat: Vec<usize> = (0..n_dec)
                .map(|_| {
                    let a = c % n_a;
                    c /= n_a;
                    a
                })
                .collect();
            best = best.max(tree.loss(&tree.law(&strat), &zeta));
        }
        assert!((best - v).abs() < 1e-15);
    }

    #[test]
    fn invalid_games_are_refused() {
        let too_long = GameSpec {
            steps: 4,
            ..GameSpec::benchmark(1)
        };
        assert!(discrete_game_oracle(&too_long).is_err());
        let tilt = GameSpec::benchmark(1).with_mu(6.0);
        assert!(matches!(
            discrete_game_oracle(&tilt),
            Err(Error::InvalidTilt { .. })
        ));
        let wide = GameSpec::benchmark(1).with_alphabet(vec![-2.0, 2.0]);
        assert!(matches!(
            discrete_game_oracle(&wide),
            Err(Error::PolicyBoundViolation { .. })
        ));
        let big = GameSpec {
            budget: 10.0,
            ..GameSpec::benchmark(2)
        };
        assert!(matches!(
            discrete_game_oracle(&big),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn zero_ambiguity_is_the_posterior_variance() {
        let sol = discrete_game_oracle(&GameSpec::benchmark(2).with_mu(0.0)).unwrap();
        assert!(sol.gap.abs() <= 1e-12);
        assert!(sol.converged);
        assert!(sol.minimax > 0.0);
    }
}
