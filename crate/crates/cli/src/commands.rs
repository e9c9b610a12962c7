use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rkb::eval::{is_mse, mc_mse};
use rkb::report::{filter_table, long_table, num, path_table, Table};
use rkb::robust::{
    discrete_game_oracle, mc_worst_case, minimax_deterministic, worst_case_mse_deterministic,
};
use rkb::sde::Simulator;
use rkb::{KalmanBucy64, ThetaPolicy64};

use crate::config::{ConfigError, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<rkb::Error> for CliError {
    fn from(e: rkb::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| runtime(format!("cannot create {}: {e}", cfg.out.display())))?;
    Ok(cfg.out.join(name))
}

fn write(table: &Table, path: &Path) -> Result<()> {
    table.write(path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn simulate(cfg: &RunConfig, plot_data: bool) -> Result<()> {
    let spec = cfg.model()?;
    let policy = cfg
        .simulate
        .theta
        .as_deref()
        .map(|l| cfg.policy(l))
        .transpose()?;
    let sim = Simulator::new(spec)?;
    let bundle = match &policy {
        Some(p) => sim.simulate_theta(p, cfg.n_paths, cfg.seed)?,
        None => sim.simulate_p(cfg.n_paths, cfg.seed)?,
    };
    write(&path_table(spec, &bundle), &out_path(cfg, "paths.csv")?)?;
    if plot_data {
        let series: Vec<_> = bundle
            .paths
            .iter()
            .enumerate()
            .flat_map(|(i, p)| [(i, "x", &p.x), (i, "m", &p.m), (i, "theta", &p.theta)])
            .collect();
        write(
            &long_table(spec, &series),
            &out_path(cfg, "paths_long.csv")?,
        )?;
    }
    Ok(())
}

pub fn filter(cfg: &RunConfig, decompose_check: bool, plot_data: bool) -> Result<()> {
    let spec = cfg.model()?;
    let truth = cfg.policy(cfg.filter.truth.as_deref().unwrap_or("zero"))?;
    let theta_label = cfg.filter.theta.as_deref().unwrap_or("zero");
    let corrected_by = cfg.policy(theta_label)?;
    let table = if decompose_check {
        Some(cfg.table_by_label(theta_label)?)
    } else {
        None
    };
    let kb = KalmanBucy64::new(spec)?;
    let bundle = Simulator::new(spec)?.simulate_theta(&truth, cfg.n_paths, cfg.seed)?;

    let mut all: Option<Table> = None;
    let mut long = Vec::new();
    let mut check = Table::new(["path_id", "max_discrepancy", "bound"]);
    let bound = 10.0 * spec.dt();
    let mut worst: f64 = 0.0;
    for (i, path) in bundle.paths.iter().enumerate() {
        let classical = kb.classical_filter(&path.dm)?;
        let corrected = match corrected_by.table() {
            Some(t) => kb.theta_filter(&path.dm, t)?,
            None => {
                kb.theta_filter_along(&path.dm, &corrected_by.evaluate_along(spec, &path.m)?)?
            }
        };
        let one = filter_table(spec, &path.x, &classical, &corrected, kb.variance());
        let t = all.get_or_insert_with(|| {
            Table::new(std::iter::once("path_id".to_string()).chain(one.header().iter().cloned()))
        });
        for row in one.rows() {
            t.push(
                std::iter::once(i.to_string())
                    .chain(row.iter().cloned())
                    .collect(),
            );
        }
        if let Some(theta) = &table {
            let d = kb.decompose(&classical.estimate, theta)?;
            let gap = (&corrected.estimate - d).amax();
            worst = worst.max(gap);
            check.push(vec![i.to_string(), num(gap), num(bound)]);
        }
        if plot_data {
            long.push((
                i,
                classical.estimate,
                corrected.estimate,
                path.x.clone(),
                corrected.innovations,
            ));
        }
    }
    let all = all.ok_or_else(|| runtime("no paths simulated"))?;
    write(&all, &out_path(cfg, "filter.csv")?)?;
    if plot_data {
        let p = DMatrix::from_fn(spec.n, spec.grid.n_nodes(), |r, k| {
            kb.variance().at(k)[(r, r)]
        });
        let mut series = Vec::new();
        for (i, xbar, xhat, x, innov) in &long {
            series.extend([
                (*i, "x_true", x),
                (*i, "xbar", xbar),
                (*i, "xhat", xhat),
                (*i, "P", &p),
                (*i, "innovation", innov),
            ]);
        }
        write(
            &long_table(spec, &series),
            &out_path(cfg, "filter_long.csv")?,
        )?;
    }
    if decompose_check {
        write(&check, &out_path(cfg, "decompose_check.csv")?)?;
        println!(
            "max decompose discrepancy {} (bound {})",
            num(worst),
            num(bound)
        );
        if !(worst < bound) {
            return Err(runtime(format!(
                "decomposition discrepancy {worst} exceeds {bound}"
            )));
        }
    }
    Ok(())
}

pub fn robust(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.model()?;
    let t = cfg.t_index()?;
    let kb = KalmanBucy64::new(spec)?;
    let sol = minimax_deterministic(&kb, t)?;
    let p = kb.variance().trace_at(t);
    if !(sol.value() >= p) {
        return Err(runtime(format!(
            "minimax value {} below variance trace {p}",
            sol.value()
        )));
    }

    let mut header = vec![
        "run_id".to_string(),
        "t_index".into(),
        "t".into(),
        "variance".into(),
        "value".into(),
    ];
    header.extend((0..spec.n).map(|i| format!("offset{i}")));
    header.extend(["degenerate".into(), "n_attaining".into(), "n_free".into()]);
    let mut minimax = Table::new(header);
    let mut row = vec![
        cfg.run_id.clone(),
        t.to_string(),
        num(spec.grid.node(t)),
        num(p),
        num(sol.value()),
    ];
    row.extend(sol.worst.offset.iter().map(|&v| num(v)));
    row.extend([
        sol.degenerate.to_string(),
        sol.worst.attaining.len().to_string(),
        sol.worst.free.len().to_string(),
    ]);
    minimax.push(row);

    let mut header = vec!["k".to_string(), "t".into()];
    header.extend((0..spec.m).map(|i| format!("theta_star{i}")));
    let mut star = Table::new(header);
    for k in 0..=t {
        let mut row = vec![k.to_string(), num(spec.grid.node(k))];
        row.extend(sol.worst.theta_star.column(k).iter().map(|&v| num(v)));
        star.push(row);
    }

    let descs = cfg
        .robust
        .estimators
        .clone()
        .unwrap_or_else(|| vec!["classical".into()]);
    let estimators = descs
        .iter()
        .map(|d| cfg.estimator(d))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let labels = cfg.theta_labels(cfg.robust.thetas.as_ref());
    let policies = labels
        .iter()
        .map(|l| cfg.policy(l))
        .collect::<std::result::Result<Vec<ThetaPolicy64>, _>>()?;

    let mut worst = Table::new(["estimator_desc", "t_index", "worst_case_mse", "variance"]);
    let mut cands = Table::new([
        "candidate_id",
        "theta_desc",
        "estimator_desc",
        "mse",
        "stderr",
        "is_max",
    ]);
    let mut id = 0usize;
    for (desc, est) in descs.iter().zip(&estimators) {
        // custom rules have no closed form; their row is left blank
        match worst_case_mse_deterministic(&kb, t, est) {
            Ok(wc) => worst.push(vec![
                desc.clone(),
                t.to_string(),
                num(wc.value),
                num(wc.variance_trace),
            ]),
            Err(rkb::Error::UnsupportedEstimator(_)) => {
                worst.push(vec![desc.clone(), t.to_string(), String::new(), num(p)])
            }
            Err(e) => return Err(e.into()),
        }
        let mc = mc_worst_case(&kb, t, est, &policies, cfg.n_paths, cfg.seed)?;
        for (j, (label, e)) in labels.iter().zip(&mc.estimates).enumerate() {
            cands.push(vec![
                id.to_string(),
                label.clone(),
                desc.clone(),
                num(e.mean),
                num(e.std_err),
                (j == mc.argmax).to_string(),
            ]);
            id += 1;
        }
    }
    println!("minimax value {} (variance {})", num(sol.value()), num(p));
    write(&minimax, &out_path(cfg, "minimax.csv")?)?;
    write(&star, &out_path(cfg, "theta_star.csv")?)?;
    write(&worst, &out_path(cfg, "worst_case.csv")?)?;
    write(&cands, &out_path(cfg, "candidates.csv")?)?;
    Ok(())
}

pub fn game(cfg: &RunConfig) -> Result<()> {
    if cfg.games.is_empty() {
        return Err(ConfigError("no [[game]] entries".into()).into());
    }
    let mut report = Table::new([
        "game_id",
        "label",
        "minimax",
        "maximin",
        "gap",
        "iterations",
        "converged",
        "decision_points",
        "strategies",
    ]);
    let mut mixture = Table::new(["game_id", "atom", "weight", "actions"]);
    let mut estimator = Table::new(["game_id", "prefix", "estimate"]);
    let join = |v: &[f64]| v.iter().map(|&a| num(a)).collect::<Vec<_>>().join(";");
    for (id, g) in cfg.games.iter().enumerate() {
        g.validate()
            .map_err(|e| CliError::Config(ConfigError(format!("game {id}: {e}"))))?;
        let sol = discrete_game_oracle(g)?;
        println!(
            "game {id} {}: minimax {} maximin {} gap {}",
            g.label,
            num(sol.minimax),
            num(sol.maximin),
            num(sol.gap)
        );
        report.push(vec![
            id.to_string(),
            g.label.clone(),
            num(sol.minimax),
            num(sol.maximin),
            num(sol.gap),
            sol.iterations.to_string(),
            sol.converged.to_string(),
            sol.decision_points.len().to_string(),
            num(sol.strategies),
        ]);
        for (a, atom) in sol.mixture.iter().enumerate() {
            mixture.push(vec![
                id.to_string(),
                a.to_string(),
                num(atom.weight),
                join(&atom.actions),
            ]);
        }
        for (prefix, est) in &sol.estimator {
            estimator.push(vec![id.to_string(), join(prefix), num(*est)]);
        }
    }
    write(&report, &out_path(cfg, "game.csv")?)?;
    write(&mixture, &out_path(cfg, "game_mixture.csv")?)?;
    write(&estimator, &out_path(cfg, "game_estimator.csv")?)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.model()?;
    let t = cfg.t_index()?;
    let kb = KalmanBucy64::new(spec)?;
    let descs = cfg
        .eval
        .estimators
        .clone()
        .unwrap_or_else(|| vec!["classical".into()]);
    let labels = cfg.theta_labels(cfg.eval.thetas.as_ref());
    let methods = cfg
        .eval
        .methods
        .clone()
        .unwrap_or_else(|| vec!["direct".into()]);
    for m in &methods {
        if m != "direct" && m != "importance" {
            return Err(ConfigError(format!("unknown method `{m}` (direct | importance)")).into());
        }
    }
    let estimators = descs
        .iter()
        .map(|d| cfg.estimator(d))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let policies = labels
        .iter()
        .map(|l| cfg.policy(l))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut table = Table::new([
        "run_id",
        "method",
        "theta_desc",
        "estimator_desc",
        "t",
        "mse",
        "stderr",
        "ess",
    ]);
    for (label, policy) in labels.iter().zip(&policies) {
        for (desc, est) in descs.iter().zip(&estimators) {
            for method in &methods {
                let e = if method == "direct" {
                    mc_mse(&kb, policy, est, t, cfg.n_paths, cfg.seed)?
                } else {
                    is_mse(&kb, policy, est, t, cfg.n_paths, cfg.seed)?
                };
                if e.ess_warning {
                    eprintln!("warning: effective sample size below 10% for theta `{label}`, estimator `{desc}`");
                }
                table.push(vec![
                    cfg.run_id.clone(),
                    e.method.tag().to_string(),
                    label.clone(),
                    desc.clone(),
                    num(spec.grid.node(t)),
                    num(e.mean),
                    num(e.std_err),
                    e.ess.map(num).unwrap_or_default(),
                ]);
            }
        }
    }
    write(&table, &out_path(cfg, "eval.csv")?)?;
    Ok(())
}
