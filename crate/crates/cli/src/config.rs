//! Run configuration.
//!
//! ```toml
//! model = "bench.toml"      # relative to this file
//! seed = 7                  # mandatory unless --seed is given
//! n_paths = 1000
//! t_index = 1000            # defaults to the last node
//! out = "out"               # relative to this file; --out overrides
//!
//! [[theta]]
//! label = "up"
//! kind = "constant"         # zero | constant | table | blocks | sign-feedback
//! value = [0.5]
//! clamp = false
//!
//! [simulate]
//! theta = "up"              # drift used for the paths; omitted = reference measure
//!
//! [filter]
//! truth = "up"              # drift the paths are simulated under
//! theta = "up"              # drift the corrected filter subtracts
//!
//! [robust]
//! estimators = ["classical", "filter:up", "shift:up", "offset:0.1", "constant:0.0"]
//! thetas = ["zero", "up"]   # adversary candidates for the Monte Carlo check
//!
//! [eval]
//! estimators = ["classical"]
//! thetas = ["zero", "up"]
//! methods = ["direct", "importance"]
//!
//! [[game]]
//! label = "k1"
//! steps = 1
//! dt = 0.04
//! G = 25.0
//! Q = 1.0
//! R = 1.0
//! mu = 1.0
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rkb::{EstimatorSpec64, GameSpec, ModelSpec64, ThetaPolicy64, ThetaTable64};
use serde::Deserialize;

/// Problems found before any computation starts; exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<rkb::Error> for ConfigError {
    fn from(e: rkb::Error) -> Self {
        ConfigError(e.to_string())
    }
}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<PathBuf>,
    seed: Option<u64>,
    #[serde(default = "default_paths")]
    n_paths: usize,
    t_index: Option<usize>,
    out: Option<PathBuf>,
    run_id: Option<String>,
    #[serde(default)]
    theta: Vec<ThetaEntry>,
    #[serde(default)]
    simulate: SimulateSection,
    #[serde(default)]
    filter: FilterSection,
    #[serde(default)]
    robust: RobustSection,
    #[serde(default)]
    eval: EvalSection,
    #[serde(default)]
    game: Vec<GameSpec>,
}

fn default_paths() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaKind {
    Zero,
    Constant,
    Table,
    Blocks,
    SignFeedback,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaEntry {
    pub label: String,
    pub kind: ThetaKind,
    /// `constant`: one m-vector.
    pub value: Option<Vec<f64>>,
    /// `table`: one m-vector per node (`n_steps + 1` rows); `blocks`: one per block.
    pub values: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub clamp: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub theta: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub truth: Option<String>,
    pub theta: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustSection {
    pub estimators: Option<Vec<String>>,
    pub thetas: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub estimators: Option<Vec<String>>,
    pub thetas: Option<Vec<String>>,
    pub methods: Option<Vec<String>>,
}

/// A parsed run configuration with its model loaded and validated.
pub struct RunConfig {
    pub run_id: String,
    pub model: Option<ModelSpec64>,
    pub seed: u64,
    pub n_paths: usize,
    t_index: Option<usize>,
    pub out: PathBuf,
    pub theta: Vec<ThetaEntry>,
    pub simulate: SimulateSection,
    pub filter: FilterSection,
    pub robust: RobustSection,
    pub eval: EvalSection,
    pub games: Vec<GameSpec>,
}

impl RunConfig {
    pub fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        let raw: RawConfig =
            toml::from_str(&text).map_err(|e| bad(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let seed = seed
            .or(raw.seed)
            .ok_or_else(|| bad("missing field `seed`: set it in the config or pass --seed"))?;
        let model = match raw.model {
            Some(p) => {
                let p = base.join(p);
                if !p.exists() {
                    return Err(bad(format!(
                        "field `model`: file {} does not exist",
                        p.display()
                    )));
                }
                let spec: ModelSpec64 = rkb::model::load_spec(&p)?;
                spec.checked()?;
                Some(spec)
            }
            None => None,
        };
        let mut labels = BTreeSet::new();
        for t in &raw.theta {
            if !labels.insert(t.label.as_str()) {
                return Err(bad(format!("duplicate theta label `{}`", t.label)));
            }
        }
        if raw.n_paths < 2 {
            return Err(bad("field `n_paths` must be at least 2"));
        }
        let run_id = raw.run_id.unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        Ok(Self {
            run_id,
            model,
            seed,
            n_paths: raw.n_paths,
            t_index: raw.t_index,
            out: out.unwrap_or_else(|| {
                raw.out
                    .map(|o| base.join(o))
                    .unwrap_or_else(|| PathBuf::from("."))
            }),
            theta: raw.theta,
            simulate: raw.simulate,
            filter: raw.filter,
            robust: raw.robust,
            eval: raw.eval,
            games: raw.game,
        })
    }

    pub fn model(&self) -> Result<&ModelSpec64, ConfigError> {
        self.model
            .as_ref()
            .ok_or_else(|| bad("missing field `model`"))
    }

    pub fn t_index(&self) -> Result<usize, ConfigError> {
        let last = self.model()?.n_steps();
        match self.t_index {
            Some(t) if t > last => Err(bad(format!(
                "field `t_index` = {t} exceeds the last node {last}"
            ))),
            Some(t) => Ok(t),
            None => Ok(last),
        }
    }

    /// `zero` is always available even if not declared.
    pub fn policy(&self, label: &str) -> Result<ThetaPolicy64, ConfigError> {
        let spec = self.model()?;
        let Some(entry) = self.theta.iter().find(|t| t.label == label) else {
            if label == "zero" {
                return Ok(ThetaPolicy64::zero(spec));
            }
            return Err(bad(format!("unknown theta label `{label}`")));
        };
        let policy = match entry.kind {
            ThetaKind::SignFeedback => ThetaPolicy64::sign_feedback(),
            _ => ThetaPolicy64::deterministic(label, self.table(entry)?),
        };
        Ok(policy.with_label(label).with_clamp(entry.clamp))
    }

    /// Deterministic table behind a label; feedback rules have none.
    pub fn table(&self, entry: &ThetaEntry) -> Result<ThetaTable64, ConfigError> {
        let spec = self.model()?;
        let vector = |v: &[f64], what: &str| {
            if v.len() == spec.m {
                Ok(DVector::from_column_slice(v))
            } else {
                Err(bad(format!(
                    "theta `{}`: {what} has length {}, expected {}",
                    entry.label,
                    v.len(),
                    spec.m
                )))
            }
        };
        let need = |field: &str| {
            bad(format!(
                "theta `{}`: kind needs field `{field}`",
                entry.label
            ))
        };
        let table = match entry.kind {
            ThetaKind::Zero => ThetaTable64::zeros(spec),
            ThetaKind::Constant => ThetaTable64::constant(
                spec,
                &vector(
                    entry.value.as_deref().ok_or_else(|| need("value"))?,
                    "value",
                )?,
            ),
            ThetaKind::Table => {
                let rows = entry.values.as_ref().ok_or_else(|| need("values"))?;
                let nodes = spec.grid.n_nodes();
                if rows.len() != nodes {
                    return Err(bad(format!(
                        "theta `{}`: table has {} rows, expected {nodes}",
                        entry.label,
                        rows.len()
                    )));
                }
                let mut m = DMatrix::zeros(spec.m, nodes);
                for (k, r) in rows.iter().enumerate() {
                    m.set_column(k, &vector(r, "row")?);
                }
                ThetaTable64::from_matrix(m)
            }
            ThetaKind::Blocks => {
                let rows = entry.values.as_ref().ok_or_else(|| need("values"))?;
                if rows.is_empty() || rows.len() > spec.n_steps() {
                    return Err(bad(format!(
                        "theta `{}`: needs between 1 and n_steps blocks",
                        entry.label
                    )));
                }
                let blocks = rows
                    .iter()
                    .map(|r| vector(r, "block"))
                    .collect::<Result<Vec<_>, _>>()?;
                ThetaTable64::blocks(spec, &blocks)
            }
            ThetaKind::SignFeedback => {
                return Err(bad(format!(
                    "theta `{}` is a feedback rule, a deterministic table is required",
                    entry.label
                )))
            }
        };
        Ok(table)
    }

    pub fn table_by_label(&self, label: &str) -> Result<ThetaTable64, ConfigError> {
        if label == "zero" && !self.theta.iter().any(|t| t.label == "zero") {
            return Ok(ThetaTable64::zeros(self.model()?));
        }
        let entry = self
            .theta
            .iter()
            .find(|t| t.label == label)
            .ok_or_else(|| bad(format!("unknown theta label `{label}`")))?;
        self.table(entry)
    }

    /// `classical | filter:<label> | shift:<label> | offset:<c,…> | constant:<v,…>`.
    pub fn estimator(&self, desc: &str) -> Result<EstimatorSpec64, ConfigError> {
        let spec = self.model()?;
        let (kind, arg) = desc.split_once(':').unwrap_or((desc, ""));
        let vector = || -> Result<DVector<f64>, ConfigError> {
            let v = arg
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("estimator `{desc}`: {e}")))?;
            if v.len() != spec.n {
                return Err(bad(format!(
                    "estimator `{desc}`: expected {} numbers",
                    spec.n
                )));
            }
            Ok(DVector::from_vec(v))
        };
        match kind {
            "classical" if arg.is_empty() => Ok(EstimatorSpec64::classical(spec)),
            "filter" => Ok(EstimatorSpec64::FilterInduced(self.table_by_label(arg)?)),
            "shift" => Ok(EstimatorSpec64::ShiftedFilter(self.table_by_label(arg)?)),
            "offset" => Ok(EstimatorSpec64::offset(vector()?)),
            "constant" => Ok(EstimatorSpec64::constant(vector()?)),
            _ => Err(bad(format!("unknown estimator `{desc}`"))),
        }
    }

    /// Declared labels, or `zero` when none are declared.
    pub fn theta_labels(&self, chosen: Option<&Vec<String>>) -> Vec<String> {
        match chosen {
            Some(v) => v.clone(),
            None if self.theta.is_empty() => vec!["zero".into()],
            None => self.theta.iter().map(|t| t.label.clone()).collect(),
        }
    }
}
