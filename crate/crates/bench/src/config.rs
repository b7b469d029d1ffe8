//! Structured configuration (TOML) and its expansion into an experiment plan.
//!
//! Every key is optional. Top level: `seed`, `out`, `jobs`; sections
//! `[data]`, `[train]`, `[model]`, `[methods]`, `[grid]` and `[[cells]]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use whitebench_core::attribution::{Method, MethodConfig};
use whitebench_core::datagen::{Background, Scenario, ScenarioConfig, SplitFractions};
use whitebench_core::models::{Architecture, ModelSpec, TrainConfig};
use whitebench_core::whitening::WhiteningMethod;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; `None` uses all cores.
    pub jobs: Option<usize>,
    pub data: DataSection,
    pub train: TrainSection,
    pub model: ModelSection,
    pub methods: MethodConfig,
    pub grid: Option<GridSection>,
    pub cells: Vec<CellSpec>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            jobs: None,
            data: DataSection::default(),
            train: TrainSection::default(),
            model: ModelSection::default(),
            methods: MethodConfig::default(),
            grid: None,
            cells: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n_samples: usize,
    pub height: usize,
    pub width: usize,
    pub smooth_sigma: f64,
    pub split: SplitFractions,
    /// Per-scenario signal weight overrides, keyed `LIN`, `MULT`, `RIGID`, `XOR`.
    pub alpha: BTreeMap<String, f64>,
}

impl Default for DataSection {
    fn default() -> Self {
        let base = ScenarioConfig::new(Scenario::Lin, Background::White);
        Self {
            n_samples: base.n_samples,
            height: base.height,
            width: base.width,
            smooth_sigma: base.smooth_sigma,
            split: base.split,
            alpha: BTreeMap::new(),
        }
    }
}

impl DataSection {
    pub fn alpha_for(&self, scenario: Scenario) -> Result<f64> {
        for (k, v) in &self.alpha {
            let s: Scenario = k.parse().map_err(|_| BenchError::Config(format!("unknown scenario key {k:?} in [data.alpha]")))?;
            if s == scenario {
                return Ok(*v);
            }
        }
        Ok(scenario.default_alpha())
    }

    pub fn scenario_config(&self, scenario: Scenario, background: Background, seed: u64) -> Result<ScenarioConfig> {
        let cfg = ScenarioConfig {
            scenario,
            background,
            n_samples: self.n_samples,
            height: self.height,
            width: self.width,
            alpha: self.alpha_for(scenario)?,
            smooth_sigma: self.smooth_sigma,
            seed,
            split: self.split,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    /// `None` uses the per-scenario default.
    pub learning_rate: Option<f64>,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: TrainConfig::default().epochs,
            learning_rate: None,
            batch_size: None,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, scenario: Scenario, seed: u64) -> TrainConfig {
        let base = TrainConfig::for_scenario(scenario);
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            batch_size: self.batch_size,
            seed,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub mlp_hidden: Vec<usize>,
    pub cnn_conv_layers: usize,
    pub cnn_filters: usize,
    pub cnn_kernel: usize,
    pub cnn_pool: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let s = ModelSpec::new(Architecture::Mlp);
        Self {
            mlp_hidden: s.mlp_hidden,
            cnn_conv_layers: s.cnn_conv_layers,
            cnn_filters: s.cnn_filters,
            cnn_kernel: s.cnn_kernel,
            cnn_pool: s.cnn_pool,
        }
    }
}

impl ModelSection {
    pub fn spec(&self, architecture: Architecture) -> ModelSpec {
        ModelSpec {
            architecture,
            mlp_hidden: self.mlp_hidden.clone(),
            cnn_conv_layers: self.cnn_conv_layers,
            cnn_filters: self.cnn_filters,
            cnn_kernel: self.cnn_kernel,
            cnn_pool: self.cnn_pool,
        }
    }
}

/// Cross product of the listed axes. WHITE backgrounds get only the
/// identity whitening unless `whiten_white` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub scenarios: Vec<Scenario>,
    pub backgrounds: Vec<Background>,
    pub whitenings: Vec<WhiteningMethod>,
    pub models: Vec<Architecture>,
    pub methods: Vec<Method>,
    pub whiten_white: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            scenarios: Scenario::ALL.to_vec(),
            backgrounds: vec![Background::White, Background::Corr],
            whitenings: vec![
                WhiteningMethod::None,
                WhiteningMethod::Sphering,
                WhiteningMethod::SymOrth,
                WhiteningMethod::Osp,
                WhiteningMethod::Cholesky,
                WhiteningMethod::PartialRegression,
            ],
            models: Architecture::ALL.to_vec(),
            methods: vec![Method::Saliency, Method::IntegratedGradients, Method::LrpEpsilon, Method::GradientShap],
            whiten_white: false,
        }
    }
}

impl GridSection {
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for &scenario in &self.scenarios {
            for &background in &self.backgrounds {
                for &whitening in &self.whitenings {
                    if background == Background::White && whitening != WhiteningMethod::None && !self.whiten_white {
                        continue;
                    }
                    for &model in &self.models {
                        out.push(CellSpec {
                            scenario,
                            background,
                            whitening,
                            model,
                            methods: self.methods.clone(),
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub scenario: Scenario,
    pub background: Background,
    pub whitening: WhiteningMethod,
    pub model: Architecture,
    pub methods: Vec<Method>,
}

impl CellSpec {
    /// `SCENARIO/BACKGROUND/whitening/MODEL`.
    pub fn id(&self) -> String {
        format!("{}/{}/{}/{}", self.scenario, self.background, self.whitening, self.model)
    }

    pub fn dir_name(&self) -> String {
        self.id().replace('/', "_")
    }
}

impl fmt::Display for CellSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// `SCENARIO/BACKGROUND/whitening/MODEL` pattern; each segment is a
/// case-insensitive literal or `*`, and missing trailing segments match anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSelector {
    segments: Vec<Option<String>>,
}

impl CellSelector {
    pub fn matches(&self, cell: &CellSpec) -> bool {
        let id = cell.id();
        let parts: Vec<&str> = id.split('/').collect();
        self.segments
            .iter()
            .zip(&parts)
            .all(|(seg, part)| seg.as_ref().is_none_or(|s| s.eq_ignore_ascii_case(part)))
    }
}

impl FromStr for CellSelector {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        let segments: Vec<Option<String>> = s
            .trim()
            .split('/')
            .map(|p| match p.trim() {
                "*" => None,
                other => Some(other.to_string()),
            })
            .collect();
        if segments.len() > 4 || segments.iter().any(|s| s.as_deref() == Some("")) {
            return Err(BenchError::Selector(s.to_string()));
        }
        Ok(Self { segments })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub cells: Vec<CellSpec>,
    pub data: DataSection,
    pub train: TrainSection,
    pub model: ModelSection,
    pub methods: MethodConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Explicit cells first, then grid cells, filtered by `selectors` (any match).
    pub fn plan(&self, selectors: &[CellSelector]) -> Result<ExperimentPlan> {
        let mut cells = self.cells.clone();
        if let Some(grid) = &self.grid {
            cells.extend(grid.cells());
        }
        if !selectors.is_empty() {
            cells.retain(|c| selectors.iter().any(|s| s.matches(c)));
        }
        let plan = ExperimentPlan {
            cells,
            data: self.data.clone(),
            train: self.train.clone(),
            model: self.model.clone(),
            methods: MethodConfig {
                seed: self.seed,
                ..self.methods.clone()
            },
            out: self.out.clone(),
            seed: self.seed,
            jobs: self.jobs,
        };
        plan.validate()?;
        Ok(plan)
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.cells {
            if !seen.insert(c.id()) {
                return Err(BenchError::Config(format!("duplicate cell {c}")));
            }
            if c.methods.is_empty() {
                return Err(BenchError::Config(format!("cell {c} lists no methods")));
            }
            let mut m = BTreeSet::new();
            if !c.methods.iter().all(|x| m.insert(x.as_str())) {
                return Err(BenchError::Config(format!("cell {c} lists a method twice")));
            }
            self.data.alpha_for(c.scenario)?;
        }
        if self.jobs == Some(0) {
            return Err(BenchError::Config("jobs must be ≥ 1".into()));
        }
        self.methods.validate()?;
        Ok(())
    }
}
