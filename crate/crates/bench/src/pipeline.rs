//! Plan execution.
//!
//! Stages run phase by phase (datasets, whitened datasets, models, cells);
//! within a phase every distinct stage runs once, in parallel, and each writes
//! only its own content-addressed directory. Output files depend only on the
//! plan and seed.
//!
//! Layout under `out`:
//! `data/<key>/`, `whitened/<key>/`, `models/<key>/`, `cells/<cell>/`,
//! `heatmaps/`, `metrics.csv`, `summary.csv`, `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use whitebench_core::attribution::{explain_batch, explain_global, AttributionBatch, Method, MethodConfig};
use whitebench_core::datagen::{generate_dataset, Dataset, Scenario, ScenarioConfig};
use whitebench_core::metrics::{emd_score, precision_at_k, read_metrics_csv, write_metrics_csv, MetricsRecord};
use whitebench_core::models::{train, ModelSpec, TrainConfig, TrainedModel, ACCURACY_GATE};
use whitebench_core::whitening::{whiten_dataset, WhiteningMethod};

use crate::aggregate::{global_heatmap, summarize_records, summary_csv, write_heatmap};
use crate::cache::{content_key, invalidate, is_fresh, short, write_stamp};
use crate::config::{CellSpec, ExperimentPlan};
use crate::error::{BenchError, Result};
use crate::manifest::{CellRecord, CellStatus, RunManifest};

/// A computed or cache-loaded stage output.
#[derive(Debug, Clone)]
pub struct Stage<T> {
    pub key: String,
    pub dir: PathBuf,
    pub value: T,
    pub cached: bool,
}

pub fn dataset_stage(out: &Path, config: &ScenarioConfig) -> Result<Stage<Dataset>> {
    let key = content_key("dataset", config)?;
    let dir = out.join("data").join(short(&key));
    let manifest = dir.join("dataset.json");
    if is_fresh(&dir, &key) {
        return Ok(Stage {
            value: Dataset::load(&manifest)?,
            key,
            dir,
            cached: true,
        });
    }
    invalidate(&dir)?;
    info!("generating {} {} (n = {})", config.scenario, config.background, config.n_samples);
    let ds = generate_dataset(config)?;
    ds.save(&dir, "dataset")?;
    write_stamp(&dir, "dataset", &key)?;
    Ok(Stage {
        key,
        dir,
        value: ds,
        cached: false,
    })
}

/// The identity method passes the source stage through unchanged.
pub fn whitening_stage(out: &Path, source: &Stage<Dataset>, method: WhiteningMethod) -> Result<Stage<Dataset>> {
    if method == WhiteningMethod::None {
        return Ok(source.clone());
    }
    let key = content_key("whitening", &(&source.key, method))?;
    let dir = out.join("whitened").join(short(&key));
    if is_fresh(&dir, &key) {
        return Ok(Stage {
            value: Dataset::load(&dir.join("dataset.json"))?,
            key,
            dir,
            cached: true,
        });
    }
    invalidate(&dir)?;
    info!("whitening {} {} with {method}", source.value.config.scenario, source.value.config.background);
    let white = whiten_dataset(&source.value, method, None)?;
    white.data.save(&dir, "dataset")?;
    white.transform.save(&dir.join("transform.bin"))?;
    write_stamp(&dir, "whitening", &key)?;
    Ok(Stage {
        key,
        dir,
        value: white.data,
        cached: false,
    })
}

pub fn model_stage(out: &Path, data: &Stage<Dataset>, spec: &ModelSpec, config: &TrainConfig) -> Result<Stage<TrainedModel>> {
    let key = content_key("model", &(&data.key, spec, config))?;
    let dir = out.join("models").join(short(&key));
    if is_fresh(&dir, &key) {
        return Ok(Stage {
            value: TrainedModel::load(&dir.join("model.model"))?,
            key,
            dir,
            cached: true,
        });
    }
    invalidate(&dir)?;
    let model = train(spec, &data.value, config)?;
    info!(
        "trained {} on {} {}: test accuracy {:.4} (best epoch {})",
        spec.architecture, data.value.config.scenario, data.value.config.background, model.test_accuracy, model.best_epoch
    );
    model.save(&dir, "model")?;
    write_stamp(&dir, "model", &key)?;
    Ok(Stage {
        key,
        dir,
        value: model,
        cached: false,
    })
}

/// Test-split indices the model classifies correctly, ascending.
pub fn correct_test_ids(model: &TrainedModel, data: &Dataset) -> Result<Vec<usize>> {
    let mut ids = Vec::new();
    for &i in &data.splits.test {
        let s = &data.samples[i];
        if model.network.predict(&s.pixels)? == s.label as usize {
            ids.push(i);
        }
    }
    Ok(ids)
}

/// Attribution maps for `ids`; a global method yields one map shared by all samples.
pub fn attribution_batch(
    model: &TrainedModel,
    tag: &str,
    method: Method,
    data: &Dataset,
    ids: &[usize],
    config: &MethodConfig,
) -> Result<AttributionBatch> {
    let (h, w) = (data.config.height, data.config.width);
    if method.is_global() {
        let test = &data.splits.test;
        let a = explain_global(&model.network, tag, &data.pixel_matrix(test), &data.labels(test), h, w, config)?;
        return Ok(AttributionBatch::from_global(a));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    Ok(explain_batch(&model.network, tag, method, &data.pixel_matrix(&all), ids, h, w, config)?)
}

/// Precision and EMD score of each map against its sample's ground truth.
pub fn evaluate_batch(cell: &CellSpec, batch: &AttributionBatch, data: &Dataset, ids: &[usize]) -> Result<Vec<MetricsRecord>> {
    let (h, w) = (batch.height, batch.width);
    ids.par_iter()
        .enumerate()
        .map(|(k, &id)| {
            let map = if batch.sample_ids.is_empty() { &batch.maps[0] } else { &batch.maps[k] };
            let mask = &data.samples[id].gt_mask;
            Ok(MetricsRecord {
                scenario: cell.scenario,
                background: cell.background,
                whitening: cell.whitening,
                model: cell.model,
                method: batch.method,
                sample_id: id,
                precision: precision_at_k(map, mask, None)?,
                emd_score: emd_score(map, mask, h, w)?,
            })
        })
        .collect()
}

struct CellResult {
    record: CellRecord,
    metrics: Vec<MetricsRecord>,
}

fn cell_stage(plan: &ExperimentPlan, cell: &CellSpec, data: &Stage<Dataset>, model: &Stage<TrainedModel>) -> Result<CellResult> {
    let started = Instant::now();
    let dir = plan.out.join("cells").join(cell.dir_name());
    let key = content_key("cell", &(&data.key, &model.key, &cell.methods, &plan.methods))?;
    let mut record = CellRecord {
        run: 0,
        cell: cell.id(),
        status: CellStatus::Completed,
        reason: None,
        key: Some(key.clone()),
        paths: BTreeMap::from([
            ("dataset".to_string(), data.dir.join("dataset.json")),
            ("model".to_string(), model.dir.join("model.model")),
        ]),
        test_accuracy: Some(model.value.test_accuracy),
        passes_gate: Some(model.value.passes_gate()),
        metrics_rows: 0,
        wall_clock_secs: 0.0,
    };
    let metrics_path = dir.join("metrics.csv");

    if !model.value.passes_gate() {
        let reason = format!(
            "test accuracy {:.4} below gate {ACCURACY_GATE:.2}; excluded from aggregates",
            model.value.test_accuracy
        );
        warn!("{cell}: {reason}");
        invalidate(&dir)?;
        if metrics_path.exists() {
            fs::remove_file(&metrics_path)?;
        }
        record.status = CellStatus::Excluded;
        record.reason = Some(reason);
        record.wall_clock_secs = started.elapsed().as_secs_f64();
        return Ok(CellResult {
            record,
            metrics: Vec::new(),
        });
    }

    record.paths.insert("metrics".into(), metrics_path.clone());
    if is_fresh(&dir, &key) {
        let metrics = read_metrics_csv(&metrics_path)?;
        record.status = CellStatus::Cached;
        record.metrics_rows = metrics.len();
        record.wall_clock_secs = started.elapsed().as_secs_f64();
        return Ok(CellResult { record, metrics });
    }
    invalidate(&dir)?;
    fs::create_dir_all(&dir)?;

    let ids = correct_test_ids(&model.value, &data.value)?;
    let tag = format!("{}@{}", cell.model, short(&model.key));
    let mut metrics = Vec::new();
    for &method in &cell.methods {
        let batch = attribution_batch(&model.value, &tag, method, &data.value, &ids, &plan.methods)?;
        batch.save(&dir, method.as_str())?;
        metrics.extend(evaluate_batch(cell, &batch, &data.value, &ids)?);
        if cell.scenario != Scenario::Rigid {
            let include: BTreeSet<usize> = ids.iter().copied().collect();
            if let Some(map) = global_heatmap(&batch, &include) {
                write_heatmap(&plan.out.join("heatmaps"), &format!("{}__{}", cell.dir_name(), method), map, &batch)?;
            }
        }
    }
    write_metrics_csv(&metrics_path, &metrics)?;
    write_stamp(&dir, "cell", &key)?;
    record.metrics_rows = metrics.len();
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    info!("{cell}: {} metrics rows from {} correct test samples", metrics.len(), ids.len());
    Ok(CellResult { record, metrics })
}

type Shared<T> = std::result::Result<Arc<T>, String>;

/// Runs `f` once per distinct key, in parallel; errors are kept per key.
fn par_stage<K, V, F>(keys: BTreeMap<String, K>, f: F) -> BTreeMap<String, Shared<V>>
where
    K: Sync,
    V: Send + Sync,
    F: Fn(&K) -> Result<V> + Sync,
{
    let entries: Vec<(String, K)> = keys.into_iter().collect();
    entries
        .par_iter()
        .map(|(id, k)| (id.clone(), f(k).map(Arc::new).map_err(|e| format!("{id}: {e}"))))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn upstream<T>(map: &BTreeMap<String, Shared<T>>, id: &str) -> std::result::Result<Arc<T>, String> {
    map.get(id).cloned().unwrap_or_else(|| Err(format!("{id}: missing stage")))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run: usize,
    pub records: Vec<CellRecord>,
    pub metrics: Vec<MetricsRecord>,
    pub manifest_path: PathBuf,
    pub metrics_path: PathBuf,
    pub summary_path: PathBuf,
}

impl RunOutcome {
    pub fn any_failed(&self) -> bool {
        self.records.iter().any(|r| r.status == CellStatus::Failed)
    }

    pub fn count(&self, status: CellStatus) -> usize {
        self.records.iter().filter(|r| r.status == status).count()
    }
}

/// Executes every cell of `plan`. Cell errors are recorded, not raised; the
/// returned error covers only failures outside any cell (I/O on the run
/// directory, thread pool construction).
pub fn run(plan: &ExperimentPlan) -> Result<RunOutcome> {
    plan.validate()?;
    fs::create_dir_all(&plan.out)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = plan.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
    let results = pool.install(|| run_phases(plan));

    let mut manifest = RunManifest::load_or_default(&plan.out)?;
    let mut records = Vec::with_capacity(results.len());
    let mut metrics = Vec::new();
    for r in results {
        metrics.extend(r.metrics);
        records.push(r.record);
    }
    let run = manifest.append_run(records.clone());
    for r in &mut records {
        r.run = run;
    }
    let manifest_path = manifest.save(&plan.out)?;
    let metrics_path = plan.out.join("metrics.csv");
    write_metrics_csv(&metrics_path, &metrics)?;
    let summary_path = plan.out.join("summary.csv");
    fs::write(&summary_path, summary_csv(&summarize_records(&metrics)))?;
    Ok(RunOutcome {
        run,
        records,
        metrics,
        manifest_path,
        metrics_path,
        summary_path,
    })
}

fn run_phases(plan: &ExperimentPlan) -> Vec<CellResult> {
    let out = &plan.out;
    let data_id = |c: &CellSpec| format!("{}/{}", c.scenario, c.background);
    let white_id = |c: &CellSpec| format!("{}/{}", data_id(c), c.whitening);

    let mut data_keys = BTreeMap::new();
    let mut white_keys = BTreeMap::new();
    let mut model_keys = BTreeMap::new();
    for c in &plan.cells {
        data_keys.insert(data_id(c), (c.scenario, c.background));
        white_keys.insert(white_id(c), (data_id(c), c.whitening));
        model_keys.insert(c.id(), (white_id(c), c.scenario, c.model));
    }

    let datasets = par_stage(data_keys, |&(scenario, background)| {
        dataset_stage(out, &plan.data.scenario_config(scenario, background, plan.seed)?)
    });
    let whitened = par_stage(white_keys, |(source, method)| {
        let src = upstream(&datasets, source).map_err(BenchError::Upstream)?;
        whitening_stage(out, &src, *method)
    });
    let models = par_stage(model_keys, |(data, scenario, arch)| {
        let d = upstream(&whitened, data).map_err(BenchError::Upstream)?;
        model_stage(out, &d, &plan.model.spec(*arch), &plan.train.train_config(*scenario, plan.seed))
    });

    plan.cells
        .par_iter()
        .map(|cell| {
            let started = Instant::now();
            let attempt = upstream(&whitened, &white_id(cell))
                .and_then(|d| upstream(&models, &cell.id()).map(|m| (d, m)))
                .map_err(BenchError::Upstream)
                .and_then(|(d, m)| cell_stage(plan, cell, &d, &m));
            attempt.unwrap_or_else(|e| {
                warn!("{cell} failed: {e}");
                CellResult {
                    record: CellRecord {
                        run: 0,
                        cell: cell.id(),
                        status: CellStatus::Failed,
                        reason: Some(e.to_string()),
                        key: None,
                        paths: BTreeMap::new(),
                        test_accuracy: None,
                        passes_gate: None,
                        metrics_rows: 0,
                        wall_clock_secs: started.elapsed().as_secs_f64(),
                    },
                    metrics: Vec::new(),
                }
            })
        })
        .collect()
}
