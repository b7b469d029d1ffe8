//! Summary statistics over metrics rows and mean-|attribution| heatmaps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use whitebench_core::attribution::{Attribution, AttributionBatch, Method};
use whitebench_core::datagen::{Background, Scenario};
use whitebench_core::metrics::{read_metrics_csv, summarize, MetricsRecord, Summary};
use whitebench_core::models::Architecture;
use whitebench_core::whitening::WhiteningMethod;

use crate::error::{BenchError, Result};

pub const SUMMARY_CSV_HEADER: &str = "scenario,background,whitening,model,method,n,\
precision_mean,precision_median,precision_q1,precision_q3,\
emd_mean,emd_median,emd_q1,emd_q3";

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: Scenario,
    pub background: Background,
    pub whitening: WhiteningMethod,
    pub model: Architecture,
    pub method: Method,
    pub precision: Summary,
    pub emd: Summary,
}

type GroupKey = (Scenario, Background, &'static str, &'static str, &'static str);

/// One row per (scenario, background, whitening, model, method), sorted by those fields.
pub fn summarize_records(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<GroupKey, (&MetricsRecord, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let key = (r.scenario, r.background, r.whitening.as_str(), r.model.as_str(), r.method.as_str());
        let entry = groups.entry(key).or_insert_with(|| (r, Vec::new(), Vec::new()));
        entry.1.push(r.precision);
        entry.2.push(r.emd_score);
    }
    groups
        .into_values()
        .map(|(first, precision, emd)| SummaryRow {
            scenario: first.scenario,
            background: first.background,
            whitening: first.whitening,
            model: first.model,
            method: first.method,
            precision: summarize(&precision).expect("group is nonempty"),
            emd: summarize(&emd).expect("group is nonempty"),
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.background,
            r.whitening,
            r.model,
            r.method,
            r.precision.n,
            r.precision.mean,
            r.precision.median,
            r.precision.q1,
            r.precision.q3,
            r.emd.mean,
            r.emd.median,
            r.emd.q1,
            r.emd.q3
        )
        .expect("write to String");
    }
    s
}

/// Mean absolute attribution over the maps whose sample id is in `include`.
/// A global batch (no sample ids) yields its single map's absolute values.
pub fn global_heatmap(batch: &AttributionBatch, include: &BTreeSet<usize>) -> Option<Vec<f64>> {
    if batch.sample_ids.is_empty() {
        return batch.maps.first().map(|m| m.iter().map(|v| v.abs()).collect());
    }
    let d = batch.height * batch.width;
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for (id, map) in batch.sample_ids.iter().zip(&batch.maps) {
        if include.contains(id) {
            for (s, v) in sum.iter_mut().zip(map) {
                *s += v.abs();
            }
            count += 1;
        }
    }
    (count > 0).then(|| sum.into_iter().map(|s| s / count as f64).collect())
}

/// Writes `<stem>.csv` (grid) and `<stem>.pgm` (16-bit, normalized by the maximum).
pub fn write_heatmap(dir: &Path, stem: &str, values: Vec<f64>, batch: &AttributionBatch) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let a = Attribution {
        values,
        height: batch.height,
        width: batch.width,
        method: batch.method,
        sample: None,
        model: batch.model.clone(),
    };
    let csv = dir.join(format!("{stem}.csv"));
    fs::write(&csv, a.to_csv_grid())?;
    fs::write(dir.join(format!("{stem}.pgm")), a.to_pgm16())?;
    Ok(csv)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregateOutput {
    pub summary: PathBuf,
    pub rows: usize,
    pub heatmaps: Vec<PathBuf>,
}

/// Summarizes every `cells/*/metrics.csv` under `run_dir` and rebuilds the
/// heatmaps from the attribution batches next to them, restricted to samples
/// that have a metrics row. Results go to `out_dir`.
pub fn aggregate_dir(run_dir: &Path, out_dir: &Path) -> Result<AggregateOutput> {
    let cells_dir = run_dir.join("cells");
    let mut cell_dirs: Vec<PathBuf> = match fs::read_dir(&cells_dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("metrics.csv").is_file()).collect(),
        Err(_) => Vec::new(),
    };
    if cell_dirs.is_empty() {
        return Err(BenchError::NoMetrics(run_dir.display().to_string()));
    }
    cell_dirs.sort();

    let mut records = Vec::new();
    let mut heatmaps = Vec::new();
    for dir in &cell_dirs {
        let rows = read_metrics_csv(&dir.join("metrics.csv"))?;
        let mut correct: BTreeMap<&'static str, BTreeSet<usize>> = BTreeMap::new();
        for r in &rows {
            correct.entry(r.method.as_str()).or_default().insert(r.sample_id);
        }
        let rigid = rows.first().is_some_and(|r| r.scenario == Scenario::Rigid);
        if !rigid {
            let cell = dir.file_name().and_then(|n| n.to_str()).unwrap_or("cell");
            for (method, ids) in &correct {
                let manifest = dir.join(format!("{method}.json"));
                if !manifest.is_file() {
                    continue;
                }
                let batch = AttributionBatch::load(&manifest)?;
                if let Some(map) = global_heatmap(&batch, ids) {
                    heatmaps.push(write_heatmap(&out_dir.join("heatmaps"), &format!("{cell}__{method}"), map, &batch)?);
                }
            }
        }
        records.extend(rows);
    }
    fs::create_dir_all(out_dir)?;
    let summary = summarize_records(&records);
    let path = out_dir.join("summary.csv");
    fs::write(&path, summary_csv(&summary))?;
    Ok(AggregateOutput {
        summary: path,
        rows: summary.len(),
        heatmaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(method: Method, id: usize, precision: f64, emd: f64) -> MetricsRecord {
        MetricsRecord {
            scenario: Scenario::Lin,
            background: Background::Corr,
            whitening: WhiteningMethod::None,
            model: Architecture::Llr,
            method,
            sample_id: id,
            precision,
            emd_score: emd,
        }
    }

    #[test]
    fn single_row_summary_is_that_row() {
        let rows = summarize_records(&[record(Method::Saliency, 0, 0.625, 0.9)]);
        assert_eq!(rows.len(), 1);
        let s = rows[0].precision;
        assert_eq!((s.n, s.mean, s.median, s.q1, s.q3), (1, 0.625, 0.625, 0.625, 0.625));
        assert_eq!(rows[0].emd.mean, 0.9);
    }

    #[test]
    fn quartiles_by_hand() {
        // sorted 1,2,3,4,5,6,7,8: positions 1.75, 3.5, 5.25
        let recs: Vec<_> = [5.0, 1.0, 8.0, 3.0, 2.0, 7.0, 4.0, 6.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| record(Method::Saliency, i, v, v / 10.0))
            .collect();
        let row = &summarize_records(&recs)[0];
        assert_eq!(row.precision.q1, 2.75);
        assert_eq!(row.precision.median, 4.5);
        assert_eq!(row.precision.q3, 6.25);
        assert_eq!(row.precision.mean, 4.5);
        assert!((row.emd.q3 - 0.625).abs() < 1e-15);
    }

    #[test]
    fn groups_split_by_method() {
        let rows = summarize_records(&[
            record(Method::Saliency, 0, 1.0, 1.0),
            record(Method::LrpEpsilon, 0, 0.0, 0.0),
            record(Method::Saliency, 1, 0.0, 0.0),
        ]);
        assert_eq!(rows.len(), 2);
        let sal = rows.iter().find(|r| r.method == Method::Saliency).unwrap();
        assert_eq!(sal.precision.n, 2);
        assert_eq!(sal.precision.mean, 0.5);
        let csv = summary_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 14);
    }

    #[test]
    fn heatmap_ignores_excluded_samples() {
        let batch = AttributionBatch {
            method: Method::Saliency,
            model: "m".into(),
            height: 1,
            width: 2,
            sample_ids: vec![3, 4, 5],
            maps: vec![vec![1.0, -2.0], vec![100.0, 100.0], vec![-3.0, 0.0]],
        };
        let include: BTreeSet<usize> = [3, 5].into();
        assert_eq!(global_heatmap(&batch, &include).unwrap(), vec![2.0, 1.0]);
        assert!(global_heatmap(&batch, &BTreeSet::new()).is_none());
        let global = AttributionBatch {
            sample_ids: vec![],
            maps: vec![vec![-1.0, 0.5]],
            ..batch
        };
        assert_eq!(global_heatmap(&global, &include).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn aggregate_without_metrics_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(aggregate_dir(dir.path(), dir.path()), Err(BenchError::NoMetrics(_))));
    }
}
