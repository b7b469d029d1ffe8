//! Smallest signal weight α on a 1/64 grid at which a model clears a target
//! test accuracy, found by bisection (accuracy assumed monotone in α).

use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};
use whitebench_core::datagen::{generate_dataset, Background, Scenario};
use whitebench_core::models::{train, Architecture};

use crate::config::{DataSection, ModelSection, TrainSection};
use crate::error::{BenchError, Result};

pub const ALPHA_STEPS: u32 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub cell: String,
    pub alpha: f64,
    pub test_accuracy: f64,
    pub target: f64,
    /// Every (α, test accuracy) pair evaluated, ascending in α.
    pub evaluations: Vec<(f64, f64)>,
}

#[allow(clippy::too_many_arguments)]
pub fn calibrate_alpha(
    scenario: Scenario,
    background: Background,
    architecture: Architecture,
    target: f64,
    data: &DataSection,
    train_section: &TrainSection,
    model: &ModelSection,
    seed: u64,
) -> Result<Calibration> {
    if !(0.0..=1.0).contains(&target) {
        return Err(BenchError::Config(format!("target accuracy {target} outside [0, 1]")));
    }
    let cell = format!("{scenario}/{background}/{architecture}");
    let spec = model.spec(architecture);
    let tc = train_section.train_config(scenario, seed);
    let mut seen: BTreeMap<u32, f64> = BTreeMap::new();
    let accuracy = |k: u32, seen: &mut BTreeMap<u32, f64>| -> Result<f64> {
        if let Some(&a) = seen.get(&k) {
            return Ok(a);
        }
        let alpha = f64::from(k) / f64::from(ALPHA_STEPS);
        let cfg = data.scenario_config(scenario, background, seed)?;
        let ds = generate_dataset(&cfg.clone().with_alpha(alpha))?;
        let acc = train(&spec, &ds, &tc)?.test_accuracy;
        info!("{cell}: alpha {alpha:.4} -> test accuracy {acc:.4}");
        seen.insert(k, acc);
        Ok(acc)
    };

    let top = accuracy(ALPHA_STEPS, &mut seen)?;
    if top < target {
        return Err(BenchError::Unreachable {
            cell,
            target,
            accuracy: top,
        });
    }
    // invariant: accuracy(hi) ≥ target, and lo is below target or 0
    let (mut lo, mut hi) = (0u32, ALPHA_STEPS);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if accuracy(mid, &mut seen)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Calibration {
        cell,
        alpha: f64::from(hi) / f64::from(ALPHA_STEPS),
        test_accuracy: seen[&hi],
        target,
        evaluations: seen.iter().map(|(&k, &a)| (f64::from(k) / f64::from(ALPHA_STEPS), a)).collect(),
    })
}
