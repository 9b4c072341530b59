use serde::Serialize;

use super::scenarios::{Scenario, ScenarioRunner};
use crate::policy::{LayerId, LayerSlot, Mode, Outcome, PolicyConfig, PolicyError};

fn slot_of(layer: LayerId) -> LayerSlot {
    match layer {
        LayerId::L1 => LayerSlot::Hard,
        LayerId::L2 | LayerId::L2G => LayerSlot::Provenance,
        LayerId::L3 => LayerSlot::Schema,
        LayerId::L4 => LayerSlot::Manual,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MaskingReport {
    pub scenario: String,
    pub mode: Mode,
    /// Slots whose layer denies the sink call on its own.
    pub denying_slots: Vec<LayerSlot>,
    /// Every disabled-slot set that was tried.
    pub masks_tried: Vec<Vec<LayerSlot>>,
    /// Masks under which the sink call was allowed.
    pub failures: Vec<Vec<LayerSlot>>,
}

impl MaskingReport {
    pub fn holds(&self) -> bool {
        self.failures.is_empty()
    }
}

/// If `k` layers deny the sink call in isolation, disable every subset of
/// at most `k - 1` of them and confirm the call is still denied.
pub fn masking_check(config: &PolicyConfig, scenario: &Scenario, mode: Mode) -> Result<MaskingReport, PolicyError> {
    let runner = ScenarioRunner::with_config(config.clone())?;
    let denying_slots: Vec<LayerSlot> = runner
        .isolated_sink_verdicts(scenario, mode)
        .into_iter()
        .filter(|r| r.is_deny())
        .map(|r| slot_of(r.layer))
        .collect();

    let k = denying_slots.len();
    let mut masks_tried = Vec::new();
    let mut failures = Vec::new();
    for bits in 0u32..(1 << k) {
        if bits.count_ones() as usize >= k {
            continue;
        }
        let mask: Vec<LayerSlot> = (0..k)
            .filter(|i| bits & (1 << i) != 0)
            .map(|i| denying_slots[i])
            .collect();
        let mut masked = config.clone();
        masked.layers.retain(|slot| !mask.contains(slot));
        let report = ScenarioRunner::with_config(masked)?.run(scenario, mode);
        if report.sink_outcome != Outcome::Deny {
            failures.push(mask.clone());
        }
        masks_tried.push(mask);
    }

    Ok(MaskingReport {
        scenario: scenario.id.to_string(),
        mode,
        denying_slots,
        masks_tried,
        failures,
    })
}
