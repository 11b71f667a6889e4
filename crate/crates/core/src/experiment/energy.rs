//! Energy estimates from operation counts.

use std::fmt;

use crate::error::{Error, Result};
use crate::net::{spike_statistics, CogniSnn, Gate, SpikeStatistics, TaskId};
use crate::tensor::Tensor;

/// Energy per operation, in picojoules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyConstants {
    pub e_sop_pj: f64,
    pub e_mac_pj: f64,
}

impl Default for EnergyConstants {
    /// 45 nm figures: 0.9 pJ per accumulate, 4.6 pJ per multiply-accumulate.
    fn default() -> Self {
        Self {
            e_sop_pj: 0.9,
            e_mac_pj: 4.6,
        }
    }
}

impl EnergyConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_sop_pj > 0.0) || !(self.e_mac_pj > 0.0) {
            return Err(Error::Config("energy constants must be positive".into()));
        }
        Ok(())
    }
}

/// Per-sample counts and energy of one model on one input batch.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub gate: Gate,
    pub stats: SpikeStatistics,
    /// Multiply-accumulates of the classifier head.
    pub classifier_mac: f64,
    pub energy_pj: f64,
}

impl EnergyReport {
    /// Every addition performed: spike-driven accumulates plus the
    /// accumulate inside every multiply-accumulate.
    pub fn accumulate_ops(&self) -> f64 {
        self.stats.sop + self.total_mac()
    }

    pub fn total_mac(&self) -> f64 {
        self.stats.mac + self.classifier_mac
    }
}

impl fmt::Display for EnergyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "gate={} samples={} sop={} mac={} classifier_mac={} accumulate_ops={} mean_rate={:.6} energy_pj={:.3}",
            self.gate.name(),
            self.stats.samples,
            self.stats.sop,
            self.stats.mac,
            self.classifier_mac,
            self.accumulate_ops(),
            self.stats.mean_rate,
            self.energy_pj
        )
    }
}

/// Counts operations of an inference pass over `input` `[T*B, C, H, W]` and
/// prices them: `E_sop * SOP + E_mac * MAC`, per sample.
pub fn energy_report(model: &CogniSnn, input: &Tensor, task: TaskId, constants: &EnergyConstants) -> Result<EnergyReport> {
    constants.validate()?;
    let classes = *model
        .tasks()
        .get(&task)
        .ok_or_else(|| Error::invalid(format!("no head for task {task}")))?;
    let stats = spike_statistics(model, input)?;
    let classifier_mac = (model.config.channels * classes) as f64;
    let energy_pj = constants.e_sop_pj * stats.sop + constants.e_mac_pj * (stats.mac + classifier_mac);
    Ok(EnergyReport {
        gate: model.config.gate,
        stats,
        classifier_mac,
        energy_pj,
    })
}

/// Reports for the same weights under the OR and the ADD gate.
pub fn gate_comparison(
    model: &CogniSnn,
    input: &Tensor,
    task: TaskId,
    constants: &EnergyConstants,
) -> Result<(EnergyReport, EnergyReport)> {
    let mut m = model.clone();
    m.config.gate = Gate::Or;
    let or = energy_report(&m, input, task, constants)?;
    m.config.gate = Gate::Add;
    let add = energy_report(&m, input, task, constants)?;
    Ok((or, add))
}
