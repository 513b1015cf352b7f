use crate::model::{ModelParams, ParamSource};

use super::DeltaMessage;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApplyError {
    #[error("unknown slot index {0}")]
    UnknownSlot(u16),
    #[error("row {row} out of range for slot {slot}")]
    UnknownRow { slot: u16, row: u64 },
    #[error("unknown dense tensor index {0}")]
    UnknownTensor(u16),
    #[error("record width {got} does not match expected {expected}")]
    WidthMismatch { expected: usize, got: usize },
}

/// What happened to a delta offered to a parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyOutcome {
    Applied(u64),
    /// Version not newer than the current one; nothing changed.
    Skipped,
}

/// Checks every record against the parameter shapes without mutating
/// anything, so a bad message can be rejected whole.
pub fn validate_delta<P: ParamSource + ?Sized>(params: &P, msg: &DeltaMessage) -> Result<(), ApplyError> {
    let width = params.dim() + 1;
    for r in &msg.sparse {
        let slot = r.slot as usize;
        if slot >= params.num_slots() {
            return Err(ApplyError::UnknownSlot(r.slot));
        }
        if r.row >= params.vocab(slot) {
            return Err(ApplyError::UnknownRow { slot: r.slot, row: r.row });
        }
        if r.values.len() != width {
            return Err(ApplyError::WidthMismatch {
                expected: width,
                got: r.values.len(),
            });
        }
    }
    let tensors = params.dense().tensors();
    for r in &msg.dense {
        let t = tensors
            .get(r.tensor as usize)
            .ok_or(ApplyError::UnknownTensor(r.tensor))?;
        if r.values.len() != t.len() {
            return Err(ApplyError::WidthMismatch {
                expected: t.len(),
                got: r.values.len(),
            });
        }
    }
    Ok(())
}

impl ModelParams {
    /// Overwrites the carried rows and tensors, then sets the version.
    /// Messages not newer than the current version are skipped.
    pub fn apply_delta(&mut self, msg: &DeltaMessage) -> Result<ApplyOutcome, ApplyError> {
        if msg.model_version <= self.version {
            return Ok(ApplyOutcome::Skipped);
        }
        validate_delta(self, msg)?;
        let dim = self.dim();
        for r in &msg.sparse {
            let table = &mut self.tables[r.slot as usize];
            table.row_mut(r.row).copy_from_slice(&r.values[..dim]);
            table.first_order[r.row as usize] = r.values[dim];
        }
        let mut tensors = self.dense.tensors_mut();
        for r in &msg.dense {
            tensors[r.tensor as usize].copy_from_slice(&r.values);
        }
        self.version = msg.model_version;
        Ok(ApplyOutcome::Applied(self.version))
    }
}
