use std::collections::BTreeSet;

use crate::delta_stream::{DeltaMessage, DenseRecord, SparseRecord};
use crate::model::{ModelParams, SparseGradient};

/// Parameters changed since the last emitted delta.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeltaAccumulator {
    pub touched: BTreeSet<(u16, u64)>,
    pub dense_dirty: bool,
    /// Steps recorded in the current period.
    pub period_steps: u64,
}

impl DeltaAccumulator {
    pub fn record_step(&mut self, grad: &SparseGradient) {
        for (s, rows) in grad.slots.iter().enumerate() {
            self.touched.extend(rows.keys().map(|&r| (s as u16, r)));
        }
        self.dense_dirty = true;
        self.period_steps += 1;
    }

    pub fn is_empty(&self) -> bool {
        self.touched.is_empty() && !self.dense_dirty
    }

    pub fn reset(&mut self) {
        self.touched.clear();
        self.dense_dirty = false;
        self.period_steps = 0;
    }
}

/// Bumps the model version and returns the current values of everything the
/// accumulator saw, then clears it. An empty period still gets a version.
pub fn emit_delta(acc: &mut DeltaAccumulator, params: &mut ModelParams) -> DeltaMessage {
    params.version += 1;
    let dim = params.dim();
    let sparse = acc
        .touched
        .iter()
        .map(|&(slot, row)| {
            let table = &params.tables[slot as usize];
            let mut values = Vec::with_capacity(dim + 1);
            values.extend_from_slice(table.row(row));
            values.push(table.first_order[row as usize]);
            SparseRecord { slot, row, values }
        })
        .collect();
    let dense = if acc.dense_dirty {
        params
            .dense
            .tensors()
            .into_iter()
            .enumerate()
            .map(|(i, t)| DenseRecord {
                tensor: i as u16,
                values: t.to_vec(),
            })
            .collect()
    } else {
        Vec::new()
    };
    acc.reset();
    DeltaMessage {
        model_version: params.version,
        sparse,
        dense,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::random_model;
    use crate::model::RowGradient;

    #[test]
    fn empty_period_still_versions() {
        let (_, mut p) = random_model(1, 2, 3, &[4], 10);
        let mut acc = DeltaAccumulator::default();
        let a = emit_delta(&mut acc, &mut p);
        let b = emit_delta(&mut acc, &mut p);
        assert!(a.is_empty() && b.is_empty());
        assert_eq!((a.model_version, b.model_version), (1, 2));
    }

    #[test]
    fn carries_exactly_touched_rows() {
        let (_, mut p) = random_model(2, 2, 3, &[4], 10);
        let mut acc = DeltaAccumulator::default();
        let mut g = SparseGradient::zeros(&p);
        for r in [9, 5] {
            g.slots[0].insert(r, RowGradient { embedding: vec![0.0; 3], first_order: 0.0 });
        }
        acc.record_step(&g);
        acc.record_step(&g);
        let msg = emit_delta(&mut acc, &mut p);
        let rows: Vec<_> = msg.sparse.iter().map(|r| (r.slot, r.row)).collect();
        assert_eq!(rows, vec![(0, 5), (0, 9)]);
        assert_eq!(msg.sparse[0].values[..3], *p.tables[0].row(5));
        assert_eq!(msg.sparse[0].values[3], p.tables[0].first_order[5]);
        assert_eq!(msg.dense.len(), p.dense.tensor_count());
        assert!(acc.is_empty());
        assert_eq!(acc.period_steps, 0);
    }
}
