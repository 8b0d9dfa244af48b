//! Split host/device embedding state.
//!
//! The host copy holds every embedding row. The device replica holds only the
//! hot rows (by slot, with a row-to-slot map per table). Outside swap
//! boundaries at most one side of the hot rows is dirty; a synchronization
//! copies the hot rows in the requested direction, clears both dirty flags,
//! and charges the full hot-set byte size regardless of how many rows
//! actually changed.

use std::collections::HashMap;

use crate::classifier::HotSet;
use crate::dataset::TrainingRecord;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scheduler::SyncDirection;

use super::{EmbeddingRows, ProxyModel};

/// Hot-row replica for one table.
#[derive(Debug, Clone)]
pub struct DeviceReplica<R: Real> {
    row_dim: usize,
    slot_of_row: HashMap<u32, usize>,
    /// Hot rows in ascending row order, used for deterministic sync.
    hot_rows: Vec<u32>,
    data: Vec<R>,
}

impl<R: Real> DeviceReplica<R> {
    fn slot(&self, idx: u32) -> Result<usize> {
        self.slot_of_row.get(&idx).copied().ok_or_else(|| {
            Error::Consistency(format!(
                "device replica asked for cold row {idx}; hot batches must only touch hot rows"
            ))
        })
    }

    pub fn row(&self, idx: u32) -> Result<&[R]> {
        let s = self.slot(idx)?;
        Ok(&self.data[s * self.row_dim..(s + 1) * self.row_dim])
    }

    fn row_mut(&mut self, idx: u32) -> Result<&mut [R]> {
        let s = self.slot(idx)?;
        Ok(&mut self.data[s * self.row_dim..(s + 1) * self.row_dim])
    }
}

/// Host master plus per-table device replicas of the hot rows.
#[derive(Debug, Clone)]
pub struct SplitState<R: Real> {
    host: ProxyModel<R>,
    device: Vec<DeviceReplica<R>>,
    hot_set: HotSet,
    host_dirty: bool,
    device_dirty: bool,
}

impl<R: Real> SplitState<R> {
    /// Builds the device replicas from the host's current hot rows (initial
    /// replication; not a logged synchronization).
    pub fn new(host: ProxyModel<R>, hot_set: HotSet) -> Result<Self> {
        if hot_set.tables.len() != host.schema.tables.len() {
            return Err(Error::SchemaMismatch(format!(
                "hot set covers {} tables, model has {}",
                hot_set.tables.len(),
                host.schema.tables.len()
            )));
        }
        let device = hot_set
            .tables
            .iter()
            .zip(&host.schema.tables)
            .enumerate()
            .map(|(pos, (set, schema))| {
                if set.table_id != schema.table_id || set.num_rows != schema.num_rows {
                    return Err(Error::SchemaMismatch(format!(
                        "hot set table {} does not match model table {}",
                        set.table_id, schema.table_id
                    )));
                }
                let dim = schema.row_dim as usize;
                let hot_rows: Vec<u32> = (0..set.num_rows)
                    .filter(|&r| set.is_hot(r))
                    .map(|r| r as u32)
                    .collect();
                let mut data = Vec::with_capacity(hot_rows.len() * dim);
                let mut slot_of_row = HashMap::with_capacity(hot_rows.len());
                for (slot, &row) in hot_rows.iter().enumerate() {
                    slot_of_row.insert(row, slot);
                    data.extend_from_slice(host.row(pos, row));
                }
                Ok(DeviceReplica {
                    row_dim: dim,
                    slot_of_row,
                    hot_rows,
                    data,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            host,
            device,
            hot_set,
            host_dirty: false,
            device_dirty: false,
        })
    }

    pub fn host(&self) -> &ProxyModel<R> {
        &self.host
    }

    pub fn hot_set(&self) -> &HotSet {
        &self.hot_set
    }

    pub fn into_host(self) -> ProxyModel<R> {
        self.host
    }

    /// One SGD step on a hot batch: embeddings read and write the device
    /// replica; the shared dense head updates as usual.
    pub fn step_hot(&mut self, records: &[TrainingRecord], lr: R) -> Result<R> {
        let mut head = self.host.head.clone();
        let projections = self.host.projections.clone();
        let mut rows = DeviceRows {
            replicas: &mut self.device,
        };
        let loss = super::sgd_step_on(&mut rows, &mut head, &projections, records, lr)?;
        self.host.head = head;
        self.device_dirty = true;
        Ok(loss)
    }

    /// One SGD step on a cold batch against the host copy (which also holds
    /// the hot rows).
    pub fn step_cold(&mut self, records: &[TrainingRecord], lr: R) -> Result<R> {
        let loss = super::sgd_step(&mut self.host, records, lr)?;
        self.host_dirty = true;
        Ok(loss)
    }

    /// Copies hot rows in `direction`, clears dirty flags, and returns the
    /// bytes charged: the full hot-set size, even when nothing changed.
    pub fn sync_hot(&mut self, direction: SyncDirection) -> Result<u64> {
        if self.host_dirty && self.device_dirty {
            return Err(Error::Consistency(
                "both host and device hot rows are dirty".into(),
            ));
        }
        match direction {
            SyncDirection::CpuToGpu => {
                if self.device_dirty {
                    return Err(Error::Consistency(
                        "host-to-device sync would overwrite dirty device rows".into(),
                    ));
                }
                for (pos, replica) in self.device.iter_mut().enumerate() {
                    let dim = replica.row_dim;
                    for (slot, &row) in replica.hot_rows.iter().enumerate() {
                        replica.data[slot * dim..(slot + 1) * dim]
                            .copy_from_slice(self.host.row(pos, row));
                    }
                }
            }
            SyncDirection::GpuToCpu => {
                if self.host_dirty {
                    return Err(Error::Consistency(
                        "device-to-host sync would overwrite dirty host rows".into(),
                    ));
                }
                for (pos, replica) in self.device.iter().enumerate() {
                    let dim = replica.row_dim;
                    for (slot, &row) in replica.hot_rows.iter().enumerate() {
                        self.host
                            .row_mut(pos, row)
                            .copy_from_slice(&replica.data[slot * dim..(slot + 1) * dim]);
                    }
                }
            }
        }
        self.host_dirty = false;
        self.device_dirty = false;
        Ok(self.hot_set.total_hot_bytes())
    }

    /// Terminal reconciliation: flush dirty device rows to the host so the
    /// host copy is authoritative. No sync event is charged.
    pub fn reconcile_to_host(&mut self) -> Result<()> {
        if self.device_dirty {
            self.sync_hot(SyncDirection::GpuToCpu)?;
        }
        self.host_dirty = false;
        self.device_dirty = false;
        Ok(())
    }

    /// True when every hot row is bit-identical across copies.
    pub fn replicas_consistent(&self) -> bool {
        self.device.iter().enumerate().all(|(pos, replica)| {
            let dim = replica.row_dim;
            replica.hot_rows.iter().enumerate().all(|(slot, &row)| {
                replica.data[slot * dim..(slot + 1) * dim] == *self.host.row(pos, row)
            })
        })
    }
}

struct DeviceRows<'a, R: Real> {
    replicas: &'a mut Vec<DeviceReplica<R>>,
}

impl<R: Real> EmbeddingRows<R> for DeviceRows<'_, R> {
    fn get_row(&self, table: usize, idx: u32) -> Result<&[R]> {
        self.replicas[table].row(idx)
    }

    fn get_row_mut(&mut self, table: usize, idx: u32) -> Result<&mut [R]> {
        self.replicas[table].row_mut(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{forward_logloss, ProxyModel};
    use super::*;
    use crate::classifier::classify_embeddings;
    use crate::profiler::{AccessLog, TableLog};
    use crate::schema::{DatasetSchema, TableSchema};

    fn fixture() -> (ProxyModel<f64>, HotSet) {
        // One large table (8192 rows, dim 64 -> 2 MB) with the first 16 rows
        // hot, plus nonzero parameters so syncs move real data.
        let schema = DatasetSchema::new(vec![TableSchema::new(0, 8192, 64)], 1, 1);
        let counts: Vec<u32> = (0..8192).map(|i| if i < 16 { 100 } else { 1 }).collect();
        let sampled_total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        let log = AccessLog {
            x_percent: 100.0,
            tables: vec![TableLog {
                schema: schema.tables[0].clone(),
                counts,
                sampled_total,
                full_total: sampled_total,
            }],
        };
        let hot_set = classify_embeddings(&log, 50.0 / sampled_total as f64).unwrap();
        assert_eq!(hot_set.tables[0].hot_rows, 16);
        let mut model = ProxyModel::new(schema).unwrap();
        for (i, v) in model.tables[0].iter_mut().enumerate() {
            *v = (i % 13) as f64 * 0.1;
        }
        model.head.weights = vec![0.4];
        (model, hot_set)
    }

    fn hot_record(label: bool, idx: u32) -> TrainingRecord {
        TrainingRecord {
            label,
            dense: vec![1.0],
            sparse: vec![vec![idx]],
        }
    }

    #[test]
    fn sync_byte_arithmetic() {
        let (model, hot_set) = fixture();
        let mut state = SplitState::new(model, hot_set).unwrap();
        // 16 rows * 64 dims * 4 bytes.
        let bytes = state.sync_hot(SyncDirection::CpuToGpu).unwrap();
        assert_eq!(bytes, 16 * 64 * 4);
    }

    #[test]
    fn clean_sync_still_charges_full_replica() {
        let (model, hot_set) = fixture();
        let mut state = SplitState::new(model, hot_set).unwrap();
        assert!(state.replicas_consistent());
        // Nothing dirty: bytes still charged, state unchanged.
        let bytes = state.sync_hot(SyncDirection::GpuToCpu).unwrap();
        assert_eq!(bytes, 16 * 64 * 4);
        assert!(state.replicas_consistent());
    }

    #[test]
    fn cold_phase_then_sync_makes_device_match_host() {
        let (model, hot_set) = fixture();
        let mut state = SplitState::new(model, hot_set).unwrap();
        // Cold batch touches hot rows on the host copy.
        state
            .step_cold(&[hot_record(true, 3), hot_record(false, 12)], 0.5)
            .unwrap();
        assert!(!state.replicas_consistent());
        state.sync_hot(SyncDirection::CpuToGpu).unwrap();
        assert!(state.replicas_consistent());
    }

    #[test]
    fn hot_phase_then_sync_makes_host_match_device() {
        let (model, hot_set) = fixture();
        let mut state = SplitState::new(model, hot_set).unwrap();
        let before_host_row3 = state.host().row(0, 3).to_vec();
        state.step_hot(&[hot_record(true, 3)], 0.5).unwrap();
        // Host copy untouched by the device-side step.
        assert_eq!(state.host().row(0, 3), &before_host_row3[..]);
        assert!(!state.replicas_consistent());
        state.sync_hot(SyncDirection::GpuToCpu).unwrap();
        assert!(state.replicas_consistent());
        assert_ne!(state.host().row(0, 3), &before_host_row3[..]);
    }

    #[test]
    fn hot_step_on_cold_row_is_a_consistency_error() {
        let (model, hot_set) = fixture();
        let mut state = SplitState::new(model, hot_set).unwrap();
        let err = state.step_hot(&[hot_record(true, 5000)], 0.1).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)));
    }

    #[test]
    fn conflicting_dirty_sides_are_rejected() {
        let (model, hot_set) = fixture();
        let mut state = SplitState::new(model, hot_set).unwrap();
        state.step_cold(&[hot_record(true, 3)], 0.1).unwrap();
        // Device-to-host would clobber the dirty host rows.
        assert!(matches!(
            state.sync_hot(SyncDirection::GpuToCpu),
            Err(Error::Consistency(_))
        ));
        // And running a hot step now, without syncing first, dirties both
        // sides; any sync then fails.
        state.step_hot(&[hot_record(false, 7)], 0.1).unwrap();
        assert!(matches!(
            state.sync_hot(SyncDirection::CpuToGpu),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn shared_head_sees_updates_from_both_sides() {
        let (model, hot_set) = fixture();
        let mut state = SplitState::new(model, hot_set).unwrap();
        let b0 = state.host().head.bias;
        state.step_hot(&[hot_record(true, 3)], 0.5).unwrap();
        let b1 = state.host().head.bias;
        assert_ne!(b0, b1);
        state.sync_hot(SyncDirection::GpuToCpu).unwrap();
        state.step_cold(&[hot_record(false, 5000)], 0.5).unwrap();
        assert_ne!(b1, state.host().head.bias);
    }

    #[test]
    fn device_loss_equals_host_loss_after_sync() {
        let (model, hot_set) = fixture();
        let mut state = SplitState::new(model, hot_set).unwrap();
        let batch = vec![hot_record(true, 3), hot_record(false, 12)];
        let device_loss = state.step_hot(&batch, 0.0).unwrap();
        let host_loss = forward_logloss(state.host(), &batch).unwrap();
        assert_eq!(device_loss, host_loss);
    }
}
