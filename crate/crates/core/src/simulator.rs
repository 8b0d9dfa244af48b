//! Cost-model evaluation of schedule traces.
//!
//! The simulator replays a trace against a hardware cost model and produces
//! time breakdowns and CPU<->GPU byte totals for three execution modes:
//!
//! - `cpu`: everything on the host; no transfers.
//! - `hybrid`: embeddings on the host, dense compute on devices; every batch
//!   ships its embedding rows over PCIe in both directions.
//! - `fae`: hot batches run entirely on the devices with zero embedding
//!   traffic; cold batches fall back to hybrid; every swap charges one
//!   hot-set replica transfer per device.
//!
//! Absolute seconds are model-relative; downstream checks assert orderings
//! and monotonicities, not wall-clock truth.

use serde::{Deserialize, Serialize};

use crate::classifier::{Kind, PackedDataset};
use crate::error::{Error, Result};
use crate::scheduler::{Phase, TraceEvent};

/// Assumed sustained compute rates behind the presets, flops/s.
const HOST_FLOPS: f64 = 1.0e11;
const DEVICE_FLOPS: f64 = 1.0e13;

/// Hardware and model cost parameters. Lookup costs are per row, dense costs
/// per record, transfer parameters per byte plus a fixed per-transfer
/// latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// PCIe bandwidth, bytes/s.
    pub pcie_bw: f64,
    pub host_embed_lookup: f64,
    pub device_embed_lookup: f64,
    pub host_mlp: f64,
    pub device_mlp: f64,
    /// Seconds per byte all-reduced across device replicas.
    pub allreduce_cost: f64,
    /// Fixed latency per transfer.
    pub transfer_latency: f64,
    /// Embedding bytes one record moves in hybrid mode.
    pub embed_bytes_per_record: u64,
    pub lookups_per_record: u64,
    /// Dense parameter bytes all-reduced per batch.
    pub dense_param_bytes: u64,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.pcie_bw,
            self.host_embed_lookup,
            self.device_embed_lookup,
            self.host_mlp,
            self.device_mlp,
            self.allreduce_cost,
            self.transfer_latency,
        ];
        if positive.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(
                "cost model parameters must all be positive".into(),
            ));
        }
        if self.device_embed_lookup >= self.host_embed_lookup
            || self.device_mlp >= self.host_mlp
        {
            return Err(Error::InvalidArgument(
                "device compute costs must be below host costs".into(),
            ));
        }
        if self.embed_bytes_per_record == 0 || self.lookups_per_record == 0 {
            return Err(Error::InvalidArgument(
                "per-record embedding shape must be nonzero".into(),
            ));
        }
        Ok(())
    }
}

/// 2 * sum of consecutive width products, per record.
fn mlp_flops(widths: &[&[u64]]) -> f64 {
    widths
        .iter()
        .flat_map(|w| w.windows(2))
        .map(|p| 2.0 * p[0] as f64 * p[1] as f64)
        .sum()
}

fn mlp_param_bytes(widths: &[&[u64]]) -> u64 {
    widths
        .iter()
        .flat_map(|w| w.windows(2))
        .map(|p| 4 * (p[0] * p[1] + p[1]))
        .sum()
}

fn preset(bottom: &[u64], top: &[u64], tables: u64, row_dim: u64) -> CostModel {
    // Pairwise dot-product interactions among the pooled table vectors and
    // the bottom-MLP output feed the top MLP.
    let interaction = (tables + 1) * tables / 2 * row_dim;
    let flops = mlp_flops(&[bottom, top]) + 2.0 * interaction as f64;
    CostModel {
        pcie_bw: 12.8e9,
        host_embed_lookup: 150e-9,
        device_embed_lookup: 5e-9,
        host_mlp: flops / HOST_FLOPS,
        device_mlp: flops / DEVICE_FLOPS,
        allreduce_cost: 1.0 / 60e9,
        transfer_latency: 20e-6,
        embed_bytes_per_record: tables * row_dim * 4,
        lookups_per_record: tables,
        dense_param_bytes: mlp_param_bytes(&[bottom, top]),
    }
}

/// Returns the documented cost parameters for a model preset. The `rmc*`
/// presets follow the four workload shapes (tables, row dims, MLP widths);
/// the `syn-m*` presets scale MLP width products over the largest embedding
/// shape.
pub fn fit_preset(name: &str) -> Result<CostModel> {
    let model = match name {
        "rmc1" => {
            // The time-series model runs its sequence MLP once per history
            // item (195-step histories) before the attention reduction, so
            // that compute scales with the sequence, not just the head MLPs.
            let tsl: &[u64] = &[22, 15, 15];
            let mut m = preset(&[1, 16], &[30, 60, 1], 3, 16);
            let tsl_flops = mlp_flops(&[tsl]) * 195.0;
            m.host_mlp += tsl_flops / HOST_FLOPS;
            m.device_mlp += tsl_flops / DEVICE_FLOPS;
            m.dense_param_bytes += mlp_param_bytes(&[tsl]);
            m
        }
        "rmc2" => preset(&[13, 512, 256, 64, 16], &[512, 256, 1], 26, 16),
        "rmc3" => preset(&[13, 512, 256, 64], &[512, 512, 256, 1], 26, 64),
        "rmc4" => preset(&[1, 512, 256, 64, 16], &[512, 256, 1], 21, 16),
        "syn-m1" => preset(&[13, 64], &[512, 1], 26, 64),
        "syn-m2" => preset(&[13, 512, 64], &[512, 256, 1], 26, 64),
        "syn-m3" => preset(&[13, 1024, 512, 64], &[512, 1024, 256, 1], 26, 64),
        "syn-m4" => preset(
            &[13, 1024, 512, 256, 64],
            &[512, 1024, 512, 256, 1],
            26,
            64,
        ),
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    model.validate()?;
    Ok(model)
}

/// All preset names, in presentation order.
pub const PRESET_NAMES: [&str; 8] = [
    "rmc1", "rmc2", "rmc3", "rmc4", "syn-m1", "syn-m2", "syn-m3", "syn-m4",
];

/// Execution mode being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Cpu,
    Hybrid,
    Fae,
}

impl std::str::FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cpu" => Ok(SimMode::Cpu),
            "hybrid" => Ok(SimMode::Hybrid),
            "fae" => Ok(SimMode::Fae),
            other => Err(Error::InvalidArgument(format!(
                "mode must be cpu, hybrid, or fae, got {other}"
            ))),
        }
    }
}

impl std::fmt::Display for SimMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimMode::Cpu => write!(f, "cpu"),
            SimMode::Hybrid => write!(f, "hybrid"),
            SimMode::Fae => write!(f, "fae"),
        }
    }
}

/// Workload summary the simulator needs from a packed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedStats {
    pub batch_size: u32,
    pub hot_batches: u64,
    pub cold_batches: u64,
    pub hot_records: u64,
    pub cold_records: u64,
    pub p_hot: f64,
    /// Hot-set bytes per replica.
    pub hot_set_bytes: u64,
}

impl PackedStats {
    pub fn from_packed(packed: &PackedDataset) -> Self {
        Self {
            batch_size: packed.batch_size,
            hot_batches: packed.hot_batches.len() as u64,
            cold_batches: packed.cold_batches.len() as u64,
            hot_records: packed.hot_records,
            cold_records: packed.cold_records,
            p_hot: packed.p_hot,
            hot_set_bytes: packed.hot_set.total_hot_bytes(),
        }
    }
}

/// Time breakdown and transfer totals for one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub mode: SimMode,
    pub devices: u32,
    pub embedding_lookup_s: f64,
    pub forward_backward_s: f64,
    pub embedding_transfer_s: f64,
    pub embedding_sync_s: f64,
    pub allreduce_s: f64,
    pub total_s: f64,
    pub bytes_cpu_to_gpu: u64,
    pub bytes_gpu_to_cpu: u64,
}

impl RunReport {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_cpu_to_gpu + self.bytes_gpu_to_cpu
    }
}

/// Builds the trace a fixed-rate schedule would produce, for cost exploration
/// without a live training run. Distributes each kind's records over its
/// batches (one trailing partial batch), and charges one per-replica hot-set
/// sync at every swap.
pub fn trace_from_plan(phases: &[Phase], stats: &PackedStats) -> Vec<TraceEvent> {
    let batch = u64::from(stats.batch_size);
    let mut hot_left = stats.hot_records;
    let mut cold_left = stats.cold_records;
    let mut swap = 0u64;
    let mut events = Vec::with_capacity(phases.len());
    for (i, phase) in phases.iter().enumerate() {
        let left = match phase.kind {
            Kind::Hot => &mut hot_left,
            Kind::Cold => &mut cold_left,
        };
        let records = (phase.batches * batch).min(*left);
        *left -= records;
        let has_next = i + 1 < phases.len();
        if has_next {
            swap += 1;
        }
        events.push(TraceEvent {
            swap: if has_next { swap } else { 0 },
            rate: 0,
            kind: phase.kind,
            batches: phase.batches,
            records,
            loss: None,
            sync_bytes: if has_next { stats.hot_set_bytes } else { 0 },
        });
    }
    events
}

/// Replays a trace under the cost model. Per phase: `cpu` charges host
/// compute only; `hybrid` charges host lookups, device dense compute, and a
/// bidirectional embedding transfer per batch; `fae` charges device-only
/// execution for hot phases, hybrid costs for cold phases, and a hot-set
/// sync of `sync_bytes * devices` at each swap.
pub fn simulate(
    trace: &[TraceEvent],
    stats: &PackedStats,
    cost: &CostModel,
    mode: SimMode,
    devices: u32,
) -> Result<RunReport> {
    cost.validate()?;
    if devices == 0 {
        return Err(Error::InvalidArgument("devices must be >= 1".into()));
    }
    if stats.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let dev = f64::from(devices);
    let mut report = RunReport {
        label: String::new(),
        mode,
        devices,
        embedding_lookup_s: 0.0,
        forward_backward_s: 0.0,
        embedding_transfer_s: 0.0,
        embedding_sync_s: 0.0,
        allreduce_s: 0.0,
        total_s: 0.0,
        bytes_cpu_to_gpu: 0,
        bytes_gpu_to_cpu: 0,
    };

    for event in trace {
        let records = event.records as f64;
        let lookups = records * cost.lookups_per_record as f64;
        let embed_bytes = event.records * cost.embed_bytes_per_record;
        let on_device_dense = |r: &mut RunReport| {
            r.forward_backward_s += records * cost.device_mlp / dev;
            if devices > 1 {
                r.allreduce_s +=
                    event.batches as f64 * cost.dense_param_bytes as f64 * cost.allreduce_cost;
            }
        };
        match (mode, event.kind) {
            (SimMode::Cpu, _) => {
                report.embedding_lookup_s += lookups * cost.host_embed_lookup;
                report.forward_backward_s += records * cost.host_mlp;
            }
            (SimMode::Hybrid, _) | (SimMode::Fae, Kind::Cold) => {
                report.embedding_lookup_s += lookups * cost.host_embed_lookup;
                on_device_dense(&mut report);
                report.bytes_cpu_to_gpu += embed_bytes;
                report.bytes_gpu_to_cpu += embed_bytes;
                report.embedding_transfer_s += 2.0
                    * (embed_bytes as f64 / dev / cost.pcie_bw
                        + event.batches as f64 * cost.transfer_latency);
            }
            (SimMode::Fae, Kind::Hot) => {
                report.embedding_lookup_s += lookups * cost.device_embed_lookup / dev;
                on_device_dense(&mut report);
            }
        }
        if mode == SimMode::Fae && event.swap > 0 {
            let sync_total = event.sync_bytes * u64::from(devices);
            match event.kind {
                // The sync at the end of a phase moves the hot set toward the
                // side that runs next.
                Kind::Cold => report.bytes_cpu_to_gpu += sync_total,
                Kind::Hot => report.bytes_gpu_to_cpu += sync_total,
            }
            report.embedding_sync_s +=
                sync_total as f64 / cost.pcie_bw + cost.transfer_latency;
        }
    }

    report.total_s = report.embedding_lookup_s
        + report.forward_backward_s
        + report.embedding_transfer_s
        + report.embedding_sync_s
        + report.allreduce_s;
    Ok(report)
}

/// Merges reports into a CSV table (one row per report).
pub fn reports_to_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(
        "label,mode,devices,embedding_lookup_s,forward_backward_s,embedding_transfer_s,\
         embedding_sync_s,allreduce_s,total_s,bytes_cpu_to_gpu,bytes_gpu_to_cpu\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{},{}\n",
            r.label,
            r.mode,
            r.devices,
            r.embedding_lookup_s,
            r.forward_backward_s,
            r.embedding_transfer_s,
            r.embedding_sync_s,
            r.allreduce_s,
            r.total_s,
            r.bytes_cpu_to_gpu,
            r.bytes_gpu_to_cpu
        ));
    }
    out
}
