//! Rate-adaptive interleaving of hot and cold mini-batch queues.
//!
//! The interleave rate `R(r)` issues `ceil(r% of a kind's original batch
//! count)` batches of one kind before swapping to the other. `R(100)` runs a
//! whole kind before the first swap; `R(1)` alternates after every batch.
//! Epochs begin with cold batches, which touch the widest range of rows.
//!
//! After each swap the post-swap test loss drives the rate: an increase
//! halves the rate (finer interleave, floor `R(1)`); `u` consecutive strict
//! decreases double it (coarser, cap `R(100)`); otherwise it stays. Every
//! swap also charges one hot-set synchronization per direction per device.

use serde::{Deserialize, Serialize};

use crate::classifier::Kind;
use crate::error::{Error, Result};

/// Default successive-decrease window.
pub const DEFAULT_STREAK_WINDOW: usize = 4;

/// Interleave rate in percent, clamped to [1, 100].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate(u32);

impl Rate {
    pub fn new(r: u32) -> Result<Self> {
        if (1..=100).contains(&r) {
            Ok(Self(r))
        } else {
            Err(Error::InvalidArgument(format!(
                "rate must be in [1, 100], got {r}"
            )))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Halve toward R(1).
    pub fn halved(self) -> Self {
        Self((self.0 / 2).max(1))
    }

    /// Double toward R(100).
    pub fn doubled(self) -> Self {
        Self((self.0 * 2).min(100))
    }

    /// Batches per phase for a kind that started the epoch with
    /// `original_batches` batches.
    pub fn phase_len(self, original_batches: u64) -> u64 {
        (u64::from(self.0) * original_batches).div_ceil(100)
    }
}

/// Applies the rate rule to the loss history. `losses` must contain at least
/// one entry; the last entry is the loss measured at the swap being decided.
pub fn next_rate(rate: Rate, losses: &[f64], u: usize) -> Rate {
    let n = losses.len();
    if n < 2 {
        return rate;
    }
    if losses[n - 1] > losses[n - 2] {
        return rate.halved();
    }
    // Doubling needs u consecutive strict decreases, i.e. u + 1 samples.
    if u > 0 && n >= u + 1 {
        let streak = losses[n - 1 - u..n]
            .windows(2)
            .all(|w| w[1] < w[0]);
        if streak {
            return rate.doubled();
        }
    }
    rate
}

/// One contiguous run of same-kind batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: Kind,
    pub batches: u64,
}

/// Issues phases for one epoch, alternating kinds cold-first and draining
/// whichever queue remains once the other empties. The rate may change
/// between phases.
#[derive(Debug, Clone)]
pub struct EpochPlanner {
    original_hot: u64,
    original_cold: u64,
    remaining_hot: u64,
    remaining_cold: u64,
    next_kind: Kind,
}

impl EpochPlanner {
    pub fn new(hot_batches: u64, cold_batches: u64) -> Self {
        let next_kind = if cold_batches > 0 { Kind::Cold } else { Kind::Hot };
        Self {
            original_hot: hot_batches,
            original_cold: cold_batches,
            remaining_hot: hot_batches,
            remaining_cold: cold_batches,
            next_kind,
        }
    }

    pub fn is_done(&self) -> bool {
        self.remaining_hot == 0 && self.remaining_cold == 0
    }

    /// Next phase at the current rate, or `None` when both queues drained.
    pub fn next_phase(&mut self, rate: Rate) -> Option<Phase> {
        if self.is_done() {
            return None;
        }
        // Skip over an exhausted kind.
        let kind = match self.next_kind {
            Kind::Cold if self.remaining_cold == 0 => Kind::Hot,
            Kind::Hot if self.remaining_hot == 0 => Kind::Cold,
            k => k,
        };
        let (original, remaining, other_remaining) = match kind {
            Kind::Hot => (self.original_hot, &mut self.remaining_hot, self.remaining_cold),
            Kind::Cold => (self.original_cold, &mut self.remaining_cold, self.remaining_hot),
        };
        // Once the other queue is empty there are no more swaps; drain.
        let len = if other_remaining == 0 {
            *remaining
        } else {
            rate.phase_len(original).min(*remaining)
        };
        *remaining -= len;
        self.next_kind = match kind {
            Kind::Hot => Kind::Cold,
            Kind::Cold => Kind::Hot,
        };
        Some(Phase { kind, batches: len })
    }
}

/// Full epoch plan at a fixed rate.
pub fn plan_epoch(hot_batches: u64, cold_batches: u64, rate: Rate) -> Vec<Phase> {
    let mut planner = EpochPlanner::new(hot_batches, cold_batches);
    let mut phases = Vec::new();
    while let Some(p) = planner.next_phase(rate) {
        phases.push(p);
    }
    phases
}

/// Kind transitions in a phase list.
pub fn count_swaps(phases: &[Phase]) -> u64 {
    phases.windows(2).filter(|w| w[0].kind != w[1].kind).count() as u64
}

/// Direction of a hot-set synchronization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncDirection {
    CpuToGpu,
    GpuToCpu,
}

/// One logged synchronization transfer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncEvent {
    pub swap: u64,
    pub direction: SyncDirection,
    pub bytes: u64,
}

/// Runtime state of the interleave: rate trajectory, loss history, and the
/// synchronization ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapSchedule {
    pub rate: Rate,
    pub streak_window: usize,
    pub devices: u32,
    pub swaps: u64,
    pub rate_history: Vec<u32>,
    pub losses: Vec<f64>,
    pub sync_log: Vec<SyncEvent>,
}

impl SwapSchedule {
    pub fn new(rate_start: Rate, streak_window: usize, devices: u32) -> Self {
        Self {
            rate: rate_start,
            streak_window,
            devices,
            swaps: 0,
            rate_history: vec![rate_start.get()],
            losses: Vec::new(),
            sync_log: Vec::new(),
        }
    }

    /// Records one swap boundary: appends the post-swap test loss, logs one
    /// hot-set transfer per device toward `to_kind`'s executor, and applies
    /// the rate rule.
    pub fn record_swap(&mut self, test_loss: f64, hot_bytes: u64, to_kind: Kind) {
        self.swaps += 1;
        self.losses.push(test_loss);
        let direction = match to_kind {
            Kind::Hot => SyncDirection::CpuToGpu,
            Kind::Cold => SyncDirection::GpuToCpu,
        };
        for _ in 0..self.devices {
            self.sync_log.push(SyncEvent {
                swap: self.swaps,
                direction,
                bytes: hot_bytes,
            });
        }
        self.rate = next_rate(self.rate, &self.losses, self.streak_window);
        self.rate_history.push(self.rate.get());
    }

    pub fn total_sync_bytes(&self) -> u64 {
        self.sync_log.iter().map(|e| e.bytes).sum()
    }
}

/// One line of the schedule trace (JSON lines on disk): a completed phase,
/// the loss measured at its trailing swap (if any), and the per-replica
/// bytes synchronized there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Swap index at the end of this phase; 0 for the final phase of a run.
    pub swap: u64,
    /// Rate in effect while the phase ran.
    pub rate: u32,
    pub kind: Kind,
    pub batches: u64,
    pub records: u64,
    /// Post-swap test loss, absent for the final phase.
    pub loss: Option<f64>,
    /// Hot-set bytes per replica synchronized at the trailing swap.
    pub sync_bytes: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rate(r: u32) -> Rate {
        Rate::new(r).unwrap()
    }

    #[test]
    fn rate_bounds_and_clamps() {
        assert!(Rate::new(0).is_err());
        assert!(Rate::new(101).is_err());
        assert_eq!(rate(1).halved().get(), 1);
        assert_eq!(rate(100).doubled().get(), 100);
        assert_eq!(rate(50).halved().get(), 25);
        assert_eq!(rate(25).doubled().get(), 50);
    }

    #[test]
    fn loss_increase_halves() {
        let r = next_rate(rate(50), &[0.45, 0.47], DEFAULT_STREAK_WINDOW);
        assert_eq!(r.get(), 25);
    }

    #[test]
    fn short_decrease_streak_leaves_rate_unchanged() {
        let r = next_rate(rate(50), &[0.45, 0.44, 0.43], DEFAULT_STREAK_WINDOW);
        assert_eq!(r.get(), 50);
    }

    #[test]
    fn four_decreases_double_with_cap() {
        let losses = [0.50, 0.49, 0.48, 0.47, 0.46];
        assert_eq!(next_rate(rate(25), &losses, 4).get(), 50);
        assert_eq!(next_rate(rate(100), &losses, 4).get(), 100);
    }

    #[test]
    fn plateau_does_not_double() {
        // Equal losses break the strict streak.
        let losses = [0.50, 0.49, 0.49, 0.48, 0.47];
        assert_eq!(next_rate(rate(25), &losses, 4).get(), 25);
    }

    #[test]
    fn scripted_loss_sequence_traces_the_expected_rates() {
        // Hand-traced with u = 4 starting at R(50) over losses
        // [.5, .52, .51, .50, .49, .48, .47]:
        //   .52 rises            -> 25
        //   .51 falls (streak 1) -> 25
        //   .50 falls (streak 2) -> 25
        //   .49 falls (streak 3) -> 25
        //   .48 falls (streak 4) -> 50
        //   .47 falls (streak 5) -> 100
        let script = [0.5, 0.52, 0.51, 0.50, 0.49, 0.48, 0.47];
        let mut sched = SwapSchedule::new(rate(50), 4, 1);
        let mut seen = Vec::new();
        for (i, &loss) in script.iter().enumerate() {
            let to = if i % 2 == 0 { Kind::Hot } else { Kind::Cold };
            sched.record_swap(loss, 1000, to);
            seen.push(sched.rate.get());
        }
        assert_eq!(seen, vec![50, 25, 25, 25, 25, 50, 100]);
    }

    #[test]
    fn alternating_halves_at_fixed_rate() {
        let phases = plan_epoch(100, 100, rate(50));
        let spec: Vec<(Kind, u64)> = phases.iter().map(|p| (p.kind, p.batches)).collect();
        assert_eq!(
            spec,
            vec![
                (Kind::Cold, 50),
                (Kind::Hot, 50),
                (Kind::Cold, 50),
                (Kind::Hot, 50),
            ]
        );
        assert_eq!(count_swaps(&phases), 3);
    }

    #[test]
    fn block_schedule_has_one_swap() {
        let phases = plan_epoch(100, 100, rate(100));
        let spec: Vec<(Kind, u64)> = phases.iter().map(|p| (p.kind, p.batches)).collect();
        assert_eq!(spec, vec![(Kind::Cold, 100), (Kind::Hot, 100)]);
        assert_eq!(count_swaps(&phases), 1);
    }

    #[test]
    fn singles_until_hot_drains_then_remaining_cold() {
        let phases = plan_epoch(4, 10, rate(1));
        let spec: Vec<(Kind, u64)> = phases.iter().map(|p| (p.kind, p.batches)).collect();
        let mut expect = Vec::new();
        for _ in 0..4 {
            expect.push((Kind::Cold, 1));
            expect.push((Kind::Hot, 1));
        }
        expect.push((Kind::Cold, 6));
        assert_eq!(spec, expect);
    }

    #[test]
    fn single_kind_yields_single_phase() {
        let phases = plan_epoch(7, 0, rate(50));
        assert_eq!(phases, vec![Phase { kind: Kind::Hot, batches: 7 }]);
        assert_eq!(count_swaps(&phases), 0);
        let phases = plan_epoch(0, 9, rate(1));
        assert_eq!(phases, vec![Phase { kind: Kind::Cold, batches: 9 }]);
    }

    #[test]
    fn conservation_and_cold_first_over_random_queue_sizes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let hot = rng.gen_range(0..500u64);
            let cold = rng.gen_range(0..500u64);
            if hot == 0 && cold == 0 {
                continue;
            }
            let r = rate(rng.gen_range(1..=100));
            let phases = plan_epoch(hot, cold, r);
            let hot_sum: u64 = phases.iter().filter(|p| p.kind == Kind::Hot).map(|p| p.batches).sum();
            let cold_sum: u64 = phases.iter().filter(|p| p.kind == Kind::Cold).map(|p| p.batches).sum();
            assert_eq!(hot_sum, hot);
            assert_eq!(cold_sum, cold);
            assert!(phases.iter().all(|p| p.batches > 0));
            if cold > 0 {
                assert_eq!(phases[0].kind, Kind::Cold);
            }
            // More swaps at finer rates, never fewer than the block schedule.
            let swaps = count_swaps(&phases);
            if hot > 0 && cold > 0 {
                assert!(swaps >= 1);
                let finest = count_swaps(&plan_epoch(hot, cold, rate(1)));
                assert!(swaps <= finest);
            }
        }
    }

    #[test]
    fn sync_accounting_per_device() {
        let mut sched = SwapSchedule::new(rate(50), 4, 4);
        sched.record_swap(0.5, 400 << 20, Kind::Hot);
        assert_eq!(sched.sync_log.len(), 4);
        assert!(sched
            .sync_log
            .iter()
            .all(|e| e.direction == SyncDirection::CpuToGpu && e.bytes == 400 << 20));
        assert_eq!(sched.total_sync_bytes(), 4 * (400 << 20));
        // Zero-byte swaps still log events.
        sched.record_swap(0.4, 0, Kind::Cold);
        assert_eq!(sched.sync_log.len(), 8);
        assert_eq!(sched.swaps, 2);
        assert!(sched.sync_log.len() as u64 >= sched.swaps);
    }
}
