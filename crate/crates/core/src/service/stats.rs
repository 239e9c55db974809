use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use crate::protocol::StatsRecord;

const SUB_BUCKETS: u64 = 16;
const SUB_BITS: u32 = 4;
const BUCKETS: usize = 64 * SUB_BUCKETS as usize;

/// Lock-free log-linear histogram of microsecond latencies. Bucket widths are
/// at most 1/16 of their lower bound, so quantiles are within 6.25% relative.
#[derive(Debug)]
pub struct LatencyHistogram {
    counts: Box<[AtomicU64]>,
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        LatencyHistogram { counts: (0..BUCKETS).map(|_| AtomicU64::new(0)).collect() }
    }
}

fn bucket(us: u64) -> usize {
    if us < SUB_BUCKETS {
        return us as usize;
    }
    let exp = 63 - us.leading_zeros();
    let mantissa = (us >> (exp - SUB_BITS)) & (SUB_BUCKETS - 1);
    ((exp - SUB_BITS + 1) as u64 * SUB_BUCKETS + mantissa) as usize
}

/// Largest value that falls in bucket `i`.
fn bucket_upper(i: usize) -> u64 {
    let i = i as u64;
    if i < SUB_BUCKETS {
        return i;
    }
    let shift = (i / SUB_BUCKETS - 1) as u32;
    let mantissa = i % SUB_BUCKETS;
    ((SUB_BUCKETS + mantissa + 1) << shift) - 1
}

impl LatencyHistogram {
    pub fn record(&self, latency: Duration) {
        let us = u64::try_from(latency.as_micros()).unwrap_or(u64::MAX);
        self.counts[bucket(us)].fetch_add(1, Ordering::Relaxed);
    }

    pub fn count(&self) -> u64 {
        self.counts.iter().map(|c| c.load(Ordering::Relaxed)).sum()
    }

    /// Upper bound of the bucket holding quantile `q`, in microseconds.
    pub fn quantile_us(&self, q: f64) -> Option<u64> {
        let snapshot: Vec<u64> = self.counts.iter().map(|c| c.load(Ordering::Relaxed)).collect();
        let total: u64 = snapshot.iter().sum();
        if total == 0 {
            return None;
        }
        let rank = ((q.clamp(0.0, 1.0) * total as f64).ceil() as u64).max(1);
        let mut seen = 0;
        for (i, c) in snapshot.iter().enumerate() {
            seen += c;
            if seen >= rank {
                return Some(bucket_upper(i));
            }
        }
        None
    }

    pub fn quantile_ms(&self, q: f64) -> f64 {
        self.quantile_us(q).map_or(0.0, |us| us as f64 / 1000.0)
    }
}

/// Service counters, readable without blocking event processing.
#[derive(Debug, Default)]
pub struct ServiceStats {
    pub latency: LatencyHistogram,
    pub utterances: AtomicU64,
    pub overruns: AtomicU64,
    pub active_sessions: AtomicU64,
    pub sessions_opened: AtomicU64,
    pub sessions_closed: AtomicU64,
    pub sessions_evicted: AtomicU64,
    pub errors: AtomicU64,
}

impl ServiceStats {
    pub fn snapshot(&self) -> StatsRecord {
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        StatsRecord {
            utterances_processed: get(&self.utterances),
            latency_p50_ms: self.latency.quantile_ms(0.50),
            latency_p95_ms: self.latency.quantile_ms(0.95),
            deadline_overruns: get(&self.overruns),
            active_sessions: get(&self.active_sessions),
            sessions_opened: get(&self.sessions_opened),
            sessions_closed: get(&self.sessions_closed),
            sessions_evicted: get(&self.sessions_evicted),
            errors: get(&self.errors),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn buckets_cover_values() {
        for us in [0u64, 1, 15, 16, 17, 31, 32, 33, 1000, 99_999, 1 << 40] {
            let b = bucket(us);
            assert!(bucket_upper(b) >= us, "{us}");
            assert!(b == 0 || bucket_upper(b - 1) < us, "{us}");
        }
    }

    proptest! {
        #[test]
        fn quantile_is_close_to_the_exact_one(mut values in prop::collection::vec(0u64..5_000_000, 1..300), q in 0.01f64..1.0) {
            let h = LatencyHistogram::default();
            for v in &values {
                h.record(Duration::from_micros(*v));
            }
            values.sort_unstable();
            let rank = ((q * values.len() as f64).ceil() as usize).max(1);
            let exact = values[rank - 1];
            let approx = h.quantile_us(q).unwrap();
            prop_assert!(approx >= exact);
            prop_assert!(approx as f64 <= exact as f64 * (1.0 + 1.0 / 16.0) + 1.0);
        }
    }
}
