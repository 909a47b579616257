use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    /// Nearest-rank 95th percentile.
    pub p95_ms: f64,
    pub fps: f64,
}

impl LatencyStats {
    /// Summarizes per-image latencies in milliseconds.
    pub fn from_samples(samples_ms: &[f64]) -> Option<Self> {
        if samples_ms.is_empty() {
            return None;
        }
        let mut sorted = samples_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean_ms = sorted.iter().sum::<f64>() / n as f64;
        let median_ms = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let p95_rank = (95 * n).div_ceil(100);
        Some(Self {
            count: n,
            mean_ms,
            median_ms,
            p95_ms: sorted[p95_rank - 1],
            fps: 1000.0 / mean_ms,
        })
    }
}

/// Times `scan` on each image, on the calling thread, after running it
/// unrecorded on the first `warmup` images.
pub fn benchmark_latency<I, O>(mut scan: impl FnMut(&I) -> O, images: &[I], warmup: usize) -> Result<LatencyStats> {
    if images.len() <= warmup {
        return Err(MetricsError::NothingToTime {
            images: images.len(),
            warmup,
        });
    }
    let (warm, timed) = images.split_at(warmup);
    for img in warm {
        std::hint::black_box(scan(img));
    }
    let samples: Vec<f64> = timed
        .iter()
        .map(|img| {
            let start = Instant::now();
            std::hint::black_box(scan(img));
            start.elapsed().as_secs_f64() * 1000.0
        })
        .collect();
    Ok(LatencyStats::from_samples(&samples).expect("at least one timed image"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = LatencyStats::from_samples(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.count, s.mean_ms, s.median_ms, s.p95_ms), (4, 2.5, 2.5, 4.0));
        assert_eq!(s.fps, 400.0);
        let many: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(LatencyStats::from_samples(&many).unwrap().p95_ms, 95.0);
        assert!(LatencyStats::from_samples(&[]).is_none());
    }

    #[test]
    fn warmup_runs_are_not_timed() {
        let mut calls = 0;
        let stats = benchmark_latency(|_: &u8| calls += 1, &[0; 5], 2).unwrap();
        assert_eq!((calls, stats.count), (5, 3));
        assert!(benchmark_latency(|_: &u8| (), &[0; 2], 2).is_err());
        assert!(benchmark_latency(|_: &u8| (), &[], 0).is_err());
    }
}
