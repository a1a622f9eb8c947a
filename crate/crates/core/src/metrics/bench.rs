use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub cpu_model: String,
    pub logical_cpus: usize,
    pub threads: usize,
    pub profile: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub fingerprint: Fingerprint,
    pub stages: BTreeMap<String, StageTiming>,
}

impl TimingReport {
    pub fn new() -> Self {
        TimingReport {
            fingerprint: fingerprint(),
            stages: BTreeMap::new(),
        }
    }

    pub fn run<R>(&mut self, name: &str, warmup: usize, iters: usize, f: impl FnMut() -> R) -> Result<&StageTiming> {
        let t = bench(warmup, iters, f)?;
        self.stages.insert(name.to_string(), t);
        Ok(&self.stages[name])
    }
}

impl Default for TimingReport {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fingerprint() -> Fingerprint {
    let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into());
    Fingerprint {
        cpu_model,
        logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        threads: rayon::current_num_threads(),
        profile: if cfg!(debug_assertions) { "debug" } else { "release" }.into(),
        target: format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
    }
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Times `iters` calls of `f` after `warmup` untimed calls.
pub fn bench<R>(warmup: usize, iters: usize, mut f: impl FnMut() -> R) -> Result<StageTiming> {
    if iters == 0 {
        return Err(Error::InvalidArgument("bench needs at least one iteration".into()));
    }
    for _ in 0..warmup {
        std::hint::black_box(f());
    }
    let mut ms = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        std::hint::black_box(f());
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = ms.iter().sum::<f64>() / iters as f64;
    ms.sort_by(f64::total_cmp);
    Ok(StageTiming {
        mean_ms,
        p50_ms: percentile(&ms, 0.5),
        p95_ms: percentile(&ms, 0.95),
        iterations: iters,
    })
}
