use std::fmt;

use crate::model::MixerConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct CostProfile {
    pub param_count: usize,
    /// Whole-process high-water mark; `None` where the platform does not
    /// report it.
    pub peak_resident_bytes: Option<u64>,
    pub seconds_per_epoch: f64,
}

impl CostProfile {
    pub fn measure(config: &MixerConfig, seconds_per_epoch: f64) -> Self {
        Self {
            param_count: config.param_count().total(),
            peak_resident_bytes: peak_resident_bytes(),
            seconds_per_epoch,
        }
    }
}

impl fmt::Display for CostProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rss = self
            .peak_resident_bytes
            .map_or("unavailable".to_string(), |b| {
                format!("{:.1} MiB", b as f64 / (1024.0 * 1024.0))
            });
        write!(
            f,
            "params={} peak_rss={} seconds_per_epoch={:.4}",
            self.param_count, rss, self.seconds_per_epoch
        )
    }
}

/// `VmHWM` from `/proc/self/status`.
pub fn peak_resident_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
