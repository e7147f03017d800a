//! Normalization baselines that wrap a backbone: RevIN, SAN and FAN.

pub mod fan;
pub mod revin;
pub mod san;

pub use fan::{fan_forward, fan_main_freq_part, top_k_bins, FanNet, FanState};
pub use revin::{revin_denormalize, revin_normalize, InstanceStats, REVIN_EPSILON};
pub use san::{san_denormalize, san_normalize, san_stage1_train, SanNet, SanState, SanStats};
