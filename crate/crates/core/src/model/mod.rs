//! Mixer network over prototype tables with a domain-adversarial branch.

pub mod block;
pub mod checkpoint;
pub mod config;
pub mod network;
pub mod params;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use config::{MixerConfig, ParamCount};
pub use network::{grad_reverse, ForwardCache, ForwardOutput, Mixer, Mode};
pub use params::{BlockParams, MixerParams};
