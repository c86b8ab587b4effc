//! Event volumes and pluggable motion-hint extraction.

mod flow;
mod hints;
mod learned;
mod simulator;
mod volume;

pub use flow::{block_match, flow_volume, DEFAULT_BLOCK, DEFAULT_RADIUS};
pub use hints::{empty_hints, extract_motion_hints, global_hints, HintBackend, HintSource, MotionHints};
pub use learned::{I2eConfig, LearnedI2e};
pub use simulator::{simulate_events, simulate_volume, LOG_EPS};
pub use volume::{build_event_volume, read_events, write_events, Event, EventVolume, Polarity};
