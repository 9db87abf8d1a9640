//! Front-end signal processing: fixed beams, adaptive noise cancellation,
//! log-Mel features and per-approach channel banks.

pub mod anc;
pub mod bank;
pub mod beam;
pub mod featio;
pub mod fracdelay;
pub mod mel;

pub use anc::{anc_process, AncConfig, AncOutput, AncState};
pub use bank::{make_channel_bank, ChannelKind, ChannelMode, FrontEnd};
pub use beam::{beamform, BeamSet};
pub use mel::{log_mel, FeatureMatrix, LogMel, MelConfig};
