//! SVDF keyword detector, attention keys network and channel fusion.

pub mod attention;
pub mod checkpoint;
pub mod detect;
pub mod layers;
pub mod network;
pub mod presets;

pub use attention::{fuse_frames, FusedFrame};
pub use detect::{detect_events, ensemble_decide, oracle_fuse, DetectionEvent, EventConfig, StreamingDetector};
pub use layers::{Activation, Dense, Layer, LayerSpec, Scalar, Stack, StackState, Svdf};
pub use network::{KwsNetwork, NetworkState, Normalizer};
pub use presets::Scale;
