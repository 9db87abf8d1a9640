//! Acoustic lab simulation: array geometry, far-field propagation, synthetic
//! keyword and noise generators, lab and KWS corpus generators, WAV and
//! manifest I/O.

pub mod corpus;
pub mod geometry;
pub mod lab;
pub mod manifest;
pub mod source;
pub mod synth;
pub mod wav;

pub use geometry::ArrayGeometry;
pub use source::{mix_lab_record, propagate, propagate_f64, ClipMeta, Label, MultichannelClip, SourceSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-record generator: stream `index` of the dataset seed. Records can be
/// produced in any order, or concurrently, with identical results.
pub fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}
