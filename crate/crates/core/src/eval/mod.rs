//! Detection metrics, threshold calibration, FRR-vs-SNR curves and the
//! six-approach comparison.

pub mod cache;
pub mod calibrate;
pub mod compare;
pub mod curves;
pub mod metrics;

pub use cache::{window_confidence, CachedUtterance, ConfidenceRecord, ConfidenceTable};
pub use calibrate::{calibrate_threshold, Calibration, CALIBRATION_STEP};
pub use compare::{compare_approaches, write_report_csv, Approach, MetricReport};
pub use curves::{build_snr_curve, isotonic_nonincreasing, snr_gain, write_curves_csv, SnrCurve};
pub use metrics::{score_corpus, ClipTruth, EvalCorpus, Score, MATCH_WINDOW_S};
