//! Itinerant-field tomography: synthetic heterodyne records, temporal-mode
//! extraction, noise-calibrated moment inversion, gain calibration,
//! maximum-likelihood reconstruction and Wigner evaluation.
//!
//! Record model: `S = sqrt(G) (a + h^+)` with the added noise `h` measured in
//! a vacuum calibration run.

mod mle;
mod moments;
mod roundtrip;
mod traces;
mod wigner;

/// Mode name used for reconstructed single-mode states.
pub const FIELD_MODE: &str = "a";

pub use mle::{mle_reconstruct, ReconstructedState, DEFAULT_N_FOCK, RESTARTS};
pub use moments::{
    calibrate_gain, forward_moments, invert_moments, noise_moments, noise_moments_from_samples, orders, raw_moments,
    GainEstimate, MomentTable, Stage, JACKKNIFE_BLOCKS, MAX_ORDER,
};
pub use roundtrip::{
    gain_calibration, named_state, round_trip, GainCalibrationReport, PipelineSettings, RoundTripReport,
    CALIBRATION_AMPLITUDES,
};
pub use traces::{
    extract_mode, generate_traces, project, ModeExtraction, QubitLabel, TemporalMode, TraceEnsemble, TraceSettings,
    MAX_ATTEMPTS,
};
pub use wigner::{wigner, WignerGrid, WIGNER_CONVENTION};
