//! Stochastic emission, detector-stream synthesis and correlation analysis.

pub mod histogram;
pub mod qjump;
pub mod rng;
pub mod stream;
pub mod synth;

pub use histogram::{
    central_ratio, correlate, extract_g2, extract_vraw, fit_blinking, BlinkingFit,
    CorrelationHistogram, Normalization, PeakMethod, PeakRatio, PeakShape, RawVisibility,
};
pub use qjump::{p2_probability, quantum_jump_pulse, PhotonNumberEstimate, QuantumJumpSampler};
pub use stream::{apply_deadtime, Click, ClickStream};
pub use synth::{synth_hbt, synth_hom, EmissionMode, Polarization, SourceModel};
