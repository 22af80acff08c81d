//! Blind coherent-to-diffuse ratio estimation and diffuseness features for
//! two-microphone speech recognition front-ends.
//!
//! The processing chain is
//!
//! ```text
//! 2-channel audio ─ stft ─┬─ averaged power ──────────────── Mel ─ log ─ logmelspec
//!                         ├─ gain(CDR) · averaged power ──── Mel ─ log ─ logmelspec_enh
//!                         └─ coherence ─ CDR ─ diffuseness ─ Mel ─────── meldiffuseness
//!                                    └─ |Γ|² ─────────────── Mel ─────── melmsc
//! ```
//!
//! followed by optional deltas, mean/variance normalization and frame
//! splicing. See the `examples/` directory of this crate for one runnable
//! program per capability.

pub mod cli;
pub mod coherence;
pub mod config;
pub mod enhance;
pub mod error;
pub mod io;
pub mod melfeat;
pub mod pipeline;
pub mod stft;
pub mod synth;

pub use error::{Error, Result};
