//! CTC speech recognition toolkit.
//!
//! The pipeline runs WAV audio through a normalized magnitude spectrogram
//! ([`features`]), a convolutional + recurrent acoustic model ([`net`])
//! trained with the CTC objective ([`ctc`], [`train`]), greedy best-path
//! decoding, and word error rate scoring ([`metrics`]). [`corpus`] handles
//! CSV manifests and a synthetic tone corpus for small-scale experiments,
//! and [`cli`] wires everything into the `ctc-asr` command.

pub mod cli;
pub mod corpus;
pub mod ctc;
pub mod features;
pub mod metrics;
pub mod net;
pub mod textmap;
pub mod train;
