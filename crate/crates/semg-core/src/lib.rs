//! Motor-unit decomposition of high-density surface EMG.
//!
//! This crate contains the full signal path for extracting individual motor
//! unit spike trains from multi-channel surface EMG, in two flavors:
//!
//! * an offline decomposition ([`apfp`]) that runs progressive FastICA with a
//!   peel-off loop to discover motor units from scratch, and
//! * an online two-stage method ([`online`]) that reuses separation vectors
//!   curated from offline prework and applies them to a sliding window of
//!   streamed samples in real time.
//!
//! Supporting modules provide a physiological signal simulator with known
//! ground truth ([`sim`]), the preprocessing chain of filtering, channel
//! repair, delay-line extension and whitening ([`preprocess`]), and accuracy
//! metrics against a reference decomposition ([`eval`]).
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats and the command
//! line front end live in the companion `semg-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod apfp;
pub mod eval;
pub mod linalg;
pub mod online;
pub mod preprocess;
pub mod rng;
pub mod signal;
pub mod sim;

mod flt;

pub use signal::{MuapTemplateSet, Recording, SpikeStats, SpikeTrain};
