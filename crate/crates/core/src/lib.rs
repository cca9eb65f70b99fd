//! Synthetic IRS-assisted mobile MIMO CSI fingerprints and a temporal dynamic
//! graph convolutional network (TDGCN) that authenticates moving transmitters.
//!
//! The crate is organised bottom-up:
//!
//! * [`channel`] synthesizes cascade CSI traces through an intelligent
//!   reflecting surface with Rician fading and path loss.
//! * [`fingerprint`] turns CSI traces into labelled multivariate time-series
//!   datasets and reads/writes the CSIF binary format.
//! * [`numerics`] is a small reverse-mode differentiation engine.
//! * [`tdgcn`] is the classifier and its training loop.
//! * [`baselines`] holds KNN, decision tree and Gaussian naive Bayes.
//! * [`eval`] runs sweeps and writes result files.

pub mod numerics;
pub mod channel;
pub mod seed;
pub mod fingerprint;
pub mod baselines;
pub mod tdgcn;
pub mod eval;
