//! Toolkit for unsupervised anomaly detection in solar Stokes I/V spectra.
//!
//! A 1D convolutional autoencoder is trained on "normal" spectra from
//! spectro-polarimetric (SP) maps; at inference time every pixel of a map is
//! reconstructed and scored by its per-channel RMSE. Pixels whose Stokes V
//! profile reconstructs poorly stand out in the RMSE heatmap, and the single
//! worst pixel (the h-RMSE_V pixel) marks the most anomalous spectrum of the
//! map.
//!
//! The crate is organized along the pipeline:
//!
//! * [`spectra`] — wavelength grids, Stokes I/V spectra, SP maps,
//!   normalization and field-of-view cropping.
//! * [`synth`] — deterministic generator of synthetic SP maps with four
//!   solar-surface classes and injectable anomalous V profiles.
//! * [`fits`] — a minimal bit-exact FITS reader/writer plus a scan-directory
//!   importer for assembling maps from per-slit-position files.
//! * [`archive`] — the native `.spa` map container and the ground-truth
//!   sidecar format.
//! * [`nn`] — the from-scratch differentiable layer stack (conv, transposed
//!   conv, pooling, upsampling), MAE loss, Adam, checkpoints and a
//!   finite-difference gradient checker.
//! * [`train`] — dataset assembly, seeded shuffling, the training loop with
//!   plateau LR scheduling and early stopping.
//! * [`anomaly`] — per-pixel RMSE heatmaps, observational-noise baselines,
//!   h-pixel localization, neighborhood extraction and report emission.
//!
//! Everything downstream of a seed is deterministic: the PRNG is pinned
//! ([`rng::Pcg32`]), reductions are order-fixed, and results do not depend on
//! the worker-thread count.

pub mod anomaly;
pub mod archive;
pub mod fits;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod spectra;
pub mod synth;
pub mod train;

mod guide;
mod wire;
