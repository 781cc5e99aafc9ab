//! Multichannel speech front-end: mask-based MVDR beamforming with location and
//! speaker bias features, grid-search source localization, room simulation and
//! overlapped-speech generation, and the ASR feature transform.

// `!(x > 0.0)` also rejects NaN; index loops mirror the matrix notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod beamformer;
pub mod error;
pub mod features;
pub mod linalg;
pub mod masks;
pub mod pipeline;
pub mod raster;
pub mod room;
pub mod spatial;
pub mod ssl;
pub mod stft;
pub mod wav;

pub use error::{Error, Result};
