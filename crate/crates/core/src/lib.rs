//! Multifractal and fractional-order analysis of multichannel physiological
//! signals.

pub mod classify;
pub mod error;
pub mod fracdyn;
pub mod mfdfa;
pub mod signal;
pub mod stats;
pub mod viral;

pub use error::{Error, Result};
pub use signal::{MultichannelRecord, TimeSeries};
