//! Monte Carlo simulation of random access protocols for Massive MIMO crowd
//! scenarios: strongest-user collision resolution, coded-pilot collision
//! detection, ergodic pilot hopping and framed replica transmission with
//! interference cancellation.

pub mod channel;
pub mod coded_pilot;
pub mod crapid;
pub mod erapid;
pub mod error;
pub mod harness;
pub mod mrc;
pub mod stream;
pub mod sucre;
pub mod validate;

pub use channel::{ChannelVector, PilotBook, Population, SystemConfig};
pub use error::{ConfigError, FitError, HarnessError, SicError};
pub use stream::{derive_stream, RandomStream};
