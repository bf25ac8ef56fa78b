//! Federated domain generalization via cross-client style transfer.
//!
//! Clients publish lightweight per-channel style statistics, a server
//! assembles and broadcasts them as a style bank, each client augments its
//! local data by statistic-matching style transfer, and a shared classifier
//! is trained with federated averaging and evaluated leave-one-domain-out.
//! The crate also ships the frequency-domain amplitude-exchange variant,
//! histogram uniformization analysis, and a style-inversion attacker for
//! probing what the shared statistics reveal.

pub mod analysis;
pub mod augment;
pub mod bank;
pub mod data;
pub mod error;
pub mod fed;
mod fft;
pub mod io;
pub mod metrics;
pub mod model;
pub mod privacy;
pub mod rng;
pub mod style;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{channel_mean_std, ChannelStats, ClientId, ImageTensor, LabeledImage};
