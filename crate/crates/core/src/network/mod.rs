//! The trainable network `S_Θ`: a spectrally normalized CNN with exact
//! forward- and reverse-mode derivatives.

mod checkpoint;
mod cnn;
mod conv;
mod params;
mod spectral;
mod term;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use cnn::{NetConfig, Network, NetworkLinearization, NormStats, Normalization};
pub use params::{ParamEntry, ParamKind, ParamLayout, ParamVector};
pub use term::{LearnedTerm, Linearization};
