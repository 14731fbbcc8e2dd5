//! Ring-topology multiparty private set intersection.
//!
//! `n` parties sit on a ring. The leader `P1` embeds its set into a random
//! matrix pair and hands it to `P2` through a batch of random OTs; each
//! assistant folds its own occupancy matrix in and forwards the result to
//! its successor the same way. The last assistant evaluates the resulting
//! OPRF on its set and returns the values to the leader, who keeps exactly
//! the elements every party holds.

pub mod bitmatrix;
pub mod crypto;
pub mod error;
pub mod harness;
pub mod par;
pub mod params;
pub mod protocol;
pub mod soprf;
pub mod transport;

pub use bitmatrix::{BitMatrix, ChoiceString, IndexVector};
pub use error::{Error, Result};
pub use params::{derive_params, ProtocolParams, SecurityConfig};
pub use protocol::{run_party, Element, PartyConfig, PartyReport, PartyRole};
pub use crypto::RotMode;
