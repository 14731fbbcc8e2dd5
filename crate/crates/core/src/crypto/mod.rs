//! Hashing, index derivation, seed expansion and random OT.

pub mod hash;
pub mod rot;

pub use hash::{element_indices, h1, h2, prf_indices, prg_expand, OprfValue, PrfKey};
pub use rot::{receive_batch, RotMode, RotReceiverBatch, RotSender, RotSenderBatch};
