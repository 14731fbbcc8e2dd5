//! Batched random OT: `w` instances of 1-out-of-2 ROT on `m`-bit messages.
//!
//! The sender ends with column pairs `(r0_j, r1_j)`, the receiver with
//! `r_j = r{s_j}_j`. Both providers move only short seeds over the channel
//! and stretch them locally with [`prg_expand`].
//!
//! * [`RotMode::Dealer`]: the sender picks one dealer seed and sends it in
//!   the clear. The receiver can then derive both messages. Not secure;
//!   exists for tests, the simulator and golden transcripts.
//! * [`RotMode::SeedOt`]: `w` parallel two-message base OTs in the
//!   Ristretto group (the "simplest OT" flow). The sender publishes
//!   `A = aG`; the receiver answers `B_j = b_j G + s_j A` and keeps
//!   `H(j, A, B_j, b_j A)`; the sender derives `H(j, A, B_j, a B_j)` and
//!   `H(j, A, B_j, a (B_j - A))`.

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use crate::bitmatrix::{BitMatrix, ChoiceString};
use crate::crypto::hash::prg_expand;
use crate::error::{Error, Result};
use crate::transport::{Channel, MsgType};

/// Encoded size of one group element on the wire.
pub const POINT_LEN: usize = 32;
const DEALER_SEED_LEN: usize = 32;
const TAG_DEALER: u8 = 0x06;
const TAG_OT_KEY: u8 = 0x05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RotMode {
    Dealer,
    SeedOt,
}

impl RotMode {
    pub fn code(self) -> u8 {
        match self {
            RotMode::Dealer => 1,
            RotMode::SeedOt => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(RotMode::Dealer),
            2 => Ok(RotMode::SeedOt),
            _ => Err(Error::protocol(format!("unknown ROT mode {c}"))),
        }
    }
}

impl std::str::FromStr for RotMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dealer" => Ok(RotMode::Dealer),
            "seedot" => Ok(RotMode::SeedOt),
            _ => Err(Error::InvalidParams(format!("unknown ROT mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for RotMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RotMode::Dealer => "dealer",
            RotMode::SeedOt => "seedot",
        })
    }
}

/// Sender's half of a ROT batch: the message columns `R0` and `R1`.
#[derive(Debug, Clone)]
pub struct RotSenderBatch {
    pub rows: usize,
    pub r0: Vec<Vec<u8>>,
    pub r1: Vec<Vec<u8>>,
}

impl RotSenderBatch {
    pub fn len(&self) -> usize {
        self.r0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r0.is_empty()
    }

    pub fn matrices(&self) -> Result<(BitMatrix, BitMatrix)> {
        Ok((
            BitMatrix::from_columns(self.rows, &self.r0)?,
            BitMatrix::from_columns(self.rows, &self.r1)?,
        ))
    }
}

/// Receiver's half: the chosen columns `R` and the choice bits.
#[derive(Debug, Clone)]
pub struct RotReceiverBatch {
    pub rows: usize,
    pub r: Vec<Vec<u8>>,
    pub choices: ChoiceString,
}

impl RotReceiverBatch {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn matrix(&self) -> Result<BitMatrix> {
        BitMatrix::from_columns(self.rows, &self.r)
    }
}

fn dealer_column(seed: &[u8], j: usize, bit: bool, m: usize) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update([TAG_DEALER]);
    h.update(seed);
    h.update((j as u32).to_le_bytes());
    h.update([bit as u8]);
    prg_expand(&h.finalize(), m)
}

fn ot_key(j: usize, a: &[u8], b: &[u8], shared: &RistrettoPoint, seed_len: usize) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update([TAG_OT_KEY]);
    h.update((j as u32).to_le_bytes());
    h.update(a);
    h.update(b);
    h.update(shared.compress().as_bytes());
    let d = h.finalize();
    d[..seed_len].to_vec()
}

fn decode_point(bytes: &[u8]) -> Result<RistrettoPoint> {
    CompressedRistretto::from_slice(bytes)
        .ok()
        .and_then(|c| c.decompress())
        .ok_or_else(|| Error::protocol("invalid group element"))
}

/// Sender side, split in two so a party can serve its predecessor's
/// handshake between the two halves.
pub struct RotSender {
    mode: RotMode,
    cols: usize,
    rows: usize,
    seed_len: usize,
    state: SenderState,
}

enum SenderState {
    Dealer([u8; DEALER_SEED_LEN]),
    SeedOt { a: Scalar, a_bytes: [u8; POINT_LEN] },
}

impl RotSender {
    /// Sends the sender's first message. `seed_len` is the base-OT seed
    /// length in bytes (lambda / 8).
    pub fn start<R: RngCore + CryptoRng>(
        mode: RotMode,
        cols: usize,
        rows: usize,
        seed_len: usize,
        channel: &mut Channel,
        rng: &mut R,
    ) -> Result<Self> {
        let state = match mode {
            RotMode::Dealer => {
                let mut seed = [0u8; DEALER_SEED_LEN];
                rng.fill_bytes(&mut seed);
                channel.send_frame(MsgType::OtMsg, &seed)?;
                SenderState::Dealer(seed)
            }
            RotMode::SeedOt => {
                let a = Scalar::random(rng);
                let a_bytes = RistrettoPoint::mul_base(&a).compress().to_bytes();
                channel.send_frame(MsgType::OtMsg, &a_bytes)?;
                SenderState::SeedOt { a, a_bytes }
            }
        };
        Ok(RotSender {
            mode,
            cols,
            rows,
            seed_len,
            state,
        })
    }

    pub fn mode(&self) -> RotMode {
        self.mode
    }

    pub fn finish(self, channel: &mut Channel) -> Result<RotSenderBatch> {
        let (rows, cols) = (self.rows, self.cols);
        let (r0, r1) = match self.state {
            SenderState::Dealer(seed) => (0..cols)
                .map(|j| (dealer_column(&seed, j, false, rows), dealer_column(&seed, j, true, rows)))
                .unzip(),
            SenderState::SeedOt { a, a_bytes } => {
                let msg = channel.recv_frame(MsgType::OtMsg)?;
                if msg.len() != cols * POINT_LEN {
                    return Err(Error::protocol(format!(
                        "receiver OT message has {} bytes, expected {}",
                        msg.len(),
                        cols * POINT_LEN
                    )));
                }
                let big_a = decode_point(&a_bytes)?;
                let mut r0 = Vec::with_capacity(cols);
                let mut r1 = Vec::with_capacity(cols);
                for (j, b_bytes) in msg.chunks_exact(POINT_LEN).enumerate() {
                    let b = decode_point(b_bytes)?;
                    let k0 = ot_key(j, &a_bytes, b_bytes, &(a * b), self.seed_len);
                    let k1 = ot_key(j, &a_bytes, b_bytes, &(a * (b - big_a)), self.seed_len);
                    r0.push(prg_expand(&k0, rows));
                    r1.push(prg_expand(&k1, rows));
                }
                (r0, r1)
            }
        };
        Ok(RotSenderBatch { rows, r0, r1 })
    }
}

/// Receiver side: consumes the sender's first message, answers it (seed-OT
/// only) and derives the chosen columns.
pub fn receive_batch<R: RngCore + CryptoRng>(
    mode: RotMode,
    choices: &ChoiceString,
    rows: usize,
    seed_len: usize,
    channel: &mut Channel,
    rng: &mut R,
) -> Result<RotReceiverBatch> {
    let first = channel.recv_frame(MsgType::OtMsg)?;
    let r = match mode {
        RotMode::Dealer => {
            if first.len() != DEALER_SEED_LEN {
                return Err(Error::protocol("malformed dealer seed"));
            }
            choices
                .iter()
                .enumerate()
                .map(|(j, bit)| dealer_column(&first, j, bit, rows))
                .collect()
        }
        RotMode::SeedOt => {
            if first.len() != POINT_LEN {
                return Err(Error::protocol("malformed sender OT message"));
            }
            let big_a = decode_point(&first)?;
            let mut reply = Vec::with_capacity(choices.len() * POINT_LEN);
            let mut seeds = Vec::with_capacity(choices.len());
            for (j, bit) in choices.iter().enumerate() {
                let b = Scalar::random(rng);
                let mut big_b = RistrettoPoint::mul_base(&b);
                if bit {
                    big_b += big_a;
                }
                let b_bytes = big_b.compress().to_bytes();
                seeds.push(ot_key(j, &first, &b_bytes, &(b * big_a), seed_len));
                reply.extend_from_slice(&b_bytes);
            }
            channel.send_frame(MsgType::OtMsg, &reply)?;
            seeds.iter().map(|k| prg_expand(k, rows)).collect()
        }
    };
    Ok(RotReceiverBatch {
        rows,
        r,
        choices: choices.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::memory_pair;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn run(mode: RotMode, w: usize, m: usize, seed: u64) -> (RotSenderBatch, RotReceiverBatch, u64) {
        let (mut cs, mut cr) = memory_pair("s", "r", None);
        let mut rs = ChaCha20Rng::seed_from_u64(seed);
        let mut rr = ChaCha20Rng::seed_from_u64(seed + 1);
        let s = ChoiceString::random(w, &mut rr);
        let sender = RotSender::start(mode, w, m, 16, &mut cs, &mut rs).unwrap();
        let recv = receive_batch(mode, &s, m, 16, &mut cr, &mut rr).unwrap();
        let send = sender.finish(&mut cs).unwrap();
        (send, recv, cs.metrics().total())
    }

    fn check(send: &RotSenderBatch, recv: &RotReceiverBatch) {
        assert_eq!(send.len(), recv.len());
        for (j, bit) in recv.choices.iter().enumerate() {
            let want = if bit { &send.r1[j] } else { &send.r0[j] };
            assert_eq!(&recv.r[j], want, "column {j}");
            if send.rows >= 64 {
                let other = if bit { &send.r0[j] } else { &send.r1[j] };
                assert_ne!(&recv.r[j], other);
            }
        }
        if !send.is_empty() {
            let (r0, r1) = send.matrices().unwrap();
            assert_eq!(recv.matrix().unwrap(), BitMatrix::mux(&r0, &r1, &recv.choices).unwrap());
        }
    }

    #[test]
    fn dealer_correctness() {
        for (w, m) in [(1, 1), (5, 9), (64, 100), (300, 256)] {
            let (s, r, _) = run(RotMode::Dealer, w, m, w as u64);
            check(&s, &r);
        }
    }

    #[test]
    fn seed_ot_correctness() {
        for (w, m) in [(1, 3), (17, 64), (130, 1000)] {
            let (s, r, _) = run(RotMode::SeedOt, w, m, 40 + w as u64);
            check(&s, &r);
        }
    }

    #[test]
    fn empty_batch_only_handshakes() {
        let (s, r, bytes) = run(RotMode::Dealer, 0, 16, 3);
        assert!(s.is_empty() && r.is_empty());
        assert_eq!(bytes, (5 + DEALER_SEED_LEN) as u64);
        let (s, r, bytes) = run(RotMode::SeedOt, 0, 16, 3);
        assert!(s.is_empty() && r.is_empty());
        assert_eq!(bytes, (5 + POINT_LEN + 5) as u64);
    }

    #[test]
    fn seed_ot_rejects_bad_point() {
        let (mut cs, mut cr) = memory_pair("s", "r", None);
        cs.send_frame(MsgType::OtMsg, &[0xffu8; POINT_LEN]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let err = receive_batch(RotMode::SeedOt, &ChoiceString::zeros(2), 8, 16, &mut cr, &mut rng);
        assert!(matches!(err, Err(Error::Protocol(_))));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("dealer".parse::<RotMode>().unwrap(), RotMode::Dealer);
        assert_eq!("seedot".parse::<RotMode>().unwrap(), RotMode::SeedOt);
        assert!("iknp".parse::<RotMode>().is_err());
        assert_eq!(RotMode::from_code(RotMode::SeedOt.code()).unwrap(), RotMode::SeedOt);
    }
}
