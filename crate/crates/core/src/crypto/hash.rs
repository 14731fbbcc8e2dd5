//! Hash, PRF and PRG primitives shared by every party.
//!
//! All four functions are built from SHA-256 and the ChaCha20 keystream with
//! a one-byte domain tag so that implementations in other languages can
//! reproduce them from the fixture vectors in `fixtures/crypto_vectors.txt`:
//!
//! * `h1(x)       = SHA256(0x01 || ctr_le32 || x) ...` truncated to `ell1` bits
//! * `h2(bits)    = SHA256(0x02 || ctr_le32 || bits) ...` truncated to `ell2` bits
//! * `F_k(digest)`: ChaCha20 keyed with `SHA256(0x03 || k || digest)`, zero
//!   nonce; block `j` is keystream bytes `8j..8j+8` (little endian), reduced mod `m`
//! * `prg(seed)`:  ChaCha20 keyed with `SHA256(0x04 || seed)`, zero nonce

use chacha20::cipher::{KeyIvInit, StreamCipher};
use chacha20::ChaCha20;
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::bitmatrix::IndexVector;
use crate::error::{Error, Result};
use crate::params::ProtocolParams;

const TAG_H1: u8 = 0x01;
const TAG_H2: u8 = 0x02;
const TAG_PRF: u8 = 0x03;
const TAG_PRG: u8 = 0x04;

/// The PRF key `k` shared by all parties.
#[derive(Clone, PartialEq, Eq)]
pub struct PrfKey(Vec<u8>);

impl std::fmt::Debug for PrfKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PrfKey({} bits)", self.0.len() * 8)
    }
}

impl PrfKey {
    pub fn random<R: RngCore + ?Sized>(lambda: u32, rng: &mut R) -> Self {
        let mut k = vec![0u8; (lambda / 8) as usize];
        rng.fill_bytes(&mut k);
        PrfKey(k)
    }

    pub fn from_bytes(bytes: Vec<u8>, lambda: u32) -> Result<Self> {
        if bytes.len() * 8 != lambda as usize {
            return Err(Error::protocol(format!(
                "PRF key has {} bits, expected {lambda}",
                bytes.len() * 8
            )));
        }
        Ok(PrfKey(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// An `ell2`-bit OPRF output, stored in whole bytes with zero padding.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OprfValue(Vec<u8>);

impl OprfValue {
    pub fn from_bytes(bytes: Vec<u8>, ell2: u32) -> Result<Self> {
        if bytes.len() != (ell2 as usize).div_ceil(8) {
            return Err(Error::protocol(format!(
                "OPRF value has {} bytes, expected {}",
                bytes.len(),
                (ell2 as usize).div_ceil(8)
            )));
        }
        Ok(OprfValue(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// Counter-mode SHA-256 expansion to `bits` output bits.
fn expand_hash(tag: u8, input: &[u8], bits: usize) -> Vec<u8> {
    let len = bits.div_ceil(8);
    let mut out = Vec::with_capacity(len.next_multiple_of(32));
    let mut ctr = 0u32;
    while out.len() < len {
        let mut h = Sha256::new();
        h.update([tag]);
        h.update(ctr.to_le_bytes());
        h.update(input);
        out.extend_from_slice(&h.finalize());
        ctr += 1;
    }
    out.truncate(len);
    clear_tail_bits(&mut out, bits);
    out
}

fn clear_tail_bits(bytes: &mut [u8], bits: usize) {
    if bits % 8 != 0 {
        if let Some(last) = bytes.last_mut() {
            *last &= (1u8 << (bits % 8)) - 1;
        }
    }
}

fn keystream(key_tag: u8, parts: &[&[u8]], out: &mut [u8]) {
    let mut h = Sha256::new();
    h.update([key_tag]);
    for p in parts {
        h.update(p);
    }
    let key: [u8; 32] = h.finalize().into();
    let mut cipher = ChaCha20::new(&key.into(), &[0u8; 12].into());
    out.fill(0);
    cipher.apply_keystream(out);
}

/// `H1`: arbitrary bytes to an `ell1`-bit digest.
pub fn h1(element: &[u8], ell1: u32) -> Vec<u8> {
    expand_hash(TAG_H1, element, ell1 as usize)
}

/// `H2`: a packed `w`-bit string to an `ell2`-bit OPRF value.
pub fn h2(bits: &[u8], w: usize, ell2: u32) -> Result<OprfValue> {
    if bits.len() != w.div_ceil(8) {
        return Err(Error::DimensionMismatch(format!(
            "H2 input has {} bytes, expected {} for w={w}",
            bits.len(),
            w.div_ceil(8)
        )));
    }
    Ok(OprfValue(expand_hash(TAG_H2, bits, ell2 as usize)))
}

/// `F_k(digest)`: `w` row indices in `[0, m)`.
///
/// Reducing a 64-bit block mod `m` biases each index by at most `m / 2^64`.
pub fn prf_indices(key: &PrfKey, digest: &[u8], params: &ProtocolParams) -> IndexVector {
    let mut stream = vec![0u8; params.cols * 8];
    keystream(TAG_PRF, &[key.as_bytes(), digest], &mut stream);
    let m = params.rows as u64;
    IndexVector::new(
        stream
            .chunks_exact(8)
            .map(|c| (u64::from_le_bytes(c.try_into().unwrap()) % m) as u32)
            .collect(),
    )
}

/// Stretches a seed to an `m`-bit column image with zero padding.
pub fn prg_expand(seed: &[u8], m: usize) -> Vec<u8> {
    let mut out = vec![0u8; m.div_ceil(8)];
    keystream(TAG_PRG, &[seed], &mut out);
    clear_tail_bits(&mut out, m);
    out
}

/// `v = F_k(H1(x))` for one element.
pub fn element_indices(key: &PrfKey, element: &[u8], params: &ProtocolParams) -> IndexVector {
    prf_indices(key, &h1(element, params.ell1), params)
}
