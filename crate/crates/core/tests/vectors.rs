//! Known-answer vectors for the hash, PRF and PRG primitives. Set
//! `RINGPSI_BLESS=1` to rewrite the fixture after an intentional change.

use std::fmt::Write as _;
use std::path::PathBuf;

use ringpsi::crypto::{h1, h2, prf_indices, prg_expand, PrfKey};
use ringpsi::{ProtocolParams, SecurityConfig};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/crypto_vectors.txt")
}

fn params(rows: usize, cols: usize) -> ProtocolParams {
    ProtocolParams {
        parties: 2,
        set_size: rows,
        rows,
        cols,
        ell1: 256,
        ell2: 64,
        sec: SecurityConfig::default(),
    }
}

fn render() -> String {
    let mut out = String::from("# kind inputs... => output (hex unless noted)\n");
    for (x, ell1) in [(&b""[..], 256), (b"abc", 256), (b"abc", 320), (&[0u8; 64][..], 256)] {
        writeln!(out, "h1 {} {ell1} => {}", hex::encode(x), hex::encode(h1(x, ell1))).unwrap();
    }
    for (bits, w, ell2) in [(vec![0u8; 2], 9, 60), (vec![0xa5; 75], 600, 80), (vec![1u8; 32], 256, 48)] {
        let v = h2(&bits, w, ell2).unwrap();
        writeln!(out, "h2 {} {w} {ell2} => {}", hex::encode(&bits), hex::encode(v.as_bytes())).unwrap();
    }
    for (key, digest, m, w) in [
        ([0u8; 16], [0u8; 32], 1000usize, 8usize),
        ([7u8; 16], [9u8; 32], 1 << 20, 5),
        ([0xffu8; 16], [1u8; 32], 3, 12),
    ] {
        let k = PrfKey::from_bytes(key.to_vec(), 128).unwrap();
        let v = prf_indices(&k, &digest, &params(m, w));
        let list: Vec<String> = v.as_slice().iter().map(u32::to_string).collect();
        writeln!(out, "prf {} {} {m} {w} => {}", hex::encode(key), hex::encode(digest), list.join(",")).unwrap();
    }
    for (seed, m) in [(vec![0u8; 16], 64usize), (vec![3u8; 16], 13), (vec![0x42; 32], 300)] {
        writeln!(out, "prg {} {m} => {}", hex::encode(&seed), hex::encode(prg_expand(&seed, m))).unwrap();
    }
    out
}

#[test]
fn primitives_match_checked_in_vectors() {
    let got = render();
    if std::env::var_os("RINGPSI_BLESS").is_some() {
        std::fs::write(fixture(), &got).unwrap();
    }
    let want = std::fs::read_to_string(fixture()).expect("fixture missing; run with RINGPSI_BLESS=1");
    for (i, (g, w)) in got.lines().zip(want.lines()).enumerate() {
        assert_eq!(g, w, "vector line {}", i + 1);
    }
    assert_eq!(got.lines().count(), want.lines().count());
}

#[test]
fn h1_prefix_is_plain_sha256() {
    // first block of h1 is SHA256(0x01 || 0u32 || x)
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update([1u8, 0, 0, 0, 0]);
    h.update(b"abc");
    assert_eq!(h1(b"abc", 256), h.finalize().to_vec());
}
