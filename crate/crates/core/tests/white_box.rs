//! Checks against leaked per-party wheel state. Needs `--features leak-trace`.
#![cfg(feature = "leak-trace")]

use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use ringpsi::crypto::element_indices;
use ringpsi::harness::{planted_sets, simulate_with, SimOptions};
use ringpsi::protocol::{PartyTrace, TraceSink};
use ringpsi::{derive_params, BitMatrix, ChoiceString, RotMode, SecurityConfig};

fn traced(n: usize, set_size: usize, seed: u64, overrides: Vec<(usize, ChoiceString)>) -> (Vec<PartyTrace>, Vec<Vec<Vec<u8>>>) {
    let params = derive_params(set_size, n, SecurityConfig::default()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (sets, _) = planted_sets(n, set_size, set_size / 3, &mut rng);
    let sink: TraceSink = Arc::new(Mutex::new(Vec::new()));
    let opts = SimOptions {
        trace: Some(sink.clone()),
        choice_overrides: overrides,
        ..Default::default()
    };
    simulate_with(&sets, &params, RotMode::Dealer, seed, &opts).unwrap();
    let mut t = sink.lock().unwrap().clone();
    t.sort_by_key(|t| t.index);
    (t, sets)
}

#[test]
fn every_hop_folds_in_the_occupancy_matrix() {
    for n in [2, 3, 5] {
        let (t, _) = traced(n, 64, n as u64, vec![]);
        assert_eq!(t.len(), n);
        for i in 0..n - 1 {
            let c = &t[i].matrix;
            let d = t[i].occupancy.as_ref().unwrap();
            let s = t[i + 1].choices.as_ref().unwrap();
            let expect = BitMatrix::mux(c, &c.xor(d).unwrap(), s).unwrap();
            assert_eq!(t[i + 1].matrix, expect, "n={n} hop {}", i + 1);
        }
    }
}

#[test]
fn all_zero_choices_pass_the_leader_matrix_through() {
    let n = 4;
    let params = derive_params(32, n, SecurityConfig::default()).unwrap();
    let zeros = (2..=n).map(|i| (i, ChoiceString::zeros(params.cols))).collect();
    let (t, _) = traced(n, 32, 9, zeros);
    assert_eq!(t[n - 1].matrix, t[0].matrix);
}

#[test]
fn common_elements_keep_the_leader_bits() {
    let n = 4;
    let params = derive_params(32, n, SecurityConfig::default()).unwrap();
    let (t, sets) = traced(n, 32, 12, vec![]);
    let key = {
        // rebuild the shared key the way the leader drew it
        use ringpsi::protocol::{party_rng, pad_set};
        let mut rng = party_rng(Some(12), 1);
        pad_set(&sets[0], &params, &mut rng).unwrap();
        ringpsi::crypto::PrfKey::random(params.sec.lambda, &mut rng)
    };
    let common = ringpsi::harness::oracle_intersection(&sets);
    assert!(!common.is_empty());
    for x in &common {
        let v = element_indices(&key, x, &params);
        assert_eq!(t[0].matrix.gather(&v).unwrap(), t[n - 1].matrix.gather(&v).unwrap());
    }
}
