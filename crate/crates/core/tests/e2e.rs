use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use ringpsi::harness::{oracle_intersection, planted_sets, simulate, simulate_with, SimOptions};
use ringpsi::{derive_params, Element, Error, ProtocolParams, RotMode, SecurityConfig};

fn params(n: usize, set_size: usize) -> ProtocolParams {
    derive_params(set_size, n, SecurityConfig::default()).unwrap()
}

fn el(s: &str) -> Element {
    s.as_bytes().to_vec()
}

#[test]
fn four_party_overview_example() {
    let x = el("shared element");
    let sets = vec![
        vec![x.clone()],
        vec![x.clone(), el("y2")],
        vec![x.clone(), el("z2")],
        vec![x.clone()],
    ];
    for rot in [RotMode::Dealer, RotMode::SeedOt] {
        let r = simulate(&sets, &params(4, 8), rot, 42).unwrap();
        assert_eq!(r.intersection, vec![x.clone()]);
    }
}

#[test]
fn matches_oracle_across_ring_sizes() {
    for n in [2, 3, 4, 6] {
        for trial in 0..5u64 {
            let mut rng = ChaCha20Rng::seed_from_u64(trial * 31 + n as u64);
            let (mut sets, _) = planted_sets(n, 128, (trial as usize * 13) % 60, &mut rng);
            // uneven sizes, still within the bound
            sets[n - 1].truncate(100);
            let r = simulate(&sets, &params(n, 128), RotMode::Dealer, trial).unwrap();
            assert_eq!(r.intersection, oracle_intersection(&sets), "n={n} trial={trial}");
        }
    }
}

#[test]
fn disjoint_and_empty_inputs() {
    let p = params(3, 32);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let (sets, _) = planted_sets(3, 32, 0, &mut rng);
    assert!(simulate(&sets, &p, RotMode::Dealer, 1).unwrap().intersection.is_empty());
    let empty = vec![vec![], sets[1].clone(), sets[2].clone()];
    assert!(simulate(&empty, &p, RotMode::Dealer, 1).unwrap().intersection.is_empty());
    let all_empty = vec![vec![]; 3];
    assert!(simulate(&all_empty, &p, RotMode::Dealer, 1).unwrap().intersection.is_empty());
}

#[test]
fn binary_elements_and_duplicates() {
    let p = params(2, 8);
    let a = vec![vec![0u8, 0, 0], vec![0xff; 40], vec![], vec![0u8, 0, 0]];
    let b = vec![vec![0xff; 40], vec![]];
    let r = simulate(&[a, b], &p, RotMode::Dealer, 3).unwrap();
    assert_eq!(r.intersection, vec![vec![0xff; 40], vec![]]);
}

#[test]
fn oversize_set_is_rejected() {
    let p = params(2, 4);
    let big: Vec<Element> = (0u8..5).map(|i| vec![i]).collect();
    let err = simulate(&[big, vec![]], &p, RotMode::Dealer, 1).unwrap_err();
    assert!(matches!(err, Error::OversizeSet { len: 5, bound: 4 }), "{err}");
}

#[test]
fn dealer_and_seed_ot_agree() {
    for n in [2, 3, 5] {
        let p = params(n, 64);
        let mut rng = ChaCha20Rng::seed_from_u64(n as u64);
        let (sets, _) = planted_sets(n, 64, 20, &mut rng);
        let a = simulate(&sets, &p, RotMode::Dealer, 11).unwrap();
        let b = simulate(&sets, &p, RotMode::SeedOt, 11).unwrap();
        assert_eq!(a.intersection, b.intersection);
        let wheel = |r: &ringpsi::harness::SimReport| r.parties.iter().map(|p| p.wheel_sent()).collect::<Vec<_>>();
        assert_eq!(wheel(&a), wheel(&b));
    }
}

#[test]
fn same_seed_same_transcript() {
    let p = params(4, 32);
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let (sets, _) = planted_sets(4, 32, 10, &mut rng);
    let opts = SimOptions {
        record_transcripts: true,
        ..Default::default()
    };
    let a = simulate_with(&sets, &p, RotMode::Dealer, 77, &opts).unwrap();
    let b = simulate_with(&sets, &p, RotMode::Dealer, 77, &opts).unwrap();
    let c = simulate_with(&sets, &p, RotMode::Dealer, 78, &opts).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_ne!(a.transcripts, c.transcripts);
    assert_eq!(a.intersection, c.intersection);
}

#[test]
fn any_crashed_party_aborts_the_session() {
    for n in [2, 3, 5] {
        for crash in 1..=n {
            let opts = SimOptions {
                crash_party: Some(crash),
                timeout: Some(Duration::from_secs(20)),
                ..Default::default()
            };
            let sets = vec![vec![el("a")]; n];
            let err = simulate_with(&sets, &params(n, 16), RotMode::SeedOt, 1, &opts).unwrap_err();
            assert!(!matches!(err, Error::Timeout(_)), "n={n} crash={crash}: {err}");
        }
    }
}

#[test]
fn mismatched_parameters_abort() {
    // the middle party is configured for a different N
    use ringpsi::protocol::{run_party, PartyConfig};
    use ringpsi::transport::{memory_pair, Ring};
    let good = params(3, 16);
    let bad = params(3, 32);
    let (a1, b1) = memory_pair("n", "p", Some(Duration::from_secs(10)));
    let (a2, b2) = memory_pair("n", "p", Some(Duration::from_secs(10)));
    let (a3, b3) = memory_pair("n", "p", Some(Duration::from_secs(10)));
    let rings = vec![
        Ring { prev: b3, next: a1 },
        Ring { prev: b1, next: a2 },
        Ring { prev: b2, next: a3 },
    ];
    let cfgs = [good.clone(), bad, good];
    let errs: Vec<_> = std::thread::scope(|s| {
        let hs: Vec<_> = rings
            .into_iter()
            .zip(cfgs)
            .enumerate()
            .map(|(i, (mut ring, p))| {
                s.spawn(move || {
                    let cfg = PartyConfig::new(i + 1, p, RotMode::Dealer).unwrap().with_seed(Some(1));
                    run_party(&[el("x")], &cfg, &mut ring).err()
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(errs.iter().all(|e| e.is_some()));
    assert!(errs
        .iter()
        .flatten()
        .any(|e| matches!(e, Error::ParamsMismatch { .. })));
}
