//! In-process simulation, plaintext oracle, statistical experiments and
//! communication accounting. Simulations run the real party state machines
//! over in-memory channels, one thread per party.

use std::collections::HashSet;
use std::thread;
use std::time::Duration;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::bitmatrix::weight;
use crate::crypto::rot::POINT_LEN;
use crate::crypto::{element_indices, PrfKey, RotMode};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::params::ProtocolParams;
use crate::protocol::{run_party, Element, PartyConfig, PartyReport, SessionHeader, MAGIC};
use crate::soprf::build_occupancy;
use crate::transport::{memory_pair, Ring, HEADER_LEN};

/// Plaintext multi-way intersection in the first set's order, deduplicated.
pub fn oracle_intersection(sets: &[Vec<Element>]) -> Vec<Element> {
    let Some((first, rest)) = sets.split_first() else {
        return Vec::new();
    };
    let others: Vec<HashSet<&Element>> = rest.iter().map(|s| s.iter().collect()).collect();
    let mut seen = HashSet::new();
    first
        .iter()
        .filter(|x| others.iter().all(|o| o.contains(x)) && seen.insert(*x))
        .cloned()
        .collect()
}

/// Knobs for [`simulate_with`].
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Keep every byte each party writes, per directed edge.
    pub record_transcripts: bool,
    /// Per-party receive timeout on the in-memory channels.
    pub timeout: Option<Duration>,
    /// Stops party `i` (1-based) right after the key exchange, as if it
    /// had crashed mid-session.
    pub crash_party: Option<usize>,
    #[cfg(feature = "leak-trace")]
    pub trace: Option<crate::protocol::TraceSink>,
    #[cfg(feature = "leak-trace")]
    pub choice_overrides: Vec<(usize, crate::bitmatrix::ChoiceString)>,
}

/// Bytes one party wrote on its outgoing ring edge (`i -> i+1`) and on
/// its edge back to the predecessor.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub to_next: Vec<u8>,
    pub to_prev: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub intersection: Vec<Element>,
    /// Indexed by party, `parties[0]` is the leader.
    pub parties: Vec<PartyReport>,
    pub transcripts: Vec<Transcript>,
    pub params: ProtocolParams,
    pub rot: RotMode,
    pub seed: u64,
}

impl SimReport {
    pub fn total_bytes_sent(&self) -> u64 {
        self.parties.iter().map(|p| p.bytes_sent()).sum()
    }

    /// Everything except wall-clock times, for determinism checks.
    pub fn fingerprint(&self) -> impl PartialEq + std::fmt::Debug {
        (
            self.intersection.clone(),
            self.parties
                .iter()
                .map(|p| (p.index, p.prev.clone(), p.next.clone()))
                .collect::<Vec<_>>(),
            self.transcripts.clone(),
            self.params.clone(),
            self.seed,
        )
    }

    /// Line-oriented `key=value` rendering.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "seed={}\nrot={}\nintersection_size={}\n",
            self.seed,
            self.rot,
            self.intersection.len()
        );
        for line in self.params.canonical_text().lines() {
            out.push_str(&format!("param.{line}\n"));
        }
        for p in &self.parties {
            let i = p.index;
            out.push_str(&format!("party.{i}.role={}\n", p.role.name()));
            out.push_str(&format!("party.{i}.bytes_sent={}\n", p.bytes_sent()));
            out.push_str(&format!("party.{i}.bytes_received={}\n", p.bytes_received()));
            out.push_str(&format!("party.{i}.wheel_bytes_sent={}\n", p.wheel_sent()));
            out.push_str(&format!("party.{i}.ot_bytes={}\n", p.ot_bytes()));
            for (name, d) in &p.phases {
                out.push_str(&format!("party.{i}.time_ms.{name}={:.3}\n", d.as_secs_f64() * 1e3));
            }
        }
        out.push_str(&format!("total_bytes_sent={}\n", self.total_bytes_sent()));
        out
    }
}

pub fn simulate(sets: &[Vec<Element>], params: &ProtocolParams, rot: RotMode, seed: u64) -> Result<SimReport> {
    simulate_with(sets, params, rot, seed, &SimOptions::default())
}

pub fn simulate_with(
    sets: &[Vec<Element>],
    params: &ProtocolParams,
    rot: RotMode,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimReport> {
    let n = params.parties;
    if sets.len() != n {
        return Err(Error::InvalidParams(format!(
            "{} input sets for n={n} parties",
            sets.len()
        )));
    }
    // edge i connects party i+1 (sender end) to party i+2 mod n (receiver end)
    let mut next_ends = Vec::with_capacity(n);
    let mut prev_ends: Vec<Option<_>> = (0..n).map(|_| None).collect();
    for i in 0..n {
        let (mut a, mut b) = memory_pair("next", "prev", opts.timeout);
        if opts.record_transcripts {
            a.record_transcript();
            b.record_transcript();
        }
        next_ends.push(a);
        prev_ends[(i + 1) % n] = Some(b);
    }
    let rings: Vec<Ring> = next_ends
        .into_iter()
        .zip(prev_ends)
        .map(|(next, prev)| Ring {
            prev: prev.unwrap(),
            next,
        })
        .collect();

    let mut configs = Vec::with_capacity(n);
    for i in 1..=n {
        #[allow(unused_mut)]
        let mut cfg = PartyConfig::new(i, params.clone(), rot)?.with_seed(Some(seed));
        #[cfg(feature = "leak-trace")]
        {
            cfg.trace = opts.trace.clone();
            cfg.choice_override = opts
                .choice_overrides
                .iter()
                .find(|(idx, _)| *idx == i)
                .map(|(_, s)| s.clone());
        }
        configs.push(cfg);
    }

    let results: Vec<Result<(Option<Vec<Element>>, PartyReport, Transcript)>> = thread::scope(|scope| {
        let handles: Vec<_> = rings
            .into_iter()
            .zip(&configs)
            .zip(sets)
            .map(|((mut ring, cfg), set)| {
                let crash = opts.crash_party == Some(cfg.index);
                scope.spawn(move || {
                    let out = if crash {
                        crash_after_key(cfg, &mut ring)
                    } else {
                        run_party(set, cfg, &mut ring)
                    };
                    let transcript = Transcript {
                        to_next: ring.next.take_transcript().unwrap_or_default(),
                        to_prev: ring.prev.take_transcript().unwrap_or_default(),
                    };
                    // dropping the ring here unblocks neighbors on failure
                    drop(ring);
                    out.map(|o| (o.intersection, o.report, transcript))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::protocol("party thread panicked"))))
            .collect()
    });

    let mut intersection = None;
    let mut parties = Vec::with_capacity(n);
    let mut transcripts = Vec::with_capacity(n);
    let mut first_err = None;
    for r in results {
        match r {
            Ok((inter, report, t)) => {
                if inter.is_some() {
                    intersection = inter;
                }
                parties.push(report);
                transcripts.push(t);
            }
            // prefer a root cause over the disconnects it triggers
            Err(e) => match (&first_err, &e) {
                (None, _) | (Some(Error::Disconnected), _) => first_err = Some(e),
                _ => {}
            },
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(SimReport {
        intersection: intersection.ok_or_else(|| Error::protocol("leader produced no output"))?,
        parties,
        transcripts,
        params: params.clone(),
        rot,
        seed,
    })
}

fn crash_after_key(cfg: &PartyConfig, ring: &mut Ring) -> Result<crate::protocol::PartyOutput> {
    let mut rng = crate::protocol::party_rng(cfg.seed, cfg.index);
    crate::protocol::key_share(cfg, ring, &mut rng)?;
    Err(Error::protocol(format!("party {} crashed", cfg.index)))
}

/// Random distinct 16-byte elements.
pub fn random_elements<R: RngCore>(count: usize, rng: &mut R) -> Vec<Element> {
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = rng.gen::<[u8; 16]>().to_vec();
        if seen.insert(x.clone()) {
            out.push(x);
        }
    }
    out
}

/// `n` sets of exactly `size` elements sharing a planted common subset of
/// `overlap` elements; all other elements are distinct across sets. Each set
/// is shuffled.
pub fn planted_sets<R: RngCore>(n: usize, size: usize, overlap: usize, rng: &mut R) -> (Vec<Vec<Element>>, Vec<Element>) {
    use rand::seq::SliceRandom;
    let overlap = overlap.min(size);
    let pool = random_elements(overlap + n * (size - overlap), rng);
    let common = pool[..overlap].to_vec();
    let sets = (0..n)
        .map(|i| {
            let start = overlap + i * (size - overlap);
            let mut s = common.clone();
            s.extend_from_slice(&pool[start..start + size - overlap]);
            s.shuffle(rng);
            s
        })
        .collect();
    (sets, common)
}

/// Predicted payload traffic per party, ignoring frame headers and the
/// constant-size setup messages.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedForm {
    pub sent: Vec<u64>,
    pub received: Vec<u64>,
    /// OT handshake bytes on one ring edge (both directions).
    pub ot_per_edge: u64,
}

impl ClosedForm {
    pub fn total_sent(&self) -> u64 {
        self.sent.iter().sum()
    }

    /// Sum over parties of sent plus OT traffic.
    pub fn total_with_ot(&self) -> u64 {
        self.total_sent() + self.ot_per_edge * (self.sent.len() as u64 - 1)
    }
}

/// Leader sends one `m x w` matrix and receives `N` OPRF values; each
/// middle assistant receives one or two matrices and sends two; the
/// terminal assistant receives the last hop and sends the `N` values.
pub fn closed_form(params: &ProtocolParams, rot: RotMode) -> ClosedForm {
    let n = params.parties;
    let mat = params.matrix_bytes() as u64;
    let psi = (params.set_size * params.oprf_bytes()) as u64;
    let incoming = |i: usize| if i == 2 { mat } else { 2 * mat };
    let mut sent = vec![0; n];
    let mut received = vec![0; n];
    for i in 1..=n {
        let (s, r) = if i == 1 {
            (mat, psi)
        } else if i == n {
            (psi, incoming(i))
        } else {
            (2 * mat, incoming(i))
        };
        sent[i - 1] = s;
        received[i - 1] = r;
    }
    let ot_per_edge = match rot {
        RotMode::Dealer => 32,
        RotMode::SeedOt => (POINT_LEN * (1 + params.cols)) as u64,
    };
    ClosedForm {
        sent,
        received,
        ot_per_edge,
    }
}

/// Exact size of the session-header frame for `params`.
pub fn header_frame_bytes(params: &ProtocolParams) -> u64 {
    let h = SessionHeader {
        from: 0,
        to: 0,
        rot: RotMode::Dealer,
        point_len: 0,
        params_text: params.canonical_text(),
    };
    debug_assert_eq!(&h.encode()[..4], MAGIC);
    (HEADER_LEN + h.encode().len()) as u64
}

#[derive(Debug, Clone)]
pub struct CommunicationTable {
    pub measured: SimReport,
    pub predicted: ClosedForm,
}

impl CommunicationTable {
    pub fn measured_sent(&self) -> Vec<u64> {
        self.measured.parties.iter().map(|p| p.bytes_sent()).collect()
    }

    pub fn measured_total(&self) -> u64 {
        self.measured.total_bytes_sent()
    }
}

/// Runs one session on full-size random sets and pairs the measured bytes
/// with the closed-form prediction.
pub fn measure_communication(params: &ProtocolParams, rot: RotMode, seed: u64) -> Result<CommunicationTable> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    let overlap = params.set_size / 4;
    let (sets, _) = planted_sets(params.parties, params.set_size, overlap, &mut rng);
    let measured = simulate(&sets, params, rot, seed)?;
    Ok(CommunicationTable {
        measured,
        predicted: closed_form(params, rot),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SoundnessReport {
    pub trials: usize,
    /// Leader elements examined across all trials.
    pub candidates: u64,
    pub false_positives: u64,
    /// Probability a non-member matches one of `N` independent values.
    pub per_element_rate: f64,
}

impl SoundnessReport {
    pub fn expected(&self) -> f64 {
        self.candidates as f64 * self.per_element_rate
    }

    pub fn std_dev(&self) -> f64 {
        (self.candidates as f64 * self.per_element_rate * (1.0 - self.per_element_rate)).sqrt()
    }

    pub fn observed_rate(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            self.false_positives as f64 / self.candidates as f64
        }
    }
}

/// Runs `trials` sessions on pairwise-disjoint full-size sets, so every
/// element the leader reports is a false positive.
pub fn soundness_experiment(params: &ProtocolParams, trials: usize, seed: u64) -> Result<SoundnessReport> {
    let mut report = SoundnessReport {
        trials,
        per_element_rate: 1.0 - (1.0 - 2f64.powi(-(params.ell2 as i32))).powi(params.set_size as i32),
        ..Default::default()
    };
    // sessions run one after another: each one already fans out over the
    // rayon pool from its party threads, and blocking pool workers on them
    // would starve it
    for t in 0..trials as u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(t));
        let (sets, _) = planted_sets(params.parties, params.set_size, 0, &mut rng);
        let r = simulate(&sets, params, RotMode::Dealer, seed.wrapping_add(t))?;
        report.false_positives += r.intersection.len() as u64;
        report.candidates += params.set_size as u64;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HammingReport {
    pub draws: usize,
    pub min_weight: u32,
    /// Draws whose selected weight fell below `d`.
    pub violations: usize,
}

/// Builds one occupancy matrix from `N` random elements and measures the
/// weight `gather(D, v)` selects for fresh non-member elements.
pub fn hamming_experiment(params: &ProtocolParams, draws: usize, seed: u64) -> Result<HammingReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let key = PrfKey::random(params.sec.lambda, &mut rng);
    let members = random_elements(params.set_size, &mut rng);
    let d = build_occupancy(&members, &key, params)?;
    let member_set: HashSet<&Element> = members.iter().collect();
    let mut outsiders = Vec::with_capacity(draws);
    while outsiders.len() < draws {
        let x = rng.gen::<[u8; 20]>().to_vec();
        if !member_set.contains(&x) {
            outsiders.push(x);
        }
    }
    let weights = par::map(Exec::default(), &outsiders, |x| -> Result<u32> {
        Ok(weight(&d.matrix().gather(&element_indices(&key, x, params))?))
    })
    .into_iter()
    .collect::<Result<Vec<u32>>>()?;
    Ok(HammingReport {
        draws,
        min_weight: weights.iter().copied().min().unwrap_or(params.cols as u32),
        violations: weights.iter().filter(|&&w| w < params.sec.d).count(),
    })
}

/// Seed, sizes and inputs of the reference session whose wire bytes are
/// checked in as `fixtures/golden_transcript.txt`.
pub const GOLDEN_SEED: u64 = 20240611;
pub const GOLDEN_PARTIES: usize = 3;
pub const GOLDEN_SET_SIZE: usize = 16;

pub fn golden_sets() -> Vec<Vec<Element>> {
    let set = |tag: &str, count: usize| -> Vec<Element> {
        (0..count).map(|i| format!("{tag}-{i:02}").into_bytes()).collect()
    };
    let common = set("common", 5);
    (1..=GOLDEN_PARTIES)
        .map(|p| {
            let mut s = common.clone();
            s.extend(set(&format!("only{p}"), 3 + p));
            s
        })
        .collect()
}

/// Runs the reference session in dealer mode with transcripts recorded.
pub fn golden_session() -> Result<SimReport> {
    let params = crate::params::derive_params(
        GOLDEN_SET_SIZE,
        GOLDEN_PARTIES,
        crate::params::SecurityConfig::default(),
    )?;
    let opts = SimOptions {
        record_transcripts: true,
        ..Default::default()
    };
    simulate_with(&golden_sets(), &params, RotMode::Dealer, GOLDEN_SEED, &opts)
}

/// One `from->to <hex>` line per directed edge, 64 bytes per line.
pub fn transcript_text(report: &SimReport) -> String {
    let n = report.parties.len();
    let mut out = String::new();
    let mut edge = |from: usize, to: usize, bytes: &[u8]| {
        out.push_str(&format!("# {from}->{to} {} bytes\n", bytes.len()));
        for chunk in bytes.chunks(64) {
            out.push_str(&format!("{from}->{to} "));
            for b in chunk {
                out.push_str(&format!("{b:02x}"));
            }
            out.push('\n');
        }
    };
    for (i, t) in report.transcripts.iter().enumerate() {
        let me = i + 1;
        edge(me, me % n + 1, &t.to_next);
        edge(me, if me == 1 { n } else { me - 1 }, &t.to_prev);
    }
    out
}
