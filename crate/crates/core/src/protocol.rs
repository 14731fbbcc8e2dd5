//! Party state machines for the leader, middle assistants and the terminal
//! assistant.
//!
//! Message order on edge `P_i -> P_{i+1}` (both directions shown):
//!
//! ```text
//! PARAMS <->        session header, exchanged on every channel
//! KEY     ->        PRF key, forwarded from the leader around the ring
//! OT_MSG  -> (<-)   ROT handshake (the reply only exists in seed-OT mode)
//! DELTA   ->        first hop (i = 1)
//! GAMMA_DELTA ->    later hops
//! ```
//!
//! and on the return edge `P_n -> P_1` only `PARAMS` and `PSI`.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::bitmatrix::ChoiceString;
use crate::crypto::rot::POINT_LEN;
use crate::crypto::{receive_batch, OprfValue, PrfKey, RotMode, RotSender};
use crate::error::{Error, Result};
use crate::params::ProtocolParams;
use crate::soprf::{self, WheelState};
use crate::transport::{ChannelMetrics, MsgType, Ring};

pub const MAGIC: &[u8; 4] = b"MPSI";
pub const VERSION: u16 = 1;

pub type Element = Vec<u8>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartyRole {
    Leader,
    MiddleAssistant,
    TerminalAssistant,
}

impl PartyRole {
    pub fn for_index(index: usize, parties: usize) -> Result<Self> {
        if parties < 2 || index == 0 || index > parties {
            return Err(Error::InvalidParams(format!(
                "party index {index} invalid for n={parties}"
            )));
        }
        Ok(if index == 1 {
            PartyRole::Leader
        } else if index == parties {
            PartyRole::TerminalAssistant
        } else {
            PartyRole::MiddleAssistant
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            PartyRole::Leader => "leader",
            PartyRole::MiddleAssistant => "middle",
            PartyRole::TerminalAssistant => "terminal",
        }
    }
}

impl std::str::FromStr for PartyRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leader" => Ok(PartyRole::Leader),
            "middle" => Ok(PartyRole::MiddleAssistant),
            "terminal" => Ok(PartyRole::TerminalAssistant),
            _ => Err(Error::InvalidParams(format!("unknown role `{s}`"))),
        }
    }
}

/// White-box view of one party's wheel, collected only in test builds.
#[cfg(any(test, feature = "leak-trace"))]
#[derive(Debug, Clone)]
pub struct PartyTrace {
    pub index: usize,
    pub choices: Option<ChoiceString>,
    /// `A` for the leader, `C^i` for assistants.
    pub matrix: crate::bitmatrix::BitMatrix,
    /// `D^i`, absent for the terminal assistant.
    pub occupancy: Option<crate::bitmatrix::BitMatrix>,
}

#[cfg(any(test, feature = "leak-trace"))]
pub type TraceSink = std::sync::Arc<std::sync::Mutex<Vec<PartyTrace>>>;

#[derive(Debug, Clone)]
pub struct PartyConfig {
    /// 1-based ring position.
    pub index: usize,
    pub params: ProtocolParams,
    pub rot: RotMode,
    /// Session seed; `None` draws from the OS.
    pub seed: Option<u64>,
    #[cfg(any(test, feature = "leak-trace"))]
    pub trace: Option<TraceSink>,
    #[cfg(any(test, feature = "leak-trace"))]
    pub choice_override: Option<ChoiceString>,
}

impl PartyConfig {
    pub fn new(index: usize, params: ProtocolParams, rot: RotMode) -> Result<Self> {
        PartyRole::for_index(index, params.parties)?;
        Ok(PartyConfig {
            index,
            params,
            rot,
            seed: None,
            #[cfg(any(test, feature = "leak-trace"))]
            trace: None,
            #[cfg(any(test, feature = "leak-trace"))]
            choice_override: None,
        })
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn role(&self) -> PartyRole {
        PartyRole::for_index(self.index, self.params.parties).expect("validated in new")
    }

    fn prev_index(&self) -> usize {
        if self.index == 1 {
            self.params.parties
        } else {
            self.index - 1
        }
    }

    fn next_index(&self) -> usize {
        self.index % self.params.parties + 1
    }

    fn rng(&self) -> ChaCha20Rng {
        party_rng(self.seed, self.index)
    }

    #[cfg(any(test, feature = "leak-trace"))]
    fn record(&self, t: PartyTrace) {
        if let Some(sink) = &self.trace {
            sink.lock().unwrap().push(t);
        }
    }
}

/// All randomness of party `index` comes from this generator.
pub fn party_rng(seed: Option<u64>, index: usize) -> ChaCha20Rng {
    match seed {
        Some(s) => {
            let mut rng = ChaCha20Rng::seed_from_u64(s);
            rng.set_stream(index as u64);
            rng
        }
        None => ChaCha20Rng::from_entropy(),
    }
}

/// A deduplicated input set extended with random filler up to `N`.
/// The first `real` entries are the caller's elements.
#[derive(Debug, Clone)]
pub struct PaddedSet {
    pub elements: Vec<Element>,
    pub real: usize,
}

impl PaddedSet {
    pub fn real_elements(&self) -> &[Element] {
        &self.elements[..self.real]
    }
}

/// Removes duplicates (keeping first occurrences) and appends random
/// `2*lambda`-bit filler elements until the set has exactly `N` entries.
pub fn pad_set<R: RngCore>(set: &[Element], params: &ProtocolParams, rng: &mut R) -> Result<PaddedSet> {
    let mut seen = HashSet::with_capacity(set.len());
    let mut elements: Vec<Element> = set.iter().filter(|x| seen.insert(*x)).cloned().collect();
    if elements.len() > params.set_size {
        return Err(Error::OversizeSet {
            len: elements.len(),
            bound: params.set_size,
        });
    }
    let real = elements.len();
    let filler_len = (params.ell1 / 8) as usize;
    while elements.len() < params.set_size {
        let mut x = vec![0u8; filler_len];
        rng.fill_bytes(&mut x);
        elements.push(x);
    }
    Ok(PaddedSet { elements, real })
}

/// First frame on every channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionHeader {
    pub from: u32,
    pub to: u32,
    pub rot: RotMode,
    pub point_len: u16,
    pub params_text: String,
}

impl SessionHeader {
    /// `magic[4] | version u16 | from u32 | to u32 | rot u8 | point_len u16 |
    /// params_len u32 | params`, integers little endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + self.params_text.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.from.to_le_bytes());
        out.extend_from_slice(&self.to.to_le_bytes());
        out.push(self.rot.code());
        out.extend_from_slice(&self.point_len.to_le_bytes());
        out.extend_from_slice(&(self.params_text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.params_text.as_bytes());
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        let bad = || Error::protocol("malformed session header");
        if b.len() < 21 || &b[..4] != MAGIC {
            return Err(bad());
        }
        let u16_at = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        let version = u16_at(4);
        if version != VERSION {
            return Err(Error::protocol(format!("unsupported protocol version {version}")));
        }
        let len = u32_at(17) as usize;
        if b.len() != 21 + len {
            return Err(bad());
        }
        Ok(SessionHeader {
            from: u32_at(6),
            to: u32_at(10),
            rot: RotMode::from_code(b[14])?,
            point_len: u16_at(15),
            params_text: String::from_utf8(b[21..].to_vec()).map_err(|_| bad())?,
        })
    }
}

/// Per-party accounting.
#[derive(Debug, Clone)]
pub struct PartyReport {
    pub index: usize,
    pub role: PartyRole,
    pub prev: ChannelMetrics,
    pub next: ChannelMetrics,
    pub phases: Vec<(&'static str, Duration)>,
}

impl PartyReport {
    pub fn bytes_sent(&self) -> u64 {
        self.prev.bytes_sent + self.next.bytes_sent
    }

    pub fn bytes_received(&self) -> u64 {
        self.prev.bytes_received + self.next.bytes_received
    }

    pub fn total(&self) -> u64 {
        self.bytes_sent() + self.bytes_received()
    }

    /// Bytes of wheel traffic (DELTA and GAMMA_DELTA frames) this party sent.
    pub fn wheel_sent(&self) -> u64 {
        let m = |c: &ChannelMetrics| c.sent(MsgType::Delta) + c.sent(MsgType::GammaDelta);
        m(&self.prev) + m(&self.next)
    }

    pub fn ot_bytes(&self) -> u64 {
        let m = |c: &ChannelMetrics| c.sent(MsgType::OtMsg) + c.received(MsgType::OtMsg);
        m(&self.prev) + m(&self.next)
    }
}

#[derive(Debug, Clone)]
pub struct IntersectionResult {
    /// Matched elements of the leader's set, in its input order.
    pub elements: Vec<Element>,
    pub report: PartyReport,
}

struct Phases {
    start: Instant,
    done: Vec<(&'static str, Duration)>,
}

impl Phases {
    fn new() -> Self {
        Phases {
            start: Instant::now(),
            done: Vec::new(),
        }
    }

    fn mark(&mut self, name: &'static str) {
        let now = Instant::now();
        self.done.push((name, now - self.start));
        self.start = now;
    }
}

fn exchange_headers(cfg: &PartyConfig, ring: &mut Ring) -> Result<()> {
    let text = cfg.params.canonical_text();
    let header = |to: usize| SessionHeader {
        from: cfg.index as u32,
        to: to as u32,
        rot: cfg.rot,
        point_len: POINT_LEN as u16,
        params_text: text.clone(),
    };
    ring.prev
        .send_frame(MsgType::Params, &header(cfg.prev_index()).encode())?;
    ring.next
        .send_frame(MsgType::Params, &header(cfg.next_index()).encode())?;
    for (ch, expect_from) in [(&mut ring.prev, cfg.prev_index()), (&mut ring.next, cfg.next_index())] {
        let h = SessionHeader::decode(&ch.recv_frame(MsgType::Params)?)?;
        cfg.params.check_agreement(&h.params_text)?;
        if h.rot != cfg.rot {
            return Err(Error::ParamsMismatch {
                field: "rot".into(),
                ours: cfg.rot.to_string(),
                theirs: h.rot.to_string(),
            });
        }
        if h.point_len as usize != POINT_LEN {
            return Err(Error::protocol(format!("peer uses {}-byte group elements", h.point_len)));
        }
        if h.from as usize != expect_from || h.to as usize != cfg.index {
            return Err(Error::protocol(format!(
                "ring wiring: expected {} -> {}, peer announced {} -> {}",
                expect_from, cfg.index, h.from, h.to
            )));
        }
    }
    Ok(())
}

/// Headers on both neighbors, then the PRF key travels `P1 -> ... -> Pn`.
pub fn key_share<R: RngCore>(cfg: &PartyConfig, ring: &mut Ring, rng: &mut R) -> Result<PrfKey> {
    exchange_headers(cfg, ring)?;
    let lambda = cfg.params.sec.lambda;
    let key = match cfg.role() {
        PartyRole::Leader => PrfKey::random(lambda, rng),
        _ => PrfKey::from_bytes(ring.prev.recv_frame(MsgType::Key)?, lambda)?,
    };
    if cfg.role() != PartyRole::TerminalAssistant {
        ring.next.send_frame(MsgType::Key, key.as_bytes())?;
    }
    Ok(key)
}

fn sample_choices<R: RngCore>(cfg: &PartyConfig, rng: &mut R) -> ChoiceString {
    let s = ChoiceString::random(cfg.params.cols, rng);
    #[cfg(any(test, feature = "leak-trace"))]
    if let Some(o) = &cfg.choice_override {
        return o.clone();
    }
    s
}

fn receive_hop(cfg: &PartyConfig, ring: &mut Ring, rot: &crate::crypto::RotReceiverBatch) -> Result<WheelState> {
    if cfg.index == 2 {
        soprf::receive_first_hop(rot, &mut ring.prev, &cfg.params)
    } else {
        soprf::middle_hop_receive(rot, &mut ring.prev, &cfg.params)
    }
}

fn with_abort<T>(ring: &mut Ring, f: impl FnOnce(&mut Ring) -> Result<T>) -> Result<T> {
    let r = f(ring);
    if let Err(e) = &r {
        let reason = e.to_string();
        ring.prev.send_abort(&reason);
        ring.next.send_abort(&reason);
    }
    r
}

fn report(cfg: &PartyConfig, ring: &Ring, phases: Phases) -> PartyReport {
    PartyReport {
        index: cfg.index,
        role: cfg.role(),
        prev: ring.prev.metrics().clone(),
        next: ring.next.metrics().clone(),
        phases: phases.done,
    }
}

fn expect_role(cfg: &PartyConfig, role: PartyRole) -> Result<()> {
    if cfg.role() != role {
        return Err(Error::InvalidParams(format!(
            "party {} is the {}, not the {}",
            cfg.index,
            cfg.role().name(),
            role.name()
        )));
    }
    Ok(())
}

pub fn run_leader(set: &[Element], cfg: &PartyConfig, ring: &mut Ring) -> Result<IntersectionResult> {
    expect_role(cfg, PartyRole::Leader)?;
    let params = &cfg.params;
    let mut rng = cfg.rng();
    let mut phases = Phases::new();
    let elements = with_abort(ring, |ring| {
        let padded = pad_set(set, params, &mut rng)?;
        let key = key_share(cfg, ring, &mut rng)?;
        phases.mark("setup");

        let sender = RotSender::start(cfg.rot, params.cols, params.rows, params.key_bytes(), &mut ring.next, &mut rng)?;
        let rot = sender.finish(&mut ring.next)?;
        phases.mark("ot");

        let d1 = soprf::build_occupancy(&padded.elements, &key, params)?;
        phases.mark("preprocess");

        let a = soprf::leader_first_hop(&d1, &rot, &mut ring.next)?;
        #[cfg(any(test, feature = "leak-trace"))]
        cfg.record(PartyTrace {
            index: cfg.index,
            choices: None,
            matrix: a.clone(),
            occupancy: Some(d1.matrix().clone()),
        });
        drop(d1);
        phases.mark("wheel");

        let psi = ring.prev.recv_frame(MsgType::Psi)?;
        let width = params.oprf_bytes();
        if psi.len() != params.set_size * width {
            return Err(Error::protocol(format!(
                "received {} OPRF bytes, expected {} values of {width} bytes",
                psi.len(),
                params.set_size
            )));
        }
        let received: HashSet<&[u8]> = psi.chunks_exact(width).collect();
        let real = padded.real_elements();
        let phi = soprf::eval_oprf(&a, &key, real, params)?;
        let out: Vec<Element> = real
            .iter()
            .zip(&phi)
            .filter(|(_, v)| received.contains(v.as_bytes()))
            .map(|(x, _)| x.clone())
            .collect();
        phases.mark("intersect");
        info!("leader: {} of {} elements in the intersection", out.len(), real.len());
        Ok(out)
    })?;
    Ok(IntersectionResult {
        elements,
        report: report(cfg, ring, phases),
    })
}

pub fn run_middle_assistant(set: &[Element], cfg: &PartyConfig, ring: &mut Ring) -> Result<PartyReport> {
    expect_role(cfg, PartyRole::MiddleAssistant)?;
    let params = &cfg.params;
    let mut rng = cfg.rng();
    let mut phases = Phases::new();
    with_abort(ring, |ring| {
        let padded = pad_set(set, params, &mut rng)?;
        let s = sample_choices(cfg, &mut rng);
        let key = key_share(cfg, ring, &mut rng)?;
        phases.mark("setup");

        let seed_len = params.key_bytes();
        let sender = RotSender::start(cfg.rot, params.cols, params.rows, seed_len, &mut ring.next, &mut rng)?;
        let incoming = receive_batch(cfg.rot, &s, params.rows, seed_len, &mut ring.prev, &mut rng)?;
        let outgoing = sender.finish(&mut ring.next)?;
        phases.mark("ot");

        let di = soprf::build_occupancy(&padded.elements, &key, params)?;
        phases.mark("preprocess");

        let state = receive_hop(cfg, ring, &incoming)?;
        soprf::middle_hop_send(&state, &di, &outgoing, &mut ring.next)?;
        #[cfg(any(test, feature = "leak-trace"))]
        cfg.record(PartyTrace {
            index: cfg.index,
            choices: Some(state.s.clone()),
            matrix: state.c.clone(),
            occupancy: Some(di.matrix().clone()),
        });
        phases.mark("wheel");
        debug!("party {}: hop forwarded", cfg.index);
        Ok(())
    })?;
    Ok(report(cfg, ring, phases))
}

pub fn run_terminal_assistant(set: &[Element], cfg: &PartyConfig, ring: &mut Ring) -> Result<PartyReport> {
    expect_role(cfg, PartyRole::TerminalAssistant)?;
    let params = &cfg.params;
    let mut rng = cfg.rng();
    let mut phases = Phases::new();
    with_abort(ring, |ring| {
        let padded = pad_set(set, params, &mut rng)?;
        let s = sample_choices(cfg, &mut rng);
        let key = key_share(cfg, ring, &mut rng)?;
        phases.mark("setup");

        let incoming = receive_batch(cfg.rot, &s, params.rows, params.key_bytes(), &mut ring.prev, &mut rng)?;
        phases.mark("ot");

        let state = receive_hop(cfg, ring, &incoming)?;
        #[cfg(any(test, feature = "leak-trace"))]
        cfg.record(PartyTrace {
            index: cfg.index,
            choices: Some(state.s.clone()),
            matrix: state.c.clone(),
            occupancy: None,
        });
        phases.mark("wheel");

        let mut psi: Vec<OprfValue> = soprf::eval_oprf(&state.c, &key, &padded.elements, params)?;
        psi.shuffle(&mut rng);
        let payload: Vec<u8> = psi.iter().flat_map(|v| v.as_bytes().iter().copied()).collect();
        ring.next.send_frame(MsgType::Psi, &payload)?;
        phases.mark("oprf");
        Ok(())
    })?;
    Ok(report(cfg, ring, phases))
}

/// Output of [`run_party`]: the leader additionally learns the intersection.
#[derive(Debug, Clone)]
pub struct PartyOutput {
    pub intersection: Option<Vec<Element>>,
    pub report: PartyReport,
}

pub fn run_party(set: &[Element], cfg: &PartyConfig, ring: &mut Ring) -> Result<PartyOutput> {
    ring.prev.set_label(format!("{}<-{}", cfg.index, cfg.prev_index()));
    ring.next.set_label(format!("{}->{}", cfg.index, cfg.next_index()));
    Ok(match cfg.role() {
        PartyRole::Leader => {
            let r = run_leader(set, cfg, ring)?;
            PartyOutput {
                intersection: Some(r.elements),
                report: r.report,
            }
        }
        PartyRole::MiddleAssistant => PartyOutput {
            intersection: None,
            report: run_middle_assistant(set, cfg, ring)?,
        },
        PartyRole::TerminalAssistant => PartyOutput {
            intersection: None,
            report: run_terminal_assistant(set, cfg, ring)?,
        },
    })
}
