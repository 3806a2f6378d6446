//! Protocol sessions producing a [`SessionTranscript`].
//!
//! Every protocol is a per-pulse kernel; the session runner splits the pulse
//! range into chunks, gives each chunk a forked generator and concatenates
//! the chunk outputs in order.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::adversary::{
    self, AdversaryError, AttackContext, BasisPolicy, Disclosure, EveEntry, EveRecord, EveStrategy, Path,
};
use crate::bell::{ChshSamples, ChshSettings};
use crate::bits::BitString;
use crate::exec::{chunk_ranges, map_indexed, Exec};
use crate::quantum::{
    measure_spin, planar_direction, sample_singlet, scale, thin, Basis, BasisName, ChannelModel, Detection,
    DetectorModel, PhotonPulse, QuantumError, SignalState, SourceModel,
};
use crate::rng::SimRng;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("invalid protocol configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    Bb84,
    /// Two non-orthogonal states with `|⟨φ0|φ1⟩| = overlap`.
    B92 { overlap: f64 },
    SixState,
    Sarg,
    DecoyBb84 {
        signal_mu: f64,
        decoy_mu: f64,
        decoy_fraction: f64,
    },
    Bbm92,
    E91,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Bb84 => "bb84",
            Protocol::B92 { .. } => "b92",
            Protocol::SixState => "six_state",
            Protocol::Sarg => "sarg",
            Protocol::DecoyBb84 { .. } => "decoy_bb84",
            Protocol::Bbm92 => "bbm92",
            Protocol::E91 => "e91",
        }
    }

    pub fn is_entanglement_based(&self) -> bool {
        matches!(self, Protocol::Bbm92 | Protocol::E91)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    pub num_pulses: usize,
    /// Probability of the primary basis; the remaining bases share the rest.
    #[serde(default)]
    pub basis_bias: Option<f64>,
    #[serde(default)]
    pub exec: Exec,
}

impl ProtocolConfig {
    pub fn new(protocol: Protocol, num_pulses: usize) -> Self {
        Self {
            protocol,
            num_pulses,
            basis_bias: None,
            exec: Exec::default(),
        }
    }

    pub fn with_bias(mut self, bias: f64) -> Self {
        self.basis_bias = Some(bias);
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.num_pulses == 0 {
            return Err(ProtocolError::Config("num_pulses must be positive".into()));
        }
        if let Some(b) = self.basis_bias {
            if !(b > 0.0 && b < 1.0) {
                return Err(ProtocolError::Config(format!("basis_bias {b} outside (0, 1)")));
            }
        }
        match self.protocol {
            Protocol::B92 { overlap } if !(overlap > 0.0 && overlap < 1.0) => {
                Err(ProtocolError::Config(format!("B92 overlap {overlap} outside (0, 1)")))
            }
            Protocol::DecoyBb84 {
                signal_mu,
                decoy_mu,
                decoy_fraction,
            } => {
                if !(decoy_fraction > 0.0 && decoy_fraction < 1.0) {
                    Err(ProtocolError::Config(format!("decoy_fraction {decoy_fraction} outside (0, 1)")))
                } else if !(signal_mu > 0.0 && decoy_mu > 0.0) {
                    Err(ProtocolError::Config("intensities must be positive".into()))
                } else if signal_mu == decoy_mu {
                    Err(ProtocolError::Config("signal_mu must differ from decoy_mu".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Source, channel and detector of one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Link {
    pub source: SourceModel,
    pub channel: ChannelModel,
    pub detector: DetectorModel,
}


impl Link {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.source.validate()?;
        self.channel.validate()?;
        self.detector.validate()?;
        Ok(())
    }
}

/// Sequence of small symbols (basis indices, announcements), serialized as a
/// digit string.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Symbols(pub Vec<u8>);

impl Serialize for Symbols {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let text: String = self.0.iter().map(|&d| char::from(b'0' + d)).collect();
        s.serialize_str(&text)
    }
}

impl<'de> Deserialize<'de> for Symbols {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.bytes()
            .map(|b| match b {
                b'0'..=b'9' => Ok(b - b'0'),
                _ => Err(serde::de::Error::custom(format!("bad symbol {:?}", b as char))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Symbols)
    }
}

/// Bob's per-pulse outcomes, serialized as `-` (no click), `0`, `1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outcomes(pub Vec<Detection>);

impl Serialize for Outcomes {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let text: String = self
            .0
            .iter()
            .map(|d| match d {
                Detection::NoClick => '-',
                Detection::Click(false) => '0',
                Detection::Click(true) => '1',
            })
            .collect();
        s.serialize_str(&text)
    }
}

impl<'de> Deserialize<'de> for Outcomes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.chars()
            .map(|c| match c {
                '-' => Ok(Detection::NoClick),
                '0' => Ok(Detection::Click(false)),
                '1' => Ok(Detection::Click(true)),
                other => Err(serde::de::Error::custom(format!("bad outcome {other:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Outcomes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntensityCounter {
    pub mu: f64,
    pub sent: u64,
    pub detected: u64,
    pub sifted: u64,
    pub errors: u64,
}

impl IntensityCounter {
    /// Empirical gain `Q_μ`.
    pub fn gain(&self) -> f64 {
        if self.sent == 0 {
            0.0
        } else {
            self.detected as f64 / self.sent as f64
        }
    }

    pub fn qber(&self) -> Option<f64> {
        (self.sifted > 0).then(|| self.errors as f64 / self.sifted as f64)
    }

    fn add(&mut self, other: &IntensityCounter) {
        self.sent += other.sent;
        self.detected += other.detected;
        self.sifted += other.sifted;
        self.errors += other.errors;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DecoyCounters {
    pub signal: IntensityCounter,
    pub decoy: IntensityCounter,
}

/// Full record of one protocol run.
///
/// `alice_bits[i]` is the key-bit value Alice associates with pulse `i`
/// (for SARG the basis, for entanglement-based runs her outcome). Basis
/// symbols index the protocol's basis list: rectilinear/diagonal/circular
/// for prepare-and-measure protocols, Bob's projector choice for B92, and
/// the measurement-angle index for BBM92/E91.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub protocol: Protocol,
    pub pulse_count: usize,
    pub detection_count: usize,
    pub alice_bits: BitString,
    pub alice_bases: Symbols,
    /// Set bits mark decoy-intensity pulses.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alice_intensities: Option<BitString>,
    pub bob_bases: Symbols,
    pub bob_outcomes: Outcomes,
    /// SARG: index of the announced state pair per pulse.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub announcements: Option<Symbols>,
    pub sift_mask: BitString,
    pub sifted_alice: BitString,
    pub sifted_bob: BitString,
    pub eve: EveRecord,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub decoy: Option<DecoyCounters>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chsh: Option<ChshSamples>,
}

impl SessionTranscript {
    pub fn sifted_len(&self) -> usize {
        self.sifted_alice.len()
    }

    pub fn sifted_fraction(&self) -> f64 {
        self.sifted_len() as f64 / self.pulse_count as f64
    }

    pub fn detection_rate(&self) -> f64 {
        self.detection_count as f64 / self.pulse_count as f64
    }

    /// Mismatch rate of the full sifted keys.
    pub fn qber(&self) -> Option<f64> {
        if self.sifted_alice.is_empty() {
            return None;
        }
        let d = self.sifted_alice.hamming_distance(&self.sifted_bob).ok()?;
        Some(d as f64 / self.sifted_len() as f64)
    }

    pub fn eve_known_fraction(&self) -> f64 {
        self.eve.known_fraction()
    }

    /// Structural invariants every transcript satisfies.
    pub fn check_consistency(&self) -> Result<(), String> {
        let n = self.pulse_count;
        let lens = [
            ("alice_bits", self.alice_bits.len()),
            ("alice_bases", self.alice_bases.0.len()),
            ("bob_bases", self.bob_bases.0.len()),
            ("bob_outcomes", self.bob_outcomes.0.len()),
            ("sift_mask", self.sift_mask.len()),
            ("eve.entries", self.eve.entries.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(format!("{name} has length {len}, expected {n}"));
            }
        }
        let k = self.sift_mask.count_ones();
        if self.sifted_alice.len() != k || self.sifted_bob.len() != k {
            return Err("sifted key lengths differ from popcount(sift_mask)".into());
        }
        if self.eve.known_mask.len() != k || self.eve.known_bits.len() != k {
            return Err("Eve's knowledge does not cover the sifted key".into());
        }
        if self.detection_count > n {
            return Err("more detections than pulses".into());
        }
        if let Some(d) = &self.decoy {
            if (d.signal.sent + d.decoy.sent) as usize != n {
                return Err("decoy counters do not add up to pulse_count".into());
            }
        }
        Ok(())
    }
}

impl fmt::Display for SessionTranscript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} pulses, {} detections, {} sifted",
            self.protocol.name(),
            self.pulse_count,
            self.detection_count,
            self.sifted_len()
        )
    }
}

#[derive(Default)]
struct ChunkOut {
    alice_bits: BitString,
    alice_bases: Vec<u8>,
    intensities: BitString,
    bob_bases: Vec<u8>,
    outcomes: Vec<Detection>,
    announcements: Vec<u8>,
    eve: Vec<EveEntry>,
    sift_mask: BitString,
    sifted_alice: BitString,
    sifted_bob: BitString,
    known_mask: BitString,
    known_bits: BitString,
    detections: usize,
    decoy: DecoyCounters,
    chsh: Option<ChshSamples>,
}

impl ChunkOut {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        alice_bit: bool,
        alice_basis: u8,
        bob_basis: u8,
        outcome: Detection,
        eve: EveEntry,
        sift: Option<(bool, bool, Option<bool>)>,
    ) {
        self.alice_bits.push(alice_bit);
        self.alice_bases.push(alice_basis);
        self.bob_bases.push(bob_basis);
        self.outcomes.push(outcome);
        self.eve.push(eve);
        if outcome.clicked() {
            self.detections += 1;
        }
        self.sift_mask.push(sift.is_some());
        if let Some((a, b, known)) = sift {
            self.sifted_alice.push(a);
            self.sifted_bob.push(b);
            self.known_mask.push(known.is_some());
            self.known_bits.push(known.unwrap_or(false));
        }
    }
}

trait PulseKernel: Sync {
    fn pulse(&self, rng: &mut SimRng, out: &mut ChunkOut) -> Result<(), ProtocolError>;

    fn chsh_settings(&self) -> Option<ChshSettings> {
        None
    }
}

fn run_kernel<K: PulseKernel>(
    kernel: &K,
    cfg: &ProtocolConfig,
    decoy: Option<(f64, f64)>,
    rng: &SimRng,
) -> Result<SessionTranscript, ProtocolError> {
    let ranges = chunk_ranges(cfg.num_pulses);
    let chunks = map_indexed(ranges.len(), cfg.exec, |c| {
        let mut crng = rng.fork(c as u64);
        let mut out = ChunkOut {
            chsh: kernel.chsh_settings().map(ChshSamples::new),
            ..ChunkOut::default()
        };
        for _ in ranges[c].clone() {
            kernel.pulse(&mut crng, &mut out)?;
        }
        Ok::<_, ProtocolError>(out)
    });

    let mut t = SessionTranscript {
        protocol: cfg.protocol,
        pulse_count: cfg.num_pulses,
        detection_count: 0,
        alice_bits: BitString::with_capacity(cfg.num_pulses),
        alice_bases: Symbols::default(),
        alice_intensities: decoy.map(|_| BitString::with_capacity(cfg.num_pulses)),
        bob_bases: Symbols::default(),
        bob_outcomes: Outcomes::default(),
        announcements: matches!(cfg.protocol, Protocol::Sarg).then(Symbols::default),
        sift_mask: BitString::with_capacity(cfg.num_pulses),
        sifted_alice: BitString::default(),
        sifted_bob: BitString::default(),
        eve: EveRecord::default(),
        decoy: decoy.map(|(s, d)| DecoyCounters {
            signal: IntensityCounter { mu: s, ..Default::default() },
            decoy: IntensityCounter { mu: d, ..Default::default() },
        }),
        chsh: kernel.chsh_settings().map(ChshSamples::new),
    };
    for chunk in chunks {
        let c = chunk?;
        t.detection_count += c.detections;
        t.alice_bits.extend_from(&c.alice_bits);
        t.alice_bases.0.extend(c.alice_bases);
        t.bob_bases.0.extend(c.bob_bases);
        t.bob_outcomes.0.extend(c.outcomes);
        t.eve.entries.extend(c.eve);
        t.sift_mask.extend_from(&c.sift_mask);
        t.sifted_alice.extend_from(&c.sifted_alice);
        t.sifted_bob.extend_from(&c.sifted_bob);
        t.eve.known_mask.extend_from(&c.known_mask);
        t.eve.known_bits.extend_from(&c.known_bits);
        if let Some(a) = t.announcements.as_mut() {
            a.0.extend(c.announcements);
        }
        if let Some(i) = t.alice_intensities.as_mut() {
            i.extend_from(&c.intensities);
        }
        if let Some(d) = t.decoy.as_mut() {
            d.signal.add(&c.decoy.signal);
            d.decoy.add(&c.decoy.decoy);
        }
        if let (Some(s), Some(cs)) = (t.chsh.as_mut(), c.chsh.as_ref()) {
            s.merge(cs);
        }
    }
    Ok(t)
}

/// Sampling index `i` with probability `probs[i]`.
fn pick(probs: &[f64], rng: &mut SimRng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn basis_probs(count: usize, bias: Option<f64>) -> Vec<f64> {
    match bias {
        None => vec![1.0 / count as f64; count],
        Some(b) => {
            let rest = (1.0 - b) / (count - 1) as f64;
            std::iter::once(b).chain(std::iter::repeat_n(rest, count - 1)).collect()
        }
    }
}

/// Alice → Eve → channel → Bob's detector input.
struct Delivery<'a> {
    link: &'a Link,
    eve: EveStrategy,
    bases: Vec<Basis>,
    b92_overlap: Option<f64>,
}

impl Delivery<'_> {
    fn ctx(&self) -> AttackContext<'_> {
        AttackContext {
            signal_bases: &self.bases,
            channel_transmittance: self.link.channel.transmittance(),
            b92_overlap: self.b92_overlap,
        }
    }

    fn deliver(&self, pulse: PhotonPulse, rng: &mut SimRng) -> Result<(PhotonPulse, EveEntry), ProtocolError> {
        let (fwd, entry) = self.eve.attack(pulse, &self.ctx(), rng)?;
        let arriving = match fwd.path {
            Path::Channel => self.link.channel.transmit(fwd.pulse, rng),
            Path::Residual { transmittance } => self.link.channel.transmit_with(fwd.pulse, transmittance, rng),
            Path::Direct => fwd.pulse,
        };
        Ok((arriving, entry))
    }
}

fn prepare<'a>(
    cfg: &ProtocolConfig,
    link: &'a Link,
    eve: &EveStrategy,
    bases: Vec<Basis>,
    b92_overlap: Option<f64>,
    tuning_source: SourceModel,
) -> Result<Delivery<'a>, ProtocolError> {
    cfg.validate()?;
    link.validate()?;
    let mut d = Delivery {
        link,
        eve: *eve,
        bases,
        b92_overlap,
    };
    d.eve = eve.resolved(&d.ctx(), &tuning_source, &link.detector)?;
    Ok(d)
}

fn expect_protocol(cfg: &ProtocolConfig, ok: bool) -> Result<(), ProtocolError> {
    if ok {
        Ok(())
    } else {
        Err(ProtocolError::Config(format!(
            "configuration is for {}, not this protocol",
            cfg.protocol.name()
        )))
    }
}

/// BB84, six-state and decoy BB84 share one kernel over a list of bases.
struct ConjugateBases<'a> {
    delivery: Delivery<'a>,
    probs: Vec<f64>,
    decoy: Option<(f64, f64, f64)>,
}

impl PulseKernel for ConjugateBases<'_> {
    fn pulse(&self, rng: &mut SimRng, out: &mut ChunkOut) -> Result<(), ProtocolError> {
        let d = &self.delivery;
        let ab = pick(&self.probs, rng);
        let bit = rng.bit();
        let (is_decoy, n) = match self.decoy {
            Some((s, dm, frac)) => {
                let is_decoy = rng.bernoulli(frac);
                let mu = if is_decoy { dm } else { s };
                (is_decoy, SourceModel::AttenuatedLaser { mu }.sample_photon_number(rng))
            }
            None => (false, d.link.source.sample_photon_number(rng)),
        };
        let state = d.bases[ab].state(bit);
        let (arriving, entry) = d.deliver(PhotonPulse::new(n, state), rng)?;
        let bb = pick(&self.probs, rng);
        let outcome = d.link.detector.measure(&arriving, &d.bases[bb], rng);

        let matched = outcome.clicked() && ab == bb;
        if self.decoy.is_some() {
            out.intensities.push(is_decoy);
            let c = if is_decoy { &mut out.decoy.decoy } else { &mut out.decoy.signal };
            c.sent += 1;
            if outcome.clicked() {
                c.detected += 1;
            }
            if matched {
                c.sifted += 1;
                if outcome.bit() != Some(bit) {
                    c.errors += 1;
                }
            }
        }
        // decoy pulses never enter the key
        let sift = if matched && !is_decoy {
            let known = adversary::resolve(&entry, &state, &Disclosure::Basis(d.bases[ab]), rng);
            Some((bit, outcome.bit().unwrap_or(false), known))
        } else {
            None
        };
        out.record(bit, ab as u8, bb as u8, outcome, entry, sift);
        Ok(())
    }
}

fn bb84_bases() -> Vec<Basis> {
    vec![Basis::rectilinear(), Basis::diagonal()]
}

/// BB84 with two conjugate bases: bit 0 ↦ |H⟩/|A⟩, bit 1 ↦ |V⟩/|D⟩.
pub fn run_bb84(cfg: &ProtocolConfig, link: &Link, eve: &EveStrategy, rng: &SimRng) -> Result<SessionTranscript, ProtocolError> {
    expect_protocol(cfg, cfg.protocol == Protocol::Bb84)?;
    let delivery = prepare(cfg, link, eve, bb84_bases(), None, link.source)?;
    let kernel = ConjugateBases {
        probs: basis_probs(2, cfg.basis_bias),
        delivery,
        decoy: None,
    };
    run_kernel(&kernel, cfg, None, rng)
}

/// Six-state protocol over the rectilinear, diagonal and circular bases.
pub fn run_six_state(
    cfg: &ProtocolConfig,
    link: &Link,
    eve: &EveStrategy,
    rng: &SimRng,
) -> Result<SessionTranscript, ProtocolError> {
    expect_protocol(cfg, cfg.protocol == Protocol::SixState)?;
    let bases = vec![Basis::rectilinear(), Basis::diagonal(), Basis::circular()];
    let delivery = prepare(cfg, link, eve, bases, None, link.source)?;
    let kernel = ConjugateBases {
        probs: basis_probs(3, cfg.basis_bias),
        delivery,
        decoy: None,
    };
    run_kernel(&kernel, cfg, None, rng)
}

/// BB84 with weak pulses whose mean photon number is randomly switched
/// between a signal and a decoy intensity. The link's source is ignored.
pub fn run_decoy_bb84(
    cfg: &ProtocolConfig,
    link: &Link,
    eve: &EveStrategy,
    rng: &SimRng,
) -> Result<SessionTranscript, ProtocolError> {
    let Protocol::DecoyBb84 {
        signal_mu,
        decoy_mu,
        decoy_fraction,
    } = cfg.protocol
    else {
        return expect_protocol(cfg, false).map(|_| unreachable!());
    };
    let signal = SourceModel::AttenuatedLaser { mu: signal_mu };
    let delivery = prepare(cfg, link, eve, bb84_bases(), None, signal)?;
    let kernel = ConjugateBases {
        probs: basis_probs(2, cfg.basis_bias),
        delivery,
        decoy: Some((signal_mu, decoy_mu, decoy_fraction)),
    };
    run_kernel(&kernel, cfg, Some((signal_mu, decoy_mu)), rng)
}

struct B92Kernel<'a> {
    delivery: Delivery<'a>,
    states: [SignalState; 2],
}

impl PulseKernel for B92Kernel<'_> {
    fn pulse(&self, rng: &mut SimRng, out: &mut ChunkOut) -> Result<(), ProtocolError> {
        let d = &self.delivery;
        let bit = rng.bit();
        let n = d.link.source.sample_photon_number(rng);
        let state = self.states[bit as usize];
        let (arriving, entry) = d.deliver(PhotonPulse::new(n, state), rng)?;
        // projector j tests "not φ_{1−j}"; its first vector is φ_{1−j}⊥
        let j = rng.bit();
        let outcome = d.link.detector.measure(&arriving, &d.bases[j as usize], rng);
        let sift = if outcome == Detection::Click(false) {
            let known = adversary::resolve(&entry, &state, &Disclosure::Pair(self.states), rng);
            Some((bit, j, known))
        } else {
            None
        };
        out.record(bit, 0, j as u8, outcome, entry, sift);
        Ok(())
    }
}

/// Bob's two B92 measurements: `[φ1⊥, φ1]` (conclusive ⇒ 0) and `[φ0⊥, φ0]`.
pub fn b92_measurement_bases(overlap: f64) -> [Basis; 2] {
    let s = SignalState::b92_pair(overlap);
    [Basis::containing(s[1].orthogonal()), Basis::containing(s[0].orthogonal())]
}

/// B92 with two non-orthogonal states; only conclusive detections are kept.
pub fn run_b92(cfg: &ProtocolConfig, link: &Link, eve: &EveStrategy, rng: &SimRng) -> Result<SessionTranscript, ProtocolError> {
    let Protocol::B92 { overlap } = cfg.protocol else {
        return expect_protocol(cfg, false).map(|_| unreachable!());
    };
    cfg.validate()?;
    let delivery = prepare(cfg, link, eve, b92_measurement_bases(overlap).to_vec(), Some(overlap), link.source)?;
    let kernel = B92Kernel {
        delivery,
        states: SignalState::b92_pair(overlap),
    };
    run_kernel(&kernel, cfg, None, rng)
}

/// SARG04 states in cyclic order; consecutive entries are non-orthogonal and
/// form the four announcement pairs `{H,A}, {A,V}, {V,D}, {D,H}`.
pub fn sarg_states() -> [SignalState; 4] {
    [
        SignalState::horizontal(),
        SignalState::antidiagonal(),
        SignalState::vertical(),
        SignalState::diagonal(),
    ]
}

pub fn sarg_pair(index: usize) -> [SignalState; 2] {
    let s = sarg_states();
    [s[index % 4], s[(index + 1) % 4]]
}

struct SargKernel<'a> {
    delivery: Delivery<'a>,
}

impl PulseKernel for SargKernel<'_> {
    fn pulse(&self, rng: &mut SimRng, out: &mut ChunkOut) -> Result<(), ProtocolError> {
        let d = &self.delivery;
        let ab = rng.bit() as usize;
        let value = rng.bit();
        // cyclic index: H=0, A=1, V=2, D=3; parity = basis = key bit
        let s = 2 * value as usize + ab;
        let state = sarg_states()[s];
        let n = d.link.source.sample_photon_number(rng);
        let (arriving, entry) = d.deliver(PhotonPulse::new(n, state), rng)?;
        let bb = rng.bit() as usize;
        let outcome = d.link.detector.measure(&arriving, &d.bases[bb], rng);
        let pair_index = if rng.bit() { s } else { (s + 3) % 4 };
        let pair = sarg_pair(pair_index);
        out.announcements.push(pair_index as u8);

        let sift = outcome.bit().and_then(|b| {
            let seen = d.bases[bb].state(b);
            let excluded = pair.iter().position(|p| p.overlap_sq(&seen) < 1e-9)?;
            let inferred = (pair_index + 1 - excluded) % 4;
            let known = adversary::resolve(&entry, &state, &Disclosure::Pair(pair), rng)
                .map(|idx| (pair_index + idx as usize) % 2 == 1);
            Some((ab == 1, inferred % 2 == 1, known))
        });
        out.record(ab == 1, ab as u8, bb as u8, outcome, entry, sift);
        Ok(())
    }
}

/// SARG04: BB84 hardware, key bit = basis, sifting through announced
/// non-orthogonal state pairs.
pub fn run_sarg(cfg: &ProtocolConfig, link: &Link, eve: &EveStrategy, rng: &SimRng) -> Result<SessionTranscript, ProtocolError> {
    expect_protocol(cfg, cfg.protocol == Protocol::Sarg)?;
    let delivery = prepare(cfg, link, eve, bb84_bases(), None, link.source)?;
    run_kernel(&SargKernel { delivery }, cfg, None, rng)
}

struct PairKernel<'a> {
    link: &'a Link,
    eve: EveStrategy,
    alice_angles: Vec<f64>,
    bob_angles: Vec<f64>,
    chsh: Option<ChshSettings>,
}

impl PairKernel<'_> {
    fn chsh_pair(&self, a: f64, b: f64) -> Option<usize> {
        let s = self.chsh?;
        s.pairs().iter().position(|&(x, y)| x == a && y == b)
    }
}

impl PulseKernel for PairKernel<'_> {
    fn chsh_settings(&self) -> Option<ChshSettings> {
        self.chsh
    }

    fn pulse(&self, rng: &mut SimRng, out: &mut ChunkOut) -> Result<(), ProtocolError> {
        let ia = rng.below(self.alice_angles.len() as u64) as usize;
        let ib = rng.below(self.bob_angles.len() as u64) as usize;
        let (aa, ba) = (self.alice_angles[ia], self.bob_angles[ib]);
        let (na, nb) = (planar_direction(aa), planar_direction(ba));
        let emitted = self.link.source.sample_photon_number(rng) > 0;

        let mut entry = EveEntry::default();
        let mut alice = None;
        let mut bob_hit = None;
        if emitted {
            match self.eve {
                EveStrategy::None => {
                    let (a, b) = sample_singlet(&na, &nb, rng)?;
                    alice = Some(a);
                    // Bob's particle through the channel
                    if thin(1, self.link.channel.transmittance(), rng) == 1 {
                        let flip = rng.bernoulli(self.link.channel.misalignment);
                        bob_hit = Some(if flip { -b } else { b });
                    }
                }
                EveStrategy::InterceptResend { basis_policy } => {
                    let m_angle = match basis_policy {
                        BasisPolicy::UniformSignalBases => {
                            self.bob_angles[rng.below(self.bob_angles.len() as u64) as usize]
                        }
                        BasisPolicy::Fixed(BasisName::Rectilinear) => 0.0,
                        BasisPolicy::Fixed(BasisName::Diagonal) => 90.0,
                        BasisPolicy::Fixed(other) => {
                            return Err(ProtocolError::Config(format!(
                                "fixed basis {other:?} has no spin direction"
                            )))
                        }
                    };
                    let m = planar_direction(m_angle);
                    let e: i8 = if rng.bit() { 1 } else { -1 };
                    // Alice's particle collapses to −e along m; Eve resends +e along m
                    alice = Some(measure_spin(&scale(&m, -(e as f64)), &na, rng));
                    bob_hit = Some(measure_spin(&scale(&m, e as f64), &nb, rng));
                    entry.measured_angle_deg = Some(m_angle);
                    entry.measured_bit = Some(e == 1);
                }
                other => {
                    return Err(ProtocolError::Config(format!(
                        "strategy {other:?} is not supported on entangled pairs"
                    )))
                }
            }
        }
        let det = &self.link.detector;
        let mut fire = [false; 2];
        if let Some(b) = bob_hit {
            if rng.bernoulli(det.efficiency) {
                fire[(b < 0) as usize] = true;
            }
        }
        let outcome = det.register(fire, rng);
        let alice_bit = alice.map(|a| a < 0).unwrap_or(false);

        let sift = match (alice, outcome) {
            (Some(_), Detection::Click(bbit)) if aa == ba => {
                let known = entry
                    .measured_angle_deg
                    .filter(|&m| m == aa)
                    .and(entry.measured_bit);
                // anti-correlated outcomes: Bob inverts his bit
                Some((alice_bit, !bbit, known))
            }
            _ => None,
        };
        if let (Some(a), Detection::Click(bbit), Some(k)) = (alice, outcome, self.chsh_pair(aa, ba)) {
            if let Some(c) = out.chsh.as_mut() {
                c.record(k, a, if bbit { -1 } else { 1 });
            }
        }
        out.record(alice_bit, ia as u8, ib as u8, outcome, entry, sift);
        Ok(())
    }
}

fn run_pairs(
    cfg: &ProtocolConfig,
    link: &Link,
    eve: &EveStrategy,
    rng: &SimRng,
    alice_angles: Vec<f64>,
    bob_angles: Vec<f64>,
    chsh: Option<ChshSettings>,
) -> Result<SessionTranscript, ProtocolError> {
    cfg.validate()?;
    link.validate()?;
    if !matches!(eve, EveStrategy::None | EveStrategy::InterceptResend { .. }) {
        return Err(ProtocolError::Config(
            "entangled sessions support only no eavesdropper or intercept-resend".into(),
        ));
    }
    let kernel = PairKernel {
        link,
        eve: *eve,
        alice_angles,
        bob_angles,
        chsh,
    };
    run_kernel(&kernel, cfg, None, rng)
}

/// BBM92: both parties measure their half of a singlet along 0° or 90°
/// (spin directions, i.e. the two conjugate polarization bases).
pub fn run_bbm92(cfg: &ProtocolConfig, link: &Link, eve: &EveStrategy, rng: &SimRng) -> Result<SessionTranscript, ProtocolError> {
    expect_protocol(cfg, cfg.protocol == Protocol::Bbm92)?;
    run_pairs(cfg, link, eve, rng, vec![0.0, 90.0], vec![0.0, 90.0], None)
}

/// E91: Alice at 0°/45°/90°, Bob at 45°/90°/135°. Matching angles form the
/// key; the four CHSH combinations are collected in `chsh`.
pub fn run_e91(cfg: &ProtocolConfig, link: &Link, eve: &EveStrategy, rng: &SimRng) -> Result<SessionTranscript, ProtocolError> {
    expect_protocol(cfg, cfg.protocol == Protocol::E91)?;
    run_pairs(
        cfg,
        link,
        eve,
        rng,
        vec![0.0, 45.0, 90.0],
        vec![45.0, 90.0, 135.0],
        Some(ChshSettings::maximal_violation()),
    )
}

/// Dispatches on `cfg.protocol`.
pub fn run_session(cfg: &ProtocolConfig, link: &Link, eve: &EveStrategy, rng: &SimRng) -> Result<SessionTranscript, ProtocolError> {
    match cfg.protocol {
        Protocol::Bb84 => run_bb84(cfg, link, eve, rng),
        Protocol::B92 { .. } => run_b92(cfg, link, eve, rng),
        Protocol::SixState => run_six_state(cfg, link, eve, rng),
        Protocol::Sarg => run_sarg(cfg, link, eve, rng),
        Protocol::DecoyBb84 { .. } => run_decoy_bb84(cfg, link, eve, rng),
        Protocol::Bbm92 => run_bbm92(cfg, link, eve, rng),
        Protocol::E91 => run_e91(cfg, link, eve, rng),
    }
}
