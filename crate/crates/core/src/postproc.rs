//! Classical post-processing over an authenticated public channel.
//!
//! Error estimation, BBBSS reconciliation, Toeplitz privacy amplification,
//! repeat-code advantage distillation, one-time-pad authentication over
//! GF(p), and the pipeline that chains them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{BitString, BitsError};
use crate::protocols::{Protocol, SessionTranscript};
use crate::rates;
use crate::rng::SimRng;

#[derive(Debug, Error, PartialEq)]
pub enum PostprocError {
    #[error(transparent)]
    Bits(#[from] BitsError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sample is empty")]
    EmptySample,
    #[error("no secure key extractable: n = {n}, k = {k}, s = {s}")]
    NoSecureKey { n: usize, k: usize, s: usize },
    #[error("one-time pad pool exhausted ({available} bits left, {needed} needed); refill from distilled key")]
    RefillRequired { needed: usize, available: usize },
    #[error("message of {symbols} symbols exceeds authentication capacity {capacity}")]
    MessageTooLong { symbols: usize, capacity: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AliceToBob,
    BobToAlice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    /// Positions and values sacrificed for error estimation.
    Sample,
    /// Shared public randomness (permutations, subsets, hash seeds).
    Randomness,
    /// A parity of the key. Each one leaks a bit.
    Parity,
    /// Match / mismatch reply to a parity.
    Reply,
    Distillation,
    Tag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicMessage {
    pub direction: Direction,
    pub purpose: Purpose,
    pub payload: BitString,
}

/// Everything said in public, in order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PublicChannelLog {
    pub messages: Vec<PublicMessage>,
    pub leaked_parity_count: usize,
}

impl PublicChannelLog {
    pub fn send(&mut self, direction: Direction, purpose: Purpose, payload: BitString) {
        if purpose == Purpose::Parity {
            self.leaked_parity_count += 1;
        }
        self.messages.push(PublicMessage {
            direction,
            purpose,
            payload,
        });
    }

    fn parity(&mut self, bit: bool) {
        self.send(Direction::AliceToBob, Purpose::Parity, BitString::from_bools([bit]));
    }

    fn reply(&mut self, matches: bool) {
        self.send(Direction::BobToAlice, Purpose::Reply, BitString::from_bools([matches]));
    }

    pub fn append(&mut self, other: PublicChannelLog) {
        self.leaked_parity_count += other.leaked_parity_count;
        self.messages.extend(other.messages);
    }

    pub fn parity_messages(&self) -> usize {
        self.messages.iter().filter(|m| m.purpose == Purpose::Parity).count()
    }

    /// Concatenated payloads sent in `direction`, for authentication.
    pub fn transcript(&self, direction: Direction) -> BitString {
        let mut out = BitString::default();
        for m in self.messages.iter().filter(|m| m.direction == direction) {
            out.extend_from(&m.payload);
        }
        out
    }
}

fn check_lengths(a: &BitString, b: &BitString) -> Result<(), PostprocError> {
    if a.len() != b.len() {
        return Err(BitsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        }
        .into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QberEstimate {
    pub epsilon: f64,
    /// Sorted positions disclosed during estimation.
    pub disclosed: Vec<usize>,
}

/// Compares `⌈fraction·n⌉` random positions in public.
pub fn estimate_qber(
    alice: &BitString,
    bob: &BitString,
    sample_fraction: f64,
    rng: &mut SimRng,
) -> Result<QberEstimate, PostprocError> {
    check_lengths(alice, bob)?;
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(PostprocError::InvalidParameter(format!(
            "sample_fraction {sample_fraction} outside (0, 1]"
        )));
    }
    let n = alice.len();
    let k = ((sample_fraction * n as f64).ceil() as usize).min(n);
    if k == 0 {
        return Err(PostprocError::EmptySample);
    }
    let mut positions = if k == n {
        (0..n).collect()
    } else {
        let mut p = rng.permutation(n);
        p.truncate(k);
        p
    };
    positions.sort_unstable();
    let errors = positions.iter().filter(|&&i| alice.get(i) != bob.get(i)).count();
    Ok(QberEstimate {
        epsilon: errors as f64 / k as f64,
        disclosed: positions,
    })
}

/// Removes sorted `positions` from `bits`.
pub fn remove_positions(bits: &BitString, positions: &[usize]) -> BitString {
    let mut out = BitString::with_capacity(bits.len() - positions.len());
    let mut next = positions.iter().peekable();
    for (i, b) in bits.iter().enumerate() {
        if next.peek() == Some(&&i) {
            next.next();
        } else {
            out.push(b);
        }
    }
    out
}

pub const BBBSS_BLOCK_PASSES: usize = 4;
pub const BBBSS_CLEAN_SUBSETS: usize = 20;

/// `max(2, ⌊0.73/ε⌋)`
pub fn initial_block_size(epsilon: f64) -> usize {
    ((0.73 / epsilon).floor() as usize).max(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconciliationResult {
    pub corrected_alice: BitString,
    pub corrected_bob: BitString,
    pub leaked_bits: usize,
    pub rounds: usize,
    /// Probability that errors survive the final verification.
    pub residual_error_estimate: f64,
    pub converged: bool,
    pub log: PublicChannelLog,
}

fn parity_of(bits: &BitString, positions: &[usize]) -> bool {
    positions.iter().fold(false, |acc, &p| acc ^ bits.get(p))
}

/// Locates one error in `positions` (known to hold an odd number of them)
/// by halving, and flips it in `bob`.
fn bisect(alice: &BitString, bob: &mut BitString, mut positions: &[usize], log: &mut PublicChannelLog) {
    while positions.len() > 1 {
        let (left, right) = positions.split_at(positions.len() / 2);
        let pa = parity_of(alice, left);
        log.parity(pa);
        let same = pa == parity_of(bob, left);
        log.reply(same);
        positions = if same { right } else { left };
    }
    bob.flip(positions[0]);
}

/// BBBSS reconciliation: block passes over random permutations with
/// doubling block size, then random-subset parities until
/// [`BBBSS_CLEAN_SUBSETS`] consecutive subsets agree. `max_passes` bounds
/// the subset rounds; hitting it yields `converged = false`.
pub fn bbbss_correct(
    alice: &BitString,
    bob: &BitString,
    epsilon: f64,
    rng: &mut SimRng,
    max_passes: usize,
) -> Result<ReconciliationResult, PostprocError> {
    check_lengths(alice, bob)?;
    if !(0.0..0.5).contains(&epsilon) {
        return Err(PostprocError::InvalidParameter(format!("epsilon {epsilon} outside [0, 0.5)")));
    }
    let n = alice.len();
    let mut bob = bob.clone();
    let mut log = PublicChannelLog::default();
    let mut rounds = 0;

    if epsilon > 0.0 && n > 0 {
        let mut k = initial_block_size(epsilon);
        for _ in 0..BBBSS_BLOCK_PASSES {
            let perm = rng.permutation(n);
            log.send(Direction::AliceToBob, Purpose::Randomness, BitString::default());
            for block in perm.chunks(k) {
                let pa = parity_of(alice, block);
                log.parity(pa);
                let same = pa == parity_of(&bob, block);
                log.reply(same);
                if !same {
                    bisect(alice, &mut bob, block, &mut log);
                }
            }
            rounds += 1;
            if k >= n {
                break;
            }
            k *= 2;
        }
    }

    let mut clean = 0;
    let mut subset_rounds = 0;
    let mut subset = Vec::with_capacity(n / 2 + 1);
    while clean < BBBSS_CLEAN_SUBSETS && n > 0 {
        if subset_rounds == max_passes {
            break;
        }
        subset_rounds += 1;
        subset.clear();
        subset.extend((0..n).filter(|_| rng.bit()));
        log.send(Direction::AliceToBob, Purpose::Randomness, BitString::default());
        let pa = parity_of(alice, &subset);
        log.parity(pa);
        let same = pa == parity_of(&bob, &subset);
        log.reply(same);
        if same {
            clean += 1;
        } else {
            clean = 0;
            bisect(alice, &mut bob, &subset, &mut log);
        }
    }
    rounds += subset_rounds;
    let converged = n == 0 || clean >= BBBSS_CLEAN_SUBSETS;
    Ok(ReconciliationResult {
        corrected_alice: alice.clone(),
        corrected_bob: bob,
        leaked_bits: log.leaked_parity_count,
        rounds,
        residual_error_estimate: if converged { 0.5f64.powi(BBBSS_CLEAN_SUBSETS as i32) } else { 1.0 },
        converged,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplifiedKey {
    pub key: BitString,
    /// Public Toeplitz seed (`n + r − 1` bits).
    pub seed: BitString,
}

/// Multiplies `key` by the `r × n` Toeplitz matrix whose entry `(i, j)` is
/// `seed[r − 1 − i + j]`.
pub fn toeplitz_hash(key: &BitString, seed: &BitString, r: usize) -> Result<BitString, PostprocError> {
    let n = key.len();
    if r == 0 || seed.len() != n + r - 1 {
        return Err(PostprocError::InvalidParameter(format!(
            "seed of {} bits for a {r} x {n} Toeplitz matrix",
            seed.len()
        )));
    }
    Ok(BitString::from_bools((0..r).map(|i| key.and_parity_window(seed, r - 1 - i))))
}

/// Compresses an `n`-bit key to `r = n − k − s` bits with a random Toeplitz
/// matrix.
pub fn privacy_amplify(key: &BitString, k: usize, s: usize, rng: &mut SimRng) -> Result<AmplifiedKey, PostprocError> {
    let n = key.len();
    if k + s >= n {
        return Err(PostprocError::NoSecureKey { n, k, s });
    }
    let r = n - k - s;
    let seed = BitString::random(n + r - 1, rng);
    let key = toeplitz_hash(key, &seed, r)?;
    Ok(AmplifiedKey { key, seed })
}

/// Probability that Eve guesses the XOR of `N` bits right when she knows
/// each one with probability `(1+ε)/2`: `(1+ε^N)/2`.
pub fn parity_knowledge_probability(epsilon: f64, n: u32) -> f64 {
    0.5 * (1.0 + epsilon.powi(n as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillationResult {
    pub alice: BitString,
    pub bob: BitString,
    /// One bit per block.
    pub accepted: BitString,
    pub log: PublicChannelLog,
}

/// Repeat-code advantage distillation with blocks of `n` bits. A trailing
/// partial block is dropped.
pub fn advantage_distill(
    alice: &BitString,
    bob: &BitString,
    n: usize,
    rng: &mut SimRng,
) -> Result<DistillationResult, PostprocError> {
    check_lengths(alice, bob)?;
    if n < 2 {
        return Err(PostprocError::InvalidParameter(format!("block length {n} < 2")));
    }
    let blocks = alice.len() / n;
    let mut out = DistillationResult {
        alice: BitString::default(),
        bob: BitString::default(),
        accepted: BitString::with_capacity(blocks),
        log: PublicChannelLog::default(),
    };
    for b in 0..blocks {
        let c = rng.bit();
        let sent = BitString::from_bools((0..n).map(|j| alice.get(b * n + j) ^ c));
        let diffs: Vec<bool> = (0..n).map(|j| sent.get(j) ^ bob.get(b * n + j)).collect();
        let accept = diffs.iter().all(|&d| d == diffs[0]);
        out.log.send(Direction::AliceToBob, Purpose::Distillation, sent);
        out.log
            .send(Direction::BobToAlice, Purpose::Distillation, BitString::from_bools([accept]));
        out.accepted.push(accept);
        if accept {
            out.alice.push(c);
            out.bob.push(diffs[0]);
        }
    }
    Ok(out)
}

/// `(1−ε)^N + ε^N`
pub fn distillation_acceptance(epsilon: f64, n: u32) -> f64 {
    (1.0 - epsilon).powi(n as i32) + epsilon.powi(n as i32)
}

/// `ε^N / ((1−ε)^N + ε^N)`
pub fn distillation_error(epsilon: f64, n: u32) -> f64 {
    epsilon.powi(n as i32) / distillation_acceptance(epsilon, n)
}

/// Mersenne prime `2^61 − 1`.
pub const PRIME_61: u64 = (1 << 61) - 1;
/// Small prime for statistical checks of the deception probability.
pub const PRIME_251: u64 = 251;

fn mulmod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

fn powmod(mut a: u64, mut e: u64, p: u64) -> u64 {
    let mut r = 1 % p;
    a %= p;
    while e > 0 {
        if e & 1 == 1 {
            r = mulmod(r, a, p);
        }
        a = mulmod(a, a, p);
        e >>= 1;
    }
    r
}

/// Deterministic Miller–Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &b in &BASES {
        if n.is_multiple_of(b) {
            return n == b;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for &a in &BASES {
        let mut x = powmod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Shared secrets of an authentication code over GF(p).
///
/// The tag of a message `m ∈ GF(p)^d` (leading coordinate fixed to 1) is
/// `⟨password, m⟩ + pad mod p`, with a fresh pad drawn from the one-time-pad
/// pool for each tag. Two distinct messages are linearly independent, so
/// the pair of hash values is uniform over GF(p)² and a substitution
/// succeeds with probability `1/p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthConfig {
    pub prime: u64,
    pub degree: usize,
    pub password: Vec<u64>,
    pub otp_pool: BitString,
}

impl AuthConfig {
    pub fn new(prime: u64, password: Vec<u64>, otp_pool: BitString) -> Result<Self, PostprocError> {
        if !is_prime(prime) {
            return Err(PostprocError::InvalidParameter(format!("{prime} is not prime")));
        }
        if password.len() < 2 {
            return Err(PostprocError::InvalidParameter("degree must be at least 2".into()));
        }
        if password.iter().any(|&k| k >= prime) {
            return Err(PostprocError::InvalidParameter("password symbol outside GF(p)".into()));
        }
        Ok(Self {
            prime,
            degree: password.len(),
            password,
            otp_pool,
        })
    }

    /// Uniform password of the given degree and a random pad pool.
    pub fn generate(prime: u64, degree: usize, pool_bits: usize, rng: &mut SimRng) -> Result<Self, PostprocError> {
        let password = (0..degree).map(|_| rng.below(prime)).collect();
        Self::new(prime, password, BitString::random(pool_bits, rng))
    }

    /// Message bits carried by one symbol.
    pub fn symbol_bits(&self) -> usize {
        63 - self.prime.leading_zeros() as usize
    }

    /// Pad bits drawn per attempt.
    pub fn pad_bits(&self) -> usize {
        64 - (self.prime - 1).leading_zeros() as usize
    }

    /// Longest message in bits.
    pub fn capacity_bits(&self) -> usize {
        (self.degree - 2) * self.symbol_bits()
    }

    /// Degree needed for messages of up to `bits` bits.
    pub fn degree_for(prime: u64, bits: usize) -> usize {
        let c = 63 - prime.leading_zeros() as usize;
        2 + bits.div_ceil(c)
    }

    fn encode(&self, message: &BitString) -> Result<Vec<u64>, PostprocError> {
        let c = self.symbol_bits();
        let symbols = 2 + message.len().div_ceil(c);
        if symbols > self.degree {
            return Err(PostprocError::MessageTooLong {
                symbols,
                capacity: self.degree,
            });
        }
        let mut v = Vec::with_capacity(symbols);
        v.push(1);
        v.push(message.len() as u64 % self.prime);
        for start in (0..message.len()).step_by(c.max(1)) {
            let end = (start + c).min(message.len());
            let s = (start..end).fold(0u64, |acc, i| (acc << 1) | message.get(i) as u64);
            v.push(s);
        }
        Ok(v)
    }

    fn hash(&self, message: &BitString) -> Result<u64, PostprocError> {
        let m = self.encode(message)?;
        Ok(m.iter()
            .zip(&self.password)
            .fold(0u64, |acc, (&x, &k)| (acc + mulmod(x, k, self.prime)) % self.prime))
    }
}

/// One party's view of the authentication secrets: the configuration plus
/// how much of the pad pool has been retired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthState {
    pub config: AuthConfig,
    pub cursor: usize,
}

impl AuthState {
    pub fn new(config: AuthConfig) -> Self {
        Self { config, cursor: 0 }
    }

    pub fn remaining_pad_bits(&self) -> usize {
        self.config.otp_pool.len() - self.cursor
    }

    /// Next pad value, by rejection sampling of `⌈log₂ p⌉`-bit chunks.
    fn next_pad(&mut self) -> Result<u64, PostprocError> {
        let w = self.config.pad_bits();
        loop {
            if self.remaining_pad_bits() < w {
                return Err(PostprocError::RefillRequired {
                    needed: w,
                    available: self.remaining_pad_bits(),
                });
            }
            let v = (self.cursor..self.cursor + w).fold(0u64, |acc, i| (acc << 1) | self.config.otp_pool.get(i) as u64);
            self.cursor += w;
            if v < self.config.prime {
                return Ok(v);
            }
        }
    }

    /// Adds fresh pad material (e.g. taken from a distilled key).
    pub fn refill(&mut self, bits: &BitString) {
        self.config.otp_pool.extend_from(bits);
    }

    pub fn authenticate(&mut self, message: &BitString) -> Result<u64, PostprocError> {
        let h = self.config.hash(message)?;
        let pad = self.next_pad()?;
        Ok((h + pad) % self.config.prime)
    }

    /// Consumes the same pad segment as the matching `authenticate`.
    pub fn verify(&mut self, message: &BitString, tag: u64) -> Result<bool, PostprocError> {
        let h = self.config.hash(message)?;
        let pad = self.next_pad()?;
        Ok((h + pad) % self.config.prime == tag)
    }
}

/// How Eve's knowledge is charged before privacy amplification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EveBound {
    /// `k = 2ε·n`, the information of an individual intercept-resend attack.
    #[default]
    TwoEpsilon,
    /// `k = n·(1 − R − h(ε))` for the protocol's asymptotic rate formula.
    Formula,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub sample_fraction: f64,
    pub abort_threshold: f64,
    pub max_passes: usize,
    pub safety_bits: usize,
    pub eve_bound: EveBound,
    /// Multi-photon fraction for the weak-pulse formula bound.
    pub delta: Option<f64>,
    pub auth_prime: u64,
    pub otp_pool_bits: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            sample_fraction: 0.1,
            abort_threshold: 0.11,
            max_passes: 2000,
            safety_bits: 32,
            eve_bound: EveBound::TwoEpsilon,
            delta: None,
            auth_prime: PRIME_61,
            otp_pool_bits: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Estimation,
    Reconciliation,
    Amplification,
    Authentication,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortReason {
    pub stage: Stage,
    pub value: f64,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LeakedAccounting {
    pub sifted_bits: usize,
    pub sampled_bits: usize,
    pub parity_bits: usize,
    pub eve_bound_bits: usize,
    pub safety_bits: usize,
    pub otp_bits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalKeyResult {
    pub qber_estimate: Option<f64>,
    pub alice_key: BitString,
    pub bob_key: BitString,
    pub final_length: usize,
    pub keys_match: bool,
    pub leaked_accounting: LeakedAccounting,
    pub reconciliation_rounds: usize,
    pub abort_reason: Option<AbortReason>,
}

impl FinalKeyResult {
    fn aborted(qber: Option<f64>, acc: LeakedAccounting, rounds: usize, reason: AbortReason) -> Self {
        Self {
            qber_estimate: qber,
            alice_key: BitString::default(),
            bob_key: BitString::default(),
            final_length: 0,
            keys_match: false,
            leaked_accounting: acc,
            reconciliation_rounds: rounds,
            abort_reason: Some(reason),
        }
    }
}

/// Eve's knowledge in bits for an `n`-bit reconciled key.
pub fn eve_bound_bits(bound: EveBound, protocol: &Protocol, epsilon: f64, delta: Option<f64>, n: usize) -> usize {
    let per_bit = match bound {
        EveBound::TwoEpsilon => 2.0 * epsilon,
        EveBound::Formula => {
            let h = rates::binary_entropy(epsilon.clamp(0.0, 1.0)).unwrap_or(1.0);
            let r = match (protocol, delta) {
                (Protocol::SixState, _) => rates::rate_six_state(epsilon),
                (_, Some(d)) => rates::rate_gllp(epsilon, d),
                _ => rates::rate_shor_preskill(epsilon),
            };
            r.map(|r| 1.0 - r - h).unwrap_or(1.0)
        }
    };
    (per_bit.clamp(0.0, 1.0) * n as f64).ceil() as usize
}

fn authenticate_phase(
    alice: &mut AuthState,
    bob: &mut AuthState,
    log: &PublicChannelLog,
) -> Result<(bool, usize), PostprocError> {
    let mut used = 0;
    for dir in [Direction::AliceToBob, Direction::BobToAlice] {
        let (sender, receiver) = match dir {
            Direction::AliceToBob => (&mut *alice, &mut *bob),
            Direction::BobToAlice => (&mut *bob, &mut *alice),
        };
        let msg = log.transcript(dir);
        if msg.is_empty() {
            continue;
        }
        let before = sender.cursor;
        let tag = sender.authenticate(&msg)?;
        if !receiver.verify(&msg, tag)? {
            return Ok((false, used));
        }
        used += sender.cursor - before;
    }
    Ok((true, used))
}

/// Error estimation, reconciliation and privacy amplification on the sifted
/// keys of a transcript, with every phase of public discussion
/// authenticated. Pad bits used for tags are taken back from the final key.
pub fn run_pipeline(t: &SessionTranscript, params: &PipelineParams, rng: &mut SimRng) -> FinalKeyResult {
    let mut acc = LeakedAccounting {
        sifted_bits: t.sifted_len(),
        safety_bits: params.safety_bits,
        ..Default::default()
    };
    let abort = |stage, value, message: String| AbortReason { stage, value, message };

    let alice = &t.sifted_alice;
    let bob = &t.sifted_bob;
    let est = match estimate_qber(alice, bob, params.sample_fraction, rng) {
        Ok(e) => e,
        Err(e) => {
            return FinalKeyResult::aborted(None, acc, 0, abort(Stage::Estimation, 0.0, e.to_string()));
        }
    };
    let eps = est.epsilon;
    acc.sampled_bits = est.disclosed.len();
    if eps > params.abort_threshold {
        return FinalKeyResult::aborted(
            Some(eps),
            acc,
            0,
            abort(
                Stage::Estimation,
                eps,
                format!("estimated QBER {eps:.4} exceeds threshold {:.4}", params.abort_threshold),
            ),
        );
    }

    let a = remove_positions(alice, &est.disclosed);
    let b = remove_positions(bob, &est.disclosed);
    let n = a.len();

    // pre-shared secrets sized for the longest message (the Toeplitz seed)
    let degree = AuthConfig::degree_for(params.auth_prime, 2 * n + 64);
    let mut auth_a = match AuthConfig::generate(params.auth_prime, degree, params.otp_pool_bits, rng) {
        Ok(c) => AuthState::new(c),
        Err(e) => return FinalKeyResult::aborted(Some(eps), acc, 0, abort(Stage::Authentication, 0.0, e.to_string())),
    };
    let mut auth_b = auth_a.clone();

    let mut sample_log = PublicChannelLog::default();
    let mut mask = BitString::zeros(alice.len());
    for &p in &est.disclosed {
        mask.set(p, true);
    }
    sample_log.send(Direction::AliceToBob, Purpose::Sample, mask.clone());
    sample_log.send(Direction::AliceToBob, Purpose::Sample, alice.filter(&mask).unwrap_or_default());
    sample_log.send(Direction::BobToAlice, Purpose::Sample, bob.filter(&mask).unwrap_or_default());

    let mut phase = |log: &PublicChannelLog, acc: &mut LeakedAccounting| -> Option<AbortReason> {
        match authenticate_phase(&mut auth_a, &mut auth_b, log) {
            Ok((true, used)) => {
                acc.otp_bits += used;
                None
            }
            Ok((false, _)) => Some(abort(Stage::Authentication, 0.0, "tag verification failed".into())),
            Err(e) => Some(abort(Stage::Authentication, 0.0, e.to_string())),
        }
    };
    if let Some(r) = phase(&sample_log, &mut acc) {
        return FinalKeyResult::aborted(Some(eps), acc, 0, r);
    }

    let rec = match bbbss_correct(&a, &b, eps.min(0.499), rng, params.max_passes) {
        Ok(r) => r,
        Err(e) => {
            return FinalKeyResult::aborted(Some(eps), acc, 0, abort(Stage::Reconciliation, eps, e.to_string()));
        }
    };
    acc.parity_bits = rec.leaked_bits;
    if let Some(r) = phase(&rec.log, &mut acc) {
        return FinalKeyResult::aborted(Some(eps), acc, rec.rounds, r);
    }
    if !rec.converged {
        return FinalKeyResult::aborted(
            Some(eps),
            acc,
            rec.rounds,
            abort(
                Stage::Reconciliation,
                rec.rounds as f64,
                format!("reconciliation did not converge within {} subset rounds", params.max_passes),
            ),
        );
    }

    acc.eve_bound_bits = eve_bound_bits(params.eve_bound, &t.protocol, eps, params.delta, n);
    let k = acc.eve_bound_bits + acc.parity_bits;
    let amplified = match privacy_amplify(&rec.corrected_alice, k, params.safety_bits, rng) {
        Ok(x) => x,
        Err(e) => {
            let value = (n as f64) - (k + params.safety_bits) as f64;
            return FinalKeyResult::aborted(Some(eps), acc, rec.rounds, abort(Stage::Amplification, value, e.to_string()));
        }
    };
    let r = amplified.key.len();
    let bob_key = toeplitz_hash(&rec.corrected_bob, &amplified.seed, r).unwrap_or_default();
    let mut pa_log = PublicChannelLog::default();
    pa_log.send(Direction::AliceToBob, Purpose::Randomness, amplified.seed.clone());
    if let Some(reason) = phase(&pa_log, &mut acc) {
        return FinalKeyResult::aborted(Some(eps), acc, rec.rounds, reason);
    }

    // used pad bits are replenished from the new key
    if acc.otp_bits >= r {
        return FinalKeyResult::aborted(
            Some(eps),
            acc,
            rec.rounds,
            abort(
                Stage::Authentication,
                acc.otp_bits as f64,
                format!("authentication consumed {} bits, more than the {r}-bit key", acc.otp_bits),
            ),
        );
    }
    let keep = r - acc.otp_bits;
    let alice_key = amplified.key.slice(0, keep);
    let bob_key = bob_key.slice(0, keep);
    FinalKeyResult {
        qber_estimate: Some(eps),
        keys_match: alice_key == bob_key,
        final_length: keep,
        alice_key,
        bob_key,
        leaked_accounting: acc,
        reconciliation_rounds: rec.rounds,
        abort_reason: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy_copy(a: &BitString, eps: f64, rng: &mut SimRng) -> BitString {
        BitString::from_bools(a.iter().map(|b| b ^ rng.bernoulli(eps)))
    }

    #[test]
    fn qber_estimation() {
        let mut rng = SimRng::new(1);
        let a = BitString::random(100_000, &mut rng);
        let est = estimate_qber(&a, &a, 0.1, &mut rng).unwrap();
        assert_eq!(est.epsilon, 0.0);
        assert_eq!(est.disclosed.len(), 10_000);
        let b = BitString::from_bools(a.iter().enumerate().map(|(i, x)| x ^ (i % 4 == 0)));
        let est = estimate_qber(&a, &b, 0.5, &mut rng).unwrap();
        assert!((est.epsilon - 0.25).abs() < 0.01);
        let est = estimate_qber(&a, &b, 1.0, &mut rng).unwrap();
        assert_eq!(est.epsilon, 0.25);
        assert_eq!(
            estimate_qber(&BitString::default(), &BitString::default(), 0.5, &mut rng),
            Err(PostprocError::EmptySample)
        );
    }

    #[test]
    fn remove_positions_keeps_order() {
        let a = BitString::from_binary("101100").unwrap();
        assert_eq!(remove_positions(&a, &[0, 3]).to_binary(), "0100");
    }

    #[test]
    fn reconciliation_of_identical_keys_leaks_only_verification() {
        let mut rng = SimRng::new(2);
        let a = BitString::random(5000, &mut rng);
        let r = bbbss_correct(&a, &a, 0.0, &mut rng, 100).unwrap();
        assert!(r.converged);
        assert_eq!(r.corrected_bob, a);
        assert_eq!(r.leaked_bits, BBBSS_CLEAN_SUBSETS);
        assert_eq!(r.log.parity_messages(), r.log.leaked_parity_count);
    }

    #[test]
    fn reconciliation_corrects_errors() {
        let mut rng = SimRng::new(3);
        let a = BitString::random(10_000, &mut rng);
        let b = noisy_copy(&a, 0.03, &mut rng);
        let r = bbbss_correct(&a, &b, 0.03, &mut rng, 2000).unwrap();
        assert!(r.converged);
        assert_eq!(r.corrected_alice, r.corrected_bob);
        assert_eq!(r.log.parity_messages(), r.leaked_bits);
    }

    #[test]
    fn reconciliation_reports_non_convergence() {
        let mut rng = SimRng::new(4);
        let a = BitString::random(2000, &mut rng);
        let b = BitString::random(2000, &mut rng);
        let r = bbbss_correct(&a, &b, 0.01, &mut rng, 5).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn toeplitz_matches_dense_product() {
        let mut rng = SimRng::new(5);
        let (n, r) = (150, 70);
        let key = BitString::random(n, &mut rng);
        let seed = BitString::random(n + r - 1, &mut rng);
        let fast = toeplitz_hash(&key, &seed, r).unwrap();
        for i in 0..r {
            let dense = (0..n).fold(false, |acc, j| acc ^ (seed.get(r - 1 - i + j) & key.get(j)));
            assert_eq!(fast.get(i), dense);
        }
    }

    #[test]
    fn amplification_length_and_abort() {
        let mut rng = SimRng::new(6);
        let key = BitString::random(1000, &mut rng);
        let out = privacy_amplify(&key, 300, 50, &mut rng).unwrap();
        assert_eq!(out.key.len(), 650);
        assert_eq!(out.seed.len(), 1000 + 650 - 1);
        assert_eq!(
            privacy_amplify(&key, 990, 10, &mut rng),
            Err(PostprocError::NoSecureKey { n: 1000, k: 990, s: 10 })
        );
    }

    #[test]
    fn distillation_rules() {
        let mut rng = SimRng::new(7);
        let a = BitString::random(3001, &mut rng);
        let d = advantage_distill(&a, &a, 3, &mut rng).unwrap();
        assert_eq!(d.accepted.len(), 1000);
        assert_eq!(d.accepted.count_ones(), 1000);
        assert_eq!(d.alice, d.bob);
        assert!(advantage_distill(&a, &a, 1, &mut rng).is_err());
        assert!((distillation_acceptance(0.25, 3) - 0.4375).abs() < 1e-12);
        assert!((distillation_error(0.25, 3) - 0.0357).abs() < 1e-4);
    }

    #[test]
    fn primes() {
        assert!(is_prime(PRIME_61));
        assert!(is_prime(251));
        assert!(!is_prime(253));
        assert!(!is_prime(1));
        assert!(is_prime(2));
    }

    #[test]
    fn auth_roundtrip_and_exhaustion() {
        let mut rng = SimRng::new(8);
        let cfg = AuthConfig::generate(PRIME_61, 10, 61, &mut rng).unwrap();
        let (mut alice, mut bob) = (AuthState::new(cfg.clone()), AuthState::new(cfg));
        let m = BitString::random(300, &mut rng);
        let tag = alice.authenticate(&m).unwrap();
        assert!(bob.verify(&m, tag).unwrap());
        assert!(matches!(alice.authenticate(&m), Err(PostprocError::RefillRequired { .. })));
        alice.refill(&BitString::random(61, &mut rng));
        assert!(alice.authenticate(&m).is_ok());
        let too_long = BitString::random(10 * 60, &mut rng);
        assert!(matches!(bob.authenticate(&too_long), Err(PostprocError::MessageTooLong { .. })));
    }

    #[test]
    fn auth_rejects_composite_modulus() {
        assert!(AuthConfig::new(253, vec![1, 2], BitString::default()).is_err());
        assert!(AuthConfig::new(251, vec![1], BitString::default()).is_err());
    }

    #[test]
    fn eve_bound_modes() {
        let p = Protocol::Bb84;
        assert_eq!(eve_bound_bits(EveBound::TwoEpsilon, &p, 0.05, None, 1000), 100);
        let h = rates::binary_entropy(0.05).unwrap();
        let k = eve_bound_bits(EveBound::Formula, &p, 0.05, None, 1000);
        assert_eq!(k, (h * 1000.0).ceil() as usize);
        assert_eq!(eve_bound_bits(EveBound::Formula, &p, 0.0, Some(0.0), 1000), 0);
    }
}
