//! Eavesdropping strategies acting on pulses between Alice and Bob.
//!
//! Every strategy is a per-pulse transformation returning the pulse Eve
//! forwards, the path it takes to Bob, and an [`EveEntry`] describing what she
//! holds. What Eve can resolve once the public discussion has happened is
//! computed afterwards by [`resolve`]. Eve's devices are noiseless and
//! lossless throughout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{
    poisson_pmf, thin, Basis, BasisName, Detection, DetectorModel, PhotonPulse, SignalState, SourceModel,
};
use crate::rng::SimRng;

#[derive(Debug, Error, PartialEq)]
pub enum AdversaryError {
    #[error("invalid strategy parameter: {0}")]
    InvalidParameter(String),
    #[error("beam-splitter tap ratio {tap} exceeds channel loss {loss}")]
    TapExceedsLoss { tap: f64, loss: f64 },
    #[error("USD attack requires B92 signal states")]
    NotB92,
    #[error("PNS attack cannot reproduce the honest detection rate: {0}")]
    PnsInfeasible(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BasisPolicy {
    /// Uniform over the bases the protocol uses for its signals.
    #[default]
    UniformSignalBases,
    Fixed(BasisName),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EveStrategy {
    #[default]
    None,
    InterceptResend {
        #[serde(default)]
        basis_policy: BasisPolicy,
    },
    /// Diverts each photon with `tap_ratio`; `None` uses the channel loss
    /// `1 − η_ch`, i.e. Eve's splitter *is* the line loss.
    BeamSplit {
        #[serde(default)]
        tap_ratio: Option<f64>,
    },
    /// Photon-number splitting; `None` tunes the single-photon blocking
    /// probability so Bob's detection rate matches the honest channel.
    Pns {
        #[serde(default)]
        block_single_prob: Option<f64>,
    },
    /// Unambiguous state discrimination on B92 signals. Conclusive results
    /// are forwarded with `forward_prob`; `None` picks the value that
    /// reproduces the honest channel transmittance when possible.
    UsdB92 {
        #[serde(default)]
        forward_prob: Option<f64>,
    },
}

/// Where a forwarded pulse goes after Eve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Path {
    /// Through the honest channel.
    Channel,
    /// Through the channel with its loss replaced by `transmittance`.
    Residual { transmittance: f64 },
    /// Straight into Bob's detector, bypassing loss and misalignment.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forwarded {
    pub pulse: PhotonPulse,
    pub path: Path,
}

/// What Eve holds for one pulse before the public discussion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EveEntry {
    /// State Eve observed (and resent) in an intercept-resend measurement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured: Option<SignalState>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_bit: Option<bool>,
    /// Spin direction (degrees) of an intercept on an entangled particle.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_angle_deg: Option<f64>,
    /// Photons kept in quantum memory until the announcement.
    #[serde(skip_serializing_if = "is_zero")]
    pub stored_photons: u32,
    /// USD succeeded.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub conclusive: bool,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl EveEntry {
    pub fn is_empty(&self) -> bool {
        *self == EveEntry::default()
    }
}

/// Per-pulse entries plus what Eve resolves about the sifted key.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EveRecord {
    pub entries: Vec<EveEntry>,
    /// For each sifted bit: whether Eve knows it deterministically.
    pub known_mask: crate::BitString,
    /// Eve's value of each sifted bit (meaningful where `known_mask` is set).
    pub known_bits: crate::BitString,
}

impl EveRecord {
    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(EveEntry::is_empty)
    }

    pub fn known_count(&self) -> usize {
        self.known_mask.count_ones()
    }

    /// Fraction of the sifted key Eve knows deterministically.
    pub fn known_fraction(&self) -> f64 {
        if self.known_mask.is_empty() {
            0.0
        } else {
            self.known_count() as f64 / self.known_mask.len() as f64
        }
    }
}

/// Protocol facts a strategy needs.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub signal_bases: &'a [Basis],
    pub channel_transmittance: f64,
    /// Set for B92 sessions.
    pub b92_overlap: Option<f64>,
}

impl EveStrategy {
    pub fn validate(&self, ctx: &AttackContext<'_>) -> Result<(), AdversaryError> {
        match *self {
            EveStrategy::None => Ok(()),
            EveStrategy::InterceptResend { basis_policy } => match basis_policy {
                BasisPolicy::UniformSignalBases if ctx.signal_bases.is_empty() => {
                    Err(AdversaryError::InvalidParameter("no signal bases to choose from".into()))
                }
                BasisPolicy::Fixed(BasisName::Custom) => {
                    Err(AdversaryError::InvalidParameter("fixed basis must be named".into()))
                }
                _ => Ok(()),
            },
            EveStrategy::BeamSplit { tap_ratio } => {
                let loss = 1.0 - ctx.channel_transmittance;
                match tap_ratio {
                    Some(t) if !(t > 0.0 && t < 1.0) => {
                        Err(AdversaryError::InvalidParameter(format!("tap_ratio {t} outside (0, 1)")))
                    }
                    Some(t) if t > loss + 1e-12 => Err(AdversaryError::TapExceedsLoss { tap: t, loss }),
                    None if loss <= 0.0 => Err(AdversaryError::InvalidParameter(
                        "lossless channel leaves no room for a beam-splitter tap".into(),
                    )),
                    _ => Ok(()),
                }
            }
            EveStrategy::Pns { block_single_prob } => match block_single_prob {
                Some(b) if !(0.0..=1.0).contains(&b) => {
                    Err(AdversaryError::InvalidParameter(format!("block_single_prob {b}")))
                }
                _ => Ok(()),
            },
            EveStrategy::UsdB92 { forward_prob } => {
                if ctx.b92_overlap.is_none() {
                    return Err(AdversaryError::NotB92);
                }
                match forward_prob {
                    Some(f) if !(0.0..=1.0).contains(&f) => {
                        Err(AdversaryError::InvalidParameter(format!("forward_prob {f}")))
                    }
                    _ => Ok(()),
                }
            }
        }
    }

    /// Fills in defaults that depend on the link (`None` parameters).
    pub fn resolved(
        &self,
        ctx: &AttackContext<'_>,
        source: &SourceModel,
        detector: &DetectorModel,
    ) -> Result<EveStrategy, AdversaryError> {
        self.validate(ctx)?;
        Ok(match *self {
            EveStrategy::BeamSplit { tap_ratio: None } => EveStrategy::BeamSplit {
                tap_ratio: Some(1.0 - ctx.channel_transmittance),
            },
            EveStrategy::Pns { block_single_prob: None } => EveStrategy::Pns {
                block_single_prob: Some(pns_block_prob_for_honest_rate(
                    source,
                    ctx.channel_transmittance,
                    detector.efficiency,
                )?),
            },
            EveStrategy::UsdB92 { forward_prob: None } => {
                let overlap = ctx.b92_overlap.ok_or(AdversaryError::NotB92)?;
                EveStrategy::UsdB92 {
                    forward_prob: Some(usd_mimic_forward_prob(overlap, ctx.channel_transmittance)),
                }
            }
            other => other,
        })
    }

    /// Applies the strategy to one pulse. Parameters left as `None` must be
    /// filled by [`resolved`](Self::resolved) first.
    pub fn attack(
        &self,
        pulse: PhotonPulse,
        ctx: &AttackContext<'_>,
        rng: &mut SimRng,
    ) -> Result<(Forwarded, EveEntry), AdversaryError> {
        match *self {
            EveStrategy::None => Ok((
                Forwarded {
                    pulse,
                    path: Path::Channel,
                },
                EveEntry::default(),
            )),
            EveStrategy::InterceptResend { basis_policy } => {
                let basis = match basis_policy {
                    BasisPolicy::UniformSignalBases => {
                        ctx.signal_bases[rng.below(ctx.signal_bases.len() as u64) as usize]
                    }
                    BasisPolicy::Fixed(name) => Basis::from_name(name)
                        .ok_or_else(|| AdversaryError::InvalidParameter("custom fixed basis".into()))?,
                };
                Ok(attack_intercept_resend(pulse, &basis, rng))
            }
            EveStrategy::BeamSplit { tap_ratio } => {
                let tap = tap_ratio.unwrap_or(1.0 - ctx.channel_transmittance);
                Ok(attack_beam_split(pulse, tap, ctx.channel_transmittance, rng))
            }
            EveStrategy::Pns { block_single_prob } => Ok(attack_pns(pulse, block_single_prob.unwrap_or(0.0), rng)),
            EveStrategy::UsdB92 { forward_prob } => {
                let overlap = ctx.b92_overlap.ok_or(AdversaryError::NotB92)?;
                attack_usd_b92(pulse, overlap, forward_prob.unwrap_or(1.0), rng)
            }
        }
    }
}

/// Eve measures one photon of the pulse in `basis` with an ideal detector and
/// resends a fresh single photon in the observed eigenstate next to Bob.
pub fn attack_intercept_resend(pulse: PhotonPulse, basis: &Basis, rng: &mut SimRng) -> (Forwarded, EveEntry) {
    if pulse.is_vacuum() {
        return (
            Forwarded {
                pulse,
                path: Path::Direct,
            },
            EveEntry::default(),
        );
    }
    let single = PhotonPulse::new(1, pulse.state);
    let bit = match DetectorModel::ideal().measure(&single, basis, rng) {
        Detection::Click(b) => b,
        Detection::NoClick => unreachable!("ideal detector always clicks on a photon"),
    };
    let state = basis.state(bit);
    (
        Forwarded {
            pulse: PhotonPulse::new(1, state),
            path: Path::Direct,
        },
        EveEntry {
            measured: Some(state),
            measured_bit: Some(bit),
            ..EveEntry::default()
        },
    )
}

/// Each photon is diverted to Eve with `tap_ratio`; the rest continue through
/// a channel whose transmittance is raised so the end-to-end loss is kept.
pub fn attack_beam_split(
    pulse: PhotonPulse,
    tap_ratio: f64,
    channel_transmittance: f64,
    rng: &mut SimRng,
) -> (Forwarded, EveEntry) {
    let forwarded = thin(pulse.n, 1.0 - tap_ratio, rng);
    let kept = pulse.n - forwarded;
    let residual = (channel_transmittance / (1.0 - tap_ratio)).min(1.0);
    (
        Forwarded {
            pulse: PhotonPulse::new(forwarded, pulse.state),
            path: Path::Residual {
                transmittance: residual,
            },
        },
        EveEntry {
            stored_photons: kept,
            ..EveEntry::default()
        },
    )
}

/// Keeps exactly one photon of every multi-photon pulse and forwards the rest
/// losslessly; single photons are blocked with `block_single_prob`.
pub fn attack_pns(pulse: PhotonPulse, block_single_prob: f64, rng: &mut SimRng) -> (Forwarded, EveEntry) {
    let (forward, stored) = match pulse.n {
        0 => (PhotonPulse::vacuum(), 0),
        1 if rng.bernoulli(block_single_prob) => (PhotonPulse::vacuum(), 0),
        1 => (pulse, 0),
        n => (PhotonPulse::new(n - 1, pulse.state), 1),
    };
    (
        Forwarded {
            pulse: forward,
            path: Path::Direct,
        },
        EveEntry {
            stored_photons: stored,
            ..EveEntry::default()
        },
    )
}

/// Unambiguous discrimination of the two B92 states. With `n` copies the
/// success probability is `1 − |⟨φ0|φ1⟩|ⁿ`. Conclusive results are re-sent
/// as a perfect single photon with `forward_prob`; everything else becomes
/// vacuum.
pub fn attack_usd_b92(
    pulse: PhotonPulse,
    overlap: f64,
    forward_prob: f64,
    rng: &mut SimRng,
) -> Result<(Forwarded, EveEntry), AdversaryError> {
    let direct_vacuum = Forwarded {
        pulse: PhotonPulse::vacuum(),
        path: Path::Direct,
    };
    if pulse.is_vacuum() {
        return Ok((direct_vacuum, EveEntry::default()));
    }
    let states = SignalState::b92_pair(overlap);
    let bit = states
        .iter()
        .position(|s| s.same_ray(&pulse.state, 1e-9))
        .ok_or(AdversaryError::NotB92)?
        == 1;
    if !rng.bernoulli(usd_success_prob(overlap, pulse.n)) {
        return Ok((direct_vacuum, EveEntry::default()));
    }
    let entry = EveEntry {
        measured: Some(states[bit as usize]),
        measured_bit: Some(bit),
        conclusive: true,
        ..EveEntry::default()
    };
    let fwd = if rng.bernoulli(forward_prob) {
        Forwarded {
            pulse: PhotonPulse::new(1, states[bit as usize]),
            path: Path::Direct,
        }
    } else {
        direct_vacuum
    };
    Ok((fwd, entry))
}

/// `1 − |⟨φ0|φ1⟩|ⁿ`
pub fn usd_success_prob(overlap: f64, copies: u32) -> f64 {
    1.0 - overlap.powi(copies as i32)
}

/// Forwarding probability that makes USD mimic a channel of transmittance
/// `eta` (capped at 1 once `eta` exceeds the USD success probability).
pub fn usd_mimic_forward_prob(overlap: f64, eta: f64) -> f64 {
    let succ = usd_success_prob(overlap, 1);
    if succ <= 0.0 {
        0.0
    } else {
        (eta / succ).min(1.0)
    }
}

/// Single-photon blocking probability for which the PNS attacker's
/// lossless forwarding reproduces the honest detection probability
/// `Σ p(n) [1 − (1 − η_ch η_det)ⁿ]`.
pub fn pns_block_prob_for_honest_rate(
    source: &SourceModel,
    channel_transmittance: f64,
    detector_efficiency: f64,
) -> Result<f64, AdversaryError> {
    const N_MAX: u32 = 60;
    let pmf = |n: u32| match *source {
        SourceModel::AttenuatedLaser { mu } => poisson_pmf(mu, n),
        other => other.pmf(n),
    };
    let eta = channel_transmittance * detector_efficiency;
    let honest: f64 = (1..N_MAX).map(|n| pmf(n) * (1.0 - (1.0 - eta).powi(n as i32))).sum();
    let multi: f64 = (2..N_MAX)
        .map(|n| pmf(n) * (1.0 - (1.0 - detector_efficiency).powi(n as i32 - 1)))
        .sum();
    let single = pmf(1) * detector_efficiency;
    if multi > honest {
        return Err(AdversaryError::PnsInfeasible(format!(
            "multi-photon detections alone ({multi:.4e}) exceed the honest rate ({honest:.4e})"
        )));
    }
    if single <= 0.0 {
        return Ok(1.0);
    }
    let pass = (honest - multi) / single;
    if pass > 1.0 {
        return Err(AdversaryError::PnsInfeasible(format!(
            "honest rate {honest:.4e} exceeds what lossless forwarding can deliver"
        )));
    }
    Ok(1.0 - pass)
}

/// Public information after the announcement phase.
#[derive(Debug, Clone, Copy)]
pub enum Disclosure {
    /// Alice's basis; the answer is the bit within it.
    Basis(Basis),
    /// Two candidate states, one of which Alice sent; the answer is the index.
    Pair([SignalState; 2]),
}

/// What Eve learns deterministically about Alice's signal once `disclosure`
/// is public. Returns the bit (basis case) or the candidate index (pair case).
pub fn resolve(entry: &EveEntry, alice_state: &SignalState, disclosure: &Disclosure, rng: &mut SimRng) -> Option<bool> {
    const TOL: f64 = 1e-9;
    let index_of = |cands: &[SignalState; 2], s: &SignalState| -> Option<bool> {
        cands.iter().position(|c| c.same_ray(s, TOL)).map(|i| i == 1)
    };
    if entry.stored_photons > 0 {
        return match disclosure {
            Disclosure::Basis(b) => index_of(&b.vectors, alice_state),
            Disclosure::Pair(p) => {
                let overlap = p[0].inner(&p[1]).norm();
                if rng.bernoulli(usd_success_prob(overlap, entry.stored_photons)) {
                    index_of(p, alice_state)
                } else {
                    None
                }
            }
        };
    }
    let measured = entry.measured?;
    match disclosure {
        Disclosure::Basis(b) => index_of(&b.vectors, &measured),
        Disclosure::Pair(p) => {
            if entry.conclusive {
                return index_of(p, &measured);
            }
            // an outcome orthogonal to one candidate rules it out
            if p[0].overlap_sq(&measured) < TOL {
                Some(true)
            } else if p[1].overlap_sq(&measured) < TOL {
                Some(false)
            } else {
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb84_bases() -> [Basis; 2] {
        [Basis::rectilinear(), Basis::diagonal()]
    }

    #[test]
    fn intercept_resend_wrong_basis_randomizes_bob() {
        let mut rng = SimRng::new(1);
        let det = DetectorModel::ideal();
        let v = PhotonPulse::new(1, SignalState::vertical());
        let trials = 100_000;
        let errors = (0..trials)
            .filter(|_| {
                let (fwd, e) = attack_intercept_resend(v, &Basis::diagonal(), &mut rng);
                assert_eq!(fwd.pulse.n, 1);
                assert!(e.measured.is_some());
                det.measure(&fwd.pulse, &Basis::rectilinear(), &mut rng) == Detection::Click(false)
            })
            .count();
        let f = errors as f64 / trials as f64;
        assert!((f - 0.5).abs() < 0.01, "{f}");
    }

    #[test]
    fn intercept_resend_same_basis_is_silent() {
        let mut rng = SimRng::new(2);
        let det = DetectorModel::ideal();
        let v = PhotonPulse::new(1, SignalState::vertical());
        for _ in 0..1000 {
            let (fwd, _) = attack_intercept_resend(v, &Basis::rectilinear(), &mut rng);
            assert_eq!(det.measure(&fwd.pulse, &Basis::rectilinear(), &mut rng), Detection::Click(true));
        }
    }

    #[test]
    fn none_strategy_is_transparent() {
        let bases = bb84_bases();
        let ctx = AttackContext {
            signal_bases: &bases,
            channel_transmittance: 0.3,
            b92_overlap: None,
        };
        let mut rng = SimRng::new(3);
        let p = PhotonPulse::new(2, SignalState::diagonal());
        let (fwd, e) = EveStrategy::None.attack(p, &ctx, &mut rng).unwrap();
        assert_eq!(fwd.pulse, p);
        assert_eq!(fwd.path, Path::Channel);
        assert!(e.is_empty());
    }

    #[test]
    fn beam_split_single_photon_goes_one_way() {
        let mut rng = SimRng::new(4);
        let p = PhotonPulse::new(1, SignalState::horizontal());
        for _ in 0..10_000 {
            let (fwd, e) = attack_beam_split(p, 0.5, 0.5, &mut rng);
            assert_eq!(fwd.pulse.n + e.stored_photons, 1);
            assert_eq!(fwd.path, Path::Residual { transmittance: 1.0 });
        }
    }

    #[test]
    fn beam_split_tap_validation() {
        let bases = bb84_bases();
        let ctx = AttackContext {
            signal_bases: &bases,
            channel_transmittance: 0.8,
            b92_overlap: None,
        };
        let s = EveStrategy::BeamSplit { tap_ratio: Some(0.5) };
        assert!(matches!(s.validate(&ctx), Err(AdversaryError::TapExceedsLoss { .. })));
        assert!(EveStrategy::BeamSplit { tap_ratio: Some(0.1) }.validate(&ctx).is_ok());
    }

    #[test]
    fn pns_single_photons_untouched_without_blocking() {
        let mut rng = SimRng::new(5);
        let p = PhotonPulse::new(1, SignalState::diagonal());
        for _ in 0..1000 {
            let (fwd, e) = attack_pns(p, 0.0, &mut rng);
            assert_eq!(fwd.pulse, p);
            assert!(e.is_empty());
        }
        let (fwd, e) = attack_pns(PhotonPulse::new(3, SignalState::diagonal()), 0.0, &mut rng);
        assert_eq!(fwd.pulse.n, 2);
        assert_eq!(e.stored_photons, 1);
    }

    #[test]
    fn pns_tuning_matches_honest_rate_analytically() {
        let src = SourceModel::AttenuatedLaser { mu: 0.5 };
        let b = pns_block_prob_for_honest_rate(&src, 0.5, 1.0).unwrap();
        let honest = 1.0 - (-0.25f64).exp();
        let attacked = poisson_pmf(0.5, 1) * (1.0 - b) + src.multi_photon_prob();
        assert!((honest - attacked).abs() < 1e-12);
        // multi-photon pulses alone outnumber honest clicks
        assert!(pns_block_prob_for_honest_rate(&src, 0.1, 1.0).is_err());
        let strong = SourceModel::AttenuatedLaser { mu: 0.8 };
        assert!(pns_block_prob_for_honest_rate(&strong, 0.1, 1.0).is_err());
    }

    #[test]
    fn usd_success_frequency() {
        let overlap = std::f64::consts::FRAC_1_SQRT_2;
        let states = SignalState::b92_pair(overlap);
        let mut rng = SimRng::new(6);
        let trials = 100_000;
        let succ = (0..trials)
            .filter(|i| {
                let p = PhotonPulse::new(1, states[i % 2]);
                attack_usd_b92(p, overlap, 1.0, &mut rng).unwrap().1.conclusive
            })
            .count();
        let f = succ as f64 / trials as f64;
        assert!((f - (1.0 - overlap)).abs() < 0.005, "{f}");
        assert!((usd_success_prob(0.0, 1) - 1.0).abs() < 1e-15);
        let bad = PhotonPulse::new(1, SignalState::vertical());
        assert_eq!(attack_usd_b92(bad, overlap, 1.0, &mut rng), Err(AdversaryError::NotB92));
    }

    #[test]
    fn usd_conclusive_copies_are_exact() {
        let overlap = 0.6;
        let states = SignalState::b92_pair(overlap);
        let mut rng = SimRng::new(7);
        for i in 0..10_000 {
            let p = PhotonPulse::new(1, states[i % 2]);
            let (fwd, e) = attack_usd_b92(p, overlap, 1.0, &mut rng).unwrap();
            if e.conclusive {
                assert_eq!(e.measured_bit, Some(i % 2 == 1));
                assert!(fwd.pulse.state.same_ray(&states[i % 2], 1e-12));
            } else {
                assert!(fwd.pulse.is_vacuum());
            }
        }
    }

    #[test]
    fn resolve_rules() {
        let mut rng = SimRng::new(8);
        let h = SignalState::horizontal();
        let stored = EveEntry {
            stored_photons: 1,
            ..EveEntry::default()
        };
        assert_eq!(resolve(&stored, &h, &Disclosure::Basis(Basis::rectilinear()), &mut rng), Some(false));
        let measured_v = EveEntry {
            measured: Some(SignalState::vertical()),
            measured_bit: Some(true),
            ..EveEntry::default()
        };
        assert_eq!(
            resolve(&measured_v, &h, &Disclosure::Basis(Basis::diagonal()), &mut rng),
            None
        );
        // V is orthogonal to H, so pair {H, A} resolves to A
        let pair = [h, SignalState::antidiagonal()];
        assert_eq!(resolve(&measured_v, &h, &Disclosure::Pair(pair), &mut rng), Some(true));
        assert_eq!(resolve(&EveEntry::default(), &h, &Disclosure::Pair(pair), &mut rng), None);
    }

    #[test]
    fn usd_mimic_probability() {
        let overlap = std::f64::consts::FRAC_1_SQRT_2;
        let f = usd_mimic_forward_prob(overlap, 0.1);
        assert!((f * (1.0 - overlap) - 0.1).abs() < 1e-12);
        assert_eq!(usd_mimic_forward_prob(overlap, 0.9), 1.0);
    }
}
