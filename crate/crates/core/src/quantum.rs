//! Physical layer: polarization qubits, photon sources, fiber channels and
//! threshold detectors.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum QuantumError {
    #[error("state is not normalized: |h|^2 + |v|^2 = {0}")]
    NotNormalized(f64),
    #[error("basis vectors are not orthogonal (overlap {0})")]
    NotOrthogonal(f64),
    #[error("measurement direction is not a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("invalid source parameter: {0}")]
    InvalidSource(String),
    #[error("invalid channel parameter: {0}")]
    InvalidChannel(String),
    #[error("invalid detector parameter: {0}")]
    InvalidDetector(String),
    #[error("photon-number distribution has p(1) = 0")]
    DegenerateSource,
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

/// Pure polarization state `h|H⟩ + v|V⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalState {
    pub h: Complex64,
    pub v: Complex64,
}

impl SignalState {
    pub fn new(h: Complex64, v: Complex64) -> Result<Self, QuantumError> {
        let norm = h.norm_sqr() + v.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(QuantumError::NotNormalized(norm));
        }
        Ok(Self { h, v })
    }

    /// Real linear polarization at `theta` radians from horizontal.
    pub fn linear(theta: f64) -> Self {
        Self {
            h: Complex64::new(theta.cos(), 0.0),
            v: Complex64::new(theta.sin(), 0.0),
        }
    }

    pub fn horizontal() -> Self {
        Self::linear(0.0)
    }

    pub fn vertical() -> Self {
        Self::linear(std::f64::consts::FRAC_PI_2)
    }

    /// `(|H⟩ + |V⟩)/√2`
    pub fn diagonal() -> Self {
        Self::linear(std::f64::consts::FRAC_PI_4)
    }

    /// `(|H⟩ − |V⟩)/√2`
    pub fn antidiagonal() -> Self {
        Self::linear(-std::f64::consts::FRAC_PI_4)
    }

    /// `(|H⟩ + i|V⟩)/√2`
    pub fn right_circular() -> Self {
        Self {
            h: Complex64::new(FRAC_1_SQRT_2, 0.0),
            v: Complex64::new(0.0, FRAC_1_SQRT_2),
        }
    }

    /// `(|H⟩ − i|V⟩)/√2`
    pub fn left_circular() -> Self {
        Self {
            h: Complex64::new(FRAC_1_SQRT_2, 0.0),
            v: Complex64::new(0.0, -FRAC_1_SQRT_2),
        }
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &SignalState) -> Complex64 {
        self.h.conj() * other.h + self.v.conj() * other.v
    }

    /// `|⟨self|other⟩|²`
    pub fn overlap_sq(&self, other: &SignalState) -> f64 {
        self.inner(other).norm_sqr()
    }

    /// The state orthogonal to `self` in the plane it spans with its partner.
    pub fn orthogonal(&self) -> Self {
        Self {
            h: -self.v.conj(),
            v: self.h.conj(),
        }
    }

    /// Two real linear states symmetric about `|H⟩` with `|⟨φ0|φ1⟩| = overlap`.
    pub fn b92_pair(overlap: f64) -> [SignalState; 2] {
        let half = overlap.clamp(0.0, 1.0).acos() / 2.0;
        [Self::linear(half), Self::linear(-half)]
    }

    /// Equal up to a global phase.
    pub fn same_ray(&self, other: &SignalState, tol: f64) -> bool {
        (self.overlap_sq(other) - 1.0).abs() < tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisName {
    Rectilinear,
    Diagonal,
    Circular,
    Custom,
}

/// Orthonormal measurement/preparation basis. `vectors[b]` encodes bit `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub name: BasisName,
    pub vectors: [SignalState; 2],
}

impl Basis {
    pub fn new(v0: SignalState, v1: SignalState) -> Result<Self, QuantumError> {
        let o = v0.overlap_sq(&v1);
        if o > NORM_TOL {
            return Err(QuantumError::NotOrthogonal(o));
        }
        Ok(Self {
            name: BasisName::Custom,
            vectors: [v0, v1],
        })
    }

    /// `|H⟩` = 0, `|V⟩` = 1
    pub fn rectilinear() -> Self {
        Self {
            name: BasisName::Rectilinear,
            vectors: [SignalState::horizontal(), SignalState::vertical()],
        }
    }

    /// `|A⟩` = 0, `|D⟩` = 1
    pub fn diagonal() -> Self {
        Self {
            name: BasisName::Diagonal,
            vectors: [SignalState::antidiagonal(), SignalState::diagonal()],
        }
    }

    /// `|R⟩` = 0, `|L⟩` = 1
    pub fn circular() -> Self {
        Self {
            name: BasisName::Circular,
            vectors: [SignalState::right_circular(), SignalState::left_circular()],
        }
    }

    pub fn from_name(name: BasisName) -> Option<Self> {
        match name {
            BasisName::Rectilinear => Some(Self::rectilinear()),
            BasisName::Diagonal => Some(Self::diagonal()),
            BasisName::Circular => Some(Self::circular()),
            BasisName::Custom => None,
        }
    }

    /// Basis `{state, state⊥}`.
    pub fn containing(state: SignalState) -> Self {
        Self {
            name: BasisName::Custom,
            vectors: [state, state.orthogonal()],
        }
    }

    pub fn state(&self, bit: bool) -> SignalState {
        self.vectors[bit as usize]
    }

    /// Probability that `psi` projects onto `vectors[0]`.
    pub fn prob_zero(&self, psi: &SignalState) -> f64 {
        self.vectors[0].overlap_sq(psi)
    }
}

/// `n` photons sharing one polarization state; `n = 0` is vacuum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonPulse {
    pub n: u32,
    pub state: SignalState,
}

impl PhotonPulse {
    pub fn new(n: u32, state: SignalState) -> Self {
        Self { n, state }
    }

    pub fn vacuum() -> Self {
        Self {
            n: 0,
            state: SignalState::horizontal(),
        }
    }

    pub fn is_vacuum(&self) -> bool {
        self.n == 0
    }
}

/// Independent binomial thinning: each of `n` photons survives with `p`.
pub fn thin(n: u32, p: f64, rng: &mut SimRng) -> u32 {
    if p >= 1.0 {
        return n;
    }
    if p <= 0.0 {
        return 0;
    }
    (0..n).filter(|_| rng.bernoulli(p)).count() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceModel {
    #[default]
    IdealSinglePhoton,
    AttenuatedLaser { mu: f64 },
    /// Heralded pair source: vacuum with `1 − herald_efficiency`, two photons
    /// with `multi_pair_prob`, one photon otherwise.
    HeraldedPdc { herald_efficiency: f64, multi_pair_prob: f64 },
}

/// Poisson probability `μⁿ e^{−μ} / n!`.
pub fn poisson_pmf(mu: f64, n: u32) -> f64 {
    let mut p = (-mu).exp();
    for k in 1..=n {
        p *= mu / k as f64;
    }
    p
}

impl SourceModel {
    pub fn validate(&self) -> Result<(), QuantumError> {
        match *self {
            SourceModel::IdealSinglePhoton => Ok(()),
            SourceModel::AttenuatedLaser { mu } => {
                if mu > 0.0 && mu.is_finite() {
                    Ok(())
                } else {
                    Err(QuantumError::InvalidSource(format!("mu must be > 0, got {mu}")))
                }
            }
            SourceModel::HeraldedPdc {
                herald_efficiency,
                multi_pair_prob,
            } => {
                if !(0.0..=1.0).contains(&herald_efficiency) || !(0.0..=1.0).contains(&multi_pair_prob) {
                    return Err(QuantumError::InvalidSource("probabilities must lie in [0, 1]".into()));
                }
                if multi_pair_prob > herald_efficiency {
                    return Err(QuantumError::InvalidSource(
                        "multi_pair_prob cannot exceed herald_efficiency".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Photon-number probability `p(n)`.
    pub fn pmf(&self, n: u32) -> f64 {
        match *self {
            SourceModel::IdealSinglePhoton => (n == 1) as u8 as f64,
            SourceModel::AttenuatedLaser { mu } => poisson_pmf(mu, n),
            SourceModel::HeraldedPdc {
                herald_efficiency,
                multi_pair_prob,
            } => match n {
                0 => 1.0 - herald_efficiency,
                1 => herald_efficiency - multi_pair_prob,
                2 => multi_pair_prob,
                _ => 0.0,
            },
        }
    }

    /// `Σ_{n≥2} p(n)`
    pub fn multi_photon_prob(&self) -> f64 {
        (1.0 - self.pmf(0) - self.pmf(1)).max(0.0)
    }

    pub fn mean_photon_number(&self) -> f64 {
        match *self {
            SourceModel::AttenuatedLaser { mu } => mu,
            _ => (1..=2).map(|n| n as f64 * self.pmf(n)).sum(),
        }
    }

    pub fn sample_photon_number(&self, rng: &mut SimRng) -> u32 {
        match *self {
            SourceModel::IdealSinglePhoton => 1,
            SourceModel::AttenuatedLaser { mu } => {
                let d = Poisson::new(mu).expect("validated mean photon number");
                d.sample(rng) as u32
            }
            SourceModel::HeraldedPdc {
                herald_efficiency,
                multi_pair_prob,
            } => {
                let u = rng.uniform();
                if u >= herald_efficiency {
                    0
                } else if u < multi_pair_prob {
                    2
                } else {
                    1
                }
            }
        }
    }

    /// Second-order autocorrelation `⟨n(n−1)⟩ / ⟨n⟩²` of the exact
    /// photon-number distribution. For `p(1) ≫ p(2) ≫ p(≥3)` this is
    /// `2 p(2) / p(1)²` to leading order; for a Poissonian source it is 1.
    pub fn g2(&self) -> Result<f64, QuantumError> {
        if self.pmf(1) == 0.0 {
            return Err(QuantumError::DegenerateSource);
        }
        Ok(match *self {
            SourceModel::IdealSinglePhoton => 0.0,
            // ⟨n(n−1)⟩ = μ², ⟨n⟩ = μ
            SourceModel::AttenuatedLaser { .. } => 1.0,
            SourceModel::HeraldedPdc { .. } => {
                let mean = self.mean_photon_number();
                2.0 * self.pmf(2) / (mean * mean)
            }
        })
    }

    /// Leading-order estimate `2 p(2) / p(1)²`.
    pub fn g2_approx(&self) -> Result<f64, QuantumError> {
        let p1 = self.pmf(1);
        if p1 == 0.0 {
            return Err(QuantumError::DegenerateSource);
        }
        Ok(2.0 * self.pmf(2) / (p1 * p1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    /// Probability of a basis-relative bit flip per surviving pulse.
    pub misalignment: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self::ideal()
    }
}

impl ChannelModel {
    pub fn ideal() -> Self {
        Self {
            length_km: 0.0,
            attenuation_db_per_km: 0.0,
            misalignment: 0.0,
        }
    }

    pub fn fiber(length_km: f64, attenuation_db_per_km: f64) -> Self {
        Self {
            length_km,
            attenuation_db_per_km,
            misalignment: 0.0,
        }
    }

    /// Channel with a given transmittance (expressed as a loss over 1 km).
    pub fn with_transmittance(eta: f64) -> Self {
        Self {
            length_km: 1.0,
            attenuation_db_per_km: -10.0 * eta.log10(),
            misalignment: 0.0,
        }
    }

    pub fn with_misalignment(mut self, e_d: f64) -> Self {
        self.misalignment = e_d;
        self
    }

    pub fn validate(&self) -> Result<(), QuantumError> {
        if !(self.length_km >= 0.0) || !(self.attenuation_db_per_km >= 0.0) {
            return Err(QuantumError::InvalidChannel("length and attenuation must be >= 0".into()));
        }
        if !(0.0..=0.5).contains(&self.misalignment) {
            return Err(QuantumError::InvalidChannel(format!(
                "misalignment must lie in [0, 0.5], got {}",
                self.misalignment
            )));
        }
        Ok(())
    }

    /// `10^(−α L / 10)`
    pub fn transmittance(&self) -> f64 {
        10f64.powf(-self.attenuation_db_per_km * self.length_km / 10.0)
    }

    pub fn transmit(&self, pulse: PhotonPulse, rng: &mut SimRng) -> PhotonPulse {
        self.transmit_with(pulse, self.transmittance(), rng)
    }

    /// Transmission with the loss replaced by `eta` (misalignment unchanged).
    pub fn transmit_with(&self, pulse: PhotonPulse, eta: f64, rng: &mut SimRng) -> PhotonPulse {
        let n = thin(pulse.n, eta, rng);
        if n == 0 {
            return PhotonPulse::vacuum();
        }
        let state = if rng.bernoulli(self.misalignment) {
            pulse.state.orthogonal()
        } else {
            pulse.state
        };
        PhotonPulse { n, state }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoubleClickPolicy {
    #[default]
    AssignRandomBit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
    /// Dark-count probability per gate, per detector.
    pub dark_prob: f64,
    #[serde(default)]
    pub double_click_policy: DoubleClickPolicy,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self::ideal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    NoClick,
    Click(bool),
}

impl Detection {
    pub fn bit(&self) -> Option<bool> {
        match self {
            Detection::NoClick => None,
            Detection::Click(b) => Some(*b),
        }
    }

    pub fn clicked(&self) -> bool {
        matches!(self, Detection::Click(_))
    }
}

impl DetectorModel {
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_prob: 0.0,
            double_click_policy: DoubleClickPolicy::AssignRandomBit,
        }
    }

    pub fn new(efficiency: f64, dark_prob: f64) -> Self {
        Self {
            efficiency,
            dark_prob,
            double_click_policy: DoubleClickPolicy::AssignRandomBit,
        }
    }

    pub fn validate(&self) -> Result<(), QuantumError> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(QuantumError::InvalidDetector(format!("efficiency {}", self.efficiency)));
        }
        if !(0.0..1.0).contains(&self.dark_prob) {
            return Err(QuantumError::InvalidDetector(format!("dark_prob {}", self.dark_prob)));
        }
        Ok(())
    }

    /// Projective measurement of every surviving photon followed by the
    /// threshold-detector click logic.
    pub fn measure(&self, pulse: &PhotonPulse, basis: &Basis, rng: &mut SimRng) -> Detection {
        let detected = thin(pulse.n, self.efficiency, rng);
        let mut fire = [false; 2];
        if detected > 0 {
            let p0 = basis.prob_zero(&pulse.state);
            for _ in 0..detected {
                fire[!rng.bernoulli(p0) as usize] = true;
            }
        }
        self.register(fire, rng)
    }

    /// Adds dark counts to the photon-induced firing pattern and resolves
    /// the two detectors into a single outcome.
    pub fn register(&self, mut fire: [bool; 2], rng: &mut SimRng) -> Detection {
        if self.dark_prob > 0.0 {
            fire[0] |= rng.bernoulli(self.dark_prob);
            fire[1] |= rng.bernoulli(self.dark_prob);
        }
        match fire {
            [false, false] => Detection::NoClick,
            [true, false] => Detection::Click(false),
            [false, true] => Detection::Click(true),
            [true, true] => match self.double_click_policy {
                DoubleClickPolicy::AssignRandomBit => Detection::Click(rng.bit()),
            },
        }
    }
}

/// Direction on the measurement great circle.
pub fn planar_direction(angle_deg: f64) -> [f64; 3] {
    let t = angle_deg.to_radians();
    [t.sin(), 0.0, t.cos()]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn check_unit(n: &[f64; 3]) -> Result<(), QuantumError> {
    let norm = dot(n, n).sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(QuantumError::NotUnit(norm));
    }
    Ok(())
}

/// Samples spin outcomes `(a, b) ∈ {±1}²` of a singlet pair measured along
/// `n1` and `n2`, using `P(a, b) = (1 − a b n1·n2) / 4`.
pub fn sample_singlet(n1: &[f64; 3], n2: &[f64; 3], rng: &mut SimRng) -> Result<(i8, i8), QuantumError> {
    check_unit(n1)?;
    check_unit(n2)?;
    let c = dot(n1, n2);
    let a: i8 = if rng.bit() { 1 } else { -1 };
    // P(b = −a | a) = (1 + c) / 2
    let b = if rng.bernoulli((1.0 + c) / 2.0) { -a } else { a };
    Ok((a, b))
}

/// Outcome `±1` for a spin prepared along `s` and measured along `n`.
pub fn measure_spin(s: &[f64; 3], n: &[f64; 3], rng: &mut SimRng) -> i8 {
    if rng.bernoulli((1.0 + dot(s, n)) / 2.0) {
        1
    } else {
        -1
    }
}

pub fn scale(v: &[f64; 3], k: f64) -> [f64; 3] {
    [v[0] * k, v[1] * k, v[2] * k]
}

#[derive(Debug, Clone, Deserialize)]
struct DetectorPreset {
    efficiency: f64,
    dark_counts_per_s: f64,
    gate_window_ns: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct ChannelPreset {
    attenuation_db_per_km: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct PresetFile {
    detectors: BTreeMap<String, DetectorPreset>,
    channels: BTreeMap<String, ChannelPreset>,
}

/// Named hardware parameter sets shipped with the crate.
pub mod presets {
    use super::*;

    const PRESETS_JSON: &str = include_str!("../data/presets.json");

    fn load() -> PresetFile {
        serde_json::from_str(PRESETS_JSON).expect("bundled presets parse")
    }

    pub fn detector(name: &str) -> Result<DetectorModel, QuantumError> {
        let file = load();
        let d = file
            .detectors
            .get(name)
            .ok_or_else(|| QuantumError::UnknownPreset(name.to_string()))?;
        Ok(DetectorModel::new(d.efficiency, d.dark_counts_per_s * d.gate_window_ns * 1e-9))
    }

    /// Attenuation in dB/km.
    pub fn channel_attenuation(name: &str) -> Result<f64, QuantumError> {
        load()
            .channels
            .get(name)
            .map(|c| c.attenuation_db_per_km)
            .ok_or_else(|| QuantumError::UnknownPreset(name.to_string()))
    }

    pub fn detector_names() -> Vec<String> {
        load().detectors.into_keys().collect()
    }

    pub fn channel_names() -> Vec<String> {
        load().channels.into_keys().collect()
    }
}
