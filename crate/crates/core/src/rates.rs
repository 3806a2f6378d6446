//! Entropy and information quantities, asymptotic key-rate formulas, attack
//! bounds, decoy-state yield estimation and optimal mean photon number.
//!
//! Every function here is pure. Rates are returned raw; negative values
//! mean "no secure key" and are not errors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RateError {
    #[error("{formula}: argument outside domain ({detail})")]
    Domain { formula: &'static str, detail: String },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("alphabet size {0} unsupported (max 4)")]
    UnsupportedSize(usize),
    #[error("decoy system is singular: intensities must differ")]
    SingularSystem,
    #[error("no positive rate for mu in (0, 2]")]
    NoPositiveRate,
}

fn domain(formula: &'static str, detail: impl Into<String>) -> RateError {
    RateError::Domain {
        formula,
        detail: detail.into(),
    }
}

/// Bounds on the BB84 and six-state error thresholds reachable with two-way
/// post-processing. Reference values only.
pub const CHAU_THRESHOLD_BB84: f64 = 0.20;
pub const CHAU_THRESHOLD_SIX_STATE: f64 = 0.276;

fn xlog2x(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

/// `h(x) = −x log₂x − (1−x) log₂(1−x)`, with `h(0) = h(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64, RateError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(domain("binary_entropy", format!("x = {x}")));
    }
    Ok(-xlog2x(x) - xlog2x(1.0 - x))
}

fn h(x: f64) -> f64 {
    -xlog2x(x) - xlog2x(1.0 - x)
}

fn shannon(probs: impl IntoIterator<Item = f64>) -> f64 {
    probs.into_iter().map(|p| -xlog2x(p)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parties {
    AB,
    AE,
    BE,
}

/// `P(a, b, e)` over finite alphabets, stored row-major in `(a, b, e)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    dims: [usize; 3],
    p: Vec<f64>,
}

impl JointDistribution {
    pub fn new(dims: [usize; 3], p: Vec<f64>) -> Result<Self, RateError> {
        if dims.contains(&0) {
            return Err(RateError::InvalidDistribution("empty alphabet".into()));
        }
        if p.len() != dims.iter().product::<usize>() {
            return Err(RateError::InvalidDistribution(format!(
                "{} entries for dimensions {dims:?}",
                p.len()
            )));
        }
        if let Some(x) = p.iter().find(|x| !(**x >= 0.0)) {
            return Err(RateError::InvalidDistribution(format!("entry {x} is negative")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(RateError::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(Self { dims, p })
    }

    /// Two-party distribution `P(a, b)` with a trivial Eve.
    pub fn bipartite(na: usize, nb: usize, p: Vec<f64>) -> Result<Self, RateError> {
        Self::new([na, nb, 1], p)
    }

    pub fn from_fn(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> f64) -> Result<Self, RateError> {
        let mut p = Vec::with_capacity(dims.iter().product());
        for a in 0..dims[0] {
            for b in 0..dims[1] {
                for e in 0..dims[2] {
                    p.push(f(a, b, e));
                }
            }
        }
        Self::new(dims, p)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn get(&self, a: usize, b: usize, e: usize) -> f64 {
        self.p[(a * self.dims[1] + b) * self.dims[2] + e]
    }

    fn marginal(&self, keep: [bool; 3]) -> Vec<f64> {
        let size = |i: usize| if keep[i] { self.dims[i] } else { 1 };
        let (sa, sb, se) = (size(0), size(1), size(2));
        let mut m = vec![0.0; sa * sb * se];
        for a in 0..self.dims[0] {
            for b in 0..self.dims[1] {
                for e in 0..self.dims[2] {
                    let idx = ((if keep[0] { a } else { 0 }) * sb + if keep[1] { b } else { 0 }) * se
                        + if keep[2] { e } else { 0 };
                    m[idx] += self.get(a, b, e);
                }
            }
        }
        m
    }

    fn entropy_of(&self, keep: [bool; 3]) -> f64 {
        shannon(self.marginal(keep))
    }

    pub fn mutual_information(&self, parties: Parties) -> f64 {
        let (x, y) = match parties {
            Parties::AB => (0, 1),
            Parties::AE => (0, 2),
            Parties::BE => (1, 2),
        };
        let mut kx = [false; 3];
        kx[x] = true;
        let mut ky = [false; 3];
        ky[y] = true;
        let mut kxy = kx;
        kxy[y] = true;
        (self.entropy_of(kx) + self.entropy_of(ky) - self.entropy_of(kxy)).max(0.0)
    }

    /// `I(A;B|E) = H(AE) + H(BE) − H(ABE) − H(E)`.
    pub fn conditional_mutual_information(&self) -> f64 {
        let v = self.entropy_of([true, false, true]) + self.entropy_of([false, true, true])
            - self.entropy_of([true, true, true])
            - self.entropy_of([false, false, true]);
        v.max(0.0)
    }

    /// Applies a row-stochastic map `E → Ē` given as `map[e][ē]`.
    fn process_eve(&self, map: &[Vec<f64>]) -> JointDistribution {
        let ne_out = map[0].len();
        let [na, nb, ne] = self.dims;
        let mut p = vec![0.0; na * nb * ne_out];
        for a in 0..na {
            for b in 0..nb {
                for (e, row) in map.iter().enumerate().take(ne) {
                    let v = self.get(a, b, e);
                    if v == 0.0 {
                        continue;
                    }
                    for (f, m) in row.iter().enumerate() {
                        p[(a * nb + b) * ne_out + f] += v * m;
                    }
                }
            }
        }
        JointDistribution {
            dims: [na, nb, ne_out],
            p,
        }
    }
}

/// `I(A;B)` of a distribution (Eve marginalized).
pub fn mutual_information(p: &JointDistribution) -> f64 {
    p.mutual_information(Parties::AB)
}

/// `max(I(A;B) − I(A;E), I(A;B) − I(B;E))`, raw.
pub fn csiszar_korner(p: &JointDistribution) -> f64 {
    let iab = p.mutual_information(Parties::AB);
    (iab - p.mutual_information(Parties::AE)).max(iab - p.mutual_information(Parties::BE))
}

fn simplex_points(dim: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(dim: usize, left: usize, steps: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if dim == 1 {
            cur.push(left as f64 / steps as f64);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k as f64 / steps as f64);
            rec(dim - 1, left - k, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, steps, steps, &mut Vec::new(), &mut out);
    out
}

const GRID_BUDGET: usize = 100_000;

/// Upper estimate of the intrinsic information `I(A;B↓E)`: the minimum of
/// `I(A;B|Ē)` over stochastic maps `E → Ē` with `|Ē| = |E|`.
///
/// The search scans all maps whose rows lie on a simplex grid with
/// `resolution` steps (reduced until the grid fits a fixed budget) and then
/// refines the best one by pairwise mass transfers with shrinking step.
/// The identity map is a grid point, so the result never exceeds `I(A;B|E)`.
pub fn intrinsic_information(p: &JointDistribution, resolution: usize) -> Result<f64, RateError> {
    let [na, nb, ne] = p.dims;
    if let Some(&big) = p.dims.iter().find(|&&d| d > 4) {
        return Err(RateError::UnsupportedSize(big));
    }
    let _ = (na, nb);
    let cost = |map: &[Vec<f64>]| p.process_eve(map).conditional_mutual_information();

    let mut steps = resolution.max(1);
    let mut rows = simplex_points(ne, steps);
    while steps > 1 && rows.len().saturating_pow(ne as u32) > GRID_BUDGET {
        steps -= 1;
        rows = simplex_points(ne, steps);
    }

    let mut best_map: Vec<Vec<f64>> = (0..ne).map(|i| (0..ne).map(|j| (i == j) as u8 as f64).collect()).collect();
    let mut best = cost(&best_map);
    let mut idx = vec![0usize; ne];
    'grid: loop {
        let map: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
        let c = cost(&map);
        if c < best {
            best = c;
            best_map = map;
        }
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < rows.len() {
                continue 'grid;
            }
            *slot = 0;
        }
        break;
    }

    let mut delta = 0.5 / steps as f64;
    while delta > 1e-9 && best > 0.0 {
        let mut improved = false;
        for e in 0..ne {
            for from in 0..ne {
                for to in 0..ne {
                    if from == to || best_map[e][from] <= 0.0 {
                        continue;
                    }
                    let d = delta.min(best_map[e][from]);
                    let mut cand = best_map.clone();
                    cand[e][from] -= d;
                    cand[e][to] += d;
                    let c = cost(&cand);
                    if c < best - 1e-15 {
                        best = c;
                        best_map = cand;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            delta *= 0.5;
        }
    }
    Ok(best)
}

/// Distribution of an intercept-resend attack on a fraction `4ε` of BB84
/// signals, after sifting. Eve's symbol is her bit when she guessed the
/// basis, otherwise `2` (she learns from the announcement that her result
/// is useless).
pub fn intercept_resend_distribution(epsilon: f64) -> Result<JointDistribution, RateError> {
    if !(0.0..=0.25).contains(&epsilon) {
        return Err(domain("intercept_resend_distribution", format!("epsilon = {epsilon}")));
    }
    let q = 4.0 * epsilon;
    JointDistribution::from_fn([2, 2, 3], |a, b, e| {
        let mut v = 0.0;
        if a == b && e == 2 {
            v += 0.5 * (1.0 - q);
        }
        if a == b && e == a {
            v += 0.5 * q / 2.0;
        }
        if e == 2 {
            v += 0.5 * q / 2.0 * 0.5;
        }
        v
    })
}

/// `1 − h(ε) − h(2ε)`
pub fn rate_mayers(epsilon: f64) -> Result<f64, RateError> {
    if !(0.0..=0.25).contains(&epsilon) {
        return Err(domain("rate_mayers", format!("epsilon = {epsilon} outside [0, 0.25]")));
    }
    Ok(1.0 - h(epsilon) - h(2.0 * epsilon))
}

/// `1 − 2h(ε)`
pub fn rate_shor_preskill(epsilon: f64) -> Result<f64, RateError> {
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(domain("rate_shor_preskill", format!("epsilon = {epsilon} outside [0, 0.5]")));
    }
    Ok(1.0 - 2.0 * h(epsilon))
}

/// `1 + (1 − 3ε/2) log₂(1 − 3ε/2) + (3ε/2) log₂(ε/2)`
pub fn rate_six_state(epsilon: f64) -> Result<f64, RateError> {
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(domain("rate_six_state", format!("epsilon = {epsilon} outside [0, 0.5]")));
    }
    let x = 1.5 * epsilon;
    let tail = if epsilon > 0.0 { x * (epsilon / 2.0).log2() } else { 0.0 };
    Ok(1.0 + xlog2x(1.0 - x) + tail)
}

/// `(1−Δ) − h(ε) − (1−Δ) h(ε/(1−Δ))`, per detected signal.
pub fn rate_gllp(epsilon: f64, delta: f64) -> Result<f64, RateError> {
    if !(0.0..1.0).contains(&delta) {
        return Err(domain("rate_gllp", format!("delta = {delta} outside [0, 1)")));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(domain("rate_gllp", format!("epsilon = {epsilon}")));
    }
    let e1 = epsilon / (1.0 - delta);
    if e1 > 1.0 {
        return Err(domain("rate_gllp", format!("epsilon/(1-delta) = {e1} exceeds 1")));
    }
    Ok((1.0 - delta) - h(epsilon) - (1.0 - delta) * h(e1))
}

/// Probability that a Poisson pulse carries two or more photons.
pub fn p_multi(mu: f64) -> f64 {
    -(-mu).exp_m1() - mu * (-mu).exp()
}

/// Probability that Bob registers at least one click, with `eta` the total
/// transmittance (channel times detector efficiency) and `p_dark` per
/// detector: `1 − (1−p_dark)² e^{−μη}`.
pub fn p_exp(mu: f64, eta: f64, p_dark: f64) -> f64 {
    1.0 - (1.0 - p_dark).powi(2) * (-mu * eta).exp()
}

/// `Δ = p_multi / p_exp`; may exceed 1 when multi-photon pulses outnumber
/// detections.
pub fn multiphoton_fraction(mu: f64, eta: f64, p_dark: f64) -> Result<f64, RateError> {
    if !(mu > 0.0) || !(0.0..=1.0).contains(&eta) || !(0.0..=1.0).contains(&p_dark) {
        return Err(domain(
            "multiphoton_fraction",
            format!("mu = {mu}, eta = {eta}, p_dark = {p_dark}"),
        ));
    }
    let pe = p_exp(mu, eta, p_dark);
    if pe <= 0.0 {
        return Err(domain("multiphoton_fraction", "no detections (p_exp = 0)"));
    }
    Ok(p_multi(mu) / pe)
}

/// Expected error rate for misalignment `e_d` and dark counts that give a
/// random bit: `[e_d(1 − e^{−μη}) + Y₀/2] / p_exp` with `Y₀ = 1 − (1−p_dark)²`.
pub fn qber_model(mu: f64, eta: f64, p_dark: f64, e_d: f64) -> f64 {
    let y0 = 1.0 - (1.0 - p_dark).powi(2);
    let pe = p_exp(mu, eta, p_dark);
    if pe <= 0.0 {
        return 0.5;
    }
    ((e_d * -(-mu * eta).exp_m1() + 0.5 * y0) / pe).min(0.5)
}

/// How the error rate depends on the mean photon number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorModel {
    Fixed { epsilon: f64 },
    Misalignment { e_d: f64 },
}

impl ErrorModel {
    pub fn epsilon(&self, mu: f64, eta: f64, p_dark: f64) -> f64 {
        match *self {
            ErrorModel::Fixed { epsilon } => epsilon,
            ErrorModel::Misalignment { e_d } => qber_model(mu, eta, p_dark, e_d),
        }
    }
}

/// Weak-pulse BB84 key bits per sent pulse: `p_exp · R_gllp(ε, Δ)`. For
/// `Δ ≥ 1` the single-photon term is gone and the raw value
/// `p_exp · ((1−Δ) − h(ε))` is returned.
pub fn gllp_rate_per_pulse(mu: f64, eta: f64, p_dark: f64, model: &ErrorModel) -> Result<f64, RateError> {
    let delta = multiphoton_fraction(mu, eta, p_dark)?;
    let eps = model.epsilon(mu, eta, p_dark);
    let pe = p_exp(mu, eta, p_dark);
    let r = if delta < 1.0 && eps / (1.0 - delta) <= 1.0 {
        rate_gllp(eps, delta)?
    } else {
        (1.0 - delta) - h(eps.min(1.0))
    };
    Ok(pe * r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuOptimum {
    pub mu: f64,
    pub rate_per_pulse: f64,
}

/// Maximizes [`gllp_rate_per_pulse`] over `μ ∈ (0, 2]`: a logarithmic grid
/// scan brackets the maximum, golden-section search refines it to `1e-6`.
pub fn optimize_mu(eta: f64, p_dark: f64, model: &ErrorModel) -> Result<MuOptimum, RateError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(domain("optimize_mu", format!("eta = {eta} outside (0, 1]")));
    }
    let f = |mu: f64| gllp_rate_per_pulse(mu, eta, p_dark, model).unwrap_or(f64::NEG_INFINITY);
    const GRID: usize = 400;
    let lo = 1e-7f64.ln();
    let hi = 2f64.ln();
    let grid: Vec<f64> = (0..=GRID).map(|i| (lo + (hi - lo) * i as f64 / GRID as f64).exp()).collect();
    let (best_i, best) = grid
        .iter()
        .map(|&m| f(m))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if !(best > 0.0) {
        return Err(RateError::NoPositiveRate);
    }
    let mut a = grid[best_i.saturating_sub(1)];
    let mut b = grid[(best_i + 1).min(GRID)];
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-6 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mu = 0.5 * (a + b);
    Ok(MuOptimum {
        mu,
        rate_per_pulse: f(mu),
    })
}

/// `(1 − e^{−μη})(1 − e^{−μ(1−η)})`
pub fn bound_beamsplit(mu: f64, eta: f64) -> f64 {
    (-(-mu * eta).exp_m1()) * (-(-mu * (1.0 - eta)).exp_m1())
}

/// `(1 + μ)e^{−μ} − e^{−μη}`; negative means no secure key.
pub fn bound_pns(mu: f64, eta: f64) -> f64 {
    (1.0 + mu) * (-mu).exp() - (-mu * eta).exp()
}

/// Channel transmittance below which unambiguous discrimination of both
/// B92 states is undetectable: `1 − |⟨φ0|φ1⟩|`.
pub fn usd_threshold(overlap: f64) -> f64 {
    1.0 - overlap
}

/// `Y_n = [1 − (1−η)ⁿ](1 − p_dark) + p_dark`
pub fn yield_yn(n: u32, eta: f64, p_dark: f64) -> f64 {
    (1.0 - (1.0 - eta).powi(n as i32)) * (1.0 - p_dark) + p_dark
}

/// `Q_μ = e^{−μ} Σ_{n≤n_max} Y_n μⁿ/n!`. The omitted tail is below the
/// Poisson tail mass `P(N > n_max)`, which is under `1e-12` for `μ ≤ 1`
/// and `n_max ≥ 25`.
pub fn gain_qmu(mu: f64, eta: f64, p_dark: f64, n_max: u32) -> f64 {
    let mut term = (-mu).exp();
    let mut sum = 0.0;
    for n in 0..=n_max {
        if n > 0 {
            term *= mu / n as f64;
        }
        sum += term * yield_yn(n, eta, p_dark);
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyEstimate {
    /// Transmittance fitted from the two gains.
    pub eta_fit: f64,
    pub y0: f64,
    pub y1: f64,
    /// Conservative lower bound on `Y₁` with `Y₀ = p_dark` and `Y_n ≤ 1`.
    pub y1_lower: f64,
    /// False when an estimate leaves `[0, 1]`.
    pub consistent: bool,
}

/// Two-intensity estimate of the vacuum and single-photon yields.
///
/// The gains are fitted exactly by the functional form
/// `Q_μ = 1 − (1−Y₀) e^{−μη}` implied by the yield model, which gives
/// `η = ln((1−Q_d)/(1−Q_s)) / (μ_s − μ_d)`, `Y₀` from either gain and
/// `Y₁ = η + Y₀ − ηY₀`. A PNS attacker who reshapes the yield
/// per photon number breaks this form, which shows up as a shifted `Y₁`.
pub fn decoy_estimate(q_signal: f64, q_decoy: f64, mu_s: f64, mu_d: f64, p_dark: f64) -> Result<DecoyEstimate, RateError> {
    if mu_s == mu_d {
        return Err(RateError::SingularSystem);
    }
    for (name, q) in [("q_signal", q_signal), ("q_decoy", q_decoy)] {
        if !(q > 0.0 && q < 1.0) {
            return Err(domain("decoy_estimate", format!("{name} = {q} outside (0, 1)")));
        }
    }
    let eta = ((1.0 - q_decoy) / (1.0 - q_signal)).ln() / (mu_s - mu_d);
    let y0 = 1.0 - (1.0 - q_signal) * (mu_s * eta).exp();
    let y1 = eta + y0 - eta * y0;
    let (ms, md, qs, qd) = if mu_s > mu_d {
        (mu_s, mu_d, q_signal, q_decoy)
    } else {
        (mu_d, mu_s, q_decoy, q_signal)
    };
    let y1_lower = ms / (ms * md - md * md)
        * (qd * md.exp() - qs * ms.exp() * md * md / (ms * ms) - (ms * ms - md * md) / (ms * ms) * p_dark);
    let in_unit = |x: f64| (-1e-12..=1.0 + 1e-12).contains(&x);
    Ok(DecoyEstimate {
        eta_fit: eta,
        y0,
        y1,
        y1_lower,
        consistent: in_unit(y0) && in_unit(y1) && in_unit(eta),
    })
}

/// Delta-method standard error of the `Y₁` estimate when the gains are
/// binomial frequencies over `n_signal` and `n_decoy` pulses.
pub fn decoy_y1_stderr(
    q_signal: f64,
    n_signal: u64,
    q_decoy: f64,
    n_decoy: u64,
    mu_s: f64,
    mu_d: f64,
    p_dark: f64,
) -> Result<f64, RateError> {
    let y1 = |qs: f64, qd: f64| decoy_estimate(qs, qd, mu_s, mu_d, p_dark).map(|e| e.y1);
    let var = |q: f64, n: u64| q * (1.0 - q) / n.max(1) as f64;
    let step = |q: f64| 1e-6 * q.min(1.0 - q).max(1e-12);
    let (hs, hd) = (step(q_signal), step(q_decoy));
    let ds = (y1(q_signal + hs, q_decoy)? - y1(q_signal - hs, q_decoy)?) / (2.0 * hs);
    let dd = (y1(q_signal, q_decoy + hd)? - y1(q_signal, q_decoy - hd)?) / (2.0 * hd);
    Ok((ds * ds * var(q_signal, n_signal) + dd * dd * var(q_decoy, n_decoy)).sqrt())
}

/// Raw formula value next to `max(0, raw)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateValue {
    pub raw: f64,
    pub clamped: f64,
}

impl RateValue {
    pub fn new(raw: f64) -> Self {
        Self {
            raw,
            clamped: raw.max(0.0),
        }
    }

    pub fn secure(&self) -> bool {
        self.raw > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateInputs {
    pub epsilon: f64,
    #[serde(default)]
    pub mu: Option<f64>,
    /// Total transmittance.
    #[serde(default)]
    pub eta: Option<f64>,
    /// Overrides the multi-photon fraction computed from `mu`, `eta`, `p_dark`.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub p_dark: f64,
    #[serde(default)]
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulaError {
    pub formula: String,
    pub message: String,
}

/// Every applicable formula evaluated at one parameter point. Rates of
/// single-photon protocols are per sifted bit; `r_gllp` is per detected
/// signal; the bounds are per sent pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub protocol: String,
    pub inputs: RateInputs,
    /// `Δ` used for `r_gllp`, with the composition it came from.
    pub delta: Option<f64>,
    pub delta_composition: Option<String>,
    pub r_mayers: Option<RateValue>,
    pub r_shor_preskill: Option<RateValue>,
    pub r_six_state: Option<RateValue>,
    pub r_gllp: Option<RateValue>,
    pub bound_beamsplit: Option<RateValue>,
    pub bound_pns: Option<RateValue>,
    pub usd_threshold: Option<f64>,
    pub ck_lower: Option<RateValue>,
    pub intrinsic_upper: Option<f64>,
    pub errors: Vec<FormulaError>,
}

pub const DELTA_COMPOSITION: &str = "p_multi = 1 - e^-mu - mu e^-mu; p_exp = 1 - (1-p_dark)^2 e^-(mu eta), eta = channel x detector";

impl RateReport {
    pub fn evaluate(protocol: &str, inputs: RateInputs) -> RateReport {
        let mut errors = Vec::new();
        let mut keep = |name: &str, r: Result<f64, RateError>| match r {
            Ok(v) => Some(RateValue::new(v)),
            Err(e) => {
                errors.push(FormulaError {
                    formula: name.into(),
                    message: e.to_string(),
                });
                None
            }
        };
        let eps = inputs.epsilon;
        let r_mayers = keep("rate_mayers", rate_mayers(eps));
        let r_shor_preskill = keep("rate_shor_preskill", rate_shor_preskill(eps));
        let r_six_state = keep("rate_six_state", rate_six_state(eps));

        let (delta, delta_composition) = match (inputs.delta, inputs.mu, inputs.eta) {
            (Some(d), _, _) => (Some(d), Some("given".to_string())),
            (None, Some(mu), Some(eta)) => match multiphoton_fraction(mu, eta, inputs.p_dark) {
                Ok(d) => (Some(d), Some(DELTA_COMPOSITION.to_string())),
                Err(e) => {
                    keep("multiphoton_fraction", Err(e));
                    (None, None)
                }
            },
            _ => (None, None),
        };
        let r_gllp = delta.and_then(|d| keep("rate_gllp", rate_gllp(eps, d)));

        let (bound_beamsplit, bound_pns) = match (inputs.mu, inputs.eta) {
            (Some(mu), Some(eta)) if mu > 0.0 && eta > 0.0 && eta <= 1.0 => (
                Some(RateValue::new(self::bound_beamsplit(mu, eta))),
                Some(RateValue::new(self::bound_pns(mu, eta))),
            ),
            (Some(mu), Some(eta)) => {
                keep(
                    "bound_beamsplit",
                    Err(domain("bound_beamsplit", format!("mu = {mu}, eta = {eta}"))),
                );
                (None, None)
            }
            _ => (None, None),
        };
        let usd = match inputs.overlap {
            Some(o) if (0.0..=1.0).contains(&o) => Some(usd_threshold(o)),
            Some(o) => {
                keep("usd_threshold", Err(domain("usd_threshold", format!("overlap = {o}"))));
                None
            }
            None => None,
        };
        let ir = intercept_resend_distribution(eps).ok();
        let ck_lower = ir.as_ref().map(|p| RateValue::new(csiszar_korner(p)));
        let intrinsic_upper = ir.as_ref().and_then(|p| intrinsic_information(p, 4).ok());

        RateReport {
            protocol: protocol.to_string(),
            inputs,
            delta,
            delta_composition,
            r_mayers,
            r_shor_preskill,
            r_six_state,
            r_gllp,
            bound_beamsplit,
            bound_pns,
            usd_threshold: usd,
            ck_lower,
            intrinsic_upper,
            errors,
        }
    }

    fn rated(&self) -> [(&'static str, Option<RateValue>); 7] {
        [
            ("r_mayers", self.r_mayers),
            ("r_shor_preskill", self.r_shor_preskill),
            ("r_six_state", self.r_six_state),
            ("r_gllp", self.r_gllp),
            ("bound_beamsplit", self.bound_beamsplit),
            ("bound_pns", self.bound_pns),
            ("ck_lower", self.ck_lower),
        ]
    }

    /// Stable column list; units in brackets.
    pub fn csv_header() -> String {
        let mut cols: Vec<String> = [
            "protocol",
            "epsilon[1]",
            "mu[photons/pulse]",
            "eta[1]",
            "p_dark[1/gate]",
            "delta[1]",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for (name, unit) in [
            ("r_mayers", "bit/sifted bit"),
            ("r_shor_preskill", "bit/sifted bit"),
            ("r_six_state", "bit/sifted bit"),
            ("r_gllp", "bit/detection"),
            ("bound_beamsplit", "1/pulse"),
            ("bound_pns", "1/pulse"),
            ("ck_lower", "bit/sifted bit"),
        ] {
            cols.push(format!("{name}_raw[{unit}]"));
            cols.push(format!("{name}_clamped[{unit}]"));
        }
        cols.push("usd_threshold[1]".into());
        cols.push("intrinsic_upper[bit/sifted bit]".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
        let mut cols = vec![
            self.protocol.clone(),
            fmt_num(self.inputs.epsilon),
            opt(self.inputs.mu),
            opt(self.inputs.eta),
            fmt_num(self.inputs.p_dark),
            opt(self.delta),
        ];
        for (_, v) in self.rated() {
            cols.push(opt(v.map(|v| v.raw)));
            cols.push(opt(v.map(|v| v.clamped)));
        }
        cols.push(opt(self.usd_threshold));
        cols.push(opt(self.intrinsic_upper));
        cols.join(",")
    }

    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut s = format!("rate report ({})\n", self.protocol);
        s += &format!("  epsilon          {}\n", fmt_num(self.inputs.epsilon));
        if let Some(mu) = self.inputs.mu {
            s += &format!("  mu               {}\n", fmt_num(mu));
        }
        if let Some(eta) = self.inputs.eta {
            s += &format!("  eta              {}\n", fmt_num(eta));
        }
        s += &format!("  p_dark           {}\n", fmt_num(self.inputs.p_dark));
        if let Some(d) = self.delta {
            s += &format!("  delta            {}\n", fmt_num(d));
        }
        for (name, v) in self.rated() {
            if let Some(v) = v {
                let flag = if v.secure() { "" } else { "  (no secure key)" };
                s += &format!("  {name:<16} {:>14} clamped {:>14}{flag}\n", fmt_num(v.raw), fmt_num(v.clamped));
            }
        }
        if let Some(t) = self.usd_threshold {
            s += &format!("  usd_threshold    {}\n", fmt_num(t));
        }
        if let Some(i) = self.intrinsic_upper {
            s += &format!("  intrinsic_upper  {}\n", fmt_num(i));
        }
        for e in &self.errors {
            s += &format!("  error in {}: {}\n", e.formula, e.message);
        }
        s
    }
}

/// Fixed-precision formatting so reports are byte-stable.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if x.abs() >= 1e-3 && x.abs() < 1e6 {
        format!("{x:.6}")
    } else {
        format!("{x:.6e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(0.11).unwrap() - 0.49993).abs() < 1e-4);
        assert!((binary_entropy(0.03).unwrap() - 0.1944).abs() < 1e-4);
        assert!(binary_entropy(1.5).is_err());
    }

    #[test]
    fn bsc_information() {
        let e = 0.25;
        let p = JointDistribution::bipartite(2, 2, vec![(1.0 - e) / 2.0, e / 2.0, e / 2.0, (1.0 - e) / 2.0]).unwrap();
        assert!((mutual_information(&p) - 0.18872).abs() < 1e-5);
    }

    #[test]
    fn distribution_validation() {
        assert!(JointDistribution::bipartite(2, 2, vec![0.5, 0.5, 0.1, 0.0]).is_err());
        assert!(JointDistribution::bipartite(2, 2, vec![0.5, 0.5]).is_err());
        assert!(JointDistribution::bipartite(2, 2, vec![1.5, -0.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn intercept_resend_eve_information_is_two_epsilon() {
        for eps in [0.0, 0.05, 0.1, 0.25] {
            let p = intercept_resend_distribution(eps).unwrap();
            assert!((p.mutual_information(Parties::AE) - 2.0 * eps).abs() < 1e-12);
            assert!((mutual_information(&p) - (1.0 - h(eps))).abs() < 1e-12);
        }
    }

    #[test]
    fn formula_values() {
        assert_eq!(rate_shor_preskill(0.0).unwrap(), 1.0);
        assert_eq!(rate_six_state(0.0).unwrap(), 1.0);
        assert_eq!(rate_mayers(0.0).unwrap(), 1.0);
        assert!(rate_mayers(0.3).is_err());
        assert!((rate_gllp(0.05, 0.0).unwrap() - rate_shor_preskill(0.05).unwrap()).abs() < 1e-15);
        assert!((bound_beamsplit(0.1, 0.5) - 0.00238).abs() < 1e-5);
        assert!((bound_pns(0.5, 0.1) + 0.0414).abs() < 1e-4);
        assert_eq!(usd_threshold(0.0), 1.0);
        assert_eq!(usd_threshold(1.0), 0.0);
        assert!((yield_yn(1, 0.1, 1e-5) - 0.100009).abs() < 1e-9);
        assert_eq!(yield_yn(0, 0.3, 2e-6), 2e-6);
    }

    #[test]
    fn gllp_domain() {
        assert!(rate_gllp(0.1, 1.0).is_err());
        assert!(rate_gllp(0.6, 0.5).is_err());
        assert!(rate_gllp(0.3, 0.5).unwrap() < 0.0);
    }

    #[test]
    fn report_flags_negative_pns_bound() {
        let r = RateReport::evaluate(
            "bb84",
            RateInputs {
                epsilon: 0.0,
                mu: Some(0.5),
                eta: Some(0.1),
                ..Default::default()
            },
        );
        assert!(!r.bound_pns.unwrap().secure());
        assert_eq!(r.bound_pns.unwrap().clamped, 0.0);
        assert!(r.to_text().contains("no secure key"));
        assert_eq!(
            RateReport::csv_header().split(',').count(),
            r.csv_row().split(',').count()
        );
    }

    #[test]
    fn report_collects_domain_errors() {
        let r = RateReport::evaluate(
            "bb84",
            RateInputs {
                epsilon: 0.3,
                ..Default::default()
            },
        );
        assert!(r.r_mayers.is_none());
        assert!(r.errors.iter().any(|e| e.formula == "rate_mayers"));
        assert!(r.r_shor_preskill.is_some());
    }

    #[test]
    fn optimize_mu_example() {
        let m = optimize_mu(0.1, 0.0, &ErrorModel::Fixed { epsilon: 0.01 }).unwrap();
        assert!((0.05..=0.2).contains(&m.mu), "{m:?}");
        let f = |mu| gllp_rate_per_pulse(mu, 0.1, 0.0, &ErrorModel::Fixed { epsilon: 0.01 }).unwrap();
        assert!(f(m.mu / 2.0) < f(m.mu));
        assert!(f(m.mu * 2.0) < f(m.mu));
        let m1 = optimize_mu(1.0, 0.0, &ErrorModel::Fixed { epsilon: 0.0 }).unwrap();
        assert!(m1.mu.is_finite() && m1.rate_per_pulse > 0.0);
        assert_eq!(
            optimize_mu(0.1, 0.0, &ErrorModel::Fixed { epsilon: 0.2 }),
            Err(RateError::NoPositiveRate)
        );
    }

    #[test]
    fn decoy_fit_is_exact_on_model_gains() {
        let (eta, pd) = (0.1, 0.0);
        let qs = gain_qmu(0.8, eta, pd, 40);
        let qd = gain_qmu(0.12, eta, pd, 40);
        let e = decoy_estimate(qs, qd, 0.8, 0.12, pd).unwrap();
        assert!((e.y1 - yield_yn(1, eta, pd)).abs() < 1e-9);
        assert!(e.y1_lower <= e.y1 + 1e-12);
        assert!(e.consistent);
        assert_eq!(decoy_estimate(0.1, 0.1, 0.5, 0.5, 0.0), Err(RateError::SingularSystem));
    }
}
