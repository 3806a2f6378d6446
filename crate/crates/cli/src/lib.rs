//! Scenario runner for the `qkdsim` binary.
//!
//! A [`Scenario`] is loaded from a JSON file (or one of the bundled ones),
//! simulated, pushed through the post-processing pipeline, and compared
//! against the analytic rate formulas. Every random draw derives from the
//! scenario seed, so reports are reproducible byte for byte.

pub mod report;
pub mod scenario;

use std::str::FromStr;

use qkd_core::bell::{chsh_analytic, chsh_estimate};
use qkd_core::exec::{map_indexed, Exec};
use qkd_core::postproc::{run_pipeline, FinalKeyResult};
use qkd_core::protocols::{run_session, Protocol, SessionTranscript};
use qkd_core::quantum::SourceModel;
use qkd_core::rates::{
    decoy_estimate, gllp_rate_per_pulse, optimize_mu, qber_model, rate_gllp, ErrorModel, RateError, RateInputs, RateReport,
    RateValue,
};
use qkd_core::rng::derive_seed;
use qkd_core::SimRng;
use serde::Serialize;
use thiserror::Error;

pub use report::{Analytic, BellReport, DecoySummary, SessionReport, SweepReport};
pub use scenario::{Format, Overrides, Scenario};

/// Minimum samples per CHSH setting pair before an estimate is reported.
const CHSH_MIN_COUNT: u64 = 100;

#[derive(Debug, Error, PartialEq)]
pub enum CliError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        1
    }
}

/// Exit status for a finished run: 0 with a key, 2 on an abort or empty key.
pub fn run_exit_code(report: &SessionReport) -> i32 {
    if report.abort.is_some() || report.final_key_length == 0 {
        2
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    LengthKm,
    Mu,
    /// Sets the channel misalignment, which is the error floor of the link.
    Epsilon,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::LengthKm => "length_km",
            Axis::Mu => "mu",
            Axis::Epsilon => "epsilon",
        }
    }

    pub fn unit(&self) -> &'static str {
        match self {
            Axis::LengthKm => "km",
            Axis::Mu => "photons/pulse",
            Axis::Epsilon => "1",
        }
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "length_km" => Ok(Axis::LengthKm),
            "mu" => Ok(Axis::Mu),
            "epsilon" => Ok(Axis::Epsilon),
            _ => Err(format!("unknown axis {s:?} (expected length_km, mu or epsilon)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub axis: Axis,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

impl SweepSpec {
    /// Evenly spaced, strictly increasing axis values.
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let bad = |m: String| CliError::Config {
            path: "sweep".into(),
            message: m,
        };
        if !self.from.is_finite() || !self.to.is_finite() {
            return Err(bad("range bounds must be finite".into()));
        }
        if self.steps == 0 || self.from > self.to || (self.steps > 1 && self.from == self.to) {
            return Err(bad(format!(
                "empty range: {} steps from {} to {}",
                self.steps, self.from, self.to
            )));
        }
        if self.steps == 1 {
            return Ok(vec![self.from]);
        }
        let span = self.to - self.from;
        Ok((0..self.steps)
            .map(|i| self.from + span * i as f64 / (self.steps - 1) as f64)
            .collect())
    }
}

fn config(path: &str, e: impl ToString) -> CliError {
    CliError::Config {
        path: path.into(),
        message: e.to_string(),
    }
}

/// Simulates sweep point `point` of the scenario (a plain run is point 0).
pub fn simulate(s: &Scenario, point: u64) -> Result<(SessionTranscript, FinalKeyResult), CliError> {
    let rng = SimRng::new(derive_seed(s.seed, point));
    let t = run_session(&s.config, &s.link, &s.eve, &rng.fork(0)).map_err(|e| config("scenario", e))?;
    let result = run_pipeline(&t, &s.pipeline, &mut rng.fork(1));
    Ok((t, result))
}

/// Error rate the link model predicts, used when nothing was sifted.
fn model_qber(s: &Scenario) -> f64 {
    let eta = s.total_transmittance();
    let pd = s.link.detector.dark_prob;
    let e_d = s.link.channel.misalignment;
    match s.signal_mu() {
        Some(mu) => qber_model(mu, eta, pd, e_d),
        None => {
            let y0 = 1.0 - (1.0 - pd).powi(2);
            let p = eta + y0 - eta * y0;
            if p > 0.0 {
                ((e_d * eta + 0.5 * y0) / p).min(0.5)
            } else {
                0.5
            }
        }
    }
}

fn analytic(s: &Scenario) -> Analytic {
    let eta = s.total_transmittance();
    let p_dark = s.link.detector.dark_prob;
    let e_d = s.link.channel.misalignment;
    let mu = s.signal_mu();
    let model = ErrorModel::Misalignment { e_d };
    let prepare_measure = !s.config.protocol.is_entanglement_based();
    let gllp_model = mu
        .filter(|_| prepare_measure)
        .and_then(|mu| gllp_rate_per_pulse(mu, eta, p_dark, &model).ok())
        .map(RateValue::new);
    // with no positive rate anywhere the best choice is not to send
    let (mu_opt, gllp_opt) = if prepare_measure && mu.is_some() && eta > 0.0 {
        match optimize_mu(eta, p_dark, &model) {
            Ok(o) => (Some(o.mu), Some(RateValue::new(o.rate_per_pulse))),
            Err(RateError::NoPositiveRate) => (None, Some(RateValue::new(0.0))),
            Err(_) => (None, None),
        }
    } else {
        (None, None)
    };
    Analytic {
        mu,
        eta,
        p_dark,
        e_d,
        gllp_model,
        mu_opt,
        gllp_opt,
    }
}

fn rate_inputs(s: &Scenario, epsilon: f64) -> RateInputs {
    let overlap = match s.config.protocol {
        Protocol::B92 { overlap } => Some(overlap),
        _ => None,
    };
    let delta = match s.link.source {
        SourceModel::IdealSinglePhoton if s.signal_mu().is_none() => Some(0.0),
        _ => None,
    };
    RateInputs {
        epsilon,
        mu: s.signal_mu(),
        eta: Some(s.total_transmittance()),
        delta,
        p_dark: s.link.detector.dark_prob,
        overlap,
    }
}

fn session_report(s: &Scenario, point: u64) -> Result<SessionReport, CliError> {
    let (t, key) = simulate(s, point)?;
    let measured = t.qber();
    let (epsilon, epsilon_source) = match measured {
        Some(q) => (q, "measured"),
        None => (model_qber(s), "model"),
    };
    let rates = RateReport::evaluate(s.config.protocol.name(), rate_inputs(s, epsilon));
    let sim_gllp_rate = match (measured, rates.delta) {
        (Some(q), Some(d)) => rate_gllp(q, d).ok().map(|r| t.detection_rate() * r),
        _ => None,
    };
    let decoy = match (t.decoy, s.config.protocol) {
        (Some(counters), Protocol::DecoyBb84 { signal_mu, decoy_mu, .. }) => Some(DecoySummary {
            counters,
            estimate: decoy_estimate(
                counters.signal.gain(),
                counters.decoy.gain(),
                signal_mu,
                decoy_mu,
                s.link.detector.dark_prob,
            )
            .ok(),
        }),
        _ => None,
    };
    let chsh = t.chsh.as_ref().and_then(|c| chsh_estimate(c, CHSH_MIN_COUNT).ok());
    Ok(SessionReport {
        scenario: s.name.clone(),
        protocol: s.config.protocol.name().to_string(),
        seed: s.seed,
        num_pulses: t.pulse_count,
        detections: t.detection_count,
        detection_rate: t.detection_rate(),
        sifted_bits: t.sifted_len(),
        sifted_fraction: t.sifted_fraction(),
        qber: measured,
        qber_estimate: key.qber_estimate,
        eve_known_fraction: t.eve_known_fraction(),
        final_key_length: key.final_length,
        keys_match: key.keys_match,
        final_key_hex: key.alice_key.to_hex(),
        leaked: key.leaked_accounting,
        abort: key.abort_reason,
        decoy,
        chsh,
        sim_gllp_rate,
        analytic: analytic(s),
        epsilon_source: epsilon_source.to_string(),
        rates,
    })
}

/// Runs the scenario once: session, post-processing and rate comparison.
pub fn cmd_run(s: &Scenario) -> Result<SessionReport, CliError> {
    session_report(s, 0)
}

/// The scenario with one axis set to `value`.
pub fn with_axis(s: &Scenario, axis: Axis, value: f64) -> Result<Scenario, CliError> {
    let mut s = s.clone();
    match axis {
        Axis::LengthKm => {
            if s.fixed_transmittance {
                return Err(config("channel", "length_km sweep needs a channel given by length, not transmittance"));
            }
            if value < 0.0 {
                return Err(config("sweep", format!("length {value} km is negative")));
            }
            s.link.channel.length_km = value;
        }
        Axis::Mu => {
            if let Protocol::DecoyBb84 { signal_mu, decoy_mu, .. } = &mut s.config.protocol {
                if value <= *decoy_mu {
                    return Err(config("sweep", format!("signal mu {value} must exceed decoy mu {decoy_mu}")));
                }
                *signal_mu = value;
            } else if let SourceModel::AttenuatedLaser { mu } = &mut s.link.source {
                *mu = value;
            } else {
                return Err(config("source", "mu sweep needs an attenuated_laser source or decoy_bb84"));
            }
            s.link.source.validate().map_err(|e| config("source", e))?;
        }
        Axis::Epsilon => {
            s.link.channel.misalignment = value;
            s.link.channel.validate().map_err(|e| config("channel", e))?;
        }
    }
    s.config.validate().map_err(|e| config("protocol", e))?;
    Ok(s)
}

/// One row per axis value. Point `i` uses a seed derived from the scenario
/// seed and `i`, so the points can run in any order.
pub fn cmd_sweep(s: &Scenario, spec: &SweepSpec) -> Result<SweepReport, CliError> {
    let values = spec.values()?;
    let scenarios = values
        .iter()
        .map(|&v| with_axis(s, spec.axis, v))
        .collect::<Result<Vec<_>, _>>()?;
    let points = map_indexed(scenarios.len(), Exec::Parallel, |i| session_report(&scenarios[i], i as u64))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepReport {
        axis: spec.axis,
        values,
        points,
    })
}

/// Evaluates every applicable formula without simulating.
pub fn cmd_rates(protocol: &str, inputs: RateInputs) -> RateReport {
    RateReport::evaluate(protocol, inputs)
}

/// CHSH statistic of an E91 scenario.
pub fn cmd_bell(s: &Scenario) -> Result<BellReport, CliError> {
    if s.config.protocol != Protocol::E91 {
        return Err(config("protocol", format!("bell needs an e91 scenario, got {}", s.config.protocol.name())));
    }
    let (t, _) = simulate(s, 0)?;
    let samples = t.chsh.as_ref().ok_or_else(|| config("protocol", "session recorded no CHSH samples"))?;
    let estimate = chsh_estimate(samples, CHSH_MIN_COUNT).map_err(|e| config("num_pulses", e))?;
    Ok(BellReport {
        scenario: s.name.clone(),
        seed: s.seed,
        pairs: t.pulse_count,
        estimate,
        analytic: chsh_analytic(&samples.settings) * (1.0 - 2.0 * s.link.channel.misalignment),
        local_bound: 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_values() {
        let spec = |from, to, steps| SweepSpec {
            axis: Axis::Mu,
            from,
            to,
            steps,
        };
        assert_eq!(spec(0.1, 0.3, 3).values().unwrap().len(), 3);
        assert_eq!(spec(0.2, 0.2, 1).values().unwrap(), vec![0.2]);
        assert!(spec(0.3, 0.1, 3).values().is_err());
        assert!(spec(0.1, 0.3, 0).values().is_err());
        assert!(spec(0.1, 0.1, 4).values().is_err());
    }

    #[test]
    fn axis_applicability() {
        let s = scenario::load("b92_usd", &Overrides::default()).unwrap();
        assert!(with_axis(&s, Axis::LengthKm, 10.0).is_err());
        assert!(with_axis(&s, Axis::Mu, 0.1).is_err());
        assert!(with_axis(&s, Axis::Epsilon, 0.6).is_err());
        assert!(with_axis(&s, Axis::Epsilon, 0.05).is_ok());
    }
}
