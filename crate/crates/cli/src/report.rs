//! Report types and their text, CSV and JSON renderings. All numbers go
//! through [`fmt_num`] so equal inputs give byte-identical output.

use qkd_core::bell::ChshEstimate;
use qkd_core::postproc::{AbortReason, LeakedAccounting};
use qkd_core::protocols::DecoyCounters;
use qkd_core::rates::{fmt_num, DecoyEstimate, RateReport, RateValue};
use serde::Serialize;

use crate::scenario::Format;
use crate::Axis;

/// Hex characters of the final key shown in text reports.
const KEY_PREVIEW: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecoySummary {
    pub counters: DecoyCounters,
    pub estimate: Option<DecoyEstimate>,
}

/// Model predictions for the scenario's link, independent of the simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analytic {
    pub mu: Option<f64>,
    pub eta: f64,
    pub p_dark: f64,
    pub e_d: f64,
    /// GLLP rate per pulse at the scenario's `mu`.
    pub gllp_model: Option<RateValue>,
    pub mu_opt: Option<f64>,
    pub gllp_opt: Option<RateValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionReport {
    pub scenario: String,
    pub protocol: String,
    pub seed: u64,
    pub num_pulses: usize,
    pub detections: usize,
    pub detection_rate: f64,
    pub sifted_bits: usize,
    pub sifted_fraction: f64,
    /// Error rate of the full sifted keys.
    pub qber: Option<f64>,
    /// Error rate on the publicly compared sample.
    pub qber_estimate: Option<f64>,
    pub eve_known_fraction: f64,
    pub final_key_length: usize,
    pub keys_match: bool,
    pub final_key_hex: String,
    pub leaked: LeakedAccounting,
    pub abort: Option<AbortReason>,
    pub decoy: Option<DecoySummary>,
    pub chsh: Option<ChshEstimate>,
    /// Detection rate times the GLLP rate at the measured error rate.
    pub sim_gllp_rate: Option<f64>,
    pub analytic: Analytic,
    /// `"measured"` or `"model"`: where the rate report's error rate came from.
    pub epsilon_source: String,
    pub rates: RateReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub points: Vec<SessionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BellReport {
    pub scenario: String,
    pub seed: u64,
    pub pairs: usize,
    pub estimate: ChshEstimate,
    /// Expected value for the configured settings and misalignment.
    pub analytic: f64,
    pub local_bound: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn opt_text(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_else(|| "n/a".into())
}

impl SessionReport {
    pub fn csv_header() -> String {
        let cols = [
            "seed",
            "num_pulses[pulses]",
            "detection_rate[1/pulse]",
            "sifted_fraction[1/pulse]",
            "qber[1]",
            "qber_estimate[1]",
            "eve_known_fraction[1]",
            "final_key_length[bits]",
            "sim_final_rate[bit/pulse]",
            "sim_gllp_rate[bit/pulse]",
            "gllp_model_raw[bit/pulse]",
            "gllp_model_clamped[bit/pulse]",
            "mu_opt[photons/pulse]",
            "gllp_opt_raw[bit/pulse]",
            "gllp_opt_clamped[bit/pulse]",
            "abort_stage",
        ];
        format!("{},{}", cols.join(","), RateReport::csv_header())
    }

    pub fn csv_row(&self) -> String {
        let a = &self.analytic;
        let cols = [
            self.seed.to_string(),
            self.num_pulses.to_string(),
            fmt_num(self.detection_rate),
            fmt_num(self.sifted_fraction),
            opt(self.qber),
            opt(self.qber_estimate),
            fmt_num(self.eve_known_fraction),
            self.final_key_length.to_string(),
            fmt_num(self.final_key_length as f64 / self.num_pulses as f64),
            opt(self.sim_gllp_rate),
            opt(a.gllp_model.map(|v| v.raw)),
            opt(a.gllp_model.map(|v| v.clamped)),
            opt(a.mu_opt),
            opt(a.gllp_opt.map(|v| v.raw)),
            opt(a.gllp_opt.map(|v| v.clamped)),
            self.abort.as_ref().map(stage_name).unwrap_or_default(),
        ];
        format!("{},{}", cols.join(","), self.rates.csv_row())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("session report ({}, {})\n", self.scenario, self.protocol);
        let mut line = |k: &str, v: String| s += &format!("  {k:<20} {v}\n");
        line("seed", self.seed.to_string());
        line("pulses", self.num_pulses.to_string());
        line(
            "detections",
            format!("{} (rate {})", self.detections, fmt_num(self.detection_rate)),
        );
        line(
            "sifted bits",
            format!("{} (fraction {})", self.sifted_bits, fmt_num(self.sifted_fraction)),
        );
        line("qber", opt_text(self.qber));
        line("qber estimate", opt_text(self.qber_estimate));
        line("eve known fraction", fmt_num(self.eve_known_fraction));
        let status = if self.final_key_length == 0 {
            ""
        } else if self.keys_match {
            " (keys match)"
        } else {
            " (KEYS DIFFER)"
        };
        line("final key", format!("{} bits{status}", self.final_key_length));
        if !self.final_key_hex.is_empty() {
            let preview: String = self.final_key_hex.chars().take(KEY_PREVIEW).collect();
            let more = if self.final_key_hex.len() > KEY_PREVIEW { "..." } else { "" };
            line("key (hex)", format!("{preview}{more}"));
        }
        let l = &self.leaked;
        line(
            "leaked",
            format!(
                "sampled {} parity {} eve bound {} safety {} otp {}",
                l.sampled_bits, l.parity_bits, l.eve_bound_bits, l.safety_bits, l.otp_bits
            ),
        );
        line(
            "abort",
            match &self.abort {
                Some(r) => format!("{}: {} (value {})", stage_name(r), r.message, fmt_num(r.value)),
                None => "none".into(),
            },
        );
        if let Some(d) = &self.decoy {
            line(
                "decoy gains",
                format!(
                    "signal {} decoy {}",
                    fmt_num(d.counters.signal.gain()),
                    fmt_num(d.counters.decoy.gain())
                ),
            );
            if let Some(e) = d.estimate {
                line(
                    "decoy estimate",
                    format!("y1 {} (lower {}) y0 {}", fmt_num(e.y1), fmt_num(e.y1_lower), fmt_num(e.y0)),
                );
            }
        }
        if let Some(c) = &self.chsh {
            line("chsh", format!("S = {} +/- {}", fmt_num(c.s_hat), fmt_num(c.stderr)));
        }
        line("sim gllp rate", opt_text(self.sim_gllp_rate));
        let a = &self.analytic;
        line("model eta", fmt_num(a.eta));
        if let Some(v) = a.gllp_model {
            line("model gllp rate", fmt_num(v.raw));
        }
        if let (Some(mu), Some(v)) = (a.mu_opt, a.gllp_opt) {
            line("optimal mu", format!("{} (rate {})", fmt_num(mu), fmt_num(v.raw)));
        }
        line("rates epsilon from", self.epsilon_source.clone());
        s += &self.rates.to_text();
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Text => self.to_text(),
            Format::Csv => format!("{}\n{}\n", Self::csv_header(), self.csv_row()),
            Format::Json => json(self),
        }
    }
}

fn stage_name(r: &AbortReason) -> String {
    serde_json::to_value(r.stage)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

impl SweepReport {
    pub fn csv_header(&self) -> String {
        format!("{}[{}],{}", self.axis.name(), self.axis.unit(), SessionReport::csv_header())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.csv_header();
        s.push('\n');
        for (v, p) in self.values.iter().zip(&self.points) {
            s += &format!("{},{}\n", fmt_num(*v), p.csv_row());
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:>14} {:>14} {:>14} {:>10} {:>14} {:>14}\n",
            self.axis.name(),
            "detect_rate",
            "qber",
            "key_bits",
            "sim_gllp",
            "gllp_opt"
        );
        for (v, p) in self.values.iter().zip(&self.points) {
            s += &format!(
                "{:>14} {:>14} {:>14} {:>10} {:>14} {:>14}\n",
                fmt_num(*v),
                fmt_num(p.detection_rate),
                opt_text(p.qber),
                p.final_key_length,
                opt_text(p.sim_gllp_rate),
                opt_text(p.analytic.gllp_opt.map(|r| r.raw)),
            );
        }
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Text => self.to_text(),
            Format::Csv => self.to_csv(),
            Format::Json => json(self),
        }
    }
}

impl BellReport {
    pub fn render(&self, format: Format) -> String {
        let e = &self.estimate;
        match format {
            Format::Text => {
                let mut s = format!("chsh report ({})\n", self.scenario);
                s += &format!("  seed          {}\n", self.seed);
                s += &format!("  pairs         {}\n", self.pairs);
                s += &format!("  S             {} +/- {}\n", fmt_num(e.s_hat), fmt_num(e.stderr));
                s += &format!("  expected      {}\n", fmt_num(self.analytic));
                let verdict = if e.s_hat > self.local_bound { "violated" } else { "satisfied" };
                s += &format!("  local bound   {} ({verdict})\n", fmt_num(self.local_bound));
                for (k, c) in e.correlations.iter().enumerate() {
                    s += &format!("  E{k}            {}\n", fmt_num(*c));
                }
                s
            }
            Format::Csv => format!(
                "seed,pairs[pairs],s_hat[1],stderr[1],expected[1],e0[1],e1[1],e2[1],e3[1]\n{},{},{},{},{},{}\n",
                self.seed,
                self.pairs,
                fmt_num(e.s_hat),
                fmt_num(e.stderr),
                fmt_num(self.analytic),
                e.correlations.iter().map(|c| fmt_num(*c)).collect::<Vec<_>>().join(",")
            ),
            Format::Json => json(self),
        }
    }
}
