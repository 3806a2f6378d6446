use std::path::PathBuf;
use std::process::{Command, Output};

use qkd_cli::scenario::{self, Format, Overrides};
use qkd_cli::{cmd_bell, cmd_rates, cmd_run, cmd_sweep, Axis, CliError, SweepSpec};
use qkd_core::exec::Exec;
use qkd_core::rates::{optimize_mu, ErrorModel, RateInputs, RateReport};

fn qkdsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkdsim")).args(args).output().unwrap()
}

fn temp_file(name: &str, contents: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("qkdsim-{}-{name}", std::process::id()));
    std::fs::write(&path, contents).unwrap();
    path
}

fn load(name: &str) -> qkd_cli::Scenario {
    scenario::load(name, &Overrides::default()).unwrap()
}

#[test]
fn honest_scenario_yields_a_key() {
    let s = load("bb84_honest");
    let r = cmd_run(&s).unwrap();
    let e_d = s.link.channel.misalignment;
    let q = r.qber.unwrap();
    let sigma = (e_d * (1.0 - e_d) / r.sifted_bits as f64).sqrt();
    assert!((q - e_d).abs() < 4.0 * sigma, "{q}");
    assert!(r.abort.is_none());
    assert!(r.final_key_length > 0 && r.keys_match);
    assert_eq!(r.final_key_hex.len(), r.final_key_length.div_ceil(4));

    let out = qkdsim(&["run", "bb84_honest"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("keys match"));
}

#[test]
fn intercepted_scenario_aborts() {
    let r = cmd_run(&load("bb84_intercept")).unwrap();
    assert!((r.qber.unwrap() - 0.25).abs() < 0.01);
    let abort = r.abort.unwrap();
    assert!((abort.value - 0.25).abs() < 0.02);
    assert_eq!(r.final_key_length, 0);
    assert_eq!(qkdsim(&["run", "bb84_intercept"]).status.code(), Some(2));
}

#[test]
fn bad_preset_is_a_config_error() {
    let text = r#"{"seed": 1, "protocol": {"kind": "bb84"}, "num_pulses": 100, "detector": {"preset": "si_apd_typo"}}"#;
    let err = scenario::parse(text, "bad", &Overrides::default()).unwrap_err();
    assert!(matches!(err, CliError::Config { ref path, .. } if path == "detector.preset"));

    let path = temp_file("bad.cfg", text);
    let out = qkdsim(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("detector.preset"));
    std::fs::remove_file(path).ok();

    assert_eq!(qkdsim(&["run", "no_such_scenario"]).status.code(), Some(1));
    assert_eq!(qkdsim(&["run"]).status.code(), Some(1));
}

#[test]
fn distance_sweep_finds_a_cutoff() {
    let s = scenario::load(
        "ingaas_50km",
        &Overrides {
            pulses: Some(20_000),
            ..Default::default()
        },
    )
    .unwrap();
    let spec = SweepSpec {
        axis: Axis::LengthKm,
        from: 0.0,
        to: 200.0,
        steps: 41,
    };
    let r = cmd_sweep(&s, &spec).unwrap();
    let rates: Vec<f64> = r.points.iter().map(|p| p.analytic.gllp_opt.unwrap().raw).collect();
    assert!(rates[0] > 0.0);
    assert_eq!(*rates.last().unwrap(), 0.0);
    let cut = rates.iter().position(|&x| x <= 0.0).unwrap();
    assert!(rates[cut..].iter().all(|&x| x <= 0.0));
    let km = r.values[cut];
    assert!(km > 20.0 && km < 200.0, "{km}");
    assert!(r.values.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn mu_sweep_peaks_at_the_optimum() {
    let text = r#"{
        "seed": 5, "protocol": {"kind": "bb84"}, "num_pulses": 4000000,
        "source": {"kind": "attenuated_laser", "mu": 0.1},
        "channel": {"transmittance": 0.1, "misalignment": 0.01},
        "detector": {"preset": "ideal"}
    }"#;
    let s = scenario::parse(text, "mu_sweep", &Overrides::default()).unwrap();
    let spec = SweepSpec {
        axis: Axis::Mu,
        from: 0.02,
        to: 0.3,
        steps: 15,
    };
    let r = cmd_sweep(&s, &spec).unwrap();
    let (best, _) = r
        .points
        .iter()
        .map(|p| p.sim_gllp_rate.unwrap_or(f64::NEG_INFINITY))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let opt = optimize_mu(0.1, 0.0, &ErrorModel::Misalignment { e_d: 0.01 }).unwrap();
    let step = 0.02;
    assert!((r.values[best] - opt.mu).abs() <= step + 1e-12, "{} vs {}", r.values[best], opt.mu);
}

#[test]
fn single_step_sweep_matches_run() {
    let s = load("bb84_honest");
    let mu = s.signal_mu().unwrap();
    let spec = SweepSpec {
        axis: Axis::Mu,
        from: mu,
        to: mu,
        steps: 1,
    };
    let sweep = cmd_sweep(&s, &spec).unwrap();
    let run = cmd_run(&s).unwrap();
    assert_eq!(sweep.points, vec![run.clone()]);
    let csv = sweep.render(Format::Csv);
    let row = csv.lines().nth(1).unwrap();
    assert_eq!(row.split_once(',').unwrap().1, run.csv_row());
}

#[test]
fn empty_range_is_rejected() {
    let s = load("bb84_honest");
    for (from, to, steps) in [(0.5, 0.1, 3), (0.1, 0.5, 0), (0.2, 0.2, 2)] {
        let spec = SweepSpec {
            axis: Axis::Mu,
            from,
            to,
            steps,
        };
        assert!(cmd_sweep(&s, &spec).is_err());
    }
    let out = qkdsim(&["sweep", "bb84_honest", "--axis", "mu", "--from", "0.5", "--to", "0.1", "--steps", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let out = qkdsim(&["sweep", "b92_usd", "--axis", "length_km", "--from", "0", "--to", "10", "--steps", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn csv_headers_carry_units() {
    let r = cmd_run(&load("bb84_intercept")).unwrap();
    let csv = r.render(Format::Csv);
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), row.len());
    for col in &header {
        assert!(col.contains('[') || ["seed", "abort_stage", "protocol"].contains(col), "{col}");
    }
    for name in ["r_shor_preskill", "r_gllp", "bound_pns"] {
        assert!(header.iter().any(|c| c.starts_with(&format!("{name}_raw["))));
        assert!(header.iter().any(|c| c.starts_with(&format!("{name}_clamped["))));
    }
}

#[test]
fn rates_examples() {
    let r = cmd_rates("bb84", RateInputs { epsilon: 0.11, ..Default::default() });
    assert!(r.r_shor_preskill.unwrap().raw.abs() < 5e-4);

    let r = cmd_rates(
        "bb84",
        RateInputs {
            epsilon: 0.0,
            delta: Some(0.0),
            ..Default::default()
        },
    );
    for v in [r.r_mayers, r.r_shor_preskill, r.r_six_state, r.r_gllp] {
        assert_eq!(v.unwrap().raw, 1.0);
    }

    let r = cmd_rates(
        "bb84",
        RateInputs {
            epsilon: 0.02,
            mu: Some(0.5),
            eta: Some(0.1),
            ..Default::default()
        },
    );
    assert!(!r.bound_pns.unwrap().secure());
    assert!(r.to_text().lines().any(|l| l.contains("bound_pns") && l.contains("no secure key")));
    // the GLLP formula is undefined here and says so by name
    assert!(r.errors.iter().any(|e| e.formula == "rate_gllp"));

    let out = qkdsim(&["rates", "--epsilon", "0.11", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), RateReport::csv_header());
}

#[test]
fn reports_are_byte_identical() {
    for name in ["bb84_honest", "b92_usd", "e91_honest"] {
        let ov = Overrides {
            pulses: Some(50_000),
            ..Default::default()
        };
        let s = scenario::load(name, &ov).unwrap();
        let a = cmd_run(&s).unwrap();
        let mut seq = s.clone();
        seq.config.exec = Exec::Sequential;
        let b = cmd_run(&seq).unwrap();
        for f in [Format::Text, Format::Csv, Format::Json] {
            assert_eq!(a.render(f), b.render(f), "{name}");
        }
    }
    let a = qkdsim(&["run", "bb84_honest", "--format", "json"]);
    let b = qkdsim(&["run", "bb84_honest", "--format", "json"]);
    assert_eq!(a.stdout, b.stdout);
    let c = qkdsim(&["run", "bb84_honest", "--format", "json", "--seed", "3"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn out_flag_writes_a_file() {
    let path = std::env::temp_dir().join(format!("qkdsim-{}-out.json", std::process::id()));
    let out = qkdsim(&["run", "bb84_intercept", "--pulses", "2000", "--format", "json", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["num_pulses"], 2000);
    assert_eq!(v["abort"]["stage"], "estimation");
    std::fs::remove_file(path).ok();
}

#[test]
fn bell_needs_entangled_pairs() {
    let r = cmd_bell(&load("e91_honest")).unwrap();
    assert!(r.estimate.s_hat > 2.7);
    assert!(cmd_bell(&load("bb84_honest")).is_err());
    assert_eq!(qkdsim(&["bell", "bb84_honest"]).status.code(), Some(1));
    assert_eq!(qkdsim(&["bell", "e91_honest", "--pulses", "20000"]).status.code(), Some(0));
}
