use proptest::prelude::*;
use qkd_core::rates::*;
use qkd_core::SimRng;

fn random_distribution(dims: [usize; 3], rng: &mut SimRng) -> JointDistribution {
    let raw: Vec<f64> = (0..dims.iter().product()).map(|_| rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let drift: f64 = 1.0 - p.iter().sum::<f64>();
    p[0] += drift;
    JointDistribution::new(dims, p).unwrap()
}

#[test]
fn shor_preskill_cutoff_by_bisection() {
    let (mut lo, mut hi) = (0.10, 0.12);
    assert!(rate_shor_preskill(lo).unwrap() > 0.0 && rate_shor_preskill(hi).unwrap() < 0.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if rate_shor_preskill(mid).unwrap() > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((lo - 0.110).abs() < 5e-4, "{lo}");
    assert!(rate_shor_preskill(0.11).unwrap().abs() < 5e-4);
}

#[test]
fn six_state_beats_bb84() {
    for eps in [0.05, 0.08, 0.10] {
        assert!(rate_six_state(eps).unwrap() > rate_shor_preskill(eps).unwrap());
    }
    for i in 1..=100 {
        let eps = 0.001 * i as f64;
        assert!(rate_shor_preskill(eps).unwrap() <= rate_six_state(eps).unwrap());
    }
}

#[test]
fn gllp_limits() {
    for eps in [0.0, 0.02, 0.05] {
        assert!((rate_gllp(eps, 0.0).unwrap() - rate_shor_preskill(eps).unwrap()).abs() < 1e-15);
    }
    // R + h(ε) = (1−Δ)(1 − h(ε/(1−Δ))) ∈ [0, 1−Δ]
    for gap in [1e-3, 1e-6] {
        for eps in [0.0, 0.1 * gap, 0.5 * gap] {
            let r = rate_gllp(eps, 1.0 - gap).unwrap();
            let off = r + binary_entropy(eps).unwrap();
            assert!((-1e-12..=gap + 1e-12).contains(&off));
        }
    }
}

#[test]
fn gllp_scales_with_square_of_transmittance() {
    let model = ErrorModel::Fixed { epsilon: 0.01 };
    let etas: [f64; 5] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
    let pts: Vec<(f64, f64)> = etas
        .iter()
        .map(|&eta| (eta.ln(), gllp_rate_per_pulse(eta, eta, 0.0, &model).unwrap().ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope - 2.0).abs() < 0.1, "{slope}");
}

#[test]
fn optimal_mu_tracks_transmittance() {
    for eta in [1e-3, 1e-2, 1e-1] {
        let m = optimize_mu(eta, 0.0, &ErrorModel::Fixed { epsilon: 0.01 }).unwrap();
        assert!(m.mu > eta / 2.0 && m.mu < eta * 2.0, "eta {eta}: {}", m.mu);
    }
}

#[test]
fn gain_truncation_and_closed_form() {
    for mu in [0.05f64, 0.5, 1.0] {
        for (eta, pd) in [(0.1, 1e-5), (0.9, 0.0), (1e-3, 1e-4)] {
            let closed = (1.0 - pd) * (1.0 - (-mu * eta).exp()) + pd;
            assert!((gain_qmu(mu, eta, pd, 25) - closed).abs() < 1e-12);
        }
    }
}

#[test]
fn gain_is_monotone() {
    let grid: Vec<f64> = (1..=20).map(|i| i as f64 * 0.05).collect();
    for w in grid.windows(2) {
        assert!(gain_qmu(w[1], 0.2, 1e-5, 40) > gain_qmu(w[0], 0.2, 1e-5, 40));
        assert!(gain_qmu(0.3, w[1], 1e-5, 40) > gain_qmu(0.3, w[0], 1e-5, 40));
    }
}

#[test]
fn decoy_honest_closed_loop() {
    for (eta, pd) in [(0.1, 1e-5), (0.01, 1e-6), (1.0, 0.0)] {
        let qs = gain_qmu(0.6, eta, pd, 40);
        let qd = gain_qmu(0.1, eta, pd, 40);
        let e = decoy_estimate(qs, qd, 0.6, 0.1, pd).unwrap();
        assert!((e.y1 / yield_yn(1, eta, pd) - 1.0).abs() < 0.05);
        assert!(e.y1_lower <= yield_yn(1, eta, pd) + 1e-9);
    }
    let q1 = gain_qmu(0.6, 1.0, 0.0, 40);
    let q2 = gain_qmu(0.1, 1.0, 0.0, 40);
    assert!((decoy_estimate(q1, q2, 0.6, 0.1, 0.0).unwrap().y1 - 1.0).abs() < 1e-9);
}

#[test]
fn decoy_flags_inconsistent_gains() {
    // a lower gain at the higher intensity has no physical fit
    let e = decoy_estimate(0.01, 0.02, 0.8, 0.1, 0.0).unwrap();
    assert!(!e.consistent);
}

#[test]
fn information_examples() {
    let indep = JointDistribution::bipartite(2, 2, vec![0.25; 4]).unwrap();
    assert!(mutual_information(&indep).abs() < 1e-15);
    let same = JointDistribution::bipartite(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
    assert!((mutual_information(&same) - 1.0).abs() < 1e-15);

    // A = B uniform, E independent noise
    let p = JointDistribution::from_fn([2, 2, 2], |a, b, _| if a == b { 0.25 } else { 0.0 }).unwrap();
    assert!((csiszar_korner(&p) - 1.0).abs() < 1e-12);
    // E = A
    let p = JointDistribution::from_fn([2, 2, 2], |a, b, e| if a == b && e == a { 0.5 } else { 0.0 }).unwrap();
    assert!(csiszar_korner(&p) <= 1e-12);
}

#[test]
fn csiszar_korner_on_intercept_resend_by_hand() {
    let eps = 0.25;
    let p = intercept_resend_distribution(eps).unwrap();
    // entropies of the 8 outcomes computed from scratch
    let [na, nb, ne] = p.dims();
    let h = |v: &[f64]| -> f64 { v.iter().filter(|x| **x > 0.0).map(|x| -x * x.log2()).sum() };
    let mut pab = vec![0.0; na * nb];
    let mut pae = vec![0.0; na * ne];
    let mut pbe = vec![0.0; nb * ne];
    let (mut pa, mut pb, mut pe) = (vec![0.0; na], vec![0.0; nb], vec![0.0; ne]);
    for a in 0..na {
        for b in 0..nb {
            for e in 0..ne {
                let v = p.get(a, b, e);
                pab[a * nb + b] += v;
                pae[a * ne + e] += v;
                pbe[b * ne + e] += v;
                pa[a] += v;
                pb[b] += v;
                pe[e] += v;
            }
        }
    }
    let iab = h(&pa) + h(&pb) - h(&pab);
    let iae = h(&pa) + h(&pe) - h(&pae);
    let ibe = h(&pb) + h(&pe) - h(&pbe);
    let expected = (iab - iae).max(iab - ibe);
    assert!((csiszar_korner(&p) - expected).abs() < 1e-12);
    assert!(expected < 0.0);
}

#[test]
fn intrinsic_information_examples() {
    // A and B conditionally independent given E
    let pe = [0.3, 0.7];
    let pa_e = [[0.9, 0.1], [0.2, 0.8]];
    let pb_e = [[0.6, 0.4], [0.1, 0.9]];
    let p = JointDistribution::from_fn([2, 2, 2], |a, b, e| pe[e] * pa_e[e][a] * pb_e[e][b]).unwrap();
    assert!(intrinsic_information(&p, 4).unwrap() < 1e-6);

    let q = JointDistribution::from_fn([2, 2, 3], |a, b, _| if a == b { 0.4 / 3.0 } else { 0.1 / 3.0 }).unwrap();
    let i = intrinsic_information(&q, 3).unwrap();
    assert!((i - mutual_information(&q)).abs() < 1e-9);

    let too_big = JointDistribution::from_fn([5, 1, 1], |_, _, _| 0.2).unwrap();
    assert_eq!(intrinsic_information(&too_big, 2), Err(RateError::UnsupportedSize(5)));
}

#[test]
fn intrinsic_never_exceeds_conditional_information() {
    let mut rng = SimRng::new(77);
    for i in 0..100 {
        let dims = [2, 2, 2 + i % 3];
        let p = random_distribution(dims, &mut rng);
        let bound = intrinsic_information(&p, 3).unwrap();
        assert!(bound <= p.conditional_mutual_information() + 1e-9);
    }
}

#[test]
fn intrinsic_can_beat_conditioning() {
    // conditioning on E creates correlation that merging E's symbols removes
    let p = JointDistribution::from_fn([2, 2, 2], |a, b, e| if (a ^ b) == e { 0.25 } else { 0.0 }).unwrap();
    assert!((p.conditional_mutual_information() - 1.0).abs() < 1e-12);
    assert!(intrinsic_information(&p, 2).unwrap() < 1e-9);
}

#[test]
fn mutual_information_nonnegative_on_random_distributions() {
    let mut rng = SimRng::new(78);
    for _ in 0..1000 {
        let p = random_distribution([3, 2, 2], &mut rng);
        assert!(mutual_information(&p) >= 0.0);
    }
    let product = JointDistribution::from_fn([3, 2, 1], |a, b, _| [0.2, 0.3, 0.5][a] * [0.4, 0.6][b]).unwrap();
    assert!(mutual_information(&product) < 1e-12);
}

#[test]
fn entropy_is_concave_on_grid() {
    let h = |x: f64| binary_entropy(x).unwrap();
    let step = 0.01;
    for i in 1..99 {
        let x = i as f64 * step;
        assert!(h(x - step) + h(x + step) - 2.0 * h(x) < 0.0);
    }
}

proptest! {
    #[test]
    fn entropy_symmetric_and_bounded(x in 0.0f64..=1.0) {
        let h = binary_entropy(x).unwrap();
        prop_assert!((h - binary_entropy(1.0 - x).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&h));
    }

    #[test]
    fn bounds_are_bounded(mu in 0.001f64..2.0, eta in 0.001f64..1.0) {
        let bs = bound_beamsplit(mu, eta);
        prop_assert!((0.0..=1.0).contains(&bs));
        prop_assert!(bound_pns(mu, eta) <= 1.0);
    }

    #[test]
    fn yields_increase_with_photon_number(eta in 0.0f64..1.0, pd in 0.0f64..0.01, n in 0u32..20) {
        prop_assert!(yield_yn(n + 1, eta, pd) >= yield_yn(n, eta, pd));
    }

    #[test]
    fn formulas_are_pure(eps in 0.0f64..0.25) {
        prop_assert_eq!(rate_mayers(eps), rate_mayers(eps));
        prop_assert_eq!(rate_six_state(eps), rate_six_state(eps));
        prop_assert!(rate_mayers(eps).unwrap() <= rate_shor_preskill(eps).unwrap() + 1e-15);
    }
}
