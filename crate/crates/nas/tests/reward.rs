use astro_float::{BigFloat, Consts, RoundingMode};
use litese_nas::{reward, RewardConfig};
use proptest::prelude::*;

const P: usize = 256;

/// `(q - q0) * (m / mt)^w` in 256-bit arithmetic, with `w` chosen the same
/// way but evaluated independently.
fn oracle(q: f64, m: f64, cfg: &RewardConfig) -> f64 {
    let r = RoundingMode::ToEven;
    let mut cc = Consts::new().unwrap();
    let big = |x: f64| BigFloat::from_f64(x, P);
    let ratio = big(m).div(&big(cfg.m_target), P, r);
    let w = if big(m).cmp(&big(cfg.m_target)) == Some(1) { cfg.omega_plus } else { cfg.omega_minus };
    let factor = ratio.pow(&big(w), P, r, &mut cc);
    let v = big(q).sub(&big(cfg.q0), P, r).mul(&factor, P, r);
    format!("{}", v).parse().unwrap()
}

fn grid() -> Vec<(f64, f64)> {
    let qs = [1.0, 1.37, 2.0, 2.5, 3.09];
    let ms: Vec<f64> = (0..20).map(|i| 30e6 * 2f64.powf((i as f64 - 9.0) / 4.0)).collect();
    let mut g: Vec<(f64, f64)> = qs.iter().flat_map(|&q| ms.iter().map(move |&m| (q, m))).collect();
    g.push((2.0, 30e6));
    g.push((2.0, 60e6));
    g
}

#[test]
fn matches_high_precision_on_grid() {
    let cfg = RewardConfig::default();
    let g = grid();
    assert!(g.len() >= 100);
    assert!(g.iter().any(|&(_, m)| m > cfg.m_target) && g.iter().any(|&(_, m)| m < cfg.m_target));
    assert!(g.iter().any(|&(_, m)| m == cfg.m_target));
    let mut worst = 0f64;
    for (q, m) in g {
        let got = reward(q, m, &cfg).unwrap();
        let want = oracle(q, m, &cfg);
        worst = worst.max((got - want).abs());
    }
    assert!(worst <= 1e-12, "worst deviation {:e}", worst);
}

#[test]
fn landmarks() {
    let cfg = RewardConfig::default();
    assert_eq!(reward(2.0, 30e6, &cfg).unwrap(), 1.0);
    assert!((reward(2.0, 60e6, &cfg).unwrap() - oracle(2.0, 60e6, &cfg)).abs() <= 1e-15);
    assert!((reward(2.0, 60e6, &cfg).unwrap() - 0.9013).abs() < 1e-4);
    for m in [1.0, 1e6, 30e6, 1e9] {
        assert_eq!(reward(1.0, m, &cfg).unwrap(), 0.0);
    }
}

#[test]
fn continuous_at_target() {
    let cfg = RewardConfig::default();
    let at = reward(2.5, cfg.m_target, &cfg).unwrap();
    let above = reward(2.5, cfg.m_target * (1.0 + 1e-12), &cfg).unwrap();
    let below = reward(2.5, cfg.m_target * (1.0 - 1e-12), &cfg).unwrap();
    assert!((at - above).abs() < 1e-11 && (at - below).abs() < 1e-11);
}

#[test]
fn rejects_non_positive_complexity() {
    let cfg = RewardConfig::default();
    for m in [0.0, -5.0, f64::NAN, f64::INFINITY] {
        assert!(reward(2.0, m, &cfg).is_err(), "m = {}", m);
    }
}

proptest! {
    #[test]
    fn increasing_in_quality(q in 0.0f64..5.0, dq in 1e-6f64..1.0, m in 1e5f64..1e9) {
        let cfg = RewardConfig::default();
        prop_assert!(reward(q + dq, m, &cfg).unwrap() > reward(q, m, &cfg).unwrap());
    }

    #[test]
    fn penalized_above_target(q in 1.01f64..5.0, m in 30.001e6f64..1e9, dm in 1e3f64..1e8) {
        let cfg = RewardConfig::default();
        prop_assert!(reward(q, m + dm, &cfg).unwrap() < reward(q, m, &cfg).unwrap());
    }

    #[test]
    fn flat_below_target(q in 0.0f64..5.0, m in 1.0f64..30e6) {
        let cfg = RewardConfig::default();
        prop_assert_eq!(reward(q, m, &cfg).unwrap(), reward(q, cfg.m_target, &cfg).unwrap());
    }
}
