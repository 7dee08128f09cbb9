//! Statistical routines against brute-force oracles.

use cribmil_core::eval::bootstrap::nearest_rank;
use cribmil_core::eval::calibration::max_calibration_gap;
use cribmil_core::eval::{
    bootstrap_ci, borderline_analysis, calibration_curve, cohens_kappa, confusion, fisher_exact, mean_pairwise_kappa,
    pairwise_kappa_matrix, roc_auc, RaterPanel,
};
use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
    // Twice the Mann-Whitney count, so ties contribute whole units.
    let mut twice = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            twice += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pairs) as f64
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=200);
    // Coarse score grids force plenty of ties.
    let levels = [3u32, 10, 1000, u32::MAX][rng.random_range(0..4)];
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n)
        .map(|_| {
            if levels == u32::MAX {
                rng.random::<f64>()
            } else {
                rng.random_range(0..levels) as f64 / levels as f64
            }
        })
        .collect();
    (scores, labels)
}

#[test]
fn auc_equals_pair_count_on_1000_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let (s, l) = random_instance(&mut rng);
        assert_eq!(roc_auc(&s, &l).unwrap(), pair_count_auc(&s, &l));
    }
}

#[test]
fn auc_invariant_under_increasing_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let (s, l) = random_instance(&mut rng);
        let base = roc_auc(&s, &l).unwrap();
        let logit: Vec<f64> = s.iter().map(|&x| 3.0 * x - 1.0).collect();
        let cube: Vec<f64> = s.iter().map(|&x| x * x * x + 0.5).collect();
        assert_eq!(roc_auc(&logit, &l).unwrap(), base);
        assert_eq!(roc_auc(&cube, &l).unwrap(), base);
    }
}

fn rational_kappa(a: &[bool], b: &[bool]) -> BigRational {
    let n = BigRational::from_integer(a.len().into());
    let count = |f: &dyn Fn(usize) -> bool| BigRational::from_integer((0..a.len()).filter(|&i| f(i)).count().into());
    let po = count(&|i| a[i] == b[i]) / &n;
    let pa = count(&|i| a[i]) / &n;
    let pb = count(&|i| b[i]) / &n;
    let one = BigRational::one();
    let pe = &pa * &pb + (&one - &pa) * (&one - &pb);
    (po - &pe) / (one - pe)
}

#[test]
fn kappa_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.random_range(1..=150);
        let pa = rng.random::<f64>();
        let a: Vec<bool> = (0..n).map(|_| rng.random_bool(pa)).collect();
        let flip = rng.random::<f64>() * 0.6;
        let b: Vec<bool> = a.iter().map(|&x| x ^ rng.random_bool(flip)).collect();
        let all_same = a.iter().chain(&b).all(|&x| x == a[0]);
        if all_same {
            assert_eq!(cohens_kappa(&a, &b).unwrap(), 1.0);
            continue;
        }
        let k = cohens_kappa(&a, &b).unwrap();
        let oracle = rational_kappa(&a, &b).to_f64().unwrap();
        assert!((k - oracle).abs() <= 1e-12, "{k} vs {oracle}");
        assert_eq!(k, cohens_kappa(&b, &a).unwrap());
        assert!((-1.0..=1.0).contains(&k));
        checked += 1;
    }
}

#[test]
fn kappa_known_values() {
    let t = |v: &[u8]| v.iter().map(|&x| x == 1).collect::<Vec<_>>();
    let k = cohens_kappa(&t(&[1, 1, 1, 0, 0, 0]), &t(&[1, 1, 0, 0, 0, 1])).unwrap();
    assert!((k - 1.0 / 3.0).abs() < 1e-15);
    // Matching marginals, p_o = p_e = 1/2.
    let k0 = cohens_kappa(&t(&[1, 1, 0, 0]), &t(&[1, 0, 1, 0])).unwrap();
    assert_eq!(k0, 0.0);
    // One flipped call out of 71 with 19 positives.
    let a: Vec<bool> = (0..71).map(|i| i < 19).collect();
    let mut b = a.clone();
    b[0] = false;
    let oracle = rational_kappa(&a, &b).to_f64().unwrap();
    assert!((cohens_kappa(&a, &b).unwrap() - oracle).abs() < 1e-12);
}

fn binom(n: u64, k: u64) -> BigUint {
    let mut r = BigUint::one();
    for i in 0..k {
        r = r * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    r
}

/// Two-sided Fisher p by exact enumeration. Tables whose probability is within
/// a relative 1e-12 of the observed one count as "as extreme".
fn fisher_oracle(t: [[u64; 2]; 2]) -> f64 {
    let r1 = t[0][0] + t[0][1];
    let r2 = t[1][0] + t[1][1];
    let c1 = t[0][0] + t[1][0];
    let n = r1 + r2;
    let weight = |a: u64| binom(r1, a) * binom(r2, c1 - a);
    let lo = c1.saturating_sub(r2);
    let hi = c1.min(r1);
    let obs = weight(t[0][0]);
    let scale = BigUint::from(1_000_000_000_000u64);
    let bound = &obs * (&scale + BigUint::one());
    let mut num = BigUint::zero();
    for a in lo..=hi {
        let w = weight(a);
        if &w * &scale <= bound {
            num += w;
        }
    }
    BigRational::new(num.into(), binom(n, c1).into()).to_f64().unwrap()
}

#[test]
fn fisher_matches_enumeration_for_all_margins_up_to_30() {
    let mut worst: f64 = 0.0;
    let mut tables = 0;
    for r1 in 1..=30u64 {
        for r2 in 1..=30u64 {
            for c1 in 1..(r1 + r2).min(31) {
                let c2 = r1 + r2 - c1;
                if c2 > 30 {
                    continue;
                }
                for a in c1.saturating_sub(r2)..=c1.min(r1) {
                    let t = [[a, r1 - a], [c1 - a, r2 - (c1 - a)]];
                    let p = fisher_exact(t).unwrap();
                    let o = fisher_oracle(t);
                    worst = worst.max((p - o).abs());
                    tables += 1;
                }
            }
        }
    }
    assert!(tables > 10_000);
    assert!(worst <= 1e-12, "max deviation {worst:e}");
}

#[test]
fn fisher_known_values() {
    assert!((fisher_exact([[2, 0], [0, 2]]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!((fisher_exact([[3, 5], [3, 5]]).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn borderline_table_drives_fisher() {
    // 4 false positives all borderline, 20 true negatives none borderline.
    let mut preds = vec![true; 4];
    preds.extend(vec![false; 20]);
    let labels = vec![false; 24];
    let mut bl = vec![true; 4];
    bl.extend(vec![false; 20]);
    let r = borderline_analysis(&preds, &labels, &bl).unwrap();
    assert_eq!(r.fp_borderline_rate, Some(1.0));
    assert_eq!(r.tn_borderline_rate, Some(0.0));
    assert!(r.p_value < 0.05);
    let none = borderline_analysis(&preds, &labels, &vec![false; 24]).unwrap();
    assert_eq!(none.p_value, 1.0);
}

#[test]
fn confusion_direct_formula() {
    let preds = [true, true, false, false, false, false, true];
    let labels = [true, true, true, false, false, false, false];
    let cm = confusion(&preds, &labels).unwrap();
    assert_eq!((cm.tp, cm.fn_, cm.tn, cm.fp), (2, 1, 3, 1));
    assert!((cm.sensitivity().unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert!((cm.specificity().unwrap() - 0.75).abs() < 1e-15);
}

#[test]
fn bootstrap_mean_of_uniform_matches_normal_approximation() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let xs: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let normal_width = 2.0 * 1.959_964 * sd / n.sqrt();
    let r = bootstrap_ci(
        "mean",
        xs.len(),
        |idx| Some(idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64),
        1000,
        5,
    )
    .unwrap();
    let width = r.estimate.ci_high - r.estimate.ci_low;
    assert!((width - normal_width).abs() <= 0.1 * normal_width, "{width} vs {normal_width}");
    assert!(r.estimate.ci_low <= mean && mean <= r.estimate.ci_high);

    // Endpoints are the nearest-rank order statistics of the emitted resamples.
    let mut sorted = r.resamples.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(r.estimate.ci_low, sorted[(0.025f64 * 1000.0).ceil() as usize - 1]);
    assert_eq!(r.estimate.ci_high, sorted[(0.975f64 * 1000.0).ceil() as usize - 1]);
    assert_eq!(r.estimate.ci_low, nearest_rank(&sorted, 0.025));
}

#[test]
fn bootstrap_constant_metric_and_determinism() {
    let a = bootstrap_ci("acc", 30, |_| Some(1.0), 1000, 3).unwrap();
    assert_eq!((a.estimate.ci_low, a.estimate.ci_high), (1.0, 1.0));
    let f = |idx: &[usize]| Some(idx.iter().sum::<usize>() as f64);
    let x = bootstrap_ci("s", 40, f, 200, 9).unwrap();
    let y = bootstrap_ci("s", 40, f, 200, 9).unwrap();
    assert_eq!(x.resamples, y.resamples);
}

#[test]
fn calibration_gap_small_for_bernoulli_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let scores: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
    let labels: Vec<bool> = scores.iter().map(|&s| rng.random_bool(s)).collect();
    let bins = calibration_curve(&scores, &labels, 10).unwrap();
    assert_eq!(bins.len(), 10);
    assert!(max_calibration_gap(&bins) <= 0.1);
}

#[test]
fn rater_means_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let truth: Vec<bool> = (0..60).map(|i| i % 3 == 0).collect();
    let noisy = |rng: &mut ChaCha8Rng, p: f64| truth.iter().map(|&t| t ^ rng.random_bool(p)).collect::<Vec<_>>();
    let calls = vec![noisy(&mut rng, 0.05), noisy(&mut rng, 0.1), noisy(&mut rng, 0.3), noisy(&mut rng, 0.15)];
    let panel = RaterPanel {
        rater_ids: vec!["P1".into(), "P2".into(), "P3".into(), "model".into()],
        calls: calls.clone(),
        comparator: vec![true, true, true, false],
        reference: None,
    };
    let m = pairwise_kappa_matrix(&panel).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(m[i][j], m[j][i]);
        }
    }
    let model = mean_pairwise_kappa(&panel, "model", 200, 1).unwrap();
    let brute = (0..3).map(|p| cohens_kappa(&calls[3], &calls[p]).unwrap()).sum::<f64>() / 3.0;
    assert!((model.value - brute).abs() < 1e-12);
    let p1 = mean_pairwise_kappa(&panel, "P1", 200, 1).unwrap();
    let brute1 = (1..3).map(|p| cohens_kappa(&calls[0], &calls[p]).unwrap()).sum::<f64>() / 2.0;
    assert!((p1.value - brute1).abs() < 1e-12);
}

proptest! {
    #[test]
    fn kappa_self_agreement_is_one(v in proptest::collection::vec(any::<bool>(), 2..80)) {
        prop_assume!(v.iter().any(|&x| x) && v.iter().any(|&x| !x));
        prop_assert_eq!(cohens_kappa(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn auc_complement_symmetry(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, l) = random_instance(&mut rng);
        let flipped: Vec<bool> = l.iter().map(|&x| !x).collect();
        let a = roc_auc(&s, &l).unwrap();
        let b = roc_auc(&s, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }
}
