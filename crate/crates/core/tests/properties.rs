//! Property suites over the numerical core, the policies and the estimators.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use klms_core::diagnostics::{
    asymptotic_constant, chernoff_tail_check, finite_time_bound, BoundConfig,
};
use klms_core::klmath::{binary_kl, kl_refined_pinsker_lb, kl_upper_inverse, ProbValue};
use klms_core::ope::{ipw_general, ipw_uniform};
use klms_core::policies::{
    argmax, klms_distribution, klms_log_weights, klucb_indices, ms_log_weights, ts_mc_counts,
    ArmStats, BOUNDED_SIGMA_SQ,
};
use klms_core::simulate::{run_batch, run_trial, BatchOptions, LoggedStep, TrialLog};
use klms_core::{BanditInstance, PolicyConfig};

fn pv(x: f64) -> ProbValue {
    ProbValue::new(x).unwrap()
}

fn kl(p: f64, q: f64) -> f64 {
    binary_kl(pv(p), pv(q)).get()
}

/// Random pulled-arm statistics: 1..=8 arms, counts up to 10^5.
fn arm_stats() -> impl Strategy<Value = Vec<ArmStats>> {
    prop::collection::vec((1u64..100_000, 0.0f64..=1.0), 1..=8).prop_map(|v| {
        v.into_iter()
            .map(|(n, m)| ArmStats::with_mean(n, m))
            .collect()
    })
}

/// States whose means are drawn from a small grid, so ties are common.
fn tied_stats() -> impl Strategy<Value = Vec<ArmStats>> {
    prop::collection::vec((1u64..1000, 0u32..5), 2..=6).prop_map(|v| {
        v.into_iter()
            .map(|(n, g)| ArmStats::with_mean(n, g as f64 / 4.0))
            .collect()
    })
}

fn best(stats: &[ArmStats]) -> f64 {
    stats
        .iter()
        .map(|s| s.mean)
        .fold(f64::NEG_INFINITY, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn kl_nonnegative_and_zero_only_on_diagonal(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let d = kl(p, q);
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d == 0.0, p == q);
        prop_assert_eq!(kl(p, p), 0.0);
    }

    #[test]
    fn kl_increases_away_from_p(p in 0.0f64..1.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let q1 = p + (1.0 - p) * lo;
        let q2 = p + (1.0 - p) * hi;
        prop_assert!(kl(p, q1) <= kl(p, q2));
    }

    #[test]
    fn upper_inverse_roundtrip(p in 1e-9f64..1.0, frac in 0.0f64..=1.0) {
        let b = frac * kl(p, 1.0 - 1e-6);
        let q = kl_upper_inverse(pv(p), b, 1e-12).unwrap().get();
        prop_assert!(q >= p && q <= 1.0);
        let d = kl(p, q);
        prop_assert!(d <= b && d >= b - 1e-9, "p={p} b={b} q={q} kl={d}");
    }

    #[test]
    fn upper_inverse_monotone(p in 0.0f64..1.0, b1 in 0.0f64..3.0, b2 in 0.0f64..3.0) {
        let (lo, hi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
        let q_lo = kl_upper_inverse(pv(p), lo, 1e-12).unwrap().get();
        let q_hi = kl_upper_inverse(pv(p), hi, 1e-12).unwrap().get();
        prop_assert!(q_lo <= q_hi + 1e-12);
    }

    #[test]
    fn klms_distribution_is_normalized(stats in arm_stats()) {
        let d = klms_distribution(&stats).unwrap();
        prop_assert_eq!(d.len(), stats.len());
        prop_assert!(d.iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn empirical_best_arm_has_largest_probability(stats in arm_stats()) {
        let d = klms_distribution(&stats).unwrap();
        let top = best(&stats);
        let b = stats.iter().position(|s| s.mean == top).unwrap();
        prop_assert!(d.iter().all(|&p| p <= d[b]));
        prop_assert!(d[b] > 0.0);
    }

    #[test]
    fn argmax_breaks_ties_by_lowest_index(v in prop::collection::vec(0u8..4, 1..12)) {
        let xs: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(argmax(&xs), xs.iter().position(|&x| x == m).unwrap());
    }

    #[test]
    fn tied_best_arms_share_the_top_probability(stats in tied_stats()) {
        let d = klms_distribution(&stats).unwrap();
        let top = best(&stats);
        let tied: Vec<usize> = (0..stats.len()).filter(|&a| stats[a].mean == top).collect();
        for &a in &tied {
            prop_assert_eq!(d[a], d[tied[0]]);
        }
        prop_assert_eq!(argmax(&d), tied[0]);
    }

    #[test]
    fn klms_weight_never_exceeds_ms_weight(stats in arm_stats()) {
        let kl_w = klms_log_weights(&stats).unwrap();
        let ms_w = ms_log_weights(&stats, BOUNDED_SIGMA_SQ).unwrap();
        for (a, (k, m)) in kl_w.iter().zip(&ms_w).enumerate() {
            prop_assert!(*k <= m + 1e-12 * m.abs().max(1.0), "arm {a}: {k} > {m}");
        }
    }

    #[test]
    fn klucb_index_tolerance_invariance(
        n in prop::collection::vec((1u64..5000, 0.0f64..=1.0), 2..=5),
        extra in 1u64..100_000,
    ) {
        let stats: Vec<ArmStats> = n.iter().map(|&(c, m)| ArmStats::with_mean(c, m)).collect();
        let t = stats.len() as u64 + extra;
        let coarse = klucb_indices(&stats, t, 1e-10).unwrap();
        let fine = klucb_indices(&stats, t, 1e-13).unwrap();
        for (a, (c, f)) in coarse.iter().zip(&fine).enumerate() {
            prop_assert!((c - f).abs() <= 1e-9, "arm {a}: {c} vs {f}");
            prop_assert!(*c >= stats[a].mean && *c <= 1.0);
        }
    }

    #[test]
    fn ipw_with_uniform_behavior_is_the_mean_reward(
        steps in prop::collection::vec((0usize..4, 0.0f64..=1.0), 1..200),
    ) {
        let log = TrialLog {
            n_arms: 4,
            seed: 0,
            fingerprint: 0,
            steps: steps
                .iter()
                .enumerate()
                .map(|(i, &(arm, reward))| LoggedStep { t: i as u64 + 1, arm, behavior_prob: 0.25, reward })
                .collect(),
        };
        let mean = steps.iter().map(|s| s.1).sum::<f64>() / steps.len() as f64;
        let r = ipw_uniform(&log, 4).unwrap();
        prop_assert!((r.estimate.unwrap() - mean).abs() <= 1e-12);
        let g = ipw_general(&log, &[0.25; 4]).unwrap();
        prop_assert_eq!(g.estimate.unwrap().to_bits(), r.estimate.unwrap().to_bits());
    }

    #[test]
    fn zero_propensity_invalidates_any_log(
        steps in prop::collection::vec((0usize..3, 0.01f64..=1.0, 0.0f64..=1.0), 1..100),
        at in any::<prop::sample::Index>(),
        reward in 0.0f64..=1.0,
    ) {
        let mut log = TrialLog {
            n_arms: 3,
            seed: 0,
            fingerprint: 0,
            steps: steps
                .iter()
                .enumerate()
                .map(|(i, &(arm, p, reward))| LoggedStep { t: i as u64 + 1, arm, behavior_prob: p, reward })
                .collect(),
        };
        prop_assert!(ipw_uniform(&log, 3).unwrap().valid);
        let i = at.index(log.steps.len() + 1);
        log.steps.insert(i, LoggedStep { t: 0, arm: 1, behavior_prob: 0.0, reward });
        let r = ipw_uniform(&log, 3).unwrap();
        prop_assert!(!r.valid);
        prop_assert_eq!(r.estimate, None);
    }

    #[test]
    fn asymptotic_constant_is_permutation_invariant(
        means in prop::collection::vec(0.01f64..0.99, 2..6),
        seed in any::<u64>(),
    ) {
        let mut shuffled = means.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = asymptotic_constant(&BanditInstance::bernoulli(&means).unwrap()).unwrap();
        let b = asymptotic_constant(&BanditInstance::bernoulli(&shuffled).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn ts_mc_counts_sum_to_m(
        post in prop::collection::vec((0.5f64..50.0, 0.5f64..50.0), 1..5),
        m in 1u32..500,
        seed in any::<u64>(),
    ) {
        let stats: Vec<ArmStats> = post.iter().map(|&(a, b)| ArmStats::with_posterior(a, b)).collect();
        let c = ts_mc_counts(&stats, m, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(c.iter().sum::<u32>(), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    /// `p_a <= exp(-N_a kl(mean_a, max mean))` and, for every reference arm
    /// `i`, `p_a <= exp(N_i kl(mean_i, max mean)) p_i`.
    #[test]
    fn probability_transfer_inequalities(stats in arm_stats()) {
        let d = klms_distribution(&stats).unwrap();
        let top = best(&stats);
        for a in 0..stats.len() {
            let own = (-(stats[a].pulls as f64) * kl(stats[a].mean, top)).exp();
            prop_assert!(d[a] <= own * (1.0 + 1e-12) + 1e-300, "arm {a}");
            for i in 0..stats.len() {
                let lift = (stats[i].pulls as f64 * kl(stats[i].mean, top)).exp();
                if lift.is_finite() {
                    prop_assert!(d[a] <= lift * d[i] * (1.0 + 1e-12) + 1e-300, "arm {a} via {i}");
                }
            }
        }
    }
}

#[test]
fn pinsker_bounds_on_grid() {
    for i in 0..=100 {
        for j in 0..=100 {
            let (p, q) = (i as f64 / 100.0, j as f64 / 100.0);
            let d = kl(p, q);
            let gap = q - p;
            assert!(d + 1e-15 >= 2.0 * gap * gap, "pinsker at ({p}, {q})");
            let lb = kl_refined_pinsker_lb(pv(p), pv(q)).get();
            assert!(
                lb <= d * (1.0 + 1e-12) + 1e-15,
                "refined bound at ({p}, {q}): {lb} > {d}"
            );
        }
    }
}

#[test]
fn chernoff_tail_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc4e1);
    for mu_i in 1..=9 {
        let mu = mu_i as f64 / 10.0;
        for eps in [0.05, 0.1, 0.2] {
            if eps >= mu {
                continue;
            }
            for n in [10, 100, 1000] {
                let r = chernoff_tail_check(mu, eps, n, 2000, &mut rng).unwrap();
                assert!(r.passed, "mu={mu} eps={eps} n={n}: {r:?}");
            }
        }
    }
}

type BetaParams = (f64, f64);

/// `P(Beta(a1, b1) > Beta(a2, b2))` by 30-digit quadrature.
const TS_WIN_ORACLE: [(BetaParams, BetaParams, f64); 3] = [
    ((3.5, 2.5), (2.5, 3.5), 0.734_221_696_338_068_7),
    ((10.5, 5.5), (8.5, 4.5), 0.502_147_758_338_044_2),
    ((0.5, 0.5), (1.5, 0.5), 0.297_357_632_715_324_45),
];

#[test]
fn ts_monte_carlo_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let m = 200_000u32;
    for ((a1, b1), (a2, b2), p) in TS_WIN_ORACLE {
        let stats = [
            ArmStats::with_posterior(a1, b1),
            ArmStats::with_posterior(a2, b2),
        ];
        let c = ts_mc_counts(&stats, m, &mut rng);
        let est = c[0] as f64 / m as f64;
        let se = (p * (1.0 - p) / m as f64).sqrt();
        assert!((est - p).abs() <= 4.0 * se, "{est} vs {p}");
    }
}

#[test]
fn ipw_is_unbiased_under_uniform_behavior() {
    let means = [0.3, 0.6, 0.9];
    let target = [0.5, 0.3, 0.2];
    let truth: f64 = means.iter().zip(&target).map(|(m, q)| m * q).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n_logs = 10_000;
    let estimates: Vec<f64> = (0..n_logs)
        .map(|_| {
            let steps = (1..=20)
                .map(|t| {
                    let arm = rng.random_range(0..3);
                    let reward = if rng.random::<f64>() < means[arm] {
                        1.0
                    } else {
                        0.0
                    };
                    LoggedStep {
                        t,
                        arm,
                        behavior_prob: 1.0 / 3.0,
                        reward,
                    }
                })
                .collect();
            let log = TrialLog {
                n_arms: 3,
                seed: 0,
                fingerprint: 0,
                steps,
            };
            ipw_general(&log, &target).unwrap().estimate.unwrap()
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / n_logs as f64;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n_logs - 1) as f64;
    let se = (var / n_logs as f64).sqrt();
    assert!(
        (mean - truth).abs() <= 3.0 * se,
        "{mean} vs {truth} (se {se})"
    );
}

#[test]
fn trials_replay_exactly() {
    let inst = BanditInstance::bernoulli(&[0.3, 0.5, 0.45]).unwrap();
    for policy in [
        PolicyConfig::kl_ms(),
        PolicyConfig::ms(0.25),
        PolicyConfig::bernoulli_ts(Some(50)),
        PolicyConfig::kl_ucb(),
        PolicyConfig::uniform(),
    ] {
        let a = run_trial(&policy, &inst, 500, 42).unwrap();
        let b = run_trial(&policy, &inst, 500, 42).unwrap();
        assert_eq!(a, b);
        let c = run_trial(&policy, &inst, 500, 43).unwrap();
        assert_ne!(a.log.steps, c.log.steps);
    }
}

#[test]
fn batches_do_not_depend_on_worker_count() {
    let inst = BanditInstance::bernoulli(&[0.2, 0.25, 0.1]).unwrap();
    let policy = PolicyConfig::bernoulli_ts(Some(20));
    let run = |jobs| {
        let opts = BatchOptions {
            jobs,
            retain_logs: true,
            checkpoints: None,
        };
        run_batch(&policy, &inst, 300, 40, 7, &opts).unwrap()
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

#[test]
fn regret_curves_are_monotone_and_capped() {
    let inst = BanditInstance::bernoulli(&[0.2, 0.5, 0.45, 0.1]).unwrap();
    let gaps = inst.gaps();
    let worst = inst.max_gap();
    for policy in [
        PolicyConfig::kl_ms(),
        PolicyConfig::ms(0.25),
        PolicyConfig::bernoulli_ts(None),
    ] {
        for seed in 0..20 {
            let o = run_trial(&policy, &inst, 2000, seed).unwrap();
            let cps = &o.regret.checkpoints;
            assert!(cps.windows(2).all(|w| w[0].1 <= w[1].1 + 1e-12));
            assert!(cps.iter().all(|&(t, r)| r <= t as f64 * worst + 1e-9));
            let by_counts: f64 = o.pulls.iter().zip(&gaps).map(|(&n, g)| n as f64 * g).sum();
            assert_abs_diff_eq!(o.regret.final_regret(), by_counts, epsilon = 1e-9);
        }
    }
}

/// Between consecutive gap thresholds the bound is `T delta` plus a constant;
/// crossing a gap drops that arm's terms.
#[test]
fn bound_is_piecewise_linear_in_threshold() {
    let inst = BanditInstance::bernoulli(&[0.9, 0.8, 0.6]).unwrap();
    let t = 10_000u64;
    let b = |delta| finite_time_bound(&inst, t, BoundConfig { delta, c: 0.25 }).unwrap();
    for (lo, hi) in [(0.0, 0.09), (0.11, 0.29)] {
        let slope = (b(hi) - b(lo)) / (hi - lo);
        assert_abs_diff_eq!(slope, t as f64, epsilon = 1e-6 * t as f64);
    }
    assert!(b(0.1) < b(0.0999999));
    assert!(b(0.3000001) < b(0.2999999));
    assert_abs_diff_eq!(b(0.31), t as f64 * 0.31, epsilon = 1e-9);
}
