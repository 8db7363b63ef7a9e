use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tsc_core::classic::{max_pressure_decide, webster_plan, WebsterInput};
use tsc_core::frame::belief::{belief_update_or_prior, DemandBelief};
use tsc_core::frame::mdp::{deterministic_policy, policy_evaluation, sup_norm_diff, value_iteration, TabularMdp};
use tsc_core::metrics::{arrival_type, green_band, CorridorSignal, Direction};
use tsc_core::rl::policy::SoftmaxPolicy;
use tsc_core::rl::qlearn::{QTable, StateKey};
use tsc_core::signal::CyclePlan;

fn stochastic_rows(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.01f64..1.0, n), n).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let z: f64 = r.iter().sum();
                let mut r: Vec<f64> = r.iter().map(|x| x / z).collect();
                let s: f64 = r.iter().sum();
                r[0] += 1.0 - s;
                r
            })
            .collect()
    })
}

fn belief_case() -> impl Strategy<Value = (DemandBelief, Vec<u32>)> {
    (2usize..6).prop_flat_map(|n| {
        (prop::collection::vec(0.0f64..3.0, n), stochastic_rows(n), prop::collection::vec(0u32..40, 1..60))
            .prop_map(|(rates, t, counts)| (DemandBelief::uniform(rates, t).unwrap(), counts))
    })
}

fn random_mdp(seed: u64, n: usize, a: usize, gamma: f64) -> TabularMdp {
    TabularMdp::random(n, a, gamma, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn all_policies(n: usize, a: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..a).map(move |x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    out
}

fn plan(splits: Vec<f64>, offset: f64) -> CyclePlan {
    let cycle = splits.iter().sum();
    CyclePlan { phases: (0..splits.len()).collect(), splits_s: splits, cycle_s: cycle, offset_s: offset }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn belief_stays_a_distribution((b0, counts) in belief_case()) {
        let mut b = b0;
        for k in counts {
            b = belief_update_or_prior(&b, k, 1.0).0;
            let total: f64 = b.probs().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12, "sum {total}");
            prop_assert!(b.probs().iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn bellman_operator_contracts(seed in any::<u64>(), n in 2usize..12, a in 1usize..4, gamma in 0.1f64..0.99,
                                  v in prop::collection::vec(-50.0f64..50.0, 12), w in prop::collection::vec(-50.0f64..50.0, 12)) {
        let m = random_mdp(seed, n, a, gamma);
        let (v, w) = (&v[..n], &w[..n]);
        let gap = sup_norm_diff(&m.bellman_optimality(v), &m.bellman_optimality(w));
        prop_assert!(gap <= gamma * sup_norm_diff(v, w) + 1e-9);
    }

    #[test]
    fn value_iteration_is_a_fixed_point_and_optimal(seed in any::<u64>(), n in 2usize..5, a in 2usize..4, gamma in 0.3f64..0.95) {
        let m = random_mdp(seed, n, a, gamma);
        let vi = value_iteration(&m, 1e-10);
        let residual = sup_norm_diff(&m.bellman_optimality(&vi.values), &vi.values);
        prop_assert!(residual <= 1e-9, "residual {residual}");
        let best = all_policies(n, a).into_iter().map(|p| policy_evaluation(&m, &deterministic_policy(a, &p))).fold(vec![f64::NEG_INFINITY; n], |acc, v| acc.iter().zip(&v).map(|(x, y)| x.max(*y)).collect());
        prop_assert!(sup_norm_diff(&best, &vi.values) <= 1e-8);
        let greedy = policy_evaluation(&m, &deterministic_policy(a, &m.greedy(&vi.values)));
        prop_assert!(sup_norm_diff(&greedy, &best) <= 1e-8);
    }

    #[test]
    fn webster_splits_fill_the_cycle(y in prop::collection::vec(0.01f64..0.2, 2..5), sat in 1200.0f64..2000.0, lost in 4.0f64..16.0) {
        let flows: Vec<f64> = y.iter().map(|r| r * sat).collect();
        let input = WebsterInput { flows_vph: flows.clone(), saturation_vph: vec![sat; y.len()], lost_time_s: lost, cycle_s: None };
        let p = webster_plan(&input).unwrap();
        let c = p.plan.cycle_s;
        prop_assert!((p.plan.splits_s.iter().sum::<f64>() - c).abs() < 1e-9);
        prop_assert!((p.greens_s.iter().sum::<f64>() - (c - lost)).abs() < 1e-9);
        let fixed = WebsterInput { cycle_s: Some(c), ..input.clone() };
        let scaled = WebsterInput { flows_vph: flows.iter().map(|f| f * 0.5).collect(), ..fixed.clone() };
        let (a, b) = (webster_plan(&fixed).unwrap(), webster_plan(&scaled).unwrap());
        for (x, z) in a.greens_s.iter().zip(&b.greens_s) {
            prop_assert!((x - z).abs() < 1e-9);
        }
    }

    #[test]
    fn max_pressure_ignores_a_common_queue_shift(
        phases in prop::collection::vec(prop::collection::vec((0u32..30, 0u32..30), 1..4), 2..5),
        shift in 0u32..100,
    ) {
        let as_f64 = |k: u32| -> Vec<Vec<(f64, f64)>> {
            phases.iter().map(|p| p.iter().map(|(u, d)| (f64::from(u + k), f64::from(d + k))).collect()).collect()
        };
        prop_assert_eq!(max_pressure_decide(&as_f64(0)), max_pressure_decide(&as_f64(shift)));
    }

    #[test]
    fn softmax_is_a_distribution(theta in prop::collection::vec(-300.0f64..300.0, 12), phi in prop::collection::vec(-5.0f64..5.0, 4)) {
        let policy = SoftmaxPolicy { n_features: 4, n_actions: 3, theta };
        let p = policy.probs(&phi);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn greedy_action_survives_affine_rescaling(q in prop::collection::vec(-10.0f64..10.0, 2..6), scale in 0.01f64..100.0, offset in -100.0f64..100.0) {
        let key = StateKey(vec![0]);
        let n = q.len();
        let rounded: Vec<f64> = q.iter().map(|x| (x * 8.0).round() / 8.0).collect();
        let (mut a, mut b) = (QTable::new(n), QTable::new(n));
        for (k, x) in rounded.iter().enumerate() {
            a.set(&key, k, *x);
            b.set(&key, k, scale * x + offset);
        }
        prop_assert_eq!(a.greedy(&key), b.greedy(&key));
    }

    #[test]
    fn arrival_type_is_monotone(x in 0.0f64..3.0, dx in 0.0f64..1.0) {
        prop_assert!(arrival_type(x) <= arrival_type(x + dx));
        prop_assert!((1..=6).contains(&arrival_type(x)));
    }

    #[test]
    fn green_band_ignores_common_offset_and_whole_cycles(
        splits in prop::collection::vec((10.0f64..40.0, 10.0f64..40.0), 2..5),
        offsets in prop::collection::vec(0.0f64..60.0, 5),
        spacing in prop::collection::vec(100.0f64..600.0, 4),
        shift in 0.0f64..60.0,
        wraps in 0i32..3,
    ) {
        let (g, r) = splits[0];
        let signals = |extra: f64| -> Vec<CorridorSignal> {
            (0..splits.len()).map(|k| CorridorSignal { plan: plan(vec![g, r], offsets[k] + extra + if k == 1 { f64::from(wraps) * (g + r) } else { 0.0 }), arterial_entry: 0, change_s: 4.0 }).collect()
        };
        let base = green_band(&signals(0.0), &spacing[..splits.len() - 1], 12.0, Direction::Forward).unwrap();
        let moved = green_band(&signals(shift), &spacing[..splits.len() - 1], 12.0, Direction::Forward).unwrap();
        prop_assert!((base.width_s - moved.width_s).abs() < 1e-6);
        prop_assert!(base.width_s <= g - 4.0 + 1e-9);
    }
}

#[test]
fn green_band_extremes() {
    let all_green = |change| vec![CorridorSignal { plan: plan(vec![60.0], 0.0), arterial_entry: 0, change_s: change }; 3];
    let full = green_band(&all_green(0.0), &[300.0, 450.0], 10.0, Direction::Backward).unwrap();
    assert!((full.efficiency_pct - 100.0).abs() < 1e-12);
    let none = vec![CorridorSignal { plan: plan(vec![4.0, 56.0], 0.0), arterial_entry: 0, change_s: 4.0 }; 3];
    assert_eq!(green_band(&none, &[300.0, 450.0], 10.0, Direction::Forward).unwrap().efficiency_pct, 0.0);
}
