use dln_core::analysis::{verify_imbalance_contraction, verify_loss_contraction, Phase};
use dln_core::dataset::Dataset;
use dln_core::dynamics::{
    gd_step, gd_step_noise, gd_step_weight_decay, integrate_flow, sgd_step, step, FlowSpec, Rule,
};
use dln_core::rng::{stream, Purpose};
use dln_core::trajectory::{read_trajectory, write_trajectory, TrajectoryRecord};
use dln_core::verify::sample_near_manifold;
use dln_core::WeightVector;
use proptest::prelude::*;

fn entry() -> impl Strategy<Value = f64> {
    prop_oneof![-3.0..-0.1f64, 0.1..3.0f64]
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(entry(), 2..=6)
}

fn wv(v: Vec<f64>) -> WeightVector {
    WeightVector::new(v).unwrap()
}

fn rules() -> impl Strategy<Value = Rule> {
    prop_oneof![
        Just(Rule::Gd),
        (0.0..0.5f64).prop_map(|mu| Rule::WeightDecay { mu }),
        (-0.45..0.45f64).prop_map(|eta| Rule::Noise { eta }),
        (-0.9..0.9f64).prop_map(|eta| Rule::Sgd { eta }),
    ]
}

fn any_real() -> impl Strategy<Value = f64> {
    prop_oneof![
        prop::num::f64::NORMAL,
        prop::num::f64::SUBNORMAL,
        prop::num::f64::ZERO,
        -10.0..10.0f64,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn imbalance_ignores_order_and_signs(
        (v, perm) in weights().prop_flat_map(|v| {
            let n = v.len();
            (Just(v), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        }),
        flips in prop::collection::vec(any::<bool>(), 6),
    ) {
        let base = wv(v.clone()).layer_imbalance();
        let permuted: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
        prop_assert_eq!(wv(permuted).layer_imbalance(), base);
        let flipped: Vec<f64> = v.iter().zip(&flips).map(|(x, &f)| if f { -x } else { *x }).collect();
        prop_assert_eq!(wv(flipped).layer_imbalance(), base);
    }

    #[test]
    fn pairwise_imbalance_is_antisymmetric(v in weights()) {
        let w = wv(v);
        for (i, j) in w.pairs() {
            prop_assert_eq!(w.pairwise_imbalance(i, j).unwrap(), -w.pairwise_imbalance(j, i).unwrap());
        }
        prop_assert!(w.layer_imbalance() >= 0.0);
    }

    #[test]
    fn loss_vanishes_only_on_the_manifold(v in weights()) {
        let w = wv(v);
        prop_assert!(w.loss() >= 0.0);
        prop_assert_eq!(w.loss() == 0.0, w.product() == 1.0);
    }

    #[test]
    fn zero_noise_and_zero_decay_reduce_to_gd(v in weights(), lr in 1e-4..0.5f64) {
        let w = wv(v);
        let plain = gd_step(&w, lr).unwrap();
        prop_assert_eq!(&gd_step_noise(&w, lr, 0.0).unwrap(), &plain);
        prop_assert_eq!(&sgd_step(&w, lr, 0.0).unwrap(), &plain);
        prop_assert_eq!(&gd_step_weight_decay(&w, lr, 0.0).unwrap(), &plain);
    }

    #[test]
    fn flipping_two_signs_commutes_with_steps(
        v in weights(),
        rule in rules(),
        lr in 1e-4..0.2f64,
        pick in (0usize..6, 0usize..6),
    ) {
        let d = v.len();
        let (i, j) = (pick.0 % d, pick.1 % d);
        prop_assume!(i != j);
        let flip = |x: &[f64]| {
            let mut y = x.to_vec();
            y[i] = -y[i];
            y[j] = -y[j];
            y
        };
        let w = wv(v.clone());
        let a = step(&wv(flip(&v)), lr, rule).unwrap().w_next;
        let b = flip(step(&w, lr, rule).unwrap().w_next.as_slice());
        prop_assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn adaptive_gd_contracts_under_hypothesis(seed in any::<u64>(), d in 2usize..=8) {
        let mut rng = stream(seed, 0, Purpose::Trials);
        let w = sample_near_manifold(&mut rng, d, 0.5, 0.05, 3.0);
        let k = verify_loss_contraction(&w).unwrap();
        prop_assert!(-0.8 < k && k < 59.0 / 64.0);
        for (i, j) in w.pairs() {
            if w.pairwise_imbalance(i, j).unwrap() != 0.0 {
                let f = verify_imbalance_contraction(&w, i, j).unwrap();
                prop_assert!(f > 247.0 / 256.0 && f <= 1.0);
            }
        }
    }

    #[test]
    fn trajectory_csv_round_trips_bitwise(
        rows in prop::collection::vec(
            (
                prop::collection::vec(any_real(), 3),
                prop::collection::vec(any_real(), 4),
                prop::option::of(any_real()),
                prop::option::of(any_real()),
                prop::option::of(prop_oneof![Just(Phase::Optimization), Just(Phase::Regularization)]),
            ),
            1..20,
        ),
    ) {
        let records: Vec<TrajectoryRecord> = rows
            .into_iter()
            .enumerate()
            .map(|(k, (w, cols, t, eta, phase))| TrajectoryRecord {
                step: k as u64,
                t,
                w: wv(w),
                product: cols[0],
                loss: cols[1],
                imbalance: cols[2],
                lr: cols[3],
                band_lo: eta.map(|e| e - 1.0),
                band_hi: eta,
                eta,
                phase,
            })
            .collect();
        let mut buf = Vec::new();
        write_trajectory(&records, &mut buf).unwrap();
        let back = read_trajectory(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            let bits = |r: &TrajectoryRecord| {
                let mut v: Vec<u64> = r.w.as_slice().iter().map(|x| x.to_bits()).collect();
                v.extend([r.product, r.loss, r.imbalance, r.lr].map(f64::to_bits));
                v.extend([r.t, r.band_lo, r.band_hi, r.eta].map(|o| o.map_or(u64::MAX, f64::to_bits)));
                v
            };
            prop_assert_eq!(bits(a), bits(b));
            prop_assert_eq!(a.phase, b.phase);
        }
    }

    #[test]
    fn dataset_csv_round_trips(seed in any::<u64>(), n in 2usize..40, noise in 0.0..2.0f64) {
        let ds = Dataset::generate(n, noise, seed).unwrap();
        let back = Dataset::read_csv(ds.to_csv_string().as_bytes()).unwrap();
        prop_assert_eq!(back, ds);
    }
}

/// One GD step of size ε against the flow over time ε: the gap is O(ε²).
#[test]
fn gd_step_matches_flow_to_second_order() {
    let mut rng = stream(77, 0, Purpose::Trials);
    let mut constants = Vec::new();
    for _ in 0..100 {
        let w = loop {
            let d = rand::Rng::random_range(&mut rng, 2..=4);
            let w = sample_near_manifold(&mut rng, d, 0.5, 0.5, 1.5);
            if (w.product() - 1.0).abs() > 0.1 {
                break w;
            }
        };
        let gap = |eps: f64| {
            let discrete = gd_step(&w, eps).unwrap().w_next;
            let flow = integrate_flow(&w, &FlowSpec::plain(1.0, eps, eps / 8.0)).unwrap();
            discrete
                .as_slice()
                .iter()
                .zip(flow.last().w.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let (g1, g2) = (gap(1e-2), gap(5e-3));
        // Richardson: halving ε quarters the gap of a second-order error.
        let order = (g1 / g2).log2();
        assert!((1.8..=2.2).contains(&order), "observed order {order} at {:?}", w.as_slice());
        constants.push(g1 / 1e-4);
    }
    let c = constants.iter().cloned().fold(0.0f64, f64::max);
    assert!(c.is_finite() && c < 100.0, "error constant {c}");
}
