use proptest::prelude::*;
use spcot::data::TensorFile;
use spcot::losses::{compute_weights, jsd_alpha, self_paced_weight};
use spcot::metrics::{dsc, hausdorff, BinaryMask};
use spcot::model::{soft_vote, Transform};
use spcot::{ProbMap, SegNetTiny, Tensor};

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn dist(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0..6.0f64, c).prop_map(|z| softmax(&z))
}

/// `K` probability maps of shape `[C, side, side]`, channel-major.
fn maps(k: usize, c: usize, side: usize) -> impl Strategy<Value = Vec<Tensor>> {
    prop::collection::vec(prop::collection::vec(dist(c), side * side), k).prop_map(move |views| {
        views
            .into_iter()
            .map(|pixels| {
                let plane = side * side;
                let mut data = vec![0.0; c * plane];
                for (i, p) in pixels.iter().enumerate() {
                    for (j, v) in p.iter().enumerate() {
                        data[j * plane + i] = *v;
                    }
                }
                Tensor::new(vec![c, side, side], data).unwrap()
            })
            .collect()
    })
}

fn mask(side: usize) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(any::<bool>(), side * side).prop_map(move |bits| BinaryMask::new(side, side, bits).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weight_stays_between_floor_and_one(kl in 0.0..50.0f64, gamma in 1e-3..10.0f64, eps in 1e-4..0.5f64) {
        let w = self_paced_weight(kl, gamma, eps).unwrap();
        prop_assert!((eps..=1.0).contains(&w));
    }

    #[test]
    fn mixture_stats_are_normalized(views in maps(3, 2, 3), gamma in 0.05..5.0f64) {
        let refs: Vec<&Tensor> = views.iter().collect();
        let (weights, stats) = compute_weights(&refs, gamma, 0.01).unwrap();
        for i in 0..9 {
            let sum: f64 = stats.pi.iter().map(|p| p.data()[i]).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            let rho = stats.rho.data()[i];
            prop_assert!((3.0 * 0.01 - 1e-15..=3.0 + 1e-15).contains(&rho));
            for w in &weights.w {
                prop_assert!((0.01..=1.0).contains(&w.data()[i]));
            }
        }
    }

    #[test]
    fn jsd_alpha_is_nonnegative_and_ordered(p in dist(4), q in dist(4), r in dist(4), a in 0.0..1.0f64) {
        let pi = [0.2, 0.3, 0.5];
        let probs: [&[f64]; 3] = [&p, &q, &r];
        let lo = jsd_alpha(&probs, &pi, 0.0).unwrap();
        let mid = jsd_alpha(&probs, &pi, a).unwrap();
        let hi = jsd_alpha(&probs, &pi, 1.0).unwrap();
        prop_assert!(lo >= -1e-12);
        prop_assert!(lo <= mid + 1e-12 && mid <= hi + 1e-12);
    }

    #[test]
    fn rotations_invert_exactly(data in prop::collection::vec(-1.0..1.0f64, 2 * 25), r in 0u8..4) {
        let x = Tensor::new(vec![2, 5, 5], data).unwrap();
        let t = Transform::rotation(r);
        let back = t.inverse().apply(&t.apply(&x).unwrap()).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn forward_gives_valid_probabilities(seed in any::<u64>(), pixels in prop::collection::vec(0.0..1.0f64, 36)) {
        use rand::SeedableRng;
        let net = SegNetTiny::init(2, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let out = net.forward(&Tensor::new(vec![1, 6, 6], pixels).unwrap()).unwrap();
        for i in 0..out.pixels() {
            let p = out.pixel(i);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn soft_vote_stays_on_the_simplex(views in maps(3, 3, 2)) {
        let preds: Vec<ProbMap> = views.into_iter().map(|t| ProbMap::new(t).unwrap()).collect();
        let vote = soft_vote(&preds).unwrap();
        for i in 0..vote.pixels() {
            prop_assert!((vote.pixel(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(a in mask(6), b in mask(6)) {
        let d = dsc(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dsc(&b, &a).unwrap());
        prop_assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff(&b, &a).unwrap());
        if !a.is_empty() {
            prop_assert_eq!(hausdorff(&a, &a).unwrap(), Some(0.0));
        }
    }

    #[test]
    fn tensor_file_round_trips(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u32>()) {
        let n: usize = dims.iter().product();
        let values: Vec<f32> = (0..n).map(|i| f32::from_bits(seed.wrapping_mul(2_654_435_761).wrapping_add(i as u32) & 0x7f7f_ffff)).collect();
        let file = TensorFile::f32(dims, values);
        prop_assert_eq!(TensorFile::decode(&file.encode()).unwrap(), file);
    }
}
