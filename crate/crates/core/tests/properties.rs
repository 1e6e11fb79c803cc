use proptest::prelude::*;

use paon::cli::{schema, Settings};
use paon::data::{decode_ppm, decode_tnsr, encode_ppm, encode_tnsr};
use paon::kernels::{pixel_shuffle, pixel_unshuffle};
use paon::metrics::{from_8bit, psnr, ssim_plane};
use paon::paon::symbolic::smoothed_expansion;
use paon::paon::ScalarPaon;
use paon::tensor::Tensor;

fn coeffs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn smoothed_first_order_denominator_is_at_least_one(
        a in coeffs(3), b1 in -50.0f64..50.0, x in -100.0f64..100.0, k in 0usize..=2
    ) {
        let n = ScalarPaon::new(a[..=k].to_vec(), vec![b1], true).unwrap();
        prop_assert!(n.denominator(x) >= 1.0);
        prop_assert!(n.eval(x).is_finite());
    }

    #[test]
    fn polynomial_forms_agree(a in coeffs(3), x in -5.0f64..5.0) {
        let s = ScalarPaon::new(a.clone(), vec![], true).unwrap().eval(x);
        let v = ScalarPaon::new(a.clone(), vec![], false).unwrap().eval(x);
        let direct = a[0] + a[1] * x + a[2] * x * x;
        prop_assert_eq!(s, v);
        prop_assert!((s - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn expansion_matches_evaluation(
        a in prop::collection::vec(-6i128..=6, 3), b in prop::collection::vec(-6i128..=6, 2), x in -4i128..=4
    ) {
        let (num, den) = smoothed_expansion(&a, &b);
        let n = ScalarPaon::new(
            a.iter().map(|&v| v as f64).collect(),
            b.iter().map(|&v| v as f64).collect(),
            true,
        ).unwrap();
        let d = den.eval(x);
        prop_assume!(d != 0);
        let want = n.eval(x as f64);
        let got = num.eval(x) as f64 / d as f64;
        prop_assert!((want - got).abs() <= 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn tnsr_round_trips(dims in prop::collection::vec(1usize..4, 1..=4), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|i| ((i as u64 ^ seed) % 1000) as f32 / 7.0 - 50.0).collect();
        let t = Tensor::new(dims, data).unwrap();
        let back: Tensor<f32> = decode_tnsr(&encode_tnsr(&t).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn ppm_round_trips_8bit_images(h in 1usize..6, w in 1usize..6, levels in prop::collection::vec(0u8..=255, 108)) {
        let img = Tensor::<f64>::from_fn(vec![3, h, w], |i| from_8bit(levels[i % levels.len()])).unwrap();
        let back: Tensor<f64> = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        prop_assert_eq!(back.shape(), img.shape());
        for (p, q) in back.data().iter().zip(img.data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn pixel_shuffle_inverts(r in 1usize..4, c in 1usize..3, h in 1usize..4, w in 1usize..4) {
        let t = Tensor::<f64>::from_fn(vec![2, c * r * r, h, w], |i| i as f64).unwrap();
        let up = pixel_shuffle(&t, r).unwrap();
        prop_assert_eq!(up.shape(), &[2, c, h * r, w * r][..]);
        prop_assert_eq!(pixel_unshuffle(&up, r).unwrap(), t);
    }

    #[test]
    fn identical_images_score_perfectly(v in prop::collection::vec(0.0f64..1.0, 144)) {
        prop_assert!((ssim_plane(&v, &v, 12, 12, 1.0).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(psnr(&v, &v, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn manifests_reproduce_settings(iterations in 1usize..100_000, lr in 1e-6f64..1.0, seed in any::<u32>()) {
        let mut s = Settings::new("train-sr", schema("train-sr").unwrap());
        s.assign(&format!("iterations={iterations}")).unwrap();
        s.assign(&format!("lr={lr}")).unwrap();
        s.assign(&format!("seed={seed}")).unwrap();
        let mut again = Settings::new("train-sr", schema("train-sr").unwrap());
        again.apply_text(&s.manifest(), "manifest").unwrap();
        prop_assert_eq!(again.manifest(), s.manifest());
        prop_assert_eq!(again.get::<f64>("lr").unwrap(), lr);
    }
}
