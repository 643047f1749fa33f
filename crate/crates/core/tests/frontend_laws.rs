mod common;

use proptest::prelude::*;
use stereoqual::conditioning::{from_mid_side, swap_channels, to_mid_side};
use stereoqual::{AudioExcerpt, FrontendConfig, GammatoneFrontend, InputLayout, TensorBuilder};

fn signal(len: usize, seed: u64) -> Vec<f64> {
    common::noise(len, 1, seed).into_channels().remove(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frame_count_law(len in 1usize..20_000) {
        let fe = GammatoneFrontend::<f64>::new(FrontendConfig::default()).unwrap();
        let spec = fe.compute(&signal(len, len as u64)).unwrap();
        prop_assert_eq!(spec.num_bands, 32);
        prop_assert_eq!(spec.num_frames, len.div_ceil(960));
        prop_assert!(spec.values_db.iter().all(|v| v.is_finite() && *v >= -100.0));
    }

    #[test]
    fn scaling_shifts_every_unfloored_cell(len in 3840usize..12_000, gain_db in -30.0f64..20.0, seed in 0u64..1000) {
        let fe = GammatoneFrontend::<f64>::new(FrontendConfig::default()).unwrap();
        let x = signal(len, seed);
        let g = 10f64.powf(gain_db / 20.0);
        let scaled: Vec<f64> = x.iter().map(|v| v * g).collect();
        let a = fe.compute(&x).unwrap();
        let b = fe.compute(&scaled).unwrap();
        for (p, q) in a.values_db.iter().zip(&b.values_db) {
            if *p > -60.0 && *q > -60.0 {
                prop_assert!((q - p - gain_db).abs() < 1e-6, "{} -> {}", p, q);
            }
        }
    }

    #[test]
    fn sign_inversion_is_invisible(len in 3840usize..10_000, seed in 0u64..1000) {
        let fe = GammatoneFrontend::<f64>::new(FrontendConfig::default()).unwrap();
        let x = signal(len, seed);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert_eq!(fe.compute(&x).unwrap().values_db, fe.compute(&neg).unwrap().values_db);
    }

    #[test]
    fn mid_side_round_trip(len in 1usize..4000, seed in 0u64..1000) {
        let ex = common::noise(len, 2, seed);
        let (m, s) = to_mid_side(ex.channel(0), ex.channel(1)).unwrap();
        let (l, r) = from_mid_side(&m, &s);
        for (a, b) in l.iter().zip(ex.channel(0)).chain(r.iter().zip(ex.channel(1))) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn swapping_both_excerpts_permutes_planes(seed in 0u64..1000) {
        let builder = TensorBuilder::<f64>::new(FrontendConfig::default(), InputLayout::Stereo).unwrap();
        let r = common::noise(9600, 2, seed);
        let c = common::noise(9600, 2, seed + 1);
        let a = builder.build(&r, &c, None).unwrap();
        let b = builder
            .build(&swap_channels(&r).unwrap(), &swap_channels(&c).unwrap(), None)
            .unwrap();
        // L and R planes trade places; M and S are unchanged
        prop_assert_eq!(b, a.permute_planes(&[2, 3, 0, 1, 4, 5, 6, 7]));
    }
}

#[test]
fn identical_channels_give_floor_side_planes() {
    let x = signal(9600, 3);
    let ex = AudioExcerpt::stereo(x.clone(), x, 48_000).unwrap();
    let builder = TensorBuilder::<f64>::new(FrontendConfig::default(), InputLayout::Stereo).unwrap();
    let t = builder.build(&ex, &ex, None).unwrap();
    for c in [6, 7] {
        assert!(t.plane(c).iter().all(|&v| v == -100.0));
    }
    assert_eq!(t.plane(0), t.plane(2));
}

#[test]
fn short_input_is_padded_to_the_builder_minimum() {
    let builder = TensorBuilder::<f32>::new(FrontendConfig::default(), InputLayout::StereoNoMid)
        .unwrap()
        .with_min_frames(129);
    let ex = common::noise(4800, 2, 9).cast::<f32>();
    let t = builder.build(&ex, &ex, None).unwrap();
    assert_eq!(t.shape(), [6, 32, 129]);
}
