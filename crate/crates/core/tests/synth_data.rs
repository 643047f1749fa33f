mod common;

use std::fs;

use stereoqual::conditioning::to_mid_side;
use stereoqual::synth::{
    default_degradations, gen_dataset, lowpass, ms_crosstalk, write_sources, Degradation, DegradationSpec,
    MANIFEST_NAME,
};
use stereoqual::{load_wav, read_manifest, AudioExcerpt, FrontendConfig, GammatoneFrontend};

/// Mean power per band in dB over all frames.
fn band_levels(fe: &GammatoneFrontend<f64>, x: &[f64]) -> Vec<f64> {
    let spec = fe.compute(x).unwrap();
    (0..spec.num_bands)
        .map(|b| {
            let p = spec.band(b).iter().map(|db| 10f64.powf(db / 10.0)).sum::<f64>() / spec.num_frames as f64;
            10.0 * p.log10()
        })
        .collect()
}

#[test]
fn anchor_lowpass_attenuates_white_noise_above_twice_cutoff() {
    let fe = GammatoneFrontend::<f64>::new(FrontendConfig::default()).unwrap();
    let x = common::noise(48_000, 1, 5);
    let y = lowpass(&x, 3500.0).unwrap();
    let before = band_levels(&fe, x.channel(0));
    let after = band_levels(&fe, y.channel(0));
    let centres = &fe.filterbank().center_freqs_hz;
    let mut checked = 0;
    for b in 0..centres.len() {
        if centres[b] >= 7000.0 {
            assert!(before[b] - after[b] >= 40.0, "band {b} at {:.0} Hz: {:.1} dB", centres[b], before[b] - after[b]);
            checked += 1;
        }
    }
    assert!(checked >= 5);
}

#[test]
fn lowpass_just_below_nyquist_is_nearly_transparent() {
    // content kept well away from Nyquist, where the transition band lies
    let x: Vec<f64> = common::tone(440.0, 9600, 0.3)
        .iter()
        .zip(common::tone(9000.0, 9600, 0.2))
        .map(|(a, b)| a + b)
        .collect();
    let y = lowpass(&AudioExcerpt::mono(x.clone(), 48_000).unwrap(), 23_999.0).unwrap();
    let dev = x.iter().zip(y.channel(0)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-3, "max deviation {dev}");
}

#[test]
fn half_crosstalk_lowers_side_planes_by_six_db() {
    let fe = GammatoneFrontend::<f64>::new(FrontendConfig::default()).unwrap();
    let x = common::noise(19_200, 2, 8);
    let y = ms_crosstalk(&x, 0.5).unwrap();
    let (m0, s0) = to_mid_side(x.channel(0), x.channel(1)).unwrap();
    let (m1, s1) = to_mid_side(y.channel(0), y.channel(1)).unwrap();
    let expected = 20.0 * 0.5f64.log10();
    let a = fe.compute(&s0).unwrap();
    let b = fe.compute(&s1).unwrap();
    for (p, q) in a.values_db.iter().zip(&b.values_db) {
        if *p > -70.0 {
            assert!((q - p - expected).abs() < 1e-6, "{p} -> {q}");
        }
    }
    let mid = fe.compute(&m0).unwrap().values_db;
    for (p, q) in mid.iter().zip(&fe.compute(&m1).unwrap().values_db) {
        assert!((p - q).abs() < 1e-9);
    }
}

#[test]
fn dataset_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    write_sources(&dir.path().join("src"), 2, 0.5, 1).unwrap();
    let specs = [
        DegradationSpec::new(Degradation::AdditiveNoise { snr_db: 20.0 }, 60.0),
        DegradationSpec::new(Degradation::BandGap { first_band: 20, last_band: 24 }, 65.0),
        DegradationSpec::new(Degradation::MsCrosstalk { fraction: 0.5 }, 70.0),
    ];
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let rows = gen_dataset(&dir.path().join("src"), &out_a, &specs, 42).unwrap();
    gen_dataset(&dir.path().join("src"), &out_b, &specs, 42).unwrap();

    // per source: hidden reference, two anchors, three conditions
    assert_eq!(rows.len(), 12);
    assert_eq!(read_manifest(out_a.join(MANIFEST_NAME)).unwrap(), rows);
    let codecs: Vec<_> = rows[..6].iter().map(|r| r.codec_tag().to_string()).collect();
    assert_eq!(codecs, ["reference", "lowpass", "lowpass", "additive_noise", "band_gap", "ms_crosstalk"]);
    assert_eq!(rows[1].cod_path, std::path::Path::new("src00").join("lp7000.wav"));
    assert_eq!(rows[2].mos, 30.0);
    assert_eq!(
        fs::read(out_a.join(MANIFEST_NAME)).unwrap(),
        fs::read(out_b.join(MANIFEST_NAME)).unwrap()
    );
    for r in &rows {
        let a = fs::read(out_a.join(&r.cod_path)).unwrap();
        assert_eq!(a, fs::read(out_b.join(&r.cod_path)).unwrap(), "{:?}", r.cod_path);
        let audio: AudioExcerpt<f32> = load_wav(out_a.join(&r.cod_path)).unwrap();
        assert!(audio.is_stereo());
        assert!(audio.channels().iter().flatten().all(|s| s.is_finite() && s.abs() <= 1.0));
    }

    let other = gen_dataset(&dir.path().join("src"), &dir.path().join("c"), &specs, 43).unwrap();
    assert_eq!(other.len(), 12);
    assert_ne!(
        fs::read(out_a.join(&rows[3].cod_path)).unwrap(),
        fs::read(dir.path().join("c").join(&rows[3].cod_path)).unwrap()
    );
}

#[test]
fn non_monotone_labels_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_sources(&dir.path().join("src"), 1, 0.2, 1).unwrap();
    let mut specs = default_degradations();
    specs[0].proxy_mos = 20.0; // 30 dB SNR scored below 20 dB
    assert!(gen_dataset(&dir.path().join("src"), &dir.path().join("out"), &specs, 0).is_err());
}
