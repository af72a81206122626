use dsf::stft::{analyze, make_window, synthesize, Signal, WindowKind};
use proptest::prelude::*;

fn signal(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analysis_is_linear(x in signal(1500), y in signal(1500), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let sx = analyze(&Signal::mono(8000, x).unwrap(), 256, 64, WindowKind::Hamming).unwrap();
        let sy = analyze(&Signal::mono(8000, y).unwrap(), 256, 64, WindowKind::Hamming).unwrap();
        let sc = analyze(&Signal::mono(8000, combo).unwrap(), 256, 64, WindowKind::Hamming).unwrap();
        for ((u, v), w) in sx.values().iter().zip(sy.values()).zip(sc.values()) {
            prop_assert!((u * a + v * b - w).norm() < 1e-10);
        }
    }

    #[test]
    fn round_trip_recovers_any_signal(
        x in signal(3000),
        geometry in prop_oneof![Just((2048usize, 512usize)), Just((256, 64)), Just((512, 256)), Just((128, 8))],
    ) {
        let (fft, hop) = geometry;
        let sig = Signal::mono(16_000, x).unwrap();
        let back = synthesize(&analyze(&sig, fft, hop, WindowKind::Hamming).unwrap()).unwrap();
        let num: f64 = back.channel(0).iter().zip(sig.channel(0)).map(|(p, q)| (p - q).powi(2)).sum();
        let den: f64 = sig.channel(0).iter().map(|q| q * q).sum();
        prop_assert!((num / den.max(1e-300)).sqrt() < 1e-6);
    }

    #[test]
    fn energy_is_consistent_with_window(x in signal(4096)) {
        // Each sample lies under fft/hop frames, so summed spectral energy is
        // the signal energy scaled by the window's mean square (times fft/hop),
        // up to edge effects bounded by the window's range.
        let (fft, hop) = (256usize, 64usize);
        let sig = Signal::mono(8000, x.clone()).unwrap();
        let spec = analyze(&sig, fft, hop, WindowKind::Hamming).unwrap();
        let mut spectral = 0.0;
        for k in 0..spec.n_frames() {
            for f in 0..spec.n_bins() {
                let e = spec.get(f, 0, k).norm_sqr();
                spectral += if f == 0 || f == spec.n_bins() - 1 { e } else { 2.0 * e };
            }
        }
        spectral /= fft as f64;
        let w = make_window(fft, WindowKind::Hamming).unwrap();
        let mean_sq = w.iter().map(|v| v * v).sum::<f64>() / fft as f64;
        let expected = x.iter().map(|v| v * v).sum::<f64>() * mean_sq * (fft / hop) as f64;
        let ratio = spectral / expected;
        prop_assert!((0.9..1.1).contains(&ratio), "ratio {}", ratio);
    }
}
