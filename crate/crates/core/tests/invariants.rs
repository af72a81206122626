use dsf_core::cost::angular_vector;
use dsf_core::khl::khl_run;
use dsf_core::linalg::{norm, CMat, C64};
use dsf_core::perm::is_bijection;
use dsf_core::separation::{align_permutations, softargmax_mask};
use dsf_core::synth::{gen_bin_data, si_sdr, SynthBinSpec};
use dsf_core::MaskTensor;
use proptest::prelude::*;

fn complex() -> impl Strategy<Value = C64> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| C64::new(a, b))
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = CMat> {
    prop::collection::vec(complex(), rows * cols).prop_map(move |v| CMat::from_col_major(rows, cols, v))
}

fn unit_frames(m: usize, k: usize) -> impl Strategy<Value = CMat> {
    matrix(m, k)
        .prop_filter("nonzero frames", |x| x.columns().all(|c| norm(c) > 1e-3))
        .prop_map(|mut x| {
            for j in 0..x.cols() {
                let n = norm(x.col(j));
                x.col_mut(j).iter_mut().for_each(|v| *v /= n);
            }
            x
        })
}

fn nonzero_columns(h: &CMat) -> bool {
    h.columns().all(|c| norm(c) > 1e-3)
}

proptest! {
    #[test]
    fn masks_partition_unity(h in matrix(2, 3), frames in unit_frames(2, 20), beta in 0.0f64..1e4) {
        prop_assume!(nonzero_columns(&h));
        let mask = softargmax_mask(&h, &frames, beta).unwrap();
        for k in 0..20 {
            let s: f64 = (0..3).map(|n| mask[n * 20 + k]).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!((0..3).all(|n| (0.0..=1.0).contains(&mask[n * 20 + k])));
        }
    }

    #[test]
    fn mask_and_similarity_ignore_column_scale_and_phase(
        h in matrix(3, 3),
        frames in unit_frames(3, 10),
        mag in 1e-3f64..1e3,
        phase in 0.0f64..std::f64::consts::TAU,
        col in 0usize..3,
    ) {
        prop_assume!(nonzero_columns(&h));
        let c = C64::from_polar(mag, phase);
        let mut scaled = h.clone();
        scaled.col_mut(col).iter_mut().for_each(|v| *v *= c);
        let a = softargmax_mask(&h, &frames, 12.5).unwrap();
        let b = softargmax_mask(&scaled, &frames, 12.5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for x in frames.columns() {
            let u = angular_vector(&h, x).unwrap();
            let v = angular_vector(&scaled, x).unwrap();
            for (p, q) in u.iter().zip(&v) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn khl_ignores_global_phase(seed in 0u64..1000, phase in 0.0f64..std::f64::consts::TAU) {
        let bin = gen_bin_data(&SynthBinSpec {
            m_channels: 2, n_sources: 3, n_frames: 300, activity: vec![0.5, 0.3, 0.2], dominance: 0.95, seed,
        }).unwrap();
        let rot = C64::from_polar(1.0, phase);
        let rotated = CMat::from_fn(2, 300, |i, j| bin.frames[(i, j)] * rot);
        let a = khl_run(&bin.frames, 3, seed, 2, 30).unwrap();
        let b = khl_run(&rotated, 3, seed, 2, 30).unwrap();
        prop_assert_eq!(&a.labels, &b.labels);
        prop_assert!((a.inertia - b.inertia).abs() < 1e-9);
    }

    #[test]
    fn si_sdr_is_scale_invariant(
        reference in prop::collection::vec(-1.0f64..1.0, 64),
        noise in prop::collection::vec(-0.3f64..0.3, 64),
        c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3],
    ) {
        prop_assume!(reference.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let est: Vec<f64> = reference.iter().zip(&noise).map(|(r, n)| r + n).collect();
        let scaled: Vec<f64> = est.iter().map(|v| v * c).collect();
        let a = si_sdr(&est, &reference).unwrap();
        let b = si_sdr(&scaled, &reference).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn alignment_always_returns_bijections(
        values in prop::collection::vec(0.0f64..1.0, 6 * 3 * 12),
    ) {
        let mut masks = MaskTensor::uniform(6, 3, 12);
        for f in 0..6 {
            let block = masks.bin_mut(f);
            for k in 0..12 {
                let raw: Vec<f64> = (0..3).map(|n| values[(f * 3 + n) * 12 + k] + 1e-3).collect();
                let total: f64 = raw.iter().sum();
                for n in 0..3 {
                    block[n * 12 + k] = raw[n] / total;
                }
            }
        }
        let perm = align_permutations(&masks).unwrap();
        prop_assert_eq!(perm.bins(), 6);
        for f in 0..6 {
            prop_assert!(is_bijection(perm.bin(f)));
        }
    }
}

#[test]
fn synthetic_bins_are_bit_deterministic() {
    let spec = SynthBinSpec { m_channels: 3, n_sources: 4, n_frames: 500, activity: vec![0.4, 0.3, 0.2, 0.1], dominance: 0.9, seed: 5 };
    let a = gen_bin_data(&spec).unwrap();
    let b = gen_bin_data(&spec).unwrap();
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.a_true, b.a_true);
    assert_eq!(a.dominant, b.dominant);
}
