use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lqtrack::degrade::{
    degrade_image, degrade_sequence, make_kernel, psnr, read_manifest, replay_manifest, sample_stage,
    DegradationConfig, ImageBuffer, KernelFamily, KernelShape, MANIFEST_FILE,
};
use lqtrack::mot_io::load_sequence;
use lqtrack::synth::MovingBoxes;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn fixture(frames: usize) -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("clean");
    MovingBoxes { frames, ..MovingBoxes::default() }.write(&seq).unwrap();
    (tmp, seq)
}

#[test]
fn two_thirds_of_six_frames_degrades_the_first_four() {
    let (tmp, seq) = fixture(6);
    let out = tmp.path().join("out");
    let cfg = DegradationConfig { seed: 3, fraction: 2.0 / 3.0, ..DegradationConfig::default() };
    let manifest = degrade_sequence(&seq, &out, &cfg).unwrap();
    let degraded: Vec<usize> = manifest.iter().filter(|m| m.degraded).map(|m| m.frame).collect();
    assert_eq!(degraded, [1, 2, 3, 4]);
    assert!(manifest.iter().filter(|m| m.degraded).all(|m| m.stages.len() == 2));

    let (src, dst) = (tree(&seq), tree(&out));
    for (name, bytes) in &src {
        let frame = name.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<usize>().ok());
        match frame {
            Some(f) if f <= 4 => assert_ne!(&dst[name], bytes, "{name:?}"),
            _ => assert_eq!(&dst[name], bytes, "{name:?}"),
        }
    }
    assert_eq!(read_manifest(&out.join(MANIFEST_FILE)).unwrap(), manifest);
}

#[test]
fn fraction_zero_is_a_byte_copy() {
    let (tmp, seq) = fixture(4);
    let out = tmp.path().join("out");
    let cfg = DegradationConfig { fraction: 0.0, ..DegradationConfig::default() };
    degrade_sequence(&seq, &out, &cfg).unwrap();
    let mut copied = tree(&out);
    copied.remove(Path::new(MANIFEST_FILE));
    assert_eq!(copied, tree(&seq));
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let (tmp, seq) = fixture(6);
    let cfg = DegradationConfig { seed: 21, fraction: 1.0, ..DegradationConfig::default() };
    let run = |threads: usize, name: &str| {
        let out = tmp.path().join(name);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| degrade_sequence(&seq, &out, &cfg)).unwrap();
        tree(&out)
    };
    assert_eq!(run(1, "serial"), run(4, "parallel"));
}

#[test]
fn replay_detects_tampering() {
    let (tmp, seq) = fixture(4);
    let out = tmp.path().join("out");
    let cfg = DegradationConfig { seed: 5, ..DegradationConfig::default() };
    degrade_sequence(&seq, &out, &cfg).unwrap();
    let report = replay_manifest(&seq, &out).unwrap();
    assert!(report.is_exact());
    assert_eq!(report.frames_checked, 4);

    let victim = out.join("img1").join("000002.png");
    let other = fs::read(out.join("img1").join("000001.png")).unwrap();
    fs::write(&victim, other).unwrap();
    assert_eq!(replay_manifest(&seq, &out).unwrap().mismatches, [2]);
}

#[test]
fn restored_frames_keep_geometry_and_annotations() {
    let (tmp, seq) = fixture(3);
    let out = tmp.path().join("out");
    degrade_sequence(&seq, &out, &DegradationConfig { fraction: 1.0, ..DegradationConfig::default() }).unwrap();
    let (a, b) = (load_sequence(&seq).unwrap(), load_sequence(&out).unwrap());
    assert_eq!(a.info, b.info);
    for (x, y) in a.frames.iter().zip(&b.frames) {
        let (x, y) = (ImageBuffer::load(x).unwrap(), ImageBuffer::load(y).unwrap());
        assert_eq!((x.height(), x.width()), (y.height(), y.width()));
    }
    assert_eq!(fs::read(seq.join("gt/gt.txt")).unwrap(), fs::read(out.join("gt/gt.txt")).unwrap());
}

/// Smooth shading with fine texture, a stand-in for natural frames.
fn textured_frame(k: usize) -> ImageBuffer {
    ImageBuffer::from_fn(64, 80, |y, x, c| {
        let (fy, fx, t) = (y as f32, x as f32, k as f32);
        let base = 0.5 + 0.3 * ((fx + 3.0 * t) / 13.0).sin() * ((fy - t) / 9.0).cos();
        let fine = 0.1 * (((x * 7 + y * 13 + c * 5 + k * 3) % 11) as f32 / 10.0 - 0.5);
        (base + fine + 0.05 * c as f32).clamp(0.0, 1.0)
    })
}

#[test]
fn degradation_visibly_lowers_quality() {
    let cfg = DegradationConfig { seed: 17, ..DegradationConfig::default() };
    let scores: Vec<f64> = (0..20)
        .map(|k| {
            let clean = textured_frame(k);
            psnr(&clean, &degrade_image(&clean, &cfg, k as u64 + 1).unwrap().image).unwrap()
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!(mean.is_finite() && mean < 40.0, "mean PSNR {mean}");
}

proptest! {
    #[test]
    fn kernels_are_normalized_and_non_negative(
        family in 0usize..6,
        half in 3usize..=10,
        sx in 0.2f64..3.0,
        sy in 0.2f64..3.0,
        theta in -3.2f64..3.2,
        beta in 0.5f64..4.0,
    ) {
        let k = make_kernel(KernelFamily::ALL[family], 2 * half + 1, KernelShape { sigma_x: sx, sigma_y: sy, theta, beta }).unwrap();
        prop_assert!((k.sum() - 1.0).abs() <= 1e-12);
        let n = 2 * half + 1;
        for r in 0..n {
            for c in 0..n {
                prop_assert!(k.at(r, c) >= 0.0);
            }
        }
    }

    #[test]
    fn sampled_stages_stay_in_range(seed in any::<u64>()) {
        let cfg = DegradationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let s = sample_stage(&mut rng, &cfg).unwrap();
            prop_assert!(cfg.kernel_sizes.contains(&s.kernel_size));
            prop_assert!(s.scale > 0.15 && s.scale < 1.5);
            prop_assert!((20..=40).contains(&s.jpeg_quality));
            prop_assert!(cfg.sigma.contains(s.shape.sigma_x) && cfg.sigma.contains(s.shape.sigma_y));
        }
    }
}
