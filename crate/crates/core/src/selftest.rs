//! Built-in verification batteries, one per acceptance check.
//!
//! Each battery builds its own seeded fixtures, compares the library against
//! an independent computation and reports a one-line verdict. A battery can
//! be asked to corrupt its fixture, which must make it fail; this is how the
//! harness itself is tested.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degrade::rng::{substream, Lane};
use crate::degrade::{
    degrade_sequence, replay_manifest, sample_stage, DegradationConfig, KernelFamily,
};
use crate::fusion::{adapter_forward, fuse, grad_check_fusion, vsfm_forward, FusionParams, FusionShape, GradProbe};
use crate::metrics::{evaluate, hota, hungarian, idf1, mota, MATCH_THRESHOLD};
use crate::mot_io::{
    load_sequence, parse_mot_file, read_mot_path, records_to_trackset, write_mot_file, BoundingBox,
    DetectionRecord, TrackSet,
};
use crate::nncore::Tensor;
use crate::oracle;
use crate::synth::{random_scenario, MovingBoxes, ScenarioLimits};
use crate::tracker::{run_sequence, GridEmbedder, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Battery {
    MetricOracles,
    HungarianBruteForce,
    HotaClosedCase,
    FusionResiduals,
    FusionOracle,
    GradientChecks,
    DegradeSampling,
    DegradeDeterminism,
    EndToEnd,
    FormatRoundTrip,
}

impl Battery {
    pub const ALL: [Battery; 10] = [
        Battery::MetricOracles,
        Battery::HungarianBruteForce,
        Battery::HotaClosedCase,
        Battery::FusionResiduals,
        Battery::FusionOracle,
        Battery::GradientChecks,
        Battery::DegradeSampling,
        Battery::DegradeDeterminism,
        Battery::EndToEnd,
        Battery::FormatRoundTrip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Battery::MetricOracles => "metric-oracles",
            Battery::HungarianBruteForce => "hungarian-brute-force",
            Battery::HotaClosedCase => "hota-closed-case",
            Battery::FusionResiduals => "fusion-residuals",
            Battery::FusionOracle => "fusion-oracle",
            Battery::GradientChecks => "gradient-checks",
            Battery::DegradeSampling => "degrade-sampling",
            Battery::DegradeDeterminism => "degrade-determinism",
            Battery::EndToEnd => "end-to-end",
            Battery::FormatRoundTrip => "format-round-trip",
        }
    }

    pub fn from_name(name: &str) -> Option<Battery> {
        Battery::ALL.into_iter().find(|b| b.name() == name)
    }
}

impl fmt::Display for Battery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub battery: Battery,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "pass" } else { "FAIL" };
        write!(f, "{verdict} {:<22} {} ({:.1}s)", self.battery.name(), self.detail, self.seconds)
    }
}

type Verdict = Result<String, String>;

pub fn run_battery(battery: Battery, corrupt: bool) -> Outcome {
    let start = Instant::now();
    let verdict = match battery {
        Battery::MetricOracles => metric_oracles(corrupt),
        Battery::HungarianBruteForce => hungarian_brute_force(corrupt),
        Battery::HotaClosedCase => hota_closed_case(corrupt),
        Battery::FusionResiduals => fusion_residuals(corrupt),
        Battery::FusionOracle => fusion_oracle(corrupt),
        Battery::GradientChecks => gradient_checks(corrupt),
        Battery::DegradeSampling => degrade_sampling(corrupt),
        Battery::DegradeDeterminism => degrade_determinism(corrupt),
        Battery::EndToEnd => end_to_end(corrupt),
        Battery::FormatRoundTrip => format_round_trip(corrupt),
    };
    let (passed, detail) = match verdict {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Outcome {
        battery,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every battery in order; `corrupt` names one whose fixture is damaged.
pub fn run_all(corrupt: Option<Battery>, mut on_done: impl FnMut(&Outcome)) -> Vec<Outcome> {
    Battery::ALL
        .into_iter()
        .map(|b| {
            let o = run_battery(b, corrupt == Some(b));
            on_done(&o);
            o
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn shift_first_box(ts: &mut TrackSet, dx: f64) {
    if let Some((b, _)) = ts.tracks.values_mut().next().and_then(|t| t.values_mut().next()) {
        b.left += dx;
    }
}

pub const METRIC_SCENARIOS: usize = 200;
pub const METRIC_TOLERANCE: f64 = 1e-9;

fn metric_oracles(corrupt: bool) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4d45);
    let mut worst = 0.0f64;
    for k in 0..METRIC_SCENARIOS {
        let (gt, pred) = random_scenario(&mut rng, ScenarioLimits::default());
        let mut oracle_gt = gt.clone();
        if corrupt && k == 0 {
            shift_first_box(&mut oracle_gt, 3.0);
        }
        let h = hota(&gt, &pred).map_err(|e| format!("scenario {k}: {e}"))?;
        let m = mota(&gt, &pred, MATCH_THRESHOLD).map_err(|e| format!("scenario {k}: {e}"))?;
        let i = idf1(&gt, &pred, MATCH_THRESHOLD).map_err(|e| format!("scenario {k}: {e}"))?;
        let (oh, od, oa) = oracle::metrics::hota(&oracle_gt, &pred);
        let om = oracle::metrics::mota(&oracle_gt, &pred, MATCH_THRESHOLD);
        let oi = oracle::metrics::idf1(&oracle_gt, &pred, MATCH_THRESHOLD);
        for (name, a, b) in [
            ("HOTA", h.hota, oh),
            ("DetA", h.deta, od),
            ("AssA", h.assa, oa),
            ("MOTA", m.mota, om),
            ("IDF1", i.idf1, oi),
        ] {
            let d = (a - b).abs();
            ensure(d <= METRIC_TOLERANCE, || format!("scenario {k}: {name} {a} vs oracle {b}"))?;
            worst = worst.max(d);
        }
    }
    Ok(format!("{METRIC_SCENARIOS} scenarios, max |diff| {worst:.1e}"))
}

pub const HUNGARIAN_MATRICES: usize = 1000;

fn random_cost_matrix(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rng.random_range(0..=6);
    let m = rng.random_range(0..=6);
    // Continuous costs, small integers (many ties) and forbidden pairs.
    let style = rng.random_range(0..3);
    (0..n)
        .map(|_| {
            (0..m)
                .map(|_| match style {
                    0 => rng.random_range(-5.0..5.0),
                    1 => rng.random_range(0..4) as f64,
                    _ if rng.random_bool(0.25) => f64::INFINITY,
                    _ => rng.random_range(0.0..1.0),
                })
                .collect()
        })
        .collect()
}

fn hungarian_brute_force(corrupt: bool) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4855);
    for k in 0..HUNGARIAN_MATRICES {
        let cost = random_cost_matrix(&mut rng);
        let mut reference = cost.clone();
        if corrupt && k == 0 {
            reference = vec![vec![1.0]];
        }
        let got = hungarian(&cost).cost;
        let want = oracle::metrics::min_cost(&reference);
        ensure(got == want, || format!("matrix {k} {cost:?}: cost {got} vs brute force {want}"))?;
    }
    Ok(format!("{HUNGARIAN_MATRICES} matrices, costs identical"))
}

pub const HOTA_CLOSED_VALUE: f64 = 100.0 * 10.0 / 19.0;

fn hota_closed_case(corrupt: bool) -> Verdict {
    let mut gt = TrackSet::default();
    let mut pred = TrackSet::default();
    let g = BoundingBox::new(0.0, 0.0, 10.0, 10.0).map_err(|e| e.to_string())?;
    // Twice the area and containing the ground truth: IoU exactly one half.
    let p = BoundingBox::new(0.0, 0.0, if corrupt { 12.0 } else { 20.0 }, 10.0).map_err(|e| e.to_string())?;
    gt.tracks.entry(1).or_default().insert(1, (g, 1.0));
    pred.tracks.entry(1).or_default().insert(1, (p, 1.0));
    let report = evaluate(&gt, &pred).map_err(|e| e.to_string())?;
    ensure((report.hota - HOTA_CLOSED_VALUE).abs() <= 0.01 && (report.hota - 52.63).abs() <= 0.01, || {
        format!("HOTA {:.4}, expected {HOTA_CLOSED_VALUE:.4}", report.hota)
    })?;
    Ok(format!("HOTA {:.4}", report.hota))
}

fn random_shape(rng: &mut ChaCha8Rng) -> FusionShape {
    let c = [2, 4, 6, 8][rng.random_range(0..4)];
    FusionShape::new(
        c,
        rng.random_range(1..=4),
        rng.random_range(1..=4),
        rng.random_range(1..=8),
        rng.random_range(1..=6),
    )
}

struct FusionInstance {
    params: FusionParams,
    x_s: Tensor,
    x_q: Tensor,
}

fn fusion_instance(rng: &mut ChaCha8Rng, shape: FusionShape) -> Result<FusionInstance, String> {
    let params = FusionParams::init(shape, rng).map_err(|e| e.to_string())?;
    let x_s = Tensor::uniform(&shape.map_shape(), 1.0, rng);
    let x_q = Tensor::uniform(&shape.query_shape(), 1.0, rng);
    Ok(FusionInstance { params, x_s, x_q })
}

fn bitwise_equal(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, |m, d| if d.is_nan() { f64::INFINITY } else { m.max(d) })
}

pub const RESIDUAL_INSTANCES: usize = 20;

fn fusion_residuals(corrupt: bool) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5245);
    for k in 0..RESIDUAL_INSTANCES {
        let shape = random_shape(&mut rng);
        let mut inst = fusion_instance(&mut rng, shape)?;
        if !(corrupt && k == 0) {
            inst.params.adapter.zero_branch_outputs();
        }
        inst.params.vsfm.zero_extract_output();
        let x_grid = Tensor::uniform(&shape.map_shape(), 1.0, &mut rng);
        let a = adapter_forward(&x_grid, &inst.x_s, &inst.params.adapter).map_err(|e| e.to_string())?;
        ensure(bitwise_equal(&a.f_as, &inst.x_s), || format!("instance {k} {shape:?}: adapter output differs from X_s"))?;
        let x_as = Tensor::uniform(&shape.map_shape(), 1.0, &mut rng);
        let v = vsfm_forward(&x_as, &inst.x_q, &inst.params.vsfm).map_err(|e| e.to_string())?;
        ensure(bitwise_equal(&v.f_fq, &inst.x_q), || format!("instance {k} {shape:?}: fused output differs from X_q"))?;
    }
    Ok(format!("{RESIDUAL_INSTANCES} instances, bitwise identities hold"))
}

pub const FUSION_ORACLE_INSTANCES: usize = 50;
pub const FUSION_ORACLE_TOLERANCE: f64 = 1e-9;

fn fusion_oracle(corrupt: bool) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x464f);
    let mut worst = 0.0f64;
    for k in 0..FUSION_ORACLE_INSTANCES {
        let shape = random_shape(&mut rng);
        let inst = fusion_instance(&mut rng, shape)?;
        let trace = fuse(&inst.x_s, &inst.x_q, &inst.params, None).map_err(|e| e.to_string())?;
        let mut oracle_params = inst.params.clone();
        if corrupt && k == 0 {
            oracle_params.vsfm.query_projection.scale(1.5);
        }
        let p = &oracle_params;
        let (c, h, w) = (shape.channels, shape.height, shape.width);
        let grid = oracle::fusion::query_grid(&inst.x_q, &p.vsfm.query_projection, c, h, w);
        let f_as = oracle::fusion::adapter(&grid, &inst.x_s, &p.adapter);
        let f_fq = oracle::fusion::fused(&inst.x_s, &inst.x_q, &p.adapter, &p.vsfm);
        for (name, a, b) in [
            ("query grid", &trace.query_grid, &grid),
            ("adapter", &trace.adapter.f_as, &f_as),
            ("fused", &trace.vsfm.f_fq, &f_fq),
        ] {
            let d = max_abs_diff(a, b);
            ensure(d < FUSION_ORACLE_TOLERANCE, || format!("instance {k} {shape:?}: {name} differs by {d:e}"))?;
            worst = worst.max(d);
        }
    }
    Ok(format!("{FUSION_ORACLE_INSTANCES} instances, max |diff| {worst:.1e}"))
}

pub const GRADIENT_INSTANCES: usize = 10;

/// `sum(F_fq)` against both fusion-module inputs. The composed path through
/// the adapter is only piecewise smooth (max pooling, ReLU) and is not
/// checked here.
fn gradient_checks(corrupt: bool) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4752);
    let mut ratios = Vec::new();
    for k in 0..GRADIENT_INSTANCES {
        // Small shapes: every input element costs several forward passes.
        let c = [2, 4, 8][rng.random_range(0..3)];
        let shape = FusionShape::new(c, rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=5), rng.random_range(1..=4));
        let params = FusionParams::init(shape, &mut rng).map_err(|e| e.to_string())?;
        let mut x_as = Tensor::uniform(&shape.map_shape(), 1.0, &mut rng);
        let x_q = Tensor::uniform(&shape.query_shape(), 1.0, &mut rng);
        if corrupt && k == 0 {
            x_as.data_mut()[0] = f64::NAN;
        }
        let report = grad_check_fusion(&params, &GradProbe::Vsfm { x_as, x_q }).map_err(|e| e.to_string())?;
        ensure(report.passed(), || format!("instance {k} {shape:?}: {}", report.failures().join("; ")))?;
        ratios.extend(report.inputs.iter().map(|g| g.ratio));
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(format!("{GRADIENT_INSTANCES} instances, ratios in [{lo:.3}, {hi:.3}]"))
}

pub const SAMPLED_STAGES: usize = 10_000;

fn degrade_sampling(corrupt: bool) -> Verdict {
    let expected = DegradationConfig::default();
    let mut config = expected.clone();
    if corrupt {
        config.family_probabilities = [0.25, 0.45, 0.12, 0.03, 0.12, 0.03];
    }
    let mut counts = [0usize; 6];
    let mut worst_sum = 0.0f64;
    for k in 0..SAMPLED_STAGES {
        let frame_key = (k / 2) as u64 + 1;
        let mut rng = substream(0x5341, frame_key, (k % 2) as u32, Lane::Sample).map_err(|e| e.to_string())?;
        let s = sample_stage(&mut rng, &config).map_err(|e| e.to_string())?;
        counts[s.family.index()] += 1;
        let sh = s.shape;
        let beta_ok = match s.family {
            KernelFamily::Isotropic | KernelFamily::Anisotropic => sh.beta == 1.0,
            KernelFamily::GeneralizedIsotropic | KernelFamily::GeneralizedAnisotropic => {
                expected.beta_generalized.contains(sh.beta)
            }
            KernelFamily::PlateauIsotropic | KernelFamily::PlateauAnisotropic => expected.beta_plateau.contains(sh.beta),
        };
        let in_range = (7..=21).contains(&s.kernel_size)
            && s.kernel_size % 2 == 1
            && expected.sigma.contains(sh.sigma_x)
            && expected.sigma.contains(sh.sigma_y)
            && (!s.family.is_isotropic() || (sh.sigma_x == sh.sigma_y && sh.theta == 0.0))
            && beta_ok
            && s.scale > 0.15
            && s.scale < 1.5
            && (20..=40).contains(&s.jpeg_quality)
            && s.noise.strength >= 0.0;
        ensure(in_range, || format!("stage {k} out of range: {s:?}"))?;
        let kernel = s.kernel().map_err(|e| format!("stage {k}: {e}"))?;
        let d = (kernel.sum() - 1.0).abs();
        ensure(d <= 1e-12, || format!("stage {k}: kernel sums to 1 {d:+e}"))?;
        worst_sum = worst_sum.max(d);
    }
    let n = SAMPLED_STAGES as f64;
    for (i, &p) in expected.family_probabilities.iter().enumerate() {
        let sigma = (n * p * (1.0 - p)).sqrt();
        let dev = (counts[i] as f64 - n * p).abs();
        ensure(dev <= 3.0 * sigma, || {
            format!("{:?}: {} draws, expected {:.0} +- {:.1}", KernelFamily::ALL[i], counts[i], n * p, 3.0 * sigma)
        })?;
    }
    Ok(format!("{SAMPLED_STAGES} stages, family counts {counts:?}, max kernel-sum error {worst_sum:.1e}"))
}

fn read_tree(root: &Path) -> std::io::Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

fn degrade_determinism(corrupt: bool) -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clean = tmp.path().join("clean");
    let spec = MovingBoxes { frames: 10, ..MovingBoxes::default() };
    spec.write(&clean).map_err(|e| e.to_string())?;
    let config = DegradationConfig { seed: 11, ..DegradationConfig::default() };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    degrade_sequence(&clean, &a, &config).map_err(|e| e.to_string())?;
    let second = DegradationConfig { seed: config.seed + u64::from(corrupt), ..config.clone() };
    degrade_sequence(&clean, &b, &second).map_err(|e| e.to_string())?;
    let (ta, tb) = (read_tree(&a).map_err(|e| e.to_string())?, read_tree(&b).map_err(|e| e.to_string())?);
    ensure(ta.keys().eq(tb.keys()), || "runs wrote different file sets".into())?;
    if let Some(name) = ta.iter().find(|(k, v)| tb[*k] != **v).map(|(k, _)| k) {
        return Err(format!("{name} differs between runs"));
    }
    let replay = replay_manifest(&clean, &a).map_err(|e| e.to_string())?;
    ensure(replay.is_exact(), || format!("replay mismatches on frames {:?}", replay.mismatches))?;
    Ok(format!("{} files identical, {} frames replayed", ta.len(), replay.frames_checked))
}

fn end_to_end(corrupt: bool) -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clean = tmp.path().join("clean");
    let gt = MovingBoxes::default().write(&clean).map_err(|e| e.to_string())?;
    let mut dets = read_mot_path(&clean.join("det").join("det.txt")).map_err(|e| e.to_string())?;
    if corrupt {
        dets.retain(|d| d.frame != 5);
    }
    let cfg = TrackerConfig::default();
    let track = |dir: &Path| -> Result<Vec<DetectionRecord>, String> {
        let seq = load_sequence(dir).map_err(|e| e.to_string())?;
        let out = run_sequence(&seq, &dets, &GridEmbedder::default(), &cfg).map_err(|e| e.to_string())?;
        Ok(out.records)
    };
    let records = track(&clean)?;
    let pred = records_to_trackset(&records).map_err(|e| e.to_string())?;
    let report = evaluate(&gt, &pred).map_err(|e| e.to_string())?;
    ensure(report.columns() == [100.0; 5], || format!("clean sequence scored {}", report.to_text().trim()))?;

    let degraded = tmp.path().join("degraded");
    let config = DegradationConfig { seed: 7, ..DegradationConfig::default() };
    degrade_sequence(&clean, &degraded, &config).map_err(|e| e.to_string())?;
    let text = write_mot_file(&track(&degraded)?);
    let parsed = parse_mot_file(&text).map_err(|e| e.to_string())?;
    records_to_trackset(&parsed).map_err(|e| e.to_string())?;
    Ok(format!("clean run all 100.0, degraded run wrote {} parseable records", parsed.len()))
}

pub const ROUND_TRIP_LISTS: usize = 1000;

fn random_record(rng: &mut ChaCha8Rng) -> DetectionRecord {
    // Mix short decimals with full-precision values.
    let mut real = |lo: f64, hi: f64| {
        let v = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            (v * 100.0).round() / 100.0
        } else {
            v
        }
    };
    let (left, top) = (real(-1e4, 1e4), real(-1e4, 1e4));
    let (width, height) = (real(0.01, 1e4).max(0.01), real(0.01, 1e4).max(0.01));
    let confidence = real(-1.0, 2.0);
    DetectionRecord {
        frame: rng.random_range(1..100_000),
        identity: if rng.random_bool(0.3) { None } else { Some(rng.random_range(1..1_000_000)) },
        bbox: BoundingBox { left, top, width, height },
        confidence,
    }
}

fn format_round_trip(corrupt: bool) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4d4f);
    let mut total = 0;
    for k in 0..ROUND_TRIP_LISTS {
        let len = rng.random_range(0..=20);
        let records: Vec<DetectionRecord> = (0..len).map(|_| random_record(&mut rng)).collect();
        let mut text = write_mot_file(&records);
        if corrupt && k == 0 {
            text = text.replacen(',', "1,", 1);
        }
        let back = parse_mot_file(&text).map_err(|e| format!("list {k}: {e}"))?;
        ensure(back == records, || format!("list {k}: parse(write(x)) != x"))?;
        ensure(write_mot_file(&back) == text, || format!("list {k}: write(parse(t)) != t"))?;
        total += len;
    }
    Ok(format!("{ROUND_TRIP_LISTS} lists, {total} records exact"))
}
