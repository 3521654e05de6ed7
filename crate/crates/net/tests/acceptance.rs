//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails.
//!
//! Run alone with `cargo test -p cad-net --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use cad_autodiff::{decode_checkpoint, grad_check, grad_check_params, GradCheckOptions, Graph, Tensor};
use cad_core::eval::{ihd, mae, IHD_EPSILON};
use cad_core::io::*;
use cad_core::oracle::*;
use cad_core::sim::*;
use cad_core::synth::{synth_sample, write_synth_dataset, SynthConfig, SynthSample};
use cad_core::{Point3, PointFrame, PolarGridSpec, Pose};
use cad_net::loss::*;
use cad_net::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ad(e: NetError) -> cad_autodiff::AutodiffError {
    match e {
        NetError::Autodiff(a) => a,
        other => panic!("{other}"),
    }
}

fn logits(n_r: usize, n_phi: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n_r, n_phi], |_| rng.gen_range(-2.0..2.0))
}

fn random_frames(rng: &mut ChaCha8Rng, f: usize, n: usize, r_max: f64) -> Vec<PointFrame> {
    (0..=f)
        .map(|k| {
            let pts = (0..n)
                .map(|_| {
                    let r = rng.gen_range(0.2..r_max);
                    let a = rng.gen_range(0.0..std::f64::consts::TAU);
                    Point3::new(r * a.cos(), r * a.sin(), rng.gen_range(-0.2..1.5), rng.gen_range(0.0..1.0))
                })
                .collect();
            PointFrame::new(pts, Pose::identity(), k)
        })
        .collect()
}

fn randomize_params(model: &mut CadNet, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params_mut().values_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
}

fn samples(seed: u64, n: u64, cfg: &SynthConfig) -> Vec<SynthSample> {
    (0..n).map(|i| synth_sample(seed, i, cfg).unwrap()).collect()
}

fn train_set(model: &CadNet, s: &[SynthSample]) -> Vec<TrainSample> {
    s.iter().map(|s| TrainSample { input: model.prepare(&s.aligned()), label: Some(s.label.profile.clone()) }).collect()
}

fn gradient_integrity() -> Outcome {
    let cfg = LossConfig { b: 4, sigma_g: 3.0, ..LossConfig::reference() };
    let labels = [2usize, 11, 15, 6];
    let y2 = [0usize, 3, 8, 14];
    type Build = Box<dyn Fn(&mut Graph, cad_autodiff::Var) -> Result<cad_autodiff::Var, NetError>>;
    let cases: Vec<(&str, Build)> = vec![
        ("dis_mse", Box::new(move |g, p| dis_mse_node(g, p, &labels, 3.0))),
        ("ce", Box::new(move |g, p| ce_node(g, p, &labels))),
        ("var", Box::new(var_node)),
        ("entropy", Box::new(|g, p| entropy_node(g, p, 4))),
        ("cad", {
            let c = cfg.clone();
            Box::new(move |g, p| cad_loss_node(g, p, &labels, 240.0, &c).map(|x| x.0))
        }),
        ("unsup", {
            let c = cfg.clone();
            Box::new(move |g, p| unsup_loss_node(g, p, 95.0, &c).map(|x| x.0))
        }),
    ];
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (name, build) in &cases {
        let err = grad_check(
            |g, v| {
                let psi = g.softmax(v[0], 0)?;
                build(g, psi).map_err(ad)
            },
            &[logits(16, 4, 8)],
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
        detail.push(format!("{name} {err:.1e}"));
    }
    let total = grad_check(
        |g, v| {
            let a = g.softmax(v[0], 0)?;
            let b = g.softmax(v[1], 0)?;
            let u = g.softmax(v[2], 0)?;
            total_loss_node(g, &[(a, &labels), (b, &y2)], &[u], 130.0, &cfg).map_err(ad)
        },
        &[logits(16, 4, 9), logits(16, 4, 10), logits(16, 4, 11)],
        1e-5,
    )
    .unwrap();
    worst = worst.max(total);
    detail.push(format!("total {total:.1e}"));

    let net_cfg = NetConfig {
        grid: PolarGridSpec::new(4.8, -0.3, 2.0, 16, 16).unwrap(),
        f: 2,
        encoder: PillarEncoderCfg { features: FeatureMode::Augmented, widths: vec![8, 8] },
        sam: SamCfg { fusion: Fusion::Sam, embed_dim: 4, fused_channels: 8 },
        backbone: BackboneCfg { channels: [8, 8, 8] },
        seed: 3,
    };
    let mut model = CadNet::new(net_cfg).unwrap();
    randomize_params(&mut model, 14);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let input = model.prepare(&random_frames(&mut rng, 2, 300, 4.7));
    let chain_labels: Vec<usize> = (0..16).map(|j| (j * 5) % 16).collect();
    let base = model.clone();
    // scatter_max and ReLU kinks sit within 1e-5 of some probed entries
    let chain = grad_check_params(
        |g, p| {
            let mut m = base.clone();
            *m.params_mut() = p.clone();
            let out = m.forward(g, &input).map_err(ad)?;
            cad_loss_node(g, out.psi, &chain_labels, 250.0, &cfg).map(|x| x.0).map_err(ad)
        },
        model.params(),
        GradCheckOptions { eps: 1e-6, max_entries: 12 },
    )
    .unwrap();
    worst = worst.max(chain.max_rel_error);
    detail.push(format!("full chain {:.1e} over {} entries", chain.max_rel_error, chain.entries));
    ensure(worst <= 1e-4, detail.join(", "))
}

fn schedule_exactness() -> Outcome {
    let cfg = LossConfig::reference();
    let (a, b, c) = (cfg.w_ce(250.0), cfg.w_var(100.0), cfg.w_ce(0.0));
    // 1 / (1 + e^10)
    let oracle = 1.0 / (1.0 + 10f64.exp());
    ensure(
        a == 0.5 && b == 0.5 && (c - 4.54e-5).abs() <= 1e-7 && (c - oracle).abs() < 1e-15,
        format!("w_ce(250) = {a}, w_var(100) = {b}, w_ce(0) = {c:.6e}"),
    )
}

fn grid_fidelity() -> Outcome {
    let g = PolarGridSpec::full();
    let w = g.r_width();
    let deg = g.phi_width().to_degrees();
    // the width is exactly 360/384 degrees; radian round trip leaves 1 ulp
    let exact = 360.0 / g.n_phi() as f64;
    ensure(
        w == 0.1171875
            && exact == 0.9375
            && (deg - exact).abs() < 1e-12
            && format!("{w:.3}") == "0.117"
            && (exact * 1000.0).round() == 938.0,
        format!("radial {w} m, angular {deg}°"),
    )
}

fn oracle_cross_validation() -> Outcome {
    let spec = PolarGridSpec::new(9.6, -0.3, 2.0, 64, 96).unwrap();
    let rules = TraversabilityRules::default();
    let lidar = LidarModel::dense(1.8);
    let profile = DifficultyProfile::static_check();
    let offsets = ring_offsets(&[2.0, 5.0], &[8, 12]);
    let t0 = Instant::now();
    let (mut agree, mut covered) = (0usize, 0usize);
    for seed in 0..50 {
        let scene = sample_random_scene(seed, &profile).unwrap();
        let ego = Pose::from_xyz_yaw(0.0, 0.0, ground_height_at(&scene, 0.0, 0.0), 0.0);
        let gt = label_from_scene_detailed(&scene, &ego, &spec, &rules, 0.0).unwrap();
        let frames = aggregate_viewpoints(&scene, &ego, &lidar, &offsets, 0.0, seed).unwrap();
        let cloud = PillarCloud::build(&frames, &spec);
        let pred = label_from_pillars(&cloud, &rules).unwrap();
        for (j, cov) in covered_directions(&cloud, &gt.profile).into_iter().enumerate() {
            if cov {
                covered += 1;
                agree += (gt.profile.depth_index[j].abs_diff(pred.depth_index[j]) <= 1) as usize;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let rate = agree as f64 / covered.max(1) as f64;
    ensure(
        covered > 0 && rate >= 0.95 && secs < 300.0,
        format!("{agree}/{covered} covered directions within 1 bin ({:.2}%), {secs:.0} s", 100.0 * rate),
    )
}

fn rotation_equivariance() -> Outcome {
    let spec = PolarGridSpec::desk();
    let model = CadNet::new(NetConfig::small(spec, 2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n_r, n_phi) = (spec.n_r(), spec.n_phi());
    let mut worst = 0.0f64;
    let mut shifted_ok = 0;
    for i in 0..20 {
        let frames = random_frames(&mut rng, 2, 600, 9.5);
        let k = 8 * (1 + i % (n_phi / 8 - 1));
        let da = k as f64 * spec.phi_width();
        let rotated: Vec<PointFrame> = frames
            .iter()
            .map(|fr| {
                let pts = fr
                    .points
                    .iter()
                    .map(|p| {
                        let (r, a) = (p.radius(), p.azimuth() + da);
                        Point3::new(r * a.cos(), r * a.sin(), p.z, p.intensity)
                    })
                    .collect();
                PointFrame::new(pts, fr.pose, fr.frame_index)
            })
            .collect();
        let (p0, psi0) = model.predict(&model.prepare(&frames)).unwrap();
        let (p1, psi1) = model.predict(&model.prepare(&rotated)).unwrap();
        shifted_ok += (p1.depth_index == p0.rotated(k).depth_index) as usize;
        for d in 0..n_r {
            for j in 0..n_phi {
                worst = worst.max((psi1.data()[d * n_phi + (j + k) % n_phi] - psi0.data()[d * n_phi + j]).abs());
            }
        }
    }
    ensure(shifted_ok == 20 && worst <= 1e-5, format!("{shifted_ok}/20 argmax shifts exact, max Ψ difference {worst:.1e}"))
}

fn loss_closed_forms() -> Outcome {
    let (n_r, n_phi, b) = (32usize, 48usize, 4usize);
    let psi = Tensor::full(&[n_r, n_phi], 1.0 / n_r as f64);
    let labels: Vec<usize> = (0..n_phi).map(|j| (j * 7) % n_r).collect();
    let ce = ce_loss(&psi, &labels).unwrap();
    let h = entropy_reg(&psi, b).unwrap();
    let v = var_loss(&psi).unwrap();
    let n = n_r as f64;
    let errs = [(ce - n.ln()).abs(), (h - (n / b as f64).ln()).abs(), (v - (n * n - 1.0) / 12.0).abs()];
    ensure(
        errs.iter().all(|&e| e <= 1e-9),
        format!("CE {ce:.12}, entropy {h:.12}, variance {v:.12}; max error {:.1e}", errs.iter().cloned().fold(0.0, f64::max)),
    )
}

fn overfit_sanity() -> Outcome {
    let cfg = SynthConfig::desk(DifficultyProfile::standard());
    let data = samples(31, 10, &cfg);
    let mut model = CadNet::new(NetConfig::small(cfg.grid, 2)).unwrap();
    let train = train_set(&model, &data);
    let epochs = 120;
    let tc = TrainConfig { epochs, batch_labeled: 4, batch_unlabeled: 0, ..Default::default() };
    let t0 = Instant::now();
    fit(&mut model, &train, &[], &[], &tc, &LossConfig::scaled(epochs, cfg.grid.n_r()), |_, _| Ok(())).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let (m, _) = evaluate(&model, &train).unwrap();
    let bins = m / cfg.grid.r_width();
    ensure(bins < 2.0 && secs < 600.0, format!("training MAE {bins:.3} bins after {epochs} epochs, {secs:.0} s"))
}

fn supervised_desk_scale() -> Outcome {
    let cfg = SynthConfig::desk(DifficultyProfile::standard());
    let data = samples(7, 400, &cfg);
    let w = cfg.grid.r_width();
    let mut model = CadNet::new(NetConfig::small(cfg.grid, 2)).unwrap();
    let all = train_set(&model, &data);
    let (train, val) = all.split_at(300);
    let mut baseline = 0.0;
    for s in &data[300..] {
        let p = label_from_points(&s.aligned(), &cfg.grid, &cfg.rules).unwrap();
        baseline += mae(&p, &s.label.profile, &cfg.grid).unwrap();
    }
    baseline /= 100.0;
    let (untrained, _) = evaluate(&model, val).unwrap();
    let epochs = 30;
    let tc = TrainConfig { epochs, batch_labeled: 4, batch_unlabeled: 0, ..Default::default() };
    let t0 = Instant::now();
    fit(&mut model, train, &[], &[], &tc, &LossConfig::scaled(epochs, cfg.grid.n_r()), |_, _| Ok(())).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let (trained, _) = evaluate(&model, val).unwrap();
    ensure(
        trained <= 0.5 * untrained && trained <= 2.0 * baseline && secs < 3600.0,
        format!(
            "validation MAE {:.3} bins vs untrained {:.3} and point-oracle baseline {:.3}, {secs:.0} s",
            trained / w,
            untrained / w,
            baseline / w
        ),
    )
}

fn semi_supervised_trend() -> Outcome {
    let cfg = SynthConfig::desk(DifficultyProfile::standard());
    let data = samples(11, 400, &cfg);
    let w = cfg.grid.r_width();
    let epochs = 40;
    let loss = LossConfig { lambda: 0.05, ..LossConfig::scaled(epochs, cfg.grid.n_r()) };
    let mut results = Vec::new();
    for semi in [false, true] {
        let mut model = CadNet::new(NetConfig::small(cfg.grid, 2)).unwrap();
        let all = train_set(&model, &data);
        let labeled = &all[..100];
        let unlabeled: Vec<_> = all[100..300].iter().map(|s| s.input.clone()).collect();
        let val = &all[300..];
        let tc = TrainConfig { epochs, batch_labeled: 4, batch_unlabeled: if semi { 4 } else { 0 }, ..Default::default() };
        fit(&mut model, labeled, &unlabeled, &[], &tc, &loss, |_, _| Ok(())).unwrap();
        results.push(evaluate(&model, val).unwrap());
    }
    let ((m0, c0), (m1, c1)) = (results[0], results[1]);
    ensure(
        c1 > c0 && m1 <= 1.05 * m0,
        format!(
            "confidence {:.2}% -> {:.2}%, validation MAE {:.3} -> {:.3} bins ({:+.1}%)",
            100.0 * c0,
            100.0 * c1,
            m0 / w,
            m1 / w,
            100.0 * (m1 / m0 - 1.0)
        ),
    )
}

/// Attention weights of a single historical outlier frame and of the other
/// historical frames at the outlier's pooled cell, over `frames` variants.
fn outlier_weights(model: &CadNet, base: &PointFrame, spec: &PolarGridSpec, trial: usize) -> (f64, f64) {
    let f = model.config().f;
    let kout = 1 + trial % f;
    // low-discrepancy placement between 2 m and 7 m
    let r = 2.0 + 5.0 * ((trial as f64 * 0.618_033_988_75).fract());
    let a = trial as f64 * 2.399_963_229_73;
    let (cx, cy) = (r * a.cos(), r * a.sin());
    let mut frames: Vec<PointFrame> = (0..=f)
        .map(|k| {
            let mut fr = base.clone();
            fr.frame_index = k;
            fr.tags = None;
            fr
        })
        .collect();
    // a pedestrian-sized column present in one frame only
    for i in 0..40 {
        let z = 0.05 + 1.55 * (i as f64 / 39.0);
        let dx = 0.15 * ((i * 7 % 5) as f64 / 4.0 - 0.5);
        let dy = 0.15 * ((i * 3 % 5) as f64 / 4.0 - 0.5);
        frames[kout].points.push(Point3::new(cx + dx, cy + dy, z, 0.5));
    }
    let idx = spec.bin_point(&Point3::new(cx, cy, 0.5, 0.0)).unwrap();
    let mut g = Graph::new();
    let fp = model.encode(&mut g, &model.prepare(&frames)).unwrap();
    let (_, ws) = model.fuse(&mut g, &fp).unwrap();
    let cell = (idx.r_bin / 2) * (spec.n_phi() / 2) + idx.phi_bin / 2;
    let w_out = g.value(ws[kout - 1]).data()[cell];
    let others: Vec<f64> = (1..=f).filter(|&k| k != kout).map(|k| g.value(ws[k - 1]).data()[cell]).collect();
    (w_out, others.iter().sum::<f64>() / others.len() as f64)
}

fn sam_dynamic_immunity() -> Outcome {
    let cfg = SynthConfig::desk(DifficultyProfile::dynamic());
    let data = samples(21, 320, &cfg);
    let (train_part, val_part) = data.split_at(240);
    let epochs = 20;
    let mut ratios = Vec::new();
    let mut weights = (0.0, 0.0, 0usize, 0usize);
    for fusion in [Fusion::Sam, Fusion::Merge] {
        let mut net = NetConfig::small(cfg.grid, 2);
        net.sam.fusion = fusion;
        let mut model = CadNet::new(net).unwrap();
        let train = train_set(&model, train_part);
        let tc = TrainConfig { epochs, batch_labeled: 4, batch_unlabeled: 0, ..Default::default() };
        fit(&mut model, &train, &[], &[], &tc, &LossConfig::scaled(epochs, cfg.grid.n_r()), |_, _| Ok(())).unwrap();
        let (mut count, mut eligible) = (0, 0);
        for s in val_part {
            let frames = s.aligned();
            let (p, _) = model.predict_frames(&frames, &cfg.grid).unwrap();
            let r = ihd(&p, &s.label.profile, &frames, &cfg.grid, IHD_EPSILON).unwrap();
            count += r.count;
            eligible += r.eligible;
        }
        ratios.push((count, eligible));
        if fusion == Fusion::Sam {
            for (trial, s) in val_part.iter().enumerate() {
                for rep in 0..2 {
                    let (w_out, w_rest) = outlier_weights(&model, &s.aligned()[0], &cfg.grid, 2 * trial + rep);
                    weights.0 += w_out;
                    weights.1 += w_rest;
                    weights.2 += (w_out < w_rest) as usize;
                    weights.3 += 1;
                }
            }
        }
    }
    let ratio = |(c, e): (usize, usize)| c as f64 / e.max(1) as f64;
    let (sam, merge) = (ratio(ratios[0]), ratio(ratios[1]));
    let (w_out, w_rest) = (weights.0 / weights.3 as f64, weights.1 / weights.3 as f64);
    ensure(
        ratios[0].1 > 0 && sam < merge && w_out < w_rest,
        format!(
            "IHD {}/{} = {:.2}% (SAM) vs {}/{} = {:.2}% (merge); outlier weight {w_out:.3} vs {w_rest:.3} ({}/{} locations lower)",
            ratios[0].0,
            ratios[0].1,
            100.0 * sam,
            ratios[1].0,
            ratios[1].1,
            100.0 * merge,
            weights.2,
            weights.3
        ),
    )
}

fn mutate(bytes: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut out = bytes.to_vec();
    match rng.gen_range(0..4) {
        0 if !out.is_empty() => {
            let n = rng.gen_range(0..out.len());
            out.truncate(n);
        }
        1 if !out.is_empty() => {
            for _ in 0..rng.gen_range(1..8) {
                let i = rng.gen_range(0..out.len());
                out[i] = rng.gen();
            }
        }
        2 => {
            let extra: Vec<u8> = (0..rng.gen_range(1..16)).map(|_| rng.gen()).collect();
            out.extend(extra);
        }
        _ => out = (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect(),
    }
    out
}

fn format_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = SynthConfig::desk(DifficultyProfile::dynamic());
    let ds = write_synth_dataset(root, 3, 4, &cfg, true).unwrap();
    let grid = cfg.grid;
    let mut checked = 0;
    let mut corpus: Vec<(&str, Vec<u8>)> = Vec::new();
    for rec in &ds.manifest.records {
        for frame in &rec.frames {
            let bytes = std::fs::read(root.join(frame)).unwrap();
            let pts = decode_kitti_bin(&bytes, Path::new(frame)).unwrap();
            assert_eq!(encode_kitti_bin(&pts), bytes, "{frame}");
            corpus.push(("kitti", bytes));
            checked += 1;
        }
        let text = format_poses(&rec.poses);
        let back = parse_pose_text(&text, Path::new("poses")).unwrap();
        assert_eq!(format_poses(&back), text);
        for (a, b) in rec.poses.iter().zip(&back) {
            assert_eq!(a.to_row_major_3x4(), b.to_row_major_3x4());
        }
        corpus.push(("poses", text.into_bytes()));
        let label_path = root.join(rec.label.as_ref().unwrap());
        let bytes = std::fs::read(&label_path).unwrap();
        let label = read_label(&label_path, &grid).unwrap();
        assert_eq!(encode_label(&label, &grid).unwrap().into_bytes(), bytes);
        corpus.push(("label", bytes));
        checked += 2;
    }
    let manifest_bytes = std::fs::read(root.join("manifest.jsonl")).unwrap();
    let manifest = decode_manifest(std::str::from_utf8(&manifest_bytes).unwrap(), Path::new("manifest.jsonl")).unwrap();
    assert_eq!(encode_manifest(&manifest).unwrap().into_bytes(), manifest_bytes);
    corpus.push(("manifest", manifest_bytes));

    let model = CadNet::new(NetConfig::small(grid, 2)).unwrap();
    let ckpt = root.join("m.ckpt");
    model.save(&ckpt).unwrap();
    let first = std::fs::read(&ckpt).unwrap();
    let loaded = CadNet::load(&ckpt).unwrap();
    let again = root.join("again.ckpt");
    loaded.save(&again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), first);
    for (a, b) in model.params().values().iter().zip(loaded.params().values()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (*x as f32).to_bits() == (*y as f32).to_bits()));
    }
    corpus.push(("checkpoint", first));
    checked += 2;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut rejected = 0;
    let mut fuzzed = 0;
    for (kind, bytes) in &corpus {
        for _ in 0..40 {
            let m = mutate(bytes, &mut rng);
            let text = String::from_utf8_lossy(&m);
            let p = Path::new("fuzz");
            let err = match *kind {
                "kitti" => decode_kitti_bin(&m, p).is_err(),
                "poses" => parse_pose_text(&text, p).is_err(),
                "label" => decode_label(&text, &grid, p).is_err(),
                "manifest" => decode_manifest(&text, p).is_err(),
                _ => decode_checkpoint(&m).is_err(),
            };
            rejected += err as usize;
            fuzzed += 1;
        }
    }
    ensure(
        rejected > 0,
        format!("{checked} files round-tripped bit-exactly; {fuzzed} fuzzed inputs, {rejected} typed errors, no panics"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient integrity", gradient_integrity),
        ("schedule exactness", schedule_exactness),
        ("grid fidelity", grid_fidelity),
        ("oracle cross-validation", oracle_cross_validation),
        ("rotation equivariance", rotation_equivariance),
        ("loss closed forms", loss_closed_forms),
        ("overfit sanity", overfit_sanity),
        ("supervised learning at desk scale", supervised_desk_scale),
        ("semi-supervised trend", semi_supervised_trend),
        ("SAM dynamic immunity", sam_dynamic_immunity),
        ("format round trips", format_round_trips),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} {name}: PASS ({d}) [{secs:.1} s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({d}) [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("criteria failed: {failed}");
        std::process::exit(1);
    }
}
