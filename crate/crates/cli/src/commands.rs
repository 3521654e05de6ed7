use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cad_core::eval::Evaluator;
use cad_core::io::{
    read_kitti_bin, read_label_any, split_dataset, write_label, Dataset, LabelFile, SampleRecord, Split,
    SplitFractions,
};
use cad_core::oracle::{
    covered_directions, ring_offsets, label_from_points, label_from_scene_detailed, PillarCloud, TraversabilityRules,
};
use cad_core::sim::{DifficultyProfile, LidarModel};
use cad_core::synth::{write_synth_dataset, SynthConfig};
use cad_net::{fit_dataset, CadNet, Fusion, LossConfig, NetConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::plot::{render_svg, PlotInput};
use crate::{
    Cli, CliError, Command, EvalArgs, FusionArg, LabelArgs, LidarPreset, PlotArgs, PredictArgs, SimGenArgs, SplitArg,
    SplitArgs, TrainArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()).into());
    }
    match cli.command {
        Command::SimGen(a) => sim_gen(&a),
        Command::Label(a) => label(&a),
        Command::Split(a) => split(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Predict(a) => predict(&a),
        Command::Plot(a) => plot(&a),
    }
}

fn config(msg: impl Into<String>) -> anyhow::Error {
    CliError::Config(msg.into()).into()
}

fn sim_gen(a: &SimGenArgs) -> Result<()> {
    let profile = DifficultyProfile::by_name(&a.profile).ok_or_else(|| {
        config(format!("unknown profile `{}`; expected one of {:?}", a.profile, DifficultyProfile::NAMES))
    })?;
    if a.scenes == 0 {
        return Err(config("--scenes must be positive"));
    }
    if !(a.period > 0.0 && a.period.is_finite()) {
        return Err(config("--period must be positive"));
    }
    let cfg = SynthConfig {
        lidar: match a.lidar {
            LidarPreset::Desk => LidarModel::desk(),
            LidarPreset::Vlp16 => LidarModel::vlp16(),
            LidarPreset::Dense => LidarModel::dense(1.8),
        },
        grid: a.grid.spec()?,
        f: a.frames,
        period: a.period,
        viewpoints: if a.multi_view { ring_offsets(&[2.0, 5.0], &[8, 12]) } else { Vec::new() },
        ..SynthConfig::desk(profile)
    };
    let ds = write_synth_dataset(&a.out, a.scenes, a.seed, &cfg, false)?;
    println!(
        "wrote {} samples with {} frames each to {}",
        ds.manifest.records.len(),
        a.frames + 1,
        a.out.display()
    );
    Ok(())
}

fn load_rules(path: Option<&Path>) -> Result<TraversabilityRules> {
    let Some(path) = path else { return Ok(TraversabilityRules::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rules: TraversabilityRules =
        serde_json::from_str(&text).with_context(|| format!("parsing rules {}", path.display()))?;
    rules.validate().map_err(|e| config(e.to_string()))?;
    Ok(rules)
}

fn label(a: &LabelArgs) -> Result<()> {
    let rules = load_rules(a.rules.as_deref())?;
    let mut ds = Dataset::open(&a.dataset)?;
    if !a.from_points {
        if let Some(r) = ds.manifest.records.iter().find(|r| r.scene.is_none()) {
            return Err(CliError::Missing(format!(
                "sample `{}` has no scene file; pass --from-points to label from the frames",
                r.id
            ))
            .into());
        }
    }
    let grid = ds.manifest.grid;
    let (mut seen, mut covered, mut agree, mut compared) = (0usize, 0usize, 0usize, 0usize);
    let mut records = ds.manifest.records.clone();
    for rec in &mut records {
        let frames = ds.load_aligned(rec)?;
        let cloud = PillarCloud::build(&frames, &grid);
        let scene_label = match ds.load_scene(rec)? {
            Some(scene) => Some(
                label_from_scene_detailed(&scene, &rec.poses[0], &grid, &rules, rec.time.unwrap_or(0.0))
                    .with_context(|| format!("labeling sample `{}`", rec.id))?,
            ),
            None => None,
        };
        let file = if a.from_points {
            let profile = label_from_points(&frames, &grid, &rules)
                .with_context(|| format!("labeling sample `{}`", rec.id))?;
            if let Some(sl) = &scene_label {
                let cov = covered_directions(&cloud, &sl.profile);
                for (j, _) in cov.iter().enumerate().filter(|(_, c)| **c) {
                    compared += 1;
                    agree += (profile.depth_index[j].abs_diff(sl.profile.depth_index[j]) <= 1) as usize;
                }
            }
            LabelFile { profile, categories: None }
        } else {
            let sl = scene_label.expect("checked above");
            LabelFile { categories: Some(sl.categories()), profile: sl.profile }
        };
        covered += covered_directions(&cloud, &file.profile).iter().filter(|c| **c).count();
        seen += (0..grid.n_phi())
            .filter(|&j| (0..=file.profile.depth_index[j]).any(|d| cloud.count(d, j) > 0))
            .count();
        let rel = Dataset::label_path(&rec.id);
        write_label(ds.root.join(&rel), &file, &grid)?;
        rec.label = Some(rel);
    }
    ds.manifest.records = records;
    ds.save_manifest()?;
    let n = ds.manifest.records.len();
    let total = n * grid.n_phi();
    println!(
        "labeled {n} samples from {}; {:.2}% of {total} directions hold points before their border, \
         {:.2}% have points in every bin through the border",
        if a.from_points { "points" } else { "scenes" },
        100.0 * seen as f64 / total.max(1) as f64,
        100.0 * covered as f64 / total.max(1) as f64
    );
    if compared > 0 {
        println!(
            "agreement with scene labels within 1 bin: {:.2}% of {compared} covered directions",
            100.0 * agree as f64 / compared as f64
        );
    }
    Ok(())
}

fn split(a: &SplitArgs) -> Result<()> {
    let mut ds = Dataset::open(&a.dataset)?;
    ds.manifest = split_dataset(&ds.manifest, SplitFractions::new(a.labeled, a.unlabeled, a.validation), a.seed)?;
    ds.save_manifest()?;
    let m = &ds.manifest;
    println!(
        "labeled-train {}  unlabeled-train {}  validation {}",
        m.count(Split::LabeledTrain),
        m.count(Split::UnlabeledTrain),
        m.count(Split::Validation)
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    #[default]
    Default,
    Small,
}

/// Contents of a `train --config` file; every field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub model: ModelPreset,
    pub fusion: Option<Fusion>,
    pub train: TrainConfig,
    /// Defaults to the reference schedules compressed to `train.epochs`.
    pub loss: Option<LossConfig>,
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut file = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<TrainFile>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainFile::default(),
    };
    if a.small {
        file.model = ModelPreset::Small;
    }
    if let Some(f) = a.fusion {
        file.fusion = Some(match f {
            FusionArg::Sam => Fusion::Sam,
            FusionArg::Merge => Fusion::Merge,
            FusionArg::Single => Fusion::Single,
        });
    }
    let tc = &mut file.train;
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.learning_rate = a.lr.unwrap_or(tc.learning_rate);
    tc.seed = a.seed.unwrap_or(tc.seed);
    tc.validate()?;

    let ds = Dataset::open(&a.dataset)?;
    let grid = ds.manifest.grid;
    let mut net = match file.model {
        ModelPreset::Default => NetConfig::new(grid, ds.manifest.f),
        ModelPreset::Small => NetConfig::small(grid, ds.manifest.f),
    };
    net.seed = file.train.seed;
    if let Some(f) = file.fusion {
        net.sam.fusion = f;
    }
    let mut loss = file.loss.clone().unwrap_or_else(|| LossConfig::scaled(file.train.epochs, grid.n_r()));
    loss.lambda = a.lambda.unwrap_or(loss.lambda);
    loss.validate(grid.n_r())?;

    let mut model = CadNet::new(net)?;
    let log = a.log.clone().unwrap_or_else(|| PathBuf::from(format!("{}.log.jsonl", a.out.display())));
    if log.exists() {
        fs::remove_file(&log).with_context(|| format!("replacing {}", log.display()))?;
    }
    println!("lambda = {}", loss.lambda);
    let logs = fit_dataset(&mut model, &ds, &file.train, &loss, &a.out, &log)?;
    if let Some(last) = logs.last() {
        let w = grid.r_width();
        println!(
            "trained {} epochs; final loss {:.5}{}; checkpoint {}",
            logs.len(),
            last.loss,
            match last.val_mae {
                Some(m) => format!("; validation MAE {m:.4} m ({:.3} bins)", m / w),
                None => String::new(),
            },
            a.out.display()
        );
    }
    Ok(())
}

fn records_in(ds: &Dataset, split: SplitArg) -> Vec<&SampleRecord> {
    let want = match split {
        SplitArg::All => None,
        SplitArg::LabeledTrain => Some(Split::LabeledTrain),
        SplitArg::UnlabeledTrain => Some(Split::UnlabeledTrain),
        SplitArg::Validation => Some(Split::Validation),
    };
    ds.manifest.records.iter().filter(|r| want.is_none_or(|s| r.split == s)).collect()
}

fn load_model_for(ckpt: &Path, ds: &Dataset) -> Result<CadNet> {
    let model = CadNet::load(ckpt)?;
    model.check_grid(&ds.manifest.grid)?;
    if model.config().f != ds.manifest.f {
        return Err(cad_net::NetError::SpecMismatch(format!(
            "checkpoint expects {} historical frames, dataset has {}",
            model.config().f,
            ds.manifest.f
        ))
        .into());
    }
    Ok(model)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let model = load_model_for(&a.ckpt, &ds)?;
    let grid = ds.manifest.grid;
    let mut ev = Evaluator::new(grid);
    for rec in records_in(&ds, a.split) {
        let Some(label) = ds.load_label(rec)? else { continue };
        let frames = ds.load_aligned(rec)?;
        let (pred, _) = model.predict_frames(&frames, &grid)?;
        let tagged = frames.iter().all(|f| f.tags.is_some());
        ev.add(&pred, &label.profile, label.categories.as_deref(), tagged.then_some(frames.as_slice()))?;
    }
    let report = ev.finish();
    if report.samples == 0 {
        return Err(CliError::Missing("no labeled samples in the selected split".into()).into());
    }
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(&a.report, format!("{json}\n")).with_context(|| format!("writing {}", a.report.display()))?;
    let table = report.to_table();
    let table_path = PathBuf::from(format!("{}.txt", a.report.display()));
    fs::write(&table_path, &table).with_context(|| format!("writing {}", table_path.display()))?;
    print!("{table}");
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let model = load_model_for(&a.ckpt, &ds)?;
    let rec = ds
        .manifest
        .records
        .iter()
        .find(|r| r.id == a.sample)
        .ok_or_else(|| config(format!("no sample `{}` in {}", a.sample, a.dataset.display())))?;
    let (profile, _) = model.predict_frames(&ds.load_aligned(rec)?, &ds.manifest.grid)?;
    write_label(&a.out, &LabelFile { profile, categories: None }, &ds.manifest.grid)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn plot(a: &PlotArgs) -> Result<()> {
    if a.size < 64 {
        return Err(config("--size must be at least 64"));
    }
    let (grid, profile) = read_label_any(&a.profile)?;
    let gt = match &a.gt {
        Some(p) => {
            let (g, l) = read_label_any(p)?;
            if g != grid {
                return Err(cad_core::DatasetError::SpecMismatch(format!(
                    "{} and {} use different grids",
                    a.profile.display(),
                    p.display()
                ))
                .into());
            }
            Some(l.profile)
        }
        None => None,
    };
    let frames = a.points.iter().map(read_kitti_bin).collect::<Result<Vec<_>, _>>()?;
    let svg = render_svg(&PlotInput { grid, profile: &profile.profile, gt: gt.as_ref(), frames: &frames, size: a.size });
    fs::write(&a.out, svg).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {}", a.out.display());
    Ok(())
}
