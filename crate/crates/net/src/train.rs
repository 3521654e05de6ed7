//! Semi-supervised training loop.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use cad_autodiff::{Adam, Graph, Optimizer, Sgd, Tensor};
use cad_core::io::{Dataset, SampleRecord, Split};
use cad_core::{eval, CadProfile};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::PreparedInput;
use crate::error::{config_err, NetError};
use crate::loss::{cad_loss_node, unsup_loss_node, LossConfig};
use crate::model::CadNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Labeled samples per optimizer step.
    pub batch_labeled: usize,
    /// Unlabeled samples per optimizer step; 0 trains supervised only.
    pub batch_unlabeled: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Validation every this many epochs (and after the last one).
    pub eval_every: usize,
    /// Checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_labeled: 4,
            batch_unlabeled: 4,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            eval_every: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.epochs == 0 || self.batch_labeled == 0 || self.eval_every == 0 {
            return Err(config_err("epochs, batch_labeled and eval_every must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("learning rate must be positive"));
        }
        Ok(())
    }
}

/// A prepared input with its label, when it has one.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: PreparedInput,
    pub label: Option<CadProfile>,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-step total loss.
    pub loss: f64,
    pub dis_mse: f64,
    pub ce: f64,
    pub entropy: Option<f64>,
    pub variance: Option<f64>,
    pub w_ce: f64,
    pub w_var: f64,
    pub lambda: f64,
    pub steps: usize,
    pub val_mae: Option<f64>,
    pub val_confidence: Option<f64>,
    /// Wall time; kept out of the log file so logs stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

/// Validation MAE (meters) and mean confidence.
pub fn evaluate(model: &CadNet, samples: &[TrainSample]) -> Result<(f64, f64), NetError> {
    let mut mae = 0.0;
    let mut conf = 0.0;
    let mut n = 0usize;
    for s in samples {
        let Some(gt) = &s.label else { continue };
        let (pred, _) = model.predict(&s.input)?;
        mae += eval::mae(&pred, gt, model.grid()).map_err(|e| NetError::Data(e.to_string()))?;
        conf += pred.confidence.iter().sum::<f64>() / pred.confidence.len() as f64;
        n += 1;
    }
    if n == 0 {
        return Err(NetError::Data("no labeled validation samples".into()));
    }
    Ok((mae / n as f64, conf / n as f64))
}

/// Unlabeled inputs with fewer current-frame points than one per ten
/// pillars carry too little signal and are skipped.
pub fn usable_unlabeled(input: &PreparedInput, n_pillars: usize) -> bool {
    input.current_points() * 10 >= n_pillars
}

fn accumulate(g: &Graph, loss: cad_autodiff::Var, acc: &mut [Tensor]) -> Result<(), NetError> {
    g.backward(loss)?.accumulate_into(acc);
    Ok(())
}

/// Trains `model` in place and returns the per-epoch log.
///
/// `on_epoch` sees every log line together with the model after that epoch.
pub fn fit(
    model: &mut CadNet,
    labeled: &[TrainSample],
    unlabeled: &[PreparedInput],
    validation: &[TrainSample],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    mut on_epoch: impl FnMut(&EpochLog, &CadNet) -> Result<(), NetError>,
) -> Result<Vec<EpochLog>, NetError> {
    cfg.validate()?;
    loss_cfg.validate(model.grid().n_r())?;
    let labeled: Vec<(&PreparedInput, &CadProfile)> =
        labeled.iter().filter_map(|s| s.label.as_ref().map(|l| (&s.input, l))).collect();
    if labeled.is_empty() {
        return Err(NetError::Data("training needs at least one labeled sample".into()));
    }
    for (_, l) in &labeled {
        l.validate(model.grid())?;
    }
    let n_pillars = model.grid().n_pillars();
    let unlabeled: Vec<&PreparedInput> = if cfg.batch_unlabeled == 0 {
        Vec::new()
    } else {
        unlabeled.iter().filter(|u| usable_unlabeled(u, n_pillars)).collect()
    };

    let mut opt: Box<dyn Optimizer> = match cfg.optimizer {
        OptimizerKind::Adam => Box::new(Adam::new(cfg.learning_rate)),
        OptimizerKind::Sgd => Box::new(Sgd::new(cfg.learning_rate)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut u_order: Vec<usize> = (0..unlabeled.len()).collect();
    let mut u_pos = 0usize;
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let t = epoch as f64;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut dm_sum, mut ce_sum, mut h_sum, mut v_sum) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut n_l, mut n_u, mut steps) = (0usize, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_labeled) {
            let mut acc = model.params().zeros_like();
            let mut step_loss = 0.0;
            let u_batch: Vec<usize> = (0..cfg.batch_unlabeled.min(unlabeled.len()))
                .map(|_| {
                    if u_pos == 0 {
                        u_order.shuffle(&mut rng);
                    }
                    let i = u_order[u_pos];
                    u_pos = (u_pos + 1) % u_order.len();
                    i
                })
                .collect();
            for &i in batch {
                let (input, label) = labeled[i];
                let mut g = Graph::new();
                let out = model.forward(&mut g, input)?;
                let (l, parts) = cad_loss_node(&mut g, out.psi, &label.depth_index, t, loss_cfg)?;
                let l = g.scale(l, 1.0 / batch.len() as f64)?;
                step_loss += g.value(l).item();
                accumulate(&g, l, &mut acc)?;
                dm_sum += parts.dis_mse;
                ce_sum += parts.ce;
                n_l += 1;
            }
            for &i in &u_batch {
                let mut g = Graph::new();
                let out = model.forward(&mut g, unlabeled[i])?;
                let (l, parts) = unsup_loss_node(&mut g, out.psi, t, loss_cfg)?;
                let l = g.scale(l, loss_cfg.lambda / u_batch.len() as f64)?;
                step_loss += g.value(l).item();
                accumulate(&g, l, &mut acc)?;
                h_sum += parts.entropy;
                v_sum += parts.variance;
                n_u += 1;
            }
            if !step_loss.is_finite() {
                return Err(NetError::Autodiff(cad_autodiff::AutodiffError::NonFinite { op: "loss" }));
            }
            opt.step(model.params_mut(), &acc);
            loss_sum += step_loss;
            steps += 1;
        }
        let last = epoch + 1 == cfg.epochs;
        let (val_mae, val_confidence) = if !validation.is_empty() && ((epoch + 1) % cfg.eval_every == 0 || last) {
            let (m, c) = evaluate(model, validation)?;
            (Some(m), Some(c))
        } else {
            (None, None)
        };
        let log = EpochLog {
            epoch,
            loss: loss_sum / steps as f64,
            dis_mse: dm_sum / n_l as f64,
            ce: ce_sum / n_l as f64,
            entropy: (n_u > 0).then(|| h_sum / n_u as f64),
            variance: (n_u > 0).then(|| v_sum / n_u as f64),
            w_ce: loss_cfg.w_ce(t),
            w_var: loss_cfg.w_var(t),
            lambda: loss_cfg.lambda,
            steps,
            val_mae,
            val_confidence,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&log, model)?;
        logs.push(log);
    }
    Ok(logs)
}

fn load_split(model: &CadNet, ds: &Dataset, split: Split, want_labels: bool) -> Result<Vec<TrainSample>, NetError> {
    let records: Vec<&SampleRecord> = ds.manifest.in_split(split).collect();
    records
        .into_iter()
        .map(|r| {
            let frames = ds.load_aligned(r)?;
            let label = if want_labels { ds.load_label(r)?.map(|l| l.profile) } else { None };
            Ok(TrainSample { input: model.prepare(&frames), label })
        })
        .collect()
}

/// Loads the splits of a dataset and trains on them, appending one JSON
/// line per epoch to `log_path` and writing checkpoints next to `ckpt`.
pub fn fit_dataset(
    model: &mut CadNet,
    ds: &Dataset,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    ckpt: &Path,
    log_path: &Path,
) -> Result<Vec<EpochLog>, NetError> {
    model.check_grid(&ds.manifest.grid)?;
    if ds.manifest.f != model.config().f {
        return Err(NetError::SpecMismatch(format!("dataset f = {}, model f = {}", ds.manifest.f, model.config().f)));
    }
    let labeled = load_split(model, ds, Split::LabeledTrain, true)?;
    let unlabeled: Vec<PreparedInput> =
        load_split(model, ds, Split::UnlabeledTrain, false)?.into_iter().map(|s| s.input).collect();
    let validation: Vec<TrainSample> =
        load_split(model, ds, Split::Validation, true)?.into_iter().filter(|s| s.label.is_some()).collect();
    let mut log = std::fs::OpenOptions::new().create(true).append(true).open(log_path)?;
    let every = cfg.checkpoint_every;
    let logs = fit(model, &labeled, &unlabeled, &validation, cfg, loss_cfg, |line, m| {
        writeln!(log, "{}", serde_json::to_string(line)?)?;
        if every > 0 && (line.epoch + 1) % every == 0 {
            let name = format!("{}.epoch{}", ckpt.display(), line.epoch + 1);
            m.save(Path::new(&name))?;
        }
        Ok(())
    })?;
    model.save(ckpt)?;
    Ok(logs)
}
