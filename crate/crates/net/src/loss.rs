//! Losses over per-direction depth distributions `Ψ: (n_r, n_phi)`.
//!
//! Each loss is a plain function over tensors plus a graph node whose
//! adjoint with respect to `Ψ` is computed in closed form; the softmax
//! producing `Ψ` is differentiated by the graph.

use cad_autodiff::{CustomOp, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, NetError};

/// Floor applied inside logarithms.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// DisMSE weight inside the supervised loss.
    pub alpha: f64,
    /// Variance weight inside the unsupervised loss.
    pub beta: f64,
    /// Unsupervised share of the total loss.
    pub lambda: f64,
    pub sigma1: f64,
    pub mu1: f64,
    pub sigma2: f64,
    pub mu2: f64,
    /// Width of the distance weight, in bins.
    pub sigma_g: f64,
    /// Adjacent bins merged by the entropy regularizer.
    pub b: usize,
}

impl LossConfig {
    /// Published hyperparameters; `lambda = 1` and `b = 8` are our choices.
    pub fn reference() -> Self {
        Self { alpha: 1.0, beta: 0.01, lambda: 1.0, sigma1: 0.04, mu1: 250.0, sigma2: 0.1, mu2: 100.0, sigma_g: 9.0, b: 8 }
    }

    /// Compresses both schedules so that a run of `epochs` epochs passes
    /// through them like a 500-epoch run, and scales `sigma_g` and the
    /// entropy group size `b` to a grid of `n_r` bins (`b` rounds down to a
    /// divisor of `n_r`).
    pub fn scaled(epochs: usize, n_r: usize) -> Self {
        let p = Self::reference();
        let s = epochs as f64 / 500.0;
        Self {
            sigma1: p.sigma1 / s,
            mu1: p.mu1 * s,
            sigma2: p.sigma2 / s,
            mu2: p.mu2 * s,
            sigma_g: p.sigma_g * n_r as f64 / 128.0,
            b: (1..=(p.b * n_r / 128).max(1)).rev().find(|b| n_r.is_multiple_of(*b)).unwrap_or(1),
            ..p
        }
    }

    pub fn validate(&self, n_r: usize) -> Result<(), NetError> {
        for (name, v) in [("sigma1", self.sigma1), ("sigma2", self.sigma2), ("sigma_g", self.sigma_g)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda), ("mu1", self.mu1), ("mu2", self.mu2)] {
            if !v.is_finite() {
                return Err(config_err(format!("{name} must be finite")));
            }
        }
        if self.b == 0 || !n_r.is_multiple_of(self.b) {
            return Err(config_err(format!("b = {} must divide n_r = {n_r}", self.b)));
        }
        Ok(())
    }

    pub fn w_ce(&self, t: f64) -> f64 {
        schedule(t, self.sigma1, self.mu1)
    }

    pub fn w_var(&self, t: f64) -> f64 {
        schedule(t, self.sigma2, self.mu2)
    }
}

/// `1 / (1 + exp(-σ (t - μ)))`.
pub fn schedule(t: f64, sigma: f64, mu: f64) -> f64 {
    1.0 / (1.0 + (-sigma * (t - mu)).exp())
}

/// `1 - exp(-(d - l)² / (2 σ²))`.
pub fn distance_weight(d: usize, label: usize, sigma_g: f64) -> f64 {
    let diff = d as f64 - label as f64;
    1.0 - (-diff * diff / (2.0 * sigma_g * sigma_g)).exp()
}

fn dims(psi: &Tensor) -> Result<(usize, usize), NetError> {
    match *psi.shape() {
        [n_r, n_phi] => Ok((n_r, n_phi)),
        ref s => Err(NetError::Autodiff(cad_autodiff::AutodiffError::ShapeMismatch(format!(
            "distribution must be (n_r, n_phi), got {s:?}"
        )))),
    }
}

fn check_labels(psi: &Tensor, labels: &[usize]) -> Result<(usize, usize), NetError> {
    let (n_r, n_phi) = dims(psi)?;
    if labels.len() != n_phi || labels.iter().any(|&l| l >= n_r) {
        return Err(NetError::Autodiff(cad_autodiff::AutodiffError::ShapeMismatch(format!(
            "{} labels in 0..{n_r} expected for {n_phi} directions",
            n_phi
        ))));
    }
    Ok((n_r, n_phi))
}

/// Distance-weighted squared error against one-hot labels.
pub fn dis_mse(psi: &Tensor, labels: &[usize], sigma_g: f64) -> Result<f64, NetError> {
    let (n_r, n_phi) = check_labels(psi, labels)?;
    let p = psi.data();
    let mut s = 0.0;
    for (j, &l) in labels.iter().enumerate() {
        for d in 0..n_r {
            let y = if d == l { 1.0 } else { 0.0 };
            let r = y - p[d * n_phi + j];
            s += distance_weight(d, l, sigma_g) * r * r;
        }
    }
    Ok(s / n_phi as f64)
}

/// Mean negative log-probability of the label bin.
pub fn ce_loss(psi: &Tensor, labels: &[usize]) -> Result<f64, NetError> {
    let (_, n_phi) = check_labels(psi, labels)?;
    let p = psi.data();
    let s: f64 = labels.iter().enumerate().map(|(j, &l)| -p[l * n_phi + j].max(LOG_EPS).ln()).sum();
    Ok(s / n_phi as f64)
}

/// Mean per-direction variance of the depth index.
pub fn var_loss(psi: &Tensor) -> Result<f64, NetError> {
    let (n_r, n_phi) = dims(psi)?;
    let p = psi.data();
    let mut s = 0.0;
    for j in 0..n_phi {
        let mean: f64 = (0..n_r).map(|d| d as f64 * p[d * n_phi + j]).sum();
        s += (0..n_r).map(|d| (d as f64 - mean).powi(2) * p[d * n_phi + j]).sum::<f64>();
    }
    Ok(s / n_phi as f64)
}

/// Mean per-direction entropy after summing groups of `b` adjacent bins.
pub fn entropy_reg(psi: &Tensor, b: usize) -> Result<f64, NetError> {
    let (n_r, n_phi) = dims(psi)?;
    if b == 0 || n_r % b != 0 {
        return Err(config_err(format!("b = {b} must divide n_r = {n_r}")));
    }
    let p = psi.data();
    let mut s = 0.0;
    for j in 0..n_phi {
        for m in 0..n_r / b {
            let q: f64 = (m * b..(m + 1) * b).map(|d| p[d * n_phi + j]).sum();
            s -= q * q.max(LOG_EPS).ln();
        }
    }
    Ok(s / n_phi as f64)
}

/// `α·DisMSE + w_ce(t)·CE`.
pub fn cad_loss(psi: &Tensor, labels: &[usize], t: f64, cfg: &LossConfig) -> Result<f64, NetError> {
    Ok(cfg.alpha * dis_mse(psi, labels, cfg.sigma_g)? + cfg.w_ce(t) * ce_loss(psi, labels)?)
}

/// `entropy + w_var(t)·β·variance`.
pub fn unsup_loss(psi: &Tensor, t: f64, cfg: &LossConfig) -> Result<f64, NetError> {
    Ok(entropy_reg(psi, cfg.b)? + cfg.w_var(t) * cfg.beta * var_loss(psi)?)
}

/// Mean supervised loss over the labeled batch plus `λ` times the mean
/// unsupervised loss over the unlabeled batch; an empty side contributes 0.
pub fn total_loss(labeled: &[(&Tensor, &[usize])], unlabeled: &[&Tensor], t: f64, cfg: &LossConfig) -> Result<f64, NetError> {
    if labeled.is_empty() && unlabeled.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let mut total = 0.0;
    if !labeled.is_empty() {
        let s: f64 = labeled.iter().map(|(p, y)| cad_loss(p, y, t, cfg)).sum::<Result<f64, _>>()?;
        total += s / labeled.len() as f64;
    }
    if !unlabeled.is_empty() {
        let s: f64 = unlabeled.iter().map(|p| unsup_loss(p, t, cfg)).sum::<Result<f64, _>>()?;
        total += cfg.lambda * s / unlabeled.len() as f64;
    }
    Ok(total)
}

enum Kind {
    DisMse { labels: Vec<usize>, sigma_g: f64 },
    Ce { labels: Vec<usize> },
    Var,
    Entropy { b: usize },
}

struct PsiLoss(Kind);

impl CustomOp for PsiLoss {
    fn name(&self) -> &'static str {
        match self.0 {
            Kind::DisMse { .. } => "dis_mse",
            Kind::Ce { .. } => "ce_loss",
            Kind::Var => "var_loss",
            Kind::Entropy { .. } => "entropy_reg",
        }
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let psi = inputs[0];
        let (n_r, n_phi) = (psi.shape()[0], psi.shape()[1]);
        let p = psi.data();
        let scale = grad.item() / n_phi as f64;
        let mut out = vec![0.0; p.len()];
        match &self.0 {
            Kind::DisMse { labels, sigma_g } => {
                for (j, &l) in labels.iter().enumerate() {
                    for d in 0..n_r {
                        let y = if d == l { 1.0 } else { 0.0 };
                        let i = d * n_phi + j;
                        out[i] = scale * 2.0 * distance_weight(d, l, *sigma_g) * (p[i] - y);
                    }
                }
            }
            Kind::Ce { labels } => {
                for (j, &l) in labels.iter().enumerate() {
                    let i = l * n_phi + j;
                    if p[i] > LOG_EPS {
                        out[i] = -scale / p[i];
                    }
                }
            }
            Kind::Var => {
                for j in 0..n_phi {
                    let col = |d: usize| p[d * n_phi + j];
                    let mean: f64 = (0..n_r).map(|d| d as f64 * col(d)).sum();
                    // ∂/∂ψ_d of Σ_e (e − μ)² ψ_e with μ = Σ_e e ψ_e
                    let spread: f64 = (0..n_r).map(|e| (e as f64 - mean) * col(e)).sum();
                    for d in 0..n_r {
                        let x = d as f64;
                        out[d * n_phi + j] = scale * ((x - mean).powi(2) - 2.0 * x * spread);
                    }
                }
            }
            Kind::Entropy { b } => {
                for j in 0..n_phi {
                    for m in 0..n_r / b {
                        let q: f64 = (m * b..(m + 1) * b).map(|d| p[d * n_phi + j]).sum();
                        let g = if q > LOG_EPS { -(q.ln() + 1.0) } else { -LOG_EPS.ln() };
                        for d in m * b..(m + 1) * b {
                            out[d * n_phi + j] = scale * g;
                        }
                    }
                }
            }
        }
        vec![Some(Tensor::new(psi.shape().to_vec(), out).expect("shape of psi"))]
    }
}

fn node(g: &mut Graph, psi: Var, value: f64, kind: Kind) -> Result<Var, NetError> {
    Ok(g.custom(&[psi], Tensor::scalar(value), Box::new(PsiLoss(kind)))?)
}

pub fn dis_mse_node(g: &mut Graph, psi: Var, labels: &[usize], sigma_g: f64) -> Result<Var, NetError> {
    let v = dis_mse(g.value(psi), labels, sigma_g)?;
    node(g, psi, v, Kind::DisMse { labels: labels.to_vec(), sigma_g })
}

pub fn ce_node(g: &mut Graph, psi: Var, labels: &[usize]) -> Result<Var, NetError> {
    let v = ce_loss(g.value(psi), labels)?;
    node(g, psi, v, Kind::Ce { labels: labels.to_vec() })
}

pub fn var_node(g: &mut Graph, psi: Var) -> Result<Var, NetError> {
    let v = var_loss(g.value(psi))?;
    node(g, psi, v, Kind::Var)
}

pub fn entropy_node(g: &mut Graph, psi: Var, b: usize) -> Result<Var, NetError> {
    let v = entropy_reg(g.value(psi), b)?;
    node(g, psi, v, Kind::Entropy { b })
}

/// Components of one supervised loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SupervisedParts {
    pub dis_mse: f64,
    pub ce: f64,
}

/// Components of one unsupervised loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UnsupervisedParts {
    pub entropy: f64,
    pub variance: f64,
}

pub fn cad_loss_node(g: &mut Graph, psi: Var, labels: &[usize], t: f64, cfg: &LossConfig) -> Result<(Var, SupervisedParts), NetError> {
    let dm = dis_mse_node(g, psi, labels, cfg.sigma_g)?;
    let ce = ce_node(g, psi, labels)?;
    let parts = SupervisedParts { dis_mse: g.value(dm).item(), ce: g.value(ce).item() };
    let a = g.scale(dm, cfg.alpha)?;
    let b = g.scale(ce, cfg.w_ce(t))?;
    Ok((g.add(a, b)?, parts))
}

pub fn unsup_loss_node(g: &mut Graph, psi: Var, t: f64, cfg: &LossConfig) -> Result<(Var, UnsupervisedParts), NetError> {
    let h = entropy_node(g, psi, cfg.b)?;
    let v = var_node(g, psi)?;
    let parts = UnsupervisedParts { entropy: g.value(h).item(), variance: g.value(v).item() };
    let sv = g.scale(v, cfg.w_var(t) * cfg.beta)?;
    Ok((g.add(h, sv)?, parts))
}

/// Graph form of [`total_loss`].
pub fn total_loss_node(
    g: &mut Graph,
    labeled: &[(Var, &[usize])],
    unlabeled: &[Var],
    t: f64,
    cfg: &LossConfig,
) -> Result<Var, NetError> {
    if labeled.is_empty() && unlabeled.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let mut terms = Vec::new();
    for &(psi, y) in labeled {
        let (l, _) = cad_loss_node(g, psi, y, t, cfg)?;
        terms.push(g.scale(l, 1.0 / labeled.len() as f64)?);
    }
    for &psi in unlabeled {
        let (l, _) = unsup_loss_node(g, psi, t, cfg)?;
        terms.push(g.scale(l, cfg.lambda / unlabeled.len() as f64)?);
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}
