use std::path::Path;

use cad_autodiff::{load_checkpoint, save_checkpoint, Graph, ParamStore, Tensor, Var};
use cad_core::{CadProfile, PointFrame, PolarGridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Fusion, NetConfig};
use crate::encoder::{prepare_input, PreparedInput};
use crate::error::{config_err, NetError};

/// Graph handles produced by one forward pass.
pub struct Forward {
    /// Per-frame pillar features `(C_p, n_r, n_phi)`, current frame first.
    pub pillar_features: Vec<Var>,
    /// Attention weights `(1, n_r/2, n_phi/2)` of historical frames 1..=f;
    /// empty unless the fusion is attention.
    pub sam_weights: Vec<Var>,
    pub fused: Var,
    /// `(n_r, n_phi)` logits.
    pub logits: Var,
    /// Softmax of the logits along the radial axis.
    pub psi: Var,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    version: u32,
    config: NetConfig,
}

const CHECKPOINT_KIND: &str = "cad-net";

#[derive(Debug, Clone)]
pub struct CadNet {
    config: NetConfig,
    params: ParamStore,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    /// Uniform in `±sqrt(gain / fan_in)`.
    fn add(&mut self, name: &str, shape: &[usize], fan_in: usize, gain: f64) -> Result<(), NetError> {
        let a = (gain / fan_in as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| self.rng.gen_range(-a..a));
        self.store.add(name, t)?;
        Ok(())
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<(), NetError> {
        self.store.add(name, Tensor::zeros(shape))?;
        Ok(())
    }

    fn conv(&mut self, name: &str, out: usize, inp: usize, k: usize, gain: f64) -> Result<(), NetError> {
        self.add(&format!("{name}.w"), &[out, inp, k, k], inp * k * k, gain)?;
        self.zeros(&format!("{name}.b"), &[out])
    }
}

const RELU_GAIN: f64 = 6.0;
const LINEAR_GAIN: f64 = 1.0;

impl CadNet {
    pub fn new(config: NetConfig) -> Result<Self, NetError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init { store: &mut params, rng: ChaCha8Rng::seed_from_u64(config.seed) };
        let mut width = config.encoder.features.width();
        for (l, &w) in config.encoder.widths.iter().enumerate() {
            init.add(&format!("enc.{l}.w"), &[width, w], width, RELU_GAIN)?;
            init.zeros(&format!("enc.{l}.b"), &[w])?;
            width = w;
        }
        let c = config.pillar_channels();
        let e = config.sam.embed_dim;
        let ca = config.sam.fused_channels;
        match config.sam.fusion {
            Fusion::Sam => {
                for role in ["key", "query"] {
                    init.conv(&format!("sam.{role}.0"), e, c, 1, RELU_GAIN)?;
                    init.conv(&format!("sam.{role}.1"), e, e, 1, LINEAR_GAIN)?;
                }
                init.conv("sam.score", 1, config.f, 1, LINEAR_GAIN)?;
                init.conv("fuse", ca, 2 * c, 3, RELU_GAIN)?;
            }
            Fusion::Merge | Fusion::Single => init.conv("fuse", ca, c, 3, RELU_GAIN)?,
        }
        let [c1, c2, c3] = config.backbone.channels;
        init.conv("bb.enc0", c1, ca, 3, RELU_GAIN)?;
        init.conv("bb.enc1", c2, c1, 3, RELU_GAIN)?;
        init.conv("bb.enc2", c3, c2, 3, RELU_GAIN)?;
        init.conv("bb.mid", c3, c3, 3, RELU_GAIN)?;
        init.conv("bb.dec2", c2, 2 * c3, 3, RELU_GAIN)?;
        init.conv("bb.dec1", c1, 2 * c2, 3, RELU_GAIN)?;
        init.conv("bb.dec0", c1, 2 * c1, 3, RELU_GAIN)?;
        init.conv("head", 1, c1, 1, LINEAR_GAIN)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn grid(&self) -> &PolarGridSpec {
        &self.config.grid
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn prepare(&self, frames: &[PointFrame]) -> PreparedInput {
        prepare_input(frames, &self.config.grid, self.config.encoder.features)
    }

    fn p(&self, g: &mut Graph, name: &str) -> Var {
        let id = self.params.id(name).unwrap_or_else(|| panic!("parameter `{name}` is registered in new()"));
        g.param(&self.params, id)
    }

    fn conv(&self, g: &mut Graph, name: &str, x: Var, relu: bool) -> Result<Var, NetError> {
        let w = self.p(g, &format!("{name}.w"));
        let b = self.p(g, &format!("{name}.b"));
        let y = g.conv2d_polar(x, w, Some(b), 1)?;
        Ok(if relu { g.relu(y)? } else { y })
    }

    /// Per-frame MLP followed by a per-pillar max.
    pub fn encode(&self, g: &mut Graph, input: &PreparedInput) -> Result<Vec<Var>, NetError> {
        let spec = &self.config.grid;
        if input.frames.len() != self.config.f + 1 {
            return Err(config_err(format!("expected {} frames, got {}", self.config.f + 1, input.frames.len())));
        }
        let c = self.config.pillar_channels();
        let shape = [c, spec.n_r(), spec.n_phi()];
        input
            .frames
            .iter()
            .map(|frame| {
                let Some(feats) = &frame.features else {
                    return Ok(g.input(Tensor::zeros(&shape)));
                };
                if feats.shape()[1] != self.config.encoder.features.width() {
                    return Err(config_err("feature width does not match the encoder"));
                }
                let mut h = g.input(feats.clone());
                for l in 0..self.config.encoder.widths.len() {
                    let w = self.p(g, &format!("enc.{l}.w"));
                    let b = self.p(g, &format!("enc.{l}.b"));
                    let y = g.linear(h, w, b)?;
                    h = g.relu(y)?;
                }
                let pooled = g.scatter_max(h, &frame.pillar_ids, spec.n_pillars())?;
                let t = g.transpose2d(pooled)?;
                Ok(g.reshape(t, &shape)?)
            })
            .collect()
    }

    fn embed(&self, g: &mut Graph, role: &str, x: Var) -> Result<Var, NetError> {
        let h = self.conv(g, &format!("sam.{role}.0"), x, true)?;
        self.conv(g, &format!("sam.{role}.1"), h, false)
    }

    /// Fused feature `F_a` and, for attention fusion, the low-resolution
    /// weight maps of frames 1..=f.
    pub fn fuse(&self, g: &mut Graph, fp: &[Var]) -> Result<(Var, Vec<Var>), NetError> {
        let f = self.config.f;
        if fp.len() != f + 1 {
            return Err(config_err(format!("expected {} feature maps, got {}", f + 1, fp.len())));
        }
        let (historical, weights) = match self.config.sam.fusion {
            Fusion::Single => return Ok((self.conv(g, "fuse", fp[0], true)?, Vec::new())),
            Fusion::Merge => {
                let mut h = fp[0];
                for &x in &fp[1..] {
                    h = g.max(h, x)?;
                }
                return Ok((self.conv(g, "fuse", h, true)?, Vec::new()));
            }
            Fusion::Sam => {
                let down: Vec<Var> = fp.iter().map(|&x| g.maxpool2d(x)).collect::<Result<_, _>>()?;
                let keys: Vec<Var> = down.iter().map(|&x| self.embed(g, "key", x)).collect::<Result<_, _>>()?;
                let inv_sqrt_e = 1.0 / (self.config.sam.embed_dim as f64).sqrt();
                let mut weights = Vec::with_capacity(f);
                let mut fused: Option<Var> = None;
                for k in 1..=f {
                    let q = self.embed(g, "query", down[k])?;
                    let mut alphas = Vec::with_capacity(f);
                    for (n, &key) in keys.iter().enumerate() {
                        if n == k {
                            continue;
                        }
                        let prod = g.mul(q, key)?;
                        let dot = g.sum_axis0(prod)?;
                        alphas.push(g.scale(dot, inv_sqrt_e)?);
                    }
                    let v = g.concat(&alphas, 0)?;
                    let s = self.conv(g, "sam.score", v, false)?;
                    let w_low = g.sigmoid(s)?;
                    weights.push(w_low);
                    let w_full = g.upsample_nearest(w_low)?;
                    let term = g.mul_bcast(fp[k], w_full)?;
                    fused = Some(match fused {
                        Some(acc) => g.add(acc, term)?,
                        None => term,
                    });
                }
                (fused.expect("f >= 1"), weights)
            }
        };
        let cat = g.concat(&[fp[0], historical], 0)?;
        Ok((self.conv(g, "fuse", cat, true)?, weights))
    }

    /// Circular UNet over `(C_a, n_r, n_phi)` to `(n_r, n_phi)` logits.
    pub fn backbone(&self, g: &mut Graph, fused: Var) -> Result<Var, NetError> {
        let e0 = self.conv(g, "bb.enc0", fused, true)?;
        let p0 = g.maxpool2d(e0)?;
        let e1 = self.conv(g, "bb.enc1", p0, true)?;
        let p1 = g.maxpool2d(e1)?;
        let e2 = self.conv(g, "bb.enc2", p1, true)?;
        let p2 = g.maxpool2d(e2)?;
        let mut x = self.conv(g, "bb.mid", p2, true)?;
        for (name, skip) in [("bb.dec2", e2), ("bb.dec1", e1), ("bb.dec0", e0)] {
            let up = g.upsample_nearest(x)?;
            let cat = g.concat(&[up, skip], 0)?;
            x = self.conv(g, name, cat, true)?;
        }
        let logits = self.conv(g, "head", x, false)?;
        let spec = &self.config.grid;
        Ok(g.reshape(logits, &[spec.n_r(), spec.n_phi()])?)
    }

    pub fn forward(&self, g: &mut Graph, input: &PreparedInput) -> Result<Forward, NetError> {
        let pillar_features = self.encode(g, input)?;
        let (fused, sam_weights) = self.fuse(g, &pillar_features)?;
        let logits = self.backbone(g, fused)?;
        let psi = g.softmax(logits, 0)?;
        Ok(Forward { pillar_features, sam_weights, fused, logits, psi })
    }

    /// Depth profile with per-direction confidence, and the distribution.
    pub fn predict(&self, input: &PreparedInput) -> Result<(CadProfile, Tensor), NetError> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, input)?;
        let psi = g.value(out.psi).clone();
        Ok((profile_from_distribution(&psi), psi))
    }

    /// Predicts from frames that must already be in the current vehicle frame.
    pub fn predict_frames(&self, frames: &[PointFrame], spec: &PolarGridSpec) -> Result<(CadProfile, Tensor), NetError> {
        self.check_grid(spec)?;
        self.predict(&self.prepare(frames))
    }

    pub fn check_grid(&self, spec: &PolarGridSpec) -> Result<(), NetError> {
        if spec != &self.config.grid {
            return Err(NetError::SpecMismatch(format!("model grid {:?}, input grid {spec:?}", self.config.grid)));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let header = CheckpointHeader { kind: CHECKPOINT_KIND.into(), version: 1, config: self.config.clone() };
        save_checkpoint(path, &serde_json::to_string(&header)?, &self.params)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let (header, store) = load_checkpoint(path)?;
        let header: CheckpointHeader = serde_json::from_str(&header)?;
        if header.kind != CHECKPOINT_KIND || header.version != 1 {
            return Err(config_err(format!("unsupported checkpoint {} v{}", header.kind, header.version)));
        }
        let mut model = Self::new(header.config)?;
        model.params.load_from(&store)?;
        Ok(model)
    }
}

/// Argmax per direction (ties to the nearer bin) and its probability.
pub fn profile_from_distribution(psi: &Tensor) -> CadProfile {
    let (n_r, n_phi) = (psi.shape()[0], psi.shape()[1]);
    let d = psi.data();
    let mut depth = Vec::with_capacity(n_phi);
    let mut conf = Vec::with_capacity(n_phi);
    for j in 0..n_phi {
        let mut best = 0;
        for r in 1..n_r {
            if d[r * n_phi + j] > d[best * n_phi + j] {
                best = r;
            }
        }
        depth.push(best);
        conf.push(d[best * n_phi + j]);
    }
    CadProfile { depth_index: depth, confidence: conf, labeled: false }
}
