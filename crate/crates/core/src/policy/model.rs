//! The chunked CVAE: a posterior encoder over (proprioception, action chunk) that is
//! used only in training, and a decoder that attends from learned chunk queries to
//! a memory of latent, proprioception and image-patch tokens.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tape::{ParamStore, Tape, Var};
use super::PolicyConfig;
use crate::error::{Error, Result};
use crate::sim::Image;
use crate::store::{ACTION_DIM, OBS_FEATURES, WRENCH_FEATURES};

/// Shapes fixed when a model is created; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub arms: usize,
    pub cameras: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub with_ft: bool,
    pub chunk: usize,
    pub latent: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub patch: usize,
    pub image_pool: usize,
}

impl ModelDims {
    pub fn new(config: &PolicyConfig, arms: usize, cameras: usize, image_width: usize, image_height: usize) -> Result<Self> {
        config.validate()?;
        let d = Self {
            arms,
            cameras,
            image_width,
            image_height,
            with_ft: config.use_ft,
            chunk: config.chunk_size,
            latent: config.latent_dim,
            width: config.width,
            heads: config.heads,
            ffn: config.ffn_width,
            encoder_layers: config.encoder_layers,
            decoder_layers: config.decoder_layers,
            patch: config.patch,
            image_pool: config.image_pool,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms == 0 || self.chunk == 0 || self.latent == 0 || self.width == 0 || self.heads == 0 {
            return Err(Error::config("model: arms, chunk, latent, width and heads must be positive"));
        }
        if self.width % self.heads != 0 {
            return Err(Error::config("model: width must be divisible by heads"));
        }
        if self.cameras > 0 {
            let cell = self.patch * self.image_pool;
            if cell == 0 || self.image_width % cell != 0 || self.image_height % cell != 0 {
                return Err(Error::config(format!(
                    "model: image {}x{} is not divisible into {}-pixel pooled patches",
                    self.image_width, self.image_height, cell
                )));
            }
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.arms * if self.with_ft { OBS_FEATURES } else { OBS_FEATURES - WRENCH_FEATURES }
    }

    pub fn action_dim(&self) -> usize {
        self.arms * ACTION_DIM
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn patches_per_camera(&self) -> usize {
        if self.cameras == 0 {
            return 0;
        }
        let cell = self.patch * self.image_pool;
        (self.image_width / cell) * (self.image_height / cell)
    }

    /// Latent, proprioception and image tokens.
    pub fn memory_tokens(&self) -> usize {
        2 + self.cameras * self.patches_per_camera()
    }
}

/// Average-pools an RGB image by `pool`, scales to [-0.5, 0.5] and cuts it into
/// `patch`×`patch` tiles, one row per tile in raster order.
pub fn image_patches(img: &Image, pool: usize, patch: usize) -> Result<Array2<f64>> {
    let (w, h) = (img.width / pool, img.height / pool);
    if w * pool != img.width || h * pool != img.height || w % patch != 0 || h % patch != 0 {
        return Err(Error::config("image size does not match the model patching"));
    }
    if img.data.len() != img.width * img.height * 3 {
        return Err(Error::format("image buffer size mismatch"));
    }
    let norm = 1.0 / (255.0 * (pool * pool) as f64);
    let mut pooled = vec![0.0; w * h * 3];
    for y in 0..img.height {
        for x in 0..img.width {
            let src = (y * img.width + x) * 3;
            let dst = ((y / pool) * w + x / pool) * 3;
            for c in 0..3 {
                pooled[dst + c] += img.data[src + c] as f64 * norm;
            }
        }
    }
    let (pw, ph) = (w / patch, h / patch);
    let mut out = Array2::zeros((pw * ph, patch * patch * 3));
    for py in 0..ph {
        for px in 0..pw {
            let mut row = out.row_mut(py * pw + px);
            let mut k = 0;
            for y in 0..patch {
                for x in 0..patch {
                    let src = ((py * patch + y) * w + px * patch + x) * 3;
                    for c in 0..3 {
                        row[k] = pooled[src + c] - 0.5;
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Attn {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EncoderLayer {
    attn: Attn,
    norm1: Norm,
    ff1: Linear,
    ff2: Linear,
    norm2: Norm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DecoderLayer {
    self_attn: Attn,
    norm1: Norm,
    cross: Attn,
    norm2: Norm,
    ff1: Linear,
    ff2: Linear,
    norm3: Norm,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    post_cls: usize,
    post_obs: Linear,
    post_act: Linear,
    post_pos: usize,
    post_layers: Vec<EncoderLayer>,
    post_out: Linear,
    latent_in: Linear,
    obs_in: Linear,
    patch_in: Option<Linear>,
    mem_pos: usize,
    mem_layers: Vec<EncoderLayer>,
    queries: usize,
    dec_layers: Vec<DecoderLayer>,
    head: Linear,
}

struct Builder<'r> {
    store: ParamStore,
    rng: &'r mut ChaCha8Rng,
}

impl Builder<'_> {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) -> usize {
        let v = Array2::from_shape_fn((rows, cols), |_| self.rng.random_range(-bound..=bound));
        self.store.add(name, v)
    }

    fn constant(&mut self, name: String, rows: usize, cols: usize, value: f64) -> usize {
        self.store.add(name, Array2::from_elem((rows, cols), value))
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) -> Linear {
        let bound = (6.0 / (din + dout) as f64).sqrt();
        Linear {
            w: self.uniform(format!("{name}.w"), din, dout, bound),
            b: self.constant(format!("{name}.b"), 1, dout, 0.0),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gamma: self.constant(format!("{name}.gamma"), 1, d, 1.0),
            beta: self.constant(format!("{name}.beta"), 1, d, 0.0),
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> Attn {
        Attn {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn encoder_layer(&mut self, name: &str, d: usize, f: usize) -> EncoderLayer {
        EncoderLayer {
            attn: self.attn(&format!("{name}.attn"), d),
            norm1: self.norm(&format!("{name}.norm1"), d),
            ff1: self.linear(&format!("{name}.ff1"), d, f),
            ff2: self.linear(&format!("{name}.ff2"), f, d),
            norm2: self.norm(&format!("{name}.norm2"), d),
        }
    }

    fn decoder_layer(&mut self, name: &str, d: usize, f: usize) -> DecoderLayer {
        DecoderLayer {
            self_attn: self.attn(&format!("{name}.self"), d),
            norm1: self.norm(&format!("{name}.norm1"), d),
            cross: self.attn(&format!("{name}.cross"), d),
            norm2: self.norm(&format!("{name}.norm2"), d),
            ff1: self.linear(&format!("{name}.ff1"), d, f),
            ff2: self.linear(&format!("{name}.ff2"), f, d),
            norm3: self.norm(&format!("{name}.norm3"), d),
        }
    }
}

/// One training or inference input.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// Normalized observation features (1×obs_dim).
    pub observation: Vec<f64>,
    /// Patch matrices, one per camera.
    pub images: Vec<Array2<f64>>,
}

/// Loss terms of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub l1: f64,
    pub kl: f64,
}

/// One supervised example: input, normalized action chunk and its padding mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub input: ModelInput,
    pub actions: Array2<f64>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactModel {
    pub dims: ModelDims,
    pub params: ParamStore,
    layout: Layout,
}

impl CompactModel {
    pub fn new(dims: ModelDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        dims.validate()?;
        let (d, f) = (dims.width, dims.ffn);
        let mut b = Builder {
            store: ParamStore::default(),
            rng,
        };
        let emb = 0.1;
        let layout = Layout {
            post_cls: b.uniform("post.cls".into(), 1, d, emb),
            post_obs: b.linear("post.obs", dims.obs_dim(), d),
            post_act: b.linear("post.act", dims.action_dim(), d),
            post_pos: b.uniform("post.pos".into(), dims.chunk + 2, d, emb),
            post_layers: (0..dims.encoder_layers)
                .map(|i| b.encoder_layer(&format!("post.layer{i}"), d, f))
                .collect(),
            post_out: b.linear("post.out", d, 2 * dims.latent),
            latent_in: b.linear("mem.latent", dims.latent, d),
            obs_in: b.linear("mem.obs", dims.obs_dim(), d),
            patch_in: (dims.cameras > 0).then(|| b.linear("mem.patch", dims.patch_dim(), d)),
            mem_pos: b.uniform("mem.pos".into(), dims.memory_tokens(), d, emb),
            mem_layers: (0..dims.encoder_layers)
                .map(|i| b.encoder_layer(&format!("mem.layer{i}"), d, f))
                .collect(),
            queries: b.uniform("dec.queries".into(), dims.chunk, d, emb),
            dec_layers: (0..dims.decoder_layers)
                .map(|i| b.decoder_layer(&format!("dec.layer{i}"), d, f))
                .collect(),
            head: b.linear("dec.head", d, dims.action_dim()),
        };
        Ok(Self {
            dims,
            params: b.store,
            layout,
        })
    }

    /// Model with the layout of `dims` and the given parameter values, checked by name and shape.
    pub fn from_params(dims: ModelDims, params: ParamStore) -> Result<Self> {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Self::new(dims, &mut rng)?;
        if params.names != model.params.names {
            return Err(Error::format("checkpoint parameters do not match the model layout"));
        }
        for (a, b) in params.values.iter().zip(&model.params.values) {
            if a.dim() != b.dim() {
                return Err(Error::format("checkpoint parameter shape mismatch"));
            }
        }
        model.params = params;
        Ok(model)
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        if input.observation.len() != self.dims.obs_dim() {
            return Err(Error::config(format!(
                "observation has {} features, model expects {}",
                input.observation.len(),
                self.dims.obs_dim()
            )));
        }
        if input.images.len() != self.dims.cameras {
            return Err(Error::config(format!(
                "{} camera images given, model expects {}",
                input.images.len(),
                self.dims.cameras
            )));
        }
        let shape = (self.dims.patches_per_camera(), self.dims.patch_dim());
        if input.images.iter().any(|p| p.dim() != shape) {
            return Err(Error::config("image patches have the wrong shape"));
        }
        Ok(())
    }

    fn encoder_layer(&self, t: &mut Tape, x: Var, l: &EncoderLayer, mask: Option<&[bool]>) -> Var {
        let a = self.attend(t, x, x, &l.attn, mask);
        let r = t.add(x, a);
        let x = t.layer_norm(r, l.norm1.gamma, l.norm1.beta);
        let f = self.feed_forward(t, x, l.ff1, l.ff2);
        let r = t.add(x, f);
        t.layer_norm(r, l.norm2.gamma, l.norm2.beta)
    }

    fn attend(&self, t: &mut Tape, x: Var, mem: Var, a: &Attn, mask: Option<&[bool]>) -> Var {
        let q = t.linear(x, a.q.w, a.q.b);
        let k = t.linear(mem, a.k.w, a.k.b);
        let v = t.linear(mem, a.v.w, a.v.b);
        let h = t.attention(q, k, v, self.dims.heads, mask);
        t.linear(h, a.o.w, a.o.b)
    }

    fn feed_forward(&self, t: &mut Tape, x: Var, ff1: Linear, ff2: Linear) -> Var {
        let h = t.linear(x, ff1.w, ff1.b);
        let h = t.relu(h);
        t.linear(h, ff2.w, ff2.b)
    }

    /// Posterior mean and log-variance (each 1×latent) of the latent given the
    /// observation and a normalized action chunk with its padding mask.
    pub fn encode_posterior(&self, t: &mut Tape, observation: &[f64], actions: &Array2<f64>, mask: &[bool]) -> Result<(Var, Var)> {
        let l = &self.layout;
        let n = self.dims.chunk;
        if actions.dim() != (n, self.dims.action_dim()) || mask.len() != n {
            return Err(Error::config(format!(
                "posterior expects a {}×{} action chunk, got {:?}",
                n,
                self.dims.action_dim(),
                actions.dim()
            )));
        }
        if observation.len() != self.dims.obs_dim() {
            return Err(Error::config("posterior observation has the wrong size"));
        }
        let cls = t.param(l.post_cls);
        let o = t.input(Array2::from_shape_vec((1, observation.len()), observation.to_vec()).expect("row"));
        let o = t.linear(o, l.post_obs.w, l.post_obs.b);
        let a = t.input(actions.clone());
        let a = t.linear(a, l.post_act.w, l.post_act.b);
        let x = t.concat_rows(&[cls, o, a]);
        let pos = t.param(l.post_pos);
        let mut x = t.add(x, pos);
        let mut keys = vec![true, true];
        keys.extend_from_slice(mask);
        for layer in &l.post_layers {
            x = self.encoder_layer(t, x, layer, Some(&keys));
        }
        let c = t.rows(x, 0, 1);
        let out = t.linear(c, l.post_out.w, l.post_out.b);
        let lat = self.dims.latent;
        Ok((t.cols(out, 0, lat), t.cols(out, lat, lat)))
    }

    /// Normalized action chunk (chunk × action_dim) given the input and a 1×latent `z`.
    pub fn decode(&self, t: &mut Tape, input: &ModelInput, z: Var) -> Result<Var> {
        self.check_input(input)?;
        let l = &self.layout;
        let lat = t.linear(z, l.latent_in.w, l.latent_in.b);
        let o = t.input(Array2::from_shape_vec((1, input.observation.len()), input.observation.clone()).expect("row"));
        let o = t.linear(o, l.obs_in.w, l.obs_in.b);
        let mut parts = vec![lat, o];
        if let Some(p) = l.patch_in {
            let views: Vec<_> = input.images.iter().map(|i| i.view()).collect();
            let all = ndarray::concatenate(Axis(0), &views).expect("patch widths match");
            let pin = t.input(all);
            parts.push(t.linear(pin, p.w, p.b));
        }
        let x = t.concat_rows(&parts);
        let pos = t.param(l.mem_pos);
        let mut mem = t.add(x, pos);
        for layer in &l.mem_layers {
            mem = self.encoder_layer(t, mem, layer, None);
        }
        let mut x = t.param(l.queries);
        for d in &l.dec_layers {
            let a = self.attend(t, x, x, &d.self_attn, None);
            let r = t.add(x, a);
            x = t.layer_norm(r, d.norm1.gamma, d.norm1.beta);
            let a = self.attend(t, x, mem, &d.cross, None);
            let r = t.add(x, a);
            x = t.layer_norm(r, d.norm2.gamma, d.norm2.beta);
            let f = self.feed_forward(t, x, d.ff1, d.ff2);
            let r = t.add(x, f);
            x = t.layer_norm(r, d.norm3.gamma, d.norm3.beta);
        }
        Ok(t.linear(x, l.head.w, l.head.b))
    }

    /// Prediction at the prior mean `z = 0`.
    pub fn predict_chunk(&self, input: &ModelInput) -> Result<Array2<f64>> {
        let mut t = Tape::new(&self.params);
        let z = t.input(Array2::zeros((1, self.dims.latent)));
        let out = self.decode(&mut t, input, z)?;
        let y = t.value(out).to_owned();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "policy produced a non-finite chunk (max |obs| {:.3e})",
                input.observation.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            )));
        }
        Ok(y)
    }

    /// Builds `L1 + beta·KL` averaged over `batch` on `t`. `eps` holds one standard-normal
    /// 1×latent draw per example.
    pub fn batch_loss(&self, t: &mut Tape, batch: &[TrainExample], eps: &[Array2<f64>], beta: f64) -> Result<(Var, LossTerms)> {
        if batch.is_empty() || eps.len() != batch.len() {
            return Err(Error::config("batch needs examples and one noise draw each"));
        }
        let mut total: Option<Var> = None;
        let mut terms = LossTerms::default();
        let w = 1.0 / batch.len() as f64;
        for (ex, e) in batch.iter().zip(eps) {
            let (mu, lv) = self.encode_posterior(t, &ex.input.observation, &ex.actions, &ex.mask)?;
            let z = t.reparam(mu, lv, e.clone());
            let pred = self.decode(t, &ex.input, z)?;
            let l1 = t.masked_l1(pred, ex.actions.clone(), &ex.mask);
            let kl = t.kl(mu, lv);
            terms.l1 += w * t.scalar(l1);
            terms.kl += w * t.scalar(kl);
            let kb = t.scale(kl, beta);
            let s = t.add(l1, kb);
            let s = t.scale(s, w);
            total = Some(match total {
                Some(acc) => t.add(acc, s),
                None => s,
            });
        }
        let total = total.expect("non-empty batch");
        terms.total = t.scalar(total);
        Ok((total, terms))
    }

    /// Loss and parameter gradients of one batch.
    pub fn loss_and_grad(&self, batch: &[TrainExample], eps: &[Array2<f64>], beta: f64) -> Result<(LossTerms, Vec<Array2<f64>>)> {
        let mut t = Tape::new(&self.params);
        let (loss, terms) = self.batch_loss(&mut t, batch, eps, beta)?;
        Ok((terms, t.backward(loss)))
    }

    pub fn loss(&self, batch: &[TrainExample], eps: &[Array2<f64>], beta: f64) -> Result<LossTerms> {
        let mut t = Tape::new(&self.params);
        Ok(self.batch_loss(&mut t, batch, eps, beta)?.1)
    }

    /// One standard-normal 1×latent draw.
    pub fn sample_eps(&self, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((1, self.dims.latent), |_| StandardNormal.sample(rng))
    }
}
