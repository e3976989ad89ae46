//! Encoder–decoder segmentation network with skip connections.
//!
//! All parameters live in one flat `Vec<f32>`; layers hold offsets into it.
//! This keeps the optimizer and the checkpoint format trivial.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{
    maxpool2, maxpool2_backward, reflect_index, relu_backward, relu_inplace, Conv, Tensor, UpConv,
};
use super::{ModelBackend, ProbabilityMap, StepStats, TrainSample};
use crate::datamodel::GrayImage;
use crate::error::{Error, IoContext, Result};
use crate::losses::{combined_loss_grad, kernel, LossConfig};

const MAGIC: &[u8; 8] = b"RSEGUNET";
const FORMAT_VERSION: u32 = 1;
/// Inputs in `[0, 1]` are mapped to `[-2, 2]` before the first layer.
const INPUT_CENTER: f32 = 0.5;
const INPUT_GAIN: f32 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channels at the top level; doubled at every level below.
    pub base_width: usize,
    /// Number of 2×2 downsampling steps.
    pub depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_width: 16,
            depth: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.depth == 0 || self.depth > 8 {
            return Err(Error::Config(
                "model needs base_width >= 1 and depth in 1..=8".into(),
            ));
        }
        Ok(())
    }

    /// Input sides are padded up to a multiple of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Arch {
    enc: Vec<(Conv, Conv)>,
    mid: (Conv, Conv),
    dec: Vec<(UpConv, Conv, Conv)>,
    head: Conv,
    n_params: usize,
}

impl Arch {
    fn new(cfg: &ModelConfig, in_c: usize, out_c: usize) -> Self {
        let mut off = 0;
        let mut conv = |cin, cout, k| {
            let c = Conv {
                cin,
                cout,
                k,
                w_off: off,
                b_off: off + cout * cin * k * k,
            };
            off = c.b_off + cout;
            c
        };
        let widths: Vec<usize> = (0..cfg.depth).map(|l| cfg.base_width << l).collect();
        let mut enc = Vec::new();
        let mut cin = in_c;
        for &w in &widths {
            enc.push((conv(cin, w, 3), conv(w, w, 3)));
            cin = w;
        }
        let bottom = cfg.base_width << cfg.depth;
        let mid = (conv(cin, bottom, 3), conv(bottom, bottom, 3));
        let mut dec = Vec::new();
        let mut prev = bottom;
        for &w in widths.iter().rev() {
            let up_w = off;
            let up = UpConv {
                cin: prev,
                cout: w,
                w_off: up_w,
                b_off: up_w + w * 4 * prev,
            };
            off = up.b_off + w;
            let mut conv = |cin, cout, k| {
                let c = Conv {
                    cin,
                    cout,
                    k,
                    w_off: off,
                    b_off: off + cout * cin * k * k,
                };
                off = c.b_off + cout;
                c
            };
            let c1 = conv(2 * w, w, 3);
            let c2 = conv(w, w, 3);
            dec.push((up, c1, c2));
            prev = w;
        }
        let head = Conv {
            cin: cfg.base_width,
            cout: out_c,
            k: 1,
            w_off: off,
            b_off: off + out_c * cfg.base_width,
        };
        off = head.b_off + out_c;
        Self {
            enc,
            mid,
            dec,
            head,
            n_params: off,
        }
    }
}

struct EncAct {
    input: Tensor,
    a1: Tensor,
    a2: Tensor,
    pool_idx: Vec<u32>,
}

struct DecAct {
    up_in: Tensor,
    cat: Tensor,
    d1: Tensor,
    d2: Tensor,
}

struct Activations {
    enc: Vec<EncAct>,
    mid_in: Tensor,
    m1: Tensor,
    m2: Tensor,
    dec: Vec<DecAct>,
    logits: Tensor,
}

fn conv_relu(c: &Conv, p: &[f32], x: &Tensor) -> Tensor {
    let mut y = c.forward(p, x);
    relu_inplace(&mut y);
    y
}

/// Default segmentation backend.
#[derive(Debug, Clone)]
pub struct UNet {
    cfg: ModelConfig,
    num_channels: usize,
    arch: Arch,
    params: Vec<f32>,
    adam: AdamConfig,
    m: Vec<f32>,
    v: Vec<f32>,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    in_channels: usize,
    num_channels: usize,
    n_params: usize,
    adam: AdamConfig,
    step: u64,
}

impl UNet {
    /// He-initialized network for `num_channels` output classes (K + 1).
    pub fn new(cfg: ModelConfig, num_channels: usize, adam: AdamConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if num_channels < 2 {
            return Err(Error::Config("need at least 2 output channels".into()));
        }
        let arch = Arch::new(&cfg, 1, num_channels);
        let mut params = vec![0.0f32; arch.n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |off: usize, n: usize, fan_in: usize, params: &mut [f32]| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            for p in &mut params[off..off + n] {
                *p = normal.sample(&mut rng) as f32;
            }
        };
        let convs: Vec<Conv> = arch
            .enc
            .iter()
            .flat_map(|(a, b)| [*a, *b])
            .chain([arch.mid.0, arch.mid.1])
            .chain(arch.dec.iter().flat_map(|(_, a, b)| [*a, *b]))
            .collect();
        for c in convs {
            fill(c.w_off, c.n_weights(), c.cin * c.k * c.k, &mut params);
        }
        for (up, _, _) in &arch.dec {
            fill(up.w_off, up.n_weights(), up.cin, &mut params);
        }
        // Head uses a Xavier-style scale so initial logits stay near zero.
        fill(arch.head.w_off, arch.head.n_weights(), 2 * arch.head.cin, &mut params);
        let n = arch.n_params;
        Ok(Self {
            cfg,
            num_channels,
            arch,
            params,
            adam,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        })
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let (header, params, m, v) = read_checkpoint(path)?;
        let mut net = Self::new(header.model, header.num_channels, header.adam, 0)?;
        if net.arch.n_params != header.n_params {
            return Err(Error::Checkpoint("parameter count mismatch".into()));
        }
        net.params = params;
        net.m = m;
        net.v = v;
        net.step = header.step;
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.step
    }

    /// Reflect-pads (bottom/right) to the network's size multiple.
    fn pad_input(&self, image: &GrayImage) -> Tensor {
        let m = self.cfg.size_multiple();
        let hp = image.height.div_ceil(m) * m;
        let wp = image.width.div_ceil(m) * m;
        let mut t = Tensor::zeros(1, hp, wp);
        for y in 0..hp {
            let sy = reflect_index(y as isize, image.height);
            for x in 0..wp {
                let sx = reflect_index(x as isize, image.width);
                t.data[y * wp + x] = (image.get(sy, sx) - INPUT_CENTER) * INPUT_GAIN;
            }
        }
        t
    }

    fn run_forward(&self, input: Tensor) -> Activations {
        let p = &self.params;
        let mut enc = Vec::with_capacity(self.arch.enc.len());
        let mut x = input;
        for (c1, c2) in &self.arch.enc {
            let a1 = conv_relu(c1, p, &x);
            let a2 = conv_relu(c2, p, &a1);
            let (pooled, pool_idx) = maxpool2(&a2);
            enc.push(EncAct {
                input: x,
                a1,
                a2,
                pool_idx,
            });
            x = pooled;
        }
        let m1 = conv_relu(&self.arch.mid.0, p, &x);
        let m2 = conv_relu(&self.arch.mid.1, p, &m1);
        let mut dec = Vec::with_capacity(self.arch.dec.len());
        let mut cur = m2.clone();
        for (i, (up, c1, c2)) in self.arch.dec.iter().enumerate() {
            let skip = &enc[enc.len() - 1 - i].a2;
            let upped = up.forward(p, &cur);
            let cat = Tensor::concat(skip, &upped);
            let d1 = conv_relu(c1, p, &cat);
            let d2 = conv_relu(c2, p, &d1);
            dec.push(DecAct {
                up_in: cur,
                cat,
                d1,
                d2: d2.clone(),
            });
            cur = d2;
        }
        let logits = self.arch.head.forward(p, &cur);
        Activations {
            enc,
            mid_in: x,
            m1,
            m2,
            dec,
            logits,
        }
    }

    fn run_backward(&self, acts: &Activations, glogits: &Tensor) -> Vec<f32> {
        let p = &self.params;
        let mut grads = vec![0.0f32; self.arch.n_params];
        let last = &acts.dec.last().expect("depth >= 1").d2;
        let mut g = self.arch.head.backward(p, last, glogits, &mut grads);
        let depth = self.arch.enc.len();
        let mut skip_grads: Vec<Option<Tensor>> = (0..depth).map(|_| None).collect();
        for (i, (up, c1, c2)) in self.arch.dec.iter().enumerate().rev() {
            let act = &acts.dec[i];
            relu_backward(&act.d2, &mut g);
            let mut g1 = c2.backward(p, &act.d1, &g, &mut grads);
            relu_backward(&act.d1, &mut g1);
            let gcat = c1.backward(p, &act.cat, &g1, &mut grads);
            let skip_c = self.arch.enc[depth - 1 - i].1.cout;
            let (gskip, gup) = gcat.split(skip_c);
            skip_grads[depth - 1 - i] = Some(gskip);
            g = up.backward(p, &act.up_in, &gup, &mut grads);
        }
        relu_backward(&acts.m2, &mut g);
        let mut g1 = self.arch.mid.1.backward(p, &acts.m1, &g, &mut grads);
        relu_backward(&acts.m1, &mut g1);
        g = self.arch.mid.0.backward(p, &acts.mid_in, &g1, &mut grads);
        for (level, (c1, c2)) in self.arch.enc.iter().enumerate().rev() {
            let act = &acts.enc[level];
            let shape = (act.a2.c, act.a2.h, act.a2.w);
            let mut ga2 = maxpool2_backward(shape, &act.pool_idx, &g);
            if let Some(s) = skip_grads[level].take() {
                for (a, b) in ga2.data.iter_mut().zip(&s.data) {
                    *a += b;
                }
            }
            relu_backward(&act.a2, &mut ga2);
            let mut ga1 = c2.backward(p, &act.a1, &ga2, &mut grads);
            relu_backward(&act.a1, &mut ga1);
            g = c1.backward(p, &act.input, &ga1, &mut grads);
        }
        grads
    }

    /// Softmax over the cropped `height × width` window of padded logits.
    fn softmax_crop(&self, logits: &Tensor, height: usize, width: usize) -> ProbabilityMap {
        let c = logits.c;
        let hw = logits.hw();
        let mut data = Vec::with_capacity(height * width * c);
        let mut z = vec![0.0f64; c];
        for y in 0..height {
            for x in 0..width {
                let j = y * logits.w + x;
                for (k, zk) in z.iter_mut().enumerate() {
                    *zk = f64::from(logits.data[k * hw + j]);
                }
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for zk in z.iter_mut() {
                    *zk = (*zk - max).exp();
                    sum += *zk;
                }
                data.extend(z.iter().map(|e| e / sum));
            }
        }
        ProbabilityMap {
            height,
            width,
            channels: c,
            data,
        }
    }

    fn sample_grad(&self, sample: &TrainSample<'_>, loss: &LossConfig) -> Result<(StepStats, Vec<f32>)> {
        let img = sample.image;
        let acts = self.run_forward(self.pad_input(img));
        let probs = self.softmax_crop(&acts.logits, img.height, img.width);
        let lg = combined_loss_grad(&probs, sample.target, sample.has_pixel_gt, loss)?;
        let c = probs.channels;
        let t = &sample.target.data;
        // Cross-entropy goes through the softmax in fused form, p - t, so a
        // saturated pixel still receives gradient.
        let dice_grad = (sample.has_pixel_gt && loss.dice_weight != 0.0)
            .then(|| kernel::dice_grad(&probs.data, t, c, loss.dice_smoothing));
        let n = (img.height * img.width) as f64;
        let (hp, wp) = (acts.logits.h, acts.logits.w);
        let mut glogits = Tensor::zeros(c, hp, wp);
        for y in 0..img.height {
            for x in 0..img.width {
                let j = y * img.width + x;
                let pj = probs.pixel(j);
                let tj = &t[j * c..(j + 1) * c];
                let dj = dice_grad.as_ref().map(|g| &g[j * c..(j + 1) * c]);
                let s: f64 = dj.map_or(0.0, |d| pj.iter().zip(d).map(|(p, g)| p * g).sum());
                for k in 0..c {
                    let ce = (pj[k] - tj[k]) / n;
                    let dice = dj.map_or(0.0, |d| loss.dice_weight * pj[k] * (d[k] - s));
                    glogits.data[k * hp * wp + y * wp + x] = (ce + dice) as f32;
                }
            }
        }
        let grads = self.run_backward(&acts, &glogits);
        Ok((
            StepStats {
                loss: lg.value,
                cross_entropy: lg.cross_entropy,
            },
            grads,
        ))
    }

    /// Mean loss and parameter gradient over `batch` without updating.
    pub fn batch_gradient(&self, batch: &[TrainSample<'_>], loss: &LossConfig) -> Result<(StepStats, Vec<f32>)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let per_sample: Vec<(StepStats, Vec<f32>)> = batch
            .par_iter()
            .map(|s| self.sample_grad(s, loss))
            .collect::<Result<_>>()?;
        let n = batch.len() as f32;
        let mut total = vec![0.0f32; self.arch.n_params];
        let mut stats = StepStats {
            loss: 0.0,
            cross_entropy: 0.0,
        };
        // Fixed summation order keeps results independent of thread count.
        for (s, g) in &per_sample {
            stats.loss += s.loss;
            stats.cross_entropy += s.cross_entropy;
            for (t, gi) in total.iter_mut().zip(g) {
                *t += gi;
            }
        }
        for t in &mut total {
            *t /= n;
        }
        stats.loss /= f64::from(n);
        stats.cross_entropy /= f64::from(n);
        Ok((stats, total))
    }

    fn adam_update(&mut self, grads: &[f32]) {
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.adam;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..self.params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            self.params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

impl ModelBackend for UNet {
    fn num_channels(&self) -> usize {
        self.num_channels
    }

    fn forward(&self, image: &GrayImage) -> Result<ProbabilityMap> {
        if image.height == 0 || image.width == 0 {
            return Err(Error::EmptyImage);
        }
        let acts = self.run_forward(self.pad_input(image));
        Ok(self.softmax_crop(&acts.logits, image.height, image.width))
    }

    fn train_step(&mut self, batch: &[TrainSample<'_>], loss: &LossConfig) -> Result<StepStats> {
        let (stats, grads) = self.batch_gradient(batch, loss)?;
        if stats.loss.is_finite() && grads.iter().all(|g| g.is_finite()) {
            self.adam_update(&grads);
        }
        Ok(stats)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            model: self.cfg,
            in_channels: 1,
            num_channels: self.num_channels,
            n_params: self.arch.n_params,
            adam: self.adam,
            step: self.step,
        };
        let header_json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(16 + header_json.len() + 12 * self.params.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header_json);
        for v in [&self.params, &self.m, &self.v] {
            for x in v.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        crate::util::write_atomic(path, &buf)
    }

    fn load(&mut self, path: &Path) -> Result<()> {
        let loaded = Self::from_checkpoint(path)?;
        if loaded.num_channels != self.num_channels {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} classes, model expects {}",
                loaded.num_channels, self.num_channels
            )));
        }
        *self = loaded;
        Ok(())
    }

    fn parameter_count(&self) -> usize {
        self.arch.n_params
    }
}

type CheckpointParts = (CheckpointHeader, Vec<f32>, Vec<f32>, Vec<f32>);

fn read_checkpoint(path: &Path) -> Result<CheckpointParts> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .at(path)?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a UNet checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(
        bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?,
    )
    .map_err(|e| bad(&e.to_string()))?;
    let n = header.n_params;
    let body = &bytes[16 + hlen..];
    if body.len() != 3 * 4 * n {
        return Err(bad("truncated parameter block"));
    }
    let floats: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let params = floats[..n].to_vec();
    let m = floats[n..2 * n].to_vec();
    let v = floats[2 * n..].to_vec();
    Ok((header, params, m, v))
}
