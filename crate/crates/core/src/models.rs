//! The LSTM-VAE over sequential skeleton maps and the single-frame AE/VAE
//! baselines, built on the tensorcore tape.
//!
//! Batches are laid out time-major: frame `t` of sample `b` is row
//! `t * batch + b` of a `[T * batch, 1, S, S]` tensor, so the per-frame CNN
//! runs once over the whole batch and each LSTM step reads a contiguous
//! block of rows.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use skelmap_tensor::{bce_sum_values, kl_term_values, BatchNormStats, LstmCell, Mode, ParamStore, Tape, Tensor, Var};

use crate::dataset::{Reader, SequentialSkeletonMap};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::poseio::IMAGE_SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    #[serde(rename = "lstmvae")]
    LstmVae,
    Ae,
    Vae,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::LstmVae => "lstmvae",
            Architecture::Ae => "ae",
            Architecture::Vae => "vae",
        }
    }

    /// `true` for the sequence model, `false` for the per-frame baselines.
    pub fn consumes_windows(self) -> bool {
        self == Architecture::LstmVae
    }

    /// Whether the model has a posterior (and therefore a KL term).
    pub fn is_variational(self) -> bool {
        self != Architecture::Ae
    }

    /// Frames per input sample.
    pub fn input_frames(self, config: &ModelConfig) -> usize {
        if self.consumes_windows() {
            config.window
        } else {
            1
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstmvae" => Ok(Architecture::LstmVae),
            "ae" => Ok(Architecture::Ae),
            "vae" => Ok(Architecture::Vae),
            other => Err(Error::Config(format!("unknown model {other:?} (expected lstmvae, ae or vae)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Latent dimension J.
    pub latent_dim: usize,
    /// Window length T; ignored by the per-frame baselines.
    pub window: usize,
    pub lstm_hidden: usize,
    pub feature_dim: usize,
    /// Input side length; must be divisible by 4.
    pub image_side: usize,
    /// Output channels of the two stride-2 encoder convolutions.
    pub conv_channels: [usize; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            window: 30,
            lstm_hidden: 300,
            feature_dim: 256,
            image_side: IMAGE_SIDE,
            conv_channels: [16, 32],
        }
    }
}

impl ModelConfig {
    /// T = 2, 8x8 inputs, J = 2, hidden 8: small enough for finite-difference
    /// gradient checks of the full model.
    pub fn tiny() -> Self {
        Self {
            latent_dim: 2,
            window: 2,
            lstm_hidden: 8,
            feature_dim: 6,
            image_side: 8,
            conv_channels: [2, 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.latent_dim == 0 {
            return bad("latent dimension must be at least 1".into());
        }
        if self.lstm_hidden < self.latent_dim {
            return bad(format!(
                "LSTM hidden size {} is smaller than the latent dimension {}",
                self.lstm_hidden, self.latent_dim
            ));
        }
        if self.window < 2 {
            return bad(format!("window length must be at least 2, got {}", self.window));
        }
        if self.image_side == 0 || !self.image_side.is_multiple_of(4) {
            return bad(format!("image side {} is not a positive multiple of 4", self.image_side));
        }
        if self.feature_dim == 0 || self.conv_channels.contains(&0) {
            return bad("feature and channel widths must be positive".into());
        }
        Ok(())
    }

    fn flat_dim(&self) -> usize {
        let q = self.image_side / 4;
        self.conv_channels[1] * q * q
    }

    /// Values per input sample (`D` in the loss).
    pub fn elements(&self, arch: Architecture) -> usize {
        arch.input_frames(self) * self.image_side * self.image_side
    }
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// Per-pixel probabilities, `[T * batch, 1, S, S]`.
    pub recon: Var,
    pub mu: Option<Var>,
    pub log_var: Option<Var>,
}

/// Parameters plus batch-norm running statistics of one model.
#[derive(Clone, Debug)]
pub struct Model {
    arch: Architecture,
    config: ModelConfig,
    params: ParamStore,
    bn: BTreeMap<String, BatchNormStats>,
}

/// Equal when everything a checkpoint stores matches; accumulated
/// gradients are scratch state and ignored.
impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.config == other.config
            && self.bn == other.bn
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(other.params.iter())
                .all(|((_, a), (_, b))| a.name() == b.name() && a.value == b.value)
    }
}

fn uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    Ok(Tensor::uniform(shape, (1.0 / fan_in as f64).sqrt(), rng)?)
}

fn add_linear(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    store.add(format!("{name}.w"), uniform(&[out, inp], inp, rng)?)?;
    store.add(format!("{name}.b"), uniform(&[out], inp, rng)?)?;
    Ok(())
}

fn add_conv(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    store.add(format!("{name}.k"), uniform(&[cout, cin, 3, 3], cin * 9, rng)?)?;
    store.add(format!("{name}.b"), uniform(&[cout], cin * 9, rng)?)?;
    Ok(())
}

fn add_deconv(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    store.add(format!("{name}.k"), uniform(&[cin, cout, 3, 3], cout * 9, rng)?)?;
    store.add(format!("{name}.b"), uniform(&[cout], cout * 9, rng)?)?;
    Ok(())
}

fn add_bn(store: &mut ParamStore, bn: &mut BTreeMap<String, BatchNormStats>, name: &str, c: usize) -> Result<()> {
    store.add(format!("{name}.gamma"), Tensor::ones(&[c])?)?;
    store.add(format!("{name}.beta"), Tensor::zeros(&[c])?)?;
    bn.insert(name.to_string(), BatchNormStats::new(c));
    Ok(())
}

const FORGET_BIAS: f64 = 1.0;

/// Borrowed view of a model used while building a graph.
struct Net<'a> {
    arch: Architecture,
    config: &'a ModelConfig,
    params: &'a ParamStore,
    bn: &'a mut BTreeMap<String, BatchNormStats>,
}

impl Net<'_> {
    fn p(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        Ok(tape.param(self.params, self.params.id(name)?))
    }

    fn linear(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let w = self.p(tape, &format!("{name}.w"))?;
        let b = self.p(tape, &format!("{name}.b"))?;
        Ok(tape.linear(x, w, Some(b))?)
    }

    fn batchnorm(&mut self, tape: &mut Tape, x: Var, name: &str, mode: Mode) -> Result<Var> {
        let gamma = self.p(tape, &format!("{name}.gamma"))?;
        let beta = self.p(tape, &format!("{name}.beta"))?;
        let stats = self
            .bn
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing batch-norm statistics {name}")))?;
        Ok(tape.batchnorm(x, gamma, beta, stats, mode)?)
    }

    /// `[N, 1, S, S]` -> `[N, feature_dim]`.
    fn frame_encoder(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let n = tape.value(x).shape()[0];
        let mut h = x;
        for (conv, bn) in [("enc.conv1", "enc.bn1"), ("enc.conv2", "enc.bn2")] {
            let k = self.p(tape, &format!("{conv}.k"))?;
            let b = self.p(tape, &format!("{conv}.b"))?;
            h = tape.conv2d(h, k, b, 2, 1)?;
            h = self.batchnorm(tape, h, bn, mode)?;
            h = tape.relu(h);
        }
        let flat = tape.reshape(h, &[n, self.config.flat_dim()])?;
        let f = self.linear(tape, flat, "enc.fc")?;
        Ok(tape.relu(f))
    }

    /// `[N, flat]` -> `[N, 1, S, S]` probabilities.
    fn frame_decoder(&mut self, tape: &mut Tape, flat: Var, mode: Mode) -> Result<Var> {
        let n = tape.value(flat).shape()[0];
        let q = self.config.image_side / 4;
        let h = tape.relu(flat);
        let h = tape.reshape(h, &[n, self.config.conv_channels[1], q, q])?;
        let k1 = self.p(tape, "dec.deconv1.k")?;
        let b1 = self.p(tape, "dec.deconv1.b")?;
        let h = tape.conv_transpose2d(h, k1, b1, 2, 1, 1)?;
        let h = self.batchnorm(tape, h, "dec.bn1", mode)?;
        let h = tape.relu(h);
        let k2 = self.p(tape, "dec.deconv2.k")?;
        let b2 = self.p(tape, "dec.deconv2.b")?;
        let logits = tape.conv_transpose2d(h, k2, b2, 2, 1, 1)?;
        Ok(tape.logistic(logits))
    }

    fn encode(&mut self, tape: &mut Tape, input: Var, batch: usize, mode: Mode) -> Result<(Var, Option<Var>)> {
        let feats = self.frame_encoder(tape, input, mode)?;
        match self.arch {
            Architecture::Ae => Ok((self.linear(tape, feats, "enc.code")?, None)),
            Architecture::Vae => {
                let mu = self.linear(tape, feats, "enc.mu")?;
                let lv = self.linear(tape, feats, "enc.logvar")?;
                Ok((mu, Some(lv)))
            }
            Architecture::LstmVae => {
                let cell = LstmCell::lookup(self.params, "enc.lstm")?;
                let zeros = Tensor::zeros(&[batch, cell.hidden])?;
                let mut h = tape.constant(zeros.clone());
                let mut c = tape.constant(zeros);
                for t in 0..self.config.window {
                    let x = tape.row_slice(feats, t * batch, batch)?;
                    (h, c) = cell.step(tape, self.params, x, h, c)?;
                }
                let mu = self.linear(tape, h, "enc.mu")?;
                let lv = self.linear(tape, h, "enc.logvar")?;
                Ok((mu, Some(lv)))
            }
        }
    }

    fn decode(&mut self, tape: &mut Tape, z: Var, mode: Mode) -> Result<Var> {
        match self.arch {
            Architecture::Ae | Architecture::Vae => {
                let h = self.linear(tape, z, "dec.fc1")?;
                let h = tape.relu(h);
                let flat = self.linear(tape, h, "dec.fc")?;
                self.frame_decoder(tape, flat, mode)
            }
            Architecture::LstmVae => {
                let batch = tape.value(z).shape()[0];
                let cell = LstmCell::lookup(self.params, "dec.lstm")?;
                let init = self.linear(tape, z, "dec.init")?;
                let proj = tape.tanh(init);
                let mut h = proj;
                let mut c = tape.constant(Tensor::zeros(&[batch, cell.hidden])?);
                let mut steps = Vec::with_capacity(self.config.window);
                for _ in 0..self.config.window {
                    (h, c) = cell.step(tape, self.params, proj, h, c)?;
                    steps.push(h);
                }
                let all = tape.concat_rows(&steps)?;
                let flat = self.linear(tape, all, "dec.fc")?;
                self.frame_decoder(tape, flat, mode)
            }
        }
    }
}

/// `z = mu + exp(log_var / 2) * noise`.
pub fn sample_latent(tape: &mut Tape, mu: Var, log_var: Var, noise: &Tensor) -> Result<Var> {
    let half = tape.scale(log_var, 0.5);
    let sigma = tape.exp(half);
    let eps = tape.constant(noise.clone());
    let spread = tape.mul(sigma, eps)?;
    Ok(tape.add(mu, spread)?)
}

impl Model {
    /// A freshly initialized model: uniform weights in `±sqrt(1 / fan_in)`,
    /// batch-norm scale 1 and shift 0, LSTM forget-gate bias 1.
    pub fn new(arch: Architecture, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut bn = BTreeMap::new();
        let [c1, c2] = config.conv_channels;
        let (flat, feat, j, hid) = (config.flat_dim(), config.feature_dim, config.latent_dim, config.lstm_hidden);
        let r = &mut rng;
        add_conv(&mut params, "enc.conv1", 1, c1, r)?;
        add_bn(&mut params, &mut bn, "enc.bn1", c1)?;
        add_conv(&mut params, "enc.conv2", c1, c2, r)?;
        add_bn(&mut params, &mut bn, "enc.bn2", c2)?;
        add_linear(&mut params, "enc.fc", flat, feat, r)?;
        match arch {
            Architecture::LstmVae => {
                LstmCell::register(&mut params, "enc.lstm", feat, hid, FORGET_BIAS, r)?;
                add_linear(&mut params, "enc.mu", hid, j, r)?;
                add_linear(&mut params, "enc.logvar", hid, j, r)?;
                add_linear(&mut params, "dec.init", j, hid, r)?;
                LstmCell::register(&mut params, "dec.lstm", hid, hid, FORGET_BIAS, r)?;
                add_linear(&mut params, "dec.fc", hid, flat, r)?;
            }
            Architecture::Ae | Architecture::Vae => {
                if arch == Architecture::Ae {
                    add_linear(&mut params, "enc.code", feat, j, r)?;
                } else {
                    add_linear(&mut params, "enc.mu", feat, j, r)?;
                    add_linear(&mut params, "enc.logvar", feat, j, r)?;
                }
                add_linear(&mut params, "dec.fc1", j, feat, r)?;
                add_linear(&mut params, "dec.fc", feat, flat, r)?;
            }
        }
        add_deconv(&mut params, "dec.deconv1", c2, c1, r)?;
        add_bn(&mut params, &mut bn, "dec.bn1", c1)?;
        add_deconv(&mut params, "dec.deconv2", c1, 1, r)?;
        Ok(Self {
            arch,
            config,
            params,
            bn,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn batchnorm_stats(&self) -> &BTreeMap<String, BatchNormStats> {
        &self.bn
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Sets every parameter (batch-norm scale and shift included) to zero.
    pub fn zero_parameters(&mut self) {
        let ids: Vec<_> = self.params.iter().map(|(id, _)| id).collect();
        for id in ids {
            self.params.get_mut(id).value.fill(0.0);
        }
    }

    fn net(&mut self) -> Net<'_> {
        Net {
            arch: self.arch,
            config: &self.config,
            params: &self.params,
            bn: &mut self.bn,
        }
    }

    fn check_input(&self, input: &Tensor, batch: usize) -> Result<()> {
        let s = self.config.image_side;
        let rows = self.arch.input_frames(&self.config) * batch;
        if batch == 0 || input.shape() != [rows, 1, s, s] {
            return Err(Error::Contract(format!(
                "{} input must be [{rows}, 1, {s}, {s}] for a batch of {batch}, got {:?}",
                self.arch,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Posterior (or AE code) for a packed batch.
    pub fn encode(&mut self, tape: &mut Tape, input: &Tensor, batch: usize, mode: Mode) -> Result<(Var, Option<Var>)> {
        self.check_input(input, batch)?;
        let x = tape.constant(input.clone());
        self.net().encode(tape, x, batch, mode)
    }

    /// Reconstruction probabilities from latents `[batch, J]`.
    pub fn decode(&mut self, tape: &mut Tape, z: Var, mode: Mode) -> Result<Var> {
        let shape = tape.value(z).shape();
        if shape.len() != 2 || shape[1] != self.config.latent_dim {
            return Err(Error::Contract(format!(
                "latent must be [batch, {}], got {shape:?}",
                self.config.latent_dim
            )));
        }
        self.net().decode(tape, z, mode)
    }

    /// Encode, sample with `noise` (`[batch, J]`; `None` means `z = mu`), decode.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        input: &Tensor,
        batch: usize,
        noise: Option<&Tensor>,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let (mu, log_var) = self.encode(tape, input, batch, mode)?;
        let z = match (log_var, noise) {
            (Some(lv), Some(eps)) => {
                if eps.shape() != [batch, self.config.latent_dim] {
                    return Err(Error::Contract(format!(
                        "noise must be [{batch}, {}], got {:?}",
                        self.config.latent_dim,
                        eps.shape()
                    )));
                }
                sample_latent(tape, mu, lv, eps)?
            }
            _ => mu,
        };
        let recon = self.decode(tape, z, mode)?;
        Ok(ForwardOutput {
            recon,
            mu: log_var.map(|_| mu),
            log_var,
        })
    }

    /// Batch-mean training loss `-(kl_term + bce_sum) / batch`; the AE has no
    /// KL term.
    pub fn loss(
        &mut self,
        tape: &mut Tape,
        input: &Tensor,
        batch: usize,
        noise: Option<&Tensor>,
        mode: Mode,
    ) -> Result<(Var, ForwardOutput)> {
        let out = self.forward(tape, input, batch, noise, mode)?;
        let mut total = tape.bce_sum(input, out.recon)?;
        if let (Some(mu), Some(lv)) = (out.mu, out.log_var) {
            let kl = tape.kl_term(mu, lv)?;
            total = tape.add(total, kl)?;
        }
        Ok((tape.scale(total, -1.0 / batch as f64), out))
    }

    /// Eval-mode posterior means, one row of `J` values per sample. Errors
    /// for the AE, which has no posterior.
    pub fn posterior_means(&self, input: &Tensor, batch: usize) -> Result<Vec<Vec<f64>>> {
        if !self.arch.is_variational() {
            return Err(Error::Incompatible("an ae checkpoint has no latent posterior".into()));
        }
        let mut scratch = self.clone_for_eval();
        let mut tape = Tape::new();
        let (mu, _) = scratch.encode(&mut tape, input, batch, Mode::Eval)?;
        Ok(tape
            .value(mu)
            .data()
            .chunks_exact(self.config.latent_dim)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Eval-mode anomaly scores with `z = mu`: `-bce_sum / D` per sample,
    /// minus `kl_term / D` when `with_kl` is set.
    pub fn score_packed(&self, input: &Tensor, batch: usize, with_kl: bool) -> Result<Vec<f64>> {
        let mut scratch = self.clone_for_eval();
        let mut tape = Tape::new();
        let out = scratch.forward(&mut tape, input, batch)?;
        let frames = self.arch.input_frames(&self.config);
        let pix = self.config.image_side * self.config.image_side;
        let d = (frames * pix) as f64;
        let pred = tape.value(out.recon).data();
        let target = input.data();
        let mut scores = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut bce = 0.0;
            for t in 0..frames {
                let row = (t * batch + b) * pix;
                bce += bce_sum_values(&target[row..row + pix], &pred[row..row + pix]);
            }
            let mut score = -bce / d;
            if with_kl {
                if let (Some(mu), Some(lv)) = (out.mu, out.log_var) {
                    let j = self.config.latent_dim;
                    let m = &tape.value(mu).data()[b * j..(b + 1) * j];
                    let l = &tape.value(lv).data()[b * j..(b + 1) * j];
                    score -= kl_term_values(m, l) / d;
                }
            }
            scores.push(score);
        }
        Ok(scores)
    }

    /// Scores windows in chunks of `chunk`, in order.
    pub fn score_windows(&self, windows: &[&SequentialSkeletonMap], with_kl: bool, chunk: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(windows.len());
        for part in windows.chunks(chunk.max(1)) {
            let input = pack_windows(part, self.arch.input_frames(&self.config))?;
            out.extend(self.score_packed(&input, part.len(), with_kl)?);
        }
        Ok(out)
    }

    /// Eval mode never writes batch-norm statistics, but the tape API takes
    /// them mutably; scoring works on a copy so `&self` suffices.
    fn clone_for_eval(&self) -> EvalModel<'_> {
        EvalModel {
            model: self,
            bn: self.bn.clone(),
        }
    }
}

struct EvalModel<'a> {
    model: &'a Model,
    bn: BTreeMap<String, BatchNormStats>,
}

impl EvalModel<'_> {
    fn net(&mut self) -> Net<'_> {
        Net {
            arch: self.model.arch,
            config: &self.model.config,
            params: &self.model.params,
            bn: &mut self.bn,
        }
    }

    fn encode(&mut self, tape: &mut Tape, input: &Tensor, batch: usize, mode: Mode) -> Result<(Var, Option<Var>)> {
        self.model.check_input(input, batch)?;
        let x = tape.constant(input.clone());
        self.net().encode(tape, x, batch, mode)
    }

    fn forward(&mut self, tape: &mut Tape, input: &Tensor, batch: usize) -> Result<ForwardOutput> {
        let (mu, log_var) = self.encode(tape, input, batch, Mode::Eval)?;
        let recon = self.net().decode(tape, mu, Mode::Eval)?;
        Ok(ForwardOutput {
            recon,
            mu: log_var.map(|_| mu),
            log_var,
        })
    }
}

/// Packs windows of `frames` 28x28 frames each into a time-major
/// `[frames * n, 1, 28, 28]` tensor of 0/1 values.
pub fn pack_windows(windows: &[&SequentialSkeletonMap], frames: usize) -> Result<Tensor> {
    let n = windows.len();
    if n == 0 {
        return Err(Error::Contract("cannot pack an empty batch".into()));
    }
    if let Some(w) = windows.iter().find(|w| w.len() != frames) {
        return Err(Error::Contract(format!(
            "window {}:{} has {} frames, the model expects {frames}",
            w.segment_id(),
            w.start_frame(),
            w.len()
        )));
    }
    let pix = IMAGE_SIDE * IMAGE_SIDE;
    let mut data = vec![0.0; frames * n * pix];
    for (b, w) in windows.iter().enumerate() {
        for t in 0..frames {
            let row = (t * n + b) * pix;
            for (dst, &src) in data[row..row + pix].iter_mut().zip(w.frame(t)) {
                *dst = f64::from(src);
            }
        }
    }
    Ok(Tensor::new(&[frames * n, 1, IMAGE_SIDE, IMAGE_SIDE], data)?)
}

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"SKWTv01";

/// A model plus training metadata, persisted in a checksummed binary file.
///
/// Layout (little-endian): magic `SKWTv01`, architecture tag (u8 length +
/// bytes), config as six u32 (J, T, hidden, features, side, channels x2),
/// epochs u32, seed u64, tensor count u32 then per tensor name (u16 length +
/// bytes), rank u8, dims u32 each, f64 values; batch-norm count u32 then per
/// layer name, channels u32, momentum f64, epsilon f64, means, variances;
/// finally a CRC32 of everything before it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub model: Model,
    pub epochs: u32,
    pub seed: u64,
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn get_name(rd: &mut Reader<'_>) -> Result<String> {
    let n = rd.u16()? as usize;
    std::str::from_utf8(rd.take(n)?)
        .map(str::to_string)
        .map_err(|_| Error::Format("checkpoint name is not UTF-8".into()))
}

impl ModelCheckpoint {
    pub fn architecture(&self) -> Architecture {
        self.model.arch
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut out = Vec::with_capacity(m.parameter_count() * 8 + 4096);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let tag = m.arch.as_str();
        out.push(tag.len() as u8);
        out.extend_from_slice(tag.as_bytes());
        let c = &m.config;
        for v in [
            c.latent_dim,
            c.window,
            c.lstm_hidden,
            c.feature_dim,
            c.image_side,
            c.conv_channels[0],
            c.conv_channels[1],
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.epochs.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(m.params.len() as u32).to_le_bytes());
        for (_, p) in m.params.iter() {
            put_name(&mut out, p.name());
            out.push(p.value.rank() as u8);
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(m.bn.len() as u32).to_le_bytes());
        for (name, s) in &m.bn {
            put_name(&mut out, name);
            out.extend_from_slice(&(s.channels() as u32).to_le_bytes());
            out.extend_from_slice(&s.momentum.to_le_bytes());
            out.extend_from_slice(&s.epsilon.to_le_bytes());
            for v in s.mean.iter().chain(&s.var) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 7 || &bytes[..4] != b"SKWT" {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        if &bytes[..7] != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {:?}",
                String::from_utf8_lossy(&bytes[4..7])
            )));
        }
        if bytes.len() < 7 + 4 {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Format(format!(
                "checkpoint checksum mismatch (stored {stored:08x}, computed {actual:08x}); file is truncated or corrupt"
            )));
        }
        let mut rd = Reader::new(body);
        rd.take(7)?;
        let tag_len = rd.u8()? as usize;
        let tag = std::str::from_utf8(rd.take(tag_len)?).map_err(|_| Error::Format("architecture tag".into()))?;
        let arch: Architecture = tag
            .parse()
            .map_err(|_| Error::Format(format!("unknown architecture tag {tag:?}")))?;
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = rd.u32()? as usize;
        }
        let config = ModelConfig {
            latent_dim: dims[0],
            window: dims[1],
            lstm_hidden: dims[2],
            feature_dim: dims[3],
            image_side: dims[4],
            conv_channels: [dims[5], dims[6]],
        };
        config
            .validate()
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let epochs = rd.u32()?;
        let seed = rd.u64()?;
        // the structure is rebuilt from the config, then every stored tensor
        // must match it by name and shape
        let mut model = Model::new(arch, config, 0)?;
        let count = rd.u32()? as usize;
        if count != model.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} tensors, a {arch} model has {}",
                model.params.len()
            )));
        }
        for _ in 0..count {
            let name = get_name(&mut rd)?;
            let rank = rd.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(rd.u32()? as usize);
            }
            let id = model
                .params
                .id(&name)
                .map_err(|_| Error::Format(format!("unexpected tensor {name:?}")))?;
            let expected = model.params.get(id).value.shape().to_vec();
            if shape != expected {
                return Err(Error::Format(format!("tensor {name} has shape {shape:?}, expected {expected:?}")));
            }
            let n: usize = shape.iter().product();
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                values.push(rd.f64()?);
            }
            model.params.set_value(id, Tensor::new(&shape, values)?)?;
        }
        let bn_count = rd.u32()? as usize;
        if bn_count != model.bn.len() {
            return Err(Error::Format(format!("checkpoint holds {bn_count} batch-norm layers")));
        }
        for _ in 0..bn_count {
            let name = get_name(&mut rd)?;
            let channels = rd.u32()? as usize;
            let stats = model
                .bn
                .get_mut(&name)
                .ok_or_else(|| Error::Format(format!("unexpected batch-norm layer {name:?}")))?;
            if channels != stats.channels() {
                return Err(Error::Format(format!("batch-norm {name} has {channels} channels")));
            }
            stats.momentum = rd.f64()?;
            stats.epsilon = rd.f64()?;
            for i in 0..channels {
                stats.mean[i] = rd.f64()?;
            }
            for i in 0..channels {
                stats.var[i] = rd.f64()?;
            }
        }
        if rd.remaining() != 0 {
            return Err(Error::Format(format!("{} unexpected trailing bytes", rd.remaining())));
        }
        Ok(Self { model, epochs, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::io::read_bytes(path)?;
        Self::from_bytes(&bytes)
    }

    /// Errors unless the checkpoint holds the `expected` architecture.
    pub fn require(&self, expected: Architecture) -> Result<()> {
        if self.model.arch != expected {
            return Err(Error::Incompatible(format!(
                "checkpoint holds a {} model, {expected} was requested",
                self.model.arch
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_count_is_frozen() {
        let m = Model::new(Architecture::LstmVae, ModelConfig::default(), 0).unwrap();
        // summed layer by layer from the architecture description
        assert_eq!(m.parameter_count(), 2_287_661);
    }

    #[test]
    fn tiny_config_keeps_shape_contracts() {
        for arch in [Architecture::LstmVae, Architecture::Ae, Architecture::Vae] {
            let cfg = ModelConfig::tiny();
            let mut m = Model::new(arch, cfg.clone(), 1).unwrap();
            let frames = arch.input_frames(&cfg);
            let input = Tensor::zeros(&[frames * 3, 1, 8, 8]).unwrap();
            let mut tape = Tape::new();
            let out = m.forward(&mut tape, &input, 3, None, Mode::Train).unwrap();
            assert_eq!(tape.value(out.recon).shape(), &[frames * 3, 1, 8, 8]);
            if let Some(mu) = out.mu {
                assert_eq!(tape.value(mu).shape(), &[3, 2]);
            }
            let bad = Tensor::zeros(&[frames * 3 + 1, 1, 8, 8]).unwrap();
            assert!(matches!(
                m.forward(&mut Tape::new(), &bad, 3, None, Mode::Eval),
                Err(Error::Contract(_))
            ));
        }
    }

    #[test]
    fn config_validation() {
        let c = ModelConfig {
            lstm_hidden: 8,
            latent_dim: 16,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(ModelConfig {
            image_side: 30,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        assert_eq!("vae".parse::<Architecture>().unwrap(), Architecture::Vae);
        assert!("gan".parse::<Architecture>().is_err());
    }

    #[test]
    fn checkpoint_round_trip_tiny() {
        let m = Model::new(Architecture::Vae, ModelConfig::tiny(), 4).unwrap();
        let ck = ModelCheckpoint {
            model: m,
            epochs: 3,
            seed: 4,
        };
        let bytes = ck.to_bytes();
        assert_eq!(ModelCheckpoint::from_bytes(&bytes).unwrap(), ck);
        let mut bad = bytes.clone();
        bad[bytes.len() / 2] ^= 0x10;
        assert!(matches!(ModelCheckpoint::from_bytes(&bad), Err(Error::Format(_))));
        assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());
        assert!(matches!(ck.require(Architecture::Ae), Err(Error::Incompatible(_))));
    }
}
