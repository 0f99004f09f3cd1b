//! The 1-D generator and critic, the Wasserstein loss with gradient penalty,
//! and the adversarial training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    batch_norm1d, conv1d, conv1d_out_len, conv_transpose1d, conv_transpose1d_out_len,
    instance_norm1d, Mode, Reduction, RunningStats, Tape, Tensor,
};
use crate::checkpoint::{Checkpoint, CheckpointKind, RngState};
use crate::error::{Error, Result};
use crate::metrics;
use crate::optim::{AdamWHyper, AdamWState};
use crate::signal::{Condition, Segment, Source};

pub const LAYERS: usize = 5;
const INNER_KERNEL: usize = 4;
const STRIDE: usize = 2;
const INNER_PADDING: usize = 1;
const INIT_STD: f64 = 0.02;
/// Keeps the norm differentiable where the input gradient vanishes.
const GP_NORM_EPS: f64 = 1e-24;

/// Shapes shared by the generator, the critic, and the classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub seg_len: usize,
    pub z_channels: usize,
    /// Generator output channels per layer; the critic uses them in reverse.
    pub channel_widths: Vec<usize>,
    pub leaky_slope: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.channel_widths.len() != LAYERS {
            return Err(Error::Config(format!(
                "channel_widths needs {LAYERS} entries, got {}",
                self.channel_widths.len()
            )));
        }
        if self.channel_widths.contains(&0) || self.z_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.channel_widths[LAYERS - 1] != 1 {
            return Err(Error::Config(format!(
                "last generator width must be 1 (single-channel signal), got {}",
                self.channel_widths[LAYERS - 1]
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky slope must be in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        let k0 = self.seg_len / 16;
        if !self.seg_len.is_multiple_of(16) || k0 < 2 {
            let lens: Vec<String> = [1, k0, 2 * k0, 4 * k0, 8 * k0, 16 * k0]
                .iter()
                .map(|l| l.to_string())
                .collect();
            return Err(Error::Config(format!(
                "seg_len {} does not fit the layer length algebra: with first kernel {k0} the \
                 generator produces {} = {} samples (seg_len must be 16 * K0 with K0 >= 2)",
                self.seg_len,
                lens.join("->"),
                16 * k0
            )));
        }
        Ok(())
    }

    /// Kernel of the outermost layers.
    pub fn first_kernel(&self) -> usize {
        self.seg_len / 16
    }

    /// `(in_channels, out_channels, kernel, padding)` of each generator layer.
    fn generator_layers(&self) -> Vec<(usize, usize, usize, usize)> {
        let w = &self.channel_widths;
        (0..LAYERS)
            .map(|i| {
                let cin = if i == 0 { self.z_channels } else { w[i - 1] };
                if i == 0 {
                    (cin, w[0], self.first_kernel(), 0)
                } else {
                    (cin, w[i], INNER_KERNEL, INNER_PADDING)
                }
            })
            .collect()
    }

    /// `(in_channels, out_channels, kernel, padding)` of each critic layer.
    fn critic_layers(&self) -> Vec<(usize, usize, usize, usize)> {
        let w = &self.channel_widths;
        (0..LAYERS)
            .map(|i| {
                let cin = w[LAYERS - 1 - i];
                if i == LAYERS - 1 {
                    (cin, 1, self.first_kernel(), 0)
                } else {
                    (cin, w[LAYERS - 2 - i], INNER_KERNEL, INNER_PADDING)
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Score,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub z_channels: usize,
    pub z_length: usize,
    pub channel_widths: Vec<usize>,
    pub seg_len: usize,
    pub lr_generator: f64,
    pub lr_critic: f64,
    pub critic_iters: usize,
    pub lambda_gp: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub critic_dropout_p: f64,
    /// Initial std of the noise added to real critic inputs. `None` means
    /// 0.1 times the std of the training data.
    pub noise_sigma0: Option<f64>,
    pub leaky_slope: f64,
    /// Evaluate the FID trace every this many epochs (0 disables it). The
    /// first and last epochs are always evaluated when enabled.
    pub eval_interval: usize,
    /// Generated segments per FID evaluation.
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            z_channels: 100,
            z_length: 1,
            channel_widths: vec![256, 128, 64, 32, 1],
            seg_len: 1024,
            lr_generator: 5e-6,
            lr_critic: 2e-5,
            critic_iters: 12,
            lambda_gp: 20.0,
            minibatch: 64,
            epochs: 235,
            critic_dropout_p: 0.7,
            noise_sigma0: None,
            leaky_slope: 0.2,
            eval_interval: 1,
            eval_samples: 64,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            seg_len: self.seg_len,
            z_channels: self.z_channels,
            channel_widths: self.channel_widths.clone(),
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture().validate()?;
        if self.z_length != 1 {
            return Err(Error::Config(format!(
                "z_length must be 1 for the first transpose layer to emit K0 samples, got {}",
                self.z_length
            )));
        }
        let checks: [(bool, String); 7] = [
            (self.lr_generator >= 0.0 && self.lr_critic >= 0.0, "learning rates must be non-negative".into()),
            (self.critic_iters >= 1, "critic_iters must be at least 1".into()),
            (self.lambda_gp >= 0.0, "lambda_gp must be non-negative".into()),
            (self.minibatch >= 1, "minibatch must be at least 1".into()),
            (self.epochs >= 1, "epochs must be at least 1".into()),
            (
                (0.0..1.0).contains(&self.critic_dropout_p),
                format!("critic_dropout_p must be in [0, 1), got {}", self.critic_dropout_p),
            ),
            (
                self.noise_sigma0.is_none_or(|s| s >= 0.0),
                "noise_sigma0 must be non-negative".into(),
            ),
        ];
        match checks.into_iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config(msg)),
            None => Ok(()),
        }
    }
}

fn normal_tensor<R: Rng + ?Sized>(shape: &[usize], mean: f64, std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(mean, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

fn layer_params<R: Rng + ?Sized>(
    kernel_shape: [usize; 3],
    bias_len: usize,
    norm_channels: Option<usize>,
    rng: &mut R,
) -> Vec<Tensor> {
    let mut p = vec![
        normal_tensor(&kernel_shape, 0.0, INIT_STD, rng),
        Tensor::zeros(&[bias_len]),
    ];
    if let Some(c) = norm_channels {
        p.push(normal_tensor(&[c], 1.0, INIT_STD, rng));
        p.push(Tensor::zeros(&[c]));
    }
    p
}

fn layer_param_names(prefix: &str, norm: Option<&str>) -> Vec<String> {
    let mut names = Vec::new();
    for i in 0..LAYERS {
        names.push(format!("{prefix}.layer{}.kernel", i + 1));
        names.push(format!("{prefix}.layer{}.bias", i + 1));
        if let Some(n) = norm.filter(|_| has_norm(prefix, i)) {
            names.push(format!("{prefix}.layer{}.{n}.gamma", i + 1));
            names.push(format!("{prefix}.layer{}.{n}.beta", i + 1));
        }
    }
    names
}

fn has_norm(prefix: &str, layer: usize) -> bool {
    if prefix == "generator" {
        layer < LAYERS - 1
    } else {
        (1..LAYERS - 1).contains(&layer)
    }
}

/// Per-layer slice boundaries into a flat parameter list.
fn split_params<'a>(params: &'a [Tensor], prefix: &str) -> Vec<&'a [Tensor]> {
    let mut out = Vec::with_capacity(LAYERS);
    let mut at = 0;
    for i in 0..LAYERS {
        let n = if has_norm(prefix, i) { 4 } else { 2 };
        out.push(&params[at..at + n]);
        at += n;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub arch: Architecture,
    /// Per layer: kernel `[Cin, Cout, K]`, bias, then batch-norm gamma and
    /// beta on layers 1 to 4.
    pub params: Vec<Tensor>,
    pub running: Vec<RunningStats>,
}

/// Transpose-convolution generator mapping `[B, z_channels, 1]` noise to
/// `[B, 1, seg_len]` signals in `(-1, 1)`.
pub fn build_generator<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Generator> {
    arch.validate()?;
    let mut params = Vec::new();
    let mut running = Vec::new();
    for (i, (cin, cout, k, _)) in arch.generator_layers().into_iter().enumerate() {
        let norm = has_norm("generator", i).then_some(cout);
        params.extend(layer_params([cin, cout, k], cout, norm, rng));
        if norm.is_some() {
            running.push(RunningStats::new(cout));
        }
    }
    Ok(Generator {
        arch: arch.clone(),
        params,
        running,
    })
}

impl Generator {
    pub fn param_names(&self) -> Vec<String> {
        layer_param_names("generator", Some("bn"))
    }

    /// Output length after each layer, starting with the noise length.
    pub fn layer_lengths(&self) -> Result<Vec<usize>> {
        let mut lens = vec![1];
        for (i, (_, _, k, p)) in self.arch.generator_layers().into_iter().enumerate() {
            lens.push(conv_transpose1d_out_len(lens[i], k, STRIDE, p)?);
        }
        Ok(lens)
    }

    pub fn forward(&mut self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let params = self.params.clone();
        self.forward_with(&params, z, mode)
    }

    /// Forward pass using `params` (e.g. tape leaves) in place of the stored
    /// values. Batch-norm running statistics are updated in train mode.
    pub fn forward_with(&mut self, params: &[Tensor], z: &Tensor, mode: Mode) -> Result<Tensor> {
        let layers = self.arch.generator_layers();
        let mut h = z.clone();
        for (i, p) in split_params(params, "generator").into_iter().enumerate() {
            let pad = layers[i].3;
            h = conv_transpose1d(&h, &p[0], Some(&p[1]), STRIDE, pad)?;
            if i < LAYERS - 1 {
                h = batch_norm1d(&h, &p[2], &p[3], &mut self.running[i], mode)?.relu()?;
            } else {
                h = h.tanh()?;
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub arch: Architecture,
    pub head: Head,
    pub use_dropout: bool,
    pub dropout_p: f64,
    /// Per layer: kernel `[Cout, Cin, K]`, bias, then instance-norm gamma and
    /// beta on layers 2 to 4.
    pub params: Vec<Tensor>,
}

/// Convolutional critic mapping `[B, 1, seg_len]` to one value per example.
pub fn build_critic<R: Rng + ?Sized>(
    arch: &Architecture,
    head: Head,
    use_dropout: bool,
    dropout_p: f64,
    rng: &mut R,
) -> Result<Critic> {
    arch.validate()?;
    if use_dropout && !(0.0..1.0).contains(&dropout_p) {
        return Err(Error::Config(format!("dropout probability must be in [0, 1), got {dropout_p}")));
    }
    let mut params = Vec::new();
    for (i, (cin, cout, k, _)) in arch.critic_layers().into_iter().enumerate() {
        let norm = has_norm("critic", i).then_some(cout);
        params.extend(layer_params([cout, cin, k], cout, norm, rng));
    }
    Ok(Critic {
        arch: arch.clone(),
        head,
        use_dropout,
        dropout_p,
        params,
    })
}

pub(crate) fn critic_param_names(prefix: &str) -> Vec<String> {
    layer_param_names(prefix, Some("in"))
}

impl Critic {
    pub fn param_names(&self) -> Vec<String> {
        critic_param_names("critic")
    }

    pub fn layer_lengths(&self) -> Result<Vec<usize>> {
        let mut lens = vec![self.arch.seg_len];
        for (i, (_, _, k, p)) in self.arch.critic_layers().into_iter().enumerate() {
            lens.push(conv1d_out_len(lens[i], k, STRIDE, p)?);
        }
        Ok(lens)
    }

    /// `[Cout, Cin, K]` of each layer.
    pub fn kernel_shapes(&self) -> Vec<Vec<usize>> {
        split_params(&self.params, "critic")
            .iter()
            .map(|p| p[0].shape().to_vec())
            .collect()
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        self.forward_with(&self.params, x, mode, rng)
    }

    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        params: &[Tensor],
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        let (b, c, l) = x.dims3("critic input")?;
        if c != 1 || l != self.arch.seg_len {
            return Err(Error::Dimension(format!(
                "critic expects [B, 1, {}], got {:?}",
                self.arch.seg_len,
                x.shape()
            )));
        }
        let layers = self.arch.critic_layers();
        let slope = self.arch.leaky_slope;
        let mut h = x.clone();
        for (i, p) in split_params(params, "critic").into_iter().enumerate() {
            h = conv1d(&h, &p[0], Some(&p[1]), STRIDE, layers[i].3)?;
            if i == 0 {
                h = h.leaky_relu(slope)?;
                if self.use_dropout {
                    h = h.dropout(self.dropout_p, mode, rng)?;
                }
            } else if i < LAYERS - 1 {
                h = instance_norm1d(&h, &p[2], &p[3])?.leaky_relu(slope)?;
            }
        }
        let h = h.reshape(&[b])?;
        match self.head {
            Head::Score => Ok(h),
            Head::Sigmoid => h.sigmoid(),
        }
    }
}

/// Mean over examples of `(||grad_x critic(x_hat)|| - 1)^2` at random
/// interpolates `x_hat = eps * real + (1 - eps) * fake`.
///
/// `critic` must evaluate on `tape` (its parameters are leaves there) so the
/// result can be differentiated with respect to them.
pub fn gradient_penalty<F, R>(tape: &Tape, critic: F, real: &Tensor, fake: &Tensor, rng: &mut R) -> Result<Tensor>
where
    F: FnOnce(&Tensor) -> Result<Tensor>,
    R: Rng + ?Sized,
{
    if real.shape() != fake.shape() {
        return Err(Error::Dimension(format!(
            "real {:?} and fake {:?} differ in shape",
            real.shape(),
            fake.shape()
        )));
    }
    let (b, c, l) = real.dims3("gradient_penalty input")?;
    let per = c * l;
    let mut mixed = Vec::with_capacity(b * per);
    for i in 0..b {
        let eps: f64 = rng.random();
        let r = &real.data()[i * per..(i + 1) * per];
        let f = &fake.data()[i * per..(i + 1) * per];
        mixed.extend(r.iter().zip(f).map(|(r, f)| eps * r + (1.0 - eps) * f));
    }
    let x_hat = tape.leaf(&Tensor::new(real.shape(), mixed)?);
    let score = critic(&x_hat)?;
    if score.tape().is_some_and(|t| !t.same_as(tape)) {
        return Err(Error::Contract("critic output is recorded on a different tape".into()));
    }
    let g = if score.requires_grad() {
        score.sum()?.grad(&[&x_hat], true)?.remove(0)
    } else {
        Tensor::zeros(real.shape())
    };
    g.reduce(Reduction::SqL2Norm, Some(&[1, 2]))?
        .add_scalar(GP_NORM_EPS)?
        .sqrt()?
        .add_scalar(-1.0)?
        .square()?
        .mean()
}

pub struct WganLosses {
    pub critic_loss: Tensor,
    pub generator_loss: Tensor,
}

/// `critic_real` and `critic_fake` are per-example scores.
pub fn wgan_losses(critic_real: &Tensor, critic_fake: &Tensor, gp: &Tensor, lambda_gp: f64) -> Result<WganLosses> {
    let fake_mean = critic_fake.mean()?;
    let critic_loss = fake_mean.sub(&critic_real.mean()?)?.add(&gp.scale(lambda_gp)?)?;
    Ok(WganLosses {
        critic_loss,
        generator_loss: fake_mean.neg()?,
    })
}

pub fn input_noise_sigma(epoch: usize, sigma0: f64, epochs: usize) -> f64 {
    sigma0 * (1.0 - epoch as f64 / epochs as f64).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based index of the completed epoch.
    pub epoch: usize,
    pub critic_loss: f64,
    /// `None` when no generator step fell in this epoch.
    pub generator_loss: Option<f64>,
    pub fid_median: Option<f64>,
    pub sigma_noise: f64,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanTrainHistory {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,critic_loss,generator_loss,fid_median,sigma_noise,wall_clock_s";

impl GanTrainHistory {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{HISTORY_HEADER}")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                r.critic_loss,
                opt(r.generator_loss),
                opt(r.fid_median),
                r.sigma_noise,
                r.wall_clock_s
            )?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
            return Err(Error::Format("history header mismatch".into()));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Format(format!("bad history value {s:?}")))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Format(format!("history row has {} fields", f.len())));
            }
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| Error::Format(format!("bad epoch {:?}", f[0])))?,
                critic_loss: num(f[1])?,
                generator_loss: opt(f[2])?,
                fid_median: opt(f[3])?,
                sigma_noise: num(f[4])?,
                wall_clock_s: num(f[5])?,
            });
        }
        Ok(GanTrainHistory { records })
    }
}

/// Stored in the checkpoint descriptor so generation can rebuild the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanDescriptor {
    pub config: GanConfig,
    pub condition: Condition,
    pub joint_id: u32,
}

/// Everything a GAN run mutates.
pub struct GanState {
    pub descriptor: GanDescriptor,
    pub generator: Generator,
    pub critic: Critic,
    pub opt_generator: AdamWState,
    pub opt_critic: AdamWState,
    pub rng: ChaCha8Rng,
}

impl GanState {
    pub fn new(cfg: &GanConfig, condition: Condition, joint_id: u32) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let arch = cfg.architecture();
        let generator = build_generator(&arch, &mut rng)?;
        let critic = build_critic(&arch, Head::Score, true, cfg.critic_dropout_p, &mut rng)?;
        let opt_generator = AdamWState::new(&generator.params, AdamWHyper::with_lr(cfg.lr_generator));
        let opt_critic = AdamWState::new(&critic.params, AdamWHyper::with_lr(cfg.lr_critic));
        Ok(GanState {
            descriptor: GanDescriptor {
                config: cfg.clone(),
                condition,
                joint_id,
            },
            generator,
            critic,
            opt_generator,
            opt_critic,
            rng,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let descriptor =
            serde_json::to_string(&self.descriptor).map_err(|e| Error::Format(e.to_string()))?;
        let mut tensors: Vec<(String, Tensor)> = self
            .generator
            .param_names()
            .into_iter()
            .zip(self.generator.params.iter().cloned())
            .collect();
        tensors.extend(self.critic.param_names().into_iter().zip(self.critic.params.iter().cloned()));
        Ok(Checkpoint {
            kind: CheckpointKind::Gan,
            descriptor,
            tensors,
            optimizers: vec![
                ("generator".into(), self.opt_generator.clone()),
                ("critic".into(), self.opt_critic.clone()),
            ],
            running: self
                .generator
                .running
                .iter()
                .enumerate()
                .map(|(i, r)| (format!("generator.layer{}.bn", i + 1), r.clone()))
                .collect(),
            rng: RngState::capture(&self.rng),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CheckpointKind::Gan {
            return Err(Error::Contract(format!("expected a GAN checkpoint, got {:?}", ckpt.kind)));
        }
        let descriptor: GanDescriptor =
            serde_json::from_str(&ckpt.descriptor).map_err(|e| Error::Format(e.to_string()))?;
        let cfg = &descriptor.config;
        cfg.validate()?;
        // build shapes, then overwrite every value from the checkpoint
        let mut shell = GanState::new(cfg, descriptor.condition, descriptor.joint_id)?;
        let names = shell.generator.param_names();
        fill(&mut shell.generator.params, &names, ckpt)?;
        let names = shell.critic.param_names();
        fill(&mut shell.critic.params, &names, ckpt)?;
        let running = ckpt.running_with_prefix("generator.");
        if running.len() != shell.generator.running.len() {
            return Err(Error::Format("generator running statistics missing".into()));
        }
        shell.generator.running = running;
        shell.opt_generator = ckpt
            .optimizer("generator")
            .cloned()
            .ok_or_else(|| Error::Format("generator optimizer state missing".into()))?;
        shell.opt_critic = ckpt
            .optimizer("critic")
            .cloned()
            .ok_or_else(|| Error::Format("critic optimizer state missing".into()))?;
        shell.rng = ckpt.rng.restore();
        shell.descriptor = descriptor;
        Ok(shell)
    }
}

pub(crate) fn fill(params: &mut [Tensor], names: &[String], ckpt: &Checkpoint) -> Result<()> {
    for (p, name) in params.iter_mut().zip(names) {
        let t = ckpt
            .tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
        if t.shape() != p.shape() {
            return Err(Error::Format(format!(
                "tensor {name} has shape {:?}, architecture expects {:?}",
                t.shape(),
                p.shape()
            )));
        }
        *p = t.clone();
    }
    Ok(())
}

fn batch_tensor(data: &[Vec<f64>], idx: &[usize], seg_len: usize) -> Result<Tensor> {
    let mut v = Vec::with_capacity(idx.len() * seg_len);
    for i in idx {
        v.extend_from_slice(&data[*i]);
    }
    Tensor::new(&[idx.len(), 1, seg_len], v)
}

fn sample_z<R: Rng + ?Sized>(n: usize, z_channels: usize, rng: &mut R) -> Tensor {
    normal_tensor(&[n, z_channels, 1], 0.0, 1.0, rng)
}

fn leaves(tape: &Tape, params: &[Tensor]) -> Vec<Tensor> {
    params.iter().map(|p| tape.leaf(p)).collect()
}

fn critic_step(state: &mut GanState, real: &Tensor, sigma: f64) -> Result<f64> {
    let cfg = &state.descriptor.config;
    let rng = &mut state.rng;
    let b = real.shape()[0];
    let noisy = if sigma > 0.0 {
        let noise = normal_tensor(real.shape(), 0.0, sigma, rng);
        real.add(&noise)?
    } else {
        real.clone()
    };
    let z = sample_z(b, cfg.z_channels, rng);
    let fake = state.generator.forward(&z, Mode::Train)?.detach();

    let tape = Tape::new();
    let cp = leaves(&tape, &state.critic.params);
    let critic = &state.critic;
    let s_real = critic.forward_with(&cp, &noisy, Mode::Train, rng)?;
    let s_fake = critic.forward_with(&cp, &fake, Mode::Train, rng)?;
    let gp = if cfg.lambda_gp > 0.0 {
        let mut gp_rng = ChaCha8Rng::from_rng(rng);
        gradient_penalty(
            &tape,
            |x| critic.forward_with(&cp, x, Mode::Train, &mut gp_rng),
            &noisy,
            &fake,
            rng,
        )?
    } else {
        Tensor::scalar(0.0)
    };
    let loss = wgan_losses(&s_real, &s_fake, &gp, cfg.lambda_gp)?.critic_loss;
    let value = loss.item()?;
    if !value.is_finite() {
        return Ok(value);
    }
    let refs: Vec<&Tensor> = cp.iter().collect();
    let grads = loss.grad(&refs, false)?;
    state.opt_critic.step(&mut state.critic.params, &grads)?;
    Ok(value)
}

fn generator_step(state: &mut GanState) -> Result<f64> {
    let cfg = &state.descriptor.config;
    let z = sample_z(cfg.minibatch, cfg.z_channels, &mut state.rng);
    let tape = Tape::new();
    let gp = leaves(&tape, &state.generator.params);
    let fake = state.generator.forward_with(&gp, &z, Mode::Train)?;
    let scores = state.critic.forward(&fake, Mode::Train, &mut state.rng)?;
    let loss = scores.mean()?.neg()?;
    let value = loss.item()?;
    if !value.is_finite() {
        return Ok(value);
    }
    let refs: Vec<&Tensor> = gp.iter().collect();
    let grads = loss.grad(&refs, false)?;
    state.opt_generator.step(&mut state.generator.params, &grads)?;
    Ok(value)
}

/// Called after an epoch with its 1-based index and the current generator;
/// returns the value recorded as `fid_median`.
pub type EvalHook<'a> = dyn FnMut(usize, &Generator) -> Result<f64> + 'a;

pub fn population_std(data: &[Vec<f64>]) -> f64 {
    let n: usize = data.iter().map(Vec::len).sum();
    let mean = data.iter().flatten().sum::<f64>() / n as f64;
    (data.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Options that do not change the numerical result of a run.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Record zero instead of elapsed time so histories are byte-stable.
    pub zero_wall_clock: bool,
}

/// Trains a generator on `real_segments` (all of one condition).
///
/// An epoch is one shuffled pass of the critic over the data in minibatches
/// (the last may be partial). A generator step follows every `critic_iters`
/// critic steps, counted across epoch boundaries.
pub fn train_gan(
    cfg: &GanConfig,
    real_segments: &[Segment],
    eval_hook: Option<&mut EvalHook<'_>>,
    options: TrainOptions,
) -> Result<(Checkpoint, GanTrainHistory)> {
    cfg.validate()?;
    if real_segments.len() < cfg.minibatch {
        return Err(Error::Parameter(format!(
            "{} training segments, minibatch needs {}",
            real_segments.len(),
            cfg.minibatch
        )));
    }
    if let Some(s) = real_segments.iter().find(|s| s.len() != cfg.seg_len) {
        return Err(Error::Dimension(format!(
            "segment of length {} in a run configured for {}",
            s.len(),
            cfg.seg_len
        )));
    }
    let first = &real_segments[0];
    let state = GanState::new(cfg, first.condition, first.joint_id)?;
    train_from(state, real_segments, eval_hook, options)
}

/// Continues training `state` for its configured number of epochs.
pub fn train_from(
    mut state: GanState,
    real_segments: &[Segment],
    mut eval_hook: Option<&mut EvalHook<'_>>,
    options: TrainOptions,
) -> Result<(Checkpoint, GanTrainHistory)> {
    let cfg = state.descriptor.config.clone();
    let data: Vec<Vec<f64>> = real_segments.iter().map(|s| s.values.clone()).collect();
    let sigma0 = cfg.noise_sigma0.unwrap_or_else(|| 0.1 * population_std(&data));
    let start = Instant::now();
    let mut history = GanTrainHistory::default();
    let mut critic_steps = 0usize;
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        let sigma = input_noise_sigma(epoch, sigma0, cfg.epochs);
        order.shuffle(&mut state.rng);
        let mut critic_sum = 0.0;
        let mut critic_n = 0usize;
        let mut gen_losses = Vec::new();
        for chunk in order.chunks(cfg.minibatch) {
            let step = critic_steps;
            let diverged = |state: &GanState, what| -> Error {
                Error::Divergence {
                    epoch: epoch + 1,
                    step,
                    what,
                    checkpoint: state.to_checkpoint().ok().map(Box::new),
                }
            };
            let real = batch_tensor(&data, chunk, cfg.seg_len)?;
            let loss = match critic_step(&mut state, &real, sigma) {
                Err(Error::NonFinite { .. }) => return Err(diverged(&state, "critic loss")),
                other => other?,
            };
            if !loss.is_finite() {
                return Err(diverged(&state, "critic loss"));
            }
            critic_sum += loss;
            critic_n += 1;
            critic_steps += 1;
            if critic_steps.is_multiple_of(cfg.critic_iters) {
                let loss = match generator_step(&mut state) {
                    Err(Error::NonFinite { .. }) => return Err(diverged(&state, "generator loss")),
                    other => other?,
                };
                if !loss.is_finite() {
                    return Err(diverged(&state, "generator loss"));
                }
                gen_losses.push(loss);
            }
        }
        let epoch_no = epoch + 1;
        let evaluate = cfg.eval_interval > 0
            && (epoch_no == 1 || epoch_no == cfg.epochs || epoch_no % cfg.eval_interval == 0);
        let fid_median = match (&mut eval_hook, evaluate) {
            (Some(hook), true) => Some(hook(epoch_no, &state.generator)?),
            _ => None,
        };
        history.records.push(EpochRecord {
            epoch: epoch_no,
            critic_loss: critic_sum / critic_n as f64,
            generator_loss: if gen_losses.is_empty() {
                None
            } else {
                Some(gen_losses.iter().sum::<f64>() / gen_losses.len() as f64)
            },
            fid_median,
            sigma_noise: sigma,
            wall_clock_s: if options.zero_wall_clock {
                0.0
            } else {
                start.elapsed().as_secs_f64()
            },
        });
    }
    Ok((state.to_checkpoint()?, history))
}

fn run_generator<R: Rng + ?Sized>(generator: &mut Generator, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let zc = generator.arch.z_channels;
    let seg_len = generator.arch.seg_len;
    // noise for every output is drawn first, so results do not depend on chunking
    let z = sample_z(n, zc, rng);
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(64) {
        let m = (n - start).min(64);
        let zb = Tensor::new(&[m, zc, 1], z.data()[start * zc..(start + m) * zc].to_vec())?;
        let y = generator.forward(&zb, Mode::Eval)?;
        out.extend(y.data().chunks_exact(seg_len).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Draws `n` synthetic segments from a trained generator in eval mode.
pub fn generate<R: Rng + ?Sized>(checkpoint: &Checkpoint, n: usize, rng: &mut R) -> Result<Vec<Segment>> {
    let mut state = GanState::from_checkpoint(checkpoint)?;
    let d = &state.descriptor;
    let (condition, joint_id) = (d.condition, d.joint_id);
    Ok(run_generator(&mut state.generator, n, rng)?
        .into_iter()
        .enumerate()
        .map(|(i, values)| Segment {
            values,
            condition,
            joint_id,
            source: Source::Fake,
            segment_index: i,
        })
        .collect())
}

/// Median per-pair FID between `n` fresh generator outputs and real segments
/// drawn uniformly (with replacement) from `real`. The generator is not
/// modified.
pub fn median_pair_fid(generator: &Generator, real: &[Segment], n: usize, seed: u64) -> Result<f64> {
    if real.is_empty() || n == 0 {
        return Err(Error::Parameter("median FID needs real segments and n > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = generator.clone();
    let fakes = run_generator(&mut g, n, &mut rng)?;
    let mut scores = Vec::with_capacity(n);
    for f in &fakes {
        let r = &real[rng.random_range(0..real.len())];
        scores.push(metrics::fid_pair(&r.values, f)?);
    }
    metrics::median(&scores).ok_or_else(|| Error::Numerical("empty FID sample".into()))
}
