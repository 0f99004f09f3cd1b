//! Binary damage classifier: the critic network with a sigmoid head, trained
//! with binary cross-entropy.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Tape, Tensor};
use crate::checkpoint::{Checkpoint, CheckpointKind, RngState};
use crate::error::{Error, Result};
use crate::optim::{AdamWHyper, AdamWState};
use crate::signal::{ScenarioSplit, Segment};
use crate::wdcgan::{build_critic, critic_param_names, fill, Architecture, Critic, Head};

const BCE_CLAMP: f64 = 1e-12;
/// Slack allowed beyond [-1, 1] before an input counts as un-normalized.
const RANGE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub channel_widths: Vec<usize>,
    pub seg_len: usize,
    pub leaky_slope: f64,
    pub lr: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub threshold: f64,
    /// Reject inputs outside [-1, 1] at prediction time.
    pub strict_range: bool,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            channel_widths: vec![256, 128, 64, 32, 1],
            seg_len: 1024,
            leaky_slope: 0.2,
            lr: 8e-4,
            minibatch: 30,
            epochs: 300,
            threshold: 0.49,
            strict_range: true,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            seg_len: self.seg_len,
            z_channels: 1,
            channel_widths: self.channel_widths.clone(),
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture().validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        if !(self.lr >= 0.0) || self.minibatch == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "classifier needs lr >= 0, minibatch >= 1 and epochs >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy, with scores clamped `1e-12` away from 0 and 1.
pub fn bce_loss(scores: &Tensor, truths: &Tensor) -> Result<Tensor> {
    if scores.shape() != truths.shape() {
        return Err(Error::Dimension(format!(
            "scores {:?} and truths {:?} differ in shape",
            scores.shape(),
            truths.shape()
        )));
    }
    if let Some(s) = scores.data().iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Contract(format!("score {s} outside [0, 1]")));
    }
    if truths.data().iter().any(|t| *t != 0.0 && *t != 1.0) {
        return Err(Error::Contract("truths must be 0 or 1".into()));
    }
    let s = scores.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let one_minus_t = truths.neg()?.add_scalar(1.0)?;
    let one_minus_s = s.neg()?.add_scalar(1.0)?;
    truths
        .mul(&s.ln()?)?
        .add(&one_minus_t.mul(&one_minus_s.ln()?)?)?
        .mean()?
        .neg()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHistory {
    pub records: Vec<ClassifierEpoch>,
}

impl ClassifierHistory {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,loss,wall_clock_s")?;
        for r in &self.records {
            writeln!(out, "{},{},{}", r.epoch, r.loss, r.wall_clock_s)?;
        }
        Ok(())
    }
}

pub struct Classifier {
    pub config: ClassifierConfig,
    pub net: Critic,
}

impl Classifier {
    pub fn new(config: &ClassifierConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let net = build_critic(&config.architecture(), Head::Sigmoid, false, 0.0, rng)?;
        Ok(Classifier {
            config: config.clone(),
            net,
        })
    }

    pub fn param_names() -> Vec<String> {
        critic_param_names("classifier")
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CheckpointKind::Classifier {
            return Err(Error::Contract(format!(
                "expected a classifier checkpoint, got {:?}",
                ckpt.kind
            )));
        }
        let config: ClassifierConfig =
            serde_json::from_str(&ckpt.descriptor).map_err(|e| Error::Format(e.to_string()))?;
        let mut c = Classifier::new(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
        fill(&mut c.net.params, &Self::param_names(), ckpt)?;
        Ok(c)
    }

    fn checkpoint(&self, opt: &AdamWState, rng: &ChaCha8Rng) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CheckpointKind::Classifier,
            descriptor: serde_json::to_string(&self.config).map_err(|e| Error::Format(e.to_string()))?,
            tensors: Self::param_names().into_iter().zip(self.net.params.iter().cloned()).collect(),
            optimizers: vec![("classifier".into(), opt.clone())],
            running: Vec::new(),
            rng: RngState::capture(rng),
        })
    }

    /// Eval-mode scores in (0, 1), one per segment.
    pub fn predict_batch(&self, segments: &[Segment]) -> Result<Vec<f64>> {
        let seg_len = self.config.seg_len;
        let mut data = Vec::with_capacity(segments.len() * seg_len);
        for s in segments {
            if s.len() != seg_len {
                return Err(Error::Dimension(format!(
                    "classifier expects {seg_len} samples, got {}",
                    s.len()
                )));
            }
            if self.config.strict_range {
                if let Some(v) = s.values.iter().find(|v| v.abs() > 1.0 + RANGE_TOL) {
                    return Err(Error::Contract(format!(
                        "input value {v} outside [-1, 1]; segments must be min-max normalized"
                    )));
                }
            }
            data.extend_from_slice(&s.values);
        }
        let mut out = Vec::with_capacity(segments.len());
        // eval mode draws no random numbers
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        for chunk in data.chunks(64 * seg_len) {
            let x = Tensor::new(&[chunk.len() / seg_len, 1, seg_len], chunk.to_vec())?;
            out.extend_from_slice(self.net.forward(&x, Mode::Eval, &mut unused)?.data());
        }
        Ok(out)
    }
}

pub fn predict(checkpoint: &Checkpoint, segment: &Segment) -> Result<f64> {
    Ok(Classifier::from_checkpoint(checkpoint)?.predict_batch(std::slice::from_ref(segment))?[0])
}

/// Trains on `split.train` (segments already normalized to [-1, 1]).
pub fn train_classifier(
    cfg: &ClassifierConfig,
    split: &ScenarioSplit,
    zero_wall_clock: bool,
) -> Result<(Checkpoint, ClassifierHistory)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Parameter("training split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Classifier::new(cfg, &mut rng)?;
    let mut opt = AdamWState::new(&model.net.params, AdamWHyper::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut history = ClassifierHistory::default();
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.minibatch).enumerate() {
            let mut x = Vec::with_capacity(chunk.len() * cfg.seg_len);
            let mut t = Vec::with_capacity(chunk.len());
            for i in chunk {
                let (seg, label) = &split.train[*i];
                if seg.len() != cfg.seg_len {
                    return Err(Error::Dimension(format!(
                        "training segment has {} samples, classifier expects {}",
                        seg.len(),
                        cfg.seg_len
                    )));
                }
                x.extend_from_slice(&seg.values);
                t.push(f64::from(*label));
            }
            let x = Tensor::new(&[chunk.len(), 1, cfg.seg_len], x)?;
            let t = Tensor::new(&[chunk.len()], t)?;
            let tape = Tape::new();
            let params: Vec<Tensor> = model.net.params.iter().map(|p| tape.leaf(p)).collect();
            let diverged = |model: &Classifier, opt: &AdamWState, rng: &ChaCha8Rng| Error::Divergence {
                epoch: epoch + 1,
                step,
                what: "classifier loss",
                checkpoint: model.checkpoint(opt, rng).ok().map(Box::new),
            };
            let loss = match model
                .net
                .forward_with(&params, &x, Mode::Train, &mut rng)
                .and_then(|s| bce_loss(&s, &t))
            {
                Err(Error::NonFinite { .. }) => return Err(diverged(&model, &opt, &rng)),
                other => other?,
            };
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(diverged(&model, &opt, &rng));
            }
            total += value * chunk.len() as f64;
            let refs: Vec<&Tensor> = params.iter().collect();
            let grads = loss.grad(&refs, false)?;
            opt.step(&mut model.net.params, &grads)?;
        }
        history.records.push(ClassifierEpoch {
            epoch: epoch + 1,
            loss: total / split.train.len() as f64,
            wall_clock_s: if zero_wall_clock { 0.0 } else { start.elapsed().as_secs_f64() },
        });
    }
    Ok((model.checkpoint(&opt, &rng)?, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub score: f64,
    pub truth: u8,
    pub label: u8,
}

/// `score > threshold` means damaged.
pub fn label_for(score: f64, threshold: f64) -> u8 {
    u8::from(score > threshold)
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, score: f64, truth: u8, threshold: f64) -> Self {
        PredictionRecord {
            id: id.into(),
            score,
            truth,
            label: label_for(score, threshold),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub classification_accuracy: f64,
    pub mean_absolute_error: f64,
    pub threshold: f64,
    pub records: Vec<PredictionRecord>,
}

impl ClassifierMetrics {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "id,score,truth,label")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.id, r.score, r.truth, r.label)?;
        }
        Ok(())
    }
}

/// Accuracy and mean absolute error. Labels are recomputed from the scores at
/// `threshold`.
pub fn evaluate(records: &[PredictionRecord], threshold: f64) -> Result<ClassifierMetrics> {
    if records.is_empty() {
        return Err(Error::Parameter("no prediction records to evaluate".into()));
    }
    let records: Vec<PredictionRecord> = records
        .iter()
        .map(|r| PredictionRecord::new(r.id.clone(), r.score, r.truth, threshold))
        .collect();
    let n = records.len() as f64;
    let correct = records.iter().filter(|r| r.label == r.truth).count() as f64;
    let mut errors: Vec<f64> = records
        .iter()
        .map(|r| (r.score - f64::from(r.truth)).abs())
        .collect();
    // summed in sorted order so the result does not depend on record order
    errors.sort_by(f64::total_cmp);
    Ok(ClassifierMetrics {
        classification_accuracy: correct / n,
        mean_absolute_error: errors.iter().sum::<f64>() / n,
        threshold,
        records,
    })
}

/// Scores every test segment of `split` and evaluates them.
pub fn test_classifier(checkpoint: &Checkpoint, split: &ScenarioSplit) -> Result<ClassifierMetrics> {
    let model = Classifier::from_checkpoint(checkpoint)?;
    let segs: Vec<Segment> = split.test.iter().map(|(s, _)| s.clone()).collect();
    let scores = model.predict_batch(&segs)?;
    let threshold = model.config.threshold;
    let records: Vec<PredictionRecord> = split
        .test
        .iter()
        .zip(scores)
        .map(|((s, y), score)| PredictionRecord::new(s.id(), score, *y, threshold))
        .collect();
    evaluate(&records, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Condition, Source};

    #[test]
    fn bce_examples() {
        let half = Tensor::full(&[4], 0.5);
        let t = Tensor::new(&[4], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((bce_loss(&half, &t).unwrap().item().unwrap() - 2f64.ln()).abs() < 1e-15);
        let s = Tensor::new(&[1], vec![0.9]).unwrap();
        let one = Tensor::new(&[1], vec![1.0]).unwrap();
        assert!((bce_loss(&s, &one).unwrap().item().unwrap() + 0.9f64.ln()).abs() < 1e-15);
        let exact = bce_loss(&t, &t).unwrap().item().unwrap();
        assert!(exact < 1e-11);
        let bad = Tensor::new(&[1], vec![1.5]).unwrap();
        assert!(matches!(bce_loss(&bad, &one), Err(Error::Contract(_))));
    }

    #[test]
    fn threshold_and_metrics() {
        assert_eq!(label_for(0.48, 0.49), 0);
        assert_eq!(label_for(0.49, 0.49), 0);
        assert_eq!(label_for(0.5, 0.49), 1);
        let recs = vec![
            PredictionRecord::new("a", 0.1, 0, 0.49),
            PredictionRecord::new("b", 0.9, 1, 0.49),
        ];
        let m = evaluate(&recs, 0.49).unwrap();
        assert!((m.mean_absolute_error - 0.1).abs() < 1e-15);
        assert_eq!(m.classification_accuracy, 1.0);
        let mut recs: Vec<_> = (0..30).map(|i| PredictionRecord::new(i.to_string(), 0.9, 1, 0.49)).collect();
        recs[0].score = 0.2;
        let m = evaluate(&recs, 0.49).unwrap();
        assert!((m.classification_accuracy - 29.0 / 30.0).abs() < 1e-15);
    }

    fn split() -> ScenarioSplit {
        let seg = |cls: u8, i: usize| {
            let v: Vec<f64> = (0..32)
                .map(|t| if cls == 0 { (t as f64 * 0.3 + i as f64).sin() } else { (t as f64 * 1.9 + i as f64).sin() })
                .collect();
            (
                Segment {
                    values: v,
                    condition: if cls == 0 { Condition::Undamaged } else { Condition::Damaged },
                    joint_id: 0,
                    source: Source::Real,
                    segment_index: i,
                },
                cls,
            )
        };
        ScenarioSplit {
            scenario_id: 1,
            train: (0..8).map(|i| seg((i % 2) as u8, i)).collect(),
            test: (8..12).map(|i| seg((i % 2) as u8, i)).collect(),
        }
    }

    fn small() -> ClassifierConfig {
        ClassifierConfig {
            channel_widths: vec![8, 4, 4, 2, 1],
            seg_len: 32,
            minibatch: 4,
            epochs: 3,
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (c1, h1) = train_classifier(&small(), &split(), true).unwrap();
        let (c2, h2) = train_classifier(&small(), &split(), true).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(c1, c2);
        let m = test_classifier(&c1, &split()).unwrap();
        assert_eq!(m.records.len(), 4);
        assert!(m.records.iter().all(|r| r.score > 0.0 && r.score < 1.0));
        let s = &split().test[0].0;
        assert_eq!(predict(&c1, s).unwrap(), predict(&c1, s).unwrap());
    }

    #[test]
    fn zero_lr_keeps_parameters_and_loss() {
        let mut cfg = small();
        cfg.lr = 0.0;
        let (ckpt, h) = train_classifier(&cfg, &split(), true).unwrap();
        let fresh = Classifier::new(&cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
        assert_eq!(Classifier::from_checkpoint(&ckpt).unwrap().net.params, fresh.net.params);
        assert!(h.records.windows(2).all(|w| (w[0].loss - w[1].loss).abs() < 1e-12));
    }

    #[test]
    fn predict_rejects_unnormalized_input() {
        let (ckpt, _) = train_classifier(&small(), &split(), true).unwrap();
        let mut s = split().test[0].0.clone();
        s.values[3] = 4.0;
        assert!(matches!(predict(&ckpt, &s), Err(Error::Contract(_))));
    }
}
