//! Mini-batch SGD with validation-based model selection, checkpoints and
//! batched inference.

mod checkpoint;
mod dataset;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{load_examples, Dataset};

use crate::arch::{ArchId, ArchSpec};
use crate::audio::{normalize, NormStats, Spectrogram};
use crate::error::{Error, Result};
use crate::metrics::{accuracy_result, aggregate_song, argmax, auc_per_tag, prf_multilabel, EvalResult, DEFAULT_THRESHOLD};
use crate::nn::{Network, RngStreams, SgdConfig, Tensor};

/// Validation metric used for model selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetric {
    Accuracy,
    F1Micro,
    Auc,
}

impl EvalMetric {
    pub fn name(self) -> &'static str {
        match self {
            EvalMetric::Accuracy => "accuracy",
            EvalMetric::F1Micro => "f1_micro",
            EvalMetric::Auc => "auc",
        }
    }

    /// Key of the selection score inside an [`EvalResult`].
    pub fn result_key(self) -> &'static str {
        match self {
            EvalMetric::Auc => "auc_mean",
            m => m.name(),
        }
    }

    /// Each experiment's reported metric.
    pub fn default_for(arch: ArchId) -> Self {
        match arch {
            ArchId::PhonemeSingle | ArchId::MlpBaseline => EvalMetric::Accuracy,
            ArchId::IrmasSingle | ArchId::IrmasMulti => EvalMetric::F1Micro,
            ArchId::MttProposed | ArchId::MttSmallRect => EvalMetric::Auc,
        }
    }
}

impl fmt::Display for EvalMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [EvalMetric::Accuracy, EvalMetric::F1Micro, EvalMetric::Auc]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub early_stop_patience: usize,
    pub eval_metric: EvalMetric,
}

impl TrainConfig {
    pub fn new(eval_metric: EvalMetric) -> Self {
        Self {
            epochs: 100,
            sgd: SgdConfig::default(),
            early_stop_patience: 10,
            eval_metric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::invalid("early_stop_patience must be at least 1"));
        }
        self.sgd.validate()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub metric: EvalMetric,
    pub val_score: f64,
    pub best_epoch: usize,
    pub best_score: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
}

/// Training and validation sets plus what the checkpoint must carry.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Dataset,
    pub val: Dataset,
    pub norm_stats: NormStats,
    pub labels: Vec<String>,
}

/// Scores per-excerpt `outputs` against `truths` under `metric`.
///
/// Accuracy compares argmaxes per excerpt. F1 and AUC first average outputs
/// per song (truths are OR-ed), then threshold at 0.2 or rank.
pub fn evaluate_outputs(
    metric: EvalMetric,
    outputs: &[Vec<f32>],
    truths: &[Vec<f32>],
    songs: &[String],
    labels: &[String],
) -> Result<EvalResult> {
    if outputs.len() != truths.len() || outputs.len() != songs.len() {
        return Err(Error::shape("outputs, truths and songs differ in length"));
    }
    if metric == EvalMetric::Accuracy {
        let pred: Vec<usize> = outputs.iter().map(|o| argmax(o)).collect();
        let truth: Vec<usize> = truths.iter().map(|t| argmax(t)).collect();
        return accuracy_result(&pred, &truth);
    }
    let scores: Vec<(&str, &[f32])> = songs.iter().map(String::as_str).zip(outputs.iter().map(Vec::as_slice)).collect();
    let agg_scores: Vec<Vec<f64>> = aggregate_song(&scores).into_iter().map(|(_, v)| v).collect();
    let truth_rows: Vec<(&str, &[f32])> = songs.iter().map(String::as_str).zip(truths.iter().map(Vec::as_slice)).collect();
    let agg_truths: Vec<Vec<bool>> = aggregate_song(&truth_rows)
        .into_iter()
        .map(|(_, v)| v.iter().map(|&x| x > 0.0).collect())
        .collect();
    match metric {
        EvalMetric::F1Micro => prf_multilabel(&agg_scores, &agg_truths, DEFAULT_THRESHOLD, labels),
        _ => auc_per_tag(&agg_scores, &agg_truths, labels),
    }
}

/// Inference-mode outputs for every item of `data`, in order.
pub fn predict_dataset(net: &mut Network<f32>, data: &Dataset, batch_size: usize) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = data.batch(chunk);
        let y = net.predict(&x)?;
        out.extend((0..chunk.len()).map(|i| y.item(i).to_vec()));
    }
    Ok(out)
}

pub fn evaluate_dataset(net: &mut Network<f32>, data: &Dataset, metric: EvalMetric, labels: &[String]) -> Result<EvalResult> {
    let outputs = predict_dataset(net, data, 64)?;
    let truths: Vec<Vec<f32>> = (0..data.len()).map(|i| data.target(i).to_vec()).collect();
    evaluate_outputs(metric, &outputs, &truths, &data.songs, labels)
}

/// Normalizes raw log-mel excerpts with the checkpoint's statistics and
/// returns one output row per excerpt.
pub fn predict(checkpoint: &Checkpoint, excerpts: &[Spectrogram]) -> Result<Vec<Vec<f32>>> {
    let mut net = checkpoint.to_network()?;
    let shape = checkpoint.arch.input_shape;
    let mut data = Dataset::new(shape, checkpoint.arch.n_outputs());
    let zeros = vec![0.0; data.n_outputs];
    for (i, e) in excerpts.iter().enumerate() {
        if (e.n_mels, e.n_frames) != (shape.n_mels, shape.n_frames) {
            return Err(Error::shape(format!(
                "excerpt {i} is {}×{}, architecture expects {shape}",
                e.n_mels, e.n_frames
            )));
        }
        data.push(&normalize(e, &checkpoint.norm_stats)?.values, &zeros, "", "")?;
    }
    predict_dataset(&mut net, &data, 64)
}

/// Trains `spec` from a seeded initialization and returns the parameters of
/// the epoch with the best validation score (earliest on ties).
///
/// Each epoch visits the training set in a freshly shuffled order in
/// mini-batches, keeping the last partial batch. Training stops once
/// `early_stop_patience` epochs pass without strict improvement.
pub fn train(
    spec: &ArchSpec,
    data: &TrainData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    if data.val.is_empty() {
        return Err(Error::Empty("validation split".into()));
    }
    let seed = cfg.sgd.seed;
    let mut streams = RngStreams::new(seed);
    let mut net = Network::<f32>::with_rng(spec, &mut streams.init)?;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best: Option<(usize, f64, Vec<Tensor<f32>>)> = None;
    let mut history = Vec::new();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut streams.shuffle);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.sgd.batch_size) {
            let (x, t) = data.train.batch(chunk);
            let loss = f64::from(net.train_step(&x, &t, &cfg.sgd, &mut streams.dropout)?);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / data.train.len() as f64;
        let result = evaluate_dataset(&mut net, &data.val, cfg.eval_metric, &data.labels)?;
        let score = result
            .metric(cfg.eval_metric.result_key())
            .expect("metric present in its own result");
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            let snapshot = net.named_params().into_iter().map(|(_, p)| p.value.clone()).collect();
            best = Some((epoch, score, snapshot));
        }
        let (best_epoch, best_score, _) = best.as_ref().expect("set on first epoch");
        let log = EpochLog {
            epoch,
            train_loss,
            metric: cfg.eval_metric,
            val_score: score,
            best_epoch: *best_epoch,
            best_score: *best_score,
        };
        on_epoch(&log);
        history.push(log);
        if epoch - best_epoch >= cfg.early_stop_patience {
            break;
        }
    }

    let (best_epoch, best_score, snapshot) = best.expect("at least one epoch");
    for ((_, p), v) in net.named_params_mut().into_iter().zip(snapshot) {
        p.value = v;
    }
    let meta = CheckpointMeta {
        seed,
        epoch: best_epoch,
        epochs_run: history.len(),
        eval_metric: cfg.eval_metric,
        val_score: Some(best_score),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint::from_network(&net, data.norm_stats.clone(), data.labels.clone(), meta),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{miniature, InputShape};
    use crate::nn::rng_from_seed;
    use rand::Rng;

    /// `n` items, one per class cycling, each class a distinct bright mel row.
    fn separable(input: InputShape, classes: usize, n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let mut ds = Dataset::new(input, classes);
        for i in 0..n {
            let c = i % classes;
            let mut x: Vec<f32> = (0..input.n_mels * input.n_frames).map(|_| rng.random_range(-0.3..0.3)).collect();
            let row = c * input.n_mels / classes;
            for f in 0..input.n_frames {
                x[row * input.n_frames + f] += 2.0;
            }
            let mut t = vec![0.0; classes];
            t[c] = 1.0;
            ds.push(&x, &t, &format!("e{i}"), &format!("s{i}")).unwrap();
        }
        ds
    }

    fn data(arch: ArchId) -> (ArchSpec, TrainData) {
        let spec = miniature(arch);
        let k = spec.output.n_outputs;
        let d = TrainData {
            train: separable(spec.input_shape, k, 12, 1),
            val: separable(spec.input_shape, k, 6, 2),
            norm_stats: NormStats::identity(spec.input_shape.n_mels),
            labels: (0..k).map(|i| format!("c{i}")).collect(),
        };
        (spec, d)
    }

    fn cfg(epochs: usize, patience: usize) -> TrainConfig {
        let mut c = TrainConfig::new(EvalMetric::Accuracy);
        c.epochs = epochs;
        c.early_stop_patience = patience;
        c.sgd.batch_size = 5;
        c.sgd.seed = 3;
        c
    }

    #[test]
    fn runs_are_bit_identical() {
        let (spec, d) = data(ArchId::IrmasMulti);
        let a = train(&spec, &d, &cfg(3, 10), |_| {}).unwrap();
        let b = train(&spec, &d, &cfg(3, 10), |_| {}).unwrap();
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn returned_score_is_best_seen() {
        let (spec, d) = data(ArchId::PhonemeSingle);
        let out = train(&spec, &d, &cfg(8, 100), |_| {}).unwrap();
        let best = out.checkpoint.meta.val_score.unwrap();
        assert!(out.history.iter().all(|h| h.val_score <= best));
        let first_best = out.history.iter().find(|h| h.val_score == best).unwrap().epoch;
        assert_eq!(out.checkpoint.meta.epoch, first_best);
        // Reloaded parameters reproduce the stored score.
        let mut net = out.checkpoint.to_network().unwrap();
        let r = evaluate_dataset(&mut net, &d.val, EvalMetric::Accuracy, &d.labels).unwrap();
        assert_eq!(r.metric("accuracy"), Some(best));
    }

    #[test]
    fn patience_stops_after_best_plus_patience() {
        // A negligible step leaves f32 weights unchanged, so epoch 1 stays best.
        let (spec, d) = data(ArchId::MlpBaseline);
        let mut c = cfg(50, 3);
        c.sgd.learning_rate = 1e-30;
        c.sgd.weight_decay = 0.0;
        let mut seen = Vec::new();
        let out = train(&spec, &d, &c, |l| seen.push(l.epoch)).unwrap();
        assert_eq!(seen, [1, 2, 3, 4]);
        assert_eq!(out.checkpoint.meta.epoch, 1);
        assert_eq!(out.checkpoint.meta.epochs_run, 4);
    }

    #[test]
    fn divergence_is_reported() {
        let (spec, mut d) = data(ArchId::MlpBaseline);
        let n = d.train.n_mels * d.train.n_frames;
        let mut bad = Dataset::new(spec.input_shape, d.train.n_outputs);
        let mut t = vec![0.0; d.train.n_outputs];
        t[0] = 1.0;
        bad.push(&vec![f32::NAN; n], &t, "nan", "s").unwrap();
        d.train = bad;
        assert!(matches!(train(&spec, &d, &cfg(2, 2), |_| {}), Err(Error::Diverged { epoch: 1, .. })));
    }

    #[test]
    fn empty_splits_and_zero_epochs() {
        let (spec, mut d) = data(ArchId::MlpBaseline);
        assert!(train(&spec, &d, &cfg(0, 2), |_| {}).is_err());
        d.val = Dataset::new(spec.input_shape, d.val.n_outputs);
        assert!(matches!(train(&spec, &d, &cfg(1, 2), |_| {}), Err(Error::Empty(_))));
    }

    #[test]
    fn decay_shrinks_weights_on_silent_input() {
        let spec = miniature(ArchId::MttSmallRect);
        let k = spec.output.n_outputs;
        let mut ds = Dataset::new(spec.input_shape, k);
        for i in 0..8 {
            ds.push(&vec![0.0; spec.input_shape.n_mels * spec.input_shape.n_frames], &vec![0.5; k], &format!("{i}"), "s")
                .unwrap();
        }
        let mut net = Network::<f32>::new(&spec, 2).unwrap();
        let mut rng = rng_from_seed(0);
        let sgd = SgdConfig {
            learning_rate: 0.1,
            weight_decay: 0.05,
            batch_size: 8,
            seed: 0,
        };
        let norm = |net: &Network<f32>| -> f64 {
            net.named_params()
                .iter()
                .filter(|(n, _)| n.ends_with(".weight"))
                .map(|(_, p)| f64::from(p.value.sum_squares()))
                .sum()
        };
        let (x, t) = ds.batch(&(0..8).collect::<Vec<_>>());
        let mut prev = norm(&net);
        for _ in 0..5 {
            net.train_step(&x, &t, &sgd, &mut rng).unwrap();
            let now = norm(&net);
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn predict_outputs_are_distributions() {
        let (spec, d) = data(ArchId::PhonemeSingle);
        let out = train(&spec, &d, &cfg(1, 1), |_| {}).unwrap();
        let s = spec.input_shape;
        let ex = Spectrogram::new(s.n_mels, s.n_frames, 44_100, 441, d.train.input(0).to_vec()).unwrap();
        let rows = predict(&out.checkpoint, &[ex.clone(), ex.clone()]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], rows[1]);
        assert!((rows[0].iter().sum::<f32>() - 1.0).abs() < 1e-5);
        let wrong = Spectrogram::new(s.n_mels, s.n_frames + 1, 44_100, 441, vec![0.0; s.n_mels * (s.n_frames + 1)]).unwrap();
        assert!(predict(&out.checkpoint, &[wrong]).is_err());
    }

    #[test]
    fn song_level_evaluation() {
        let labels: Vec<String> = vec!["a".into(), "b".into()];
        let songs: Vec<String> = ["s1", "s1", "s2"].iter().map(|s| s.to_string()).collect();
        let outputs = vec![vec![0.1, 0.0], vec![0.35, 0.9], vec![0.0, 0.1]];
        let truths = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]];
        let r = evaluate_outputs(EvalMetric::F1Micro, &outputs, &truths, &songs, &labels).unwrap();
        // s1 averages to [0.225, 0.45] → both positive; s2 → none.
        assert_eq!(r.metric("f1_micro"), Some(1.0));
        let r = evaluate_outputs(EvalMetric::Auc, &outputs, &truths, &songs, &labels).unwrap();
        assert_eq!(r.metric("auc_mean"), Some(1.0));
        let r = evaluate_outputs(EvalMetric::Accuracy, &outputs, &truths, &songs, &labels).unwrap();
        // argmaxes [0, 1, 1] against [0, 0, 0]
        assert_eq!(r.metric("accuracy"), Some(1.0 / 3.0));
    }
}
