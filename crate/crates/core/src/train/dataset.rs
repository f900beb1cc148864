use std::path::Path;

use crate::arch::InputShape;
use crate::audio::{normalize, NormStats, Spectrogram};
use crate::data::{cache_read, encode_labels, slice_at, slice_excerpt, ExampleRef, LabelVocab, SlicePolicy, Task};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Fixed-size excerpts with their targets, stored contiguously.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub n_mels: usize,
    pub n_frames: usize,
    pub n_outputs: usize,
    inputs: Vec<f32>,
    targets: Vec<f32>,
    pub ids: Vec<String>,
    pub songs: Vec<String>,
}

impl Dataset {
    pub fn new(input: InputShape, n_outputs: usize) -> Self {
        Self {
            n_mels: input.n_mels,
            n_frames: input.n_frames,
            n_outputs,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn item_len(&self) -> usize {
        self.n_mels * self.n_frames
    }

    pub fn push(&mut self, input: &[f32], target: &[f32], id: &str, song: &str) -> Result<()> {
        if input.len() != self.item_len() || target.len() != self.n_outputs {
            return Err(Error::shape(format!(
                "example `{id}`: input {} / target {} values, dataset wants {} / {}",
                input.len(),
                target.len(),
                self.item_len(),
                self.n_outputs
            )));
        }
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
        self.ids.push(id.to_owned());
        self.songs.push(song.to_owned());
        Ok(())
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.item_len()..(i + 1) * self.item_len()]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        &self.targets[i * self.n_outputs..(i + 1) * self.n_outputs]
    }

    /// Gathers items `idx` into `B×M×N` inputs and `B×K` targets.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let mut x = Vec::with_capacity(idx.len() * self.item_len());
        let mut t = Vec::with_capacity(idx.len() * self.n_outputs);
        for &i in idx {
            x.extend_from_slice(self.input(i));
            t.extend_from_slice(self.target(i));
        }
        (
            Tensor::from_vec(&[idx.len(), self.n_mels, self.n_frames], x).expect("sized"),
            Tensor::from_vec(&[idx.len(), self.n_outputs], t).expect("sized"),
        )
    }
}

/// Reads, normalizes and slices the cached features of `examples`.
///
/// Records with an `offset` yield one window centered on that frame; the
/// others are cut with `policy`. Every window inherits its record's target,
/// encoded for `task`.
pub fn load_examples(
    examples: &[&ExampleRef],
    cache_dir: &Path,
    input: InputShape,
    norm: &NormStats,
    vocab: &LabelVocab,
    task: Task,
    policy: SlicePolicy,
) -> Result<Dataset> {
    let vocab = LabelVocab {
        labels: vocab.labels.clone(),
        task,
    };
    let mut ds = Dataset::new(input, vocab.len());
    for e in examples {
        let spec = cache_read(cache_dir, &e.id)?;
        if spec.n_mels != input.n_mels {
            return Err(Error::shape(format!(
                "example `{}` has {} mel bins, architecture expects {}",
                e.id, spec.n_mels, input.n_mels
            )));
        }
        let target = encode_labels(&e.labels, &vocab)?;
        for w in windows(&normalize(&spec, norm)?, e.offset, input.n_frames, policy) {
            ds.push(&w.values, &target, &e.id, &e.song_id)?;
        }
    }
    Ok(ds)
}

fn windows(spec: &Spectrogram, offset: Option<usize>, n: usize, policy: SlicePolicy) -> Vec<Spectrogram> {
    match offset {
        Some(center) => vec![slice_at(spec, center as isize - (n / 2) as isize, n)],
        None => slice_excerpt(spec, n, policy),
    }
}
