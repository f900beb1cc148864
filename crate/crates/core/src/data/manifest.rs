use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

/// One manifest record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRef {
    pub id: String,
    /// As written in the manifest; see [`ExampleRef::resolve_audio`].
    #[serde(rename = "path")]
    pub audio_path: String,
    pub labels: Vec<String>,
    pub song_id: String,
    #[serde(default)]
    pub split: Split,
    /// Center frame of the excerpt inside the example's spectrogram, for
    /// datasets annotated per frame. Absent means the whole file is the example.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

impl ExampleRef {
    /// Relative paths are taken relative to the manifest's directory.
    pub fn resolve_audio(&self, manifest_dir: &Path) -> PathBuf {
        let p = Path::new(&self.audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_dir.join(p)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SingleLabel,
    MultiLabel,
}

/// Ordered label set. Indices are positions in `labels`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocab {
    pub labels: Vec<String>,
    pub task: Task,
}

impl LabelVocab {
    pub fn new(labels: Vec<String>, task: Task) -> Result<Self> {
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::invalid(format!("duplicate label `{l}` in vocabulary")));
            }
        }
        Ok(Self { labels, task })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// One-hot (single label) or multi-hot (multi label) target.
pub fn encode_labels(labels: &[String], vocab: &LabelVocab) -> Result<Vec<f32>> {
    if vocab.task == Task::SingleLabel && labels.len() != 1 {
        return Err(Error::Cardinality(format!(
            "single-label task needs exactly one label, got {}",
            labels.len()
        )));
    }
    let mut t = vec![0.0; vocab.len()];
    for l in labels {
        let i = vocab
            .index_of(l)
            .ok_or_else(|| Error::UnknownLabel(l.clone()))?;
        t[i] = 1.0;
    }
    Ok(t)
}

/// Parses NDJSON manifest text. Blank lines are skipped; line numbers are 1-based.
///
/// The vocabulary is `explicit` when given, otherwise labels in order of first
/// appearance. The task is multi-label when any record carries other than
/// exactly one label.
pub fn parse_manifest(text: &str, explicit: Option<Vec<String>>) -> Result<(Vec<ExampleRef>, LabelVocab)> {
    let mut examples: Vec<ExampleRef> = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExampleRef = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: line_no,
            detail: e.to_string(),
        })?;
        if rec.id.is_empty() {
            return Err(Error::Manifest {
                line: line_no,
                detail: "empty id".into(),
            });
        }
        if rec.split == Split::Train && rec.labels.is_empty() {
            return Err(Error::Manifest {
                line: line_no,
                detail: format!("train example `{}` has no labels", rec.id),
            });
        }
        if !ids.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        examples.push(rec);
    }
    let task = if examples.iter().any(|e| e.labels.len() != 1) {
        Task::MultiLabel
    } else {
        Task::SingleLabel
    };
    let labels = match explicit {
        Some(v) => v,
        None => {
            let mut seen = HashSet::new();
            let mut v = Vec::new();
            for l in examples.iter().flat_map(|e| &e.labels) {
                if seen.insert(l.as_str()) {
                    v.push(l.clone());
                }
            }
            v
        }
    };
    let vocab = LabelVocab::new(labels, task)?;
    for e in &examples {
        if let Some(l) = e.labels.iter().find(|l| vocab.index_of(l).is_none()) {
            return Err(Error::UnknownLabel(l.clone()));
        }
    }
    Ok((examples, vocab))
}

/// One label per non-empty line.
pub fn load_vocab_file(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

pub fn load_manifest(path: &Path, vocab_file: Option<&Path>) -> Result<(Vec<ExampleRef>, LabelVocab)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let explicit = vocab_file.map(load_vocab_file).transpose()?;
    parse_manifest(&text, explicit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, labels: &[&str], song: &str, split: Option<&str>) -> String {
        let mut v = serde_json::json!({
            "id": id, "path": format!("{id}.wav"), "labels": labels, "song_id": song,
        });
        if let Some(s) = split {
            v["split"] = s.into();
        }
        v.to_string()
    }

    #[test]
    fn vocab_in_first_appearance_order() {
        let text = [
            rec("a", &["sax"], "s1", None),
            rec("b", &["voi"], "s1", None),
            rec("c", &["sax"], "s2", Some("test")),
        ]
        .join("\n");
        let (ex, vocab) = parse_manifest(&text, None).unwrap();
        assert_eq!(ex.len(), 3);
        assert_eq!(vocab.labels, ["sax", "voi"]);
        assert_eq!(vocab.task, Task::SingleLabel);
        assert_eq!(ex[2].split, Split::Test);
        assert_eq!(ex[0].split, Split::Unassigned);
    }

    #[test]
    fn multi_label_detected() {
        let text = [rec("a", &["x", "y"], "s", None), rec("b", &["x"], "s", None)].join("\n");
        let (_, vocab) = parse_manifest(&text, None).unwrap();
        assert_eq!(vocab.task, Task::MultiLabel);
    }

    #[test]
    fn duplicate_id_named() {
        let text = [rec("dup", &["x"], "s", None), rec("dup", &["x"], "t", None)].join("\n");
        let err = parse_manifest(&text, None).unwrap_err();
        assert!(matches!(&err, Error::DuplicateId(id) if id == "dup"));
        assert!(err.to_string().contains("dup"));
    }

    #[test]
    fn empty_train_labels_rejected() {
        let text = [rec("a", &["x"], "s", None), rec("b", &[], "s", Some("train"))].join("\n");
        let err = parse_manifest(&text, None).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }), "{err}");
        // Unlabeled test records are fine.
        let text = rec("b", &[], "s", Some("test"));
        assert!(parse_manifest(&text, None).is_ok());
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = format!("{}\n\n{{\"id\": 3}}\n", rec("a", &["x"], "s", None));
        match parse_manifest(&text, None).unwrap_err() {
            Error::Manifest { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn explicit_vocab_controls_order() {
        let text = [rec("a", &["x"], "s", None), rec("b", &["y"], "s", None)].join("\n");
        let (_, vocab) = parse_manifest(&text, Some(vec!["y".into(), "z".into(), "x".into()])).unwrap();
        assert_eq!(vocab.index_of("x"), Some(2));
        let err = parse_manifest(&text, Some(vec!["y".into()])).unwrap_err();
        assert!(matches!(&err, Error::UnknownLabel(l) if l == "x"));
    }

    #[test]
    fn encoding() {
        let labels: Vec<String> = (0..32).map(|i| format!("p{i}")).collect();
        let single = LabelVocab::new(labels.clone(), Task::SingleLabel).unwrap();
        let t = encode_labels(&["p3".to_string()], &single).unwrap();
        assert_eq!(t.iter().sum::<f32>(), 1.0);
        assert_eq!(t[3], 1.0);
        assert!(matches!(encode_labels(&[], &single), Err(Error::Cardinality(_))));

        let multi = LabelVocab::new(labels, Task::MultiLabel).unwrap();
        assert_eq!(encode_labels(&[], &multi).unwrap(), vec![0.0; 32]);
        let t = encode_labels(&["p0".into(), "p31".into()], &multi).unwrap();
        assert_eq!((t[0], t[31], t.iter().sum::<f32>()), (1.0, 1.0, 2.0));
        let err = encode_labels(&["nope".into()], &multi).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn duplicate_vocab_rejected() {
        assert!(LabelVocab::new(vec!["a".into(), "a".into()], Task::SingleLabel).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_manifest_dir() {
        let (ex, _) = parse_manifest(&rec("a", &["x"], "s", None), None).unwrap();
        assert_eq!(ex[0].resolve_audio(Path::new("/data")), PathBuf::from("/data/a.wav"));
    }
}
