//! Dataset plumbing: NDJSON manifests, song-grouped splits, excerpt slicing,
//! label encoding and the binary feature cache.

mod cache;
mod excerpt;
mod manifest;
mod split;

pub use cache::{cache_path, cache_read, cache_write, read_entry, write_entry, CACHE_MAGIC, CACHE_VERSION};
pub use excerpt::{slice_at, slice_excerpt, SlicePolicy};
pub use manifest::{
    encode_labels, load_manifest, load_vocab_file, parse_manifest, ExampleRef, LabelVocab, Split, Task,
};
pub use split::{random_split, DEFAULT_FRACTIONS};
