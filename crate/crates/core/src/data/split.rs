use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;

use super::manifest::{ExampleRef, Split};
use crate::error::{Error, Result};
use crate::nn::rng_from_seed;

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

/// Song counts per split: floors of the train and val fractions, the rest to
/// test, then topped up so that every split holds at least one song.
fn split_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let mut sizes = [
        (fractions[0] * n as f64 + 1e-9).floor() as usize,
        (fractions[1] * n as f64 + 1e-9).floor() as usize,
        0,
    ];
    sizes[1] = sizes[1].min(n - sizes[0]);
    sizes[2] = n - sizes[0] - sizes[1];
    for i in 0..3 {
        while sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], j)).expect("three splits");
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    sizes
}

/// Assigns train/val/test by song.
///
/// Distinct song ids are sorted, shuffled with `seed`, and cut into
/// contiguous runs; every example inherits its song's split. Existing split
/// fields are overwritten.
pub fn random_split(examples: &mut [ExampleRef], fractions: [f64; 3], seed: u64) -> Result<()> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let mut songs: Vec<&str> = examples
        .iter()
        .map(|e| e.song_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if songs.len() < 3 {
        return Err(Error::invalid(format!(
            "{} distinct songs cannot fill 3 splits",
            songs.len()
        )));
    }
    songs.shuffle(&mut rng_from_seed(seed));
    let sizes = split_sizes(songs.len(), fractions);
    let splits = [Split::Train, Split::Val, Split::Test];
    let mut assignment: HashMap<String, Split> = HashMap::new();
    let mut pos = 0;
    for (size, split) in sizes.into_iter().zip(splits) {
        for s in &songs[pos..pos + size] {
            assignment.insert((*s).to_owned(), split);
        }
        pos += size;
    }
    for e in examples.iter_mut() {
        e.split = assignment[&e.song_id];
    }
    Ok(())
}
