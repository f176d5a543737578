use super::EncodedSample;
use crate::numerics::SeededRng;

/// Up to `B` samples padded to the longest one. Padding positions carry
/// index 0 and are switched off in `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub sample_ids: Vec<usize>,
    pub max_len: usize,
    pub words: Vec<Vec<usize>>,
    pub tags: Vec<Vec<usize>>,
    pub heads: Vec<Vec<usize>>,
    pub rels: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }
}

/// Shuffles sample order with `rng` and cuts it into batches of `batch_size`
/// (the last one may be smaller).
pub fn make_batches(samples: &[EncodedSample], batch_size: usize, rng: &mut SeededRng) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    rng.shuffle(&mut order);
    order
        .chunks(batch_size)
        .map(|ids| {
            let max_len = ids.iter().map(|&i| samples[i].len()).max().unwrap_or(0);
            let pad = |v: &[usize]| {
                let mut out = v.to_vec();
                out.resize(max_len, 0);
                out
            };
            Batch {
                sample_ids: ids.to_vec(),
                max_len,
                words: ids.iter().map(|&i| pad(&samples[i].words)).collect(),
                tags: ids.iter().map(|&i| pad(&samples[i].tags)).collect(),
                heads: ids.iter().map(|&i| pad(&samples[i].heads)).collect(),
                rels: ids.iter().map(|&i| pad(&samples[i].rels)).collect(),
                mask: ids
                    .iter()
                    .map(|&i| (0..max_len).map(|k| k < samples[i].len()).collect())
                    .collect(),
            }
        })
        .collect()
}
