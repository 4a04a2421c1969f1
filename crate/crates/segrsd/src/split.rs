use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use segrsd_core::rng::derive_rng;
use segrsd_core::Split;

use crate::error::{DataError, Result};

/// Train / validation / test ratio of the reference setup (50 / 10 / 20).
pub const DEFAULT_RATIOS: (usize, usize, usize) = (5, 1, 2);

/// Split sizes for `n` videos by largest-remainder rounding. Ties in the
/// remainder go to the earlier split.
pub fn split_sizes(n: usize, ratios: (usize, usize, usize)) -> Result<[usize; 3]> {
    let r = [ratios.0, ratios.1, ratios.2];
    let total: usize = r.iter().sum();
    if total == 0 {
        return Err(DataError::Usage("split ratios must not all be zero".into()));
    }
    if n < total {
        return Err(DataError::Usage(format!(
            "{n} videos are too few for split ratios {}:{}:{}",
            r[0], r[1], r[2]
        )));
    }
    let mut sizes = [0usize; 3];
    let mut rem = [0usize; 3];
    for i in 0..3 {
        sizes[i] = n * r[i] / total;
        rem[i] = n * r[i] % total;
    }
    let mut left = n - sizes.iter().sum::<usize>();
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| rem[b].cmp(&rem[a]).then(a.cmp(&b)));
    for &i in idx.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Video-level split. The ids are sorted before the seeded shuffle so the
/// result does not depend on the input order.
pub fn split_corpus(ids: &[String], ratios: (usize, usize, usize), seed: u64) -> Result<BTreeMap<String, Split>> {
    let sizes = split_sizes(ids.len(), ratios)?;
    let mut order: Vec<&String> = ids.iter().collect();
    order.sort();
    let before = order.len();
    order.dedup();
    if order.len() != before {
        return Err(DataError::Usage("duplicate video ids".into()));
    }
    order.shuffle(&mut derive_rng(seed, "split", 0));
    let splits = [Split::Train, Split::Val, Split::Test];
    let mut out = BTreeMap::new();
    let mut it = order.into_iter();
    for (split, &size) in splits.iter().zip(&sizes) {
        for id in it.by_ref().take(size) {
            out.insert(id.clone(), *split);
        }
    }
    Ok(out)
}
