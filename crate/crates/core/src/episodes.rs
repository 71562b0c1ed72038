//! Seeded sampling of support/query tasks from a labelled pool.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::rng::SplitMix64;
use crate::{Error, Result};

/// One pool entry: an item id and the classes it contains.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolItem {
    pub id: String,
    pub classes: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub support: Vec<String>,
    pub query: Vec<String>,
    /// Classes present in the support items.
    pub novel_classes: BTreeSet<String>,
    /// `⌈|novel| / 2⌉` of the novel classes.
    pub base_classes: BTreeSet<String>,
    pub seed: u64,
}

/// Draws `batch_size` distinct items: the first half is the support set,
/// the second half the query set. The base classes are a uniformly chosen
/// half of the support classes, rounded up.
pub fn sample_episode(pool: &[PoolItem], batch_size: usize, seed: u64) -> Result<Episode> {
    if batch_size < 2 || !batch_size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "batch size must be even and at least 2, got {batch_size}"
        )));
    }
    if pool.len() < batch_size {
        return Err(Error::InsufficientData {
            needed: batch_size,
            available: pool.len(),
        });
    }
    let mut rng = SplitMix64::new(seed);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    rng.partial_shuffle(&mut order, batch_size);
    let half = batch_size / 2;
    let support: Vec<&PoolItem> = order[..half].iter().map(|&i| &pool[i]).collect();
    let query: Vec<&PoolItem> = order[half..batch_size].iter().map(|&i| &pool[i]).collect();

    let novel: BTreeSet<String> = support.iter().flat_map(|it| it.classes.iter().cloned()).collect();
    let mut candidates: Vec<String> = novel.iter().cloned().collect();
    let k = candidates.len().div_ceil(2);
    rng.partial_shuffle(&mut candidates, k);
    Ok(Episode {
        support: support.iter().map(|it| it.id.clone()).collect(),
        query: query.iter().map(|it| it.id.clone()).collect(),
        novel_classes: novel,
        base_classes: candidates.into_iter().take(k).collect(),
        seed,
    })
}
