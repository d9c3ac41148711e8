use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::table::LabeledSplit;
use crate::{Error, Result};

/// A K-shot draw from a labeled pool.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSplit {
    /// Exactly `K` rows per class, grouped by class.
    pub labeled: LabeledSplit,
    /// Pool rows not drawn, in their original order.
    pub remainder: LabeledSplit,
    pub labeled_indices: Vec<usize>,
    pub remainder_indices: Vec<usize>,
}

/// Draws `shots` examples per class from `pool`, deterministically in `seed`.
pub fn sample_few_shot(
    pool: &LabeledSplit,
    num_classes: usize,
    shots: usize,
    seed: u64,
) -> Result<FewShotSplit> {
    if shots == 0 {
        return Err(Error::Config("shots must be positive".into()));
    }
    pool.check_labels(num_classes, "few-shot pool")?;
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in pool.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; pool.len()];
    let mut labeled_indices = Vec::with_capacity(shots * num_classes);
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < shots {
            return Err(Error::NotEnoughShots {
                class,
                available: members.len(),
                requested: shots,
            });
        }
        members.shuffle(&mut rng);
        for &i in &members[..shots] {
            chosen[i] = true;
            labeled_indices.push(i);
        }
    }
    let remainder_indices: Vec<usize> = (0..pool.len()).filter(|&i| !chosen[i]).collect();
    Ok(FewShotSplit {
        labeled: pool.select(&labeled_indices),
        remainder: pool.select(&remainder_indices),
        labeled_indices,
        remainder_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EmbeddingTable;

    fn pool(per_class: &[usize]) -> LabeledSplit {
        let labels: Vec<usize> = per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        let values: Vec<f32> = (0..labels.len()).flat_map(|i| [i as f32, 1.0]).collect();
        LabeledSplit::new(EmbeddingTable::new(2, values, false).unwrap(), labels).unwrap()
    }

    #[test]
    fn counts_per_class() {
        let split = sample_few_shot(&pool(&[10; 5]), 5, 4, 7).unwrap();
        assert_eq!(split.labeled.len(), 20);
        assert_eq!(split.remainder.len(), 30);
        for c in 0..5 {
            assert_eq!(split.labeled.labels.iter().filter(|&&l| l == c).count(), 4);
        }
    }

    #[test]
    fn same_seed_same_selection() {
        let p = pool(&[10; 5]);
        let a = sample_few_shot(&p, 5, 4, 11).unwrap();
        let b = sample_few_shot(&p, 5, 4, 11).unwrap();
        assert_eq!(a.labeled_indices, b.labeled_indices);
        let c = sample_few_shot(&p, 5, 4, 12).unwrap();
        assert_ne!(a.labeled_indices, c.labeled_indices);
    }

    #[test]
    fn short_class_is_an_error() {
        let err = sample_few_shot(&pool(&[10, 3, 10]), 3, 4, 0).unwrap_err();
        assert!(matches!(
            err,
            Error::NotEnoughShots {
                class: 1,
                available: 3,
                requested: 4
            }
        ));
    }

    #[test]
    fn partitions_the_pool() {
        let p = pool(&[7, 9, 5, 6]);
        let s = sample_few_shot(&p, 4, 5, 3).unwrap();
        let mut all: Vec<usize> = s
            .labeled_indices
            .iter()
            .chain(&s.remainder_indices)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..p.len()).collect::<Vec<_>>());
    }
}
