use rand::seq::SliceRandom;
use rand::Rng;

/// Endless stream of indices in `0..len`, reshuffled after every pass.
///
/// Batches may straddle a reshuffle, so every draw returns exactly the
/// requested count even when `len` is smaller than the batch.
#[derive(Debug, Clone)]
pub struct CyclingSampler {
    order: Vec<usize>,
    pos: usize,
}

impl CyclingSampler {
    pub fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Next `n` indices; empty if the stream is empty.
    pub fn draw(&mut self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let take = (n - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// A fresh permutation of `0..len` cut into batches of at most `batch`.
pub fn epoch_batches(len: usize, batch: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}
