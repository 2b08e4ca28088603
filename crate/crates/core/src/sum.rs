//! Deterministic pairwise (cascade) summation.
//!
//! Values are summed naively in fixed-size blocks, and block totals are
//! merged like a binary counter, so the result only depends on the order in
//! which values are pushed. Error grows as O(log N) instead of O(N).

const BLOCK: usize = 32;
const LEVELS: usize = 64;

#[derive(Debug, Clone)]
pub struct PairwiseSum {
    block: f64,
    in_block: usize,
    levels: [f64; LEVELS],
    occupied: u64,
}

impl Default for PairwiseSum {
    fn default() -> Self {
        Self::new()
    }
}

impl PairwiseSum {
    pub fn new() -> Self {
        Self {
            block: 0.0,
            in_block: 0,
            levels: [0.0; LEVELS],
            occupied: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.block += x;
        self.in_block += 1;
        if self.in_block == BLOCK {
            let total = self.block;
            self.block = 0.0;
            self.in_block = 0;
            self.carry(total);
        }
    }

    fn carry(&mut self, mut total: f64) {
        let mut level = 0;
        while self.occupied & (1 << level) != 0 {
            total += self.levels[level];
            self.occupied &= !(1 << level);
            level += 1;
        }
        self.levels[level] = total;
        self.occupied |= 1 << level;
    }

    pub fn total(&self) -> f64 {
        let mut acc = self.block;
        for level in 0..LEVELS {
            if self.occupied & (1 << level) != 0 {
                acc += self.levels[level];
            }
        }
        acc
    }
}

pub fn pairwise_sum(values: &[f64]) -> f64 {
    let mut acc = PairwiseSum::new();
    values.iter().for_each(|&v| acc.push(v));
    acc.total()
}

pub fn pairwise_sum_iter(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = PairwiseSum::new();
    values.into_iter().for_each(|v| acc.push(v));
    acc.total()
}
