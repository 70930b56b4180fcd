/// Binary sum tree over a fixed number of non-negative leaves.
///
/// Internal nodes are recomputed from their children on every update, so the
/// root never accumulates drift.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    base: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(leaves: usize) -> Self {
        let base = leaves.max(1).next_power_of_two();
        Self {
            leaves,
            base,
            nodes: vec![0.0; 2 * base],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.base + leaf]
    }

    pub fn set(&mut self, leaf: usize, value: f64) {
        debug_assert!(leaf < self.leaves && value >= 0.0);
        let mut i = self.base + leaf;
        self.nodes[i] = value;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass`, for `mass` in `[0, total)`.
    /// Only leaves below `filled` are returned.
    pub fn find(&self, mut mass: f64, filled: usize) -> usize {
        let mut i = 1;
        while i < self.base {
            let left = self.nodes[2 * i];
            if mass < left {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        let leaf = i - self.base;
        if leaf >= filled {
            // Rounding at the right edge can walk past the last filled leaf.
            (0..filled).rev().find(|&j| self.get(j) > 0.0).unwrap_or(0)
        } else {
            leaf
        }
    }
}
