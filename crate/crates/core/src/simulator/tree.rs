/// Complete binary sum tree over slot rates. Internal nodes are always
/// recomputed from their children, so the root carries no accumulated drift.
#[derive(Debug, Clone)]
pub(crate) struct RateTree {
    cap: usize,
    nodes: Vec<f64>,
}

impl RateTree {
    pub fn new() -> Self {
        RateTree {
            cap: 1,
            nodes: vec![0.0; 2],
        }
    }

    fn grow(&mut self) {
        let old = std::mem::take(&mut self.nodes);
        let old_cap = self.cap;
        self.cap *= 2;
        self.nodes = vec![0.0; 2 * self.cap];
        self.nodes[self.cap..self.cap + old_cap].copy_from_slice(&old[old_cap..]);
        for i in (1..self.cap).rev() {
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    pub fn set(&mut self, slot: usize, rate: f64) {
        while slot >= self.cap {
            self.grow();
        }
        let mut i = slot + self.cap;
        if self.nodes[i] == rate {
            return;
        }
        self.nodes[i] = rate;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Slot whose cumulative interval contains `u`, with the offset of `u`
    /// inside that slot's rate. Never lands on a zero-rate slot while the
    /// total is positive.
    pub fn find(&self, mut u: f64) -> (usize, f64) {
        let mut i = 1;
        while i < self.cap {
            let left = self.nodes[2 * i];
            let right = self.nodes[2 * i + 1];
            if (u < left || right <= 0.0) && left > 0.0 {
                i *= 2;
            } else {
                u -= left;
                i = 2 * i + 1;
            }
        }
        let leaf = self.nodes[i];
        (i - self.cap, u.clamp(0.0, leaf * (1.0 - f64::EPSILON)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn find_selects_proportionally() {
        let mut t = RateTree::new();
        for (i, r) in [1.0, 0.0, 2.0, 3.0, 0.5].iter().enumerate() {
            t.set(i, *r);
        }
        assert_eq!(t.total(), 6.5);
        assert_eq!(t.find(0.5).0, 0);
        assert_eq!(t.find(1.0).0, 2);
        assert_eq!(t.find(2.9).0, 2);
        assert_eq!(t.find(3.0).0, 3);
        let (slot, off) = t.find(6.2);
        assert_eq!(slot, 4);
        assert!((off - 0.2).abs() < 1e-12);
        // overshoot from rounding still lands on a live slot
        assert_eq!(t.find(7.0).0, 4);
        t.set(4, 0.0);
        assert_eq!(t.find(6.4).0, 3);
    }
}
