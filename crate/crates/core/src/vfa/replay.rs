//! Proportional prioritized replay over a sum tree.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub priority_eps: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 10_000,
            alpha: 0.6,
            beta_start: 0.4,
            beta_end: 1.0,
            priority_eps: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
struct SumTree {
    cap: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            nodes: vec![0.0; 2 * cap],
        }
    }

    fn set(&mut self, i: usize, value: f64) {
        let mut k = i + self.cap;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    fn get(&self, i: usize) -> f64 {
        self.nodes[i + self.cap]
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Leaf whose cumulative range contains `mass`.
    fn find(&self, mut mass: f64, filled: usize) -> usize {
        if self.cap == 1 {
            return 0;
        }
        let mut k = 1;
        while k < self.cap {
            let left = self.nodes[2 * k];
            if mass < left {
                k *= 2;
            } else {
                mass -= left;
                k = 2 * k + 1;
            }
        }
        (k - self.cap).min(filled - 1)
    }
}

/// Result of [`ReplayBuffer::sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub indices: Vec<usize>,
    /// Importance weights normalised by their maximum.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    cfg: ReplayConfig,
    items: Vec<T>,
    next: usize,
    tree: SumTree,
    max_priority: f64,
    /// Fraction of training elapsed, drives the importance exponent.
    progress: f64,
}

impl<T> ReplayBuffer<T> {
    pub fn new(cfg: ReplayConfig) -> Self {
        let cap = cfg.capacity.max(1).next_power_of_two();
        Self {
            cfg: ReplayConfig {
                capacity: cfg.capacity.max(1),
                ..cfg
            },
            items: Vec::new(),
            next: 0,
            tree: SumTree::new(cap),
            max_priority: 1.0,
            progress: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    /// Current importance-sampling exponent.
    pub fn beta_is(&self) -> f64 {
        self.cfg.beta_start + (self.cfg.beta_end - self.cfg.beta_start) * self.progress
    }

    pub fn set_progress(&mut self, progress: f64) {
        self.progress = progress.clamp(0.0, 1.0);
    }

    /// Inserts with the largest priority seen so far, overwriting the
    /// oldest entry once full.
    pub fn push(&mut self, item: T) {
        let slot = if self.items.len() < self.cfg.capacity {
            self.items.push(item);
            self.items.len() - 1
        } else {
            let s = self.next;
            self.items[s] = item;
            s
        };
        self.next = (slot + 1) % self.cfg.capacity;
        self.tree.set(slot, self.max_priority.powf(self.cfg.alpha));
    }

    pub fn update_priority(&mut self, i: usize, priority: f64) {
        let p = priority.max(0.0) + self.cfg.priority_eps;
        self.max_priority = self.max_priority.max(p);
        self.tree.set(i, p.powf(self.cfg.alpha));
    }

    /// Sampling probability of entry `i`.
    pub fn probability(&self, i: usize) -> f64 {
        self.tree.get(i) / self.tree.total()
    }

    /// Draws `batch` indices with probability proportional to
    /// priority^alpha, or `None` while fewer than `batch` entries are held.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Sampled> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        let total = self.tree.total();
        let n = self.items.len() as f64;
        let beta = self.beta_is();
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let i = self.tree.find(rng.random::<f64>() * total, self.items.len());
            indices.push(i);
            weights.push((n * self.probability(i)).powf(-beta));
        }
        let max = weights.iter().cloned().fold(0.0, f64::max);
        weights.iter_mut().for_each(|w| *w /= max);
        Some(Sampled { indices, weights })
    }
}
