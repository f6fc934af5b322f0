use serde::{Deserialize, Serialize};

/// Step decay: `initial_lr × decay_factor^⌊epoch / decay_every⌋`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, decay_factor: f64, decay_every: usize) -> Option<Self> {
        let ok = initial_lr > 0.0
            && initial_lr.is_finite()
            && decay_factor > 0.0
            && decay_factor.is_finite()
            && decay_every >= 1;
        ok.then_some(Self {
            initial_lr,
            decay_factor,
            decay_every,
        })
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = (epoch / self.decay_every) as i32;
        self.initial_lr * self.decay_factor.powi(drops)
    }
}
