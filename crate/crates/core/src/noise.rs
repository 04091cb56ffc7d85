//! Reproducible Wiener increments.
//!
//! Every value is addressed by `(seed, trajectory, substream, step, channel)`:
//! the ChaCha key is derived from `(seed, trajectory, substream)` and each
//! step reads from its own ChaCha stream. Paths therefore do not depend on
//! how trajectories are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    /// `±sqrt(3)` with probability 1/6 each, `0` with probability 2/3.
    #[value(alias = "three_point")]
    ThreePoint,
}

const STEP_SUBSTREAM: u64 = 0;
const POSTPROCESS_SUBSTREAM: u64 = 1;

fn substream_rng(seed: u64, trajectory: u64, substream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&trajectory.to_le_bytes());
    key[16..24].copy_from_slice(&substream.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone)]
pub struct NoiseStream {
    kind: NoiseKind,
    seed: u64,
    trajectory: u64,
    step: u64,
    post_step: u64,
    step_rng: ChaCha8Rng,
    post_rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(kind: NoiseKind, seed: u64, trajectory: u64) -> Self {
        Self {
            kind,
            seed,
            trajectory,
            step: 0,
            post_step: 0,
            step_rng: substream_rng(seed, trajectory, STEP_SUBSTREAM),
            post_rng: substream_rng(seed, trajectory, POSTPROCESS_SUBSTREAM),
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trajectory(&self) -> u64 {
        self.trajectory
    }

    /// Index of the next step whose increments will be drawn.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Repositions the increment counter.
    pub fn seek_step(&mut self, step: u64) {
        self.step = step;
    }

    fn sample(kind: NoiseKind, rng: &mut ChaCha8Rng) -> f64 {
        match kind {
            NoiseKind::Gaussian => rng.sample(StandardNormal),
            NoiseKind::ThreePoint => {
                let u: f64 = rng.random();
                if u < 1.0 / 6.0 {
                    -(3.0f64.sqrt())
                } else if u < 1.0 / 3.0 {
                    3.0f64.sqrt()
                } else {
                    0.0
                }
            }
        }
    }

    /// Fills `out` with the `out.len()` channel increments of the current
    /// step, scaled by `sqrt(h)`, and advances the step counter.
    pub fn draw_increments_into(&mut self, h: f64, out: &mut [f64]) {
        debug_assert!(h > 0.0);
        let scale = h.sqrt();
        self.step_rng.set_stream(self.step);
        self.step_rng.set_word_pos(0);
        for v in out.iter_mut() {
            *v = scale * Self::sample(self.kind, &mut self.step_rng);
        }
        self.step += 1;
    }

    pub fn draw_increments(&mut self, h: f64, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m];
        self.draw_increments_into(h, &mut out);
        out
    }

    /// Unscaled postprocessor noise, drawn from a substream disjoint from
    /// the step increments.
    pub fn draw_postprocess_noise_into(&mut self, out: &mut [f64]) {
        self.post_rng.set_stream(self.post_step);
        self.post_rng.set_word_pos(0);
        for v in out.iter_mut() {
            *v = Self::sample(self.kind, &mut self.post_rng);
        }
        self.post_step += 1;
    }

    pub fn draw_postprocess_noise(&mut self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        self.draw_postprocess_noise_into(&mut out);
        out
    }
}
