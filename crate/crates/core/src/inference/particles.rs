use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nocurl::NodePotentials;

/// One stored posterior sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub chain: usize,
    pub step: usize,
    pub p: Vec<f64>,
    pub theta: Vec<f64>,
    /// Row-major `d x d` mask logits, present for joint sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_logits: Option<Vec<f64>>,
}

impl Particle {
    pub fn potentials(&self) -> Result<NodePotentials> {
        NodePotentials::from_vec(self.p.clone())
    }
}

/// Ring buffer of post-burn-in samples.
///
/// After a burn-in of `burn_in` steps each chain is snapshotted at
/// `capacity / chains` evenly spaced steps through the end of the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParticleBuffer {
    capacity: usize,
    chains: usize,
    burn_in: usize,
    stride: usize,
    schedule: Vec<usize>,
    particles: VecDeque<Particle>,
}

impl ParticleBuffer {
    pub fn new(
        capacity: usize,
        chains: usize,
        total_steps: usize,
        burn_in_fraction: f64,
    ) -> Result<Self> {
        if capacity == 0 || chains == 0 || total_steps == 0 {
            return Err(Error::Config(
                "particle buffer needs positive capacity, chains and steps".into(),
            ));
        }
        if !(0.0..1.0).contains(&burn_in_fraction) {
            return Err(Error::Config(format!(
                "burn-in fraction must lie in [0, 1), got {burn_in_fraction}"
            )));
        }
        let burn_in = ((total_steps as f64) * burn_in_fraction).floor() as usize;
        let remaining = total_steps - burn_in;
        let per_chain = (capacity / chains).max(1);
        let stride = remaining.div_ceil(per_chain);
        let mut schedule: Vec<usize> = (1..=per_chain)
            .map(|k| burn_in + (k * remaining).div_ceil(per_chain))
            .collect();
        schedule.dedup();
        Ok(ParticleBuffer {
            capacity,
            chains,
            burn_in,
            stride,
            schedule,
            particles: VecDeque::with_capacity(capacity),
        })
    }

    /// Whether to snapshot after 1-based iteration `step`.
    pub fn should_store(&self, step: usize) -> bool {
        self.schedule.binary_search(&step).is_ok()
    }

    /// Appends, dropping the oldest particle when full. Samples from the
    /// burn-in phase are rejected.
    pub fn push(&mut self, particle: Particle) -> Result<()> {
        if particle.step <= self.burn_in {
            return Err(Error::Contract(format!(
                "step {} is inside the burn-in of {} steps",
                particle.step, self.burn_in
            )));
        }
        if self.particles.len() == self.capacity {
            self.particles.pop_front();
        }
        self.particles.push_back(particle);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    /// Nominal spacing between snapshots of one chain.
    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn iter(&self) -> impl Iterator<Item = &Particle> {
        self.particles.iter()
    }

    pub fn to_vec(&self) -> Vec<Particle> {
        self.particles.iter().cloned().collect()
    }

    /// Rebuilds a buffer around particles loaded from disk.
    pub fn from_particles(chains: usize, particles: Vec<Particle>) -> Self {
        let capacity = particles.len().max(1);
        let burn_in = particles
            .iter()
            .map(|p| p.step)
            .min()
            .unwrap_or(1)
            .saturating_sub(1);
        let mut schedule: Vec<usize> = particles.iter().map(|p| p.step).collect();
        schedule.sort_unstable();
        schedule.dedup();
        ParticleBuffer {
            capacity,
            chains,
            burn_in,
            stride: 0,
            schedule,
            particles: particles.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn particle(chain: usize, step: usize) -> Particle {
        Particle {
            chain,
            step,
            p: vec![0.0],
            theta: vec![],
            w_logits: None,
        }
    }

    #[test]
    fn default_schedule_fills_capacity() {
        let b = ParticleBuffer::new(100, 10, 700, 0.5).unwrap();
        assert_eq!(b.burn_in(), 350);
        assert_eq!(b.stride(), 35);
        assert_eq!(b.schedule().len(), 10);
        assert_eq!(*b.schedule().last().unwrap(), 700);
        assert!(b.should_store(385) && !b.should_store(384) && !b.should_store(350));
    }

    #[test]
    fn rejects_burn_in_samples() {
        let mut b = ParticleBuffer::new(4, 1, 10, 0.5).unwrap();
        assert!(b.push(particle(0, 5)).is_err());
        b.push(particle(0, 6)).unwrap();
    }

    proptest! {
        #[test]
        fn stored_count_bounded(capacity in 1usize..50, chains in 1usize..12, steps in 1usize..400, frac in 0.0f64..0.95) {
            let mut b = ParticleBuffer::new(capacity, chains, steps, frac).unwrap();
            for t in 1..=steps {
                if b.should_store(t) {
                    prop_assert!(t > b.burn_in());
                    for c in 0..chains {
                        b.push(particle(c, t)).unwrap();
                    }
                }
                prop_assert!(b.len() <= capacity);
            }
            prop_assert!(b.schedule().len() <= (capacity / chains).max(1));
            prop_assert!(b.iter().all(|p| p.step > b.burn_in()));
            prop_assert!(!b.is_empty());
        }
    }
}
