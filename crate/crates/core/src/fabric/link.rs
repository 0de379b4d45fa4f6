//! Link latencies and loss injection.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Endpoint {
    Cpu(u16),
    Switch,
    Node(u16),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinkConfig {
    pub cpu_switch: SimTime,
    pub switch_node: SimTime,
    /// Per-packet network stack cost paid by the sender.
    pub stack: SimTime,
    pub drop_probability: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            cpu_switch: SimTime::from_ns(2285),
            switch_node: SimTime::from_ns(2285),
            stack: SimTime::from_ns(430),
            drop_probability: 0.0,
        }
    }
}

pub struct LinkModel {
    config: LinkConfig,
    rng: ChaCha8Rng,
    dropped: u64,
}

impl LinkModel {
    pub fn new(config: LinkConfig, seed: u64) -> Self {
        LinkModel { config, rng: ChaCha8Rng::seed_from_u64(seed), dropped: 0 }
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// One-way latency of the link attaching `endpoint` to the switch.
    pub fn latency(&self, endpoint: Endpoint) -> SimTime {
        match endpoint {
            Endpoint::Cpu(_) => self.config.cpu_switch,
            Endpoint::Node(_) => self.config.switch_node,
            Endpoint::Switch => SimTime::ZERO,
        }
    }

    /// Time at which a packet sent by `from` at `now` reaches the switch.
    pub fn to_switch(&self, from: Endpoint, now: SimTime) -> SimTime {
        now + self.config.stack + self.latency(from)
    }

    /// Time at which a packet leaving the switch at `now` reaches `to`.
    pub fn from_switch(&self, to: Endpoint, now: SimTime) -> SimTime {
        now + self.latency(to)
    }

    /// Draws the loss decision for one packet. Never consumes randomness
    /// when the probability is zero.
    pub fn should_drop(&mut self) -> bool {
        let p = self.config.drop_probability;
        if p <= 0.0 {
            return false;
        }
        let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let drop = u < p;
        if drop {
            self.dropped += 1;
        }
        drop
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn default_path_cpu_to_node() {
        let l = LinkModel::new(LinkConfig::default(), 0);
        let at_switch = l.to_switch(Endpoint::Cpu(0), SimTime::ZERO);
        let at_node = l.from_switch(Endpoint::Node(1), at_switch);
        assert_eq!(at_node, SimTime::from_ns(430 + 2285 + 2285));
    }

    #[test]
    fn drop_boundaries() {
        let mut l = LinkModel::new(LinkConfig { drop_probability: 1.0, ..Default::default() }, 1);
        assert!((0..100).all(|_| l.should_drop()));
        let mut l = LinkModel::new(LinkConfig::default(), 1);
        assert!((0..100).all(|_| !l.should_drop()));
    }

    #[test]
    fn drops_are_reproducible() {
        let cfg = LinkConfig { drop_probability: 0.3, ..Default::default() };
        let draw = |seed| {
            let mut l = LinkModel::new(cfg, seed);
            (0..200).map(|_| l.should_drop()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
        let hits = draw(9).iter().filter(|d| **d).count();
        assert!((30..90).contains(&hits));
    }
}
