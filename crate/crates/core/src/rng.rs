//! Seeded, splittable randomness.
//!
//! A [`RandomStream`] owns two independent ChaCha8 lanes derived from
//! `(seed, stream)`: one for Bernoulli coins and one for displacement
//! draws. Book and tree drivers built from equal streams consume coins and
//! draws in the same order, which is what makes the pathwise coupling exact.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::displacement::DisplacementDist;

/// Source of coins and displacement draws.
pub trait Source {
    /// Flip a coin with bias `p`; `true` is heads.
    fn coin(&mut self, p: f64) -> bool;

    /// Draw one realization of `dist`.
    fn displacement(&mut self, dist: &DisplacementDist) -> f64;
}

#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream: u64,
    coins: ChaCha8Rng,
    draws: ChaCha8Rng,
}

impl RandomStream {
    /// Stream `stream` of the master `seed`. Distinct `stream` values give
    /// non-overlapping sequences.
    pub fn new(seed: u64, stream: u64) -> Self {
        assert!(stream < (1 << 62), "stream id out of range");
        let mut coins = ChaCha8Rng::seed_from_u64(seed);
        coins.set_stream(2 * stream);
        let mut draws = ChaCha8Rng::seed_from_u64(seed);
        draws.set_stream(2 * stream + 1);
        Self {
            seed,
            stream,
            coins,
            draws,
        }
    }

    /// Stream for replica `index` of `seed`.
    pub fn replica(seed: u64, index: u64) -> Self {
        Self::new(seed, index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Uniform on [0, 1) from the coin lane.
    pub fn coin_uniform(&mut self) -> f64 {
        self.coins.gen::<f64>()
    }

    /// Uniform on [0, 1) from the displacement lane.
    pub fn draw_uniform(&mut self) -> f64 {
        self.draws.gen::<f64>()
    }
}

impl Source for RandomStream {
    fn coin(&mut self, p: f64) -> bool {
        self.coin_uniform() < p
    }

    fn displacement(&mut self, dist: &DisplacementDist) -> f64 {
        let u = self.draw_uniform();
        dist.quantile(u)
    }
}

/// Replays a fixed script of coins and displacements. Panics when a driver
/// asks for more than was scripted.
#[derive(Debug, Clone, Default)]
pub struct Scripted {
    coins: VecDeque<bool>,
    draws: VecDeque<f64>,
}

impl Scripted {
    pub fn new(coins: impl IntoIterator<Item = bool>, draws: impl IntoIterator<Item = f64>) -> Self {
        Self {
            coins: coins.into_iter().collect(),
            draws: draws.into_iter().collect(),
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.coins.is_empty() && self.draws.is_empty()
    }
}

impl Source for Scripted {
    fn coin(&mut self, _p: f64) -> bool {
        self.coins.pop_front().expect("scripted coins exhausted")
    }

    fn displacement(&mut self, _dist: &DisplacementDist) -> f64 {
        self.draws.pop_front().expect("scripted draws exhausted")
    }
}

/// splitmix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Address of a node in a tree whose randomness is keyed by position
/// rather than by consumption order. The realized tree is then the same
/// whatever order it is explored in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeKey(u64);

impl NodeKey {
    pub fn root(seed: u64, replica: u64) -> Self {
        NodeKey(mix64(mix64(seed) ^ replica.wrapping_mul(0xD605_BBB5_8C8A_BBAB)))
    }

    pub fn child(self, rank: u64) -> Self {
        NodeKey(mix64(self.0 ^ mix64(rank.wrapping_add(0x632B_E59B_D9B4_E019))))
    }

    /// The stream realizing this node's offspring.
    pub fn stream(self) -> RandomStream {
        RandomStream::new(self.0, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_replay() {
        let mut a = RandomStream::new(7, 3);
        let mut b = RandomStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.coin_uniform().to_bits(), b.coin_uniform().to_bits());
            assert_eq!(a.draw_uniform().to_bits(), b.draw_uniform().to_bits());
        }
    }

    #[test]
    fn lanes_are_disjoint() {
        let mut a = RandomStream::new(7, 0);
        let coins: Vec<u64> = (0..16).map(|_| a.coin_uniform().to_bits()).collect();
        let draws: Vec<u64> = (0..16).map(|_| a.draw_uniform().to_bits()).collect();
        assert_ne!(coins, draws);
        let mut b = RandomStream::new(7, 1);
        let other: Vec<u64> = (0..16).map(|_| b.coin_uniform().to_bits()).collect();
        assert_ne!(coins, other);
    }

    #[test]
    fn coin_lane_unaffected_by_draws() {
        let mut a = RandomStream::new(11, 0);
        let mut b = RandomStream::new(11, 0);
        for _ in 0..10 {
            b.draw_uniform();
        }
        assert_eq!(a.coin_uniform().to_bits(), b.coin_uniform().to_bits());
    }

    #[test]
    fn node_keys_differ_by_rank_and_parent() {
        let r = NodeKey::root(1, 0);
        assert_ne!(r.child(0), r.child(1));
        assert_ne!(r.child(0).child(0), r.child(0));
        assert_ne!(NodeKey::root(1, 0), NodeKey::root(1, 1));
        assert_eq!(r.child(5), NodeKey::root(1, 0).child(5));
    }

    #[test]
    #[should_panic(expected = "exhausted")]
    fn scripted_panics_when_exhausted() {
        let mut s = Scripted::new([true], []);
        s.coin(0.5);
        s.coin(0.5);
    }
}
