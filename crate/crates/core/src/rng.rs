//! Seeded pseudo-random stream shared by every stochastic step.
//!
//! The generator is xoshiro256++ (Blackman & Vigna). A 64-bit seed is
//! expanded into the 256-bit state with SplitMix64, which is what
//! `SeedableRng::seed_from_u64` does for this generator. Derived draws use
//! fixed conversions so streams are identical on every platform:
//!
//! * `uniform_f64`: `(x >> 11) * 2^-53`, in `[0, 1)`
//! * `uniform_f32`: `(x >> 40) * 2^-24`, in `[0, 1)`
//! * `below(n)`: rejection sampling on the top bits, unbiased
//!
//! Reference output for `Rng::new(0)`, first four `next_u64` values:
//!
//! ```text
//! 0x53175d61490b23df
//! 0x61da6f3dc380d507
//! 0x5c0fdf91ec9a7bfc
//! 0x02eebf8c3bbe5e1a
//! ```

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rng(Xoshiro256PlusPlus);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform integer in `0..n`. Panics when `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) has no valid output");
        if n.is_power_of_two() {
            return self.next_u64() & (n - 1);
        }
        // Largest multiple of n that fits; values past it are rejected.
        let zone = u64::MAX - (u64::MAX % n) - 1;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return x % n;
            }
        }
    }

    /// Fisher-Yates shuffle in place.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Independent stream for a sub-task, e.g. one mask per image.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}
