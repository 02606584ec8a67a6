//! Small deterministic RNG used for all sampling in the pipeline.
//!
//! Every sampled artifact (negative down-sampling, candidate shuffles,
//! truncation indices) must be byte-identical across runs and platforms
//! for the same seed, so the generator is pinned here rather than taken
//! from an external crate whose stream may change between versions.
//! The generator is SplitMix64; substreams are derived by hashing a
//! label into the seed.

use alloc::string::String;
use alloc::vec::Vec;

/// SplitMix64 stream generator.
#[derive(Debug, Clone)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { state: seed }
    }

    /// Substream of `seed` named by `label`: seed is mixed with the
    /// FNV-1a hash of the label, then scrambled once.
    pub fn substream(seed: u64, label: &str) -> Self {
        DetRng::new(derive_seed(seed, label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Unbiased via rejection. Panics if n = 0.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is undefined");
        let n = n as u64;
        let limit = (u64::MAX / n) * n;
        loop {
            let v = self.next_u64();
            if v < limit {
                return (v % n) as usize;
            }
        }
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        lo + self.below(hi - lo + 1)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// k distinct indices drawn uniformly from 0..n, returned in
    /// ascending order so downstream element order is stable. Returns
    /// all of 0..n when k >= n. Draws nothing when k >= n, so callers
    /// relying on "sampling under the cap is a no-op" keep identical
    /// streams.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        if k >= n {
            return (0..n).collect();
        }
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        let mut picked: Vec<usize> = pool.into_iter().take(k).collect();
        picked.sort_unstable();
        picked
    }
}

/// Seed for one note's sampling stream: root seed XOR hash(note_id).
pub fn note_seed(root_seed: u64, note_id: &str) -> u64 {
    root_seed ^ fnv1a64(note_id.as_bytes())
}

/// Seed for a named substream of `seed`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    mix(seed ^ fnv1a64(label.as_bytes()))
}

/// FNV-1a 64-bit hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

fn mix(z: u64) -> u64 {
    let mut z = z;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Picks `k` elements of `items` uniformly without replacement,
/// preserving their relative order. No-op (and no RNG draw) when
/// `items.len() <= k`.
pub fn downsample_in_place<T>(rng: &mut DetRng, items: &mut Vec<T>, k: usize) {
    if items.len() <= k {
        return;
    }
    let keep = rng.sample_indices(items.len(), k);
    let mut kept: Vec<T> = Vec::with_capacity(k);
    let mut drained: Vec<Option<T>> = items.drain(..).map(Some).collect();
    for idx in keep {
        if let Some(v) = drained[idx].take() {
            kept.push(v);
        }
    }
    *items = kept;
}

/// Convenience label helper for per-task substreams.
pub fn task_label(note_id: &str, task: &str) -> String {
    let mut s = String::with_capacity(note_id.len() + task.len() + 1);
    s.push_str(note_id);
    s.push(':');
    s.push_str(task);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn streams_are_deterministic() {
        let mut a = DetRng::new(42);
        let mut b = DetRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn below_is_in_range() {
        let mut rng = DetRng::new(7);
        for n in 1..50usize {
            for _ in 0..200 {
                assert!(rng.below(n) < n);
            }
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = DetRng::new(3);
        let mut v: Vec<u32> = (0..20).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..20).collect::<Vec<u32>>());
    }

    #[test]
    fn sample_indices_sorted_unique() {
        let mut rng = DetRng::new(11);
        let picked = rng.sample_indices(30, 10);
        assert_eq!(picked.len(), 10);
        for w in picked.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(picked.iter().all(|&i| i < 30));
    }

    #[test]
    fn sample_under_cap_draws_nothing() {
        let mut a = DetRng::new(5);
        let mut b = DetRng::new(5);
        let _ = a.sample_indices(3, 10);
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn downsample_preserves_relative_order() {
        let mut rng = DetRng::new(9);
        let mut v = vec![10, 20, 30, 40, 50, 60];
        downsample_in_place(&mut rng, &mut v, 3);
        assert_eq!(v.len(), 3);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(v, sorted);
    }

    #[test]
    fn substreams_differ_by_label() {
        let mut a = DetRng::substream(1, "p10");
        let mut b = DetRng::substream(1, "p2");
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
