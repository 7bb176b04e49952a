//! Seeding and parallelism helpers shared across the crate.
//!
//! All randomness flows through [`SeedTree`], a splittable deterministic seed
//! derivation scheme: children are derived from a parent seed and a string
//! tag, so adding a new consumer never perturbs the streams of existing ones.
//!
//! Parallel loops go through the helpers in this module. With the `parallel`
//! feature they dispatch to rayon unless disabled at runtime via
//! [`set_parallel_enabled`]; without the feature they are plain sequential
//! loops. Work is partitioned by position, never by thread, so results are
//! bitwise identical across all three configurations.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
static PARALLEL_ENABLED: AtomicBool = AtomicBool::new(true);

/// Runtime switch for the rayon code paths (used by the benches to compare
/// parallel and sequential execution in one binary). No-op without the
/// `parallel` feature.
pub fn set_parallel_enabled(enabled: bool) {
    #[cfg(feature = "parallel")]
    PARALLEL_ENABLED.store(enabled, Ordering::Relaxed);
    #[cfg(not(feature = "parallel"))]
    let _ = enabled;
}

/// Whether parallel dispatch is currently active.
pub fn parallel_enabled() -> bool {
    #[cfg(feature = "parallel")]
    {
        PARALLEL_ENABLED.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// Apply `f` to each `width`-sized chunk of `data`, indexed by chunk number.
/// Chunks are disjoint, so the parallel and sequential paths produce
/// identical bytes.
pub fn for_each_chunk_mut<F>(data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(width > 0);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        data.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
        return;
    }
    data.chunks_mut(width)
        .enumerate()
        .for_each(|(i, chunk)| f(i, chunk));
}

/// Order-preserving parallel map over indices `0..n`.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Splittable deterministic seed derivation.
///
/// ```
/// use tenseg_core::util::SeedTree;
/// let root = SeedTree::new(42);
/// let a = root.child("simkit").child("noise");
/// let b = root.child("training");
/// assert_ne!(a.seed(), b.seed());
/// // Derivation is a pure function of (seed, tag path).
/// assert_eq!(a.seed(), SeedTree::new(42).child("simkit").child("noise").seed());
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive a child seed from a string tag (FNV-1a over the tag bytes,
    /// mixed with a SplitMix64 finalizer).
    pub fn child(&self, tag: &str) -> SeedTree {
        let mut h = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        for b in tag.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        SeedTree { seed: splitmix64(h) }
    }

    /// Derive a child seed from an integer tag (epoch counters and the like).
    pub fn child_idx(&self, idx: u64) -> SeedTree {
        SeedTree {
            seed: splitmix64(self.seed ^ idx.wrapping_mul(0xff51_afd7_ed55_8ccd)),
        }
    }

    /// Instantiate the RNG for this node of the tree.
    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(self.seed)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_tree_is_deterministic_and_tag_sensitive() {
        let t = SeedTree::new(7);
        assert_eq!(t.child("a").seed(), t.child("a").seed());
        assert_ne!(t.child("a").seed(), t.child("b").seed());
        assert_ne!(t.child("a").child("b").seed(), t.child("b").child("a").seed());
        assert_ne!(t.child_idx(0).seed(), t.child_idx(1).seed());
    }

    #[test]
    fn chunk_helper_covers_all_rows() {
        let mut data = vec![0.0; 12];
        for_each_chunk_mut(&mut data, 3, |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (i * 10 + j) as f64;
            }
        });
        assert_eq!(data[3], 10.0);
        assert_eq!(data[11], 32.0);
    }

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(5, |i| i * i);
        assert_eq!(v, vec![0, 1, 4, 9, 16]);
    }

    #[test]
    fn parallel_toggle_round_trips() {
        let was = parallel_enabled();
        set_parallel_enabled(false);
        assert!(!parallel_enabled() || cfg!(not(feature = "parallel")));
        set_parallel_enabled(was);
    }
}
