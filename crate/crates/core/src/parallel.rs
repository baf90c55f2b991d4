//! Chunked Monte Carlo execution.
//!
//! Work of `n` independent replications is cut into chunks of [`CHUNK`]
//! replications. Chunk `c` draws from the ChaCha8 stream `offset + c` of the
//! run seed, and per-chunk results are merged in chunk order. The output is
//! therefore bit-identical for any worker count, including the sequential
//! fallback used when the `parallel` feature is off.

use std::ops::Range;
#[cfg(feature = "parallel")]
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Replications per chunk.
pub const CHUNK: u64 = 2048;

pub type McRng = ChaCha8Rng;

/// RNG for substream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> McRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mix a seed with a purpose tag so unrelated stages of one experiment use
/// unrelated streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Partial result of a chunk that can absorb the next chunk's result.
pub trait Accumulator: Default + Send {
    fn merge(&mut self, other: Self);
}

impl Accumulator for crate::numeric::Moments {
    fn merge(&mut self, other: Self) {
        crate::numeric::Moments::merge(self, &other);
    }
}

impl<T: Send> Accumulator for Vec<T> {
    fn merge(&mut self, mut other: Self) {
        self.append(&mut other);
    }
}

/// Execution policy for Monte Carlo loops.
#[derive(Clone, Default)]
pub struct Exec {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Exec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Exec").field("workers", &self.workers).finish()
    }
}

impl Exec {
    /// Single-threaded execution.
    pub fn sequential() -> Self {
        Exec {
            workers: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// `workers == 0` uses the global rayon pool, `1` runs sequentially and
    /// anything else gets a dedicated pool of that size.
    pub fn with_workers(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            let pool = if workers > 1 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .ok()
                    .map(Arc::new)
            } else {
                None
            };
            Exec { workers, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = workers;
            Exec::sequential()
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn is_sequential(&self) -> bool {
        !cfg!(feature = "parallel") || self.workers == 1
    }

    /// Run `f` on every chunk of `0..n` and return the per-chunk results in
    /// chunk order.
    pub fn map_chunks<T, F>(&self, n: u64, seed: u64, stream_offset: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<u64>, &mut McRng) -> T + Sync,
    {
        let n_chunks = n.div_ceil(CHUNK);
        let run_chunk = |c: u64| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            let mut rng = stream_rng(seed, stream_offset + c);
            f(start..end, &mut rng)
        };
        if self.is_sequential() {
            return (0..n_chunks).map(run_chunk).collect();
        }
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            let par = || (0..n_chunks).into_par_iter().map(run_chunk).collect::<Vec<_>>();
            match &self.pool {
                Some(pool) => pool.install(par),
                None => par(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        unreachable!()
    }

    /// Accumulate `n` replications of `step` into `A`.
    pub fn run<A, F>(&self, n: u64, seed: u64, step: F) -> A
    where
        A: Accumulator,
        F: Fn(&mut McRng, &mut A) + Sync,
    {
        self.run_offset(n, seed, 0, step)
    }

    /// As [`Exec::run`], with chunk streams starting at `stream_offset`.
    pub fn run_offset<A, F>(&self, n: u64, seed: u64, stream_offset: u64, step: F) -> A
    where
        A: Accumulator,
        F: Fn(&mut McRng, &mut A) + Sync,
    {
        let parts = self.map_chunks(n, seed, stream_offset, |range, rng| {
            let mut acc = A::default();
            for _ in range {
                step(rng, &mut acc);
            }
            acc
        });
        let mut total = A::default();
        for p in parts {
            total.merge(p);
        }
        total
    }

    /// Draw `n` values, in replication order.
    pub fn collect<F>(&self, n: u64, seed: u64, draw: F) -> Vec<f64>
    where
        F: Fn(&mut McRng) -> f64 + Sync,
    {
        self.run(n, seed, |rng, acc: &mut Vec<f64>| acc.push(draw(rng)))
    }
}
