//! Worker-pool sizing and a deterministic parallel-for over output chunks.
//!
//! `ORIENTNET_THREADS` caps the pool (0 = single-threaded deterministic
//! mode). Every parallel site in the crate writes disjoint output slices
//! whose contents are computed by a fixed sequential inner loop, so results
//! are bit-identical whatever the pool size or scheduling.

use std::cell::Cell;
use std::sync::Mutex;

pub const THREADS_ENV: &str = "ORIENTNET_THREADS";

thread_local! {
    static OVERRIDE: Cell<Option<usize>> = const { Cell::new(None) };
}

/// Number of workers to use: thread-local override, then the env var,
/// then the machine's available parallelism.
pub fn worker_threads() -> usize {
    if let Some(n) = OVERRIDE.with(|o| o.get()) {
        return n.max(1);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => 1,
            Ok(n) => n,
            Err(_) => 1,
        },
        Err(_) => std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1),
    }
}

/// Runs `f` with the pool size pinned to `n` on this thread (tests and the
/// trainer's deterministic mode use this; nested calls restore the outer
/// value on exit).
pub fn with_threads<R>(n: usize, f: impl FnOnce() -> R) -> R {
    let prev = OVERRIDE.with(|o| o.replace(Some(n.max(1))));
    let out = f();
    OVERRIDE.with(|o| o.set(prev));
    out
}

/// Splits `data` into consecutive `chunk_len`-sized pieces and applies
/// `f(chunk_index, chunk)` to each, spreading chunks over the worker pool.
pub fn par_chunks_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    assert!(chunk_len > 0, "chunk_len must be positive");
    let threads = worker_threads();
    if threads <= 1 || data.len() <= chunk_len {
        for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
            f(i, chunk);
        }
        return;
    }
    let chunks: Vec<(usize, &mut [T])> = data.chunks_mut(chunk_len).enumerate().collect();
    let n_chunks = chunks.len();
    let queue = Mutex::new(chunks.into_iter());
    let workers = threads.min(n_chunks);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = queue.lock().unwrap().next();
                match next {
                    Some((i, chunk)) => f(i, chunk),
                    None => break,
                }
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_everything_in_order() {
        let mut v = vec![0usize; 103];
        par_chunks_mut(&mut v, 10, |i, chunk| {
            for x in chunk.iter_mut() {
                *x = i + 1;
            }
        });
        for (j, x) in v.iter().enumerate() {
            assert_eq!(*x, j / 10 + 1);
        }
    }

    #[test]
    fn override_scopes_nest() {
        with_threads(3, || {
            assert_eq!(worker_threads(), 3);
            with_threads(1, || assert_eq!(worker_threads(), 1));
            assert_eq!(worker_threads(), 3);
        });
    }

    #[test]
    fn parallel_matches_single_thread() {
        let mut a = vec![0.0f32; 1000];
        let mut b = vec![0.0f32; 1000];
        let fill = |i: usize, chunk: &mut [f32]| {
            let mut acc = 0.1f32 * (i as f32 + 1.0);
            for x in chunk.iter_mut() {
                acc = acc * 1.01 + 0.001;
                *x = acc;
            }
        };
        with_threads(1, || par_chunks_mut(&mut a, 7, fill));
        with_threads(8, || par_chunks_mut(&mut b, 7, fill));
        assert_eq!(a, b);
    }
}
