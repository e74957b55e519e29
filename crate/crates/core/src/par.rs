// Data-parallel helpers. With the `parallel` feature off every call runs on the
// current thread, which is what the single-threaded determinism checks and the
// sequential benchmarks use.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution mode for a data-parallel loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Sequential,
    Parallel,
    /// Parallel when the feature is compiled in and the input is large enough.
    #[default]
    Auto,
}

#[cfg(feature = "parallel")]
const AUTO_MIN_LEN: usize = 64;

#[cfg(feature = "parallel")]
impl Mode {
    #[inline]
    fn parallel_for(self, len: usize) -> bool {
        match self {
            Mode::Sequential => false,
            Mode::Parallel => true,
            Mode::Auto => len >= AUTO_MIN_LEN,
        }
    }
}

/// Order-preserving map.
pub fn map<T, R, F>(items: &[T], mode: Mode, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.parallel_for(items.len()) {
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Order-preserving map with a per-worker scratch value built by `init`.
pub fn map_init<T, S, R, I, F>(items: &[T], mode: Mode, init: I, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.parallel_for(items.len()) {
        return items.par_iter().map_init(&init, |s, t| f(s, t)).collect();
    }
    let _ = mode;
    let mut scratch = init();
    items.iter().map(|t| f(&mut scratch, t)).collect()
}

/// Applies `f(chunk_index, chunk)` to consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, mode: Mode, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if mode.parallel_for(data.len() / chunk) {
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = mode;
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Number of worker threads a parallel call would use.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
