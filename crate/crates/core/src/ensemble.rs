//! Order-preserving parallel map over path ids.
//!
//! Each path is a pure function of its id, so results do not depend on the
//! number of workers; callers reduce the returned vector in path order.

use rayon::prelude::*;

use crate::error::Result;

/// Runs `f(path_id)` for `first..first + count` in parallel; output is in id order.
pub fn map_paths<T, F>(first: u32, count: u32, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u32) -> Result<T> + Sync + Send,
{
    (first..first + count).into_par_iter().map(f).collect()
}

/// Runs `f` inside a pool of `threads` workers (`None` uses rayon's default).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

/// Worker count of the current pool.
pub fn current_threads() -> usize {
    rayon::current_num_threads()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_and_thread_independence() {
        let f = |i: u32| Ok(crate::rng::Stream::new(3, i).uniform(0));
        let a = with_threads(Some(1), || map_paths(10, 64, f)).unwrap();
        let b = with_threads(Some(4), || map_paths(10, 64, f)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], crate::rng::Stream::new(3, 10).uniform(0));
    }
}
