//! Execution of independent jobs (chains, scan cells, benchmark cells).
//!
//! Results are returned in job order regardless of how they were scheduled.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// On the rayon pool when the `parallel` feature is enabled, otherwise sequential.
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Applies `f` to `0..n`.
pub fn map_indexed<U, F>(n: usize, exec: Execution, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

pub fn map_slice<T, U, F>(items: &[T], exec: Execution, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    map_indexed(items.len(), exec, |i| f(&items[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let par = map_indexed(1000, Execution::Parallel, |i| i * i);
        let seq = map_indexed(1000, Execution::Sequential, |i| i * i);
        assert_eq!(par, seq);
        assert_eq!(par[999], 998_001);
    }

    #[test]
    fn slices() {
        let words = ["a", "bb", "ccc"];
        assert_eq!(
            map_slice(&words, Execution::Parallel, |w| w.len()),
            vec![1, 2, 3]
        );
    }
}
