//! Data-parallel map over index ranges.
//!
//! Results are always returned in index order, so reductions performed by the
//! caller are identical whichever mode runs the map. Without the `parallel`
//! feature both modes run on the calling thread.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// `(0..n).map(f).collect()`.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// `items.iter().map(f).collect()`.
    pub fn map_slice<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = Execution::Sequential.map(10_000, f);
        let b = Execution::Parallel.map(10_000, f);
        assert_eq!(a, b);
        let items: Vec<u64> = (0..1000).collect();
        assert_eq!(Execution::Parallel.map_slice(&items, |x| x * 3), Execution::Sequential.map_slice(&items, |x| x * 3));
    }
}
