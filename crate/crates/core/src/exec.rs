//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] fans work out
//! over the rayon pool; without it, or with [`Execution::Sequential`], the same
//! closures run in order on the calling thread. Results are always returned in
//! input order, so reductions over them are deterministic either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    pub fn map_indexed<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = Execution::Sequential.map(&xs, |x| x * x);
        let par = Execution::Parallel.map(&xs, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(
            Execution::Parallel.map_indexed(5, |i| i),
            vec![0, 1, 2, 3, 4]
        );
    }
}
