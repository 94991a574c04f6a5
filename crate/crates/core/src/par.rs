//! Order-preserving fan-out over independent jobs.
//!
//! With the `parallel` feature, [`Execution::Parallel`] runs jobs on the rayon
//! pool; without it, every execution mode is sequential.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// Whether jobs actually run concurrently in this build.
    pub fn is_concurrent(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `f(0), f(1), ..., f(n - 1)` in index order, stopping at the first error.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn modes_agree_and_keep_order() {
        let f = |i: usize| Ok(i * i);
        let a = map_indexed(100, Execution::Parallel, f).unwrap();
        let b = map_indexed(100, Execution::Sequential, f).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[7], 49);
    }

    #[test]
    fn errors_propagate() {
        let r: Result<Vec<usize>> = map_indexed(10, Execution::Parallel, |i| {
            if i == 3 {
                Err(Error::Numeric("boom".into()))
            } else {
                Ok(i)
            }
        });
        assert!(r.is_err());
    }
}
