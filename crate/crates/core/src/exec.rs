//! Fork-join shim: rayon when the `parallel` feature is enabled and requested,
//! plain sequential calls otherwise. Callers build a fixed-shape recursion tree,
//! so both paths produce bit-identical reductions.

use crate::ensemble::Execution;

#[inline]
pub(crate) fn join<A, B, RA, RB>(parallel: bool, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return rayon::join(a, b);
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallel;
    (a(), b())
}

/// Runs `f` under the requested execution mode. `f` receives whether it may
/// fork.
pub(crate) fn install<R, F>(execution: Execution, f: F) -> R
where
    F: FnOnce(bool) -> R + Send,
    R: Send,
{
    match execution {
        Execution::Sequential => f(false),
        Execution::Parallel => f(cfg!(feature = "parallel")),
        #[cfg(feature = "parallel")]
        Execution::Threads(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| f(true)),
            Err(_) => f(false),
        },
        #[cfg(not(feature = "parallel"))]
        Execution::Threads(_) => f(false),
    }
}
