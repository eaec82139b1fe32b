//! Datasets, experiment sweeps, FLOP accounting and timing for the `thzce`
//! estimators. The `thzce` binary wraps these behind subcommands.

pub mod dataset;
pub mod experiments;
pub mod flops;
pub mod pipeline;
pub mod runtime;
pub mod settings;

use thzce::Result;

/// Maps `f` over `items` on up to `workers` threads; results keep the input
/// order and the first error (in input order) is returned.
pub fn par_map<T, U, F>(items: &[T], workers: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let parts: Vec<Vec<Result<U>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(&f).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    parts.into_iter().flatten().collect()
}
