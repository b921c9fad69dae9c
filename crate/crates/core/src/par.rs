//! Order-preserving parallel map over independent work items.

use std::num::NonZeroUsize;
use std::thread;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "GRAPH_PHASE_THREADS";

/// Worker count: `GRAPH_PHASE_THREADS` if set to a positive integer,
/// otherwise the available parallelism.
pub fn thread_cap() -> usize {
    let available = thread::available_parallelism().map_or(1, NonZeroUsize::get);
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(available)
}

pub fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = thread_cap().min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
