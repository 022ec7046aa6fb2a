//! Ordered parallel job execution.

use rayon::prelude::*;

use crate::CliError;

/// Runs `f(0), ..., f(n - 1)` on `threads` workers and returns the results in
/// job order. Every job derives its randomness from its own index, so the
/// output does not depend on the worker count.
pub fn run_jobs<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>, CliError>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if threads <= 1 {
        return Ok((0..n).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Run(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let serial = run_jobs(50, 1, |i| i * i).unwrap();
        let parallel = run_jobs(50, 4, |i| i * i).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(serial[7], 49);
    }
}
