//! Order-preserving parallel map over independent work items.

/// `items.iter().map(f).collect()`, on the rayon pool when the `parallel`
/// feature is on and enabled at runtime.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if wsfcn_tensor::exec::parallel_enabled() && items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}
