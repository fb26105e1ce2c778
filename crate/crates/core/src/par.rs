use crate::rng::RandomStream;

/// Evaluates `f` on substreams `0..n` of `rng` and returns results in index order.
///
/// With the `parallel` feature the calls are spread over the rayon pool; the
/// output is identical either way because each index owns its stream.
pub(crate) fn map_streams<T, F>(rng: &RandomStream, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(RandomStream) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(|i| f(rng.substream(i as u64)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(|i| f(rng.substream(i as u64))).collect()
    }
}
