//! Data-parallel helpers. With the `parallel` feature (on by default) work is spread over
//! rayon's global pool; without it everything runs on the calling thread.

/// True when built with the `parallel` feature.
pub const PARALLEL: bool = cfg!(feature = "parallel");

/// Map `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_seq(items, f)
    }
}

/// Sequential `map`; always available so the two can be compared.
pub fn map_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let items: Vec<u64> = (0..10_000).collect();
        let f = |x: &u64| x.wrapping_mul(2654435761) % 977;
        assert_eq!(map(&items, f), map_seq(&items, f));
    }
}
