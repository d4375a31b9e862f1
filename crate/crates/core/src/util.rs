//! Reductions whose floating-point result does not depend on the thread count.

use rayon::prelude::*;

/// Work split used by every parallel reduction.
pub(crate) const CHUNK: usize = 1024;

/// `sum_{i < n} f(i)`, summed in fixed chunks then in chunk order.
pub(crate) fn ordered_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let partials: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum())
        .collect();
    partials.into_iter().sum()
}

/// Vector-valued version of [`ordered_sum`]: `add(i, acc)` adds item `i` into `acc`.
pub(crate) fn ordered_vec_sum<F>(n: usize, width: usize, add: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let partials: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                add(i, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; width];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}
