//! Internal switch between rayon and sequential loops.
//!
//! Every call site writes into a pre-allocated slot per item, so the parallel
//! and sequential versions produce identical results; only wall-clock time
//! differs. Keeping the bounds identical in both builds means downstream code
//! compiles unchanged whichever feature set is active.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f(i, &mut items[i])` to every element, in parallel when the
/// `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Fold `f(i)` over `0..n` with an order-independent reduction `g`.
///
/// `g` must be commutative and associative (e.g. `f64::min`, counting), so the
/// split points rayon picks cannot change the result.
#[cfg(feature = "parallel")]
pub fn fold_indexed<A, F, G>(n: usize, identity: A, f: F, g: G) -> A
where
    A: Send + Sync + Copy,
    F: Fn(usize) -> A + Sync + Send,
    G: Fn(A, A) -> A + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .fold(move || identity, |acc, i| g(acc, f(i)))
        .reduce(move || identity, &g)
}

#[cfg(not(feature = "parallel"))]
pub fn fold_indexed<A, F, G>(n: usize, identity: A, f: F, g: G) -> A
where
    A: Send + Sync + Copy,
    F: Fn(usize) -> A + Sync + Send,
    G: Fn(A, A) -> A + Sync + Send,
{
    (0..n).fold(identity, |acc, i| g(acc, f(i)))
}
