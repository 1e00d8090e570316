use rayon::prelude::*;

use super::{GradSet, ParamSet};

/// A scalar function of a parameter set that can also produce its own
/// analytic gradient (normally by taping a forward pass and running the
/// reverse sweep).
pub trait ParamScalarFn: Sync {
    fn value(&self, params: &ParamSet) -> f64;
    fn gradient(&self, params: &ParamSet) -> GradSet;

    /// Value after a change confined to one block (relative to the point the
    /// function was built around). Default is a full evaluation; tape-backed
    /// implementations override it with an incremental replay.
    fn value_after_block_change(&self, params: &ParamSet, _block: usize) -> f64 {
        self.value(params)
    }
}

/// Central finite differences of `f` per parameter coordinate.
///
/// Coordinates are probed independently, so the work is split across
/// threads; each worker mutates its own copy of the parameters in place.
pub fn fd_gradient<F>(f: &F, params: &ParamSet, eps: f64) -> GradSet
where
    F: Fn(&ParamSet) -> f64 + Sync,
{
    assert!(eps > 0.0);
    let coords: Vec<(usize, usize)> = params
        .blocks()
        .iter()
        .enumerate()
        .flat_map(|(bi, b)| (0..b.len()).map(move |j| (bi, j)))
        .collect();
    let chunk = coords
        .len()
        .div_ceil(rayon::current_num_threads().max(1))
        .max(1);
    let partial: Vec<Vec<f64>> = coords
        .par_chunks(chunk)
        .map(|chunk| {
            let mut p = params.clone();
            let mut out = Vec::with_capacity(chunk.len());
            for &(bi, j) in chunk {
                let orig = p.blocks()[bi].data[j];
                p.block_mut(super::ParamRef(bi)).data[j] = orig + eps;
                let up = f(&p);
                p.block_mut(super::ParamRef(bi)).data[j] = orig - eps;
                let down = f(&p);
                p.block_mut(super::ParamRef(bi)).data[j] = orig;
                out.push((up - down) / (2.0 * eps));
            }
            out
        })
        .collect();
    let mut flat = partial.into_iter().flatten();
    let mut grads = params.zero_grads();
    for slot in &mut grads.slots {
        for v in slot.iter_mut() {
            *v = flat.next().expect("coordinate count mismatch");
        }
    }
    grads
}

/// Maximum relative disagreement between two gradient sets, compared per
/// parameter block: `||a - n|| / max(||a||, ||n||, 1e-8)`, maximized over
/// blocks. (A per-coordinate quotient is not resolvable by central
/// differences in double precision once a coordinate's gradient drops near
/// the rounding noise of the probe, so blocks are the comparison unit.)
pub fn max_rel_error(analytic: &GradSet, numeric: &GradSet) -> f64 {
    let mut worst = 0.0_f64;
    for (a, n) in analytic.slots.iter().zip(&numeric.slots) {
        let mut norm_a = 0.0;
        let mut norm_n = 0.0;
        let mut norm_d = 0.0;
        for (&x, &y) in a.iter().zip(n) {
            norm_a += x * x;
            norm_n += y * y;
            norm_d += (x - y) * (x - y);
        }
        let denom = norm_a.sqrt().max(norm_n.sqrt()).max(1e-8);
        worst = worst.max(norm_d.sqrt() / denom);
    }
    worst
}

/// Compare `f`'s analytic gradient against central finite differences and
/// return the maximum relative error across every parameter coordinate.
pub fn grad_check<F: ParamScalarFn>(f: &F, params: &ParamSet, eps: f64) -> f64 {
    let analytic = f.gradient(params);
    let numeric = fd_gradient_of(f, params, eps);
    max_rel_error(&analytic, &numeric)
}

/// Central finite differences of a [`ParamScalarFn`], exploiting the
/// block-change hook for incremental re-evaluation.
pub fn fd_gradient_of<F: ParamScalarFn>(f: &F, params: &ParamSet, eps: f64) -> GradSet {
    assert!(eps > 0.0);
    let coords: Vec<(usize, usize)> = params
        .blocks()
        .iter()
        .enumerate()
        .flat_map(|(bi, b)| (0..b.len()).map(move |j| (bi, j)))
        .collect();
    let chunk = coords
        .len()
        .div_ceil(rayon::current_num_threads().max(1))
        .max(1);
    let partial: Vec<Vec<f64>> = coords
        .par_chunks(chunk)
        .map(|chunk| {
            let mut p = params.clone();
            let mut out = Vec::with_capacity(chunk.len());
            for &(bi, j) in chunk {
                let orig = p.blocks()[bi].data[j];
                p.block_mut(super::ParamRef(bi)).data[j] = orig + eps;
                let up = f.value_after_block_change(&p, bi);
                p.block_mut(super::ParamRef(bi)).data[j] = orig - eps;
                let down = f.value_after_block_change(&p, bi);
                p.block_mut(super::ParamRef(bi)).data[j] = orig;
                out.push((up - down) / (2.0 * eps));
            }
            out
        })
        .collect();
    let mut flat = partial.into_iter().flatten();
    let mut grads = params.zero_grads();
    for slot in &mut grads.slots {
        for v in slot.iter_mut() {
            *v = flat.next().expect("coordinate count mismatch");
        }
    }
    grads
}
