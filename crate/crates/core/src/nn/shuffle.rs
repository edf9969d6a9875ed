use litese_autograd::{Tape, Tensor, Var};

use crate::error::{invalid, Result};

/// Output position `k·G + g` takes input channel `g·(C/G) + k`.
pub fn shuffle_indices(c: usize, groups: usize) -> Vec<usize> {
    let per = c / groups;
    (0..c).map(|p| (p % groups) * per + p / groups).collect()
}

/// Channel shuffle of a plain `[C, ..]` or `[B, C, ..]` tensor along `axis`.
pub fn channel_shuffle(x: &Tensor, axis: usize, groups: usize) -> Result<Tensor> {
    let c = x.dim(axis);
    if groups == 0 || c % groups != 0 {
        return invalid(format!("{} channels are not divisible into {} groups", c, groups));
    }
    Ok(x.index_select(axis, &shuffle_indices(c, groups)))
}

pub fn shuffle_var(tape: &Tape, x: Var, axis: usize, groups: usize) -> Var {
    if groups <= 1 {
        return x;
    }
    let c = tape.shape(x)[axis];
    tape.index_select(x, axis, &shuffle_indices(c, groups))
}
