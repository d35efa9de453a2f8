//! Fill-reducing orderings.
//!
//! Every matrix this crate factorizes lives on an axis-aligned box, so a
//! geometric nested dissection is both simple and near-optimal: recursively
//! split the longest axis with a separator slab whose thickness equals the
//! stencil reach (no coupling crosses it), order the two halves first and
//! the slab last.

/// Permutation for a box with `side` sites per axis in dimension `d`, dense
/// index = mixed radix with axis 0 fastest, coupling reach `reach` (in axis
/// steps). Returns `perm` with `perm[new] = old`.
pub fn nested_dissection_box(side: usize, d: usize, reach: usize) -> Vec<u32> {
    assert!(d >= 1 && d <= 4 && side >= 1 && reach >= 1);
    let n: usize = side.pow(d as u32);
    let mut perm = Vec::with_capacity(n);
    let lo = [0usize; 4];
    let mut hi = [1usize; 4];
    for k in 0..d {
        hi[k] = side;
    }
    rec(lo, hi, d, side, reach, &mut perm);
    debug_assert_eq!(perm.len(), n);
    perm
}

fn rec(lo: [usize; 4], hi: [usize; 4], d: usize, side: usize, reach: usize, out: &mut Vec<u32>) {
    let extents: Vec<usize> = (0..d).map(|k| hi[k] - lo[k]).collect();
    let volume: usize = extents.iter().product();
    let (axis, &max_ext) = extents
        .iter()
        .enumerate()
        .max_by_key(|(_, e)| **e)
        .unwrap();
    // stop when a split can no longer produce two nonempty halves
    if volume <= 32 || max_ext < reach + 2 {
        append_block(lo, hi, d, side, out);
        return;
    }
    let sep_start = lo[axis] + (max_ext - reach) / 2;
    let mut left_hi = hi;
    left_hi[axis] = sep_start;
    let mut right_lo = lo;
    right_lo[axis] = sep_start + reach;
    let mut sep_lo = lo;
    let mut sep_hi = hi;
    sep_lo[axis] = sep_start;
    sep_hi[axis] = sep_start + reach;
    rec(lo, left_hi, d, side, reach, out);
    rec(right_lo, hi, d, side, reach, out);
    append_block(sep_lo, sep_hi, d, side, out);
}

fn append_block(lo: [usize; 4], hi: [usize; 4], d: usize, side: usize, out: &mut Vec<u32>) {
    let mut x = lo;
    'outer: loop {
        let mut idx = 0usize;
        for k in (0..d).rev() {
            idx = idx * side + x[k];
        }
        out.push(idx as u32);
        for k in 0..d {
            x[k] += 1;
            if x[k] < hi[k] {
                continue 'outer;
            }
            x[k] = lo[k];
        }
        break;
    }
}

/// Identity ordering for small or irregular systems.
pub fn natural(n: usize) -> Vec<u32> {
    (0..n as u32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nd_is_a_permutation() {
        for (side, d, reach) in [(7usize, 2usize, 1usize), (5, 3, 2), (9, 1, 2), (5, 4, 2)] {
            let p = nested_dissection_box(side, d, reach);
            let n = side.pow(d as u32);
            assert_eq!(p.len(), n);
            let mut seen = vec![false; n];
            for &i in &p {
                assert!(!seen[i as usize]);
                seen[i as usize] = true;
            }
        }
    }

    #[test]
    fn nd_is_deterministic() {
        let a = nested_dissection_box(17, 2, 2);
        let b = nested_dissection_box(17, 2, 2);
        assert_eq!(a, b);
    }
}
