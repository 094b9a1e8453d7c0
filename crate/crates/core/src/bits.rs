//! Index arithmetic for tensors stored as flat arrays of qubit legs.

use num_complex::Complex64;

/// Inserts a zero bit at each position of `sorted_bits` (ascending) into `x`.
#[inline]
pub(crate) fn insert_zero_bits(mut x: usize, sorted_bits: &[usize]) -> usize {
    for &b in sorted_bits {
        let low = x & ((1usize << b) - 1);
        x = ((x >> b) << (b + 1)) | low;
    }
    x
}

/// Offsets of all `2^bits.len()` local basis states; `bits[0]` is the least
/// significant local bit.
pub(crate) fn local_offsets(bits: &[usize]) -> Vec<usize> {
    let q = 1usize << bits.len();
    (0..q)
        .map(|j| {
            bits.iter()
                .enumerate()
                .filter(|(b, _)| (j >> b) & 1 == 1)
                .fold(0usize, |acc, (_, &pos)| acc | (1usize << pos))
        })
        .collect()
}

/// Applies the `q × q` row-major matrix `mat` to the legs at `bits` of a flat
/// tensor of length `data.len()`.
pub(crate) fn apply_local(data: &mut [Complex64], bits: &[usize], mat: &[Complex64]) {
    let q = 1usize << bits.len();
    debug_assert_eq!(mat.len(), q * q);
    let mut sorted = bits.to_vec();
    sorted.sort_unstable();
    let offsets = local_offsets(bits);
    let n_bases = data.len() / q;
    let mut tmp = vec![Complex64::new(0.0, 0.0); q];
    if q == 4 {
        let m: [Complex64; 16] = mat.try_into().expect("4x4 gate");
        let (o0, o1, o2, o3) = (offsets[0], offsets[1], offsets[2], offsets[3]);
        for c in 0..n_bases {
            let base = insert_zero_bits(c, &sorted);
            let a0 = data[base + o0];
            let a1 = data[base + o1];
            let a2 = data[base + o2];
            let a3 = data[base + o3];
            data[base + o0] = m[0] * a0 + m[1] * a1 + m[2] * a2 + m[3] * a3;
            data[base + o1] = m[4] * a0 + m[5] * a1 + m[6] * a2 + m[7] * a3;
            data[base + o2] = m[8] * a0 + m[9] * a1 + m[10] * a2 + m[11] * a3;
            data[base + o3] = m[12] * a0 + m[13] * a1 + m[14] * a2 + m[15] * a3;
        }
        return;
    }
    for c in 0..n_bases {
        let base = insert_zero_bits(c, &sorted);
        for (t, &off) in tmp.iter_mut().zip(&offsets) {
            *t = data[base + off];
        }
        for (row, &off) in offsets.iter().enumerate() {
            let r = &mat[row * q..(row + 1) * q];
            data[base + off] = r.iter().zip(&tmp).map(|(a, b)| a * b).sum();
        }
    }
}

/// Spreads the bits of `x` so that bit `s` lands on bit `2s`.
#[inline]
pub(crate) fn spread_bits(x: usize) -> usize {
    let mut out = 0usize;
    let mut v = x;
    let mut s = 0;
    while v != 0 {
        out |= (v & 1) << (2 * s);
        v >>= 1;
        s += 1;
    }
    out
}
