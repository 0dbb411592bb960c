//! Decoder-input construction and attention masks.

use crate::data::BOS;
use crate::tensor::{AttentionMask, MaskKind};

/// Teacher-forcing input: `[BOS, y_0, .., y_{T-2}]`, same length as `target`.
pub fn shift_right(target: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(target.len());
    if !target.is_empty() {
        out.push(BOS);
        out.extend_from_slice(&target[..target.len() - 1]);
    }
    out
}

/// Uniform stretch/compress of `src` onto `target_len` slots:
/// slot `t` copies `src[ceil((t + 1) * T_x / T_y) - 1]`.
pub fn hard_copy(src: &[usize], target_len: usize) -> Vec<usize> {
    assert!(!src.is_empty() && target_len >= 1, "hard_copy needs nonempty input");
    let tx = src.len();
    (0..target_len)
        .map(|t| {
            let idx = ((t + 1) * tx).div_ceil(target_len) - 1;
            src[idx]
        })
        .collect()
}

pub fn build_mask(kind: MaskKind, len: usize) -> AttentionMask {
    AttentionMask::build(kind, len)
}
