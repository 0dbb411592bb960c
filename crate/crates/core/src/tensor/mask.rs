use std::fmt;

use serde::{Deserialize, Serialize};

/// Which attention pattern the decoder self-attention uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MaskKind {
    /// Causal: position `i` sees positions `j <= i`.
    At,
    /// Full visibility.
    Nat,
}

impl MaskKind {
    #[inline]
    pub fn allows(self, i: usize, j: usize) -> bool {
        match self {
            MaskKind::At => j <= i,
            MaskKind::Nat => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MaskKind::At => "AT",
            MaskKind::Nat => "NAT",
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A 0/1 matrix where entry `(i, j) == 1` means position `i` may attend to `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    bits: Vec<u8>,
    kind: Option<MaskKind>,
}

impl AttentionMask {
    pub fn build(kind: MaskKind, size: usize) -> Self {
        let mut bits = vec![0u8; size * size];
        for i in 0..size {
            for j in 0..size {
                bits[i * size + j] = kind.allows(i, j) as u8;
            }
        }
        Self {
            size,
            bits,
            kind: Some(kind),
        }
    }

    /// Arbitrary mask; `rows` must be square.
    pub fn from_rows(rows: &[Vec<u8>]) -> Option<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size || r.iter().any(|&b| b > 1)) {
            return None;
        }
        Some(Self {
            size,
            bits: rows.concat(),
            kind: None,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `None` for masks built from raw rows.
    pub fn kind(&self) -> Option<MaskKind> {
        self.kind
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.size + j] == 1
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.bits.chunks(self.size.max(1)).map(<[u8]>::to_vec).collect()
    }
}
