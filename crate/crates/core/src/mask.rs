use serde::{Deserialize, Serialize};

/// Square boolean matrix stored row-major. Used for true supports and for
/// estimated supports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    dim: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(dim: usize) -> Self {
        Mask {
            dim,
            bits: vec![false; dim * dim],
        }
    }

    /// Diagonal-only pattern.
    pub fn identity(dim: usize) -> Self {
        let mut m = Mask::empty(dim);
        for i in 0..dim {
            m.set(i, i, true);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                bits.push(f(i, j));
            }
        }
        Mask { dim, bits }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[i * self.dim + j] = value;
    }

    /// Number of true entries with `i != j` (ordered pairs).
    pub fn offdiag_count(&self) -> usize {
        let mut count = 0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                if i != j && self.get(i, j) {
                    count += 1;
                }
            }
        }
        count
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.dim).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}
