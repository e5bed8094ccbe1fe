//! Dense rank-3 tensor of 64-bit floats, shape `(batch, channels, length)`,
//! row-major.

use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    n: usize,
    c: usize,
    l: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize, c: usize, l: usize) -> Self {
        Tensor3 {
            n,
            c,
            l,
            data: vec![0.0; n * c * l],
        }
    }

    pub fn from_vec(n: usize, c: usize, l: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != n * c * l {
            return Err(NnError::ShapeMismatch(format!(
                "{} elements for shape ({n}, {c}, {l})",
                data.len()
            )));
        }
        Ok(Tensor3 { n, c, l, data })
    }

    /// (batch, channels, length).
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.c, self.l)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn length(&self) -> usize {
        self.l
    }

    pub fn element_count(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn row(&self, n: usize, c: usize) -> &[f64] {
        let start = (n * self.c + c) * self.l;
        &self.data[start..start + self.l]
    }

    #[inline]
    pub fn row_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let start = (n * self.c + c) * self.l;
        &mut self.data[start..start + self.l]
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, i: usize) -> f64 {
        self.data[(n * self.c + c) * self.l + i]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, i: usize, v: f64) {
        self.data[(n * self.c + c) * self.l + i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Copy sample `src_n` of `src` into sample `dst_n` of `self`.
    pub fn copy_sample_from(&mut self, dst_n: usize, src: &Tensor3, src_n: usize) {
        debug_assert_eq!((self.c, self.l), (src.c, src.l));
        let len = self.c * self.l;
        let dst_start = dst_n * len;
        let src_start = src_n * len;
        self.data[dst_start..dst_start + len]
            .copy_from_slice(&src.data[src_start..src_start + len]);
    }

    /// Error out with `NumericalFault` if any element is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<(), NnError> {
        for &v in &self.data {
            if !v.is_finite() {
                return Err(NnError::NumericalFault(format!(
                    "non-finite value {v} after {context}"
                )));
            }
        }
        Ok(())
    }
}
