use super::GridDims;

/// Default entry cap for dense reconstruction.
pub const DEFAULT_DENSE_CAP: usize = 10_000_000;

/// Row-major `I×J×K×N` tensor produced by dense reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrid4 {
    dims: GridDims,
    data: Vec<f64>,
}

impl DenseGrid4 {
    pub fn zeros(dims: GridDims) -> Self {
        Self { dims, data: vec![0.0; dims.i * dims.j * dims.k * dims.n_t] }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.dims.j + b) * self.dims.k + c) * self.dims.n_t + d
    }

    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[self.offset(a, b, c, d)]
    }

    pub fn get_mut(&mut self, a: usize, b: usize, c: usize, d: usize) -> &mut f64 {
        let o = self.offset(a, b, c, d);
        &mut self.data[o]
    }
}
