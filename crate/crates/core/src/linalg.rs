//! Small dense helpers shared by the coders and the dictionary learner.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Neumaier-compensated sum, evaluated in iteration order.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Lower-triangular Cholesky factor of a Gram matrix that grows one
/// row/column at a time.
#[derive(Debug, Clone)]
pub struct GrowingCholesky {
    capacity: usize,
    dim: usize,
    // row-major, `capacity x capacity`
    l: Vec<f64>,
}

/// Relative pivot below which a new column is treated as linearly dependent
/// on the ones already factored.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

impl GrowingCholesky {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            dim: 0,
            l: vec![0.0; capacity * capacity],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clear(&mut self) {
        self.dim = 0;
    }

    /// Appends a column with cross products `cross` (against the already
    /// factored columns) and squared norm `diag`. Returns `false` and leaves
    /// the factor untouched when the column is numerically dependent.
    pub fn try_push(&mut self, cross: &[f64], diag: f64) -> bool {
        let k = self.dim;
        assert!(k < self.capacity, "cholesky capacity exceeded");
        debug_assert_eq!(cross.len(), k);
        let cap = self.capacity;
        // forward solve L w = cross into row k
        for i in 0..k {
            let mut s = cross[i];
            for j in 0..i {
                s -= self.l[i * cap + j] * self.l[k * cap + j];
            }
            self.l[k * cap + i] = s / self.l[i * cap + i];
        }
        let w2: f64 = self.l[k * cap..k * cap + k].iter().map(|v| v * v).sum();
        let pivot = diag - w2;
        if !(pivot > PIVOT_TOLERANCE * diag) {
            return false;
        }
        self.l[k * cap + k] = pivot.sqrt();
        self.dim += 1;
        true
    }

    /// Solves `L L^T x = rhs` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let k = self.dim;
        let cap = self.capacity;
        debug_assert_eq!(x.len(), k);
        for i in 0..k {
            let mut s = x[i];
            for j in 0..i {
                s -= self.l[i * cap + j] * x[j];
            }
            x[i] = s / self.l[i * cap + i];
        }
        for i in (0..k).rev() {
            let mut s = x[i];
            for j in i + 1..k {
                s -= self.l[j * cap + i] * x[j];
            }
            x[i] = s / self.l[i * cap + i];
        }
    }
}
