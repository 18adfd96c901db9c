//! Uniform B-spline basis on an extended knot grid.

/// B-spline basis of a fixed degree over `grid_size` uniform intervals
/// spanning `[-1, 1]`, with the knot vector extended by `degree` steps on
/// each side. There are `grid_size + degree` basis functions and they form
/// a partition of unity on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct SplineGrid {
    knots: Vec<f64>,
    degree: usize,
    n_basis: usize,
}

impl SplineGrid {
    pub fn uniform(grid_size: usize, degree: usize) -> Self {
        assert!(grid_size >= 1, "grid_size must be at least 1");
        let n_basis = grid_size + degree;
        let step = 2.0 / grid_size as f64;
        let knots: Vec<f64> = (0..=n_basis + degree)
            .map(|j| -1.0 + (j as f64 - degree as f64) * step)
            .collect();
        Self {
            knots,
            degree,
            n_basis,
        }
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Inclusive input range over which the basis sums to one.
    pub fn support(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    /// Writes the value of every basis function at `x` into `out`
    /// (length `n_basis`). Cox–de Boor recursion over the full knot vector.
    pub fn basis(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_basis);
        let work = self.degree_k(x, self.degree);
        out.copy_from_slice(&work[..self.n_basis]);
    }

    /// Derivatives of every basis function at `x`.
    pub fn basis_derivative(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_basis);
        if self.degree == 0 {
            out.fill(0.0);
            return;
        }
        let lower = self.degree_k(x, self.degree - 1);
        let k = self.degree as f64;
        let t = &self.knots;
        for (i, o) in out.iter_mut().enumerate() {
            let left = lower[i] / (t[i + self.degree] - t[i]);
            let right = lower[i + 1] / (t[i + self.degree + 1] - t[i + 1]);
            *o = k * (left - right);
        }
    }

    /// Basis values for degree `k`; the returned vector has
    /// `n_basis + degree - k` entries.
    fn degree_k(&self, x: f64, k: usize) -> Vec<f64> {
        let t = &self.knots;
        let n0 = self.n_basis + self.degree;
        let mut work: Vec<f64> = (0..n0)
            .map(|i| {
                if t[i] <= x && x < t[i + 1] {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        for d in 1..=k {
            let n = n0 - d;
            for i in 0..n {
                let left = if work[i] != 0.0 {
                    work[i] * (x - t[i]) / (t[i + d] - t[i])
                } else {
                    0.0
                };
                let right = if work[i + 1] != 0.0 {
                    work[i + 1] * (t[i + d + 1] - x) / (t[i + d + 1] - t[i + 1])
                } else {
                    0.0
                };
                work[i] = left + right;
            }
            work.truncate(n);
        }
        work.truncate(self.n_basis + self.degree - k);
        work
    }
}
