//! Translation-invariant operators on an `n^d` cell grid, stored by offset.

use nalgebra::DMatrix;

/// Operator with entries `K(y - y')` for cells `y, y'` of an `n^d` grid.
///
/// Cells are flattened in row-major order. All kernels built in this crate
/// are even in the offset, so the operator is symmetric.
#[derive(Debug, Clone)]
pub struct OffsetOperator {
    d: usize,
    n: usize,
    table: Vec<f64>,
    /// `A[y] = Σ_k c_k(y) (2n-1)^k`, so that the table index of `y - y'` is
    /// `A[y] - A[y'] + center`.
    anchors: Vec<usize>,
    center: usize,
    diagonal_only: bool,
}

impl OffsetOperator {
    pub fn from_fn(d: usize, n: usize, mut f: impl FnMut(&[i64]) -> f64) -> Self {
        assert!(d >= 1 && n >= 1);
        let w = 2 * n - 1;
        let size = w.pow(d as u32);
        let mut table = vec![0.0; size];
        let mut off = vec![0i64; d];
        for (idx, slot) in table.iter_mut().enumerate() {
            let mut r = idx;
            for k in (0..d).rev() {
                off[k] = (r % w) as i64 - (n as i64 - 1);
                r /= w;
            }
            *slot = f(&off);
        }
        let cells = n.pow(d as u32);
        let mut anchors = vec![0usize; cells];
        for (y, a) in anchors.iter_mut().enumerate() {
            let coords = cell_coords(y, n, d);
            *a = coords.iter().rev().enumerate().map(|(k, &c)| c * w.pow(k as u32)).sum();
        }
        let center: usize = (0..d).map(|k| (n - 1) * w.pow(k as u32)).sum();
        let diagonal_only = table
            .iter()
            .enumerate()
            .all(|(i, &v)| i == center || v == 0.0);
        Self { d, n, table, anchors, center, diagonal_only }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> usize {
        self.anchors.len()
    }

    #[inline]
    pub fn get(&self, to: usize, from: usize) -> f64 {
        self.table[self.anchors[to] + self.center - self.anchors[from]]
    }

    pub fn diagonal(&self) -> f64 {
        self.table[self.center]
    }

    /// `out[y] = Σ_{y'} K(y - y') v[y']`, overwriting `out`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cells());
        if self.diagonal_only {
            let c = self.diagonal();
            for (o, x) in out.iter_mut().zip(v) {
                *o = c * x;
            }
            return;
        }
        for (y, o) in out.iter_mut().enumerate() {
            let base = self.anchors[y] + self.center;
            let mut acc = 0.0;
            for (yp, x) in v.iter().enumerate() {
                acc += self.table[base - self.anchors[yp]] * x;
            }
            *o = acc;
        }
    }

    /// `out[y] += scale * Σ_{y'} K(y - y') v[y']`.
    pub fn apply_add(&self, v: &[f64], scale: f64, out: &mut [f64]) {
        if self.diagonal_only {
            let c = self.diagonal() * scale;
            for (o, x) in out.iter_mut().zip(v) {
                *o += c * x;
            }
            return;
        }
        for (y, o) in out.iter_mut().enumerate() {
            let base = self.anchors[y] + self.center;
            let mut acc = 0.0;
            for (yp, x) in v.iter().enumerate() {
                acc += self.table[base - self.anchors[yp]] * x;
            }
            *o += scale * acc;
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let c = self.cells();
        DMatrix::from_fn(c, c, |i, j| self.get(i, j))
    }
}

/// Row-major coordinates of flat cell index `y` on an `n^d` grid.
pub fn cell_coords(y: usize, n: usize, d: usize) -> Vec<usize> {
    let mut coords = vec![0; d];
    let mut r = y;
    for k in (0..d).rev() {
        coords[k] = r % n;
        r /= n;
    }
    coords
}
