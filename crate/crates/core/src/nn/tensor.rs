use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tensor2D {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Tensor2D::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Tensor2D::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Copies the first `n` rows.
    pub fn head_rows(&self, n: usize) -> Tensor2D {
        Tensor2D {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }

    /// Gathers rows by index.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor2D {
        let mut out = Tensor2D::zeros(idx.len(), self.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "Tensor2D::add_assign",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `out = x * w + b` with `w` stored `(in, out)` and `b` as a `(1, out)` row.
pub(crate) fn affine(x: &Tensor2D, w: &Tensor2D, b: &Tensor2D) -> Tensor2D {
    debug_assert_eq!(x.cols, w.rows);
    let n_out = w.cols;
    let mut out = Tensor2D::zeros(x.rows, n_out);
    for r in 0..x.rows {
        let xr = x.row(r);
        let yr = &mut out.data[r * n_out..(r + 1) * n_out];
        yr.copy_from_slice(&b.data);
        for (k, &a) in xr.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let wk = &w.data[k * n_out..(k + 1) * n_out];
            for (y, &wv) in yr.iter_mut().zip(wk) {
                *y += a * wv;
            }
        }
    }
    out
}

/// Accumulates `dw += x^T dy` and `db += colsum(dy)`, returning `dy * w^T`.
pub(crate) fn affine_backward(
    x: &Tensor2D,
    w: &Tensor2D,
    dy: &Tensor2D,
    dw: &mut Tensor2D,
    db: &mut Tensor2D,
    need_input_grad: bool,
) -> Option<Tensor2D> {
    let n_in = w.rows;
    let n_out = w.cols;
    for r in 0..x.rows {
        let xr = x.row(r);
        let dyr = dy.row(r);
        for (bv, &g) in db.data.iter_mut().zip(dyr) {
            *bv += g;
        }
        for (k, &a) in xr.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let dwk = &mut dw.data[k * n_out..(k + 1) * n_out];
            for (d, &g) in dwk.iter_mut().zip(dyr) {
                *d += a * g;
            }
        }
    }
    if !need_input_grad {
        return None;
    }
    let mut dx = Tensor2D::zeros(x.rows, n_in);
    for r in 0..x.rows {
        let dyr = dy.row(r);
        let dxr = &mut dx.data[r * n_in..(r + 1) * n_in];
        for (k, d) in dxr.iter_mut().enumerate() {
            let wk = &w.data[k * n_out..(k + 1) * n_out];
            *d = wk.iter().zip(dyr).map(|(a, b)| a * b).sum();
        }
    }
    Some(dx)
}
