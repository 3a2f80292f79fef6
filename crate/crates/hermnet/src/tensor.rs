//! Dense row-major f64 tensors.
//!
//! Everything the model touches is rank 2 (scalars are `[1, 1]`, per-row
//! scalars `[m, 1]`). Vectorial node features are carried as three `[n, f]`
//! matrices, one per spatial axis, so no op here needs more than two axes.

use crate::error::{Error, Result};

/// A dense tensor: shape plus a contiguous row-major f64 buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build from an explicit shape and buffer. Panics if lengths disagree;
    /// that is a programming error, not an input error.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape/product mismatch"
        );
        Tensor { shape, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(vec![rows, cols], vec![0.0; rows * cols])
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Tensor::new(vec![rows, cols], vec![1.0; rows * cols])
    }

    pub fn scalar(x: f64) -> Self {
        Tensor::new(vec![1, 1], vec![x])
    }

    /// A `[rows, cols]` matrix from a flat row-major slice.
    pub fn matrix(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(rows * cols, data.len());
        Tensor::new(vec![rows, cols], data.to_vec())
    }

    /// A `[n, 1]` column vector.
    pub fn column(data: &[f64]) -> Self {
        Tensor::new(vec![data.len(), 1], data.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    /// The single element of a `[1, 1]` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
    }
}

macro_rules! elementwise {
    ($name:ident, $opname:literal, $f:expr) => {
        pub fn $name(a: &Tensor, b: &Tensor) -> Result<Tensor> {
            if a.shape() != b.shape() {
                return Err(shape_err($opname, a, b));
            }
            let data = a
                .data
                .iter()
                .zip(b.data.iter())
                .map(|(&x, &y)| $f(x, y))
                .collect();
            Ok(Tensor::new(a.shape.clone(), data))
        }
    };
}

elementwise!(add, "add", |x: f64, y: f64| x + y);
elementwise!(sub, "sub", |x: f64, y: f64| x - y);
elementwise!(mul, "mul", |x: f64, y: f64| x * y);

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("div", a, b));
    }
    if b.data.iter().any(|&y| y == 0.0) {
        return Err(Error::DivisionByZero { op: "div" });
    }
    let data = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(&x, &y)| x / y)
        .collect();
    Ok(Tensor::new(a.shape.clone(), data))
}

pub fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape.clone(), a.data.iter().map(|&x| f(x)).collect())
}

/// `a [m,k] . b [k,n] -> [m,n]`, plain ikj loop.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.cols() != b.rows() {
        return Err(shape_err("matmul", a, b));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::new(vec![m, n], out))
}

pub fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Sum of all entries, as a `[1,1]` tensor.
pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum())
}

/// Row sums: `[m,n] -> [m,1]`.
pub fn row_sum(a: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let data = (0..m)
        .map(|i| a.data[i * n..(i + 1) * n].iter().sum())
        .collect();
    Tensor::new(vec![m, 1], data)
}

/// Scale each row of `a [m,n]` by the matching entry of `c [m,1]`.
pub fn scale_rows(a: &Tensor, c: &Tensor) -> Result<Tensor> {
    if c.cols() != 1 || c.rows() != a.rows() {
        return Err(shape_err("scale_rows", a, c));
    }
    let (m, n) = (a.rows(), a.cols());
    let mut data = a.data.clone();
    for i in 0..m {
        let s = c.data[i];
        for x in &mut data[i * n..(i + 1) * n] {
            *x *= s;
        }
    }
    Ok(Tensor::new(vec![m, n], data))
}

/// Gather rows of `a` at `idx`: output row r = a[idx[r]].
pub fn gather_rows(a: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (m, n) = (a.rows(), a.cols());
    if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
        return Err(Error::Shape {
            op: "gather_rows",
            detail: format!("index {bad} out of range for {m} rows"),
        });
    }
    let mut data = Vec::with_capacity(idx.len() * n);
    for &i in idx {
        data.extend_from_slice(&a.data[i * n..(i + 1) * n]);
    }
    Ok(Tensor::new(vec![idx.len(), n], data))
}

/// Scatter-add rows of `src [m,n]` into a fresh `[out_rows, n]` tensor:
/// row `idx[r]` accumulates src row r. Accumulation follows row order of
/// `src`, so results are deterministic.
pub fn scatter_add_rows(src: &Tensor, idx: &[usize], out_rows: usize) -> Result<Tensor> {
    let (m, n) = (src.rows(), src.cols());
    if idx.len() != m {
        return Err(Error::Shape {
            op: "scatter_add_rows",
            detail: format!("{} indices for {} rows", idx.len(), m),
        });
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
        return Err(Error::Shape {
            op: "scatter_add_rows",
            detail: format!("index {bad} out of range for {out_rows} rows"),
        });
    }
    let mut out = vec![0.0; out_rows * n];
    for (r, &i) in idx.iter().enumerate() {
        let srow = &src.data[r * n..(r + 1) * n];
        let orow = &mut out[i * n..(i + 1) * n];
        for (o, &s) in orow.iter_mut().zip(srow.iter()) {
            *o += s;
        }
    }
    Ok(Tensor::new(vec![out_rows, n], out))
}

/// Concatenate along columns; all parts must share a row count.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    assert!(!parts.is_empty());
    let m = parts[0].rows();
    if parts.iter().any(|p| p.rows() != m) {
        return Err(Error::Shape {
            op: "concat_cols",
            detail: format!(
                "row counts differ: {:?}",
                parts.iter().map(|p| p.rows()).collect::<Vec<_>>()
            ),
        });
    }
    let n: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        for p in parts {
            let pc = p.cols();
            data.extend_from_slice(&p.data[i * pc..(i + 1) * pc]);
        }
    }
    Ok(Tensor::new(vec![m, n], data))
}

/// Columns `start..end` of `a`.
pub fn slice_cols(a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (m, n) = (a.rows(), a.cols());
    if start > end || end > n {
        return Err(Error::Shape {
            op: "slice_cols",
            detail: format!("slice {start}..{end} of {n} columns"),
        });
    }
    let w = end - start;
    let mut data = Vec::with_capacity(m * w);
    for i in 0..m {
        data.extend_from_slice(&a.data[i * n + start..i * n + end]);
    }
    Ok(Tensor::new(vec![m, w], data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand() {
        // [[1,2],[3,4]] . [[1],[1]] = [[3],[7]]
        let a = Tensor::matrix(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::matrix(2, 1, &[1.0, 1.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_rejected() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn sum_of_zeros_is_zero() {
        assert_eq!(sum(&Tensor::zeros(4, 7)).item(), 0.0);
    }

    #[test]
    fn div_by_zero_rejected() {
        let a = Tensor::ones(1, 2);
        let b = Tensor::matrix(1, 2, &[1.0, 0.0]);
        assert!(matches!(div(&a, &b), Err(Error::DivisionByZero { .. })));
    }

    #[test]
    fn scatter_gather_inverse_on_permutation() {
        let a = Tensor::matrix(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let idx = [2, 0, 1];
        let g = gather_rows(&a, &idx).unwrap();
        let back = scatter_add_rows(&g, &idx, 3).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn concat_slice_round_trip() {
        let a = Tensor::matrix(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::matrix(2, 1, &[9.0, 8.0]);
        let c = concat_cols(&[&a, &b]).unwrap();
        assert_eq!(slice_cols(&c, 0, 2).unwrap(), a);
        assert_eq!(slice_cols(&c, 2, 3).unwrap(), b);
    }

    #[test]
    fn transpose_involution() {
        let a = Tensor::matrix(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(transpose(&transpose(&a)), a);
    }
}
