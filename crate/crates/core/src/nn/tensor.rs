use crate::error::{Error, Result};

/// Dense 4-D array indexed `(batch, channel, height, width)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "buffer of {} values does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        check_shape(shape).expect("tensor shape components must be positive");
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let [n, c, h, w] = shape;
        let mut i = 0;
        for a in 0..n {
            for b in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        t.data[i] = f([a, b, y, x]);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> f64 {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn at_mut(&mut self, idx: [usize; 4]) -> &mut f64 {
        let o = self.offset(idx);
        &mut self.data[o]
    }

    #[inline]
    fn offset(&self, [n, c, y, x]: [usize; 4]) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    pub fn reshape(self, shape: [usize; 4]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::validation(format!("{what} contains NaN or infinite values")))
        }
    }

    /// Sum of elementwise products.
    pub fn dot(&self, other: &Tensor4) -> f64 {
        assert_eq!(self.shape, other.shape, "dot of mismatched shapes");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Flattens `(c, h, w)` into one feature axis.
    pub fn flatten(self) -> Matrix {
        let rows = self.shape[0];
        let cols = self.item_len();
        Matrix {
            rows,
            cols,
            data: self.data,
        }
    }
}

fn check_shape(shape: [usize; 4]) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::shape(format!("shape components must be positive, got {shape:?}")));
    }
    Ok(())
}

/// Row-major `rows × cols` matrix; rows index the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix buffer of {} values does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::validation(format!("{what} contains NaN or infinite values")))
        }
    }

    pub fn dot(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Reinterprets each row as a `(c, h, w)` volume.
    pub fn into_tensor(self, c: usize, h: usize, w: usize) -> Result<Tensor4> {
        if c * h * w != self.cols {
            return Err(Error::shape(format!(
                "cannot reshape {} features into {c}x{h}x{w}",
                self.cols
            )));
        }
        Tensor4::new([self.rows, c, h, w], self.data)
    }
}
