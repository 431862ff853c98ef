use super::kernels;
use super::NumError;

/// Dense row-major tensor of `f64` values.
///
/// Values built through [`Tensor::new`] are validated: every dimension is
/// positive, the element count matches the shape and all values are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NumError::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite(format!("tensor element {pos}")));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from values produced by a numcore kernel.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    /// Convenience constructor for a 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(NumError::InvalidShape(vec![r, c]));
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<f64, NumError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(NumError::NotScalar(self.shape.clone()))
        }
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize), NumError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(NumError::InvalidShape(self.shape.clone())),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = *self.shape.last().unwrap_or(&1);
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, NumError> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(NumError::InvalidShape(shape));
        }
        Ok(Self { shape, data: self.data })
    }

    /// Plain (untracked) matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NumError> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(NumError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let bt = kernels::transpose(&other.data, k, n);
        Ok(Tensor::from_parts(
            vec![m, n],
            kernels::matmul_nt(&self.data, m, k, &bt, n),
        ))
    }

    /// Plain transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Tensor, NumError> {
        let (r, c) = self.dims2()?;
        Ok(Tensor::from_parts(
            vec![c, r],
            kernels::transpose(&self.data, r, c),
        ))
    }

    /// Elementwise `self + scale * other`.
    pub fn add_scaled(&self, other: &Tensor, scale: f64) -> Result<Tensor, NumError> {
        if self.shape != other.shape {
            return Err(NumError::ShapeMismatch {
                op: "add_scaled",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Raw bit pattern, used for bit-for-bit comparisons.
    pub fn bits(&self) -> Vec<u64> {
        self.data.iter().map(|v| v.to_bits()).collect()
    }
}

/// Row-wise softmax of a 2-D tensor (or a vector treated as one row).
pub fn softmax(logits: &Tensor) -> Tensor {
    let cols = *logits.shape().last().unwrap_or(&1);
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(cols) {
        kernels::softmax_in_place(row);
    }
    Tensor::from_parts(logits.shape().to_vec(), out)
}

/// `-log softmax(logits)[target]` for a single vector of logits.
pub fn softmax_cross_entropy(logits: &Tensor, target: usize) -> Result<f64, NumError> {
    let v = logits.numel();
    if target >= v {
        return Err(NumError::IndexOutOfRange { index: target, bound: v });
    }
    Ok(-kernels::log_softmax_at(logits.data(), target))
}
