use crate::error::{Error, Result};

/// Dense row-major tensor of f64 values. The last axis is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from shape metadata and a flat row-major buffer.
    /// Every axis must be at least 1 and the buffer length must equal the
    /// shape product.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&s| s == 0) {
            return Err(Error::ShapeMismatch(format!(
                "all axes must be >= 1, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {numel} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&s| s >= 1),
            "all axes must be >= 1, got {shape:?}"
        );
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape {
            [a, b] => Ok((a, b)),
            _ => Err(Error::ShapeMismatch(format!(
                "expected rank 2, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::ShapeMismatch(format!(
                "expected rank 3, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims5(&self) -> Result<(usize, usize, usize, usize, usize)> {
        match *self.shape {
            [a, b, c, d, e] => Ok((a, b, c, d, e)),
            _ => Err(Error::ShapeMismatch(format!(
                "expected rank 5, got shape {:?}",
                self.shape
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_shape_product() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn dims_accessors_check_rank() {
        let t = Tensor::zeros(&[2, 3, 4]);
        assert_eq!(t.dims3().unwrap(), (2, 3, 4));
        assert!(t.dims2().is_err());
        assert_eq!(t.numel(), 24);
    }
}
