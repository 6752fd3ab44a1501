//! Channels-by-length activation tensor.

use ndarray::Array2;

use crate::error::{DssError, Result};

/// A real-valued channels x length array flowing through the network.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTensor {
    data: Array2<f64>,
}

impl SequenceTensor {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, l) = data.dim();
        if h == 0 || l == 0 {
            return Err(DssError::Domain(format!(
                "sequence tensor must be at least 1x1, got {h}x{l}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DssError::NonFinite("sequence tensor entry".into()));
        }
        Ok(SequenceTensor { data })
    }

    pub fn zeros(channels: usize, length: usize) -> Result<Self> {
        if channels == 0 || length == 0 {
            return Err(DssError::Domain("need H, L >= 1".into()));
        }
        Ok(SequenceTensor {
            data: Array2::zeros((channels, length)),
        })
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn length(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}
