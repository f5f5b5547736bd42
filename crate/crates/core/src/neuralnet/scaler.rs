use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column standardization `(x - mean) / std`. A column with zero variance
/// gets scale 0: it standardizes to 0 and inverts to its constant value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(data: ArrayView2<f64>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::InsufficientData(format!(
                "scaler needs at least 2 rows, got {}",
                data.nrows()
            )));
        }
        let mean = data.mean_axis(Axis(0)).expect("non-empty");
        let scale =
            data.std_axis(Axis(0), 0.0)
                .mapv(|s| if s > 0.0 && s.is_finite() { s } else { 0.0 });
        Ok(Self {
            mean: mean.to_vec(),
            scale: scale.to_vec(),
        })
    }

    /// Identity transform of the given width.
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, data: &ArrayView2<f64>) -> Result<()> {
        if data.ncols() != self.width() {
            return Err(Error::Dimension(format!(
                "scaler fitted on {} columns, got {}",
                self.width(),
                data.ncols()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&data)?;
        let mut out = data.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
            }
        }
        Ok(out)
    }

    pub fn invert(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&data)?;
        let mut out = data.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }
}
