use super::{check_dim, VelocityField};
use crate::error::{Error, Result};
use crate::linalg::{expm, Mat};

/// Autonomous affine field `v(x) = Jx + c` with constant Jacobian `J`.
///
/// Its time-1 flow map comes from the exponential of the augmented matrix
/// `[[J, c], [0, 0]]`, which is precomputed at construction.
#[derive(Clone, Debug)]
pub struct LinearField {
    matrix: Mat,
    offset: Vec<f64>,
    flow: Mat,
}

impl LinearField {
    pub fn new(matrix: Mat, offset: Vec<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSquare {
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        let d = matrix.dim();
        check_dim(d, &offset)?;
        let mut aug = Mat::zeros(d + 1, d + 1);
        for i in 0..d {
            for j in 0..d {
                aug[(i, j)] = matrix[(i, j)];
            }
            aug[(i, d)] = offset[i];
        }
        let flow = expm(&aug)?;
        Ok(Self {
            matrix,
            offset,
            flow,
        })
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }
}

impl VelocityField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn eval(&self, _t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let jx = self.matrix.matvec(x)?;
        Ok(jx.iter().zip(&self.offset).map(|(a, b)| a + b).collect())
    }

    fn jacobian(&self, _t: f64, x: &[f64]) -> Result<Mat> {
        check_dim(self.dim(), x)?;
        Ok(self.matrix.clone())
    }

    fn time_partial(&self, _t: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x)?;
        Ok(vec![0.0; self.dim()])
    }

    fn exact_endpoint(&self, x0: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim();
        Some(
            (0..d)
                .map(|i| (0..d).map(|j| self.flow[(i, j)] * x0[j]).sum::<f64>() + self.flow[(i, d)])
                .collect(),
        )
    }
}
