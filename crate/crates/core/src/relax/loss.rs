use nalgebra::{DMatrix, DVector};

use super::instance::{LossKind, MipInstance};

/// Smooth data term of an instance as dense matrices.
#[derive(Debug, Clone)]
pub struct DataLoss {
    kind: LossKind,
    a: DMatrix<f64>,
    b: DVector<f64>,
    lipschitz: f64,
}

fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl DataLoss {
    pub fn new(inst: &MipInstance) -> Self {
        let (m, n) = (inst.rows(), inst.cols());
        let a = DMatrix::from_fn(m, n, |r, c| inst.a[r][c]);
        let b = DVector::from_column_slice(&inst.b);
        let sigma_sq = spectral_norm_sq(&a);
        let lipschitz = match inst.loss {
            LossKind::LeastSquares => 2.0 * sigma_sq,
            LossKind::Logistic => 0.25 * sigma_sq,
        };
        Self { kind: inst.loss, a, b, lipschitz }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// Upper bound on the gradient's Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let margin = &self.a * DVector::from_column_slice(w);
        match self.kind {
            LossKind::LeastSquares => (margin - &self.b).norm_squared(),
            LossKind::Logistic => margin.iter().zip(self.b.iter()).map(|(z, y)| log1p_exp(-y * z)).sum(),
        }
    }

    pub fn value_grad(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let margin = &self.a * DVector::from_column_slice(w);
        match self.kind {
            LossKind::LeastSquares => {
                let r = margin - &self.b;
                let g = self.a.tr_mul(&r) * 2.0;
                (r.norm_squared(), g.as_slice().to_vec())
            }
            LossKind::Logistic => {
                let mut value = 0.0;
                let mut coef = DVector::zeros(margin.len());
                for (k, (z, y)) in margin.iter().zip(self.b.iter()).enumerate() {
                    value += log1p_exp(-y * z);
                    coef[k] = -y * sigmoid(-y * z);
                }
                (value, self.a.tr_mul(&coef).as_slice().to_vec())
            }
        }
    }

    pub fn hessian(&self, w: &[f64]) -> DMatrix<f64> {
        match self.kind {
            LossKind::LeastSquares => self.a.tr_mul(&self.a) * 2.0,
            LossKind::Logistic => {
                let margin = &self.a * DVector::from_column_slice(w);
                let mut scaled = self.a.clone();
                for (k, z) in margin.iter().enumerate() {
                    let s = sigmoid(*z);
                    let d = s * (1.0 - s);
                    scaled.row_mut(k).scale_mut(d);
                }
                self.a.tr_mul(&scaled)
            }
        }
    }
}

/// Largest eigenvalue of `AᵀA` by power iteration, padded by 1%.
fn spectral_norm_sq(a: &DMatrix<f64>) -> f64 {
    let ata = a.tr_mul(a);
    let mut v = DVector::from_element(ata.ncols(), 1.0);
    let mut est = 0.0;
    for _ in 0..200 {
        let next = &ata * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return 1e-12;
        }
        est = norm / v.norm();
        v = next / norm;
    }
    // power iteration approaches from below; the trace caps it from above
    (1.01 * est).min(ata.trace()).max(est)
}
