use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{least_squares, SymMatrix};

/// Design matrix with unit-norm columns and its response.
///
/// Rows beyond `n_original` are zero rows appended by [`extend_design`].
#[derive(Debug, Clone, PartialEq)]
pub struct DesignData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    n_original: usize,
    column_norms: DVector<f64>,
    sigma_hat: Option<f64>,
}

impl DesignData {
    /// Normalizes the columns of `x` to unit Euclidean norm.
    pub fn new(mut x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if p == 0 {
            return Err(Error::Dimension("design has no columns".into()));
        }
        if n < p {
            return Err(Error::Dimension(format!("need n >= p, got n = {n}, p = {p}")));
        }
        if y.len() != n {
            return Err(Error::Dimension(format!("response has length {}, design has {n} rows", y.len())));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::Input("design or response has non-finite entries".into()));
        }
        let mut norms = DVector::zeros(p);
        for (j, mut col) in x.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm == 0.0 {
                return Err(Error::Input(format!("column {j} is identically zero")));
            }
            col /= norm;
            norms[j] = norm;
        }
        Ok(DesignData { x, y, n_original: n, column_norms: norms, sigma_hat: None })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n_original(&self) -> usize {
        self.n_original
    }

    pub fn column_norms(&self) -> &DVector<f64> {
        &self.column_norms
    }

    /// Noise level used to fill appended response entries, if extended.
    pub fn sigma_hat(&self) -> Option<f64> {
        self.sigma_hat
    }

    pub fn extended_rows(&self) -> usize {
        self.n() - self.n_original
    }

    pub fn gram(&self) -> SymMatrix {
        SymMatrix::gram(&self.x)
    }

    /// Same design with a different response of equal length.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::Dimension(format!("response has length {}, design has {} rows", y.len(), self.n())));
        }
        Ok(DesignData { y, ..self.clone() })
    }

    /// The first `rows` rows; `rows` may not cut into the original data.
    ///
    /// Used to share one extension (made for the largest `d`) across smaller
    /// `d`, whose designs are prefixes of it.
    pub fn prefix(&self, rows: usize) -> Result<Self> {
        if rows < self.n_original || rows > self.n() {
            return Err(Error::Dimension(format!(
                "prefix of {rows} rows must lie in {}..={}",
                self.n_original,
                self.n()
            )));
        }
        Ok(DesignData {
            x: self.x.rows(0, rows).into_owned(),
            y: self.y.rows(0, rows).into_owned(),
            n_original: self.n_original,
            column_norms: self.column_norms.clone(),
            sigma_hat: if rows > self.n_original { self.sigma_hat } else { None },
        })
    }

    /// Rows needed for `d` knockoffs given this design, never fewer than the
    /// original row count.
    pub fn rows_for(&self, d: usize) -> usize {
        required_rows(self.p(), d).max(self.n_original)
    }
}

/// Rows needed for `d` knockoffs: `(d+1)p`.
pub fn required_rows(p: usize, d: usize) -> usize {
    (d + 1) * p
}

/// `sqrt(RSS / (n - p))` from the least-squares fit on the original rows.
pub fn estimate_sigma(data: &DesignData) -> Result<f64> {
    let n = data.n_original();
    let p = data.p();
    if n <= p {
        return Err(Error::CannotEstimateSigma { n, p });
    }
    let x = data.x().rows(0, n).into_owned();
    let y = data.y().rows(0, n).into_owned();
    let beta = least_squares(&x, &y)?;
    let rss = (&y - &x * beta).norm_squared();
    Ok((rss / (n - p) as f64).sqrt())
}

/// Append `(d+1)p - n` zero rows to `X` and as many `N(0, σ̂²)` draws to `y`.
///
/// `σ̂` is `sigma_known` when given, otherwise estimated from the residual sum
/// of squares of the original data.
pub fn extend_design<R: Rng + ?Sized>(
    data: &DesignData,
    d: usize,
    sigma_known: Option<f64>,
    rng: &mut R,
) -> Result<DesignData> {
    if d == 0 {
        return Err(Error::Parameter("d must be >= 1".into()));
    }
    let n = data.n();
    let required = required_rows(data.p(), d);
    if n >= required {
        return Err(Error::NoExtensionNeeded { n, required });
    }
    let sigma = match sigma_known {
        Some(s) if s.is_finite() && s > 0.0 => s,
        Some(s) => return Err(Error::Parameter(format!("known sigma must be positive, got {s}"))),
        None => estimate_sigma(data)?,
    };
    let extra = required - n;
    let mut x = data.x().clone().resize_vertically(required, 0.0);
    x.rows_mut(n, extra).fill(0.0);
    let mut y = data.y().clone().resize_vertically(required, 0.0);
    for v in y.rows_mut(n, extra).iter_mut() {
        *v = sigma * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(DesignData {
        x,
        y,
        n_original: data.n_original,
        column_norms: data.column_norms.clone(),
        sigma_hat: Some(sigma),
    })
}
