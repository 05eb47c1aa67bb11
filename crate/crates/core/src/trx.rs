//! Wavelength-dependent transceiver SNR limit from back-to-back samples,
//! interpolated with a monotone piecewise cubic (Fritsch–Carlson).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrxPenaltyModel {
    lambda_nm: Vec<f64>,
    snr_db: Vec<f64>,
    tangents: Vec<f64>,
}

impl TrxPenaltyModel {
    /// Fit from `(λ nm, back-to-back SNR dB)` samples in any order.
    pub fn fit(samples: &[(f64, f64)]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("TRX model needs at least two samples"));
        }
        if samples.iter().any(|(l, s)| !(l.is_finite() && s.is_finite())) {
            return Err(Error::invalid("TRX samples must be finite"));
        }
        let mut pts = samples.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate wavelength in TRX samples"));
        }
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let tangents = fritsch_carlson(&x, &y);
        Ok(Self {
            lambda_nm: x,
            snr_db: y,
            tangents,
        })
    }

    /// Samples as `lambda_nm,snr_db` CSV.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["lambda_nm", "snr_db"] {
            return Err(Error::Schema(format!(
                "{}: expected header lambda_nm,snr_db, got {:?}",
                path.display(),
                headers
            )));
        }
        let mut samples = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec[k].parse().map_err(|_| {
                    Error::Schema(format!("{}: row {}: bad number {:?}", path.display(), line + 1, &rec[k]))
                })
            };
            samples.push((parse(0)?, parse(1)?));
        }
        Self::fit(&samples)
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.lambda_nm.iter().copied().zip(self.snr_db.iter().copied())
    }

    /// Interpolated SNR in dB, clamped to the end values outside the range.
    pub fn snr_db(&self, lambda_nm: f64) -> f64 {
        let x = &self.lambda_nm;
        let n = x.len();
        if lambda_nm <= x[0] {
            return self.snr_db[0];
        }
        if lambda_nm >= x[n - 1] {
            return self.snr_db[n - 1];
        }
        let k = x.partition_point(|&v| v <= lambda_nm) - 1;
        let h = x[k + 1] - x[k];
        let t = (lambda_nm - x[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.snr_db[k] + h10 * h * self.tangents[k] + h01 * self.snr_db[k + 1] + h11 * h * self.tangents[k + 1]
    }

    /// Linear SNR at a wavelength.
    pub fn snr_trx(&self, lambda_nm: f64) -> f64 {
        10f64.powf(self.snr_db(lambda_nm) / 10.0)
    }
}

fn fritsch_carlson(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let d: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k])).collect();
    let mut m = vec![0.0; n];
    m[0] = d[0];
    m[n - 1] = d[n - 2];
    for k in 1..n - 1 {
        m[k] = if d[k - 1] * d[k] <= 0.0 { 0.0 } else { (d[k - 1] + d[k]) / 2.0 };
    }
    for k in 0..n - 1 {
        if d[k] == 0.0 {
            m[k] = 0.0;
            m[k + 1] = 0.0;
            continue;
        }
        let a = m[k] / d[k];
        let b = m[k + 1] / d[k];
        let s = a * a + b * b;
        if s > 9.0 {
            let tau = 3.0 / s.sqrt();
            m[k] = tau * a * d[k];
            m[k + 1] = tau * b * d[k];
        }
    }
    m
}
