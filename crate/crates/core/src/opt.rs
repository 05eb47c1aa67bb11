//! Launch-profile optimization at fixed total power: maximize the smallest
//! per-channel SNR predicted by the twin.

use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::diff::{Real, Tape};
use crate::error::{Error, Result};
use crate::fiber::DB_PER_NEPER;
use crate::grid::{dbm_to_mw, ChannelGrid, PowerProfile};
use crate::link::{snr_db, twin_forward, Toggles, TwinModels};
use crate::topology::LinkPath;
use crate::trx::TrxPenaltyModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoNl,
    NoNlNoTrx,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoNl, Variant::NoNlNoTrx];

    pub fn toggles(self) -> Toggles {
        match self {
            Variant::Full => Toggles::FULL,
            Variant::NoNl => Toggles::NO_NL,
            Variant::NoNlNoTrx => Toggles::NO_NL_NO_TRX,
        }
    }

    pub fn name(self) -> &'static str {
        self.toggles().name()
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptConfig {
    pub total_dbm: f64,
    pub variant: Variant,
    /// Smooth-min temperatures, 1/dB, one Adam stage each.
    pub taus: Vec<f64>,
    pub iters_per_stage: usize,
    pub adam: AdamConfig,
    /// Largest allowed spread between strongest and weakest channel, dB.
    pub max_range_db: f64,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            total_dbm: 18.0,
            variant: Variant::Full,
            taus: vec![1.0, 4.0, 16.0],
            iters_per_stage: 700,
            adam: AdamConfig::with_lr(0.01),
            max_range_db: 15.0,
            seed: 11,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("optimizer config: {m}")));
        if !self.total_dbm.is_finite() {
            return bad("total_dbm must be finite");
        }
        if self.taus.is_empty() || self.taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("taus must be positive");
        }
        if self.taus.windows(2).any(|w| w[1] < w[0]) {
            return bad("taus must be ascending");
        }
        if self.iters_per_stage == 0 {
            return bad("iters_per_stage must be > 0");
        }
        if !(self.max_range_db > 0.0 && self.max_range_db.is_finite()) {
            return bad("max_range_db must be > 0");
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return bad("learning rate must be > 0");
        }
        Ok(())
    }
}

/// Softmax split of the total power: `p_i = P_tot·e^θ_i / Σ e^θ_j` (mW).
pub fn parameterize<R: Real>(theta: &[R], p_tot_dbm: f64) -> Result<Vec<R>> {
    let total = dbm_to_mw(p_tot_dbm)?;
    let shift = theta.iter().map(|t| t.value()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<R> = theta.iter().map(|&t| (t - shift).exp()).collect();
    let k = R::sum(&e).recip() * total;
    Ok(e.into_iter().map(|x| x * k).collect())
}

pub fn profile_from_theta(grid: &ChannelGrid, theta: &[f64], p_tot_dbm: f64) -> Result<PowerProfile> {
    PowerProfile::new(grid, parameterize(theta, p_tot_dbm)?)
}

/// `−(1/τ)·ln Σ e^(−τ·x_i)`, evaluated with a shift by the smallest entry.
pub fn smooth_min<R: Real>(x: &[R], tau: f64) -> R {
    assert!(tau > 0.0, "smooth_min needs tau > 0");
    let m = x.iter().map(|v| v.value()).fold(f64::INFINITY, f64::min);
    let terms: Vec<R> = x.iter().map(|&v| ((v - m) * -tau).exp()).collect();
    R::sum(&terms).ln() * (-1.0 / tau) + m
}

/// Recenter θ to zero mean and bound its spread to `max_range_db`.
pub fn project_theta(theta: &mut [f64], max_range_db: f64) {
    let span = max_range_db / DB_PER_NEPER;
    let hi = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = theta.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi - lo > span {
        let mid = (hi + lo) / 2.0;
        for t in theta.iter_mut() {
            *t = t.clamp(mid - span / 2.0, mid + span / 2.0);
        }
    }
    let mean = theta.iter().sum::<f64>() / theta.len() as f64;
    for t in theta.iter_mut() {
        *t -= mean;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub iter: usize,
    pub tau: f64,
    pub cost_db: f64,
}

#[derive(Clone, Debug)]
pub struct OptResult {
    pub theta: Vec<f64>,
    pub profile: PowerProfile,
    pub trace: Vec<TracePoint>,
    /// Hard minimum SNR of the result under the full twin, dB.
    pub min_snr_full_db: f64,
    pub warnings: Vec<String>,
}

fn cost_and_grad(
    path: &LinkPath,
    models: &TwinModels,
    trx: &TrxPenaltyModel,
    toggles: Toggles,
    theta: &[f64],
    cfg: &OptConfig,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let th = tape.vars(theta);
    let launch = parameterize(&th, cfg.total_dbm)?;
    let (out, _) = twin_forward(path, models, launch, toggles.nl)?;
    let snr = snr_db(&path.grid, &out, toggles.trx.then_some(trx));
    let cost = smooth_min(&snr, tau) * -1.0;
    let g = tape.backward(cost)?;
    Ok((cost.value(), g.wrt_all(&th)))
}

/// Hard minimum SNR (dB) of a profile under the full twin.
pub fn min_snr_full(path: &LinkPath, models: &TwinModels, trx: &TrxPenaltyModel, launch: &PowerProfile) -> Result<f64> {
    let (out, _) = twin_forward(path, models, launch.mw().to_vec(), true)?;
    Ok(snr_db(&path.grid, &out, Some(trx)).into_iter().fold(f64::INFINITY, f64::min))
}

/// Anneal through `cfg.taus`, running Adam on `−smooth_min(SNR)` under the
/// variant's twin. Each stage restarts Adam from the best iterate so far.
pub fn optimize(path: &LinkPath, models: &TwinModels, trx: &TrxPenaltyModel, cfg: &OptConfig) -> Result<OptResult> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    if models.shared.metadata.is_none() {
        warnings.push("EDFA twin carries no training metadata; optimizing an untrained model".to_string());
    }
    let toggles = cfg.variant.toggles();
    let n = path.grid.n_ch();
    let mut theta = vec![0.0; n];
    let mut trace = Vec::with_capacity(cfg.taus.len() * cfg.iters_per_stage);
    let mut iter = 0;
    for &tau in &cfg.taus {
        let mut adam = Adam::new(cfg.adam, n);
        let mut best = (f64::INFINITY, theta.clone());
        for _ in 0..cfg.iters_per_stage {
            let (cost, grad) = cost_and_grad(path, models, trx, toggles, &theta, cfg, tau)?;
            if !cost.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch: iter,
                    detail: format!("cost {cost} at tau {tau}"),
                });
            }
            trace.push(TracePoint { iter, tau, cost_db: cost });
            if cost < best.0 {
                best = (cost, theta.clone());
            }
            adam.step(&mut theta, &grad);
            project_theta(&mut theta, cfg.max_range_db);
            iter += 1;
        }
        theta = best.1;
    }
    let profile = profile_from_theta(&path.grid, &theta, cfg.total_dbm)?;
    let min_snr_full_db = min_snr_full(path, models, trx, &profile)?;
    Ok(OptResult {
        theta,
        profile,
        trace,
        min_snr_full_db,
        warnings,
    })
}
