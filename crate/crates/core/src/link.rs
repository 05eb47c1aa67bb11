//! Cascade assembly and per-channel SNR/OSNR/margin prediction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::diff::Real;
use crate::edfa::{EdfaTwinModel, EnvelopeWarning};
use crate::error::{Error, Result};
use crate::fiber::{propagate_span, SpanState};
use crate::grid::{mw_to_dbm, ChannelGrid, PowerProfile};
use crate::topology::{AmpSite, Element, LinkPath};
use crate::trx::TrxPenaltyModel;

/// Reports clamp SNR and OSNR here instead of printing infinities.
pub const SNR_CAP_DB: f64 = 60.0;

pub const DEFAULT_THRESHOLD_DB: f64 = 12.5;

/// Which impairments the twin includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Toggles {
    pub nl: bool,
    pub trx: bool,
}

impl Toggles {
    pub const FULL: Self = Self { nl: true, trx: true };
    pub const NO_NL: Self = Self { nl: false, trx: true };
    pub const NO_NL_NO_TRX: Self = Self { nl: false, trx: false };

    pub fn name(self) -> &'static str {
        match (self.nl, self.trx) {
            (true, true) => "full",
            (false, true) => "no-nl",
            (false, false) => "no-nl-no-trx",
            (true, false) => "no-trx",
        }
    }
}

impl fmt::Display for Toggles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Toggles {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::FULL),
            "no-nl" => Ok(Self::NO_NL),
            "no-nl-no-trx" => Ok(Self::NO_NL_NO_TRX),
            "no-trx" => Ok(Self { nl: true, trx: false }),
            other => Err(Error::invalid(format!("unknown toggle set {other:?}"))),
        }
    }
}

/// Twin models per amplifier: one shared model, optionally overridden for
/// individual devices.
#[derive(Clone, Debug)]
pub struct TwinModels {
    pub shared: EdfaTwinModel,
    pub per_device: BTreeMap<String, EdfaTwinModel>,
}

impl TwinModels {
    pub fn shared(model: EdfaTwinModel) -> Self {
        Self {
            shared: model,
            per_device: BTreeMap::new(),
        }
    }

    pub fn get(&self, device: &str) -> &EdfaTwinModel {
        self.per_device.get(device).unwrap_or(&self.shared)
    }

    pub fn hash(&self) -> u64 {
        let mut h = self.shared.hash();
        for (k, m) in &self.per_device {
            h = crate::grid::fnv1a(format!("{h:x}{k}{:x}", m.hash()).as_bytes());
        }
        h
    }
}

/// Fold a launch vector through the path. `amp` evaluates each amplifier.
/// With `nl == false` every span is evaluated with `γ = 0` and `C_r = 0`.
pub fn cascade<R, A>(path: &LinkPath, launch: Vec<R>, nl: bool, mut amp: A) -> Result<(SpanState<R>, Vec<String>)>
where
    R: Real,
    A: FnMut(&AmpSite, SpanState<R>) -> Result<(SpanState<R>, Option<EnvelopeWarning>)>,
{
    let grid = &path.grid;
    if launch.len() != grid.n_ch() {
        return Err(Error::invalid(format!(
            "launch has {} channels, path grid has {}",
            launch.len(),
            grid.n_ch()
        )));
    }
    if path.elements.is_empty() {
        return Err(Error::invalid("path has no elements"));
    }
    let mut state = SpanState::launch(grid, launch);
    let mut flags = Vec::new();
    for el in &path.elements {
        state = match el {
            Element::Span(s) if nl => propagate_span(s, grid, state)?,
            Element::Span(s) => propagate_span(&s.linear(), grid, state)?,
            Element::Amp(site) => {
                let (out, warn) = amp(site, state)?;
                if let Some(w) = warn {
                    flags.push(format!("{}: {w}", site.device));
                }
                out
            }
        };
    }
    Ok((state, flags))
}

/// Twin cascade with the given models.
pub fn twin_forward<R: Real>(
    path: &LinkPath,
    models: &TwinModels,
    launch: Vec<R>,
    nl: bool,
) -> Result<(SpanState<R>, Vec<String>)> {
    cascade(path, launch, nl, |site, st| {
        models.get(&site.device).amplify(&path.grid, st, site.setpoint_dbm)
    })
}

/// Per-channel SNR in dB, differentiable in the state.
///
/// ASE is referred from `b_ref` to each channel's signal bandwidth; NLI is
/// already in `b_ch`. The TRX limit combines harmonically.
pub fn snr_db<R: Real>(grid: &ChannelGrid, out: &SpanState<R>, trx: Option<&TrxPenaltyModel>) -> Vec<R> {
    (0..out.n_ch())
        .map(|i| {
            let noise = out.ase[i] * (grid.b_ch_ghz()[i] / grid.b_ref_ghz()) + out.nli[i];
            let inv_link = noise / out.signal[i];
            let inv = match trx {
                Some(t) => inv_link + 1.0 / t.snr_trx(grid.wavelength_nm(i)),
                None => inv_link,
            };
            inv.lin_to_db() * -1.0
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelReport {
    pub ch: usize,
    pub f_thz: f64,
    pub lambda_nm: f64,
    pub signal_dbm: f64,
    pub ase_dbm: f64,
    pub nli_dbm: f64,
    pub osnr_db: f64,
    pub snr_db: f64,
    pub margin_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnrReport {
    pub path_id: String,
    pub threshold_db: f64,
    pub channels: Vec<ChannelReport>,
    pub flags: Vec<String>,
}

fn capped(x: f64, what: &str, ch: usize, flags: &mut Vec<String>) -> f64 {
    if x.is_nan() || x > SNR_CAP_DB {
        flags.push(format!("ch {ch}: {what} capped at {SNR_CAP_DB} dB"));
        SNR_CAP_DB
    } else {
        x
    }
}

impl SnrReport {
    pub fn from_state(
        path_id: &str,
        grid: &ChannelGrid,
        out: &SpanState<f64>,
        trx: Option<&TrxPenaltyModel>,
        threshold_db: f64,
        mut flags: Vec<String>,
    ) -> Self {
        let snr = snr_db(grid, out, trx);
        let channels = (0..grid.n_ch())
            .map(|i| {
                let osnr = capped(10.0 * (out.signal[i] / out.ase[i]).log10(), "OSNR", i, &mut flags);
                let snr = capped(snr[i], "SNR", i, &mut flags);
                ChannelReport {
                    ch: i,
                    f_thz: grid.f_thz()[i],
                    lambda_nm: grid.wavelength_nm(i),
                    signal_dbm: mw_to_dbm(out.signal[i]),
                    ase_dbm: mw_to_dbm(out.ase[i]),
                    nli_dbm: mw_to_dbm(out.nli[i]),
                    osnr_db: osnr,
                    snr_db: snr,
                    margin_db: snr - threshold_db,
                }
            })
            .collect();
        Self {
            path_id: path_id.to_string(),
            threshold_db,
            channels,
            flags,
        }
    }

    pub fn snr_db(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.snr_db).collect()
    }

    pub fn osnr_db(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.osnr_db).collect()
    }

    pub fn margins_db(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.margin_db).collect()
    }

    /// Smallest margin and the channel holding it.
    pub fn min_margin(&self) -> (usize, f64) {
        self.channels
            .iter()
            .map(|c| (c.ch, c.margin_db))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
    }

    /// Mean margin over the longest-wavelength quarter of the band.
    pub fn long_wavelength_margin(&self) -> f64 {
        let k = (self.channels.len() / 4).max(1);
        let mut by_lambda: Vec<&ChannelReport> = self.channels.iter().collect();
        by_lambda.sort_by(|a, b| b.lambda_nm.total_cmp(&a.lambda_nm));
        by_lambda[..k].iter().map(|c| c.margin_db).sum::<f64>() / k as f64
    }
}

/// Twin prediction for one launch profile.
pub fn predict(
    path: &LinkPath,
    models: &TwinModels,
    launch: &PowerProfile,
    trx: &TrxPenaltyModel,
    toggles: Toggles,
    threshold_db: f64,
) -> Result<SnrReport> {
    launch.check_grid(&path.grid)?;
    let (out, flags) = twin_forward(path, models, launch.mw().to_vec(), toggles.nl)?;
    Ok(SnrReport::from_state(
        &path.id,
        &path.grid,
        &out,
        toggles.trx.then_some(trx),
        threshold_db,
        flags,
    ))
}
