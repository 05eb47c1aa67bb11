//! Remote training of the amplifier twin from probe measurements taken
//! through a single access link.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::diff::{Real, Tape};
use crate::edfa::{EdfaTwinModel, NormConstants, TrainingMetadata, DEFAULT_HIDDEN, ENVELOPE_DBM};
use crate::error::{Error, Result};
use crate::field_sim::{rng_for, NetworkSim};
use crate::grid::{dbm_to_mw, mw_to_dbm, PowerProfile};
use crate::link::cascade;
use crate::topology::LinkPath;

pub use crate::field_sim::ProbeRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n_train: usize,
    pub n_val: usize,
    /// Probe total launch power range, dBm.
    pub total_dbm: [f64; 2],
    /// Per-channel offsets drawn from ±this around flat, dB.
    pub offset_db: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_val: 50,
            total_dbm: [12.0, 21.0],
            offset_db: 9.0,
            adam: AdamConfig::with_lr(1e-3),
            epochs: 500,
            batch_size: 16,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn hash(&self) -> u64 {
        crate::grid::fnv1a(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("train config: {m}")));
        if self.n_train == 0 || self.n_val == 0 {
            return bad("probe counts must be > 0");
        }
        let [lo, hi] = self.total_dbm;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("total_dbm must be an ascending finite pair");
        }
        if !(self.offset_db.is_finite() && self.offset_db >= 0.0) {
            return bad("offset_db must be >= 0");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be > 0");
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return bad("learning rate must be > 0");
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Random probe launch profile number `index`.
pub fn probe_profile(sim: &NetworkSim, cfg: &TrainConfig, index: usize) -> Result<PowerProfile> {
    let mut rng = rng_for(cfg.seed, &format!("probe/{index}"));
    let shape: Vec<f64> = (0..sim.grid().n_ch())
        .map(|_| dbm_to_mw(uniform(&mut rng, -cfg.offset_db, cfg.offset_db)))
        .collect::<Result<_>>()?;
    let total = dbm_to_mw(uniform(&mut rng, cfg.total_dbm[0], cfg.total_dbm[1]))?;
    let k = total / shape.iter().sum::<f64>();
    PowerProfile::new(sim.grid(), shape.into_iter().map(|p| p * k).collect())
}

/// `count` probes with ids `first_id..`, measured through `path_id`.
pub fn generate_probes(
    sim: &NetworkSim,
    path_id: &str,
    cfg: &TrainConfig,
    first_id: usize,
    count: usize,
) -> Result<Vec<ProbeRecord>> {
    cfg.validate()?;
    sim.path(path_id)?;
    (first_id..first_id + count)
        .into_par_iter()
        .map(|i| sim.measure_probe(path_id, &probe_profile(sim, cfg, i)?, i))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: EdfaTwinModel,
    pub curve: Vec<CurvePoint>,
}

fn check_probes(path: &LinkPath, probes: &[ProbeRecord]) -> Result<()> {
    let n = path.grid.n_ch();
    for p in probes {
        if p.p_in_dbm.len() != n || p.p_out_dbm.len() != n || p.p_ase_dbm.len() != n {
            return Err(Error::invalid(format!(
                "probe {} has {} channels, grid has {n}",
                p.probe_id,
                p.p_in_dbm.len()
            )));
        }
        let finite = p.p_in_dbm.iter().chain(&p.p_out_dbm).chain(&p.p_ase_dbm).all(|x| x.is_finite());
        if !finite {
            return Err(Error::invalid(format!("probe {} has non-finite values", p.probe_id)));
        }
    }
    Ok(())
}

fn launch_mw(p: &ProbeRecord) -> Result<Vec<f64>> {
    p.p_in_dbm.iter().map(|&x| dbm_to_mw(x)).collect()
}

/// Output signal and ASE (dBm) predicted for one probe; every amplifier on
/// the path is the one twin, evaluated with `params`.
fn forward<R: Real>(model: &EdfaTwinModel, path: &LinkPath, params: &[R], launch: Vec<R>) -> Result<(Vec<R>, Vec<R>)> {
    let (out, _) = cascade(path, launch, true, |site, st| {
        model.amplify_with_params(&path.grid, params, st, site.setpoint_dbm)
    })?;
    let db = |xs: &[R]| xs.iter().map(|x| x.lin_to_db()).collect();
    Ok((db(&out.signal), db(&out.ase)))
}

fn probe_loss<R: Real>(pred: &(Vec<R>, Vec<R>), p: &ProbeRecord) -> R {
    let n = p.p_out_dbm.len();
    let mut acc = pred.0[0].lift(0.0);
    for i in 0..n {
        let es = pred.0[i] - p.p_out_dbm[i];
        let ea = pred.1[i] - p.p_ase_dbm[i];
        acc = acc + es * es + ea * ea;
    }
    acc / n as f64
}

fn mse(model: &EdfaTwinModel, path: &LinkPath, probes: &[ProbeRecord]) -> Result<f64> {
    let params = model.params();
    let losses: Vec<f64> = probes
        .par_iter()
        .map(|p| Ok(probe_loss(&forward(model, path, &params, launch_mw(p)?)?, p)))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / probes.len() as f64)
}

/// Loss and gradient for one probe on its own tape.
fn probe_grad(model: &EdfaTwinModel, path: &LinkPath, params: &[f64], p: &ProbeRecord) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let w = tape.vars(params);
    let launch = launch_mw(p)?.into_iter().map(|x| tape.constant(x)).collect();
    let loss = probe_loss(&forward(model, path, &w, launch)?, p);
    let g = tape.backward(loss)?;
    Ok((loss.value(), g.wrt_all(&w)))
}

/// Total amplifier input power (dBm) at every amplifier on the path for
/// each probe, under the current model.
fn amp_inputs(model: &EdfaTwinModel, path: &LinkPath, probes: &[ProbeRecord]) -> Result<Vec<f64>> {
    let mut seen = Vec::new();
    for p in probes {
        cascade(path, launch_mw(p)?, true, |site, st| {
            seen.push(mw_to_dbm(st.total_mw()));
            model.amplify(&path.grid, st, site.setpoint_dbm)
        })?;
    }
    Ok(seen)
}

fn norm_from(xs: &[f64], fallback: f64) -> (f64, f64) {
    if xs.is_empty() {
        return (fallback, 1.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, sd.max(1.0))
}

/// Fit the twin on `train` probes; `val` only feeds the reported curve.
pub fn train_twin(path: &LinkPath, train: &[ProbeRecord], val: &[ProbeRecord], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("no training probes"));
    }
    check_probes(path, train)?;
    check_probes(path, val)?;
    if path.amps().next().is_none() {
        return Err(Error::invalid(format!("path {} has no amplifier to train", path.id)));
    }

    let mut model = EdfaTwinModel::init_with(&path.grid, cfg.seed, &cfg.hidden)?;
    let p_in = amp_inputs(&model, path, train)?;
    let (m0, s0) = norm_from(&p_in, 0.0);
    // The setpoint is usually constant across probes; map the whole
    // envelope onto [-1, 1] so it still reaches the nets as a nonzero input.
    let (lo, hi) = ENVELOPE_DBM;
    model.norm_constants = NormConstants {
        mean: [m0, (lo + hi) / 2.0],
        scale: [s0, (hi - lo) / 2.0],
    };

    let mut params = model.params();
    let mut adam = Adam::new(cfg.adam, params.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_for(cfg.seed, &format!("epoch/{epoch}")));
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| probe_grad(&model, path, &params, &train[i]))
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; params.len()];
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("batch loss {loss}"),
                    });
                }
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b / batch.len() as f64;
                }
            }
            adam.step(&mut params, &grad);
        }
        model.set_params(&params);
        let train_mse = mse(&model, path, train)?;
        let val_mse = if val.is_empty() { f64::NAN } else { mse(&model, path, val)? };
        if !train_mse.is_finite() || params.iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                detail: format!("training MSE {train_mse}"),
            });
        }
        curve.push(CurvePoint {
            epoch,
            train_mse,
            val_mse,
        });
    }
    let last = curve.last().copied().expect("at least one epoch");
    model.metadata = Some(TrainingMetadata {
        final_train_mse: last.train_mse,
        final_val_mse: last.val_mse,
        probe_count: train.len(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
    });
    Ok(TrainOutcome { model, curve })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelError {
    pub ch: usize,
    pub rms_gain_db: f64,
    pub max_gain_db: f64,
    pub rms_ase_db: f64,
    pub max_ase_db: f64,
}

/// Prediction error of a model against held-out probes. Gain error equals
/// the output-signal error since probe inputs are known exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub rms_gain_db: f64,
    pub max_gain_db: f64,
    pub rms_ase_db: f64,
    pub max_ase_db: f64,
    pub channels: Vec<ChannelError>,
}

pub fn validate_twin(model: &EdfaTwinModel, path: &LinkPath, probes: &[ProbeRecord]) -> Result<ValidationReport> {
    model.validate(&path.grid).map_err(|e| match e {
        Error::Schema(m) => Error::InvalidArgument(m),
        other => other,
    })?;
    check_probes(path, probes)?;
    if probes.is_empty() {
        return Err(Error::invalid("no probes to validate against"));
    }
    let params = model.params();
    let preds: Vec<(Vec<f64>, Vec<f64>)> = probes
        .par_iter()
        .map(|p| forward(model, path, &params, launch_mw(p)?))
        .collect::<Result<_>>()?;
    let n = path.grid.n_ch();
    let m = probes.len() as f64;
    let mut channels = Vec::with_capacity(n);
    for ch in 0..n {
        let (mut sg, mut mg, mut sa, mut ma) = (0.0, 0.0f64, 0.0, 0.0f64);
        for (p, (sig, ase)) in probes.iter().zip(&preds) {
            let eg = sig[ch] - p.p_out_dbm[ch];
            let ea = ase[ch] - p.p_ase_dbm[ch];
            sg += eg * eg;
            sa += ea * ea;
            mg = mg.max(eg.abs());
            ma = ma.max(ea.abs());
        }
        channels.push(ChannelError {
            ch,
            rms_gain_db: (sg / m).sqrt(),
            max_gain_db: mg,
            rms_ase_db: (sa / m).sqrt(),
            max_ase_db: ma,
        });
    }
    let agg = |f: fn(&ChannelError) -> f64| (channels.iter().map(|c| f(c).powi(2)).sum::<f64>() / n as f64).sqrt();
    let mx = |f: fn(&ChannelError) -> f64| channels.iter().map(f).fold(0.0, f64::max);
    Ok(ValidationReport {
        rms_gain_db: agg(|c| c.rms_gain_db),
        max_gain_db: mx(|c| c.max_gain_db),
        rms_ase_db: agg(|c| c.rms_ase_db),
        max_ase_db: mx(|c| c.max_ase_db),
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_sim::GroundTruthEdfa;
    use crate::scenario::reference_topology;

    fn sim() -> NetworkSim {
        NetworkSim::new(reference_topology()).unwrap()
    }

    #[test]
    fn degenerate_ranges_give_flat_probes() {
        let s = sim();
        let cfg = TrainConfig {
            offset_db: 0.0,
            total_dbm: [18.0, 18.0],
            ..TrainConfig::default()
        };
        let flat = PowerProfile::flat(s.grid(), 18.0).unwrap();
        for i in 0..5 {
            let p = probe_profile(&s, &cfg, i).unwrap();
            for (a, b) in p.mw().iter().zip(flat.mw()) {
                assert!((a / b - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn probe_sets_are_reproducible() {
        let s = sim();
        let cfg = TrainConfig::default();
        let a = generate_probes(&s, "train", &cfg, 0, 250).unwrap();
        let b = generate_probes(&s, "train", &cfg, 0, 250).unwrap();
        assert_eq!(a, b);
        let ids: std::collections::BTreeSet<usize> = a.iter().map(|p| p.probe_id).collect();
        assert_eq!(ids.len(), 250);
        let totals: Vec<f64> = a
            .iter()
            .map(|p| mw_to_dbm(p.p_in_dbm.iter().map(|&x| dbm_to_mw(x).unwrap()).sum()))
            .collect();
        let lo = totals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = totals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((12.0 - 1e-9..12.1).contains(&lo), "{lo}");
        assert!(hi <= 21.0 + 1e-9 && hi > 20.9, "{hi}");
    }

    fn skeleton_probes(s: &NetworkSim, cfg: &TrainConfig, n: usize, nf: impl Fn(f64) -> Vec<f64>) -> Vec<ProbeRecord> {
        let path = s.path("train").unwrap();
        (0..n)
            .map(|i| {
                let launch = probe_profile(s, cfg, i).unwrap();
                let (out, _) = cascade(&path, launch.mw().to_vec(), true, |site, st| {
                    crate::edfa::amplify_with(s.grid(), st, site.setpoint_dbm, 12.5, |p| (vec![0.0; 48], nf(p)))
                })
                .unwrap();
                ProbeRecord {
                    probe_id: i,
                    path_id: "train".into(),
                    p_in_dbm: launch.dbm(),
                    p_out_dbm: out.signal.iter().map(|&x| mw_to_dbm(x)).collect(),
                    p_ase_dbm: out.ase.iter().map(|&x| mw_to_dbm(x)).collect(),
                }
            })
            .collect()
    }

    #[test]
    fn perfect_model_has_zero_error() {
        // Flat gain and a 7.5 dB noise figure are exactly the fresh twin.
        let s = sim();
        let probes = skeleton_probes(&s, &TrainConfig::default(), 4, |_| vec![7.5; 48]);
        let model = EdfaTwinModel::init(s.grid(), 1);
        let r = validate_twin(&model, &s.path("train").unwrap(), &probes).unwrap();
        assert!(r.max_gain_db < 1e-9 && r.max_ase_db < 1e-9, "{r:?}");
    }

    #[test]
    fn realizable_truth_is_learned() {
        let mut t = reference_topology();
        t.sim.osa_sigma_db = 0.0;
        let s = NetworkSim::new(t).unwrap();
        let path = s.path("train").unwrap();
        let cfg = TrainConfig {
            epochs: 60,
            adam: AdamConfig::with_lr(3e-3),
            ..TrainConfig::default()
        };
        // The default truth minus ripple and tilt: only the NF must be learned.
        let truth = GroundTruthEdfa::default();
        let probes = skeleton_probes(&s, &cfg, 60, |p| truth.nf_db(s.grid(), p));
        let out = train_twin(&path, &probes[..48], &probes[48..], &cfg).unwrap();
        let r = validate_twin(&out.model, &path, &probes[48..]).unwrap();
        assert!(r.rms_gain_db < 0.02, "{r:?}");
        let first = out.curve[0].train_mse;
        let last = out.curve.last().unwrap().train_mse;
        assert!(last <= first);
        assert_eq!(out.model.metadata.as_ref().unwrap().probe_count, 48);
    }

    #[test]
    fn every_weight_receives_gradient() {
        let s = sim();
        let path = s.path("train").unwrap();
        let cfg = TrainConfig::default();
        let probes = generate_probes(&s, "train", &cfg, 0, 16).unwrap();
        let mut model = EdfaTwinModel::init(s.grid(), 3);
        model.norm_constants = NormConstants {
            mean: [3.0, -3.5],
            scale: [2.0, 26.5],
        };
        // Nonzero output layers so hidden weights are reachable.
        let p: Vec<f64> = model.params().iter().enumerate().map(|(i, w)| w + 1e-3 * ((i * 7919 % 13) as f64 - 6.0)).collect();
        model.set_params(&p);
        let mut any = vec![false; p.len()];
        for pr in &probes {
            let (_, g) = probe_grad(&model, &path, &p, pr).unwrap();
            for (a, x) in any.iter_mut().zip(g) {
                *a |= x != 0.0;
            }
        }
        let dead: Vec<usize> = (0..any.len()).filter(|&i| !any[i]).collect();
        assert!(dead.is_empty(), "{dead:?} of {}", any.len());
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let s = sim();
        let path = s.path("train").unwrap();
        let other = crate::grid::ChannelGrid::uniform(48, 191.3, 0.1, 12.5, 12.5).unwrap();
        let model = EdfaTwinModel::init(&other, 1);
        let probes = generate_probes(&s, "train", &TrainConfig::default(), 0, 2).unwrap();
        assert!(matches!(validate_twin(&model, &path, &probes), Err(Error::InvalidArgument(_))));
        let mut short = probes.clone();
        short[0].p_out_dbm.pop();
        assert!(matches!(
            train_twin(&path, &short, &[], &TrainConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }
}
