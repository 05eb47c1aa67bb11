//! Ground-truth network standing in for deployed hardware: hidden
//! amplifier and transceiver curves, probe measurements with OSA noise.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::edfa::{amplify_with, EnvelopeWarning};
use crate::error::{Error, Result};
use crate::fiber::SpanState;
use crate::grid::{fnv1a, mw_to_dbm, ChannelGrid, PowerProfile};
use crate::link::{cascade, SnrReport};
use crate::topology::{AmpSite, Element, LinkPath, TopologyFile};
use crate::trx::TrxPenaltyModel;

/// Seeded generator for one named purpose.
pub fn rng_for(seed: u64, purpose: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(purpose.as_bytes()));
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ripple {
    pub amp_db: f64,
    /// Periods across the band.
    pub cycles: f64,
    pub phase: f64,
}

const BASE_RIPPLE: [Ripple; 3] = [
    Ripple { amp_db: 0.25, cycles: 1.3, phase: 0.3 },
    Ripple { amp_db: 0.15, cycles: 2.7, phase: 1.9 },
    Ripple { amp_db: 0.10, cycles: 4.1, phase: 4.2 },
];

/// Ripple phase spread between devices when variation is enabled.
pub const PHASE_SPREAD: f64 = PI / 3.0;

/// Hidden amplifier: input-dependent tilt plus ripple for the gain shape,
/// a frequency- and input-dependent noise figure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEdfa {
    pub kappa_t: f64,
    pub p_ref_dbm: f64,
    pub ripple: [Ripple; 3],
}

impl Default for GroundTruthEdfa {
    fn default() -> Self {
        Self {
            kappa_t: -0.15,
            p_ref_dbm: 0.0,
            ripple: BASE_RIPPLE,
        }
    }
}

impl GroundTruthEdfa {
    /// Same make as the default device, ripple phases shifted per seed.
    pub fn varied(device_seed: u64) -> Self {
        let mut rng = rng_for(device_seed, "device-ripple");
        let mut d = Self::default();
        for r in &mut d.ripple {
            r.phase += rng.gen_range(-PHASE_SPREAD..=PHASE_SPREAD);
        }
        d
    }

    fn position(grid: &ChannelGrid, ch: usize) -> f64 {
        (grid.normalized_position(ch) + 1.0) / 2.0
    }

    /// Gain deviation in dB before mean removal.
    pub fn gain_shape_db(&self, grid: &ChannelGrid, p_in_dbm: f64) -> Vec<f64> {
        (0..grid.n_ch())
            .map(|i| {
                let x = Self::position(grid, i);
                let tilt = self.kappa_t * (p_in_dbm - self.p_ref_dbm) * -grid.normalized_position(i);
                let ripple: f64 = self
                    .ripple
                    .iter()
                    .map(|r| r.amp_db * (2.0 * PI * r.cycles * x + r.phase).sin())
                    .sum();
                tilt + ripple
            })
            .collect()
    }

    pub fn nf_db(&self, grid: &ChannelGrid, p_in_dbm: f64) -> Vec<f64> {
        (0..grid.n_ch())
            .map(|i| {
                let from_top = 1.0 - Self::position(grid, i);
                4.5 + 1.5 * from_top * from_top + 0.05 * (-5.0 - p_in_dbm).max(0.0)
            })
            .collect()
    }

    pub fn amplify(
        &self,
        grid: &ChannelGrid,
        state: SpanState,
        setpoint_dbm: f64,
    ) -> Result<(SpanState, Option<EnvelopeWarning>)> {
        amplify_with(grid, state, setpoint_dbm, grid.b_ref_ghz(), |p_in| {
            (self.gain_shape_db(grid, p_in), self.nf_db(grid, p_in))
        })
    }
}

/// Built-in hidden transceiver limit (dB) at normalized band position
/// `u` in [-1, 1], low to high frequency.
pub fn default_trx_truth_db(u: f64) -> f64 {
    17.2 - 1.5 * u * u - 1.0 * u
}

/// One remote measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRecord {
    pub probe_id: usize,
    pub path_id: String,
    pub p_in_dbm: Vec<f64>,
    pub p_out_dbm: Vec<f64>,
    pub p_ase_dbm: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct NetworkSim {
    topology: TopologyFile,
    grid: ChannelGrid,
    trx_truth: TrxPenaltyModel,
    devices: BTreeMap<String, GroundTruthEdfa>,
}

impl NetworkSim {
    pub fn new(topology: TopologyFile) -> Result<Self> {
        topology.validate()?;
        let grid = topology.grid.build()?;
        let trx_truth = match &topology.trx_truth_csv {
            Some(path) => TrxPenaltyModel::from_csv(path)?,
            None => {
                let samples: Vec<(f64, f64)> = (0..grid.n_ch())
                    .map(|i| (grid.wavelength_nm(i), default_trx_truth_db(grid.normalized_position(i))))
                    .collect();
                TrxPenaltyModel::fit(&samples)?
            }
        };
        let devices = topology
            .edfas
            .iter()
            .map(|a| {
                let dev = if topology.sim.device_variation {
                    GroundTruthEdfa::varied(a.device_seed)
                } else {
                    GroundTruthEdfa::default()
                };
                (a.id.clone(), dev)
            })
            .collect();
        Ok(Self {
            topology,
            grid,
            trx_truth,
            devices,
        })
    }

    pub fn with_trx_truth(mut self, trx: TrxPenaltyModel) -> Self {
        self.trx_truth = trx;
        self
    }

    pub fn topology(&self) -> &TopologyFile {
        &self.topology
    }

    pub fn grid(&self) -> &ChannelGrid {
        &self.grid
    }

    pub fn trx_truth(&self) -> &TrxPenaltyModel {
        &self.trx_truth
    }

    pub fn device(&self, id: &str) -> Option<&GroundTruthEdfa> {
        self.devices.get(id)
    }

    pub fn path(&self, path_id: &str) -> Result<LinkPath> {
        self.topology.resolve(path_id)
    }

    fn truth_path(&self, path_id: &str) -> Result<LinkPath> {
        let mut path = self.path(path_id)?;
        if let Some(sp) = self.topology.sim.rx_preamp_setpoint_dbm {
            path.elements.push(Element::Amp(AmpSite {
                device: RX_PREAMP.into(),
                setpoint_dbm: sp,
            }));
        }
        Ok(path)
    }

    /// Noise-free truth cascade.
    pub fn truth_forward(&self, path_id: &str, launch: &PowerProfile) -> Result<(SpanState, Vec<String>)> {
        launch.check_grid(&self.grid)?;
        let path = self.truth_path(path_id)?;
        let default = GroundTruthEdfa::default();
        cascade(&path, launch.mw().to_vec(), true, |site, st| {
            let dev = self.devices.get(&site.device).unwrap_or(&default);
            dev.amplify(&self.grid, st, site.setpoint_dbm)
        })
    }

    /// Output signal and accumulated ASE spectra at the far end, each with
    /// independent dB-domain Gaussian OSA noise.
    pub fn measure_probe(&self, path_id: &str, input: &PowerProfile, probe_id: usize) -> Result<ProbeRecord> {
        let (out, _) = self.truth_forward(path_id, input)?;
        let sigma = self.topology.sim.osa_sigma_db;
        let mut rng = rng_for(self.topology.sim.master_seed, &format!("osa/{probe_id}"));
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut noisy = |xs: &[f64]| -> Vec<f64> { xs.iter().map(|&x| mw_to_dbm(x) + normal.sample(&mut rng)).collect() };
        let p_out_dbm = noisy(&out.signal);
        let p_ase_dbm = noisy(&out.ase);
        Ok(ProbeRecord {
            probe_id,
            path_id: path_id.to_string(),
            p_in_dbm: input.dbm(),
            p_out_dbm,
            p_ase_dbm,
        })
    }

    pub fn ground_truth_snr(&self, path_id: &str, input: &PowerProfile) -> Result<SnrReport> {
        let (out, flags) = self.truth_forward(path_id, input)?;
        Ok(SnrReport::from_state(
            path_id,
            &self.grid,
            &out,
            Some(&self.trx_truth),
            self.topology.threshold_db,
            flags,
        ))
    }

    /// Back-to-back transceiver SNR at `n` channels spread evenly across
    /// the band (first and last channel included).
    pub fn measure_b2b(&self, n: usize) -> Result<Vec<(f64, f64)>> {
        let n_ch = self.grid.n_ch();
        if n < 2 || n > n_ch {
            return Err(Error::invalid(format!("B2B sample count must be in 2..={n_ch}")));
        }
        Ok((0..n)
            .map(|k| {
                let ch = (k * (n_ch - 1) + (n - 1) / 2) / (n - 1);
                let l = self.grid.wavelength_nm(ch);
                (l, self.trx_truth.snr_db(l))
            })
            .collect())
    }
}

pub const RX_PREAMP: &str = "RX-PREAMP";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dbm_to_mw;
    use crate::scenario::reference_topology;

    fn sim() -> NetworkSim {
        NetworkSim::new(reference_topology()).unwrap()
    }

    #[test]
    fn identity_path_without_noise() {
        let t = TopologyFile::from_json(
            r#"{
            "grid": {"n_ch": 4, "f0_thz": 193.0, "step_thz": 0.1, "b_ch_ghz": 12.5, "b_ref_ghz": 12.5},
            "nodes": ["A", "B"],
            "edges": [{"a": "A", "b": "B", "length_km": 0.0}],
            "edfas": [],
            "paths": {"z": [{"from": "A", "to": "B", "fiber": 0}]},
            "sim": {"osa_sigma_db": 0.0, "master_seed": 1, "device_variation": false}
        }"#,
        )
        .unwrap();
        let s = NetworkSim::new(t).unwrap();
        let input = PowerProfile::from_dbm(s.grid(), &[-1.0, 0.0, 2.5, 3.0]).unwrap();
        let r = s.measure_probe("z", &input, 0).unwrap();
        assert_eq!(r.p_out_dbm, input.dbm());
        assert!(r.p_ase_dbm.iter().all(|&x| x == f64::NEG_INFINITY));
        assert!(matches!(s.measure_probe("nope", &input, 0), Err(Error::NotFound(_))));
    }

    #[test]
    fn probes_are_reproducible() {
        let s = sim();
        let input = PowerProfile::flat(s.grid(), 18.0).unwrap();
        let a = s.measure_probe("train", &input, 7).unwrap();
        assert_eq!(a, s.measure_probe("train", &input, 7).unwrap());
        assert_ne!(a.p_out_dbm, s.measure_probe("train", &input, 8).unwrap().p_out_dbm);
    }

    #[test]
    fn training_path_output_total() {
        let s = sim();
        let input = PowerProfile::flat(s.grid(), 18.0).unwrap();
        let r = s.measure_probe("train", &input, 0).unwrap();
        let total: f64 = r.p_out_dbm.iter().zip(&r.p_ase_dbm).map(|(&p, &a)| dbm_to_mw(p).unwrap() + dbm_to_mw(a).unwrap()).sum();
        // RDG-1 at 18 dBm, 73 km return at 0.2 dB/km; SRS only moves power.
        let expected = 18.0 - 73.0 * 0.2;
        // 0.05 dB per-channel noise averages down over 96 readings.
        assert!((mw_to_dbm(total) - expected).abs() < 0.05, "{}", mw_to_dbm(total));
    }

    #[test]
    fn snr_equals_osnr_with_single_noise_source() {
        let mut t = reference_topology();
        for e in &mut t.edges {
            e.gamma_1_wkm = 0.0;
            e.cr_1_wkmthz = 0.0;
        }
        let grid = t.grid.build().unwrap();
        let hi: Vec<(f64, f64)> = vec![(grid.wavelength_nm(47), 400.0), (grid.wavelength_nm(0), 400.0)];
        let s = NetworkSim::new(t).unwrap().with_trx_truth(TrxPenaltyModel::fit(&hi).unwrap());
        let r = s.ground_truth_snr("long", &PowerProfile::flat(&grid, 18.0).unwrap()).unwrap();
        for c in &r.channels {
            assert!((c.snr_db - c.osnr_db).abs() < 1e-9);
        }
    }

    #[test]
    fn margin_is_snr_minus_threshold() {
        let s = sim();
        let r = s.ground_truth_snr("short", &PowerProfile::flat(s.grid(), 18.0).unwrap()).unwrap();
        assert!(r.channels.iter().all(|c| c.margin_db == c.snr_db - 12.5));
        assert!(r.flags.is_empty(), "{:?}", r.flags);
    }

    #[test]
    fn long_link_minimum_at_short_wavelength_edge() {
        let s = sim();
        let r = s.ground_truth_snr("long", &PowerProfile::flat(s.grid(), 18.0).unwrap()).unwrap();
        let (ch, _) = r.min_margin();
        assert!(ch >= 44, "minimum at channel {ch}");
    }

    #[test]
    fn devices_identical_without_variation() {
        let s = sim();
        let a = s.device("RDG-1").unwrap();
        assert!(s.topology().edfas.iter().all(|e| s.device(&e.id).unwrap() == a));
        let mut t = reference_topology();
        t.sim.device_variation = true;
        let v = NetworkSim::new(t).unwrap();
        assert_ne!(v.device("RDG-1"), v.device("RDG-2"));
        for d in v.devices.values() {
            for (r, b) in d.ripple.iter().zip(BASE_RIPPLE) {
                assert!((r.phase - b.phase).abs() <= PHASE_SPREAD);
            }
        }
    }

    #[test]
    fn truth_nf_within_bounds() {
        let d = GroundTruthEdfa::default();
        let g = ChannelGrid::c_band();
        for p in [-30.0, -5.0, 0.0, 10.0] {
            assert!(d.nf_db(&g, p).iter().all(|&x| (3.0..=12.0).contains(&x)));
        }
    }

    #[test]
    fn default_trx_truth_edges_below_center() {
        let s = sim();
        let t = s.trx_truth();
        let g = s.grid();
        let mid = t.snr_db(g.wavelength_nm(24));
        assert!(t.snr_db(g.wavelength_nm(0)) < mid && t.snr_db(g.wavelength_nm(47)) < mid);
        let b2b = s.measure_b2b(8).unwrap();
        assert_eq!(b2b.len(), 8);
        assert_eq!(b2b[0].0, g.wavelength_nm(0));
        assert_eq!(b2b[7].0, g.wavelength_nm(47));
    }
}
