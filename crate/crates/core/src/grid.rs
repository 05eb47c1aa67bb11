//! Channel plan, unit conversions and per-channel power profiles.

use crate::error::{Error, Result};

/// Speed of light in vacuum, nm·THz.
pub const C_NM_THZ: f64 = 299_792.458;

/// Default plan: 48 channels from 191.35 THz on a 100 GHz grid.
pub const DEFAULT_N_CH: usize = 48;
pub const DEFAULT_F0_THZ: f64 = 191.35;
pub const DEFAULT_STEP_THZ: f64 = 0.1;
pub const DEFAULT_B_CH_GHZ: f64 = 12.5;
pub const DEFAULT_B_REF_GHZ: f64 = 12.5;

pub fn dbm_to_mw(x_dbm: f64) -> Result<f64> {
    if !x_dbm.is_finite() {
        return Err(Error::invalid(format!("power {x_dbm} dBm is not finite")));
    }
    Ok(10f64.powf(x_dbm / 10.0))
}

/// `-inf` for zero power.
pub fn mw_to_dbm(x_mw: f64) -> f64 {
    10.0 * x_mw.log10()
}

/// 64-bit FNV-1a, used for stable fingerprints and file hashes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// WDM channel plan shared by every model in a scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelGrid {
    f_thz: Vec<f64>,
    spacing_ghz: f64,
    b_ch_ghz: Vec<f64>,
    b_ref_ghz: f64,
    fingerprint: u64,
}

impl ChannelGrid {
    pub fn uniform(
        n_ch: usize,
        f0_thz: f64,
        step_thz: f64,
        b_ch_ghz: f64,
        b_ref_ghz: f64,
    ) -> Result<Self> {
        if n_ch == 0 {
            return Err(Error::invalid("grid needs at least one channel"));
        }
        let f_thz = (0..n_ch).map(|i| f0_thz + i as f64 * step_thz).collect();
        Self::from_parts(f_thz, step_thz * 1e3, vec![b_ch_ghz; n_ch], b_ref_ghz)
    }

    /// 48 × 100 GHz C-band plan, 191.35–196.05 THz, 12.5 GHz bandwidths.
    pub fn c_band() -> Self {
        Self::uniform(
            DEFAULT_N_CH,
            DEFAULT_F0_THZ,
            DEFAULT_STEP_THZ,
            DEFAULT_B_CH_GHZ,
            DEFAULT_B_REF_GHZ,
        )
        .expect("default grid is valid")
    }

    /// Replace per-channel signal bandwidths (e.g. for a wider data channel).
    pub fn with_bandwidths(self, b_ch_ghz: Vec<f64>) -> Result<Self> {
        Self::from_parts(self.f_thz, self.spacing_ghz, b_ch_ghz, self.b_ref_ghz)
    }

    fn from_parts(f_thz: Vec<f64>, spacing_ghz: f64, b_ch_ghz: Vec<f64>, b_ref_ghz: f64) -> Result<Self> {
        if !(spacing_ghz.is_finite() && spacing_ghz > 0.0) {
            return Err(Error::invalid(format!("channel spacing {spacing_ghz} GHz must be > 0")));
        }
        if f_thz.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::invalid("channel frequencies must be finite and positive"));
        }
        for (i, w) in f_thz.windows(2).enumerate() {
            let step_ghz = (w[1] - w[0]) * 1e3;
            if step_ghz <= 0.0 || (step_ghz - spacing_ghz).abs() >= 1e-9 {
                return Err(Error::invalid(format!(
                    "channels {i} and {} are {step_ghz} GHz apart, expected {spacing_ghz}",
                    i + 1
                )));
            }
        }
        if b_ch_ghz.len() != f_thz.len() {
            return Err(Error::invalid("one signal bandwidth per channel required"));
        }
        if let Some((i, b)) = b_ch_ghz
            .iter()
            .enumerate()
            .find(|(_, b)| !(**b > 0.0 && **b <= spacing_ghz))
        {
            return Err(Error::invalid(format!(
                "channel {i} bandwidth {b} GHz outside (0, {spacing_ghz}]"
            )));
        }
        if !(b_ref_ghz.is_finite() && b_ref_ghz > 0.0) {
            return Err(Error::invalid("reference bandwidth must be > 0"));
        }
        let mut bytes = Vec::with_capacity(8 * (2 * f_thz.len() + 3));
        bytes.extend_from_slice(&(f_thz.len() as u64).to_le_bytes());
        for f in &f_thz {
            bytes.extend_from_slice(&f.to_bits().to_le_bytes());
        }
        bytes.extend_from_slice(&spacing_ghz.to_bits().to_le_bytes());
        for b in &b_ch_ghz {
            bytes.extend_from_slice(&b.to_bits().to_le_bytes());
        }
        bytes.extend_from_slice(&b_ref_ghz.to_bits().to_le_bytes());
        Ok(Self {
            fingerprint: fnv1a(&bytes),
            f_thz,
            spacing_ghz,
            b_ch_ghz,
            b_ref_ghz,
        })
    }

    pub fn n_ch(&self) -> usize {
        self.f_thz.len()
    }

    pub fn f_thz(&self) -> &[f64] {
        &self.f_thz
    }

    pub fn spacing_ghz(&self) -> f64 {
        self.spacing_ghz
    }

    pub fn b_ch_ghz(&self) -> &[f64] {
        &self.b_ch_ghz
    }

    pub fn b_ref_ghz(&self) -> f64 {
        self.b_ref_ghz
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn wavelength_nm(&self, ch: usize) -> f64 {
        C_NM_THZ / self.f_thz[ch]
    }

    pub fn wavelengths_nm(&self) -> Vec<f64> {
        (0..self.n_ch()).map(|i| self.wavelength_nm(i)).collect()
    }

    /// Channel position mapped onto [-1, 1] from lowest to highest frequency.
    pub fn normalized_position(&self, ch: usize) -> f64 {
        let lo = self.f_thz[0];
        let hi = self.f_thz[self.n_ch() - 1];
        if hi == lo {
            0.0
        } else {
            2.0 * (self.f_thz[ch] - lo) / (hi - lo) - 1.0
        }
    }

    pub fn ensure_fingerprint(&self, other: u64, what: &str) -> Result<()> {
        if other != self.fingerprint {
            return Err(Error::invalid(format!(
                "{what} was built for grid {other:016x}, expected {:016x}",
                self.fingerprint
            )));
        }
        Ok(())
    }
}

/// Per-channel linear powers in mW, bound to a grid by fingerprint.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerProfile {
    grid_fingerprint: u64,
    p_mw: Vec<f64>,
}

impl PowerProfile {
    pub fn new(grid: &ChannelGrid, p_mw: Vec<f64>) -> Result<Self> {
        if p_mw.len() != grid.n_ch() {
            return Err(Error::invalid(format!(
                "profile has {} channels, grid has {}",
                p_mw.len(),
                grid.n_ch()
            )));
        }
        if let Some((i, p)) = p_mw.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::invalid(format!("channel {i} power {p} mW is not a finite non-negative value")));
        }
        Ok(Self {
            grid_fingerprint: grid.fingerprint(),
            p_mw,
        })
    }

    pub fn from_dbm(grid: &ChannelGrid, p_dbm: &[f64]) -> Result<Self> {
        let p_mw = p_dbm
            .iter()
            .map(|&x| if x == f64::NEG_INFINITY { Ok(0.0) } else { dbm_to_mw(x) })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, p_mw)
    }

    pub fn zeros(grid: &ChannelGrid) -> Self {
        Self {
            grid_fingerprint: grid.fingerprint(),
            p_mw: vec![0.0; grid.n_ch()],
        }
    }

    /// Equal power in every channel, summing to `p_tot_dbm`.
    pub fn flat(grid: &ChannelGrid, p_tot_dbm: f64) -> Result<Self> {
        let per_ch = dbm_to_mw(p_tot_dbm)? / grid.n_ch() as f64;
        Self::new(grid, vec![per_ch; grid.n_ch()])
    }

    pub fn grid_fingerprint(&self) -> u64 {
        self.grid_fingerprint
    }

    pub fn mw(&self) -> &[f64] {
        &self.p_mw
    }

    pub fn into_mw(self) -> Vec<f64> {
        self.p_mw
    }

    pub fn dbm(&self) -> Vec<f64> {
        self.p_mw.iter().map(|&p| mw_to_dbm(p)).collect()
    }

    pub fn len(&self) -> usize {
        self.p_mw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_mw.is_empty()
    }

    /// Total power in dBm; `-inf` for an all-zero profile.
    pub fn total_power_dbm(&self) -> f64 {
        mw_to_dbm(self.p_mw.iter().sum())
    }

    pub fn check_grid(&self, grid: &ChannelGrid) -> Result<()> {
        grid.ensure_fingerprint(self.grid_fingerprint, "power profile")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dbm_reference_values() {
        assert_eq!(dbm_to_mw(0.0).unwrap(), 1.0);
        assert!((dbm_to_mw(18.0).unwrap() - 63.0957).abs() < 1e-4);
        assert!((mw_to_dbm(dbm_to_mw(10.0).unwrap()) - 10.0).abs() < 1e-12);
        assert!(dbm_to_mw(f64::NAN).is_err());
        assert!(dbm_to_mw(f64::INFINITY).is_err());
    }

    #[test]
    fn flat_profile_values() {
        let grid = ChannelGrid::c_band();
        let p = PowerProfile::flat(&grid, 18.0).unwrap();
        let per_ch = 18.0 - 10.0 * 48f64.log10();
        assert!(p.dbm().iter().all(|&x| (x - per_ch).abs() < 1e-12));
        assert!((per_ch - 1.1876).abs() < 1e-4);
        assert!((p.total_power_dbm() - 18.0).abs() < 1e-9);

        let one = ChannelGrid::uniform(1, 193.4, 0.1, 12.5, 12.5).unwrap();
        let p = PowerProfile::flat(&one, 0.0).unwrap();
        assert_eq!(p.dbm(), vec![0.0]);
    }

    #[test]
    fn total_power_values() {
        let two = ChannelGrid::uniform(2, 193.4, 0.1, 12.5, 12.5).unwrap();
        let p = PowerProfile::new(&two, vec![1.0, 1.0]).unwrap();
        assert!((p.total_power_dbm() - 3.0103).abs() < 1e-4);
        assert_eq!(PowerProfile::zeros(&two).total_power_dbm(), f64::NEG_INFINITY);
    }

    #[test]
    fn default_grid_layout() {
        let g = ChannelGrid::c_band();
        assert_eq!(g.n_ch(), 48);
        assert_eq!(g.f_thz()[0], 191.35);
        assert!((g.f_thz()[47] - 196.05).abs() < 1e-9);
        let lambda = g.wavelengths_nm();
        assert!(lambda.iter().any(|l| (l - 1532.5).abs() < 0.5));
        for w in g.f_thz().windows(2) {
            assert!(((w[1] - w[0]) * 1e3 - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fingerprint_tracks_every_field() {
        let a = ChannelGrid::c_band();
        let b = ChannelGrid::c_band();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut bw = vec![12.5; 48];
        bw[10] = 15.33;
        let c = a.clone().with_bandwidths(bw).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
        let d = ChannelGrid::uniform(48, 191.35, 0.1, 12.5, 12.6).unwrap();
        assert_ne!(a.fingerprint(), d.fingerprint());
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(ChannelGrid::uniform(0, 191.35, 0.1, 12.5, 12.5).is_err());
        assert!(ChannelGrid::uniform(4, 191.35, 0.1, 120.0, 12.5).is_err());
        assert!(ChannelGrid::uniform(4, 191.35, -0.1, 12.5, 12.5).is_err());
    }

    #[test]
    fn profile_rejects_foreign_grid_and_bad_values() {
        let g = ChannelGrid::c_band();
        let other = ChannelGrid::uniform(48, 191.4, 0.1, 12.5, 12.5).unwrap();
        let p = PowerProfile::flat(&g, 0.0).unwrap();
        assert!(p.check_grid(&g).is_ok());
        assert!(p.check_grid(&other).is_err());
        assert!(PowerProfile::new(&g, vec![-1.0; 48]).is_err());
        assert!(PowerProfile::new(&g, vec![1.0; 47]).is_err());
    }

    proptest! {
        #[test]
        fn dbm_round_trip(x in -60.0f64..30.0) {
            let back = mw_to_dbm(dbm_to_mw(x).unwrap());
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
