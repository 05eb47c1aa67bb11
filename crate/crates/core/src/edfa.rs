//! Hybrid EDFA twin: a constant-output-power physical skeleton whose
//! gain-shape and noise-figure lookup tables are replaced by two small MLPs
//! of the operating point `(P_in,tot, P_out,tot)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::Real;
use crate::error::{Error, Result};
use crate::fiber::SpanState;
use crate::grid::{fnv1a, ChannelGrid};

/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Noise-figure squashing range, dB.
pub const NF_MIN_DB: f64 = 3.0;
pub const NF_MAX_DB: f64 = 12.0;

/// Total input power range the twin is expected to cover, dBm.
pub const ENVELOPE_DBM: (f64, f64) = (-30.0, 23.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdfaOperatingPoint {
    pub p_in_tot_dbm: f64,
    pub p_out_tot_dbm: f64,
}

impl EdfaOperatingPoint {
    pub fn new(p_in_tot_dbm: f64, p_out_tot_dbm: f64) -> Result<Self> {
        if !(p_in_tot_dbm.is_finite() && p_out_tot_dbm.is_finite()) || p_out_tot_dbm <= p_in_tot_dbm {
            return Err(Error::invalid(format!(
                "operating point {p_in_tot_dbm} -> {p_out_tot_dbm} dBm is not amplifying"
            )));
        }
        Ok(Self {
            p_in_tot_dbm,
            p_out_tot_dbm,
        })
    }
}

/// Raised when an amplifier is driven outside [`ENVELOPE_DBM`].
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeWarning {
    pub p_in_tot_dbm: f64,
}

impl std::fmt::Display for EnvelopeWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "amplifier input {:.2} dBm outside modeled envelope [{}, {}] dBm",
            self.p_in_tot_dbm, ENVELOPE_DBM.0, ENVELOPE_DBM.1
        )
    }
}

/// Fully connected network, tanh on hidden layers, identity output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_dims: Vec<usize>,
    /// One row-major `out × in` matrix per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Glorot-uniform hidden layers, zero output layer, zero biases.
    pub fn init(layer_dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {layer_dims:?}")));
        }
        let n_layers = layer_dims.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let w = if l + 1 == n_layers {
                vec![0.0; fan_in * fan_out]
            } else {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect()
            };
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layer_dims.len();
        let ok = n >= 2
            && self.weights.len() == n - 1
            && self.biases.len() == n - 1
            && (0..n - 1).all(|l| {
                self.weights[l].len() == self.layer_dims[l] * self.layer_dims[l + 1]
                    && self.biases[l].len() == self.layer_dims[l + 1]
            })
            && self.weights.iter().chain(&self.biases).flatten().all(|w| w.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Schema(format!("inconsistent MLP with dims {:?}", self.layer_dims)))
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_dims.last().expect("validated dims")
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.n_params());
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&params[k..k + nw]);
            b.copy_from_slice(&params[k + nw..k + nw + nb]);
            k += nw + nb;
        }
    }

    /// Forward pass with the stored weights as constants.
    pub fn forward<R: Real>(&self, x: &[R]) -> Vec<R> {
        let last = self.weights.len() - 1;
        let mut h = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let fan_in = self.layer_dims[l];
            h = b
                .iter()
                .enumerate()
                .map(|(o, &bias)| {
                    let z = R::dot_c(&h, &w[o * fan_in..(o + 1) * fan_in]) + bias;
                    if l < last {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
        }
        h
    }

    /// Forward pass with externally supplied parameters laid out as
    /// [`Mlp::params`].
    pub fn forward_with<R: Real>(&self, params: &[R], x: &[R]) -> Vec<R> {
        assert_eq!(params.len(), self.n_params());
        let last = self.weights.len() - 1;
        let mut h = x.to_vec();
        let mut k = 0;
        for l in 0..self.weights.len() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &params[k..k + fan_in * fan_out];
            let b = &params[k + fan_in * fan_out..k + fan_in * fan_out + fan_out];
            k += fan_in * fan_out + fan_out;
            h = (0..fan_out)
                .map(|o| {
                    let z = R::dot(&h, &w[o * fan_in..(o + 1) * fan_in]) + b[o];
                    if l < last {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
        }
        h
    }
}

/// Affine input normalization shared by both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormConstants {
    pub mean: [f64; 2],
    pub scale: [f64; 2],
}

impl Default for NormConstants {
    fn default() -> Self {
        Self {
            mean: [0.0, 18.0],
            scale: [5.0, 5.0],
        }
    }
}

impl NormConstants {
    pub fn apply<R: Real>(&self, p_in_dbm: R, p_out_dbm: R) -> [R; 2] {
        [
            (p_in_dbm - self.mean[0]) / self.scale[0],
            (p_out_dbm - self.mean[1]) / self.scale[1],
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub final_train_mse: f64,
    pub final_val_mse: f64,
    pub probe_count: usize,
    pub seed: u64,
    pub epochs: usize,
    #[serde(default)]
    pub tool_version: String,
    /// Hash of the training configuration.
    #[serde(default)]
    pub config_hash: u64,
}

/// Trainable amplifier model; serializes to the model JSON format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdfaTwinModel {
    pub grid_fingerprint: u64,
    pub gain_net: Mlp,
    pub nf_net: Mlp,
    pub norm_constants: NormConstants,
    pub nf_bounds: [f64; 2],
    pub b_ref_ghz: f64,
    pub metadata: Option<TrainingMetadata>,
}

pub const DEFAULT_HIDDEN: [usize; 2] = [16, 16];

impl EdfaTwinModel {
    /// Fresh model: random hidden layers, zero output layers. Predicts a flat
    /// gain at the setpoint and a 7.5 dB noise figure until trained.
    pub fn init(grid: &ChannelGrid, seed: u64) -> Self {
        Self::init_with(grid, seed, &DEFAULT_HIDDEN).expect("default sizes are valid")
    }

    pub fn init_with(grid: &ChannelGrid, seed: u64, hidden: &[usize]) -> Result<Self> {
        let mut dims = vec![2];
        dims.extend_from_slice(hidden);
        dims.push(grid.n_ch());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain_net = Mlp::init(&dims, &mut rng)?;
        let nf_net = Mlp::init(&dims, &mut rng)?;
        Ok(Self {
            grid_fingerprint: grid.fingerprint(),
            gain_net,
            nf_net,
            norm_constants: NormConstants::default(),
            nf_bounds: [NF_MIN_DB, NF_MAX_DB],
            b_ref_ghz: grid.b_ref_ghz(),
            metadata: None,
        })
    }

    pub fn validate(&self, grid: &ChannelGrid) -> Result<()> {
        grid.ensure_fingerprint(self.grid_fingerprint, "EDFA model")?;
        self.gain_net.validate()?;
        self.nf_net.validate()?;
        if self.gain_net.n_inputs() != 2 || self.nf_net.n_inputs() != 2 {
            return Err(Error::Schema("EDFA nets take exactly two inputs".into()));
        }
        if self.gain_net.n_outputs() != grid.n_ch() || self.nf_net.n_outputs() != grid.n_ch() {
            return Err(Error::Schema("EDFA net outputs must match channel count".into()));
        }
        let [lo, hi] = self.nf_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Schema(format!("bad noise-figure bounds {:?}", self.nf_bounds)));
        }
        if !(self.norm_constants.scale.iter().all(|s| s.is_finite() && *s > 0.0)
            && self.norm_constants.mean.iter().all(|m| m.is_finite()))
        {
            return Err(Error::Schema("bad normalization constants".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.gain_net.n_params() + self.nf_net.n_params()
    }

    /// Gain-net parameters followed by NF-net parameters.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.gain_net.params();
        p.extend(self.nf_net.params());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let k = self.gain_net.n_params();
        self.gain_net.set_params(&params[..k]);
        self.nf_net.set_params(&params[k..]);
    }

    fn squash_nf<R: Real>(&self, raw: Vec<R>) -> Vec<R> {
        let [lo, hi] = self.nf_bounds;
        raw.into_iter().map(|z| z.sigmoid() * (hi - lo) + lo).collect()
    }

    /// Raw gain deviation (dB) and noise figure (dB) at an operating point.
    pub fn shape<R: Real>(&self, p_in_dbm: R, p_out_dbm: f64) -> (Vec<R>, Vec<R>) {
        let x = self.norm_constants.apply(p_in_dbm, p_in_dbm.lift(p_out_dbm));
        (self.gain_net.forward(&x), self.squash_nf(self.nf_net.forward(&x)))
    }

    /// As [`Self::shape`], with parameters supplied from outside.
    pub fn shape_with<R: Real>(&self, params: &[R], p_in_dbm: R, p_out_dbm: f64) -> (Vec<R>, Vec<R>) {
        let x = self.norm_constants.apply(p_in_dbm, p_in_dbm.lift(p_out_dbm));
        let k = self.gain_net.n_params();
        let dg = self.gain_net.forward_with(&params[..k], &x);
        let nf = self.nf_net.forward_with(&params[k..], &x);
        (dg, self.squash_nf(nf))
    }

    pub fn amplify<R: Real>(
        &self,
        grid: &ChannelGrid,
        state: SpanState<R>,
        setpoint_dbm: f64,
    ) -> Result<(SpanState<R>, Option<EnvelopeWarning>)> {
        grid.ensure_fingerprint(self.grid_fingerprint, "EDFA model")?;
        amplify_with(grid, state, setpoint_dbm, self.b_ref_ghz, |p_in| {
            self.shape(p_in, setpoint_dbm)
        })
    }

    pub fn amplify_with_params<R: Real>(
        &self,
        grid: &ChannelGrid,
        params: &[R],
        state: SpanState<R>,
        setpoint_dbm: f64,
    ) -> Result<(SpanState<R>, Option<EnvelopeWarning>)> {
        grid.ensure_fingerprint(self.grid_fingerprint, "EDFA model")?;
        amplify_with(grid, state, setpoint_dbm, self.b_ref_ghz, |p_in| {
            self.shape_with(params, p_in, setpoint_dbm)
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("model JSON: {e}")))
    }

    /// Stable hash of the serialized model.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_json().as_bytes())
    }
}

/// Constant-output-power amplifier skeleton shared by the twin and the
/// simulated hardware.
///
/// `shape` maps the total input power (dBm) to a raw per-channel gain
/// deviation (dB) and noise figure (dB). The deviation has its
/// input-power-weighted mean removed so it only shapes the spectrum; ASE
/// `h·ν·B_ref·NF·(G − 1)` is added, then one common factor pins the total
/// output to the setpoint.
pub fn amplify_with<R, F>(
    grid: &ChannelGrid,
    mut state: SpanState<R>,
    setpoint_dbm: f64,
    b_ref_ghz: f64,
    shape: F,
) -> Result<(SpanState<R>, Option<EnvelopeWarning>)>
where
    R: Real,
    F: FnOnce(R) -> (Vec<R>, Vec<R>),
{
    grid.ensure_fingerprint(state.grid_fingerprint, "amplifier input")?;
    if !setpoint_dbm.is_finite() {
        return Err(Error::invalid("amplifier setpoint must be finite"));
    }
    let n = state.n_ch();
    let totals = state.channel_totals();
    let p_in_mw = R::sum(&totals);
    if p_in_mw.value() <= 0.0 {
        return Err(Error::invalid("amplifier input carries no power"));
    }
    let p_in_dbm = p_in_mw.lin_to_db();
    let warning = {
        let p = p_in_dbm.value();
        (p < ENVELOPE_DBM.0 || p > ENVELOPE_DBM.1).then_some(EnvelopeWarning { p_in_tot_dbm: p })
    };

    let (dg_raw, nf_db) = shape(p_in_dbm);
    assert_eq!(dg_raw.len(), n);
    assert_eq!(nf_db.len(), n);
    let mean_dg = R::dot(&dg_raw, &totals) / p_in_mw;
    let g_set_db = -p_in_dbm + setpoint_dbm;
    let gain: Vec<R> = dg_raw
        .iter()
        .map(|&dg| (g_set_db + dg - mean_dg).db_to_lin())
        .collect();
    state.scale(&gain);
    for i in 0..n {
        // W -> mW
        let photon = PLANCK * grid.f_thz()[i] * 1e12 * b_ref_ghz * 1e9 * 1e3;
        let added = nf_db[i].db_to_lin() * (gain[i] - 1.0).max_c(0.0) * photon;
        state.ase[i] = state.ase[i] + added;
    }
    let kappa = state.total_mw().recip() * 10f64.powf(setpoint_dbm / 10.0);
    state.scale_all(kappa);
    Ok((state, warning))
}
