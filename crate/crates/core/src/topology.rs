//! Network description shared by the simulator and the twin: grid, nodes,
//! fiber edges, amplifier placements and named paths.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiber::FiberSpan;
use crate::grid::ChannelGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_ch: usize,
    pub f0_thz: f64,
    pub step_thz: f64,
    pub b_ch_ghz: f64,
    pub b_ref_ghz: f64,
    /// Per-channel signal bandwidth overrides, GHz.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub b_ch_override: BTreeMap<usize, f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_ch: crate::grid::DEFAULT_N_CH,
            f0_thz: crate::grid::DEFAULT_F0_THZ,
            step_thz: crate::grid::DEFAULT_STEP_THZ,
            b_ch_ghz: crate::grid::DEFAULT_B_CH_GHZ,
            b_ref_ghz: crate::grid::DEFAULT_B_REF_GHZ,
            b_ch_override: BTreeMap::new(),
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<ChannelGrid> {
        let grid = ChannelGrid::uniform(self.n_ch, self.f0_thz, self.step_thz, self.b_ch_ghz, self.b_ref_ghz)?;
        if self.b_ch_override.is_empty() {
            return Ok(grid);
        }
        let mut b = grid.b_ch_ghz().to_vec();
        for (&ch, &ghz) in &self.b_ch_override {
            *b.get_mut(ch)
                .ok_or_else(|| Error::Schema(format!("grid.b_ch_override: channel {ch} out of range")))? = ghz;
        }
        grid.with_bandwidths(b)
    }
}

fn d_alpha() -> f64 {
    0.2
}
fn d_beta2() -> f64 {
    -21.3
}
fn d_gamma() -> f64 {
    1.3
}
fn d_cr() -> f64 {
    0.028
}
fn d_fibers() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub a: String,
    pub b: String,
    pub length_km: f64,
    #[serde(default = "d_alpha")]
    pub alpha_db_km: f64,
    #[serde(default = "d_beta2")]
    pub beta2_ps2_km: f64,
    #[serde(default = "d_gamma")]
    pub gamma_1_wkm: f64,
    #[serde(default = "d_cr")]
    pub cr_1_wkmthz: f64,
    #[serde(default)]
    pub lumped_loss_db: f64,
    /// Individual fibers bundled in this edge.
    #[serde(default = "d_fibers")]
    pub fibers: usize,
}

impl EdgeSpec {
    pub fn span(&self) -> FiberSpan {
        FiberSpan {
            length_km: self.length_km,
            alpha_db_km: self.alpha_db_km,
            beta2_ps2_km: self.beta2_ps2_km,
            gamma_1_wkm: self.gamma_1_wkm,
            cr_1_wkmthz: self.cr_1_wkmthz,
            lumped_loss_db: self.lumped_loss_db,
        }
    }

    fn joins(&self, x: &str, y: &str) -> bool {
        (self.a == x && self.b == y) || (self.a == y && self.b == x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdfaSpec {
    pub id: String,
    pub node: String,
    pub setpoint_dbm: f64,
    pub device_seed: u64,
}

/// One entry of a path: a hop over one fiber of an edge, or an amplifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum PathStep {
    Hop { from: String, to: String, fiber: usize },
    Amp { amp: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub osa_sigma_db: f64,
    pub master_seed: u64,
    pub device_variation: bool,
    /// Adds a receiver preamplifier with this output setpoint to the
    /// ground-truth cascade only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rx_preamp_setpoint_dbm: Option<f64>,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            osa_sigma_db: 0.05,
            master_seed: 2022,
            device_variation: false,
            rx_preamp_setpoint_dbm: None,
        }
    }
}

fn d_threshold() -> f64 {
    12.5
}

/// The topology JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub grid: GridSpec,
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    pub edfas: Vec<EdfaSpec>,
    pub paths: BTreeMap<String, Vec<PathStep>>,
    #[serde(default)]
    pub sim: SimSpec,
    /// Dense `lambda_nm,snr_db` samples of the hidden transceiver curve;
    /// the built-in curve is used when absent. Relative to the topology file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trx_truth_csv: Option<PathBuf>,
    #[serde(default = "d_threshold")]
    pub threshold_db: f64,
    /// Free-text notes on values that are assumptions rather than data.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assumptions: Vec<String>,
}

/// An amplifier occurrence on a resolved path.
#[derive(Clone, Debug, PartialEq)]
pub struct AmpSite {
    pub device: String,
    pub setpoint_dbm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Element {
    Span(FiberSpan),
    Amp(AmpSite),
}

/// Ordered span/amplifier sequence of one path.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkPath {
    pub id: String,
    pub grid: ChannelGrid,
    pub elements: Vec<Element>,
}

impl LinkPath {
    pub fn new(id: impl Into<String>, grid: ChannelGrid, elements: Vec<Element>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::invalid("path has no elements"));
        }
        for e in &elements {
            if let Element::Span(s) = e {
                s.validate()?;
            }
        }
        Ok(Self {
            id: id.into(),
            grid,
            elements,
        })
    }

    pub fn length_km(&self) -> f64 {
        self.spans().map(|s| s.length_km).sum()
    }

    pub fn spans(&self) -> impl Iterator<Item = &FiberSpan> {
        self.elements.iter().filter_map(|e| match e {
            Element::Span(s) => Some(s),
            Element::Amp(_) => None,
        })
    }

    pub fn amps(&self) -> impl Iterator<Item = &AmpSite> {
        self.elements.iter().filter_map(|e| match e {
            Element::Amp(a) => Some(a),
            Element::Span(_) => None,
        })
    }
}

impl TopologyFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let topo: Self = serde_json::from_str(text).map_err(|e| Error::Schema(format!("topology: {e}")))?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut topo = Self::from_json(&text).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let (Some(csv), Some(dir)) = (&topo.trx_truth_csv, path.parent()) {
            if csv.is_relative() {
                topo.trx_truth_csv = Some(dir.join(csv));
            }
        }
        Ok(topo)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schema(m));
        self.grid.build().map_err(|e| Error::Schema(format!("grid: {e}")))?;
        let nodes: BTreeSet<&str> = self.nodes.iter().map(String::as_str).collect();
        if nodes.len() != self.nodes.len() {
            return bad("nodes: duplicate node name".into());
        }
        for (i, e) in self.edges.iter().enumerate() {
            for end in [&e.a, &e.b] {
                if !nodes.contains(end.as_str()) {
                    return bad(format!("edges[{i}]: unknown node {end:?}"));
                }
            }
            if e.a == e.b {
                return bad(format!("edges[{i}]: self loop at {:?}", e.a));
            }
            if e.fibers == 0 {
                return bad(format!("edges[{i}].fibers must be > 0"));
            }
            e.span().validate().map_err(|err| Error::Schema(format!("edges[{i}]: {err}")))?;
        }
        let mut ids = BTreeSet::new();
        for (i, a) in self.edfas.iter().enumerate() {
            if !ids.insert(a.id.as_str()) {
                return bad(format!("edfas[{i}]: duplicate id {:?}", a.id));
            }
            if !nodes.contains(a.node.as_str()) {
                return bad(format!("edfas[{i}].node: unknown node {:?}", a.node));
            }
            if !a.setpoint_dbm.is_finite() {
                return bad(format!("edfas[{i}].setpoint_dbm must be finite"));
            }
        }
        if !(self.sim.osa_sigma_db.is_finite() && self.sim.osa_sigma_db >= 0.0) {
            return bad("sim.osa_sigma_db must be >= 0".into());
        }
        if !self.threshold_db.is_finite() {
            return bad("threshold_db must be finite".into());
        }
        for id in self.paths.keys() {
            self.resolve_steps(id)?;
        }
        Ok(())
    }

    fn edfa(&self, id: &str) -> Option<&EdfaSpec> {
        self.edfas.iter().find(|a| a.id == id)
    }

    fn resolve_steps(&self, path_id: &str) -> Result<Vec<Element>> {
        let steps = self
            .paths
            .get(path_id)
            .ok_or_else(|| Error::NotFound(format!("path {path_id:?}")))?;
        let ctx = |i: usize, m: String| Error::Schema(format!("paths.{path_id}[{i}]: {m}"));
        if steps.is_empty() {
            return Err(Error::Schema(format!("paths.{path_id}: empty path")));
        }
        let mut at: Option<&str> = None;
        let mut used_fibers = BTreeSet::new();
        let mut used_amps = BTreeSet::new();
        let mut out = Vec::with_capacity(steps.len());
        for (i, step) in steps.iter().enumerate() {
            match step {
                PathStep::Hop { from, to, fiber } => {
                    if let Some(here) = at {
                        if here != from {
                            return Err(ctx(i, format!("hop starts at {from:?} but path is at {here:?}")));
                        }
                    }
                    let (k, edge) = self
                        .edges
                        .iter()
                        .enumerate()
                        .find(|(_, e)| e.joins(from, to))
                        .ok_or_else(|| ctx(i, format!("no edge between {from:?} and {to:?}")))?;
                    if *fiber >= edge.fibers {
                        return Err(ctx(i, format!("fiber {fiber} out of range (edge has {})", edge.fibers)));
                    }
                    if !used_fibers.insert((k, *fiber)) {
                        return Err(ctx(i, format!("fiber {fiber} of {from}-{to} used twice")));
                    }
                    out.push(Element::Span(edge.span()));
                    at = Some(to);
                }
                PathStep::Amp { amp } => {
                    let spec = self.edfa(amp).ok_or_else(|| ctx(i, format!("unknown amplifier {amp:?}")))?;
                    if let Some(here) = at {
                        if here != spec.node {
                            return Err(ctx(i, format!("amplifier {amp:?} sits at {:?}, path is at {here:?}", spec.node)));
                        }
                    }
                    if !used_amps.insert(amp.as_str()) {
                        return Err(ctx(i, format!("amplifier {amp:?} used twice")));
                    }
                    out.push(Element::Amp(AmpSite {
                        device: amp.clone(),
                        setpoint_dbm: spec.setpoint_dbm,
                    }));
                    at = Some(spec.node.as_str());
                }
            }
        }
        Ok(out)
    }

    pub fn resolve(&self, path_id: &str) -> Result<LinkPath> {
        let elements = self.resolve_steps(path_id)?;
        LinkPath::new(path_id, self.grid.build()?, elements)
    }

    /// Config hash used in output file headers.
    pub fn hash(&self) -> u64 {
        crate::grid::fnv1a(self.to_json().as_bytes())
    }
}
