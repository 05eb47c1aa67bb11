//! CSV and JSON file formats. Every CSV starts with `#` comment lines
//! naming the tool version, config hash and model hash; numbers use six
//! decimals and `\n` line endings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_sim::ProbeRecord;
use crate::grid::{ChannelGrid, PowerProfile};
use crate::link::SnrReport;
use crate::opt::{OptConfig, TracePoint};
use crate::train::{CurvePoint, TrainConfig, ValidationReport};
use crate::trx::TrxPenaltyModel;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Training and optimizer settings in one JSON document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub opt: OptConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Schema(format!("config: {e}")))?;
        cfg.train.validate()?;
        cfg.opt.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> u64 {
        crate::grid::fnv1a(self.to_json().as_bytes())
    }

    /// Replace every seed with `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.opt.seed = seed;
    }
}

/// Provenance written at the top of every CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Header {
    pub config_hash: Option<u64>,
    pub model_hash: Option<u64>,
    pub extra: BTreeMap<String, String>,
}

impl Header {
    pub fn new(config_hash: Option<u64>, model_hash: Option<u64>) -> Self {
        Self {
            config_hash,
            model_hash,
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.insert(key.to_string(), value.to_string());
        self
    }

    pub fn render(&self) -> String {
        let hex = |h: Option<u64>| h.map_or_else(|| "none".to_string(), |h| format!("{h:016x}"));
        let mut s = format!(
            "# wdmtwin {TOOL_VERSION}\n# config_hash {}\n# model_hash {}\n",
            hex(self.config_hash),
            hex(self.model_hash)
        );
        for (k, v) in &self.extra {
            let _ = writeln!(s, "# {k} {v}");
        }
        s
    }
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn render_probes(grid: &ChannelGrid, probes: &[ProbeRecord], header: &Header) -> String {
    let mut s = header.render();
    s.push_str("probe_id,path_id,ch,f_thz,p_in_dbm,p_out_dbm,p_ase_dbm\n");
    for p in probes {
        for ch in 0..p.p_in_dbm.len() {
            let _ = writeln!(
                s,
                "{},{},{ch},{},{},{},{}",
                p.probe_id,
                p.path_id,
                f6(grid.f_thz()[ch]),
                f6(p.p_in_dbm[ch]),
                f6(p.p_out_dbm[ch]),
                f6(p.p_ase_dbm[ch])
            );
        }
    }
    s
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?)
}

fn expect_header(rdr: &mut csv::Reader<std::fs::File>, path: &Path, want: &[&str]) -> Result<()> {
    let got = rdr.headers()?.clone();
    if got.iter().collect::<Vec<_>>() != want {
        return Err(Error::Schema(format!(
            "{}: expected header {}, got {}",
            path.display(),
            want.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, path: &Path, row: usize, name: &str) -> Result<T> {
    rec.get(k)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Schema(format!("{}: data row {row}: bad {name} {:?}", path.display(), rec.get(k))))
}

/// Frequency column entries must sit on the grid.
fn check_freq(grid: &ChannelGrid, ch: usize, f: f64, path: &Path) -> Result<()> {
    match grid.f_thz().get(ch) {
        Some(&g) if (g - f).abs() < 5e-7 => Ok(()),
        _ => Err(Error::invalid(format!(
            "{}: channel {ch} at {f} THz does not belong to this grid",
            path.display()
        ))),
    }
}

pub fn read_probes(path: &Path, grid: &ChannelGrid) -> Result<Vec<ProbeRecord>> {
    let mut rdr = reader(path)?;
    expect_header(&mut rdr, path, &["probe_id", "path_id", "ch", "f_thz", "p_in_dbm", "p_out_dbm", "p_ase_dbm"])?;
    let mut out: Vec<ProbeRecord> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id: usize = field(&rec, 0, path, row + 1, "probe_id")?;
        let ch: usize = field(&rec, 2, path, row + 1, "ch")?;
        check_freq(grid, ch, field(&rec, 3, path, row + 1, "f_thz")?, path)?;
        if out.last().is_none_or(|p| p.probe_id != id) {
            out.push(ProbeRecord {
                probe_id: id,
                path_id: rec[1].to_string(),
                p_in_dbm: Vec::new(),
                p_out_dbm: Vec::new(),
                p_ase_dbm: Vec::new(),
            });
        }
        let p = out.last_mut().expect("just pushed");
        if ch != p.p_in_dbm.len() {
            return Err(Error::Schema(format!(
                "{}: data row {}: probe {id} channel {ch} out of order",
                path.display(),
                row + 1
            )));
        }
        p.p_in_dbm.push(field(&rec, 4, path, row + 1, "p_in_dbm")?);
        p.p_out_dbm.push(field(&rec, 5, path, row + 1, "p_out_dbm")?);
        p.p_ase_dbm.push(field(&rec, 6, path, row + 1, "p_ase_dbm")?);
    }
    if let Some(p) = out.iter().find(|p| p.p_in_dbm.len() != grid.n_ch()) {
        return Err(Error::invalid(format!(
            "{}: probe {} has {} channels, grid has {}",
            path.display(),
            p.probe_id,
            p.p_in_dbm.len(),
            grid.n_ch()
        )));
    }
    Ok(out)
}

pub fn render_curve(curve: &[CurvePoint], header: &Header) -> String {
    let mut s = header.render();
    s.push_str("epoch,train_mse,val_mse\n");
    for c in curve {
        let _ = writeln!(s, "{},{},{}", c.epoch, f6(c.train_mse), f6(c.val_mse));
    }
    s
}

pub fn render_validation(v: &ValidationReport, header: &Header) -> String {
    let mut s = header
        .clone()
        .with("rms_gain_db", f6(v.rms_gain_db))
        .with("max_gain_db", f6(v.max_gain_db))
        .with("rms_ase_db", f6(v.rms_ase_db))
        .with("max_ase_db", f6(v.max_ase_db))
        .render();
    s.push_str("ch,rms_gain_db,max_gain_db,rms_ase_db,max_ase_db\n");
    for c in &v.channels {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            c.ch,
            f6(c.rms_gain_db),
            f6(c.max_gain_db),
            f6(c.rms_ase_db),
            f6(c.max_ase_db)
        );
    }
    s
}

/// Per-channel report. Absent noise (0 mW) prints as `-inf` dBm.
pub fn render_report(r: &SnrReport, header: &Header) -> String {
    let mut h = header.clone().with("path_id", &r.path_id).with("threshold_db", f6(r.threshold_db));
    for (i, f) in r.flags.iter().enumerate() {
        h = h.with(&format!("flag{i:03}"), f);
    }
    let mut s = h.render();
    s.push_str("ch,f_thz,lambda_nm,p_dbm,ase_dbm,nli_dbm,osnr_db,snr_db,margin_db\n");
    for c in &r.channels {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            c.ch,
            f6(c.f_thz),
            f6(c.lambda_nm),
            f6(c.signal_dbm),
            f6(c.ase_dbm),
            f6(c.nli_dbm),
            f6(c.osnr_db),
            f6(c.snr_db),
            f6(c.margin_db)
        );
    }
    s
}

pub fn render_profile(grid: &ChannelGrid, p: &PowerProfile, header: &Header) -> String {
    let mut s = header.render();
    s.push_str("ch,f_thz,p_dbm\n");
    for (ch, x) in p.dbm().into_iter().enumerate() {
        let _ = writeln!(s, "{ch},{},{}", f6(grid.f_thz()[ch]), f6(x));
    }
    s
}

/// Launch profile in `ch,f_thz,p_dbm` form.
pub fn read_profile(path: &Path, grid: &ChannelGrid) -> Result<PowerProfile> {
    let mut rdr = reader(path)?;
    expect_header(&mut rdr, path, &["ch", "f_thz", "p_dbm"])?;
    let mut p = Vec::with_capacity(grid.n_ch());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ch: usize = field(&rec, 0, path, row + 1, "ch")?;
        if ch != p.len() {
            return Err(Error::Schema(format!("{}: data row {}: channel {ch} out of order", path.display(), row + 1)));
        }
        check_freq(grid, ch, field(&rec, 1, path, row + 1, "f_thz")?, path)?;
        p.push(field::<f64>(&rec, 2, path, row + 1, "p_dbm")?);
    }
    if p.len() != grid.n_ch() {
        return Err(Error::invalid(format!(
            "{}: {} channels, grid has {}",
            path.display(),
            p.len(),
            grid.n_ch()
        )));
    }
    PowerProfile::from_dbm(grid, &p)
}

pub fn render_trace(trace: &[TracePoint], header: &Header) -> String {
    let mut s = header.render();
    s.push_str("iter,tau,cost_db\n");
    for t in trace {
        let _ = writeln!(s, "{},{},{}", t.iter, f6(t.tau), f6(t.cost_db));
    }
    s
}

pub fn render_trx(trx: &TrxPenaltyModel, header: &Header) -> String {
    let mut s = header.render();
    s.push_str("lambda_nm,snr_db\n");
    for (l, v) in trx.samples() {
        let _ = writeln!(s, "{},{}", f6(l), f6(v));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::reference_topology;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("wdmtwin-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn probes_round_trip_at_six_decimals() {
        let grid = ChannelGrid::uniform(3, 193.0, 0.1, 12.5, 12.5).unwrap();
        let probes = vec![
            ProbeRecord {
                probe_id: 4,
                path_id: "train".into(),
                p_in_dbm: vec![1.0, 2.0, 3.1234567],
                p_out_dbm: vec![-1.0, -2.0, -3.0],
                p_ase_dbm: vec![-30.0, -31.0, -32.0],
            },
            ProbeRecord {
                probe_id: 5,
                path_id: "train".into(),
                p_in_dbm: vec![0.0; 3],
                p_out_dbm: vec![0.5; 3],
                p_ase_dbm: vec![-40.0; 3],
            },
        ];
        let path = tmp("probes.csv");
        write_text(&path, &render_probes(&grid, &probes, &Header::new(Some(1), None))).unwrap();
        let back = read_probes(&path, &grid).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].p_in_dbm[2], 3.123457);
        assert_eq!(back[1], probes[1]);

        let other = ChannelGrid::uniform(3, 193.05, 0.1, 12.5, 12.5).unwrap();
        assert!(matches!(read_probes(&path, &other), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn header_lines_and_format() {
        let grid = ChannelGrid::uniform(2, 193.0, 0.1, 12.5, 12.5).unwrap();
        let p = PowerProfile::flat(&grid, 3.0).unwrap();
        let text = render_profile(&grid, &p, &Header::new(Some(0xab), Some(0xcd)).with("variant", "full"));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("# wdmtwin {TOOL_VERSION}"));
        assert_eq!(lines[1], "# config_hash 00000000000000ab");
        assert_eq!(lines[2], "# model_hash 00000000000000cd");
        assert_eq!(lines[3], "# variant full");
        assert_eq!(lines[4], "ch,f_thz,p_dbm");
        assert_eq!(lines[5], "0,193.000000,-0.010300");
        assert!(!text.contains('\r'));
    }

    #[test]
    fn profile_round_trip_keeps_total() {
        let grid = ChannelGrid::c_band();
        let theta: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = crate::opt::profile_from_theta(&grid, &theta, 18.0).unwrap();
        let path = tmp("profile.csv");
        write_text(&path, &render_profile(&grid, &p, &Header::default())).unwrap();
        let back = read_profile(&path, &grid).unwrap();
        for (a, b) in back.mw().iter().zip(p.mw()) {
            assert!((a / b - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn bad_header_is_schema_error() {
        let path = tmp("bad.csv");
        write_text(&path, "ch,freq,p_dbm\n0,193,0\n").unwrap();
        let err = read_profile(&path, &ChannelGrid::c_band()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn config_defaults_and_unknown_fields() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let cfg = RunConfig::from_json(r#"{"opt": {"variant": "no-nl", "taus": [2.0, 8.0]}}"#).unwrap();
        assert_eq!(cfg.opt.variant, crate::opt::Variant::NoNl);
        assert_eq!(cfg.opt.iters_per_stage, 700);
        let err = RunConfig::from_json("{\n\"train\": {\"epochz\": 3}}").unwrap_err().to_string();
        assert!(err.contains("epochz") && err.contains("line 2"), "{err}");
        assert!(RunConfig::from_json(r#"{"opt": {"taus": [4.0, 1.0]}}"#).is_err());
    }

    #[test]
    fn topology_round_trips_through_file() {
        let t = reference_topology();
        let path = tmp("topology.json");
        write_text(&path, &t.to_json()).unwrap();
        assert_eq!(crate::topology::TopologyFile::load(&path).unwrap(), t);
    }
}
