//! Reference four-node network and the end-to-end reproduction run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::Result;
use crate::field_sim::NetworkSim;
use crate::grid::{fnv1a, PowerProfile};
use crate::io::{self, Header, RunConfig};
use crate::link::{predict, SnrReport, Toggles, TwinModels};
use crate::opt::{optimize, OptConfig, Variant};
use crate::topology::{EdfaSpec, EdgeSpec, GridSpec, PathStep, SimSpec, TopologyFile};
use crate::train::{generate_probes, train_twin, validate_twin, ValidationReport};
use crate::trx::TrxPenaltyModel;

fn edge(a: &str, b: &str, length_km: f64) -> EdgeSpec {
    EdgeSpec {
        a: a.into(),
        b: b.into(),
        length_km,
        alpha_db_km: 0.2,
        beta2_ps2_km: -21.3,
        gamma_1_wkm: 1.3,
        cr_1_wkmthz: 0.028,
        lumped_loss_db: 0.0,
        fibers: 4,
    }
}

fn hop(from: &str, to: &str, fiber: usize) -> PathStep {
    PathStep::Hop {
        from: from.into(),
        to: to.into(),
        fiber,
    }
}

fn amp(id: &str) -> PathStep {
    PathStep::Amp { amp: id.into() }
}

/// STN, RDG, FRX and PGT with a training loop and two lightpaths:
/// `short` (439.4 km, 4 amplifiers) and `long` (592.4 km, 6 amplifiers).
pub fn reference_topology() -> TopologyFile {
    let edfas = [("RDG-1", "RDG"), ("RDG-2", "RDG"), ("RDG-3", "RDG"), ("RDG-4", "RDG"), ("PGT-1", "PGT"), ("PGT-2", "PGT")]
        .iter()
        .enumerate()
        .map(|(i, (id, node))| EdfaSpec {
            id: (*id).into(),
            node: (*node).into(),
            setpoint_dbm: 18.0,
            device_seed: 101 + i as u64,
        })
        .collect();
    let mut paths = BTreeMap::new();
    paths.insert("train".to_string(), vec![hop("STN", "RDG", 0), amp("RDG-1"), hop("RDG", "STN", 1)]);
    paths.insert(
        "short".to_string(),
        vec![
            hop("STN", "RDG", 2),
            amp("RDG-1"),
            hop("RDG", "PGT", 0),
            amp("PGT-1"),
            hop("PGT", "RDG", 1),
            amp("RDG-2"),
            hop("RDG", "FRX", 0),
            hop("FRX", "RDG", 1),
            amp("RDG-3"),
            hop("RDG", "STN", 3),
        ],
    );
    paths.insert(
        "long".to_string(),
        vec![
            hop("STN", "RDG", 2),
            amp("RDG-1"),
            hop("RDG", "PGT", 0),
            amp("PGT-1"),
            hop("PGT", "RDG", 1),
            amp("RDG-2"),
            hop("RDG", "PGT", 2),
            amp("PGT-2"),
            hop("PGT", "RDG", 3),
            amp("RDG-4"),
            hop("RDG", "FRX", 0),
            hop("FRX", "RDG", 1),
            amp("RDG-3"),
            hop("RDG", "STN", 3),
        ],
    );
    TopologyFile {
        grid: GridSpec::default(),
        nodes: ["STN", "RDG", "FRX", "PGT"].iter().map(|s| s.to_string()).collect(),
        edges: vec![edge("STN", "RDG", 73.0), edge("RDG", "FRX", 70.2), edge("RDG", "PGT", 76.5)],
        edfas,
        paths,
        sim: SimSpec::default(),
        trx_truth_csv: None,
        threshold_db: 12.5,
        assumptions: vec![
            "edge lengths STN-RDG 73 km and RDG-FRX 70.2 km are a split of their 143.2 km sum".into(),
            "edge losses are length x 0.2 dB/km with no lumped loss".into(),
            "fiber parameters are typical SSMF values".into(),
            "all amplifiers hold 18 dBm total output".into(),
        ],
    }
}

pub const TRAIN_PATH: &str = "train";
pub const LINKS: [&str; 2] = ["short", "long"];
pub const B2B_SAMPLES: usize = 8;

/// Truth outcome of one launch profile on one link.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub link: String,
    /// `flat` or an optimizer variant name.
    pub profile: String,
    pub min_margin_db: f64,
    pub min_ch: usize,
    pub min_lambda_nm: f64,
    pub long_wl_margin_db: f64,
    pub delta_min_db: f64,
    pub delta_long_wl_db: f64,
}

/// Twin-versus-truth error for the flat profile.
#[derive(Clone, Debug, PartialEq)]
pub struct FidelityRow {
    pub link: String,
    pub device_variation: bool,
    pub max_osnr_err_db: f64,
    pub max_snr_err_db: f64,
}

#[derive(Clone, Debug)]
pub struct ReproSummary {
    pub validation: ValidationReport,
    pub rows: Vec<SummaryRow>,
    pub fidelity: Vec<FidelityRow>,
    pub files: Vec<PathBuf>,
}

impl ReproSummary {
    pub fn row(&self, link: &str, profile: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.link == link && r.profile == profile)
    }

    pub fn fidelity(&self, link: &str, device_variation: bool) -> Option<&FidelityRow> {
        self.fidelity
            .iter()
            .find(|r| r.link == link && r.device_variation == device_variation)
    }

    /// Fixed-width text table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:<13} {:>13} {:>6} {:>10} {:>13} {:>9} {:>11}",
            "link", "profile", "min_margin_db", "min_ch", "lambda_nm", "long_wl_db", "d_min_db", "d_long_wl_db"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6} {:<13} {:>13.3} {:>6} {:>10.2} {:>13.3} {:>9.3} {:>11.3}",
                r.link, r.profile, r.min_margin_db, r.min_ch, r.min_lambda_nm, r.long_wl_margin_db, r.delta_min_db, r.delta_long_wl_db
            );
        }
        let _ = writeln!(
            s,
            "\ntwin validation: rms gain {:.3} dB, max gain {:.3} dB, rms ASE {:.3} dB, max ASE {:.3} dB",
            self.validation.rms_gain_db, self.validation.max_gain_db, self.validation.rms_ase_db, self.validation.max_ase_db
        );
        for f in &self.fidelity {
            let _ = writeln!(
                s,
                "flat {:<5} device variation {:<5}: max |dOSNR| {:.3} dB, max |dSNR| {:.3} dB",
                f.link, f.device_variation, f.max_osnr_err_db, f.max_snr_err_db
            );
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("link,profile,min_margin_db,min_ch,min_lambda_nm,long_wl_margin_db,delta_min_db,delta_long_wl_db\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.6},{},{:.6},{:.6},{:.6},{:.6}",
                r.link, r.profile, r.min_margin_db, r.min_ch, r.min_lambda_nm, r.long_wl_margin_db, r.delta_min_db, r.delta_long_wl_db
            );
        }
        s
    }
}

fn summary_row(link: &str, profile: &str, r: &SnrReport, flat: &SnrReport) -> SummaryRow {
    let (ch, m) = r.min_margin();
    let lw = r.long_wavelength_margin();
    SummaryRow {
        link: link.into(),
        profile: profile.into(),
        min_margin_db: m,
        min_ch: ch,
        min_lambda_nm: r.channels[ch].lambda_nm,
        long_wl_margin_db: lw,
        delta_min_db: m - flat.min_margin().1,
        delta_long_wl_db: lw - flat.long_wavelength_margin(),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Full workflow on the reference network: back-to-back TRX samples,
/// probing and training through the `train` loop, twin prediction, the
/// three optimizer variants on both links, and truth evaluation of the
/// flat and optimized profiles. Every artifact lands in `workdir`.
pub fn repro_paper(workdir: &Path, topology: &TopologyFile, cfg: &RunConfig) -> Result<ReproSummary> {
    std::fs::create_dir_all(workdir)?;
    let mut files = Vec::new();
    let mut emit = |name: &str, text: &str| -> Result<()> {
        let p = workdir.join(name);
        io::write_text(&p, text)?;
        files.push(p);
        Ok(())
    };
    let config_hash = fnv1a(format!("{:016x}{:016x}", topology.hash(), cfg.hash()).as_bytes());
    emit("topology.json", &topology.to_json())?;
    emit("config.json", &cfg.to_json())?;

    let sim = NetworkSim::new(topology.clone())?;
    let grid = sim.grid().clone();
    let trx = TrxPenaltyModel::fit(&sim.measure_b2b(B2B_SAMPLES)?)?;
    emit("trx.csv", &io::render_trx(&trx, &Header::new(Some(config_hash), None)))?;

    let n_probes = cfg.train.n_train + cfg.train.n_val;
    let probes = generate_probes(&sim, TRAIN_PATH, &cfg.train, 0, n_probes)?;
    emit(
        "probes.csv",
        &io::render_probes(&grid, &probes, &Header::new(Some(config_hash), None).with("path_id", TRAIN_PATH)),
    )?;
    let probes = io::read_probes(&workdir.join("probes.csv"), &grid)?;
    let (train, val) = probes.split_at(cfg.train.n_train);
    let train_path = sim.path(TRAIN_PATH)?;
    let outcome = train_twin(&train_path, train, val, &cfg.train)?;
    let model = outcome.model;
    let model_hash = model.hash();
    let hdr = Header::new(Some(config_hash), Some(model_hash));
    emit("model.json", &model.to_json())?;
    emit("curve.csv", &io::render_curve(&outcome.curve, &hdr))?;
    let validation = validate_twin(&model, &train_path, val)?;
    emit("validation.csv", &io::render_validation(&validation, &hdr))?;

    let models = TwinModels::shared(model);
    let mut varied_topology = topology.clone();
    varied_topology.sim.device_variation = true;
    let varied = NetworkSim::new(varied_topology)?;
    let flat = PowerProfile::flat(&grid, cfg.opt.total_dbm)?;
    let mut fidelity = Vec::new();
    let mut flat_truth = BTreeMap::new();
    for link in LINKS {
        let path = sim.path(link)?;
        let twin = predict(&path, &models, &flat, &trx, Toggles::FULL, topology.threshold_db)?;
        let truth = sim.ground_truth_snr(link, &flat)?;
        let truth_v = varied.ground_truth_snr(link, &flat)?;
        let h = hdr.clone().with("profile", "flat");
        emit(&format!("{link}_flat_twin.csv"), &io::render_report(&twin, &h.clone().with("toggles", Toggles::FULL)))?;
        emit(&format!("{link}_flat_truth.csv"), &io::render_report(&truth, &h))?;
        emit(&format!("{link}_flat_truth_varied.csv"), &io::render_report(&truth_v, &h))?;
        for (dv, t) in [(false, &truth), (true, &truth_v)] {
            fidelity.push(FidelityRow {
                link: link.into(),
                device_variation: dv,
                max_osnr_err_db: max_abs_diff(&twin.osnr_db(), &t.osnr_db()),
                max_snr_err_db: max_abs_diff(&twin.snr_db(), &t.snr_db()),
            });
        }
        flat_truth.insert(link, truth);
    }

    let jobs: Vec<(&str, Variant)> = LINKS
        .iter()
        .flat_map(|&l| Variant::ALL.into_iter().map(move |v| (l, v)))
        .collect();
    let optimized: Vec<(String, String, String, SnrReport)> = jobs
        .par_iter()
        .map(|&(link, variant)| {
            let opt_cfg = OptConfig {
                variant,
                ..cfg.opt.clone()
            };
            let r = optimize(&sim.path(link)?, &models, &trx, &opt_cfg)?;
            let truth = sim.ground_truth_snr(link, &r.profile)?;
            let h = hdr.clone().with("path_id", link).with("variant", variant.name());
            Ok((
                io::render_profile(&grid, &r.profile, &h),
                io::render_trace(&r.trace, &h),
                io::render_report(&truth, &h),
                truth,
            ))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for link in LINKS {
        let base = &flat_truth[link];
        rows.push(summary_row(link, "flat", base, base));
        for ((l, v), (profile, trace, report, truth)) in jobs.iter().zip(&optimized) {
            if *l == link {
                emit(&format!("{link}_{}_profile.csv", v.name()), profile)?;
                emit(&format!("{link}_{}_trace.csv", v.name()), trace)?;
                emit(&format!("{link}_{}_truth.csv", v.name()), report)?;
                rows.push(summary_row(link, v.name(), truth, base));
            }
        }
    }
    let mut summary = ReproSummary {
        validation,
        rows,
        fidelity,
        files: Vec::new(),
    };
    emit("summary.csv", &(hdr.render() + &summary.csv()))?;
    emit("summary.txt", &summary.table())?;
    summary.files = files;
    Ok(summary)
}
