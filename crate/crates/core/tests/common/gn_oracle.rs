//! Brute-force numerical integration of the GN reference formula.
//!
//! Independent of the closed-form coefficients in `fiber`: it integrates
//! `16/27·γ²·∫∫ G(f1)G(f2)G(f1+f2−f)·ρ(f1,f2,f) df1 df2` for a piecewise
//! rectangular PSD, then integrates the NLI PSD over the receiver channel.
//! The link kernel is
//! `ρ = |1 − e^{−αL}e^{jxL}|² / (α² + x²)` with `x = 4π²β₂(f1−f)(f2−f)`.
//!
//! For fixed `f1`, the inner `f2` integral runs over each rectangular
//! block with the substitution `x = α·tan φ`, which flattens the Lorentzian
//! peak at `f2 = f`; both levels use the trapezoidal rule.

#![allow(dead_code)]

use std::f64::consts::PI;

use wdmtwin_core::fiber::FiberSpan;
use wdmtwin_core::grid::ChannelGrid;

#[derive(Clone, Copy, Debug)]
pub struct Resolution {
    /// receiver-band points
    pub n_f: usize,
    /// f1 points in the channel under test
    pub n_self: usize,
    /// f1 points in channels within ±3 spacings
    pub n_near: usize,
    /// f1 points in the remaining channels (full-band coarse sweep)
    pub n_far: usize,
    /// inner φ points
    pub n_inner: usize,
}

impl Resolution {
    pub fn coarse() -> Self {
        Self { n_f: 9, n_self: 401, n_near: 51, n_far: 21, n_inner: 81 }
    }

    /// Halved step along every axis.
    pub fn refined(self) -> Self {
        let d = |n: usize| 2 * n - 1;
        Self {
            n_f: d(self.n_f),
            n_self: d(self.n_self),
            n_near: d(self.n_near),
            n_far: d(self.n_far),
            n_inner: d(self.n_inner),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OracleResult {
    pub nli_mw: f64,
    pub refined_mw: f64,
    /// Relative change between the two resolutions.
    pub change: f64,
}

impl OracleResult {
    pub fn converged(&self) -> bool {
        self.change <= 0.05
    }
}

fn trapezoid_weights(n: usize, width: f64) -> Vec<f64> {
    assert!(n >= 2);
    let h = width / (n - 1) as f64;
    (0..n).map(|i| if i == 0 || i == n - 1 { h / 2.0 } else { h }).collect()
}

struct Block {
    lo: f64,
    hi: f64,
    psd: f64,
}

/// NLI power (mW) in `channel` at the given resolution.
pub fn gnrf(span: &FiberSpan, grid: &ChannelGrid, launch_mw: &[f64], channel: usize, res: Resolution) -> f64 {
    if span.gamma_1_wkm == 0.0 {
        return 0.0;
    }
    let alpha = span.alpha_db_km / (10.0 / std::f64::consts::LN_10);
    let length = span.length_km;
    let c = 4.0 * PI * PI * span.beta2_ps2_km.abs() * 1e-24;
    let decay = (-alpha * length).exp();
    let blocks: Vec<Block> = (0..grid.n_ch())
        .map(|j| {
            let fc = grid.f_thz()[j] * 1e12;
            let b = grid.b_ch_ghz()[j] * 1e9;
            Block { lo: fc - b / 2.0, hi: fc + b / 2.0, psd: launch_mw[j] * 1e-3 / b }
        })
        .collect();

    // ∫ ρ dx over [x0, x1] via x = α tan φ.
    let phi_w = trapezoid_weights(res.n_inner, 1.0);
    let rho_integral = |x0: f64, x1: f64| -> f64 {
        let (p0, p1) = ((x0 / alpha).atan(), (x1 / alpha).atan());
        let span_phi = p1 - p0;
        let mut acc = 0.0;
        for (k, w) in phi_w.iter().enumerate() {
            let phi = p0 + span_phi * k as f64 / (res.n_inner - 1) as f64;
            let x = alpha * phi.tan();
            acc += w * (1.0 - 2.0 * decay * (x * length).cos() + decay * decay);
        }
        acc * span_phi / alpha
    };

    let rx = &blocks[channel];
    let f_w = trapezoid_weights(res.n_f, rx.hi - rx.lo);
    let mut total = 0.0;
    for (fi, wf) in f_w.iter().enumerate() {
        let f = rx.lo + (rx.hi - rx.lo) * fi as f64 / (res.n_f - 1) as f64;
        let mut g_nli = 0.0;
        for (j, bj) in blocks.iter().enumerate() {
            if bj.psd == 0.0 {
                continue;
            }
            let d = j.abs_diff(channel);
            let n1 = if d == 0 { res.n_self } else if d <= 3 { res.n_near } else { res.n_far };
            let w1 = trapezoid_weights(n1, bj.hi - bj.lo);
            for (a, wa) in w1.iter().enumerate() {
                let f1 = bj.lo + (bj.hi - bj.lo) * a as f64 / (n1 - 1) as f64;
                let d1 = f1 - f;
                let mut inner = 0.0;
                for bk in &blocks {
                    if bk.psd == 0.0 {
                        continue;
                    }
                    for bl in &blocks {
                        if bl.psd == 0.0 {
                            continue;
                        }
                        // f2 ∈ B_k and f1 + f2 − f ∈ B_l
                        let lo = bk.lo.max(bl.lo - d1);
                        let hi = bk.hi.min(bl.hi - d1);
                        if hi <= lo {
                            continue;
                        }
                        let weight = bk.psd * bl.psd;
                        let part = if (c * d1).abs() * (hi - f).abs().max((lo - f).abs()) < 1e-6 * alpha {
                            (1.0 - decay).powi(2) / (alpha * alpha) * (hi - lo)
                        } else {
                            let (x0, x1) = (c * d1 * (lo - f), c * d1 * (hi - f));
                            let (x0, x1) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
                            rho_integral(x0, x1) / (c * d1.abs())
                        };
                        inner += weight * part;
                    }
                }
                g_nli += wa * bj.psd * inner;
            }
        }
        total += wf * g_nli;
    }
    16.0 / 27.0 * span.gamma_1_wkm.powi(2) * total * 1e3
}

/// Oracle value with a step-halving convergence check.
pub fn gnrf_oracle(span: &FiberSpan, grid: &ChannelGrid, launch_mw: &[f64], channel: usize) -> OracleResult {
    let res = Resolution::coarse();
    let a = gnrf(span, grid, launch_mw, channel, res);
    let b = gnrf(span, grid, launch_mw, channel, res.refined());
    let change = if b == 0.0 { 0.0 } else { ((a - b) / b).abs() };
    OracleResult { nli_mw: a, refined_mw: b, change }
}
