//! Analytical LUT and BRAM cost of an overlay instance, and a brute-force
//! design-space enumeration under resource budgets.
//!
//! LUTs: `total = base + Dm * Dn * (dpu + res)` with `dpu = alpha * Dk + beta`.
//! BRAM: `total = base + ceil(Dk / 32) * (Dm * ceil(Bm / 1024) + Dn * ceil(Bn / 1024))`,
//! i.e. one 32-bit-wide, 1024-deep block RAM per 32 bits of buffer word.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hwmodel::{peak_gops, HwConfig, INSTANCE_DIMS};

/// Post-implementation LUT counts of the six runtime instances.
pub const MEASURED_INSTANCE_LUTS: [f64; 6] = [19545.0, 27740.0, 45573.0, 13352.0, 24202.0, 21755.0];

/// Resources of the XC7Z020 on the PYNQ-Z1.
pub const Z7020_LUTS: f64 = 53200.0;
pub const Z7020_BRAMS: f64 = 140.0;

const BRAM_WIDTH_BITS: usize = 32;
const BRAM_DEPTH: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    /// LUTs per popcount input bit of a DPU.
    pub alpha_dpu: f64,
    /// Fixed LUTs per DPU.
    pub beta_dpu: f64,
    /// LUTs per DPU outside the DPU itself (result buffer and downsizer share).
    pub lut_res: f64,
    /// LUTs of the fetch, result and control logic.
    pub lut_base: f64,
    pub bram_base: f64,
}

impl Default for CostConstants {
    fn default() -> Self {
        Self {
            alpha_dpu: 2.04,
            beta_dpu: 109.41,
            lut_res: 120.1,
            lut_base: 718.0,
            bram_base: 0.0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cost constants line {line}: {message}")]
pub struct ConstantsParseError {
    pub line: usize,
    pub message: String,
}

impl CostConstants {
    /// Parses `key = value` lines. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, ConstantsParseError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConstantsParseError { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let v: f64 = value
                .parse()
                .map_err(|_| err(format!("invalid number {value:?} for {key}")))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(err(format!("{key} must be a nonnegative number")));
            }
            let slot = match key {
                "alpha_dpu" => &mut c.alpha_dpu,
                "beta_dpu" => &mut c.beta_dpu,
                "lut_res" => &mut c.lut_res,
                "lut_base" => &mut c.lut_base,
                "bram_base" => &mut c.bram_base,
                _ => return Err(err(format!("unknown key {key:?}"))),
            };
            *slot = v;
        }
        Ok(c)
    }
}

impl fmt::Display for CostConstants {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "alpha_dpu = {}", self.alpha_dpu)?;
        writeln!(f, "beta_dpu = {}", self.beta_dpu)?;
        writeln!(f, "lut_res = {}", self.lut_res)?;
        writeln!(f, "lut_base = {}", self.lut_base)?;
        writeln!(f, "bram_base = {}", self.bram_base)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutCost {
    pub lut_dpu_each: f64,
    pub lut_res_each: f64,
    pub lut_array: f64,
    pub lut_base: f64,
    pub lut_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BramCost {
    /// Block RAMs per buffer word (`ceil(Dk / 32)`).
    pub brams_per_word: usize,
    pub lhs_brams: usize,
    pub rhs_brams: usize,
    pub bram_array: usize,
    pub bram_base: f64,
    pub bram_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub dm: usize,
    pub dk: usize,
    pub dn: usize,
    pub lut: LutCost,
    pub bram: BramCost,
    pub peak_gops: f64,
    /// Whole-design LUTs per binary operation per cycle.
    pub lut_per_op: f64,
}

pub fn lut_cost(cfg: &HwConfig, c: &CostConstants) -> LutCost {
    let lut_dpu_each = c.alpha_dpu * cfg.dk as f64 + c.beta_dpu;
    let lut_array = (cfg.dm * cfg.dn) as f64 * (lut_dpu_each + c.lut_res);
    LutCost {
        lut_dpu_each,
        lut_res_each: c.lut_res,
        lut_array,
        lut_base: c.lut_base,
        lut_total: c.lut_base + lut_array,
    }
}

pub fn bram_cost(cfg: &HwConfig, c: &CostConstants) -> BramCost {
    let per_word = cfg.dk.div_ceil(BRAM_WIDTH_BITS);
    let lhs = per_word * cfg.dm * cfg.bm.div_ceil(BRAM_DEPTH);
    let rhs = per_word * cfg.dn * cfg.bn.div_ceil(BRAM_DEPTH);
    BramCost {
        brams_per_word: per_word,
        lhs_brams: lhs,
        rhs_brams: rhs,
        bram_array: lhs + rhs,
        bram_base: c.bram_base,
        bram_total: c.bram_base + (lhs + rhs) as f64,
    }
}

pub fn estimate(cfg: &HwConfig, c: &CostConstants) -> CostEstimate {
    let lut = lut_cost(cfg, c);
    let ops = cfg.ops_per_cycle();
    CostEstimate {
        dm: cfg.dm,
        dk: cfg.dk,
        dn: cfg.dn,
        lut_per_op: if ops == 0 { f64::INFINITY } else { lut.lut_total / ops as f64 },
        lut,
        bram: bram_cost(cfg, c),
        peak_gops: peak_gops(cfg),
    }
}

/// DPU LUTs per binary operation: `(alpha * Dk + beta) / (2 * Dk)`.
pub fn dpu_lut_per_op(dk: usize, c: &CostConstants) -> f64 {
    (c.alpha_dpu * dk as f64 + c.beta_dpu) / (2 * dk) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEntry {
    pub dm: usize,
    pub dk: usize,
    pub dn: usize,
    pub predicted: f64,
    pub actual: f64,
    /// `(predicted - actual) / actual`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub entries: Vec<AccuracyEntry>,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
}

/// Predicted vs measured LUTs for each `(config, actual)` pair.
pub fn model_accuracy(designs: &[(HwConfig, f64)], c: &CostConstants) -> AccuracyReport {
    let entries: Vec<AccuracyEntry> = designs
        .iter()
        .map(|(cfg, actual)| {
            let predicted = lut_cost(cfg, c).lut_total;
            AccuracyEntry {
                dm: cfg.dm,
                dk: cfg.dk,
                dn: cfg.dn,
                predicted,
                actual: *actual,
                rel_error: (predicted - actual) / actual,
            }
        })
        .collect();
    let abs = entries.iter().map(|e| e.rel_error.abs());
    let n = entries.len().max(1) as f64;
    AccuracyReport {
        mean_abs_error: abs.clone().sum::<f64>() / n,
        max_abs_error: abs.fold(0.0, f64::max),
        entries,
    }
}

/// The six runtime instances paired with their measured LUTs.
pub fn instance_luts() -> Vec<(HwConfig, f64)> {
    INSTANCE_DIMS
        .iter()
        .zip(MEASURED_INSTANCE_LUTS)
        .map(|(&(dm, dk, dn), lut)| (HwConfig::with_dims(dm, dk, dn), lut))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub lut: f64,
    pub bram: f64,
    /// Main-memory bandwidth available, GB/s.
    pub bandwidth_gbps: f64,
}

impl Budget {
    pub fn z7020() -> Self {
        Self {
            lut: Z7020_LUTS,
            bram: Z7020_BRAMS,
            bandwidth_gbps: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DseRanges {
    pub dm: Vec<usize>,
    pub dk: Vec<usize>,
    pub dn: Vec<usize>,
}

impl Default for DseRanges {
    fn default() -> Self {
        let pow2 = |lo: u32, hi: u32| (lo..=hi).map(|e| 1usize << e).collect::<Vec<_>>();
        Self {
            dm: pow2(0, 4),
            dk: pow2(5, 10),
            dn: pow2(0, 4),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DseError {
    #[error("the {0} range is empty")]
    EmptyRange(&'static str),
}

/// Read plus write channel bandwidth of `cfg` in GB/s.
pub fn channel_bandwidth_gbps(cfg: &HwConfig) -> f64 {
    (cfg.read_bits + cfg.write_bits) as f64 / 8.0 * cfg.fclk_mhz * 1e6 / 1e9
}

/// Every `(Dm, Dk, Dn)` in `ranges` that fits `budget`, built on `template`
/// for all other parameters, ranked by peak GOPS (descending) then LUTs.
pub fn dse_enumerate(
    budget: &Budget,
    ranges: &DseRanges,
    template: &HwConfig,
    c: &CostConstants,
) -> Result<Vec<CostEstimate>, DseError> {
    for (name, r) in [("Dm", &ranges.dm), ("Dk", &ranges.dk), ("Dn", &ranges.dn)] {
        if r.is_empty() {
            return Err(DseError::EmptyRange(name));
        }
    }
    if channel_bandwidth_gbps(template) > budget.bandwidth_gbps {
        return Ok(Vec::new());
    }
    let points: Vec<(usize, usize, usize)> = ranges
        .dm
        .iter()
        .flat_map(|&dm| {
            ranges
                .dk
                .iter()
                .flat_map(move |&dk| ranges.dn.iter().map(move |&dn| (dm, dk, dn)))
        })
        .collect();
    let mut out: Vec<CostEstimate> = points
        .par_iter()
        .filter_map(|&(dm, dk, dn)| {
            let cfg = HwConfig {
                dm,
                dk,
                dn,
                ..template.clone()
            };
            let e = estimate(&cfg, c);
            (e.lut.lut_total <= budget.lut && e.bram.bram_total <= budget.bram).then_some(e)
        })
        .collect();
    out.sort_by(|a, b| {
        b.peak_gops
            .total_cmp(&a.peak_gops)
            .then(a.lut.lut_total.total_cmp(&b.lut.lut_total))
            .then((a.dm, a.dk, a.dn).cmp(&(b.dm, b.dk, b.dn)))
    });
    Ok(out)
}

pub const DSE_CSV_HEADER: &str = "Dm,Dk,Dn,LUT,BRAM,GOPS,LUT/op";

pub fn dse_csv(rows: &[CostEstimate]) -> String {
    let mut s = String::from(DSE_CSV_HEADER);
    s.push('\n');
    for e in rows {
        s.push_str(&format!(
            "{},{},{},{:.2},{},{:.1},{:.4}\n",
            e.dm, e.dk, e.dn, e.lut.lut_total, e.bram.bram_total, e.peak_gops, e.lut_per_op
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-6
    }

    #[test]
    fn lut_examples() {
        let c = CostConstants::default();
        let lut = |n| lut_cost(&HwConfig::instance(n).unwrap(), &c).lut_total;
        assert!(close(lut(3), 48830.0));
        assert!(close(lut(4), 12746.0));
        assert!(close(lut(1), 23762.48));
        let zero = HwConfig::with_dims(0, 64, 0);
        assert!(close(lut_cost(&zero, &c).lut_total, 718.0));
    }

    #[test]
    fn bram_examples() {
        let c = CostConstants::default();
        assert_eq!(bram_cost(&HwConfig::instance(1).unwrap(), &c).bram_array, 32);
        assert_eq!(bram_cost(&HwConfig::with_dims(1, 32, 1), &c).bram_array, 2);
        let mut tiny = HwConfig::with_dims(1, 32, 1);
        tiny.bm = 1;
        tiny.bn = 1025;
        assert_eq!(bram_cost(&tiny, &c).bram_array, 1 + 2);
        assert_eq!(bram_cost(&HwConfig::with_dims(1, 33, 1), &c).brams_per_word, 2);
    }

    #[test]
    fn accuracy_on_instances() {
        let rep = model_accuracy(&instance_luts(), &CostConstants::default());
        assert!(rep.mean_abs_error < 0.12, "{rep:?}");
        assert!((rep.entries[0].rel_error - 0.216).abs() < 0.001);
        assert!((rep.entries[4].rel_error - 0.0236).abs() < 0.001);
        // smaller designs are overestimated
        assert!(rep.entries[0].rel_error > rep.entries[2].rel_error);
    }

    #[test]
    fn dpu_cost_per_op() {
        let c = CostConstants::default();
        assert!((dpu_lut_per_op(32, &c) - 2.73).abs() < 0.01);
        assert!((dpu_lut_per_op(1024, &c) - 1.073).abs() < 0.001);
    }

    #[test]
    fn equal_peak_design_points() {
        for (dm, dk, dn) in [(2, 1024, 2), (4, 256, 4), (8, 64, 8)] {
            let e = estimate(&HwConfig::with_dims(dm, dk, dn), &CostConstants::default());
            assert!(close(e.peak_gops, 1638.4));
        }
    }

    #[test]
    fn dse_budgets() {
        let c = CostConstants::default();
        let t = HwConfig::default();
        let zero = Budget {
            lut: 0.0,
            bram: 0.0,
            bandwidth_gbps: 0.0,
        };
        assert!(dse_enumerate(&zero, &DseRanges::default(), &t, &c).unwrap().is_empty());
        let all = dse_enumerate(&Budget::z7020(), &DseRanges::default(), &t, &c).unwrap();
        assert!(all.iter().any(|e| (e.dm, e.dk, e.dn) == (8, 256, 8)));
        assert!(all.windows(2).all(|w| w[0].peak_gops >= w[1].peak_gops));
        assert!(all.iter().all(|e| e.lut.lut_total <= Z7020_LUTS && e.bram.bram_total <= Z7020_BRAMS));
        let narrow = Budget {
            bandwidth_gbps: 3.0,
            ..Budget::z7020()
        };
        // 64-bit read and write channels at 200 MHz need 3.2 GB/s
        assert!(dse_enumerate(&narrow, &DseRanges::default(), &t, &c).unwrap().is_empty());
        let empty = DseRanges {
            dk: vec![],
            ..Default::default()
        };
        assert_eq!(dse_enumerate(&Budget::z7020(), &empty, &t, &c), Err(DseError::EmptyRange("Dk")));
        let csv = dse_csv(&all[..1]);
        assert!(csv.starts_with("Dm,Dk,Dn,LUT,BRAM,GOPS,LUT/op\n"));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn constants_file() {
        let c = CostConstants::parse("# recalibrated\nlut_base = 900\nbram_base=4 # shell\n").unwrap();
        assert_eq!(c.lut_base, 900.0);
        assert_eq!(c.bram_base, 4.0);
        assert_eq!(c.alpha_dpu, 2.04);
        assert_eq!(CostConstants::parse(&c.to_string()).unwrap(), c);
        assert_eq!(CostConstants::parse("x = 1").unwrap_err().line, 1);
        assert!(CostConstants::parse("lut_res = -1").is_err());
    }

    proptest! {
        #[test]
        fn lut_strictly_monotone(dm in 1..64usize, dk in 1..2048usize, dn in 1..64usize) {
            let c = CostConstants::default();
            let base = lut_cost(&HwConfig::with_dims(dm, dk, dn), &c).lut_total;
            for (a, b, d) in [(dm + 1, dk, dn), (dm, dk + 1, dn), (dm, dk, dn + 1)] {
                prop_assert!(lut_cost(&HwConfig::with_dims(a, b, d), &c).lut_total > base);
            }
        }

        #[test]
        fn bram_monotone(dk in 1..2048usize, bm in 1..5000usize, bn in 1..5000usize, step in 1..100usize) {
            let c = CostConstants::default();
            let mk = |dk, bm, bn| {
                let mut cfg = HwConfig::with_dims(4, dk, 4);
                cfg.bm = bm;
                cfg.bn = bn;
                bram_cost(&cfg, &c).bram_array
            };
            let base = mk(dk, bm, bn);
            prop_assert!(mk(dk + step, bm, bn) >= base);
            prop_assert!(mk(dk, bm + step, bn) >= base);
            prop_assert!(mk(dk, bm, bn + step) >= base);
        }

        #[test]
        fn breakdown_sums(dm in 0..32usize, dk in 1..1024usize, dn in 0..32usize, base in 0.0..1000.0f64) {
            let c = CostConstants { bram_base: base, ..Default::default() };
            let e = estimate(&HwConfig::with_dims(dm, dk, dn), &c);
            prop_assert_eq!(e.lut.lut_total, e.lut.lut_base + e.lut.lut_array);
            prop_assert_eq!(e.bram.bram_array, e.bram.lhs_brams + e.bram.rhs_brams);
            prop_assert_eq!(e.bram.bram_total, base + e.bram.bram_array as f64);
        }

        #[test]
        fn dpu_cost_per_op_decreasing(dk in 1..4096usize) {
            let c = CostConstants::default();
            prop_assert!(dpu_lut_per_op(dk + 1, &c) < dpu_lut_per_op(dk, &c));
            prop_assert!(dpu_lut_per_op(dk, &c) > c.alpha_dpu / 2.0);
        }
    }
}
