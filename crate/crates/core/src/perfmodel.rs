//! Code balance, roofline bounds and per-region performance statistics.
//!
//! Flops are counted per stored nonzero: 2 for a real multiply-add, 8 for a
//! complex one.

use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::error::{invalid, Result};
use crate::scalar::ValueType;

/// Attainable memory bandwidth and peak arithmetic rate of one machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineModel {
    bandwidth_gbs: f64,
    peak_gflops: f64,
}

impl MachineModel {
    pub fn new(bandwidth_gbs: f64, peak_gflops: f64) -> Result<Self> {
        if !(bandwidth_gbs > 0.0 && peak_gflops > 0.0) {
            return Err(invalid("bandwidth and peak must be positive"));
        }
        Ok(Self { bandwidth_gbs, peak_gflops })
    }

    pub fn bandwidth_gbs(&self) -> f64 {
        self.bandwidth_gbs
    }

    pub fn peak_gflops(&self) -> f64 {
        self.peak_gflops
    }
}

fn flops_for_value_bytes(value_bytes: usize) -> Result<f64> {
    match value_bytes {
        4 | 8 => Ok(2.0),
        16 => Ok(8.0),
        _ => Err(invalid(format!("unsupported value width {value_bytes}"))),
    }
}

/// Bytes per flop of SpMV. The minimal balance counts one value and one
/// index per nonzero; with `avg_nnz_per_row` the right-hand side read and the
/// result read plus write-allocate are added, amortized over a row.
///
/// `value_bytes` is 4, 8 or 16; 8 is taken as double real (16 as complex
/// double). Use [`spmv_code_balance_for`] to name complex single explicitly.
pub fn spmv_code_balance(value_bytes: usize, index_bytes: usize, avg_nnz_per_row: Option<f64>) -> Result<f64> {
    let flops = flops_for_value_bytes(value_bytes)?;
    balance(value_bytes as f64, index_bytes as f64, flops, avg_nnz_per_row)
}

/// [`spmv_code_balance`] keyed by element type.
pub fn spmv_code_balance_for(vt: ValueType, index_bytes: usize, avg_nnz_per_row: Option<f64>) -> Result<f64> {
    balance(vt.bytes() as f64, index_bytes as f64, vt.flops_per_fma() as f64, avg_nnz_per_row)
}

fn balance(vb: f64, ib: f64, flops: f64, avg_nnz: Option<f64>) -> Result<f64> {
    if ib <= 0.0 {
        return Err(invalid("index width must be positive"));
    }
    let mut b = (vb + ib) / flops;
    if let Some(nnzr) = avg_nnz {
        if !(nnzr > 0.0) {
            return Err(invalid("average row length must be positive"));
        }
        b += 3.0 * vb / (flops * nnzr);
    }
    Ok(b)
}

/// Traffic saved by 4-byte instead of 8-byte indices, relative to the
/// minimal per-nonzero traffic with 8-byte indices.
pub fn index_width_saving(value_bytes: usize) -> Result<f64> {
    flops_for_value_bytes(value_bytes)?;
    Ok(4.0 / (value_bytes as f64 + 8.0))
}

/// `min(peak, bandwidth / balance)` in Gflop/s.
pub fn roofline_bound(machine: &MachineModel, code_balance: f64) -> Result<f64> {
    if code_balance < 0.0 || code_balance.is_nan() {
        return Err(invalid("code balance must be non-negative"));
    }
    if code_balance == 0.0 {
        return Ok(machine.peak_gflops);
    }
    Ok(machine.peak_gflops.min(machine.bandwidth_gbs / code_balance))
}

/// Cost of refreshing the values from CRS (read CRS values, read and write
/// SELL values) in units of SpMV calls.
pub fn crs_refresh_cost(nnz: usize, value_bytes: usize, spmv_traffic_per_call: f64) -> Result<f64> {
    if nnz == 0 || value_bytes == 0 || !(spmv_traffic_per_call > 0.0) {
        return Err(invalid("inputs must be positive"));
    }
    Ok(3.0 * nnz as f64 * value_bytes as f64 / spmv_traffic_per_call)
}

/// Minimal SpMV traffic: one value and one 4-byte index per nonzero.
pub fn minimal_spmv_traffic(nnz: usize, value_bytes: usize) -> f64 {
    nnz as f64 * (value_bytes + 4) as f64
}

/// Per-call samples of one measured region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    name: String,
    samples: Vec<f64>,
}

impl RegionStats {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), samples: Vec::new() }
    }

    pub fn from_samples(name: impl Into<String>, samples: Vec<f64>) -> Self {
        Self { name: name.into(), samples }
    }

    pub fn record(&mut self, sample: f64) {
        self.samples.push(sample);
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ncalls(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Maximum over all calls.
    pub fn p_max(&self) -> Option<f64> {
        self.samples.iter().copied().reduce(f64::max)
    }

    /// Mean over all calls but the first ten.
    pub fn p_skip10(&self) -> Result<f64> {
        if self.samples.len() <= 10 {
            return Err(invalid(format!("{} calls recorded, need more than 10", self.samples.len())));
        }
        let tail = &self.samples[10..];
        Ok(tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// Thread-safe collection of regions, reported in name order.
#[derive(Debug, Default)]
pub struct Regions {
    regions: Mutex<BTreeMap<String, RegionStats>>,
}

impl Regions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, region: &str, sample: f64) {
        let mut r = self.regions.lock().unwrap();
        r.entry(region.to_string()).or_insert_with(|| RegionStats::new(region)).record(sample);
    }

    pub fn report(&self) -> Vec<RegionStats> {
        self.regions.lock().unwrap().values().cloned().collect()
    }
}

/// Nominal flops of one SpMV call: `2 * nnz * width`.
pub fn nominal_spmv_flops(nnz: usize, width: usize) -> f64 {
    2.0 * nnz as f64 * width as f64
}
