//! Deterministic cycle/byte cost model of the accelerator.
//!
//! Serial units (SPUs) execute the geometry primitives of ray generation and
//! point location; parallel units (PPUs) hold the multiplier pool, the MLP
//! array, the dual-purpose adder/search tree, and the high-density sparse
//! search unit. Each pipeline step costs `max(compute, memory)` cycles, with
//! memory cycles derived from step bytes at the configured DRAM bandwidth.

use crate::renderer::{CodecCycles, StepTrace};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("hardware config field {0} must be positive")]
    NonPositive(&'static str),
    #[error("tree_width {0} is not a power of two")]
    TreeWidthNotPowerOfTwo(u64),
    #[error("fraction {0} outside [0, 1]")]
    BadFraction(f64),
}

/// Cycles per geometry primitive on a serial unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpuCostTable {
    pub ray_gen: f64,
    pub ball_approx: f64,
    pub projection: f64,
    pub intersection: f64,
    pub grid_query: f64,
}

/// One modeled device. The per-primitive costs are calibrated only for
/// internal consistency, not against any physical implementation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    pub name: String,
    pub num_spu: u64,
    pub num_ppu: u64,
    pub multipliers_per_ppu: u64,
    /// Leaves of the dual-purpose adder/search tree; power of two.
    pub tree_width: u64,
    pub mlp_macs_per_cycle: u64,
    /// Clock in Hz.
    pub frequency: f64,
    pub sram_bytes: u64,
    /// Bytes per second.
    pub dram_bandwidth: f64,
    pub spu_cost_table: SpuCostTable,
}

impl HardwareConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            (self.num_spu as f64, "num_spu"),
            (self.num_ppu as f64, "num_ppu"),
            (self.multipliers_per_ppu as f64, "multipliers_per_ppu"),
            (self.tree_width as f64, "tree_width"),
            (self.mlp_macs_per_cycle as f64, "mlp_macs_per_cycle"),
            (self.frequency, "frequency"),
            (self.sram_bytes as f64, "sram_bytes"),
            (self.dram_bandwidth, "dram_bandwidth"),
        ];
        for (v, name) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(SimError::NonPositive(name));
            }
        }
        if !self.tree_width.is_power_of_two() {
            return Err(SimError::TreeWidthNotPowerOfTwo(self.tree_width));
        }
        let t = &self.spu_cost_table;
        for (v, name) in [
            (t.ray_gen, "spu_cost_table.ray_gen"),
            (t.ball_approx, "spu_cost_table.ball_approx"),
            (t.projection, "spu_cost_table.projection"),
            (t.intersection, "spu_cost_table.intersection"),
            (t.grid_query, "spu_cost_table.grid_query"),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(SimError::NonPositive(name));
            }
        }
        Ok(())
    }

    pub fn edge_preset() -> Self {
        HardwareConfig {
            name: "rt-nerf-edge".into(),
            num_spu: 1,
            num_ppu: 1,
            multipliers_per_ppu: 64,
            tree_width: 64,
            mlp_macs_per_cycle: 64,
            frequency: 1e9,
            sram_bytes: 3_500_000,
            dram_bandwidth: 17e9,
            spu_cost_table: SpuCostTable {
                ray_gen: 8.0,
                ball_approx: 6.0,
                projection: 20.0,
                intersection: 14.0,
                grid_query: 2.0,
            },
        }
    }

    pub fn cloud_preset() -> Self {
        HardwareConfig {
            name: "rt-nerf-cloud".into(),
            num_spu: 30,
            num_ppu: 30,
            sram_bytes: 105_000_000,
            dram_bandwidth: 510e9,
            ..Self::edge_preset()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepValues {
    pub step1: f64,
    pub step2_1: f64,
    pub step2_2_grid: f64,
    pub step2_2_mlp: f64,
    pub step3: f64,
}

impl StepValues {
    pub fn total(&self) -> f64 {
        self.step1 + self.step2_1 + self.step2_2_grid + self.step2_2_mlp + self.step3
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.step1,
            self.step2_1,
            self.step2_2_grid,
            self.step2_2_mlp,
            self.step3,
        ]
    }

    fn from_array(a: [f64; 5]) -> Self {
        StepValues {
            step1: a[0],
            step2_1: a[1],
            step2_2_grid: a[2],
            step2_2_mlp: a[3],
            step3: a[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepFlags {
    pub step1: bool,
    pub step2_1: bool,
    pub step2_2_grid: bool,
    pub step2_2_mlp: bool,
    pub step3: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeModeCensus {
    pub adder_fraction: f64,
    pub search_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub config_name: String,
    pub cycles: StepValues,
    pub total_cycles: f64,
    pub fps: f64,
    pub fractions: StepValues,
    pub memory_bound: StepFlags,
    pub tree_mode_census: TreeModeCensus,
    /// Operations billed against the trace, for work-conservation checks.
    pub served_ops: u64,
}

/// Bytes moved per step. The MLP weights are small enough to stay resident
/// in SRAM, so the MLP step is modeled as compute-only.
const RAY_BYTES: u64 = 12;
const OCCUPANCY_BYTES_PER_ACCESS: u64 = 1;
const COMPOSITE_STATE_BYTES: u64 = 16;

pub fn step_memory_bytes(trace: &StepTrace) -> StepValues {
    StepValues {
        step1: (trace.geometry_primitives.ray_gen * RAY_BYTES) as f64,
        step2_1: (trace.occupancy_accesses * OCCUPANCY_BYTES_PER_ACCESS) as f64,
        step2_2_grid: trace.embedding_bytes as f64,
        step2_2_mlp: 0.0,
        step3: (trace.composite_ops * COMPOSITE_STATE_BYTES) as f64,
    }
}

/// Cost of running `adds` accumulations and `searches` tree-routed decodes on
/// the dual-purpose tree. While searches remain the tree runs in mixed mode
/// (half the leaves add, half search); afterwards the full width serves adds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeCost {
    pub cycles: u64,
    pub adder_mode_cycles: u64,
    pub mixed_mode_cycles: u64,
    pub utilization: f64,
    pub census: TreeModeCensus,
    /// Echo of the caller-provided share of high-sparsity work.
    pub high_sparsity_fraction: f64,
}

pub fn model_dual_purpose_tree(
    adds: u64,
    searches: u64,
    high_sparsity_fraction: f64,
    config: &HardwareConfig,
) -> Result<TreeCost, SimError> {
    config.validate()?;
    if !(0.0..=1.0).contains(&high_sparsity_fraction) {
        return Err(SimError::BadFraction(high_sparsity_fraction));
    }
    let tw = config.tree_width;
    let half = (tw / 2).max(1);
    let mixed = searches.div_ceil(half);
    let adds_in_mixed = adds.min(mixed * half);
    let adder = (adds - adds_in_mixed).div_ceil(tw);
    let cycles = mixed + adder;
    let served = adds + searches;
    let utilization = if cycles == 0 {
        0.0
    } else {
        served as f64 / (tw * cycles) as f64
    };
    let census = if cycles == 0 {
        TreeModeCensus {
            adder_fraction: 1.0,
            search_fraction: 0.0,
        }
    } else {
        TreeModeCensus {
            adder_fraction: adder as f64 / cycles as f64,
            search_fraction: mixed as f64 / cycles as f64,
        }
    };
    Ok(TreeCost {
        cycles,
        adder_mode_cycles: adder,
        mixed_mode_cycles: mixed,
        utilization,
        census,
        high_sparsity_fraction,
    })
}

/// Turn an instrumented trace plus codec query histograms into a per-step
/// cycle report. Pure function: identical inputs give identical reports.
pub fn simulate(
    trace: &StepTrace,
    codec: &CodecCycles,
    config: &HardwareConfig,
) -> Result<CycleReport, SimError> {
    config.validate()?;
    let prim = &trace.geometry_primitives;
    let cost = &config.spu_cost_table;
    let spus = config.num_spu as f64;
    let ppus = config.num_ppu as f64;

    let step1_compute = prim.ray_gen as f64 * cost.ray_gen / spus;
    let step2_1_compute = (prim.ball_approx as f64 * cost.ball_approx
        + prim.projection as f64 * cost.projection
        + prim.intersection as f64 * cost.intersection
        + prim.grid_query as f64 * cost.grid_query)
        / spus;

    // The high-density unit is fully pipelined at one bitmap query per cycle;
    // COO walks run on the tree's search half, tree_width/2 lanes wide.
    let bitmap_queries: u64 = codec.bitmap.values().sum();
    let coo_cycles: u64 = codec.coo.iter().map(|(c, n)| *c as u64 * n).sum();
    let search_lanes = (config.tree_width / 2).max(1) as f64;
    let codec_compute = bitmap_queries as f64 + coo_cycles as f64 / search_lanes;

    let step2_2_grid_compute = (trace.multiplies as f64 / config.multipliers_per_ppu as f64
        + trace.adds as f64 / config.tree_width as f64
        + codec_compute)
        / ppus;
    let step2_2_mlp_compute = trace.mlp_macs as f64 / config.mlp_macs_per_cycle as f64 / ppus;
    let step3_compute = trace.composite_ops as f64 / ppus;

    let compute = StepValues {
        step1: step1_compute,
        step2_1: step2_1_compute,
        step2_2_grid: step2_2_grid_compute,
        step2_2_mlp: step2_2_mlp_compute,
        step3: step3_compute,
    };
    let bytes = step_memory_bytes(trace);
    let mut cycles = [0.0f64; 5];
    let mut bound = [false; 5];
    for (i, (c, b)) in compute.as_array().iter().zip(bytes.as_array()).enumerate() {
        let mem_cycles = b * config.frequency / config.dram_bandwidth;
        cycles[i] = c.max(mem_cycles);
        bound[i] = mem_cycles > *c;
    }
    let cycles = StepValues::from_array(cycles);
    let raw_total = cycles.total();
    let total_cycles = raw_total.max(1.0);
    let fractions = if raw_total > 0.0 {
        StepValues::from_array(cycles.as_array().map(|c| c / raw_total))
    } else {
        StepValues::default()
    };

    let coo_queries: u64 = codec.coo.values().sum();
    let tree = model_dual_purpose_tree(
        trace.adds,
        coo_queries,
        if codec.total_queries() == 0 {
            0.0
        } else {
            coo_queries as f64 / codec.total_queries() as f64
        },
        config,
    )?;

    let served_ops =
        trace.multiplies + trace.adds + trace.mlp_macs + trace.composite_ops + trace.sparse_queries;

    Ok(CycleReport {
        config_name: config.name.clone(),
        cycles,
        total_cycles,
        fps: config.frequency / total_cycles,
        fractions,
        memory_bound: StepFlags {
            step1: bound[0],
            step2_1: bound[1],
            step2_2_grid: bound[2],
            step2_2_mlp: bound[3],
            step3: bound[4],
        },
        tree_mode_census: tree.census,
        served_ops,
    })
}

/// Per-step and total speedups of report `b` relative to report `a`, with the
/// shift in breakdown fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDiff {
    pub baseline: String,
    pub contender: String,
    pub step_speedup: StepValues,
    pub total_speedup: f64,
    pub fraction_shift: StepValues,
}

pub fn compare(a: &CycleReport, b: &CycleReport) -> ReportDiff {
    let ratio = |x: f64, y: f64| if x == y { 1.0 } else { x / y };
    let sa = a.cycles.as_array();
    let sb = b.cycles.as_array();
    let mut speed = [0.0; 5];
    for i in 0..5 {
        speed[i] = ratio(sa[i], sb[i]);
    }
    let fa = a.fractions.as_array();
    let fb = b.fractions.as_array();
    let mut shift = [0.0; 5];
    for i in 0..5 {
        shift[i] = fb[i] - fa[i];
    }
    ReportDiff {
        baseline: a.config_name.clone(),
        contender: b.config_name.clone(),
        step_speedup: StepValues::from_array(speed),
        total_speedup: ratio(a.total_cycles, b.total_cycles),
        fraction_shift: StepValues::from_array(shift),
    }
}
