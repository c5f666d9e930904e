//! Closed-form cycle and throughput model.
//!
//! A convolution costs `b_a * b_w` MVP cycles per 64x64 tile, per kernel
//! position, per output pixel computed on an MVU. Only output rows whose
//! vertical receptive field lies inside the unpadded input run as MVU jobs;
//! the remaining rows are filled in by the host and cost nothing here.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{Layer, LayerKind, Model};

pub const TILE: usize = 64;
/// Layers per lap in pipelined mode.
pub const LAP_LAYERS: usize = 8;

pub fn blocks(n: usize) -> usize {
    n.div_ceil(TILE)
}

/// Convolution output rows `y` with `y*s - p >= 0` and `y*s - p + F_H <= H`.
pub fn interior_conv_rows(layer: &Layer) -> std::ops::Range<usize> {
    let (s, p, fh, h) = (layer.stride, layer.padding, layer.f_h, layer.input.rows);
    let ok = |y: usize| y * s >= p && y * s - p + fh <= h;
    let lo = (0..layer.conv_out.rows).find(|&y| ok(y)).unwrap_or(layer.conv_out.rows);
    let hi = (lo..layer.conv_out.rows).take_while(|&y| ok(y)).last().map_or(lo, |y| y + 1);
    lo..hi
}

/// Output rows (after pooling) produced by MVU jobs: rows whose whole pooling
/// window of convolution rows is interior.
pub fn mvu_output_rows(layer: &Layer) -> std::ops::Range<usize> {
    let conv = interior_conv_rows(layer);
    let k = layer.pool;
    let lo = conv.start.div_ceil(k);
    let hi = (conv.end / k).max(lo);
    lo..hi
}

/// MVP cycles of a convolution layer.
pub fn estimate_conv_cycles(layer: &Layer) -> Result<u64> {
    if layer.kind != LayerKind::Conv2d {
        return Err(Error::UnsupportedOp(format!("`{}` is not a convolution", layer.name)));
    }
    let rows = mvu_output_rows(layer).len() * layer.pool;
    Ok(precision_factor(layer)
        * (layer.f_h * layer.f_w) as u64
        * blocks(layer.input.channels) as u64
        * blocks(layer.c_out()) as u64
        * layer.conv_out.cols as u64
        * rows as u64)
}

fn precision_factor(layer: &Layer) -> u64 {
    (layer.prec_a.bits() * layer.prec_w.bits()) as u64
}

/// MVP cycles of any layer the MVUs execute.
pub fn estimate_layer_cycles(layer: &Layer) -> Result<u64> {
    match layer.kind {
        LayerKind::Conv2d => estimate_conv_cycles(layer),
        LayerKind::Gemm | LayerKind::Gemv => {
            let kb = (layer.input.cols * blocks(layer.input.channels)) as u64;
            Ok(precision_factor(layer) * kb * blocks(layer.c_out()) as u64 * layer.input.rows as u64)
        }
        k => Err(Error::UnsupportedOp(format!("{k:?} layer `{}` has no MVU mapping", layer.name))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCycles {
    pub name: String,
    pub cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub model: String,
    pub clock_hz: f64,
    pub per_layer: Vec<LayerCycles>,
    pub total_cycles: u64,
    /// Steady-state frames per second with every stage busy.
    pub fps_pipelined: u64,
    /// Frames per second when layers run back to back.
    pub fps_single: u64,
    /// Simulated clock cycles including controller and writeback time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine_cycles: Option<u64>,
    /// Output rows computed by the host instead of an MVU job.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_edge_rows: Option<usize>,
}

fn fps(clock_hz: f64, cycles: u64) -> u64 {
    if cycles == 0 {
        0
    } else {
        (clock_hz / cycles as f64).floor() as u64
    }
}

impl CycleReport {
    /// Builds a report from per-layer cycles and the cycle count of each
    /// pipeline stage group (a lap, or a layer when layers are split).
    pub fn new(model: &str, clock_hz: f64, per_layer: Vec<LayerCycles>, stage_cycles: u64) -> Self {
        let total_cycles = per_layer.iter().map(|l| l.cycles).sum();
        CycleReport {
            model: model.to_string(),
            clock_hz,
            fps_pipelined: fps(clock_hz, stage_cycles),
            fps_single: fps(clock_hz, total_cycles),
            per_layer,
            total_cycles,
            machine_cycles: None,
            host_edge_rows: None,
        }
    }

    pub fn table(&self) -> String {
        let width = self.per_layer.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let num = self.per_layer.iter().map(|l| l.cycles.to_string().len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>num$}", "Layer", "Cycles");
        for l in &self.per_layer {
            let _ = writeln!(s, "{:<width$}  {:>num$}", l.name, l.cycles);
        }
        let _ = writeln!(s, "Clock: {} MHz", self.clock_hz / 1e6);
        let _ = writeln!(s, "FPS (pipelined): {}", self.fps_pipelined);
        let _ = writeln!(s, "FPS (single): {}", self.fps_single);
        if let Some(c) = self.machine_cycles {
            let _ = writeln!(s, "Machine cycles: {c}");
        }
        if let Some(r) = self.host_edge_rows {
            let _ = writeln!(s, "Host edge rows: {r}");
        }
        let _ = write!(s, "Total: {}", self.total_cycles);
        s
    }
}

/// Slowest layer of each lap, summed over laps.
pub fn pipelined_stage_cycles(per_layer: &[u64]) -> u64 {
    per_layer.chunks(LAP_LAYERS).map(|lap| lap.iter().copied().max().unwrap_or(0)).sum()
}

pub fn estimate_model(model: &Model, clock_hz: f64) -> Result<CycleReport> {
    let per_layer = model
        .layers
        .iter()
        .map(|l| Ok(LayerCycles { name: l.name.clone(), cycles: estimate_layer_cycles(l)? }))
        .collect::<Result<Vec<_>>>()?;
    let stage = pipelined_stage_cycles(&per_layer.iter().map(|l| l.cycles).collect::<Vec<_>>());
    Ok(CycleReport::new(&model.name, clock_hz, per_layer, stage))
}

/// Frames per second at `b_a`/`b_w` bits given the 1/1-bit figure.
pub fn fps_scaling_check(base_fps: u64, b_a: u32, b_w: u32) -> u64 {
    base_fps / (b_a as u64 * b_w as u64)
}
