//! Lowers a validated model into RAM images, job descriptors and controller
//! assembly.
//!
//! Convolutions run one job per output row (or per pooled row and output
//! channel set when pooling is fused). Matrix layers run one job per input
//! vector. Every hart waits for the host to post a phase number in its data
//! region, issues its jobs through the MVU registers, waits for its MVU to go
//! idle and posts the same number back.

pub mod layout;

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bitserial::Precision;
use crate::controller::csr::{
    csr_name, MvuCsrs, AGU_ACT, AGU_BIAS, AGU_SCALER, AGU_WGT, DEST_BASE, IRQ, MVP_CYCLES, MVU_CSR_BASE, MVU_CSR_COUNT,
    START, STATUS,
};
use crate::controller::{HART_REGION_BYTES, NUM_HARTS};
use crate::error::{Error, Result};
use crate::ir::{Dims, Layer, LayerKind, Model};
use crate::mvu::{AguConfig, BiasRow, JobDescriptor, MemoryConfig, ScalerRow, WeightRow, NUM_MVUS};
use crate::perf::{blocks, mvu_output_rows, LAP_LAYERS};
use layout::{export_bias, export_scaler, export_weights, tile_and_pad, ActLayout, TilePlan};

pub const MANIFEST_FORMAT: &str = "mvusim-compiled";
pub const MANIFEST_VERSION: u32 = 1;
/// Data-RAM word where the host posts the phase number for a hart.
pub const GO_OFFSET: u32 = 0;
/// Data-RAM word where a hart acknowledges a finished phase.
pub const DONE_OFFSET: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pipelined,
    Distributed,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pipelined" => Ok(Mode::Pipelined),
            "distributed" => Ok(Mode::Distributed),
            _ => Err(Error::InvalidModel(format!("unknown mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Pipelined => "pipelined",
            Mode::Distributed => "distributed",
        })
    }
}

/// Job-descriptor fields a sweep steps between jobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepField {
    ActBase,
    WgtBase,
    ScalerBase,
    BiasBase,
    DestBase,
}

impl SweepField {
    const ALL: [SweepField; 5] =
        [SweepField::ActBase, SweepField::WgtBase, SweepField::ScalerBase, SweepField::BiasBase, SweepField::DestBase];

    fn csr_offset(self) -> usize {
        match self {
            SweepField::ActBase => AGU_ACT,
            SweepField::WgtBase => AGU_WGT,
            SweepField::ScalerBase => AGU_SCALER,
            SweepField::BiasBase => AGU_BIAS,
            SweepField::DestBase => DEST_BASE,
        }
    }

    fn register(self) -> &'static str {
        match self {
            SweepField::ActBase => "s2",
            SweepField::WgtBase => "s3",
            SweepField::ScalerBase => "s4",
            SweepField::BiasBase => "s5",
            SweepField::DestBase => "s6",
        }
    }

    fn slot(self, job: &mut JobDescriptor) -> &mut u32 {
        match self {
            SweepField::ActBase => &mut job.agu_act.base,
            SweepField::WgtBase => &mut job.agu_wgt.base,
            SweepField::ScalerBase => &mut job.agu_scaler.base,
            SweepField::BiasBase => &mut job.agu_bias.base,
            SweepField::DestBase => &mut job.dest_base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepLoop {
    pub count: u32,
    pub steps: Vec<(SweepField, i64)>,
}

/// A template job repeated over up to two loops, outer loop first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sweep {
    pub template: JobDescriptor,
    pub loops: Vec<SweepLoop>,
}

impl Sweep {
    pub fn expand(&self) -> Vec<JobDescriptor> {
        let mut out = vec![self.template];
        for lp in &self.loops {
            out = out
                .into_iter()
                .flat_map(|job| {
                    (0..lp.count as i64).map(move |i| {
                        let mut j = job;
                        for &(f, step) in &lp.steps {
                            let slot = f.slot(&mut j);
                            *slot = (*slot as i64 + i * step) as u32;
                        }
                        j
                    })
                })
                .collect();
        }
        out
    }

    pub fn jobs(&self) -> u64 {
        self.loops.iter().map(|l| l.count as u64).product()
    }

    pub fn mvp_cycles(&self) -> u64 {
        self.template.countdown as u64 * self.jobs()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MvuWork {
    pub mvu: u8,
    pub dest_mask: u8,
    /// Output rows (convolution) or output-channel sets (matrix) assigned.
    pub units: (usize, usize),
    /// Input rows this MVU reads.
    pub input_rows: (usize, usize),
    pub sweeps: Vec<Sweep>,
    pub mvp_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub name: String,
    pub kind: LayerKind,
    pub input: Dims,
    pub conv_out: Dims,
    pub output: Dims,
    pub f_h: usize,
    pub f_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool: usize,
    pub relu: bool,
    pub prec_a: Precision,
    pub prec_w: Precision,
    pub prec_out: Precision,
    pub quant_shift: u32,
    pub scaler_enable: bool,
    pub tiles: TilePlan,
    pub in_layout: ActLayout,
    pub out_layout: ActLayout,
    /// The consumer sees this layer's output flattened to one row.
    pub out_flatten: bool,
    pub segment: usize,
    pub seq: u32,
    pub work: Vec<MvuWork>,
    /// Output rows computed by the host.
    pub edge_rows: Vec<usize>,
    pub mvp_cycles: u64,
}

impl LayerPlan {
    pub fn quant_msb(&self) -> u32 {
        self.quant_shift + self.prec_out.bits() - 1
    }

    /// Destination address of output pixel `(y, x)`, channel set 0, plane 0.
    pub fn dest_pixel(&self, y: usize, x: usize) -> u32 {
        if self.out_flatten {
            self.out_layout.addr(0, (y * self.output.cols + x) as u32, 0, 0)
        } else {
            self.out_layout.addr(y as u32, x as u32, 0, 0)
        }
    }

    fn dest_row_step(&self) -> i64 {
        if self.output.rows < 2 {
            return 0;
        }
        self.dest_pixel(1, 0) as i64 - self.dest_pixel(0, 0) as i64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MvuImage {
    pub mvu: u8,
    pub weight_offset: usize,
    pub weight_rows: usize,
    pub scaler_offset: usize,
    pub scaler_rows: usize,
    pub bias_offset: usize,
    pub bias_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub seq: u32,
    pub layer: usize,
    pub harts: Vec<u8>,
}

/// One program overlay with the RAM images loaded alongside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub index: usize,
    pub images: Vec<MvuImage>,
    pub phases: Vec<PhasePlan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub region_bytes: u32,
    pub go_offset: u32,
    pub done_offset: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub model: String,
    pub clock_hz: f64,
    pub mode: Mode,
    pub memory: MemoryConfig,
    pub input_shape: Vec<usize>,
    pub input_precision: Precision,
    pub output_shape: Vec<usize>,
    pub output_precision: Precision,
    /// MVU holding the final output, when it stays in an MVU.
    pub output_mvu: Option<u8>,
    pub layers: Vec<LayerPlan>,
    pub segments: Vec<SegmentPlan>,
    pub protocol: Protocol,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledJob {
    pub segment: usize,
    pub seq: u32,
    pub layer: usize,
    pub mvu: u8,
    pub job: JobDescriptor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledProgram {
    pub manifest: Manifest,
    /// Per-MVU images, all segments concatenated.
    pub weights: Vec<Vec<WeightRow>>,
    pub scaler: Vec<Vec<ScalerRow>>,
    pub bias: Vec<Vec<BiasRow>>,
    pub asm: String,
    pub schedule: Vec<ScheduledJob>,
}

fn split(n: usize, parts: usize, i: usize) -> Range<usize> {
    let chunk = n.div_ceil(parts);
    (i * chunk).min(n)..((i + 1) * chunk).min(n)
}

fn intersect(a: Range<usize>, b: &Range<usize>) -> Range<usize> {
    let lo = a.start.max(b.start);
    lo..a.end.min(b.end).max(lo)
}

fn agu(base: u32, loops: &[(u32, i64)]) -> Result<AguConfig> {
    AguConfig::from_strides(base, loops)
}

fn template(plan: &LayerPlan, dest_mask: u8) -> JobDescriptor {
    JobDescriptor {
        prec_a: plan.prec_a,
        prec_w: plan.prec_w,
        agu_act: AguConfig::default(),
        agu_wgt: AguConfig::default(),
        agu_scaler: AguConfig::default(),
        agu_bias: AguConfig::default(),
        agu_out: AguConfig::default(),
        reduce_depth: 1,
        countdown: 0,
        scaler_enable: plan.scaler_enable,
        pool_window: 1,
        relu_enable: plan.relu,
        quant_msb: plan.quant_msb(),
        quant_bits: plan.prec_out.bits(),
        dest_mask,
        dest_base: 0,
    }
}

fn countdown(job: &JobDescriptor) -> Result<u32> {
    let c = job.agu_act.len() * (job.prec_a.bits() * job.prec_w.bits()) as u64;
    u32::try_from(c).map_err(|_| Error::CapacityExceeded(format!("job of {c} cycles overflows the countdown")))
}

/// Jobs for output rows `rows` of a convolution.
fn conv_sweeps(plan: &LayerPlan, rows: Range<usize>, dest_mask: u8) -> Result<Vec<Sweep>> {
    if rows.is_empty() {
        return Ok(vec![]);
    }
    let t = &plan.tiles;
    let (b_a, b_w) = (plan.prec_a.bits() as i64, plan.prec_w.bits() as i64);
    let inl = &plan.in_layout;
    let (pp, rp) = (inl.pixel_pitch() as i64, inl.row_pitch() as i64);
    let (s, p, k) = (plan.stride as i64, plan.padding as i64, plan.pool as i64);
    let (fwcb, fh) = ((t.f_w * t.cb) as u32, t.f_h as u32);
    let set_rows = t.rows_per_set() as i64;
    let b_out = plan.prec_out.bits() as i64;
    let out_pp = plan.out_layout.pixel_pitch() as i64;
    let cos = t.cos as u32;
    let w_out = plan.conv_out.cols as u32;
    let mut job = template(plan, dest_mask);
    job.reduce_depth = 2;
    let y0 = rows.start as i64;
    let n = rows.len() as u32;
    let act_base = |conv_row: i64| (inl.base as i64 + (conv_row * s - p) * rp) as u32;
    if k == 1 {
        job.agu_act = agu(act_base(y0), &[(fwcb, b_a), (fh, rp), (cos, 0), (w_out, s * pp)])?;
        job.agu_wgt = agu(0, &[(fwcb, b_w), (fh, (t.f_w * t.cb) as i64 * b_w), (cos, set_rows), (w_out, 0)])?;
        job.agu_scaler = agu(0, &[(cos, 1), (w_out, 0)])?;
        job.agu_bias = job.agu_scaler;
        job.agu_out = agu(0, &[(cos, b_out), (w_out, out_pp)])?;
        job.dest_base = plan.dest_pixel(rows.start, 0);
        job.countdown = countdown(&job)?;
        return Ok(vec![Sweep {
            template: job,
            loops: vec![SweepLoop {
                count: n,
                steps: vec![(SweepField::ActBase, s * rp), (SweepField::DestBase, plan.dest_row_step())],
            }],
        }]);
    }
    let (kk, wp) = (k as u32, plan.output.cols as u32);
    job.agu_act = agu(act_base(y0 * k), &[(fwcb, b_a), (fh, rp), (kk, s * pp), (kk, s * rp), (wp, k * s * pp)])?;
    job.agu_wgt = agu(0, &[(fwcb, b_w), (fh, (t.f_w * t.cb) as i64 * b_w), (kk * kk * wp, 0)])?;
    job.agu_scaler = agu(0, &[(kk * kk * wp, 0)])?;
    job.agu_bias = job.agu_scaler;
    job.agu_out = agu(0, &[(wp, out_pp)])?;
    job.pool_window = kk * kk;
    job.dest_base = plan.dest_pixel(rows.start, 0);
    job.countdown = countdown(&job)?;
    Ok(vec![Sweep {
        template: job,
        loops: vec![
            SweepLoop {
                count: n,
                steps: vec![(SweepField::ActBase, k * s * rp), (SweepField::DestBase, plan.dest_row_step())],
            },
            SweepLoop {
                count: cos,
                steps: vec![
                    (SweepField::WgtBase, set_rows),
                    (SweepField::ScalerBase, 1),
                    (SweepField::BiasBase, 1),
                    (SweepField::DestBase, b_out),
                ],
            },
        ],
    }])
}

/// Jobs for output-channel sets `sets` of a matrix layer, every input vector.
fn matrix_sweeps(plan: &LayerPlan, sets: Range<usize>, dest_mask: u8) -> Result<Vec<Sweep>> {
    if sets.is_empty() {
        return Ok(vec![]);
    }
    let t = &plan.tiles;
    let (b_a, b_w) = (plan.prec_a.bits() as i64, plan.prec_w.bits() as i64);
    let kb = t.cb as u32;
    let ncos = sets.len() as u32;
    let b_out = plan.prec_out.bits() as i64;
    let mut job = template(plan, dest_mask);
    job.agu_act = agu(plan.in_layout.base, &[(kb, b_a), (ncos, 0)])?;
    job.agu_wgt = agu((sets.start * t.rows_per_set()) as u32, &[(kb, b_w), (ncos, kb as i64 * b_w)])?;
    job.agu_scaler = agu(sets.start as u32, &[(ncos, 1)])?;
    job.agu_bias = job.agu_scaler;
    job.agu_out = agu(0, &[(ncos, b_out)])?;
    job.dest_base = plan.out_layout.addr(0, 0, sets.start as u32, 0);
    job.countdown = countdown(&job)?;
    let loops = vec![SweepLoop {
        count: plan.input.rows as u32,
        steps: vec![
            (SweepField::ActBase, plan.in_layout.row_pitch() as i64),
            (SweepField::DestBase, plan.out_layout.row_pitch() as i64),
        ],
    }];
    Ok(vec![Sweep { template: job, loops }])
}

fn input_rows_for(plan: &LayerPlan, units: &Range<usize>) -> (usize, usize) {
    if plan.kind != LayerKind::Conv2d {
        return (0, plan.input.rows);
    }
    if units.is_empty() {
        return (0, 0);
    }
    let k = plan.pool;
    let (c0, c1) = (units.start * k, units.end * k);
    let lo = c0 * plan.stride - plan.padding;
    let hi = (c1 - 1) * plan.stride - plan.padding + plan.f_h;
    (lo, hi)
}

fn base_plan(layer: &Layer, in_layout: ActLayout, out_layout: ActLayout, out_flatten: bool) -> Result<LayerPlan> {
    let tiles = tile_and_pad(layer)?;
    let edge_rows = if layer.kind == LayerKind::Conv2d {
        let mvu = mvu_output_rows(layer);
        (0..layer.output.rows).filter(|r| !mvu.contains(r)).collect()
    } else {
        vec![]
    };
    Ok(LayerPlan {
        name: layer.name.clone(),
        kind: layer.kind,
        input: layer.input,
        conv_out: layer.conv_out,
        output: layer.output,
        f_h: layer.f_h,
        f_w: layer.f_w,
        stride: layer.stride,
        padding: layer.padding,
        pool: layer.pool,
        relu: layer.relu,
        prec_a: layer.prec_a,
        prec_w: layer.prec_w,
        prec_out: layer.prec_out,
        quant_shift: layer.quant_shift,
        scaler_enable: layer.scaler_enabled(),
        tiles,
        in_layout,
        out_layout,
        out_flatten,
        segment: 0,
        seq: 0,
        work: vec![],
        edge_rows,
        mvp_cycles: 0,
    })
}

fn in_layout_of(layer: &Layer, base: u32) -> ActLayout {
    let pad = if layer.kind == LayerKind::Conv2d { layer.padding } else { 0 };
    ActLayout::new(base, layer.input, pad, layer.prec_a.bits())
}

fn plain_out_layout(layer: &Layer, base: u32) -> ActLayout {
    ActLayout::new(base, layer.output, 0, layer.prec_out.bits())
}

fn add_work(plan: &mut LayerPlan, mvu: u8, dest_mask: u8, units: Range<usize>) -> Result<()> {
    let sweeps = if plan.kind == LayerKind::Conv2d {
        let rows = intersect(units.clone(), &mvu_rows_of(plan));
        conv_sweeps(plan, rows, dest_mask)?
    } else {
        matrix_sweeps(plan, units.clone(), dest_mask)?
    };
    let mvp_cycles = sweeps.iter().map(Sweep::mvp_cycles).sum();
    let input_rows = if plan.kind == LayerKind::Conv2d {
        input_rows_for(plan, &intersect(units.clone(), &mvu_rows_of(plan)))
    } else {
        (0, plan.input.rows)
    };
    plan.mvp_cycles += mvp_cycles;
    plan.work.push(MvuWork { mvu, dest_mask, units: (units.start, units.end), input_rows, sweeps, mvp_cycles });
    Ok(())
}

fn mvu_rows_of(plan: &LayerPlan) -> Range<usize> {
    let lo = (0..plan.output.rows).find(|r| !plan.edge_rows.contains(r)).unwrap_or(plan.output.rows);
    let hi = (lo..plan.output.rows).take_while(|r| !plan.edge_rows.contains(r)).last().map_or(lo, |r| r + 1);
    lo..hi
}

fn check_capacity(what: &str, used: usize, depth: usize) -> Result<()> {
    if used > depth {
        return Err(Error::CapacityExceeded(format!("{what} needs {used} entries, RAM holds {depth}")));
    }
    Ok(())
}

fn check_layer_fits(layer: &Layer, plan: &LayerPlan, mem: &MemoryConfig) -> Result<()> {
    check_capacity(&format!("weights of `{}`", layer.name), plan.tiles.rows(), mem.weight_depth)?;
    check_capacity(&format!("scalers of `{}`", layer.name), plan.tiles.cos, mem.scaler_depth)?;
    Ok(())
}

struct Images {
    weights: Vec<Vec<WeightRow>>,
    scaler: Vec<Vec<ScalerRow>>,
    bias: Vec<Vec<BiasRow>>,
}

impl Images {
    fn new() -> Self {
        Images { weights: vec![vec![]; NUM_MVUS], scaler: vec![vec![]; NUM_MVUS], bias: vec![vec![]; NUM_MVUS] }
    }

    fn add(&mut self, mvu: usize, layer: &Layer, plan: &LayerPlan) -> Result<MvuImage> {
        let w = export_weights(&plan.tiles, &layer.weights)?;
        let s = export_scaler(layer.c_out(), |c| layer.scale_of(c));
        let b = export_bias(layer.c_out(), |c| layer.bias_of(c));
        let img = MvuImage {
            mvu: mvu as u8,
            weight_offset: self.weights[mvu].len(),
            weight_rows: w.len(),
            scaler_offset: self.scaler[mvu].len(),
            scaler_rows: s.len(),
            bias_offset: self.bias[mvu].len(),
            bias_rows: b.len(),
        };
        self.weights[mvu].extend(w);
        self.scaler[mvu].extend(s);
        self.bias[mvu].extend(b);
        Ok(img)
    }
}

/// Compiles with the default RAM sizes.
pub fn compile(model: &Model, mode: Mode) -> Result<CompiledProgram> {
    compile_with(model, mode, &MemoryConfig::default())
}

pub fn compile_with(model: &Model, mode: Mode, mem: &MemoryConfig) -> Result<CompiledProgram> {
    if model.layers.is_empty() {
        return Err(Error::InvalidModel("model has no layers".into()));
    }
    for l in &model.layers {
        if !matches!(l.kind, LayerKind::Conv2d | LayerKind::Gemm | LayerKind::Gemv) {
            return Err(Error::UnsupportedOp(format!(
                "standalone {:?} layer `{}`; fuse it into the preceding convolution",
                l.kind, l.name
            )));
        }
    }
    for w in model.layers.windows(2) {
        if w[1].kind == LayerKind::Conv2d && w[0].kind != LayerKind::Conv2d {
            return Err(Error::UnsupportedOp(format!(
                "convolution `{}` fed by matrix layer `{}`",
                w[1].name, w[0].name
            )));
        }
    }
    let mut images = Images::new();
    let mut plans = vec![];
    let mut segments = vec![];
    let depth = mem.activation_depth;
    let n = model.layers.len();
    let output_mvu;
    match mode {
        Mode::Pipelined => {
            let mut seq = 0;
            for (lap, chunk) in (0..n).collect::<Vec<_>>().chunks(LAP_LAYERS).enumerate() {
                let mut seg = SegmentPlan { index: lap, images: vec![], phases: vec![] };
                for &i in chunk {
                    let layer = &model.layers[i];
                    let mvu = i % NUM_MVUS;
                    let in_layout = in_layout_of(layer, 0);
                    check_capacity(&format!("input of `{}`", layer.name), in_layout.end() as usize, depth)?;
                    let (out_layout, flatten, dest) = if i + 1 < n {
                        let next = &model.layers[i + 1];
                        (in_layout_of(next, 0), next.is_matrix() && layer.kind == LayerKind::Conv2d, (i + 1) % NUM_MVUS)
                    } else {
                        (plain_out_layout(layer, in_layout.end()), false, mvu)
                    };
                    check_capacity(&format!("output of `{}`", layer.name), out_layout.end() as usize, depth)?;
                    let mut plan = base_plan(layer, in_layout, out_layout, flatten)?;
                    check_layer_fits(layer, &plan, mem)?;
                    seq += 1;
                    plan.segment = lap;
                    plan.seq = seq;
                    let all = if layer.kind == LayerKind::Conv2d { 0..layer.output.rows } else { 0..plan.tiles.cos };
                    add_work(&mut plan, mvu as u8, 1 << dest, all)?;
                    seg.images.push(images.add(mvu, layer, &plan)?);
                    seg.phases.push(PhasePlan { seq, layer: i, harts: vec![mvu as u8] });
                    plans.push(plan);
                }
                segments.push(seg);
            }
            output_mvu = Some(((n - 1) % NUM_MVUS) as u8);
        }
        Mode::Distributed => {
            for (i, layer) in model.layers.iter().enumerate() {
                let in_layout = in_layout_of(layer, 0);
                let out_layout = plain_out_layout(layer, in_layout.end());
                check_capacity(&format!("input and output of `{}`", layer.name), out_layout.end() as usize, depth)?;
                let mut plan = base_plan(layer, in_layout, out_layout, false)?;
                check_layer_fits(layer, &plan, mem)?;
                plan.segment = i;
                plan.seq = i as u32 + 1;
                let total = if layer.kind == LayerKind::Conv2d { layer.output.rows } else { plan.tiles.cos };
                let mut seg = SegmentPlan { index: i, images: vec![], phases: vec![] };
                let mut harts = vec![];
                for m in 0..NUM_MVUS {
                    let units = split(total, NUM_MVUS, m);
                    add_work(&mut plan, m as u8, 1 << m, units)?;
                    if !plan.work[m].sweeps.is_empty() {
                        harts.push(m as u8);
                    }
                    seg.images.push(images.add(m, layer, &plan)?);
                }
                seg.phases.push(PhasePlan { seq: plan.seq, layer: i, harts });
                segments.push(seg);
                plans.push(plan);
            }
            output_mvu = None;
        }
    }
    let asm = emit_program(&plans, &segments)?;
    let mut schedule = vec![];
    for (li, p) in plans.iter().enumerate() {
        for w in &p.work {
            for sw in &w.sweeps {
                for job in sw.expand() {
                    schedule.push(ScheduledJob { segment: p.segment, seq: p.seq, layer: li, mvu: w.mvu, job });
                }
            }
        }
    }
    let first = &model.layers[0];
    let last = &model.layers[n - 1];
    Ok(CompiledProgram {
        manifest: Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            model: model.name.clone(),
            clock_hz: model.clock_hz,
            mode,
            memory: *mem,
            input_shape: model.input_shape.clone(),
            input_precision: first.prec_a,
            output_shape: last.output_shape.clone(),
            output_precision: last.prec_out,
            output_mvu,
            layers: plans,
            segments,
            protocol: Protocol {
                region_bytes: HART_REGION_BYTES as u32,
                go_offset: GO_OFFSET,
                done_offset: DONE_OFFSET,
            },
        },
        weights: images.weights,
        scaler: images.scaler,
        bias: images.bias,
        asm,
        schedule,
    })
}

/// Assembly writer that tracks each hart's MVU registers so only changed
/// registers are written.
struct Emitter {
    out: String,
    state: Vec<MvuCsrs>,
}

fn is_status_reg(off: usize) -> bool {
    matches!(off, START | STATUS | IRQ | MVP_CYCLES)
}

impl Emitter {
    fn line(&mut self, s: impl AsRef<str>) {
        self.out.push_str("    ");
        self.out.push_str(s.as_ref());
        self.out.push('\n');
    }

    fn label(&mut self, l: &str) {
        let _ = writeln!(self.out, "{l}:");
    }

    fn csr_write(&mut self, off: usize, v: u32) {
        let name = csr_name(MVU_CSR_BASE + off as u16).expect("MVU register has a name");
        if v < 32 {
            self.line(format!("csrwi {name}, {v}"));
        } else {
            self.line(format!("li t0, {v:#x}"));
            self.line(format!("csrw {name}, t0"));
        }
    }

    fn add_step(&mut self, reg: &str, step: i64) {
        let step = step as i32;
        if step == 0 {
            return;
        }
        if (-2048..2048).contains(&step) {
            self.line(format!("addi {reg}, {reg}, {step}"));
        } else {
            self.line(format!("li t1, {step}"));
            self.line(format!("add {reg}, {reg}, t1"));
        }
    }

    fn issue(&mut self, hart: usize, label: &str, varying: &[SweepField]) {
        for f in varying {
            let name = csr_name(MVU_CSR_BASE + f.csr_offset() as u16).unwrap();
            self.line(format!("csrw {name}, {}", f.register()));
        }
        // wait for a free slot in the job queue
        self.label(&format!("{label}_q"));
        self.line("csrr t0, mvu_status");
        self.line("andi t0, t0, 2");
        self.line(format!("bnez t0, {label}_q"));
        self.line("csrwi mvu_start, 1");
        let _ = hart;
    }

    fn sweep(&mut self, hart: usize, label: &str, sw: &Sweep) {
        let varying: Vec<SweepField> = SweepField::ALL
            .into_iter()
            .filter(|f| sw.loops.iter().any(|l| l.steps.iter().any(|&(g, s)| g == *f && s != 0)))
            .collect();
        let tmpl = MvuCsrs::from_descriptor(&sw.template);
        for off in 0..MVU_CSR_COUNT {
            if is_status_reg(off) || varying.iter().any(|f| f.csr_offset() == off) {
                continue;
            }
            if tmpl.0[off] != self.state[hart].0[off] {
                self.csr_write(off, tmpl.0[off]);
            }
        }
        for f in &varying {
            self.line(format!("li {}, {:#x}", f.register(), tmpl.0[f.csr_offset()]));
        }
        let step_of =
            |lp: &SweepLoop, f: SweepField| lp.steps.iter().filter(|(g, _)| *g == f).map(|(_, s)| *s).sum::<i64>();
        match sw.loops.as_slice() {
            [] => self.issue(hart, label, &varying),
            [inner] => {
                self.line(format!("li s8, {}", inner.count));
                self.label(&format!("{label}_i"));
                self.issue(hart, label, &varying);
                for &f in &varying {
                    self.add_step(f.register(), step_of(inner, f));
                }
                self.line("addi s8, s8, -1");
                self.line(format!("bnez s8, {label}_i"));
            }
            [outer, inner] => {
                self.line(format!("li s7, {}", outer.count));
                self.label(&format!("{label}_o"));
                self.line(format!("li s8, {}", inner.count));
                self.label(&format!("{label}_i"));
                self.issue(hart, label, &varying);
                for &f in &varying {
                    self.add_step(f.register(), step_of(inner, f));
                }
                self.line("addi s8, s8, -1");
                self.line(format!("bnez s8, {label}_i"));
                for &f in &varying {
                    self.add_step(f.register(), step_of(outer, f) - inner.count as i64 * step_of(inner, f));
                }
                self.line("addi s7, s7, -1");
                self.line(format!("bnez s7, {label}_o"));
            }
            _ => unreachable!("sweeps have at most two loops"),
        }
        if let Some(last) = sw.expand().last() {
            self.state[hart] = MvuCsrs::from_descriptor(last);
        }
    }
}

fn emit_program(plans: &[LayerPlan], segments: &[SegmentPlan]) -> Result<String> {
    let mut e = Emitter { out: String::new(), state: vec![MvuCsrs::default(); NUM_HARTS] };
    for seg in segments {
        let _ = writeln!(e.out, ".segment {}", seg.index);
        for h in 0..NUM_HARTS {
            let _ = writeln!(e.out, ".hart {h}");
            let phase = seg.phases.iter().find(|p| p.harts.contains(&(h as u8)));
            if let Some(ph) = phase {
                let plan = &plans[ph.layer];
                let tag = format!("h{h}_g{}", seg.index);
                let _ = writeln!(e.out, "# layer {} ({})", ph.layer, plan.name);
                e.line(format!("li t2, {}", h * HART_REGION_BYTES));
                e.label(&format!("{tag}_go"));
                e.line(format!("lw t0, {GO_OFFSET}(t2)"));
                e.line(format!("li t1, {}", ph.seq));
                e.line(format!("bne t0, t1, {tag}_go"));
                let work = plan.work.iter().find(|w| w.mvu as usize == h).expect("phase hart has work");
                for (i, sw) in work.sweeps.iter().enumerate() {
                    e.sweep(h, &format!("{tag}_s{i}"), sw);
                }
                e.label(&format!("{tag}_idle"));
                e.line("csrr t0, mvu_status");
                e.line(format!("bnez t0, {tag}_idle"));
                e.line("csrwi mvu_irq, 1");
                e.line(format!("sw t1, {DONE_OFFSET}(t2)"));
            }
            e.line("ecall");
        }
    }
    Ok(e.out)
}

fn rows_to_bytes<T: Copy, const N: usize>(rows: &[[T; N]], f: impl Fn(T) -> Vec<u8>) -> Vec<u8> {
    rows.iter().flat_map(|r| r.iter().flat_map(|&v| f(v))).collect()
}

fn bytes_to_rows<T: Copy + Default, const N: usize>(
    bytes: &[u8],
    width: usize,
    f: impl Fn(&[u8]) -> T,
) -> Result<Vec<[T; N]>> {
    let row_bytes = N * width;
    if !bytes.len().is_multiple_of(row_bytes) {
        return Err(Error::Format(format!("{} bytes is not a whole number of {row_bytes}-byte rows", bytes.len())));
    }
    Ok(bytes
        .chunks(row_bytes)
        .map(|row| {
            let mut r = [T::default(); N];
            for (i, c) in row.chunks(width).enumerate() {
                r[i] = f(c);
            }
            r
        })
        .collect())
}

impl CompiledProgram {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for m in 0..NUM_MVUS {
            std::fs::write(
                dir.join(format!("weights_mvu{m}.bin")),
                rows_to_bytes(&self.weights[m], |v: u64| v.to_le_bytes().to_vec()),
            )?;
            std::fs::write(
                dir.join(format!("scaler_mvu{m}.bin")),
                rows_to_bytes(&self.scaler[m], |v: u16| v.to_le_bytes().to_vec()),
            )?;
            std::fs::write(
                dir.join(format!("bias_mvu{m}.bin")),
                rows_to_bytes(&self.bias[m], |v: i32| v.to_le_bytes().to_vec()),
            )?;
        }
        std::fs::write(dir.join("program.asm"), &self.asm)?;
        std::fs::write(dir.join("schedule.json"), serde_json::to_string_pretty(&self.schedule)?)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<CompiledProgram> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest {} v{}", manifest.format, manifest.version)));
        }
        let mut p = CompiledProgram {
            manifest,
            weights: vec![],
            scaler: vec![],
            bias: vec![],
            asm: std::fs::read_to_string(dir.join("program.asm"))?,
            schedule: serde_json::from_str(&std::fs::read_to_string(dir.join("schedule.json"))?)?,
        };
        for m in 0..NUM_MVUS {
            p.weights.push(bytes_to_rows(&std::fs::read(dir.join(format!("weights_mvu{m}.bin")))?, 8, |c| {
                u64::from_le_bytes(c.try_into().unwrap())
            })?);
            p.scaler.push(bytes_to_rows(&std::fs::read(dir.join(format!("scaler_mvu{m}.bin")))?, 2, |c| {
                u16::from_le_bytes(c.try_into().unwrap())
            })?);
            p.bias.push(bytes_to_rows(&std::fs::read(dir.join(format!("bias_mvu{m}.bin")))?, 4, |c| {
                i32::from_le_bytes(c.try_into().unwrap())
            })?);
        }
        Ok(p)
    }

    pub fn laps(&self) -> usize {
        self.manifest.segments.len()
    }
}

/// Number of 64-channel blocks in `c` channels.
pub fn channel_blocks(c: usize) -> usize {
    blocks(c)
}
