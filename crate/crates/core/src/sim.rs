//! Cycle-level execution of a compiled program: the controller and the MVU
//! array advance one clock at a time while the host posts phases, loads
//! overlays and fills in edge rows.

use std::io::Write;

use crate::bitserial::LANES;
use crate::codegen::layout::{import_weights, read_tensor, write_rows, ActLayout};
use crate::codegen::{CompiledProgram, LayerPlan, Mode};
use crate::controller::{assemble, Controller, Retired, HART_REGION_BYTES, NUM_HARTS};
use crate::error::{Error, Result};
use crate::ir::LayerKind;
use crate::mvu::{quantser_lanes, scaler_apply, MemoryConfig, MvuArray, PoolRelu};
use crate::perf::{pipelined_stage_cycles, CycleReport, LayerCycles};

/// The controller and the eight MVUs sharing one clock.
pub struct Machine {
    pub controller: Controller,
    pub mvus: MvuArray,
    pub cycle: u64,
}

impl Machine {
    pub fn new(mem: &MemoryConfig) -> Self {
        Machine { controller: Controller::new(), mvus: MvuArray::new(mem), cycle: 0 }
    }

    /// One clock: the scheduled hart retires an instruction, then every MVU
    /// computes and arbitrates its write port.
    pub fn step(&mut self) -> Result<Option<Retired>> {
        let r = self.controller.step(&mut self.mvus)?;
        self.mvus.tick()?;
        self.cycle += 1;
        Ok(r)
    }

    /// Steps until `done` holds or `budget` clocks pass.
    pub fn run_until(
        &mut self,
        budget: u64,
        mut trace: Option<&mut (dyn Write + '_)>,
        done: impl Fn(&Machine) -> bool,
    ) -> Result<()> {
        let start = self.cycle;
        while !done(self) {
            if self.cycle - start >= budget {
                return Err(Error::Timeout(format!("no progress after {budget} cycles")));
            }
            let r = self.step()?;
            if let (Some(t), Some(r)) = (trace.as_deref_mut(), r) {
                writeln!(t, "{}", r.trace_line())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub output: Vec<i64>,
    pub report: CycleReport,
}

/// `(output row, column, output set, plane words)` computed on the host.
type EdgeWords = (usize, usize, usize, Vec<u64>);

/// Computes output rows of a convolution on the host, mirroring the MVU
/// pipeline after the dot products. Returns `(row, col, set, words)`.
fn host_conv_rows(
    plan: &LayerPlan,
    input: &[i64],
    weights: &[i64],
    scale: impl Fn(usize) -> u16,
    bias: impl Fn(usize) -> i32,
    rows: &[usize],
) -> Result<Vec<EdgeWords>> {
    let (h, w, c_in) = (plan.input.rows as i64, plan.input.cols as i64, plan.input.channels);
    let (s, p, k) = (plan.stride as i64, plan.padding as i64, plan.pool);
    let c_out = plan.conv_out.channels;
    let mut out = vec![];
    for &r in rows {
        for px in 0..plan.output.cols {
            for cos in 0..plan.tiles.cos {
                let mut pool = PoolRelu::new((k * k) as u32, plan.relu);
                let mut pooled = None;
                for dy in 0..k {
                    for dx in 0..k {
                        let (y, x) = ((r * k + dy) as i64, (px * k + dx) as i64);
                        let mut v = [0i64; LANES];
                        for (lane, slot) in v.iter_mut().enumerate() {
                            let co = cos * LANES + lane;
                            if co >= c_out {
                                continue;
                            }
                            let mut acc = 0i64;
                            for fh in 0..plan.f_h as i64 {
                                let iy = y * s - p + fh;
                                if iy < 0 || iy >= h {
                                    continue;
                                }
                                for fw in 0..plan.f_w as i64 {
                                    let ix = x * s - p + fw;
                                    if ix < 0 || ix >= w {
                                        continue;
                                    }
                                    let base = ((iy * w + ix) as usize) * c_in;
                                    for ci in 0..c_in {
                                        let wi = ((co * c_in + ci) * plan.f_h + fh as usize) * plan.f_w + fw as usize;
                                        acc += weights[wi] * input[base + ci];
                                    }
                                }
                            }
                            *slot = if plan.scaler_enable { scaler_apply(acc, scale(co), bias(co))? } else { acc };
                        }
                        pooled = pool.push(&v);
                    }
                }
                let pooled = pooled.expect("window complete");
                out.push((r, px, cos, quantser_lanes(&pooled, plan.quant_msb(), plan.prec_out.bits())?));
            }
        }
    }
    Ok(out)
}

/// Reads back the weights, scales and biases an MVU holds for `plan` and
/// computes the edge rows from `input`.
fn edge_words(plan: &LayerPlan, mvus: &MvuArray, mvu: usize, input: &[i64]) -> Result<Vec<EdgeWords>> {
    if plan.edge_rows.is_empty() {
        return Ok(vec![]);
    }
    let mem = &mvus.units[mvu].mem;
    let weights = import_weights(&plan.tiles, &mem.weight[..plan.tiles.rows()])?;
    host_conv_rows(
        plan,
        input,
        &weights,
        |co| mem.scaler[co / LANES][co % LANES],
        |co| mem.bias[co / LANES][co % LANES],
        &plan.edge_rows,
    )
}

fn write_edge(ram: &mut [u64], plan: &LayerPlan, words: &[(usize, usize, usize, Vec<u64>)]) {
    let b_out = plan.prec_out.bits() as usize;
    for (r, px, cos, w) in words {
        let a = plan.dest_pixel(*r, *px) as usize + cos * b_out;
        ram[a..a + w.len()].copy_from_slice(w);
    }
}

fn zero(ram: &mut [u64], layout: &ActLayout) {
    ram[layout.base as usize..layout.end() as usize].fill(0);
}

/// Runs `program` on `input` and returns the output tensor and cycle counts.
pub fn simulate(program: &CompiledProgram, input: &[i64]) -> Result<SimResult> {
    simulate_traced(program, input, None)
}

pub fn simulate_traced(
    program: &CompiledProgram,
    input: &[i64],
    mut trace: Option<&mut (dyn Write + '_)>,
) -> Result<SimResult> {
    let man = &program.manifest;
    let plans = &man.layers;
    let first = plans.first().ok_or_else(|| Error::InvalidModel("program has no layers".into()))?;
    if input.len() != first.input.numel() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} values, model expects {}",
            input.len(),
            first.input.numel()
        )));
    }
    for &v in input {
        man.input_precision.check(v)?;
    }
    let overlays = assemble(&program.asm)?;
    if overlays.segments.len() != man.segments.len() {
        return Err(Error::Format(format!(
            "{} program segments for {} planned segments",
            overlays.segments.len(),
            man.segments.len()
        )));
    }
    let mut m = Machine::new(&man.memory);
    let mut layer_cycles = vec![0u64; plans.len()];
    let mut stage_cycles = 0u64;
    let mut edge_rows = 0usize;
    // distributed mode keeps the current activation on the host
    let mut current = input.to_vec();
    if man.mode == Mode::Pipelined {
        let ram = &mut m.mvus.units[0].mem.activation;
        write_rows(ram, &first.in_layout, first.input, input, first.prec_a, 0..first.input.rows)?;
    }
    for seg in &man.segments {
        m.controller.load_program(&overlays.segments[seg.index])?;
        for img in &seg.images {
            let mem = &mut m.mvus.units[img.mvu as usize].mem;
            let u = img.mvu as usize;
            mem.load_weights(0, &program.weights[u][img.weight_offset..img.weight_offset + img.weight_rows])?;
            mem.load_scaler(0, &program.scaler[u][img.scaler_offset..img.scaler_offset + img.scaler_rows])?;
            mem.load_bias(0, &program.bias[u][img.bias_offset..img.bias_offset + img.bias_rows])?;
        }
        for h in 0..NUM_HARTS {
            m.controller.restart_hart(h);
        }
        let mut lap_max = 0u64;
        for phase in &seg.phases {
            let plan = &plans[phase.layer];
            let mut gather = vec![];
            match man.mode {
                Mode::Pipelined => {
                    let src = plan.work[0].mvu as usize;
                    let dest = plan.work[0].dest_mask.trailing_zeros() as usize;
                    if !plan.edge_rows.is_empty() {
                        let x =
                            read_tensor(&m.mvus.units[src].mem.activation, &plan.in_layout, plan.input, plan.prec_a)?;
                        let words = edge_words(plan, &m.mvus, src, &x)?;
                        zero(&mut m.mvus.units[dest].mem.activation, &plan.out_layout);
                        write_edge(&mut m.mvus.units[dest].mem.activation, plan, &words);
                    } else {
                        zero(&mut m.mvus.units[dest].mem.activation, &plan.out_layout);
                    }
                }
                Mode::Distributed => {
                    for w in &plan.work {
                        let ram = &mut m.mvus.units[w.mvu as usize].mem.activation;
                        zero(ram, &plan.in_layout);
                        zero(ram, &plan.out_layout);
                        if w.sweeps.is_empty() {
                            continue;
                        }
                        let rows = w.input_rows.0..w.input_rows.1.min(plan.input.rows);
                        write_rows(ram, &plan.in_layout, plan.input, &current, plan.prec_a, rows)?;
                    }
                    gather = vec![0u64; plan.out_layout.end() as usize];
                    let words = edge_words(plan, &m.mvus, 0, &current)?;
                    write_edge(&mut gather, plan, &words);
                }
            }
            edge_rows += plan.edge_rows.len();
            let before: Vec<u64> = m.mvus.units.iter().map(|u| u.mvp_cycles).collect();
            for &h in &phase.harts {
                m.controller.write_word((h as usize * HART_REGION_BYTES) as u32, phase.seq)?;
            }
            let budget = 1_000_000 + 64 * (plan.mvp_cycles + plan.out_layout.len() as u64);
            let harts = phase.harts.clone();
            let seq = phase.seq;
            m.run_until(budget, trace.as_deref_mut(), |m| {
                harts.iter().all(|&h| {
                    let h = h as usize;
                    m.controller.read_word((h * HART_REGION_BYTES + 4) as u32).ok() == Some(seq)
                        && !m.mvus.units[h].busy()
                })
            })?;
            let spent: Vec<u64> = m.mvus.units.iter().zip(&before).map(|(u, b)| u.mvp_cycles - b).collect();
            layer_cycles[phase.layer] = spent.iter().sum();
            match man.mode {
                Mode::Pipelined => lap_max = lap_max.max(layer_cycles[phase.layer]),
                Mode::Distributed => {
                    stage_cycles += spent.iter().copied().max().unwrap_or(0);
                    for w in &plan.work {
                        if w.sweeps.is_empty() {
                            continue;
                        }
                        let ram = &m.mvus.units[w.mvu as usize].mem.activation;
                        copy_units(&mut gather, ram, plan, w.units);
                    }
                    current = read_tensor(&gather, &plan.out_layout, plan.output, plan.prec_out)?;
                }
            }
        }
        stage_cycles += lap_max;
        m.run_until(1_000_000, trace.as_deref_mut(), |m| m.controller.all_halted())?;
    }
    let last = plans.last().unwrap();
    let output = match man.mode {
        Mode::Pipelined => {
            let u = man.output_mvu.unwrap_or(0) as usize;
            read_tensor(&m.mvus.units[u].mem.activation, &last.out_layout, last.output, last.prec_out)?
        }
        Mode::Distributed => current,
    };
    let per_layer =
        plans.iter().zip(&layer_cycles).map(|(p, &c)| LayerCycles { name: p.name.clone(), cycles: c }).collect();
    if man.mode == Mode::Pipelined {
        stage_cycles = pipelined_stage_cycles(&layer_cycles);
    }
    let mut report = CycleReport::new(&man.model, man.clock_hz, per_layer, stage_cycles);
    report.machine_cycles = Some(m.cycle);
    report.host_edge_rows = Some(edge_rows);
    Ok(SimResult { output, report })
}

/// Copies the output words an MVU produced for `units` into `image`.
fn copy_units(image: &mut [u64], ram: &[u64], plan: &LayerPlan, units: (usize, usize)) {
    let out = &plan.out_layout;
    let range = |lo: u32, hi: u32| lo as usize..hi as usize;
    match plan.kind {
        LayerKind::Conv2d => {
            for r in units.0..units.1 {
                if plan.edge_rows.contains(&r) {
                    continue;
                }
                let a = out.addr(r as u32, 0, 0, 0);
                let span = range(a, a + out.row_pitch());
                image[span.clone()].copy_from_slice(&ram[span]);
            }
        }
        _ => {
            for n in 0..out.rows {
                for x in 0..out.cols {
                    let lo = out.addr(n, x, units.0 as u32, 0);
                    let hi = out.addr(n, x, units.1 as u32, 0);
                    image[range(lo, hi)].copy_from_slice(&ram[range(lo, hi)]);
                }
            }
        }
    }
}
