//! Matrix-Vector Units: RAMs, AGUs, the bit-serial MVP and the downstream
//! pipeline, plus the eight-unit array joined by the crossbar.

mod agu;
mod engine;
mod interconnect;
pub(crate) mod job;
mod memory;
mod pipeline;

pub use agu::{agu_sequence, AguConfig, AGU_LEVELS};
pub use engine::{run_job, run_mvp_job, CycleOutput, MvpEngine, Writeback};
pub use interconnect::{interconnect_cycle, AppliedWrite, Arbitration, InterconnectPacket, WriteSource, NUM_MVUS};
pub use job::{JobDescriptor, JobShape};
pub use memory::{BiasRow, MemoryConfig, MvuMemories, ScalerRow, WeightRow};
pub use pipeline::{pool_relu, quantser, quantser_lanes, scaler_apply, PoolRelu, MVP_OUTPUT_BITS};

use std::collections::VecDeque;

use crate::error::{Error, Result};

pub const STATUS_BUSY: u32 = 1;
pub const STATUS_QUEUE_FULL: u32 = 2;

#[derive(Debug, Clone, Copy)]
struct PendingWrite {
    mask: u8,
    write: Writeback,
}

/// One MVU with a one-deep job queue and a writeback FIFO.
///
/// A job is finished once its MVP sequence is done and every QuantSer word
/// has been written; the interrupt is raised at that point and the queued job,
/// if any, starts on the next cycle.
#[derive(Debug, Clone)]
pub struct Mvu {
    pub id: u8,
    pub mem: MvuMemories,
    engine: Option<MvpEngine>,
    queued: Option<JobDescriptor>,
    fifo: VecDeque<PendingWrite>,
    dest_mask: u8,
    draining: bool,
    irq: bool,
    pub mvp_cycles: u64,
    /// Every descriptor that started, in order.
    pub started: Vec<JobDescriptor>,
}

impl Mvu {
    pub fn new(id: u8, cfg: &MemoryConfig) -> Self {
        Mvu {
            id,
            mem: MvuMemories::new(cfg),
            engine: None,
            queued: None,
            fifo: VecDeque::new(),
            dest_mask: 0,
            draining: false,
            irq: false,
            mvp_cycles: 0,
            started: vec![],
        }
    }

    fn idle(&self) -> bool {
        self.engine.is_none() && !self.draining
    }

    pub fn busy(&self) -> bool {
        !self.idle() || self.queued.is_some()
    }

    pub fn status(&self) -> u32 {
        let mut s = 0;
        if self.busy() {
            s |= STATUS_BUSY;
        }
        if self.queued.is_some() {
            s |= STATUS_QUEUE_FULL;
        }
        s
    }

    /// Latches a job. It runs immediately when the unit is idle, otherwise it
    /// waits in the queue.
    pub fn start(&mut self, job: JobDescriptor) -> Result<()> {
        job.shape()?;
        if self.idle() && self.queued.is_none() {
            self.launch(job)
        } else if self.queued.is_none() {
            self.queued = Some(job);
            Ok(())
        } else {
            Err(Error::JobConfig(format!("MVU {} started with a full job queue", self.id)))
        }
    }

    fn launch(&mut self, job: JobDescriptor) -> Result<()> {
        self.engine = Some(MvpEngine::new(job, &self.mem)?);
        self.dest_mask = job.dest_mask;
        self.started.push(job);
        Ok(())
    }

    pub fn irq_pending(&self) -> bool {
        self.irq
    }

    pub fn clear_irq(&mut self) {
        self.irq = false;
    }

    /// One MVP cycle, if a job is computing.
    pub fn compute(&mut self) -> Result<()> {
        let Some(engine) = self.engine.as_mut() else {
            return Ok(());
        };
        let out = engine.step(&self.mem)?;
        self.mvp_cycles += 1;
        let mask = self.dest_mask;
        self.fifo.extend(out.writes.into_iter().map(|write| PendingWrite { mask, write }));
        if engine.done() {
            self.engine = None;
            self.draining = true;
        }
        Ok(())
    }

    /// Head of the writeback FIFO.
    fn request(&self) -> Option<PendingWrite> {
        self.fifo.front().copied()
    }

    fn delivered(&mut self, dest: u8) {
        if let Some(head) = self.fifo.front_mut() {
            head.mask &= !(1 << dest);
            if head.mask == 0 {
                self.fifo.pop_front();
            }
        }
    }

    fn settle(&mut self) -> Result<()> {
        if self.draining && self.fifo.is_empty() {
            self.draining = false;
            self.irq = true;
            if let Some(job) = self.queued.take() {
                self.launch(job)?;
            }
        }
        Ok(())
    }
}

/// The eight MVUs and their crossbar.
#[derive(Debug, Clone)]
pub struct MvuArray {
    pub units: Vec<Mvu>,
}

impl MvuArray {
    pub fn new(cfg: &MemoryConfig) -> Self {
        MvuArray { units: (0..NUM_MVUS as u8).map(|i| Mvu::new(i, cfg)).collect() }
    }

    pub fn busy(&self) -> bool {
        self.units.iter().any(Mvu::busy)
    }

    /// Advances every MVU by one clock: compute, then one round of write-port
    /// arbitration.
    pub fn tick(&mut self) -> Result<Vec<AppliedWrite>> {
        for u in self.units.iter_mut() {
            u.compute()?;
        }
        let mut packets = vec![];
        let mut local = vec![];
        for u in &self.units {
            if let Some(req) = u.request() {
                if req.mask == 1 << u.id {
                    local.push((u.id, req.write));
                } else {
                    packets.push(InterconnectPacket {
                        source_mvu: u.id,
                        dest_mask: req.mask,
                        dest_address: req.write.address,
                        word: req.write.word,
                    });
                }
            }
        }
        let arb = interconnect_cycle(&packets, &[], &local);
        for w in &arb.applied {
            self.units[w.dest_mvu as usize].mem.activation[w.write.address as usize] = w.write.word;
            let src = match w.source {
                WriteSource::Interconnect(s) => s,
                WriteSource::Local => w.dest_mvu,
                WriteSource::Controller => continue,
            };
            self.units[src as usize].delivered(w.dest_mvu);
        }
        for u in self.units.iter_mut() {
            u.settle()?;
        }
        Ok(arb.applied)
    }
}
