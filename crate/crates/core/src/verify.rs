//! Runs random inputs through the simulator and the reference oracle and
//! compares the outputs element by element.

use serde::{Deserialize, Serialize};

use crate::codegen::{compile, Mode};
use crate::error::Result;
use crate::exec::ExecPolicy;
use crate::ir::Model;
use crate::oracle;
use crate::rng;
use crate::sim::simulate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub trials: usize,
    pub mode: Mode,
    pub policy: ExecPolicy,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 0, trials: 1, mode: Mode::Pipelined, policy: ExecPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub index: usize,
    pub expected: i64,
    pub actual: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub elements: usize,
    pub mismatches: usize,
    pub first_mismatch: Option<Mismatch>,
    /// Error raised by the simulator or the oracle, if any.
    pub error: Option<String>,
}

impl TrialOutcome {
    pub fn passed(&self) -> bool {
        self.mismatches == 0 && self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub model: String,
    pub mode: Mode,
    pub seed: u64,
    pub trials: Vec<TrialOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> usize {
        self.trials.iter().filter(|t| t.passed()).count()
    }

    pub fn all_passed(&self) -> bool {
        self.passed() == self.trials.len()
    }

    pub fn summary(&self) -> String {
        let status = if self.all_passed() { "PASS" } else { "FAIL" };
        let mut s =
            format!("{status} {} ({}): {}/{} trials match", self.model, self.mode, self.passed(), self.trials.len());
        for t in self.trials.iter().filter(|t| !t.passed()) {
            if let Some(e) = &t.error {
                s += &format!("\n  trial {}: {e}", t.trial);
            } else if let Some(m) = &t.first_mismatch {
                s += &format!(
                    "\n  trial {}: {} of {} elements differ, first at {} (expected {}, got {})",
                    t.trial, t.mismatches, t.elements, m.index, m.expected, m.actual
                );
            }
        }
        s
    }
}

/// Input of trial `trial` for `model` under `seed`.
pub fn trial_input(model: &Model, seed: u64, trial: usize) -> Vec<i64> {
    let first = &model.layers[0];
    rng::values_in(&mut rng::derive(seed, trial as u64), first.prec_a, first.input.numel())
}

/// Compiles `model` once and checks `opts.trials` random inputs.
pub fn verify(model: &Model, opts: &VerifyOptions) -> Result<VerifyReport> {
    let program = compile(model, opts.mode)?;
    let trials = opts.policy.map_range(opts.trials, |t| {
        let x = trial_input(model, opts.seed, t);
        let run = || -> Result<(Vec<i64>, Vec<i64>)> {
            let expected = oracle::infer(model, &x)?;
            let actual = simulate(&program, &x)?.output;
            Ok((expected, actual))
        };
        match run() {
            Ok((expected, actual)) => {
                let diffs: Vec<usize> =
                    (0..expected.len().max(actual.len())).filter(|&i| expected.get(i) != actual.get(i)).collect();
                TrialOutcome {
                    trial: t,
                    elements: expected.len(),
                    mismatches: diffs.len(),
                    first_mismatch: diffs.first().map(|&i| Mismatch {
                        index: i,
                        expected: expected.get(i).copied().unwrap_or_default(),
                        actual: actual.get(i).copied().unwrap_or_default(),
                    }),
                    error: None,
                }
            }
            Err(e) => TrialOutcome {
                trial: t,
                elements: 0,
                mismatches: 0,
                first_mismatch: None,
                error: Some(format!("{}: {e}", e.code())),
            },
        }
    });
    Ok(VerifyReport { model: model.name.clone(), mode: opts.mode, seed: opts.seed, trials })
}
