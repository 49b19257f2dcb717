//! Task universe, training loop, evaluation, metrics, logs, and runs.

pub mod eval;
pub mod log;
pub mod metrics;
pub mod replay;
pub mod run;
pub mod trainer;
pub mod universe;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use eval::{evaluate, EvalOptions, EvalReport};
pub use log::{LogReader, LogRecord, LogWriter, LOG_SCHEMA_VERSION};
pub use metrics::{
    aggregate_step, f1, moving_average, precision, score_group, GroupObservation, GroupScores, MetaObs, SolutionObs,
    StepMetrics,
};
pub use replay::{analyze_log, observations, recompute, replay_log, GroupAnalysis, ReplayReport};
pub use run::{load_checkpoint, run, run_in_memory, step_records, RunConfig, RunOptions, RunSummary};
pub use trainer::{BcFlush, SlotSample, StepOutput, TrainState, TrainTelemetry, Trainer};
pub use universe::{gen_tasks, SimUniverseConfig, Universe};

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Meta = 1,
    Solution = 2,
    Batch = 3,
    Eval = 4,
    EvalMeta = 5,
    Universe = 6,
}

/// An independent stream for one `(seed, step, slot, purpose)` tuple.
pub fn stream(seed: u64, step: u64, slot: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, word) in [seed, step, slot, purpose as u64].iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
