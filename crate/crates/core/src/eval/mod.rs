//! Metrics, the multi-run evaluation protocol and report rendering.

mod metrics;
mod protocol;
mod table;

pub use metrics::{binary_iou, iou, mean_iou, per_class_iou, Confusion, EpisodeResult};
pub use protocol::{
    eval_threads, evaluate_protocol, EvalReport, GroundTruthOracle, Predictor, ProtocolSpec, RunResult, Summary,
};
pub use table::{render_table, TableRow};
