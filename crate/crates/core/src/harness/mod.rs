//! Orchestration: datasets, evaluation, replay buffer and the end-to-end run.

pub mod data;
pub mod eval;
pub mod experiment;
pub mod replay;

pub use data::{
    branch_cells, build_sample, simulate_traversal, truth_state, Traversal, TraversalConfig, TraversalSample,
};
pub use eval::{
    best_of_n, gap_closing, iou, region_all, region_unobserved, CurvePoint, RegionReport, SetReport, WorldRecord,
};
pub use experiment::{
    evaluate, held_out_samples, load_stage_one, load_world_model, pseudo_corpus, report_json, run_experiment,
    sample_worlds, train_stage_one, train_stage_two, training_samples, EvalReport, ExperimentConfig,
};
pub use replay::ReplayBuffer;
