//! Run configs, the command-line front end, ablations, theorem checks and plots.

mod ablation;
mod cli;
mod config;
pub mod pipeline;
mod plot;
mod theory;

pub use ablation::{arms, run_ablation, run_arm, AblationAxis, AblationRow, AblationTable, Arm};
pub use cli::{cli, exit_code, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME};
pub use config::{AblationConfig, DataConfig, Profile, RunConfig, ScalesConfig, OUTPUT_ENV};
pub use pipeline::{
    evaluate, finetune, gen_data, load_dataset, oracle, oracle_tables, train_offline, write_metrics,
    CHECKPOINT_FINAL, CHECKPOINT_OFFLINE, DATASET_FILE, EVAL_FILE, EVAL_TRACES_FILE, METRICS_OFFLINE, METRICS_ONLINE,
    ORACLE_FILE, TRACES_FILE,
};
pub use plot::{curves_from_table, curves_svg, emit_plot, heatmap_svg, kstar_by_state, PlotKind, Series, Table};
pub use theory::{
    bootstrap_bound_slack, bootstrap_errors, dominance, expectile_agreement, expectile_grid_search, instance_hash,
    noise_immunity, perturbed_values, soundness_trials, sparse_line, value_flow_slack, verify_theory, DominanceOutcome,
    NoiseImmunityOutcome, NoiseMode, SoundnessOutcome, TheoryRecord, TheoryReport, TheorySettings,
};
