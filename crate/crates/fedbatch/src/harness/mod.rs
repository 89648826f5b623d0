//! Policy-comparison harness: seeded fading simulations of batch-size
//! control policies with CSV traces and summary tables.

pub mod config;
pub mod policy;
pub mod sim;

pub use config::{
    parse_config, parse_config_str, DeviceSection, ExperimentConfig, Fading, LawSection,
    PolicySpec, TaskSection,
};
pub use policy::{
    policy_dbfl, policy_fixed, policy_proposed, policy_uniform_optimal, BatchPolicy, DbflPolicy,
    FixedPolicy, ProposedPolicy, UniformOptimalPolicy,
};
pub use sim::{
    render_comparison, run_policy_simulation, run_seed_comparison, summarize, write_traces_csv,
    PolicyComparison, RunSummary, SeedContext, SimulationMode, TraceRecord,
};
