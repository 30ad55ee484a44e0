pub mod container;
pub mod fabric;
pub mod kv;
pub mod orchestrator;
pub mod profile;
pub mod proto;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod vm;
pub mod vnf;

pub use orchestrator::{
    run_scenario, run_scenario_with, MetricsReport, MigrationBreakdown, OrchestratorError, RunOptions, SrtOutcome,
};
pub use profile::CalibrationProfile;
pub use report::{compare_expected, parse_expected, run_batch, to_csv, Comparison, ExpectedRecord};
pub use scenario::{parse_scenarios, standard_grid, Scenario, Virtualization};
pub use sim::{SimDuration, SimTime};
pub use vnf::{Flavor, VnfKind};
