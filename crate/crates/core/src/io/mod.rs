//! Experiment configuration, task orchestration and result bundles.

mod bundle;
mod config;
mod run;

pub use bundle::{
    fmt_f64, sha256_hex, BundleHeader, ResultBundle, Summary, CONFIG_FILE, SUMMARY_FILE, TOOL_NAME, TOOL_VERSION,
};
pub use config::{
    Config, EdgeReactionSection, EdgeSection, FamilyName, GraphSection, InitialSection, ModeSection,
    ModulationSection, NoiseKindName, NoiseSection, Preset, ProbeSection, Profile, ReactionSection, SolverSection,
    Task,
};
pub use run::{run_config, RunOutput, EXIT_BLOW_UP_RATE, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK};
