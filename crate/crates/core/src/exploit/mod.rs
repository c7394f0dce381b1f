//! The four-step page-spray exploit model and the object-spray baselines it
//! is compared against.

mod engine;
mod report;
mod scenario;

pub use engine::{
    run_trial, run_trial_logged, FailureReason, LayoutState, ReclaimOutcome, Trial, TrialResult,
    MAX_GROOM_ATTEMPTS, SPRAY_ACTORS, SPRAY_TOKEN,
};
pub use report::{
    run_campaign, run_campaign_logged, run_compare, CampaignReport, CompareReport, CompareRow, TOOL_VERSION,
};
pub use scenario::{
    KernelSpec, NoiseWindow, Scenario, Strategy, Variants, VictimKind, VulnKind, DEFAULT_COUNTERFEIT_TYPE,
    DEFAULT_CROSS_VICTIM_TYPE,
};
