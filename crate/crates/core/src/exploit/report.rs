use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{run_trial, run_trial_logged, FailureReason, TrialResult};
use super::scenario::{Scenario, Strategy};
use crate::error::{Result, SimError};
use crate::mitigation::{MitigationMode, TaggedEvent};
use crate::noise::NoisePreset;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub tool_version: String,
    pub scenario: String,
    pub scenario_digest: String,
    pub strategy: Strategy,
    pub noise: NoisePreset,
    pub mitigation: MitigationMode,
    pub seed: u64,
    pub trials: u32,
    pub successes: u32,
    pub rate: f64,
    pub failures: BTreeMap<FailureReason, u32>,
    /// ReuseOverlap events summed over all trials.
    pub overlap_count: usize,
    /// Trials whose success was not backed by any overlap; zero by construction.
    pub unbacked_successes: u32,
}

impl CampaignReport {
    fn from_results(scenario: &Scenario, results: &[TrialResult]) -> Self {
        let successes = results.iter().filter(|r| r.success).count() as u32;
        let mut failures = BTreeMap::new();
        for r in results {
            if let Some(f) = r.failure_reason {
                *failures.entry(f).or_insert(0) += 1;
            }
        }
        Self {
            tool_version: TOOL_VERSION.to_string(),
            scenario: scenario.name.clone(),
            scenario_digest: scenario.digest(),
            strategy: scenario.strategy,
            noise: scenario.noise,
            mitigation: scenario.mitigation,
            seed: scenario.seed,
            trials: results.len() as u32,
            successes,
            rate: successes as f64 / results.len() as f64,
            failures,
            overlap_count: results.iter().map(|r| r.overlaps).sum(),
            unbacked_successes: results.iter().filter(|r| r.success && r.overlaps == 0).count() as u32,
        }
    }

    pub fn csv_header() -> &'static str {
        "scenario,strategy,noise,mitigation,seed,trials,successes,rate,overlap_count,digest"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.4},{},{}",
            self.scenario,
            self.strategy.as_str(),
            match self.noise {
                NoisePreset::Idle => "idle",
                NoisePreset::Busy => "busy",
            },
            self.mitigation.as_str(),
            self.seed,
            self.trials,
            self.successes,
            self.rate,
            self.overlap_count,
            self.scenario_digest
        )
    }
}

fn check_trials(scenario: &Scenario) -> Result<()> {
    if scenario.trials == 0 {
        return Err(SimError::InvalidScenario("trials must be at least 1".into()));
    }
    scenario.validate()
}

/// Runs `scenario.trials` trials with seeds `seed..seed + trials`. Trials run
/// in parallel; results are aggregated in seed order.
pub fn run_campaign(scenario: &Scenario) -> Result<CampaignReport> {
    check_trials(scenario)?;
    let results = (0..scenario.trials as u64)
        .into_par_iter()
        .map(|i| run_trial(scenario, scenario.seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CampaignReport::from_results(scenario, &results))
}

/// As [`run_campaign`], also returning every trial's events tagged with its seed.
pub fn run_campaign_logged(scenario: &Scenario) -> Result<(CampaignReport, Vec<TaggedEvent>)> {
    check_trials(scenario)?;
    let runs = (0..scenario.trials as u64)
        .into_par_iter()
        .map(|i| run_trial_logged(scenario, scenario.seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<TrialResult> = runs.iter().map(|(r, _)| r.clone()).collect();
    let events = runs
        .into_iter()
        .flat_map(|(r, evs)| {
            evs.into_iter().map(move |event| TaggedEvent {
                trial: Some(r.seed),
                event,
            })
        })
        .collect();
    Ok((CampaignReport::from_results(scenario, &results), events))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub noise: NoisePreset,
    pub single_thread: f64,
    pub multi_process: f64,
    pub page_spray: f64,
}

/// Strategy × noise matrix over shared seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub tool_version: String,
    pub scenario: String,
    pub scenario_digest: String,
    pub seed: u64,
    pub trials: u32,
    pub rows: Vec<CompareRow>,
    pub campaigns: Vec<CampaignReport>,
}

impl CompareReport {
    pub fn rate(&self, noise: NoisePreset, strategy: Strategy) -> Option<f64> {
        self.campaigns
            .iter()
            .find(|c| c.noise == noise && c.strategy == strategy)
            .map(|c| c.rate)
    }
}

/// Runs the three strategies under Idle and Busy noise. The scenario's
/// strategy and noise fields are overwritten.
pub fn run_compare(scenario: &Scenario) -> Result<CompareReport> {
    check_trials(scenario)?;
    let mut campaigns = Vec::new();
    let mut rows = Vec::new();
    for noise in [NoisePreset::Idle, NoisePreset::Busy] {
        let mut rates = [0.0; 3];
        for (i, strategy) in Strategy::ALL.into_iter().enumerate() {
            let mut s = scenario.clone();
            s.noise = noise;
            s.noise_profile = None;
            s.strategy = strategy;
            let report = run_campaign(&s)?;
            rates[i] = report.rate;
            campaigns.push(report);
        }
        rows.push(CompareRow {
            noise,
            single_thread: rates[0],
            multi_process: rates[1],
            page_spray: rates[2],
        });
    }
    Ok(CompareReport {
        tool_version: TOOL_VERSION.to_string(),
        scenario: scenario.name.clone(),
        scenario_digest: scenario.digest(),
        seed: scenario.seed,
        trials: scenario.trials,
        rows,
        campaigns,
    })
}
