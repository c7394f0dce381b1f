use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::kernel::{size_class, CallsiteKind, KernelConfig};
use crate::mitigation::MitigationMode;
use crate::noise::{NoisePreset, NoiseProfile};
use crate::slab::CacheConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VulnKind {
    DoubleFree,
    InvalidFree,
    Uaf,
}

impl VulnKind {
    /// Frees the vulnerability performs on the vulnerable object.
    pub fn is_double_free(self) -> bool {
        matches!(self, VulnKind::DoubleFree | VulnKind::InvalidFree)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    PageSpray,
    SingleThreadObjectSpray,
    MultiProcessObjectSpray,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::SingleThreadObjectSpray,
        Strategy::MultiProcessObjectSpray,
        Strategy::PageSpray,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::PageSpray => "page_spray",
            Strategy::SingleThreadObjectSpray => "single_thread_object_spray",
            Strategy::MultiProcessObjectSpray => "multi_process_object_spray",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VictimKind {
    #[default]
    FunctionTable,
    Credential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Variants {
    #[serde(default)]
    pub cross_cache: bool,
    #[serde(default)]
    pub cred_overwrite: bool,
    #[serde(default)]
    pub remap_leak: bool,
}

/// When background noise runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseWindow {
    #[default]
    Always,
    /// Only in ticks after the target is released to its allocator: the slab
    /// discard for page spray, the slot free for object spray.
    AfterRelease,
}

/// Everything a trial needs. Serialized as the scenario file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub vuln_kind: VulnKind,
    #[serde(default)]
    pub variants: Variants,
    /// Vulnerable object's cache parameters; `name` is its type label.
    pub cache: CacheConfig,
    #[serde(default)]
    pub victim: VictimKind,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default = "default_callsite")]
    pub callsite: String,
    #[serde(default = "default_noise")]
    pub noise: NoisePreset,
    /// Replaces the preset's rates when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_profile: Option<NoiseProfile>,
    #[serde(default)]
    pub noise_window: NoiseWindow,
    #[serde(default)]
    pub rcu_grace: u64,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mitigation: MitigationMode,
    /// Double free without an interleaved padding free.
    #[serde(default)]
    pub consecutive_double_free: bool,
    /// Mean allocations injected into the vulnerable cache before each
    /// attacker padding free.
    #[serde(default)]
    pub interleave_noise_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub victim_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfeit_type: Option<String>,
    /// Object size of the cross-cache victim.
    #[serde(default = "default_cross_size")]
    pub cross_victim_size: usize,
    #[serde(default = "default_warmup")]
    pub warmup_ticks: u64,
    /// Pages (or ring blocks) the reclaim may use; twice the free-list depth
    /// at discard time when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spray_budget: Option<usize>,
    #[serde(default)]
    pub kernel: KernelSpec,
}

/// Machine shape for a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub zones: std::collections::BTreeMap<crate::page_allocator::Zone, u64>,
    pub page_size: usize,
    pub max_order: u8,
}

impl Default for KernelSpec {
    fn default() -> Self {
        let k = KernelConfig::default();
        Self {
            zones: k.zones,
            page_size: k.page_size,
            max_order: k.max_order,
        }
    }
}

fn default_strategy() -> Strategy {
    Strategy::PageSpray
}

fn default_callsite() -> String {
    "pipe_write".into()
}

fn default_noise() -> NoisePreset {
    NoisePreset::Idle
}

fn default_trials() -> u32 {
    1000
}

fn default_cross_size() -> usize {
    128
}

fn default_warmup() -> u64 {
    32
}

pub const DEFAULT_COUNTERFEIT_TYPE: &str = "msg_msg";
pub const DEFAULT_CROSS_VICTIM_TYPE: &str = "cross_victim";

impl Scenario {
    /// A noiseless page-spray scenario against a 256-byte object.
    pub fn new(vuln_kind: VulnKind) -> Self {
        Self {
            name: String::new(),
            vuln_kind,
            variants: Variants::default(),
            cache: CacheConfig::new("vuln_object", 256, 0),
            victim: VictimKind::FunctionTable,
            strategy: Strategy::PageSpray,
            callsite: default_callsite(),
            noise: NoisePreset::Idle,
            noise_profile: None,
            noise_window: NoiseWindow::Always,
            rcu_grace: 0,
            trials: default_trials(),
            seed: 0,
            mitigation: MitigationMode::None,
            consecutive_double_free: false,
            interleave_noise_rate: 0.0,
            padding_type: None,
            victim_type: None,
            counterfeit_type: None,
            cross_victim_size: default_cross_size(),
            warmup_ticks: default_warmup(),
            spray_budget: None,
            kernel: KernelSpec::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        let v = self.variants;
        if [v.cross_cache, v.cred_overwrite, v.remap_leak].iter().filter(|b| **b).count() > 1 {
            return bad("at most one variant may be enabled");
        }
        if (v.cross_cache || v.remap_leak) && self.vuln_kind != VulnKind::Uaf {
            return bad("cross_cache and remap_leak need a uaf vulnerability");
        }
        if (v.cross_cache || v.cred_overwrite || v.remap_leak) && self.strategy != Strategy::PageSpray {
            return bad("variants run with the page_spray strategy");
        }
        if v.cred_overwrite != (self.victim == VictimKind::Credential) {
            return bad("credential victims go with cred_overwrite");
        }
        if size_class(self.cache.object_size).is_none() || self.cache.object_size == 0 {
            return bad("object size outside kmalloc classes");
        }
        if v.cross_cache && size_class(self.cross_victim_size) == size_class(self.cache.object_size) {
            return bad("cross-cache victim must use a different size class");
        }
        if !(self.interleave_noise_rate.is_finite() && self.interleave_noise_rate >= 0.0) {
            return bad("interleave_noise_rate must be a non-negative number");
        }
        if let Some(p) = &self.noise_profile {
            if !p.is_valid() {
                return bad("noise rates must be non-negative");
            }
        }
        let remap = crate::kernel::default_registry()
            .callsites
            .iter()
            .find(|c| c.name == self.callsite)
            .map(|c| c.kind);
        match remap {
            None => return Err(SimError::UnknownCallsite(self.callsite.clone())),
            Some(CallsiteKind::Remap) if !v.remap_leak && self.strategy == Strategy::PageSpray => {}
            Some(k) if v.remap_leak && k != CallsiteKind::Remap => {
                return bad("remap_leak needs a remap callsite");
            }
            _ => {}
        }
        Ok(())
    }

    pub fn noise_profile(&self) -> NoiseProfile {
        self.noise_profile.clone().unwrap_or_else(|| self.noise.profile())
    }

    pub fn padding_type(&self) -> &str {
        self.padding_type.as_deref().unwrap_or(&self.cache.name)
    }

    pub fn victim_type(&self) -> &str {
        self.victim_type.as_deref().unwrap_or(&self.cache.name)
    }

    pub fn counterfeit_type(&self) -> &str {
        self.counterfeit_type.as_deref().unwrap_or(DEFAULT_COUNTERFEIT_TYPE)
    }

    /// Kernel configuration for one trial.
    pub fn kernel_config(&self, seed: u64) -> KernelConfig {
        KernelConfig {
            zones: self.kernel.zones.clone(),
            page_size: self.kernel.page_size,
            max_order: self.kernel.max_order,
            seed,
            freelist_random: self.cache.freelist_random,
            hardened: self.cache.hardened,
            cache_overrides: vec![self.cache.clone()],
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        crate::content_digest(&serde_json::to_vec(self).expect("scenario serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_with_defaults() {
        let s = Scenario::from_json(
            r#"{"vuln_kind":"double_free","cache":{"name":"x","object_size":256}}"#,
        )
        .unwrap();
        assert_eq!(s.trials, 1000);
        assert_eq!(s.strategy, Strategy::PageSpray);
        assert!(s.cache.hardened);
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.digest(), s.digest());
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut s = Scenario::new(VulnKind::DoubleFree);
        s.trials = 0;
        assert!(s.validate().is_err());
        let mut s = Scenario::new(VulnKind::DoubleFree);
        s.variants.remap_leak = true;
        assert!(s.validate().is_err());
        let mut s = Scenario::new(VulnKind::Uaf);
        s.callsite = "nope".into();
        assert!(matches!(s.validate(), Err(SimError::UnknownCallsite(_))));
        assert!(Scenario::from_json(r#"{"vuln_kind":"uaf","cache":{"name":"x","object_size":256},"bogus":1}"#).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = Scenario::new(VulnKind::Uaf);
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
