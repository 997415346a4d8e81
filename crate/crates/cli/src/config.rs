//! Configuration files.
//!
//! A file describes one network, with powers in dBm, plus optional `campaign`,
//! `plan` and `gap` tables for the subcommands that need them.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hetnet_core::model::{
    dbm_to_mw, AccessMode, ChannelParams, ExclusionConfig, IntensityProfile, NetworkConfig, Tier1UeType, Tier2BsType,
    UeClass,
};
use hetnet_core::montecarlo::CorrelationTarget;
use hetnet_core::planner::{PlanningTargets, Utility};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "one")]
    pub hex_radius: f64,
    pub channel: ChannelParams,
    #[serde(default)]
    pub exclusion: ExclusionConfig,
    #[serde(default)]
    pub access: AccessMode,
    pub tier1: Vec<Tier1Entry>,
    #[serde(default)]
    pub tier2: Vec<Tier2Entry>,
    pub campaign: Option<CampaignFile>,
    pub plan: Option<PlanFile>,
    pub gap: Option<GapFile>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tier1Entry {
    pub intensity: f64,
    pub target_power_dbm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tier2Entry {
    pub intensity: f64,
    pub radius: f64,
    pub classes: Vec<ClassEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub target_power_dbm: f64,
    pub profile: IntensityProfile,
}

/// Parameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Axis {
    Lambda { ue_type: usize },
    Mu { bs_type: usize },
    Threshold,
    ExclusionRadius,
    /// `Q_lk / P_j` in dB, moving `Q_lk`.
    PowerRatioDb { bs_type: usize, class: usize, ue_type: usize },
    Alpha { target: AlphaTarget },
    Blocks,
}

impl Axis {
    pub fn name(&self) -> String {
        match *self {
            Axis::Lambda { ue_type } => format!("lambda{}", ue_type + 1),
            Axis::Mu { bs_type } => format!("mu{}", bs_type + 1),
            Axis::Threshold => "T".into(),
            Axis::ExclusionRadius => "Re".into(),
            Axis::PowerRatioDb { bs_type, class, ue_type } => format!("Q{}{}/P{}_dB", bs_type + 1, class + 1, ue_type + 1),
            Axis::Alpha { target: AlphaTarget::Tier1Ues } => "alpha_ue".into(),
            Axis::Alpha { target: AlphaTarget::Tier2Bss } => "alpha_bs".into(),
            Axis::Blocks => "n".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaTarget {
    Tier1Ues,
    Tier2Bss,
}

impl From<AlphaTarget> for CorrelationTarget {
    fn from(t: AlphaTarget) -> Self {
        match t {
            AlphaTarget::Tier1Ues => CorrelationTarget::Tier1Ues,
            AlphaTarget::Tier2Bss => CorrelationTarget::Tier2Bss,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Engines {
    Analytic,
    Sim,
    #[default]
    Both,
}

impl Engines {
    pub fn analytic(self) -> bool {
        matches!(self, Engines::Analytic | Engines::Both)
    }

    pub fn sim(self) -> bool {
        matches!(self, Engines::Sim | Engines::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignFile {
    pub name: String,
    pub axis: Axis,
    pub values: Vec<f64>,
    /// SIR thresholds evaluated at every axis value; ignored for a threshold sweep.
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub engines: Engines,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_thresholds() -> Vec<f64> {
    vec![0.1]
}

fn default_trials() -> u64 {
    10_000
}

/// An outage cap; the string `"none"` leaves the class unconstrained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cap {
    Value(f64),
    Off(String),
}

impl Cap {
    fn get(&self) -> Result<Option<f64>> {
        match self {
            Cap::Value(v) => Ok(Some(*v)),
            Cap::Off(s) if s == "none" => Ok(None),
            Cap::Off(s) => bail!("outage cap must be a number or \"none\", got {s:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilityEntry {
    ScaledLog { a: f64, b: f64 },
    Affine { c: f64 },
}

impl From<UtilityEntry> for Utility {
    fn from(u: UtilityEntry) -> Self {
        match u {
            UtilityEntry::ScaledLog { a, b } => Utility::ScaledLog { a, b },
            UtilityEntry::Affine { c } => Utility::Affine { c },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub threshold: f64,
    pub tier1_targets: Vec<Cap>,
    /// Per BS type, per class. Omitted means no tier-2 constraints.
    #[serde(default)]
    pub tier2_targets: Vec<Vec<Cap>>,
    pub utilities: Vec<UtilityEntry>,
    /// `μ₁` values at which to report the largest feasible `μ₂`.
    #[serde(default)]
    pub frontier_mu1: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapFile {
    pub target: AlphaTarget,
    pub alphas: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
}

/// A parsed file with its provenance hash.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub file: ConfigFile,
    pub network: NetworkConfig,
    pub hash: String,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            hex_radius: self.hex_radius,
            channel: self.channel.clone(),
            tier1: self
                .tier1
                .iter()
                .map(|u| Tier1UeType { intensity: u.intensity, target_power: dbm_to_mw(u.target_power_dbm) })
                .collect(),
            tier2: self
                .tier2
                .iter()
                .map(|b| Tier2BsType {
                    intensity: b.intensity,
                    radius: b.radius,
                    classes: b
                        .classes
                        .iter()
                        .map(|c| UeClass { target_power: dbm_to_mw(c.target_power_dbm), profile: c.profile.clone() })
                        .collect(),
                })
                .collect(),
            exclusion: self.exclusion,
            access: self.access,
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical re-serialisation,
    /// so comments and layout do not change the hash.
    pub fn hash(&self) -> Result<String> {
        let canonical = toml::to_string(self)?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(hex::encode(&digest[..8]))
    }

    pub fn planning_targets(&self) -> Result<(PlanningTargets, Vec<Utility>)> {
        let plan = self.plan.as_ref().context("configuration has no [plan] table")?;
        let tier1 = plan.tier1_targets.iter().map(Cap::get).collect::<Result<Vec<_>>>()?;
        let tier2 = if plan.tier2_targets.is_empty() {
            self.tier2.iter().map(|b| vec![None; b.classes.len()]).collect()
        } else {
            plan.tier2_targets.iter().map(|row| row.iter().map(Cap::get).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()?
        };
        let targets = PlanningTargets { threshold: plan.threshold, tier1, tier2 };
        Ok((targets, plan.utilities.iter().map(|u| (*u).into()).collect()))
    }
}

pub fn load(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file = ConfigFile::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
    let hash = file.hash()?;
    Ok(Loaded { network: file.network(), file, hash })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[channel]
pathloss_constant = 1.0
pathloss_exponent = 4.0
shadow_sigma_db = 4.0

[[tier1]]
intensity = 0.5
target_power_dbm = -70.0

[[tier2]]
intensity = 0.5
radius = 0.2

[[tier2.classes]]
target_power_dbm = -70.0
profile = { support_radius = 0.2, shape = { kind = "constant", value = 20.0 } }
"#;

    #[test]
    fn parses_the_baseline_network() {
        let f = ConfigFile::parse(BASE).unwrap();
        let n = f.network();
        assert_eq!(n, hetnet_core::presets::baseline(0.5, 0.5));
        assert!(n.validate().is_ok());
    }

    #[test]
    fn hash_ignores_layout_but_not_values() {
        let a = ConfigFile::parse(BASE).unwrap().hash().unwrap();
        let spaced = format!("# comment\n{}\n\n", BASE.replace("intensity = 0.5", "intensity    =   0.5"));
        assert_eq!(ConfigFile::parse(&spaced).unwrap().hash().unwrap(), a);
        let changed = BASE.replacen("intensity = 0.5", "intensity = 0.6", 1);
        assert_ne!(ConfigFile::parse(&changed).unwrap().hash().unwrap(), a);
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_caps() {
        assert!(ConfigFile::parse(&format!("bogus = 1\n{BASE}")).is_err());
        let plan = format!(
            "{BASE}\n[plan]\nthreshold = 0.05\ntier1_targets = [\"off\"]\nutilities = [{{ form = \"affine\", c = 1.0 }}]\n"
        );
        let f = ConfigFile::parse(&plan).unwrap();
        assert!(f.planning_targets().is_err());
        let ok = plan.replace("\"off\"", "\"none\"");
        let (t, u) = ConfigFile::parse(&ok).unwrap().planning_targets().unwrap();
        assert_eq!(t.tier1, vec![None]);
        assert_eq!(t.tier2, vec![vec![None]]);
        assert_eq!(u, vec![Utility::Affine { c: 1.0 }]);
    }

    #[test]
    fn shipped_configs_match_the_presets() {
        use hetnet_core::model::ExclusionConfig;
        use hetnet_core::presets::{self, ProfileKind};
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let net = |name: &str| load(&dir.join(name)).unwrap().network;
        assert_eq!(net("baseline.toml"), presets::baseline(0.5, 0.5));
        assert_eq!(net("exclusion_bs.toml"), presets::exclusion(ExclusionConfig::BsExclusion { radius: 0.3 }));
        assert_eq!(net("exclusion_ue.toml"), presets::exclusion(ExclusionConfig::UeExclusion { radius: 0.3 }));
        let pr = net("power_ratio.toml");
        let want = presets::power_ratio(15.0);
        assert!((pr.tier2[0].classes[0].target_power / want.tier2[0].classes[0].target_power - 1.0).abs() < 1e-12);
        assert_eq!(net("profile_flat.toml"), presets::profile(ProfileKind::Flat, 0.5));
        assert_eq!(net("profile_edge_heavy.toml"), presets::profile(ProfileKind::EdgeHeavy, 0.5));
        assert_eq!(net("profile_center_heavy.toml"), presets::profile(ProfileKind::CenterHeavy, 0.5));
        assert_eq!(net("two_type.toml"), presets::two_type());
        assert_eq!(net("orthogonal.toml"), presets::orthogonal(16));
        assert_eq!(net("tradeoff.toml"), presets::tradeoff(0.5, 0.5));
        assert_eq!(net("planning.toml"), presets::planning(0.5, 0.5));
        let (t, u) = load(&dir.join("planning.toml")).unwrap().file.planning_targets().unwrap();
        assert_eq!(t, presets::planning_targets());
        assert_eq!(u, presets::planning_utilities());
        let (t, _) = load(&dir.join("tradeoff.toml")).unwrap().file.planning_targets().unwrap();
        assert_eq!(t, presets::tradeoff_targets());
    }

    #[test]
    fn campaign_defaults() {
        let text = format!("{BASE}\n[campaign]\nname = \"x\"\naxis = {{ kind = \"lambda\", ue_type = 0 }}\nvalues = [0.25, 0.5]\n");
        let c = ConfigFile::parse(&text).unwrap().campaign.unwrap();
        assert_eq!(c.axis, Axis::Lambda { ue_type: 0 });
        assert_eq!(c.engines, Engines::Both);
        assert_eq!(c.trials, 10_000);
        assert_eq!(c.thresholds, vec![0.1]);
    }
}
