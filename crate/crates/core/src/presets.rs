//! Reference scenarios used by the validation campaigns.
//!
//! All share a unit macro cell radius, pathloss exponent 4 and a 4 dB
//! log-normal shadowing ratio. Powers are given in dBm.

use crate::model::{
    dbm_to_mw, AccessMode, ChannelParams, ExclusionConfig, IntensityProfile, NetworkConfig, Tier1UeType, Tier2BsType,
    UeClass,
};
use crate::planner::{PlanningTargets, Utility};

pub fn channel() -> ChannelParams {
    ChannelParams { pathloss_constant: 1.0, pathloss_exponent: 4.0, shadow_sigma_db: 4.0 }
}

fn ue(lambda: f64, p_dbm: f64) -> Tier1UeType {
    Tier1UeType { intensity: lambda, target_power: dbm_to_mw(p_dbm) }
}

fn class(q_dbm: f64, profile: IntensityProfile) -> UeClass {
    UeClass { target_power: dbm_to_mw(q_dbm), profile }
}

fn bs(mu: f64, radius: f64, classes: Vec<UeClass>) -> Tier2BsType {
    Tier2BsType { intensity: mu, radius, classes }
}

fn network(tier1: Vec<Tier1UeType>, tier2: Vec<Tier2BsType>) -> NetworkConfig {
    NetworkConfig {
        hex_radius: 1.0,
        channel: channel(),
        tier1,
        tier2,
        exclusion: ExclusionConfig::None,
        access: AccessMode::Shared,
    }
}

/// One UE type, one small-cell type with radius 0.2 km and a flat profile of
/// 20 UEs/km²; both tiers target -70 dBm.
pub fn baseline(lambda: f64, mu: f64) -> NetworkConfig {
    network(
        vec![ue(lambda, -70.0)],
        vec![bs(mu, 0.2, vec![class(-70.0, IntensityProfile::constant(0.2, 20.0))])],
    )
}

/// The baseline at `λ = μ = 0.5` with an exclusion region.
pub fn exclusion(exclusion: ExclusionConfig) -> NetworkConfig {
    let mut c = baseline(0.5, 0.5);
    c.exclusion = exclusion;
    c
}

/// Baseline with `λ = 0.5`, `μ = 1`, `P = -70` dBm and `Q/P` set in dB.
pub fn power_ratio(q_over_p_db: f64) -> NetworkConfig {
    let mut c = baseline(0.5, 1.0);
    c.tier2[0].classes[0].target_power = dbm_to_mw(-70.0 + q_over_p_db);
    c
}

/// Shapes of the in-cell UE density with a common mean of `0.8π` UEs per cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileKind {
    Flat,
    EdgeHeavy,
    CenterHeavy,
}

/// Sparse macro tier (`λ = 0.05`) with a chosen small-cell UE profile.
pub fn profile(kind: ProfileKind, mu: f64) -> NetworkConfig {
    let r = 0.2;
    let p = match kind {
        ProfileKind::Flat => IntensityProfile::constant(r, 20.0),
        ProfileKind::EdgeHeavy => IntensityProfile::rising(r, 30.0),
        ProfileKind::CenterHeavy => IntensityProfile::falling(r, 60.0),
    };
    network(vec![ue(0.05, -70.0)], vec![bs(mu, r, vec![class(-70.0, p)])])
}

fn flat(r: f64, v: f64) -> IntensityProfile {
    IntensityProfile::constant(r, v)
}

/// Two UE types, two small-cell types with two classes each.
pub fn two_type() -> NetworkConfig {
    network(
        vec![ue(0.5, -67.0), ue(0.5, -65.2)],
        vec![
            bs(1.0, 0.1, vec![class(-70.0, flat(0.1, 10.0)), class(-64.0, flat(0.1, 15.0))]),
            bs(1.0, 0.2, vec![class(-67.0, flat(0.2, 5.0)), class(-67.0, flat(0.2, 20.0))]),
        ],
    )
}

/// Dense two-type network sharing `blocks` orthogonal resource blocks per cell.
pub fn orthogonal(blocks: u32) -> NetworkConfig {
    let mut c = network(
        vec![ue(1.6, -67.0), ue(1.6, -65.2)],
        vec![
            bs(1.0, 0.1, vec![class(-70.0, flat(0.1, 16.0)), class(-64.0, flat(0.1, 48.0))]),
            bs(1.0, 0.2, vec![class(-67.0, flat(0.2, 32.0)), class(-67.0, flat(0.2, 32.0))]),
        ],
    );
    c.access = AccessMode::Orthogonal { blocks };
    c
}

/// Two UE types and two single-class small-cell types at the given intensities.
pub fn tradeoff(mu1: f64, mu2: f64) -> NetworkConfig {
    network(
        vec![ue(0.1, -67.0), ue(0.1, -66.0)],
        vec![bs(mu1, 0.2, vec![class(-60.0, flat(0.2, 10.0))]), bs(mu2, 0.2, vec![class(-59.2, flat(0.2, 8.0))])],
    )
}

/// SIR threshold of the tradeoff scenario.
pub const TRADEOFF_THRESHOLD: f64 = 0.05;

/// Outage cap 0.2 on both tier-1 types and on the single class of each small-cell type.
pub fn tradeoff_targets() -> PlanningTargets {
    PlanningTargets {
        threshold: TRADEOFF_THRESHOLD,
        tier1: vec![Some(0.2); 2],
        tier2: vec![vec![Some(0.2)]; 2],
    }
}

/// Two UE types and two small-cell types with two classes each, for planning.
pub fn planning(mu1: f64, mu2: f64) -> NetworkConfig {
    network(
        vec![ue(0.2, -67.0), ue(0.1, -66.0)],
        vec![
            bs(mu1, 0.2, vec![class(-67.0, flat(0.2, 10.0)), class(-67.0, flat(0.2, 5.0))]),
            bs(mu2, 0.2, vec![class(-70.0, flat(0.2, 5.0)), class(-64.0, flat(0.2, 5.0))]),
        ],
    )
}

/// SIR threshold of the planning scenario.
pub const PLANNING_THRESHOLD: f64 = 0.05;

/// Tier-1 outage capped at 0.1; tier-2 UEs unconstrained.
pub fn planning_targets() -> PlanningTargets {
    PlanningTargets { threshold: PLANNING_THRESHOLD, tier1: vec![Some(0.1); 2], tier2: vec![vec![None; 2]; 2] }
}

/// `1.5·ln(1 + 10μ₁)` and `ln(1 + 10μ₂)`.
pub fn planning_utilities() -> Vec<Utility> {
    vec![Utility::ScaledLog { a: 1.5, b: 10.0 }, Utility::ScaledLog { a: 1.0, b: 10.0 }]
}
