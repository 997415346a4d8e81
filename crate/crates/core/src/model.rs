//! Network parameters shared by the analytic and simulation engines.
//!
//! Powers are stored in linear milliwatts, distances in kilometres and
//! intensities per km².

use std::f64::consts::{LN_10, PI};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::GaussLegendre;

#[inline]
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

#[inline]
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Natural-log standard deviation of a log-normal power factor given in dB.
#[inline]
pub fn db_to_ln_sigma(sigma_db: f64) -> f64 {
    sigma_db * LN_10 / 10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub pathloss_constant: f64,
    pub pathloss_exponent: f64,
    /// Standard deviation in dB of the shadowing ratio between an interferer's
    /// serving link and its link to the victim.
    pub shadow_sigma_db: f64,
}

impl ChannelParams {
    pub fn shadow_sigma_ln(&self) -> f64 {
        db_to_ln_sigma(self.shadow_sigma_db)
    }
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self { pathloss_constant: 1.0, pathloss_exponent: 4.0, shadow_sigma_db: 0.0 }
    }
}

/// Shape of a radial UE intensity `ν(r)` on `0 <= r <= support_radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileShape {
    Constant { value: f64 },
    /// `peak · r / R`
    Rising { peak: f64 },
    /// `peak · (R − r) / R`
    Falling { peak: f64 },
    /// Piecewise linear through `(radii[i], values[i])`, held flat beyond the
    /// first and last knots.
    Tabulated { radii: Vec<f64>, values: Vec<f64> },
}

/// Radially symmetric UE density around a small-cell base station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityProfile {
    pub support_radius: f64,
    pub shape: ProfileShape,
}

impl IntensityProfile {
    pub fn constant(support_radius: f64, value: f64) -> Self {
        Self { support_radius, shape: ProfileShape::Constant { value } }
    }

    pub fn rising(support_radius: f64, peak: f64) -> Self {
        Self { support_radius, shape: ProfileShape::Rising { peak } }
    }

    pub fn falling(support_radius: f64, peak: f64) -> Self {
        Self { support_radius, shape: ProfileShape::Falling { peak } }
    }

    /// Density at distance `r` from the cell centre.
    pub fn density(&self, r: f64) -> f64 {
        let big_r = self.support_radius;
        if r > big_r || r < 0.0 {
            return 0.0;
        }
        match &self.shape {
            ProfileShape::Constant { value } => *value,
            ProfileShape::Rising { peak } => peak * r / big_r,
            ProfileShape::Falling { peak } => peak * (big_r - r) / big_r,
            ProfileShape::Tabulated { radii, values } => interpolate(radii, values, r),
        }
    }

    pub fn peak_density(&self) -> f64 {
        match &self.shape {
            ProfileShape::Constant { value } => *value,
            ProfileShape::Rising { peak } | ProfileShape::Falling { peak } => *peak,
            ProfileShape::Tabulated { values, .. } => values.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// Radii inside `(0, R)` where the density is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match &self.shape {
            ProfileShape::Tabulated { radii, .. } => radii
                .iter()
                .cloned()
                .filter(|r| *r > 0.0 && *r < self.support_radius)
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Same shape with every density multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let shape = match &self.shape {
            ProfileShape::Constant { value } => ProfileShape::Constant { value: value * factor },
            ProfileShape::Rising { peak } => ProfileShape::Rising { peak: peak * factor },
            ProfileShape::Falling { peak } => ProfileShape::Falling { peak: peak * factor },
            ProfileShape::Tabulated { radii, values } => ProfileShape::Tabulated {
                radii: radii.clone(),
                values: values.iter().map(|v| v * factor).collect(),
            },
        };
        Self { support_radius: self.support_radius, shape }
    }

    /// Expected number of UEs, `∫ ν(|x|) dx` over the support disk.
    pub fn mean_count(&self) -> f64 {
        let gl = GaussLegendre::new(8);
        let mut edges = vec![0.0];
        edges.extend(self.kinks());
        edges.push(self.support_radius);
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        let mut total = 0.0;
        for w in edges.windows(2) {
            total += gl.integrate(w[0], w[1], |r| 2.0 * PI * r * self.density(r));
        }
        total
    }

    fn violations(&self, path: &str, cell_radius: f64, out: &mut Vec<Violation>) {
        if !(self.support_radius > 0.0 && self.support_radius.is_finite()) {
            out.push(Violation::new(format!("{path}.support_radius"), "must be positive and finite"));
        } else if self.support_radius > cell_radius * (1.0 + 1e-12) {
            out.push(Violation::new(
                format!("{path}.support_radius"),
                "must not exceed the small-cell radius",
            ));
        }
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        match &self.shape {
            ProfileShape::Constant { value } if !nonneg(*value) => {
                out.push(Violation::new(format!("{path}.value"), "must be non-negative and finite"))
            }
            ProfileShape::Rising { peak } | ProfileShape::Falling { peak } if !nonneg(*peak) => {
                out.push(Violation::new(format!("{path}.peak"), "must be non-negative and finite"))
            }
            ProfileShape::Tabulated { radii, values } => {
                if radii.len() != values.len() || radii.is_empty() {
                    out.push(Violation::new(
                        format!("{path}.radii"),
                        "radii and values must be non-empty and of equal length",
                    ));
                }
                if radii.iter().any(|r| !nonneg(*r)) || radii.windows(2).any(|w| !(w[1] > w[0])) {
                    out.push(Violation::new(
                        format!("{path}.radii"),
                        "must be finite, non-negative and strictly increasing",
                    ));
                }
                if values.iter().any(|v| !nonneg(*v)) {
                    out.push(Violation::new(format!("{path}.values"), "must be non-negative and finite"));
                }
            }
            _ => {}
        }
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|v| *v <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tier1UeType {
    pub intensity: f64,
    pub target_power: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UeClass {
    pub target_power: f64,
    pub profile: IntensityProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tier2BsType {
    pub intensity: f64,
    pub radius: f64,
    pub classes: Vec<UeClass>,
}

impl Tier2BsType {
    pub fn mean_ues(&self, class: usize) -> Result<f64, ModelError> {
        self.classes
            .get(class)
            .map(|c| c.profile.mean_count())
            .ok_or(ModelError::IndexOutOfRange { what: "ue class", index: class, len: self.classes.len() })
    }

    pub fn total_mean_ues(&self) -> f64 {
        self.classes.iter().map(|c| c.profile.mean_count()).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExclusionConfig {
    #[default]
    None,
    /// No small-cell base station within `radius` of a macro base station.
    BsExclusion { radius: f64 },
    /// No small-cell UE within `radius` of a macro base station.
    UeExclusion { radius: f64 },
}

impl ExclusionConfig {
    pub fn radius(&self) -> Option<f64> {
        match *self {
            ExclusionConfig::None => None,
            ExclusionConfig::BsExclusion { radius } | ExclusionConfig::UeExclusion { radius } => Some(radius),
        }
    }

    pub fn bs_radius(&self) -> Option<f64> {
        match *self {
            ExclusionConfig::BsExclusion { radius } => Some(radius),
            _ => None,
        }
    }

    pub fn ue_radius(&self) -> Option<f64> {
        match *self {
            ExclusionConfig::UeExclusion { radius } => Some(radius),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AccessMode {
    #[default]
    Shared,
    Orthogonal { blocks: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hex_radius: f64,
    pub channel: ChannelParams,
    pub tier1: Vec<Tier1UeType>,
    pub tier2: Vec<Tier2BsType>,
    pub exclusion: ExclusionConfig,
    pub access: AccessMode,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        validate(self)
    }

    pub fn n_ue_types(&self) -> usize {
        self.tier1.len()
    }

    pub fn n_bs_types(&self) -> usize {
        self.tier2.len()
    }

    pub fn max_small_cell_radius(&self) -> f64 {
        self.tier2.iter().map(|b| b.radius).fold(0.0, f64::max)
    }
}

/// One failed check, addressed by a dotted path into the configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what} index {index} out of range (have {len})")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },
    #[error("invalid configuration: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

pub fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

fn nonneg(v: f64) -> bool {
    v >= 0.0 && v.is_finite()
}

/// Checks every parameter of `config`, returning all violations found.
pub fn validate(config: &NetworkConfig) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if !positive(config.hex_radius) {
        out.push(Violation::new("hex_radius", "must be positive and finite"));
    }
    let ch = &config.channel;
    if !positive(ch.pathloss_constant) {
        out.push(Violation::new("channel.pathloss_constant", "must be positive and finite"));
    }
    if !(ch.pathloss_exponent > 2.0 && ch.pathloss_exponent.is_finite()) {
        out.push(Violation::new("channel.pathloss_exponent", "must be finite and exceed 2"));
    }
    if !nonneg(ch.shadow_sigma_db) {
        out.push(Violation::new("channel.shadow_sigma_db", "must be non-negative and finite"));
    }
    if config.tier1.is_empty() && config.tier2.is_empty() {
        out.push(Violation::new("tier1", "at least one tier-1 UE type or tier-2 BS type is required"));
    }
    for (i, t) in config.tier1.iter().enumerate() {
        if !nonneg(t.intensity) {
            out.push(Violation::new(format!("tier1[{i}].intensity"), "must be non-negative and finite"));
        }
        if !positive(t.target_power) {
            out.push(Violation::new(format!("tier1[{i}].target_power"), "must be positive and finite"));
        }
    }
    for (i, b) in config.tier2.iter().enumerate() {
        if !nonneg(b.intensity) {
            out.push(Violation::new(format!("tier2[{i}].intensity"), "must be non-negative and finite"));
        }
        if !positive(b.radius) {
            out.push(Violation::new(format!("tier2[{i}].radius"), "must be positive and finite"));
        }
        if b.classes.is_empty() {
            out.push(Violation::new(format!("tier2[{i}].ue_class"), "at least one UE class is required"));
        }
        for (k, c) in b.classes.iter().enumerate() {
            if !positive(c.target_power) {
                out.push(Violation::new(
                    format!("tier2[{i}].ue_class[{k}].target_power"),
                    "must be positive and finite",
                ));
            }
            c.profile
                .violations(&format!("tier2[{i}].ue_class[{k}].profile"), b.radius, &mut out);
        }
    }
    if let Some(r) = config.exclusion.radius() {
        if !positive(r) {
            out.push(Violation::new("exclusion.radius", "must be positive and finite"));
        } else if positive(config.hex_radius) && r >= config.hex_radius {
            out.push(Violation::new("exclusion.radius", "must be smaller than the hexagon radius"));
        }
    }
    if let AccessMode::Orthogonal { blocks } = config.access {
        if blocks == 0 {
            out.push(Violation::new("access.blocks", "must be at least 1"));
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Expected number of class-`class` UEs attached to one type-`bs_type` small cell.
pub fn mean_ue_per_cell(config: &NetworkConfig, bs_type: usize, class: usize) -> Result<f64, ModelError> {
    let bs = config
        .tier2
        .get(bs_type)
        .ok_or(ModelError::IndexOutOfRange { what: "bs type", index: bs_type, len: config.tier2.len() })?;
    bs.mean_ues(class)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Single-type network with constant profiles.
    pub fn single(lambda: f64, mu: f64, p_dbm: f64, q_dbm: f64, sigma_db: f64) -> NetworkConfig {
        NetworkConfig {
            hex_radius: 1.0,
            channel: ChannelParams { pathloss_constant: 1.0, pathloss_exponent: 4.0, shadow_sigma_db: sigma_db },
            tier1: vec![Tier1UeType { intensity: lambda, target_power: dbm_to_mw(p_dbm) }],
            tier2: vec![Tier2BsType {
                intensity: mu,
                radius: 0.2,
                classes: vec![UeClass {
                    target_power: dbm_to_mw(q_dbm),
                    profile: IntensityProfile::constant(0.2, 20.0),
                }],
            }],
            exclusion: ExclusionConfig::None,
            access: AccessMode::Shared,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::single;
    use super::*;
    use crate::geometry::Point;
    use crate::quadrature::{integrate_disk, QuadratureSpec};

    #[test]
    fn valid_fixture_passes() {
        assert!(validate(&single(0.5, 1.0, -70.0, -70.0, 4.0)).is_ok());
    }

    #[test]
    fn negative_intensity_reports_path() {
        let mut cfg = single(0.5, 1.0, -70.0, -70.0, 4.0);
        cfg.tier1[0].intensity = -1.0;
        let err = validate(&cfg).unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].path, "tier1[0].intensity");
    }

    #[test]
    fn exponent_at_two_is_rejected() {
        let mut cfg = single(0.5, 1.0, -70.0, -70.0, 4.0);
        cfg.channel.pathloss_exponent = 2.0;
        let err = validate(&cfg).unwrap_err();
        assert!(err.iter().any(|v| v.path == "channel.pathloss_exponent"));
    }

    #[test]
    fn nan_fields_are_rejected() {
        let mut cfg = single(0.5, 1.0, -70.0, -70.0, 4.0);
        cfg.hex_radius = f64::NAN;
        cfg.tier2[0].radius = f64::NAN;
        cfg.channel.shadow_sigma_db = f64::NAN;
        let err = validate(&cfg).unwrap_err();
        let paths: Vec<_> = err.iter().map(|v| v.path.as_str()).collect();
        assert!(paths.contains(&"hex_radius"));
        assert!(paths.contains(&"tier2[0].radius"));
        assert!(paths.contains(&"channel.shadow_sigma_db"));
    }

    #[test]
    fn oversized_exclusion_and_zero_blocks() {
        let mut cfg = single(0.5, 1.0, -70.0, -70.0, 4.0);
        cfg.exclusion = ExclusionConfig::BsExclusion { radius: 1.5 };
        cfg.access = AccessMode::Orthogonal { blocks: 0 };
        let err = validate(&cfg).unwrap_err();
        assert_eq!(err.len(), 2);
    }

    #[test]
    fn profile_support_beyond_cell_radius_rejected() {
        let mut cfg = single(0.5, 1.0, -70.0, -70.0, 4.0);
        cfg.tier2[0].classes[0].profile.support_radius = 0.3;
        assert!(validate(&cfg).is_err());
    }

    #[test]
    fn mean_counts_match_closed_forms() {
        let r = 0.2;
        let disk = std::f64::consts::PI * r * r;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        assert!(close(IntensityProfile::constant(r, 20.0).mean_count(), 20.0 * disk));
        assert!(close(IntensityProfile::rising(r, 30.0).mean_count(), 30.0 * disk * 2.0 / 3.0));
        assert!(close(IntensityProfile::falling(r, 30.0).mean_count(), 30.0 * disk / 3.0));
        assert!(close(IntensityProfile::constant(r, 0.0).mean_count(), 0.0));
        // 2π·(∫₀^0.1 (5 + 350t)t dt + ∫_0.1^0.25 (60 − 200t)t dt) = 2π·0.741666…
        let tab = IntensityProfile {
            support_radius: 0.25,
            shape: ProfileShape::Tabulated { radii: vec![0.0, 0.1, 0.25], values: vec![5.0, 40.0, 10.0] },
        };
        assert!(close(tab.mean_count(), 2.0 * std::f64::consts::PI * (0.025 + 0.35 / 3.0 + 0.6)));
        let cfg = single(0.5, 1.0, -70.0, -70.0, 4.0);
        assert!(close(mean_ue_per_cell(&cfg, 0, 0).unwrap(), 0.8 * std::f64::consts::PI));
        assert!(matches!(mean_ue_per_cell(&cfg, 1, 0), Err(ModelError::IndexOutOfRange { .. })));
        assert!(matches!(mean_ue_per_cell(&cfg, 0, 3), Err(ModelError::IndexOutOfRange { .. })));
    }

    #[test]
    fn mean_count_matches_planar_quadrature() {
        let spec = QuadratureSpec::default();
        let profiles = [
            IntensityProfile::constant(0.2, 20.0),
            IntensityProfile::rising(0.2, 30.0),
            IntensityProfile::falling(0.3, 12.0),
        ];
        for p in &profiles {
            let planar = integrate_disk(|x| p.density(x.norm()), Point::ORIGIN, p.support_radius, &[], &spec);
            assert!((planar - p.mean_count()).abs() < 1e-9 * p.mean_count(), "{p:?}");
        }
    }

    #[test]
    fn tabulated_interpolation() {
        let p = IntensityProfile {
            support_radius: 1.0,
            shape: ProfileShape::Tabulated { radii: vec![0.2, 0.6], values: vec![1.0, 3.0] },
        };
        assert_eq!(p.density(0.0), 1.0);
        assert!((p.density(0.4) - 2.0).abs() < 1e-15);
        assert_eq!(p.density(0.9), 3.0);
        assert_eq!(p.density(1.1), 0.0);
        assert_eq!(p.kinks(), vec![0.2, 0.6]);
    }

    #[test]
    fn dbm_round_trip() {
        assert!((dbm_to_mw(-70.0) - 1e-7).abs() < 1e-20);
        assert!((mw_to_dbm(dbm_to_mw(-65.2)) + 65.2).abs() < 1e-12);
        assert!((db_to_ln_sigma(10.0) - LN_10).abs() < 1e-15);
    }
}
