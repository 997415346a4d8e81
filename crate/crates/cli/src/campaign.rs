//! Sweeps over one parameter, evaluated by either or both engines.

use std::time::Instant;

use anyhow::{bail, Result};
use hetnet_core::analytic::Analyzer;
use hetnet_core::model::{AccessMode, ExclusionConfig, NetworkConfig};
use hetnet_core::montecarlo::{CorrelationSpec, Simulator};
use hetnet_core::planner::ConstraintId;
use hetnet_core::quadrature::QuadratureSpec;

use crate::config::{Axis, CampaignFile, Engines};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Analytic,
    Sim,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Analytic => "analytic",
            Engine::Sim => "sim",
        }
    }
}

/// One result line.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub axis_value: Option<f64>,
    pub query: ConstraintId,
    pub threshold: f64,
    pub engine: Engine,
    pub outage: Option<f64>,
    pub ci95: Option<f64>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub error: Option<String>,
    pub wall_ms: f64,
}

pub fn query_label(q: ConstraintId) -> String {
    match q {
        ConstraintId::Tier1 { ue_type } => format!("tier1.{}", ue_type + 1),
        ConstraintId::Tier2 { bs_type, class } => format!("tier2.{}.{}", bs_type + 1, class + 1),
    }
}

/// Every typical-UE query the configuration admits.
pub fn all_queries(config: &NetworkConfig) -> Vec<ConstraintId> {
    let mut out: Vec<ConstraintId> = (0..config.tier1.len()).map(|ue_type| ConstraintId::Tier1 { ue_type }).collect();
    for (bs_type, b) in config.tier2.iter().enumerate() {
        out.extend((0..b.classes.len()).map(|class| ConstraintId::Tier2 { bs_type, class }));
    }
    out
}

/// A sweep ready to run, with command-line overrides applied.
#[derive(Clone, Debug)]
pub struct Campaign {
    pub name: String,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub engines: Engines,
    pub trials: u64,
    pub seed: u64,
}

impl Campaign {
    pub fn from_file(c: &CampaignFile) -> Self {
        Self {
            name: c.name.clone(),
            axis: c.axis,
            values: c.values.clone(),
            thresholds: c.thresholds.clone(),
            engines: c.engines,
            trials: c.trials,
            seed: c.seed,
        }
    }

    pub fn check(&self, base: &NetworkConfig) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            bail!("axis values must be finite");
        }
        if self.values.windows(2).any(|w| w[0] > w[1]) {
            bail!("axis values must be sorted ascending");
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            bail!("thresholds must be positive and finite");
        }
        if self.engines.sim() && self.trials < 100 {
            bail!("simulation needs at least 100 trials, got {}", self.trials);
        }
        match self.axis {
            Axis::Alpha { .. } if self.engines.analytic() => {
                bail!("the analytic engine does not model location correlation; use engines = \"sim\"")
            }
            Axis::ExclusionRadius if base.exclusion == ExclusionConfig::None => {
                bail!("an exclusion-radius sweep needs an exclusion mode in the base configuration")
            }
            Axis::Lambda { ue_type } if ue_type >= base.tier1.len() => bail!("no tier-1 UE type {}", ue_type + 1),
            Axis::Mu { bs_type } if bs_type >= base.tier2.len() => bail!("no tier-2 BS type {}", bs_type + 1),
            Axis::PowerRatioDb { bs_type, class, ue_type } => {
                if ue_type >= base.tier1.len() || base.tier2.get(bs_type).map_or(true, |b| class >= b.classes.len()) {
                    bail!("power-ratio axis refers to a missing type or class");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// The base configuration with the axis set to `value`, plus any correlation.
pub fn apply_axis(
    base: &NetworkConfig,
    axis: Axis,
    value: f64,
) -> Result<(NetworkConfig, Option<CorrelationSpec>)> {
    let mut c = base.clone();
    let mut corr = None;
    match axis {
        Axis::Lambda { ue_type } => c.tier1[ue_type].intensity = value,
        Axis::Mu { bs_type } => c.tier2[bs_type].intensity = value,
        Axis::Threshold => {}
        Axis::ExclusionRadius => {
            c.exclusion = match c.exclusion {
                ExclusionConfig::BsExclusion { .. } => ExclusionConfig::BsExclusion { radius: value },
                ExclusionConfig::UeExclusion { .. } => ExclusionConfig::UeExclusion { radius: value },
                ExclusionConfig::None => bail!("no exclusion mode to sweep"),
            }
        }
        Axis::PowerRatioDb { bs_type, class, ue_type } => {
            c.tier2[bs_type].classes[class].target_power = c.tier1[ue_type].target_power * 10f64.powf(value / 10.0);
        }
        Axis::Alpha { target } => corr = Some(CorrelationSpec::new(target.into(), value)?),
        Axis::Blocks => {
            if value < 1.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
                bail!("block count must be a positive integer, got {value}");
            }
            c.access = AccessMode::Orthogonal { blocks: value as u32 };
        }
    }
    if let Err(v) = c.validate() {
        bail!("{}", hetnet_core::model::join_violations(&v));
    }
    Ok((c, corr))
}

/// Evaluates one configuration at the given thresholds.
///
/// Simulated thresholds share one set of realisations per query.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    config: &NetworkConfig,
    correlation: Option<CorrelationSpec>,
    thresholds: &[f64],
    engines: Engines,
    trials: u64,
    seed: u64,
    spec: &QuadratureSpec,
    axis_value: Option<f64>,
) -> Vec<Row> {
    if thresholds.is_empty() {
        return Vec::new();
    }
    let queries = all_queries(config);
    let blank = |query, threshold, engine| Row {
        axis_value,
        query,
        threshold,
        engine,
        outage: None,
        ci95: None,
        trials: None,
        seed: None,
        error: None,
        wall_ms: 0.0,
    };
    let nt = thresholds.len();
    let mut analytic: Vec<Row> = Vec::new();
    if engines.analytic() {
        let start = Instant::now();
        let analyzer = Analyzer::new(config, spec);
        let setup_ms = start.elapsed().as_secs_f64() * 1e3;
        for &q in &queries {
            for &t in thresholds {
                let mut row = blank(q, t, Engine::Analytic);
                let start = Instant::now();
                match analyzer.as_ref().map_err(|e| e.clone()).and_then(|a| a.outage(q.query(t))) {
                    Ok(p) => row.outage = Some(p),
                    Err(e) => row.error = Some(e.to_string()),
                }
                row.wall_ms = setup_ms + start.elapsed().as_secs_f64() * 1e3;
                analytic.push(row);
            }
        }
    }
    let mut sim: Vec<Row> = Vec::new();
    if engines.sim() {
        let simulator = Simulator::new(config).map(|s| s.with_correlation(correlation));
        for &q in &queries {
            let start = Instant::now();
            let est = simulator
                .as_ref()
                .map_err(|e| e.clone())
                .and_then(|s| s.estimate(q.query(thresholds[0]), thresholds, trials, seed, config.access));
            let ms = start.elapsed().as_secs_f64() * 1e3;
            for (k, &t) in thresholds.iter().enumerate() {
                let mut row = blank(q, t, Engine::Sim);
                row.trials = Some(trials);
                row.seed = Some(seed);
                row.wall_ms = ms;
                match &est {
                    Ok(e) => {
                        row.outage = Some(e[k].probability);
                        row.ci95 = Some(e[k].ci95_halfwidth);
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
                sim.push(row);
            }
        }
    }
    // Both lists are query-major, threshold-minor; list the engines together.
    let mut rows = Vec::with_capacity(analytic.len() + sim.len());
    for k in 0..queries.len() * nt {
        rows.extend(analytic.get(k).cloned());
        rows.extend(sim.get(k).cloned());
    }
    rows
}

/// Runs the sweep; rows come out in axis order. A failing axis value yields
/// rows carrying the error and the sweep continues.
pub fn run(base: &NetworkConfig, campaign: &Campaign, spec: &QuadratureSpec) -> Vec<Row> {
    if campaign.axis == Axis::Threshold {
        // One configuration: every threshold reuses the same realisations.
        let mut rows = evaluate(base, None, &campaign.values, campaign.engines, campaign.trials, campaign.seed, spec, None);
        for r in &mut rows {
            r.axis_value = Some(r.threshold);
        }
        let pos = |t: f64| campaign.values.iter().position(|v| *v == t);
        rows.sort_by_key(|r| pos(r.threshold));
        return rows;
    }
    let mut rows = Vec::new();
    for &value in &campaign.values {
        match apply_axis(base, campaign.axis, value) {
            Ok((cfg, corr)) => rows.extend(evaluate(
                &cfg,
                corr,
                &campaign.thresholds,
                campaign.engines,
                campaign.trials,
                campaign.seed,
                spec,
                Some(value),
            )),
            Err(e) => {
                for q in all_queries(base) {
                    for &t in &campaign.thresholds {
                        for engine in [Engine::Analytic, Engine::Sim] {
                            if (engine == Engine::Analytic && !campaign.engines.analytic())
                                || (engine == Engine::Sim && !campaign.engines.sim())
                            {
                                continue;
                            }
                            rows.push(Row {
                                axis_value: Some(value),
                                query: q,
                                threshold: t,
                                engine,
                                outage: None,
                                ci95: None,
                                trials: None,
                                seed: None,
                                error: Some(e.to_string()),
                                wall_ms: 0.0,
                            });
                        }
                    }
                }
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use hetnet_core::presets;

    fn campaign(axis: Axis, values: Vec<f64>, engines: Engines) -> Campaign {
        Campaign { name: "t".into(), axis, values, thresholds: vec![0.1], engines, trials: 200, seed: 3 }
    }

    #[test]
    fn empty_axis_gives_no_rows() {
        let c = campaign(Axis::Lambda { ue_type: 0 }, vec![], Engines::Both);
        assert!(run(&presets::baseline(0.5, 0.5), &c, &QuadratureSpec::default()).is_empty());
    }

    #[test]
    fn rows_follow_axis_then_query_then_engine() {
        let c = campaign(Axis::Mu { bs_type: 0 }, vec![0.25, 0.5], Engines::Both);
        let rows = run(&presets::baseline(0.5, 0.5), &c, &QuadratureSpec::default());
        let got: Vec<(f64, String, &str)> =
            rows.iter().map(|r| (r.axis_value.unwrap(), query_label(r.query), r.engine.name())).collect();
        let want = [
            (0.25, "tier1.1", "analytic"),
            (0.25, "tier1.1", "sim"),
            (0.25, "tier2.1.1", "analytic"),
            (0.25, "tier2.1.1", "sim"),
            (0.5, "tier1.1", "analytic"),
            (0.5, "tier1.1", "sim"),
            (0.5, "tier2.1.1", "analytic"),
            (0.5, "tier2.1.1", "sim"),
        ];
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert_eq!((g.0, g.1.as_str(), g.2), *w);
        }
        assert!(rows.iter().all(|r| r.error.is_none()));
        assert!(rows.iter().filter(|r| r.engine == Engine::Sim).all(|r| r.ci95.is_some()));
    }

    #[test]
    fn bad_axis_values_become_error_rows() {
        let c = campaign(Axis::Lambda { ue_type: 0 }, vec![-1.0, 0.5], Engines::Analytic);
        let rows = run(&presets::baseline(0.5, 0.5), &c, &QuadratureSpec::default());
        assert_eq!(rows.len(), 4);
        assert!(rows[0].error.is_some() && rows[1].error.is_some());
        assert!(rows[2].error.is_none() && rows[3].error.is_none());
    }

    #[test]
    fn campaign_checks() {
        let base = presets::baseline(0.5, 0.5);
        assert!(campaign(Axis::Mu { bs_type: 0 }, vec![0.5, 0.25], Engines::Analytic).check(&base).is_err());
        assert!(campaign(Axis::Mu { bs_type: 1 }, vec![0.5], Engines::Analytic).check(&base).is_err());
        assert!(campaign(Axis::ExclusionRadius, vec![0.1], Engines::Analytic).check(&base).is_err());
        let alpha = Axis::Alpha { target: crate::config::AlphaTarget::Tier1Ues };
        assert!(campaign(alpha, vec![1.0], Engines::Both).check(&base).is_err());
        assert!(campaign(alpha, vec![1.0], Engines::Sim).check(&base).is_ok());
        let mut few = campaign(Axis::Threshold, vec![0.1], Engines::Sim);
        few.trials = 50;
        assert!(few.check(&base).is_err());
    }

    #[test]
    fn threshold_sweep_reuses_one_configuration() {
        let c = campaign(Axis::Threshold, vec![0.1, 1.0], Engines::Sim);
        let rows = run(&presets::baseline(0.5, 0.5), &c, &QuadratureSpec::default());
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].axis_value, Some(0.1));
        assert_eq!(rows[3].axis_value, Some(1.0));
        // Outage cannot fall as the threshold rises on common realisations.
        assert!(rows[0].outage.unwrap() <= rows[2].outage.unwrap());
    }

    #[test]
    fn axis_application() {
        let base = presets::baseline(0.5, 0.5);
        let axis = Axis::PowerRatioDb { bs_type: 0, class: 0, ue_type: 0 };
        let (c, _) = apply_axis(&base, axis, 10.0).unwrap();
        let ratio = c.tier2[0].classes[0].target_power / c.tier1[0].target_power;
        assert!((ratio - 10.0).abs() < 1e-9);
        let (c, _) = apply_axis(&base, Axis::Blocks, 16.0).unwrap();
        assert_eq!(c.access, AccessMode::Orthogonal { blocks: 16 });
        assert!(apply_axis(&base, Axis::Blocks, 1.5).is_err());
    }
}
