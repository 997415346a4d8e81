//! Monte Carlo simulation of the two-tier uplink.
//!
//! Each trial realises the network in a window around the victim receiver at
//! the origin, draws fading and shadowing for every transmitter, and records
//! the interference split by component. Randomness comes from ChaCha streams
//! keyed by `(seed, purpose, trial)`, so estimates are bitwise reproducible and
//! independent of the number of worker threads.
//!
//! Transmitters are generated hexagon by hexagon in order of distance from the
//! origin, with all per-transmitter draws taken at generation time. Widening
//! the window therefore only appends to each stream, and the orthogonal
//! access selection never perturbs the realisation it acts on.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{AnalyticError, TypicalQuery};
use crate::geometry::{extend_clustered_ues, hexagon_area, sample_poisson_count, HexLattice, Mark, Point, PointPattern, Region};
use crate::planner::{build_tradeoff, solve, PlanSolution, PlannerError, PlanningTargets, Utility};
use crate::quadrature::QuadratureSpec;
use crate::model::{join_violations, AccessMode, ExclusionConfig, ModelError, NetworkConfig, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("SIR threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("at least one trial is required")]
    NoTrials,
    #[error("access mode is not orthogonal")]
    NotOrthogonal,
    #[error("correlation parameter must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("covariance factorisation failed for {0} points")]
    Factorization(usize),
    #[error("simulation window must be positive, got {0}")]
    InvalidWindow(f64),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

/// Outage probability estimated from `trials` independent trials.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutageEstimate {
    pub probability: f64,
    pub trials: u64,
    pub ci95_halfwidth: f64,
}

impl OutageEstimate {
    pub fn from_count(outages: u64, trials: u64) -> Self {
        let p = outages as f64 / trials as f64;
        Self { probability: p, trials, ci95_halfwidth: 1.96 * (p * (1.0 - p) / trials as f64).sqrt() }
    }

    /// Whether `value` lies in the normal-approximation 95% interval.
    pub fn contains(&self, value: f64) -> bool {
        (value - self.probability).abs() <= self.ci95_halfwidth
    }

    pub fn lower(&self) -> f64 {
        self.probability - self.ci95_halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.probability + self.ci95_halfwidth
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrelationTarget {
    Tier1Ues,
    Tier2Bss,
}

/// Index-based Gaussian covariance `L_ij = exp(-α|i-j|²)` applied to one
/// point family per trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationSpec {
    pub target: CorrelationTarget,
    pub alpha: f64,
}

impl CorrelationSpec {
    pub fn new(target: CorrelationTarget, alpha: f64) -> Result<Self, SimError> {
        if alpha > 0.0 {
            Ok(Self { target, alpha })
        } else {
            Err(SimError::InvalidAlpha(alpha))
        }
    }
}

/// Symmetric square root `K` of `L_ij = exp(-α|i-j|²)`, so that `KᵀK = L`.
/// Eigenvalues below `1e-12` are clamped before taking roots.
pub fn correlation_factor(n: usize, alpha: f64) -> Result<DMatrix<f64>, SimError> {
    if !(alpha > 0.0) {
        return Err(SimError::InvalidAlpha(alpha));
    }
    let l = DMatrix::from_fn(n, n, |i, j| {
        let d = i as f64 - j as f64;
        (-alpha * d * d).exp()
    });
    let eig = SymmetricEigen::new(l);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Factorization(n));
    }
    let roots = eig.eigenvalues.map(|v| v.max(1e-12).sqrt());
    let v = &eig.eigenvectors;
    let k = v * DMatrix::from_diagonal(&roots) * v.transpose();
    if k.iter().any(|x| !x.is_finite()) {
        return Err(SimError::Factorization(n));
    }
    Ok(k)
}

fn apply_factor(k: &DMatrix<f64>, points: &[Point]) -> Vec<Point> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let mut acc = Point::ORIGIN;
            for (j, p) in points.iter().enumerate() {
                // Kᵀ = K for the symmetric root.
                acc = acc + *p * k[(j, i)];
            }
            acc
        })
        .collect()
}

/// Replaces the coordinates of `pattern` by `KᵀX`, each axis stacked in the
/// order the points were generated. Marks are preserved.
pub fn correlate_points(pattern: &PointPattern, spec: &CorrelationSpec) -> Result<PointPattern, SimError> {
    if pattern.len() <= 1 {
        return Ok(pattern.clone());
    }
    let k = correlation_factor(pattern.len(), spec.alpha)?;
    Ok(PointPattern { points: apply_factor(&k, &pattern.points), marks: pattern.marks.clone() })
}

/// Interference component a transmitter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    /// Tier-1 UEs in the victim macro cell.
    Tier1In,
    /// Tier-1 UEs elsewhere.
    Tier1Out,
    /// Tier-2 UEs of cells other than the victim's.
    Tier2Inter,
    /// Other tier-2 UEs in the victim's own small cell.
    Tier2Intra,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Tier1In, Component::Tier1Out, Component::Tier2Inter, Component::Tier2Intra];

    fn index(self) -> usize {
        self as usize
    }
}

/// Cell a transmitter belongs to, used by orthogonal access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CellId {
    Macro(usize),
    Small(usize),
    Typical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transmitter {
    pub position: Point,
    /// Base station the transmitter's power control targets.
    pub serving: Point,
    pub target_power: f64,
    pub cell: CellId,
    pub component: Component,
    /// Unit-mean exponential fading towards the victim.
    pub fading: f64,
    /// Standard normal driving the log-normal shadowing ratio.
    pub shadow: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TypicalPlacement {
    Tier1 { x_u: Point },
    /// Typical small cell at the origin with its nearest macro BS at `x_b`.
    Tier2 { x_b: Point, x_u: Point },
}

/// One realisation of the network around the victim receiver.
#[derive(Clone, Debug)]
pub struct Realization {
    pub lattice: HexLattice,
    pub typical: TypicalPlacement,
    /// Fading of the typical link.
    pub typical_fading: f64,
    /// Tier-1 UEs per type; the mark's `cell` indexes `macro_cells`.
    pub tier1_ues: Vec<PointPattern>,
    pub macro_cells: Vec<Point>,
    /// Tier-2 BSs per type; the mark's `cell` is the small-cell id.
    pub tier2_bss: Vec<PointPattern>,
    /// Tier-2 UEs per BS type; the mark's `kind` is the class and `cell` the small-cell id.
    pub tier2_ues: Vec<PointPattern>,
    /// Other UEs of the typical small cell, marked by class.
    pub typical_cell_ues: PointPattern,
    pub transmitters: Vec<Transmitter>,
}

/// Per-trial outcome: typical link and interference split by component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialSample {
    pub fading: f64,
    pub signal_power: f64,
    pub interference: [f64; 4],
    /// Co-block interference under orthogonal access, when requested.
    pub orthogonal: Option<f64>,
}

impl TrialSample {
    pub fn component(&self, c: Component) -> f64 {
        self.interference[c.index()]
    }

    pub fn total(&self) -> f64 {
        self.interference.iter().sum()
    }

    /// Interference seen under the given access mode.
    pub fn interference_for(&self, access: AccessMode) -> f64 {
        match access {
            AccessMode::Shared => self.total(),
            AccessMode::Orthogonal { .. } => self.orthogonal.unwrap_or_else(|| self.total()),
        }
    }

    pub fn is_outage(&self, threshold: f64, interference: f64) -> bool {
        self.signal_power * self.fading < threshold * interference
    }
}

const TYPICAL_STREAM: u64 = 0;
const TIER1_STREAM: u64 = 1;
const TIER2_STREAM: u64 = 2;
const ACCESS_STREAM: u64 = 3;

fn stream(seed: u64, purpose: u64, trial: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&purpose.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(trial);
    rng
}

fn check_threshold(t: f64) -> Result<(), SimError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(SimError::InvalidThreshold(t))
    }
}

struct SmallCell {
    kind: usize,
    position: Point,
    /// Range of this cell's UEs in the shared daughter list.
    daughters: std::ops::Range<usize>,
}

/// Spatial simulator for one configuration.
pub struct Simulator {
    config: NetworkConfig,
    window: f64,
    correlation: Option<CorrelationSpec>,
    factors: Mutex<HashMap<usize, Arc<DMatrix<f64>>>>,
}

impl Simulator {
    pub fn new(config: &NetworkConfig) -> Result<Self, SimError> {
        config.validate().map_err(SimError::Invalid)?;
        Ok(Self { config: config.clone(), window: 10.0, correlation: None, factors: Mutex::new(HashMap::new()) })
    }

    /// Window radius in units of the macro cell radius (default 10).
    pub fn with_window(mut self, cells: f64) -> Result<Self, SimError> {
        if !(cells > 0.0 && cells.is_finite()) {
            return Err(SimError::InvalidWindow(cells));
        }
        self.window = cells;
        Ok(self)
    }

    pub fn with_correlation(mut self, spec: Option<CorrelationSpec>) -> Self {
        self.correlation = spec;
        self
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn check_query(&self, query: TypicalQuery) -> Result<(), SimError> {
        check_threshold(query.threshold())?;
        let cfg = &self.config;
        match query {
            TypicalQuery::Tier1 { ue_type, .. } => {
                if ue_type >= cfg.tier1.len() {
                    return Err(ModelError::IndexOutOfRange { what: "tier-1 UE type", index: ue_type, len: cfg.tier1.len() }.into());
                }
            }
            TypicalQuery::Tier2 { bs_type, class, .. } => {
                if bs_type >= cfg.tier2.len() {
                    return Err(ModelError::IndexOutOfRange { what: "tier-2 BS type", index: bs_type, len: cfg.tier2.len() }.into());
                }
                let n = cfg.tier2[bs_type].classes.len();
                if class >= n {
                    return Err(ModelError::IndexOutOfRange { what: "UE class", index: class, len: n }.into());
                }
            }
        }
        Ok(())
    }

    fn factor(&self, n: usize, alpha: f64) -> Result<Arc<DMatrix<f64>>, SimError> {
        if let Some(k) = self.factors.lock().unwrap().get(&n) {
            return Ok(k.clone());
        }
        let k = Arc::new(correlation_factor(n, alpha)?);
        self.factors.lock().unwrap().insert(n, k.clone());
        Ok(k)
    }

    fn correlate(&self, points: &mut [Point], target: CorrelationTarget) -> Result<(), SimError> {
        match self.correlation {
            Some(spec) if spec.target == target && points.len() > 1 => {
                let k = self.factor(points.len(), spec.alpha)?;
                let moved = apply_factor(&k, points);
                points.copy_from_slice(&moved);
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Realises trial `trial` of the experiment seeded by `seed`.
    pub fn realize(&self, query: TypicalQuery, seed: u64, trial: u64) -> Result<Realization, SimError> {
        self.check_query(query)?;
        let cfg = &self.config;
        let rc = cfg.hex_radius;
        let exclusion = cfg.exclusion;

        // Typical entity.
        let mut rng = stream(seed, TYPICAL_STREAM, trial);
        let typical_fading: f64 = rng.sample(Exp1);
        let own_hex = Region::Hexagon { center: Point::ORIGIN, radius: rc };
        let mut typical_cell_ues = PointPattern::new();
        let mut transmitters = Vec::new();
        let (typical, lattice) = match query {
            TypicalQuery::Tier1 { .. } => {
                (TypicalPlacement::Tier1 { x_u: own_hex.sample_uniform(&mut rng) }, HexLattice::new(rc))
            }
            TypicalQuery::Tier2 { bs_type, class, .. } => {
                let r_min = exclusion.bs_radius().unwrap_or(0.0);
                let x_b = loop {
                    let p = own_hex.sample_uniform(&mut rng);
                    if p.norm() >= r_min {
                        break p;
                    }
                };
                let lattice = HexLattice::with_offset(rc, x_b);
                let bs = &cfg.tier2[bs_type];
                let x_u = sample_profile_point(&bs.classes[class].profile, &mut rng);
                let mut offsets = Vec::new();
                for (j, c) in bs.classes.iter().enumerate() {
                    offsets.clear();
                    extend_clustered_ues(&mut offsets, &c.profile, Point::ORIGIN, &mut rng);
                    for &y in &offsets {
                        let fading: f64 = rng.sample(Exp1);
                        if exclusion.ue_radius().is_some_and(|re| lattice.distance_to_nearest(y) < re) {
                            continue;
                        }
                        typical_cell_ues.push(y, Mark { kind: j, cell: 0 });
                        transmitters.push(Transmitter {
                            position: y,
                            serving: Point::ORIGIN,
                            target_power: c.target_power,
                            cell: CellId::Typical,
                            component: Component::Tier2Intra,
                            fading,
                            shadow: 0.0,
                        });
                    }
                }
                (TypicalPlacement::Tier2 { x_b, x_u }, lattice)
            }
        };
        let tier1_view = matches!(query, TypicalQuery::Tier1 { .. });

        // Tier-1 UEs, hexagon by hexagon.
        let mut rng = stream(seed, TIER1_STREAM, trial);
        let mut macro_cells = lattice.centers_within(self.window * rc);
        let hex_a = hexagon_area(rc);
        // (position, type, cell, fading, shadow) in generation order.
        let mut raw1: Vec<Vec<(Point, usize, f64, f64)>> = vec![Vec::new(); cfg.tier1.len()];
        for (ci, &c) in macro_cells.iter().enumerate() {
            let region = Region::Hexagon { center: c, radius: rc };
            for (t, ue) in cfg.tier1.iter().enumerate() {
                let n = sample_poisson_count(ue.intensity * hex_a, &mut rng);
                for _ in 0..n {
                    let p = region.sample_uniform(&mut rng);
                    let h: f64 = rng.sample(Exp1);
                    let z: f64 = rng.sample(StandardNormal);
                    raw1[t].push((p, ci, h, z));
                }
            }
        }
        let mut cell_index: HashMap<(u64, u64), usize> = HashMap::new();
        for (i, c) in macro_cells.iter().enumerate() {
            cell_index.insert(point_key(*c), i);
        }
        let mut tier1_ues = Vec::with_capacity(cfg.tier1.len());
        for (t, raw) in raw1.iter().enumerate() {
            let mut pos: Vec<Point> = raw.iter().map(|r| r.0).collect();
            let moved = self.correlation.is_some_and(|s| s.target == CorrelationTarget::Tier1Ues);
            self.correlate(&mut pos, CorrelationTarget::Tier1Ues)?;
            let mut pattern = PointPattern::new();
            for (k, &(_, ci, h, z)) in raw.iter().enumerate() {
                let p = pos[k];
                let (serving, ci) = if moved {
                    let c = lattice.nearest_center(p);
                    let next = macro_cells.len();
                    let idx = *cell_index.entry(point_key(c)).or_insert(next);
                    if idx == next {
                        macro_cells.push(c);
                    }
                    (c, idx)
                } else {
                    (macro_cells[ci], ci)
                };
                let in_cell = tier1_view && serving.norm() <= 1e-9 * rc;
                pattern.push(p, Mark { kind: t, cell: ci });
                transmitters.push(Transmitter {
                    position: p,
                    serving,
                    target_power: cfg.tier1[t].target_power,
                    cell: CellId::Macro(ci),
                    component: if in_cell { Component::Tier1In } else { Component::Tier1Out },
                    fading: h,
                    shadow: if in_cell { 0.0 } else { z },
                });
            }
            tier1_ues.push(pattern);
        }

        // Tier-2 cells, hexagon by hexagon over a region covering the disk.
        let mut rng = stream(seed, TIER2_STREAM, trial);
        let reach = self.window * rc + cfg.max_small_cell_radius();
        let mut cells: Vec<Vec<SmallCell>> = (0..cfg.tier2.len()).map(|_| Vec::new()).collect();
        let mut offsets = Vec::new();
        // `(offset from the BS, class, fading, shadow)` for every small cell.
        let mut daughters: Vec<(Point, usize, f64, f64)> = Vec::new();
        for c in lattice.centers_within(reach + rc) {
            let region = Region::Hexagon { center: c, radius: rc };
            for (i, bs) in cfg.tier2.iter().enumerate() {
                let n = sample_poisson_count(bs.intensity * hex_a, &mut rng);
                for _ in 0..n {
                    let position = region.sample_uniform(&mut rng);
                    let first = daughters.len();
                    for (j, class) in bs.classes.iter().enumerate() {
                        offsets.clear();
                        extend_clustered_ues(&mut offsets, &class.profile, Point::ORIGIN, &mut rng);
                        for &d in &offsets {
                            let h: f64 = rng.sample(Exp1);
                            let z: f64 = rng.sample(StandardNormal);
                            daughters.push((d, j, h, z));
                        }
                    }
                    cells[i].push(SmallCell { kind: i, position, daughters: first..daughters.len() });
                }
            }
        }
        let mut tier2_bss = Vec::with_capacity(cfg.tier2.len());
        let mut tier2_ues = Vec::with_capacity(cfg.tier2.len());
        let mut next_cell = 0usize;
        for (i, family) in cells.iter_mut().enumerate() {
            let mut pos: Vec<Point> = family.iter().map(|c| c.position).collect();
            self.correlate(&mut pos, CorrelationTarget::Tier2Bss)?;
            let mut bss = PointPattern::new();
            let mut ues = PointPattern::new();
            for (cell, x0) in family.iter().zip(pos) {
                if x0.norm() > reach {
                    continue;
                }
                if exclusion.bs_radius().is_some_and(|re| lattice.distance_to_nearest(x0) < re) {
                    continue;
                }
                let id = next_cell;
                next_cell += 1;
                bss.push(x0, Mark { kind: cell.kind, cell: id });
                for &(d, j, h, z) in &daughters[cell.daughters.clone()] {
                    let y = x0 + d;
                    if exclusion.ue_radius().is_some_and(|re| lattice.distance_to_nearest(y) < re) {
                        continue;
                    }
                    ues.push(y, Mark { kind: j, cell: id });
                    transmitters.push(Transmitter {
                        position: y,
                        serving: x0,
                        target_power: cfg.tier2[i].classes[j].target_power,
                        cell: CellId::Small(id),
                        component: Component::Tier2Inter,
                        fading: h,
                        shadow: z,
                    });
                }
            }
            tier2_bss.push(bss);
            tier2_ues.push(ues);
        }

        let realization = Realization {
            lattice,
            typical,
            typical_fading,
            tier1_ues,
            macro_cells,
            tier2_bss,
            tier2_ues,
            typical_cell_ues,
            transmitters,
        };
        assert_eq!(realization.exclusion_violations(&exclusion), 0, "realisation violates the exclusion predicate");
        Ok(realization)
    }

    /// Received interference power at the victim from one transmitter.
    pub fn received_power(&self, tx: &Transmitter) -> f64 {
        let sigma = self.config.channel.shadow_sigma_ln();
        let ratio = if tx.serving == Point::ORIGIN {
            1.0
        } else {
            let q = (tx.position - tx.serving).norm_sq() / tx.position.norm_sq();
            let half = 0.5 * self.config.channel.pathloss_exponent;
            if half.fract() == 0.0 && half <= 16.0 {
                q.powi(half as i32)
            } else {
                q.powf(half)
            }
        };
        tx.target_power * ratio * (sigma * tx.shadow).exp() * tx.fading
    }

    fn signal_power(&self, query: TypicalQuery) -> f64 {
        match query {
            TypicalQuery::Tier1 { ue_type, .. } => self.config.tier1[ue_type].target_power,
            TypicalQuery::Tier2 { bs_type, class, .. } => self.config.tier2[bs_type].classes[class].target_power,
        }
    }

    /// Co-block interference when each cell independently gives its `blocks`
    /// resource blocks to distinct, uniformly chosen UEs. The typical UE's
    /// block is fixed by symmetry; a cell with `c` UEs puts one on it with
    /// probability `min(c, n)/n`, chosen uniformly.
    pub fn orthogonal_interference(&self, r: &Realization, blocks: u32, seed: u64, trial: u64) -> f64 {
        let victim = match r.typical {
            TypicalPlacement::Tier1 { .. } => CellId::Macro(0),
            TypicalPlacement::Tier2 { .. } => CellId::Typical,
        };
        // Counting sort of transmitters by cell, macro cells first, keeping
        // generation order within each cell.
        let n_macro = r.macro_cells.len();
        let n_small: usize = r.tier2_bss.iter().map(|p| p.len()).sum();
        let slot = |c: CellId| match c {
            CellId::Macro(i) => i,
            CellId::Small(j) => n_macro + j,
            CellId::Typical => n_macro + n_small,
        };
        let skip = slot(victim);
        let mut start = vec![0usize; n_macro + n_small + 2];
        for tx in &r.transmitters {
            start[slot(tx.cell) + 1] += 1;
        }
        for k in 1..start.len() {
            start[k] += start[k - 1];
        }
        let mut fill = start.clone();
        let mut order = vec![0usize; r.transmitters.len()];
        for (k, tx) in r.transmitters.iter().enumerate() {
            let g = slot(tx.cell);
            order[fill[g]] = k;
            fill[g] += 1;
        }
        let mut rng = stream(seed, ACCESS_STREAM, trial);
        let n = blocks as usize;
        let mut total = 0.0;
        for g in 0..start.len() - 1 {
            let c = start[g + 1] - start[g];
            if g == skip || c == 0 {
                continue;
            }
            let pick = rng.random_range(0..c.max(n));
            if pick < c {
                total += self.received_power(&r.transmitters[order[start[g] + pick]]);
            }
        }
        total
    }

    /// Realises and evaluates one trial.
    pub fn sample(&self, query: TypicalQuery, seed: u64, trial: u64, access: AccessMode) -> Result<TrialSample, SimError> {
        let r = self.realize(query, seed, trial)?;
        let mut interference = [0.0; 4];
        for tx in &r.transmitters {
            interference[tx.component.index()] += self.received_power(tx);
        }
        let orthogonal = match access {
            AccessMode::Shared => None,
            AccessMode::Orthogonal { blocks } => Some(self.orthogonal_interference(&r, blocks, seed, trial)),
        };
        Ok(TrialSample { fading: r.typical_fading, signal_power: self.signal_power(query), interference, orthogonal })
    }

    /// Samples of trials `0..trials`, in trial order.
    pub fn samples(&self, query: TypicalQuery, trials: u64, seed: u64, access: AccessMode) -> Result<Vec<TrialSample>, SimError> {
        self.check_query(query)?;
        (0..trials).into_par_iter().map(|t| self.sample(query, seed, t, access)).collect()
    }

    /// Outage estimates for every threshold from one set of realisations.
    pub fn estimate(
        &self,
        query: TypicalQuery,
        thresholds: &[f64],
        trials: u64,
        seed: u64,
        access: AccessMode,
    ) -> Result<Vec<OutageEstimate>, SimError> {
        if trials == 0 {
            return Err(SimError::NoTrials);
        }
        for &t in thresholds {
            check_threshold(t)?;
        }
        self.check_query(query)?;
        let m = thresholds.len();
        let counts = (0..trials)
            .into_par_iter()
            .map(|t| -> Result<Vec<u64>, SimError> {
                let s = self.sample(query, seed, t, access)?;
                let i = s.interference_for(access);
                Ok(thresholds.iter().map(|&th| s.is_outage(th, i) as u64).collect())
            })
            .try_reduce(|| vec![0; m], |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect()))?;
        Ok(counts.into_iter().map(|c| OutageEstimate::from_count(c, trials)).collect())
    }
}

fn point_key(p: Point) -> (u64, u64) {
    // Normalise the sign of zero so equal centres share a key.
    ((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits())
}

/// One point from the normalised radial profile, by rejection.
fn sample_profile_point<R: Rng + ?Sized>(profile: &crate::model::IntensityProfile, rng: &mut R) -> Point {
    let peak = profile.peak_density();
    let disk = Region::Disk { center: Point::ORIGIN, radius: profile.support_radius };
    if !(peak > 0.0) {
        return disk.sample_uniform(rng);
    }
    for _ in 0..10_000 {
        let p = disk.sample_uniform(rng);
        if rng.random::<f64>() * peak <= profile.density(p.norm()) {
            return p;
        }
    }
    disk.sample_uniform(rng)
}

impl Realization {
    /// Number of tier-2 points violating the configured exclusion predicate.
    pub fn exclusion_violations(&self, exclusion: &ExclusionConfig) -> usize {
        let inside = |p: &Point, re: f64| self.lattice.distance_to_nearest(*p) < re;
        match *exclusion {
            ExclusionConfig::None => 0,
            ExclusionConfig::BsExclusion { radius } => {
                self.tier2_bss.iter().flat_map(|p| p.points.iter()).filter(|p| inside(p, radius)).count()
            }
            ExclusionConfig::UeExclusion { radius } => self
                .tier2_ues
                .iter()
                .chain(std::iter::once(&self.typical_cell_ues))
                .flat_map(|p| p.points.iter())
                .filter(|p| inside(p, radius))
                .count(),
        }
    }
}

/// Shared-access outage estimate.
pub fn simulate_outage(config: &NetworkConfig, query: TypicalQuery, trials: u64, seed: u64) -> Result<OutageEstimate, SimError> {
    let sim = Simulator::new(config)?;
    Ok(sim.estimate(query, &[query.threshold()], trials, seed, AccessMode::Shared)?[0])
}

/// Outage estimate under dependent orthogonal access.
pub fn simulate_orthogonal(config: &NetworkConfig, query: TypicalQuery, trials: u64, seed: u64) -> Result<OutageEstimate, SimError> {
    if !matches!(config.access, AccessMode::Orthogonal { .. }) {
        return Err(SimError::NotOrthogonal);
    }
    let sim = Simulator::new(config)?;
    Ok(sim.estimate(query, &[query.threshold()], trials, seed, config.access)?[0])
}

/// Income lost to location correlation at one `α`.
#[derive(Clone, Debug, PartialEq)]
pub struct GapPoint {
    pub alpha: f64,
    /// Simulated outage at the uncorrelated optimum, one per constraint row.
    pub simulated: Vec<OutageEstimate>,
    /// Caps the operator must accept to keep the uncorrelated income.
    pub relaxed_targets: Vec<f64>,
    pub plan: PlanSolution,
    /// `(U(α) - U*) / U(α)`.
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelativeGap {
    pub baseline: PlanSolution,
    pub points: Vec<GapPoint>,
}

/// Relaxed-constraint protocol for correlated deployments.
///
/// Solves the uncorrelated plan `(μ*, U*)`, simulates every constrained
/// outage at `μ*` with correlation `α`, raises each cap to the simulated value
/// where it exceeds the original, and re-solves for `U(α)`. Caps are never
/// lowered, so the relaxed problem contains the original and `η ≥ 0` even when
/// simulation noise lands below a target.
#[allow(clippy::too_many_arguments)]
pub fn estimate_relative_gap(
    config: &NetworkConfig,
    targets: &PlanningTargets,
    utilities: &[Utility],
    correlation: CorrelationTarget,
    alphas: &[f64],
    trials: u64,
    seed: u64,
    spec: &QuadratureSpec,
) -> Result<RelativeGap, SimError> {
    if trials == 0 {
        return Err(SimError::NoTrials);
    }
    let system = build_tradeoff(config, targets, spec)?;
    let baseline = solve(&system, utilities)?;
    let mut at_optimum = config.clone();
    for (b, mu) in at_optimum.tier2.iter_mut().zip(&baseline.mu) {
        b.intensity = *mu;
    }
    let access = at_optimum.access;
    let mut points = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let sim = Simulator::new(&at_optimum)?.with_correlation(Some(CorrelationSpec::new(correlation, alpha)?));
        let simulated = system
            .constraints
            .iter()
            .map(|c| Ok(sim.estimate(c.id.query(system.threshold), &[system.threshold], trials, seed, access)?[0]))
            .collect::<Result<Vec<_>, SimError>>()?;
        let relaxed_targets: Vec<f64> =
            system.constraints.iter().zip(&simulated).map(|(c, e)| c.target.max(e.probability)).collect();
        let plan = solve(&system.with_targets(&relaxed_targets)?, utilities)?;
        let eta = if plan.utility > 0.0 { (plan.utility - baseline.utility) / plan.utility } else { 0.0 };
        points.push(GapPoint { alpha, simulated, relaxed_targets, plan, eta });
    }
    Ok(RelativeGap { baseline, points })
}

/// Sample mean of `exp(-s I)` over the chosen components, with its 95% halfwidth.
pub fn laplace_estimate(samples: &[TrialSample], s: f64, components: &[Component]) -> (f64, f64) {
    let n = samples.len() as f64;
    let vals: Vec<f64> = samples
        .iter()
        .map(|x| (-s * components.iter().map(|c| x.component(*c)).sum::<f64>()).exp())
        .collect();
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, 1.96 * (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::single;
    use crate::model::IntensityProfile;

    fn tier1(t: f64) -> TypicalQuery {
        TypicalQuery::Tier1 { ue_type: 0, threshold: t }
    }

    fn tier2(t: f64) -> TypicalQuery {
        TypicalQuery::Tier2 { bs_type: 0, class: 0, threshold: t }
    }

    #[test]
    fn tiny_threshold_gives_zero_outage() {
        let cfg = single(0.5, 0.5, -70.0, -70.0, 4.0);
        for q in [tier1(1e-9), tier2(1e-9)] {
            let est = simulate_outage(&cfg, q, 2000, 3).unwrap();
            assert_eq!(est.probability, 0.0);
            assert_eq!(est.ci95_halfwidth, 0.0);
        }
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let cfg = single(0.5, 0.5, -70.0, -70.0, 4.0);
        let a = simulate_outage(&cfg, tier2(0.5), 400, 11).unwrap();
        let b = simulate_outage(&cfg, tier2(0.5), 400, 11).unwrap();
        assert_eq!(a.probability.to_bits(), b.probability.to_bits());
        let sim = Simulator::new(&cfg).unwrap();
        let x = sim.sample(tier1(0.1), 5, 17, AccessMode::Shared).unwrap();
        let y = sim.sample(tier1(0.1), 5, 17, AccessMode::Shared).unwrap();
        assert_eq!(x, y);
        let z = sim.sample(tier1(0.1), 6, 17, AccessMode::Shared).unwrap();
        assert_ne!(x, z);
    }

    #[test]
    fn estimates_do_not_depend_on_worker_count() {
        let cfg = single(0.5, 0.5, -70.0, -70.0, 4.0);
        let sim = Simulator::new(&cfg).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sim.estimate(tier1(0.3), &[0.1, 0.3, 1.0], 300, 21, AccessMode::Shared).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn rejects_bad_queries() {
        let cfg = single(0.5, 0.5, -70.0, -70.0, 4.0);
        assert!(matches!(simulate_outage(&cfg, TypicalQuery::Tier1 { ue_type: 1, threshold: 0.1 }, 10, 0), Err(SimError::Model(_))));
        assert!(matches!(
            simulate_outage(&cfg, TypicalQuery::Tier2 { bs_type: 0, class: 2, threshold: 0.1 }, 10, 0),
            Err(SimError::Model(_))
        ));
        assert!(matches!(simulate_outage(&cfg, tier1(-1.0), 10, 0), Err(SimError::InvalidThreshold(_))));
        assert!(matches!(simulate_outage(&cfg, tier1(0.1), 0, 0), Err(SimError::NoTrials)));
        assert!(matches!(simulate_orthogonal(&cfg, tier1(0.1), 10, 0), Err(SimError::NotOrthogonal)));
    }

    #[test]
    fn ci_halfwidth_matches_normal_approximation() {
        let e = OutageEstimate::from_count(250, 1000);
        assert!((e.ci95_halfwidth - 1.96 * (0.25f64 * 0.75 / 1000.0).sqrt()).abs() < 1e-15);
        assert!(e.contains(0.26) && !e.contains(0.3));
    }

    #[test]
    fn single_cell_with_ample_blocks_never_fails() {
        let mut cfg = single(2.0, 0.0, -70.0, -70.0, 4.0);
        cfg.tier2.clear();
        cfg.access = AccessMode::Orthogonal { blocks: 1000 };
        let sim = Simulator::new(&cfg).unwrap().with_window(0.5).unwrap();
        let est = sim.estimate(tier1(1.0), &[1.0], 500, 8, cfg.access).unwrap();
        assert_eq!(est[0].probability, 0.0);
        let s = sim.sample(tier1(1.0), 8, 0, cfg.access).unwrap();
        assert_eq!(s.orthogonal, Some(0.0));
    }

    #[test]
    fn one_block_matches_shared_without_intra_when_cells_are_sparse() {
        let mut cfg = single(0.05, 0.05, -70.0, -70.0, 4.0);
        cfg.tier2[0].classes[0].profile = IntensityProfile::constant(0.2, 0.8);
        let sim = Simulator::new(&cfg).unwrap();
        let one = AccessMode::Orthogonal { blocks: 1 };
        let mut compared = 0;
        for q in [tier1(0.5), tier2(0.5)] {
            for trial in 0..150 {
                let r = sim.realize(q, 4, trial).unwrap();
                let mut counts: HashMap<CellId, usize> = HashMap::new();
                for tx in &r.transmitters {
                    *counts.entry(tx.cell).or_default() += 1;
                }
                let victim = if matches!(q, TypicalQuery::Tier1 { .. }) { CellId::Macro(0) } else { CellId::Typical };
                if counts.iter().any(|(c, n)| *c != victim && *n > 1) {
                    continue;
                }
                compared += 1;
                let s = sim.sample(q, 4, trial, one).unwrap();
                let shared = s.component(Component::Tier1Out) + s.component(Component::Tier2Inter);
                let orth = s.orthogonal.unwrap();
                assert!((orth - shared).abs() <= 1e-12 * shared.max(1e-300), "trial {trial}: {orth} vs {shared}");
            }
        }
        assert!(compared > 50, "only {compared} sparse trials");
    }

    #[test]
    fn orthogonal_selection_leaves_realisation_untouched() {
        let mut cfg = single(0.5, 0.5, -70.0, -70.0, 4.0);
        cfg.access = AccessMode::Orthogonal { blocks: 4 };
        let sim = Simulator::new(&cfg).unwrap();
        let a = sim.sample(tier2(1.0), 9, 3, AccessMode::Shared).unwrap();
        let b = sim.sample(tier2(1.0), 9, 3, cfg.access).unwrap();
        assert_eq!(a.interference, b.interference);
        assert_eq!(a.fading, b.fading);
        assert!(b.orthogonal.unwrap() <= b.total() - b.component(Component::Tier2Intra) + 1e-300);
    }

    #[test]
    fn exclusion_predicate_holds_in_every_realisation() {
        let base = single(0.5, 1.0, -70.0, -70.0, 4.0);
        for ex in [ExclusionConfig::BsExclusion { radius: 0.4 }, ExclusionConfig::UeExclusion { radius: 0.4 }] {
            let mut cfg = base.clone();
            cfg.exclusion = ex;
            let sim = Simulator::new(&cfg).unwrap();
            let plain = Simulator::new(&base).unwrap();
            let (mut with, mut without) = (0, 0);
            for q in [tier1(0.1), tier2(0.1)] {
                for t in 0..40 {
                    let r = sim.realize(q, 2, t).unwrap();
                    assert_eq!(r.exclusion_violations(&ex), 0);
                    with += r.transmitters.len();
                    without += plain.realize(q, 2, t).unwrap().transmitters.len();
                    if let (ExclusionConfig::BsExclusion { radius }, TypicalPlacement::Tier2 { x_b, .. }) = (ex, r.typical) {
                        assert!(x_b.norm() >= radius);
                    }
                }
            }
            assert!(with < without, "{ex:?}: {with} vs {without}");
        }
    }

    #[test]
    fn huge_alpha_is_identity() {
        let pts: Vec<Point> = (0..12).map(|k| Point::new(k as f64 * 0.7 - 3.0, (k as f64).sin())).collect();
        let pattern = PointPattern::from_points(pts.clone());
        let spec = CorrelationSpec::new(CorrelationTarget::Tier1Ues, 1e6).unwrap();
        let out = correlate_points(&pattern, &spec).unwrap();
        for (a, b) in out.points.iter().zip(&pts) {
            assert!((*a - *b).norm() < 1e-8);
        }
        let one = PointPattern::from_points(vec![Point::new(0.3, -0.2)]);
        let spec = CorrelationSpec::new(CorrelationTarget::Tier2Bss, 0.01).unwrap();
        assert_eq!(correlate_points(&one, &spec).unwrap(), one);
        assert!(CorrelationSpec::new(CorrelationTarget::Tier2Bss, 0.0).is_err());
    }

    #[test]
    fn factor_squares_to_covariance() {
        for alpha in [0.01, 0.1, 1.0] {
            let k = correlation_factor(30, alpha).unwrap();
            let l = k.transpose() * &k;
            for i in 0..30 {
                for j in 0..30 {
                    let d = i as f64 - j as f64;
                    assert!((l[(i, j)] - (-alpha * d * d).exp()).abs() < 1e-5, "alpha={alpha} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn transformed_normals_have_the_target_covariance() {
        let (n, alpha, reps) = (8, 0.1, 10_000);
        let spec = CorrelationSpec::new(CorrelationTarget::Tier1Ues, alpha).unwrap();
        let mut rng = stream(99, 0, 0);
        let mut acc = DMatrix::<f64>::zeros(n, n);
        for _ in 0..reps {
            let pts: Vec<Point> = (0..n).map(|_| Point::new(rng.sample(StandardNormal), 0.0)).collect();
            let out = correlate_points(&PointPattern::from_points(pts), &spec).unwrap();
            for i in 0..n {
                for j in 0..n {
                    acc[(i, j)] += out.points[i].x * out.points[j].x;
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let d = i as f64 - j as f64;
                let want = (-alpha * d * d).exp();
                assert!((acc[(i, j)] / reps as f64 - want).abs() < 0.05, "({i},{j})");
            }
        }
    }

    #[test]
    fn correlated_runs_are_deterministic() {
        let cfg = single(0.3, 0.3, -70.0, -70.0, 4.0);
        for target in [CorrelationTarget::Tier1Ues, CorrelationTarget::Tier2Bss] {
            let spec = CorrelationSpec::new(target, 0.5).unwrap();
            let sim = Simulator::new(&cfg).unwrap().with_correlation(Some(spec));
            let a = sim.estimate(tier1(0.1), &[0.1], 100, 5, AccessMode::Shared).unwrap();
            let b = sim.estimate(tier1(0.1), &[0.1], 100, 5, AccessMode::Shared).unwrap();
            assert_eq!(a, b);
        }
    }
}
