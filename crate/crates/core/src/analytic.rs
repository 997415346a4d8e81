//! Laplace transforms of the interference at a typical receiver and the
//! resulting outage probabilities.
//!
//! The victim receiver always sits at the origin. In the tier-1 view it is the
//! macro base station at the lattice point `0`; in the tier-2 view it is a
//! small-cell base station and the macro lattice is shifted so that its point
//! nearest the origin is `x_B`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{closest_point_on_hexagon, hexagon_area, Disk, HexLattice, Point};
use crate::model::{join_violations, AccessMode, ExclusionConfig, ModelError, NetworkConfig, Violation};
use crate::quadrature::{
    disk_radial_integral, hexagon_disk_nodes, hexagon_wedge_nodes, integrate_radial_plane, ChebyshevTable,
    QuadratureError, QuadratureSpec, Rules, ShadowKernel,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("invalid configuration: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("SIR threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("average outage needs one tier-1 UE type, one tier-2 BS type and one UE class")]
    NotSingleType,
    #[error("access mode is not orthogonal")]
    NotOrthogonal,
    #[error("average outage undefined: no users in either tier")]
    NoUsers,
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Where the victim receiver sits relative to the macro lattice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum View {
    Tier1,
    Tier2 { xb: Point },
}

impl View {
    pub fn offset(&self) -> Point {
        match *self {
            View::Tier1 => Point::ORIGIN,
            View::Tier2 { xb } => xb,
        }
    }

    fn key(&self) -> (u64, u64) {
        match *self {
            View::Tier1 => (u64::MAX, u64::MAX),
            View::Tier2 { xb } => (xb.x.to_bits(), xb.y.to_bits()),
        }
    }
}

/// The typical UE whose outage is requested.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TypicalQuery {
    Tier1 { ue_type: usize, threshold: f64 },
    Tier2 { bs_type: usize, class: usize, threshold: f64 },
}

impl TypicalQuery {
    pub fn threshold(&self) -> f64 {
        match *self {
            TypicalQuery::Tier1 { threshold, .. } | TypicalQuery::Tier2 { threshold, .. } => threshold,
        }
    }

    pub fn with_threshold(self, t: f64) -> Self {
        match self {
            TypicalQuery::Tier1 { ue_type, .. } => TypicalQuery::Tier1 { ue_type, threshold: t },
            TypicalQuery::Tier2 { bs_type, class, .. } => TypicalQuery::Tier2 { bs_type, class, threshold: t },
        }
    }
}

/// A configuration prepared for analysis, with the intra-cell terms that the
/// access scheme keeps.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveConfig {
    pub config: NetworkConfig,
    pub tier1_in_cell: bool,
    pub tier2_intra_cell: bool,
}

impl EffectiveConfig {
    /// Thinned config under orthogonal access, the config itself otherwise.
    pub fn for_access(config: &NetworkConfig) -> Result<Self, AnalyticError> {
        match config.access {
            AccessMode::Shared => {
                Ok(Self { config: config.clone(), tier1_in_cell: true, tier2_intra_cell: true })
            }
            AccessMode::Orthogonal { .. } => apply_orthogonal_thinning(config),
        }
    }
}

/// Divides every UE intensity by the number of resource blocks and drops the
/// intra-cell interference terms.
pub fn apply_orthogonal_thinning(config: &NetworkConfig) -> Result<EffectiveConfig, AnalyticError> {
    let n = match config.access {
        AccessMode::Orthogonal { blocks } => blocks,
        AccessMode::Shared => return Err(AnalyticError::NotOrthogonal),
    };
    if n < 1 {
        return Err(AnalyticError::Invalid(vec![Violation::new("access.blocks", "must be at least 1")]));
    }
    let f = 1.0 / n as f64;
    let mut out = config.clone();
    for t in &mut out.tier1 {
        t.intensity *= f;
    }
    for b in &mut out.tier2 {
        for c in &mut b.classes {
            c.profile = c.profile.scaled(f);
        }
    }
    Ok(EffectiveConfig { config: out, tier1_in_cell: false, tier2_intra_cell: false })
}

/// A Laplace transform `s ↦ E[exp(−s I)]` of one interference component.
pub struct InterferenceLaplace<'a> {
    label: &'static str,
    eval: Box<dyn Fn(f64) -> Result<f64, AnalyticError> + Send + Sync + 'a>,
}

impl<'a> InterferenceLaplace<'a> {
    fn new(label: &'static str, eval: impl Fn(f64) -> Result<f64, AnalyticError> + Send + Sync + 'a) -> Self {
        Self { label, eval: Box::new(eval) }
    }

    pub fn label(&self) -> &'static str {
        self.label
    }

    pub fn eval(&self, s: f64) -> Result<f64, AnalyticError> {
        if s == 0.0 {
            return Ok(1.0);
        }
        (self.eval)(s)
    }

    /// Transform of the sum of two independent components.
    pub fn product(self, other: InterferenceLaplace<'a>) -> InterferenceLaplace<'a> {
        InterferenceLaplace::new("product", move |s| Ok(self.eval(s)? * other.eval(s)?))
    }
}

/// Interference exponents at a tier-1 victim, `L = exp(−(in + out + tier2))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tier1Exponents {
    pub in_cell: f64,
    pub out_cell: f64,
    pub tier2: f64,
}

impl Tier1Exponents {
    pub fn total(&self) -> f64 {
        self.in_cell + self.out_cell + self.tier2
    }
}

type ViewKey = (u64, u64);

/// Analytic evaluator for one network configuration.
///
/// Lattice sums, cell coefficients and radial tables depend only on the
/// Laplace argument and the view, not on intensities, and are memoized.
pub struct Analyzer {
    original: NetworkConfig,
    eff: EffectiveConfig,
    rules: Rules,
    kernel: ShadowKernel,
    half_gamma: f64,
    unfactored: bool,
    tier1_sums: Mutex<HashMap<(u64, ViewKey), f64>>,
    coeffs: Mutex<HashMap<(usize, u64, ViewKey), f64>>,
    radial_tables: Mutex<HashMap<(usize, u64), Arc<ChebyshevTable>>>,
    view_free: Mutex<HashMap<(usize, u64), (f64, f64)>>,
}

impl Analyzer {
    pub fn new(config: &NetworkConfig, spec: &QuadratureSpec) -> Result<Self, AnalyticError> {
        config.validate().map_err(AnalyticError::Invalid)?;
        let eff = EffectiveConfig::for_access(config)?;
        Ok(Self {
            original: config.clone(),
            kernel: ShadowKernel::from_sigma_db(config.channel.shadow_sigma_db, spec),
            half_gamma: 0.5 * config.channel.pathloss_exponent,
            rules: Rules::new(spec),
            eff,
            unfactored: false,
            tier1_sums: Mutex::new(HashMap::new()),
            coeffs: Mutex::new(HashMap::new()),
            radial_tables: Mutex::new(HashMap::new()),
            view_free: Mutex::new(HashMap::new()),
        })
    }

    /// Forces the tier-2 outage through the full average over `x_B` even when
    /// the factored form applies.
    pub fn with_unfactored(mut self, on: bool) -> Self {
        self.unfactored = on;
        self
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.original
    }

    pub fn effective(&self) -> &EffectiveConfig {
        &self.eff
    }

    pub fn spec(&self) -> &QuadratureSpec {
        &self.rules.spec
    }

    fn cfg(&self) -> &NetworkConfig {
        &self.eff.config
    }

    fn hex_r(&self) -> f64 {
        self.cfg().hex_radius
    }

    fn cap(&self) -> f64 {
        self.rules.spec.lattice_cap * self.hex_r()
    }

    fn lattice(&self, view: View) -> HexLattice {
        HexLattice::with_offset(self.hex_r(), view.offset())
    }

    /// `φ(e^{ln_s} (num/den)^{γ/2})`.
    #[inline]
    fn phi(&self, ln_s: f64, num_sq: f64, den_sq: f64) -> f64 {
        self.kernel.eval_log(ln_s + self.half_gamma * (num_sq / den_sq).ln())
    }

    fn check_tier1(&self, i: usize) -> Result<(), AnalyticError> {
        let len = self.cfg().tier1.len();
        if i < len {
            Ok(())
        } else {
            Err(ModelError::IndexOutOfRange { what: "tier-1 UE type", index: i, len }.into())
        }
    }

    fn check_tier2(&self, l: usize, k: Option<usize>) -> Result<(), AnalyticError> {
        let len = self.cfg().tier2.len();
        if l >= len {
            return Err(ModelError::IndexOutOfRange { what: "tier-2 BS type", index: l, len }.into());
        }
        if let Some(k) = k {
            let n = self.cfg().tier2[l].classes.len();
            if k >= n {
                return Err(ModelError::IndexOutOfRange { what: "UE class", index: k, len: n }.into());
            }
        }
        Ok(())
    }

    fn check_s(s: f64) -> Result<(), AnalyticError> {
        if s >= 0.0 && s.is_finite() {
            Ok(())
        } else {
            Err(AnalyticError::InvalidThreshold(s))
        }
    }

    // ---- tier-1 interferers -------------------------------------------------

    /// Exponent of the in-cell tier-1 interference of type `i` at the macro BS.
    pub fn tier1_in_exponent(&self, i: usize, s: f64) -> f64 {
        if !self.eff.tier1_in_cell {
            return 0.0;
        }
        let t = &self.cfg().tier1[i];
        let sp = s * t.target_power;
        t.intensity * hexagon_area(self.hex_r()) * sp / (sp + 1.0)
    }

    /// `Σ_{x₁} ∫_{H(x₁)} φ(sP|x − x₁|^γ / |x|^γ) dx`: the out-of-cell tier-1
    /// exponent per unit intensity for power-scaled argument `sp = s·P`.
    pub fn tier1_out_sum(&self, sp: f64, view: View) -> f64 {
        if sp == 0.0 {
            return 0.0;
        }
        let key = (sp.to_bits(), view.key());
        if let Some(v) = self.tier1_sums.lock().unwrap().get(&key) {
            return *v;
        }
        let r = self.hex_r();
        let lattice = self.lattice(view);
        let cells: Vec<Point> = lattice
            .centers_within(self.cap())
            .into_iter()
            .filter(|c| !(view == View::Tier1 && c.norm() <= 1e-9 * r))
            .collect();
        let ln_s = sp.ln();
        let parts: Vec<f64> = cells
            .par_iter()
            .map(|c| {
                let q = closest_point_on_hexagon(*c, r, Point::ORIGIN);
                let focus = if q.norm() < 0.25 * r { Some(q) } else { None };
                let mut nodes = Vec::new();
                self.rules.hexagon_nodes(*c, r, focus, &mut nodes);
                nodes.iter().map(|(x, w)| w * self.phi(ln_s, (*x - *c).norm_sq(), x.norm_sq())).sum()
            })
            .collect();
        let v: f64 = parts.iter().sum();
        self.tier1_sums.lock().unwrap().insert(key, v);
        v
    }

    /// Exponent of the out-of-cell tier-1 interference of type `i`.
    pub fn tier1_out_exponent(&self, i: usize, s: f64, view: View) -> f64 {
        let t = &self.cfg().tier1[i];
        if t.intensity == 0.0 {
            return 0.0;
        }
        t.intensity * self.tier1_out_sum(s * t.target_power, view)
    }

    /// Total tier-1 exponent at the victim: in-cell terms only in the tier-1 view.
    fn tier1_exponent(&self, s: f64, view: View) -> f64 {
        (0..self.cfg().tier1.len())
            .map(|i| {
                let inc = if view == View::Tier1 { self.tier1_in_exponent(i, s) } else { 0.0 };
                inc + self.tier1_out_exponent(i, s, view)
            })
            .sum()
    }

    // ---- tier-2 cells -------------------------------------------------------

    fn ue_exclusion_holes(&self, x0: Point, reach: f64, view: View) -> Vec<Disk> {
        match self.cfg().exclusion {
            ExclusionConfig::UeExclusion { radius } => self
                .lattice(view)
                .centers_near(x0, reach + radius)
                .into_iter()
                .map(|c| Disk::new(c - x0, radius))
                .collect(),
            _ => Vec::new(),
        }
    }

    fn support(&self, i: usize) -> f64 {
        self.cfg().tier2[i].classes.iter().map(|c| c.profile.support_radius).fold(0.0, f64::max)
    }

    /// `Σ_j ∫_{B(0,R_i) \ holes} φ(sQ_ij|x|^γ / |x0 + x|^γ) ν_ij(|x|) dx`.
    fn cell_exponent_with(&self, i: usize, x0: Point, s: f64, holes: &[Disk], nodes: &mut Vec<(Point, f64)>) -> f64 {
        let bs = &self.cfg().tier2[i];
        let mut total = 0.0;
        let mut built: Option<f64> = None;
        for class in &bs.classes {
            let sup = class.profile.support_radius;
            if class.profile.peak_density() == 0.0 {
                continue;
            }
            if built != Some(sup) {
                self.rules.disk_nodes(Point::ORIGIN, sup, Some(-x0), holes, nodes);
                built = Some(sup);
            }
            let ln_s = (s * class.target_power).ln();
            for (x, w) in nodes.iter() {
                let r2 = x.norm_sq();
                let dens = class.profile.density(r2.sqrt());
                if dens > 0.0 {
                    total += w * dens * self.phi(ln_s, r2, (*x + x0).norm_sq());
                }
            }
        }
        total
    }

    /// Cell exponent without exclusion holes; depends on `|x0|` only.
    fn free_exponent_direct(&self, i: usize, s: f64, r: f64) -> f64 {
        let mut nodes = Vec::new();
        self.cell_exponent_with(i, Point::new(r, 0.0), s, &[], &mut nodes)
    }

    fn free_exponent_table(&self, i: usize, s: f64) -> Arc<ChebyshevTable> {
        let key = (i, s.to_bits());
        if let Some(t) = self.radial_tables.lock().unwrap().get(&key) {
            return t.clone();
        }
        let sup = self.support(i);
        let upper = self.cap() + self.hex_r() + sup;
        let mut edges = vec![0.0, 0.25 * sup, 0.5 * sup, 0.75 * sup, sup, 1.25 * sup, 1.5 * sup, 2.0 * sup];
        let mut e = 2.0 * sup;
        while e < upper {
            e *= 1.5;
            edges.push(e);
        }
        let order = self.rules.spec.radial_order;
        let samples: Vec<Vec<f64>> = edges
            .windows(2)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|w| {
                let mut vals = Vec::new();
                ChebyshevTable::new(
                    |r| {
                        let v = self.free_exponent_direct(i, s, r);
                        vals.push(v);
                        v
                    },
                    w,
                    order,
                );
                vals
            })
            .collect();
        let mut it = samples.into_iter().flatten();
        let table = Arc::new(ChebyshevTable::new(|_| it.next().unwrap(), &edges, order));
        self.radial_tables.lock().unwrap().insert(key, table.clone());
        table
    }

    /// Exclusion-aware cell exponent at aggregation point `x0`.
    pub fn cell_exponent(&self, i: usize, x0: Point, s: f64, view: View) -> Result<f64, AnalyticError> {
        self.check_tier2(i, None)?;
        Self::check_s(s)?;
        if s == 0.0 {
            return Ok(0.0);
        }
        let holes = self.ue_exclusion_holes(x0, self.support(i), view);
        let mut nodes = Vec::new();
        Ok(self.cell_exponent_with(i, x0, s, &holes, &mut nodes))
    }

    /// Laplace transform of one type-`i` cell's aggregate interference when its
    /// base station sits at `x0`.
    pub fn laplace_cell_aggregate(&self, i: usize, x0: Point, s: f64, view: View) -> Result<f64, AnalyticError> {
        Ok((-self.cell_exponent(i, x0, s, view)?).exp())
    }

    /// `C_i(s) = ∫ (1 − L̂_i(x0)) dx0` over admissible small-cell positions.
    pub fn coeff_c(&self, i: usize, s: f64, view: View) -> Result<f64, AnalyticError> {
        self.check_tier2(i, None)?;
        Self::check_s(s)?;
        if s == 0.0 || self.cfg().tier2[i].total_mean_ues() == 0.0 {
            return Ok(0.0);
        }
        let view_key = match self.cfg().exclusion {
            ExclusionConfig::None => View::Tier1.key(),
            _ => view.key(),
        };
        let key = (i, s.to_bits(), view_key);
        if let Some(v) = self.coeffs.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let v = self.coeff_c_uncached(i, s, view)?;
        self.coeffs.lock().unwrap().insert(key, v);
        Ok(v)
    }

    /// The no-exclusion coefficient and the mean-field exclusion correction
    /// beyond the lattice cap; neither depends on the view.
    fn view_free_parts(&self, i: usize, s: f64) -> Result<(f64, f64), AnalyticError> {
        let key = (i, s.to_bits());
        if let Some(v) = self.view_free.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let rc = self.hex_r();
        let mut breaks = vec![self.support(i)];
        for c in &self.cfg().tier2[i].classes {
            breaks.extend(c.profile.kinks());
        }
        let c0 = integrate_radial_plane(
            |r| -(-self.free_exponent_direct(i, s, r)).exp_m1(),
            rc,
            &breaks,
            &self.rules,
        )?;
        let cap = self.cap();
        let tail = match self.cfg().exclusion {
            ExclusionConfig::None => 0.0,
            ExclusionConfig::BsExclusion { radius } => {
                let table = self.free_exponent_table(i, s);
                let frac = PI * radius * radius / hexagon_area(rc);
                frac * integrate_radial_plane(
                    |r| if r < cap { 0.0 } else { -(-self.free_exponent_cached(i, s, r, &table)).exp_m1() },
                    rc,
                    &[cap],
                    &self.rules,
                )?
            }
            ExclusionConfig::UeExclusion { radius } => {
                let table = self.free_exponent_table(i, s);
                let frac = PI * radius * radius / hexagon_area(rc);
                frac * integrate_radial_plane(
                    |r| {
                        if r < cap {
                            0.0
                        } else {
                            (-self.free_exponent_cached(i, s, r, &table)).exp() * self.hole_density(i, s, r)
                        }
                    },
                    rc,
                    &[cap],
                    &self.rules,
                )?
            }
        };
        self.view_free.lock().unwrap().insert(key, (c0, tail));
        Ok((c0, tail))
    }

    fn free_exponent_cached(&self, i: usize, s: f64, r: f64, table: &ChebyshevTable) -> f64 {
        table.eval(r).unwrap_or_else(|| self.free_exponent_direct(i, s, r))
    }

    fn coeff_c_uncached(&self, i: usize, s: f64, view: View) -> Result<f64, AnalyticError> {
        let (c0, tail) = self.view_free_parts(i, s)?;
        let exclusion = self.cfg().exclusion;
        let re = match exclusion.radius() {
            None => return Ok(c0),
            Some(re) => re,
        };
        let table = self.free_exponent_table(i, s);
        let e0 = |r: f64| self.free_exponent_cached(i, s, r, &table);
        let lattice = self.lattice(view);
        let cells = lattice.centers_within(self.cap());
        match exclusion {
            ExclusionConfig::BsExclusion { .. } => {
                if re > lattice.apothem() {
                    return Err(AnalyticError::Unsupported(
                        "analytic BS exclusion needs a radius within the hexagon apothem".into(),
                    ));
                }
                let g = |r: f64| -(-e0(r)).exp_m1();
                let parts: Vec<f64> = cells
                    .par_iter()
                    .map(|c| disk_radial_integral(g, c.norm(), re, &self.rules.radial))
                    .collect();
                Ok(c0 - parts.iter().sum::<f64>() - tail)
            }
            ExclusionConfig::UeExclusion { .. } => {
                let near_radius = re + self.rules.spec.exclusion_near * self.support(i);
                let (near, far): (Vec<Point>, Vec<Point>) = cells.into_iter().partition(|c| c.norm() <= near_radius);
                let lm = |r: f64| (-e0(r)).exp() * self.hole_density(i, s, r);
                let far_parts: Vec<f64> = far
                    .par_iter()
                    .map(|c| disk_radial_integral(lm, c.norm(), re, &self.rules.radial))
                    .collect();
                let mut total = far_parts.iter().sum::<f64>();
                for c in &near {
                    total += self.ue_near_correction(i, s, *c, re, view, &e0);
                }
                Ok(c0 - total - tail)
            }
            ExclusionConfig::None => Ok(c0),
        }
    }

    /// `Σ_j ∫_{B(0,R_i)} φ(sQ_ij|x|^γ / ρ^γ) ν_ij(|x|) dx`: the exponent carried
    /// by UEs at distance `ρ` from the victim, summed over one cell.
    fn hole_density(&self, i: usize, s: f64, rho: f64) -> f64 {
        let rho2 = rho * rho;
        let mut total = 0.0;
        for class in &self.cfg().tier2[i].classes {
            let p = &class.profile;
            let ln_s = (s * class.target_power).ln();
            let mut edges = vec![0.0, p.support_radius];
            edges.extend(p.kinks());
            edges.sort_by(f64::total_cmp);
            total += self
                .rules
                .radial
                .integrate_panels(&edges, |t| 2.0 * PI * t * p.density(t) * self.phi(ln_s, t * t, rho2));
        }
        total
    }

    /// `∫_{H(c)} (L̂(x0) − L̂₀(|x0|)) dx0` computed exactly, where `L̂₀` ignores
    /// the UE exclusion holes.
    fn ue_near_correction(&self, i: usize, s: f64, c: Point, re: f64, view: View, e0: &(dyn Fn(f64) -> f64 + Sync)) -> f64 {
        let sup = self.support(i);
        let rc = self.hex_r();
        let centered = c.norm() <= 1e-9 * rc;
        let (range, mult) = if centered { ((0.0, PI / 6.0), 12.0) } else { ((0.0, 2.0 * PI), 1.0) };
        let nodes = hexagon_disk_nodes(c, rc, sup + re, &[(sup - re).abs()], range, &self.rules);
        let parts: Vec<f64> = nodes
            .par_iter()
            .map_init(Vec::new, |scratch, (x0, w)| {
                let holes = self.ue_exclusion_holes(*x0, sup, view);
                if holes.is_empty() {
                    return 0.0;
                }
                let e = self.cell_exponent_with(i, *x0, s, &holes, scratch);
                w * ((-e).exp() - (-e0(x0.norm())).exp())
            })
            .collect();
        mult * parts.iter().sum::<f64>()
    }

    /// `Σ_i μ_i C_i(s)`.
    pub fn tier2_inter_exponent(&self, s: f64, view: View) -> Result<f64, AnalyticError> {
        let mut total = 0.0;
        for (i, b) in self.cfg().tier2.iter().enumerate() {
            if b.intensity > 0.0 {
                total += b.intensity * self.coeff_c(i, s, view)?;
            }
        }
        Ok(total)
    }

    /// `Σ_j sQ_lj/(sQ_lj + 1) ∫ ν_lj` over the serving disk minus exclusion holes.
    pub fn tier2_intra_exponent(&self, l: usize, s: f64, view: View) -> f64 {
        if !self.eff.tier2_intra_cell {
            return 0.0;
        }
        let bs = &self.cfg().tier2[l];
        let mut total = 0.0;
        let mut nodes = Vec::new();
        for class in &bs.classes {
            let p = &class.profile;
            let mass = match self.cfg().exclusion {
                ExclusionConfig::UeExclusion { .. } => {
                    let holes = self.ue_exclusion_holes(Point::ORIGIN, p.support_radius, view);
                    if holes.is_empty() {
                        p.mean_count()
                    } else {
                        self.rules.disk_nodes(Point::ORIGIN, p.support_radius, None, &holes, &mut nodes);
                        nodes.iter().map(|(x, w)| w * p.density(x.norm())).sum()
                    }
                }
                _ => p.mean_count(),
            };
            let sq = s * class.target_power;
            total += sq / (sq + 1.0) * mass;
        }
        total
    }

    // ---- Laplace transform objects -----------------------------------------

    pub fn laplace_tier1_in(&self, i: usize) -> Result<InterferenceLaplace<'_>, AnalyticError> {
        self.check_tier1(i)?;
        Ok(InterferenceLaplace::new("tier-1 in-cell", move |s| {
            Self::check_s(s)?;
            Ok((-self.tier1_in_exponent(i, s)).exp())
        }))
    }

    pub fn laplace_tier1_out(&self, i: usize, view: View) -> Result<InterferenceLaplace<'_>, AnalyticError> {
        self.check_tier1(i)?;
        Ok(InterferenceLaplace::new("tier-1 out-of-cell", move |s| {
            Self::check_s(s)?;
            Ok((-self.tier1_out_exponent(i, s, view)).exp())
        }))
    }

    pub fn laplace_tier2_total(&self, view: View) -> InterferenceLaplace<'_> {
        InterferenceLaplace::new("tier-2 inter-cell", move |s| {
            Self::check_s(s)?;
            Ok((-self.tier2_inter_exponent(s, view)?).exp())
        })
    }

    pub fn laplace_tier2_intra(&self, l: usize, view: View) -> Result<InterferenceLaplace<'_>, AnalyticError> {
        self.check_tier2(l, None)?;
        Ok(InterferenceLaplace::new("tier-2 intra-cell", move |s| {
            Self::check_s(s)?;
            Ok((-self.tier2_intra_exponent(l, s, view)).exp())
        }))
    }

    // ---- outage -------------------------------------------------------------

    fn check_threshold(t: f64) -> Result<(), AnalyticError> {
        if t > 0.0 && t.is_finite() {
            Ok(())
        } else {
            Err(AnalyticError::InvalidThreshold(t))
        }
    }

    /// Exponents of the interference at a tier-1 victim for argument `s`.
    pub fn tier1_exponents(&self, s: f64) -> Result<Tier1Exponents, AnalyticError> {
        Self::check_s(s)?;
        let n = self.cfg().tier1.len();
        Ok(Tier1Exponents {
            in_cell: (0..n).map(|i| self.tier1_in_exponent(i, s)).sum(),
            out_cell: (0..n).map(|i| self.tier1_out_exponent(i, s, View::Tier1)).sum(),
            tier2: self.tier2_inter_exponent(s, View::Tier1)?,
        })
    }

    pub fn outage_tier1(&self, ue_type: usize, threshold: f64) -> Result<f64, AnalyticError> {
        self.check_tier1(ue_type)?;
        Self::check_threshold(threshold)?;
        let s = threshold / self.cfg().tier1[ue_type].target_power;
        Ok(-(-self.tier1_exponents(s)?.total()).exp_m1())
    }

    /// Macro-lattice offsets `x_B` and weights for the typical small cell.
    fn xb_nodes(&self) -> (Vec<(Point, f64)>, f64) {
        let r_min = self.cfg().exclusion.bs_radius().unwrap_or(0.0);
        let nodes = hexagon_wedge_nodes(self.hex_r(), r_min, &self.rules);
        let area = nodes.iter().map(|(_, w)| w).sum();
        (nodes, area)
    }

    /// `E_{x_B}[exp(−tier-1 exponent)]` at a tier-2 victim.
    pub fn tier2_tier1_average(&self, s: f64) -> f64 {
        let (nodes, area) = self.xb_nodes();
        let vals: Vec<f64> = nodes
            .par_iter()
            .map(|(xb, w)| w * (-self.tier1_exponent(s, View::Tier2 { xb: *xb })).exp())
            .collect();
        vals.iter().sum::<f64>() / area
    }

    pub fn outage_tier2(&self, bs_type: usize, class: usize, threshold: f64) -> Result<f64, AnalyticError> {
        self.check_tier2(bs_type, Some(class))?;
        Self::check_threshold(threshold)?;
        let s = threshold / self.cfg().tier2[bs_type].classes[class].target_power;
        let factored = self.cfg().exclusion == ExclusionConfig::None && !self.unfactored;
        if factored {
            let l1 = self.tier2_tier1_average(s);
            let rest = self.tier2_inter_exponent(s, View::Tier1)? + self.tier2_intra_exponent(bs_type, s, View::Tier1);
            return Ok(1.0 - l1 * (-rest).exp());
        }
        let (nodes, area) = self.xb_nodes();
        let mut total = 0.0;
        for (xb, w) in &nodes {
            let view = View::Tier2 { xb: *xb };
            let e = self.tier1_exponent(s, view)
                + self.tier2_inter_exponent(s, view)?
                + self.tier2_intra_exponent(bs_type, s, view);
            total += w * (-e).exp();
        }
        Ok(1.0 - total / area)
    }

    pub fn outage(&self, query: TypicalQuery) -> Result<f64, AnalyticError> {
        match query {
            TypicalQuery::Tier1 { ue_type, threshold } => self.outage_tier1(ue_type, threshold),
            TypicalQuery::Tier2 { bs_type, class, threshold } => self.outage_tier2(bs_type, class, threshold),
        }
    }

    /// Population-weighted outage over both tiers of a single-type network.
    pub fn average_outage(&self, threshold: f64) -> Result<f64, AnalyticError> {
        let c = &self.original;
        if c.tier1.len() != 1 || c.tier2.len() != 1 || c.tier2[0].classes.len() != 1 {
            return Err(AnalyticError::NotSingleType);
        }
        let w1 = c.tier1[0].intensity;
        let w2 = c.tier2[0].intensity * c.tier2[0].classes[0].profile.mean_count();
        if w1 + w2 == 0.0 {
            return Err(AnalyticError::NoUsers);
        }
        let p1 = if w1 > 0.0 { self.outage_tier1(0, threshold)? } else { 0.0 };
        let p2 = if w2 > 0.0 { self.outage_tier2(0, 0, threshold)? } else { 0.0 };
        Ok((p1 * w1 + p2 * w2) / (w1 + w2))
    }
}

/// Outage of the typical UE described by `query`.
pub fn outage(config: &NetworkConfig, query: TypicalQuery, spec: &QuadratureSpec) -> Result<f64, AnalyticError> {
    Analyzer::new(config, spec)?.outage(query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SQRT3;
    use crate::model::fixtures::single;
    use crate::model::{dbm_to_mw, IntensityProfile};
    use crate::quadrature::integrate_disk_masked;

    fn row1() -> NetworkConfig {
        single(0.5, 0.5, -70.0, -70.0, 4.0)
    }

    fn an(cfg: &NetworkConfig) -> Analyzer {
        Analyzer::new(cfg, &QuadratureSpec::default()).unwrap()
    }

    #[test]
    fn tier1_in_closed_form() {
        let a = an(&row1());
        let p = dbm_to_mw(-70.0);
        let l = a.laplace_tier1_in(0).unwrap();
        assert_eq!(l.eval(0.0).unwrap(), 1.0);
        let v = l.eval(0.1 / p).unwrap();
        let exact = (-(1.5 * SQRT3) * 0.5 * 0.1 / 1.1).exp();
        assert!((v - exact).abs() < 1e-14);
        assert!((v - 0.8886).abs() < 5e-5);
        let none = an(&single(0.0, 0.5, -70.0, -70.0, 4.0));
        assert_eq!(none.laplace_tier1_in(0).unwrap().eval(1e9).unwrap(), 1.0);
        assert!(a.laplace_tier1_in(3).is_err());
    }

    #[test]
    fn tier1_out_single_cell_matches_indicator_rule() {
        // one neighbour cell: hexagon rule vs an indicator-masked disk rule
        let a = an(&single(1.0, 0.0, -70.0, -70.0, 0.0));
        let c = Point::new(1.5, 0.5 * SQRT3);
        let sp = 1.0;
        let mut nodes = Vec::new();
        a.rules.hexagon_nodes(c, 1.0, None, &mut nodes);
        let got: f64 = nodes.iter().map(|(x, w)| w * a.phi(0.0, (*x - c).norm_sq(), x.norm_sq())).sum();
        let oracle = integrate_disk_masked(
            |x| {
                let rho = sp * ((x - c).norm_sq() / x.norm_sq()).powi(2);
                rho / (rho + 1.0)
            },
            c,
            1.0,
            |x| crate::geometry::hexagon_contains(c, 1.0, x),
            &QuadratureSpec { radial_order: 64, angular_order: 64, ..Default::default() },
        );
        assert!((got - oracle).abs() < 2e-3 * oracle, "{got} {oracle}");
    }

    #[test]
    fn laplace_objects_are_monotone_and_bounded() {
        let a = an(&row1());
        let transforms = [
            a.laplace_tier1_in(0).unwrap(),
            a.laplace_tier1_out(0, View::Tier1).unwrap(),
            a.laplace_tier1_out(0, View::Tier2 { xb: Point::new(0.3, 0.1) }).unwrap(),
            a.laplace_tier2_total(View::Tier1),
            a.laplace_tier2_intra(0, View::Tier1).unwrap(),
        ];
        let p = dbm_to_mw(-70.0);
        for l in &transforms {
            assert!((l.eval(0.0).unwrap() - 1.0).abs() < 1e-8, "{}", l.label());
            // interferers arbitrarily close to the victim make 1 − L(s) ~ √s
            assert!((l.eval(1e-24 / p).unwrap() - 1.0).abs() < 1e-8, "{}", l.label());
            let mut prev = 1.0;
            for k in -3..=2 {
                let v = l.eval(10f64.powi(k) / p).unwrap();
                assert!(v > 0.0 && v <= prev + 1e-15, "{} at 1e{k}: {v} > {prev}", l.label());
                prev = v;
            }
        }
    }

    #[test]
    fn intra_cell_closed_form() {
        let a = an(&row1());
        let q = dbm_to_mw(-70.0);
        let l = a.laplace_tier2_intra(0, View::Tier1).unwrap();
        let nbar = 20.0 * PI * 0.04;
        let v = l.eval(0.1 / q).unwrap();
        assert!((v - (-(0.1 / 1.1) * nbar).exp()).abs() < 1e-12);
        assert!((v - 0.7957).abs() < 5e-5);
        assert!((l.eval(1e12 / q).unwrap() - (-nbar).exp()).abs() < 1e-9);
    }

    #[test]
    fn zero_densities_give_unit_transforms() {
        let mut cfg = row1();
        cfg.tier2[0].classes[0].profile = IntensityProfile::constant(0.2, 0.0);
        let a = an(&cfg);
        let s = 1.0 / dbm_to_mw(-70.0);
        assert_eq!(a.laplace_cell_aggregate(0, Point::new(2.0, 0.0), s, View::Tier1).unwrap(), 1.0);
        assert_eq!(a.coeff_c(0, s, View::Tier1).unwrap(), 0.0);
        let b = an(&row1());
        assert_eq!(b.laplace_cell_aggregate(0, Point::new(2.0, 0.0), 0.0, View::Tier1).unwrap(), 1.0);
    }

    #[test]
    fn tier2_total_is_log_linear_in_intensities() {
        let mut cfg = row1();
        cfg.tier2.push(cfg.tier2[0].clone());
        cfg.tier2[1].radius = 0.1;
        cfg.tier2[1].classes[0].profile = IntensityProfile::rising(0.1, 40.0);
        let s = 1.0 / dbm_to_mw(-70.0);
        let mut logs = Vec::new();
        for mu in [[0.3, 0.7], [0.6, 1.4], [1.1, 0.2]] {
            cfg.tier2[0].intensity = mu[0];
            cfg.tier2[1].intensity = mu[1];
            let a = an(&cfg);
            logs.push(a.laplace_tier2_total(View::Tier1).eval(s).unwrap().ln());
            // C is μ-independent
            let c0 = a.coeff_c(0, s, View::Tier1).unwrap();
            let c1 = a.coeff_c(1, s, View::Tier1).unwrap();
            assert!((logs.last().unwrap() + mu[0] * c0 + mu[1] * c1).abs() < 1e-12);
        }
        assert!((logs[0] - 0.5 * logs[1]).abs() < 1e-10 * logs[0].abs());
        cfg.tier2[0].intensity = 0.0;
        cfg.tier2[1].intensity = 0.0;
        assert_eq!(an(&cfg).laplace_tier2_total(View::Tier1).eval(s).unwrap(), 1.0);
    }

    #[test]
    fn outage_limits_and_errors() {
        let a = an(&row1());
        let mut prev = (1.0, 1.0);
        for t in [1e-2, 1e-6, 1e-10, 1e-14] {
            let cur = (a.outage_tier1(0, t).unwrap(), a.outage_tier2(0, 0, t).unwrap());
            assert!(cur.0 < prev.0 && cur.1 < prev.1);
            prev = cur;
        }
        assert!(prev.0 < 1e-5 && prev.1 < 1e-5, "{prev:?}");
        assert!(matches!(a.outage_tier1(0, 0.0), Err(AnalyticError::InvalidThreshold(_))));
        assert!(matches!(a.outage_tier1(0, f64::NAN), Err(AnalyticError::InvalidThreshold(_))));
        assert!(a.outage_tier2(0, 1, 0.1).is_err());
        let mut empty = row1();
        empty.tier1[0].intensity = 0.0;
        empty.tier2[0].intensity = 0.0;
        empty.tier2[0].classes[0].profile = IntensityProfile::constant(0.2, 0.0);
        let e = an(&empty);
        assert_eq!(e.outage_tier1(0, 1.0).unwrap(), 0.0);
        assert!(e.outage_tier2(0, 0, 1.0).unwrap().abs() < 1e-15);
        assert!(matches!(e.average_outage(1.0), Err(AnalyticError::NoUsers)));
    }

    #[test]
    fn outage_is_invariant_to_common_power_scaling() {
        let base = single(0.5, 0.5, -70.0, -62.0, 4.0);
        let scaled = single(0.5, 0.5, -40.0, -32.0, 4.0);
        let (a, b) = (an(&base), an(&scaled));
        for t in [0.1, 1.0] {
            assert!((a.outage_tier1(0, t).unwrap() - b.outage_tier1(0, t).unwrap()).abs() < 1e-9);
            assert!((a.outage_tier2(0, 0, t).unwrap() - b.outage_tier2(0, 0, t).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn factored_and_unfactored_tier2_agree() {
        let cfg = row1();
        let a = an(&cfg);
        let b = Analyzer::new(&cfg, &QuadratureSpec::default()).unwrap().with_unfactored(true);
        for t in [0.1, 1.0] {
            let (x, y) = (a.outage_tier2(0, 0, t).unwrap(), b.outage_tier2(0, 0, t).unwrap());
            assert!((x - y).abs() < 1e-8, "{x} {y}");
        }
    }

    #[test]
    fn product_decomposition_is_exact() {
        let a = an(&row1());
        let t = 0.3;
        let s = t / dbm_to_mw(-70.0);
        let parts = a.laplace_tier1_in(0).unwrap().eval(s).unwrap()
            * a.laplace_tier1_out(0, View::Tier1).unwrap().eval(s).unwrap()
            * a.laplace_tier2_total(View::Tier1).eval(s).unwrap();
        assert!((a.outage_tier1(0, t).unwrap() - (1.0 - parts)).abs() < 1e-12);
        let prod = a
            .laplace_tier1_in(0)
            .unwrap()
            .product(a.laplace_tier1_out(0, View::Tier1).unwrap())
            .product(a.laplace_tier2_total(View::Tier1));
        assert!((prod.eval(s).unwrap() - parts).abs() < 1e-15);
    }

    #[test]
    fn average_outage_limits() {
        let t = 0.5;
        let no_small = an(&single(0.5, 0.0, -70.0, -60.0, 4.0));
        assert!((no_small.average_outage(t).unwrap() - no_small.outage_tier1(0, t).unwrap()).abs() < 1e-15);
        let no_macro = an(&single(0.0, 0.5, -70.0, -60.0, 4.0));
        assert!((no_macro.average_outage(t).unwrap() - no_macro.outage_tier2(0, 0, t).unwrap()).abs() < 1e-15);
        let mut multi = row1();
        multi.tier1.push(multi.tier1[0].clone());
        assert!(matches!(an(&multi).average_outage(t), Err(AnalyticError::NotSingleType)));
    }

    #[test]
    fn orthogonal_thinning() {
        let mut cfg = row1();
        cfg.access = AccessMode::Orthogonal { blocks: 1 };
        let eff = apply_orthogonal_thinning(&cfg).unwrap();
        assert_eq!(eff.config.tier1, cfg.tier1);
        assert_eq!(eff.config.tier2, cfg.tier2);
        assert!(!eff.tier1_in_cell && !eff.tier2_intra_cell);
        cfg.access = AccessMode::Orthogonal { blocks: 0 };
        assert!(apply_orthogonal_thinning(&cfg).is_err());
        cfg.access = AccessMode::Shared;
        assert!(matches!(apply_orthogonal_thinning(&cfg), Err(AnalyticError::NotOrthogonal)));

        // C is not linear in the UE density
        cfg.access = AccessMode::Orthogonal { blocks: 4 };
        let thin = an(&cfg);
        let full = an(&row1());
        let s = 10.0 / dbm_to_mw(-70.0);
        let (ct, cf) = (thin.coeff_c(0, s, View::Tier1).unwrap(), full.coeff_c(0, s, View::Tier1).unwrap());
        assert!(ct > cf / 4.0 * (1.0 + 1e-3), "{ct} {cf}");
        assert!(ct < cf);
    }

    #[test]
    fn same_power_types_share_outage() {
        let mut cfg = row1();
        cfg.tier1.push(cfg.tier1[0].clone());
        cfg.tier1[1].intensity = 0.2;
        let a = an(&cfg);
        assert_eq!(a.outage_tier1(0, 0.4).unwrap(), a.outage_tier1(1, 0.4).unwrap());
    }

    #[test]
    fn exclusion_lowers_tier1_outage_monotonically() {
        let base = crate::model::fixtures::single(0.5, 0.5, -70.0, -70.0, 4.0);
        let spec = QuadratureSpec::default();
        let none = Analyzer::new(&base, &spec).unwrap().outage_tier1(0, 0.1).unwrap();
        let mut prev = (none, none);
        for re in [0.1, 0.3, 0.5] {
            let mut c = base.clone();
            c.exclusion = ExclusionConfig::BsExclusion { radius: re };
            let bs = Analyzer::new(&c, &spec).unwrap().outage_tier1(0, 0.1).unwrap();
            c.exclusion = ExclusionConfig::UeExclusion { radius: re };
            let ue = Analyzer::new(&c, &spec).unwrap().outage_tier1(0, 0.1).unwrap();
            assert!(ue <= bs + 1e-9 && bs <= none + 1e-9, "re={re}: ue={ue} bs={bs} none={none}");
            assert!(bs <= prev.0 + 1e-9 && ue <= prev.1 + 1e-9, "re={re} not monotone");
            prev = (bs, ue);
        }
    }

    #[test]
    fn bs_exclusion_tier2_is_finite_and_bounded() {
        let mut c = crate::model::fixtures::single(0.5, 0.5, -70.0, -70.0, 4.0);
        c.exclusion = ExclusionConfig::BsExclusion { radius: 0.3 };
        let v = Analyzer::new(&c, &QuadratureSpec::default()).unwrap().outage_tier2(0, 0, 0.1).unwrap();
        assert!(v > 0.0 && v < 1.0, "{v}");
    }
}
