//! Tier-2 intensity planning.
//!
//! Without exclusion regions every outage constraint is linear in the tier-2
//! intensities: `log L_{I₂}(s) = -Σ μ_i C_i(s)` while all other factors do not
//! depend on `μ`. The constraints become `Σ_i A_ij μ_i ≤ B_j`, and a concave
//! operator income is maximised over that polytope with a log-barrier
//! interior-point method.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{AnalyticError, Analyzer, TypicalQuery, View};
use crate::geometry::Point;
use crate::model::{ExclusionConfig, NetworkConfig};
use crate::quadrature::QuadratureSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error("intensity planning requires a configuration without exclusion regions")]
    ExclusionUnsupported,
    #[error("outage target {value} for {constraint} must lie in (0, 1]")]
    InvalidTarget { constraint: ConstraintId, value: f64 },
    #[error("target list has {got} entries, expected {want}")]
    TargetShape { got: usize, want: usize },
    #[error("{constraint} cannot be met even without tier-2 cells (bound {bound})")]
    InfeasibleAtZero { constraint: ConstraintId, bound: f64 },
    #[error("utility of tier-2 type {0} grows without bound: no constraint limits its intensity")]
    Unbounded(usize),
    #[error("expected {want} utilities, got {got}")]
    UtilityCount { got: usize, want: usize },
    #[error("utility parameters must be finite and nonnegative: {0:?}")]
    InvalidUtility(Utility),
    #[error("this operation needs exactly two tier-2 types, got {0}")]
    NotTwoTypes(usize),
    #[error("interior-point iteration failed: {0}")]
    Numerical(String),
}

/// Which outage requirement a constraint row encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintId {
    Tier1 { ue_type: usize },
    Tier2 { bs_type: usize, class: usize },
}

impl ConstraintId {
    /// The outage query this constraint caps.
    pub fn query(&self, threshold: f64) -> TypicalQuery {
        match *self {
            ConstraintId::Tier1 { ue_type } => TypicalQuery::Tier1 { ue_type, threshold },
            ConstraintId::Tier2 { bs_type, class } => TypicalQuery::Tier2 { bs_type, class, threshold },
        }
    }
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ConstraintId::Tier1 { ue_type } => write!(f, "tier-1 UE type {}", ue_type + 1),
            ConstraintId::Tier2 { bs_type, class } => write!(f, "tier-2 BS type {} class {}", bs_type + 1, class + 1),
        }
    }
}

/// Outage caps; `None` leaves the corresponding UEs unconstrained.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanningTargets {
    pub threshold: f64,
    pub tier1: Vec<Option<f64>>,
    /// Indexed by BS type, then class.
    pub tier2: Vec<Vec<Option<f64>>>,
}

impl PlanningTargets {
    /// The same cap for every tier-1 type and, optionally, every tier-2 class.
    pub fn uniform(config: &NetworkConfig, threshold: f64, tier1: Option<f64>, tier2: Option<f64>) -> Self {
        Self {
            threshold,
            tier1: vec![tier1; config.tier1.len()],
            tier2: config.tier2.iter().map(|b| vec![tier2; b.classes.len()]).collect(),
        }
    }
}

/// One linear constraint `Σ_i coeffs[i]·μ_i ≤ bound`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub id: ConstraintId,
    pub target: f64,
    pub coeffs: Vec<f64>,
    /// `+∞` when the target is 1.
    pub bound: f64,
}

impl Constraint {
    pub fn infeasible_at_zero(&self) -> bool {
        self.bound < 0.0
    }

    pub fn lhs(&self, mu: &[f64]) -> f64 {
        self.coeffs.iter().zip(mu).map(|(a, m)| a * m).sum()
    }
}

/// The linear intensity tradeoff: one row per constrained UE class.
#[derive(Clone, Debug, PartialEq)]
pub struct TradeoffSystem {
    pub threshold: f64,
    pub n_bs_types: usize,
    pub constraints: Vec<Constraint>,
}

impl TradeoffSystem {
    fn row(&self, id: ConstraintId) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.id == id)
    }

    /// `A_ij = C_i(T/P_j)`.
    pub fn a(&self, i: usize, ue_type: usize) -> Option<f64> {
        self.row(ConstraintId::Tier1 { ue_type }).map(|c| c.coeffs[i])
    }

    pub fn b(&self, ue_type: usize) -> Option<f64> {
        self.row(ConstraintId::Tier1 { ue_type }).map(|c| c.bound)
    }

    /// `A'_ilk = C_i(T/Q_lk)`.
    pub fn a_prime(&self, i: usize, bs_type: usize, class: usize) -> Option<f64> {
        self.row(ConstraintId::Tier2 { bs_type, class }).map(|c| c.coeffs[i])
    }

    pub fn b_prime(&self, bs_type: usize, class: usize) -> Option<f64> {
        self.row(ConstraintId::Tier2 { bs_type, class }).map(|c| c.bound)
    }

    /// The same system with new outage caps, one per row.
    ///
    /// Only the bounds move: `B` shifts by `ln(1 - old) - ln(1 - new)`.
    pub fn with_targets(&self, targets: &[f64]) -> Result<TradeoffSystem, PlannerError> {
        if targets.len() != self.constraints.len() {
            return Err(PlannerError::TargetShape { got: targets.len(), want: self.constraints.len() });
        }
        let mut out = self.clone();
        for (c, &t) in out.constraints.iter_mut().zip(targets) {
            check_target(c.id, t)?;
            let old = -(-c.target).ln_1p();
            let new = -(-t).ln_1p();
            c.bound = if new.is_infinite() {
                f64::INFINITY
            } else if old.is_infinite() {
                return Err(PlannerError::Numerical(format!("{} has no finite bound to retarget", c.id)));
            } else {
                snap_bound(new, old - c.bound)
            };
            c.target = t;
        }
        Ok(out)
    }

    pub fn is_feasible(&self, mu: &[f64], tol: f64) -> bool {
        mu.iter().all(|m| *m >= -tol) && self.constraints.iter().all(|c| c.lhs(mu) <= c.bound + tol)
    }

    /// Row whose bound is tightest along the `μ_i` axis.
    pub fn dominant(&self) -> Option<&Constraint> {
        self.constraints.iter().filter(|c| c.bound.is_finite()).min_by(|a, b| {
            let ka = a.bound / a.coeffs.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let kb = b.bound / b.coeffs.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            ka.total_cmp(&kb)
        })
    }

    /// Readable listing of the rows.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for c in &self.constraints {
            let terms: Vec<String> = c.coeffs.iter().enumerate().map(|(i, a)| format!("{a:.6}·μ{}", i + 1)).collect();
            out.push_str(&format!("{:<28} {} <= {:.6}\n", c.id.to_string(), terms.join(" + "), c.bound));
        }
        out
    }
}

/// Snaps bounds that are zero up to rounding, so a target equal to the
/// outage without tier-2 cells admits exactly `μ = 0`.
fn snap_bound(log_term: f64, exponent: f64) -> f64 {
    let b = log_term - exponent;
    if b.abs() <= 1e-12 * (log_term.abs() + exponent.abs()) {
        0.0
    } else {
        b
    }
}

fn check_target(id: ConstraintId, t: f64) -> Result<(), PlannerError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(PlannerError::InvalidTarget { constraint: id, value: t })
    }
}

/// Computes every constraint row through the analytic engine.
pub fn build_tradeoff(
    config: &NetworkConfig,
    targets: &PlanningTargets,
    spec: &QuadratureSpec,
) -> Result<TradeoffSystem, PlannerError> {
    if config.exclusion != ExclusionConfig::None {
        return Err(PlannerError::ExclusionUnsupported);
    }
    if targets.tier1.len() != config.tier1.len() {
        return Err(PlannerError::TargetShape { got: targets.tier1.len(), want: config.tier1.len() });
    }
    if targets.tier2.len() != config.tier2.len() {
        return Err(PlannerError::TargetShape { got: targets.tier2.len(), want: config.tier2.len() });
    }
    for (l, row) in targets.tier2.iter().enumerate() {
        if row.len() != config.tier2[l].classes.len() {
            return Err(PlannerError::TargetShape { got: row.len(), want: config.tier2[l].classes.len() });
        }
    }
    let analyzer = Analyzer::new(config, spec)?;
    if !(targets.threshold > 0.0 && targets.threshold.is_finite()) {
        return Err(AnalyticError::InvalidThreshold(targets.threshold).into());
    }
    let t = targets.threshold;
    let n = config.tier2.len();

    let mut rows: Vec<(ConstraintId, f64)> = Vec::new();
    for (j, cap) in targets.tier1.iter().enumerate() {
        if let Some(p) = cap {
            rows.push((ConstraintId::Tier1 { ue_type: j }, *p));
        }
    }
    for (l, classes) in targets.tier2.iter().enumerate() {
        for (k, cap) in classes.iter().enumerate() {
            if let Some(p) = cap {
                rows.push((ConstraintId::Tier2 { bs_type: l, class: k }, *p));
            }
        }
    }
    for (id, p) in &rows {
        check_target(*id, *p)?;
    }

    let constraints = rows
        .par_iter()
        .map(|&(id, target)| -> Result<Constraint, PlannerError> {
            let (s, exponent) = match id {
                ConstraintId::Tier1 { ue_type } => {
                    let s = t / config.tier1[ue_type].target_power;
                    let e = analyzer.tier1_exponents(s)?;
                    (s, e.in_cell + e.out_cell)
                }
                ConstraintId::Tier2 { bs_type, class } => {
                    let s = t / config.tier2[bs_type].classes[class].target_power;
                    let avg = analyzer.tier2_tier1_average(s);
                    let intra = analyzer.tier2_intra_exponent(bs_type, s, View::Tier2 { xb: Point::ORIGIN });
                    (s, intra - avg.ln())
                }
            };
            let coeffs = (0..n).map(|i| analyzer.coeff_c(i, s, View::Tier1)).collect::<Result<Vec<_>, _>>()?;
            let log_term = -(-target).ln_1p();
            let bound = if log_term.is_infinite() { f64::INFINITY } else { snap_bound(log_term, exponent) };
            Ok(Constraint { id, target, coeffs, bound })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TradeoffSystem { threshold: t, n_bs_types: n, constraints })
}

/// Concave nondecreasing income from one tier-2 type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Utility {
    /// `a·ln(1 + b·μ)`.
    ScaledLog { a: f64, b: f64 },
    /// `c·μ`.
    Affine { c: f64 },
}

impl Utility {
    pub fn value(&self, mu: f64) -> f64 {
        match *self {
            Utility::ScaledLog { a, b } => a * (b * mu).ln_1p(),
            Utility::Affine { c } => c * mu,
        }
    }

    pub fn derivative(&self, mu: f64) -> f64 {
        match *self {
            Utility::ScaledLog { a, b } => a * b / (1.0 + b * mu),
            Utility::Affine { c } => c,
        }
    }

    pub fn second_derivative(&self, mu: f64) -> f64 {
        match *self {
            Utility::ScaledLog { a, b } => -a * b * b / ((1.0 + b * mu) * (1.0 + b * mu)),
            Utility::Affine { .. } => 0.0,
        }
    }

    fn increasing(&self) -> bool {
        match *self {
            Utility::ScaledLog { a, b } => a > 0.0 && b > 0.0,
            Utility::Affine { c } => c > 0.0,
        }
    }

    fn is_affine(&self) -> bool {
        matches!(self, Utility::Affine { .. }) || !self.increasing()
    }

    fn validate(&self) -> Result<(), PlannerError> {
        let ok = match *self {
            Utility::ScaledLog { a, b } => a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite(),
            Utility::Affine { c } => c >= 0.0 && c.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(PlannerError::InvalidUtility(*self))
        }
    }
}

/// First-order optimality residuals, all in absolute terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    /// Magnitude of the most negative multiplier.
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity).max(self.dual)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanSolution {
    pub mu: Vec<f64>,
    pub utility: f64,
    /// Constraints holding with equality at the optimum.
    pub active: Vec<ConstraintId>,
    /// Multiplier per system constraint (zero for inactive or unbounded rows).
    pub duals: Vec<f64>,
    /// Multipliers of `μ_i ≥ 0`.
    pub bound_duals: Vec<f64>,
    pub kkt: KktResiduals,
}

/// Dense form of the reduced problem `G x ≤ h` over the free variables.
struct Reduced {
    free: Vec<usize>,
    rows: Vec<usize>,
    g: DMatrix<f64>,
    h: DVector<f64>,
}

const DUALITY_TOL: f64 = 1e-8;

/// Minimises `f` over `{x > 0, G x < h}` by the barrier method.
///
/// `f` returns value, gradient and Hessian. The schedule multiplies `t` by
/// ten until the duality measure `m/t` drops below the tolerance.
fn barrier_minimize(
    f: &dyn Fn(&DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>),
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    x0: DVector<f64>,
    t0: f64,
) -> Result<(DVector<f64>, f64), PlannerError> {
    let n = x0.len();
    let m = g.nrows() + n;
    let slacks = |x: &DVector<f64>| -> Option<DVector<f64>> {
        let s = h - g * x;
        if s.iter().all(|v| *v > 0.0) && x.iter().all(|v| *v > 0.0) {
            Some(s)
        } else {
            None
        }
    };
    let phi = |x: &DVector<f64>, t: f64| -> Option<f64> {
        let s = slacks(x)?;
        let (fv, _, _) = f(x);
        Some(t * fv - s.iter().map(|v| v.ln()).sum::<f64>() - x.iter().map(|v| v.ln()).sum::<f64>())
    };
    let mut x = x0;
    if slacks(&x).is_none() {
        return Err(PlannerError::Numerical("starting point is not strictly feasible".into()));
    }
    let mut t = t0;
    loop {
        for _ in 0..200 {
            let s = slacks(&x).expect("iterate stays interior");
            let (_, grad, hess) = f(&x);
            let inv_s = s.map(|v| 1.0 / v);
            let inv_x = x.map(|v| 1.0 / v);
            let mut gradient = grad * t + g.transpose() * &inv_s - &inv_x;
            let mut hessian = hess * t + g.transpose() * DMatrix::from_diagonal(&inv_s.component_mul(&inv_s)) * g;
            for i in 0..n {
                hessian[(i, i)] += inv_x[i] * inv_x[i];
            }
            let chol = factor_with_ridge(hessian)?;
            gradient.neg_mut();
            let dx = chol.solve(&gradient);
            let decrement = gradient.dot(&dx);
            if decrement / 2.0 <= 1e-14 {
                break;
            }
            let base = phi(&x, t).expect("interior");
            let slope = -decrement;
            let mut step = 1.0;
            loop {
                let cand = &x + &dx * step;
                if let Some(v) = phi(&cand, t) {
                    if v <= base + 0.25 * step * slope {
                        x = cand;
                        break;
                    }
                }
                step *= 0.5;
                if step < 1e-20 {
                    return Err(PlannerError::Numerical("line search stalled".into()));
                }
            }
        }
        if m as f64 / t < DUALITY_TOL {
            return Ok((x, t));
        }
        t *= 10.0;
    }
}

/// Cholesky factor, adding a growing diagonal ridge when rounding has made
/// an ill-conditioned barrier Hessian numerically indefinite.
fn factor_with_ridge(hessian: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, PlannerError> {
    if let Some(c) = hessian.clone().cholesky() {
        return Ok(c);
    }
    let scale = hessian.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut ridge = 1e-14 * scale;
    while ridge <= 1e-6 * scale {
        let mut h = hessian.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += ridge;
        }
        if let Some(c) = h.cholesky() {
            return Ok(c);
        }
        ridge *= 100.0;
    }
    Err(PlannerError::Numerical("barrier Hessian is not positive definite".into()))
}

fn utility_sum(u: &[Utility], mu: &[f64]) -> f64 {
    u.iter().zip(mu).map(|(u, m)| u.value(*m)).sum()
}

/// Maximises `Σ U_i(μ_i)` subject to the tradeoff rows and `μ ≥ 0`.
///
/// Ties between optima, possible when utilities are affine, are broken
/// towards the lexicographically smallest `μ`.
pub fn solve(system: &TradeoffSystem, utilities: &[Utility]) -> Result<PlanSolution, PlannerError> {
    let n = system.n_bs_types;
    if utilities.len() != n {
        return Err(PlannerError::UtilityCount { got: utilities.len(), want: n });
    }
    for u in utilities {
        u.validate()?;
    }
    for c in &system.constraints {
        if c.infeasible_at_zero() {
            return Err(PlannerError::InfeasibleAtZero { constraint: c.id, bound: c.bound });
        }
    }

    // Variables forced to zero by rows with a zero bound, and variables whose
    // utility is flat, are fixed at zero.
    let mut fixed = vec![false; n];
    for c in &system.constraints {
        if c.bound == 0.0 {
            for (i, a) in c.coeffs.iter().enumerate() {
                if *a > 0.0 {
                    fixed[i] = true;
                }
            }
        }
    }
    for (i, u) in utilities.iter().enumerate() {
        if !u.increasing() {
            fixed[i] = true;
        }
    }
    let free: Vec<usize> = (0..n).filter(|i| !fixed[*i]).collect();
    let rows: Vec<usize> = (0..system.constraints.len())
        .filter(|&r| {
            let c = &system.constraints[r];
            c.bound.is_finite() && c.bound > 0.0 && free.iter().any(|&i| c.coeffs[i] > 0.0)
        })
        .collect();
    for &i in &free {
        if !rows.iter().any(|&r| system.constraints[r].coeffs[i] > 0.0) {
            return Err(PlannerError::Unbounded(i));
        }
    }

    let mut mu = vec![0.0; n];
    if !free.is_empty() {
        let red = Reduced {
            g: DMatrix::from_fn(rows.len(), free.len(), |r, k| system.constraints[rows[r]].coeffs[free[k]]),
            h: DVector::from_iterator(rows.len(), rows.iter().map(|&r| system.constraints[r].bound)),
            free: free.clone(),
            rows: rows.clone(),
        };
        let x = solve_reduced(&red, utilities)?;
        for (k, &i) in red.free.iter().enumerate() {
            mu[i] = x[k];
        }
        let _ = &red.rows;
    }
    Ok(finish(system, utilities, mu))
}

fn solve_reduced(red: &Reduced, utilities: &[Utility]) -> Result<DVector<f64>, PlannerError> {
    let nf = red.free.len();
    let us: Vec<Utility> = red.free.iter().map(|&i| utilities[i]).collect();
    // Strictly feasible start on the diagonal.
    let mut tau = f64::INFINITY;
    for r in 0..red.g.nrows() {
        let row_sum: f64 = red.g.row(r).iter().sum();
        if row_sum > 0.0 {
            tau = tau.min(red.h[r] / row_sum);
        }
    }
    let x0 = DVector::from_element(nf, 0.5 * tau);
    let neg_u = |x: &DVector<f64>| {
        let v = -us.iter().enumerate().map(|(k, u)| u.value(x[k])).sum::<f64>();
        let g = DVector::from_iterator(nf, us.iter().enumerate().map(|(k, u)| -u.derivative(x[k])));
        let h = DMatrix::from_diagonal(&DVector::from_iterator(nf, us.iter().enumerate().map(|(k, u)| -u.second_derivative(x[k]))));
        (v, g, h)
    };
    let (mut x, _) = barrier_minimize(&neg_u, &red.g, &red.h, x0, 1.0)?;

    if us.iter().all(|u| u.is_affine()) {
        x = lexicographic_refine(red, &us, x)?;
    }
    Ok(polish(red, &us, x))
}

/// Among near-optimal points of an affine objective, minimises `μ` one
/// coordinate at a time.
fn lexicographic_refine(red: &Reduced, us: &[Utility], x: DVector<f64>) -> Result<DVector<f64>, PlannerError> {
    let nf = x.len();
    let c: Vec<f64> = us.iter().map(|u| u.derivative(0.0)).collect();
    let best: f64 = c.iter().zip(x.iter()).map(|(c, x)| c * x).sum();
    let mut slack_u = 1e-7 * (1.0 + best.abs());
    let mut current = x;
    let mut lower = vec![0.0; nf];
    for k in 0..nf {
        // Rows: original, `-c·x ≤ -(best - slack)`, and `-x_j ≤ -lower_j` for fixed coordinates.
        let mut g_rows: Vec<Vec<f64>> = (0..red.g.nrows()).map(|r| red.g.row(r).iter().cloned().collect()).collect();
        let mut h_rows: Vec<f64> = red.h.iter().cloned().collect();
        g_rows.push(c.iter().map(|v| -v).collect());
        h_rows.push(-(best - slack_u));
        for j in 0..k {
            let mut row = vec![0.0; nf];
            row[j] = 1.0;
            g_rows.push(row);
            h_rows.push(lower[j] + slack_u);
        }
        let g = DMatrix::from_fn(g_rows.len(), nf, |r, j| g_rows[r][j]);
        let h = DVector::from_vec(h_rows);
        let s = &h - &g * &current;
        if s.iter().any(|v| *v <= 0.0) || current.iter().any(|v| *v <= 0.0) {
            break;
        }
        let obj = |x: &DVector<f64>| {
            let mut grad = DVector::zeros(nf);
            grad[k] = 1.0;
            (x[k], grad, DMatrix::zeros(nf, nf))
        };
        let (x, _) = barrier_minimize(&obj, &g, &h, current.clone(), 1.0)?;
        lower[k] = x[k];
        current = x;
        slack_u *= 2.0;
    }
    Ok(current)
}

/// Active rows and zero bounds at `x`, judged by relative slack.
fn active_set(red: &Reduced, x: &DVector<f64>) -> (Vec<usize>, Vec<usize>) {
    let s = &red.h - &red.g * x;
    let scale = x.amax().max(1.0);
    let rows = (0..red.g.nrows()).filter(|&r| s[r] <= 1e-6 * (1.0 + red.h[r].abs())).collect();
    let zeros = (0..x.len()).filter(|&k| x[k] <= 1e-6 * scale).collect();
    (rows, zeros)
}

/// Newton iterations on the equality-constrained problem given by the
/// active set; kept only if the result stays feasible.
fn polish(red: &Reduced, us: &[Utility], x0: DVector<f64>) -> DVector<f64> {
    let nf = x0.len();
    let (rows, zeros) = active_set(red, &x0);
    let ne = rows.len() + zeros.len();
    if ne == 0 && us.iter().all(|u| u.is_affine()) {
        return x0;
    }
    let mut e = DMatrix::zeros(ne, nf);
    let mut rhs = DVector::zeros(ne);
    for (q, &r) in rows.iter().enumerate() {
        e.row_mut(q).copy_from(&red.g.row(r));
        rhs[q] = red.h[r];
    }
    for (q, &k) in zeros.iter().enumerate() {
        e[(rows.len() + q, k)] = 1.0;
    }
    let mut x = x0.clone();
    for _ in 0..20 {
        let mut kkt = DMatrix::zeros(nf + ne, nf + ne);
        let mut b = DVector::zeros(nf + ne);
        for k in 0..nf {
            kkt[(k, k)] = -us[k].second_derivative(x[k]);
            b[k] = us[k].derivative(x[k]);
        }
        kkt.view_mut((0, nf), (nf, ne)).copy_from(&e.transpose());
        kkt.view_mut((nf, 0), (ne, nf)).copy_from(&e);
        let r = &rhs - &e * &x;
        b.rows_mut(nf, ne).copy_from(&r);
        // Solve for (dx, λ) with ∇U(x) - Eᵀλ = -H dx.
        let Some(sol) = kkt.clone().lu().solve(&b) else {
            return x0;
        };
        let dx = sol.rows(0, nf).into_owned();
        x += &dx;
        if dx.amax() <= 1e-15 * (1.0 + x.amax()) {
            break;
        }
    }
    let feasible = x.iter().all(|v| *v >= -1e-12) && (&red.h - &red.g * &x).iter().all(|s| *s >= -1e-12 * (1.0 + red.h.amax()));
    let u_new: f64 = us.iter().enumerate().map(|(k, u)| u.value(x[k].max(0.0))).sum();
    let u_old: f64 = us.iter().enumerate().map(|(k, u)| u.value(x0[k])).sum();
    if feasible && x.iter().all(|v| v.is_finite()) && u_new >= u_old - 1e-9 * (1.0 + u_old.abs()) {
        x.map(|v| v.max(0.0))
    } else {
        x0
    }
}

/// Multipliers by nonnegative least squares on the active set, then residuals.
fn finish(system: &TradeoffSystem, utilities: &[Utility], mu: Vec<f64>) -> PlanSolution {
    let n = mu.len();
    let m = system.constraints.len();
    let scale = mu.iter().cloned().fold(1.0, f64::max);
    let active_rows: Vec<usize> = (0..m)
        .filter(|&r| {
            let c = &system.constraints[r];
            c.bound.is_finite() && c.bound - c.lhs(&mu) <= 1e-6 * (1.0 + c.bound.abs())
        })
        .collect();
    let zero_vars: Vec<usize> = (0..n).filter(|&i| mu[i] <= 1e-6 * scale).collect();
    let grad: Vec<f64> = utilities.iter().zip(&mu).map(|(u, m)| u.derivative(*m)).collect();

    // Stationarity: grad = Σ λ_r a_r − Σ ν_i e_i with λ, ν ≥ 0.
    let cols = active_rows.len() + zero_vars.len();
    let mut a = DMatrix::zeros(n, cols);
    for (q, &r) in active_rows.iter().enumerate() {
        for i in 0..n {
            a[(i, q)] = system.constraints[r].coeffs[i];
        }
    }
    for (q, &i) in zero_vars.iter().enumerate() {
        a[(i, active_rows.len() + q)] = -1.0;
    }
    let multipliers = nnls(&a, &DVector::from_vec(grad.clone()));

    let mut duals = vec![0.0; m];
    let mut bound_duals = vec![0.0; n];
    for (q, &r) in active_rows.iter().enumerate() {
        duals[r] = multipliers[q];
    }
    for (q, &i) in zero_vars.iter().enumerate() {
        bound_duals[i] = multipliers[active_rows.len() + q];
    }
    let mut stationarity: f64 = 0.0;
    for i in 0..n {
        let mut r = grad[i] + bound_duals[i];
        for (c, d) in system.constraints.iter().zip(&duals) {
            r -= d * c.coeffs[i];
        }
        stationarity = stationarity.max(r.abs());
    }
    let mut primal: f64 = mu.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
    let mut complementarity: f64 = 0.0;
    for (c, d) in system.constraints.iter().zip(&duals) {
        if c.bound.is_finite() {
            let slack = c.bound - c.lhs(&mu);
            primal = primal.max(-slack);
            complementarity = complementarity.max((d * slack).abs());
        }
    }
    for i in 0..n {
        complementarity = complementarity.max((bound_duals[i] * mu[i]).abs());
    }
    let dual = duals.iter().chain(&bound_duals).map(|v| (-v).max(0.0)).fold(0.0, f64::max);
    // Adding zero turns a negative zero into a positive one.
    let primal = primal.max(0.0) + 0.0;
    PlanSolution {
        utility: utility_sum(utilities, &mu),
        active: active_rows.iter().map(|&r| system.constraints[r].id).collect(),
        mu,
        duals,
        bound_duals,
        kkt: KktResiduals { stationarity, primal, complementarity, dual },
    }
}

/// Lawson–Hanson nonnegative least squares `min ‖Ax − b‖, x ≥ 0`.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let mut passive = vec![false; n];
    let tol = 1e-14 * (1.0 + a.amax() * b.amax());
    for _ in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])]);
            let z = match sub.clone().svd(true, true).solve(b, 1e-14) {
                Ok(z) => z,
                Err(_) => return x,
            };
            if z.iter().all(|v| *v > 0.0) {
                for (c, &k) in idx.iter().enumerate() {
                    x[k] = z[c];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (c, &k) in idx.iter().enumerate() {
                if z[c] <= 0.0 {
                    alpha = alpha.min(x[k] / (x[k] - z[c]));
                }
            }
            for (c, &k) in idx.iter().enumerate() {
                x[k] += alpha * (z[c] - x[k]);
                if x[k] <= 1e-15 {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
        }
    }
    x
}

/// Largest feasible `μ₂` for each `μ₁`, floored at zero.
pub fn max_mu2_given_mu1(system: &TradeoffSystem, mu1_grid: &[f64]) -> Result<Vec<f64>, PlannerError> {
    if system.n_bs_types != 2 {
        return Err(PlannerError::NotTwoTypes(system.n_bs_types));
    }
    Ok(mu1_grid
        .iter()
        .map(|&m1| {
            let mut best = f64::INFINITY;
            for c in &system.constraints {
                let room = c.bound - c.coeffs[0] * m1;
                if c.coeffs[1] > 0.0 {
                    best = best.min(room / c.coeffs[1]);
                } else if room < 0.0 {
                    best = 0.0;
                }
            }
            best.max(0.0)
        })
        .collect())
}
