//! Deterministic integration rules: Gauss–Legendre and Gauss–Hermite nodes,
//! log-normal expectations, hexagon and disk cubature, radial and planar
//! integrals with automatic truncation, and lattice sums.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::geometry::{hexagon_boundary_distance, hexagon_vertices, Disk, HexLattice, Point, SQRT3};
use crate::model::db_to_ln_sigma;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("integrand returned a non-finite value ({context})")]
    NonFinite { context: &'static str },
    #[error("invalid shadowing deviation {0} dB")]
    InvalidSigma(f64),
    #[error("plane integral not converged at radius {radius}: last shell {last_shell:e}, total {total:e}")]
    TruncationFailure { radius: f64, last_shell: f64, total: f64 },
    #[error("invalid quadrature override `{0}`")]
    BadOverride(String),
}

/// Orders and tolerances for every integration rule.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureSpec {
    /// Gauss–Legendre nodes per radial panel.
    pub radial_order: usize,
    /// Gauss–Legendre nodes per angular panel.
    pub angular_order: usize,
    /// Nodes per direction on each hexagon triangle.
    pub hexagon_order: usize,
    /// Gauss–Hermite nodes for log-normal expectations.
    pub hermite_order: usize,
    /// Nodes per direction when averaging over the typical macro cell.
    pub cell_average_order: usize,
    /// Macro-cell lattice truncation, in hexagon radii.
    pub lattice_cap: f64,
    /// Radius of the fixed core of planar integrals, in hexagon radii.
    pub plane_core: f64,
    /// Relative size of the last shell at which planar integrals stop.
    pub plane_tol: f64,
    pub max_doublings: usize,
    /// Cells within this many hexagon radii get exact exclusion corrections.
    pub exclusion_near: f64,
    /// Table step for the shadowing kernel, in log-ratio units.
    pub kernel_step: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            radial_order: 24,
            angular_order: 24,
            hexagon_order: 12,
            hermite_order: 32,
            cell_average_order: 10,
            lattice_cap: 10.0,
            plane_core: 15.0,
            plane_tol: 1e-6,
            max_doublings: 24,
            exclusion_near: 2.0,
            kernel_step: 1.0 / 64.0,
        }
    }
}

impl QuadratureSpec {
    /// Every order doubled and the kernel table refined accordingly.
    pub fn doubled(&self) -> Self {
        Self {
            radial_order: 2 * self.radial_order,
            angular_order: 2 * self.angular_order,
            hexagon_order: 2 * self.hexagon_order,
            hermite_order: 2 * self.hermite_order,
            cell_average_order: 2 * self.cell_average_order,
            kernel_step: self.kernel_step / 2.0,
            ..self.clone()
        }
    }

    /// Applies `key=value` pairs separated by commas; the bare word `double`
    /// doubles every order.
    pub fn with_overrides(&self, text: &str) -> Result<Self, QuadratureError> {
        let mut out = self.clone();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if item == "double" {
                out = out.doubled();
                continue;
            }
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| QuadratureError::BadOverride(item.to_string()))?;
            let bad = || QuadratureError::BadOverride(item.to_string());
            let as_usize = || value.trim().parse::<usize>().map_err(|_| bad()).and_then(|v| if v > 0 { Ok(v) } else { Err(bad()) });
            let as_f64 = || value.trim().parse::<f64>().map_err(|_| bad()).and_then(|v| if v > 0.0 && v.is_finite() { Ok(v) } else { Err(bad()) });
            match key.trim() {
                "radial_order" => out.radial_order = as_usize()?,
                "angular_order" => out.angular_order = as_usize()?,
                "hexagon_order" => out.hexagon_order = as_usize()?,
                "hermite_order" => out.hermite_order = as_usize()?,
                "cell_average_order" => out.cell_average_order = as_usize()?,
                "max_doublings" => out.max_doublings = as_usize()?,
                "lattice_cap" => out.lattice_cap = as_f64()?,
                "plane_core" => out.plane_core = as_f64()?,
                "plane_tol" => out.plane_tol = as_f64()?,
                "exclusion_near" => out.exclusion_near = as_f64()?,
                "kernel_step" => out.kernel_step = as_f64()?,
                _ => return Err(bad()),
            }
        }
        Ok(out)
    }

    /// Default rules adjusted by the `HETNET_QUADRATURE` environment variable.
    pub fn from_env() -> Result<Self, QuadratureError> {
        match std::env::var("HETNET_QUADRATURE") {
            Ok(text) => Self::default().with_overrides(&text),
            Err(_) => Ok(Self::default()),
        }
    }
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let n = n.max(1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 1 { x } else { p1 };
                let pm = if n == 1 { 1.0 } else { p0 };
                dp = nf * (x * pn - pm) / (x * x - 1.0);
                let dx = pn / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            if n == 1 {
                x = 0.0;
                dp = 1.0;
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n == 1 {
            weights[0] = 2.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    #[inline]
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = 0.5 * (b - a);
        let m = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (m + h * x, h * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Composite rule over consecutive `edges`.
    pub fn integrate_panels<F: FnMut(f64) -> f64>(&self, edges: &[f64], mut f: F) -> f64 {
        edges.windows(2).map(|e| self.integrate(e[0], e[1], &mut f)).sum()
    }
}

/// Gauss–Hermite rule for `∫ e^{-z²} f(z) dz`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        let n = n.max(1);
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64 / 2.0).sqrt();
            jacobi[(k, k - 1)] = b;
            jacobi[(k - 1, k)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        nodes.sort_by(f64::total_cmp);
        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (pn, pm, _) = hermite_orthonormal(n, *x);
                let dp = (2.0 * n as f64).sqrt() * pm;
                if dp != 0.0 {
                    *x -= pn / dp;
                }
            }
            let (_, _, sumsq) = hermite_orthonormal(n, *x);
            weights.push(1.0 / sumsq);
        }
        Self { nodes, weights }
    }
}

/// Orthonormal Hermite values `p_n(x)`, `p_{n-1}(x)` and `Σ_{k<n} p_k(x)²`.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    let mut sumsq = 0.0;
    for k in 0..n {
        sumsq += cur * cur;
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev, sumsq)
}

/// Probability-weighted nodes for `ln g ~ N(0, σ²)`: `E[f(g)] ≈ Σ w_k f(e^{s_k})`.
#[derive(Clone, Debug)]
pub struct LogNormalRule {
    pub sigma_ln: f64,
    /// Log-domain nodes `s_k = σ√2 z_k`.
    pub log_nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LogNormalRule {
    pub fn new(sigma_ln: f64, order: usize) -> Self {
        if sigma_ln == 0.0 {
            return Self { sigma_ln, log_nodes: vec![0.0], weights: vec![1.0] };
        }
        let gh = GaussHermite::new(order);
        let norm = 1.0 / PI.sqrt();
        Self {
            sigma_ln,
            log_nodes: gh.nodes.iter().map(|z| sigma_ln * std::f64::consts::SQRT_2 * z).collect(),
            weights: gh.weights.iter().map(|w| w * norm).collect(),
        }
    }

    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.log_nodes.iter().zip(&self.weights).map(|(s, w)| w * f(s.exp())).sum()
    }
}

/// `E[f(g)]` for a log-normal factor with the given deviation in dB.
pub fn expect_lognormal<F: FnMut(f64) -> f64>(f: F, sigma_db: f64, order: usize) -> Result<f64, QuadratureError> {
    if !(sigma_db >= 0.0 && sigma_db.is_finite()) {
        return Err(QuadratureError::InvalidSigma(sigma_db));
    }
    let v = LogNormalRule::new(db_to_ln_sigma(sigma_db), order).expect(f);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(QuadratureError::NonFinite { context: "log-normal expectation" })
    }
}

#[inline]
fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

const KERNEL_SPAN: f64 = 60.0;

/// `φ(ρ) = E[ρg / (ρg + 1)]` for a log-normal `g`, evaluated from a cubic
/// Hermite table of `ln φ` over `u = ln ρ`.
#[derive(Clone, Debug)]
pub struct ShadowKernel {
    rule: LogNormalRule,
    table: Option<KernelTable>,
}

#[derive(Clone, Debug)]
struct KernelTable {
    inv_h: f64,
    h: f64,
    psi: Vec<f64>,
    dpsi: Vec<f64>,
    /// `ln E[g]`: below the table `ln φ ≈ u + ln E[g]`.
    log_mean: f64,
    /// `E[1/g]`: above the table `φ ≈ 1 − E[1/g] e^{-u}`.
    mean_inv: f64,
}

impl ShadowKernel {
    pub fn new(sigma_ln: f64, hermite_order: usize, step: f64) -> Self {
        let rule = LogNormalRule::new(sigma_ln, hermite_order);
        if sigma_ln == 0.0 {
            return Self { rule, table: None };
        }
        let n = (2.0 * KERNEL_SPAN / step).ceil() as usize;
        let h = 2.0 * KERNEL_SPAN / n as f64;
        let mut psi = Vec::with_capacity(n + 1);
        let mut dpsi = Vec::with_capacity(n + 1);
        let probe = Self { rule: rule.clone(), table: None };
        for i in 0..=n {
            let (p, d) = probe.direct_log_parts(-KERNEL_SPAN + i as f64 * h);
            psi.push(p);
            dpsi.push(d);
        }
        let log_mean = rule.expect(|g| g).ln();
        let mean_inv = rule.expect(|g| 1.0 / g);
        Self { rule, table: Some(KernelTable { inv_h: 1.0 / h, h, psi, dpsi, log_mean, mean_inv }) }
    }

    pub fn from_sigma_db(sigma_db: f64, spec: &QuadratureSpec) -> Self {
        Self::new(db_to_ln_sigma(sigma_db), spec.hermite_order, spec.kernel_step)
    }

    pub fn sigma_ln(&self) -> f64 {
        self.rule.sigma_ln
    }

    /// `(ln φ, d ln φ / du)` computed directly from the Gauss–Hermite rule.
    fn direct_log_parts(&self, u: f64) -> (f64, f64) {
        let mut lower = 0.0;
        let mut upper = 0.0;
        let mut slope = 0.0;
        for (s, w) in self.rule.log_nodes.iter().zip(&self.rule.weights) {
            let v = u + s;
            let l = logistic(v);
            let m = logistic(-v);
            lower += w * l;
            upper += w * m;
            slope += w * l * m;
        }
        if u <= 0.0 {
            (lower.ln(), slope / lower)
        } else {
            ((-upper).ln_1p(), slope / (1.0 - upper))
        }
    }

    /// `φ(e^u)` computed directly.
    pub fn direct_log(&self, u: f64) -> f64 {
        if u == f64::NEG_INFINITY {
            return 0.0;
        }
        if u == f64::INFINITY {
            return 1.0;
        }
        self.rule.log_nodes.iter().zip(&self.rule.weights).map(|(s, w)| w * logistic(u + s)).sum()
    }

    /// `φ(e^u)`.
    #[inline]
    pub fn eval_log(&self, u: f64) -> f64 {
        let t = match &self.table {
            None => {
                return if u == f64::NEG_INFINITY {
                    0.0
                } else if u == f64::INFINITY {
                    1.0
                } else {
                    logistic(u)
                };
            }
            Some(t) => t,
        };
        if u <= -KERNEL_SPAN {
            return (u + t.log_mean).exp();
        }
        if u >= KERNEL_SPAN {
            return 1.0 - t.mean_inv * (-u).exp();
        }
        if u.is_nan() {
            return f64::NAN;
        }
        let x = (u + KERNEL_SPAN) * t.inv_h;
        let i = (x as usize).min(t.psi.len() - 2);
        let tau = x - i as f64;
        let (p0, p1) = (t.psi[i], t.psi[i + 1]);
        let (m0, m1) = (t.dpsi[i] * t.h, t.dpsi[i + 1] * t.h);
        let tau2 = tau * tau;
        let tau3 = tau2 * tau;
        let h00 = 2.0 * tau3 - 3.0 * tau2 + 1.0;
        let h10 = tau3 - 2.0 * tau2 + tau;
        let h01 = -2.0 * tau3 + 3.0 * tau2;
        let h11 = tau3 - tau2;
        (h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1).exp()
    }

    /// `φ(ρ)`.
    #[inline]
    pub fn eval(&self, rho: f64) -> f64 {
        self.eval_log(rho.ln())
    }
}

/// Composite Gauss–Legendre rules built once from a [`QuadratureSpec`].
#[derive(Clone, Debug)]
pub struct Rules {
    pub spec: QuadratureSpec,
    pub radial: GaussLegendre,
    pub angular: GaussLegendre,
    pub hexagon: GaussLegendre,
    pub cell_average: GaussLegendre,
    unit_hexagon: Vec<(Point, f64)>,
}

const GRADED: [f64; 5] = [0.0, 1.0 / 64.0, 1.0 / 16.0, 0.25, 1.0];

impl Rules {
    pub fn new(spec: &QuadratureSpec) -> Self {
        let hexagon = GaussLegendre::new(spec.hexagon_order);
        let mut unit_hexagon = Vec::new();
        fan_nodes(&hexagon, Point::ORIGIN, &hexagon_vertices(Point::ORIGIN, 1.0), &[0.0, 1.0], &mut unit_hexagon);
        Self {
            spec: spec.clone(),
            radial: GaussLegendre::new(spec.radial_order),
            angular: GaussLegendre::new(spec.angular_order),
            hexagon,
            cell_average: GaussLegendre::new(spec.cell_average_order),
            unit_hexagon,
        }
    }

    /// Cubature nodes for the hexagon at `center` with circumradius `r`,
    /// graded towards `focus` (a point of the closed hexagon) when given.
    pub fn hexagon_nodes(&self, center: Point, r: f64, focus: Option<Point>, out: &mut Vec<(Point, f64)>) {
        out.clear();
        match focus {
            None => out.extend(self.unit_hexagon.iter().map(|(p, w)| (center + *p * r, w * r * r))),
            Some(f) => fan_nodes(&self.hexagon, f, &hexagon_vertices(center, r), &GRADED, out),
        }
    }

    /// Cubature nodes for `B(center, r)` minus the union of `holes`.
    ///
    /// With `peak` the rule is graded towards that point: polar around it when
    /// it lies inside the disk, polar around the nearest boundary point when it
    /// lies within half a radius outside.
    pub fn disk_nodes(&self, center: Point, r: f64, peak: Option<Point>, holes: &[Disk], out: &mut Vec<(Point, f64)>) {
        out.clear();
        let holes: Vec<Disk> = holes
            .iter()
            .filter(|h| h.radius > 0.0 && (h.center - center).norm() < r + h.radius)
            .cloned()
            .collect();
        if holes.iter().any(|h| (h.center - center).norm() + r <= h.radius) {
            return;
        }
        let mut origin = center;
        let mut theta0 = 0.0;
        let mut span = 2.0 * PI;
        let mut graded = false;
        if let Some(p) = peak {
            let d = p - center;
            let dn = d.norm();
            if dn < r {
                origin = p;
            } else if dn < 1.5 * r {
                origin = center + d * (r / dn);
                theta0 = (-d).angle() - FRAC_PI_2;
                span = PI;
                graded = true;
            } else {
                theta0 = d.angle();
            }
        }
        let mut breaks = vec![0.0, span];
        if span == 2.0 * PI {
            breaks.extend([0.25, 0.5, 0.75].map(|f| f * span));
        }
        let rel = |theta: f64| (theta - theta0).rem_euclid(2.0 * PI);
        for h in &holes {
            let oh = h.center - origin;
            let dist = oh.norm();
            if dist > h.radius {
                let half = (h.radius / dist).asin();
                breaks.push(rel(oh.angle() - half));
                breaks.push(rel(oh.angle() + half));
            }
            for q in circle_intersections(center, r, h.center, h.radius) {
                let v = q - origin;
                if v.norm() > 1e-14 * r {
                    breaks.push(rel(v.angle()));
                }
            }
        }
        breaks.retain(|b| *b >= 0.0 && *b <= span);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        let co = origin - center;
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b - a < 1e-14 {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (xi, wi) in self.angular.nodes.iter().zip(&self.angular.weights) {
                let arg = FRAC_PI_2 * xi;
                let theta = theta0 + mid + half * arg.sin();
                let wt = wi * half * FRAC_PI_2 * arg.cos();
                let u = Point::new(theta.cos(), theta.sin());
                let b_out = co.dot(u);
                let disc = (b_out * b_out + r * r - co.norm_sq()).max(0.0);
                let t_hi = -b_out + disc.sqrt();
                if t_hi <= 0.0 {
                    continue;
                }
                intervals.clear();
                intervals.push((0.0, t_hi));
                for h in &holes {
                    let oh = origin - h.center;
                    let bh = oh.dot(u);
                    let dh = bh * bh - (oh.norm_sq() - h.radius * h.radius);
                    if dh <= 0.0 {
                        continue;
                    }
                    let s = dh.sqrt();
                    subtract_interval(&mut intervals, -bh - s, -bh + s);
                }
                for &(lo, hi) in &intervals {
                    if hi - lo <= 0.0 {
                        continue;
                    }
                    if graded && lo == 0.0 {
                        for g in GRADED.windows(2) {
                            let (ga, gb) = (g[0] * t_hi, (g[1] * t_hi).min(hi));
                            if gb > ga {
                                push_ray(&self.radial, origin, u, ga, gb, wt, out);
                            }
                        }
                    } else {
                        push_ray(&self.radial, origin, u, lo, hi, wt, out);
                    }
                }
            }
        }
    }
}

#[inline]
fn push_ray(gl: &GaussLegendre, origin: Point, u: Point, a: f64, b: f64, wt: f64, out: &mut Vec<(Point, f64)>) {
    for (t, w) in gl.mapped(a, b) {
        out.push((origin + u * t, wt * w * t));
    }
}

fn subtract_interval(intervals: &mut Vec<(f64, f64)>, lo: f64, hi: f64) {
    let mut next = Vec::with_capacity(intervals.len() + 1);
    for &(a, b) in intervals.iter() {
        if hi <= a || lo >= b {
            next.push((a, b));
            continue;
        }
        if lo > a {
            next.push((a, lo));
        }
        if hi < b {
            next.push((hi, b));
        }
    }
    *intervals = next;
}

fn circle_intersections(c1: Point, r1: f64, c2: Point, r2: f64) -> Vec<Point> {
    let d = c2 - c1;
    let dist = d.norm();
    if dist == 0.0 || dist > r1 + r2 || dist < (r1 - r2).abs() {
        return Vec::new();
    }
    let a = (r1 * r1 - r2 * r2 + dist * dist) / (2.0 * dist);
    let h = (r1 * r1 - a * a).max(0.0).sqrt();
    let base = c1 + d * (a / dist);
    let perp = Point::new(-d.y, d.x) * (h / dist);
    vec![base + perp, base - perp]
}

/// Fan of Duffy triangles from `apex` to each hexagon edge.
fn fan_nodes(gl: &GaussLegendre, apex: Point, verts: &[Point; 6], u_edges: &[f64], out: &mut Vec<(Point, f64)>) {
    for k in 0..6 {
        let a = verts[k] - apex;
        let b = verts[(k + 1) % 6] - apex;
        let jac = a.cross(b);
        if jac.abs() <= 1e-14 * (a.norm_sq() + b.norm_sq()) {
            continue;
        }
        for e in u_edges.windows(2) {
            for (u, wu) in gl.mapped(e[0], e[1]) {
                for (v, wv) in gl.mapped(0.0, 1.0) {
                    let p = apex + (a + (b - a) * v) * u;
                    out.push((p, wu * wv * u * jac.abs()));
                }
            }
        }
    }
}

/// `∫_{H(center)} f`.
pub fn integrate_hexagon<F: FnMut(Point) -> f64>(mut f: F, center: Point, r: f64, spec: &QuadratureSpec) -> f64 {
    let rules = Rules::new(spec);
    let mut nodes = Vec::new();
    rules.hexagon_nodes(center, r, None, &mut nodes);
    nodes.iter().map(|(p, w)| w * f(*p)).sum()
}

/// `∫_{H(center)} f` with the rule graded towards `focus`.
pub fn integrate_hexagon_focused<F: FnMut(Point) -> f64>(
    mut f: F,
    center: Point,
    r: f64,
    focus: Point,
    spec: &QuadratureSpec,
) -> f64 {
    let rules = Rules::new(spec);
    let mut nodes = Vec::new();
    rules.hexagon_nodes(center, r, Some(focus), &mut nodes);
    nodes.iter().map(|(p, w)| w * f(*p)).sum()
}

/// `∫_{B(center, r) \ ∪ holes} f`.
pub fn integrate_disk<F: FnMut(Point) -> f64>(
    mut f: F,
    center: Point,
    r: f64,
    holes: &[Disk],
    spec: &QuadratureSpec,
) -> f64 {
    let rules = Rules::new(spec);
    let mut nodes = Vec::new();
    rules.disk_nodes(center, r, None, holes, &mut nodes);
    nodes.iter().map(|(p, w)| w * f(*p)).sum()
}

/// `∫_{B(center, r)} f · 1(keep)` for an arbitrary region predicate, using a
/// fourfold angular and radial refinement since the indicator is not resolved
/// exactly.
pub fn integrate_disk_masked<F: FnMut(Point) -> f64, M: Fn(Point) -> bool>(
    mut f: F,
    center: Point,
    r: f64,
    keep: M,
    spec: &QuadratureSpec,
) -> f64 {
    let radial = GaussLegendre::new(spec.radial_order);
    let angular = GaussLegendre::new(spec.angular_order.max(16));
    let panels = 16;
    let mut total = 0.0;
    for k in 0..panels {
        let (a, b) = (2.0 * PI * k as f64 / panels as f64, 2.0 * PI * (k + 1) as f64 / panels as f64);
        for (theta, wt) in angular.mapped(a, b) {
            let u = Point::new(theta.cos(), theta.sin());
            for j in 0..4 {
                let (ra, rb) = (r * j as f64 / 4.0, r * (j + 1) as f64 / 4.0);
                for (t, wr) in radial.mapped(ra, rb) {
                    let p = center + u * t;
                    if keep(p) {
                        total += wt * wr * t * f(p);
                    }
                }
            }
        }
    }
    total
}

/// `∫ 2πr f(r) dr` over `[0, ∞)`.
///
/// A fixed core `[0, plane_core·scale]` is split geometrically towards the
/// origin and at `breaks`; shells of doubling radius are then added until the
/// last shell is below `plane_tol` of the running total. The remaining tail is
/// estimated from the ratio of the last two shells.
pub fn integrate_radial_plane<F: FnMut(f64) -> f64>(
    mut f: F,
    scale: f64,
    breaks: &[f64],
    rules: &Rules,
) -> Result<f64, QuadratureError> {
    let spec = &rules.spec;
    let core = spec.plane_core * scale;
    let mut edges = vec![0.0, core];
    let mut e = core;
    for _ in 0..10 {
        e *= 0.5;
        edges.push(e);
    }
    edges.extend(breaks.iter().cloned().filter(|b| *b > 0.0 && *b < core));
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * core);
    let mut g = |r: f64| 2.0 * PI * r * f(r);
    let mut total = rules.radial.integrate_panels(&edges, &mut g);
    let mut inner = core;
    let mut prev_shell: Option<f64> = None;
    for _ in 0..spec.max_doublings {
        let outer = 2.0 * inner;
        let shell = rules.radial.integrate_panels(&[inner, 1.5 * inner, outer], &mut g);
        if !shell.is_finite() {
            return Err(QuadratureError::NonFinite { context: "radial plane integral" });
        }
        total += shell;
        inner = outer;
        if shell.abs() <= spec.plane_tol * total.abs() || (shell == 0.0 && total == 0.0) {
            if let Some(p) = prev_shell {
                let q = shell / p;
                if q > 0.0 && q < 0.9 {
                    total += shell * q / (1.0 - q);
                }
            }
            return Ok(total);
        }
        prev_shell = Some(shell);
    }
    Err(QuadratureError::TruncationFailure { radius: inner, last_shell: prev_shell.unwrap_or(f64::NAN), total })
}

/// `∫_{R²} f` for an integrable `f`, in polar coordinates with the same
/// truncation scheme as [`integrate_radial_plane`] and a trapezoidal rule in
/// angle.
pub fn integrate_plane<F: FnMut(Point) -> f64>(mut f: F, scale: f64, spec: &QuadratureSpec) -> Result<f64, QuadratureError> {
    let rules = Rules::new(spec);
    let m = 4 * spec.angular_order;
    let dirs: Vec<Point> = (0..m).map(|k| Point::polar(1.0, 2.0 * PI * k as f64 / m as f64)).collect();
    let v = integrate_radial_plane(
        |r| dirs.iter().map(|u| f(*u * r)).sum::<f64>() / m as f64,
        scale,
        &[],
        &rules,
    )?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(QuadratureError::NonFinite { context: "plane integral" })
    }
}

/// Composite Gauss–Legendre integral over `[a, b]` split at `breaks`.
pub fn integrate_radial<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], order: usize) -> f64 {
    let gl = GaussLegendre::new(order);
    let mut edges = vec![a, b];
    edges.extend(breaks.iter().cloned().filter(|x| *x > a && *x < b));
    edges.sort_by(f64::total_cmp);
    gl.integrate_panels(&edges, f)
}

/// `Σ f(c)` over lattice centres with `|c| <= cap`, optionally skipping the
/// centre at the coordinate origin.
pub fn lattice_sum<F: FnMut(Point) -> f64>(mut f: F, lattice: &HexLattice, exclude_origin: bool, cap: f64) -> f64 {
    let tol = 1e-9 * lattice.hex_radius;
    lattice
        .centers_within(cap)
        .into_iter()
        .filter(|c| !(exclude_origin && c.norm() <= tol))
        .map(&mut f)
        .sum()
}

/// `∫_{B(center, rho) ∩ H(center)} f`, polar around the centre, with extra
/// radial panel edges at `breaks`.
pub fn integrate_hexagon_disk<F: FnMut(Point) -> f64>(
    mut f: F,
    center: Point,
    hex_r: f64,
    rho: f64,
    breaks: &[f64],
    rules: &Rules,
) -> f64 {
    hexagon_disk_nodes(center, hex_r, rho, breaks, (0.0, 2.0 * PI), rules)
        .iter()
        .map(|(p, w)| w * f(*p))
        .sum()
}

/// Polar nodes for `B(center, rho) ∩ H(center)` restricted to angles in
/// `theta_range`, with extra radial panel edges at `breaks`.
pub fn hexagon_disk_nodes(
    center: Point,
    hex_r: f64,
    rho: f64,
    breaks: &[f64],
    theta_range: (f64, f64),
    rules: &Rules,
) -> Vec<(Point, f64)> {
    let apothem = 0.5 * SQRT3 * hex_r;
    let (lo, hi) = theta_range;
    let mut angles: Vec<f64> = if rho > apothem {
        (0..=12).map(|k| k as f64 * PI / 3.0 - 2.0 * PI).collect()
    } else {
        (0..=8).map(|k| k as f64 * PI / 2.0 - 2.0 * PI).collect()
    };
    if rho > apothem && rho < hex_r {
        let off = (apothem / rho).acos();
        for k in -6..6 {
            let mid = PI / 6.0 + k as f64 * PI / 3.0;
            angles.push(mid - off);
            angles.push(mid + off);
        }
    }
    angles.retain(|a| *a > lo && *a < hi);
    angles.push(lo);
    angles.push(hi);
    angles.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for w in angles.windows(2) {
        if w[1] - w[0] < 1e-14 {
            continue;
        }
        for (theta, wt) in rules.angular.mapped(w[0], w[1]) {
            let tmax = rho.min(hexagon_boundary_distance(hex_r, theta));
            let u = Point::new(theta.cos(), theta.sin());
            let mut edges = vec![0.0, tmax];
            edges.extend(breaks.iter().cloned().filter(|b| *b > 0.0 && *b < tmax));
            edges.sort_by(f64::total_cmp);
            for e in edges.windows(2) {
                for (t, wr) in rules.radial.mapped(e[0], e[1]) {
                    out.push((center + u * t, wt * wr * t));
                }
            }
        }
    }
    out
}

/// Polar nodes on the wedge `0 <= θ <= π/6`, `r >= r_min` of the hexagon
/// centred at the origin. Any D6-invariant average over the hexagon minus
/// `B(0, r_min)` is the weighted mean over these nodes.
pub fn hexagon_wedge_nodes(hex_r: f64, r_min: f64, rules: &Rules) -> Vec<(Point, f64)> {
    let apothem = 0.5 * SQRT3 * hex_r;
    let gl = &rules.cell_average;
    let mut theta_edges = vec![0.0, PI / 6.0];
    if r_min > apothem && r_min < hex_r {
        theta_edges.insert(1, PI / 6.0 - (apothem / r_min).acos());
    }
    let mut out = Vec::new();
    for e in theta_edges.windows(2) {
        for (theta, wt) in gl.mapped(e[0], e[1]) {
            let rmax = apothem / (theta - PI / 6.0).cos();
            if rmax <= r_min {
                continue;
            }
            let u = Point::new(theta.cos(), theta.sin());
            for (r, wr) in gl.mapped(r_min, rmax) {
                out.push((u * r, wt * wr * r));
            }
        }
    }
    out
}

/// Integral and area of the wedge described in [`hexagon_wedge_nodes`].
pub fn hexagon_wedge<F: FnMut(Point) -> f64>(mut f: F, hex_r: f64, r_min: f64, rules: &Rules) -> (f64, f64) {
    let nodes = hexagon_wedge_nodes(hex_r, r_min, rules);
    let integral = nodes.iter().map(|(p, w)| w * f(*p)).sum();
    let area = nodes.iter().map(|(_, w)| w).sum();
    (integral, area)
}

/// `∫_{B(c, radius)} g(|y|) dy` for a radial `g` and `|c| = dist`, reduced to
/// one dimension via the arc length of each circle inside the disk.
pub fn disk_radial_integral<G: FnMut(f64) -> f64>(mut g: G, dist: f64, radius: f64, gl: &GaussLegendre) -> f64 {
    let arc = |r: f64| {
        if dist == 0.0 {
            return if r < radius { 2.0 * PI * r } else { 0.0 };
        }
        let c = ((r * r + dist * dist - radius * radius) / (2.0 * r * dist)).clamp(-1.0, 1.0);
        2.0 * r * c.acos()
    };
    let mut total = 0.0;
    let (lo, hi) = ((dist - radius).abs(), dist + radius);
    if dist < radius {
        total += gl.integrate(0.0, radius - dist, |r| 2.0 * PI * r * g(r));
    }
    if dist > 0.0 {
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (xi, w) in gl.nodes.iter().zip(&gl.weights) {
            let arg = FRAC_PI_2 * xi;
            let r = mid + half * arg.sin();
            let jac = half * FRAC_PI_2 * arg.cos();
            if r > 0.0 {
                total += w * jac * arc(r) * g(r);
            }
        }
    }
    total
}

/// Piecewise Chebyshev interpolant of a function on `[edges[0], edges[last]]`.
#[derive(Clone, Debug)]
pub struct ChebyshevTable {
    panels: Vec<ChebyshevPanel>,
}

#[derive(Clone, Debug)]
struct ChebyshevPanel {
    a: f64,
    b: f64,
    xs: Vec<f64>,
    fs: Vec<f64>,
    ws: Vec<f64>,
}

impl ChebyshevTable {
    /// Samples `f` at `order + 1` Chebyshev points per panel.
    pub fn new<F: FnMut(f64) -> f64>(mut f: F, edges: &[f64], order: usize) -> Self {
        let n = order.max(2);
        let mut panels = Vec::with_capacity(edges.len().saturating_sub(1));
        for e in edges.windows(2) {
            let (a, b) = (e[0], e[1]);
            let mut xs = Vec::with_capacity(n + 1);
            let mut ws = Vec::with_capacity(n + 1);
            for k in 0..=n {
                let t = (PI * k as f64 / n as f64).cos();
                xs.push(0.5 * (a + b) + 0.5 * (b - a) * t);
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                ws.push(if k == 0 || k == n { 0.5 * sign } else { sign });
            }
            let fs = xs.iter().map(|x| f(*x)).collect();
            panels.push(ChebyshevPanel { a, b, xs, fs, ws });
        }
        Self { panels }
    }

    pub fn upper(&self) -> f64 {
        self.panels.last().map_or(f64::NEG_INFINITY, |p| p.b)
    }

    /// Interpolated value, or `None` outside the tabulated range.
    pub fn eval(&self, x: f64) -> Option<f64> {
        let first = self.panels.first()?;
        if x < first.a || x > self.upper() {
            return None;
        }
        let i = self.panels.partition_point(|p| p.b < x).min(self.panels.len() - 1);
        let p = &self.panels[i];
        let (mut num, mut den) = (0.0, 0.0);
        for ((xk, fk), wk) in p.xs.iter().zip(&p.fs).zip(&p.ws) {
            let d = x - xk;
            if d == 0.0 {
                return Some(*fk);
            }
            let c = wk / d;
            num += c * fk;
            den += c;
        }
        Some(num / den)
    }
}
