//! Hexagonal macro-cell lattice, region predicates and point-process samplers.
//!
//! Hexagons are flat-topped with circumradius `R_c`: vertices sit at angles
//! `0°, 60°, …` from the centre and lattice centres are
//! `(3/2·a·R_c, √3/2·a·R_c + √3·b·R_c) + offset` for integer `a, b`.
//! Cell boundaries are assigned to the lexicographically smallest of the
//! equidistant centres, so the tiling is a true partition of the plane.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::model::{ExclusionConfig, IntensityProfile};

pub const SQRT3: f64 = 1.732_050_807_568_877_2;

/// A point in the plane, in kilometres.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn polar(r: f64, theta: f64) -> Self {
        Self::new(r * theta.cos(), r * theta.sin())
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    #[inline]
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Lexicographic order on `(x, y)`.
    pub fn lex_cmp(&self, other: &Point) -> Ordering {
        self.x.total_cmp(&other.x).then(self.y.total_cmp(&other.y))
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    #[inline]
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

impl Neg for Point {
    type Output = Point;
    #[inline]
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// A closed disk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Disk {
    pub center: Point,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: Point, radius: f64) -> Self {
        Self { center, radius }
    }

    #[inline]
    pub fn contains(&self, p: Point) -> bool {
        (p - self.center).norm_sq() <= self.radius * self.radius
    }
}

/// Area of a hexagon with circumradius `r`.
#[inline]
pub fn hexagon_area(r: f64) -> f64 {
    1.5 * SQRT3 * r * r
}

/// Vertices of the flat-topped hexagon centred at `center`, counter-clockwise
/// starting on the positive x axis.
pub fn hexagon_vertices(center: Point, r: f64) -> [Point; 6] {
    let mut v = [Point::ORIGIN; 6];
    for (k, p) in v.iter_mut().enumerate() {
        let th = k as f64 * PI / 3.0;
        *p = center + Point::new(r * th.cos(), r * th.sin());
    }
    v
}

/// Distance from the hexagon centre to its boundary along direction `theta`.
#[inline]
pub fn hexagon_boundary_distance(r: f64, theta: f64) -> f64 {
    let sector = PI / 3.0;
    let local = (theta.rem_euclid(sector)) - sector / 2.0;
    0.5 * SQRT3 * r / local.cos()
}

/// Point of the closed hexagon nearest to `p` (`p` itself when inside).
pub fn closest_point_on_hexagon(center: Point, r: f64, p: Point) -> Point {
    let d = p - center;
    if hexagon_contains_closed(d, r) {
        return p;
    }
    let v = hexagon_vertices(center, r);
    let mut best = v[0];
    let mut best_d = f64::INFINITY;
    for k in 0..6 {
        let a = v[k];
        let b = v[(k + 1) % 6];
        let ab = b - a;
        let t = ((p - a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0);
        let q = a + ab * t;
        let dq = (p - q).norm_sq();
        if dq < best_d {
            best_d = dq;
            best = q;
        }
    }
    best
}

#[inline]
fn hexagon_contains_closed(d: Point, r: f64) -> bool {
    let (ax, ay) = (d.x.abs(), d.y.abs());
    ay <= 0.5 * SQRT3 * r && SQRT3 * ax + ay <= SQRT3 * r
}

/// Infinite hexagonal lattice of macro base stations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HexLattice {
    pub hex_radius: f64,
    pub offset: Point,
}

impl HexLattice {
    pub fn new(hex_radius: f64) -> Self {
        Self { hex_radius, offset: Point::ORIGIN }
    }

    pub fn with_offset(hex_radius: f64, offset: Point) -> Self {
        Self { hex_radius, offset }
    }

    #[inline]
    pub fn apothem(&self) -> f64 {
        0.5 * SQRT3 * self.hex_radius
    }

    #[inline]
    pub fn center(&self, a: i64, b: i64) -> Point {
        let r = self.hex_radius;
        let (a, b) = (a as f64, b as f64);
        self.offset + Point::new(1.5 * a * r, (0.5 * SQRT3 * a + SQRT3 * b) * r)
    }

    /// Fractional lattice coordinates of `x`.
    #[inline]
    fn fractional(&self, x: Point) -> (f64, f64) {
        let d = x - self.offset;
        let a = d.x / (1.5 * self.hex_radius);
        let b = (d.y / self.hex_radius - 0.5 * SQRT3 * a) / SQRT3;
        (a, b)
    }

    /// All centres with `|c| <= cap`, ordered by distance then angle.
    pub fn centers_within(&self, cap: f64) -> Vec<Point> {
        let r = self.hex_radius;
        let reach = cap + self.offset.norm();
        let amax = (reach / (1.5 * r)).ceil() as i64 + 1;
        let bmax = (reach / (0.5 * SQRT3 * r)).ceil() as i64 + amax + 1;
        let mut keyed = Vec::new();
        let cap2 = cap * cap;
        for a in -amax..=amax {
            for b in -bmax..=bmax {
                let c = self.center(a, b);
                if c.norm_sq() <= cap2 {
                    keyed.push((c.norm(), c.angle(), c));
                }
            }
        }
        keyed.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)).then(p.2.lex_cmp(&q.2)));
        keyed.into_iter().map(|k| k.2).collect()
    }

    /// Centres within `radius` of `x`, in no particular order.
    pub fn centers_near(&self, x: Point, radius: f64) -> Vec<Point> {
        let (fa, fb) = self.fractional(x);
        let k = (radius / self.apothem()).ceil() as i64 + 2;
        let (a0, b0) = (fa.round() as i64, fb.round() as i64);
        let mut out = Vec::new();
        let r2 = radius * radius;
        for a in a0 - k..=a0 + k {
            for b in b0 - 2 * k..=b0 + 2 * k {
                let c = self.center(a, b);
                if (c - x).norm_sq() <= r2 {
                    out.push(c);
                }
            }
        }
        out
    }

    /// Nearest lattice centre; exact ties go to the lexicographically smallest.
    pub fn nearest_center(&self, x: Point) -> Point {
        let (fa, fb) = self.fractional(x);
        let (a0, b0) = (fa.floor() as i64, fb.floor() as i64);
        let tol = 1e-12 * self.hex_radius * self.hex_radius;
        let mut best = self.center(a0, b0);
        let mut best_d = (x - best).norm_sq();
        for a in a0 - 1..=a0 + 2 {
            for b in b0 - 1..=b0 + 2 {
                let c = self.center(a, b);
                let d = (x - c).norm_sq();
                let closer = if (d - best_d).abs() <= tol {
                    c.lex_cmp(&best) == Ordering::Less
                } else {
                    d < best_d
                };
                if closer {
                    best = c;
                    best_d = d;
                }
            }
        }
        best
    }

    /// Distance from `x` to the nearest lattice centre.
    #[inline]
    pub fn distance_to_nearest(&self, x: Point) -> f64 {
        (x - self.nearest_center(x)).norm()
    }
}

/// Lattice points with `|x| <= radius_cap`, sorted by `|x|` then angle.
pub fn lattice_centers(lattice: &HexLattice, radius_cap: f64) -> Vec<Point> {
    lattice.centers_within(radius_cap)
}

/// Whether `x` belongs to the cell of `center` in the tiling generated by a
/// lattice through `center` with circumradius `hex_radius`.
pub fn hexagon_contains(center: Point, hex_radius: f64, x: Point) -> bool {
    let d = x - center;
    let (ax, ay) = (d.x.abs(), d.y.abs());
    let eps = 1e-12 * hex_radius;
    let apothem = 0.5 * SQRT3 * hex_radius;
    let strictly_inside = ay < apothem - eps && SQRT3 * ax + ay < SQRT3 * hex_radius - eps;
    if strictly_inside {
        return true;
    }
    let outside = ay > apothem + eps || SQRT3 * ax + ay > SQRT3 * hex_radius + eps;
    if outside {
        return false;
    }
    let lattice = HexLattice::with_offset(hex_radius, center);
    let nearest = lattice.nearest_center(x);
    (nearest - center).norm() <= 1e-9 * hex_radius
}

/// Macro base station serving position `x`.
pub fn nearest_bs(x: Point, lattice: &HexLattice) -> Point {
    lattice.nearest_center(x)
}

/// Whether `x` falls inside the configured exclusion disks.
pub fn in_exclusion(x: Point, lattice: &HexLattice, exclusion: &ExclusionConfig) -> bool {
    match exclusion.radius() {
        None => false,
        Some(r) => lattice.distance_to_nearest(x) < r,
    }
}

/// Sampling region for homogeneous point processes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    Hexagon { center: Point, radius: f64 },
    Disk { center: Point, radius: f64 },
    Window { min: Point, max: Point },
}

impl Region {
    pub fn area(&self) -> f64 {
        match *self {
            Region::Hexagon { radius, .. } => hexagon_area(radius),
            Region::Disk { radius, .. } => PI * radius * radius,
            Region::Window { min, max } => (max.x - min.x).max(0.0) * (max.y - min.y).max(0.0),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        match *self {
            Region::Hexagon { center, radius } => hexagon_contains_closed(p - center, radius),
            Region::Disk { center, radius } => (p - center).norm_sq() <= radius * radius,
            Region::Window { min, max } => p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y,
        }
    }

    /// One point uniformly distributed on the region.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match *self {
            Region::Hexagon { center, radius } => {
                let k = rng.random_range(0..6u32) as f64;
                let (t0, t1) = (k * PI / 3.0, (k + 1.0) * PI / 3.0);
                let a = Point::polar(radius, t0);
                let b = Point::polar(radius, t1);
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                center + a * u + b * v
            }
            Region::Disk { center, radius } => {
                let r = radius * rng.random::<f64>().sqrt();
                let th = 2.0 * PI * rng.random::<f64>();
                center + Point::polar(r, th)
            }
            Region::Window { min, max } => Point::new(
                min.x + (max.x - min.x) * rng.random::<f64>(),
                min.y + (max.y - min.y) * rng.random::<f64>(),
            ),
        }
    }
}

/// Per-point mark: a type index and the index of the serving cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Mark {
    pub kind: usize,
    pub cell: usize,
}

/// A finite marked point pattern.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointPattern {
    pub points: Vec<Point>,
    pub marks: Vec<Mark>,
}

impl PointPattern {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<Point>) -> Self {
        let marks = vec![Mark::default(); points.len()];
        Self { points, marks }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Point, mark: Mark) {
        self.points.push(p);
        self.marks.push(mark);
    }

    pub fn with_mark(mut self, mark: Mark) -> Self {
        self.marks.iter_mut().for_each(|m| *m = mark);
        self
    }
}

/// Poisson variate with the given mean; zero mean yields zero.
pub fn sample_poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if !(mean > 0.0) {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(d) => d.sample(rng) as usize,
        Err(_) => 0,
    }
}

/// Homogeneous PPP of the given intensity (points per km²) on `region`.
pub fn sample_ppp_region<R: Rng + ?Sized>(intensity: f64, region: &Region, rng: &mut R) -> PointPattern {
    let mut points = Vec::new();
    extend_ppp_region(&mut points, intensity, region, rng);
    PointPattern::from_points(points)
}

/// Appends a homogeneous PPP realisation to `out`.
pub fn extend_ppp_region<R: Rng + ?Sized>(out: &mut Vec<Point>, intensity: f64, region: &Region, rng: &mut R) {
    let n = sample_poisson_count(intensity * region.area(), rng);
    out.reserve(n);
    for _ in 0..n {
        out.push(region.sample_uniform(rng));
    }
}

/// Inhomogeneous PPP with radial intensity `profile` around `center`, by
/// thinning a homogeneous PPP at the profile's peak rate.
pub fn sample_clustered_ues<R: Rng + ?Sized>(profile: &IntensityProfile, center: Point, rng: &mut R) -> PointPattern {
    let mut points = Vec::new();
    extend_clustered_ues(&mut points, profile, center, rng);
    PointPattern::from_points(points)
}

/// Appends an inhomogeneous cluster realisation to `out`.
pub fn extend_clustered_ues<R: Rng + ?Sized>(
    out: &mut Vec<Point>,
    profile: &IntensityProfile,
    center: Point,
    rng: &mut R,
) {
    let peak = profile.peak_density();
    if !(peak > 0.0) {
        return;
    }
    let region = Region::Disk { center, radius: profile.support_radius };
    let n = sample_poisson_count(peak * region.area(), rng);
    for _ in 0..n {
        let p = region.sample_uniform(rng);
        let keep = profile.density((p - center).norm()) / peak;
        if keep >= 1.0 || rng.random::<f64>() < keep {
            out.push(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_centers(r: f64, cap: f64, k: i64) -> Vec<Point> {
        let lat = HexLattice::new(r);
        let mut v = Vec::new();
        for a in -k..=k {
            for b in -k..=k {
                let c = lat.center(a, b);
                if c.norm() <= cap {
                    v.push(c);
                }
            }
        }
        v
    }

    fn same_set(mut a: Vec<Point>, mut b: Vec<Point>) -> bool {
        a.sort_by(|p, q| p.lex_cmp(q));
        b.sort_by(|p, q| p.lex_cmp(q));
        a.len() == b.len() && a.iter().zip(&b).all(|(p, q)| (*p - *q).norm() < 1e-12)
    }

    #[test]
    fn lattice_small_caps() {
        let lat = HexLattice::new(1.0);
        let c = lattice_centers(&lat, 1.8);
        assert_eq!(c.len(), 7);
        assert_eq!(c[0], Point::ORIGIN);
        for p in &c[1..] {
            assert!((p.norm() - SQRT3).abs() < 1e-12);
        }
        assert!(same_set(c, brute_centers(1.0, 1.8, 3)));
        assert_eq!(lattice_centers(&lat, 0.5), vec![Point::ORIGIN]);
        // neighbours sit at √3 ≈ 1.732, beyond a 1.1 cap
        assert_eq!(lattice_centers(&lat, 1.1).len(), 1);
    }

    #[test]
    fn lattice_cap_ten_matches_brute_force() {
        let lat = HexLattice::new(1.0);
        assert!(same_set(lattice_centers(&lat, 10.0), brute_centers(1.0, 10.0, 12)));
        let off = HexLattice::with_offset(1.0, Point::new(0.3, -0.2));
        let brute: Vec<Point> = {
            let mut v = Vec::new();
            for a in -14..=14 {
                for b in -14..=14 {
                    let c = off.center(a, b);
                    if c.norm() <= 10.0 {
                        v.push(c);
                    }
                }
            }
            v
        };
        assert!(same_set(lattice_centers(&off, 10.0), brute));
    }

    #[test]
    fn lattice_order_is_by_distance() {
        let c = lattice_centers(&HexLattice::new(0.7), 5.0);
        for w in c.windows(2) {
            assert!(w[0].norm() <= w[1].norm() + 1e-15);
        }
    }

    #[test]
    fn contains_vertex_and_edge_normal() {
        let r = 1.0;
        assert!(hexagon_contains(Point::ORIGIN, r, Point::ORIGIN));
        // vertex direction: the vertex at (R,0) is shared with two cells to the right
        assert!(hexagon_contains(Point::ORIGIN, r, Point::new(r, 0.0)));
        // edge normal at 30°: apothem is √3/2 R < R
        assert!(!hexagon_contains(Point::ORIGIN, r, Point::polar(r, PI / 6.0)));
        assert!(hexagon_contains(Point::ORIGIN, r, Point::polar(0.86, PI / 6.0)));
        // half-plane oracle on random points
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let p = Point::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2));
            let half_planes = (0..6).all(|k| {
                let n = Point::polar(1.0, PI / 6.0 + k as f64 * PI / 3.0);
                p.dot(n) < 0.5 * SQRT3 * r - 1e-9
            });
            if half_planes {
                assert!(hexagon_contains(Point::ORIGIN, r, p));
            }
        }
    }

    #[test]
    fn shared_edge_belongs_to_exactly_one_cell() {
        let lat = HexLattice::new(1.0);
        let right_up = lat.center(1, 0);
        let mid = right_up * 0.5;
        let a = hexagon_contains(Point::ORIGIN, 1.0, mid);
        let b = hexagon_contains(right_up, 1.0, mid);
        assert!(a ^ b);
        assert!(a, "origin is lexicographically smaller");
    }

    #[test]
    fn tiling_partitions_random_points() {
        let lat = HexLattice::new(1.0);
        let centers = lattice_centers(&lat, 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let p = Point::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let owners: Vec<&Point> = centers.iter().filter(|c| hexagon_contains(**c, 1.0, p)).collect();
            assert_eq!(owners.len(), 1, "{p:?}");
            // nearest-centre Voronoi oracle
            let voronoi = centers
                .iter()
                .min_by(|a, b| (p - **a).norm_sq().total_cmp(&(p - **b).norm_sq()))
                .unwrap();
            assert!((*owners[0] - *voronoi).norm() < 1e-12);
            assert!((nearest_bs(p, &lat) - *voronoi).norm() < 1e-12);
        }
    }

    #[test]
    fn nearest_bs_cases() {
        let lat = HexLattice::new(1.0);
        assert_eq!(nearest_bs(Point::ORIGIN, &lat), Point::ORIGIN);
        let target = Point::new(1.5, 0.5 * SQRT3);
        let x = target * 0.5001;
        assert!((nearest_bs(x, &lat) - target).norm() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hex = Region::Hexagon { center: Point::ORIGIN, radius: 1.0 };
        for _ in 0..10_000 {
            let p = hex.sample_uniform(&mut rng);
            assert_eq!(nearest_bs(p, &lat), Point::ORIGIN);
        }
    }

    #[test]
    fn exclusion_matches_brute_force() {
        let lat = HexLattice::new(1.0);
        assert!(!in_exclusion(Point::new(0.01, 0.0), &lat, &ExclusionConfig::None));
        let ue = ExclusionConfig::UeExclusion { radius: 0.4 };
        assert!(in_exclusion(lat.center(2, -1), &lat, &ue));
        let centers = lattice_centers(&lat, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let p = Point::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let dmin = centers.iter().map(|c| (p - *c).norm()).fold(f64::INFINITY, f64::min);
            assert_eq!(in_exclusion(p, &lat, &ue), dmin < 0.4);
        }
    }

    #[test]
    fn closest_point_on_hexagon_is_on_boundary_for_outside_points() {
        let p = Point::new(3.0, 0.1);
        let q = closest_point_on_hexagon(Point::ORIGIN, 1.0, p);
        assert!((q.norm() - 1.0).abs() < 0.2);
        let inside = Point::new(0.1, 0.2);
        assert_eq!(closest_point_on_hexagon(Point::ORIGIN, 1.0, inside), inside);
    }

    #[test]
    fn hexagon_boundary_distance_values() {
        assert!((hexagon_boundary_distance(1.0, 0.0) - 1.0).abs() < 1e-12);
        assert!((hexagon_boundary_distance(1.0, PI / 6.0) - 0.5 * SQRT3).abs() < 1e-12);
    }

    #[test]
    fn empty_samplers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hex = Region::Hexagon { center: Point::ORIGIN, radius: 1.0 };
        assert!(sample_ppp_region(0.0, &hex, &mut rng).is_empty());
        let zero = IntensityProfile::constant(0.2, 0.0);
        assert!(sample_clustered_ues(&zero, Point::ORIGIN, &mut rng).is_empty());
    }

    #[test]
    fn samplers_stay_in_region_and_are_seeded() {
        let regions = [
            Region::Hexagon { center: Point::new(1.0, 2.0), radius: 0.5 },
            Region::Disk { center: Point::new(-1.0, 0.0), radius: 0.3 },
            Region::Window { min: Point::new(0.0, 0.0), max: Point::new(2.0, 1.0) },
        ];
        for reg in &regions {
            let a = sample_ppp_region(200.0, reg, &mut ChaCha8Rng::seed_from_u64(9));
            let b = sample_ppp_region(200.0, reg, &mut ChaCha8Rng::seed_from_u64(9));
            assert_eq!(a, b);
            assert!(a.points.iter().all(|p| reg.contains(*p)));
        }
    }
}
