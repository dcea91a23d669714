//! Slow reference implementations for differential testing.
//!
//! Nothing here calls into the geometry, uncertainty or selection routines
//! it is compared against; only the plain data types are shared.

use crate::geometry::{MultiPolygon, OrientedBox, Point2};
use crate::selection::{CandidateTrajectory, EgoDims, SelectionConfig};
use crate::uncertainty::{LaplacePoint, B_MIN};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Corners closer than this to a drivable-area edge are not compared.
pub const EDGE_EXCLUSION: f64 = 1e-9;

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite coordinate")
}

/// `x = m * 2^e` exactly.
fn decode(x: f64) -> (BigInt, i32) {
    let (mantissa, exp, sign) = num_traits::Float::integer_decode(x);
    let m = BigInt::from(mantissa);
    (if sign < 0 { -m } else { m }, exp as i32)
}

type IntPoint = (BigInt, BigInt);

/// Drivable area in exact fixed point: every coordinate is an integer
/// multiple of `2^exp`, with `exp` small enough for every query point too.
struct FixedArea {
    exp: i32,
    /// Each ring as (f64 vertices, integer vertices), without the closing duplicate.
    rings: Vec<Vec<(Point2<f64>, IntPoint)>>,
    polygons: Vec<std::ops::Range<usize>>,
}

/// Ray directions with small integer components that avoid the axes.
const RAY_DIRECTIONS: [(i64, i64); 4] = [(3, 1), (-1, 7), (-5, -2), (3, -11)];

impl FixedArea {
    fn new(area: &MultiPolygon<f64>, queries: &[Point2<f64>]) -> Self {
        let open = |ring: &[Point2<f64>]| -> Vec<Point2<f64>> {
            let mut v = ring.to_vec();
            if v.len() > 1 && v.first() == v.last() {
                v.pop();
            }
            v
        };
        let raw: Vec<Vec<Point2<f64>>> = area
            .polygons()
            .iter()
            .flat_map(|poly| std::iter::once(poly.outer()).chain(poly.holes().iter().map(|h| h.as_slice())))
            .map(open)
            .collect();
        let exp = raw
            .iter()
            .flatten()
            .chain(queries)
            .flat_map(|p| [p.x, p.y])
            .filter(|v| *v != 0.0)
            .map(|v| decode(v).1)
            .min()
            .unwrap_or(0);
        let mut polygons = Vec::new();
        let mut next = 0;
        for poly in area.polygons() {
            let n = 1 + poly.holes().len();
            polygons.push(next..next + n);
            next += n;
        }
        let rings = raw
            .into_iter()
            .map(|ring| ring.into_iter().map(|p| (p, fixed_point(p, exp))).collect())
            .collect();
        Self {
            exp,
            rings,
            polygons,
        }
    }

    /// Exact containment vote; boundary counts as inside. Returns `None`
    /// when the four rays disagree two to two.
    fn contains(&self, p: Point2<f64>) -> Option<bool> {
        let pi = fixed_point(p, self.exp);
        let mut votes = [false; 4];
        for range in &self.polygons {
            let rings = &self.rings[range.clone()];
            if rings.iter().any(|r| on_ring(p, &pi, r)) {
                return Some(true);
            }
            for (k, dir) in RAY_DIRECTIONS.iter().enumerate() {
                let parity = rings.iter().fold(false, |acc, r| acc ^ ray_parity(&pi, *dir, r));
                votes[k] |= parity;
            }
        }
        match votes.iter().filter(|v| **v).count() {
            3 | 4 => Some(true),
            0 | 1 => Some(false),
            _ => None,
        }
    }
}

fn fixed(v: f64, exp: i32) -> BigInt {
    if v == 0.0 {
        return BigInt::zero();
    }
    let (m, e) = decode(v);
    assert!(e >= exp, "fixed-point exponent chosen too large");
    m << (e - exp) as usize
}

fn fixed_point(p: Point2<f64>, exp: i32) -> IntPoint {
    (fixed(p.x, exp), fixed(p.y, exp))
}

fn on_ring(p: Point2<f64>, pi: &IntPoint, ring: &[(Point2<f64>, IntPoint)]) -> bool {
    (0..ring.len()).any(|i| {
        let (af, a) = &ring[i];
        let (bf, b) = &ring[(i + 1) % ring.len()];
        // f64 comparisons are exact, so the bounding-box test loses nothing.
        let within = |v: f64, u: f64, w: f64| v >= u.min(w) && v <= u.max(w);
        if !(within(p.x, af.x, bf.x) && within(p.y, af.y, bf.y)) {
            return false;
        }
        ((&b.0 - &a.0) * (&pi.1 - &a.1) - (&b.1 - &a.1) * (&pi.0 - &a.0)).is_zero()
    })
}

/// Parity of crossings of the ray `p + t * dir`, `t > 0`, with the closed ring.
fn ray_parity(p: &IntPoint, dir: (i64, i64), ring: &[(Point2<f64>, IntPoint)]) -> bool {
    let (dx, dy) = (BigInt::from(dir.0), BigInt::from(dir.1));
    // Half-open rule: a vertex on the ray's line counts as being on the
    // non-positive side, so shared vertices are counted once.
    let sides: Vec<bool> = ring
        .iter()
        .map(|(_, v)| (&dx * (&v.1 - &p.1) - &dy * (&v.0 - &p.0)).is_positive())
        .collect();
    let mut inside = false;
    for i in 0..ring.len() {
        let j = (i + 1) % ring.len();
        let (a, b) = (&ring[i].1, &ring[j].1);
        if a == b || sides[i] == sides[j] {
            continue;
        }
        // Sign of the intersection parameter along the ray.
        let ex = &b.0 - &a.0;
        let ey = &b.1 - &a.1;
        let denom = &dx * &ey - &dy * &ex;
        let numer = (&a.0 - &p.0) * &ey - (&a.1 - &p.1) * &ex;
        if !denom.is_zero() && !numer.is_zero() && numer.is_positive() == denom.is_positive() {
            inside = !inside;
        }
    }
    inside
}

#[cfg(test)]
fn contains_exact(p: Point2<f64>, area: &MultiPolygon<f64>) -> Option<bool> {
    FixedArea::new(area, &[p]).contains(p)
}

fn seg_distance(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let len2 = abx * abx + aby * aby;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * abx + (p.y - a.y) * aby) / len2).clamp(0.0, 1.0)
    };
    ((p.x - a.x - t * abx).powi(2) + (p.y - a.y - t * aby).powi(2)).sqrt()
}

fn near_edge(p: Point2<f64>, area: &MultiPolygon<f64>) -> bool {
    area.polygons().iter().any(|poly| {
        std::iter::once(poly.outer())
            .chain(poly.holes().iter().map(|h| h.as_slice()))
            .any(|ring| {
                (0..ring.len()).any(|i| seg_distance(p, ring[i], ring[(i + 1) % ring.len()]) < EDGE_EXCLUSION)
            })
    })
}

/// Box corners computed in exact arithmetic from the f64 inputs (the
/// heading's sine and cosine are the only rounded quantities), then
/// rounded once to f64.
fn exact_corners(center: Point2<f64>, heading: f64, length: f64, width: f64) -> [Point2<f64>; 4] {
    let (s, c) = heading.sin_cos();
    let (s, c) = (rat(s), rat(c));
    let hl = rat(length) / BigRational::from_integer(2.into());
    let hw = rat(width) / BigRational::from_integer(2.into());
    let cx = rat(center.x);
    let cy = rat(center.y);
    let corner = |fl: &BigRational, fw: &BigRational| {
        let x = &cx + fl * &c - fw * &s;
        let y = &cy + fl * &s + fw * &c;
        Point2::new(to_f64(&x), to_f64(&y))
    };
    let neg = |v: &BigRational| -v.clone();
    [
        corner(&hl, &hw),
        corner(&neg(&hl), &hw),
        corner(&neg(&hl), &neg(&hw)),
        corner(&hl, &neg(&hw)),
    ]
}

fn to_f64(x: &BigRational) -> f64 {
    num_traits::ToPrimitive::to_f64(x).expect("representable")
}

/// Per-step verdict of [`oracle_dacr`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepVerdict {
    Inside,
    Conflict,
    /// A corner lies within [`EDGE_EXCLUSION`] of an edge, or the rays split.
    Ambiguous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleDacr {
    pub steps: Vec<StepVerdict>,
    /// Conflict fraction over the horizon, counting ambiguous steps as inside.
    pub rate: f64,
}

impl OracleDacr {
    pub fn is_exact(&self) -> bool {
        !self.steps.contains(&StepVerdict::Ambiguous)
    }
}

/// Drivable-area conflict rate by exact rational ray casting.
pub fn oracle_dacr(
    traj: &CandidateTrajectory<f64>,
    dims: &EgoDims<f64>,
    da: &MultiPolygon<f64>,
    horizon_steps: usize,
) -> OracleDacr {
    let corners: Vec<[Point2<f64>; 4]> = (0..horizon_steps)
        .map(|t| exact_corners(traj.waypoints[t], traj.headings[t], dims.length, dims.width))
        .collect();
    let fixed = FixedArea::new(da, corners.as_flattened());
    let steps: Vec<StepVerdict> = corners
        .iter()
        .map(|step| {
            let mut verdict = StepVerdict::Inside;
            for &c in step {
                if near_edge(c, da) {
                    return StepVerdict::Ambiguous;
                }
                match fixed.contains(c) {
                    None => return StepVerdict::Ambiguous,
                    Some(false) => verdict = StepVerdict::Conflict,
                    Some(true) => {}
                }
            }
            verdict
        })
        .collect();
    let conflicts = steps.iter().filter(|s| **s == StepVerdict::Conflict).count();
    OracleDacr {
        rate: conflicts as f64 / horizon_steps as f64,
        steps,
    }
}

fn axis_nll(obs: &[f64], mu: f64, b: f64) -> f64 {
    obs.iter().map(|x| (2.0 * b).ln() + (x - mu).abs() / b).sum()
}

fn abs_dev(obs: &[f64], mu: f64) -> f64 {
    obs.iter().map(|x| (x - mu).abs()).sum()
}

/// Coarse-to-fine search over `(mu, b)` for one axis, then widening of the
/// location to the middle of its flat optimal interval.
fn fit_axis(obs: &[f64]) -> (f64, f64) {
    const GRID: usize = 17;
    let lo = obs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = obs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo).max(1e-6);

    // Level 1: joint grid zoom.
    let (mut mu_c, mut mu_r) = (0.5 * (lo + hi), 0.5 * spread);
    let (mut b_c, mut b_r) = (0.5 * (B_MIN + spread), 0.5 * spread);
    for _ in 0..60 {
        let mut best = (f64::INFINITY, mu_c, b_c);
        for i in 0..GRID {
            let mu = mu_c - mu_r + 2.0 * mu_r * i as f64 / (GRID - 1) as f64;
            for j in 0..GRID {
                let b = (b_c - b_r + 2.0 * b_r * j as f64 / (GRID - 1) as f64).max(B_MIN);
                let f = axis_nll(obs, mu, b);
                if f < best.0 {
                    best = (f, mu, b);
                }
            }
        }
        mu_c = best.1;
        b_c = best.2;
        mu_r *= 0.25;
        b_r *= 0.25;
    }

    // Level 2: the location objective can be flat between the two middle
    // observations; report the middle of that interval.
    let f_star = abs_dev(obs, mu_c);
    let tol = 1e-12 * (1.0 + f_star);
    let flat = |mu: f64| abs_dev(obs, mu) <= f_star + tol;
    let edge = |mut inside: f64, mut outside: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if mid == inside || mid == outside {
                break;
            }
            if flat(mid) {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    let left = edge(mu_c, lo - 1.0);
    let right = edge(mu_c, hi + 1.0);
    let mu = 0.5 * (left + right);

    // Scale by grid zoom at the chosen location.
    let (mut c, mut r) = (0.5 * (B_MIN + spread), 0.5 * spread + B_MIN);
    for _ in 0..80 {
        let mut best = (f64::INFINITY, c);
        for j in 0..GRID {
            let b = (c - r + 2.0 * r * j as f64 / (GRID - 1) as f64).max(B_MIN);
            let f = axis_nll(obs, mu, b);
            if f < best.0 {
                best = (f, b);
            }
        }
        c = best.1;
        r *= 0.25;
    }
    (mu, c)
}

/// Laplace fit by numeric minimization of the summed NLL.
pub fn oracle_laplace_fit(observations: &[Point2<f64>]) -> Option<LaplacePoint<f64>> {
    if observations.is_empty() {
        return None;
    }
    let xs: Vec<f64> = observations.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = observations.iter().map(|p| p.y).collect();
    let (mx, bx) = fit_axis(&xs);
    let (my, by) = fit_axis(&ys);
    Some(LaplacePoint {
        mu: Point2::new(mx, my),
        b: [bx, by],
    })
}

/// Filter outcomes for one candidate, computed elsewhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateFlags {
    pub confidence: f64,
    pub risk_nll: f64,
    pub uncertainty: bool,
    pub agent: bool,
    pub boundary: bool,
}

/// Zero-then-argmax selection written out with plain loops.
pub fn oracle_select(flags: &[CandidateFlags], cfg: &SelectionConfig) -> usize {
    let mut scores = Vec::new();
    for f in flags {
        let mut s = f.confidence;
        if cfg.enable_uncertainty_filter && f.uncertainty {
            s = 0.0;
        }
        if cfg.enable_agent_filter && f.agent {
            s = 0.0;
        }
        if cfg.enable_boundary_filter && f.boundary {
            s = 0.0;
        }
        scores.push(s);
    }

    let mut any_positive = false;
    for s in &scores {
        if *s > 0.0 {
            any_positive = true;
        }
    }

    if any_positive {
        let mut best = 0;
        for i in 1..flags.len() {
            let better = if scores[i] != scores[best] {
                scores[i] > scores[best]
            } else {
                cfg.enable_uncertainty_filter && flags[i].risk_nll > flags[best].risk_nll
            };
            if better {
                best = i;
            }
        }
        return best;
    }

    let mut best: Option<usize> = None;
    for i in 0..flags.len() {
        if cfg.enable_agent_filter && flags[i].agent {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(j) => {
                let better = if flags[i].risk_nll != flags[j].risk_nll {
                    flags[i].risk_nll > flags[j].risk_nll
                } else {
                    flags[i].confidence > flags[j].confidence
                };
                Some(if better { i } else { j })
            }
        };
    }
    if let Some(i) = best {
        return i;
    }
    let mut best = 0;
    for i in 1..flags.len() {
        if flags[i].confidence > flags[best].confidence {
            best = i;
        }
    }
    best
}

/// Winding-number containment for a single ring; boundary points are inside.
pub fn winding_contains(ring: &[Point2<f64>], p: Point2<f64>) -> bool {
    let n = ring.len();
    let mut winding = 0i64;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        let within_x = p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x);
        let within_y = p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y);
        if cross == 0.0 && within_x && within_y {
            return true;
        }
        if a.y <= p.y {
            if b.y > p.y && cross > 0.0 {
                winding += 1;
            }
        } else if b.y <= p.y && cross < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

/// Winding-number containment for a multipolygon (holes subtract).
pub fn winding_contains_multi(area: &MultiPolygon<f64>, p: Point2<f64>) -> bool {
    area.polygons().iter().any(|poly| {
        let on_hole_edge = poly.holes().iter().any(|h| {
            (0..h.len()).any(|i| seg_distance(p, h[i], h[(i + 1) % h.len()]) == 0.0)
        });
        winding_contains(poly.outer(), p)
            && (on_hole_edge || !poly.holes().iter().any(|h| winding_contains(h, p)))
    })
}

/// Overlap estimate from `samples` random points per box (plus corners).
/// Can miss contacts thinner than the sampling density.
pub fn sampled_overlap(a: &OrientedBox<f64>, b: &OrientedBox<f64>, samples: usize, seed: u64) -> bool {
    let inside = |bx: &OrientedBox<f64>, p: Point2<f64>| {
        let (s, c) = bx.heading.sin_cos();
        let (dx, dy) = (p.x - bx.center.x, p.y - bx.center.y);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= 0.5 * bx.length * (1.0 + 1e-12) && v.abs() <= 0.5 * bx.width * (1.0 + 1e-12)
    };
    let sample = |bx: &OrientedBox<f64>, u: f64, v: f64| {
        let (s, c) = bx.heading.sin_cos();
        let (lu, lv) = (u * 0.5 * bx.length, v * 0.5 * bx.width);
        Point2::new(bx.center.x + lu * c - lv * s, bx.center.y + lu * s + lv * c)
    };
    let mut uv: Vec<(f64, f64)> = vec![(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (0.0, 0.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uv.extend((0..samples).map(|_| (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))));
    uv.iter().any(|&(u, v)| inside(b, sample(a, u, v))) || uv.iter().any(|&(u, v)| inside(a, sample(b, u, v)))
}

/// Trapezoid-rule integral of a two-axis Laplace density over the square
/// `mu ± half_width` with `n` intervals per axis.
pub fn integrate_density(lp: &LaplacePoint<f64>, half_width: f64, n: usize) -> f64 {
    let pdf = |x: f64, y: f64| {
        let px = (-(x - lp.mu.x).abs() / lp.b[0]).exp() / (2.0 * lp.b[0]);
        let py = (-(y - lp.mu.y).abs() / lp.b[1]).exp() / (2.0 * lp.b[1]);
        px * py
    };
    let h = 2.0 * half_width / n as f64;
    let mut total = 0.0;
    for i in 0..=n {
        let wx = if i == 0 || i == n { 0.5 } else { 1.0 };
        let x = lp.mu.x - half_width + h * i as f64;
        for j in 0..=n {
            let wy = if j == 0 || j == n { 0.5 } else { 1.0 };
            let y = lp.mu.y - half_width + h * j as f64;
            total += wx * wy * pdf(x, y);
        }
    }
    total * h * h
}

/// Minimum point NLL of `p` against every vertex, by exhaustive scan.
pub fn oracle_min_nll(p: Point2<f64>, vertices: &[LaplacePoint<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for v in vertices {
        let mut nll = 0.0;
        for (d, b) in [(p.x - v.mu.x, v.b[0]), (p.y - v.mu.y, v.b[1])] {
            // -ln of (1 / 2b) exp(-|d| / b), expanded to avoid underflow.
            nll += (2.0 * b).ln() + d.abs() / b;
        }
        if nll < best {
            best = nll;
        }
    }
    best
}
