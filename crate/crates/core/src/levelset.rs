//! Level contours of a Lyapunov function on a coordinate plane.
//!
//! Marching squares on a node grid. Each edge crossing is first placed by
//! linear interpolation and then polished by a bracketed root search on
//! the exact function, so vertices sit on the level set even next to kinks.
//! Saddle cells are split using the value at the cell centre.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::lyap::IssLyapunov;
use crate::lyap_df::DfLyapunov;
use crate::math::{abs, floor, sqrt};
use crate::model::Deviation;
use crate::verify::{CheckResult, Location, MarginTracker};
use crate::{Error, Result};

/// Default node count per axis.
pub const DEFAULT_RESOLUTION: usize = 800;

/// Vertex residual tolerance, relative to 1 + level.
pub const TOL_CONTOUR: f64 = 1e-3;

/// The fixed coordinate of a plane. Free coordinates are (x̃₁, x̃₂) for
/// `X3` and (x̃₁, x̃₃) for `X2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fixed", content = "value", rename_all = "snake_case")]
pub enum Plane {
    X3(f64),
    X2(f64),
}

impl Plane {
    pub fn deviation(&self, a: f64, b: f64) -> Deviation {
        match *self {
            Plane::X3(c) => Deviation::new(a, b, c),
            Plane::X2(c) => Deviation::new(a, c, b),
        }
    }

    /// Free coordinates of a deviation.
    pub fn project(&self, d: &Deviation) -> [f64; 2] {
        match self {
            Plane::X3(_) => [d.x1, d.x2],
            Plane::X2(_) => [d.x1, d.x3],
        }
    }
}

impl Default for Plane {
    fn default() -> Self {
        Plane::X3(0.0)
    }
}

/// Rectangle in the free coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Window {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub level: f64,
    pub plane: Plane,
    /// Ordered vertices; a closed loop repeats its first vertex at the end.
    pub polylines: Vec<Vec<[f64; 2]>>,
    /// Set for level 0, where the set shrinks to the equilibrium.
    pub point_marker: Option<[f64; 2]>,
}

impl Contour {
    pub fn vertex_count(&self) -> usize {
        self.polylines.iter().map(Vec::len).sum()
    }
}

/// Whether the first and last vertices are within `tol` of each other.
pub fn is_closed(poly: &[[f64; 2]], tol: f64) -> bool {
    match (poly.first(), poly.last()) {
        (Some(a), Some(b)) if poly.len() > 2 => dist2(a, b) <= tol,
        _ => false,
    }
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]))
}

struct Grid {
    nx: usize,
    ny: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    vals: Vec<f64>,
}

impl Grid {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.vals[j * self.nx + i]
    }
}

fn evaluate_grid<L: IssLyapunov>(lyap: &L, plane: Plane, w: &Window, nx: usize, ny: usize) -> Result<Grid> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidParams(format!("resolution {nx}x{ny} is below 2x2")));
    }
    if !(w.x_min < w.x_max && w.y_min < w.y_max) || !(w.x_min.is_finite() && w.x_max.is_finite() && w.y_min.is_finite() && w.y_max.is_finite()) {
        return Err(Error::InvalidParams(format!("degenerate window {w:?}")));
    }
    let lin = |lo: f64, hi: f64, n: usize| -> Vec<f64> { (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect() };
    let xs = lin(w.x_min, w.x_max, nx);
    let ys = lin(w.y_min, w.y_max, ny);
    let mut vals = Vec::with_capacity(nx * ny);
    for &y in &ys {
        for &x in &xs {
            let v = lyap.value_extended(&plane.deviation(x, y));
            if v.is_nan() {
                return Err(Error::Domain(format!("window {w:?} leaves the domain at ({x}, {y})")));
            }
            vals.push(v);
        }
    }
    Ok(Grid { nx, ny, xs, ys, vals })
}

/// Root of V - level on the segment a→b, given opposite signs at the ends.
fn polish<L: IssLyapunov>(lyap: &L, plane: Plane, a: [f64; 2], fa: f64, b: [f64; 2], fb: f64, level: f64) -> [f64; 2] {
    let g = |t: f64| lyap.value_extended(&plane.deviation(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))) - level;
    let (mut lo, mut hi, mut glo, mut ghi) = (0.0f64, 1.0f64, fa - level, fb - level);
    let tol = 1e-10 * (1.0 + abs(level));
    let mut side = 0i8;
    for _ in 0..200 {
        let t = if glo.is_finite() && ghi.is_finite() && ghi != glo {
            let t = lo - glo * (hi - lo) / (ghi - glo);
            if t > lo && t < hi {
                t
            } else {
                0.5 * (lo + hi)
            }
        } else {
            0.5 * (lo + hi)
        };
        let gt = g(t);
        if abs(gt) <= tol || hi - lo <= 1e-15 {
            lo = t;
            hi = t;
            break;
        }
        // Illinois weighting keeps regula falsi from stalling on one side.
        if (gt < 0.0) == (glo < 0.0) {
            lo = t;
            glo = gt;
            if side == -1 && ghi.is_finite() {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = t;
            ghi = gt;
            if side == 1 && glo.is_finite() {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    let t = 0.5 * (lo + hi);
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

fn contour_one<L: IssLyapunov>(lyap: &L, plane: Plane, grid: &Grid, level: f64) -> Vec<Vec<[f64; 2]>> {
    let (nx, ny) = (grid.nx, grid.ny);
    let inside = |v: f64| v < level;
    // Edge keys: horizontal (i,j)-(i+1,j) → 2(j nx + i), vertical (i,j)-(i,j+1) → 2(j nx + i) + 1.
    let hkey = |i: usize, j: usize| 2 * (j * nx + i);
    let vkey = |i: usize, j: usize| 2 * (j * nx + i) + 1;
    let mut points: BTreeMap<usize, [f64; 2]> = BTreeMap::new();
    let mut crossing = |key: usize| -> [f64; 2] {
        if let Some(p) = points.get(&key) {
            return *p;
        }
        let (i, j) = ((key / 2) % nx, (key / 2) / nx);
        let (i2, j2) = if key.is_multiple_of(2) { (i + 1, j) } else { (i, j + 1) };
        let a = [grid.xs[i], grid.ys[j]];
        let b = [grid.xs[i2], grid.ys[j2]];
        let p = polish(lyap, plane, a, grid.at(i, j), b, grid.at(i2, j2), level);
        points.insert(key, p);
        p
    };
    let mut segments: Vec<[usize; 2]> = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let c = [grid.at(i, j), grid.at(i + 1, j), grid.at(i + 1, j + 1), grid.at(i, j + 1)];
            let idx = (0..4).fold(0u8, |acc, k| acc | ((inside(c[k]) as u8) << k));
            if idx == 0 || idx == 15 {
                continue;
            }
            let e = [hkey(i, j), vkey(i + 1, j), hkey(i, j + 1), vkey(i, j)];
            let crossed = |k: usize| inside(c[k]) != inside(c[(k + 1) % 4]);
            match idx {
                5 | 10 => {
                    let (cx, cy) = (0.5 * (grid.xs[i] + grid.xs[i + 1]), 0.5 * (grid.ys[j] + grid.ys[j + 1]));
                    let centre_in = inside(lyap.value_extended(&plane.deviation(cx, cy)));
                    // Corners cut off: the pair not joined through the centre.
                    let cut_c0_c2 = (idx == 5) != centre_in;
                    if cut_c0_c2 {
                        segments.push([e[3], e[0]]);
                        segments.push([e[1], e[2]]);
                    } else {
                        segments.push([e[0], e[1]]);
                        segments.push([e[2], e[3]]);
                    }
                }
                _ => {
                    let ks: Vec<usize> = (0..4).filter(|&k| crossed(k)).collect();
                    segments.push([e[ks[0]], e[ks[1]]]);
                }
            }
        }
    }
    // Stitch segments sharing edge crossings.
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (s, seg) in segments.iter().enumerate() {
        for &k in seg {
            adj.entry(k).or_default().push(s);
        }
    }
    let mut used = vec![false; segments.len()];
    let mut chains: Vec<Vec<usize>> = Vec::new();
    let walk = |start_seg: usize, start_key: usize, used: &mut Vec<bool>| -> Vec<usize> {
        let mut keys = vec![start_key];
        let (mut seg, mut key) = (start_seg, start_key);
        loop {
            used[seg] = true;
            let next = if segments[seg][0] == key { segments[seg][1] } else { segments[seg][0] };
            keys.push(next);
            key = next;
            match adj[&key].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => break,
            }
        }
        keys
    };
    let ends: Vec<(usize, usize)> = adj.iter().filter(|(_, v)| v.len() == 1).map(|(k, v)| (*k, v[0])).collect();
    for (k, s) in ends {
        if !used[s] {
            chains.push(walk(s, k, &mut used));
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            chains.push(walk(s, segments[s][0], &mut used));
        }
    }
    chains.into_iter().map(|keys| keys.into_iter().map(&mut crossing).collect()).collect()
}

/// Contours of `lyap` at every level on `plane` within `window`, using an
/// `nx × ny` node grid.
pub fn extract_contours<L: IssLyapunov>(
    lyap: &L,
    levels: &[f64],
    plane: Plane,
    window: Window,
    resolution: (usize, usize),
) -> Result<Vec<Contour>> {
    if let Some(l) = levels.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidParams(format!("level {l} must be finite and >= 0")));
    }
    let grid = evaluate_grid(lyap, plane, &window, resolution.0, resolution.1)?;
    let through_eq = match plane {
        Plane::X3(c) | Plane::X2(c) => c == 0.0,
    };
    Ok(levels
        .iter()
        .map(|&level| {
            if level == 0.0 {
                Contour {
                    level,
                    plane,
                    polylines: Vec::new(),
                    point_marker: if through_eq { Some([0.0, 0.0]) } else { None },
                }
            } else {
                Contour {
                    level,
                    plane,
                    polylines: contour_one(lyap, plane, &grid, level),
                    point_marker: None,
                }
            }
        })
        .collect())
}

/// Exact level set of the disease-free function on x̃₃ = c (c ≥ 0),
/// clipped to x̃₁ ≥ -x̂₁.
///
/// With L' = level - λ₃c and slope s of the B/C boundary the pieces are
/// x̃₁ + x̃₂ = L' (x̃₁ ≥ 0), x̃₂ = L' (-s·level ≤ x̃₁ ≤ 0) and
/// x̃₁ = -s·level (0 ≤ x̃₂ ≤ L').
pub fn analytic_contour_df(lyap: &DfLyapunov, level: f64, x3: f64) -> Result<Contour> {
    if !(level > 0.0) || !(x3 >= 0.0) {
        return Err(Error::InvalidParams(format!("need level > 0 and x3 >= 0, got {level}, {x3}")));
    }
    let plane = Plane::X3(x3);
    let lp = lyap.params();
    let lr = level - lp.lambda3 * x3;
    if lr < 0.0 {
        return Ok(Contour { level, plane, polylines: Vec::new(), point_marker: None });
    }
    // B/C boundary slope, recovered from the threshold at x̃₂ = 1.
    let s = -lyap.bc_threshold(&Deviation::new(0.0, 1.0, 0.0));
    let x1_min = -lyap.equilibrium().point.s;
    let corner = -s * level;
    let mut poly = vec![[lr, 0.0], [0.0, lr]];
    if corner >= x1_min {
        poly.push([corner, lr]);
        poly.push([corner, 0.0]);
    } else {
        poly.push([x1_min, lr]);
    }
    Ok(Contour { level, plane, polylines: vec![poly], point_marker: None })
}

fn point_segment_distance(p: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    dist2(p, &[a[0] + t * dx, a[1] + t * dy])
}

/// Distance from a point to the nearest piece of a contour.
pub fn distance_to_contour(p: &[f64; 2], c: &Contour) -> f64 {
    let mut best = f64::INFINITY;
    for poly in &c.polylines {
        for w in poly.windows(2) {
            best = best.min(point_segment_distance(p, &w[0], &w[1]));
        }
        if poly.len() == 1 {
            best = best.min(dist2(p, &poly[0]));
        }
    }
    best
}

/// |V(v) - level| ≤ 1e-3·(1 + level) at every vertex; margin is the
/// normalized slack.
pub fn check_vertex_residuals<L: IssLyapunov>(lyap: &L, contours: &[Contour]) -> CheckResult {
    let mut tr = MarginTracker::new("contour_vertex_residual", 0.0);
    for c in contours {
        for poly in &c.polylines {
            for v in poly {
                let d = c.plane.deviation(v[0], v[1]);
                let r = abs(lyap.value_extended(&d) - c.level) / (1.0 + c.level);
                tr.observe(TOL_CONTOUR - r, Location::Deviation(d));
            }
        }
    }
    tr.finish()
}

fn orient(a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_cross(a: &[f64; 2], b: &[f64; 2], c: &[f64; 2], d: &[f64; 2]) -> bool {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

type Buckets = BTreeMap<(i64, i64), Vec<([f64; 2], [f64; 2])>>;

fn bucket(c: &Contour, cell: f64) -> Buckets {
    let mut out: Buckets = BTreeMap::new();
    for poly in &c.polylines {
        for w in poly.windows(2) {
            let (a, b) = (w[0], w[1]);
            let i0 = floor(a[0].min(b[0]) / cell) as i64;
            let i1 = floor(a[0].max(b[0]) / cell) as i64;
            let j0 = floor(a[1].min(b[1]) / cell) as i64;
            let j1 = floor(a[1].max(b[1]) / cell) as i64;
            for i in i0..=i1 {
                for j in j0..=j1 {
                    out.entry((i, j)).or_default().push((a, b));
                }
            }
        }
    }
    out
}

/// Whether any segment of `a` properly crosses a segment of `b`; `cell` is
/// the bucket size of the spatial hash.
pub fn contours_cross(a: &Contour, b: &Contour, cell: f64) -> bool {
    let ba = bucket(a, cell);
    let bb = bucket(b, cell);
    ba.iter().any(|(k, sa)| {
        bb.get(k)
            .is_some_and(|sb| sa.iter().any(|(p, q)| sb.iter().any(|(r, s)| segments_cross(p, q, r, s))))
    })
}

/// Even-odd point-in-polygon test against a closed polyline.
pub fn point_in_loop(p: &[f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    for w in poly.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Closed-loop and nesting checks for contours sorted by increasing level:
/// every polyline closes within `cell`, no two levels cross, and each
/// loop lies inside every loop of the next higher level.
pub fn check_nested_loops(contours: &[Contour], cell: f64) -> [CheckResult; 2] {
    let mut closed = MarginTracker::new("contours_closed", 0.0);
    let mut nested = MarginTracker::new("contours_nested", 0.0);
    for c in contours {
        for poly in &c.polylines {
            let gap = match (poly.first(), poly.last()) {
                (Some(a), Some(b)) if poly.len() > 2 => dist2(a, b),
                _ => f64::INFINITY,
            };
            closed.observe(cell - gap, Location::Level(c.level));
        }
        if c.polylines.is_empty() && c.point_marker.is_none() {
            closed.observe(-1.0, Location::Level(c.level));
        }
    }
    for w in contours.windows(2) {
        let (lo, hi) = (&w[0], &w[1]);
        let crosses = contours_cross(lo, hi, 4.0 * cell);
        let contained = lo.polylines.iter().all(|pl| {
            pl.first().is_some_and(|p| hi.polylines.iter().any(|ph| point_in_loop(p, ph)))
        });
        nested.observe(if !crosses && contained { 0.0 } else { -1.0 }, Location::Level(lo.level));
    }
    [closed.finish(), nested.finish()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyap_df::DfOverrides;
    use crate::lyap_en::{lambda3_bound, EnLyapParams, EnLyapunov};
    use crate::model::ModelParams;

    fn df() -> DfLyapunov {
        DfLyapunov::select(ModelParams::new(0.0002, 0.032, 0.015, 3.0).unwrap(), DfOverrides::default()).unwrap()
    }

    fn en() -> EnLyapunov {
        let p = ModelParams::new(0.0002, 0.032, 0.015, 17.0).unwrap();
        let mut lp = EnLyapParams {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda_hat2: 0.01,
            k: 0.0902,
            lambda3: 0.0,
            l_bar: 340.0,
            delta: 0.5,
        };
        lp.lambda3 = 0.5 * lambda3_bound(&p, &lp).unwrap();
        EnLyapunov::new(p, lp).unwrap()
    }

    #[test]
    fn df_contours_follow_oracle() {
        let v = df();
        let x1h = v.equilibrium().point.s;
        let w = Window::new(-x1h, 600.0, 0.0, 600.0);
        let n = 200;
        let cs = extract_contours(&v, &[10.0, 100.0, 340.0], Plane::X3(0.0), w, (n, n)).unwrap();
        let cell = (600.0 + x1h) / (n - 1) as f64;
        assert!(check_vertex_residuals(&v, &cs).passed);
        for c in &cs {
            let oracle = analytic_contour_df(&v, c.level, 0.0).unwrap();
            assert!(!c.polylines.is_empty());
            for poly in &c.polylines {
                for p in poly {
                    assert!(distance_to_contour(p, &oracle) <= 2.0 * cell, "level {} vertex {p:?}", c.level);
                }
            }
        }
    }

    #[test]
    fn level_zero_is_a_point() {
        let v = df();
        let cs = extract_contours(&v, &[0.0], Plane::X3(0.0), Window::new(-10.0, 10.0, 0.0, 10.0), (5, 5)).unwrap();
        assert!(cs[0].polylines.is_empty());
        assert_eq!(cs[0].point_marker, Some([0.0, 0.0]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let v = df();
        let w = Window::new(-10.0, 10.0, -5.0, 10.0);
        assert!(matches!(extract_contours(&v, &[1.0], Plane::X3(0.0), w, (10, 10)), Err(Error::Domain(_))));
        let w = Window::new(-10.0, 10.0, 0.0, 10.0);
        assert!(extract_contours(&v, &[1.0], Plane::X3(0.0), w, (1, 10)).is_err());
        assert!(extract_contours(&v, &[-1.0], Plane::X3(0.0), w, (10, 10)).is_err());
        let e = en();
        let w = Window::new(-100.0, 100.0, -300.0, 100.0);
        assert!(matches!(extract_contours(&e, &[1.0], Plane::X3(0.0), w, (10, 10)), Err(Error::Domain(_))));
    }

    #[test]
    fn endemic_loops_closed_and_nested() {
        let e = en();
        let w = Window::new(-235.0, 350.0, -170.0, 375.0);
        let n = 300;
        let cs = extract_contours(&e, &[20.0, 100.0, 180.0, 260.0, 340.0], Plane::X3(0.0), w, (n, n)).unwrap();
        let cell = 585.0 / (n - 1) as f64;
        assert!(check_vertex_residuals(&e, &cs).passed);
        for c in &cs {
            assert_eq!(c.polylines.len(), 1, "level {}", c.level);
        }
        let [closed, nested] = check_nested_loops(&cs, cell);
        assert!(closed.passed, "{closed:?}");
        assert!(nested.passed, "{nested:?}");
    }

    #[test]
    fn analytic_df_shape() {
        let v = df();
        let c = analytic_contour_df(&v, 10.0, 0.0).unwrap();
        let poly = &c.polylines[0];
        assert_eq!(poly[0], [10.0, 0.0]);
        assert_eq!(poly[1], [0.0, 10.0]);
        let s = -v.bc_threshold(&Deviation::new(0.0, 1.0, 0.0));
        assert_eq!(poly[2], [-s * 10.0, 10.0]);
        // every oracle vertex is on the level set
        for p in poly {
            assert!((v.value(&Deviation::new(p[0], p[1], 0.0)).unwrap() - 10.0).abs() < 1e-9);
        }
        assert!(analytic_contour_df(&v, 0.0, 0.0).is_err());
    }

    #[test]
    fn crossing_and_containment_primitives() {
        let sq = |r: f64| vec![[-r, -r], [r, -r], [r, r], [-r, r], [-r, -r]];
        let mk = |level: f64, r: f64| Contour { level, plane: Plane::X3(0.0), polylines: vec![sq(r)], point_marker: None };
        assert!(!contours_cross(&mk(1.0, 1.0), &mk(2.0, 2.0), 0.5));
        let tilted = Contour {
            level: 2.0,
            plane: Plane::X3(0.0),
            polylines: vec![vec![[-3.0, 0.0], [3.0, 0.5]]],
            point_marker: None,
        };
        assert!(contours_cross(&mk(1.0, 1.0), &tilted, 0.5));
        assert!(point_in_loop(&[0.0, 0.0], &sq(1.0)));
        assert!(!point_in_loop(&[2.0, 0.0], &sq(1.0)));
    }
}
