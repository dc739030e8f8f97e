//! Uniform unclamped cubic B-splines in (x, y, z, yaw).
//!
//! Knots are fixed at `{−3, −2, …, H−1, H}` so the spline is defined on the
//! progress interval `[0, H−3)`; segment `i = ⌊s⌋` is driven by control
//! points `i..i+4` (0-based). Time derivatives follow from the constant time
//! regulation `m = ds/dt`: `dᵏx/dtᵏ = mᵏ · dᵏx/dsᵏ`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, DenseSpd};

/// One control point / sample: (x, y, z, yaw).
pub type Point4 = [f64; 4];

/// Cubic B-spline basis in monomial form: rows are powers of the local
/// parameter, columns the four segment control points.
pub const BSPLINE_BASIS: [[f64; 4]; 4] = [
    [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0, 0.0],
    [-3.0 / 6.0, 0.0, 3.0 / 6.0, 0.0],
    [3.0 / 6.0, -6.0 / 6.0, 3.0 / 6.0, 0.0],
    [-1.0 / 6.0, 3.0 / 6.0, -3.0 / 6.0, 1.0 / 6.0],
];

/// Degree-3 MINVO basis on `t ∈ [0, 1]` in the same layout as
/// [`BSPLINE_BASIS`]: entry `[p][i]` is the `tᵖ` coefficient of basis
/// polynomial `i`.
pub const MINVO3_BASIS: [[f64; 4]; 4] = [
    [0.914_371_499_774_914_9, 0.0, 0.085_628_500_225_085_12, 0.0],
    [-4.462_288_750_704_529_7, 5.252_359_669_068_461_3, -1.598_156_064_077_418, 0.808_085_145_713_486_6],
    [6.989_548_147_780_139, -11.845_989_901_556_747, 8.191_786_296_565_704, -3.335_344_542_789_096],
    [-3.441_630_896_856_411_8, 6.679_258_732_707_484, -6.679_258_732_707_484, 3.441_630_896_856_411_8],
];

/// Uniform quadratic B-spline basis (velocity of a cubic segment, acting on
/// first differences of the control points).
const BSPLINE2_BASIS: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [-1.0, 1.0, 0.0], [0.5, -1.0, 0.5]];

/// Degree-2 MINVO basis on `[0, 1]`, same layout.
fn minvo2_basis() -> [[f64; 3]; 3] {
    let r3 = libm::sqrt(3.0);
    [[(2.0 + r3) / 4.0, 0.0, (2.0 - r3) / 4.0], [-(3.0 + r3) / 2.0, 3.0, -(3.0 - r3) / 2.0], [1.5, -3.0, 1.5]]
}

/// Progress offset keeping samples inside the half-open domain.
pub const PROGRESS_EPSILON: f64 = 1e-9;

/// Which control polygon bounds a segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HullBasis {
    BSpline,
    #[default]
    Minvo,
}

impl core::str::FromStr for HullBasis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bspline" => Ok(Self::BSpline),
            "minvo" => Ok(Self::Minvo),
            other => Err(Error::Parameter(format!("unknown hull basis `{other}`"))),
        }
    }
}

impl core::fmt::Display for HullBasis {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::BSpline => "bspline",
            Self::Minvo => "minvo",
        })
    }
}

/// Basis weights of the four segment control points at local parameter
/// `s_local`, differentiated `order` times with respect to progress.
pub fn basis_row(s_local: f64, order: usize) -> Result<[f64; 4]> {
    if !(0.0..1.0).contains(&s_local) {
        return Err(Error::Domain { value: s_local, domain: String::from("[0, 1)") });
    }
    if order > 3 {
        return Err(Error::Parameter(format!("derivative order {order} > 3")));
    }
    Ok(basis_row_unchecked(s_local, order))
}

#[inline]
fn basis_row_unchecked(t: f64, order: usize) -> [f64; 4] {
    let powers = match order {
        0 => [1.0, t, t * t, t * t * t],
        1 => [0.0, 1.0, 2.0 * t, 3.0 * t * t],
        2 => [0.0, 0.0, 2.0, 6.0 * t],
        _ => [0.0, 0.0, 0.0, 6.0],
    };
    let mut out = [0.0; 4];
    for (p, &pw) in powers.iter().enumerate() {
        if pw != 0.0 {
            for (c, o) in out.iter_mut().enumerate() {
                *o += pw * BSPLINE_BASIS[p][c];
            }
        }
    }
    out
}

/// Segment index and local parameter for progress `s` on a spline with
/// `segments` segments.
fn locate(s: f64, segments: usize) -> (usize, f64) {
    let i = (libm::floor(s) as usize).min(segments - 1);
    (i, s - i as f64)
}

/// Control points plus the constant time regulation `m = ds/dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySpline {
    pub control_points: Vec<Point4>,
    pub time_regulation: f64,
}

impl TrajectorySpline {
    pub fn new(control_points: Vec<Point4>, time_regulation: f64) -> Result<Self> {
        if control_points.len() < 4 {
            return Err(Error::Parameter(format!("{} control points, need >= 4", control_points.len())));
        }
        if !(time_regulation > 0.0) || !time_regulation.is_finite() {
            return Err(Error::Parameter(format!("time regulation {time_regulation} must be > 0")));
        }
        Ok(Self { control_points, time_regulation })
    }

    pub fn segments(&self) -> usize {
        self.control_points.len() - 3
    }

    /// Upper end (exclusive) of the progress domain.
    pub fn progress_end(&self) -> f64 {
        self.segments() as f64
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.progress_end() / self.time_regulation
    }

    /// Value or derivative at progress `s`; time derivatives when `in_time`.
    pub fn evaluate(&self, s: f64, order: usize, in_time: bool) -> Result<Point4> {
        let end = self.progress_end();
        if !(0.0..end).contains(&s) {
            return Err(Error::Domain { value: s, domain: format!("[0, {end})") });
        }
        if order > 3 {
            return Err(Error::Parameter(format!("derivative order {order} > 3")));
        }
        let (i, t) = locate(s, self.segments());
        let w = basis_row_unchecked(t, order);
        let mut out = combine(&self.control_points[i..i + 4], &w);
        if in_time {
            let f = libm::pow(self.time_regulation, order as f64);
            out.iter_mut().for_each(|v| *v *= f);
        }
        Ok(out)
    }

    /// Progress at which a time `t` (seconds) is reached.
    pub fn progress_at_time(&self, t: f64) -> f64 {
        (t * self.time_regulation).min(self.progress_end() - PROGRESS_EPSILON).max(0.0)
    }
}

#[inline]
fn combine(points: &[Point4], weights: &[f64]) -> Point4 {
    let mut out = [0.0; 4];
    for (p, &w) in points.iter().zip(weights) {
        for d in 0..4 {
            out[d] += w * p[d];
        }
    }
    out
}

/// Control points of the `order`-th progress derivative spline: repeated
/// first differences.
pub fn derivative_control_points(q: &[Point4], order: usize) -> Result<Vec<Point4>> {
    if q.len() < 4 {
        return Err(Error::Parameter(format!("{} control points, need >= 4", q.len())));
    }
    if !(1..=3).contains(&order) {
        return Err(Error::Parameter(format!("derivative order {order} not in 1..=3")));
    }
    let mut cur: Vec<Point4> = q.to_vec();
    for _ in 0..order {
        cur = cur
            .windows(2)
            .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2], w[1][3] - w[0][3]])
            .collect();
    }
    Ok(cur)
}

/// Weights mapping a cubic segment's four control points to the vertices of
/// a hull of its `order`-th derivative (order 0 = the curve itself).
///
/// Row `r` of the result gives hull vertex `r` as a combination of the four
/// segment control points. Order 0 yields 4 vertices, order 1 yields 3 and
/// order 2 yields 2.
pub fn hull_weights(order: usize, basis: HullBasis) -> Result<Vec<[f64; 4]>> {
    match (order, basis) {
        (0, HullBasis::BSpline) => Ok((0..4)
            .map(|r| {
                let mut w = [0.0; 4];
                w[r] = 1.0;
                w
            })
            .collect()),
        (0, HullBasis::Minvo) => {
            let inv =
                linalg::invert4(&MINVO3_BASIS).ok_or_else(|| Error::Parameter(String::from("singular MINVO basis")))?;
            Ok((0..4)
                .map(|r| {
                    let mut w = [0.0; 4];
                    for (c, wc) in w.iter_mut().enumerate() {
                        *wc = (0..4).map(|k| inv[r][k] * BSPLINE_BASIS[k][c]).sum();
                    }
                    w
                })
                .collect())
        }
        (1, basis) => {
            let diff = [[-1.0, 1.0, 0.0, 0.0], [0.0, -1.0, 1.0, 0.0], [0.0, 0.0, -1.0, 1.0]];
            let mix: [[f64; 3]; 3] = match basis {
                HullBasis::BSpline => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                HullBasis::Minvo => {
                    let inv = invert3(&minvo2_basis())
                        .ok_or_else(|| Error::Parameter(String::from("singular MINVO basis")))?;
                    let mut m = [[0.0; 3]; 3];
                    for r in 0..3 {
                        for c in 0..3 {
                            m[r][c] = (0..3).map(|k| inv[r][k] * BSPLINE2_BASIS[k][c]).sum();
                        }
                    }
                    m
                }
            };
            Ok((0..3)
                .map(|r| {
                    let mut w = [0.0; 4];
                    for (c, wc) in w.iter_mut().enumerate() {
                        *wc = (0..3).map(|k| mix[r][k] * diff[k][c]).sum();
                    }
                    w
                })
                .collect())
        }
        // The acceleration of a cubic segment is linear; both bases reduce to
        // its endpoint values.
        (2, _) => Ok(vec![[1.0, -2.0, 1.0, 0.0], [0.0, 1.0, -2.0, 1.0]]),
        _ => Err(Error::Parameter(format!("no hull for derivative order {order}"))),
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let d = linalg::det(m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            inv[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / d;
        }
    }
    Some(inv)
}

/// Hull vertices bounding segment `segment` of the spline with control points
/// `q`: the segment's own control points for the B-spline basis, or the
/// MINVO control points of the same cubic.
pub fn segment_hull(q: &[Point4], segment: usize, basis: HullBasis) -> Result<[Point4; 4]> {
    let pts = derivative_hull(q, 0, segment, basis)?;
    Ok([pts[0], pts[1], pts[2], pts[3]])
}

/// Hull vertices (in progress units) of the `order`-th derivative of one
/// segment.
pub fn derivative_hull(q: &[Point4], order: usize, segment: usize, basis: HullBasis) -> Result<Vec<Point4>> {
    if q.len() < 4 || segment + 4 > q.len() {
        return Err(Error::Parameter(format!("segment {segment} out of range for {} control points", q.len())));
    }
    let w = hull_weights(order, basis)?;
    Ok(w.iter().map(|row| combine(&q[segment..segment + 4], row)).collect())
}

/// One sparse row of a discretization matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisRow {
    /// Column of the first nonzero (segment index).
    pub first: usize,
    pub weights: [f64; 4],
}

/// Sampling of a spline at `K` equally spaced progress values, with the
/// sparse basis matrices for derivative orders 0..=3.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizationPlan {
    pub control_count: usize,
    pub progress: Vec<f64>,
    rows: [Vec<BasisRow>; 4],
}

/// Sample progress values `k·(H−3−ε)/(K−1)`.
pub fn progress_values(h: usize, k: usize) -> Vec<f64> {
    let end = (h - 3) as f64 - PROGRESS_EPSILON;
    (0..k).map(|i| i as f64 * end / (k - 1) as f64).collect()
}

/// Build the sampling matrices for `h` control points and `k` samples.
pub fn build_discretization(h: usize, k: usize) -> Result<DiscretizationPlan> {
    if h < 4 || k < 2 {
        return Err(Error::Parameter(format!("need H >= 4 and K >= 2, got H={h} K={k}")));
    }
    let progress = progress_values(h, k);
    let rows = core::array::from_fn(|order| {
        progress
            .iter()
            .map(|&s| {
                let (i, t) = locate(s, h - 3);
                BasisRow { first: i, weights: basis_row_unchecked(t, order) }
            })
            .collect()
    });
    Ok(DiscretizationPlan { control_count: h, progress, rows })
}

impl DiscretizationPlan {
    pub fn samples(&self) -> usize {
        self.progress.len()
    }

    pub fn rows(&self, order: usize) -> &[BasisRow] {
        &self.rows[order]
    }

    /// `Φ_order · Q` (progress derivatives).
    pub fn apply(&self, order: usize, q: &[Point4]) -> Vec<Point4> {
        debug_assert_eq!(q.len(), self.control_count);
        self.rows[order].iter().map(|r| combine(&q[r.first..r.first + 4], &r.weights)).collect()
    }

    /// `Φ_orderᵀ · G`, accumulating per-sample gradients onto control points.
    pub fn apply_transpose(&self, order: usize, g: &[Point4]) -> Vec<Point4> {
        let mut out = vec![[0.0; 4]; self.control_count];
        self.accumulate_transpose(order, g, &mut out);
        out
    }

    pub fn accumulate_transpose(&self, order: usize, g: &[Point4], out: &mut [Point4]) {
        for (r, gk) in self.rows[order].iter().zip(g) {
            for (c, &w) in r.weights.iter().enumerate() {
                let dst = &mut out[r.first + c];
                for d in 0..4 {
                    dst[d] += w * gk[d];
                }
            }
        }
    }

    /// Dense copy of a basis matrix, `K × H`.
    pub fn dense(&self, order: usize) -> Vec<Vec<f64>> {
        self.rows[order]
            .iter()
            .map(|r| {
                let mut row = vec![0.0; self.control_count];
                row[r.first..r.first + 4].copy_from_slice(&r.weights);
                row
            })
            .collect()
    }
}

/// Spline fitted to waypoints, with its fit residual.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineFit {
    pub spline: TrajectorySpline,
    /// Largest Euclidean residual over the waypoints (all four components).
    pub max_residual: f64,
    /// Progress value assigned to each waypoint.
    pub progress: Vec<f64>,
}

/// Regularization weight on second differences of the control points.
pub const FIT_REGULARIZATION: f64 = 1e-10;

/// Least-squares fit of `h` control points to waypoints at given progress
/// values (each in `[0, h−3)`). Time regulation of the result is 1.
pub fn fit_spline_with_progress(waypoints: &[Point4], progress: &[f64], h: usize) -> Result<SplineFit> {
    if waypoints.len() < 2 || waypoints.len() != progress.len() {
        return Err(Error::Parameter(format!("{} waypoints with {} progress values", waypoints.len(), progress.len())));
    }
    if h < 4 {
        return Err(Error::Parameter(format!("H = {h} < 4")));
    }
    let segs = h - 3;
    let mut ata = vec![0.0; h * h];
    let mut atb = vec![[0.0; 4]; h];
    for (w, &s) in waypoints.iter().zip(progress) {
        if !(0.0..segs as f64).contains(&s) {
            return Err(Error::Domain { value: s, domain: format!("[0, {segs})") });
        }
        let (i, t) = locate(s, segs);
        let row = basis_row_unchecked(t, 0);
        for a in 0..4 {
            for b in 0..4 {
                ata[(i + a) * h + i + b] += row[a] * row[b];
            }
            for d in 0..4 {
                atb[i + a][d] += row[a] * w[d];
            }
        }
    }
    // second-difference regularizer: affine control polygons are unpenalized
    for i in 0..h - 2 {
        let c = [1.0, -2.0, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                ata[(i + a) * h + i + b] += FIT_REGULARIZATION * c[a] * c[b];
            }
        }
    }
    let chol = DenseSpd::factor(&ata, h)
        .ok_or_else(|| Error::Parameter(String::from("degenerate fit: waypoints share one progress value")))?;
    let mut q = vec![[0.0; 4]; h];
    for d in 0..4 {
        let rhs: Vec<f64> = atb.iter().map(|r| r[d]).collect();
        let col = chol.solve(&rhs);
        for (qi, v) in q.iter_mut().zip(col) {
            qi[d] = v;
        }
    }
    let spline = TrajectorySpline::new(q, 1.0)?;
    let mut max_residual: f64 = 0.0;
    for (w, &s) in waypoints.iter().zip(progress) {
        let x = spline.evaluate(s, 0, false)?;
        let r: f64 = (0..4).map(|d| (x[d] - w[d]) * (x[d] - w[d])).sum();
        max_residual = max_residual.max(libm::sqrt(r));
    }
    Ok(SplineFit { spline, max_residual, progress: progress.to_vec() })
}

/// Fit with progress assigned by normalized positional arc length (uniform
/// spacing when the path has no length).
pub fn fit_spline_to_path(waypoints: &[Point4], h: usize) -> Result<SplineFit> {
    if waypoints.len() < 2 {
        return Err(Error::Parameter(format!("{} waypoints, need >= 2", waypoints.len())));
    }
    if h < 4 {
        return Err(Error::Parameter(format!("H = {h} < 4")));
    }
    let mut cum = vec![0.0; waypoints.len()];
    for k in 1..waypoints.len() {
        let (a, b) = (waypoints[k - 1], waypoints[k]);
        let d = libm::sqrt((0..3).map(|i| (b[i] - a[i]) * (b[i] - a[i])).sum::<f64>());
        cum[k] = cum[k - 1] + d;
    }
    let total = cum[cum.len() - 1];
    let end = (h - 3) as f64 - PROGRESS_EPSILON;
    let n = waypoints.len();
    let progress: Vec<f64> = if total > 1e-12 {
        cum.iter().map(|c| c / total * end).collect()
    } else {
        (0..n).map(|k| k as f64 / (n - 1) as f64 * end).collect()
    };
    fit_spline_with_progress(waypoints, &progress, h)
}

/// Unwrap a sequence of angles in place so consecutive entries differ by at
/// most π.
pub fn unwrap_angles(angles: &mut [f64]) {
    let two_pi = 2.0 * core::f64::consts::PI;
    for k in 1..angles.len() {
        let prev = angles[k - 1];
        let mut d = angles[k] - prev;
        d -= two_pi * libm::round(d / two_pi);
        angles[k] = prev + d;
    }
}
