use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::CorrelationMap;
use crate::error::{Error, Result};

pub const FIT_MAX_ITERATIONS: usize = 200;
pub const FIT_REL_TOL: f64 = 1e-8;

const N_PARAMS: usize = 6;
const MIN_SIGMA: f64 = 0.3;
const MAX_DAMPING: f64 = 1e14;
// Widths are confined to [FLOOR_SIGMA, span of the grid]; beyond the span a
// Gaussian is indistinguishable from the offset and the width is unidentified.
const FLOOR_SIGMA: f64 = 1e-3;

type Vec6 = SVector<f64, N_PARAMS>;
type Mat6 = SMatrix<f64, N_PARAMS, N_PARAMS>;

/// A·exp(−(dx−μx)²/2σx² − (dy−μy)²/2σy²) + c fitted to a correlation map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub offset: f64,
    pub mse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// SSE after initialization and after every accepted step.
    pub sse_trace: Vec<f64>,
}

impl GaussianFit {
    /// Either width collapsed below one pixel.
    pub fn degenerate_width(&self) -> bool {
        self.sigma_x < 1.0 || self.sigma_y < 1.0
    }

    /// Model value at displacement (dx, dy).
    pub fn eval(&self, dx: f64, dy: f64) -> f64 {
        let ex = (dx - self.mu_x) / self.sigma_x;
        let ey = (dy - self.mu_y) / self.sigma_y;
        self.amplitude * (-0.5 * (ex * ex + ey * ey)).exp() + self.offset
    }
}

// p = [A, μx, μy, ln σx, ln σy, c]
fn residuals_and_jacobian(p: &Vec6, pts: &[(f64, f64, f64)], free_offset: bool, jac: Option<&mut Vec<Vec6>>) -> (Vec<f64>, f64) {
    let (a, mx, my) = (p[0], p[1], p[2]);
    let (sx, sy) = (p[3].exp(), p[4].exp());
    let c = p[5];
    let mut res = Vec::with_capacity(pts.len());
    let mut sse = 0.0;
    let mut rows = jac;
    if let Some(r) = rows.as_deref_mut() {
        r.clear();
    }
    for &(dx, dy, s) in pts {
        let ux = (dx - mx) / sx;
        let uy = (dy - my) / sy;
        let e = (-0.5 * (ux * ux + uy * uy)).exp();
        let r = s - (a * e + c);
        sse += r * r;
        res.push(r);
        if let Some(rows) = rows.as_deref_mut() {
            rows.push(Vec6::from([
                e,
                a * e * ux / sx,
                a * e * uy / sy,
                a * e * ux * ux,
                a * e * uy * uy,
                if free_offset { 1.0 } else { 0.0 },
            ]));
        }
    }
    (res, sse)
}

struct Outcome {
    p: Vec6,
    sse: f64,
    converged: bool,
    iterations: usize,
    trace: Vec<f64>,
}

#[derive(Clone, Copy)]
struct WidthBounds {
    lo: f64,
    hi_x: f64,
    hi_y: f64,
}

impl WidthBounds {
    fn new(pts: &[(f64, f64, f64)]) -> Self {
        let span = |f: fn(&(f64, f64, f64)) -> f64| {
            let (lo, hi) = pts.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            (hi - lo).max(1.0)
        };
        Self {
            lo: FLOOR_SIGMA.ln(),
            hi_x: span(|p| p.0).ln(),
            hi_y: span(|p| p.1).ln(),
        }
    }

    fn project(&self, mut p: Vec6) -> Vec6 {
        p[3] = p[3].clamp(self.lo, self.hi_x);
        p[4] = p[4].clamp(self.lo, self.hi_y);
        p
    }
}

fn levenberg_marquardt(p: Vec6, pts: &[(f64, f64, f64)], free_offset: bool, scale: f64) -> Outcome {
    let bounds = WidthBounds::new(pts);
    let mut p = bounds.project(p);
    let mut jac = Vec::with_capacity(pts.len());
    let (mut res, mut sse) = residuals_and_jacobian(&p, pts, free_offset, Some(&mut jac));
    let mut trace = vec![sse];
    let mut damping = 1e-3;
    let floor = 1e-28 * scale.max(f64::MIN_POSITIVE);
    let mut iterations = 0;
    let mut converged = sse <= floor;
    while !converged && iterations < FIT_MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Mat6::zeros();
        let mut jtr = Vec6::zeros();
        for (row, &r) in jac.iter().zip(&res) {
            jtj += row * row.transpose();
            jtr += row * r;
        }
        if !free_offset {
            jtj[(5, 5)] = 1.0;
        }
        let mut step = None;
        while damping <= MAX_DAMPING {
            let mut lhs = jtj;
            for k in 0..N_PARAMS {
                lhs[(k, k)] += damping * jtj[(k, k)].max(1e-12);
            }
            let Some(delta) = lhs.cholesky().map(|ch| ch.solve(&jtr)) else {
                damping *= 10.0;
                continue;
            };
            let cand = bounds.project(p + delta);
            let (cres, csse) = residuals_and_jacobian(&cand, pts, free_offset, None);
            if csse.is_finite() && csse <= sse {
                step = Some((cand, cres, csse));
                break;
            }
            damping *= 10.0;
        }
        let Some((cand, _, csse)) = step else {
            // No descent direction left at working precision.
            converged = true;
            break;
        };
        let rel = (sse - csse) / sse.max(f64::MIN_POSITIVE);
        p = cand;
        let (r, s) = residuals_and_jacobian(&p, pts, free_offset, Some(&mut jac));
        res = r;
        sse = s;
        trace.push(sse);
        damping = (damping / 10.0).max(1e-12);
        if rel < FIT_REL_TOL || sse <= floor {
            converged = true;
        }
    }
    Outcome {
        p,
        sse,
        converged,
        iterations,
        trace,
    }
}

fn initial_guess(pts: &[(f64, f64, f64)]) -> Vec6 {
    let (mut max, mut min) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut peak = (0.0, 0.0);
    for &(dx, dy, s) in pts {
        if s > max {
            max = s;
            peak = (dx, dy);
        }
        min = min.min(s);
    }
    let (mut w, mut mx, mut my) = (0.0, 0.0, 0.0);
    for &(dx, dy, s) in pts {
        let v = s - min;
        w += v;
        mx += v * dx;
        my += v * dy;
    }
    let (mut vx, mut vy) = (0.0, 0.0);
    if w > 0.0 {
        mx /= w;
        my /= w;
        for &(dx, dy, s) in pts {
            let v = s - min;
            vx += v * (dx - mx) * (dx - mx);
            vy += v * (dy - my) * (dy - my);
        }
        vx /= w;
        vy /= w;
    }
    let sx = vx.sqrt().max(MIN_SIGMA);
    let sy = vy.sqrt().max(MIN_SIGMA);
    Vec6::from([max - min, peak.0, peak.1, sx.ln(), sy.ln(), min])
}

/// Fit a 2D Gaussian plus constant offset to `points` of (dx, dy, value).
/// Widths are kept within the extent of the points. The offset is kept non-negative by refitting with it pinned at zero
/// whenever the free fit drives it negative.
pub fn fit_points(points: &[(f64, f64, f64)]) -> Result<GaussianFit> {
    if points.len() < N_PARAMS {
        return Err(Error::InsufficientData(format!(
            "{} bins for a {N_PARAMS}-parameter fit",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite())) {
        return Err(Error::Numerical("non-finite correlation value".into()));
    }
    if points.iter().all(|p| p.2 == 0.0) {
        return Err(Error::InsufficientData("correlation map is empty".into()));
    }
    let scale: f64 = points.iter().map(|p| p.2 * p.2).sum();
    let init = initial_guess(points);
    let mut out = levenberg_marquardt(init, points, true, scale);
    if out.p[5] < 0.0 {
        let mut pinned = init;
        pinned[5] = 0.0;
        out = levenberg_marquardt(pinned, points, false, scale);
    }
    let p = out.p;
    Ok(GaussianFit {
        amplitude: p[0],
        mu_x: p[1],
        mu_y: p[2],
        sigma_x: p[3].exp(),
        sigma_y: p[4].exp(),
        offset: p[5].max(0.0),
        mse: out.sse / points.len() as f64,
        converged: out.converged,
        iterations: out.iterations,
        sse_trace: out.trace,
    })
}

/// Least-squares Gaussian fit over every displacement bin of `map`.
pub fn fit_gaussian2d(map: &CorrelationMap) -> Result<GaussianFit> {
    let pts: Vec<(f64, f64, f64)> = map.bins().map(|(dx, dy, v)| (dx as f64, dy as f64, v as f64)).collect();
    fit_points(&pts)
}
