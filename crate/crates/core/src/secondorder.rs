//! Inhomogeneous K-function and minimum-contrast fitting of Thomas
//! parameters.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::criteria::{Pcf, SecondOrderSpec};
use crate::geometry::{CovariateField, PointPattern};
use crate::simulate::{intensity_at, thomas_k, LogLinearModel, ThomasParams};
use crate::{Error, Result};

/// Upper end of the contrast range used by [`two_step_fit`].
pub const DEFAULT_R_MAX: f64 = 25.0;
/// Exponent of the contrast used by [`two_step_fit`].
pub const DEFAULT_EXPONENT: f64 = 0.25;
/// Number of distances in [`default_r_grid`].
pub const R_GRID_LEN: usize = 128;

const LOG_KAPPA_BOUNDS: (f64, f64) = (-12.0, 2.0);
const LOG_SIGMA_BOUNDS: (f64, f64) = (-3.0, 4.0);
const COARSE: usize = 15;
const RESTARTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeCorrection {
    Translation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KEstimate {
    pub r: Vec<f64>,
    pub k: Vec<f64>,
    pub correction: EdgeCorrection,
    /// Fitted intensity at each data point.
    pub intensity_used: Vec<f64>,
}

impl KEstimate {
    /// Writes `r,k_hat` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "k_hat"])?;
        for (r, k) in self.r.iter().zip(&self.k) {
            w.write_record([r.to_string(), k.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `R_GRID_LEN` equispaced distances on `[0, r_max]`.
pub fn default_r_grid(r_max: f64) -> Vec<f64> {
    (0..R_GRID_LEN)
        .map(|i| r_max * i as f64 / (R_GRID_LEN - 1) as f64)
        .collect()
}

/// `K̂(r) = Σ_{u≠v} 1(‖u−v‖ ≤ r) / (ρ(u) ρ(v) |W ∩ (W + v − u)|)` over ordered
/// pairs, with `ρ` from `model` and `field`.
pub fn k_inhom(
    pattern: &PointPattern,
    model: &LogLinearModel,
    field: &CovariateField,
    r_grid: &[f64],
) -> Result<KEstimate> {
    if pattern.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "K-function needs at least 2 points, got {}",
            pattern.len()
        )));
    }
    if r_grid.is_empty()
        || !(r_grid[0] >= 0.0)
        || r_grid.windows(2).any(|w| !(w[1] > w[0]))
        || !r_grid[r_grid.len() - 1].is_finite()
    {
        return Err(Error::InvalidArgument(
            "distance grid must be non-negative, finite and increasing".into(),
        ));
    }
    let window = pattern.window();
    let rho = pattern
        .points()
        .iter()
        .map(|&[x, y]| {
            let r = intensity_at(model, field, x, y)?;
            if r > 0.0 && r.is_finite() {
                Ok(r)
            } else {
                Err(Error::NonFinite(format!("intensity {r} at ({x}, {y})")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;

    let r_max = r_grid[r_grid.len() - 1];
    let mut order: Vec<usize> = (0..pattern.len()).collect();
    let pts = pattern.points();
    order.sort_by(|&a, &b| pts[a][0].total_cmp(&pts[b][0]));
    let mut jumps = vec![0.0; r_grid.len()];
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            let hx = pts[j][0] - pts[i][0];
            if hx > r_max {
                break;
            }
            let hy = pts[j][1] - pts[i][1];
            let d = hx.hypot(hy);
            if d > r_max {
                continue;
            }
            let overlap = window.overlap_area(hx, hy);
            if !(overlap > 0.0) {
                continue;
            }
            // Both orders of the pair.
            let c = 2.0 / (rho[i] * rho[j] * overlap);
            let bin = r_grid.partition_point(|&r| r < d);
            jumps[bin] += c;
        }
    }
    let mut acc = 0.0;
    let k = jumps
        .iter()
        .map(|j| {
            acc += j;
            acc
        })
        .collect();
    Ok(KEstimate {
        r: r_grid.to_vec(),
        k,
        correction: EdgeCorrection::Translation,
        intensity_used: rho,
    })
}

fn check_contrast_args(k_est: &KEstimate, r_min: f64, r_max: f64, b: f64) -> Result<()> {
    if !(r_max > r_min && r_min >= 0.0) || !(b > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "contrast needs 0 <= r_min < r_max and b > 0, got ({r_min}, {r_max}, {b})"
        )));
    }
    if k_est.r.len() != k_est.k.len() {
        return Err(Error::InvalidArgument("K estimate has mismatched lengths".into()));
    }
    let inside = k_est.r.iter().filter(|r| **r >= r_min && **r <= r_max).count();
    if inside < 2 {
        return Err(Error::InvalidArgument(
            "fewer than two distances fall inside the contrast range".into(),
        ));
    }
    Ok(())
}

/// `∫_{r_min}^{r_max} (K(r; κ, σ)^b − K̂(r)^b)² dr` by the trapezoid rule on
/// the distances of `k_est` inside the range.
pub fn contrast(k_est: &KEstimate, r_min: f64, r_max: f64, b: f64, params: &ThomasParams) -> f64 {
    let mut total = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (&r, &kh) in k_est.r.iter().zip(&k_est.k) {
        if r < r_min || r > r_max {
            continue;
        }
        let diff = thomas_k(params, r).powf(b) - kh.max(0.0).powf(b);
        let f = diff * diff;
        if let Some((r0, f0)) = prev {
            total += 0.5 * (r - r0) * (f + f0);
        }
        prev = Some((r, f));
    }
    total
}

struct Box2 {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Box2 {
    fn project(&self, x: [f64; 2]) -> [f64; 2] {
        [x[0].clamp(self.lo[0], self.hi[0]), x[1].clamp(self.lo[1], self.hi[1])]
    }
}

fn params_of(x: [f64; 2]) -> ThomasParams {
    ThomasParams {
        kappa: x[0].exp(),
        sigma: x[1].exp(),
    }
}

/// Central differences, one-sided at the box faces.
fn fd_gradient(f: &dyn Fn([f64; 2]) -> f64, x: [f64; 2], fx: f64, bx: &Box2) -> [f64; 2] {
    let mut g = [0.0; 2];
    for i in 0..2 {
        let h = 1e-6 * (1.0 + x[i].abs());
        let (mut up, mut dn) = (x, x);
        up[i] = (x[i] + h).min(bx.hi[i]);
        dn[i] = (x[i] - h).max(bx.lo[i]);
        let (fu, fd) = (
            if up[i] == x[i] { fx } else { f(up) },
            if dn[i] == x[i] { fx } else { f(dn) },
        );
        g[i] = if up[i] > dn[i] { (fu - fd) / (up[i] - dn[i]) } else { 0.0 };
    }
    g
}

/// Projected BFGS with Armijo backtracking. Never returns a point worse
/// than `x0`.
fn local_minimize(f: &dyn Fn([f64; 2]) -> f64, x0: [f64; 2], bx: &Box2) -> ([f64; 2], f64) {
    let mut x = bx.project(x0);
    let mut fx = f(x);
    if !fx.is_finite() {
        return (x, fx);
    }
    let mut g = fd_gradient(f, x, fx, bx);
    let mut h = [[1.0, 0.0], [0.0, 1.0]];
    for _ in 0..500 {
        let mut free = [true; 2];
        for i in 0..2 {
            if (x[i] <= bx.lo[i] && g[i] > 0.0) || (x[i] >= bx.hi[i] && g[i] < 0.0) {
                free[i] = false;
            }
        }
        let gf = [if free[0] { g[0] } else { 0.0 }, if free[1] { g[1] } else { 0.0 }];
        if gf[0].abs().max(gf[1].abs()) < 1e-14 {
            break;
        }
        let mut d = [
            -(h[0][0] * gf[0] + h[0][1] * gf[1]),
            -(h[1][0] * gf[0] + h[1][1] * gf[1]),
        ];
        for i in 0..2 {
            if !free[i] {
                d[i] = 0.0;
            }
        }
        if d[0] * gf[0] + d[1] * gf[1] >= 0.0 {
            h = [[1.0, 0.0], [0.0, 1.0]];
            d = [-gf[0], -gf[1]];
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = bx.project([x[0] + t * d[0], x[1] + t * d[1]]);
            let fnew = f(xn);
            let decrease = g[0] * (xn[0] - x[0]) + g[1] * (xn[1] - x[1]);
            if fnew.is_finite() && fnew <= fx + 1e-4 * decrease && fnew < fx {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let gn = fd_gradient(f, xn, fnew, bx);
        let s = [xn[0] - x[0], xn[1] - x[1]];
        let y = [gn[0] - g[0], gn[1] - g[1]];
        let sy = s[0] * y[0] + s[1] * y[1];
        if sy > 1e-16 {
            // BFGS update of the inverse Hessian.
            let hy = [h[0][0] * y[0] + h[0][1] * y[1], h[1][0] * y[0] + h[1][1] * y[1]];
            let yhy = y[0] * hy[0] + y[1] * hy[1];
            for i in 0..2 {
                for j in 0..2 {
                    h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        let small = (fx - fnew) <= 1e-15 * fx.abs().max(1e-300) && s[0].abs().max(s[1].abs()) < 1e-12;
        x = xn;
        fx = fnew;
        g = gn;
        if small || fx == 0.0 {
            break;
        }
    }
    (x, fx)
}

/// Minimum-contrast estimate of `(κ, σ)`.
///
/// Searches `log κ ∈ [−12, 2]`, `log σ ∈ [−3, 4]`: a coarse grid picks five
/// starting points, each refined by projected BFGS with finite-difference
/// gradients. The best refined point is returned; it is never worse than
/// any starting point.
pub fn min_contrast_thomas(k_est: &KEstimate, r_min: f64, r_max: f64, b: f64) -> Result<ThomasParams> {
    check_contrast_args(k_est, r_min, r_max, b)?;
    let bx = Box2 {
        lo: [LOG_KAPPA_BOUNDS.0, LOG_SIGMA_BOUNDS.0],
        hi: [LOG_KAPPA_BOUNDS.1, LOG_SIGMA_BOUNDS.1],
    };
    let f = |x: [f64; 2]| contrast(k_est, r_min, r_max, b, &params_of(x));
    let mut coarse = Vec::with_capacity(COARSE * COARSE);
    for i in 0..COARSE {
        for j in 0..COARSE {
            let x = [
                bx.lo[0] + (bx.hi[0] - bx.lo[0]) * i as f64 / (COARSE - 1) as f64,
                bx.lo[1] + (bx.hi[1] - bx.lo[1]) * j as f64 / (COARSE - 1) as f64,
            ];
            let v = f(x);
            if v.is_finite() {
                coarse.push((v, x));
            }
        }
    }
    coarse.sort_by(|a, b| a.0.total_cmp(&b.0));
    let best = coarse
        .iter()
        .take(RESTARTS)
        .map(|&(_, x0)| local_minimize(&f, x0, &bx))
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1));
    match best {
        Some((x, _)) => Ok(params_of(x)),
        None => Err(Error::NonFinite("minimum contrast objective at every start".into())),
    }
}

/// First-step intensity, then `K̂` and minimum contrast on `[0, 25]` with
/// exponent 0.25; the result is the Thomas pair correlation for the
/// composite criteria.
pub fn two_step_fit(
    pattern: &PointPattern,
    field: &CovariateField,
    model: &LogLinearModel,
) -> Result<SecondOrderSpec> {
    let k = k_inhom(pattern, model, field, &default_r_grid(DEFAULT_R_MAX))?;
    let params = min_contrast_thomas(&k, 0.0, DEFAULT_R_MAX, DEFAULT_EXPONENT)?;
    Ok(SecondOrderSpec::with_pcf(Pcf::Thomas(params)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Grid, Window};

    fn flat_field(w: &Window) -> CovariateField {
        let grid = Grid::covering(w, 10, 10).unwrap();
        CovariateField::new(grid, vec![vec![0.0; 100]], vec!["z".into()]).unwrap()
    }

    #[test]
    fn two_points_give_one_jump() {
        let w = Window::new(0.0, 10.0, 0.0, 10.0).unwrap();
        let pat = PointPattern::new(vec![[2.0, 2.0], [5.0, 6.0]], w).unwrap();
        let model = LogLinearModel::new(0.0, vec![0.0]).unwrap();
        let r: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let k = k_inhom(&pat, &model, &flat_field(&w), &r).unwrap();
        let expect = 2.0 / ((10.0 - 3.0) * (10.0 - 4.0));
        for (ri, ki) in r.iter().zip(&k.k) {
            assert_eq!(*ki, if *ri >= 5.0 { expect } else { 0.0 }, "r = {ri}");
        }
        assert_eq!(k.k[0], 0.0);
    }

    #[test]
    fn too_few_points() {
        let w = Window::new(0.0, 10.0, 0.0, 10.0).unwrap();
        let pat = PointPattern::new(vec![[2.0, 2.0]], w).unwrap();
        let model = LogLinearModel::new(0.0, vec![0.0]).unwrap();
        assert!(k_inhom(&pat, &model, &flat_field(&w), &[0.0, 1.0]).is_err());
    }

    fn exact(params: &ThomasParams) -> KEstimate {
        let r = default_r_grid(25.0);
        KEstimate {
            k: r.iter().map(|&r| thomas_k(params, r)).collect(),
            r,
            correction: EdgeCorrection::Translation,
            intensity_used: vec![],
        }
    }

    #[test]
    fn zero_residual_recovery() {
        let truth = ThomasParams::new(4e-3, 1.5).unwrap();
        let fit = min_contrast_thomas(&exact(&truth), 0.0, 25.0, 0.25).unwrap();
        assert!((fit.kappa / truth.kappa - 1.0).abs() < 1e-3, "{fit:?}");
        assert!((fit.sigma / truth.sigma - 1.0).abs() < 1e-3, "{fit:?}");
    }

    #[test]
    fn poisson_like_k_pushes_kappa_up() {
        let r = default_r_grid(25.0);
        let k = KEstimate {
            k: r.iter().map(|r| std::f64::consts::PI * r * r).collect(),
            r,
            correction: EdgeCorrection::Translation,
            intensity_used: vec![],
        };
        let fit = min_contrast_thomas(&k, 0.0, 25.0, 0.25).unwrap();
        assert!(fit.kappa >= 2f64.exp() * (1.0 - 1e-9), "{fit:?}");
    }

    #[test]
    fn bad_contrast_arguments() {
        let k = exact(&ThomasParams::new(1e-2, 2.0).unwrap());
        assert!(min_contrast_thomas(&k, 5.0, 5.0, 0.25).is_err());
        assert!(min_contrast_thomas(&k, 0.0, 25.0, 0.0).is_err());
        assert!(min_contrast_thomas(&k, 30.0, 40.0, 0.25).is_err());
    }
}
