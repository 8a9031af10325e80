//! Blocked quadrature sums `Σ_j v_j exp(η_j) · {1, z_jk, z_jk z_jl}`.
//!
//! This is the hot loop of every fit. Linear predictors are built from the
//! covariate columns of the active coefficients; the weighted covariate sums
//! read the compact single-precision rows one node at a time and accumulate
//! in double precision. Nodes are processed in blocks that
//! stay in L1; the exponential is a branch-free polynomial so the block
//! loops vectorize. On x86-64 with AVX2 the same body is compiled a second time
//! with wider vectors and selected at runtime. No fused multiply-adds are
//! used, so both paths produce bit-identical results.

use crate::geometry::QuadratureScheme;

const BLOCK: usize = 256;

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
const SHIFTER: f64 = 6_755_399_441_055_744.0; // 1.5 · 2^52

/// `exp(x)` accurate to a couple of ulps on the whole double range.
#[inline(always)]
pub(crate) fn exp_fast(x: f64) -> f64 {
    let xc = x.clamp(-708.0, 709.0);
    let t = xc * LOG2E + SHIFTER;
    let n = t - SHIFTER;
    let r = (xc - n * LN2_HI) - n * LN2_LO;
    // Taylor polynomial of degree 12; |r| <= ln(2)/2.
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let shift = t.to_bits().wrapping_sub(SHIFTER.to_bits()) << 52;
    let y = f64::from_bits(p.to_bits().wrapping_add(shift));
    let y = if x < -708.0 { 0.0 } else { y };
    let y = if x > 709.0 { f64::INFINITY } else { y };
    if x.is_nan() {
        f64::NAN
    } else {
        y
    }
}

#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `acc += Σ_j e_j · row_j`, alternating between two accumulators to
/// shorten the dependency chains.
#[inline(always)]
fn accumulate_rows(e: &[f64], rows: &[f32], stride: usize, acc0: &mut [f64], acc1: &mut [f64]) {
    let pairs = e.chunks_exact(2);
    let last = pairs.remainder();
    for (ep, rp) in pairs.zip(rows.chunks_exact(2 * stride)) {
        let (r0, r1) = rp.split_at(stride);
        let (e0, e1) = (ep[0], ep[1]);
        for ((a0, a1), (z0, z1)) in acc0.iter_mut().zip(acc1.iter_mut()).zip(r0.iter().zip(r1)) {
            *a0 += e0 * f64::from(*z0);
            *a1 += e1 * f64::from(*z1);
        }
    }
    if let [e0] = last {
        let r0 = &rows[rows.len() - stride..];
        for (a0, z0) in acc0.iter_mut().zip(r0) {
            *a0 += e0 * f64::from(*z0);
        }
    }
}

/// Quadrature moments of `v_j exp(η_j)`.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    /// `Σ v_j e^{η_j}`.
    pub total: f64,
    /// `Σ v_j e^{η_j} z_jk` for the requested first-order columns.
    pub first: Vec<f64>,
    /// Row-major `m × m` matrix `Σ v_j e^{η_j} z_jk z_jl` over the requested
    /// second-order columns.
    pub second: Vec<f64>,
}

pub(crate) struct Request<'a> {
    pub log_omega: f64,
    pub beta: &'a [f64],
    pub first: &'a [usize],
    pub second: &'a [usize],
}

#[inline(always)]
fn moments_body(quad: &QuadratureScheme, req: &Request<'_>) -> Moments {
    let n = quad.len();
    let (rows, stride) = quad.compact_rows();
    let cols = quad.covariates();
    let weights = quad.weights();
    let active: Vec<(usize, f64)> = req
        .beta
        .iter()
        .enumerate()
        .filter(|(_, b)| **b != 0.0)
        .map(|(k, b)| (k, *b))
        .collect();
    let m = req.second.len();
    let mut acc0 = vec![0.0; stride];
    let mut acc1 = vec![0.0; stride];
    let mut second = vec![0.0; m * m];
    let mut zbuf = vec![0.0; m * BLOCK];
    let mut ez = [0.0f64; BLOCK];
    let mut total = 0.0;
    let mut eta = [0.0f64; BLOCK];
    let ones = [1.0f64; BLOCK];

    let mut start = 0;
    while start < n {
        let len = BLOCK.min(n - start);
        let end = start + len;
        let block = &rows[start * stride..end * stride];
        let e = &mut eta[..len];
        e.fill(req.log_omega);
        for &(k, b) in &active {
            for (x, z) in e.iter_mut().zip(&cols[k][start..end]) {
                *x += b * z;
            }
        }
        for (x, v) in e.iter_mut().zip(&weights[start..end]) {
            *x = v * exp_fast(*x);
        }
        total += dot(e, &ones[..len]);
        if !req.first.is_empty() {
            accumulate_rows(e, block, stride, &mut acc0, &mut acc1);
        }
        if m > 0 {
            for (i, row) in block.chunks_exact(stride).enumerate() {
                for (a, &k) in req.second.iter().enumerate() {
                    zbuf[a * BLOCK + i] = f64::from(row[k]);
                }
            }
            for a in 0..m {
                let za = &zbuf[a * BLOCK..a * BLOCK + len];
                for ((o, x), z) in ez[..len].iter_mut().zip(e.iter()).zip(za) {
                    *o = x * z;
                }
                for b in a..m {
                    second[a * m + b] += dot(&ez[..len], &zbuf[b * BLOCK..b * BLOCK + len]);
                }
            }
        }
        start = end;
    }
    for i in 0..m {
        for j in 0..i {
            second[i * m + j] = second[j * m + i];
        }
    }
    Moments {
        total,
        first: req.first.iter().map(|&k| acc0[k] + acc1[k]).collect(),
        second,
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn moments_avx2(quad: &QuadratureScheme, req: &Request<'_>) -> Moments {
    moments_body(quad, req)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn moments_avx512(quad: &QuadratureScheme, req: &Request<'_>) -> Moments {
    moments_body(quad, req)
}

fn moments_generic(quad: &QuadratureScheme, req: &Request<'_>) -> Moments {
    moments_body(quad, req)
}

pub(crate) fn moments(quad: &QuadratureScheme, req: &Request<'_>) -> Moments {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU feature was detected at runtime.
            return unsafe { moments_avx512(quad, req) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the required CPU feature was detected at runtime.
            return unsafe { moments_avx2(quad, req) };
        }
    }
    moments_generic(quad, req)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_quadrature, synth_covariates, Grid, Window};

    #[test]
    fn exp_matches_std() {
        let mut worst = 0.0f64;
        let mut x = -700.0;
        while x < 700.0 {
            let rel = (exp_fast(x) - x.exp()).abs() / x.exp();
            worst = worst.max(rel);
            x += 0.0137;
        }
        assert!(worst < 1e-15, "worst relative error {worst}");
        assert_eq!(exp_fast(0.0), 1.0);
        assert_eq!(exp_fast(-1000.0), 0.0);
        assert_eq!(exp_fast(1000.0), f64::INFINITY);
        assert!(exp_fast(f64::NAN).is_nan());
    }

    #[test]
    fn moments_match_naive_sums() {
        let w = Window::new(0.0, 30.0, 0.0, 20.0).unwrap();
        let grid = Grid::covering(&w, 37, 23).unwrap();
        let f = synth_covariates(4, 3, &grid, 5.0).unwrap();
        let q = make_quadrature(&f, &w.erode(1.3).unwrap()).unwrap();
        let beta = [0.4, 0.0, -0.7];
        let req = Request {
            log_omega: -1.2,
            beta: &beta,
            first: &[0, 1, 2],
            second: &[2, 0],
        };
        let m = moments(&q, &req);
        let mut total = 0.0;
        let mut first = [0.0; 3];
        let mut s20 = 0.0;
        for j in 0..q.len() {
            let z: Vec<f64> = (0..3).map(|k| q.covariate(k)[j]).collect();
            let e = q.weights()[j] * (-1.2 + 0.4 * z[0] - 0.7 * z[2]).exp();
            total += e;
            for k in 0..3 {
                first[k] += e * z[k];
            }
            s20 += e * z[2] * z[0];
        }
        assert!((m.total - total).abs() < 1e-12 * total);
        for k in 0..3 {
            assert!((m.first[k] - first[k]).abs() < 1e-11 * total);
        }
        assert!((m.second[1] - s20).abs() < 1e-11 * total);
        assert_eq!(m.second[1], m.second[2]);
        assert_eq!(moments_generic(&q, &req).total, m.total);
    }
}
