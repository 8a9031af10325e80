mod common;

use common::{eta_at, neg_loglik, poisson_data, small_field};
use ppselect::criteria::{
    bic, cbic, degrees_of_freedom, sensitivity, t2_matrix, CriterionKind, Pcf, SecondOrderSpec,
};
use ppselect::likelihood::{fit_on_support, loglik, score, FitData};
use ppselect::simulate::thomas_pcf;
use ppselect::{LogLinearModel, ThomasParams};
use proptest::prelude::*;

fn perturbed(model: &LogLinearModel, k: usize, h: f64) -> LogLinearModel {
    let mut theta = model.to_vector();
    theta[k] += h;
    LogLinearModel::from_vector(&theta)
}

/// Exhaustive `Σ_a Σ_b M_a M_bᵀ (g(‖c_a − c_b‖) − 1)` over blocks of
/// `coarsen²` cells with moments `M = Σ p v ρ [1, z_S]` at the block centers.
fn t2_oracle(fit: &FitData, model: &LogLinearModel, pcf: &Pcf, coarsen: usize) -> Vec<Vec<f64>> {
    let quad = fit.quad();
    let grid = quad.grid();
    let support = model.support();
    let d = support.len() + 1;
    let theta = model.to_vector();
    let mut blocks: std::collections::BTreeMap<(usize, usize), Vec<f64>> = Default::default();
    for (j, &cell) in quad.cells().iter().enumerate() {
        let (ix, iy) = (cell % grid.nx, cell / grid.nx);
        let w = fit.p_thin() * quad.weights()[j] * eta_at(quad, &theta, j).exp();
        let m = blocks.entry((ix / coarsen, iy / coarsen)).or_insert_with(|| vec![0.0; d]);
        m[0] += w;
        for (slot, &k) in m[1..].iter_mut().zip(&support) {
            *slot += w * quad.covariate(k)[j];
        }
    }
    let (sx, sy) = (coarsen as f64 * grid.dx, coarsen as f64 * grid.dy);
    let mut t2 = vec![vec![0.0; d]; d];
    for (&(ax, ay), ma) in &blocks {
        for (&(bx, by), mb) in &blocks {
            let r = ((ax as f64 - bx as f64) * sx).hypot((ay as f64 - by as f64) * sy);
            let g1 = pcf.eval(r) - 1.0;
            for k in 0..d {
                for l in 0..d {
                    t2[k][l] += g1 * ma[k] * mb[l];
                }
            }
        }
    }
    t2
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn loglik_matches_direct_sum(seed in 0u64..1000, shift in -1.0f64..1.0) {
        let (_, quad) = small_field(seed, 3);
        let (model, _, fit) = poisson_data(&quad, &[1.0, 0.5], 150.0, seed);
        let m = perturbed(&model, 2, shift);
        let direct = -neg_loglik(&fit, &m.to_vector());
        let got = loglik(&fit, &m).unwrap();
        prop_assert!((got - direct).abs() <= 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn score_matches_central_differences(seed in 0u64..1000, shift in -0.5f64..0.5) {
        let (_, quad) = small_field(seed, 3);
        let (model, _, fit) = poisson_data(&quad, &[1.0, 0.5], 150.0, seed + 1);
        let m = perturbed(&model, 1, shift);
        let s = score(&fit, &m).unwrap();
        let h = 1e-5;
        for (k, &sk) in s.iter().enumerate() {
            let fd = (loglik(&fit, &perturbed(&m, k, h)).unwrap()
                - loglik(&fit, &perturbed(&m, k, -h)).unwrap())
                / (2.0 * h);
            prop_assert!((fd - sk).abs() <= 1e-4 * sk.abs().max(1.0), "component {k}: {fd} vs {sk}");
        }
    }

    #[test]
    fn sensitivity_is_the_negative_hessian(seed in 0u64..1000) {
        let (_, quad) = small_field(seed, 4);
        let (_, _, fit) = poisson_data(&quad, &[1.0, 0.5], 200.0, seed + 2);
        let model = fit_on_support(&fit, &[0, 1, 3]).unwrap();
        let s = sensitivity(&fit, &model).unwrap();
        // Coordinates of [log ω, β_S] in the full parameter vector.
        let coords = [0usize, 1, 2, 4];
        prop_assert_eq!(s.shape(), (4, 4));
        let h = 1e-5;
        for (l, &cl) in coords.iter().enumerate() {
            let up = score(&fit, &perturbed(&model, cl, h)).unwrap();
            let down = score(&fit, &perturbed(&model, cl, -h)).unwrap();
            for (k, &ck) in coords.iter().enumerate() {
                let fd = -(up[ck] - down[ck]) / (2.0 * h);
                prop_assert!((fd - s[(k, l)]).abs() <= 1e-5 * s[(k, l)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn t2_matches_exhaustive_block_sum(
        seed in 0u64..1000,
        sigma in 0.5f64..3.0,
        kappa in 1e-3f64..5e-2,
        coarsen in 1usize..4,
    ) {
        let (_, quad) = small_field(seed, 3);
        let (_, _, fit) = poisson_data(&quad, &[1.0, 0.5], 150.0, seed + 3);
        let model = fit_on_support(&fit, &[0, 2]).unwrap();
        let pcf = Pcf::Thomas(ThomasParams::new(kappa, sigma).unwrap());
        let got = t2_matrix(&fit, &model, &SecondOrderSpec::new(pcf, coarsen).unwrap()).unwrap();
        let oracle = t2_oracle(&fit, &model, &pcf, coarsen);
        let scale = oracle[0][0].abs();
        for k in 0..3 {
            for l in 0..3 {
                prop_assert!((got[(k, l)] - oracle[k][l]).abs() <= 1e-9 * scale, "({k}, {l})");
            }
        }
    }

    #[test]
    fn clustering_adds_degrees_of_freedom(seed in 0u64..1000, sigma in 0.5f64..3.0) {
        let (_, quad) = small_field(seed, 3);
        let (_, _, fit) = poisson_data(&quad, &[1.0, 0.5], 150.0, seed + 4);
        let model = fit_on_support(&fit, &[0, 1]).unwrap();
        let thomas = SecondOrderSpec::with_pcf(Pcf::Thomas(ThomasParams::new(0.01, sigma).unwrap()));
        let df = degrees_of_freedom(&fit, &model, CriterionKind::CBic, Some(&thomas)).unwrap();
        prop_assert!(df >= 3.0);
        let plain = SecondOrderSpec::with_pcf(Pcf::Poisson);
        let c = cbic(&fit, &model, 1.0, &plain).unwrap();
        let b = bic(&fit, &model, 1.0).unwrap();
        prop_assert!((c.value - b.value).abs() <= 1e-9);
        prop_assert_eq!(c.df, 3.0);
    }
}

#[test]
fn thomas_pcf_tail_is_truncated_below_round_off() {
    let t = ThomasParams::new(4e-3, 1.5).unwrap();
    let range = 2.0 * t.sigma * (14.0 * std::f64::consts::LN_10).sqrt();
    let g0 = thomas_pcf(&t, 0.0) - 1.0;
    assert!((thomas_pcf(&t, range) - 1.0) <= 1e-14 * g0 * (1.0 + 1e-9));
}
