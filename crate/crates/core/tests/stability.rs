mod common;

use common::{poisson_data, small_field};
use ppselect::bench::{parse_config, run_grid, write_diagnostics_csv, write_metrics_csv, Selector};
use ppselect::likelihood::build_fit_data;
use ppselect::solver::{log_grid, PathConfig, PenaltyKind};
use ppselect::stability::{select_stable, stability_path, StabilityConfig};

fn config(seed: u64) -> StabilityConfig {
    StabilityConfig {
        k: 20,
        pilots: 5,
        seed,
        ..StabilityConfig::default()
    }
}

#[test]
fn stability_path_invariants() {
    let (_, quad) = small_field(31, 8);
    let (_, pattern, _) = poisson_data(&quad, &[1.2, 0.8], 400.0, 32);
    for kind in [PenaltyKind::L0, PenaltyKind::L1] {
        let path_cfg = PathConfig::new(kind, log_grid(5e2, 1e-4, 35).unwrap()).unwrap();
        let cfg = config(5);
        let path = stability_path(&pattern, &quad, kind, &cfg, &path_cfg).unwrap();
        assert_eq!(path.p(), 8);
        assert!(path.lambdas.windows(2).all(|w| w[1] < w[0]));
        assert!(path.counts.iter().flatten().all(|&c| c as usize <= cfg.k));
        assert_eq!(path.lambdas.len(), path.range.i_min - path.range.i_max + 1);
        if !path.range.target_unreachable {
            assert!(path.q_lambda <= cfg.q_target(8) + 1e-12, "{kind:?}: q = {}", path.q_lambda);
            assert!(path.pfer_bound() <= cfg.pfer_target + 1e-12);
        }
        let max_pi = path.max_pi();
        let support = path.stable_support();
        for j in 0..8 {
            assert_eq!(support.contains(&j), max_pi[j] >= cfg.pi_th - 1e-12);
        }
        assert_eq!(support, vec![0, 1], "{kind:?} selected {support:?}");

        let full = build_fit_data(&pattern, quad.clone(), 1.0).unwrap();
        let sel = select_stable(&path, &full).unwrap();
        assert_eq!(sel.coefficients.support(), sel.support);

        let tighter = path.restrict(0.5).unwrap();
        assert!(tighter.lambdas.len() <= path.lambdas.len());
        assert!(tighter.stable_support().iter().all(|j| support.contains(j)));
    }
}

#[test]
fn stability_path_is_reproducible() {
    let (_, quad) = small_field(41, 6);
    let (_, pattern, _) = poisson_data(&quad, &[1.0, 0.5], 300.0, 42);
    let path_cfg = PathConfig::new(PenaltyKind::L1, log_grid(5e2, 1e-4, 35).unwrap()).unwrap();
    let a = stability_path(&pattern, &quad, PenaltyKind::L1, &config(9), &path_cfg).unwrap();
    let b = stability_path(&pattern, &quad, PenaltyKind::L1, &config(9), &path_cfg).unwrap();
    assert_eq!(a, b);
    let c = stability_path(&pattern, &quad, PenaltyKind::L1, &config(10), &path_cfg).unwrap();
    assert_ne!(a.counts, c.counts);
}

const SMALL_BENCH: &str = r#"
scenario = "P1"
reps = 2
n_grid = [150]
c_grid = [0, 3]
p = 6
grid_size = [61, 31]
window = [0, 60, 0, 30]
smoothness = 6
seed = 3
selectors = ["bic", "eric", "stability"]

[stability]
k = 10
pilots = 4
"#;

#[test]
fn small_bench_is_byte_identical_and_complete() {
    let run = || {
        let cfg = &parse_config(SMALL_BENCH).unwrap()[0];
        let out = run_grid(cfg).unwrap();
        let (mut m, mut d) = (Vec::new(), Vec::new());
        write_metrics_csv(&mut m, &out.rows).unwrap();
        write_diagnostics_csv(&mut d, &out.diagnostics).unwrap();
        (out, m, d)
    };
    let (out, m1, d1) = run();
    let (_, m2, d2) = run();
    assert_eq!(m1, m2);
    assert_eq!(d1, d2);
    // 2 penalties × 3 selectors, for 2 cells plus the grand mean.
    assert_eq!(out.rows.len(), 6 * 3);
    assert_eq!(out.diagnostics.len(), 6 * 2 * 2);
    assert!(out.rows.iter().any(|r| r.selector == Selector::Stability && r.n.is_none()));
    for r in &out.rows {
        assert!((0.0..=1.0).contains(&r.report.f1));
    }
}
