use ppselect::metrics::{confusion_metrics, phi_s, MetricsReport, SelectionOutcome};
use proptest::prelude::*;

fn outcomes(p: usize, truth: Vec<bool>, rows: Vec<Vec<bool>>) -> Vec<SelectionOutcome> {
    rows.into_iter()
        .map(|mut s| {
            s.truncate(p);
            SelectionOutcome::new(s, truth.clone()).unwrap()
        })
        .collect()
}

fn selections() -> impl Strategy<Value = (usize, Vec<bool>, Vec<Vec<bool>>)> {
    (2usize..20).prop_flat_map(|p| {
        (
            Just(p),
            prop::collection::vec(any::<bool>(), p),
            prop::collection::vec(prop::collection::vec(any::<bool>(), p), 1..12),
        )
    })
}

proptest! {
    #[test]
    fn rates_lie_in_the_unit_interval((p, truth, rows) in selections()) {
        let o = outcomes(p, truth.clone(), rows);
        let c = confusion_metrics(&o).unwrap();
        for v in [c.tpr, c.fpr, c.ppv, c.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let noise = truth.iter().filter(|t| !**t).count() as f64;
        prop_assert!(c.empirical_pfer >= 0.0 && c.empirical_pfer <= noise);
        prop_assert!((c.fpr * noise - c.empirical_pfer).abs() <= 1e-12 || noise == 0.0);
        if let Some(phi) = phi_s(&o) {
            prop_assert!(phi <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn identical_selections_are_perfectly_stable((p, truth, rows) in selections(), copies in 2usize..6) {
        let row = rows[0].clone();
        let o = outcomes(p, truth, vec![row; copies]);
        if let Some(phi) = phi_s(&o) {
            prop_assert!((phi - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn selecting_the_truth_is_perfect((p, truth, _rows) in selections()) {
        let o = outcomes(p, truth.clone(), vec![truth.clone(); 3]);
        let r = MetricsReport::from_outcomes(&o).unwrap();
        prop_assert_eq!(r.fpr, 0.0);
        prop_assert_eq!(r.empirical_pfer, 0.0);
        prop_assert_eq!(r.tpr, 1.0);
        if truth.iter().any(|t| *t) {
            prop_assert_eq!(r.f1, 1.0);
        }
    }
}
