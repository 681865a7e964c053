use graspopt::goalsel::{
    entropy, exp_update, ftc_update, ftl_from_costs, md_update, normalize_costs, select_goal, GoalSet, Selector,
    SelectorKind,
};
use graspopt::chain::Configuration;
use proptest::prelude::*;

fn simplex(weights: &[f64]) -> Vec<f64> {
    let s: f64 = weights.iter().sum();
    weights.iter().map(|w| w / s).collect()
}

fn on_simplex(p: &[f64]) -> bool {
    p.iter().all(|x| *x >= 0.0 && x.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12
}

fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (2usize..40).prop_flat_map(|k| {
        (
            prop::collection::vec(0.01f64..1.0, k),
            prop::collection::vec(-1.0f64..1.0, k),
            0.0f64..20.0,
        )
    })
}

proptest! {
    #[test]
    fn multiplicative_updates_stay_on_the_simplex((w, c, eta) in arb_case()) {
        let p = simplex(&w);
        let e = exp_update(&p, &c, eta).unwrap();
        let m = md_update(&p, &c, eta).unwrap();
        prop_assert!(on_simplex(&e));
        prop_assert!(on_simplex(&m));
        for (a, b) in e.iter().zip(&m) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cheaper_goals_gain_relative_mass((w, c, eta) in arb_case()) {
        let p = simplex(&w);
        let e = exp_update(&p, &c, eta).unwrap();
        for i in 0..p.len() {
            for j in 0..p.len() {
                if c[i] < c[j] {
                    prop_assert!(e[i] / p[i] >= e[j] / p[j] * (1.0 - 1e-12));
                }
            }
        }
    }

    #[test]
    fn leaders_are_point_masses_on_the_minimum(c in prop::collection::vec(-1.0f64..1.0, 2..30)) {
        let best = c.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let p = ftc_update(&c).unwrap();
        prop_assert_eq!(select_goal(&p).unwrap(), best);
        prop_assert_eq!(entropy(&p), 0.0);
        let f = ftl_from_costs(&[c.clone(), c.clone()]).unwrap();
        prop_assert_eq!(f, p);
    }

    #[test]
    fn normalized_costs_have_unit_norm(raw in prop::collection::vec(0.0f64..10.0, 1..30)) {
        let c = normalize_costs(&raw).unwrap();
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn infeasible_goals_never_receive_mass() {
    let goals = GoalSet::new(
        (0..5).map(|i| Configuration::from_element(2, i as f64)).collect(),
        vec![true, false, true, true, false],
    )
    .unwrap();
    for kind in SelectorKind::ALL {
        let mut sel = Selector::new(kind, &goals, 0, 50).unwrap();
        for t in 0..50 {
            let raw: Vec<f64> = (0..5)
                .map(|g| if goals.is_feasible(g) { ((t * 7 + g * 3) % 5) as f64 + 0.5 } else { f64::INFINITY })
                .collect();
            let p = sel.observe(normalize_costs(&raw).unwrap()).unwrap().to_vec();
            assert!(on_simplex(&p), "{kind}: {p:?}");
            assert_eq!(p[1], 0.0);
            assert_eq!(p[4], 0.0);
            assert!(goals.is_feasible(sel.mode().unwrap()));
        }
    }
}

#[test]
fn single_feasible_goal_is_always_selected() {
    let goals = GoalSet::new(vec![Configuration::zeros(3), Configuration::from_element(3, 1.0)], vec![false, true]).unwrap();
    for kind in SelectorKind::ALL {
        let mut sel = Selector::new(kind, &goals, 1, 10).unwrap();
        for _ in 0..10 {
            sel.observe(vec![f64::INFINITY, 1.0]).unwrap();
            assert_eq!(sel.mode().unwrap(), 1, "{kind}");
        }
    }
}
