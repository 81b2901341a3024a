use dualq_core::descent::{certify_step, descent_step_direct, descent_step_fw, DescentConfig};
use dualq_core::harness::{run_scenario, trajectory_table, Format, ScenarioConfig, ScenarioId};
use dualq_core::hull::decompose;
use dualq_core::problem::{ActionSet, Constraints, ConvexProblem, GroundSet, ScalarFn};
use dualq_core::queue::{
    delayed_multiplier_view, queue_distance_bound, running_average_step, skorokhod_closed_form, skorokhod_recursion,
    MultiplierState,
};
use dualq_core::solver::{solve, ArrivalModel, SolverPreset};
use dualq_core::tracker::Tracker;
use proptest::prelude::*;

fn lattice(v: f64) -> f64 {
    (v * 1024.0).round() / 1024.0
}

fn queue_problem(b: [f64; 2]) -> ConvexProblem {
    ConvexProblem::new(
        ScalarFn::new(|z| z[0] * z[0] + 2.0 * z[1] * z[1]).with_gradient(|z| vec![2.0 * z[0], 4.0 * z[1]]),
        Constraints::linear(vec![vec![-1.0, 0.0], vec![0.0, -1.0]], vec![-b[0], -b[1]]),
        GroundSet::new_box(vec![0.0; 2], vec![3.0; 2]).unwrap(),
    )
    .unwrap()
    .with_actions(ActionSet::integer_grid(2, 0, 3).unwrap())
    .unwrap()
}

proptest! {
    #[test]
    fn skorokhod_forms_agree(l1 in 0.0..4.0f64, xs in prop::collection::vec(-1.0..1.0f64, 0..200)) {
        let xs: Vec<f64> = xs.into_iter().map(lattice).collect();
        let l1 = lattice(l1);
        prop_assert_eq!(skorokhod_recursion(l1, &xs), skorokhod_closed_form(l1, &xs));
    }

    #[test]
    fn queues_stay_close_to_each_other(
        start in 0.0..3.0f64,
        pairs in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..150),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let d = queue_distance_bound(&x, &y, start).unwrap();
        prop_assert!(d.holds(1e-12));
    }

    #[test]
    fn tracker_drift_invariants(hi in 1i64..4, zs in prop::collection::vec(0.0..1.0f64, 1..400)) {
        let d = ActionSet::integer_grid(1, 0, hi).unwrap();
        let mut t = Tracker::new(d);
        for z in zs {
            t.track(&[z * hi as f64]).unwrap();
            let s = t.drift();
            prop_assert!(s.iter().sum::<f64>().abs() <= 1e-9);
            prop_assert!(s.iter().all(|v| *v >= -t.floor() - 1e-12));
            prop_assert!(t.max_deviation() <= t.deviation_bound() + 1e-9);
        }
    }

    #[test]
    fn hull_weights_reconstruct_the_point(a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let pts = ActionSet::integer_grid(2, 0, 1).unwrap();
        let w = decompose(pts.points(), &[a, b]).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(w.iter().all(|v| *v >= -1e-12));
        let rec: Vec<f64> = (0..2).map(|i| pts.iter().zip(&w).map(|(p, wj)| p[i] * wj).sum()).collect();
        prop_assert!((rec[0] - a).abs() <= 1e-9 && (rec[1] - b).abs() <= 1e-9);
    }

    #[test]
    fn running_average_is_convex_combination(
        beta in 0.01..1.0f64,
        z in prop::collection::vec(0.0..1.0f64, 3),
        x in prop::collection::vec(0.0..1.0f64, 3),
    ) {
        let next = running_average_step(&z, &x, beta).unwrap();
        for i in 0..3 {
            let lo = z[i].min(x[i]) - 1e-12;
            let hi = z[i].max(x[i]) + 1e-12;
            prop_assert!(next[i] >= lo && next[i] <= hi);
            prop_assert!((next[i] - ((1.0 - beta) * z[i] + beta * x[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn delayed_view_within_alpha_gbar_tau(
        tau_bar in 1usize..10,
        alpha in 0.01..0.5f64,
        gs in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 2), 1..120),
        delays in prop::collection::vec(prop::collection::vec(0usize..10, 2), 120),
    ) {
        let mut st = MultiplierState::new(2, alpha).unwrap().with_delay_bound(tau_bar);
        for (g, d) in gs.iter().zip(&delays) {
            st.step(g).unwrap();
            let d: Vec<usize> = d.iter().map(|v| v % (tau_bar + 1)).collect();
            let mu = delayed_multiplier_view(&st, &d, tau_bar).unwrap();
            for (l, m) in st.lambda().iter().zip(&mu) {
                prop_assert!((l - m).abs() <= alpha * tau_bar as f64 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn multipliers_are_nonnegative_and_clipped(
        clip in 1.0..5.0f64,
        gs in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 3), 1..100),
    ) {
        let mut st = MultiplierState::new(3, 0.3).unwrap().with_clip(clip);
        for g in gs {
            st.step(&g).unwrap();
            prop_assert!(st.lambda().iter().all(|v| *v >= 0.0 && *v <= clip));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn descent_steps_meet_certificate(
        q in prop::collection::vec(0.1..2.0f64, 2),
        c in prop::collection::vec(-1.0..3.0f64, 2),
        z in prop::collection::vec(0.0..2.0f64, 2),
        eps_prime in 0.05..1.0f64,
        gamma in 0.2..0.8f64,
        block in 0usize..3,
    ) {
        let d = ActionSet::integer_grid(2, 0, 2).unwrap();
        let (q2, c2) = (q.clone(), c.clone());
        let f = move |z: &[f64]| -> f64 { (0..2).map(|i| q2[i] * (z[i] - c2[i]).powi(2)).sum() };
        let mu_f = q.iter().copied().fold(0.0, f64::max);
        let cfg = DescentConfig::at_cap(eps_prime, gamma, 1, mu_f, d.diameter()).unwrap();
        let u: Vec<usize> = match block { 0 => vec![0], 1 => vec![1], _ => vec![0, 1] };
        let grad: Vec<f64> = (0..2).map(|i| 2.0 * q[i] * (z[i] - c[i])).collect();
        let direct = descent_step_direct(&f, &z, &u, &d, cfg.beta);
        let fw = descent_step_fw(&grad, &z, &u, &d, cfg.beta);
        prop_assert!(certify_step(&f, &z, &u, &d, &cfg, &direct).holds(1e-12));
        prop_assert!(certify_step(&f, &z, &u, &d, &cfg, &fw).holds(1e-12));
    }

    #[test]
    fn stolyar_form_picks_same_actions(b0 in 0.1..2.5f64, b1 in 0.1..2.5f64, seed in 0u64..1000) {
        let p = queue_problem([b0, b1]);
        let base = SolverPreset::max_weight(0.05, 0.1).with_arrivals(ArrivalModel::Dither).with_seed(seed);
        let a = solve(&p, &base, 200, None).unwrap();
        let s = solve(&p, &base.clone().with_stolyar_form(true), 200, None).unwrap();
        prop_assert_eq!(a.action_indices, s.action_indices);
    }

    #[test]
    fn exact_dual_multiplier_approaches_optimum(alpha in 0.02..0.2f64) {
        let p = dualq_core::harness::toy_problem();
        let tr = solve(&p, &SolverPreset::exact_dual(alpha), 2000, None).unwrap();
        let start = (tr.steps[0].lambda[0] - 2.0).abs();
        let end = (tr.last().unwrap().lambda[0] - 2.0).abs();
        prop_assert!(end <= start.max(alpha * 2.0) + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn emission_is_deterministic_per_seed(seed in 0u64..50) {
        let mut cfg = ScenarioConfig::builtin(ScenarioId::Link);
        cfg.scenario.steps = Some(200);
        let a = run_scenario(&cfg, seed).unwrap();
        let b = run_scenario(&cfg, seed).unwrap();
        let ta = trajectory_table(a.trajectory.as_ref().unwrap(), 2, 2);
        let tb = trajectory_table(b.trajectory.as_ref().unwrap(), 2, 2);
        prop_assert_eq!(ta.render(Format::Csv), tb.render(Format::Csv));
        prop_assert_eq!(ta.render(Format::Jsonlines), tb.render(Format::Jsonlines));
    }
}
