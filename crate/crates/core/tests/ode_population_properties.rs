use meanfield::ode::restart_consistency;
use meanfield::population::{expect, wasserstein2};
use meanfield::{ControlPath, EmpiricalMeasure, Model, ModelSpec, PopulationSpec, Rk4, Sample, TimeGrid};
use proptest::prelude::*;

fn models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::tanh_bilinear(2, 0.3),
        ModelSpec::linear_scalar(),
        ModelSpec::constant_drive(2, 0.7),
    ]
}

fn measure(points: &[(f64, f64, f64)], state_dim: usize) -> EmpiricalMeasure {
    let joint: Vec<Vec<f64>> = points
        .iter()
        .map(|&(a, b, c)| if state_dim == 1 { vec![a, c] } else { vec![a, b, c] })
        .collect();
    EmpiricalMeasure::from_joint(&joint, state_dim).unwrap()
}

fn triple() -> impl Strategy<Value = (f64, f64, f64)> {
    (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn restart_at_any_node_is_bit_exact(
        which in 0usize..3,
        steps in 1usize..30,
        substeps in 1usize..3,
        split_frac in 0.0..=1.0f64,
        values in prop::collection::vec(-1.5..1.5f64, 4 * 30),
        x0 in prop::collection::vec(-1.0..1.0f64, 2),
    ) {
        let model = &models()[which];
        let m = model.dims().param;
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let ctrl = ControlPath::from_flat(grid, m, values[..steps * m].to_vec()).unwrap();
        let split = (split_frac * steps as f64).round() as usize;
        let rk = Rk4::new(substeps).unwrap();
        prop_assert_eq!(restart_consistency(model, rk, &x0[..model.dims().state], &ctrl, split).unwrap(), 0.0);
    }

    // Exact from the origin, where every rounding step is sign-symmetric.
    #[test]
    fn reversing_constant_drive_reverses_displacement(values in prop::collection::vec(-2.0..2.0f64, 1..40)) {
        let x0 = 0.0;
        let model = ModelSpec::constant_drive(1, 0.5);
        let grid = TimeGrid::new(1.0, values.len()).unwrap();
        let ctrl = ControlPath::from_flat(grid, 1, values.clone()).unwrap();
        let neg = ControlPath::from_flat(grid, 1, values.iter().map(|v| -v).collect()).unwrap();
        let fwd = Rk4::default().integrate_state(&model, &[x0], &ctrl).unwrap().terminal()[0] - x0;
        let back = Rk4::default().integrate_state(&model, &[x0], &neg).unwrap().terminal()[0] - x0;
        prop_assert_eq!(fwd, -back);
    }

    #[test]
    fn w2_is_a_symmetric_metric(
        pts in prop::collection::vec((triple(), triple(), triple()), 1..7),
        state_dim in 1usize..3,
    ) {
        let a = measure(&pts.iter().map(|p| p.0).collect::<Vec<_>>(), state_dim);
        let b = measure(&pts.iter().map(|p| p.1).collect::<Vec<_>>(), state_dim);
        let c = measure(&pts.iter().map(|p| p.2).collect::<Vec<_>>(), state_dim);
        let ab = wasserstein2(&a, &b).unwrap();
        prop_assert_eq!(ab, wasserstein2(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(wasserstein2(&a, &a).unwrap(), 0.0);
        let via = wasserstein2(&a, &c).unwrap() + wasserstein2(&c, &b).unwrap();
        prop_assert!(ab <= via + 1e-12, "{ab} > {via}");
    }

    #[test]
    fn w2_ignores_point_order(
        pts in prop::collection::vec((triple(), triple()), 1..7),
        shuffle in any::<prop::sample::Index>(),
    ) {
        let a: Vec<_> = pts.iter().map(|p| p.0).collect();
        let b: Vec<_> = pts.iter().map(|p| p.1).collect();
        let mut rotated = a.clone();
        rotated.rotate_left(shuffle.index(a.len()));
        let base = wasserstein2(&measure(&a, 2), &measure(&b, 2)).unwrap();
        prop_assert_eq!(base, wasserstein2(&measure(&rotated, 2), &measure(&b, 2)).unwrap());
    }

    #[test]
    fn expectation_ignores_atom_order(
        atoms in prop::collection::vec((triple(), 0.01..1.0f64), 1..8),
        shift in any::<prop::sample::Index>(),
    ) {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let build = |list: &[((f64, f64, f64), f64)]| {
            PopulationSpec::new(
                list.iter().map(|((a, b, c), _)| Sample::new(vec![*a, *b], vec![*c])).collect(),
                list.iter().map(|(_, w)| *w / total).collect(),
                10.0,
            )
            .unwrap()
        };
        let mut rotated = atoms.clone();
        rotated.rotate_left(shift.index(atoms.len()));
        let g = |s: &Sample| s.x[0].sin() * s.y[0] + s.x[1] * s.x[1];
        prop_assert_eq!(expect(&build(&atoms), g), expect(&build(&rotated), g));
    }
}
