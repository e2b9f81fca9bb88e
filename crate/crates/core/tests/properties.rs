use std::sync::Arc;

use lfd_core::certify;
use lfd_core::demos::{record_expert, to_zv, DemonstrationSet};
use lfd_core::embed;
use lfd_core::geometry::{self, Triangulation};
use lfd_core::learner::{build_basis, simulate_chain, FeedbackMode, LearnedController};
use lfd_core::linalg;
use lfd_core::multi::MultiController;
use lfd_core::plant::{
    self, brunovsky_pair, expert_lqr, BallBeam, ChainPlant, FlatQuadrotor, LieOutput, Plant,
};
use lfd_core::sim::{self, SimOptions};
use lfd_core::systems::{self, Reference};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn vecf(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn state(n: usize, scale: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-scale..scale, n).prop_map(DVector::from_vec)
}

fn double_integrator_set(dt: f64) -> DemonstrationSet {
    let plant = ChainPlant::new(2).unwrap();
    let q = DMatrix::from_diagonal(&vecf(&[1.0, 2.0]));
    let expert = expert_lqr(&plant, &q, 1.0).unwrap();
    let raw = record_expert(&plant, &expert, &[vecf(&[1.0, 0.0]), vecf(&[0.0, 1.0])], 2.0, dt).unwrap();
    to_zv(&plant, &raw).unwrap()
}

/// Directional derivative of `phi` along the drift by central differences.
fn along_drift(plant: &dyn Plant, phi: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, eps: f64) -> f64 {
    let f = plant.drift(x);
    (phi(&(x + &f * eps)) - phi(&(x - &f * eps))) / (2.0 * eps)
}

fn along_input(plant: &dyn Plant, phi: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, eps: f64) -> f64 {
    let g = plant.input_field(x).column(0).into_owned();
    (phi(&(x + &g * eps)) - phi(&(x - &g * eps))) / (2.0 * eps)
}

fn check_lie_chain(plant: &dyn Plant, lie: &dyn LieOutput, x: &DVector<f64>) -> Result<(), TestCaseError> {
    let n = plant.state_dim();
    let eps = 1e-5;
    for k in 0..n {
        let scale = 1.0 + lie.lie_f(k + 1, x).abs();
        let fd = along_drift(plant, |y| lie.lie_f(k, y), x, eps);
        prop_assert!((fd - lie.lie_f(k + 1, x)).abs() < 1e-6 * scale, "L_f^{} h", k + 1);
        let fd = along_input(plant, |y| lie.lie_f(k, y), x, eps);
        prop_assert!((fd - lie.lie_g_lie_f(k, x)).abs() < 1e-6 * scale, "L_g L_f^{} h", k);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ball_beam_lie_derivatives_match_finite_differences(
        x in (-2.0..2.0f64, -2.0..2.0f64, -1.2..1.2f64, -2.0..2.0f64)
    ) {
        let plant = BallBeam::default();
        let x = vecf(&[x.0, x.1, x.2, x.3]);
        check_lie_chain(&plant, &plant, &x)?;
    }

    #[test]
    fn chain_lie_derivatives_match_finite_differences(x in state(4, 3.0), gain in 0.5..3.0f64) {
        let plant = ChainPlant::with_gain(4, gain).unwrap();
        check_lie_chain(&plant, &plant, &x)?;
    }

    #[test]
    fn normal_form_round_trip(x in state(9, 5.0), y in state(3, 5.0), gain in 0.5..3.0f64) {
        let quad = FlatQuadrotor;
        let z = plant::feedback_linearize(&quad, &x).unwrap();
        let back = quad.normal_form().unwrap().from_normal(&z).unwrap();
        prop_assert!((back - &x).norm() < 1e-9);

        let chain = ChainPlant::with_gain(3, gain).unwrap();
        let z = plant::feedback_linearize(&chain, &y).unwrap();
        let back = chain.normal_form().unwrap().from_normal(&z).unwrap();
        prop_assert!((back - &y).norm() < 1e-9);
    }

    #[test]
    fn linearizing_input_produces_the_requested_top_derivative(
        x in (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64), v in -3.0..3.0f64, gain in 0.5..3.0f64
    ) {
        let plant = ChainPlant::with_gain(3, gain).unwrap();
        let x = vecf(&[x.0, x.1, x.2]);
        let u = plant::linearizing_input(&plant, &x, &vecf(&[v])).unwrap();
        let v_back = plant::normal_input(&plant, &x, &u).unwrap();
        prop_assert!((v_back[0] - v).abs() < 1e-12);
    }

    #[test]
    fn rk4_matches_the_matrix_exponential(entries in prop::collection::vec(-1.0..1.0f64, 9), x0 in state(3, 1.0)) {
        let a = DMatrix::from_row_slice(3, 3, &entries);
        let traj = sim::integrate(|_, x: &DVector<f64>| &a * x, &x0, 0.0, 1.0, 1e-3).unwrap();
        let exact = a.clone().exp() * &x0;
        prop_assert!((traj.final_state() - exact).norm() < 1e-8);
    }

    #[test]
    fn unforced_chain_is_a_polynomial(z0 in state(4, 2.0)) {
        let pair = brunovsky_pair(4).unwrap();
        let traj = sim::integrate(|_, z: &DVector<f64>| pair.rhs(z, &vecf(&[0.0])), &z0, 0.0, 2.0, 0.01).unwrap();
        for (t, z) in traj.times.iter().zip(&traj.states) {
            let exact = z0[0] + z0[1] * t + z0[2] * t * t / 2.0 + z0[3] * t * t * t / 6.0;
            prop_assert!((z[0] - exact).abs() < 1e-12 * (1.0 + exact.abs()));
        }
    }
}

#[test]
fn expert_closed_loops_settle() {
    let cases: Vec<(Arc<dyn Plant>, plant::ExpertController, f64)> = vec![
        {
            let p: Arc<dyn Plant> = Arc::new(ChainPlant::new(2).unwrap());
            let e = expert_lqr(p.as_ref(), &DMatrix::identity(2, 2), 1.0).unwrap();
            (p, e, 20.0)
        },
        {
            let p: Arc<dyn Plant> = Arc::new(ChainPlant::new(3).unwrap());
            let e = expert_lqr(p.as_ref(), &DMatrix::identity(3, 3), 1.0).unwrap();
            (p, e, 30.0)
        },
        {
            let p = systems::flat_quad();
            let e = systems::quad_expert(p.as_ref()).unwrap();
            (p, e, 20.0)
        },
        {
            let p: Arc<dyn Plant> = Arc::new(BallBeam::default());
            let e = systems::ball_beam_expert(p.as_ref()).unwrap();
            (p, e, 60.0)
        },
    ];
    for (p, expert, horizon) in cases {
        let n = p.state_dim();
        let mut starts = systems::unit_initial_states(n);
        starts.extend(systems::unit_initial_states(n).into_iter().map(|x| -x));
        for x0 in starts {
            let traj = sim::simulate_closed_loop(
                p.as_ref(),
                |_, x| expert.input(p.as_ref(), x),
                &x0,
                horizon,
                &SimOptions { dt: 1e-2, hold: None },
            )
            .unwrap();
            // Running supremum of the tail, which is non-increasing by construction.
            let mut tail = 0.0f64;
            let mut envelope: Vec<f64> = traj
                .states
                .iter()
                .rev()
                .map(|x| {
                    tail = tail.max(x.norm());
                    tail
                })
                .collect();
            envelope.reverse();
            assert!(envelope[0] >= 1.0 - 1e-12);
            assert!(
                *envelope.last().unwrap() < 1e-3,
                "{} from {x0} ends at {}",
                p.name(),
                traj.final_state().norm()
            );
        }
    }
}

#[test]
fn demonstrations_follow_the_expert_and_the_chain() {
    let plant = ChainPlant::new(3).unwrap();
    let expert = expert_lqr(&plant, &DMatrix::identity(3, 3), 1.0).unwrap();
    let dt = 1e-2;
    let raw = record_expert(&plant, &expert, &systems::unit_initial_states(3), 2.0, dt).unwrap();
    let set = to_zv(&plant, &raw).unwrap();
    for (d, r) in set.demos.iter().zip(&raw.demos) {
        for k in 0..d.z.len() {
            // to_zv is the identity on the chain.
            assert_eq!(d.z[k], r.states[k]);
            assert_eq!(d.v[k], r.inputs[k]);
            assert!((expert.kappa(&d.z[k]) - &d.v[k]).norm() < 1e-6);
        }
        for k in 1..d.z.len() - 1 {
            let dz = (&d.z[k + 1] - &d.z[k - 1]) / (2.0 * dt);
            for i in 0..2 {
                assert!((dz[i] - d.z[k][i + 1]).abs() < 10.0 * dt * dt);
            }
            assert!((dz[2] - d.v[k][0]).abs() < 10.0 * dt * dt);
        }
    }
}

#[test]
fn coefficients_are_constant_within_each_interval() {
    let set = double_integrator_set(1e-3);
    let ctrl = LearnedController::from_set(&set, FeedbackMode::ClosedLoop).unwrap();
    let z0 = vecf(&[0.7, -0.4]);
    let traj = simulate_chain(&ctrl, &z0, 6.0, &SimOptions::default()).unwrap();
    for p in 0..3 {
        let start = traj.index_at(p as f64 * 2.0);
        let zeta0 = ctrl.basis.zeta(0.0, &traj.states[start]).unwrap();
        for k in (start..start + 2000).step_by(97) {
            let tau = traj.times[k] - p as f64 * 2.0;
            let zeta = ctrl.basis.zeta(tau, &traj.states[k]).unwrap();
            assert!((zeta - &zeta0).norm() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_is_preserved(t in 0.0..20.0f64) {
        let set = double_integrator_set(1e-2);
        let ctrl = LearnedController::from_set(&set, FeedbackMode::ClosedLoop).unwrap();
        let zero = DVector::zeros(2);
        prop_assert_eq!(ctrl.control_closed_loop(t, &zero).unwrap(), DVector::zeros(1));
        prop_assert_eq!(ctrl.control_open_loop(t, &zero).unwrap(), DVector::zeros(1));
    }

    #[test]
    fn empty_circumspheres(points in prop::collection::vec(state(2, 1.0), 3..10)) {
        let Ok(tri) = geometry::delaunay(&points) else { return Ok(()) };
        for s in &tri.simplices {
            for (i, p) in points.iter().enumerate() {
                if !s.vertex_indices.contains(&i) {
                    prop_assert!((p - &s.circumcenter).norm() >= s.circumradius - 1e-9);
                }
            }
        }
    }

    #[test]
    fn triangulations_reproduce_affine_functions(
        points in prop::collection::vec(state(3, 1.0), 4..9),
        coef in state(3, 2.0),
        offset in -2.0..2.0f64,
        weights in prop::collection::vec(0.01..1.0f64, 3),
    ) {
        let Ok(tri) = geometry::delaunay(&points) else { return Ok(()) };
        let values: Vec<DVector<f64>> = points.iter().map(|p| vecf(&[coef.dot(p) + offset])).collect();
        // A point inside the first simplex.
        let verts = tri.vertices(0);
        let total: f64 = weights.iter().sum::<f64>() + 0.5;
        let mut x = verts[3] * (0.5 / total);
        for (w, v) in weights.iter().zip(&verts) {
            x += *v * (w / total);
        }
        let y = geometry::pl_interpolate(&tri, &values, &x).unwrap();
        prop_assert!((y[0] - coef.dot(&x) - offset).abs() < 1e-12 * (1.0 + y[0].abs()) * 10.0);
    }

    #[test]
    fn hull_projection_satisfies_the_variational_inequality(
        points in prop::collection::vec(state(2, 1.0), 3..8),
        xi in state(2, 3.0),
    ) {
        let proj = geometry::project_to_hull(&points, &xi).unwrap();
        prop_assert!(proj.weights.iter().all(|w| *w >= -1e-10));
        prop_assert!((proj.weights.sum() - 1.0).abs() <= 1e-10);
        let r = &xi - &proj.point;
        for p in &points {
            prop_assert!(r.dot(&(p - &proj.point)) <= 1e-9);
        }
    }

    #[test]
    fn companion_hurwitz_matches_routh(w in prop::collection::vec(-3.0..6.0f64, 1..=4)) {
        prop_assume!(w.iter().all(|c| c.abs() > 1e-3));
        let a = linalg::companion(&w);
        prop_assert_eq!(linalg::is_hurwitz(&a).unwrap(), routh_hurwitz(&w));
    }

    #[test]
    fn figure_eight_levels_are_derivatives(f in 0.05..0.5f64, t in 0.0..20.0f64) {
        let r = systems::figure_eight(f).unwrap();
        let h = 1e-4;
        let (zp, _) = r.eval(t + h);
        let (zm, _) = r.eval(t - h);
        let (z, v) = r.eval(t);
        let dz = (zp - zm) / (2.0 * h);
        let scale = (4.0 * std::f64::consts::PI * f).powi(5);
        for i in 0..6 {
            prop_assert!((dz[i] - z[i + 3]).abs() < h * h * scale);
        }
        for i in 0..3 {
            prop_assert!((dz[6 + i] - v[i]).abs() < h * h * scale);
        }
    }
}

/// Routh array test for `s^k + w_k s^{k-1} + ... + w_1`.
fn routh_hurwitz(w: &[f64]) -> bool {
    let k = w.len();
    // Coefficients from the highest power down.
    let mut coeffs = vec![1.0];
    coeffs.extend(w.iter().rev());
    let mut rows: Vec<Vec<f64>> = vec![
        coeffs.iter().step_by(2).copied().collect(),
        coeffs.iter().skip(1).step_by(2).copied().collect(),
    ];
    let width = rows[0].len();
    rows[1].resize(width, 0.0);
    for i in 2..=k {
        let (a, b) = (&rows[i - 2], &rows[i - 1]);
        if b[0] == 0.0 {
            return false;
        }
        let mut next = vec![0.0; width];
        for j in 0..width - 1 {
            next[j] = (b[0] * a[j + 1] - a[0] * b[j + 1]) / b[0];
        }
        rows.push(next);
    }
    rows.iter().take(k + 1).all(|r| r[0] > 0.0)
}

#[test]
fn routh_oracle_on_known_polynomials() {
    assert!(routh_hurwitz(&[1.0, 3.0, 3.0]));
    assert!(routh_hurwitz(&[2.0, 3.0]));
    assert!(!routh_hurwitz(&[-1.0]));
    assert!(!routh_hurwitz(&[1.0, 0.5, 0.25]));
    assert!(routh_hurwitz(&[1.0, 4.0, 6.0, 4.0]));
}

#[test]
fn multi_controller_is_linear_in_z_within_a_simplex() {
    let plant = ChainPlant::new(2).unwrap();
    let expert = expert_lqr(&plant, &DMatrix::from_diagonal(&vecf(&[1.0, 2.0])), 1.0).unwrap();
    let raw = record_expert(
        &plant,
        &expert,
        &[vecf(&[1.0, 0.0]), vecf(&[0.0, 1.0]), vecf(&[0.9, 0.9])],
        2.0,
        1e-2,
    )
    .unwrap();
    let set = to_zv(&plant, &raw).unwrap();
    let ctrl = MultiController::from_set(&set, FeedbackMode::ClosedLoop).unwrap();
    let anchor = vecf(&[0.2, 0.1]);
    let (a, b) = (vecf(&[0.3, -0.2]), vecf(&[-0.1, 0.4]));
    for t in [0.0, 0.5, 1.3] {
        let va = ctrl.control_multi(t, &anchor, &a).unwrap();
        let vb = ctrl.control_multi(t, &anchor, &b).unwrap();
        let mid = ctrl.control_multi(t, &anchor, &((&a + &b) * 0.5)).unwrap();
        assert!((mid - (va + vb) * 0.5).norm() < 1e-12);
    }
}

#[test]
fn monodromy_properties_on_random_sets() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let plant = ChainPlant::new(2).unwrap();
        let q = DMatrix::from_diagonal(&vecf(&[rng.gen_range(0.5..5.0), rng.gen_range(0.5..5.0)]));
        let expert = expert_lqr(&plant, &q, rng.gen_range(0.2..2.0)).unwrap();
        let starts: Vec<DVector<f64>> = (0..2)
            .map(|_| vecf(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
            .collect();
        let raw = record_expert(&plant, &expert, &starts, 2.0, 1e-3).unwrap();
        let set = to_zv(&plant, &raw).unwrap();
        let Ok(basis) = build_basis(&set, &[0, 1, 2]) else { continue };
        assert_eq!(certify::monodromy_from_data(&basis, 0.0).unwrap(), DMatrix::identity(2, 2));
        let data = certify::monodromy_from_data(&basis, 2.0).unwrap();
        let integral =
            certify::monodromy_from_integral(&basis, &brunovsky_pair(2).unwrap(), 2.0, 1e-3).unwrap();
        assert!((&data - integral).norm() < 1e-3);
        let frobenius = basis.zs.last().unwrap().norm() * basis.zs[0].clone().try_inverse().unwrap().norm();
        assert!(linalg::spectral_norm(&data) <= frobenius * (1.0 + 1e-12));
    }
}

#[test]
fn embedded_demonstrations_round_trip() {
    let (plant, cfg) = systems::ball_beam_preset(0.7143, 9.81, &systems::BALL_BEAM_W).unwrap();
    let dt = 1e-3;
    let raw = systems::ball_beam_demos(plant.as_ref(), 2.0, dt).unwrap();
    let set = embed::transform_demos(&cfg, &raw, &DVector::zeros(3)).unwrap();
    for (d, r) in set.demos.iter().zip(&raw.demos) {
        for k in 0..d.z.len() {
            let u = cfg.dynamic_feedback(&r.states[k], &d.xi[k], d.v[k]).unwrap();
            assert!((u - r.inputs[k][0]).abs() < 1e-6);
        }
        for k in 1..d.z.len() - 1 {
            let dz = (&d.z[k + 1] - &d.z[k - 1]) / (2.0 * dt);
            let scale = 1.0 + d.z[k].amax() + d.v[k].abs();
            for i in 0..3 {
                assert!((dz[i] - d.z[k][i + 1]).abs() < 1e3 * dt * dt * scale);
            }
            assert!((dz[3] - d.v[k]).abs() < 1e3 * dt * dt * scale);
        }
    }
}

#[test]
fn learned_embedding_replays_a_demonstration() {
    let (plant, cfg) = systems::ball_beam_preset(0.7143, 9.81, &systems::BALL_BEAM_W).unwrap();
    let raw = systems::ball_beam_demos(plant.as_ref(), 2.0, 1e-3).unwrap();
    let set = embed::transform_demos(&cfg, &raw, &DVector::zeros(3)).unwrap();
    let demo = &set.demos[1];
    let x0 = &raw.demos[1].states[0];
    let traj = embed::simulate_embedded(
        &cfg,
        |t, _, _| {
            let k = (t / 1e-3).round() as usize;
            let (k, a) = if k >= demo.v.len() - 1 { (demo.v.len() - 2, 1.0) } else {
                (k, (t - demo.times[k]) / 1e-3)
            };
            Ok(demo.v[k] * (1.0 - a) + demo.v[k + 1] * a)
        },
        x0,
        &DVector::zeros(3),
        2.0,
        &SimOptions::default(),
    )
    .unwrap();
    for (k, y) in traj.states.iter().enumerate().step_by(50) {
        assert!((y.rows(0, 4) - &raw.demos[1].states[k]).norm() < 1e-4, "sample {k}");
    }
}

#[test]
fn triangulation_file_round_trip() {
    let pts = vec![vecf(&[0.0, 0.0]), vecf(&[1.0, 0.0]), vecf(&[0.0, 1.0]), vecf(&[0.9, 0.9])];
    let tri = geometry::delaunay(&pts).unwrap();
    let back = Triangulation::from_file(&tri.to_file()).unwrap();
    assert_eq!(back.simplices.len(), tri.simplices.len());
    for (a, b) in back.simplices.iter().zip(&tri.simplices) {
        assert_eq!(a.vertex_indices, b.vertex_indices);
    }
}

#[test]
fn zero_setpoint_is_the_origin() {
    let r = systems::Setpoint { z: DVector::zeros(2), channels: 1 };
    assert_eq!(r.eval(3.0), (DVector::zeros(2), DVector::zeros(1)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn certified_controller_contracts(a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let set = double_integrator_set(1e-3);
        let ctrl = LearnedController::from_set(&set, FeedbackMode::ClosedLoop).unwrap();
        let psi = certify::monodromy_from_data(&ctrl.basis, 2.0).unwrap();
        let rate = linalg::spectral_norm(&psi);
        prop_assume!(a + b <= 1.0);
        // Convex combination of the three demonstration starts (one of which is the origin).
        let z0 = vecf(&[a, b]);
        let report = certify::contraction_check(&ctrl, rate, Some(&psi), &z0, 5, 1e-3).unwrap();
        prop_assert!(report.passed, "{:?}", report.norms);
        prop_assert!(report.one_step_error.unwrap() < 1e-6);
    }
}
