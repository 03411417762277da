mod common;

use exdiff_core::cost::{hessian_bounds, isotropic_mse_model};
use exdiff_core::engine::{run, Algorithm, Engine, RunConfig, Status, StepSpec};
use exdiff_core::graph::{build_metropolis, perron_vector, CombinationMatrix, Graph};
use exdiff_core::linalg::{max_abs_c, stack_rows, sym_eigen, to_complex};
use exdiff_core::spectral::{compute_v, eigenvalues};
use exdiff_core::stability::*;
use exdiff_core::{Complex64, DMatrix, DVector};

fn dynamics(cm: &CombinationMatrix, m: usize, mu: f64, seed: u64) -> (ErrorDynamics, exdiff_core::graph::PerronData) {
    let p = perron_vector(cm).unwrap();
    let v = compute_v(cm, &p).unwrap();
    let model = common::random_quadratic(cm.n(), m, 0.5, 2.0, seed);
    let dy = build_error_dynamics(cm, &p, &v, &model, &vec![mu; cm.n()], None).unwrap();
    (dy, p)
}

fn sorted_moduli(z: &[Complex64]) -> Vec<f64> {
    let mut m: Vec<f64> = z.iter().map(|x| x.norm()).collect();
    m.sort_by(|a, b| b.total_cmp(a));
    m
}

#[test]
fn b_spectrum_on_random_four_node_graphs() {
    for seed in 0..20 {
        let cm = if seed % 2 == 0 { common::metropolis(4, 0.6, seed) } else { common::averaging(4, 0.6, seed) };
        let (dy, _) = dynamics(&cm, 1, 0.1, seed);
        let eig = eigenvalues(&dy.b).unwrap();
        let abar = sym_eigen(&{
            let p = perron_vector(&cm).unwrap();
            // P^{-1/2} Ā P^{1/2} is symmetric and similar to Ā
            let s = DMatrix::from_diagonal(&DVector::from_iterator(4, p.p.iter().map(|x| x.sqrt())));
            let si = s.clone().try_inverse().unwrap();
            let m = si * cm.a_bar() * s;
            (&m + m.transpose()) * 0.5
        })
        .0;
        let mut expect = vec![1.0, 1.0];
        for l in &abar[1..] {
            expect.push(l.sqrt());
            expect.push(l.sqrt());
        }
        expect.sort_by(|a, b| b.total_cmp(a));
        let got = sorted_moduli(&eig);
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-8, "{got:?} vs {expect:?}");
        }
        let units = eig.iter().filter(|z| (*z - 1.0).norm() < 1e-8).count();
        assert_eq!(units, 2);
    }
}

#[test]
fn decomposition_reconstructs_b() {
    for seed in 0..10 {
        let cm = if seed % 2 == 0 { common::metropolis(5, 0.5, seed) } else { common::averaging(5, 0.5, seed) };
        let (dy, p) = dynamics(&cm, 1, 0.1, seed);
        let pair = decompose_b(&dy, &p, None).unwrap();
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&pair.d));
        let rec = &pair.x * d * &pair.x_inv;
        assert!(max_abs_c(&(rec - to_complex(&dy.b))) < 1e-8);
        let n2 = dy.b.nrows();
        assert!(max_abs_c(&(&pair.x * &pair.x_inv - DMatrix::identity(n2, n2))) < 1e-8);
        let r = canonical_r(5);
        let l = canonical_l(&p.p);
        assert!((&l * &r - DMatrix::identity(2, 2)).amax() < 1e-15);
        assert!((&dy.b * &r - &r).amax() < 1e-12);
        assert!((&l * &dy.b - &l).amax() < 1e-12);
        let x_l_x_r = &pair.x_l * &pair.x_r;
        assert!(max_abs_c(&(x_l_x_r - DMatrix::identity(8, 8))) < 1e-8);
    }
}

#[test]
fn rescaling_keeps_product() {
    let cm = common::averaging(5, 0.5, 3);
    let (dy, p) = dynamics(&cm, 1, 0.1, 3);
    let a = decompose_b(&dy, &p, Some(1.0)).unwrap();
    let b = a.rescaled(7.5);
    assert!(max_abs_c(&(&b.x * &b.x_inv - &a.x * &a.x_inv)) < 1e-12);
    assert_eq!(b.c, 7.5);
}

#[test]
fn shifted_v_has_full_rank() {
    for seed in 0..10 {
        let cm = common::averaging(6, 0.4, seed);
        let p = perron_vector(&cm).unwrap();
        let v = compute_v(&cm, &p).unwrap();
        let shifted = &v.v + DMatrix::from_fn(6, 6, |_, j| p.p[j]);
        let sv = shifted.singular_values();
        assert!(sv.min() > 1e-8);
    }
}

#[test]
fn two_agent_b_minus_t_matches_hand_assembly() {
    let a = 0.5;
    let case = two_agent_case(a, 1.0, 0.5, 0.5).unwrap();
    let cm = CombinationMatrix::new(Graph::path(2).unwrap(), TwoAgentCase::combination(a)).unwrap();
    let p = perron_vector(&cm).unwrap();
    let v = compute_v(&cm, &p).unwrap();
    let model = isotropic_mse_model(2, 1.0, &[1.0]).unwrap();
    let dy = build_error_dynamics(&cm, &p, &v, &model, &[0.5, 0.5], None).unwrap();
    assert!((dy.transition() - case.q_d()).amax() < 1e-15);
    // Ā = [[3/4, 1/4], [1/4, 3/4]], V = [[1/4, -1/4], [-1/4, 1/4]]
    let expect = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.375, 0.125, -0.5, 0.5, 0.125, 0.375, 0.5, -0.5, 0.0625, -0.0625, 0.75, 0.25, -0.0625, 0.0625, 0.25, 0.75,
        ],
    );
    assert!((case.q_d() - expect).amax() < 1e-15);
}

#[test]
fn q_spectra_extend_e_spectra_by_one() {
    for &a in &[0.2, 0.5, 0.8] {
        for &x in &[0.3, 1.0, 1.7] {
            let c = two_agent_case(a, 1.0, x, x).unwrap();
            let mut want_d = eigenvalues(&c.e_d).unwrap();
            want_d.push(Complex64::new(1.0, 0.0));
            assert!(spectrum_distance(&eigenvalues(&c.q_d()).unwrap(), &want_d) < 1e-10);
            let mut want_e = eigenvalues(&c.e_e).unwrap();
            want_e.push(Complex64::new(1.0, 0.0));
            assert!(spectrum_distance(&eigenvalues(&c.q_e()).unwrap(), &want_e) < 1e-10);
        }
    }
}

#[test]
fn single_agent_decomposition() {
    let cm = build_metropolis(&Graph::new(1, &[]).unwrap()).unwrap();
    let (dy, p) = dynamics(&cm, 1, 0.1, 0);
    let pair = decompose_b(&dy, &p, None).unwrap();
    assert_eq!(pair.x, to_complex(&DMatrix::identity(2, 2)));
    assert_eq!(pair.x_inv, to_complex(&DMatrix::identity(2, 2)));
}

#[test]
fn diffusion_bound_properties() {
    for seed in 0..10 {
        let cm = if seed % 2 == 0 { common::metropolis(6, 0.5, seed) } else { common::averaging(6, 0.5, seed) };
        let p = perron_vector(&cm).unwrap();
        let model = common::random_quadratic(6, 2, 0.5, 2.0, seed);
        let hb = hessian_bounds(&model).unwrap();
        let tau = vec![1.0; 6];
        let b = diffusion_step_bound(&cm, &p, &tau, hb.nu, hb.delta, hb.k_o).unwrap();
        assert!(b.mu_bound > 0.0 && b.mu_bound < 1.0 / hb.delta);
        assert!(b.alpha >= 1.0);
        assert!(b.norm_t >= 1.0 - 1e-12);
        assert!(b.rho(0.999 * b.mu_bound) < 1.0);
        assert!(b.rho(0.5 * b.mu_bound) < 1.0);
        assert!((b.rho(b.mu_bound) - 1.0).abs() < 1e-12);

        let r = run(Algorithm::ExactDiffusion, &model, &cm, &StepSpec::Uniform(b.mu_bound), None, &RunConfig {
            max_iters: 2_000_000,
            stop: 1e-10,
        })
        .unwrap();
        assert_eq!(r.status, Status::Converged);
    }
}

#[test]
fn extra_bound_and_norm_closed_form() {
    let cm = CombinationMatrix::new(Graph::path(2).unwrap(), TwoAgentCase::combination(0.5)).unwrap();
    let nc = norm_comparison(&cm).unwrap();
    assert!((nc.t_e_sq - 1.25).abs() < 1e-12);
    assert!((nc.closed_form - 1.25).abs() < 1e-15);
    assert!(nc.strict);
    let b = extra_step_bound(&cm, 1.0, 1.0).unwrap();
    assert!((b.norm_t * b.norm_t - 1.25).abs() < 1e-12);
    let asym = exdiff_core::graph::build_averaging(&Graph::star(4).unwrap()).unwrap();
    assert!(extra_step_bound(&asym, 1.0, 1.0).is_err());
    assert!(norm_comparison(&asym).is_err());
}

#[test]
fn identity_matrix_norms() {
    let g = Graph::path(3).unwrap();
    let cm = CombinationMatrix::new_unverified(g, DMatrix::identity(3, 3)).unwrap();
    let nc = norm_comparison(&cm).unwrap();
    assert!((nc.t_d_sq - 1.0).abs() < 1e-14);
    assert!((nc.t_e_sq - 1.0).abs() < 1e-14);
    assert!((nc.closed_form - 1.0).abs() < 1e-15);
    assert!(!nc.strict);
}

#[test]
fn eight_node_strict_inequality() {
    let cm = common::metropolis(8, 0.4, 8);
    let nc = norm_comparison(&cm).unwrap();
    assert!(nc.strict && nc.residual < 1e-10);
    let hb = (0.5, 2.0);
    let p = perron_vector(&cm).unwrap();
    let d = diffusion_step_bound(&cm, &p, &[1.0; 8], hb.0, hb.1, 0).unwrap();
    let e = extra_step_bound(&cm, hb.0, hb.1).unwrap();
    assert!(d.alpha < e.alpha && d.mu_bound > e.mu_bound);
}

#[test]
fn rates_agree_to_first_order() {
    let cm = common::metropolis(6, 0.5, 21);
    let p = perron_vector(&cm).unwrap();
    let d = diffusion_step_bound(&cm, &p, &[1.0; 6], 0.5, 2.0, 0).unwrap();
    let e = extra_step_bound(&cm, 0.5, 2.0).unwrap();
    let mut prev = f64::INFINITY;
    for k in 1..8 {
        let mu = e.mu_bound * 10f64.powi(-k);
        let gap = (d.rho(mu) - e.rho(mu)).abs();
        assert!(gap <= prev);
        assert!(gap / mu < 2e-2 * 10f64.powi(-k + 1) + 1e-9);
        prev = gap;
    }
}

#[test]
fn two_agent_roots_grid() {
    for ai in 1..10 {
        let a = ai as f64 / 10.0;
        for xi in 1..20 {
            let x = xi as f64 / 10.0;
            let c = two_agent_case(a, 1.0, x, x).unwrap();
            assert!(c.root_mismatch < 1e-10, "a = {a}, x = {x}");
            if c.delta_disc < 0.0 {
                let prod = c.roots_d[1].norm() * c.roots_d[2].norm();
                assert!((prod - (1.0 - x) * a).abs() < 1e-12);
            }
            assert_eq!(c.diffusion_stable, c.diffusion_predicate);
        }
    }
}

#[test]
fn unit_curvature_step_roots() {
    let c = two_agent_case(0.7, 2.0, 0.5, 0.5).unwrap();
    let mut r: Vec<f64> = c.roots_d[1..].iter().map(|z| z.re).collect();
    r.sort_by(f64::total_cmp);
    assert!(r[0].abs() < 1e-15 && (r[1] - 0.7).abs() < 1e-15);
}

#[test]
fn extra_at_onset_has_root_outside() {
    for &a in &[0.1, 0.4, 0.9] {
        let c = two_agent_case(a, 1.0, 1.0, a + 1.0).unwrap();
        let prod = c.roots_e[1] * c.roots_e[2];
        assert!((prod.re + 1.0).abs() < 1e-12 && prod.im.abs() < 1e-12);
        assert!(c.roots_e[1..].iter().any(|z| z.im == 0.0 && z.norm() > 1.0));
        assert!(c.extra_sufficient_unstable && !c.extra_stable);
    }
    assert!(two_agent_case(1.0, 1.0, 1.0, 1.0).is_err());
    assert!(two_agent_case(0.5, 0.0, 1.0, 1.0).is_err());
}

#[test]
fn zero_error_stays_zero() {
    let cm = common::metropolis(4, 0.7, 1);
    let (dy, _) = dynamics(&cm, 2, 0.2, 1);
    let traj = simulate_error_recursion(&dy, &DVector::zeros(16), 20).unwrap();
    assert_eq!(traj.len(), 21);
    assert!(traj.iter().all(|e| e.amax() == 0.0));
    assert!(simulate_error_recursion(&dy, &DVector::zeros(3), 2).is_err());
}

fn engine_error_trajectory(
    cm: &CombinationMatrix,
    model: &exdiff_core::cost::CostModel,
    mu: f64,
    w0: DMatrix<f64>,
    iters: usize,
) -> (Vec<DVector<f64>>, DVector<f64>) {
    let mut e = Engine::new(Algorithm::ExactDiffusionPrimalDual, model, cm, &StepSpec::Uniform(mu), w0).unwrap();
    let (w_star, _) = model.minimize_weighted(&e.target_weights(model)).unwrap();
    let n = cm.n();
    let w_ref = DMatrix::from_fn(n, model.dim(), |_, j| w_star[j]);
    let y_star = e.dual_fixed_point(&model.gradients(&w_ref));
    let err = |e: &Engine| {
        let mut v = stack_rows(&(&e.state().w - &w_ref)).as_slice().to_vec();
        v.extend_from_slice(stack_rows(&(&e.state().y - &y_star)).as_slice());
        DVector::from_vec(v)
    };
    let mut out = vec![err(&e)];
    for _ in 0..iters {
        e.step(model).unwrap();
        out.push(err(&e));
    }
    let init = out[0].clone();
    (out, init)
}

#[test]
fn two_agent_error_recursion_matches_engine() {
    let cm = CombinationMatrix::new(Graph::path(2).unwrap(), TwoAgentCase::combination(0.5)).unwrap();
    let p = perron_vector(&cm).unwrap();
    let v = compute_v(&cm, &p).unwrap();
    let model = isotropic_mse_model(2, 1.0, &[1.0]).unwrap();
    let dy = build_error_dynamics(&cm, &p, &v, &model, &[0.5, 0.5], None).unwrap();
    let (direct, init) = engine_error_trajectory(&cm, &model, 0.5, DMatrix::from_row_slice(2, 1, &[2.0, -1.0]), 60);
    let sim = simulate_error_recursion(&dy, &init, 60).unwrap();
    for (a, b) in sim.iter().zip(&direct) {
        assert!((a - b).amax() < 1e-12);
    }
}

#[test]
fn restricted_radius_predicts_simulation() {
    let mut agree = 0;
    for seed in 0..50u64 {
        let n = 3 + (seed as usize % 4);
        let cm = if seed % 2 == 0 { common::metropolis(n, 0.5, seed) } else { common::averaging(n, 0.5, seed) };
        let p = perron_vector(&cm).unwrap();
        let v = compute_v(&cm, &p).unwrap();
        let model = common::random_quadratic(n, 2, 0.5, 2.0, 500 + seed);
        let mu = 0.3 + 0.05 * (seed % 20) as f64;
        let dy = build_error_dynamics(&cm, &p, &v, &model, &vec![mu; n], None).unwrap();
        let rho = dy.restricted_spectral_radius().unwrap();
        if (rho - 1.0).abs() < 0.01 {
            agree += 1;
            continue;
        }
        let w0 = common::random_matrix(n, 2, seed);
        let r = run(Algorithm::ExactDiffusionPrimalDual, &model, &cm, &StepSpec::Uniform(mu), Some(w0), &RunConfig {
            max_iters: 20_000,
            stop: 1e-20,
        })
        .unwrap();
        if rho < 1.0 {
            assert_eq!(r.status, Status::Converged, "seed {seed}, rho {rho}");
        } else {
            assert_eq!(r.status, Status::Diverged, "seed {seed}, rho {rho}");
        }
        agree += 1;
    }
    assert_eq!(agree, 50);
}

#[test]
fn mismatch_check_on_averaging_graph() {
    let cm = common::averaging(5, 0.5, 9);
    let p = perron_vector(&cm).unwrap();
    let model = common::random_quadratic(5, 2, 0.5, 2.0, 9);
    let r = run(Algorithm::ExactDiffusionAdaptive, &model, &cm, &StepSpec::Uniform(0.02), None, &RunConfig {
        max_iters: 200,
        stop: 0.0,
    })
    .unwrap();
    let rep = mismatch_decay_check(&r.perron_estimates, &p.p, p.rho_a);
    assert!(rep.holds);
    assert!(rep.fit_points >= 3);
    assert!(rep.fitted_rate <= p.rho_a + 0.02, "{} vs {}", rep.fitted_rate, p.rho_a);
}

#[test]
fn mismatch_check_doubly_stochastic() {
    let cm = common::metropolis(6, 0.5, 2);
    let p = perron_vector(&cm).unwrap();
    let model = common::random_quadratic(6, 1, 0.5, 2.0, 2);
    let r = run(Algorithm::ExactDiffusionAdaptive, &model, &cm, &StepSpec::Uniform(0.02), None, &RunConfig {
        max_iters: 100,
        stop: 0.0,
    })
    .unwrap();
    assert!(mismatch_decay_check(&r.perron_estimates, &p.p, p.rho_a).holds);
    assert!(!mismatch_decay_check(&[vec![0.5; 6]], &p.p, 0.01).holds);
}

#[test]
fn unbalanced_input_rejected() {
    let g = Graph::cycle(3).unwrap();
    let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.4, 0.3, 0.6, 0.1, 0.2, 0.3, 0.5]);
    let cm = CombinationMatrix::new(g, a).unwrap();
    let p = perron_vector(&cm).unwrap();
    let model = common::random_quadratic(3, 1, 0.5, 2.0, 0);
    assert!(diffusion_step_bound(&cm, &p, &[1.0; 3], 0.5, 2.0, 0).is_err());
    let v = exdiff_core::spectral::VMatrix::from_matrix(DMatrix::zeros(3, 3)).unwrap();
    assert!(build_error_dynamics(&cm, &p, &v, &model, &[0.1; 3], None).is_err());
}

#[test]
fn eigenstructure_check_passes_on_balanced_inputs() {
    for seed in 0..10 {
        let cm = if seed % 2 == 0 { common::metropolis(6, 0.4, seed) } else { common::averaging(6, 0.4, seed) };
        let p = perron_vector(&cm).unwrap();
        let chk = eigenstructure_check(&cm, &p).unwrap();
        assert!(chk.passes(), "{chk:?}");
    }
}
