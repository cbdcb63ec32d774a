use convexify_core::acquire::{add_noise, pick_arrival, CauchyProjection};
use convexify_core::basis::PolyBasis;
use convexify_core::eikonal::fast_sweep;
use convexify_core::forward::{run_forward, ForwardConfig};
use convexify_core::grid::{interp_refine, restrict, Grid3, ScalarField, VecField};
use convexify_core::objective::{eval_j, Objective, ObjectiveConfig};
use convexify_core::optimize::{gd_level, LevelSettings, RunTrace, StepPolicy};
use convexify_core::system::{Feasibility, SystemCoeffs, DEFAULT_M_FLOOR};
use convexify_core::verify::{carleman_ratio, sample_admissible_u};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

/// Boundary data read off `w`, with `∂z` on the top face by the same
/// one-sided formula the functional uses.
fn cauchy_from(w: &VecField) -> CauchyProjection {
    let g = *w.grid();
    let sz = g.dims[0] * g.dims[1];
    let (mut boundary_nodes, mut q0, mut top_nodes, mut q1) = (vec![], vec![], vec![], vec![]);
    for p in 0..g.len() {
        let [i, j, k] = g.ijk(p);
        if !g.is_boundary(i, j, k) {
            continue;
        }
        boundary_nodes.push(p);
        q0.extend((0..w.n_comp()).map(|c| w.component(c)[p]));
        if k + 1 == g.dims[2] && g.is_interior(i, j, k - 1) {
            top_nodes.push(p);
            q1.extend((0..w.n_comp()).map(|c| {
                let u = w.component(c);
                (3.0 * u[p] - 4.0 * u[p - sz] + u[p - 2 * sz]) / (2.0 * g.spacing)
            }));
        }
    }
    CauchyProjection { omega: g, n_comp: w.n_comp(), boundary_nodes, q0, top_nodes, q1, amplitude_scale: 1.0 }
}

/// A plausible point: distance-like `τ` and small amplitudes with `Σ s_n w_n > 0`.
fn plausible_w(g: Grid3, a: [f64; 4]) -> VecField {
    let comps = [
        ScalarField::from_fn(g, |x| (x[0] * x[0] + x[1] * x[1] + (x[2] + 5.0).powi(2)).sqrt() + 0.05 * a[0] * x[0] * x[2]),
        ScalarField::from_fn(g, |x| 0.02 + 0.002 * (a[1] * x[0] + a[2] * x[1] * x[2]).cos()),
        ScalarField::from_fn(g, |x| 0.001 * (a[3] + x[2])),
    ];
    VecField::from_components(&comps.map(Result::unwrap)).unwrap()
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn gram_matrix_is_identity_for_any_window(t1 in 0.01f64..10.0, n in 1usize..=6) {
        let b = PolyBasis::build(t1, n).unwrap();
        // Composite Simpson, exact enough for polynomials of degree ≤ 12 here.
        let m = 4000;
        let dt = t1 / m as f64;
        for i in 1..=n {
            prop_assert_eq!(b.eval(i, 0.0), 0.0);
            for j in 1..=n {
                let f = |t: f64| b.eval(i, t) * b.eval(j, t);
                let mut acc = f(0.0) + f(t1);
                for k in 1..m {
                    acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * dt);
                }
                let g = acc * dt / 3.0;
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g - expect).abs() < 1e-8, "<{}, {}> = {}", i, j, g);
            }
        }
    }

    #[test]
    fn coupling_matrix_plus_transpose_is_the_endpoint_product(t1 in 0.05f64..5.0, n in 1usize..=6) {
        let b = PolyBasis::build(t1, n).unwrap();
        for m in 1..=n {
            for k in 1..=n {
                let parts = b.eval(m, t1) * b.eval(k, t1);
                prop_assert!((b.d(m, k) + b.d(k, m) - parts).abs() <= 1e-8 * (1.0 + parts.abs()));
            }
        }
    }

    #[test]
    fn carleman_ratio_is_scale_invariant(seed in any::<u64>(), scale in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3]) {
        let g = Grid3::omega(1.0, 0.25).unwrap();
        let u = sample_admissible_u(&g, seed).unwrap();
        let scaled = ScalarField::new(g, u.values().iter().map(|v| v * scale).collect()).unwrap();
        let a = carleman_ratio(&u, 2.0, 0.1).unwrap();
        let b = carleman_ratio(&scaled, 2.0, 0.1).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs());
        prop_assert!(a > 0.0);
    }

    #[test]
    fn refine_then_restrict_is_the_identity(values in prop::collection::vec(-10.0f64..10.0, 125)) {
        let coarse = Grid3::omega(1.0, 0.25).unwrap();
        let f = ScalarField::new(coarse, values).unwrap();
        let fine = interp_refine(&f, &coarse.refined()).unwrap();
        prop_assert_eq!(restrict(&fine, &coarse).unwrap(), f);
    }

    #[test]
    fn noise_is_bounded_and_reproducible(eps in 0.0f64..0.2, seed in any::<u64>()) {
        let cfg = ForwardConfig { t0: 0.6, ..ForwardConfig::reduced(0.25) };
        let c = ScalarField::constant(cfg.omega_grid().unwrap(), 1.0);
        let rec = run_forward(&c, &cfg).unwrap().recording;
        let a = add_noise(&rec, eps, seed);
        prop_assert_eq!(&a, &add_noise(&rec, eps, seed));
        for (x, y) in rec.f0.iter().zip(&a.f0) {
            prop_assert!((x - y).abs() <= eps * x.abs() * (1.0 + 1e-12));
        }
        for (x, y) in rec.f1.iter().zip(&a.f1) {
            prop_assert!((x - y).abs() <= eps * x.abs() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn picking_recovers_a_shifted_pulse(centre in 0.5f64..4.0, width in 0.02f64..0.08, amp in 0.1f64..10.0) {
        let dt = 0.002;
        let trace: Vec<f64> = (0..2500)
            .map(|k| {
                let t = k as f64 * dt;
                amp * (-((t - centre) / width).powi(2)).exp() + 0.3 * amp * (-((t - centre - 0.5) / width).powi(2)).exp()
            })
            .collect();
        let t = pick_arrival(&trace, dt, 0.5).unwrap();
        prop_assert!((t - centre).abs() < 0.05 * dt, "{} vs {}", t, centre);
    }
}

proptest! {
    #![proptest_config(config(6))]

    #[test]
    fn descent_never_increases_j(a in prop::array::uniform4(-1.0f64..1.0), lambda in 0.0f64..3.0, warm in any::<bool>()) {
        let g = Grid3::omega(1.0, 0.25).unwrap();
        let truth = plausible_w(g, a);
        let coeffs = SystemCoeffs::new(PolyBasis::build(0.1, 2).unwrap(), DEFAULT_M_FLOOR).unwrap();
        let cfg = ObjectiveConfig { lambda, ..ObjectiveConfig::default() };
        let f = Objective::new(cfg, coeffs.clone(), cauchy_from(&truth), Feasibility::Permissive).unwrap();
        // Start away from the data-consistent point, keeping the boundary.
        let mut w0 = truth.clone();
        for c in 0..3 {
            let u = sample_admissible_u(&g, c as u64).unwrap();
            let size = if c == 0 { 0.1 } else { 0.005 };
            for (x, d) in w0.component_mut(c).iter_mut().zip(u.values()) {
                *x += size * d;
            }
        }
        let settings = LevelSettings {
            tol: 1e-12,
            max_iter: 30,
            step: 0.1,
            max_halvings: 60,
            step_policy: if warm { StepPolicy::Warm } else { StepPolicy::Reset },
            project: None,
            coeffs: Some(coeffs),
        };
        let mut trace = RunTrace::default();
        let w = gd_level(&f, w0.clone(), &settings, 0, &mut trace, &mut ()).unwrap();
        let js: Vec<f64> = trace.iterations.iter().map(|r| r.j).collect();
        prop_assert!(js.windows(2).all(|p| p[1] <= p[0]), "{:?}", js);
        prop_assert!(eval_j(&w, &f).unwrap() <= eval_j(&w0, &f).unwrap());
    }
}

#[test]
fn eikonal_matches_straight_rays_and_is_monotone_in_c() {
    let g = Grid3::omega(1.0, 1.0 / 16.0).unwrap();
    let x0 = [0.1, -0.2, 0.3];
    let c1 = ScalarField::constant(g, 1.0);
    let tt = fast_sweep(&c1, x0).unwrap();
    let mut worst = 0.0f64;
    for p in 0..g.len() {
        let x = g.coord_of(p);
        let r = ((x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2) + (x[2] - x0[2]).powi(2)).sqrt();
        worst = worst.max((tt.tau.values()[p] - r).abs());
    }
    // First-order scheme: error of order h log(1/h).
    assert!(worst < 2.0 * g.spacing, "{worst}");

    // τ for c = 4 is exactly twice τ for c = 1 (slowness scales by 2).
    let tt4 = fast_sweep(&ScalarField::constant(g, 4.0), x0).unwrap();
    for (a, b) in tt.tau.values().iter().zip(tt4.tau.values()) {
        assert!((2.0 * a - b).abs() <= 1e-9 * b.max(1.0));
    }
    // A slower patch can only delay arrivals.
    let bump = ScalarField::from_fn(g, |x| if x[2] > 0.6 { 2.0 } else { 1.0 }).unwrap();
    let slow = fast_sweep(&bump, x0).unwrap();
    for (a, b) in tt.tau.values().iter().zip(slow.tau.values()) {
        assert!(b + 1e-12 >= *a);
    }
}
