//! Cross-module checks: transform, propagate, reconstruct, and compare with closed forms.

use phasewave_core::flow::riccati_residual;
use phasewave_core::*;

fn rel_region(a: &[C64], b: &[C64], cut: f64) -> f64 {
    let peak = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        if y.norm() > cut * peak {
            worst = worst.max((x - y).norm() / y.norm());
        }
    }
    worst
}

fn initial_phase_field(hbar: f64, half: f64, n: usize) -> ComplexField {
    let x = Axis::with_spacing(-10.0, 10.0, 0.004).unwrap();
    let psi = ComplexField::from_fn(vec![x], hbar, Domain::Position, |x| {
        exact_position_solution(BuiltinKind::Free, x[0], 0.0, hbar).unwrap()
    })
    .unwrap();
    let ax = Axis::new(-half, half, n).unwrap();
    wave_packet_transform(&psi, &[ax, ax]).unwrap()
}

#[test]
fn propagation_reproduces_closed_form_solutions() {
    let hbar = 0.1;
    let psi0 = initial_phase_field(hbar, 5.5, 51);
    for kind in BuiltinKind::ALL {
        let model = builtin_model(kind, 1).unwrap();
        let t = 0.5;
        let out = vec![Axis::new(-3.0, 3.0, 25).unwrap(), Axis::new(-3.0, 3.0, 25).unwrap()];
        let prop = apply_propagator(&psi0, t, &model, &PropagatorOptions::default().with_output(out)).unwrap();
        let exact: Vec<C64> = (0..prop.field.len())
            .map(|k| {
                let c = prop.field.coords(k);
                exact_phase_solution(kind, Reading::Corrected, &PhasePoint::new_1d(c[0], c[1]), t, hbar).unwrap().value
            })
            .collect();
        let err = rel_region(prop.field.values(), &exact, 1e-3);
        assert!(err < 1e-5, "{kind}: {err}");
    }
}

#[test]
fn position_reconstruction_matches_exact_evolution() {
    let hbar = 0.1;
    let psi0 = initial_phase_field(hbar, 5.5, 51);
    let x = Axis::new(-2.5, 2.5, 41).unwrap();
    for kind in BuiltinKind::ALL {
        let model = builtin_model(kind, 1).unwrap();
        let t = 0.4;
        let psi = position_space_solution(&psi0, t, &model, &[x], &PropagatorOptions::default()).unwrap();
        let exact: Vec<C64> = x.points().iter().map(|&x| exact_position_solution(kind, x, t, hbar).unwrap()).collect();
        let err = rel_region(psi.values(), &exact, 1e-3);
        assert!(err < 1e-5, "{kind}: {err}");
    }
}

#[test]
fn solution_is_exponentially_small_off_the_manifold() {
    let hbar: f64 = 0.05;
    let t = 0.5;
    let data = WkbData::unit_chirp();
    let model = builtin_model(BuiltinKind::Free, 1).unwrap();
    let lm = transport_manifold(&data, &model, t, &Axis::new(-3.0, 3.0, 61).unwrap(), &FlowOptions::default()).unwrap();
    let (slope, _) = exact_manifold(BuiltinKind::Free, t).unwrap();
    let n = (1.0 + slope * slope).sqrt();
    let normal = [-slope / n, 1.0 / n];
    for k in [25, 30, 35] {
        let on = PhasePoint::new_1d(lm.q[k], lm.p[k]);
        let off = PhasePoint::new_1d(on.q[0] + 4.0 * hbar.sqrt() * normal[0], on.p[0] + 4.0 * hbar.sqrt() * normal[1]);
        let v_on = solution_on_manifold(&on, &lm, &data, &model, hbar, &FlowOptions::default()).unwrap();
        let v_off = exact_phase_solution(BuiltinKind::Free, Reading::Corrected, &off, t, hbar).unwrap().value;
        assert!(v_on.norm() >= std::f64::consts::E.powi(2) * v_off.norm());
    }
}

#[test]
fn ehrenfest_warning_comes_earlier_for_larger_hbar() {
    let model = builtin_model(BuiltinKind::Free, 1).unwrap();
    let b = integrate_characteristics(&model, &PhasePoint::new_1d(0.0, 1.0), 10.0, &FlowOptions::default()).unwrap();
    let first: Vec<f64> = [0.2, 0.1, 0.05, 0.01].iter().map(|&h| ehrenfest_guard(&b, Some(h))[0].t).collect();
    assert!(first.windows(2).all(|w| w[0] < w[1]), "{first:?}");
}

#[test]
fn kernels_compose_over_time() {
    let hbar = 0.1;
    let ax = Axis::with_spacing(-4.0, 4.0, 0.05).unwrap();
    let (t1, t2) = (0.3, 0.4);
    let x = PhasePoint::new_1d(0.2, -0.1);
    let y = PhasePoint::new_1d(-0.1, 0.3);
    for kind in BuiltinKind::ALL {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..ax.n {
            for j in 0..ax.n {
                let w = PhasePoint::new_1d(ax.point(i), ax.point(j));
                let k2 = exact_kernel(kind, Reading::Corrected, &x, &w, t2, hbar).unwrap();
                let k1 = exact_kernel(kind, Reading::Corrected, &w, &y, t1, hbar).unwrap();
                acc += k2 * k1 * ax.weight(i) * ax.weight(j);
            }
        }
        let direct = exact_kernel(kind, Reading::Corrected, &x, &y, t1 + t2, hbar).unwrap();
        assert!((acc - direct).norm() < 1e-8 * direct.norm(), "{kind}: {acc} {direct}");
    }
}

#[test]
fn riccati_flow_of_a_quartic_model_stays_consistent() {
    let model = polynomial_model(&[Monomial::new(0, 2, 1.0), Monomial::new(4, 0, 0.5)]).unwrap();
    let b = integrate_characteristics(&model, &PhasePoint::new_1d(0.4, -0.3), 1.0, &FlowOptions::default()).unwrap();
    assert!(riccati_residual(&model, &b).unwrap() < 1e-7);
}
