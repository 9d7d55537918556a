use proptest::prelude::*;
use sir_iss_core::levelset::{analytic_contour_df, check_vertex_residuals, distance_to_contour, extract_contours, Plane, Window};
use sir_iss_core::lyap_en::lambda3_bound;
use sir_iss_core::ode::integrate;
use sir_iss_core::{Deviation, DfLyapunov, DfOverrides, EnLyapParams, EnLyapunov, InputSignal, IssLyapunov, ModelParams, State};

fn df() -> DfLyapunov {
    DfLyapunov::select(ModelParams::new(0.0002, 0.032, 0.015, 3.0).unwrap(), DfOverrides::default()).unwrap()
}

fn en() -> EnLyapunov {
    let p = ModelParams::new(0.0002, 0.032, 0.015, 17.0).unwrap();
    let mut lp = EnLyapParams {
        lambda1: 1.0,
        lambda2: 1.0,
        lambda_hat2: 0.01,
        k: 0.0902,
        lambda3: 0.0,
        l_bar: 340.0,
        delta: 0.5,
    };
    lp.lambda3 = 0.5 * lambda3_bound(&p, &lp).unwrap();
    EnLyapunov::new(p, lp).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn df_contours_sit_on_oracle(level in 1.0f64..400.0) {
        let v = df();
        let w = Window::new(-200.0, 450.0, 0.0, 450.0);
        let n = 120;
        let cs = extract_contours(&v, &[level], Plane::X3(0.0), w, (n, n)).unwrap();
        prop_assert!(check_vertex_residuals(&v, &cs).passed);
        let oracle = analytic_contour_df(&v, level, 0.0).unwrap();
        let cell = 650.0 / (n - 1) as f64;
        for p in cs[0].polylines.iter().flatten() {
            prop_assert!(distance_to_contour(p, &oracle) <= 2.0 * cell);
        }
    }

    #[test]
    fn endemic_value_nonincreasing_along_flow(x1 in -150.0f64..200.0, x2 in -150.0f64..250.0, x3 in -500.0f64..2000.0) {
        let v = en();
        let d = Deviation::new(x1, x2, x3);
        prop_assume!(v.in_certified_set(&d));
        let eq = *v.equilibrium();
        let traj = integrate(v.model(), eq.state(&d), &InputSignal::constant(17.0), 200.0, 0.1).unwrap();
        let vals: Vec<f64> = traj.states.iter().map(|x| v.value(&eq.deviation(x)).unwrap()).collect();
        for w in vals.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]));
        }
    }

    #[test]
    fn solutions_stay_nonnegative(s in 0.0f64..2000.0, i in 0.0f64..2000.0, r in 0.0f64..2000.0, b in 0.0f64..40.0) {
        let p = ModelParams::new(0.0002, 0.032, 0.015, 17.0).unwrap();
        let traj = integrate(&p, State::new(s, i, r), &InputSignal::constant(b), 300.0, 0.05).unwrap();
        prop_assert!(traj.states.iter().all(State::is_nonnegative));
    }
}
