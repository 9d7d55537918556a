use sir_iss_core::lyap_en::select_en_params;
use sir_iss_core::verify::{certify_disease_free, certify_endemic, check_iss_bound, CertifyOptions};
use sir_iss_core::{
    DfLyapunov, DfOverrides, EnLyapParams, EnLyapunov, EnTarget, Error, InputSignal, IssLyapunov, ModelParams,
    VerificationReport,
};

fn df_model() -> ModelParams {
    ModelParams::new(0.0002, 0.032, 0.015, 3.0).unwrap()
}

fn en_model() -> ModelParams {
    df_model().with_b_hat(17.0)
}

fn en_witness() -> EnLyapunov {
    let mut lp = EnLyapParams {
        lambda1: 1.0,
        lambda2: 1.0,
        lambda_hat2: 0.01,
        k: 0.0902,
        lambda3: 0.0,
        l_bar: 340.0,
        delta: 0.5,
    };
    lp.lambda3 = 0.5 * sir_iss_core::lyap_en::lambda3_bound(&en_model(), &lp).unwrap();
    EnLyapunov::new(en_model(), lp).unwrap()
}

fn quick() -> CertifyOptions {
    CertifyOptions {
        grid_n: 30,
        samples: 20_000,
        boundary_samples: 300,
        trajectories: 10,
        dt: 0.1,
        ..Default::default()
    }
}

#[test]
fn disease_free_suite_passes() {
    let v = DfLyapunov::select(df_model(), DfOverrides::default()).unwrap();
    let rep = certify_disease_free(&v, &quick()).unwrap();
    assert!(rep.all_passed(), "{rep}");
    assert!(rep.checks.len() >= 7);
}

#[test]
fn endemic_witness_suite_passes() {
    let rep = certify_endemic(&en_witness(), &quick()).unwrap();
    assert!(rep.all_passed(), "{rep}");
}

#[test]
fn endemic_selected_params_pass() {
    let lp = select_en_params(&en_model(), EnTarget::LBar { l_bar: 200.0 }).unwrap();
    let v = EnLyapunov::new(en_model(), lp).unwrap();
    let rep = certify_endemic(&v, &quick()).unwrap();
    assert!(rep.all_passed(), "{rep}");
}

#[test]
fn reports_reproduce_and_round_trip() {
    let v = DfLyapunov::select(df_model(), DfOverrides::default()).unwrap();
    let a = certify_disease_free(&v, &quick()).unwrap();
    let b = certify_disease_free(&v, &quick()).unwrap();
    assert_eq!(a, b);
    let json = serde_json::to_string(&a).unwrap();
    let back: VerificationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(a, back);
}

#[test]
fn endemic_needs_its_regime() {
    assert!(matches!(EnLyapunov::select(df_model(), EnTarget::LBar { l_bar: 100.0 }), Err(Error::Regime(_))));
    // Above R0 = 1 but below gamma/mu + 2.
    let mid = df_model().with_b_hat(12.0);
    assert!(mid.r0_hat() > 1.0 && mid.r0_hat() < mid.endemic_threshold());
    assert!(matches!(EnLyapunov::select(mid, EnTarget::LBar { l_bar: 100.0 }), Err(Error::Regime(_))));
}

#[test]
fn iss_bound_rejects_large_endemic_input() {
    let v = en_witness();
    let (_, hi) = v.input_range();
    // Inside the stated range but without an η-threshold.
    let sig = InputSignal::constant(17.0 + 0.5 * hi);
    assert!(matches!(check_iss_bound(&v, &sig, 100.0, 0.1), Err(Error::Range(_))));
}
