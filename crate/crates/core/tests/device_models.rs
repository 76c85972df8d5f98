use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tierstore::device::{
    fit, load_paper_model, Device, DeviceError, Family, ModelTermSet, TrainingSample, N_PREDICTORS,
};
use tierstore::rng::stream_rng;

/// Log-uniform draw inside the family's training envelope; predictors without
/// an envelope are drawn from [1, 64].
fn in_range(rng: &mut ChaCha8Rng, family: Family) -> [f64; N_PREDICTORS] {
    let mut x = [1.0; N_PREDICTORS];
    for (v, range) in x.iter_mut().zip(family.training_envelope()) {
        let (lo, hi) = range.unwrap_or((1.0, 64.0));
        *v = rng.gen_range(lo.ln()..hi.ln()).exp();
    }
    x
}

fn synthetic(device: Device, n: usize, noise: f64, seed: u64) -> Vec<TrainingSample> {
    let truth = load_paper_model(device);
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|_| {
            let x = in_range(&mut rng, device.family());
            let y = truth.predict(&x).unwrap().seconds;
            let y = y + noise * rng.gen_range(-1.0..1.0);
            TrainingSample {
                predictors: x,
                observed_time: y,
            }
        })
        .collect()
}

#[test]
fn noiseless_recovery_of_published_models() {
    for device in Device::ALL {
        let truth = load_paper_model(device);
        let samples = synthetic(device, 400, 0.0, 11);
        let fitted = fit(device, &truth.terms, &samples).unwrap();
        let expected_len = match device.family() {
            Family::Nvme => 12,
            Family::Hdd => 11,
        };
        assert_eq!(fitted.coefficients.len(), expected_len);
        for (i, (got, want)) in fitted.coefficients.iter().zip(&truth.coefficients).enumerate() {
            let rel = (got - want).abs() / want.abs();
            assert!(rel < 1e-6, "{device:?} coefficient {i}: {got} vs {want} (rel {rel:e})");
        }
    }
}

#[test]
fn residuals_are_orthogonal_to_the_design() {
    for device in [Device::NvmeRead, Device::HddWrite] {
        let truth = load_paper_model(device);
        let samples = synthetic(device, 300, 5.0, 12);
        let fitted = fit(device, &truth.terms, &samples).unwrap();
        let residuals: Vec<f64> = samples
            .iter()
            .map(|s| s.observed_time - fitted.predict(&s.predictors).unwrap().seconds)
            .collect();
        let r_norm = residuals.iter().map(|r| r * r).sum::<f64>().sqrt();
        for j in 0..truth.terms.len() + 1 {
            let col: Vec<f64> = samples
                .iter()
                .map(|s| {
                    if j == 0 {
                        1.0
                    } else {
                        truth.terms.terms()[j - 1].eval(&s.predictors)
                    }
                })
                .collect();
            let c_norm = col.iter().map(|c| c * c).sum::<f64>().sqrt();
            let dot: f64 = col.iter().zip(&residuals).map(|(c, r)| c * r).sum();
            assert!(
                dot.abs() / (c_norm * r_norm) < 1e-6,
                "{device:?} column {j}: cosine {}",
                dot / (c_norm * r_norm)
            );
        }
    }
}

#[test]
fn collinear_terms_are_named() {
    let terms = ModelTermSet::from_formula("x1 + x3").unwrap();
    let samples: Vec<TrainingSample> = (0..20)
        .map(|i| {
            let v = i as f64 + 1.0;
            TrainingSample {
                predictors: [v, 1.0, 2.0 * v, 1.0, 1.0],
                observed_time: v,
            }
        })
        .collect();
    match fit(Device::NvmeWrite, &terms, &samples) {
        Err(DeviceError::RankDeficient { term, with }) => {
            assert_eq!(term, "x3");
            assert!(with.contains(&"x1".to_string()));
        }
        other => panic!("expected rank deficiency, got {other:?}"),
    }
}

#[test]
fn three_rows_underdetermine_a_twelve_coefficient_model() {
    let truth = load_paper_model(Device::NvmeWrite);
    let samples = synthetic(Device::NvmeWrite, 3, 0.0, 1);
    assert!(matches!(
        fit(Device::NvmeWrite, &truth.terms, &samples),
        Err(DeviceError::Underdetermined { samples: 3, coefficients: 12 })
    ));
}

/// The published models written out term by term.
fn oracle(device: Device, x: &[f64; 5]) -> f64 {
    let [x1, x2, x3, x4, x5] = *x;
    match device {
        Device::NvmeWrite => {
            -5.941 + 6.252e-01 * x1 - 6.326e-05 * x3 + 3.726e-05 * x4 + 6.213e-11 * x5
                + 1.667e-06 * x1 * x3
                - 8.464e-07 * x1 * x4
                - 1.650e-09 * x3 * x4
                + 2.029e-16 * x4 * x5
                - 6.564e-16 * x3 * x5
                + 1.973e-10 * x1 * x3 * x4
                + 1.103e-20 * x3 * x4 * x5
        }
        Device::NvmeRead => {
            -6.059 + 2.182e-02 * x1 + 1.009e-04 * x3 - 3.566e-06 * x4 + 6.963e-11 * x5
                - 2.066e-07 * x1 * x3
                - 1.165e-08 * x1 * x4
                - 4.060e-10 * x3 * x4
                + 1.259e-16 * x4 * x5
                - 2.984e-15 * x3 * x5
                - 6.675e-12 * x1 * x3 * x4
                + 1.896e-20 * x3 * x4 * x5
        }
        Device::HddWrite => {
            7.297 + 4.318e-04 * x3 - 4.354e-06 * x4 + 1.002e-08 * x5 + 3.869e-01 * x1
                + 6.664 * x2
                + 2.007e-11 * x3 * x4
                - 7.486e-11 * x5 * x1
                - 9.269e-10 * x5 * x2
                - 9.916e-02 * x1 * x2
                + 8.344e-12 * x5 * x1 * x2
        }
        Device::HddRead => {
            -0.3771 + 5.913e-04 * x3 - 1.584e-06 * x4 + 8.933 * x2 - 2.563 * x1
                + 6.274e-10 * x5
                + 1.715e-08 * x3 * x4
                + 3.694e-01 * x2 * x1
                - 2.272e-10 * x2 * x5
                - 4.751e-11 * x1 * x5
                + 5.167e-12 * x2 * x1 * x5
        }
    }
}

#[test]
fn predict_matches_term_by_term_sum() {
    let mut rng = stream_rng(8, 0);
    for device in Device::ALL {
        let model = load_paper_model(device);
        for _ in 0..10 {
            let x = in_range(&mut rng, device.family());
            let got = model.predict(&x).unwrap().seconds;
            let want = oracle(device, &x);
            let scale = want.abs().max(1e-300);
            assert!(
                (got - want).abs() / scale < 1e-12,
                "{device:?} at {x:?}: {got} vs {want}"
            );
        }
    }
}
