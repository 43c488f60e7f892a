use proptest::prelude::*;
use qpulse::inference::qubit_hypotheses;
use qpulse::*;

fn field_strategy() -> impl Strategy<Value = FieldSpec> {
    prop_oneof![
        (0usize..4).prop_map(FieldSpec::Fock),
        (0.0f64..1.5, -3.0f64..3.0).prop_map(|(r, phi)| FieldSpec::Coherent(C64::from_polar(r, phi))),
    ]
}

fn config(field: FieldSpec, gamma: f64, kappa: f64, detuning: f64) -> ModelConfig {
    let mut c = ModelConfig::with_field(field);
    c.gamma = gamma;
    c.kappa = kappa;
    c.detuning = detuning;
    c.dt = 0.005;
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // Excitations are only moved around: cavity + emitter + forward + side
    // stays at the initial photon number.
    #[test]
    fn excitation_budget_closes(
        field in field_strategy(),
        gamma in 0.3f64..2.0,
        kappa in 0.0f64..1.0,
        detuning in -1.0f64..1.0,
    ) {
        let n0 = field.mean_photons();
        let c = config(field, gamma, kappa, detuning);
        let m = Model::new(c).unwrap();
        let opts = MasterEquationOptions { stride: 100, checkpoints: vec![], validate_every: 500 };
        let sol = solve_master_equation(&m, &opts).unwrap();
        let s = &sol.series;
        for k in 0..s.t.len() {
            let total = s.photons[k] + s.excited[k] + s.integrated_flux[k] + s.side_loss[k];
            // atom starts in |1⟩, so the initial budget is the pulse alone
            prop_assert!((total - n0).abs() < 1e-3 * (1.0 + n0), "t={} total={total} n0={n0}", s.t[k]);
        }
        prop_assert!(sol.diagnostics.max_trace_drift <= 1e-10);
        prop_assert!(sol.diagnostics.max_hermiticity <= 1e-10);
        prop_assert!(sol.diagnostics.min_eigen_ratio >= -1e-8);
    }

    // Any record, possible or not, leaves a normalized posterior (or reports
    // that every filter died).
    #[test]
    fn posteriors_stay_normalized(
        clicks in proptest::collection::btree_set(1usize..=400, 0..6),
        prior in 0.05f64..0.95,
        kappa in 0.0f64..1.0,
    ) {
        let mut c = config(FieldSpec::Fock(3), 1.0, kappa, 0.0);
        c.dt = 0.025;
        let mut hyps = qubit_hypotheses();
        hyps[0].prior = prior;
        hyps[1].prior = 1.0 - prior;
        let record = MeasurementRecord::counting(c.dt, c.steps(), clicks.into_iter().collect()).unwrap();
        let mut bank = FilterBank::new(&c, hyps).unwrap();
        match bank.run_record(&record, 10) {
            Ok(series) => {
                for p in &series.posteriors {
                    let sum: f64 = p.iter().sum();
                    prop_assert!((sum - 1.0).abs() <= 1e-12);
                    prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
                }
                for q in &series.error_probability {
                    prop_assert!((0.0..=0.5 + 1e-12).contains(q));
                }
            }
            Err(e) => prop_assert!(matches!(e, Error::AllFiltersDead), "{e}"),
        }
    }

    // Arbitrary homodyne signals keep every filter state a valid density matrix.
    #[test]
    fn homodyne_filters_stay_physical(
        signal in proptest::collection::vec(-0.5f64..0.5, 400),
        phase in -3.2f64..3.2,
    ) {
        let mut c = config(FieldSpec::Fock(2), 1.0, 0.5, 0.0);
        c.dt = 0.025;
        c.detection = Detection::Homodyne { phase };
        let record = MeasurementRecord::homodyne(c.dt, phase, signal).unwrap();
        let mut bank = FilterBank::new(&c, qubit_hypotheses()).unwrap();
        bank.set_validate_every(20);
        let series = bank.run_record(&record, 40).unwrap();
        prop_assert!(bank.diagnostics().max_hermiticity <= 1e-10);
        prop_assert!(bank.diagnostics().min_eigen_ratio >= -1e-8);
        for p in &series.posteriors {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn ensemble_is_deterministic_for_a_fixed_seed() {
    let mut base = ModelConfig::with_field(FieldSpec::coherent_real(1.5));
    base.dt = 0.01;
    base.kappa = 0.5;
    let mut spec = EnsembleSpec::new(base, qubit_hypotheses());
    spec.n_trajectories = 6;
    spec.master_seed = 2024;
    spec.output_stride = 25;
    spec.validate_every = 50;
    let a = run_ensemble(&spec).unwrap();
    let b = run_ensemble(&spec).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.diagnostics.positivity_checks > 0);
    assert!(a.diagnostics.min_eigen_ratio >= -1e-8);
    spec.master_seed = 2025;
    let c = run_ensemble(&spec).unwrap();
    assert_ne!(a.to_csv(), c.to_csv());
}

// A filter state met in a lossy coherent run: nearly pure, with coherences
// down to 1e-169. The eigensolver used to report -inf on it.
#[test]
fn positivity_check_survives_tiny_coherences() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/near_pure_state.txt")).unwrap();
    let mut lines = text.lines();
    let dim: usize = lines.next().unwrap().parse().unwrap();
    let entries: Vec<C64> = lines
        .map(|l| {
            let (re, im) = l.split_once(' ').unwrap();
            C64::new(re.parse().unwrap(), im.parse().unwrap())
        })
        .collect();
    let m = ndarray::Array2::from_shape_vec((dim, dim), entries).unwrap();
    let rho = DensityMatrix::from_matrix(m, false).unwrap();
    let lambda = rho.min_eigenvalue();
    assert!(lambda.is_finite() && lambda > -1e-8, "{lambda}");
}
