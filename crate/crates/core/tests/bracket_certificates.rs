use cascade_core::hormander::{depth_cap, verify_span, DEFAULT_RANK_TOL};
use cascade_core::ShellParams;

#[test]
fn certificates_up_to_five_shells() {
    for &c in &[1.0, 1.5, 2.0] {
        let params = ShellParams::new(1.0, c, 1.0, 8).unwrap();
        let mut last_m = 0;
        for n_target in 0..=5 {
            let cert = verify_span(&params, n_target, 7, depth_cap(n_target), DEFAULT_RANK_TOL).unwrap();
            assert!(cert.passed, "{cert:?}");
            assert_eq!(cert.achieved_rank, n_target + 1);
            assert_eq!(cert.witness.len(), cert.achieved_rank);
            assert!(cert.m >= last_m);
            assert!(cert.m <= depth_cap(n_target));
            last_m = cert.m;
        }
    }
}

#[test]
fn deepest_witness_matches_exact_integer_cascade() {
    // For c = 1 every coefficient is an integer; these come from the same
    // cascade evaluated in exact arithmetic on shells 0..=7.
    #[allow(clippy::excessive_precision)]
    let exact = [
        0.0,
        1.09864030906773166249728843014209536e41,
        -8.4142048055447599132200274564743168e40,
        1.141785590242133077578624904112111616e41,
        -1.56373416881524889243220719658074112e41,
        1.60441886336826811653860829954048e41,
    ];
    let norm = exact.iter().map(|x| x * x).sum::<f64>().sqrt();
    let params = ShellParams::new(1.0, 1.0, 1.0, 8).unwrap();
    let cert = verify_span(&params, 5, 7, depth_cap(5), DEFAULT_RANK_TOL).unwrap();
    assert_eq!(cert.witness[5], "[e0, F^7, e0^7, F^8, e0^8, F^16, e0^16]");
    for (got, want) in cert.constants[5].iter().zip(exact) {
        assert!((got - want / norm).abs() < 1e-9, "{got} vs {}", want / norm);
    }
}
