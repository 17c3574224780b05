mod common;

use common::gradcheck::{cases, check_case};

#[test]
fn every_op_matches_central_differences() {
    for case in cases() {
        assert!(case.shapes.len() >= 3, "{} needs three shapes", case.name);
        for set in 0..case.shapes.len() {
            for seed in [1u64, 2] {
                let err = check_case(&case, set, seed, 1e-4).unwrap();
                assert!(err < 1e-4, "{} shape set {set} seed {seed}: rel err {err:e}", case.name);
            }
        }
    }
}
