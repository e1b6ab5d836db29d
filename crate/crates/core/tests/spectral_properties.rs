use lambda_garch::spectral::{
    eigen_sym, givens_angles, givens_product, sample_covariance, shifted_pseudo_inverse, CovMatrix, RotationAngles,
    SpectralTarget,
};
use lambda_garch::ReturnPanel;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn orthonormality_error(v: &DMatrix<f64>) -> f64 {
    let p = v.nrows();
    (v.transpose() * v - DMatrix::identity(p, p)).amax()
}

prop_compose! {
    fn target(max_p: usize)(p in 1..=max_p)(
        angles in prop::collection::vec(-3.0f64..3.0, p * (p - 1) / 2),
        gaps in prop::collection::vec(0.05f64..2.0, p),
        p in Just(p),
    ) -> SpectralTarget {
        let v = givens_product(&RotationAngles(angles), p).unwrap();
        let mut acc = 0.0;
        let lambda = DVector::from_iterator(p, gaps.iter().map(|g| { acc += g; acc }));
        SpectralTarget::from_parts(lambda, v).unwrap()
    }
}

proptest! {
    #[test]
    fn eigen_round_trip(t in target(6)) {
        let h = t.reconstruct();
        let back = eigen_sym(&CovMatrix::new((&h + h.transpose()) * 0.5).unwrap()).unwrap();
        prop_assert!((back.lambda() - t.lambda()).amax() < 1e-8);
        prop_assert!((back.eigenvectors() - t.eigenvectors()).amax() < 1e-8);
    }

    #[test]
    fn givens_product_is_orthonormal(p in 1usize..8, seed in prop::collection::vec(-50.0f64..50.0, 28)) {
        let angles = RotationAngles(seed[..p * (p - 1) / 2].to_vec());
        let v = givens_product(&angles, p).unwrap();
        prop_assert!(orthonormality_error(&v) < 1e-12);
        prop_assert!((v.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn givens_angles_invert_the_product(p in 2usize..6, raw in prop::collection::vec(0.05f64..1.5, 10)) {
        let angles = RotationAngles(raw[..p * (p - 1) / 2].to_vec());
        let v = givens_product(&angles, p).unwrap();
        let back = givens_product(&givens_angles(&v).unwrap(), p).unwrap();
        prop_assert!((back - v).amax() < 1e-10);
    }

    #[test]
    fn sample_covariance_matches_nested_loops(vals in prop::collection::vec(-5.0f64..5.0, 30)) {
        let panel = ReturnPanel::from_matrix(DMatrix::from_row_slice(10, 3, &vals)).unwrap();
        let h = sample_covariance(&panel).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let mut s = 0.0;
                for t in 0..10 {
                    s += vals[t * 3 + r] * vals[t * 3 + c];
                }
                s /= 10.0;
                let got = h.matrix()[(r, c)];
                prop_assert!((got - s).abs() <= 1e-14 * s.abs().max(1e-300) + 1e-300, "({r},{c}) {got} vs {s}");
            }
        }
    }

    #[test]
    fn shifted_pseudo_inverse_penrose_conditions(t in target(5), pick in 0usize..5) {
        let h = CovMatrix::new({ let m = t.reconstruct(); (&m + m.transpose()) * 0.5 }).unwrap();
        let i = pick % t.dim();
        let a = DMatrix::identity(t.dim(), t.dim()) * t.lambda()[i] - h.matrix();
        let ap = shifted_pseudo_inverse(&h, t.lambda()[i]).unwrap();
        prop_assert!((&a * &ap * &a - &a).amax() < 1e-8);
        prop_assert!((&ap * &a * &ap - &ap).amax() < 1e-8);
        let aap = &a * &ap;
        let apa = &ap * &a;
        prop_assert!((&aap - aap.transpose()).amax() < 1e-8);
        prop_assert!((&apa - apa.transpose()).amax() < 1e-8);
    }
}

#[test]
fn eigenvector_block_has_kronecker_form() {
    // d vec(V) / d vec(H) by finite differences equals the stacked
    // v_j' ⊗ (lambda_j I - H)^+ blocks
    let t = SpectralTarget::from_parts(
        DVector::from_vec(vec![0.5, 1.2, 2.0]),
        givens_product(&RotationAngles(vec![0.4, 0.3, 0.7]), 3).unwrap(),
    )
    .unwrap();
    let h = t.reconstruct();
    let p = 3;
    let step = 1e-6;
    for r in 0..p {
        for c in r..p {
            let mut dh = DMatrix::zeros(p, p);
            dh[(r, c)] = step;
            dh[(c, r)] = step;
            let up = eigen_sym(&CovMatrix::new(&h + &dh).unwrap()).unwrap();
            let dn = eigen_sym(&CovMatrix::new(&h - &dh).unwrap()).unwrap();
            let numeric = (up.eigenvectors() - dn.eigenvectors()) / (2.0 * step);
            for j in 0..p {
                let pinv = shifted_pseudo_inverse(&CovMatrix::new(h.clone()).unwrap(), t.lambda()[j]).unwrap();
                let analytic = &pinv * (&dh / step) * t.eigenvectors().column(j);
                let diff = (numeric.column(j) - analytic).amax();
                assert!(diff < 1e-6, "H({r},{c}) column {j}: {diff}");
            }
        }
    }
}

#[test]
fn repeated_eigenvalues_warn() {
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0 + 1e-12, 3.0]));
    let t = eigen_sym(&CovMatrix::new(h).unwrap()).unwrap();
    assert!(t.has_near_repeated());
}
