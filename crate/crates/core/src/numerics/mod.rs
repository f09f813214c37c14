//! Dense-array substrate shared by every other module.

mod array;
mod diff;
mod eigen;
mod pca;
mod rng;

pub use array::{dot, matmul, norm2, Array};
pub use diff::{directional_diff, extrapolated_diff, finite_diff, DEFAULT_STEP};
pub use eigen::{sym_eigenvalues, MAX_EIGEN_DIM};
pub use pca::{pca_project, PcaProjection};
pub use rng::Rng;

#[cfg(test)]
mod proptests {
    use super::{matmul, Rng};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matmul_is_associative(seed in any::<u64>(), r in 1usize..6, k in 1usize..6, l in 1usize..6, c in 1usize..6) {
            let mut rng = Rng::new(seed);
            let a = rng.normal_array(&[r, k]);
            let b = rng.normal_array(&[k, l]);
            let cm = rng.normal_array(&[l, c]);
            let left = matmul(&matmul(&a, &b).unwrap(), &cm).unwrap();
            let right = matmul(&a, &matmul(&b, &cm).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            prop_assert!(left.max_abs_diff(&right) <= 1e-10 * scale);
        }
    }
}
