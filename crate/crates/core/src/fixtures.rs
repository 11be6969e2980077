//! Data of the scalar running example.

use nalgebra::DVector;

use crate::data::{build_hankel_state, sample_state_columns, ColumnSample, DataMatrix, SystemModel};
use crate::error::Result;

/// Recorded state sequence for the one-step horizon.
pub const X_D1: [f64; 5] = [-0.1941, 0.0048, -0.2145, -0.5427, -1.3683];
/// Recorded input sequence for the one-step horizon.
pub const U_D1: [f64; 4] = [-0.7859, 0.4483, 0.2274, 0.5659];
/// Additional samples appended for the two-step horizon.
pub const X_D2_TAIL: [f64; 2] = [-3.1384, -5.9759];
pub const U_D2_TAIL: [f64; 2] = [0.8037, -0.6017];

/// Measurement noise standard deviation of the running example.
pub const EXAMPLE_NOISE_STD: f64 = 0.1;
pub const EXAMPLE_SAMPLES: usize = 500;

fn scalars(v: &[f64]) -> Vec<DVector<f64>> {
    v.iter().map(|&x| DVector::from_element(1, x)).collect()
}

pub fn x_d2() -> Vec<f64> {
    X_D1.iter().chain(X_D2_TAIL.iter()).copied().collect()
}

pub fn u_d2() -> Vec<f64> {
    U_D1.iter().chain(U_D2_TAIL.iter()).copied().collect()
}

/// State-space Hankel matrix with `N_f = 1` (3 x 4).
pub fn hankel_nf1() -> Result<DataMatrix> {
    build_hankel_state(&scalars(&U_D1), &scalars(&X_D1), 1)
}

/// State-space Hankel matrix with `N_f = 2` (5 x 5).
pub fn hankel_nf2() -> Result<DataMatrix> {
    build_hankel_state(&scalars(&u_d2()), &scalars(&x_d2()), 2)
}

/// 500 i.i.d. columns `(x0, u, x1)`, exact and with measurement noise.
pub fn cloud(seed: u64) -> Result<ColumnSample> {
    let model = SystemModel::scalar_example().with_noise(EXAMPLE_NOISE_STD)?;
    sample_state_columns(&model, EXAMPLE_SAMPLES, 1, seed)
}
