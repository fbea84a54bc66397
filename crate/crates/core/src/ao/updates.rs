//! Closed-form receive-filter and MSE-weight updates.

use nalgebra::DMatrix;

use crate::channel::EffectiveChannels;
use crate::metrics::{hermitize, mse_matrix};
use crate::scalar::{creal, lit, norm2, CMatrix, CVector, Real};
use crate::scenario::ScenarioConfig;

/// `v_n = W^H a_n / (|a_n^H W|^2 + sigma_s^2)`.
pub fn update_receive_filters<T: Real>(
    w: &CMatrix<T>,
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
) -> Vec<CVector<T>> {
    (0..eff.n_sense())
        .map(|n| {
            let q = w.ad_mul(&eff.sense_col(n));
            let denom = norm2(&q) + config.sigma_s2;
            if denom > T::zero() {
                q / creal(denom)
            } else {
                q
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightUpdate<T: Real> {
    pub theta: Vec<CMatrix<T>>,
    /// True when some `E_n` needed the `1e-12` ridge to be inverted.
    pub regularized: bool,
}

/// Inverse of a Hermitian positive definite matrix, with a ridge fallback.
pub fn inverse_hpd<T: Real>(m: &CMatrix<T>) -> (CMatrix<T>, bool) {
    let n = m.nrows();
    let try_inv = |a: &CMatrix<T>| a.clone().cholesky().map(|c| c.inverse());
    let (mut inv, ridged) = match try_inv(m) {
        Some(inv) => (inv, false),
        None => {
            let ridge = DMatrix::identity(n, n) * creal(lit::<T>(1e-12));
            match try_inv(&(m + &ridge)) {
                Some(inv) => (inv, true),
                None => (DMatrix::identity(n, n), true),
            }
        }
    };
    hermitize(&mut inv);
    (inv, ridged)
}

/// `Theta_n = E_n^{-1}`.
pub fn update_weights<T: Real>(
    w: &CMatrix<T>,
    v: &[CVector<T>],
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
) -> WeightUpdate<T> {
    let mut regularized = false;
    let theta = (0..eff.n_sense())
        .map(|n| {
            let e = mse_matrix(n, w, &v[n], eff, config);
            let (inv, ridged) = inverse_hpd(&e);
            regularized |= ridged;
            inv
        })
        .collect();
    WeightUpdate { theta, regularized }
}
