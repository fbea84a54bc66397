//! Analytic derivatives of the penalized WMMSE objective with respect to the
//! raw channels, and the chain rule to PA coordinates.
//!
//! Complex derivatives are conjugate Wirtinger derivatives `dF/dz*`; the real
//! gradient with respect to `(Re z, Im z)` is `2 (Re, Im)` of these.

use nalgebra::{DMatrix, DVector};

use crate::channel::{free_space_coeff_dx, in_waveguide_entry_dx, sensing_channels, ChannelSet, EffectiveChannels};
use crate::error::Result;
use crate::metrics::{mui_matrix, BeamformingState};
use crate::scalar::{creal, czero, dotc, lit, CMatrix, CVector, Real};
use crate::scenario::{Placement, PinchingLayout, ScenarioConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Real> {
    /// With respect to `h(u_tar,k, Phi_t)`, one vector per target.
    pub h_tar: Vec<CVector<T>>,
    /// With respect to the full `(M S N_t) x N_t` in-waveguide matrix.
    pub g: CMatrix<T>,
    /// With respect to `h(u_k, Phi_t)`, one vector per user.
    pub h_user: Vec<CVector<T>>,
}

/// `y_n = W (Theta_n v_n - q_n (v_n^H Theta_n v_n))` with `q_n = W^H a_n`.
pub(crate) fn sensing_directions<T: Real>(state: &BeamformingState<T>, eff: &EffectiveChannels<T>) -> Vec<CVector<T>> {
    (0..eff.n_sense())
        .map(|n| {
            let q = state.w.ad_mul(&eff.sense_col(n));
            let tv = &state.theta[n] * &state.v[n];
            let c = dotc(&state.v[n], &tv);
            &state.w * (tv - q * c)
        })
        .collect()
}

/// Derivatives of `L - sum_k mu_k qos_margin_k` where `L` is the WMMSE
/// objective at fixed `(W, V, Theta)` and `c_rx` is held fixed.
pub fn full_gradients<T: Real>(
    state: &BeamformingState<T>,
    channels: &ChannelSet<T>,
    config: &ScenarioConfig<T>,
    mu: &[T],
) -> Result<Gradients<T>> {
    let eff = &channels.eff;
    let g_t = &channels.g_t;
    let y = sensing_directions(state, eff);
    let rows = g_t.nrows();

    let mut d_g = DMatrix::from_element(rows, g_t.ncols(), czero());
    let mut h_tar = vec![DVector::from_element(rows, czero()); channels.h_tar_tx.len()];
    for (n, y_n) in y.iter().enumerate() {
        let gy = g_t * y_n;
        let mut t = DVector::from_element(rows, czero());
        for (k, h) in channels.h_tar_tx.iter().enumerate() {
            let c = channels.c_rx[(k, n)];
            h_tar[k] -= &gy * c;
            t.axpy(c.conj(), h, creal(T::one()));
        }
        d_g -= t * y_n.adjoint();
    }

    let k_users = eff.n_users();
    let mut h_user = vec![DVector::from_element(rows, czero()); k_users];
    if k_users > 0 && mu.iter().any(|m| *m != T::zero()) {
        let b = mui_matrix(&state.w, eff, config);
        for k in 0..k_users {
            let scale = mu[k] / config.sigma_c2;
            if scale == T::zero() {
                continue;
            }
            // sum_j w_j conj(B_kj)
            let mut acc = DVector::from_element(eff.n_antennas(), czero());
            for j in 0..k_users {
                acc.axpy(b[(k, j)].conj(), &state.w.column(j).into_owned(), creal(T::one()));
            }
            let acc = acc * creal(scale);
            h_user[k] = g_t * &acc;
            d_g += &channels.h_user[k] * acc.adjoint();
        }
    }
    Ok(Gradients { h_tar, g: d_g, h_user })
}

/// Derivatives of the same objective with respect to every transmit and
/// receive PA coordinate. Unfed transmit PAs get zero.
pub fn position_gradients<T: Real>(
    state: &BeamformingState<T>,
    layout: &PinchingLayout<T>,
    placement: &Placement<T>,
    channels: &ChannelSet<T>,
    config: &ScenarioConfig<T>,
    mu: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let grads = full_gradients(state, channels, config, mu)?;
    let two = lit::<T>(2.0);
    let m_count = layout.pas_per_segment;
    let mut d_tx = vec![T::zero(); layout.tx_x.len()];
    for n in 0..layout.n_tx() {
        let s = layout.tx_selected_segment[n];
        let feed = layout.tx_feed(s, n);
        for m in 0..m_count {
            let i = layout.tx_index(m, s, n);
            let p = layout.tx_point(m, s, n);
            let mut acc = czero();
            for (k, u) in placement.users.iter().enumerate() {
                let (_, dh) = free_space_coeff_dx(&p, u, config)?;
                acc += grads.h_user[k][i].conj() * dh;
            }
            for (k, u) in placement.targets.iter().enumerate() {
                let (_, dh) = free_space_coeff_dx(&p, u, config)?;
                acc += grads.h_tar[k][i].conj() * dh;
            }
            let dg = in_waveguide_entry_dx(channels.g_t[(i, n)], p[0], feed, config);
            acc += grads.g[(i, n)].conj() * dg;
            d_tx[i] = two * acc.re;
        }
    }

    // receive side: L depends on c_kn through a_n = sum_k conj(c_kn) G^H h_tar,k
    let y = sensing_directions(state, &channels.eff);
    let b: Vec<CVector<T>> = channels.h_tar_tx.iter().map(|h| channels.g_t.ad_mul(h)).collect();
    let scale = config.sensing_scale();
    let mut d_rx = vec![T::zero(); layout.rx_x.len()];
    for n in 0..layout.n_rx() {
        for s in 0..layout.segments {
            let i = layout.rx_index(s, n);
            let p = layout.rx_point(s, n);
            let g = channels.g_r[i];
            let dg = in_waveguide_entry_dx(g, p[0], layout.rx_feed_x[i], config);
            let mut acc = czero();
            for (k, u) in placement.targets.iter().enumerate() {
                let (h, dh) = free_space_coeff_dx(&p, u, config)?;
                let dc = (dg * h + g * dh) * creal(scale);
                acc -= dotc(&b[k], &y[n]) * dc;
            }
            d_rx[i] = two * acc.re;
        }
    }
    Ok((d_tx, d_rx))
}

/// The penalized objective evaluated directly from raw channels, for
/// derivative checks.
pub fn penalized_from_raw<T: Real>(
    state: &BeamformingState<T>,
    h_user: &[CVector<T>],
    h_tar_tx: &[CVector<T>],
    c_rx: &CMatrix<T>,
    g_t: &CMatrix<T>,
    config: &ScenarioConfig<T>,
    mu: &[T],
) -> Result<T> {
    let mut user = DMatrix::from_element(g_t.ncols(), h_user.len(), czero());
    for (k, h) in h_user.iter().enumerate() {
        user.set_column(k, &g_t.ad_mul(h));
    }
    let eff = EffectiveChannels { user, sense: sensing_channels(h_tar_tx, c_rx, g_t) };
    crate::metrics::penalized_objective(state, &eff, config, mu)
}
