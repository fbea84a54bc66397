//! Closed-form message aggregation along the hyper-links of the graph.
//!
//! These are the objective derivatives with respect to the raw channels when
//! the sensing chain recovers its signal exactly and the sensing noise is
//! negligible, so that `Theta_n (v_n - q_n v_n^H Theta_n v_n)` collapses to a
//! scalar multiple of `v_n`.

use nalgebra::{DMatrix, DVector};

use crate::ao::Gradients;
use crate::channel::{free_space_coeff_dx, in_waveguide_entry_dx, EffectiveChannels};
use crate::error::Result;
use crate::gnn::GraphState;
use crate::metrics::gram;
use crate::scalar::{creal, czero, dotc, CMatrix, CVector, Cplx, Real};
use crate::scenario::{Placement, ScenarioConfig};

/// Messages with the sensing prefactor dropped (set to one).
pub fn approx_gradients<T: Real>(state: &GraphState<T>, config: &ScenarioConfig<T>) -> Gradients<T> {
    approx_gradients_scaled(state, config, T::one())
}

/// Messages with an explicit prefactor on the sensing terms.
pub fn approx_gradients_scaled<T: Real>(state: &GraphState<T>, config: &ScenarioConfig<T>, prefactor: T) -> Gradients<T> {
    let ch = &state.channels;
    let g_t = &ch.g_t;
    let rows = g_t.nrows();
    let wv: Vec<CVector<T>> = state.v.iter().map(|v| &state.w * v * creal(prefactor)).collect();

    let mut h_tar = vec![DVector::from_element(rows, czero()); ch.h_tar_tx.len()];
    let mut d_g = DMatrix::from_element(rows, g_t.ncols(), czero());
    for (n, y) in wv.iter().enumerate() {
        let gy = g_t * y;
        let mut t = DVector::from_element(rows, czero());
        for (k, h) in ch.h_tar_tx.iter().enumerate() {
            let c = ch.c_rx[(k, n)];
            h_tar[k] -= &gy * c;
            t.axpy(c.conj(), h, creal(T::one()));
        }
        d_g -= t * y.adjoint();
    }

    let k_users = state.w.ncols();
    let mut h_user = vec![DVector::from_element(rows, czero()); k_users];
    for k in 0..k_users {
        let scale = state.beta[k] / config.sigma_c2;
        let mut acc = DVector::from_element(state.w.nrows(), czero());
        for j in 0..k_users {
            acc.axpy(state.mui[(k, j)].conj() * scale, &state.w.column(j).into_owned(), creal(T::one()));
        }
        h_user[k] = g_t * &acc;
        d_g += &ch.h_user[k] * acc.adjoint();
    }
    Gradients { h_tar, g: d_g, h_user }
}

/// Chain-rule scalars feeding the position updaters.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionMessages<T: Real> {
    /// Per transmit PA: target, in-waveguide and user contributions.
    pub tx: Vec<[Cplx<T>; 3]>,
    /// Per receive PA.
    pub rx: Vec<Cplx<T>>,
}

/// Projects the channel messages onto every PA coordinate. Twice the real
/// part of the sum of the three transmit terms (or of the receive term) is
/// the approximate derivative with respect to that coordinate.
pub fn position_messages<T: Real>(
    state: &GraphState<T>,
    placement: &Placement<T>,
    config: &ScenarioConfig<T>,
) -> Result<PositionMessages<T>> {
    let grads = approx_gradients(state, config);
    let layout = &state.layout;
    let ch = &state.channels;
    let mut tx = vec![[czero(); 3]; layout.tx_x.len()];
    for n in 0..layout.n_tx() {
        let s = layout.tx_selected_segment[n];
        let feed = layout.tx_feed(s, n);
        for m in 0..layout.pas_per_segment {
            let i = layout.tx_index(m, s, n);
            let p = layout.tx_point(m, s, n);
            let mut m1 = czero();
            for (k, u) in placement.targets.iter().enumerate() {
                let (_, dh) = free_space_coeff_dx(&p, u, config)?;
                m1 += grads.h_tar[k][i].conj() * dh;
            }
            let m2 = grads.g[(i, n)].conj() * in_waveguide_entry_dx(ch.g_t[(i, n)], p[0], feed, config);
            let mut m3 = czero();
            for (k, u) in placement.users.iter().enumerate() {
                let (_, dh) = free_space_coeff_dx(&p, u, config)?;
                m3 += grads.h_user[k][i].conj() * dh;
            }
            tx[i] = [m1, m2, m3];
        }
    }

    let b: Vec<CVector<T>> = ch.h_tar_tx.iter().map(|h| ch.g_t.ad_mul(h)).collect();
    let wv: Vec<CVector<T>> = state.v.iter().map(|v| &state.w * v).collect();
    let scale = config.sensing_scale();
    let mut rx = vec![czero(); layout.rx_x.len()];
    for n in 0..layout.n_rx() {
        for s in 0..layout.segments {
            let i = layout.rx_index(s, n);
            let p = layout.rx_point(s, n);
            let g = ch.g_r[i];
            let dg = in_waveguide_entry_dx(g, p[0], layout.rx_feed_x[i], config);
            let mut acc = czero();
            for (k, u) in placement.targets.iter().enumerate() {
                let (h, dh) = free_space_coeff_dx(&p, u, config)?;
                acc -= dotc(&b[k], &wv[n]) * (dg * h + g * dh) * creal(scale);
            }
            rx[i] = acc;
        }
    }
    Ok(PositionMessages { tx, rx })
}

/// `sum_j (h_k^H w_j) B_jk` for every user, with `B` the MUI matrix.
pub fn beta_messages<T: Real>(w: &CMatrix<T>, eff: &EffectiveChannels<T>, mui: &CMatrix<T>) -> Vec<Cplx<T>> {
    let g = gram(w, eff);
    (0..w.ncols())
        .map(|k| (0..w.ncols()).fold(czero(), |acc, j| acc + g[(k, j)] * mui[(j, k)]))
        .collect()
}

/// `(W^H a_n)_k`, shape `N_r x K_c`.
pub fn sensing_aggregation<T: Real>(w: &CMatrix<T>, eff: &EffectiveChannels<T>) -> CMatrix<T> {
    w.ad_mul(&eff.sense).transpose()
}
