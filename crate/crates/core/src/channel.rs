//! Free-space and in-waveguide channels, and the effective channels seen by
//! the beamformer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{cis, cplx, creal, czero, from_usize, lit, CMatrix, CVector, Cplx, Real};
use crate::scenario::{PinchingLayout, Placement, Point, ScenarioConfig};

/// Effective channels: column `k` of `user` is `G^H h(u_k)`, column `n` of
/// `sense` is the sensing channel of receive waveguide `n` with the
/// `sqrt(L alpha_s)` scale folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels<T: Real> {
    pub user: CMatrix<T>,
    pub sense: CMatrix<T>,
}

impl<T: Real> EffectiveChannels<T> {
    pub fn n_antennas(&self) -> usize {
        self.user.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.user.ncols()
    }

    pub fn n_sense(&self) -> usize {
        self.sense.ncols()
    }

    pub fn user_col(&self, k: usize) -> CVector<T> {
        self.user.column(k).into_owned()
    }

    pub fn sense_col(&self, n: usize) -> CVector<T> {
        self.sense.column(n).into_owned()
    }
}

/// Every channel quantity for one (placement, layout) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet<T: Real> {
    /// `h(u_k, Phi_t)`, one entry per transmit PA.
    pub h_user: Vec<CVector<T>>,
    pub h_tar_tx: Vec<CVector<T>>,
    /// `h(u_tar,k, Phi_r)`, one entry per receive PA (index `n * S + s`).
    pub h_tar_rx: Vec<CVector<T>>,
    /// Block-diagonal `(M S N_t) x N_t` in-waveguide matrix.
    pub g_t: CMatrix<T>,
    pub g_r: CVector<T>,
    /// `c_kn = sqrt(L alpha_s) * sum_s g_r(sn) h(u_tar,k, phi_r,sn)`, shape `K_s x N_r`.
    pub c_rx: CMatrix<T>,
    pub eff: EffectiveChannels<T>,
}

fn distance<T: Real>(p: &Point<T>, q: &Point<T>) -> T {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    let dz = p[2] - q[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// `sqrt(eta) * exp(-j k0 r) / r` with `r = |p - q|`.
pub fn free_space_coeff<T: Real>(p: &Point<T>, q: &Point<T>, config: &ScenarioConfig<T>) -> Result<Cplx<T>> {
    let r = distance(p, q);
    if !(r > T::zero()) {
        return Err(Error::CoincidentPoints);
    }
    Ok(cis(-config.wavenumber() * r) * (config.eta().sqrt() / r))
}

/// Coefficient between an antenna at `pa` and a point `uav`, together with
/// its derivative with respect to the antenna's x-coordinate.
pub fn free_space_coeff_dx<T: Real>(
    pa: &Point<T>,
    uav: &Point<T>,
    config: &ScenarioConfig<T>,
) -> Result<(Cplx<T>, Cplx<T>)> {
    let h = free_space_coeff(pa, uav, config)?;
    let r = distance(pa, uav);
    let dr_dx = (pa[0] - uav[0]) / r;
    let dh_dr = h * cplx(-T::one() / r, -config.wavenumber());
    Ok((h, dh_dr * dr_dx))
}

fn waveguide_loss<T: Real>(offset: T, config: &ScenarioConfig<T>) -> T {
    if config.include_waveguide_loss {
        lit::<T>(10.0).powf(-config.kappa_db_per_m * offset / lit(20.0))
    } else {
        T::one()
    }
}

/// In-waveguide propagation from the feed point to each PA of one segment,
/// including the `1/sqrt(M)` power split.
pub fn in_waveguide_vector<T: Real>(segment_xs: &[T], feed_x: T, config: &ScenarioConfig<T>) -> CVector<T> {
    let scale = T::one() / from_usize::<T>(segment_xs.len().max(1)).sqrt();
    DVector::from_iterator(
        segment_xs.len(),
        segment_xs.iter().map(|&x| in_waveguide_entry(x, feed_x, scale, config)),
    )
}

fn in_waveguide_entry<T: Real>(x: T, feed_x: T, scale: T, config: &ScenarioConfig<T>) -> Cplx<T> {
    let off = (x - feed_x).abs();
    cis(-config.guided_wavenumber() * off) * (scale * waveguide_loss(off, config))
}

/// Derivative of one in-waveguide entry with respect to the PA coordinate,
/// `g * (-j k_g - ln(10) kappa / 20)` for PAs at or beyond the feed point.
pub fn in_waveguide_entry_dx<T: Real>(g: Cplx<T>, x: T, feed_x: T, config: &ScenarioConfig<T>) -> Cplx<T> {
    let sign = if x < feed_x { -T::one() } else { T::one() };
    let loss_rate = if config.include_waveguide_loss {
        lit::<T>(10.0).ln() * config.kappa_db_per_m / lit(20.0)
    } else {
        T::zero()
    };
    g * cplx(-loss_rate, -config.guided_wavenumber()) * sign
}

/// Receive-side in-waveguide gain (pure phase, no power split).
pub fn receive_gain<T: Real>(x: T, feed_x: T, config: &ScenarioConfig<T>) -> Cplx<T> {
    in_waveguide_entry(x, feed_x, T::one(), config)
}

/// Transmit block-diagonal matrix `G`: only the selected segment of each
/// waveguide is fed; every other entry is an exact zero.
pub fn transmit_matrix<T: Real>(layout: &PinchingLayout<T>, config: &ScenarioConfig<T>) -> CMatrix<T> {
    let n_tx = layout.n_tx();
    let m_count = layout.pas_per_segment;
    let mut g = DMatrix::from_element(layout.tx_x.len(), n_tx, czero());
    for n in 0..n_tx {
        let s = layout.tx_selected_segment[n];
        let start = layout.tx_index(0, s, n);
        let block = in_waveguide_vector(&layout.tx_x[start..start + m_count], layout.tx_feed(s, n), config);
        for m in 0..m_count {
            g[(start + m, n)] = block[m];
        }
    }
    g
}

/// Free-space vector from every transmit PA to `point`.
pub fn tx_vector<T: Real>(layout: &PinchingLayout<T>, point: &Point<T>, config: &ScenarioConfig<T>) -> Result<CVector<T>> {
    let mut out = DVector::from_element(layout.tx_x.len(), czero());
    for n in 0..layout.n_tx() {
        for s in 0..layout.segments {
            for m in 0..layout.pas_per_segment {
                out[layout.tx_index(m, s, n)] = free_space_coeff(&layout.tx_point(m, s, n), point, config)?;
            }
        }
    }
    Ok(out)
}

pub fn rx_vector<T: Real>(layout: &PinchingLayout<T>, point: &Point<T>, config: &ScenarioConfig<T>) -> Result<CVector<T>> {
    let mut out = DVector::from_element(layout.rx_x.len(), czero());
    for n in 0..layout.n_rx() {
        for s in 0..layout.segments {
            out[layout.rx_index(s, n)] = free_space_coeff(&layout.rx_point(s, n), point, config)?;
        }
    }
    Ok(out)
}

/// Sensing channels from free-space target vectors, receive coefficients and `G`:
/// column `n` is `G^H sum_k conj(c_kn) h_tar,k`.
pub fn sensing_channels<T: Real>(h_tar_tx: &[CVector<T>], c_rx: &CMatrix<T>, g_t: &CMatrix<T>) -> CMatrix<T> {
    let n_rx = c_rx.ncols();
    let rows = g_t.nrows();
    let mut out = DMatrix::from_element(g_t.ncols(), n_rx, czero());
    for n in 0..n_rx {
        let mut t = DVector::from_element(rows, czero());
        for (k, h) in h_tar_tx.iter().enumerate() {
            t.axpy(c_rx[(k, n)].conj(), h, creal(T::one()));
        }
        out.set_column(n, &g_t.ad_mul(&t));
    }
    out
}

/// Receive coefficients `c_kn` for every target and receive waveguide.
pub fn receive_coefficients<T: Real>(
    layout: &PinchingLayout<T>,
    g_r: &CVector<T>,
    h_tar_rx: &[CVector<T>],
    config: &ScenarioConfig<T>,
) -> CMatrix<T> {
    let scale = config.sensing_scale();
    let mut c = DMatrix::from_element(h_tar_rx.len(), layout.n_rx(), czero());
    for (k, h) in h_tar_rx.iter().enumerate() {
        for n in 0..layout.n_rx() {
            let mut acc = czero();
            for s in 0..layout.segments {
                let i = layout.rx_index(s, n);
                acc += g_r[i] * h[i];
            }
            c[(k, n)] = acc * scale;
        }
    }
    c
}

pub fn receive_gains<T: Real>(layout: &PinchingLayout<T>, config: &ScenarioConfig<T>) -> CVector<T> {
    DVector::from_iterator(
        layout.rx_x.len(),
        layout.rx_x.iter().zip(&layout.rx_feed_x).map(|(&x, &x0)| receive_gain(x, x0, config)),
    )
}

/// Builds every channel quantity for a placement and a layout.
pub fn build_channels<T: Real>(
    placement: &Placement<T>,
    layout: &PinchingLayout<T>,
    config: &ScenarioConfig<T>,
) -> Result<ChannelSet<T>> {
    let h_user = placement
        .users
        .iter()
        .map(|u| tx_vector(layout, u, config))
        .collect::<Result<Vec<_>>>()?;
    let h_tar_tx = placement
        .targets
        .iter()
        .map(|u| tx_vector(layout, u, config))
        .collect::<Result<Vec<_>>>()?;
    let h_tar_rx = placement
        .targets
        .iter()
        .map(|u| rx_vector(layout, u, config))
        .collect::<Result<Vec<_>>>()?;
    let g_t = transmit_matrix(layout, config);
    let g_r = receive_gains(layout, config);
    let c_rx = receive_coefficients(layout, &g_r, &h_tar_rx, config);

    let mut user = DMatrix::from_element(layout.n_tx(), h_user.len(), czero());
    for (k, h) in h_user.iter().enumerate() {
        user.set_column(k, &g_t.ad_mul(h));
    }
    let sense = sensing_channels(&h_tar_tx, &c_rx, &g_t);
    Ok(ChannelSet {
        h_user,
        h_tar_tx,
        h_tar_rx,
        g_t,
        g_r,
        c_rx,
        eff: EffectiveChannels { user, sense },
    })
}
