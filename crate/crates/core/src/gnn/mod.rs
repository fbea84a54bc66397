//! Graph-network inference: per-layer position and structure-variable updates
//! driven by closed-form message aggregation, and the final beamformer
//! rebuilt from the learned structure parameters.

pub mod fnn;
pub mod messages;
pub mod weights;

use nalgebra::DMatrix;

use crate::ao::{matched_filter, reconstruct_beamformer, select_segments, update_receive_filters, update_weights};
use crate::channel::{build_channels, ChannelSet, EffectiveChannels};
use crate::error::{Error, Result};
use crate::metrics::{mui_matrix, BeamformingState};
use crate::perm::PermutationTuple;
use crate::scalar::{cabs, cplx, creal, czero, fro2, from_usize, norm2, CMatrix, CVector, Cplx, Real};
use crate::scenario::{project_layout, PinchingLayout, Placement, ScenarioConfig};

pub use fnn::fnn_forward;
pub use messages::{approx_gradients, approx_gradients_scaled, beta_messages, position_messages, sensing_aggregation};
pub use weights::{
    load_weights, load_weights_file, save_weights, save_weights_file, Activation, Dense, Fnn, GnnDims, GnnWeights,
    LayerWeights, Updater,
};

/// Variables carried from one layer to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphState<T: Real> {
    pub layer: usize,
    pub layout: PinchingLayout<T>,
    pub channels: ChannelSet<T>,
    pub w: CMatrix<T>,
    pub v: Vec<CVector<T>>,
    pub theta: Vec<CMatrix<T>>,
    pub beta: Vec<T>,
    /// Sensing coefficients in channel-normalized units, `N_r x K_c`;
    /// see [`physical_xi`].
    pub xi: CMatrix<T>,
    pub p: Vec<T>,
    /// MUI matrix of `(W, channels)`.
    pub mui: CMatrix<T>,
}

impl<T: Real> GraphState<T> {
    /// Standard initialization on `layout`: segments reselected, matched
    /// filters, closed-form receive filters, `beta = 1`, `Xi = 0`, equal powers.
    pub fn initial(placement: &Placement<T>, layout: &PinchingLayout<T>, config: &ScenarioConfig<T>) -> Result<Self> {
        let mut layout = project_layout(layout, config)?;
        layout.tx_selected_segment = select_segments(placement, &layout, config)?;
        let channels = build_channels(placement, &layout, config)?;
        let eff = &channels.eff;
        let k_users = eff.n_users();
        let w = matched_filter(eff, config.p_max);
        let v = update_receive_filters(&w, eff, config);
        let theta = update_weights(&w, &v, eff, config).theta;
        let mui = mui_matrix(&w, eff, config);
        Ok(Self {
            layer: 0,
            xi: DMatrix::from_element(eff.n_sense(), k_users, czero()),
            beta: vec![T::one(); k_users],
            p: vec![config.p_max / from_usize(k_users.max(1)); k_users],
            layout,
            channels,
            w,
            v,
            theta,
            mui,
        })
    }

    pub fn beamforming(&self) -> BeamformingState<T> {
        BeamformingState {
            w: self.w.clone(),
            v: self.v.clone(),
            theta: self.theta.clone(),
            p: self.p.clone(),
            beta: self.beta.clone(),
            xi: physical_xi(&self.xi, &self.channels.eff),
            nu: T::one(),
        }
    }
}

/// `xi_nk = xi_hat_nk * |h_k| / |a_n|`, zero where `a_n` vanishes.
pub fn physical_xi<T: Real>(xi_hat: &CMatrix<T>, eff: &EffectiveChannels<T>) -> CMatrix<T> {
    let hn: Vec<T> = (0..eff.n_users()).map(|k| norm2(&eff.user_col(k)).sqrt()).collect();
    let an: Vec<T> = (0..eff.n_sense()).map(|n| norm2(&eff.sense_col(n)).sqrt()).collect();
    DMatrix::from_fn(xi_hat.nrows(), xi_hat.ncols(), |n, k| {
        if an[n] > T::zero() {
            xi_hat[(n, k)] * creal(hn[k] / an[n])
        } else {
            czero()
        }
    })
}

/// Largest modulus in a family, or one when the family is identically zero.
fn family_scale<'a, T: Real + 'a>(values: impl IntoIterator<Item = &'a Cplx<T>>) -> T {
    let s = values.into_iter().fold(T::zero(), |acc, z| acc.max(cabs(*z)));
    if s > T::zero() && s.is_finite() {
        s
    } else {
        T::one()
    }
}

fn push_c<T: Real>(buf: &mut Vec<T>, z: Cplx<T>) {
    buf.push(z.re);
    buf.push(z.im);
}

fn scalar_out<T: Real>(f: &Fnn<T>, input: &[T]) -> Result<T> {
    Ok(fnn_forward(f, input)?[0])
}

fn complex_out<T: Real>(f: &Fnn<T>, input: &[T]) -> Result<Cplx<T>> {
    let o = fnn_forward(f, input)?;
    Ok(cplx(o[0], o[1]))
}

/// Position updates: transmit PAs through cumulative gaps inside the free
/// length of each segment, receive PAs through the unit box of theirs.
fn update_positions<T: Real>(
    state: &GraphState<T>,
    lw: &LayerWeights<T>,
    placement: &Placement<T>,
    config: &ScenarioConfig<T>,
) -> Result<PinchingLayout<T>> {
    let msgs = position_messages(state, placement, config)?;
    let scales: Vec<T> = (0..3).map(|f| family_scale(msgs.tx.iter().map(|m| &m[f]))).collect();
    let rx_scale = family_scale(msgs.rx.iter());

    let layout = &state.layout;
    let seg = config.segment_length();
    let m_count = layout.pas_per_segment;
    let mf = from_usize::<T>(m_count);
    let free = seg - from_usize::<T>(m_count.saturating_sub(1)) * config.delta_min;
    let mut out = layout.clone();
    let mut buf = Vec::with_capacity(7);
    for n in 0..layout.n_tx() {
        for s in 0..layout.segments {
            let x0 = layout.tx_feed(s, n);
            let mut prev = T::zero();
            let mut cum = T::zero();
            for m in 0..m_count {
                let i = layout.tx_index(m, s, n);
                let offset = x0 + from_usize::<T>(m) * config.delta_min;
                let frac = if free > T::zero() { (layout.tx_x[i] - offset) / free } else { T::zero() };
                buf.clear();
                buf.push(mf * (frac - prev));
                prev = frac;
                for (f, scale) in scales.iter().enumerate() {
                    push_c(&mut buf, msgs.tx[i][f] / creal(*scale));
                }
                cum += scalar_out(&lw.f_t, &buf)?;
                out.tx_x[i] = offset + free * cum / mf;
            }
        }
    }
    for i in 0..layout.rx_x.len() {
        let x0 = layout.rx_feed_x[i];
        buf.clear();
        buf.push((layout.rx_x[i] - x0) / seg);
        push_c(&mut buf, msgs.rx[i] / creal(rx_scale));
        out.rx_x[i] = x0 + seg * scalar_out(&lw.f_r, &buf)?;
    }
    let mut out = project_layout(&out, config)?;
    out.tx_selected_segment = select_segments(placement, &out, config)?;
    Ok(out)
}

/// One message-passing layer.
pub fn layer_forward<T: Real>(
    state: &GraphState<T>,
    lw: &LayerWeights<T>,
    placement: &Placement<T>,
    config: &ScenarioConfig<T>,
) -> Result<GraphState<T>> {
    let layout = update_positions(state, lw, placement, config)?;
    let channels = build_channels(placement, &layout, config)?;
    let eff = &channels.eff;
    let k_users = eff.n_users();
    let n_rx = eff.n_sense();
    let w = &state.w;

    let mui = mui_matrix(w, eff, config);
    let mb = beta_messages(w, eff, &mui);
    let mb_scale = family_scale(mb.iter());
    let mb: Vec<Cplx<T>> = mb.iter().map(|z| *z / creal(mb_scale)).collect();
    let agg = sensing_aggregation(w, eff);
    let agg = &agg / creal(family_scale(agg.iter()));

    let mut buf = Vec::with_capacity(6);
    let mut beta = Vec::with_capacity(k_users);
    let mut p_raw = Vec::with_capacity(k_users);
    let kf = from_usize::<T>(k_users.max(1));
    for k in 0..k_users {
        buf.clear();
        buf.push(state.beta[k]);
        push_c(&mut buf, mb[k]);
        beta.push(scalar_out(&lw.f_beta, &buf)?.max(T::zero()));
        buf[0] = kf * state.p[k] / config.p_max;
        p_raw.push(scalar_out(&lw.f_p, &buf)?.max(T::zero()));
    }
    let total = p_raw.iter().fold(T::zero(), |a, b| a + *b);
    let p: Vec<T> = if total > T::zero() && total.is_finite() {
        p_raw.iter().map(|x| config.p_max * *x / total).collect()
    } else {
        vec![config.p_max / kf; k_users]
    };

    let mut xi = DMatrix::from_element(n_rx, k_users, czero());
    for n in 0..n_rx {
        for k in 0..k_users {
            buf.clear();
            push_c(&mut buf, state.xi[(n, k)]);
            push_c(&mut buf, mb[k]);
            push_c(&mut buf, agg[(n, k)]);
            xi[(n, k)] = complex_out(&lw.f_xi, &buf)?;
        }
    }

    let v_scale = family_scale(state.v.iter().flat_map(|v| v.iter()));
    let mut v = state.v.clone();
    for n in 0..n_rx {
        for k in 0..k_users {
            buf.clear();
            push_c(&mut buf, state.v[n][k] / creal(v_scale));
            push_c(&mut buf, agg[(n, k)]);
            v[n][k] = complex_out(&lw.f_v, &buf)? * creal(v_scale);
        }
    }

    let theta = update_weights(w, &v, eff, config).theta;
    let mut w_next = reconstruct_beamformer(&p, &beta, &physical_xi(&xi, eff), T::one(), eff, &v, &theta, config)?;
    normalize_power(&mut w_next, config.p_max);
    let mui = mui_matrix(&w_next, eff, config);
    Ok(GraphState {
        layer: state.layer + 1,
        layout,
        w: w_next,
        v,
        theta,
        beta,
        xi,
        p,
        mui,
        channels,
    })
}

fn normalize_power<T: Real>(w: &mut CMatrix<T>, p_max: T) {
    let f = fro2(w);
    if f > T::zero() {
        *w *= creal((p_max / f).sqrt());
    }
}

/// Full forward pass from the uniform layout.
pub fn gnn_forward<T: Real>(
    weights: &GnnWeights<T>,
    placement: &Placement<T>,
    config: &ScenarioConfig<T>,
) -> Result<(PinchingLayout<T>, BeamformingState<T>)> {
    gnn_forward_from(weights, placement, config, &PinchingLayout::uniform(config))
}

/// Full forward pass from an explicit starting layout (used for relabelled
/// instances whose waveguide geometry is stored in the layout).
///
/// Vertices are processed in the canonical order of
/// [`PermutationTuple::canonical`] and the outputs mapped back, so relabelled
/// inputs give bit-identical relabelled outputs. Position updates turn
/// summation-order roundoff into phase differences that grow by orders of
/// magnitude per layer; a fixed processing order removes that source.
pub fn gnn_forward_from<T: Real>(
    weights: &GnnWeights<T>,
    placement: &Placement<T>,
    config: &ScenarioConfig<T>,
    init: &PinchingLayout<T>,
) -> Result<(PinchingLayout<T>, BeamformingState<T>)> {
    config.validate()?;
    weights.dims.check(config)?;
    if placement.users.len() != config.n_users || placement.targets.len() != config.n_targets {
        return Err(Error::Dimension("placement does not match the scenario".into()));
    }
    let canon = PermutationTuple::canonical(placement, init);
    let (layout, bf) = forward_in_order(weights, &canon.placement(placement), config, &canon.layout(init))?;
    let back = canon.inverse();
    Ok((back.layout(&layout), back.beamforming(&bf)))
}

/// Forward pass in the order the vertices are given.
pub fn forward_in_order<T: Real>(
    weights: &GnnWeights<T>,
    placement: &Placement<T>,
    config: &ScenarioConfig<T>,
    init: &PinchingLayout<T>,
) -> Result<(PinchingLayout<T>, BeamformingState<T>)> {
    let mut state = GraphState::initial(placement, init, config)?;
    for lw in &weights.layers {
        state = layer_forward(&state, lw, placement, config)?;
    }
    let mut bf = state.beamforming();
    normalize_power(&mut bf.w, config.p_max);
    Ok((state.layout, bf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ao::full_gradients;
    use crate::channel::{free_space_coeff, in_waveguide_vector};
    use crate::scalar::max_abs_diff;
    use crate::scenario::sample_placement;

    pub(super) fn small() -> ScenarioConfig<f64> {
        ScenarioConfig {
            segments: 2,
            pas_per_segment: 2,
            n_tx: 4,
            n_rx: 2,
            n_users: 3,
            n_targets: 2,
            ..Default::default()
        }
    }

    fn state(cfg: &ScenarioConfig<f64>, seed: u64) -> (Placement<f64>, GraphState<f64>) {
        let pl = sample_placement(cfg, seed);
        let st = GraphState::initial(&pl, &PinchingLayout::uniform(cfg), cfg).unwrap();
        (pl, st)
    }

    fn max_vec(a: &[CVector<f64>]) -> f64 {
        a.iter().flat_map(|v| v.iter()).map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_state_has_zero_messages() {
        let cfg = small();
        let (_, mut st) = state(&cfg, 1);
        st.w.fill(czero());
        st.v.iter_mut().for_each(|v| v.fill(czero()));
        st.mui = mui_matrix(&st.w, &st.channels.eff, &cfg);
        let g = approx_gradients(&st, &cfg);
        assert_eq!(max_vec(&g.h_tar), 0.0);
        assert_eq!(max_vec(&g.h_user), 0.0);
        assert!(g.g.iter().all(|z| *z == czero()));
    }

    #[test]
    fn cutting_the_receive_link_silences_target_messages() {
        let cfg = small();
        let (_, mut st) = state(&cfg, 2);
        assert!(max_vec(&approx_gradients(&st, &cfg).h_tar) > 0.0);
        st.channels.c_rx.fill(czero());
        assert_eq!(max_vec(&approx_gradients(&st, &cfg).h_tar), 0.0);
    }

    /// Single-user instance where `v_n q_n^* = eta` and `Theta_n = (1 - eta)^-2`.
    #[test]
    fn messages_match_full_gradients_when_assumptions_hold() {
        let cfg = ScenarioConfig { n_users: 1, sigma_s2: 0.0, ..small() };
        for seed in 0..5 {
            let (_, mut st) = state(&cfg, 10 + seed);
            let eta = 0.3 + 0.1 * seed as f64;
            for n in 0..cfg.n_rx {
                let q = st.w.ad_mul(&st.channels.eff.sense_col(n))[0];
                st.v[n][0] = creal(eta) / q.conj();
                st.theta[n] = DMatrix::from_element(1, 1, creal((1.0 - eta).powi(-2)));
            }
            st.beta = vec![2.5];
            let bf = BeamformingState { w: st.w.clone(), v: st.v.clone(), theta: st.theta.clone(), ..st.beamforming() };
            let full = full_gradients(&bf, &st.channels, &cfg, &st.beta).unwrap();
            let approx = approx_gradients_scaled(&st, &cfg, 1.0 / (1.0 - eta));
            let rel = |a: &[CVector<f64>], b: &[CVector<f64>]| {
                let d = a.iter().zip(b).flat_map(|(x, y)| (x - y).iter().map(|z| z.norm()).collect::<Vec<_>>());
                d.fold(0.0, f64::max) / max_vec(b)
            };
            assert!(rel(&approx.h_tar, &full.h_tar) < 1e-6);
            assert!(rel(&approx.h_user, &full.h_user) < 1e-6);
            let scale = full.g.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(max_abs_diff(&approx.g, &full.g) / scale < 1e-6);
        }
    }

    /// Per-edge loops over PAs, users and targets.
    #[test]
    fn messages_match_per_edge_oracle() {
        let cfg = small();
        let (pl, st0) = state(&cfg, 4);
        let w = GnnWeights::<f64>::seeded_init(GnnDims::of(&cfg), 1, 5);
        let st = layer_forward(&st0, &w.layers[0], &pl, &cfg).unwrap();
        let msgs = position_messages(&st, &pl, &cfg).unwrap();
        let lay = &st.layout;
        let (s_count, m_count) = (cfg.segments, cfg.pas_per_segment);
        let k0 = cfg.wavenumber();
        let kg = cfg.guided_wavenumber();
        let sqrt_la = (cfg.pulses as f64 * cfg.alpha_s).sqrt();
        let wv: Vec<CVector<f64>> = st.v.iter().map(|v| &st.w * v).collect();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;

        // naive channels
        let h = |p: [f64; 3], u: [f64; 3]| free_space_coeff(&p, &u, &cfg).unwrap();
        let dh = |p: [f64; 3], u: [f64; 3]| {
            let r = ((p[0] - u[0]).powi(2) + (p[1] - u[1]).powi(2) + (p[2] - u[2]).powi(2)).sqrt();
            h(p, u) * cplx(-1.0 / r, -k0) * ((p[0] - u[0]) / r)
        };
        let c = |k: usize, n: usize| {
            let mut acc = czero();
            for s in 0..s_count {
                let x = lay.rx_x[lay.rx_index(s, n)];
                let g = crate::scalar::cis(-kg * (x - lay.rx_feed_x[lay.rx_index(s, n)]).abs());
                acc += g * h(lay.rx_point(s, n), pl.targets[k]);
            }
            acc * sqrt_la
        };
        for n in 0..cfg.n_tx {
            let s = lay.tx_selected_segment[n];
            let xs: Vec<f64> = (0..m_count).map(|m| lay.tx_x[lay.tx_index(m, s, n)]).collect();
            let gvec = in_waveguide_vector(&xs, lay.tx_feed(s, n), &cfg);
            for m in 0..m_count {
                let p = lay.tx_point(m, s, n);
                let g = gvec[m];
                let dg = g * cplx(0.0, -kg);
                let mut m1 = czero();
                let mut m2 = czero::<f64>();
                let mut m3 = czero::<f64>();
                for r in 0..cfg.n_rx {
                    // sum_k conj(c_kr) h_tar,k at this PA, and the target message
                    let mut t = czero::<f64>();
                    for k in 0..cfg.n_targets {
                        t += c(k, r).conj() * h(p, pl.targets[k]);
                        let msg = -(c(k, r) * g * wv[r][n]);
                        m1 += msg.conj() * dh(p, pl.targets[k]);
                    }
                    m2 += (-(t * wv[r][n].conj())).conj() * dg;
                }
                for k in 0..cfg.n_users {
                    let mut acc = czero();
                    for j in 0..cfg.n_users {
                        acc += st.w[(n, j)] * st.mui[(k, j)].conj();
                    }
                    let acc = acc * (st.beta[k] / cfg.sigma_c2);
                    m3 += (g * acc).conj() * dh(p, pl.users[k]);
                    m2 += (h(p, pl.users[k]) * acc.conj()).conj() * dg;
                }
                let got = msgs.tx[lay.tx_index(m, s, n)];
                for (a, b) in got.iter().zip([m1, m2, m3]) {
                    worst = worst.max((a - b).norm());
                    scale = scale.max(b.norm());
                }
            }
        }
        assert!(worst <= 1e-10 * scale, "tx worst {worst} scale {scale}");

        let mut worst_r: f64 = 0.0;
        let mut scale_r: f64 = 0.0;
        for n in 0..cfg.n_rx {
            for s in 0..s_count {
                let i = lay.rx_index(s, n);
                let p = lay.rx_point(s, n);
                let g = crate::scalar::cis(-kg * (p[0] - lay.rx_feed_x[i]).abs());
                let dg = g * cplx(0.0, -kg);
                let mut acc = czero::<f64>();
                for k in 0..cfg.n_targets {
                    let mut hgwv = czero::<f64>();
                    for t in 0..cfg.n_tx {
                        let ts = lay.tx_selected_segment[t];
                        let xs: Vec<f64> = (0..m_count).map(|m| lay.tx_x[lay.tx_index(m, ts, t)]).collect();
                        let gvec = in_waveguide_vector(&xs, lay.tx_feed(ts, t), &cfg);
                        for m in 0..m_count {
                            hgwv += h(lay.tx_point(m, ts, t), pl.targets[k]).conj() * gvec[m] * wv[n][t];
                        }
                    }
                    acc -= hgwv * (dg * h(p, pl.targets[k]) + g * dh(p, pl.targets[k])) * sqrt_la;
                }
                worst_r = worst_r.max((msgs.rx[i] - acc).norm());
                scale_r = scale_r.max(acc.norm());
            }
        }
        assert!(worst_r <= 1e-10 * scale_r, "rx worst {worst_r} scale {scale_r}");

        // beta message and sensing aggregation
        let eff = &st.channels.eff;
        let mb = beta_messages(&st.w, eff, &st.mui);
        let agg = sensing_aggregation(&st.w, eff);
        for k in 0..cfg.n_users {
            let mut acc = czero::<f64>();
            for j in 0..cfg.n_users {
                let hw = (0..cfg.n_tx).fold(czero::<f64>(), |a, t| a + eff.user[(t, k)].conj() * st.w[(t, j)]);
                acc += hw * st.mui[(j, k)];
            }
            assert!((mb[k] - acc).norm() <= 1e-12 * acc.norm().max(1e-300));
            for n in 0..cfg.n_rx {
                let z = (0..cfg.n_tx).fold(czero::<f64>(), |a, t| a + st.w[(t, k)].conj() * eff.sense[(t, n)]);
                assert!((agg[(n, k)] - z).norm() <= 1e-12 * z.norm());
            }
        }
    }

    #[test]
    fn identity_bypass_is_a_fixed_point() {
        let cfg = small();
        let (pl, st) = state(&cfg, 6);
        let echo = GnnWeights::<f64>::echo(GnnDims::of(&cfg), 1);
        let next = layer_forward(&st, &echo.layers[0], &pl, &cfg).unwrap();
        let dx = st.layout.tx_x.iter().zip(&next.layout.tx_x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dr = st.layout.rx_x.iter().zip(&next.layout.rx_x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dx < 1e-12 && dr < 1e-12, "{dx} {dr}");
        assert_eq!(next.layout.tx_selected_segment, st.layout.tx_selected_segment);
        assert_eq!(next.beta, st.beta);
        for (a, b) in next.p.iter().zip(&st.p) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(max_abs_diff(&next.xi, &st.xi) == 0.0);
        for (a, b) in next.v.iter().zip(&st.v) {
            assert!((a - b).iter().map(|z| z.norm()).fold(0.0, f64::max) <= 1e-15 * b.norm());
        }
        let eff = &next.channels.eff;
        let theta = update_weights(&st.w, &next.v, eff, &cfg).theta;
        let mut expect =
            reconstruct_beamformer(&next.p, &next.beta, &physical_xi(&next.xi, eff), 1.0, eff, &next.v, &theta, &cfg)
                .unwrap();
        normalize_power(&mut expect, cfg.p_max);
        assert!(max_abs_diff(&expect, &next.w) < 1e-12);
    }

    #[test]
    fn forward_respects_budget_and_layout() {
        let cfg = small();
        let w = GnnWeights::<f64>::seeded_init(GnnDims::of(&cfg), 4, 9);
        for seed in 0..5 {
            let pl = sample_placement(&cfg, seed);
            let (layout, bf) = gnn_forward(&w, &pl, &cfg).unwrap();
            assert!((bf.power() - cfg.p_max).abs() < 1e-9);
            assert!(layout.is_feasible(&cfg, 1e-12));
            let sum_p: f64 = bf.p.iter().sum();
            assert!((sum_p - cfg.p_max).abs() < 1e-12);
            let again = gnn_forward(&w, &pl, &cfg).unwrap();
            assert_eq!(again.1, bf);
        }
    }

    #[test]
    fn user_count_is_not_bound() {
        let cfg = ScenarioConfig { n_users: 4, n_tx: 6, ..small() };
        let w = GnnWeights::<f64>::seeded_init(GnnDims::of(&cfg), 2, 1);
        let cfg5 = ScenarioConfig { n_users: 5, ..cfg.clone() };
        let (_, bf) = gnn_forward(&w, &sample_placement(&cfg5, 3), &cfg5).unwrap();
        assert_eq!(bf.w.ncols(), 5);
        assert!((bf.power() - cfg.p_max).abs() < 1e-9);
    }

    #[test]
    fn bound_dimensions_are_checked() {
        let cfg = small();
        let w = GnnWeights::<f64>::seeded_init(GnnDims::of(&cfg), 1, 1);
        let other = ScenarioConfig { n_tx: 5, ..cfg.clone() };
        assert!(matches!(gnn_forward(&w, &sample_placement(&other, 0), &other), Err(Error::Dimension(_))));
    }

    #[test]
    fn user_relabelling_permutes_layer_outputs() {
        let cfg = small();
        let (pl, st) = state(&cfg, 8);
        let w = GnnWeights::<f64>::seeded_init(GnnDims::of(&cfg), 1, 2);
        let perm = [2usize, 0, 1];
        let pl2 = Placement::new(perm.iter().map(|&i| pl.users[i]).collect(), pl.targets.clone());
        let st2 = GraphState::initial(&pl2, &PinchingLayout::uniform(&cfg), &cfg).unwrap();
        let a = layer_forward(&st, &w.layers[0], &pl, &cfg).unwrap();
        let b = layer_forward(&st2, &w.layers[0], &pl2, &cfg).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert!((a.beta[i] - b.beta[j]).abs() < 1e-12);
            assert!((a.p[i] - b.p[j]).abs() < 1e-12);
            for t in 0..cfg.n_tx {
                assert!((a.w[(t, i)] - b.w[(t, j)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        use crate::perm::{solution_deviation, PermutationTuple};
        use rand::SeedableRng;
        let cfg = small();
        let w = GnnWeights::<f64>::seeded_init(GnnDims::of(&cfg), 3, 4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for seed in 0..10 {
            let pl = sample_placement(&cfg, seed);
            let init = PinchingLayout::uniform(&cfg);
            let (l0, b0) = gnn_forward_from(&w, &pl, &cfg, &init).unwrap();
            let p = PermutationTuple::random(&cfg, &mut rng);
            let (l1, b1) = gnn_forward_from(&w, &p.placement(&pl), &cfg, &p.layout(&init)).unwrap();
            let dev = solution_deviation((&p.layout(&l0), &p.beamforming(&b0)), (&l1, &b1));
            assert!(dev == 0.0, "seed {seed}: {dev}");
        }
    }

    /// One layer in input order, without canonicalization.
    #[test]
    fn single_layer_is_permutation_equivariant() {
        use rand::SeedableRng;
        let cfg = small();
        let w = GnnWeights::<f64>::seeded_init(GnnDims::of(&cfg), 1, 7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for seed in 0..10 {
            let pl = sample_placement(&cfg, seed);
            let init = PinchingLayout::uniform(&cfg);
            let p = PermutationTuple::random(&cfg, &mut rng);
            let a = forward_in_order(&w, &pl, &cfg, &init).unwrap();
            let b = forward_in_order(&w, &p.placement(&pl), &cfg, &p.layout(&init)).unwrap();
            let la = p.layout(&a.0);
            let dx = la.tx_x.iter().zip(&b.0.tx_x).chain(la.rx_x.iter().zip(&b.0.rx_x));
            assert!(dx.map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) < 1e-9);
            assert!(max_abs_diff(&p.beamformer(&a.1.w), &b.1.w) < 1e-9);
        }
    }
}
