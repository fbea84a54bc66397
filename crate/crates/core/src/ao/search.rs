//! Coordinate-wise one-dimensional search over PA positions.

use super::AoConfig;
use crate::channel::{build_channels, free_space_coeff, in_waveguide_vector, receive_gain, ChannelSet};
use crate::error::Result;
use crate::metrics::{logdet_hpd, soc_margin_from_gram, BeamformingState};
use crate::scalar::{creal, czero, dotc, from_usize, CMatrix, CVector, Cplx, Real};
use crate::scenario::{Placement, PinchingLayout, ScenarioConfig};

/// Surrogate evaluator at fixed `(W, V, Theta)` that is cheap to update when
/// one PA moves.
struct Evaluator<'a, T: Real> {
    config: &'a ScenarioConfig<T>,
    w: &'a CMatrix<T>,
    mu: Vec<T>,
    constant: T,
    theta_v: Vec<CVector<T>>,
    weight: Vec<T>,
    /// `h_k^H w_j` and `W^H a_n` for the current channels.
    gram: CMatrix<T>,
    q: Vec<CVector<T>>,
}

impl<'a, T: Real> Evaluator<'a, T> {
    fn new(state: &'a BeamformingState<T>, ch: &ChannelSet<T>, config: &'a ScenarioConfig<T>, mu: Vec<T>) -> Result<Self> {
        let mut constant = T::zero();
        for th in &state.theta {
            let tr = (0..th.nrows()).fold(T::zero(), |a, i| a + th[(i, i)].re);
            constant += tr - logdet_hpd(th)?;
        }
        let theta_v: Vec<CVector<T>> = state.theta.iter().zip(&state.v).map(|(t, v)| t * v).collect();
        let weight = state.v.iter().zip(&theta_v).map(|(v, tv)| dotc(v, tv).re).collect();
        let gram = ch.eff.user.ad_mul(&state.w);
        let q = (0..ch.eff.n_sense()).map(|n| state.w.ad_mul(&ch.eff.sense_col(n))).collect();
        Ok(Self {
            config,
            w: &state.w,
            mu,
            constant,
            theta_v,
            weight,
            gram,
            q,
        })
    }

    fn value(&self, gram: &CMatrix<T>, q: &[CVector<T>]) -> T {
        let mut total = self.constant;
        for (n, q_n) in q.iter().enumerate() {
            let cross = dotc(&self.theta_v[n], q_n).re;
            total += (q_n.norm_squared() + self.config.sigma_s2) * self.weight[n] - (cross + cross);
        }
        for k in 0..gram.nrows() {
            let m = soc_margin_from_gram(k, gram, self.config);
            total += self.mu[k] * (-m).max(T::zero());
        }
        total
    }

    fn current(&self) -> T {
        self.value(&self.gram, &self.q)
    }
}

/// Grid search on `[lo, hi]`: coarse pass, then a fine pass within one coarse
/// step of the coarse winner. Returns the best point and its value.
fn grid_search<T: Real>(lo: T, hi: T, coarse: T, fine: T, mut f: impl FnMut(T) -> T) -> (T, T) {
    let mut best = (lo, f(lo));
    let mut scan = |a: T, b: T, step: T, best: &mut (T, T)| {
        let count = ((b - a) / step).floor().to_usize().unwrap_or(0);
        for j in 0..=count {
            let x = (a + from_usize::<T>(j) * step).min(b);
            let v = f(x);
            if v < best.1 {
                *best = (x, v);
            }
        }
        let v = f(b);
        if v < best.1 {
            *best = (b, v);
        }
    };
    scan(lo, hi, coarse, &mut best);
    let centre = best.0;
    scan((centre - coarse).max(lo), (centre + coarse).min(hi), fine, &mut best);
    best
}

/// Sweeps every fed transmit PA, then every receive PA, moving one at a time
/// to the best grid point of its feasible interval when that strictly lowers
/// the surrogate. Neighbours are frozen during each one-dimensional search.
pub fn position_line_search<T: Real>(
    layout: &PinchingLayout<T>,
    state: &BeamformingState<T>,
    placement: &Placement<T>,
    config: &ScenarioConfig<T>,
    ao: &AoConfig<T>,
) -> Result<PinchingLayout<T>> {
    let mut out = layout.clone();
    let mut ch = build_channels(placement, layout, config)?;
    let k_users = ch.eff.n_users();
    let mut ev = Evaluator::new(state, &ch, config, ao.mu_vec(k_users))?;
    let w = ev.w;
    let seg = config.segment_length();
    let m_count = layout.pas_per_segment;
    let inv_sqrt_m = T::one() / from_usize::<T>(m_count).sqrt();
    let n_sense = ch.eff.n_sense();

    for n in 0..out.n_tx() {
        let s = out.tx_selected_segment[n];
        let feed = out.tx_feed(s, n);
        let (y, z) = out.tx_axis[n];
        for m in 0..m_count {
            let i = out.tx_index(m, s, n);
            let lo = if m == 0 { feed } else { out.tx_x[i - 1] + config.delta_min };
            let hi = if m + 1 == m_count { feed + seg } else { out.tx_x[i + 1] - config.delta_min };
            let lo = lo.max(feed);
            let hi = hi.min(feed + seg);
            if hi < lo {
                continue;
            }
            // strip this PA's contribution
            let g_old = ch.g_t[(i, n)].conj();
            let mut base_gram = ev.gram.clone();
            for k in 0..k_users {
                let contrib = g_old * ch.h_user[k][i];
                for j in 0..k_users {
                    base_gram[(k, j)] -= contrib.conj() * w[(n, j)];
                }
            }
            let t_old: Vec<Cplx<T>> = (0..n_sense)
                .map(|nr| {
                    ch.h_tar_tx
                        .iter()
                        .enumerate()
                        .fold(czero(), |a, (k, h)| a + ch.c_rx[(k, nr)].conj() * h[i])
                })
                .collect();
            let base_q: Vec<CVector<T>> = (0..n_sense)
                .map(|nr| {
                    let contrib = g_old * t_old[nr];
                    let mut q = ev.q[nr].clone();
                    for j in 0..k_users {
                        q[j] -= w[(n, j)].conj() * contrib;
                    }
                    q
                })
                .collect();
            let mut q_try = base_q.clone();
            let mut gram_try = base_gram.clone();
            let mut eval = |x: T| -> Result<(T, Vec<Cplx<T>>, Vec<Cplx<T>>, Cplx<T>)> {
                let p = [x, y, z];
                let g = in_waveguide_vector(&[x], feed, config)[0] * creal(inv_sqrt_m);
                let hu = placement
                    .users
                    .iter()
                    .map(|u| free_space_coeff(&p, u, config))
                    .collect::<Result<Vec<_>>>()?;
                let ht = placement
                    .targets
                    .iter()
                    .map(|u| free_space_coeff(&p, u, config))
                    .collect::<Result<Vec<_>>>()?;
                gram_try.copy_from(&base_gram);
                for k in 0..k_users {
                    let c = (g.conj() * hu[k]).conj();
                    for j in 0..k_users {
                        gram_try[(k, j)] += c * w[(n, j)];
                    }
                }
                for nr in 0..n_sense {
                    let t = ht.iter().enumerate().fold(czero(), |a, (k, h)| a + ch.c_rx[(k, nr)].conj() * *h);
                    let contrib = g.conj() * t;
                    q_try[nr].copy_from(&base_q[nr]);
                    for j in 0..k_users {
                        q_try[nr][j] += w[(n, j)].conj() * contrib;
                    }
                }
                Ok((ev.value(&gram_try, &q_try), hu, ht, g))
            };
            let current = ev.current();
            let mut failure = None;
            let (x_best, v_best) = grid_search(lo, hi, ao.coarse_step, ao.fine_step, |x| match eval(x) {
                Ok((v, ..)) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    T::max_value().unwrap_or(T::one())
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
            if v_best < current {
                let (_, hu, ht, g) = eval(x_best)?;
                ev.gram.copy_from(&gram_try);
                let t_new: Vec<Cplx<T>> = (0..n_sense).map(|nr| ch_t(&ch, &ht, nr)).collect();
                for nr in 0..n_sense {
                    ev.q[nr].copy_from(&q_try[nr]);
                    ch.eff.sense[(n, nr)] += g.conj() * t_new[nr] - g_old * t_old[nr];
                }
                for k in 0..k_users {
                    ch.eff.user[(n, k)] += g.conj() * hu[k] - g_old * ch.h_user[k][i];
                    ch.h_user[k][i] = hu[k];
                }
                for (k, h) in ht.into_iter().enumerate() {
                    ch.h_tar_tx[k][i] = h;
                }
                ch.g_t[(i, n)] = g;
                out.tx_x[i] = x_best;
            }
        }
    }

    // receive PAs: one per segment, box constraint only
    let scale = config.sensing_scale();
    let b: Vec<CVector<T>> = ch.h_tar_tx.iter().map(|h| ch.g_t.ad_mul(h)).collect();
    for n in 0..out.n_rx() {
        let (y, z) = out.rx_axis[n];
        for s in 0..out.segments {
            let i = out.rx_index(s, n);
            let feed = out.rx_feed_x[i];
            let base_c: Vec<Cplx<T>> = (0..placement.targets.len())
                .map(|k| ch.c_rx[(k, n)] - ch.g_r[i] * ch.h_tar_rx[k][i] * creal(scale))
                .collect();
            let mut q_try = ev.q[n].clone();
            let mut eval = |x: T| -> Result<(T, Vec<Cplx<T>>, Cplx<T>, Vec<Cplx<T>>)> {
                let p = [x, y, z];
                let g = receive_gain(x, feed, config);
                let hr = placement
                    .targets
                    .iter()
                    .map(|u| free_space_coeff(&p, u, config))
                    .collect::<Result<Vec<_>>>()?;
                let c: Vec<Cplx<T>> = base_c.iter().zip(&hr).map(|(c0, h)| *c0 + g * *h * creal(scale)).collect();
                let mut a = nalgebra::DVector::from_element(ch.eff.n_antennas(), czero());
                for (k, bk) in b.iter().enumerate() {
                    a.axpy(c[k].conj(), bk, creal(T::one()));
                }
                q_try = w.ad_mul(&a);
                let mut q_all = ev.q.clone();
                q_all[n] = q_try.clone();
                Ok((ev.value(&ev.gram, &q_all), hr, g, c))
            };
            let current = ev.current();
            let mut failure = None;
            let (x_best, v_best) = grid_search(feed, feed + seg, ao.coarse_step, ao.fine_step, |x| match eval(x) {
                Ok((v, ..)) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    T::max_value().unwrap_or(T::one())
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
            if v_best < current {
                let (_, hr, g, c) = eval(x_best)?;
                ev.q[n] = q_try.clone();
                for (k, h) in hr.into_iter().enumerate() {
                    ch.h_tar_rx[k][i] = h;
                    ch.c_rx[(k, n)] = c[k];
                }
                ch.g_r[i] = g;
                out.rx_x[i] = x_best;
            }
        }
    }
    Ok(out)
}

fn ch_t<T: Real>(ch: &ChannelSet<T>, ht: &[Cplx<T>], nr: usize) -> Cplx<T> {
    ht.iter().enumerate().fold(czero(), |a, (k, h)| a + ch.c_rx[(k, nr)].conj() * *h)
}
