//! Transmit-beamforming block: the QoS- and power-constrained convex
//! subproblem in `W`, its optimal-structure parameters `(p, beta, Xi, nu)` and
//! the reconstruction of `W` from those parameters.
//!
//! The subproblem is solved by a log-barrier interior-point method in real
//! coordinates. Every optimal `W` lies in the span of the user and sensing
//! channels, so the solve runs in an orthonormal basis of that span. The
//! multipliers are read off the central path.

use nalgebra::{DMatrix, DVector};

use super::AoConfig;
use crate::channel::EffectiveChannels;
use crate::error::{Error, Result};
use crate::metrics::{wmmse_objective, BeamformingState};
use crate::scalar::{abs2, cabs, cplx, creal, czero, dotc, from_usize, lit, norm2, CMatrix, CVector, Cplx, Real};
use crate::scenario::ScenarioConfig;

/// Diagnostics of one transmit-beamforming solve.
#[derive(Debug, Clone, PartialEq)]
pub struct TxReport<T: Real> {
    /// WMMSE surrogate at the returned state.
    pub objective: T,
    /// Relative residual of `A w_k = c_k + tau_k h_k`.
    pub stationarity: T,
    /// Largest of `beta_k * s_k` and `nu * (P - |W|^2)`.
    pub slackness: T,
    /// `|(I - U U^H) W| / |W|` for the span `U` of the user and sensing channels.
    pub subspace_residual: T,
    pub newton_steps: usize,
    pub converged: bool,
    /// The QoS target could not be certified feasible; a relaxed threshold was used.
    pub infeasible_qos: bool,
    pub gamma_used: T,
}

/// Unit phases `d_k` with `h_k^H (w_k d_k)` real and nonnegative.
pub fn soc_rotation<T: Real>(w: &CMatrix<T>, eff: &EffectiveChannels<T>) -> Vec<Cplx<T>> {
    (0..w.ncols())
        .map(|k| {
            let d = dotc(&eff.user_col(k), &w.column(k).into_owned());
            let a = cabs(d);
            if a > T::zero() {
                d.conj() / creal(a)
            } else {
                creal(T::one())
            }
        })
        .collect()
}

/// Applies `W -> W D`, `v_n -> D^H v_n`, `Theta_n -> D^H Theta_n D`, which
/// leaves the WMMSE surrogate and every rate unchanged.
pub fn rotate_state<T: Real>(state: &mut BeamformingState<T>, d: &[Cplx<T>]) {
    for (k, dk) in d.iter().enumerate() {
        for z in state.w.column_mut(k).iter_mut() {
            *z *= *dk;
        }
    }
    for v in state.v.iter_mut() {
        for (k, dk) in d.iter().enumerate() {
            v[k] *= dk.conj();
        }
    }
    for th in state.theta.iter_mut() {
        for i in 0..d.len() {
            for j in 0..d.len() {
                th[(i, j)] = d[i].conj() * th[(i, j)] * d[j];
            }
        }
    }
    for n in 0..state.xi.nrows() {
        for (k, dk) in d.iter().enumerate() {
            state.xi[(n, k)] *= *dk;
        }
    }
}

/// Orthonormal basis of the span of the (scale-normalized) user and sensing channels.
pub fn signal_basis<T: Real>(eff: &EffectiveChannels<T>) -> CMatrix<T> {
    let n_t = eff.n_antennas();
    let mut cols: Vec<CVector<T>> = Vec::new();
    for m in [&eff.user, &eff.sense] {
        for c in m.column_iter() {
            let c = c.into_owned();
            let nrm = norm2(&c).sqrt();
            if nrm > T::zero() {
                cols.push(c / creal(nrm));
            }
        }
    }
    if cols.is_empty() {
        return DMatrix::from_element(n_t, 0, czero());
    }
    let x = DMatrix::from_columns(&cols);
    let svd = x.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().fold(T::zero(), |a, s| a.max(*s));
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > smax * lit(1e-10))
        .collect();
    DMatrix::from_columns(&keep.iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>())
}

/// Quantities of the `W` subproblem that do not depend on `W`:
/// `Q = sum_n (v_n^H Theta_n v_n) a_n a_n^H` and `c_k = sum_n conj((Theta_n v_n)_k) a_n`.
pub(crate) struct SensingTerms<T: Real> {
    pub weight: Vec<T>,
    pub theta_v: Vec<CVector<T>>,
}

impl<T: Real> SensingTerms<T> {
    pub fn new(state: &BeamformingState<T>) -> Self {
        let theta_v: Vec<CVector<T>> = state.theta.iter().zip(&state.v).map(|(t, v)| t * v).collect();
        let weight = state.v.iter().zip(&theta_v).map(|(v, tv)| dotc(v, tv).re).collect();
        Self { weight, theta_v }
    }

    /// `c_k` expressed through `basis^H a_n` (pass the identity-free channels for full coordinates).
    pub fn linear(&self, a: &CMatrix<T>, k: usize) -> CVector<T> {
        let mut c = DVector::from_element(a.nrows(), czero());
        for n in 0..a.ncols() {
            c.axpy(self.theta_v[n][k].conj(), &a.column(n).into_owned(), creal(T::one()));
        }
        c
    }

    pub fn quadratic(&self, a: &CMatrix<T>) -> CMatrix<T> {
        let r = a.nrows();
        let mut q = DMatrix::from_element(r, r, czero());
        for n in 0..a.ncols() {
            let col = a.column(n).into_owned();
            q += &col * col.adjoint() * creal(self.weight[n]);
        }
        q
    }
}

/// Barrier problem in real coordinates: `x` stacks `[Re z_k; Im z_k]` per user.
struct BarrierProblem<T: Real> {
    r: usize,
    k: usize,
    alpha: Vec<DVector<T>>,
    alpha_im: Vec<DVector<T>>,
    q_real: DMatrix<T>,
    lin: Vec<DVector<T>>,
    gamma: T,
}

fn real_functionals<T: Real>(h: &CVector<T>) -> (DVector<T>, DVector<T>) {
    let r = h.len();
    let mut re = DVector::zeros(2 * r);
    let mut im = DVector::zeros(2 * r);
    for i in 0..r {
        re[i] = h[i].re;
        re[r + i] = h[i].im;
        im[i] = -h[i].im;
        im[r + i] = h[i].re;
    }
    (re, im)
}

fn realify<T: Real>(q: &CMatrix<T>) -> DMatrix<T> {
    let r = q.nrows();
    let mut out = DMatrix::zeros(2 * r, 2 * r);
    for i in 0..r {
        for j in 0..r {
            let z = q[(i, j)];
            out[(i, j)] = z.re;
            out[(r + i, r + j)] = z.re;
            out[(i, r + j)] = -z.im;
            out[(r + i, j)] = z.im;
        }
    }
    out
}

impl<T: Real> BarrierProblem<T> {
    fn n(&self) -> usize {
        2 * self.r * self.k
    }

    fn block<'a>(&self, x: &'a DVector<T>, k: usize) -> nalgebra::DVectorView<'a, T> {
        x.rows(2 * self.r * k, 2 * self.r)
    }

    fn objective(&self, x: &DVector<T>) -> T {
        (0..self.k).fold(T::zero(), |acc, k| {
            let xk = self.block(x, k);
            acc + (xk.transpose() * &self.q_real * xk)[(0, 0)] - lit::<T>(2.0) * self.lin[k].dot(&xk)
        })
    }

    /// `(t_k, s_k)` for every user.
    fn margins(&self, x: &DVector<T>) -> Vec<(T, T)> {
        (0..self.k)
            .map(|k| {
                let t = self.alpha[k].dot(&self.block(x, k));
                let mut s = t * t / self.gamma - T::one();
                for j in (0..self.k).filter(|&j| j != k) {
                    let xj = self.block(x, j);
                    let a = self.alpha[k].dot(&xj);
                    let b = self.alpha_im[k].dot(&xj);
                    s -= a * a + b * b;
                }
                (t, s)
            })
            .collect()
    }

    fn strictly_feasible(&self, x: &DVector<T>) -> bool {
        x.norm_squared() < T::one() && self.margins(x).iter().all(|(t, s)| *t > T::zero() && *s > T::zero())
    }

    fn psi(&self, x: &DVector<T>, tau: T) -> Option<T> {
        let r2 = x.norm_squared();
        if !(r2 < T::one()) {
            return None;
        }
        let mut acc = tau * self.objective(x) - (T::one() - r2).ln();
        for (t, s) in self.margins(x) {
            if !(t > T::zero() && s > T::zero()) {
                return None;
            }
            acc -= s.ln();
        }
        Some(acc)
    }

    fn grad_hess(&self, x: &DVector<T>, tau: T) -> (DVector<T>, DMatrix<T>) {
        let n = self.n();
        let bl = 2 * self.r;
        let two = lit::<T>(2.0);
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for k in 0..self.k {
            let xk = self.block(x, k).into_owned();
            let gk = (&self.q_real * &xk - &self.lin[k]) * (two * tau);
            g.rows_mut(bl * k, bl).add_assign_helper(&gk);
            let mut hk = h.view_mut((bl * k, bl * k), (bl, bl));
            hk += &self.q_real * (two * tau);
        }
        for (k, (t, s)) in self.margins(x).into_iter().enumerate() {
            let mut ds = DVector::zeros(n);
            ds.rows_mut(bl * k, bl).add_assign_helper(&(&self.alpha[k] * (two * t / self.gamma)));
            for j in (0..self.k).filter(|&j| j != k) {
                let xj = self.block(x, j);
                let a = self.alpha[k].dot(&xj);
                let b = self.alpha_im[k].dot(&xj);
                let d = (&self.alpha[k] * a + &self.alpha_im[k] * b) * (-two);
                ds.rows_mut(bl * j, bl).add_assign_helper(&d);
            }
            g -= &ds / s;
            h += &ds * ds.transpose() / (s * s);
            // minus the curvature of s_k, divided by s_k
            {
                let mut hk = h.view_mut((bl * k, bl * k), (bl, bl));
                hk -= &self.alpha[k] * self.alpha[k].transpose() * (two / (self.gamma * s));
            }
            for j in (0..self.k).filter(|&j| j != k) {
                let mut hj = h.view_mut((bl * j, bl * j), (bl, bl));
                hj += (&self.alpha[k] * self.alpha[k].transpose()
                    + &self.alpha_im[k] * self.alpha_im[k].transpose())
                    * (two / s);
            }
        }
        let r2 = x.norm_squared();
        let d = T::one() - r2;
        g += x * (two / d);
        h += DMatrix::identity(n, n) * (two / d) + x * x.transpose() * (lit::<T>(4.0) / (d * d));
        (g, h)
    }

    /// Barrier path from a strictly feasible start. Returns the final point,
    /// the final barrier weight, Newton steps taken and a convergence flag.
    fn solve(&self, x0: DVector<T>, growth: T, budget: usize, gap_tol: T) -> (DVector<T>, T, usize, bool) {
        let m = from_usize::<T>(self.k + 1);
        let mut x = x0;
        let mut tau = T::one();
        let mut steps = 0;
        let newton_tol = lit::<T>(1e-12);
        loop {
            // centering
            let mut centered = false;
            let mut stage = 0;
            let mut last = T::max_value().unwrap_or(T::one());
            while steps < budget {
                let f0 = self.psi(&x, tau).expect("iterate stays strictly feasible");
                // decrement floor set by the roundoff of the barrier value itself
                let floor = newton_tol.max(f0.abs() * lit(1e-14));
                let (g, h) = self.grad_hess(&x, tau);
                let Some(dx) = solve_spd(&h, &(-&g)) else {
                    centered = last / lit(2.0) <= floor * lit(1e4);
                    break;
                };
                let lambda2 = -g.dot(&dx);
                if lambda2 / lit(2.0) <= floor * lit(1e-12) {
                    centered = true;
                    break;
                }
                if stage == STAGE_STEPS {
                    centered = lambda2 / lit(2.0) <= floor * lit(1e4);
                    break;
                }
                // quadratic region: full steps until the decrement stops shrinking
                if lambda2 < lit(0.1) {
                    if lambda2 / lit(2.0) <= floor && lambda2 > last * lit(0.25) {
                        centered = true;
                        break;
                    }
                    let cand = &x + &dx;
                    if self.psi(&cand, tau).is_some() {
                        steps += 1;
                        stage += 1;
                        x = cand;
                        last = lambda2;
                        continue;
                    }
                }
                last = lambda2;
                steps += 1;
                stage += 1;
                let mut step = T::one();
                let mut moved = false;
                for _ in 0..60 {
                    let cand = &x + &dx * step;
                    if let Some(f1) = self.psi(&cand, tau) {
                        if f1 <= f0 - lit::<T>(0.25) * step * lambda2 {
                            x = cand;
                            moved = true;
                            break;
                        }
                    }
                    step *= lit(0.5);
                }
                if !moved {
                    centered = lambda2 / lit(2.0) <= floor * lit(1e4);
                    break;
                }
            }
            if !centered {
                return (x, tau, steps, false);
            }
            if m / tau < gap_tol {
                return (x, tau, steps, true);
            }
            tau *= growth;
        }
    }
}

const STAGE_STEPS: usize = 50;

fn solve_spd<T: Real>(h: &DMatrix<T>, rhs: &DVector<T>) -> Option<DVector<T>> {
    if let Some(c) = h.clone().cholesky() {
        return Some(c.solve(rhs));
    }
    let scale = (0..h.nrows()).fold(T::zero(), |a, i| a.max(h[(i, i)].abs()));
    let ridge = DMatrix::identity(h.nrows(), h.ncols()) * (scale * lit(1e-13)).max(lit(1e-300));
    (h + ridge).cholesky().map(|c| c.solve(rhs))
}

trait AddAssignHelper<T: Real> {
    fn add_assign_helper(&mut self, other: &DVector<T>);
}

impl<T: Real> AddAssignHelper<T> for nalgebra::DVectorViewMut<'_, T> {
    fn add_assign_helper(&mut self, other: &DVector<T>) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += *b;
        }
    }
}

fn pack<T: Real>(z: &CMatrix<T>) -> DVector<T> {
    let (r, k) = z.shape();
    let mut x = DVector::zeros(2 * r * k);
    for j in 0..k {
        for i in 0..r {
            x[2 * r * j + i] = z[(i, j)].re;
            x[2 * r * j + r + i] = z[(i, j)].im;
        }
    }
    x
}

fn unpack<T: Real>(x: &DVector<T>, r: usize, k: usize) -> CMatrix<T> {
    DMatrix::from_fn(r, k, |i, j| cplx(x[2 * r * j + i], x[2 * r * j + r + i]))
}

/// SINR under the rotated second-order-cone form (`Re(h_k^H z_k)` as signal).
fn cone_sinr<T: Real>(hs: &CMatrix<T>, z: &CMatrix<T>) -> Vec<T> {
    let g = hs.ad_mul(z);
    (0..z.ncols())
        .map(|k| {
            let t = g[(k, k)].re;
            if t <= T::zero() {
                return -T::one();
            }
            let i = (0..z.ncols()).filter(|&j| j != k).fold(T::zero(), |a, j| a + abs2(g[(k, j)]));
            t * t / (i + T::one())
        })
        .collect()
}

fn min_of<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::max_value().unwrap_or(T::one()), |a, b| a.min(*b))
}

fn rotate_columns_to_cone<T: Real>(hs: &CMatrix<T>, z: &mut CMatrix<T>) {
    for k in 0..z.ncols() {
        let d = dotc(&hs.column(k).into_owned(), &z.column(k).into_owned());
        let a = cabs(d);
        if a > T::zero() {
            let ph = d.conj() / creal(a);
            for e in z.column_mut(k).iter_mut() {
                *e *= ph;
            }
        }
    }
}

fn scale_into_ball<T: Real>(z: &mut CMatrix<T>, radius2: T) {
    let p = crate::scalar::fro2(z);
    if p > radius2 {
        *z *= creal((radius2 / p).sqrt());
    }
}

/// Strictly feasible starting points for the barrier method, in the
/// preference order zero-forcing, warm start, matched filter.
fn starting_points<T: Real>(hs: &CMatrix<T>, warm: &CMatrix<T>, gamma: T) -> Vec<CMatrix<T>> {
    let (r, k) = hs.shape();
    let edge = lit::<T>(0.999);
    let mut out = Vec::new();
    let gram = hs.ad_mul(hs);
    if let Some(ch) = gram.clone().cholesky() {
        let zf = hs * ch.inverse();
        let norms: Vec<T> = zf.column_iter().map(|c| c.norm_squared()).collect();
        let total = norms.iter().fold(T::zero(), |a, b| a + *b);
        // equal-SINR allocation halfway between the QoS target and the power limit
        let kappa_max2 = T::one() / (gamma * total);
        let c2 = if kappa_max2 > T::one() {
            gamma * (T::one() + kappa_max2) / lit(2.0)
        } else {
            edge / total
        };
        let mut z = zf.clone();
        for j in 0..k {
            for e in z.column_mut(j).iter_mut() {
                *e *= creal(c2.sqrt());
            }
        }
        out.push(z);
    }
    let mut w = warm.clone();
    rotate_columns_to_cone(hs, &mut w);
    scale_into_ball(&mut w, edge);
    out.push(w);
    let mut mf = DMatrix::from_element(r, k, czero());
    for j in 0..k {
        let h = hs.column(j).into_owned();
        let nrm = norm2(&h).sqrt();
        if nrm > T::zero() {
            mf.set_column(j, &(h * creal((edge / from_usize::<T>(k)).sqrt() / nrm)));
        }
    }
    out.push(mf);
    out
}

/// Index order sorting `keys` ascending, ties by position.
fn order_by<T: Real>(keys: Vec<T>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].partial_cmp(&keys[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx
}

/// Antenna, user and sensing orders computed from relabeling-invariant keys.
struct Canonical {
    rows: Vec<usize>,
    users: Vec<usize>,
    sense: Vec<usize>,
}

impl Canonical {
    fn of<T: Real>(eff: &EffectiveChannels<T>) -> Self {
        let col_keys = |m: &CMatrix<T>| m.column_iter().map(|c| c.norm_squared()).collect::<Vec<T>>();
        let rows = (0..eff.n_antennas())
            .map(|r| eff.user.row(r).norm_squared() + eff.sense.row(r).norm_squared())
            .collect();
        Self { rows: order_by(rows), users: order_by(col_keys(&eff.user)), sense: order_by(col_keys(&eff.sense)) }
    }

    fn inverse(order: &[usize]) -> Vec<usize> {
        let mut inv = vec![0; order.len()];
        for (i, &o) in order.iter().enumerate() {
            inv[o] = i;
        }
        inv
    }

    fn reverse(&self) -> Self {
        Self { rows: Self::inverse(&self.rows), users: Self::inverse(&self.users), sense: Self::inverse(&self.sense) }
    }

    fn channels<T: Real>(&self, eff: &EffectiveChannels<T>) -> EffectiveChannels<T> {
        EffectiveChannels {
            user: DMatrix::from_fn(eff.n_antennas(), eff.n_users(), |r, c| eff.user[(self.rows[r], self.users[c])]),
            sense: DMatrix::from_fn(eff.n_antennas(), eff.n_sense(), |r, c| eff.sense[(self.rows[r], self.sense[c])]),
        }
    }

    fn state<T: Real>(&self, st: &BeamformingState<T>) -> BeamformingState<T> {
        let u = &self.users;
        let k = u.len();
        let pick = |x: &[T]| if x.len() == k { u.iter().map(|&i| x[i]).collect() } else { x.to_vec() };
        BeamformingState {
            w: DMatrix::from_fn(st.w.nrows(), k, |r, c| st.w[(self.rows[r], u[c])]),
            v: self.sense.iter().map(|&n| DVector::from_fn(k, |i, _| st.v[n][u[i]])).collect(),
            theta: self.sense.iter().map(|&n| DMatrix::from_fn(k, k, |i, j| st.theta[n][(u[i], u[j])])).collect(),
            p: pick(&st.p),
            beta: pick(&st.beta),
            xi: if st.xi.shape() == (self.sense.len(), k) {
                DMatrix::from_fn(self.sense.len(), k, |n, i| st.xi[(self.sense[n], u[i])])
            } else {
                st.xi.clone()
            },
            nu: st.nu,
        }
    }
}

/// Solves the `W` block at fixed `(V, Theta)` and returns the state with
/// the new `W`, its structure parameters `(p, beta, Xi, nu)` and
/// co-rotated `(V, Theta)`.
///
/// The solve runs on a canonical ordering of antennas, users and sensing
/// channels, so relabeling the inputs relabels the outputs exactly.
pub fn update_tx_beamforming<T: Real>(
    state: &BeamformingState<T>,
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
    ao: &AoConfig<T>,
) -> Result<(BeamformingState<T>, TxReport<T>)> {
    if state.w.shape() != (eff.n_antennas(), eff.n_users())
        || state.v.len() != eff.n_sense()
        || state.theta.len() != eff.n_sense()
    {
        return Err(Error::Dimension("beamforming state does not match the channels".into()));
    }
    let canon = Canonical::of(eff);
    let (out, report) = solve_tx(&canon.state(state), &canon.channels(eff), config, ao)?;
    Ok((canon.reverse().state(&out), report))
}

fn solve_tx<T: Real>(
    state: &BeamformingState<T>,
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
    ao: &AoConfig<T>,
) -> Result<(BeamformingState<T>, TxReport<T>)> {
    let k_users = eff.n_users();
    let p_max = config.p_max;
    let sigma2 = config.sigma_c2;
    let root_p = p_max.sqrt();

    let mut cur = state.clone();
    let d0 = soc_rotation(&cur.w, eff);
    rotate_state(&mut cur, &d0);

    let u = signal_basis(eff);
    let r = u.ncols();
    if r == 0 {
        return Err(Error::Domain("all effective channels vanish".into()));
    }
    let hs = u.ad_mul(&eff.user) * creal(root_p / sigma2.sqrt());
    let a_sub = u.ad_mul(&eff.sense);
    let terms = SensingTerms::new(&cur);
    let q_sub = terms.quadratic(&a_sub) * creal(p_max);
    let lin: Vec<CVector<T>> = (0..k_users).map(|k| terms.linear(&a_sub, k) * creal(root_p)).collect();

    let gamma_target = config.gamma().max(lit(1e-9));
    let warm = u.ad_mul(&cur.w) / creal(root_p);
    let starts = starting_points(&hs, &warm, gamma_target);
    let feasible_at = |z: &CMatrix<T>, g: T| {
        crate::scalar::fro2(z) < T::one() && min_of(&cone_sinr(&hs, z)) > g
    };
    let (start, gamma_used, infeasible_qos) = match starts.iter().find(|z| feasible_at(z, gamma_target)) {
        Some(z) => (z.clone(), gamma_target, false),
        None => {
            let (best, cap) = starts
                .iter()
                .map(|z| (z, min_of(&cone_sinr(&hs, z))))
                .fold((None, -T::one()), |(bz, bc), (z, c)| if c > bc { (Some(z), c) } else { (bz, bc) });
            let Some(best) = best.filter(|_| cap > T::zero()) else {
                return Err(Error::Domain("no direction reaches any user".into()));
            };
            (best.clone(), cap * lit(0.99), true)
        }
    };

    let (alpha, alpha_im): (Vec<_>, Vec<_>) =
        (0..k_users).map(|k| real_functionals(&hs.column(k).into_owned())).unzip();
    let problem = BarrierProblem {
        r,
        k: k_users,
        alpha,
        alpha_im,
        q_real: realify(&q_sub),
        lin: lin.iter().map(|c| {
            let mut v = DVector::zeros(2 * r);
            for i in 0..r {
                v[i] = c[i].re;
                v[r + i] = c[i].im;
            }
            v
        }).collect(),
        gamma: gamma_used,
    };
    let x0 = pack(&start);
    debug_assert!(problem.strictly_feasible(&x0));
    let (x, tau, newton_steps, converged) =
        problem.solve(x0, ao.barrier_growth(), ao.inner_iters, ao.tol_kkt * lit(1e-2));

    let z = unpack(&x, r, k_users);
    let margins = problem.margins(&x);
    let slack_power = T::one() - x.norm_squared();
    let beta: Vec<T> = margins.iter().map(|(_, s)| T::one() / (tau * *s)).collect();
    let nu = T::one() / (tau * slack_power * p_max);

    let mut out = cur.clone();
    out.w = &u * &z * creal(root_p);
    out.beta = beta.clone();
    out.nu = nu;

    // canonical phase: makes the structural scalar tau_k real and positive
    let g = eff.user.ad_mul(&out.w);
    let taus: Vec<Cplx<T>> = (0..k_users)
        .map(|k| (creal(g[(k, k)].re / gamma_used) + g[(k, k)]) * creal(beta[k] / sigma2))
        .collect();
    let d: Vec<Cplx<T>> = taus
        .iter()
        .map(|t| if cabs(*t) > T::zero() { t.conj() / creal(cabs(*t)) } else { creal(T::one()) })
        .collect();
    rotate_state(&mut out, &d);
    let tau_abs: Vec<T> = taus.iter().map(|t| cabs(*t)).collect();
    out.p = out.w.column_iter().map(|c| c.norm_squared()).collect();
    out.xi = structure_xi(&out, &tau_abs);

    let stationarity = stationarity_residual(&out, eff, config, &tau_abs);
    let slackness = margins
        .iter()
        .zip(&beta)
        .map(|((_, s), b)| (*b * *s).abs())
        .fold((nu * (p_max - crate::scalar::fro2(&out.w))).abs(), |a, b| a.max(b));
    let w_norm = crate::scalar::fro2(&out.w).sqrt();
    let outside = &out.w - &u * u.ad_mul(&out.w);
    let subspace_residual =
        if w_norm > T::zero() { crate::scalar::fro2(&outside).sqrt() / w_norm } else { T::zero() };
    let objective = wmmse_objective(&out, eff, config)?;
    Ok((
        out,
        TxReport {
            objective,
            stationarity,
            slackness,
            subspace_residual,
            newton_steps,
            converged,
            infeasible_qos,
            gamma_used,
        },
    ))
}

/// `xi_nk = conj((Theta_n v_n)_k) / tau_k`.
fn structure_xi<T: Real>(state: &BeamformingState<T>, tau: &[T]) -> CMatrix<T> {
    let terms = SensingTerms::new(state);
    let n_r = state.v.len();
    DMatrix::from_fn(n_r, tau.len(), |n, k| {
        if tau[k] > T::zero() {
            terms.theta_v[n][k].conj() / creal(tau[k])
        } else {
            czero()
        }
    })
}

/// `A = sum_n (v_n^H Theta_n v_n) a_n a_n^H + sum_j (beta_j / sigma^2) h_j h_j^H + nu I`,
/// restricted to the signal basis `u` (returned as `u^H A u` without the `nu` term).
fn structure_matrix_sub<T: Real>(
    u: &CMatrix<T>,
    beta: &[T],
    state_terms: &SensingTerms<T>,
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
) -> CMatrix<T> {
    let a_sub = u.ad_mul(&eff.sense);
    let h_sub = u.ad_mul(&eff.user);
    let mut m = state_terms.quadratic(&a_sub);
    for (j, b) in beta.iter().enumerate() {
        let h = h_sub.column(j).into_owned();
        m += &h * h.adjoint() * creal(*b / config.sigma_c2);
    }
    m
}

fn stationarity_residual<T: Real>(
    state: &BeamformingState<T>,
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
    tau: &[T],
) -> T {
    let terms = SensingTerms::new(state);
    let mut worst = T::zero();
    for k in 0..eff.n_users() {
        let w = state.w.column(k).into_owned();
        let mut aw = &w * creal(state.nu);
        for n in 0..eff.n_sense() {
            let a = eff.sense_col(n);
            aw += &a * (dotc(&a, &w) * creal(terms.weight[n]));
        }
        for j in 0..eff.n_users() {
            let h = eff.user_col(j);
            aw += &h * (dotc(&h, &w) * creal(state.beta[j] / config.sigma_c2));
        }
        let rhs = terms.linear(&eff.sense, k) + eff.user_col(k) * creal(tau[k]);
        let scale = norm2(&aw).sqrt().max(norm2(&rhs).sqrt());
        if scale > T::zero() {
            worst = worst.max(norm2(&(aw - rhs)).sqrt() / scale);
        }
    }
    worst
}

/// Rebuilds `W` from the structure parameters:
/// `w_k = sqrt(p_k) A^{-1} y_k / |A^{-1} y_k|` with `y_k = h_k + sum_n xi_nk a_n`.
pub fn reconstruct_beamformer<T: Real>(
    p: &[T],
    beta: &[T],
    xi: &CMatrix<T>,
    nu: T,
    eff: &EffectiveChannels<T>,
    v: &[CVector<T>],
    theta: &[CMatrix<T>],
    config: &ScenarioConfig<T>,
) -> Result<CMatrix<T>> {
    let k_users = eff.n_users();
    if p.len() != k_users || beta.len() != k_users || xi.ncols() != k_users || xi.nrows() != eff.n_sense() {
        return Err(Error::Dimension("structure parameters do not match the channels".into()));
    }
    if v.len() != eff.n_sense() || theta.len() != eff.n_sense() {
        return Err(Error::Dimension("receive filters do not match the channels".into()));
    }
    let canon = Canonical::of(eff);
    let params = canon.state(&BeamformingState {
        w: DMatrix::from_element(eff.n_antennas(), k_users, czero()),
        v: v.to_vec(),
        theta: theta.to_vec(),
        p: p.to_vec(),
        beta: beta.to_vec(),
        xi: xi.clone(),
        nu,
    });
    let w = reconstruct_in_order(&params, &canon.channels(eff), config)?;
    let back = canon.reverse();
    Ok(DMatrix::from_fn(w.nrows(), k_users, |r, c| w[(back.rows[r], back.users[c])]))
}

fn reconstruct_in_order<T: Real>(
    params: &BeamformingState<T>,
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
) -> Result<CMatrix<T>> {
    let k_users = eff.n_users();
    let (p, beta, xi, nu) = (&params.p, &params.beta, &params.xi, params.nu);
    let u = signal_basis(eff);
    let r = u.ncols();
    let mut w = DMatrix::from_element(eff.n_antennas(), k_users, czero());
    if r == 0 {
        return Ok(w);
    }
    let terms = SensingTerms::new(params);
    let m = structure_matrix_sub(&u, beta, &terms, eff, config) + DMatrix::identity(r, r) * creal(nu);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Domain("structure matrix is singular".into()))?;
    for k in 0..k_users {
        let mut y = eff.user_col(k);
        for n in 0..eff.n_sense() {
            y += eff.sense_col(n) * xi[(n, k)];
        }
        let x = &u * chol.solve(&u.ad_mul(&y));
        let nrm = norm2(&x).sqrt();
        if nrm > T::zero() {
            w.set_column(k, &(x * creal(p[k].max(T::zero()).sqrt() / nrm)));
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ao::updates::{update_receive_filters, update_weights};
    use crate::metrics::soc_margins;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_c(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| cplx(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn instance(seed: u64, n_t: usize, k: usize, n_r: usize) -> (EffectiveChannels<f64>, BeamformingState<f64>, ScenarioConfig<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eff = EffectiveChannels { user: rand_c(&mut rng, n_t, k), sense: rand_c(&mut rng, n_t, n_r) };
        let cfg = ScenarioConfig {
            sigma_c2: 0.01,
            sigma_s2: 0.01,
            r_min: 2.0,
            p_max: 1.0,
            n_tx: n_t,
            n_users: k,
            n_rx: n_r,
            ..Default::default()
        };
        let mut st = BeamformingState::zeros(n_t, k, n_r, 1.0);
        st.w = rand_c(&mut rng, n_t, k) * creal(0.3);
        st.v = update_receive_filters(&st.w, &eff, &cfg);
        st.theta = update_weights(&st.w, &st.v, &eff, &cfg).theta;
        (eff, st, cfg)
    }

    #[test]
    fn solve_is_feasible_and_kkt_consistent() {
        let ao = AoConfig::<f64>::default();
        for seed in 0..10 {
            let (eff, st, cfg) = instance(seed, 6, 3, 2);
            let (out, rep) = update_tx_beamforming(&st, &eff, &cfg, &ao).unwrap();
            assert!(rep.converged, "seed {seed}: {rep:?}");
            assert!(!rep.infeasible_qos);
            assert!(out.power() <= cfg.p_max + 1e-9);
            assert!(soc_margins(&out.w, &eff, &cfg).iter().all(|m| *m >= -1e-9));
            assert!(rep.stationarity < 1e-6, "{rep:?}");
            assert!(rep.slackness < 1e-6, "{rep:?}");
            assert!(rep.subspace_residual < 1e-10);
            let rec = reconstruct_beamformer(&out.p, &out.beta, &out.xi, out.nu, &eff, &out.v, &out.theta, &cfg).unwrap();
            let err = crate::scalar::max_abs_diff(&rec, &out.w);
            assert!(err < 1e-6, "seed {seed}: reconstruction error {err}");
            // the solve never loses to the surrogate value at the input point
            let before = wmmse_objective(&st, &eff, &cfg).unwrap();
            if soc_margins(&st.w, &eff, &cfg).iter().all(|m| *m >= 0.0) && st.power() <= 1.0 {
                assert!(rep.objective <= before + 1e-9);
            }
        }
    }

    #[test]
    fn rotation_preserves_surrogate() {
        let (eff, st, cfg) = instance(3, 4, 2, 2);
        let mut r = st.clone();
        rotate_state(&mut r, &[crate::scalar::cis(0.4), crate::scalar::cis(-2.0)]);
        let a = wmmse_objective(&st, &eff, &cfg).unwrap();
        let b = wmmse_objective(&r, &eff, &cfg).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn reconstruct_trivial_cases() {
        let (eff, st, cfg) = instance(4, 4, 2, 1);
        let zero_xi = DMatrix::from_element(1, 2, czero());
        let zero_v = vec![DVector::from_element(2, czero())];
        let w = reconstruct_beamformer(&[0.3, 0.7], &[0.0, 0.0], &zero_xi, 1.0, &eff, &zero_v, &st.theta, &cfg).unwrap();
        for k in 0..2 {
            let h = eff.user_col(k);
            let col = w.column(k).into_owned();
            let cos = cabs(dotc(&h, &col)) / (norm2(&h).sqrt() * norm2(&col).sqrt());
            assert!((cos - 1.0).abs() < 1e-12);
        }
        assert!((norm2(&w.column(0).into_owned()) - 0.3).abs() < 1e-12);
        assert!((norm2(&w.column(1).into_owned()) - 0.7).abs() < 1e-12);
        assert!(matches!(
            reconstruct_beamformer(&[0.3, 0.7], &[0.0, 0.0], &zero_xi, 0.0, &eff, &zero_v, &st.theta, &cfg),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn single_user_without_sensing_is_matched_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let eff = EffectiveChannels { user: rand_c(&mut rng, 4, 1), sense: DMatrix::from_element(4, 0, czero()) };
        let cfg = ScenarioConfig { sigma_c2: 0.01, r_min: 1e-6, n_tx: 4, n_users: 1, n_rx: 0, ..Default::default() };
        let st = BeamformingState::zeros(4, 1, 0, 1.0);
        let (out, rep) = update_tx_beamforming(&st, &eff, &cfg, &AoConfig::default()).unwrap();
        assert!(rep.converged);
        let h = eff.user_col(0);
        let w = out.w.column(0).into_owned();
        let cos = cabs(dotc(&h, &w)) / (norm2(&h).sqrt() * norm2(&w).sqrt());
        assert!((cos - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unreachable_target_is_flagged() {
        let (eff, st, mut cfg) = instance(5, 4, 2, 1);
        cfg.r_min = 40.0;
        let (out, rep) = update_tx_beamforming(&st, &eff, &cfg, &AoConfig::default()).unwrap();
        assert!(rep.infeasible_qos);
        assert!(rep.gamma_used < cfg.gamma());
        assert!(out.power() <= cfg.p_max + 1e-9);
    }
}
