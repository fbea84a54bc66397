//! Rates, MSE matrices, the WMMSE surrogate and its penalized form, SOC
//! margins, the MUI matrix and the constraint satisfaction ratio.

use nalgebra::{DMatrix, DVector};

use crate::channel::EffectiveChannels;
use crate::error::{Error, Result};
use crate::scalar::{abs2, cabs, creal, czero, dotc, from_usize, lit, norm2, CMatrix, CVector, Real};
use crate::scenario::ScenarioConfig;

/// Transmit beamformer, receive filters, MSE weights and the structure
/// variables of the optimal beamformer.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingState<T: Real> {
    /// `N_t x K_c`, column `k` is `w_k`.
    pub w: CMatrix<T>,
    /// One `K_c` receive filter per receive waveguide.
    pub v: Vec<CVector<T>>,
    pub theta: Vec<CMatrix<T>>,
    pub p: Vec<T>,
    pub beta: Vec<T>,
    /// `N_r x K_c`.
    pub xi: CMatrix<T>,
    pub nu: T,
}

impl<T: Real> BeamformingState<T> {
    /// `W = 0`, `V = 0`, `Theta = I`, `beta = 1`, `Xi = 0`, `nu = 1`, `p = P / K`.
    pub fn zeros(n_tx: usize, n_users: usize, n_rx: usize, p_max: T) -> Self {
        Self {
            w: DMatrix::from_element(n_tx, n_users, czero()),
            v: vec![DVector::from_element(n_users, czero()); n_rx],
            theta: vec![DMatrix::identity(n_users, n_users); n_rx],
            p: vec![p_max / from_usize(n_users.max(1)); n_users],
            beta: vec![T::one(); n_users],
            xi: DMatrix::from_element(n_rx, n_users, czero()),
            nu: T::one(),
        }
    }

    pub fn power(&self) -> T {
        crate::scalar::fro2(&self.w)
    }
}

/// `h_k^H w_j` for every pair, shape `K_c x K_c`.
pub fn gram<T: Real>(w: &CMatrix<T>, eff: &EffectiveChannels<T>) -> CMatrix<T> {
    eff.user.ad_mul(w)
}

fn sinr_parts<T: Real>(k: usize, g: &CMatrix<T>) -> (T, T) {
    let signal = abs2(g[(k, k)]);
    let interference = (0..g.ncols()).filter(|&j| j != k).fold(T::zero(), |a, j| a + abs2(g[(k, j)]));
    (signal, interference)
}

fn log2_1p<T: Real>(x: T) -> T {
    x.ln_1p() / lit::<T>(2.0).ln()
}

/// Rate of user `k` in bits per channel use.
pub fn communication_rate<T: Real>(
    k: usize,
    w: &CMatrix<T>,
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
) -> T {
    let hk = eff.user_col(k);
    let mut signal = T::zero();
    let mut interference = T::zero();
    for j in 0..w.ncols() {
        let v = abs2(dotc(&hk, &w.column(j).into_owned()));
        if j == k {
            signal = v;
        } else {
            interference += v;
        }
    }
    log2_1p(signal / (interference + config.sigma_c2))
}

pub fn communication_rates<T: Real>(w: &CMatrix<T>, eff: &EffectiveChannels<T>, config: &ScenarioConfig<T>) -> Vec<T> {
    let g = gram(w, eff);
    (0..eff.n_users())
        .map(|k| {
            let (s, i) = sinr_parts(k, &g);
            log2_1p(s / (i + config.sigma_c2))
        })
        .collect()
}

/// `sum_n log2(1 + |a_n^H W|^2 / sigma_s^2)`.
pub fn sensing_rate<T: Real>(w: &CMatrix<T>, eff: &EffectiveChannels<T>, config: &ScenarioConfig<T>) -> T {
    let q = w.ad_mul(&eff.sense);
    (0..eff.n_sense()).fold(T::zero(), |acc, n| {
        let e = q.column(n).iter().fold(T::zero(), |a, z| a + abs2(*z));
        acc + log2_1p(e / config.sigma_s2)
    })
}

/// `E_n = (I - v q^H)(I - v q^H)^H + sigma_s^2 v v^H` with `q = W^H a_n`.
pub fn mse_matrix<T: Real>(
    n: usize,
    w: &CMatrix<T>,
    v_n: &CVector<T>,
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
) -> CMatrix<T> {
    let q = w.ad_mul(&eff.sense_col(n));
    mse_from_q(&q, v_n, config.sigma_s2)
}

pub(crate) fn mse_from_q<T: Real>(q: &CVector<T>, v: &CVector<T>, sigma2: T) -> CMatrix<T> {
    let k = q.len();
    let a = DMatrix::identity(k, k) - v * q.adjoint();
    let mut e = &a * a.adjoint() + v * v.adjoint() * creal(sigma2);
    hermitize(&mut e);
    e
}

pub(crate) fn hermitize<T: Real>(m: &mut CMatrix<T>) {
    let n = m.nrows();
    let half = lit::<T>(0.5);
    for i in 0..n {
        m[(i, i)] = creal(m[(i, i)].re);
        for j in i + 1..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * half;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Natural-log determinant of a Hermitian positive definite matrix.
pub fn logdet_hpd<T: Real>(m: &CMatrix<T>) -> Result<T> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    let mut acc = T::zero();
    for i in 0..m.nrows() {
        acc += l[(i, i)].re.ln();
    }
    Ok(acc * lit(2.0))
}

/// Trace of a product of two square matrices without forming it.
pub(crate) fn trace_product<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> T {
    let n = a.nrows();
    let mut acc = czero();
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc.re
}

/// `sum_n Tr(Theta_n E_n) - logdet(Theta_n)`.
pub fn wmmse_objective<T: Real>(
    state: &BeamformingState<T>,
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
) -> Result<T> {
    let mut total = T::zero();
    for n in 0..eff.n_sense() {
        let e = mse_matrix(n, &state.w, &state.v[n], eff, config);
        total += trace_product(&state.theta[n], &e) - logdet_hpd(&state.theta[n])?;
    }
    Ok(total)
}

/// Linear QoS margin `|h_k^H w_k|^2/(gamma sigma^2) - sum_{j!=k}|h_k^H w_j|^2/sigma^2 - 1`.
pub fn qos_margins<T: Real>(w: &CMatrix<T>, eff: &EffectiveChannels<T>, config: &ScenarioConfig<T>) -> Result<Vec<T>> {
    let gamma = config.gamma();
    if !(gamma > T::zero()) {
        return Err(Error::Domain("penalty form requires R_min > 0".into()));
    }
    let g = gram(w, eff);
    Ok((0..eff.n_users())
        .map(|k| {
            let (s, i) = sinr_parts(k, &g);
            s / (gamma * config.sigma_c2) - i / config.sigma_c2 - T::one()
        })
        .collect())
}

/// WMMSE surrogate minus `sum_k mu_k * qos_margin_k`.
pub fn penalized_objective<T: Real>(
    state: &BeamformingState<T>,
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
    mu: &[T],
) -> Result<T> {
    let base = wmmse_objective(state, eff, config)?;
    let margins = qos_margins(&state.w, eff, config)?;
    Ok(margins.iter().zip(mu).fold(base, |acc, (m, u)| acc - *u * *m))
}

/// Second-order-cone margin of user `k` after the phase rotation that makes
/// `h_k^H w_k` real and nonnegative.
pub fn soc_margin<T: Real>(k: usize, w: &CMatrix<T>, eff: &EffectiveChannels<T>, config: &ScenarioConfig<T>) -> T {
    let g = gram(w, eff);
    soc_margin_from_gram(k, &g, config)
}

pub(crate) fn soc_margin_from_gram<T: Real>(k: usize, g: &CMatrix<T>, config: &ScenarioConfig<T>) -> T {
    let (s, i) = sinr_parts(k, g);
    let gamma = config.gamma();
    let rhs = (i / config.sigma_c2 + T::one()).sqrt();
    if !(gamma > T::zero()) {
        // every rate meets a zero requirement
        return if s > T::zero() { T::max_value().unwrap_or(T::one()) } else { T::zero() };
    }
    s.sqrt() / (gamma * config.sigma_c2).sqrt() - rhs
}

pub fn soc_margins<T: Real>(w: &CMatrix<T>, eff: &EffectiveChannels<T>, config: &ScenarioConfig<T>) -> Vec<T> {
    let g = gram(w, eff);
    (0..eff.n_users()).map(|k| soc_margin_from_gram(k, &g, config)).collect()
}

/// Rotates each column so that `h_k^H w_k` is real and nonnegative.
pub fn rotate_phases<T: Real>(w: &mut CMatrix<T>, eff: &EffectiveChannels<T>) {
    for k in 0..w.ncols() {
        let d = dotc(&eff.user_col(k), &w.column(k).into_owned());
        let a = cabs(d);
        if a > T::zero() {
            let phase = d.conj() / creal(a);
            for z in w.column_mut(k).iter_mut() {
                *z *= phase;
            }
        }
    }
}

/// `B_kj = h_k^H w_j` off the diagonal and `-(1/gamma) h_k^H w_k` on it.
pub fn mui_matrix<T: Real>(w: &CMatrix<T>, eff: &EffectiveChannels<T>, config: &ScenarioConfig<T>) -> CMatrix<T> {
    let mut b = gram(w, eff);
    let gamma = config.gamma();
    for k in 0..b.nrows().min(b.ncols()) {
        b[(k, k)] = -b[(k, k)] / creal(gamma);
    }
    b
}

/// Fraction of users with `rate >= R_min - 1e-9`.
pub fn csr(rates: &[f64], r_min: f64) -> f64 {
    if rates.is_empty() {
        return 1.0;
    }
    rates.iter().filter(|&&r| r >= r_min - 1e-9).count() as f64 / rates.len() as f64
}

/// Squared norm of `W^H a_n` for every receive waveguide.
pub fn sensing_energies<T: Real>(w: &CMatrix<T>, eff: &EffectiveChannels<T>) -> Vec<T> {
    (0..eff.n_sense()).map(|n| norm2(&w.ad_mul(&eff.sense_col(n)))).collect()
}
