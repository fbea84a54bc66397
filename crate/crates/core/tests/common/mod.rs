#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swisac::ao::{update_receive_filters, update_weights};
use swisac::channel::EffectiveChannels;
use swisac::metrics::BeamformingState;
use swisac::scalar::{cplx, CMatrix, CVector, Cplx};
use swisac::scenario::ScenarioConfig;

pub type C = Cplx<f64>;

pub fn small_config() -> ScenarioConfig<f64> {
    ScenarioConfig { segments: 2, pas_per_segment: 2, n_tx: 4, n_rx: 2, n_users: 2, n_targets: 1, ..Default::default() }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| cplx(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

/// Unit-scale synthetic channels with `(W, V, Theta)` at a random point.
pub fn synthetic_instance(
    seed: u64,
    n_t: usize,
    k: usize,
    n_r: usize,
    r_min: f64,
) -> (EffectiveChannels<f64>, BeamformingState<f64>, ScenarioConfig<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eff = EffectiveChannels { user: random_matrix(&mut rng, n_t, k), sense: random_matrix(&mut rng, n_t, n_r) };
    let cfg = ScenarioConfig {
        sigma_c2: 0.01,
        sigma_s2: 0.01,
        r_min,
        p_max: 1.0,
        n_tx: n_t,
        n_users: k,
        n_rx: n_r,
        ..Default::default()
    };
    let mut st = BeamformingState::zeros(n_t, k, n_r, 1.0);
    st.w = random_matrix(&mut rng, n_t, k) * cplx(0.3, 0.0);
    st.v = update_receive_filters(&st.w, &eff, &cfg);
    st.theta = update_weights(&st.w, &st.v, &eff, &cfg).theta;
    (eff, st, cfg)
}

fn inner_prod(a: &CMatrix<f64>, b: &CMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

fn fro2(a: &CMatrix<f64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Transmit subproblem at fixed `(V, Theta)`: the WMMSE trace terms as a
/// function of `W`, the per-user cone constraints
/// `sqrt(gamma) |[h_k^H w_j (j != k), sigma]| - Re h_k^H w_k <= 0` and the
/// power ball.
pub struct TxProblem<'a> {
    pub eff: &'a EffectiveChannels<f64>,
    pub v: &'a [CVector<f64>],
    pub theta: &'a [CMatrix<f64>],
    pub sigma_s2: f64,
    pub sigma_c2: f64,
    pub gamma: f64,
    pub p_max: f64,
}

impl TxProblem<'_> {
    /// `sum_n Tr(Theta_n E_n)`; the log-determinant is constant in `W`.
    pub fn trace_terms(&self, w: &CMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for n in 0..self.v.len() {
            let a = self.eff.sense.column(n).into_owned();
            let q = w.ad_mul(&a);
            let (v, th) = (&self.v[n], &self.theta[n]);
            let c = (v.adjoint() * th * v)[(0, 0)].re;
            let cross = (v.adjoint() * th * &q)[(0, 0)].re;
            let tr: f64 = (0..th.nrows()).map(|i| th[(i, i)].re).sum();
            total += tr - 2.0 * cross + c * q.norm_squared() + self.sigma_s2 * c;
        }
        total
    }

    /// Twice the conjugate derivative, i.e. the real gradient packed as complex.
    pub fn trace_grad(&self, w: &CMatrix<f64>) -> CMatrix<f64> {
        let mut g = DMatrix::zeros(w.nrows(), w.ncols());
        for n in 0..self.v.len() {
            let a = self.eff.sense.column(n).into_owned();
            let (v, th) = (&self.v[n], &self.theta[n]);
            let c = (v.adjoint() * th * v)[(0, 0)].re;
            let row = a.adjoint() * w;
            g += (&a * row) * cplx(2.0 * c, 0.0) - (&a * (v.adjoint() * th)) * cplx(2.0, 0.0);
        }
        g
    }

    pub fn cones(&self, w: &CMatrix<f64>) -> Vec<f64> {
        let k_users = w.ncols();
        (0..k_users)
            .map(|k| {
                let h = self.eff.user.column(k);
                let mut i = self.sigma_c2;
                for j in (0..k_users).filter(|&j| j != k) {
                    i += h.dotc(&w.column(j)).norm_sqr();
                }
                self.gamma.sqrt() * i.sqrt() - h.dotc(&w.column(k)).re
            })
            .collect()
    }

    fn cone_grad(&self, w: &CMatrix<f64>, k: usize) -> CMatrix<f64> {
        let k_users = w.ncols();
        let h = self.eff.user.column(k).into_owned();
        let mut i = self.sigma_c2;
        for j in (0..k_users).filter(|&j| j != k) {
            i += h.dotc(&w.column(j)).norm_sqr();
        }
        let s = i.sqrt();
        let mut g = DMatrix::zeros(w.nrows(), k_users);
        for j in 0..k_users {
            if j == k {
                g.set_column(j, &(-&h));
            } else {
                let hw = h.dotc(&w.column(j));
                g.set_column(j, &(&h * (hw * cplx(self.gamma.sqrt() / s, 0.0))));
            }
        }
        g
    }

    fn project(&self, w: CMatrix<f64>) -> CMatrix<f64> {
        let n2 = fro2(&w);
        if n2 > self.p_max {
            w * cplx((self.p_max / n2).sqrt(), 0.0)
        } else {
            w
        }
    }

    /// Augmented Lagrangian on the cones with projected-gradient inner
    /// steps on the power ball; `outer * inner` gradient steps in total.
    pub fn oracle(&self, n_t: usize, k_users: usize, outer: usize, inner: usize) -> CMatrix<f64> {
        let mut w = DMatrix::from_element(n_t, k_users, cplx(0.0, 0.0));
        let mut lambda = vec![0.0; k_users];
        let mut rho = 10.0;
        let mut t = 1e-2;
        let mut last_violation = f64::INFINITY;
        for _ in 0..outer {
            let phi = |w: &CMatrix<f64>, lambda: &[f64], rho: f64| {
                let pen: f64 = self
                    .cones(w)
                    .iter()
                    .zip(lambda)
                    .map(|(c, l)| (c + l / rho).max(0.0).powi(2))
                    .sum();
                self.trace_terms(w) + 0.5 * rho * pen
            };
            for _ in 0..inner {
                let cones = self.cones(&w);
                let mut g = self.trace_grad(&w);
                for k in 0..k_users {
                    let act = (cones[k] + lambda[k] / rho).max(0.0);
                    if act > 0.0 {
                        g += self.cone_grad(&w, k) * cplx(rho * act, 0.0);
                    }
                }
                let f0 = phi(&w, &lambda, rho);
                loop {
                    let cand = self.project(&w - &g * cplx(t, 0.0));
                    let d = &cand - &w;
                    if phi(&cand, &lambda, rho) <= f0 + inner_prod(&g, &d) + fro2(&d) / (2.0 * t) || t < 1e-14 {
                        w = cand;
                        t *= 1.5;
                        break;
                    }
                    t *= 0.5;
                }
            }
            let cones = self.cones(&w);
            let violation = cones.iter().fold(0.0f64, |a, c| a.max(c.max(0.0)));
            for k in 0..k_users {
                lambda[k] = (lambda[k] + rho * cones[k]).max(0.0);
            }
            if violation > 0.25 * last_violation {
                rho = (rho * 2.0).min(1e7);
            }
            last_violation = violation;
        }
        w
    }
}
