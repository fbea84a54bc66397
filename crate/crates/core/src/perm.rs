//! Relabelling of users, targets, waveguides and segments.
//!
//! Every permutation is stored in gather form: position `j` of the relabelled
//! instance holds item `perm[j]` of the original one.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::metrics::BeamformingState;
use crate::scalar::{to_f64, CMatrix, Real};
use crate::scenario::{PinchingLayout, Placement, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationTuple {
    pub users: Vec<usize>,
    pub targets: Vec<usize>,
    pub tx_waveguides: Vec<usize>,
    /// Segment order on each relabelled transmit waveguide.
    pub tx_segments: Vec<Vec<usize>>,
    pub rx_waveguides: Vec<usize>,
    pub rx_segments: Vec<Vec<usize>>,
}

fn shuffled<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

fn inverse(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (j, &i) in p.iter().enumerate() {
        inv[i] = j;
    }
    inv
}

impl PermutationTuple {
    pub fn identity<T: Real>(config: &ScenarioConfig<T>) -> Self {
        let id = |n: usize| (0..n).collect::<Vec<_>>();
        Self {
            users: id(config.n_users),
            targets: id(config.n_targets),
            tx_waveguides: id(config.n_tx),
            tx_segments: vec![id(config.segments); config.n_tx],
            rx_waveguides: id(config.n_rx),
            rx_segments: vec![id(config.segments); config.n_rx],
        }
    }

    pub fn random<T: Real, R: Rng + ?Sized>(config: &ScenarioConfig<T>, rng: &mut R) -> Self {
        Self {
            users: shuffled(config.n_users, rng),
            targets: shuffled(config.n_targets, rng),
            tx_waveguides: shuffled(config.n_tx, rng),
            tx_segments: (0..config.n_tx).map(|_| shuffled(config.segments, rng)).collect(),
            rx_waveguides: shuffled(config.n_rx, rng),
            rx_segments: (0..config.n_rx).map(|_| shuffled(config.segments, rng)).collect(),
        }
    }

    /// The tuple undoing `self`.
    pub fn inverse(&self) -> Self {
        let tx_inv = inverse(&self.tx_waveguides);
        let rx_inv = inverse(&self.rx_waveguides);
        Self {
            users: inverse(&self.users),
            targets: inverse(&self.targets),
            tx_segments: tx_inv.iter().map(|&n| inverse(&self.tx_segments[n])).collect(),
            rx_segments: rx_inv.iter().map(|&n| inverse(&self.rx_segments[n])).collect(),
            tx_waveguides: tx_inv,
            rx_waveguides: rx_inv,
        }
    }

    /// Relabelling into a canonical order that depends only on geometry:
    /// users and targets by coordinates, waveguides by axis, segments by
    /// feed point. Any relabelled copy of an instance maps to the same
    /// canonical instance.
    pub fn canonical<T: Real>(placement: &Placement<T>, layout: &PinchingLayout<T>) -> Self {
        let key = |p: &[T]| p.iter().map(|x| to_f64(*x)).collect::<Vec<f64>>();
        let order = |keys: Vec<Vec<f64>>| {
            let mut idx: Vec<usize> = (0..keys.len()).collect();
            idx.sort_by(|&a, &b| {
                keys[a]
                    .iter()
                    .zip(&keys[b])
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            idx
        };
        let s_count = layout.segments;
        let tx_waveguides = order(layout.tx_axis.iter().map(|(y, z)| key(&[*y, *z])).collect());
        let rx_waveguides = order(layout.rx_axis.iter().map(|(y, z)| key(&[*y, *z])).collect());
        Self {
            users: order(placement.users.iter().map(|p| key(p)).collect()),
            targets: order(placement.targets.iter().map(|p| key(p)).collect()),
            tx_segments: tx_waveguides
                .iter()
                .map(|&n| order((0..s_count).map(|s| key(&[layout.tx_feed_x[n * s_count + s]])).collect()))
                .collect(),
            rx_segments: rx_waveguides
                .iter()
                .map(|&n| order((0..s_count).map(|s| key(&[layout.rx_feed_x[layout.rx_index(s, n)]])).collect()))
                .collect(),
            tx_waveguides,
            rx_waveguides,
        }
    }

    pub fn placement<T: Real>(&self, p: &Placement<T>) -> Placement<T> {
        Placement {
            users: self.users.iter().map(|&i| p.users[i]).collect(),
            targets: self.targets.iter().map(|&i| p.targets[i]).collect(),
        }
    }

    pub fn layout<T: Real>(&self, l: &PinchingLayout<T>) -> PinchingLayout<T> {
        let (s_count, m_count) = (l.segments, l.pas_per_segment);
        let mut out = l.clone();
        for (n_new, &n_old) in self.tx_waveguides.iter().enumerate() {
            out.tx_axis[n_new] = l.tx_axis[n_old];
            let order = &self.tx_segments[n_new];
            for (s_new, &s_old) in order.iter().enumerate() {
                out.tx_feed_x[n_new * s_count + s_new] = l.tx_feed_x[n_old * s_count + s_old];
                for m in 0..m_count {
                    out.tx_x[l.tx_index(m, s_new, n_new)] = l.tx_x[l.tx_index(m, s_old, n_old)];
                }
            }
            out.tx_selected_segment[n_new] = inverse(order)[l.tx_selected_segment[n_old]];
        }
        for (n_new, &n_old) in self.rx_waveguides.iter().enumerate() {
            out.rx_axis[n_new] = l.rx_axis[n_old];
            for (s_new, &s_old) in self.rx_segments[n_new].iter().enumerate() {
                let (a, b) = (l.rx_index(s_new, n_new), l.rx_index(s_old, n_old));
                out.rx_x[a] = l.rx_x[b];
                out.rx_feed_x[a] = l.rx_feed_x[b];
            }
        }
        out
    }

    /// Rows by transmit waveguide, columns by user.
    pub fn beamformer<T: Real>(&self, w: &CMatrix<T>) -> CMatrix<T> {
        DMatrix::from_fn(w.nrows(), w.ncols(), |r, c| w[(self.tx_waveguides[r], self.users[c])])
    }

    pub fn beamforming<T: Real>(&self, st: &BeamformingState<T>) -> BeamformingState<T> {
        let u = &self.users;
        let k = u.len();
        BeamformingState {
            w: self.beamformer(&st.w),
            v: self
                .rx_waveguides
                .iter()
                .map(|&n| DVector::from_fn(k, |i, _| st.v[n][u[i]]))
                .collect(),
            theta: self
                .rx_waveguides
                .iter()
                .map(|&n| DMatrix::from_fn(k, k, |i, j| st.theta[n][(u[i], u[j])]))
                .collect(),
            p: u.iter().map(|&i| st.p[i]).collect(),
            beta: u.iter().map(|&i| st.beta[i]).collect(),
            xi: DMatrix::from_fn(st.xi.nrows(), k, |n, i| st.xi[(self.rx_waveguides[n], u[i])]),
            nu: st.nu,
        }
    }
}

/// Largest coordinate or entry difference between two solutions.
pub fn solution_deviation<T: Real>(
    a: (&PinchingLayout<T>, &BeamformingState<T>),
    b: (&PinchingLayout<T>, &BeamformingState<T>),
) -> f64 {
    let diff = |x: &[T], y: &[T]| {
        x.iter()
            .zip(y)
            .map(|(p, q)| crate::scalar::to_f64((*p - *q).abs()))
            .fold(0.0, f64::max)
    };
    let cdiff = |x: &CMatrix<T>, y: &CMatrix<T>| crate::scalar::to_f64(crate::scalar::max_abs_diff(x, y));
    let mut worst = diff(&a.0.tx_x, &b.0.tx_x).max(diff(&a.0.rx_x, &b.0.rx_x));
    if a.0.tx_selected_segment != b.0.tx_selected_segment {
        worst = f64::INFINITY;
    }
    worst = worst.max(cdiff(&a.1.w, &b.1.w));
    worst = worst.max(cdiff(&a.1.xi, &b.1.xi));
    worst = worst.max(diff(&a.1.p, &b.1.p)).max(diff(&a.1.beta, &b.1.beta));
    for (x, y) in a.1.v.iter().zip(&b.1.v) {
        let d = x.iter().zip(y.iter()).map(|(p, q)| crate::scalar::to_f64(crate::scalar::cabs(*p - *q)));
        worst = d.fold(worst, f64::max);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_relabelling_round_trips_through_the_inverse() {
        let cfg = ScenarioConfig::<f64> { segments: 3, pas_per_segment: 2, n_tx: 4, n_rx: 3, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = PinchingLayout::uniform(&cfg);
        l.tx_selected_segment = vec![0, 2, 1, 2];
        let p = PermutationTuple::random(&cfg, &mut rng);
        let pl = p.layout(&l);
        assert!(pl.is_feasible(&cfg, 1e-12));
        let inv = p.inverse();
        assert_eq!(inv.layout(&pl), l);
        for n in 0..cfg.n_tx {
            let s = pl.tx_selected_segment[n];
            assert_eq!(pl.tx_feed(s, n), l.tx_feed(l.tx_selected_segment[p.tx_waveguides[n]], p.tx_waveguides[n]));
        }
    }

    #[test]
    fn canonical_order_ignores_labels() {
        let cfg = ScenarioConfig::<f64> { segments: 3, pas_per_segment: 2, n_tx: 4, n_rx: 3, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pl = crate::scenario::sample_placement(&cfg, 5);
        let l = PinchingLayout::uniform(&cfg);
        let c = PermutationTuple::canonical(&pl, &l);
        for _ in 0..20 {
            let p = PermutationTuple::random(&cfg, &mut rng);
            let (pl2, l2) = (p.placement(&pl), p.layout(&l));
            let c2 = PermutationTuple::canonical(&pl2, &l2);
            assert_eq!(c2.placement(&pl2), c.placement(&pl));
            assert_eq!(c2.layout(&l2), c.layout(&l));
            assert_eq!(p.inverse().placement(&pl2), pl);
        }
    }
}
