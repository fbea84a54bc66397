//! Reference schemes: zero-forcing on a pinching layout, randomly deployed
//! PAs, and a conventional half-wavelength planar array.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ao::select_segments;
use crate::channel::{build_channels, free_space_coeff, sensing_channels, ChannelSet, EffectiveChannels};
use crate::error::Result;
use crate::scalar::{creal, czero, from_usize, lit, norm2, to_f64, CMatrix, Real};
use crate::scenario::{project_segment, PinchingLayout, Placement, Point, ScenarioConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ZfBeamformer<T: Real> {
    pub w: CMatrix<T>,
    /// The Gram matrix was not safely invertible and a ridge was added.
    pub regularized: bool,
}

/// `W = H^H (H H^H)^{-1}` with `H` stacking `h_k^H`, columns rescaled to
/// equal power `P_max / K_c`.
pub fn zf_beamformer<T: Real>(eff: &EffectiveChannels<T>, config: &ScenarioConfig<T>) -> ZfBeamformer<T> {
    let k_users = eff.n_users();
    let hh = &eff.user;
    let gram = hh.ad_mul(hh);
    let trace = (0..k_users).fold(T::zero(), |a, k| a + gram[(k, k)].re);
    let mut regularized = false;
    let inv = match gram.clone().cholesky() {
        Some(c) if well_conditioned(&c.l()) => c.inverse(),
        _ => {
            regularized = true;
            let ridge = trace / from_usize::<T>(k_users.max(1)) * lit(1e-10) + lit(f64::MIN_POSITIVE);
            let reg = &gram + DMatrix::identity(k_users, k_users) * creal(ridge);
            reg.cholesky().map(|c| c.inverse()).unwrap_or_else(|| DMatrix::identity(k_users, k_users))
        }
    };
    let mut w = hh * inv;
    let per_user = (config.p_max / from_usize::<T>(k_users.max(1))).sqrt();
    for k in 0..k_users {
        let nrm = norm2(&w.column(k).into_owned()).sqrt();
        if nrm > T::zero() {
            w.column_mut(k).scale_mut(per_user / nrm);
        }
    }
    ZfBeamformer { w, regularized }
}

fn well_conditioned<T: Real>(l: &CMatrix<T>) -> bool {
    let d: Vec<T> = (0..l.nrows()).map(|i| l[(i, i)].re).collect();
    let hi = d.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let lo = d.iter().copied().fold(hi, |a, b| a.min(b));
    d.is_empty() || (lo > T::zero() && lo / hi > lit(1e-7))
}

/// Layout with PAs drawn uniformly in every segment box, redrawn until the
/// minimum spacing holds (at most 1000 draws per segment, after which the
/// evenly spaced grid is used). Fed segments are drawn uniformly too.
pub fn random_layout<T: Real>(config: &ScenarioConfig<T>, seed: u64) -> PinchingLayout<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layout = PinchingLayout::uniform(config);
    let seg = to_f64(config.segment_length());
    let delta = to_f64(config.delta_min);
    let m_count = config.pas_per_segment;
    for n in 0..config.n_tx {
        for s in 0..config.segments {
            let x0 = to_f64(layout.tx_feed(s, n));
            let start = layout.tx_index(0, s, n);
            let mut placed = false;
            for _ in 0..1000 {
                let mut xs: Vec<f64> = (0..m_count).map(|_| x0 + seg * rng.random::<f64>()).collect();
                xs.sort_by(f64::total_cmp);
                if xs.windows(2).all(|p| p[1] - p[0] >= delta) {
                    for (m, x) in xs.into_iter().enumerate() {
                        layout.tx_x[start + m] = lit(x);
                    }
                    placed = true;
                    break;
                }
            }
            if !placed {
                let grid = spaced_grid(layout.tx_feed(s, n), config.segment_length(), config.delta_min, m_count);
                layout.tx_x[start..start + m_count].copy_from_slice(&grid);
            }
        }
        layout.tx_selected_segment[n] = rng.random_range(0..config.segments);
    }
    for i in 0..layout.rx_x.len() {
        let x0 = layout.rx_feed_x[i];
        layout.rx_x[i] = x0 + config.segment_length() * lit(rng.random::<f64>());
    }
    layout
}

#[derive(Debug, Clone)]
pub struct BaselineSolution<T: Real> {
    /// `None` for the conventional array.
    pub layout: Option<PinchingLayout<T>>,
    pub eff: EffectiveChannels<T>,
    pub w: CMatrix<T>,
    pub regularized: bool,
}

/// ZF on the segment-uniform layout with heuristic segment selection.
pub fn zf_baseline<T: Real>(placement: &Placement<T>, config: &ScenarioConfig<T>) -> Result<BaselineSolution<T>> {
    let mut layout = PinchingLayout::uniform(config);
    layout.tx_selected_segment = select_segments(placement, &layout, config)?;
    on_layout(placement, layout, config)
}

/// ZF on a randomly deployed layout.
pub fn random_baseline<T: Real>(
    placement: &Placement<T>,
    config: &ScenarioConfig<T>,
    seed: u64,
) -> Result<BaselineSolution<T>> {
    on_layout(placement, random_layout(config, seed), config)
}

fn on_layout<T: Real>(
    placement: &Placement<T>,
    layout: PinchingLayout<T>,
    config: &ScenarioConfig<T>,
) -> Result<BaselineSolution<T>> {
    let ChannelSet { eff, .. } = build_channels(placement, &layout, config)?;
    let zf = zf_beamformer(&eff, config);
    Ok(BaselineSolution { layout: Some(layout), eff, w: zf.w, regularized: zf.regularized })
}

/// Element positions of a `rows x cols` half-wavelength grid in the plane
/// `z = d`, centred on the origin. Element `(a, b)` sits at
/// `x = (a - (cols-1)/2) lambda/2`, `y = (b - (rows-1)/2) lambda/2`, and is
/// stored at index `b * cols + a`.
pub fn planar_grid<T: Real>(rows: usize, cols: usize, config: &ScenarioConfig<T>) -> Vec<Point<T>> {
    let half = config.wavelength() / lit(2.0);
    let centre = |count: usize| from_usize::<T>(count.saturating_sub(1)) / lit(2.0);
    let mut out = Vec::with_capacity(rows * cols);
    for b in 0..rows {
        for a in 0..cols {
            let x = (from_usize::<T>(a) - centre(cols)) * half;
            let y = (from_usize::<T>(b) - centre(rows)) * half;
            out.push([x, y, config.height]);
        }
    }
    out
}

/// Effective channels of the conventional array: an `N_t x (M S)` transmit
/// grid with every element directly fed, and `N_r` receive rows of `M S`
/// elements, each row summed with unit gains into one sensing chain.
pub fn cmimo_channels<T: Real>(placement: &Placement<T>, config: &ScenarioConfig<T>) -> Result<EffectiveChannels<T>> {
    let cols = config.pas_per_segment * config.segments;
    let tx = planar_grid(config.n_tx, cols, config);
    let rx = planar_grid(config.n_rx, cols, config);
    let vector = |grid: &[Point<T>], u: &Point<T>| -> Result<DVector<_>> {
        let coeffs = grid.iter().map(|e| free_space_coeff(e, u, config)).collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(coeffs))
    };
    let n_elem = tx.len();
    let mut user = DMatrix::from_element(n_elem, placement.users.len(), czero());
    for (k, u) in placement.users.iter().enumerate() {
        user.set_column(k, &vector(&tx, u)?);
    }
    let h_tar = placement.targets.iter().map(|u| vector(&tx, u)).collect::<Result<Vec<_>>>()?;
    let scale = config.sensing_scale();
    let mut c_rx = DMatrix::from_element(placement.targets.len(), config.n_rx, czero());
    for (k, u) in placement.targets.iter().enumerate() {
        let h = vector(&rx, u)?;
        for n in 0..config.n_rx {
            c_rx[(k, n)] = h.rows(n * cols, cols).sum() * creal(scale);
        }
    }
    let identity = DMatrix::identity(n_elem, n_elem);
    let sense = sensing_channels(&h_tar, &c_rx, &identity);
    Ok(EffectiveChannels { user, sense })
}

pub fn cmimo_baseline<T: Real>(placement: &Placement<T>, config: &ScenarioConfig<T>) -> Result<BaselineSolution<T>> {
    let eff = cmimo_channels(placement, config)?;
    let zf = zf_beamformer(&eff, config);
    Ok(BaselineSolution { layout: None, eff, w: zf.w, regularized: zf.regularized })
}

/// Evenly spaced positions, projected onto the spacing constraint.
fn spaced_grid<T: Real>(x0: T, len: T, delta: T, m_count: usize) -> Vec<T> {
    let xs: Vec<T> = (0..m_count)
        .map(|m| x0 + len * from_usize::<T>(2 * m + 1) / from_usize::<T>(2 * m_count))
        .collect();
    project_segment(&xs, x0, len, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{communication_rates, sensing_rate};
    use crate::scalar::{abs2, cabs, dotc, fro2};
    use crate::scenario::sample_placement;

    fn small() -> ScenarioConfig<f64> {
        ScenarioConfig { segments: 2, pas_per_segment: 2, n_tx: 4, n_rx: 2, n_users: 2, n_targets: 1, ..Default::default() }
    }

    #[test]
    fn zf_nulls_interference_and_meets_budget() {
        let cfg = ScenarioConfig::<f64>::default();
        for seed in 0..5 {
            let pl = sample_placement(&cfg, seed);
            let sol = zf_baseline(&pl, &cfg).unwrap();
            assert!(!sol.regularized);
            assert!((fro2(&sol.w) - cfg.p_max).abs() < 1e-12);
            for k in 0..cfg.n_users {
                for j in 0..cfg.n_users {
                    let g = cabs(dotc(&sol.eff.user_col(k), &sol.w.column(j).into_owned()));
                    if j != k {
                        assert!(g < 1e-9, "{g}");
                    } else {
                        assert!(g > 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn single_user_zf_is_matched_filter() {
        let cfg = ScenarioConfig::<f64> { n_users: 1, ..small() };
        let pl = sample_placement(&cfg, 3);
        let sol = zf_baseline(&pl, &cfg).unwrap();
        let h = sol.eff.user_col(0);
        let mf = &h * creal(1.0 / norm2(&h).sqrt());
        let w = sol.w.column(0).into_owned();
        assert!((cabs(dotc(&mf, &w)) - 1.0).abs() < 1e-12);
        assert!(dotc(&mf, &w).im.abs() < 1e-12 && dotc(&mf, &w).re > 0.0);
    }

    #[test]
    fn rank_deficient_channels_are_flagged() {
        let cfg = small();
        let mut pl = sample_placement(&cfg, 1);
        pl.users[1] = pl.users[0];
        let sol = zf_baseline(&pl, &cfg).unwrap();
        assert!(sol.regularized);
        assert!(sol.w.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn grid_has_half_wavelength_pitch() {
        let cfg = ScenarioConfig::<f64>::default();
        let g = planar_grid(3, 5, &cfg);
        let half = cfg.wavelength() / 2.0;
        assert!((g[1][0] - g[0][0] - half).abs() < 1e-15);
        assert_eq!(g[1][1], g[0][1]);
        assert!((g[5][1] - g[0][1] - half).abs() < 1e-15);
        let cx: f64 = g.iter().map(|p| p[0]).sum::<f64>() / 15.0;
        let cy: f64 = g.iter().map(|p| p[1]).sum::<f64>() / 15.0;
        assert!(cx.abs() < 1e-15 && cy.abs() < 1e-15);
        assert!(g.iter().all(|p| p[2] == cfg.height));
    }

    #[test]
    fn cmimo_rates_match_elementwise_loops() {
        let cfg = small();
        let pl = sample_placement(&cfg, 9);
        let sol = cmimo_baseline(&pl, &cfg).unwrap();
        let cols = cfg.pas_per_segment * cfg.segments;
        let tx = planar_grid(cfg.n_tx, cols, &cfg);
        let rx = planar_grid(cfg.n_rx, cols, &cfg);
        let h = |e: &Point<f64>, u: &Point<f64>| free_space_coeff(e, u, &cfg).unwrap();
        let w = &sol.w;

        let mut cr = Vec::new();
        for (k, u) in pl.users.iter().enumerate() {
            let mut gains = Vec::new();
            for j in 0..cfg.n_users {
                let mut acc = czero::<f64>();
                for (e, p) in tx.iter().enumerate() {
                    acc += h(p, u).conj() * w[(e, j)];
                }
                gains.push(abs2(acc));
            }
            let interf: f64 = gains.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, g)| g).sum();
            cr.push((1.0 + gains[k] / (interf + cfg.sigma_c2)).log2());
        }
        let mut sr = 0.0;
        let scale = (cfg.pulses as f64 * cfg.alpha_s).sqrt();
        for n in 0..cfg.n_rx {
            // echo through every target and every element of row n
            let mut energy = 0.0;
            for j in 0..cfg.n_users {
                let mut acc = czero::<f64>();
                for u in &pl.targets {
                    let mut back = czero::<f64>();
                    for e in 0..cols {
                        back += h(&rx[n * cols + e], u);
                    }
                    let mut fwd = czero::<f64>();
                    for (e, p) in tx.iter().enumerate() {
                        fwd += h(p, u).conj() * w[(e, j)];
                    }
                    acc += back * fwd * scale;
                }
                energy += abs2(acc);
            }
            sr += (1.0 + energy / cfg.sigma_s2).log2();
        }
        let ours = communication_rates(&sol.w, &sol.eff, &cfg);
        for (a, b) in ours.iter().zip(&cr) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
        let s = sensing_rate(&sol.w, &sol.eff, &cfg);
        assert!((s - sr).abs() < 1e-10 * sr.max(1.0), "{s} {sr}");
    }

    #[test]
    fn random_layouts_are_feasible_and_seeded() {
        let cfg = ScenarioConfig::<f64>::default();
        let a = random_layout(&cfg, 1);
        let b = random_layout(&cfg, 2);
        assert!(a.is_feasible(&cfg, 1e-12) && b.is_feasible(&cfg, 1e-12));
        assert_eq!(a, random_layout(&cfg, 1));
        assert_ne!(a.digest(), b.digest());
        let pl = sample_placement(&cfg, 0);
        let sol = random_baseline(&pl, &cfg, 7).unwrap();
        assert!((fro2(&sol.w) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crowded_segments_fall_back_to_the_grid() {
        // five PAs, spacing 0.24 of a 1 m segment: random draws essentially never fit
        let cfg = ScenarioConfig::<f64> {
            side_length: 2.0,
            segments: 2,
            pas_per_segment: 5,
            n_tx: 2,
            n_rx: 1,
            n_users: 1,
            n_targets: 1,
            delta_min: 0.24,
            ..Default::default()
        };
        let l = random_layout(&cfg, 4);
        assert!(l.is_feasible(&cfg, 1e-12));
    }
}
