//! Alternating optimization over pinching positions, transmit beamforming,
//! receive filters and MSE weights.

pub mod gradients;
pub mod search;
pub mod tx;
pub mod updates;

use std::time::Instant;

use nalgebra::DMatrix;

use crate::channel::{build_channels, tx_vector, EffectiveChannels};
use crate::error::{Error, Result};
use crate::metrics::{
    communication_rates, penalized_objective, sensing_rate, soc_margin_from_gram, gram, wmmse_objective,
    BeamformingState,
};
use crate::scalar::{creal, czero, from_usize, lit, norm2, to_f64, Real};
use crate::scenario::{Placement, PinchingLayout, ScenarioConfig};

pub use gradients::{full_gradients, position_gradients, Gradients};
pub use search::position_line_search;
pub use tx::{reconstruct_beamformer, rotate_state, signal_basis, update_tx_beamforming, TxReport};
pub use updates::{update_receive_filters, update_weights, WeightUpdate};

/// Operation parameters of the alternating optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct AoConfig<T: Real> {
    /// Outer rounds.
    pub iterations: usize,
    pub coarse_step: T,
    pub fine_step: T,
    /// Per-user penalty factors; users past the end use the last entry (10 when empty).
    pub mu: Vec<T>,
    /// The barrier weight grows by `1 / dual_step` between centering stages.
    pub dual_step: T,
    /// Newton-step budget of one transmit solve.
    pub inner_iters: usize,
    pub tol_kkt: T,
}

impl<T: Real> AoConfig<T> {
    /// Defaults tied to the carrier wavelength of `config`.
    pub fn for_scenario(config: &ScenarioConfig<T>) -> Self {
        let lambda = config.wavelength();
        Self {
            iterations: 5,
            coarse_step: lambda / lit(4.0),
            fine_step: lambda / lit(100.0),
            mu: vec![lit(10.0); config.n_users],
            dual_step: lit(0.1),
            inner_iters: 400,
            tol_kkt: lit(1e-6),
        }
    }

    pub fn mu_for(&self, k: usize) -> T {
        self.mu.get(k).or(self.mu.last()).copied().unwrap_or(lit(10.0))
    }

    pub fn mu_vec(&self, k_users: usize) -> Vec<T> {
        (0..k_users).map(|k| self.mu_for(k)).collect()
    }

    pub(crate) fn barrier_growth(&self) -> T {
        T::one() / self.dual_step
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: T| x > T::zero();
        if !positive(self.coarse_step) || !positive(self.fine_step) {
            return Err(Error::Config("line-search steps must be positive".into()));
        }
        if !positive(self.tol_kkt) {
            return Err(Error::Config("tol_kkt must be positive".into()));
        }
        if !(self.dual_step > T::zero() && self.dual_step < T::one()) {
            return Err(Error::Config("dual_step must lie in (0, 1)".into()));
        }
        if self.inner_iters == 0 {
            return Err(Error::Config("inner_iters must be positive".into()));
        }
        if self.mu.iter().any(|m| *m < T::zero()) {
            return Err(Error::Config("penalty factors must be nonnegative".into()));
        }
        Ok(())
    }
}

impl<T: Real> Default for AoConfig<T> {
    fn default() -> Self {
        Self::for_scenario(&ScenarioConfig::default())
    }
}

/// Surrogate tracked by the alternating optimization: the WMMSE objective plus
/// `mu_k` times the QoS cone violation of user `k`.
pub fn surrogate<T: Real>(
    state: &BeamformingState<T>,
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
    mu: &[T],
) -> Result<T> {
    Ok(wmmse_objective(state, eff, config)? + qos_penalty(&state.w, eff, config, mu))
}

pub(crate) fn qos_penalty<T: Real>(
    w: &nalgebra::DMatrix<crate::scalar::Cplx<T>>,
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
    mu: &[T],
) -> T {
    let g = gram(w, eff);
    (0..eff.n_users()).fold(T::zero(), |acc, k| {
        let m = soc_margin_from_gram(k, &g, config);
        acc + mu[k] * (-m).max(T::zero())
    })
}

/// Per-waveguide segment with the largest user-plus-target channel energy
/// over its PAs at their current positions; ties go to the lower index.
pub fn select_segments<T: Real>(
    placement: &Placement<T>,
    layout: &PinchingLayout<T>,
    config: &ScenarioConfig<T>,
) -> Result<Vec<usize>> {
    let vectors = placement
        .users
        .iter()
        .chain(placement.targets.iter())
        .map(|p| tx_vector(layout, p, config))
        .collect::<Result<Vec<_>>>()?;
    let m_count = layout.pas_per_segment;
    Ok((0..layout.n_tx())
        .map(|n| {
            let mut best = (0, -T::one());
            for s in 0..layout.segments {
                let start = layout.tx_index(0, s, n);
                let e = vectors.iter().fold(T::zero(), |acc, h| {
                    acc + h.rows(start, m_count).iter().fold(T::zero(), |a, z| a + crate::scalar::abs2(*z))
                });
                if e > best.1 {
                    best = (s, e);
                }
            }
            best.0
        })
        .collect())
}

/// One row of the optimization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct AoRecord {
    pub iteration: usize,
    /// Tracked surrogate (WMMSE plus cone-violation penalty).
    pub objective: f64,
    /// WMMSE surrogate minus `mu`-weighted linear QoS margins.
    pub penalized: f64,
    pub sr: f64,
    pub cr: Vec<f64>,
    pub margins: Vec<f64>,
    pub ms: f64,
    pub tx: Option<TxReport<f64>>,
    /// Surrogate value after every accepted block move of this round.
    pub steps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AoTrace {
    pub seed: u64,
    pub records: Vec<AoRecord>,
    pub infeasible_qos: bool,
}

impl AoTrace {
    /// Column order: iteration, objective, penalized, sr, cr_1..cr_K, margin_1..margin_K, ms.
    pub fn to_csv(&self) -> String {
        let k = self.records.first().map_or(0, |r| r.cr.len());
        let mut out = String::from("iteration,objective,penalized,sr");
        for i in 1..=k {
            out.push_str(&format!(",cr_{i}"));
        }
        for i in 1..=k {
            out.push_str(&format!(",margin_{i}"));
        }
        out.push_str(",ms\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}", r.iteration, r.objective, r.penalized, r.sr));
            for c in r.cr.iter().chain(r.margins.iter()) {
                out.push_str(&format!(",{c}"));
            }
            out.push_str(&format!(",{}\n", r.ms));
        }
        out
    }

    /// Every surrogate value in the order it was reached.
    pub fn accepted_objectives(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for r in &self.records {
            out.extend(r.steps.iter().copied());
            out.push(r.objective);
        }
        out
    }
}

fn record<T: Real>(
    iteration: usize,
    state: &BeamformingState<T>,
    eff: &EffectiveChannels<T>,
    config: &ScenarioConfig<T>,
    mu: &[T],
    start: Instant,
    tx: Option<TxReport<T>>,
    steps: Vec<f64>,
) -> Result<AoRecord> {
    let g = gram(&state.w, eff);
    let penalized = if config.gamma() > T::zero() {
        to_f64(penalized_objective(state, eff, config, mu)?)
    } else {
        to_f64(wmmse_objective(state, eff, config)?)
    };
    Ok(AoRecord {
        iteration,
        objective: to_f64(surrogate(state, eff, config, mu)?),
        penalized,
        sr: to_f64(sensing_rate(&state.w, eff, config)),
        cr: communication_rates(&state.w, eff, config).into_iter().map(to_f64).collect(),
        margins: (0..eff.n_users()).map(|k| to_f64(soc_margin_from_gram(k, &g, config))).collect(),
        ms: start.elapsed().as_secs_f64() * 1e3,
        tx: tx.map(|r| TxReport {
            objective: to_f64(r.objective),
            stationarity: to_f64(r.stationarity),
            slackness: to_f64(r.slackness),
            subspace_residual: to_f64(r.subspace_residual),
            newton_steps: r.newton_steps,
            converged: r.converged,
            infeasible_qos: r.infeasible_qos,
            gamma_used: to_f64(r.gamma_used),
        }),
        steps,
    })
}

/// Matched filters to the users with equal power summing to `P_max`.
pub fn matched_filter<T: Real>(eff: &EffectiveChannels<T>, p_max: T) -> DMatrix<crate::scalar::Cplx<T>> {
    let k_users = eff.n_users();
    let mut w = DMatrix::from_element(eff.n_antennas(), k_users, czero());
    if k_users == 0 {
        return w;
    }
    let per_user = p_max / from_usize::<T>(k_users);
    for k in 0..k_users {
        let h = eff.user_col(k);
        let nrm = norm2(&h).sqrt();
        if nrm > T::zero() {
            w.set_column(k, &(h * creal(per_user.sqrt() / nrm)));
        }
    }
    w
}

/// Standard starting point: matched filters, then the closed-form filter and
/// weight updates, with `beta = 1`, `Xi = 0`, `nu = 1`, `p = P_max / K_c`.
pub fn initial_state<T: Real>(eff: &EffectiveChannels<T>, config: &ScenarioConfig<T>) -> BeamformingState<T> {
    let k_users = eff.n_users();
    let mut state = BeamformingState::zeros(eff.n_antennas(), k_users, eff.n_sense(), config.p_max);
    state.w = matched_filter(eff, config.p_max);
    state.v = update_receive_filters(&state.w, eff, config);
    state.theta = update_weights(&state.w, &state.v, eff, config).theta;
    state.beta = vec![T::one(); k_users];
    state.nu = T::one();
    state
}

/// Runs the alternating optimization from the standard initialization.
/// The run is fully deterministic; `seed` is carried into the trace so that
/// benchmark rows can be matched to their placements.
pub fn run_swisac_ao<T: Real>(
    placement: &Placement<T>,
    config: &ScenarioConfig<T>,
    ao: &AoConfig<T>,
    seed: u64,
) -> Result<(PinchingLayout<T>, BeamformingState<T>, AoTrace)> {
    config.validate()?;
    ao.validate()?;
    let start = Instant::now();
    let k_users = config.n_users;
    let mu = ao.mu_vec(k_users);

    let mut layout = PinchingLayout::uniform(config);
    layout.tx_selected_segment = select_segments(placement, &layout, config)?;
    let mut channels = build_channels(placement, &layout, config)?;
    let mut state = initial_state(&channels.eff, config);
    let mut trace = AoTrace { seed, ..Default::default() };
    trace.records.push(record(0, &state, &channels.eff, config, &mu, start, None, Vec::new())?);

    for it in 1..=ao.iterations {
        let mut steps = Vec::new();
        let mut current = surrogate(&state, &channels.eff, config, &mu)?;

        // segment selection as a discrete coordinate move per waveguide
        let proposal = select_segments(placement, &layout, config)?;
        for n in 0..layout.n_tx() {
            let mut order: Vec<usize> = vec![proposal[n]];
            order.extend((0..layout.segments).filter(|&s| s != proposal[n]));
            for s in order {
                if s == layout.tx_selected_segment[n] {
                    continue;
                }
                let mut cand = layout.clone();
                cand.tx_selected_segment[n] = s;
                let ch = build_channels(placement, &cand, config)?;
                let j = surrogate(&state, &ch.eff, config, &mu)?;
                if j < current {
                    layout = cand;
                    current = j;
                    steps.push(to_f64(j));
                }
            }
        }

        layout = position_line_search(&layout, &state, placement, config, ao)?;
        channels = build_channels(placement, &layout, config)?;
        let after_search = surrogate(&state, &channels.eff, config, &mu)?;
        steps.push(to_f64(after_search));
        current = after_search;

        let (cand, report) = update_tx_beamforming(&state, &channels.eff, config, ao)?;
        trace.infeasible_qos |= report.infeasible_qos;
        let j = surrogate(&cand, &channels.eff, config, &mu)?;
        let tx_report = Some(report);
        if j <= current {
            state = cand;
            steps.push(to_f64(j));
        }

        state.v = update_receive_filters(&state.w, &channels.eff, config);
        steps.push(to_f64(surrogate(&state, &channels.eff, config, &mu)?));
        state.theta = update_weights(&state.w, &state.v, &channels.eff, config).theta;
        trace
            .records
            .push(record(it, &state, &channels.eff, config, &mu, start, tx_report, steps)?);
    }
    Ok((layout, state, trace))
}
