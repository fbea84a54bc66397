//! Runtime invariant suite on seeded instances of a scenario.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ao::{run_swisac_ao, update_receive_filters, update_weights, AoConfig};
use crate::baselines::{cmimo_baseline, random_baseline, zf_baseline};
use crate::channel::build_channels;
use crate::error::Result;
use crate::gnn::{gnn_forward, gnn_forward_from, load_weights, save_weights, GnnWeights};
use crate::metrics::{logdet_hpd, BeamformingState};
use crate::perm::{solution_deviation, PermutationTuple};
use crate::scalar::{cabs, dotc, fro2, norm2};
use crate::scenario::{project_layout, sample_placement, PinchingLayout, ScenarioConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, worst: f64, tol: f64) -> CheckOutcome {
    CheckOutcome { name, passed: worst <= tol, detail: format!("worst {worst:.3e} (tol {tol:.0e})") }
}

/// Runs every check on `samples` placements seeded from `seed`. GNN checks
/// use `weights` when given, otherwise seeded weights bound to the scenario.
pub fn run_checks(
    config: &ScenarioConfig<f64>,
    weights: Option<&GnnWeights<f64>>,
    samples: usize,
    seed: u64,
) -> Result<Vec<CheckOutcome>> {
    config.validate()?;
    let owned;
    let weights = match weights {
        Some(w) => w,
        None => {
            owned = GnnWeights::seeded_init(crate::gnn::GnnDims::of(config), 4, seed);
            &owned
        }
    };
    weights.dims.check(config)?;
    let ao = AoConfig::for_scenario(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut proj = 0.0f64;
    let mut gains = 0.0f64;
    let mut wmmse = 0.0f64;
    let mut monotone = 0.0f64;
    let mut ao_feasible = true;
    let mut zf_null = 0.0f64;
    let mut budget = 0.0f64;
    let mut gnn_feasible = true;
    let mut equiv = 0.0f64;
    for i in 0..samples {
        let s = seed.wrapping_add(i as u64);
        let pl = sample_placement(config, s);
        let uniform = PinchingLayout::uniform(config);
        let l = project_layout(&uniform, config)?;
        proj = proj.max(l.tx_x.iter().zip(&uniform.tx_x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

        let ch = build_channels(&pl, &uniform, config)?;
        gains = ch.g_r.iter().map(|g| (cabs(*g) - 1.0).abs()).fold(gains, f64::max);

        let mut st = BeamformingState::zeros(config.n_tx, config.n_users, config.n_rx, config.p_max);
        st.w = crate::ao::matched_filter(&ch.eff, config.p_max);
        let v = update_receive_filters(&st.w, &ch.eff, config);
        let th = update_weights(&st.w, &v, &ch.eff, config).theta;
        for n in 0..config.n_rx {
            let q = st.w.ad_mul(&ch.eff.sense_col(n));
            let rhs = (norm2(&q) / config.sigma_s2).ln_1p();
            let lhs = logdet_hpd(&th[n])?;
            wmmse = wmmse.max((lhs - rhs).abs() / rhs.abs().max(1e-300));
        }

        let (layout, state, trace) = run_swisac_ao(&pl, config, &ao, s)?;
        let obj = trace.accepted_objectives();
        for p in obj.windows(2) {
            monotone = monotone.max((p[1] - p[0]) / p[0].abs().max(1.0));
        }
        ao_feasible &= layout.is_feasible(config, 1e-9) && state.power() <= config.p_max * (1.0 + 1e-9);

        for sol in [zf_baseline(&pl, config)?, random_baseline(&pl, config, s)?, cmimo_baseline(&pl, config)?] {
            budget = budget.max((fro2(&sol.w) - config.p_max).abs());
            if !sol.regularized {
                for k in 0..config.n_users {
                    for j in (0..config.n_users).filter(|&j| j != k) {
                        zf_null = zf_null.max(cabs(dotc(&sol.eff.user_col(k), &sol.w.column(j).into_owned())));
                    }
                }
            }
        }

        let (gl, gs) = gnn_forward(weights, &pl, config)?;
        gnn_feasible &= gl.is_feasible(config, 1e-9);
        budget = budget.max((gs.power() - config.p_max).abs());
        let perm = PermutationTuple::random(config, &mut rng);
        let (pl2, init2) = (perm.placement(&pl), perm.layout(&uniform));
        let (l2, s2) = gnn_forward_from(weights, &pl2, config, &init2)?;
        let expect = (perm.layout(&gl), perm.beamforming(&gs));
        equiv = equiv.max(solution_deviation((&l2, &s2), (&expect.0, &expect.1)));
    }

    out.push(outcome("projection fixes feasible layouts", proj, 1e-12));
    out.push(outcome("receive gains are pure phases", gains, 1e-12));
    out.push(outcome("logdet weight identity", wmmse, 1e-8));
    out.push(outcome("optimizer trace is non-increasing", monotone, 1e-9));
    out.push(CheckOutcome {
        name: "optimizer output is feasible",
        passed: ao_feasible,
        detail: String::new(),
    });
    out.push(outcome("zero-forcing nulls interference", zf_null, 1e-9));
    out.push(outcome("power budget met with equality", budget, 1e-9));
    out.push(CheckOutcome { name: "gnn layout is feasible", passed: gnn_feasible, detail: String::new() });
    out.push(outcome("gnn permutation equivariance", equiv, 1e-9));

    let text = save_weights(weights);
    let back: GnnWeights<f64> = load_weights(&text)?;
    out.push(CheckOutcome {
        name: "weight document round trip",
        passed: back == *weights && save_weights(&back) == text,
        detail: String::new(),
    });
    Ok(out)
}
