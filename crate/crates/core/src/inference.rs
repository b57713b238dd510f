//! Stochastic variational EM over a map of cells.
//!
//! Each iteration samples a mini-batch of cells, runs closed-form coordinate
//! updates on their marginals, then takes one gradient-ascent step on the
//! shared weights, rescaled so the mini-batch gradient is unbiased for the
//! whole map. One epoch is `ceil(population / batch_size)` iterations; the
//! full-map bound is recorded after every epoch.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bound::{
    clamp_q, location_bound_unchecked, posterior_logit_t_unchecked, weight_gradient, PosteriorState, Q_MIN,
};
use crate::error::{Error, Result};
use crate::math::{self, sigmoid};
use crate::model::{HyperParams, LocationRecord, NodeId, WeightSet, MIN_NOISE_Y};
use crate::raster::{GridSpec, Raster};

const NODE_ORDER: [NodeId; 3] = [NodeId::Landslide, NodeId::Liquefaction, NodeId::BuildingDamage];

/// Coordinate-ascent updates `q_i <- sigmoid(T_i)` in the fixed order
/// LS, LF, BD until the largest change in a sweep drops below `e_tol`.
pub fn e_step(
    rec: &LocationRecord,
    q: &PosteriorState,
    w: &WeightSet,
    h: &HyperParams,
) -> Result<PosteriorState> {
    e_step_counted(rec, q, w, h).map(|(q, _)| q)
}

/// [`e_step`] that also reports how many sweeps ran.
pub fn e_step_counted(
    rec: &LocationRecord,
    q: &PosteriorState,
    w: &WeightSet,
    h: &HyperParams,
) -> Result<(PosteriorState, usize)> {
    rec.ensure_valid()?;
    // Validates q against the record.
    crate::bound::location_bound(rec, q, w, h)?;
    Ok(e_step_unchecked(rec, q, w, h))
}

fn e_step_unchecked(
    rec: &LocationRecord,
    q: &PosteriorState,
    w: &WeightSet,
    h: &HyperParams,
) -> (PosteriorState, usize) {
    let mut q = *q;
    let mut sweeps = 0;
    while sweeps < h.e_sweeps_max {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for node in NODE_ORDER {
            let Some(old) = q.get(node) else { continue };
            let t = posterior_logit_t_unchecked(rec, node, &q, w, h);
            let new = clamp_q(sigmoid(t));
            max_change = max_change.max(math::abs(new - old));
            q.set(node, new);
        }
        if max_change < h.e_tol {
            break;
        }
    }
    (q, sweeps)
}

/// [`e_step`] from the given state and from three mode seeds (LS only, LF
/// only, neither), keeping the result with the largest location bound.
///
/// The exclusivity coupling makes the per-cell bound multimodal; a single
/// coordinate-ascent run stays in whichever mode its start favours. Ties go
/// to the run from `q`, so the result never has a lower bound than plain
/// [`e_step`].
pub fn e_step_restarts(
    rec: &LocationRecord,
    q: &PosteriorState,
    w: &WeightSet,
    h: &HyperParams,
) -> Result<PosteriorState> {
    rec.ensure_valid()?;
    crate::bound::location_bound(rec, q, w, h)?;
    Ok(e_step_restarts_unchecked(rec, q, w, h))
}

fn e_step_restarts_unchecked(
    rec: &LocationRecord,
    q: &PosteriorState,
    w: &WeightSet,
    h: &HyperParams,
) -> PosteriorState {
    let hi = 1.0 - Q_MIN;
    let seeds = [(hi, Q_MIN), (Q_MIN, hi), (Q_MIN, Q_MIN)];
    let mut best = e_step_unchecked(rec, q, w, h).0;
    let mut best_bound = location_bound_unchecked(rec, &best, w, h);
    for (ls, lf) in seeds {
        let start = PosteriorState { q_ls: ls, q_lf: lf, q_bd: q.q_bd };
        let cand = e_step_unchecked(rec, &start, w, h).0;
        let b = location_bound_unchecked(rec, &cand, w, h);
        if b > best_bound {
            best = cand;
            best_bound = b;
        }
    }
    best
}

/// Uniform sample without replacement of `min(batch_size, len)` entries of
/// `valid_cells`, in random order.
pub fn sample_minibatch<R: Rng + ?Sized>(
    valid_cells: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if valid_cells.is_empty() {
        return Err(Error::Empty("no valid cells to sample"));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let n = valid_cells.len();
    let k = batch_size.min(n);
    Ok(index::sample(rng, n, k)
        .into_iter()
        .map(|i| valid_cells[i])
        .collect())
}

/// One projected gradient-ascent step on the weights.
///
/// The batch gradient is scaled by `population_size / batch.len()`.
pub fn m_step(
    batch: &[LocationRecord],
    qs: &[PosteriorState],
    w: &WeightSet,
    h: &HyperParams,
    population_size: usize,
) -> Result<WeightSet> {
    let g = weight_gradient(batch, qs, w, h)?;
    let scale = h.rho * population_size as f64 / batch.len() as f64;
    let mut a = w.to_array();
    for (v, d) in a.iter_mut().zip(g.0) {
        *v += scale * d;
    }
    Ok(WeightSet::from_array(a).projected())
}

/// Closed-form maximizer of the total bound over `w0_y` and `we_y` jointly,
/// all other weights and the marginals held fixed, subject to `w0_y <= 0`
/// and `we_y >= MIN_NOISE_Y`.
pub fn fit_observation(records: &[LocationRecord], qs: &[PosteriorState], w: &WeightSet, delta: f64) -> Result<WeightSet> {
    if records.is_empty() || records.len() != qs.len() {
        return Err(Error::InvalidArgument("records and marginals must be non-empty and paired".into()));
    }
    // Residual before the intercept, and the mean-field variance, per cell.
    let parts: Vec<(f64, f64)> = records
        .iter()
        .zip(qs)
        .map(|(r, q)| {
            let mut m = w.w_ls_y * q.q_ls + w.w_lf_y * q.q_lf;
            let mut v = w.w_ls_y * w.w_ls_y * q.q_ls * (1.0 - q.q_ls) + w.w_lf_y * w.w_lf_y * q.q_lf * (1.0 - q.q_lf);
            if let Some(b) = q.q_bd {
                m += w.w_bd_y * b;
                v += w.w_bd_y * w.w_bd_y * b * (1.0 - b);
            }
            (math::ln(r.y + delta) - m, v)
        })
        .collect();
    let n = parts.len() as f64;
    let w0 = (parts.iter().map(|p| p.0).sum::<f64>() / n).min(0.0);
    let ss = parts.iter().map(|&(r, v)| (r - w0) * (r - w0) + v).sum::<f64>() / n;
    Ok(WeightSet {
        w0_y: w0,
        we_y: math::sqrt(ss).max(MIN_NOISE_Y),
        ..*w
    })
}

/// True when the mean of the last `window` entries differs from the mean of
/// the `window` before it by less than `rel_tol`, relative.
pub fn check_convergence(history: &[f64], window: usize, rel_tol: f64) -> bool {
    if window < 2 || history.len() < 2 * window {
        return false;
    }
    let n = history.len();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let last = mean(&history[n - window..]);
    let prev = mean(&history[n - 2 * window..n - window]);
    let denom = math::abs(prev).max(f64::MIN_POSITIVE);
    math::abs(last - prev) / denom < rel_tol
}

/// Optional pruning of cells that carry no signal.
///
/// A cell is dropped from the optimization only when its damage proxy and
/// both priors are all below their floors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskOptions {
    pub prune: bool,
    pub y_floor: f64,
    pub alpha_floor: f64,
}

impl MaskOptions {
    pub fn new(h: &HyperParams) -> Self {
        MaskOptions {
            prune: false,
            y_floor: h.delta,
            alpha_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    /// Indices into the record table that enter the optimization.
    pub active: Vec<usize>,
    pub pruned: Vec<usize>,
}

pub fn mask_locations(records: &[LocationRecord], opts: &MaskOptions) -> Mask {
    let mut active = Vec::new();
    let mut pruned = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if !r.valid {
            continue;
        }
        let quiet = r.y < opts.y_floor && r.alpha_ls < opts.alpha_floor && r.alpha_lf < opts.alpha_floor;
        if opts.prune && quiet {
            pruned.push(i);
        } else {
            active.push(i);
        }
    }
    Mask { active, pruned }
}

/// Mutable state of a run.
#[derive(Debug, Clone)]
pub struct InferenceRunState {
    pub epoch: usize,
    /// Indexed like the record table; `None` for invalid cells.
    pub q_table: Vec<Option<PosteriorState>>,
    pub weights: WeightSet,
    pub bound_history: Vec<f64>,
    pub rng: ChaCha8Rng,
}

impl InferenceRunState {
    pub fn new(records: &[LocationRecord], init: WeightSet, seed: u64) -> Self {
        InferenceRunState {
            epoch: 0,
            q_table: records
                .iter()
                .map(|r| r.valid.then(|| PosteriorState::from_priors(r)))
                .collect(),
            weights: init,
            bound_history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InferenceOutput {
    /// Indexed like the record table; `None` for invalid cells.
    pub posteriors: Vec<Option<PosteriorState>>,
    pub weights: WeightSet,
    pub bound_history: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
    pub pruned: usize,
}

impl InferenceOutput {
    /// Posterior LS, LF and BD rasters on `grid`. Invalid cells are NODATA,
    /// as is BD off the footprint.
    pub fn rasters(&self, records: &[LocationRecord], grid: &GridSpec) -> [Raster; 3] {
        let mut out = [Raster::nodata(*grid), Raster::nodata(*grid), Raster::nodata(*grid)];
        for (rec, q) in records.iter().zip(&self.posteriors) {
            let Some(q) = q else { continue };
            let i = grid.index(rec.row, rec.col);
            out[0].values[i] = q.q_ls;
            out[1].values[i] = q.q_lf;
            if let Some(b) = q.q_bd {
                out[2].values[i] = b;
            }
        }
        out
    }
}

/// Applies [`e_step_restarts`] to every listed cell, in parallel under `std`.
fn e_step_cells(
    records: &[LocationRecord],
    q_table: &mut [Option<PosteriorState>],
    cells: &[usize],
    w: &WeightSet,
    h: &HyperParams,
) {
    let updated = {
        let table = &*q_table;
        crate::par::map(cells, |i| {
            let q = table[i].expect("active cells carry a posterior");
            if h.e_restarts {
                e_step_restarts_unchecked(&records[i], &q, w, h)
            } else {
                e_step_unchecked(&records[i], &q, w, h).0
            }
        })
    };
    for (&i, q) in cells.iter().zip(updated) {
        q_table[i] = Some(q);
    }
}

fn population_bound(
    records: &[LocationRecord],
    q_table: &[Option<PosteriorState>],
    cells: &[usize],
    w: &WeightSet,
    h: &HyperParams,
) -> f64 {
    crate::par::sum_f64(cells, h.deterministic, |i| {
        location_bound_unchecked(&records[i], q_table[i].as_ref().expect("active"), w, h)
    })
}

/// Runs stochastic variational EM over a record table.
pub fn run_inference(
    records: &[LocationRecord],
    h: &HyperParams,
    init: WeightSet,
    mask: &MaskOptions,
) -> Result<InferenceOutput> {
    h.validate()?;
    init.validate()?;
    let Mask { active, pruned } = mask_locations(records, mask);
    if active.is_empty() {
        return Err(Error::Empty("no valid cells; inference cannot start"));
    }
    let mut state = InferenceRunState::new(records, init, h.seed);
    let population = active.len();
    if h.fit_observation_init && h.rho > 0.0 {
        let recs: Vec<LocationRecord> = active.iter().map(|&i| records[i]).collect();
        let qs: Vec<PosteriorState> = active.iter().map(|&i| state.q_table[i].expect("active")).collect();
        state.weights = fit_observation(&recs, &qs, &state.weights, h.delta)?;
    }
    let iters_per_epoch = population.div_ceil(h.batch_size.min(population));
    let mut converged = false;

    while state.epoch < h.max_epochs {
        state.epoch += 1;
        let step = HyperParams { rho: h.rho_at(state.epoch), ..*h };
        for _ in 0..iters_per_epoch {
            let mut batch = sample_minibatch(&active, h.batch_size, &mut state.rng)?;
            // Fixed processing order; the sample itself stays random.
            batch.sort_unstable();
            e_step_cells(records, &mut state.q_table, &batch, &state.weights, h);
            let recs: Vec<LocationRecord> = batch.iter().map(|&i| records[i]).collect();
            let qs: Vec<PosteriorState> = batch
                .iter()
                .map(|&i| state.q_table[i].expect("active"))
                .collect();
            state.weights = m_step(&recs, &qs, &state.weights, &step, population)?;
        }
        let bound = population_bound(records, &state.q_table, &active, &state.weights, h);
        if !bound.is_finite() {
            return Err(non_finite(records, &state, &active, h));
        }
        state.bound_history.push(bound);
        if check_convergence(&state.bound_history, h.conv_window, h.conv_rel_tol) {
            converged = true;
            break;
        }
    }

    // Final pass under the fitted weights, pruned cells included.
    let mut everyone = active.clone();
    everyone.extend_from_slice(&pruned);
    for &i in &pruned {
        state.q_table[i] = Some(PosteriorState::from_priors(&records[i]));
    }
    e_step_cells(records, &mut state.q_table, &everyone, &state.weights, h);

    Ok(InferenceOutput {
        posteriors: state.q_table,
        weights: state.weights,
        bound_history: state.bound_history,
        epochs: state.epoch,
        converged,
        pruned: pruned.len(),
    })
}

fn non_finite(
    records: &[LocationRecord],
    state: &InferenceRunState,
    active: &[usize],
    h: &HyperParams,
) -> Error {
    let bad = active.iter().copied().find(|&i| {
        let q = state.q_table[i].as_ref().expect("active");
        !location_bound_unchecked(&records[i], q, &state.weights, h).is_finite()
    });
    let (row, col) = bad.map_or((0, 0), |i| (records[i].row, records[i].col));
    Error::NonFinite {
        row,
        col,
        epoch: state.epoch,
        detail: format!("weights {:?}", state.weights),
    }
}
