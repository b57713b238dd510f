//! Ground truth for the variational machinery.
//!
//! [`exact_log_evidence`] and [`exact_posterior`] enumerate every binary
//! latent configuration of a cell and integrate the latent noise terms by
//! Gauss-Hermite quadrature; they share no code path with the bound.
//! [`sample_event`] draws synthetic events from the generative model.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bound::BoundGradient;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{
    dpm_log_density, latent_activation_prob, latent_logit, xor_log_potential, HyperParams,
    LocationRecord, WeightField, WeightSet,
};
use crate::quadrature::GaussHermite;
use crate::raster::{GridSpec, Raster};

/// Default Gauss-Hermite order for the noise expectations.
pub const DEFAULT_QUAD_ORDER: usize = 20;

/// Rejection attempts before a cell's ground failures are forced exclusive.
pub const MAX_EXCLUSIVITY_RETRIES: usize = 100;

/// Which damage-proxy density the oracle uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YDensity {
    /// Plain lognormal; this is the likelihood the variational bound bounds.
    Untruncated,
    /// Lognormal renormalized to `y <= 1`.
    Truncated,
}

/// One joint latent configuration and its unnormalized log-probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Configuration {
    pub x_ls: bool,
    pub x_lf: bool,
    pub x_bd: Option<bool>,
    pub log_joint: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactMarginals {
    pub p_ls: f64,
    pub p_lf: f64,
    pub p_bd: Option<f64>,
}

/// `log E_eps p(x | logit + noise_w eps)`, eps standard normal.
fn log_noisy_bernoulli(gh: &GaussHermite, bias: f64, noise_w: f64, state: bool) -> f64 {
    if noise_w == 0.0 {
        return math::ln(latent_activation_prob(bias, state));
    }
    // Work with log p per node to keep precision for saturated logits.
    let logs: Vec<f64> = gh
        .nodes()
        .iter()
        .zip(gh.weights())
        .map(|(x, w)| {
            let l = latent_logit(bias, noise_w, math::SQRT_2 * x, &[]);
            let lp = if state { math::log_sigmoid(l) } else { math::log_sigmoid(-l) };
            math::ln(*w) + lp
        })
        .collect();
    math::log_sum_exp(&logs) - 0.5 * math::ln(core::f64::consts::PI)
}

/// Enumerates all latent configurations of a cell with their log joint
/// `log p(x, y, u = 0)`. Exclusivity-violating configurations keep the
/// Gaussian exclusivity penalty rather than being dropped.
pub fn enumerate_configurations(
    rec: &LocationRecord,
    w: &WeightSet,
    h: &HyperParams,
    quad_order: usize,
    density: YDensity,
) -> Result<Vec<Configuration>> {
    rec.ensure_valid()?;
    if quad_order < 5 {
        return Err(Error::InvalidArgument(alloc::format!(
            "quadrature order must be at least 5, got {quad_order}"
        )));
    }
    let gh = GaussHermite::new(quad_order)?;
    let a_ls = w.w0_ls + w.wa_ls * rec.alpha_ls;
    let a_lf = w.w0_lf + w.wa_lf * rec.alpha_lf;
    let bd_states: &[Option<bool>] = if rec.has_building {
        &[Some(false), Some(true)]
    } else {
        &[None]
    };
    let mut out = Vec::with_capacity(8);
    for x_ls in [false, true] {
        for x_lf in [false, true] {
            let ground = log_noisy_bernoulli(&gh, a_ls, w.we_ls, x_ls)
                + log_noisy_bernoulli(&gh, a_lf, w.we_lf, x_lf)
                + xor_log_potential(0.0, x_ls, x_lf, h.sigma_xor)?;
            for &x_bd in bd_states {
                let mut lj = ground;
                if let Some(state) = x_bd {
                    let parents = [
                        (w.w_ls_bd, f64::from(u8::from(x_ls))),
                        (w.w_lf_bd, f64::from(u8::from(x_lf))),
                    ];
                    let b = latent_logit(w.w0_bd, 0.0, 0.0, &parents);
                    lj += log_noisy_bernoulli(&gh, b, w.we_bd, state);
                }
                lj += dpm_log_density(
                    rec.y,
                    x_ls,
                    x_lf,
                    x_bd,
                    w,
                    h.delta,
                    density == YDensity::Truncated,
                )?;
                out.push(Configuration { x_ls, x_lf, x_bd, log_joint: lj });
            }
        }
    }
    Ok(out)
}

/// Exact `log p(y, u = 0)` for one cell.
pub fn exact_log_evidence(
    rec: &LocationRecord,
    w: &WeightSet,
    h: &HyperParams,
    quad_order: usize,
    density: YDensity,
) -> Result<f64> {
    let configs = enumerate_configurations(rec, w, h, quad_order, density)?;
    let lj: Vec<f64> = configs.iter().map(|c| c.log_joint).collect();
    Ok(math::log_sum_exp(&lj))
}

/// Exact posterior marginals of LS, LF and BD for one cell.
pub fn exact_posterior(
    rec: &LocationRecord,
    w: &WeightSet,
    h: &HyperParams,
    quad_order: usize,
    density: YDensity,
) -> Result<ExactMarginals> {
    let configs = enumerate_configurations(rec, w, h, quad_order, density)?;
    let lj: Vec<f64> = configs.iter().map(|c| c.log_joint).collect();
    let z = math::log_sum_exp(&lj);
    let mut m = ExactMarginals {
        p_ls: 0.0,
        p_lf: 0.0,
        p_bd: rec.has_building.then_some(0.0),
    };
    for c in &configs {
        let p = math::exp(c.log_joint - z);
        if c.x_ls {
            m.p_ls += p;
        }
        if c.x_lf {
            m.p_lf += p;
        }
        if let (Some(true), Some(acc)) = (c.x_bd, m.p_bd.as_mut()) {
            *acc += p;
        }
    }
    Ok(m)
}

/// Central differences of `f` per weight coordinate. Coordinates within
/// `step` of a projection boundary use the one-sided difference pointing
/// into the feasible set.
pub fn finite_diff_gradient<F>(f: F, w: &WeightSet, step: f64) -> Result<BoundGradient>
where
    F: Fn(&WeightSet) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("step must be positive, got {step}")));
    }
    let mut g = [0.0; WeightSet::LEN];
    let f0 = f(w);
    for field in WeightField::ALL {
        let (lo, hi) = field.bounds();
        let v = w.get(field);
        let up = w.with(field, v + step);
        let down = w.with(field, v - step);
        g[field as usize] = if v - step < lo {
            (f(&up) - f0) / step
        } else if v + step > hi {
            (f0 - f(&down)) / step
        } else {
            (f(&up) - f(&down)) / (2.0 * step)
        };
    }
    Ok(BoundGradient(g))
}

/// Which difference [`finite_diff_gradient`] applies to a coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffRule {
    Central,
    Forward,
    Backward,
}

pub fn diff_rule(field: WeightField, value: f64, step: f64) -> DiffRule {
    let (lo, hi) = field.bounds();
    if value - step < lo {
        DiffRule::Forward
    } else if value + step > hi {
        DiffRule::Backward
    } else {
        DiffRule::Central
    }
}

/// Latent states of one simulated cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrueStates {
    pub x_ls: bool,
    pub x_lf: bool,
    /// `None` off the building footprint.
    pub x_bd: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEvent {
    pub grid: GridSpec,
    /// Row-major; `None` where a prior was NODATA.
    pub true_states: Vec<Option<TrueStates>>,
    /// Damage-proxy values in `[delta, 1]`, NODATA where states are `None`.
    pub observations: Raster,
    pub true_weights: WeightSet,
    pub seed: u64,
    /// Flat indices of cells whose exclusivity rejection loop hit the cap.
    pub capped_cells: Vec<usize>,
}

/// Per-cell generator: one ChaCha stream per cell index, split from `seed`.
pub fn cell_rng(seed: u64, cell: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell as u64);
    rng
}

/// Draws one cell's states and observation.
///
/// Returns the states, `y`, and whether the exclusivity retry cap was hit.
pub fn sample_cell<R: Rng + ?Sized>(
    rng: &mut R,
    alpha_ls: f64,
    alpha_lf: f64,
    has_building: bool,
    w: &WeightSet,
    h: &HyperParams,
) -> (TrueStates, f64, bool) {
    let draw = |bias: f64, noise_w: f64, rng: &mut R| {
        let eps: f64 = rng.sample(StandardNormal);
        let p = latent_activation_prob(latent_logit(bias, noise_w, eps, &[]), true);
        rng.random::<f64>() < p
    };
    let a_ls = w.w0_ls + w.wa_ls * alpha_ls;
    let a_lf = w.w0_lf + w.wa_lf * alpha_lf;
    let mut capped = true;
    let (mut x_ls, mut x_lf) = (false, false);
    for _ in 0..MAX_EXCLUSIVITY_RETRIES {
        x_ls = draw(a_ls, w.we_ls, rng);
        x_lf = draw(a_lf, w.we_lf, rng);
        if !(x_ls && x_lf) {
            capped = false;
            break;
        }
    }
    if capped {
        // Keep the hazard with the larger prior.
        x_ls = alpha_ls >= alpha_lf;
        x_lf = !x_ls;
    }
    let x_bd = has_building.then(|| {
        let parents = [
            (w.w_ls_bd, f64::from(u8::from(x_ls))),
            (w.w_lf_bd, f64::from(u8::from(x_lf))),
        ];
        draw(latent_logit(w.w0_bd, 0.0, 0.0, &parents), w.we_bd, rng)
    });
    let mean = w.observation_mean(x_ls, x_lf, x_bd);
    let y = sample_truncated_log_dpm(rng, mean, w.we_y, h.delta);
    (TrueStates { x_ls, x_lf, x_bd }, y, capped)
}

/// Draws `y` with `log(y + delta) ~ N(mean, sd)` truncated above at
/// `log(1 + delta)`, by inverse-CDF sampling; the result is clamped to
/// `[delta, 1]`.
pub fn sample_truncated_log_dpm<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, delta: f64) -> f64 {
    let upper = (math::ln_1p(delta) - mean) / sd;
    let mass = math::norm_cdf(upper);
    // Open interval keeps the quantile finite.
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let z = if mass > 0.0 {
        math::norm_ppf(u * mass).min(upper)
    } else {
        upper
    };
    let t = mean + sd * z;
    (math::exp(t) - delta).clamp(delta, 1.0)
}

/// Simulates an event over aligned prior rasters.
pub fn sample_event(
    alpha_ls: &Raster,
    alpha_lf: &Raster,
    footprint: Option<&Raster>,
    w: &WeightSet,
    h: &HyperParams,
    seed: u64,
) -> Result<SyntheticEvent> {
    w.validate()?;
    let grid = alpha_ls.spec;
    if !alpha_lf.spec.same_lattice(&grid) || footprint.is_some_and(|f| !f.spec.same_lattice(&grid)) {
        return Err(Error::GridMismatch("simulation rasters are not aligned".into()));
    }
    let idx: Vec<usize> = (0..grid.len()).collect();
    let cells = crate::par::map(&idx, |i| {
        let (Some(a), Some(b)) = (alpha_ls.value(i), alpha_lf.value(i)) else {
            return None;
        };
        let building = footprint.and_then(|f| f.value(i)).is_some_and(|v| v > 0.0);
        let mut rng = cell_rng(seed, i);
        Some(sample_cell(&mut rng, a.clamp(0.0, 1.0), b.clamp(0.0, 1.0), building, w, h))
    });
    let mut observations = Raster::nodata(grid);
    let mut true_states = Vec::with_capacity(grid.len());
    let mut capped_cells = Vec::new();
    for (i, cell) in cells.into_iter().enumerate() {
        match cell {
            Some((states, y, capped)) => {
                observations.values[i] = y;
                true_states.push(Some(states));
                if capped {
                    capped_cells.push(i);
                }
            }
            None => true_states.push(None),
        }
    }
    Ok(SyntheticEvent {
        grid,
        true_states,
        observations,
        true_weights: *w,
        seed,
        capped_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(y: f64, building: bool) -> LocationRecord {
        LocationRecord::new(0, 0, y, 0.3, 0.6, building, 1e-4)
    }

    #[test]
    fn symmetric_example_matches_direct_sum() {
        // With w_*y = 0 the observation factor is shared; the sum over the
        // eight configurations is (1/8) * sum of exclusivity factors.
        let h = HyperParams { sigma_xor: 0.5, ..Default::default() };
        let y = (-1.0f64).exp();
        let r = LocationRecord::new(0, 0, y, 0.2, 0.9, true, h.delta);
        let w = WeightSet::zeros();
        let ev = exact_log_evidence(&r, &w, &h, 20, YDensity::Untruncated).unwrap();
        assert!((ev - (-0.888_288_167_137_385_8)).abs() < 1e-12, "{ev}");
    }

    #[test]
    fn degenerate_noise_is_order_invariant() {
        let h = HyperParams::default();
        let mut w = WeightSet::default();
        w.we_ls = 0.0;
        w.we_lf = 0.0;
        w.we_bd = 0.0;
        let r = rec(0.4, true);
        let a = exact_log_evidence(&r, &w, &h, 5, YDensity::Truncated).unwrap();
        let b = exact_log_evidence(&r, &w, &h, 40, YDensity::Truncated).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evidence_grows_with_landslide_coupling() {
        let h = HyperParams::default();
        let r = LocationRecord::new(0, 0, 0.9, 0.95, 0.05, false, h.delta);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..6 {
            let mut w = WeightSet::default();
            w.wa_ls = 4.0;
            w.w0_y = -2.0;
            w.w_ls_y = 0.4 * k as f64;
            let ev = exact_log_evidence(&r, &w, &h, 20, YDensity::Untruncated).unwrap();
            assert!(ev > prev, "k={k}");
            prev = ev;
        }
    }

    #[test]
    fn symmetric_inputs_give_equal_marginals() {
        let h = HyperParams::default();
        let r = LocationRecord::new(0, 0, 0.5, 0.4, 0.4, true, h.delta);
        let m = exact_posterior(&r, &WeightSet::default(), &h, 20, YDensity::Truncated).unwrap();
        assert_eq!(m.p_ls, m.p_lf);
    }

    #[test]
    fn uninformative_posterior_is_prior_sigmoid() {
        let h = HyperParams { sigma_xor: 1.0, ..Default::default() };
        let mut w = WeightSet::zeros();
        w.w0_ls = -0.3;
        w.wa_ls = 2.0;
        // sigma_xor = 1 keeps a mild coupling; approach the limit via scale.
        let r = LocationRecord::new(0, 0, 0.5, 0.7, 0.2, false, h.delta);
        let m = exact_posterior(&r, &w, &h, 20, YDensity::Truncated).unwrap();
        let prior = math::sigmoid(-0.3 + 2.0 * 0.7);
        // With sigma -> infinity the exclusivity factor is flat.
        let wide = HyperParams { sigma_xor: 1e8, ..h };
        let m_wide = exact_posterior(&r, &w, &wide, 20, YDensity::Truncated).unwrap();
        assert!((m_wide.p_ls - prior).abs() < 1e-12);
        assert!(m.p_ls < prior);
    }

    #[test]
    fn marginals_agree_with_joint() {
        let h = HyperParams::default();
        let r = rec(0.7, true);
        let w = WeightSet::default();
        let configs = enumerate_configurations(&r, &w, &h, 20, YDensity::Truncated).unwrap();
        let z = math::log_sum_exp(&configs.iter().map(|c| c.log_joint).collect::<Vec<_>>());
        let p_bd: f64 = configs
            .iter()
            .filter(|c| c.x_bd == Some(true))
            .map(|c| (c.log_joint - z).exp())
            .sum();
        let m = exact_posterior(&r, &w, &h, 20, YDensity::Truncated).unwrap();
        assert!((m.p_bd.unwrap() - p_bd).abs() < 1e-15);
        assert_eq!(configs.len(), 8);
        assert_eq!(enumerate_configurations(&rec(0.7, false), &w, &h, 20, YDensity::Truncated).unwrap().len(), 4);
    }

    #[test]
    fn rejects_low_order_and_invalid() {
        let h = HyperParams::default();
        let w = WeightSet::default();
        assert!(exact_log_evidence(&rec(0.5, false), &w, &h, 4, YDensity::Truncated).is_err());
        assert!(exact_log_evidence(&LocationRecord::invalid(0, 0), &w, &h, 20, YDensity::Truncated).is_err());
    }

    #[test]
    fn finite_diff_of_quadratic() {
        let w = WeightSet::default();
        let f = |w: &WeightSet| w.to_array().iter().map(|v| v * v).sum::<f64>();
        let g = finite_diff_gradient(f, &w, 1e-4).unwrap();
        for field in WeightField::ALL {
            assert!((g[field] - 2.0 * w.get(field)).abs() < 1e-8, "{field:?}");
        }
        assert!(finite_diff_gradient(f, &w, 0.0).is_err());
    }

    #[test]
    fn finite_diff_is_one_sided_at_bounds() {
        let w = WeightSet { we_y: 1e-3, w0_y: 0.0, ..WeightSet::default() };
        assert_eq!(diff_rule(WeightField::WeY, w.we_y, 1e-5), DiffRule::Forward);
        assert_eq!(diff_rule(WeightField::W0Y, w.w0_y, 1e-5), DiffRule::Backward);
        assert_eq!(diff_rule(WeightField::W0Ls, w.w0_ls, 1e-5), DiffRule::Central);
        // f(w) = we_y^2 has derivative 2e-3 at the boundary; forward difference
        // must never evaluate below it.
        let f = |w: &WeightSet| {
            assert!(w.we_y >= 1e-3);
            w.we_y * w.we_y
        };
        let g = finite_diff_gradient(f, &w, 1e-5).unwrap();
        assert!((g[WeightField::WeY] - 2e-3).abs() < 2e-5);
    }

    #[test]
    fn sampling_respects_exclusivity_and_bounds() {
        let h = HyperParams::default();
        let spec = GridSpec::new(20, 20, 0.0, 0.0, 1.0, -9999.0).unwrap();
        let a = Raster::filled(spec, 0.9);
        let mut w = WeightSet::default();
        w.wa_ls = 3.0;
        w.wa_lf = 3.0;
        let ev = sample_event(&a, &a, Some(&Raster::filled(spec, 1.0)), &w, &h, 7).unwrap();
        for s in ev.true_states.iter().flatten() {
            assert!(!(s.x_ls && s.x_lf));
            assert!(s.x_bd.is_some());
        }
        assert!(ev.observations.values.iter().all(|y| (h.delta..=1.0).contains(y)));
        let again = sample_event(&a, &a, Some(&Raster::filled(spec, 1.0)), &w, &h, 7).unwrap();
        assert_eq!(ev, again);
    }

    #[test]
    fn forced_exclusivity_after_cap() {
        let h = HyperParams::default();
        let mut w = WeightSet::default();
        w.w0_ls = 50.0;
        w.w0_lf = 50.0;
        let mut rng = cell_rng(1, 0);
        let (s, _, capped) = sample_cell(&mut rng, 0.2, 0.8, false, &w, &h);
        assert!(capped);
        assert_eq!((s.x_ls, s.x_lf), (false, true));
    }

    #[test]
    fn nodata_priors_are_skipped() {
        let h = HyperParams::default();
        let spec = GridSpec::new(2, 1, 0.0, 0.0, 1.0, -9999.0).unwrap();
        let a = Raster::new(spec, alloc::vec![0.5, -9999.0]).unwrap();
        let ev = sample_event(&a, &a, None, &WeightSet::default(), &h, 3).unwrap();
        assert!(ev.true_states[0].is_some() && ev.true_states[1].is_none());
        assert_eq!(ev.observations.get(0, 1), None);
    }
}
