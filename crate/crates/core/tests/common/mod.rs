#![allow(dead_code)]

use groundfail_core::{HyperParams, LocationRecord, PosteriorState, WeightSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Couplings in [-2, 2], latent noise in [0, 0.5], observation noise in
/// [0.05, 0.5], observation bias in [-2, 0].
pub fn random_weights<R: Rng>(rng: &mut R) -> WeightSet {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..=hi);
    WeightSet {
        w0_ls: u(-2.0, 2.0),
        w0_lf: u(-2.0, 2.0),
        w0_bd: u(-2.0, 2.0),
        wa_ls: u(-2.0, 2.0),
        wa_lf: u(-2.0, 2.0),
        we_ls: u(0.0, 0.5),
        we_lf: u(0.0, 0.5),
        we_bd: u(0.0, 0.5),
        w_ls_bd: u(-2.0, 2.0),
        w_lf_bd: u(-2.0, 2.0),
        w0_y: u(-2.0, 0.0),
        w_ls_y: u(-2.0, 2.0),
        w_lf_y: u(-2.0, 2.0),
        w_bd_y: u(-2.0, 2.0),
        we_y: u(0.05, 0.5),
    }
}

pub fn random_record<R: Rng>(rng: &mut R, h: &HyperParams) -> LocationRecord {
    LocationRecord::new(
        0,
        0,
        rng.random_range(h.delta..=1.0),
        rng.random(),
        rng.random(),
        rng.random_bool(0.5),
        h.delta,
    )
}

pub fn random_records<R: Rng>(rng: &mut R, h: &HyperParams, max_cells: usize) -> Vec<LocationRecord> {
    let n = rng.random_range(1..=max_cells);
    (0..n)
        .map(|i| {
            let mut r = random_record(rng, h);
            r.col = i;
            r
        })
        .collect()
}

pub fn random_state<R: Rng>(rng: &mut R, rec: &LocationRecord) -> PosteriorState {
    PosteriorState::clamped(
        rng.random(),
        rng.random(),
        rec.has_building.then(|| rng.random()),
    )
}

pub fn entropy(q: f64) -> f64 {
    -(q * q.ln() + (1.0 - q) * (1.0 - q).ln())
}
