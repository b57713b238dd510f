//! Mean-field variational lower bound, its coordinate logits and its weight
//! gradient.
//!
//! Per cell the bound is
//!
//! ```text
//! L = E_q[log N(log(y+d); mu(x), we_y^2)] - log(y+d)                DPM
//!   + sum_{LS,LF} -q sp(-a + we^2/2) - (1-q) sp(a + we^2/2)          priors
//!   + sum_c pi_c [-q_bd sp(-b_c + we^2/2) - (1-q_bd) sp(b_c + we^2/2)] BD
//!   - log(sqrt(2 pi) sigma) - q_ls q_lf / (2 sigma^2)                exclusivity
//!   + H(q)
//! ```
//!
//! where `sp` is softplus, `a = w0 + wa * alpha`, and `c` runs over the four
//! `(x_ls, x_lf)` configurations with mean-field weight `pi_c` and BD logit
//! `b_c = w0_bd + w_ls_bd x_ls + w_lf_bd x_lf`. The noise terms come from
//! `E_eps log sigmoid(z + we eps) >= -log(1 + exp(-z + we^2 / 2))`.
//!
//! The bound is multilinear in `(q_ls, q_lf, q_bd)`, so each coordinate
//! logit `T` is independent of its own marginal and `q_i = sigmoid(T)` is the
//! exact coordinate maximizer.

use alloc::vec::Vec;
use core::ops::{Add, AddAssign, Index};

use crate::error::{Error, Result};
use crate::math::{self, sigmoid, softplus};
use crate::model::{xor_norm_const, HyperParams, LocationRecord, NodeId, WeightField, WeightSet};

/// Clamp applied to every stored marginal.
pub const Q_MIN: f64 = 1e-7;

/// Mean-field marginals of one cell. `q_bd` is `None` without a building.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorState {
    pub q_ls: f64,
    pub q_lf: f64,
    pub q_bd: Option<f64>,
}

impl PosteriorState {
    pub fn new(q_ls: f64, q_lf: f64, q_bd: Option<f64>) -> Result<Self> {
        let s = PosteriorState { q_ls, q_lf, q_bd };
        s.check()?;
        Ok(s)
    }

    /// Builds a state with every marginal clamped into `[Q_MIN, 1 - Q_MIN]`.
    pub fn clamped(q_ls: f64, q_lf: f64, q_bd: Option<f64>) -> Self {
        PosteriorState {
            q_ls: clamp_q(q_ls),
            q_lf: clamp_q(q_lf),
            q_bd: q_bd.map(clamp_q),
        }
    }

    /// Initial state for a record: priors for LS/LF, one half for BD.
    pub fn from_priors(rec: &LocationRecord) -> Self {
        PosteriorState::clamped(
            rec.alpha_ls,
            rec.alpha_lf,
            rec.has_building.then_some(0.5),
        )
    }

    pub fn get(&self, node: NodeId) -> Option<f64> {
        match node {
            NodeId::Landslide => Some(self.q_ls),
            NodeId::Liquefaction => Some(self.q_lf),
            NodeId::BuildingDamage => self.q_bd,
            _ => None,
        }
    }

    pub(crate) fn set(&mut self, node: NodeId, value: f64) {
        match node {
            NodeId::Landslide => self.q_ls = value,
            NodeId::Liquefaction => self.q_lf = value,
            NodeId::BuildingDamage => self.q_bd = Some(value),
            _ => {}
        }
    }

    fn check(&self) -> Result<()> {
        let ok = |q: f64| (Q_MIN..=1.0 - Q_MIN).contains(&q);
        if ok(self.q_ls) && ok(self.q_lf) && self.q_bd.is_none_or(ok) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(alloc::format!(
                "posterior {self:?} outside [{Q_MIN}, 1 - {Q_MIN}]"
            )))
        }
    }

    fn check_against(&self, rec: &LocationRecord) -> Result<()> {
        self.check()?;
        if self.q_bd.is_some() != rec.has_building {
            return Err(Error::InvalidArgument(alloc::format!(
                "posterior BD presence does not match footprint at ({}, {})",
                rec.row,
                rec.col
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn clamp_q(q: f64) -> f64 {
    q.clamp(Q_MIN, 1.0 - Q_MIN)
}

/// Gradient of the bound with respect to every [`WeightSet`] coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundGradient(pub [f64; WeightSet::LEN]);

impl BoundGradient {
    pub fn get(&self, field: WeightField) -> f64 {
        self.0[field as usize]
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.0.iter_mut().for_each(|g| *g *= k);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, g| m.max(math::abs(*g)))
    }
}

impl Index<WeightField> for BoundGradient {
    type Output = f64;
    fn index(&self, field: WeightField) -> &f64 {
        &self.0[field as usize]
    }
}

impl Add for BoundGradient {
    type Output = BoundGradient;
    fn add(mut self, rhs: BoundGradient) -> BoundGradient {
        self += rhs;
        self
    }
}

impl AddAssign for BoundGradient {
    fn add_assign(&mut self, rhs: BoundGradient) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

/// The four `(x_ls, x_lf)` configurations with their mean-field weights.
fn ground_configs(q_ls: f64, q_lf: f64) -> [((f64, f64), f64); 4] {
    [
        ((0.0, 0.0), (1.0 - q_ls) * (1.0 - q_lf)),
        ((1.0, 0.0), q_ls * (1.0 - q_lf)),
        ((0.0, 1.0), (1.0 - q_ls) * q_lf),
        ((1.0, 1.0), q_ls * q_lf),
    ]
}

/// Jensen-relaxed `E log p(x | logit + we eps)` for a Bernoulli marginal `q`.
#[inline]
fn noisy_bernoulli_term(q: f64, logit: f64, noise_w: f64) -> f64 {
    let s = 0.5 * noise_w * noise_w;
    -q * softplus(-logit + s) - (1.0 - q) * softplus(logit + s)
}

/// Derivative of [`noisy_bernoulli_term`] with respect to `q`.
#[inline]
fn noisy_bernoulli_slope(logit: f64, noise_w: f64) -> f64 {
    let s = 0.5 * noise_w * noise_w;
    softplus(logit + s) - softplus(-logit + s)
}

/// Derivatives of [`noisy_bernoulli_term`] with respect to `(logit, noise_w)`.
#[inline]
fn noisy_bernoulli_grad(q: f64, logit: f64, noise_w: f64) -> (f64, f64) {
    let s = 0.5 * noise_w * noise_w;
    let up = sigmoid(-logit + s);
    let down = sigmoid(logit + s);
    (q * up - (1.0 - q) * down, -(q * up + (1.0 - q) * down) * noise_w)
}

fn entropy(q: f64) -> f64 {
    -math::xlogx(q) - math::xlogx(1.0 - q)
}

/// `(weight, marginal)` for every latent parent of `y` in this cell.
fn y_parents(q: &PosteriorState, w: &WeightSet) -> ([(f64, f64); 3], usize) {
    let mut out = [(w.w_ls_y, q.q_ls), (w.w_lf_y, q.q_lf), (0.0, 0.0)];
    match q.q_bd {
        Some(q_bd) => {
            out[2] = (w.w_bd_y, q_bd);
            (out, 3)
        }
        None => (out, 2),
    }
}

/// Constant part of the bound: the Gaussian normalizers of the observation
/// density and of the exclusivity potential.
pub fn bound_constant(h: &HyperParams) -> f64 {
    -0.5 * math::LN_2PI - xor_norm_const(h.sigma_xor)
}

/// Per-cell contribution to the variational lower bound.
pub fn location_bound(
    rec: &LocationRecord,
    q: &PosteriorState,
    w: &WeightSet,
    h: &HyperParams,
) -> Result<f64> {
    rec.ensure_valid()?;
    q.check_against(rec)?;
    Ok(location_bound_unchecked(rec, q, w, h))
}

pub(crate) fn location_bound_unchecked(
    rec: &LocationRecord,
    q: &PosteriorState,
    w: &WeightSet,
    h: &HyperParams,
) -> f64 {
    let ell = math::ln(rec.y + h.delta);
    let (parents, n) = y_parents(q, w);
    let parents = &parents[..n];
    let mean = w.w0_y + parents.iter().map(|(wk, qk)| wk * qk).sum::<f64>();
    let var = parents.iter().map(|(wk, qk)| wk * wk * qk * (1.0 - qk)).sum::<f64>();
    let r = ell - mean;
    let mut total = -ell - math::ln(w.we_y) - 0.5 * math::LN_2PI
        - (r * r + var) / (2.0 * w.we_y * w.we_y);

    total += noisy_bernoulli_term(q.q_ls, w.w0_ls + w.wa_ls * rec.alpha_ls, w.we_ls);
    total += noisy_bernoulli_term(q.q_lf, w.w0_lf + w.wa_lf * rec.alpha_lf, w.we_lf);

    if let Some(q_bd) = q.q_bd {
        for ((x_ls, x_lf), pi) in ground_configs(q.q_ls, q.q_lf) {
            let b = w.w0_bd + w.w_ls_bd * x_ls + w.w_lf_bd * x_lf;
            total += pi * noisy_bernoulli_term(q_bd, b, w.we_bd);
        }
    }

    let s2 = h.sigma_xor * h.sigma_xor;
    total += -xor_norm_const(h.sigma_xor) - q.q_ls * q.q_lf / (2.0 * s2);

    total += entropy(q.q_ls) + entropy(q.q_lf) + q.q_bd.map_or(0.0, entropy);
    total
}

/// Sum of [`location_bound`] over paired records and posteriors.
pub fn total_bound(
    records: &[LocationRecord],
    qs: &[PosteriorState],
    w: &WeightSet,
    h: &HyperParams,
) -> Result<f64> {
    if records.len() != qs.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} records but {} posteriors",
            records.len(),
            qs.len()
        )));
    }
    for (rec, q) in records.iter().zip(qs) {
        rec.ensure_valid()?;
        q.check_against(rec)?;
    }
    let idx: Vec<usize> = (0..records.len()).collect();
    Ok(crate::par::sum_f64(&idx, h.deterministic, |i| {
        location_bound_unchecked(&records[i], &qs[i], w, h)
    }))
}

/// Coordinate logit `T` of the closed-form update `q_i = sigmoid(T)`: the
/// derivative of the entropy-free bound with respect to `q_i`.
pub fn posterior_logit_t(
    rec: &LocationRecord,
    node: NodeId,
    q: &PosteriorState,
    w: &WeightSet,
    h: &HyperParams,
) -> Result<f64> {
    rec.ensure_valid()?;
    q.check_against(rec)?;
    match node {
        NodeId::Landslide | NodeId::Liquefaction => {}
        NodeId::BuildingDamage if q.q_bd.is_some() => {}
        _ => return Err(Error::AbsentNode(node)),
    }
    Ok(posterior_logit_t_unchecked(rec, node, q, w, h))
}

pub(crate) fn posterior_logit_t_unchecked(
    rec: &LocationRecord,
    node: NodeId,
    q: &PosteriorState,
    w: &WeightSet,
    h: &HyperParams,
) -> f64 {
    let ell = math::ln(rec.y + h.delta);
    let (parents, n) = y_parents(q, w);
    let parents = &parents[..n];
    let slot = match node {
        NodeId::Landslide => 0,
        NodeId::Liquefaction => 1,
        _ => 2,
    };
    // Observation edge: the q_i^2 pieces of (l - m)^2 and of the variance cancel.
    let w_iy = parents[slot].0;
    let mean_others = w.w0_y
        + parents
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != slot)
            .map(|(_, (wk, qk))| wk * qk)
            .sum::<f64>();
    let mut t = (w_iy * (ell - mean_others) - 0.5 * w_iy * w_iy) / (w.we_y * w.we_y);

    let inv_2s2 = 1.0 / (2.0 * h.sigma_xor * h.sigma_xor);
    match node {
        NodeId::Landslide | NodeId::Liquefaction => {
            let is_ls = node == NodeId::Landslide;
            let (a, we, spouse) = if is_ls {
                (w.w0_ls + w.wa_ls * rec.alpha_ls, w.we_ls, q.q_lf)
            } else {
                (w.w0_lf + w.wa_lf * rec.alpha_lf, w.we_lf, q.q_ls)
            };
            t += noisy_bernoulli_slope(a, we);
            t -= spouse * inv_2s2;
            if let Some(q_bd) = q.q_bd {
                // d pi_c / d q_i = (2 x_i - 1) * spouse factor.
                for x_self in [0.0, 1.0] {
                    for x_spouse in [0.0, 1.0] {
                        let (x_ls, x_lf) = if is_ls { (x_self, x_spouse) } else { (x_spouse, x_self) };
                        let spouse_factor = if x_spouse == 1.0 { spouse } else { 1.0 - spouse };
                        let b = w.w0_bd + w.w_ls_bd * x_ls + w.w_lf_bd * x_lf;
                        t += (2.0 * x_self - 1.0)
                            * spouse_factor
                            * noisy_bernoulli_term(q_bd, b, w.we_bd);
                    }
                }
            }
        }
        _ => {
            for ((x_ls, x_lf), pi) in ground_configs(q.q_ls, q.q_lf) {
                let b = w.w0_bd + w.w_ls_bd * x_ls + w.w_lf_bd * x_lf;
                t += pi * noisy_bernoulli_slope(b, w.we_bd);
            }
        }
    }
    t
}

/// Analytic gradient of one cell's bound with respect to the weights.
pub fn location_weight_gradient(
    rec: &LocationRecord,
    q: &PosteriorState,
    w: &WeightSet,
    h: &HyperParams,
) -> Result<BoundGradient> {
    rec.ensure_valid()?;
    q.check_against(rec)?;
    Ok(location_weight_gradient_unchecked(rec, q, w, h))
}

pub(crate) fn location_weight_gradient_unchecked(
    rec: &LocationRecord,
    q: &PosteriorState,
    w: &WeightSet,
    h: &HyperParams,
) -> BoundGradient {
    use WeightField as F;
    let mut g = [0.0; WeightSet::LEN];

    let ell = math::ln(rec.y + h.delta);
    let (parents, n) = y_parents(q, w);
    let parents = &parents[..n];
    let mean = w.w0_y + parents.iter().map(|(wk, qk)| wk * qk).sum::<f64>();
    let var = parents.iter().map(|(wk, qk)| wk * wk * qk * (1.0 - qk)).sum::<f64>();
    let r = ell - mean;
    let inv_v = 1.0 / (w.we_y * w.we_y);
    g[F::W0Y as usize] = r * inv_v;
    let y_fields = [F::WLsY, F::WLfY, F::WBdY];
    for ((wk, qk), field) in parents.iter().zip(y_fields) {
        g[field as usize] = (r * qk - wk * qk * (1.0 - qk)) * inv_v;
    }
    g[F::WeY as usize] = -1.0 / w.we_y + (r * r + var) * inv_v / w.we_y;

    let (d_a, d_we) = noisy_bernoulli_grad(q.q_ls, w.w0_ls + w.wa_ls * rec.alpha_ls, w.we_ls);
    g[F::W0Ls as usize] = d_a;
    g[F::WaLs as usize] = d_a * rec.alpha_ls;
    g[F::WeLs as usize] = d_we;

    let (d_a, d_we) = noisy_bernoulli_grad(q.q_lf, w.w0_lf + w.wa_lf * rec.alpha_lf, w.we_lf);
    g[F::W0Lf as usize] = d_a;
    g[F::WaLf as usize] = d_a * rec.alpha_lf;
    g[F::WeLf as usize] = d_we;

    if let Some(q_bd) = q.q_bd {
        for ((x_ls, x_lf), pi) in ground_configs(q.q_ls, q.q_lf) {
            let b = w.w0_bd + w.w_ls_bd * x_ls + w.w_lf_bd * x_lf;
            let (d_b, d_we) = noisy_bernoulli_grad(q_bd, b, w.we_bd);
            g[F::W0Bd as usize] += pi * d_b;
            g[F::WLsBd as usize] += pi * d_b * x_ls;
            g[F::WLfBd as usize] += pi * d_b * x_lf;
            g[F::WeBd as usize] += pi * d_we;
        }
    }
    BoundGradient(g)
}

/// Gradient of [`total_bound`] over a batch with respect to the weights.
pub fn weight_gradient(
    records: &[LocationRecord],
    qs: &[PosteriorState],
    w: &WeightSet,
    h: &HyperParams,
) -> Result<BoundGradient> {
    if records.is_empty() {
        return Err(Error::Empty("gradient batch"));
    }
    if records.len() != qs.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} records but {} posteriors",
            records.len(),
            qs.len()
        )));
    }
    for (rec, q) in records.iter().zip(qs) {
        rec.ensure_valid()?;
        q.check_against(rec)?;
    }
    let idx: Vec<usize> = (0..records.len()).collect();
    Ok(crate::par::sum_gradient(&idx, h.deterministic, |i| {
        location_weight_gradient_unchecked(&records[i], &qs[i], w, h)
    }))
}
