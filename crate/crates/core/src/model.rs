//! Node family, parameters and conditional distributions of the per-cell
//! causal graph.
//!
//! ```text
//!   alpha_LS   alpha_LF
//!      |          |
//!      v          v
//!     LS -------> LF        (LS, LF) --> U   exclusivity, always observed 0
//!      \  \      / |
//!       \  +-> BD  |        BD only on footprint cells
//!        \     |   |
//!         +--> Y <-+        damage-proxy observation
//! ```
//!
//! The bias node `x_0` is identically one and folded into the `w0_*` weights.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Lower limit kept on the observation noise scale.
pub const MIN_NOISE_Y: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Landslide,
    Liquefaction,
    BuildingDamage,
    Observation,
    Exclusivity,
    Bias,
}

/// Edge weights, noise scales and biases shared by every cell.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct WeightSet {
    pub w0_ls: f64,
    pub w0_lf: f64,
    pub w0_bd: f64,
    pub wa_ls: f64,
    pub wa_lf: f64,
    pub we_ls: f64,
    pub we_lf: f64,
    pub we_bd: f64,
    pub w_ls_bd: f64,
    pub w_lf_bd: f64,
    pub w0_y: f64,
    pub w_ls_y: f64,
    pub w_lf_y: f64,
    pub w_bd_y: f64,
    pub we_y: f64,
}

/// Names a single coordinate of [`WeightSet`]; the discriminant is the index
/// used by [`WeightSet::to_array`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightField {
    W0Ls,
    W0Lf,
    W0Bd,
    WaLs,
    WaLf,
    WeLs,
    WeLf,
    WeBd,
    WLsBd,
    WLfBd,
    W0Y,
    WLsY,
    WLfY,
    WBdY,
    WeY,
}

impl WeightField {
    pub const ALL: [WeightField; WeightSet::LEN] = [
        WeightField::W0Ls,
        WeightField::W0Lf,
        WeightField::W0Bd,
        WeightField::WaLs,
        WeightField::WaLf,
        WeightField::WeLs,
        WeightField::WeLf,
        WeightField::WeBd,
        WeightField::WLsBd,
        WeightField::WLfBd,
        WeightField::W0Y,
        WeightField::WLsY,
        WeightField::WLfY,
        WeightField::WBdY,
        WeightField::WeY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightField::W0Ls => "w0_ls",
            WeightField::W0Lf => "w0_lf",
            WeightField::W0Bd => "w0_bd",
            WeightField::WaLs => "wa_ls",
            WeightField::WaLf => "wa_lf",
            WeightField::WeLs => "we_ls",
            WeightField::WeLf => "we_lf",
            WeightField::WeBd => "we_bd",
            WeightField::WLsBd => "w_ls_bd",
            WeightField::WLfBd => "w_lf_bd",
            WeightField::W0Y => "w0_y",
            WeightField::WLsY => "w_ls_y",
            WeightField::WLfY => "w_lf_y",
            WeightField::WBdY => "w_bd_y",
            WeightField::WeY => "we_y",
        }
    }

    /// Feasible interval of the coordinate under the projection rules.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            WeightField::WeLs | WeightField::WeLf | WeightField::WeBd => (0.0, f64::INFINITY),
            WeightField::WeY => (MIN_NOISE_Y, f64::INFINITY),
            WeightField::W0Y => (f64::NEG_INFINITY, 0.0),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

impl Default for WeightSet {
    /// Prior pass-through for ground failures with weak positive coupling to
    /// the damage proxy.
    fn default() -> Self {
        WeightSet {
            w0_ls: 0.0,
            w0_lf: 0.0,
            w0_bd: 0.0,
            wa_ls: 1.0,
            wa_lf: 1.0,
            we_ls: 0.1,
            we_lf: 0.1,
            we_bd: 0.1,
            w_ls_bd: 0.5,
            w_lf_bd: 0.5,
            w0_y: -0.1,
            w_ls_y: 0.5,
            w_lf_y: 0.5,
            w_bd_y: 0.5,
            we_y: 1.0,
        }
    }
}

impl WeightSet {
    pub const LEN: usize = 15;

    /// All weights zero except the observation noise scale.
    pub fn zeros() -> Self {
        WeightSet::from_array([0.0; Self::LEN]).with(WeightField::WeY, 1.0)
    }

    pub fn to_array(&self) -> [f64; Self::LEN] {
        [
            self.w0_ls,
            self.w0_lf,
            self.w0_bd,
            self.wa_ls,
            self.wa_lf,
            self.we_ls,
            self.we_lf,
            self.we_bd,
            self.w_ls_bd,
            self.w_lf_bd,
            self.w0_y,
            self.w_ls_y,
            self.w_lf_y,
            self.w_bd_y,
            self.we_y,
        ]
    }

    pub fn from_array(a: [f64; Self::LEN]) -> Self {
        WeightSet {
            w0_ls: a[0],
            w0_lf: a[1],
            w0_bd: a[2],
            wa_ls: a[3],
            wa_lf: a[4],
            we_ls: a[5],
            we_lf: a[6],
            we_bd: a[7],
            w_ls_bd: a[8],
            w_lf_bd: a[9],
            w0_y: a[10],
            w_ls_y: a[11],
            w_lf_y: a[12],
            w_bd_y: a[13],
            we_y: a[14],
        }
    }

    pub fn get(&self, field: WeightField) -> f64 {
        self.to_array()[field as usize]
    }

    pub fn set(&mut self, field: WeightField, value: f64) {
        let mut a = self.to_array();
        a[field as usize] = value;
        *self = WeightSet::from_array(a);
    }

    pub fn with(mut self, field: WeightField, value: f64) -> Self {
        self.set(field, value);
        self
    }

    /// Clamps every coordinate into its feasible interval.
    pub fn project(&mut self) {
        let mut a = self.to_array();
        for field in WeightField::ALL {
            let (lo, hi) = field.bounds();
            let v = &mut a[field as usize];
            *v = v.max(lo).min(hi);
        }
        *self = WeightSet::from_array(a);
    }

    pub fn projected(mut self) -> Self {
        self.project();
        self
    }

    pub fn validate(&self) -> Result<()> {
        for field in WeightField::ALL {
            let v = self.get(field);
            if !v.is_finite() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "weight {} is not finite",
                    field.name()
                )));
            }
            let (lo, hi) = field.bounds();
            if v < lo || v > hi {
                return Err(Error::InvalidArgument(alloc::format!(
                    "weight {} = {v} outside [{lo}, {hi}]",
                    field.name()
                )));
            }
        }
        Ok(())
    }

    /// Mean of `log(y + delta)` given binary parent states.
    pub fn observation_mean(&self, x_ls: bool, x_lf: bool, x_bd: Option<bool>) -> f64 {
        let mut m = self.w0_y;
        if x_ls {
            m += self.w_ls_y;
        }
        if x_lf {
            m += self.w_lf_y;
        }
        if x_bd == Some(true) {
            m += self.w_bd_y;
        }
        m
    }
}

/// Step-size schedule for the weight updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RhoSchedule {
    #[default]
    Constant,
    /// `rho / sqrt(t)` at epoch `t` (1-based).
    InvSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct HyperParams {
    /// Width of the Gaussian relaxation of the exclusivity constraint.
    pub sigma_xor: f64,
    /// Offset inside `log(y + delta)`; also the floor DPM values are clamped to.
    pub delta: f64,
    pub rho: f64,
    pub rho_schedule: RhoSchedule,
    pub batch_size: usize,
    pub e_sweeps_max: usize,
    pub e_tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub conv_window: usize,
    /// Set to 0 to always run `max_epochs`.
    pub conv_rel_tol: f64,
    /// Fixed-order reductions; makes runs bit-reproducible.
    pub deterministic: bool,
    /// Before the first epoch, set `w0_y` and `we_y` to their closed-form
    /// bound maximizers given the initial marginals. Skipped when `rho` is 0.
    pub fit_observation_init: bool,
    /// Also restart each cell's E-step from the LS-only, LF-only and empty
    /// modes and keep the best bound.
    pub e_restarts: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            sigma_xor: 0.1,
            delta: 1e-4,
            rho: 1e-3,
            rho_schedule: RhoSchedule::Constant,
            batch_size: 256,
            e_sweeps_max: 50,
            e_tol: 1e-6,
            max_epochs: 500,
            seed: 0,
            conv_window: 5,
            conv_rel_tol: 1e-6,
            deterministic: true,
            fit_observation_init: true,
            e_restarts: false,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(alloc::string::String::from(msg)));
        if !(self.sigma_xor > 0.0 && self.sigma_xor <= 1.0) {
            return bad("sigma_xor must lie in (0, 1]");
        }
        if !(self.delta > 0.0 && self.delta <= 0.01) {
            return bad("delta must lie in (0, 0.01]");
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad("rho must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.e_sweeps_max == 0 {
            return bad("e_sweeps_max must be positive");
        }
        if !(self.e_tol > 0.0) {
            return bad("e_tol must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.conv_window < 2 {
            return bad("conv_window must be at least 2");
        }
        if !(self.conv_rel_tol >= 0.0) {
            return bad("conv_rel_tol must be non-negative");
        }
        Ok(())
    }

    /// Learning rate at 1-based epoch `t`.
    pub fn rho_at(&self, t: usize) -> f64 {
        match self.rho_schedule {
            RhoSchedule::Constant => self.rho,
            RhoSchedule::InvSqrt => self.rho / math::sqrt(t.max(1) as f64),
        }
    }
}

/// One grid cell's observation and priors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationRecord {
    pub row: usize,
    pub col: usize,
    /// Damage-proxy value, clamped into `[delta, 1]`.
    pub y: f64,
    pub alpha_ls: f64,
    pub alpha_lf: f64,
    pub has_building: bool,
    pub valid: bool,
}

impl LocationRecord {
    /// Builds a valid record, clamping `y` into `[delta, 1]` and the priors
    /// into `[0, 1]`. Non-finite inputs yield an invalid record.
    pub fn new(
        row: usize,
        col: usize,
        y: f64,
        alpha_ls: f64,
        alpha_lf: f64,
        has_building: bool,
        delta: f64,
    ) -> Self {
        let valid = y.is_finite() && alpha_ls.is_finite() && alpha_lf.is_finite();
        if !valid {
            return LocationRecord::invalid(row, col);
        }
        LocationRecord {
            row,
            col,
            y: y.max(delta).min(1.0),
            alpha_ls: alpha_ls.clamp(0.0, 1.0),
            alpha_lf: alpha_lf.clamp(0.0, 1.0),
            has_building,
            valid: true,
        }
    }

    pub fn invalid(row: usize, col: usize) -> Self {
        LocationRecord {
            row,
            col,
            y: f64::NAN,
            alpha_ls: f64::NAN,
            alpha_lf: f64::NAN,
            has_building: false,
            valid: false,
        }
    }

    pub(crate) fn ensure_valid(&self) -> Result<()> {
        if self.valid {
            Ok(())
        } else {
            Err(Error::InvalidRecord {
                row: self.row,
                col: self.col,
            })
        }
    }
}

/// Log-odds of a latent node given its noise draw and parent states.
pub fn latent_logit(bias_w: f64, noise_w: f64, noise_value: f64, parents: &[(f64, f64)]) -> f64 {
    noise_w * noise_value + bias_w + parents.iter().map(|(w, x)| w * x).sum::<f64>()
}

/// Bernoulli probability of `state` under the given log-odds.
pub fn latent_activation_prob(logit: f64, state: bool) -> f64 {
    let p = math::sigmoid(logit);
    if state {
        p
    } else {
        1.0 - p
    }
}

/// Log-density of a damage-proxy value given binary parent states.
///
/// `log(y + delta)` is normal with mean `w0_y + sum w_iy x_i` and standard
/// deviation `we_y`; the `-log(y + delta)` Jacobian is included. With
/// `truncated`, the density is renormalized to `log(y + delta) <= log(1 + delta)`.
/// Pass `x_bd = None` for cells without a building.
pub fn dpm_log_density(
    y: f64,
    x_ls: bool,
    x_lf: bool,
    x_bd: Option<bool>,
    w: &WeightSet,
    delta: f64,
    truncated: bool,
) -> Result<f64> {
    if !(y >= delta && y <= 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "dpm value {y} outside [{delta}, 1]"
        )));
    }
    let mean = w.observation_mean(x_ls, x_lf, x_bd);
    let t = math::ln(y + delta);
    let z = (t - mean) / w.we_y;
    let mut lp = math::norm_log_pdf(z) - math::ln(w.we_y) - t;
    if truncated {
        lp -= math::norm_log_cdf((math::ln_1p(delta) - mean) / w.we_y);
    }
    Ok(lp)
}

/// Log of the Gaussian-relaxed exclusivity potential `p(u | x_ls, x_lf)`.
pub fn xor_log_potential(u: f64, x_ls: bool, x_lf: bool, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let prod = if x_ls && x_lf { 1.0 } else { 0.0 };
    let r = u - prod;
    Ok(-xor_norm_const(sigma) - r * r / (2.0 * sigma * sigma))
}

/// `log(sqrt(2 pi) sigma)`.
pub(crate) fn xor_norm_const(sigma: f64) -> f64 {
    0.5 * math::LN_2PI + math::ln(sigma)
}

/// Source of a graph edge: a latent node or the prior raster feeding one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSource {
    Node(NodeId),
    Prior(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: EdgeSource,
    pub to: NodeId,
}

/// Materialized per-cell graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalGraph {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<Edge>,
}

impl LocalGraph {
    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains(&node)
    }

    /// Latent parents of `node`, in edge order.
    pub fn parents(&self, node: NodeId) -> Vec<NodeId> {
        self.edges
            .iter()
            .filter(|e| e.to == node)
            .filter_map(|e| match e.from {
                EdgeSource::Node(n) => Some(n),
                EdgeSource::Prior(_) => None,
            })
            .collect()
    }
}

pub fn build_location_graph(rec: &LocationRecord) -> Result<LocalGraph> {
    use NodeId::*;
    rec.ensure_valid()?;
    let mut nodes = alloc::vec![Landslide, Liquefaction, Observation, Exclusivity, Bias];
    let edge = |from, to| Edge { from, to };
    let mut edges = alloc::vec![
        edge(EdgeSource::Prior(Landslide), Landslide),
        edge(EdgeSource::Prior(Liquefaction), Liquefaction),
        edge(EdgeSource::Node(Landslide), Observation),
        edge(EdgeSource::Node(Liquefaction), Observation),
        edge(EdgeSource::Node(Landslide), Exclusivity),
        edge(EdgeSource::Node(Liquefaction), Exclusivity),
    ];
    if rec.has_building {
        nodes.insert(2, BuildingDamage);
        edges.extend([
            edge(EdgeSource::Node(Landslide), BuildingDamage),
            edge(EdgeSource::Node(Liquefaction), BuildingDamage),
            edge(EdgeSource::Node(BuildingDamage), Observation),
        ]);
    }
    Ok(LocalGraph { nodes, edges })
}
