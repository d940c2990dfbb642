//! One-step update rules: plain SGD, sharpness-aware minimization (SAM) and
//! gradient norm penalty (GNP).
//!
//! Every rule takes the current parameters and an [`Objective`] bound to the
//! mini-batch, and returns new parameters. They never mutate their input.

use serde::{Deserialize, Serialize};

use crate::autodiff::{check_len, Objective};
use crate::vecops::{all_finite, axpy, norm, scaled};
use crate::{Error, FlatVector, Result};

/// Below this gradient norm the SAM ascent and the GNP penalty are skipped.
pub const DEGENERATE_GRAD_NORM: f64 = 1e-12;

pub const DEFAULT_RHO: f64 = 0.05;

/// Base of the default GNP finite-difference step, scaled by `1 + ‖w‖₂`.
pub const DEFAULT_FD_SCALE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Sam,
    Gnp,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "SGD",
            OptimizerKind::Sam => "SAM",
            OptimizerKind::Gnp => "GNP",
        }
    }
}

/// How GNP obtains the Hessian-gradient product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnpMode {
    /// One exact Hessian-vector product.
    #[default]
    Exact,
    /// Forward difference of gradients along `g/‖g‖`.
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Learning rate.
    pub alpha: f64,
    /// Weight of the SAM norm regularizer or of the GNP gradient-norm penalty.
    pub lambda: f64,
    /// SAM neighborhood radius.
    pub rho: f64,
    pub gnp_mode: GnpMode,
    /// Absolute GNP finite-difference step; `None` uses
    /// `DEFAULT_FD_SCALE · (1 + ‖w‖₂)`.
    pub fd_step: Option<f64>,
    /// Use `λ·w` (the gradient of `λ/2·‖w‖²`) instead of `λ·w/‖w‖₂` for the
    /// SAM regularizer.
    pub sam_l2_squared: bool,
    /// Display label; derived from kind and hyperparameters when absent.
    pub label: Option<String>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::sgd(0.01)
    }
}

impl OptimizerConfig {
    pub fn sgd(alpha: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            alpha,
            lambda: 0.0,
            rho: DEFAULT_RHO,
            gnp_mode: GnpMode::Exact,
            fd_step: None,
            sam_l2_squared: false,
            label: None,
        }
    }

    pub fn sam(alpha: f64, lambda: f64, rho: f64) -> Self {
        Self {
            kind: OptimizerKind::Sam,
            lambda,
            rho,
            ..Self::sgd(alpha)
        }
    }

    pub fn gnp(alpha: f64, lambda: f64) -> Self {
        Self {
            kind: OptimizerKind::Gnp,
            lambda,
            ..Self::sgd(alpha)
        }
    }

    /// SGD, SAM and GNP at `α ∈ {0.01, 0.001}`, with `λ = 0.1` for SAM and GNP.
    pub fn standard_presets() -> Vec<Self> {
        vec![
            Self::sgd(0.01),
            Self::sgd(0.001),
            Self::sam(0.01, 0.1, DEFAULT_RHO),
            Self::sam(0.001, 0.1, DEFAULT_RHO),
            Self::gnp(0.01, 0.1),
            Self::gnp(0.001, 0.1),
        ]
    }

    pub fn label(&self) -> String {
        match &self.label {
            Some(l) => l.clone(),
            None => format!("{}(alpha={})", self.kind.name(), self.alpha),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.alpha));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return bad(format!("rho must be non-negative, got {}", self.rho));
        }
        if let Some(h) = self.fd_step {
            if !(h.is_finite() && h > 0.0) {
                return bad(format!("finite-difference step must be positive, got {h}"));
            }
        }
        if let Some(l) = &self.label {
            if l.is_empty() || l.contains([',', '\n', '"']) {
                return bad(format!("label {l:?} must be non-empty without commas, quotes or newlines"));
            }
        }
        Ok(())
    }
}

/// Result of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub params: FlatVector,
    /// The gradient norm fell below [`DEGENERATE_GRAD_NORM`] and the SAM
    /// ascent or GNP penalty was skipped.
    pub degenerate: bool,
}

fn require_kind(config: &OptimizerConfig, kind: OptimizerKind) -> Result<()> {
    if config.kind != kind {
        return Err(Error::Config(format!(
            "{} step called with a {} configuration",
            kind.name(),
            config.kind.name()
        )));
    }
    Ok(())
}

fn checked(v: FlatVector, what: &str) -> Result<FlatVector> {
    if all_finite(&v) {
        Ok(v)
    } else {
        Err(Error::overflow(what))
    }
}

/// `w - α·direction`
fn descend(params: &[f64], alpha: f64, direction: &[f64], what: &str) -> Result<FlatVector> {
    let mut out = params.to_vec();
    axpy(-alpha, direction, &mut out);
    checked(out, what)
}

/// `w′ = w − α·∇L(w)`
pub fn sgd_step(obj: &impl Objective, params: &[f64], config: &OptimizerConfig) -> Result<StepOutcome> {
    require_kind(config, OptimizerKind::Sgd)?;
    check_len("parameter vector", params.len(), obj.dim())?;
    let g = checked(obj.gradient(params)?, "sgd step: gradient")?;
    Ok(StepOutcome {
        params: descend(params, config.alpha, &g, "sgd step: updated parameters")?,
        degenerate: false,
    })
}

/// Two-stage SAM step.
///
/// `ε̂ = ρ·g/‖g‖₂`, `g_adv = ∇L(w + ε̂)`, then
/// `w′ = w − α·(g_adv + λ·w/‖w‖₂)` (or `+ λ·w` with `sam_l2_squared`).
/// Always evaluates two gradients.
pub fn sam_step(obj: &impl Objective, params: &[f64], config: &OptimizerConfig) -> Result<StepOutcome> {
    require_kind(config, OptimizerKind::Sam)?;
    check_len("parameter vector", params.len(), obj.dim())?;
    let g = checked(obj.gradient(params)?, "sam step: gradient")?;
    let g_norm = norm(&g);
    let degenerate = g_norm < DEGENERATE_GRAD_NORM;

    let perturbed = if degenerate || config.rho == 0.0 {
        params.to_vec()
    } else {
        let mut w = params.to_vec();
        axpy(config.rho / g_norm, &g, &mut w);
        w
    };
    let mut direction = checked(obj.gradient(&perturbed)?, "sam step: ascent gradient")?;

    if config.lambda != 0.0 {
        if config.sam_l2_squared {
            axpy(config.lambda, params, &mut direction);
        } else {
            let w_norm = norm(params);
            // ‖w‖₂ is not differentiable at the origin; use the zero subgradient.
            if w_norm > 0.0 {
                axpy(config.lambda / w_norm, params, &mut direction);
            }
        }
    }
    Ok(StepOutcome {
        params: descend(params, config.alpha, &direction, "sam step: updated parameters")?,
        degenerate,
    })
}

/// Hessian-gradient product along the unit gradient direction `u`.
fn penalty_direction(
    obj: &impl Objective,
    params: &[f64],
    g: &[f64],
    u: &[f64],
    config: &OptimizerConfig,
) -> Result<FlatVector> {
    match config.gnp_mode {
        GnpMode::Exact => obj.hvp(params, u),
        GnpMode::FiniteDifference => {
            let h = config
                .fd_step
                .unwrap_or_else(|| DEFAULT_FD_SCALE * (1.0 + norm(params)));
            let mut shifted = params.to_vec();
            axpy(h, u, &mut shifted);
            let g_shift = obj.gradient(&shifted)?;
            Ok(g_shift.iter().zip(g).map(|(a, b)| (a - b) / h).collect())
        }
    }
}

/// Gradient-norm-penalty step on `L(w) + λ‖∇L(w)‖₂`.
///
/// The penalty gradient is `H·g/‖g‖₂`; exact mode spends one gradient and one
/// Hessian-vector product, finite-difference mode two gradients.
pub fn gnp_step(obj: &impl Objective, params: &[f64], config: &OptimizerConfig) -> Result<StepOutcome> {
    require_kind(config, OptimizerKind::Gnp)?;
    check_len("parameter vector", params.len(), obj.dim())?;
    let g = checked(obj.gradient(params)?, "gnp step: gradient")?;
    let g_norm = norm(&g);
    let degenerate = g_norm < DEGENERATE_GRAD_NORM;

    let mut direction = g.clone();
    if config.lambda != 0.0 && !degenerate {
        let u = scaled(1.0 / g_norm, &g);
        let hu = checked(
            penalty_direction(obj, params, &g, &u, config)?,
            "gnp step: penalty direction",
        )?;
        axpy(config.lambda, &hu, &mut direction);
    }
    Ok(StepOutcome {
        params: descend(params, config.alpha, &direction, "gnp step: updated parameters")?,
        degenerate,
    })
}

/// Dispatches on `config.kind`.
pub fn step(obj: &impl Objective, params: &[f64], config: &OptimizerConfig) -> Result<StepOutcome> {
    match config.kind {
        OptimizerKind::Sgd => sgd_step(obj, params, config),
        OptimizerKind::Sam => sam_step(obj, params, config),
        OptimizerKind::Gnp => gnp_step(obj, params, config),
    }
}
