//! Optimizer step machines.
//!
//! The induced-metric steps follow the same per-step recipe for both
//! embeddings: raise the gradient with γ⁻¹, form the metric term
//! `s = ξ gᵀγ⁻¹g`, smooth it with a bias-corrected EMA, turn it into a scalar
//! rate factor `r`, and scale the bias-corrected momentum by `η r`.
//! Weight decay is decoupled and shrinks θ by `λθ` every step.
//!
//! Baselines (SGD with EMA momentum, RMSprop, Adam, AdamW) share the state
//! type so that a run can swap optimizers without touching the harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_inverse_metric, InverseMetric};
use crate::numcore::{dot, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    #[serde(alias = "rmsprop")]
    RmsProp,
    Adam,
    #[serde(alias = "adamw")]
    AdamW,
    /// Identity embedding, Euclidean γ.
    ImSgd,
    /// Log-loss embedding, Euclidean γ.
    ImLogSgd,
    /// Identity embedding, γ implied by RMSprop.
    ImRms,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] = [
        OptimizerKind::Sgd,
        OptimizerKind::RmsProp,
        OptimizerKind::Adam,
        OptimizerKind::AdamW,
        OptimizerKind::ImSgd,
        OptimizerKind::ImLogSgd,
        OptimizerKind::ImRms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rms-prop",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adam-w",
            OptimizerKind::ImSgd => "im-sgd",
            OptimizerKind::ImLogSgd => "im-log-sgd",
            OptimizerKind::ImRms => "im-rms",
        }
    }

    /// Whether the kind carries the metric hyperparameters ξ and β.
    pub fn is_induced(self) -> bool {
        matches!(
            self,
            OptimizerKind::ImSgd | OptimizerKind::ImLogSgd | OptimizerKind::ImRms
        )
    }

    pub fn uses_log_loss(self) -> bool {
        self == OptimizerKind::ImLogSgd
    }

    fn needs_second_moment(self) -> bool {
        matches!(
            self,
            OptimizerKind::RmsProp | OptimizerKind::Adam | OptimizerKind::AdamW | OptimizerKind::ImRms
        )
    }

    pub fn valid_names() -> String {
        Self::ALL.map(|k| k.name()).join(", ")
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        let found = Self::ALL.into_iter().find(|k| {
            k.name() == key || k.name().replace('-', "") == key.replace(['-', '_'], "")
        });
        found.ok_or_else(|| {
            Error::invalid(
                "optimizer",
                format!("unknown optimizer `{s}`; valid kinds: {}", Self::valid_names()),
            )
        })
    }
}

/// Which γ⁻¹ the induced-metric steps use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaMode {
    Identity,
    RmsImplied,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    /// Learning rate η.
    pub eta: f64,
    /// Momentum EMA coefficient μ (Adam's β₁ for the Adam family).
    pub mu: f64,
    /// Metric coefficient ξ.
    pub xi: f64,
    /// EMA decay of the metric term.
    pub beta: f64,
    /// Decoupled weight decay λ.
    pub lambda: f64,
    /// Second-moment decay for RMS-style preconditioning.
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta: 1e-2,
            mu: 0.9,
            xi: 1.0,
            beta: 1.0,
            lambda: 0.0,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl HyperParams {
    /// Defaults with ξ = 1/N for an N-parameter problem.
    pub fn for_dimension(n: usize) -> Self {
        Self {
            xi: 1.0 / n.max(1) as f64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn check(field: &'static str, v: f64, ok: bool, range: &str) -> Result<()> {
            if v.is_finite() && ok {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("{v} is outside {range}")))
            }
        }
        check("eta", self.eta, self.eta > 0.0, "(0, inf)")?;
        check("mu", self.mu, (0.0..1.0).contains(&self.mu), "[0, 1)")?;
        check("xi", self.xi, self.xi >= 0.0, "[0, inf)")?;
        check("beta", self.beta, (0.0..=1.0).contains(&self.beta), "[0, 1]")?;
        check("lambda", self.lambda, self.lambda >= 0.0, "[0, inf)")?;
        check("beta2", self.beta2, (0.0..1.0).contains(&self.beta2), "[0, 1)")?;
        check("epsilon", self.epsilon, self.epsilon > 0.0, "(0, inf)")?;
        Ok(())
    }
}

/// Serialized as a flat `{kind, eta, mu, xi, beta, lambda, beta2, epsilon}`
/// object. Unknown keys are rejected; missing hyperparameters take the
/// [`HyperParams::default`] values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OptimizerConfigWire", into = "OptimizerConfigWire")]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub hyper: HyperParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerConfigWire {
    kind: OptimizerKind,
    #[serde(default = "d::eta")]
    eta: f64,
    #[serde(default = "d::mu")]
    mu: f64,
    #[serde(default = "d::xi")]
    xi: f64,
    #[serde(default = "d::beta")]
    beta: f64,
    #[serde(default = "d::lambda")]
    lambda: f64,
    #[serde(default = "d::beta2")]
    beta2: f64,
    #[serde(default = "d::epsilon")]
    epsilon: f64,
}

mod d {
    use super::HyperParams;
    pub fn eta() -> f64 {
        HyperParams::default().eta
    }
    pub fn mu() -> f64 {
        HyperParams::default().mu
    }
    pub fn xi() -> f64 {
        HyperParams::default().xi
    }
    pub fn beta() -> f64 {
        HyperParams::default().beta
    }
    pub fn lambda() -> f64 {
        HyperParams::default().lambda
    }
    pub fn beta2() -> f64 {
        HyperParams::default().beta2
    }
    pub fn epsilon() -> f64 {
        HyperParams::default().epsilon
    }
}

impl TryFrom<OptimizerConfigWire> for OptimizerConfig {
    type Error = Error;

    fn try_from(w: OptimizerConfigWire) -> Result<Self> {
        let hyper = HyperParams {
            eta: w.eta,
            mu: w.mu,
            xi: w.xi,
            beta: w.beta,
            lambda: w.lambda,
            beta2: w.beta2,
            epsilon: w.epsilon,
        };
        hyper.validate()?;
        Ok(Self { kind: w.kind, hyper })
    }
}

impl From<OptimizerConfig> for OptimizerConfigWire {
    fn from(c: OptimizerConfig) -> Self {
        let h = c.hyper;
        Self {
            kind: c.kind,
            eta: h.eta,
            mu: h.mu,
            xi: h.xi,
            beta: h.beta,
            lambda: h.lambda,
            beta2: h.beta2,
            epsilon: h.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    /// Momentum EMA.
    pub m: ParamVector,
    /// Scalar EMA of the metric term.
    pub v: f64,
    /// Per-parameter second-moment EMA, when the kind needs one.
    pub rms: Option<ParamVector>,
}

impl OptimizerState {
    pub fn new(n: usize, with_rms: bool) -> Self {
        Self {
            t: 0,
            m: ParamVector::zeros(n),
            v: 0.0,
            rms: with_rms.then(|| ParamVector::zeros(n)),
        }
    }

    pub fn for_kind(kind: OptimizerKind, n: usize) -> Self {
        Self::new(n, kind.needs_second_moment())
    }
}

/// Per-step diagnostics of the induced-metric steps. Baselines report
/// `s_t = v_hat = 0` and `r_t = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub s_t: f64,
    pub v_hat: f64,
    pub r_t: f64,
    pub loss: f64,
}

fn powi(base: f64, t: u64) -> f64 {
    base.powi(t.min(i32::MAX as u64) as i32)
}

/// `θ - (η r) m̂ - λθ`, shared by every optimizer so that limits coincide
/// bit for bit.
fn descend(theta: &ParamVector, direction: &ParamVector, rate: f64, lambda: f64) -> Result<ParamVector> {
    let next = theta.zip_map(direction, |th, d| th - rate * d - lambda * th)?;
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::NonFinite("parameters after step"))
    }
}

fn momentum_ema(m: &ParamVector, g: &ParamVector, mu: f64) -> Result<ParamVector> {
    m.zip_map(g, |mi, gi| mu * mi + (1.0 - mu) * gi)
}

/// Updates the second-moment EMA in `state` with `g` and returns the implied
/// diagonal inverse metric `1 / (sqrt(r̂) + ε)`.
///
/// `state.t` must already count the current step (t ≥ 1).
pub fn rms_implied_inverse_metric(
    state: &mut OptimizerState,
    g: &ParamVector,
    h: &HyperParams,
) -> Result<InverseMetric> {
    if state.t == 0 {
        return Err(Error::Usage(
            "second-moment bias correction needs t >= 1".into(),
        ));
    }
    let rms = state
        .rms
        .as_ref()
        .ok_or_else(|| Error::Usage("optimizer state has no second-moment buffer".into()))?;
    let beta2 = h.beta2;
    let next = rms.zip_map(g, |r, gi| beta2 * r + (1.0 - beta2) * gi * gi)?;
    let correction = 1.0 - powi(beta2, state.t);
    let diag: Vec<f64> = next
        .iter()
        .map(|&r| 1.0 / ((r / correction).sqrt() + h.epsilon))
        .collect();
    state.rms = Some(next);
    InverseMetric::diagonal(ParamVector::from_raw(diag))
}

fn check_inputs(state: &OptimizerState, theta: &ParamVector, g: &ParamVector) -> Result<()> {
    Error::check_len(theta.len(), g.len())?;
    Error::check_len(theta.len(), state.m.len())?;
    if let Some(rms) = &state.rms {
        Error::check_len(theta.len(), rms.len())?;
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum RateRule {
    Flat,
    Log,
}

fn induced_step(
    state: &mut OptimizerState,
    theta: &ParamVector,
    g: &ParamVector,
    loss: f64,
    h: &HyperParams,
    mode: GammaMode,
    rule: RateRule,
) -> Result<(ParamVector, StepTrace)> {
    check_inputs(state, theta, g)?;
    if let RateRule::Log = rule {
        if !(loss > 0.0 && loss.is_finite()) {
            return Err(Error::Domain(format!(
                "log-loss step needs a positive finite loss, got {loss}"
            )));
        }
    }

    // Work on a copy so a failed step leaves the caller's state untouched.
    let mut next = state.clone();
    next.t += 1;
    let t = next.t;
    let gamma_inv = match mode {
        GammaMode::Identity => InverseMetric::Euclidean,
        GammaMode::RmsImplied => rms_implied_inverse_metric(&mut next, g, h)?,
    };
    let raised = apply_inverse_metric(&gamma_inv, g)?;
    let s_t = h.xi * dot(g, &raised)?;
    next.v = h.beta * state.v + (1.0 - h.beta) * s_t;
    let v_hat = if h.beta == 1.0 {
        s_t
    } else {
        next.v / (1.0 - powi(h.beta, t))
    };
    let r_t = match rule {
        RateRule::Flat => 1.0 / (1.0 + v_hat.abs()),
        RateRule::Log => loss / (loss * loss + v_hat.abs()),
    };
    next.m = momentum_ema(&state.m, g, h.mu)?;
    let unbiased = next.m.scale(1.0 / (1.0 - powi(h.mu, t)));
    let m_hat = apply_inverse_metric(&gamma_inv, &unbiased)?;
    let theta_next = descend(theta, &m_hat, h.eta * r_t, h.lambda)?;

    *state = next;
    Ok((
        theta_next,
        StepTrace {
            s_t,
            v_hat,
            r_t,
            loss,
        },
    ))
}

/// One step of the identity-embedding optimizer.
pub fn step_alg1(
    state: &mut OptimizerState,
    theta: &ParamVector,
    g: &ParamVector,
    loss: f64,
    h: &HyperParams,
    mode: GammaMode,
) -> Result<(ParamVector, StepTrace)> {
    induced_step(state, theta, g, loss, h, mode, RateRule::Flat)
}

/// One step of the log-loss-embedding optimizer; `loss` must be positive.
pub fn step_alg2(
    state: &mut OptimizerState,
    theta: &ParamVector,
    g: &ParamVector,
    loss: f64,
    h: &HyperParams,
    mode: GammaMode,
) -> Result<(ParamVector, StepTrace)> {
    induced_step(state, theta, g, loss, h, mode, RateRule::Log)
}

/// One step of a reference optimizer.
///
/// * `Sgd`: EMA momentum with bias correction, decoupled raw decay `λθ`.
/// * `RmsProp`: `g / (sqrt(v) + ε)` without bias correction or momentum,
///   decoupled raw decay.
/// * `Adam`: bias-corrected moments, L2 decay folded into the gradient.
/// * `AdamW`: bias-corrected moments, decoupled decay scaled by η.
pub fn step_baseline(
    kind: OptimizerKind,
    state: &mut OptimizerState,
    theta: &ParamVector,
    g: &ParamVector,
    h: &HyperParams,
) -> Result<ParamVector> {
    if kind.is_induced() {
        return Err(Error::Usage(format!("{kind} is not a baseline optimizer")));
    }
    if kind.needs_second_moment() != state.rms.is_some() {
        return Err(Error::Usage(format!(
            "optimizer state does not match kind {kind}"
        )));
    }
    check_inputs(state, theta, g)?;
    let t = state.t + 1;

    let (theta_next, m, rms) = match kind {
        OptimizerKind::Sgd => {
            let m = momentum_ema(&state.m, g, h.mu)?;
            let m_hat = m.scale(1.0 / (1.0 - powi(h.mu, t)));
            (descend(theta, &m_hat, h.eta, h.lambda)?, m, None)
        }
        OptimizerKind::RmsProp => {
            let rms = state.rms.as_ref().expect("checked above");
            let v = rms.zip_map(g, |r, gi| h.beta2 * r + (1.0 - h.beta2) * gi * gi)?;
            let dir = g.zip_map(&v, |gi, vi| gi / (vi.sqrt() + h.epsilon))?;
            (descend(theta, &dir, h.eta, h.lambda)?, state.m.clone(), Some(v))
        }
        OptimizerKind::Adam | OptimizerKind::AdamW => {
            let (g_eff, decay) = if kind == OptimizerKind::Adam {
                (g.zip_map(theta, |gi, th| gi + h.lambda * th)?, 0.0)
            } else {
                (g.clone(), h.eta * h.lambda)
            };
            let rms = state.rms.as_ref().expect("checked above");
            let m = momentum_ema(&state.m, &g_eff, h.mu)?;
            let v = rms.zip_map(&g_eff, |r, gi| h.beta2 * r + (1.0 - h.beta2) * gi * gi)?;
            let c1 = 1.0 - powi(h.mu, t);
            let c2 = 1.0 - powi(h.beta2, t);
            let dir = m.zip_map(&v, |mi, vi| (mi / c1) / ((vi / c2).sqrt() + h.epsilon))?;
            (descend(theta, &dir, h.eta, decay)?, m, Some(v))
        }
        _ => unreachable!(),
    };

    state.t = t;
    state.m = m;
    if rms.is_some() {
        state.rms = rms;
    }
    Ok(theta_next)
}

/// The `(t, r_t)` series of a run, with t starting at 1.
pub fn effective_lr_trace(run: &[StepTrace]) -> Vec<(u64, f64)> {
    run.iter()
        .enumerate()
        .map(|(i, s)| (i as u64 + 1, s.r_t))
        .collect()
}

/// An optimizer kind bound to its hyperparameters and state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, n: usize) -> Result<Self> {
        config.hyper.validate()?;
        Ok(Self {
            state: OptimizerState::for_kind(config.kind, n),
            config,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn step(
        &mut self,
        theta: &ParamVector,
        g: &ParamVector,
        loss: f64,
    ) -> Result<(ParamVector, StepTrace)> {
        let h = &self.config.hyper;
        match self.config.kind {
            OptimizerKind::ImSgd => step_alg1(&mut self.state, theta, g, loss, h, GammaMode::Identity),
            OptimizerKind::ImRms => {
                step_alg1(&mut self.state, theta, g, loss, h, GammaMode::RmsImplied)
            }
            OptimizerKind::ImLogSgd => {
                step_alg2(&mut self.state, theta, g, loss, h, GammaMode::Identity)
            }
            kind => {
                let next = step_baseline(kind, &mut self.state, theta, g, h)?;
                Ok((
                    next,
                    StepTrace {
                        s_t: 0.0,
                        v_hat: 0.0,
                        r_t: 1.0,
                        loss,
                    },
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngStream;
    use rand::Rng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn hp(eta: f64, mu: f64, xi: f64, beta: f64, lambda: f64) -> HyperParams {
        HyperParams {
            eta,
            mu,
            xi,
            beta,
            lambda,
            ..HyperParams::default()
        }
    }

    #[test]
    fn stationary_point_leaves_theta() {
        let h = hp(0.1, 0.9, 0.5, 0.9, 0.0);
        let theta = pv(&[1.0, -2.0]);
        let g = ParamVector::zeros(2);
        let mut s = OptimizerState::new(2, false);
        let (next, trace) = step_alg1(&mut s, &theta, &g, 3.0, &h, GammaMode::Identity).unwrap();
        assert_eq!(next, theta);
        assert_eq!(trace.r_t, 1.0);

        let mut s = OptimizerState::new(2, false);
        let (next, _) = step_alg2(&mut s, &theta, &g, 3.0, &h, GammaMode::Identity).unwrap();
        assert_eq!(next, theta);
    }

    #[test]
    fn alg1_single_step_hand_trace() {
        let h = hp(0.1, 0.9, 0.25, 0.9, 0.0);
        let mut s = OptimizerState::new(2, false);
        let (theta, tr) =
            step_alg1(&mut s, &pv(&[1.0, 0.0]), &pv(&[2.0, 0.0]), 1.0, &h, GammaMode::Identity)
                .unwrap();
        assert!((tr.s_t - 1.0).abs() < 1e-15);
        assert!((tr.v_hat - 1.0).abs() < 1e-15);
        assert!((tr.r_t - 0.5).abs() < 1e-15);
        assert!((theta[0] - 0.9).abs() < 1e-15);
        assert_eq!(theta[1], 0.0);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn alg2_single_step_hand_trace() {
        let h = hp(1.0, 0.0, 1.0, 1.0, 0.0);
        let mut s = OptimizerState::new(1, false);
        let (theta, tr) =
            step_alg2(&mut s, &pv(&[0.0]), &pv(&[1.0]), 1.0, &h, GammaMode::Identity).unwrap();
        assert_eq!(tr.r_t, 0.5);
        assert_eq!(theta[0], -0.5);
    }

    #[test]
    fn alg2_rejects_nonpositive_loss_without_mutating() {
        let h = hp(1.0, 0.0, 1.0, 1.0, 0.0);
        let mut s = OptimizerState::new(1, false);
        let before = s.clone();
        let err = step_alg2(&mut s, &pv(&[0.0]), &pv(&[1.0]), 0.0, &h, GammaMode::Identity);
        assert!(matches!(err, Err(Error::Domain(_))));
        assert_eq!(s, before);
    }

    #[test]
    fn alg2_scale_invariance() {
        let h = hp(0.3, 0.0, 0.7, 1.0, 0.0);
        let theta = pv(&[0.2, -0.4]);
        let g = pv(&[1.3, 0.4]);
        let c = 1e3;
        let mut a = OptimizerState::new(2, false);
        let mut b = OptimizerState::new(2, false);
        let (ta, _) = step_alg2(&mut a, &theta, &g, 0.8, &h, GammaMode::Identity).unwrap();
        let (tb, _) =
            step_alg2(&mut b, &theta, &g.scale(c), 0.8 * c, &h, GammaMode::Identity).unwrap();
        for i in 0..2 {
            assert!((ta[i] - tb[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn bias_correction_exact_at_first_step() {
        let h = hp(1.0, 0.37, 2.0, 0.61, 0.0);
        let g = pv(&[0.3, -1.1, 2.5]);
        let mut s = OptimizerState::new(3, false);
        let (theta, tr) =
            step_alg1(&mut s, &ParamVector::zeros(3), &g, 1.0, &h, GammaMode::Identity).unwrap();
        let s1 = 2.0 * dot(&g, &g).unwrap();
        assert!((tr.v_hat - s1).abs() <= 1e-14 * s1);
        // θ₁ = -η r m̂ with m̂ = g
        for i in 0..3 {
            let expected = -tr.r_t * g[i];
            assert!((theta[i] - expected).abs() <= 1e-15 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn rms_metric_examples() {
        let h = HyperParams {
            beta2: 0.999,
            epsilon: 1e-8,
            ..HyperParams::default()
        };
        let mut s = OptimizerState::new(1, true);
        s.t = 1;
        let gi = rms_implied_inverse_metric(&mut s, &pv(&[2.0]), &h).unwrap();
        let InverseMetric::DiagonalScaled(d) = gi else { panic!() };
        assert!((d[0] - 1.0 / (2.0 + 1e-8)).abs() < 1e-15);

        let mut s = OptimizerState::new(2, true);
        s.t = 1;
        let gi = rms_implied_inverse_metric(&mut s, &ParamVector::zeros(2), &h).unwrap();
        let InverseMetric::DiagonalScaled(d) = gi else { panic!() };
        assert_eq!(d[0], 1e8);

        // constant gradient: EMA fixed point is g², so γ⁻¹ → 1/(|g| + ε)
        let g = pv(&[3.0, -0.5]);
        let mut s = OptimizerState::new(2, true);
        let mut last = None;
        for _ in 0..50 {
            s.t += 1;
            last = Some(rms_implied_inverse_metric(&mut s, &g, &h).unwrap());
        }
        let Some(InverseMetric::DiagonalScaled(d)) = last else { panic!() };
        assert!((d[0] - 1.0 / (3.0 + 1e-8)).abs() < 1e-12);
        assert!((d[1] - 1.0 / (0.5 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn rms_metric_requires_buffer_and_step() {
        let h = HyperParams::default();
        let mut s = OptimizerState::new(1, false);
        s.t = 1;
        assert!(matches!(
            rms_implied_inverse_metric(&mut s, &pv(&[1.0]), &h),
            Err(Error::Usage(_))
        ));
        let mut s = OptimizerState::new(1, true);
        assert!(rms_implied_inverse_metric(&mut s, &pv(&[1.0]), &h).is_err());
    }

    #[test]
    fn adam_examples() {
        let h = hp(0.1, 0.9, 0.0, 1.0, 0.0);
        let mut s = OptimizerState::new(1, true);
        let theta = pv(&[0.5]);
        let same = step_baseline(OptimizerKind::Adam, &mut s, &theta, &ParamVector::zeros(1), &h)
            .unwrap();
        assert_eq!(same, theta);

        let mut s = OptimizerState::new(1, true);
        let next = step_baseline(OptimizerKind::Adam, &mut s, &pv(&[0.0]), &pv(&[1.0]), &h).unwrap();
        assert!((next[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adamw_matches_adam_without_decay() {
        let h = hp(0.05, 0.9, 0.0, 1.0, 0.0);
        let mut rng = RngStream::new(3);
        let mut sa = OptimizerState::new(4, true);
        let mut sw = OptimizerState::new(4, true);
        let mut ta = ParamVector::new((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut tw = ta.clone();
        for _ in 0..100 {
            let ga = ta.scale(2.0);
            let gw = tw.scale(2.0);
            ta = step_baseline(OptimizerKind::Adam, &mut sa, &ta, &ga, &h).unwrap();
            tw = step_baseline(OptimizerKind::AdamW, &mut sw, &tw, &gw, &h).unwrap();
            assert_eq!(ta, tw);
        }
    }

    #[test]
    fn baseline_state_mismatch_is_usage_error() {
        let h = HyperParams::default();
        let mut s = OptimizerState::new(1, false);
        let err = step_baseline(OptimizerKind::Adam, &mut s, &pv(&[0.0]), &pv(&[1.0]), &h);
        assert!(matches!(err, Err(Error::Usage(_))));
        let err = step_baseline(OptimizerKind::ImSgd, &mut s, &pv(&[0.0]), &pv(&[1.0]), &h);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn beta_one_uses_instantaneous_metric() {
        let h = hp(0.1, 0.0, 1.0, 1.0, 0.0);
        let mut s = OptimizerState::new(1, false);
        let mut theta = pv(&[2.0]);
        for _ in 0..5 {
            let g = theta.scale(2.0);
            let (next, tr) = step_alg1(&mut s, &theta, &g, 1.0, &h, GammaMode::Identity).unwrap();
            let expected = dot(&g, &g).unwrap();
            assert_eq!(tr.v_hat, expected);
            theta = next;
        }
    }

    #[test]
    fn weight_decay_contracts_geometrically() {
        let lambda = 0.05;
        let theta0 = pv(&[1.0, -3.0]);
        for kind in [OptimizerKind::ImSgd, OptimizerKind::ImLogSgd, OptimizerKind::ImRms, OptimizerKind::Sgd] {
            for (eta, xi, beta, mu) in [(0.1, 1.0, 0.9, 0.9), (2.0, 0.0, 1.0, 0.0)] {
                let cfg = OptimizerConfig { kind, hyper: hp(eta, mu, xi, beta, lambda) };
                let mut opt = Optimizer::new(cfg, 2).unwrap();
                let mut theta = theta0.clone();
                for k in 1..=20 {
                    theta = opt.step(&theta, &ParamVector::zeros(2), 1.0).unwrap().0;
                    let factor = (1.0 - lambda).powi(k);
                    for i in 0..2 {
                        assert!((theta[i] - theta0[i] * factor).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn flat_trace_rates_in_unit_interval() {
        let h = hp(0.05, 0.9, 0.5, 0.8, 0.0);
        let mut s = OptimizerState::new(2, false);
        let mut theta = pv(&[3.0, -1.0]);
        let mut traces = Vec::new();
        for _ in 0..50 {
            let g = pv(&[2.0 * theta[0], 20.0 * theta[1]]);
            let (next, tr) = step_alg1(&mut s, &theta, &g, 1.0, &h, GammaMode::Identity).unwrap();
            traces.push(tr);
            theta = next;
        }
        let series = effective_lr_trace(&traces);
        assert_eq!(series.len(), 50);
        assert_eq!(series[0].0, 1);
        assert!(series.iter().all(|&(_, r)| r > 0.0 && r <= 1.0));
        assert!(effective_lr_trace(&[]).is_empty());
    }

    #[test]
    fn constant_gradient_gives_constant_rate() {
        // With constant s the bias-corrected EMA equals s at every t.
        let h = hp(0.01, 0.5, 0.3, 0.7, 0.0);
        let mut s = OptimizerState::new(2, false);
        let g = pv(&[1.0, 2.0]);
        let mut theta = ParamVector::zeros(2);
        let mut rates = Vec::new();
        for _ in 0..30 {
            let (next, tr) = step_alg2(&mut s, &theta, &g, 0.5, &h, GammaMode::Identity).unwrap();
            rates.push(tr.r_t);
            theta = next;
        }
        let expected = 0.5 / (0.25 + 0.3 * 5.0);
        assert!(rates.iter().all(|r| (r - expected).abs() < 1e-12), "{rates:?}");
    }

    #[test]
    fn hyperparam_validation_names_field() {
        let mut h = HyperParams {
            mu: 1.0,
            ..HyperParams::default()
        };
        match h.validate() {
            Err(Error::InvalidField { field, .. }) => assert_eq!(field, "mu"),
            other => panic!("{other:?}"),
        }
        h = HyperParams { beta: 1.5, ..HyperParams::default() };
        assert!(h.validate().is_err());
        h = HyperParams { epsilon: 0.0, ..HyperParams::default() };
        assert!(h.validate().is_err());
        assert!(HyperParams::default().validate().is_ok());
        assert_eq!(HyperParams::for_dimension(4).xi, 0.25);
    }

    #[test]
    fn config_json_roundtrip_and_strictness() {
        let json = r#"{"kind":"im-rms","eta":0.01,"mu":0.9,"xi":0.5,"beta":0.9,"lambda":0.0,"beta2":0.999,"epsilon":1e-8}"#;
        let cfg: OptimizerConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.kind, OptimizerKind::ImRms);
        assert_eq!(cfg.hyper.xi, 0.5);
        let back: OptimizerConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);

        let unknown = r#"{"kind":"sgd","eta":0.1,"nesterov":true}"#;
        assert!(serde_json::from_str::<OptimizerConfig>(unknown).is_err());
        let bad = r#"{"kind":"sgd","eta":-1}"#;
        let err = serde_json::from_str::<OptimizerConfig>(bad).unwrap_err();
        assert!(err.to_string().contains("eta"), "{err}");
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("im-sgd".parse::<OptimizerKind>().unwrap(), OptimizerKind::ImSgd);
        assert_eq!("adamw".parse::<OptimizerKind>().unwrap(), OptimizerKind::AdamW);
        assert_eq!("rmsprop".parse::<OptimizerKind>().unwrap(), OptimizerKind::RmsProp);
        let err = "lion".parse::<OptimizerKind>().unwrap_err();
        assert!(err.to_string().contains("im-log-sgd"));
    }
}
