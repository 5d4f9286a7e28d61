//! Closed-loop stability quantification.
//!
//! The Maximal Lyapunov Exponent is estimated two independent ways:
//!
//! * [`mle_jacobian`] propagates a tangent vector through finite-difference
//!   Jacobians of the map, renormalizing every step (Benettin-style);
//! * [`mle_direct`] evolves a finitely perturbed companion trajectory and
//!   periodically rescales the offset back to its initial size.
//!
//! Both produce the exponential divergence rate per discrete step in
//! natural-log units. [`perturbation_fan`] rolls a bundle of perturbed
//! trajectories for qualitative divergence pictures.
//!
//! Everything here works in STATE space: the closed-loop map composes the
//! environment step with the deterministic policy.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, EnvState};
use crate::error::{Error, Result};
use crate::normalize::ObsNormalizer;
use crate::policy::Policy;

/// A deterministic discrete-time map on a finite-dimensional state.
pub trait DiscreteMap: Sync {
    fn dim(&self) -> usize;

    /// One application of the map. Divergence is signalled by non-finite
    /// entries rather than an error so estimators can report the step.
    fn apply(&self, state: &[f64]) -> Vec<f64>;
}

/// The autonomous dynamics induced by an environment plus a deterministic
/// policy: `F(s) = step(s, policy(normalize(observe(s))))`.
pub struct ClosedLoopMap<'a> {
    pub env: &'a EnvSpec,
    pub policy: &'a Policy,
    pub normalizer: &'a ObsNormalizer,
}

impl DiscreteMap for ClosedLoopMap<'_> {
    fn dim(&self) -> usize {
        self.env.state_dim()
    }

    fn apply(&self, state: &[f64]) -> Vec<f64> {
        let s = EnvState::new(state.to_vec());
        let obs = self.normalizer.normalize(&self.env.observe(&s));
        let action = match self.policy.act_deterministic(&obs) {
            Ok(a) => a,
            Err(_) => return vec![f64::NAN; state.len()],
        };
        match self.env.rk4_step(&s, &action) {
            Ok(next) => next.coords,
            Err(_) => vec![f64::NAN; state.len()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MleMethod {
    Jacobian,
    Direct,
}

impl std::fmt::Display for MleMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MleMethod::Jacobian => write!(f, "jacobian"),
            MleMethod::Direct => write!(f, "direct"),
        }
    }
}

/// A Maximal Lyapunov Exponent estimate (per-step natural-log units).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MleEstimate {
    pub lambda: f64,
    pub steps: usize,
    pub transient: usize,
    pub method: MleMethod,
    pub initial_state: Vec<f64>,
    /// Finite-difference step (jacobian) or perturbation size (direct).
    pub epsilon: f64,
}

/// Trajectory bundle from a single perturbed initial state.
#[derive(Debug, Clone)]
pub struct PerturbationFan {
    pub delta0: f64,
    /// `base[t]` is the unperturbed state after `t` steps.
    pub base: Vec<Vec<f64>>,
    /// `divergences[p][t]` is the state-space distance of perturbed
    /// trajectory `p` from the base at step `t`; saturates to infinity
    /// if the trajectory leaves the finite range.
    pub divergences: Vec<Vec<f64>>,
}

impl PerturbationFan {
    /// Largest divergence across the bundle at step `t`.
    pub fn max_divergence(&self, t: usize) -> f64 {
        self.divergences
            .iter()
            .map(|d| d[t])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn horizon(&self) -> usize {
        self.base.len() - 1
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Column-wise central finite differences of the map at `state`:
/// `J[i][j] = (F(s + eps e_j)[i] - F(s - eps e_j)[i]) / (2 eps)`.
pub fn jacobian_fd<M: DiscreteMap + ?Sized>(
    map: &M,
    state: &[f64],
    eps: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = map.dim();
    debug_assert_eq!(state.len(), n);
    let mut jac = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut plus = state.to_vec();
        plus[j] += eps;
        let mut minus = state.to_vec();
        minus[j] -= eps;
        let fp = map.apply(&plus);
        let fm = map.apply(&minus);
        if fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "jacobian probe along state dimension {j}"
            )));
        }
        for i in 0..n {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * eps);
        }
    }
    Ok(jac)
}

/// MLE via the Jacobian method: iterate the map, push a tangent vector
/// through per-step finite-difference Jacobians, rescale it to unit norm
/// every step, and average the log growth after the transient.
pub fn mle_jacobian<M: DiscreteMap + ?Sized>(
    map: &M,
    initial: &[f64],
    steps: usize,
    transient: usize,
    eps: f64,
) -> Result<MleEstimate> {
    if steps <= transient {
        return Err(Error::InvalidConfig(format!(
            "mle needs steps > transient (got {steps} <= {transient})"
        )));
    }
    let n = map.dim();
    let mut state = initial.to_vec();
    let mut tangent = vec![1.0 / (n as f64).sqrt(); n];
    let mut acc = 0.0;
    for t in 0..steps {
        let jac = jacobian_fd(map, &state, eps)?;
        let mut pushed = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                pushed[i] += jac[i][j] * tangent[j];
            }
        }
        let growth = norm(&pushed);
        if growth <= 0.0 || !growth.is_finite() {
            return Err(Error::NonFinite(format!(
                "tangent norm {growth} at step {t}"
            )));
        }
        if t >= transient {
            acc += growth.ln();
        }
        for (v, p) in tangent.iter_mut().zip(&pushed) {
            *v = p / growth;
        }
        state = map.apply(&state);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: t });
        }
    }
    Ok(MleEstimate {
        lambda: acc / (steps - transient) as f64,
        steps,
        transient,
        method: MleMethod::Jacobian,
        initial_state: initial.to_vec(),
        epsilon: eps,
    })
}

/// MLE via the direct two-trajectory method: evolve the base state and a
/// companion offset by `delta0`; every `renorm_interval` steps accumulate
/// `ln(|offset| / delta0)` and rescale the companion back to distance
/// `delta0` along the current offset direction.
pub fn mle_direct<M: DiscreteMap + ?Sized>(
    map: &M,
    initial: &[f64],
    delta0: f64,
    steps: usize,
    renorm_interval: usize,
) -> Result<MleEstimate> {
    if delta0 <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "perturbation size must be > 0, got {delta0}"
        )));
    }
    if steps == 0 || renorm_interval == 0 {
        return Err(Error::InvalidConfig(
            "steps and renorm interval must be >= 1".into(),
        ));
    }
    let n = map.dim();
    let mut base = initial.to_vec();
    let dir0 = 1.0 / (n as f64).sqrt();
    let mut pert: Vec<f64> = initial.iter().map(|x| x + delta0 * dir0).collect();

    let mut acc = 0.0;
    let mut measured_steps = 0usize;
    let mut window = 0usize;
    for t in 0..steps {
        base = map.apply(&base);
        pert = map.apply(&pert);
        if base.iter().any(|v| !v.is_finite()) || pert.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: t });
        }
        window += 1;
        if window == renorm_interval || t + 1 == steps {
            let offset: Vec<f64> = pert.iter().zip(&base).map(|(p, b)| p - b).collect();
            let dist = norm(&offset);
            if dist > 0.0 {
                acc += (dist / delta0).ln();
                measured_steps += window;
                let scale = delta0 / dist;
                for (p, (b, o)) in pert.iter_mut().zip(base.iter().zip(&offset)) {
                    *p = b + o * scale;
                }
            } else {
                // offset collapsed below resolution: re-seed it and move on
                // without counting the unmeasurable window
                for (p, b) in pert.iter_mut().zip(&base) {
                    *p = b + delta0 * dir0;
                }
            }
            window = 0;
        }
    }
    if measured_steps == 0 {
        return Err(Error::NonFinite(
            "offset collapsed in every measurement window".into(),
        ));
    }
    Ok(MleEstimate {
        lambda: acc / measured_steps as f64,
        steps,
        transient: 0,
        method: MleMethod::Direct,
        initial_state: initial.to_vec(),
        epsilon: delta0,
    })
}

/// Roll a bundle of `count` trajectories from random perturbations of size
/// `delta0` around `initial` for `horizon` steps, recording per-step
/// state-space divergence from the unperturbed trajectory.
///
/// Divergence to non-finite is recorded as a saturated (infinite) value
/// rather than an error; blowing up is an expected outcome for chaotic
/// baselines.
pub fn perturbation_fan<M: DiscreteMap + ?Sized, R: Rng + ?Sized>(
    map: &M,
    initial: &[f64],
    delta0: f64,
    count: usize,
    horizon: usize,
    rng: &mut R,
) -> PerturbationFan {
    let n = map.dim();
    let mut base_traj = Vec::with_capacity(horizon + 1);
    base_traj.push(initial.to_vec());
    let mut alive = true;
    for _ in 0..horizon {
        let next = if alive {
            map.apply(base_traj.last().unwrap())
        } else {
            base_traj.last().unwrap().clone()
        };
        alive = alive && next.iter().all(|v| v.is_finite());
        base_traj.push(next);
    }

    let mut divergences = Vec::with_capacity(count);
    for _ in 0..count {
        let mut dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = norm(&dir);
        if len > 0.0 {
            dir.iter_mut().for_each(|d| *d /= len);
        } else {
            dir = vec![1.0 / (n as f64).sqrt(); n];
        }
        let mut state: Vec<f64> = initial
            .iter()
            .zip(&dir)
            .map(|(x, d)| x + delta0 * d)
            .collect();
        let mut divs = Vec::with_capacity(horizon + 1);
        let mut dead = false;
        for t in 0..=horizon {
            if t > 0 {
                if !dead {
                    state = map.apply(&state);
                    dead = state.iter().any(|v| !v.is_finite());
                }
            }
            if dead || base_traj[t].iter().any(|v| !v.is_finite()) {
                divs.push(f64::INFINITY);
            } else {
                let d: f64 = state
                    .iter()
                    .zip(&base_traj[t])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                divs.push(d);
            }
        }
        divergences.push(divs);
    }

    PerturbationFan {
        delta0,
        base: base_traj,
        divergences,
    }
}

/// One Jacobian-method estimate per initial state; per-state failures are
/// recorded in place and the batch continues. Results are order-preserving
/// and independent of evaluation parallelism.
pub fn mle_batch<M: DiscreteMap + ?Sized>(
    map: &M,
    initial_states: &[Vec<f64>],
    steps: usize,
    transient: usize,
    eps: f64,
) -> Vec<Result<MleEstimate>> {
    initial_states
        .par_iter()
        .map(|s| mle_jacobian(map, s, steps, transient, eps))
        .collect()
}

/// Reference maps with known exponents, used to validate the estimators.
pub mod benchmarks {
    use super::DiscreteMap;

    /// `x -> r x (1 - x)`; at `r = 4` the exponent is `ln 2`.
    pub struct LogisticMap {
        pub r: f64,
    }

    impl DiscreteMap for LogisticMap {
        fn dim(&self) -> usize {
            1
        }

        fn apply(&self, s: &[f64]) -> Vec<f64> {
            vec![self.r * s[0] * (1.0 - s[0])]
        }
    }

    /// Henon map `(x, y) -> (1 - a x^2 + y, b x)`; the classic (1.4, 0.3)
    /// attractor has exponent ~0.419.
    pub struct HenonMap {
        pub a: f64,
        pub b: f64,
    }

    impl DiscreteMap for HenonMap {
        fn dim(&self) -> usize {
            2
        }

        fn apply(&self, s: &[f64]) -> Vec<f64> {
            vec![1.0 - self.a * s[0] * s[0] + s[1], self.b * s[0]]
        }
    }

    /// `x -> A x` for a fixed square matrix; exponent `ln(spectral radius)`.
    pub struct LinearMap {
        pub matrix: Vec<Vec<f64>>,
    }

    impl LinearMap {
        pub fn scaling(dim: usize, factor: f64) -> Self {
            let mut matrix = vec![vec![0.0; dim]; dim];
            for (i, row) in matrix.iter_mut().enumerate() {
                row[i] = factor;
            }
            LinearMap { matrix }
        }
    }

    impl DiscreteMap for LinearMap {
        fn dim(&self) -> usize {
            self.matrix.len()
        }

        fn apply(&self, s: &[f64]) -> Vec<f64> {
            self.matrix
                .iter()
                .map(|row| row.iter().zip(s).map(|(a, x)| a * x).sum())
                .collect()
        }
    }
}
