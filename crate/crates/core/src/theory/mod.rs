//! Exact objectives and vector field of a small enumerable game, sampled
//! estimators of the same field, ODE integration, tracking and
//! stationarity diagnostics, and best-response audits on the full game.

mod audit;

use rand::distributions::{Bernoulli, Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::policies::{
    action_distribution, expected_utility_grad, kl_to_reference, log_prob_grad, log_probs, Head,
};
use crate::rng;
use crate::trainer::{group_advantage, StepSchedule};
use crate::{Error, Result};

pub use audit::{
    enumerate_contexts, generator_dominance_audit, verifier_best_response_audit,
    BestResponseReport, ContextReport, InterventionPolicy, LinearVerifier, OracleVerifier,
    UniformVerifier,
};

const NS: usize = 0;
const SAC: usize = 1;
const KEEP: usize = 0;
const REVISE: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Utilities are expected group-normalized advantages (what the update optimizes).
    Normalized,
    /// Utilities are the raw paired rewards.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularContext {
    pub weight: f64,
    pub s_x: u8,
    /// `P(S_z = 1)` for this context's revision pipeline.
    pub sbar_z: f64,
    pub verifier_features: Vec<f64>,
    pub action_features: Vec<f64>,
    /// Treat the context as always on the SAC branch (KEEP/REVISE bandits).
    pub forced_sac: bool,
}

impl TabularContext {
    pub fn c_sac(&self) -> u8 {
        1 - self.s_x.min(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularGame {
    pub contexts: Vec<TabularContext>,
    pub beta_v: f64,
    pub beta_f: f64,
    pub epsilon_a: f64,
    pub reward_mode: RewardMode,
    /// Optional cost subtracted from `R_V(SAC)`; 0 gives the plain rewards.
    pub sac_cost: f64,
    pub reference: GameParams,
}

/// Verifier head θ (features × {NS, SAC}) and generator action head φ
/// (features × {KEEP, REVISE}).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    pub theta: Head,
    pub phi: Head,
}

impl GameParams {
    pub fn zeros(dv: usize, da: usize) -> Self {
        Self {
            theta: Head::zeros(dv, 2),
            phi: Head::zeros(da, 2),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.theta
            .weights
            .iter()
            .chain(&self.phi.weights)
            .copied()
            .collect()
    }

    pub fn from_flat(&self, v: &[f64]) -> Result<Self> {
        let n = self.theta.weights.len();
        if v.len() != n + self.phi.weights.len() {
            return Err(Error::Dimension(format!(
                "flat vector of length {}",
                v.len()
            )));
        }
        let mut out = self.clone();
        out.theta.weights.copy_from_slice(&v[..n]);
        out.phi.weights.copy_from_slice(&v[n..]);
        Ok(out)
    }

    pub fn distance(&self, other: &GameParams) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.phi.is_finite()
    }
}

/// Own-role gradients `(∇_θ J_v, ∇_φ J_f)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GameVectorField {
    pub theta: Head,
    pub phi: Head,
}

impl GameVectorField {
    fn zeros_like(p: &GameParams) -> Self {
        Self {
            theta: Head::zeros(p.theta.features, 2),
            phi: Head::zeros(p.phi.features, 2),
        }
    }

    pub fn as_params(&self) -> GameParams {
        GameParams {
            theta: self.theta.clone(),
            phi: self.phi.clone(),
        }
    }

    pub fn norms(&self) -> (f64, f64) {
        (self.phi.norm_sq().sqrt(), self.theta.norm_sq().sqrt())
    }
}

impl TabularGame {
    pub fn validate(&self) -> Result<()> {
        if self.contexts.is_empty() {
            return Err(Error::Config(
                "tabular game needs at least one context".into(),
            ));
        }
        if !(self.beta_v >= 0.0 && self.beta_f >= 0.0) {
            return Err(Error::Config("negative KL coefficient".into()));
        }
        for c in &self.contexts {
            if c.verifier_features.len() != self.reference.theta.features
                || c.action_features.len() != self.reference.phi.features
            {
                return Err(Error::Dimension(
                    "context features do not match the reference heads".into(),
                ));
            }
            if !(0.0..=1.0).contains(&c.sbar_z) || !(c.weight >= 0.0) {
                return Err(Error::Config(
                    "sbar_z must lie in [0,1] and weights be nonnegative".into(),
                ));
            }
        }
        Ok(())
    }

    fn total_weight(&self) -> f64 {
        self.contexts.iter().map(|c| c.weight).sum()
    }

    /// Verifier utilities indexed `[NS, SAC]`.
    pub fn verifier_utilities(&self, c: &TabularContext) -> [f64; 2] {
        let cs = f64::from(c.c_sac());
        let r = [1.0 - cs, cs - self.sac_cost];
        match self.reward_mode {
            RewardMode::Raw => r,
            RewardMode::Normalized => {
                let a = group_advantage(&r, self.epsilon_a);
                [a[0], a[1]]
            }
        }
    }

    fn sampled_generator_rewards(&self, c: &TabularContext, s_z: u8) -> [f64; 2] {
        let r = [f64::from(c.s_x), f64::from(s_z)];
        match self.reward_mode {
            RewardMode::Raw => r,
            RewardMode::Normalized => {
                let a = group_advantage(&r, self.epsilon_a);
                [a[0], a[1]]
            }
        }
    }

    /// Generator utilities indexed `[KEEP, REVISE]`, averaged over `S_z`.
    pub fn generator_utilities(&self, c: &TabularContext) -> [f64; 2] {
        let hi = self.sampled_generator_rewards(c, 1);
        let lo = self.sampled_generator_rewards(c, 0);
        let q = c.sbar_z;
        [q * hi[0] + (1.0 - q) * lo[0], q * hi[1] + (1.0 - q) * lo[1]]
    }

    fn p_sac(&self, c: &TabularContext, theta: &Head) -> Result<f64> {
        if c.forced_sac {
            return Ok(1.0);
        }
        Ok(action_distribution(theta, &c.verifier_features, 2)?[SAC])
    }

    /// `J_v(θ) = Σ_c w_c [E_π u_v − β_v KL]` (normalized by total weight).
    pub fn j_v(&self, p: &GameParams) -> Result<f64> {
        let mut j = 0.0;
        for c in &self.contexts {
            let pi = action_distribution(&p.theta, &c.verifier_features, 2)?;
            let u = self.verifier_utilities(c);
            let (kl, _) =
                kl_to_reference(&p.theta, &self.reference.theta, &c.verifier_features, 2)?;
            j += c.weight * (pi[NS] * u[NS] + pi[SAC] * u[SAC] - self.beta_v * kl);
        }
        Ok(j / self.total_weight())
    }

    /// `J_f(φ; θ) = Σ_c w_c P_θ(SAC|c) [E_π u_f − β_f KL]`.
    pub fn j_f(&self, p: &GameParams) -> Result<f64> {
        let mut j = 0.0;
        for c in &self.contexts {
            let pi = action_distribution(&p.phi, &c.action_features, 2)?;
            let u = self.generator_utilities(c);
            let (kl, _) = kl_to_reference(&p.phi, &self.reference.phi, &c.action_features, 2)?;
            j += c.weight
                * self.p_sac(c, &p.theta)?
                * (pi[KEEP] * u[KEEP] + pi[REVISE] * u[REVISE] - self.beta_f * kl);
        }
        Ok(j / self.total_weight())
    }

    /// Exact `F(φ, θ)`.
    pub fn field(&self, p: &GameParams) -> Result<GameVectorField> {
        let mut f = GameVectorField::zeros_like(p);
        let tw = self.total_weight();
        for c in &self.contexts {
            let w = c.weight / tw;
            let gv =
                expected_utility_grad(&p.theta, &c.verifier_features, &self.verifier_utilities(c))?;
            let (_, kv) =
                kl_to_reference(&p.theta, &self.reference.theta, &c.verifier_features, 2)?;
            f.theta.add_scaled(&gv, w)?;
            f.theta.add_scaled(&kv, -w * self.beta_v)?;

            let wf = w * self.p_sac(c, &p.theta)?;
            let gf =
                expected_utility_grad(&p.phi, &c.action_features, &self.generator_utilities(c))?;
            let (_, kf) = kl_to_reference(&p.phi, &self.reference.phi, &c.action_features, 2)?;
            f.phi.add_scaled(&gf, wf)?;
            f.phi.add_scaled(&kf, -wf * self.beta_f)?;
        }
        if !f.theta.is_finite() || !f.phi.is_finite() {
            return Err(Error::NonFinite("game vector field".into()));
        }
        Ok(f)
    }

    /// Central finite differences of `(J_f w.r.t. φ, J_v w.r.t. θ)`.
    pub fn finite_difference_field(&self, p: &GameParams, h: f64) -> Result<GameVectorField> {
        let mut f = GameVectorField::zeros_like(p);
        for i in 0..p.theta.weights.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.theta.weights[i] += h;
            b.theta.weights[i] -= h;
            f.theta.weights[i] = (self.j_v(&a)? - self.j_v(&b)?) / (2.0 * h);
        }
        for i in 0..p.phi.weights.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.phi.weights[i] += h;
            b.phi.weights[i] -= h;
            f.phi.weights[i] = (self.j_f(&a)? - self.j_f(&b)?) / (2.0 * h);
        }
        Ok(f)
    }

    /// Unbiased single-batch estimate of the field. Each sample draws a
    /// context, a verifier action (for the SAC gate and, with the
    /// taken-action estimator, the scored action), `S_z`, and a generator
    /// action; outcomes are tallied and combined once per distinct outcome.
    pub fn sampled_field(
        &self,
        p: &GameParams,
        batch: usize,
        estimator: Estimator,
        rng: &mut impl Rng,
    ) -> Result<GameVectorField> {
        if batch == 0 {
            return Err(Error::EmptyBatch);
        }
        let ctx_dist = WeightedIndex::new(self.contexts.iter().map(|c| c.weight))
            .map_err(|e| Error::Config(format!("context weights: {e}")))?;
        let n = self.contexts.len();
        let mut pv = Vec::with_capacity(n);
        let mut pa = Vec::with_capacity(n);
        for c in &self.contexts {
            pv.push(action_distribution(&p.theta, &c.verifier_features, 2)?);
            pa.push(action_distribution(&p.phi, &c.action_features, 2)?);
        }
        // slot 2 = counterfactual (no scored action)
        let mut v_counts = vec![[0usize; 3]; n];
        let mut f_counts = vec![[[0usize; 3]; 2]; n];
        for _ in 0..batch {
            let ci = ctx_dist.sample(rng);
            let c = &self.contexts[ci];
            let vy = match estimator {
                Estimator::Counterfactual => 2,
                Estimator::TakenAction => sample(&pv[ci], rng),
            };
            v_counts[ci][vy] += 1;
            let on_sac = c.forced_sac || sample(&pv[ci], rng) == SAC;
            if !on_sac {
                continue;
            }
            let s_z = usize::from(
                Bernoulli::new(c.sbar_z)
                    .expect("sbar_z in [0,1]")
                    .sample(rng),
            );
            let a = match estimator {
                Estimator::Counterfactual => 2,
                Estimator::TakenAction => sample(&pa[ci], rng),
            };
            f_counts[ci][s_z][a] += 1;
        }
        let mut f = GameVectorField::zeros_like(p);
        let w = 1.0 / batch as f64;
        for (ci, c) in self.contexts.iter().enumerate() {
            let uv = self.verifier_utilities(c);
            for (slot, &k) in v_counts[ci].iter().enumerate() {
                if k == 0 {
                    continue;
                }
                let g = if slot == 2 {
                    regularized_grad(
                        &p.theta,
                        &self.reference.theta,
                        &c.verifier_features,
                        &uv,
                        self.beta_v,
                    )?
                } else {
                    taken_action(
                        &p.theta,
                        &self.reference.theta,
                        &c.verifier_features,
                        slot,
                        uv[slot],
                        self.beta_v,
                    )?
                };
                f.theta.add_scaled(&g, w * k as f64)?;
            }
            for s_z in 0..2 {
                let u = self.sampled_generator_rewards(c, s_z as u8);
                for (slot, &k) in f_counts[ci][s_z].iter().enumerate() {
                    if k == 0 {
                        continue;
                    }
                    let g = if slot == 2 {
                        regularized_grad(
                            &p.phi,
                            &self.reference.phi,
                            &c.action_features,
                            &u,
                            self.beta_f,
                        )?
                    } else {
                        taken_action(
                            &p.phi,
                            &self.reference.phi,
                            &c.action_features,
                            slot,
                            u[slot],
                            self.beta_f,
                        )?
                    };
                    f.phi.add_scaled(&g, w * k as f64)?;
                }
            }
        }
        Ok(f)
    }

    /// `(‖∇_φ J_f‖, ‖∇_θ J_v‖)` at `p`.
    pub fn stationarity_residual(&self, p: &GameParams) -> Result<(f64, f64)> {
        Ok(self.field(p)?.norms())
    }

    /// Directional derivative of the unregularized verifier objective at
    /// context `ci`, along the logit direction that favors the reward-optimal action.
    pub fn verifier_directional_derivative(&self, p: &GameParams, ci: usize) -> Result<f64> {
        let c = self
            .contexts
            .get(ci)
            .ok_or_else(|| Error::Dimension(format!("context {ci}")))?;
        let u = self.verifier_utilities(c);
        let pi = action_distribution(&p.theta, &c.verifier_features, 2)?;
        let (best, other) = if u[SAC] > u[NS] { (SAC, NS) } else { (NS, SAC) };
        let mean = pi[0] * u[0] + pi[1] * u[1];
        // ∂J̃/∂z_y = w π_y (u_y − ū)
        let w = c.weight / self.total_weight();
        Ok(w * (pi[best] * (u[best] - mean) - pi[other] * (u[other] - mean)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Counterfactual,
    TakenAction,
}

fn sample(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    if u < p[0] {
        0
    } else {
        1
    }
}

/// `∇ (E_π u − β KL(π ‖ π_ref))`.
fn regularized_grad(head: &Head, ref_head: &Head, f: &[f64], u: &[f64], beta: f64) -> Result<Head> {
    let mut g = expected_utility_grad(head, f, u)?;
    let (_, k) = kl_to_reference(head, ref_head, f, 2)?;
    g.add_scaled(&k, -beta)?;
    Ok(g)
}

/// `score(a) (u − β (log π(a) − log π_ref(a)))`, an ascent direction.
fn taken_action(
    head: &Head,
    ref_head: &Head,
    f: &[f64],
    a: usize,
    u: f64,
    beta: f64,
) -> Result<Head> {
    let lp = log_probs(head, f, 2)?;
    let lq = log_probs(ref_head, f, 2)?;
    let mut g = log_prob_grad(head, f, 2, a)?;
    g.scale(u - beta * (lp[a] - lq[a]));
    Ok(g)
}

/// Closed-form maximizer of `E_π U − β KL(π ‖ π_ref)`: `π* ∝ π_ref exp(U / β)`.
pub fn kl_best_response_target(ref_probs: &[f64], rewards: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    if ref_probs.len() != rewards.len() {
        return Err(Error::Dimension(
            "reference and reward lengths differ".into(),
        ));
    }
    let logits: Vec<f64> = ref_probs
        .iter()
        .zip(rewards)
        .map(|(p, r)| p.ln() + r / beta)
        .collect();
    Ok(crate::policies::softmax(&logits))
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Exact,
    Sampled { batch: usize, estimator: Estimator },
}

#[derive(Clone, Debug)]
pub struct TabularRun {
    /// Interpolated time (cumulative step size) of each recorded iterate.
    pub times: Vec<f64>,
    pub iterates: Vec<GameParams>,
    pub last: GameParams,
    pub steps: usize,
}

/// Simultaneous ascent on `(J_v, J_f)` from `init`. Records the iterate
/// after every step while interpolated time is at most `record_until`.
pub fn train_tabular(
    game: &TabularGame,
    init: &GameParams,
    schedule: StepSchedule,
    steps: usize,
    mode: GradientMode,
    seed: u64,
    record_until: f64,
) -> Result<TabularRun> {
    game.validate()?;
    schedule.validate()?;
    let mut rng = rng::stream(&[seed, 0x7AB]);
    let mut p = init.clone();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut iterates = vec![p.clone()];
    for n in 0..steps {
        let f = match mode {
            GradientMode::Exact => game.field(&p)?,
            GradientMode::Sampled { batch, estimator } => {
                game.sampled_field(&p, batch, estimator, &mut rng)?
            }
        };
        let eta = schedule.eta(n);
        // θ then φ; both from the same field evaluation
        p.theta.add_scaled(&f.theta, eta)?;
        p.phi.add_scaled(&f.phi, eta)?;
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("tabular iterate at step {n}")));
        }
        t += eta;
        if t <= record_until {
            times.push(t);
            iterates.push(p.clone());
        }
    }
    Ok(TabularRun {
        times,
        iterates,
        last: p,
        steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeMethod {
    Euler,
    Rk4,
}

#[derive(Clone, Debug)]
pub struct OdeTrajectory {
    pub dt: f64,
    pub states: Vec<GameParams>,
}

impl OdeTrajectory {
    /// State at time `t` by linear interpolation between grid points.
    pub fn at(&self, t: f64) -> Result<GameParams> {
        let x = t / self.dt;
        let i = x.floor() as usize;
        if i + 1 >= self.states.len() {
            return self
                .states
                .last()
                .cloned()
                .ok_or(Error::EmptyBatch)
                .and_then(|s| {
                    if (t - self.dt * (self.states.len() - 1) as f64) <= 1e-9 {
                        Ok(s)
                    } else {
                        Err(Error::Dimension(format!("time {t} beyond trajectory")))
                    }
                });
        }
        let frac = x - i as f64;
        let a = self.states[i].flatten();
        let b = self.states[i + 1].flatten();
        let v: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a + frac * (b - a)).collect();
        self.states[i].from_flat(&v)
    }

    pub fn last(&self) -> &GameParams {
        self.states
            .last()
            .expect("trajectory has the initial state")
    }
}

/// Integrates `θ̇ = ∇_θ J_v, φ̇ = ∇_φ J_f` on `[0, horizon]`.
pub fn ode_trajectory(
    game: &TabularGame,
    init: &GameParams,
    horizon: f64,
    dt: f64,
    method: OdeMethod,
) -> Result<OdeTrajectory> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::Config("ode needs dt > 0 and horizon >= 0".into()));
    }
    let steps = (horizon / dt).round() as usize;
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = init.flatten();
    states.push(init.clone());
    let eval = |v: &[f64]| -> Result<Vec<f64>> {
        game.field(&init.from_flat(v)?)
            .map(|f| f.as_params().flatten())
    };
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(a, b)| a + s * b).collect()
    };
    for _ in 0..steps {
        x = match method {
            OdeMethod::Euler => axpy(&x, dt, &eval(&x)?),
            OdeMethod::Rk4 => {
                let k1 = eval(&x)?;
                let k2 = eval(&axpy(&x, dt / 2.0, &k1))?;
                let k3 = eval(&axpy(&x, dt / 2.0, &k2))?;
                let k4 = eval(&axpy(&x, dt, &k3))?;
                (0..x.len())
                    .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect()
            }
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ode state".into()));
        }
        states.push(init.from_flat(&x)?);
    }
    Ok(OdeTrajectory { dt, states })
}

/// Max distance between recorded iterates and the ODE over `[0, window]`.
pub fn tracking_comparison(run: &TabularRun, ode: &OdeTrajectory, window: f64) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for (t, p) in run.times.iter().zip(&run.iterates) {
        if *t > window {
            break;
        }
        let q = ode.at(*t)?;
        if q.theta.weights.len() != p.theta.weights.len()
            || q.phi.weights.len() != p.phi.weights.len()
        {
            return Err(Error::Dimension(
                "iterate and ode state differ in shape".into(),
            ));
        }
        sup = sup.max(p.distance(&q));
    }
    Ok(sup)
}

/// Local stability evidence: flows the exact ODE for `time` from 8 random
/// perturbations of radius `radius` and returns final/initial distance ratios.
pub fn perturbation_probe(
    game: &TabularGame,
    p: &GameParams,
    radius: f64,
    time: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let base = p.flatten();
    let mut out = Vec::with_capacity(8);
    for k in 0..8u64 {
        let d: Vec<f64> = (0..base.len())
            .map(|i| rng::keyed_normal(&[seed, k, i as u64]))
            .collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let start: Vec<f64> = base
            .iter()
            .zip(&d)
            .map(|(b, v)| b + radius * v / norm)
            .collect();
        let traj = ode_trajectory(game, &p.from_flat(&start)?, time, 0.01, OdeMethod::Rk4)?;
        out.push(traj.last().distance(p) / radius);
    }
    Ok(out)
}

/// The two-context game used for the tracking experiment: one context with
/// a wrong proposal and a good revision pipeline, one with a correct
/// proposal and a poor pipeline; one scalar feature `±1` per head.
pub fn tracking_game(beta: f64) -> TabularGame {
    let ctx = |s_x: u8, sbar_z: f64, f: f64| TabularContext {
        weight: 0.5,
        s_x,
        sbar_z,
        verifier_features: vec![f],
        action_features: vec![f],
        forced_sac: false,
    };
    TabularGame {
        contexts: vec![ctx(0, 0.9, 1.0), ctx(1, 0.3, -1.0)],
        beta_v: beta,
        beta_f: beta,
        epsilon_a: 1e-6,
        reward_mode: RewardMode::Normalized,
        sac_cost: 0.0,
        reference: GameParams::zeros(1, 1),
    }
}

/// Single-context game with a bias feature for each head.
pub fn bandit_game(
    s_x: u8,
    sbar_z: f64,
    forced_sac: bool,
    beta: f64,
    mode: RewardMode,
) -> TabularGame {
    TabularGame {
        contexts: vec![TabularContext {
            weight: 1.0,
            s_x,
            sbar_z,
            verifier_features: vec![1.0],
            action_features: vec![1.0],
            forced_sac,
        }],
        beta_v: beta,
        beta_f: beta,
        epsilon_a: 1e-6,
        reward_mode: mode,
        sac_cost: 0.0,
        reference: GameParams::zeros(1, 1),
    }
}

/// Probabilities of the two heads at context `ci`: `([NS, SAC], [KEEP, REVISE])`.
pub fn context_policies(
    game: &TabularGame,
    p: &GameParams,
    ci: usize,
) -> Result<([f64; 2], [f64; 2])> {
    let c = &game.contexts[ci];
    let v = action_distribution(&p.theta, &c.verifier_features, 2)?;
    let a = action_distribution(&p.phi, &c.action_features, 2)?;
    Ok(([v[0], v[1]], [a[0], a[1]]))
}

/// Dominant generator action, `None` when `S_x = S̄_z`.
pub fn dominant_generator_action(s_x: u8, sbar_z: f64) -> Option<usize> {
    let sx = f64::from(s_x);
    if sx > sbar_z {
        Some(KEEP)
    } else if sx < sbar_z {
        Some(REVISE)
    } else {
        None
    }
}
