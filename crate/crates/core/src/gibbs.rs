//! The reversible measure μ(dx) = 1_D(x) e^{−Φ(x)} dx: log-density,
//! random-walk Metropolis, exact rejection sampling and the finiteness check.

use crate::compat::{find_feasible_point, Bounds};
use crate::error::{Error, Result};
use crate::geometry::ConstraintSet;
use crate::linalg::dot;
use crate::rng::CounterRng;
use crate::scalar::Scalar;
use crate::stats::integrated_autocorrelation;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;
use std::sync::Arc;

/// Potential Φ with its gradient.
pub trait Potential<S: Scalar>: Send + Sync + Debug {
    fn value(&self, x: &[S]) -> S;
    fn gradient(&self, x: &[S], out: &mut [S]);
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPotential;

impl<S: Scalar> Potential<S> for ZeroPotential {
    fn value(&self, _: &[S]) -> S {
        S::zero()
    }
    fn gradient(&self, _: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
    }
}

/// Φ(x) = c·x
#[derive(Clone, Debug)]
pub struct LinearPotential<S> {
    pub coeffs: Vec<S>,
}

impl<S: Scalar> Potential<S> for LinearPotential<S> {
    fn value(&self, x: &[S]) -> S {
        dot(&self.coeffs, x)
    }
    fn gradient(&self, _: &[S], out: &mut [S]) {
        out.copy_from_slice(&self.coeffs);
    }
}

/// Φ(x) = k |x − c|²
#[derive(Clone, Debug)]
pub struct QuadraticPotential<S> {
    pub stiffness: S,
    pub center: Vec<S>,
}

impl<S: Scalar> Potential<S> for QuadraticPotential<S> {
    fn value(&self, x: &[S]) -> S {
        self.stiffness
            * x.iter()
                .zip(&self.center)
                .map(|(&a, &c)| (a - c) * (a - c))
                .sum::<S>()
    }
    fn gradient(&self, x: &[S], out: &mut [S]) {
        for ((o, &a), &c) in out.iter_mut().zip(x).zip(&self.center) {
            *o = S::two() * self.stiffness * (a - c);
        }
    }
}

/// factor · Φ
#[derive(Clone, Debug)]
pub struct ScaledPotential<S: Scalar> {
    pub inner: Arc<dyn Potential<S>>,
    pub factor: S,
}

impl<S: Scalar> Potential<S> for ScaledPotential<S> {
    fn value(&self, x: &[S]) -> S {
        self.factor * self.inner.value(x)
    }
    fn gradient(&self, x: &[S], out: &mut [S]) {
        self.inner.gradient(x, out);
        out.iter_mut().for_each(|o| *o *= self.factor);
    }
}

/// Proposal law for rejection sampling.
pub trait ProposalEnvelope<S: Scalar>: Send + Sync + Debug {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<S>;

    /// log of e^{−Φ(x)} / (M q(x)) at a draw `x`; must be ≤ 0. The indicator
    /// of D is applied by the caller.
    fn log_accept(&self, x: &[S], phi: S) -> S;

    /// Box used to search for a feasible start, if any.
    fn bounds(&self) -> Option<&Bounds<S>> {
        None
    }
}

/// Uniform proposals on a box, with `phi_min` a lower bound of Φ on it.
#[derive(Clone, Debug)]
pub struct BoxEnvelope<S> {
    pub bounds: Bounds<S>,
    pub phi_min: S,
}

impl<S: Scalar> ProposalEnvelope<S> for BoxEnvelope<S> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<S> {
        self.bounds.uniform(rng)
    }
    fn log_accept(&self, _: &[S], phi: S) -> S {
        (self.phi_min - phi).min(S::zero())
    }
    fn bounds(&self) -> Option<&Bounds<S>> {
        Some(&self.bounds)
    }
}

#[derive(Clone, Debug)]
pub struct GibbsSpec<S: Scalar> {
    pub set: ConstraintSet<S>,
    pub phi: Arc<dyn Potential<S>>,
    pub envelope: Option<Arc<dyn ProposalEnvelope<S>>>,
    /// Multiplies Φ when set.
    pub temperature_scale: Option<S>,
    /// Per-coordinate random-walk scales (all ones when empty).
    pub proposal_scales: Vec<S>,
}

impl<S: Scalar> GibbsSpec<S> {
    pub fn new(set: ConstraintSet<S>, phi: Arc<dyn Potential<S>>) -> Self {
        Self {
            set,
            phi,
            envelope: None,
            temperature_scale: None,
            proposal_scales: Vec::new(),
        }
    }

    pub fn with_envelope(mut self, envelope: Arc<dyn ProposalEnvelope<S>>) -> Self {
        self.envelope = Some(envelope);
        self
    }

    pub fn with_box(self, bounds: Bounds<S>, phi_min: S) -> Self {
        self.with_envelope(Arc::new(BoxEnvelope { bounds, phi_min }))
    }

    pub fn with_proposal_scales(mut self, scales: Vec<S>) -> Self {
        self.proposal_scales = scales;
        self
    }

    pub fn phi(&self, x: &[S]) -> S {
        let v = self.phi.value(x);
        match self.temperature_scale {
            Some(s) => s * v,
            None => v,
        }
    }

    fn scale(&self, i: usize) -> S {
        self.proposal_scales.get(i).copied().unwrap_or(S::one())
    }
}

/// −Φ(x) on D, −∞ off it.
pub fn log_density<S: Scalar>(spec: &GibbsSpec<S>, x: &[S]) -> S {
    if x.len() == spec.set.dim() && spec.set.is_strictly_feasible(x) {
        -spec.phi(x)
    } else {
        S::neg_infinity()
    }
}

/// Metropolis acceptance probability for a symmetric proposal.
pub fn acceptance_probability<S: Scalar>(log_pi_x: S, log_pi_y: S) -> S {
    if log_pi_y == S::neg_infinity() {
        return S::zero();
    }
    (log_pi_y - log_pi_x).min(S::zero()).exp()
}

#[derive(Clone, Debug)]
pub struct McmcOptions<S> {
    pub n: usize,
    /// `None`: ten integrated autocorrelation times of a pilot run.
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub proposal_scale: S,
    pub seed: u64,
    pub chains: usize,
    pub start: Option<Vec<S>>,
}

impl<S: Scalar> McmcOptions<S> {
    pub fn new(n: usize, proposal_scale: S, seed: u64) -> Self {
        Self {
            n,
            burn_in: None,
            thin: 1,
            proposal_scale,
            seed,
            chains: 1,
            start: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcRun<S> {
    pub samples: Vec<Vec<S>>,
    pub acceptance_rate: f64,
    pub burn_in: usize,
    pub pilot_iat: Option<f64>,
}

struct Chain<'a, S: Scalar> {
    spec: &'a GibbsSpec<S>,
    x: Vec<S>,
    log_pi: S,
    step: S,
    accepted: u64,
    proposed: u64,
}

impl<'a, S: Scalar> Chain<'a, S> {
    fn new(spec: &'a GibbsSpec<S>, x: Vec<S>, step: S) -> Self {
        let log_pi = log_density(spec, &x);
        Self {
            spec,
            x,
            log_pi,
            step,
            accepted: 0,
            proposed: 0,
        }
    }

    fn advance(&mut self, rng: &mut ChaCha8Rng) {
        let y: Vec<S> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, &xi)| xi + self.step * self.spec.scale(i) * S::c(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let log_pi_y = log_density(self.spec, &y);
        let a = acceptance_probability(self.log_pi, log_pi_y);
        let u: f64 = rng.random();
        self.proposed += 1;
        if u < a.f64() {
            self.x = y;
            self.log_pi = log_pi_y;
            self.accepted += 1;
        }
    }
}

fn feasible_start<S: Scalar>(spec: &GibbsSpec<S>, rng: &mut ChaCha8Rng) -> Result<Vec<S>> {
    const TRIES: usize = 1000;
    let env = spec.envelope.as_ref().ok_or(Error::NoFeasiblePoint { tries: 0 })?;
    if let Some(b) = env.bounds() {
        if let Some(x) = find_feasible_point(&spec.set, b, S::c(1e-6), TRIES, rng) {
            return Ok(x);
        }
    }
    for _ in 0..TRIES {
        let x = env.draw(rng);
        if log_density(spec, &x) > S::neg_infinity() {
            return Ok(x);
        }
    }
    Err(Error::NoFeasiblePoint { tries: TRIES })
}

/// Random-walk Metropolis chains targeting μ. Chain `c` draws from stream
/// `c` of the seed, so results do not depend on the worker count.
pub fn sample_mcmc<S: Scalar>(spec: &GibbsSpec<S>, opts: &McmcOptions<S>) -> Result<McmcRun<S>> {
    if opts.chains == 0 || opts.thin == 0 {
        return Err(Error::InvalidArgument("chains and thin must be positive".into()));
    }
    let rng = CounterRng::new(opts.seed);
    let start = match &opts.start {
        Some(x) => {
            if log_density(spec, x) == S::neg_infinity() {
                return Err(Error::NoFeasiblePoint { tries: 0 });
            }
            x.clone()
        }
        None => feasible_start(spec, &mut rng.stream(u64::MAX))?,
    };

    let (burn_in, pilot_iat) = match opts.burn_in {
        Some(b) => (b, None),
        None => {
            let mut pilot_rng = rng.stream(u64::MAX - 1);
            let mut chain = Chain::new(spec, start.clone(), opts.proposal_scale);
            let mut phi_trace = Vec::with_capacity(4000);
            let mut x0_trace = Vec::with_capacity(4000);
            for _ in 0..4000 {
                chain.advance(&mut pilot_rng);
                phi_trace.push(spec.phi(&chain.x).f64());
                x0_trace.push(chain.x[0].f64());
            }
            let iat = integrated_autocorrelation(&phi_trace).max(integrated_autocorrelation(&x0_trace));
            (((10.0 * iat).ceil() as usize).max(100), Some(iat))
        }
    };

    let per_chain: Vec<usize> = (0..opts.chains)
        .map(|c| opts.n / opts.chains + usize::from(c < opts.n % opts.chains))
        .collect();
    let runs: Vec<(Vec<Vec<S>>, u64, u64)> = per_chain
        .par_iter()
        .enumerate()
        .map(|(c, &count)| {
            let mut r = rng.stream(c as u64);
            let mut chain = Chain::new(spec, start.clone(), opts.proposal_scale);
            for _ in 0..burn_in {
                chain.advance(&mut r);
            }
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                for _ in 0..opts.thin {
                    chain.advance(&mut r);
                }
                out.push(chain.x.clone());
            }
            (out, chain.accepted, chain.proposed)
        })
        .collect();

    let (acc, prop) = runs.iter().fold((0u64, 0u64), |(a, p), r| (a + r.1, p + r.2));
    Ok(McmcRun {
        samples: runs.into_iter().flat_map(|r| r.0).collect(),
        acceptance_rate: if prop == 0 { 0.0 } else { acc as f64 / prop as f64 },
        burn_in,
        pilot_iat,
    })
}

#[derive(Clone, Debug)]
pub struct RejectionOptions {
    pub seed: u64,
    pub min_acceptance: f64,
    pub pilot: usize,
}

impl RejectionOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            min_acceptance: 1e-4,
            pilot: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionRun<S> {
    pub samples: Vec<Vec<S>>,
    pub acceptance_rate: f64,
}

fn try_accept<S: Scalar>(spec: &GibbsSpec<S>, env: &dyn ProposalEnvelope<S>, rng: &mut ChaCha8Rng) -> Option<Vec<S>> {
    let x = env.draw(rng);
    let u: f64 = rng.random();
    if !spec.set.is_strictly_feasible(&x) {
        return None;
    }
    let la = env.log_accept(&x, spec.phi(&x));
    (u.ln() < la.f64()).then_some(x)
}

/// Exact i.i.d. draws from μ restricted to the envelope. Sample `i` uses
/// stream `i` of the seed.
pub fn sample_rejection<S: Scalar>(spec: &GibbsSpec<S>, n: usize, opts: &RejectionOptions) -> Result<RejectionRun<S>> {
    let env = spec
        .envelope
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("rejection sampling needs an envelope".into()))?;
    let rng = CounterRng::new(opts.seed);
    let mut pilot_rng = rng.stream(u64::MAX);
    let hits = (0..opts.pilot)
        .filter(|_| try_accept(spec, env, &mut pilot_rng).is_some())
        .count();
    let pilot_rate = hits as f64 / opts.pilot.max(1) as f64;
    if opts.pilot > 0 && pilot_rate < opts.min_acceptance {
        return Err(Error::AcceptanceTooLow {
            rate: pilot_rate,
            floor: opts.min_acceptance,
        });
    }
    let cap = (100.0 / opts.min_acceptance).ceil() as u64;
    let draws: Vec<Option<(Vec<S>, u64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.stream(i as u64);
            for t in 1..=cap {
                if let Some(x) = try_accept(spec, env, &mut r) {
                    return Some((x, t));
                }
            }
            None
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut total = 0u64;
    for d in draws {
        let (x, t) = d.ok_or(Error::AcceptanceTooLow {
            rate: 1.0 / cap as f64,
            floor: opts.min_acceptance,
        })?;
        samples.push(x);
        total += t;
    }
    Ok(RejectionRun {
        samples,
        acceptance_rate: if total == 0 { pilot_rate } else { n as f64 / total as f64 },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrability {
    Finite,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    pub verdict: Integrability,
    pub temperature: f64,
    pub ell: f64,
    pub eta: f64,
    /// (ℓ − η)/τ², compared against the spatial dimension.
    pub exponent: f64,
    pub spatial_dim: usize,
}

/// Finite when (ℓ − η)/τ² > d, where ℓ bounds ρG′(ρ) from below on the tail.
/// Never concludes divergence.
pub fn check_integrability(ell: f64, eta: f64, spatial_dim: usize, temperature: f64) -> IntegrabilityReport {
    let exponent = (ell - eta) / (temperature * temperature);
    IntegrabilityReport {
        verdict: if exponent > spatial_dim as f64 {
            Integrability::Finite
        } else {
            Integrability::Unknown
        },
        temperature,
        ell,
        eta,
        exponent,
        spatial_dim,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes::Affine;

    fn half_line(c: f64) -> GibbsSpec<f64> {
        let set = ConstraintSet::new(1).with("x", Affine::new(vec![1.0], 0.0)).unwrap();
        GibbsSpec::new(set, Arc::new(LinearPotential { coeffs: vec![c] }))
            .with_box(Bounds::new(vec![0.0], vec![20.0 / c]).unwrap(), 0.0)
    }

    #[test]
    fn log_density_values() {
        let spec = half_line(2.0);
        assert_eq!(log_density(&spec, &[-0.5]), f64::NEG_INFINITY);
        assert_eq!(log_density(&spec, &[0.25]), -0.5);
        let flat = GibbsSpec::new(spec.set.clone(), Arc::new(ZeroPotential));
        assert_eq!(log_density(&flat, &[3.0]), 0.0);
    }

    #[test]
    fn acceptance_ratio_hand_values() {
        assert_eq!(acceptance_probability(-1.0, -0.5), 1.0);
        assert!((acceptance_probability(-1.0f64, -3.0) - (-2.0f64).exp()).abs() < 1e-16);
        assert_eq!(acceptance_probability(0.0, f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn uniform_box_mean_is_center() {
        let set = ConstraintSet::new(2)
            .with("lo", Affine::new(vec![1.0, 0.0], 1.0))
            .unwrap()
            .with("hi", Affine::new(vec![-1.0, 0.0], 1.0))
            .unwrap()
            .with("lo2", Affine::new(vec![0.0, 1.0], 1.0))
            .unwrap()
            .with("hi2", Affine::new(vec![0.0, -1.0], 1.0))
            .unwrap();
        let spec = GibbsSpec::new(set, Arc::new(ZeroPotential)).with_box(Bounds::cube(2, 1.0), 0.0);
        let mut o = McmcOptions::new(20_000, 0.8, 7);
        o.thin = 5;
        let run = sample_mcmc(&spec, &o).unwrap();
        for k in 0..2 {
            let m: f64 = run.samples.iter().map(|x| x[k]).sum::<f64>() / run.samples.len() as f64;
            // variance of U(−1,1) is 1/3; allow for residual correlation
            let se = (1.0 / 3.0 / run.samples.len() as f64).sqrt() * 2.0;
            assert!(m.abs() < 3.0 * se, "{m}");
        }
    }

    #[test]
    fn rejection_matches_exponential_cdf() {
        let spec = half_line(2.0);
        let run = sample_rejection(&spec, 20_000, &RejectionOptions::new(3)).unwrap();
        let xs: Vec<f64> = run.samples.iter().map(|x| x[0]).collect();
        let d = crate::stats::ks_one_sample(&xs, |x| 1.0 - (-2.0 * x).exp());
        assert!(d < 0.015, "{d}");
    }

    #[test]
    fn rejection_acceptance_floor() {
        let set = ConstraintSet::new(1).with("x", Affine::new(vec![1.0], -0.99999)).unwrap();
        let spec = GibbsSpec::new(set, Arc::new(ZeroPotential))
            .with_box(Bounds::new(vec![0.0], vec![1.0]).unwrap(), 0.0);
        let mut o = RejectionOptions::new(1);
        o.min_acceptance = 0.01;
        assert!(matches!(
            sample_rejection(&spec, 10, &o),
            Err(Error::AcceptanceTooLow { .. })
        ));
    }

    #[test]
    fn mcmc_is_deterministic_per_seed() {
        let spec = half_line(1.0);
        let mut o = McmcOptions::new(500, 1.0, 11);
        o.chains = 3;
        let a = sample_mcmc(&spec, &o).unwrap();
        let b = sample_mcmc(&spec, &o).unwrap();
        assert_eq!(a, b);
        o.seed = 12;
        assert_ne!(a.samples, sample_mcmc(&spec, &o).unwrap().samples);
    }

    #[test]
    fn integrability_arithmetic() {
        assert_eq!(check_integrability(1.0, 0.1, 2, 0.5).verdict, Integrability::Finite);
        assert_eq!(check_integrability(1.0, 0.1, 2, 1.5).verdict, Integrability::Unknown);
        assert_eq!(check_integrability(0.0, 0.1, 2, 0.1).verdict, Integrability::Unknown);
    }
}
