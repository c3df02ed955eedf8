//! Exact stochastic simulation of the three particle systems: the
//! continuous-space exponential jump model, its half-continuous predecessor
//! on the integer lattice, and the discrete-time vertex model the latter is
//! a small-step limit of.
//!
//! Trajectories are reproducible: a state owns a counter-based generator
//! seeded explicitly, and parallel trials use per-trial stream offsets of
//! the same master seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::model::{self, ModelParams, ParticleConfig, Roadblocks, SpeedField};
use crate::qspecial::QParam;
use crate::{Error, Result};

fn one_minus_q_pow(q: f64, count: u64) -> f64 {
    1.0 - q.powi(count.min(i32::MAX as u64) as i32)
}

/// Number of particles at positions `>= x`.
pub fn height_of(config: &ParticleConfig, x: f64) -> u64 {
    assert!(x > 0.0, "height_of requires x > 0");
    let stacks = config.stacks();
    let idx = stacks.partition_point(|s| s.pos < x);
    stacks[idx..].iter().map(|s| s.count).sum()
}

/// Running state of the continuous-space model: the particle configuration,
/// the continuous clock, and the trajectory's generator.
#[derive(Debug, Clone)]
pub struct ExpJumpState {
    pub config: ParticleConfig,
    pub time: f64,
    pub rng_seed: u64,
    pub event_count: u64,
    rng: ChaCha8Rng,
}

impl ExpJumpState {
    pub fn new(seed: u64) -> Self {
        ExpJumpState {
            config: ParticleConfig::empty(),
            time: 0.0,
            rng_seed: seed,
            event_count: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Trial `stream` of a family sharing `seed`; streams are independent.
    pub fn new_with_stream(seed: u64, stream: u64) -> Self {
        let mut state = Self::new(seed);
        state.rng.set_stream(stream);
        state
    }

    pub fn from_config(config: ParticleConfig, seed: u64) -> Self {
        let mut state = Self::new(seed);
        state.config = config;
        state
    }

    pub fn set_stream(&mut self, stream: u64) {
        self.rng.set_stream(stream);
    }

    fn total_rate(&self, field: &SpeedField, rb: &Roadblocks, q: f64) -> f64 {
        let mut rate = field.xi0();
        for s in self.config.stacks() {
            rate += model::effective_speed(field, rb, s.pos) * one_minus_q_pow(q, s.count);
        }
        rate
    }

    /// Advances exactly one event of the continuous-time chain.
    pub fn step(&mut self, field: &SpeedField, rb: &Roadblocks, params: &ModelParams) {
        self.advance(field, rb, params, None);
    }

    /// Runs events until the clock passes `t_end`, freezing the state there.
    /// Fails once the cumulative event count exceeds `max_events`.
    pub fn run_until(
        &mut self,
        field: &SpeedField,
        rb: &Roadblocks,
        params: &ModelParams,
        t_end: f64,
        max_events: u64,
    ) -> Result<()> {
        if t_end < self.time {
            return Err(Error::Domain(format!(
                "t_end = {} is before the current time {}",
                t_end, self.time
            )));
        }
        if t_end == self.time {
            return Ok(());
        }
        loop {
            if !self.advance(field, rb, params, Some(t_end)) {
                return Ok(());
            }
            if self.event_count > max_events {
                return Err(Error::Budget {
                    events: self.event_count,
                    time: self.time,
                });
            }
        }
    }

    /// One event: waiting time, wake-up selection, then the instantaneous
    /// jump. With a time cap, an event that would land past the cap is not
    /// performed; the clock freezes at the cap instead and `false` comes
    /// back.
    fn advance(
        &mut self,
        field: &SpeedField,
        rb: &Roadblocks,
        params: &ModelParams,
        t_cap: Option<f64>,
    ) -> bool {
        let q = params.q.get();
        let total = self.total_rate(field, rb, q);
        let dt = Exp::new(total).expect("total rate is positive").sample(&mut self.rng);
        if let Some(cap) = t_cap {
            if self.time + dt > cap {
                self.time = cap;
                return false;
            }
        }
        self.time += dt;

        // Wake-up selection proportionally to rates: the entry stack first,
        // then the sitting stacks in position order.
        let mut u = self.rng.gen::<f64>() * total;
        let origin = if u < field.xi0() {
            0.0
        } else {
            u -= field.xi0();
            let mut chosen = self.config.stacks().len() - 1;
            for (i, s) in self.config.stacks().iter().enumerate() {
                let rate = model::effective_speed(field, rb, s.pos) * one_minus_q_pow(q, s.count);
                if u < rate {
                    chosen = i;
                    break;
                }
                u -= rate;
            }
            let pos = self.config.stacks()[chosen].pos;
            self.config.remove_one(chosen);
            pos
        };

        let desired = Exp::new(params.lambda)
            .expect("lambda is positive")
            .sample(&mut self.rng);
        let landing = self.resolve_flight(origin, origin + desired, rb, q);
        self.config.add_particle(landing);
        self.event_count += 1;
        true
    }

    /// Walks the obstacles strictly between `origin` and `target` in
    /// left-to-right order: each sitting stack of k particles is passed with
    /// probability q^k, each roadblock with probability p(b); at a roadblock
    /// holding a stack the roadblock coin is flipped first. Returns the
    /// landing position.
    fn resolve_flight(&mut self, origin: f64, target: f64, rb: &Roadblocks, q: f64) -> f64 {
        let range = self.config.range_indices(origin, target);
        let mut blocks = rb.in_range(origin, target).iter().peekable();
        for i in range {
            let (pos, count) = {
                let s = &self.config.stacks()[i];
                (s.pos, s.count)
            };
            while let Some(e) = blocks.peek().copied() {
                if e.b >= pos {
                    break;
                }
                blocks.next();
                if self.rng.gen::<f64>() >= e.p {
                    return e.b;
                }
            }
            if let Some(e) = blocks.peek().copied() {
                if e.b == pos {
                    blocks.next();
                    if self.rng.gen::<f64>() >= e.p {
                        return pos;
                    }
                }
            }
            if self.rng.gen::<f64>() >= q.powi(count.min(i32::MAX as u64) as i32) {
                return pos;
            }
        }
        for e in blocks {
            if self.rng.gen::<f64>() >= e.p {
                return e.b;
            }
        }
        target
    }
}

/// Per-site parameters of the lattice models.
#[derive(Debug, Clone)]
pub enum SiteRule {
    /// Explicit per-site values; sites beyond the listed range repeat the
    /// last entry.
    Explicit { xi: Vec<f64>, s: Vec<f64> },
    /// Lattice discretization of a continuous environment with mesh `eps`:
    /// regular sites carry `s_i^2 = exp(-eps * lambda)` and
    /// `-xi_i s_i = xi(i * eps)`; a site holding a roadblock carries
    /// `s_i^2 = p(b)` and `-xi_i s_i` equal to the (possibly overridden)
    /// speed value at `b`.
    Scaled {
        field: SpeedField,
        rb: Roadblocks,
        eps: f64,
        lambda: f64,
    },
}

impl SiteRule {
    fn validate(&self) -> Result<()> {
        match self {
            SiteRule::Explicit { xi, s } => {
                if xi.is_empty() || xi.len() != s.len() {
                    return Err(Error::Domain(
                        "explicit site parameters must be nonempty lists of equal length"
                            .to_string(),
                    ));
                }
                for (&x, &sv) in xi.iter().zip(s) {
                    if !(x > 0.0 && x.is_finite()) {
                        return Err(Error::Domain(format!("site speed must be positive: {x}")));
                    }
                    if !(sv > -1.0 && sv < 0.0) {
                        return Err(Error::Domain(format!(
                            "site parameter s must lie in (-1, 0): {sv}"
                        )));
                    }
                }
                Ok(())
            }
            SiteRule::Scaled {
                field: _,
                rb,
                eps,
                lambda,
            } => {
                if !(*eps > 0.0 && *lambda > 0.0) {
                    return Err(Error::Domain(
                        "scaled site rule requires positive mesh and jump parameter".to_string(),
                    ));
                }
                let mut cells: Vec<usize> = Vec::new();
                for e in rb.entries() {
                    let cell = (e.b / eps).floor() as usize;
                    if cell == 0 {
                        return Err(Error::Domain(format!(
                            "roadblock at {} falls into lattice cell 0; shrink the mesh",
                            e.b
                        )));
                    }
                    cells.push(cell);
                }
                cells.sort_unstable();
                if cells.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::Domain(
                        "two roadblocks share a lattice cell; shrink the mesh".to_string(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Parameters `(xi_i, s_i)` of site `i >= 1`.
    pub fn site(&self, i: usize) -> (f64, f64) {
        debug_assert!(i >= 1);
        match self {
            SiteRule::Explicit { xi, s } => {
                let k = (i - 1).min(xi.len() - 1);
                (xi[k], s[k])
            }
            SiteRule::Scaled {
                field,
                rb,
                eps,
                lambda,
            } => {
                for e in rb.entries() {
                    if (e.b / eps).floor() as usize == i {
                        let root = e.p.sqrt();
                        return (model::effective_speed(field, rb, e.b) / root, -root);
                    }
                }
                let root = (-0.5 * eps * lambda).exp();
                (field.eval_speed(i as f64 * *eps) / root, -root)
            }
        }
    }
}

/// Transition weights of the discrete-time lattice model at one site:
/// `(P(h(i) = 0), P(h(i) = 1))` given the incoming arrow and the current
/// occupancy.
pub fn discrete_weights(q: f64, u: f64, xi: f64, s: f64, eta: u64, h_prev: u8) -> (f64, f64) {
    let denom = 1.0 - xi * s * u;
    let qe = q.powi(eta.min(i32::MAX as u64) as i32);
    if h_prev == 0 {
        let p1 = -xi * s * u * (1.0 - qe) / denom;
        ((1.0 - xi * s * u * qe) / denom, p1)
    } else {
        let p1 = (s * s * qe - xi * s * u) / denom;
        ((1.0 - s * s * qe) / denom, p1)
    }
}

/// Occupation state of the lattice models on a window of sites `1..=N`
/// that grows on demand.
#[derive(Debug, Clone)]
pub struct VertexState {
    pub eta: Vec<u64>,
    pub q: QParam,
    pub xi0: f64,
    /// Bernoulli step scale; present only for the discrete-time model.
    pub u: Option<f64>,
    pub time: f64,
    pub rng_seed: u64,
    pub step_count: u64,
    rule: SiteRule,
    rng: ChaCha8Rng,
}

impl VertexState {
    pub fn new(q: QParam, xi0: f64, rule: SiteRule, u: Option<f64>, seed: u64) -> Result<Self> {
        if !(xi0 > 0.0 && xi0.is_finite()) {
            return Err(Error::Domain(format!(
                "entry rate must be positive, got {xi0}"
            )));
        }
        if let Some(uv) = u {
            if !(uv > 0.0 && uv.is_finite()) {
                return Err(Error::Domain(format!(
                    "step parameter u must be positive, got {uv}"
                )));
            }
        }
        rule.validate()?;
        Ok(VertexState {
            eta: Vec::new(),
            q,
            xi0,
            u,
            time: 0.0,
            rng_seed: seed,
            step_count: 0,
            rule,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Lattice discretization of a continuous environment, entering at the
    /// environment's boundary rate.
    pub fn scaled(
        field: &SpeedField,
        rb: &Roadblocks,
        eps: f64,
        params: &ModelParams,
        seed: u64,
    ) -> Result<Self> {
        Self::new(
            params.q,
            field.xi0(),
            SiteRule::Scaled {
                field: field.clone(),
                rb: rb.clone(),
                eps,
                lambda: params.lambda,
            },
            None,
            seed,
        )
    }

    pub fn set_stream(&mut self, stream: u64) {
        self.rng.set_stream(stream);
    }

    /// Number of particles at sites `>= site`.
    pub fn height_at(&self, site: usize) -> u64 {
        assert!(site >= 1);
        self.eta[(site - 1).min(self.eta.len())..].iter().sum()
    }

    pub fn total_particles(&self) -> u64 {
        self.eta.iter().sum()
    }

    fn site_at(&mut self, i: usize) -> u64 {
        while self.eta.len() < i {
            self.eta.push(0);
        }
        self.eta[i - 1]
    }

    /// One parallel-sequential update of the discrete-time model: an entry
    /// coin, then a left-to-right sweep of per-site moves.
    pub fn step_discrete(&mut self) -> Result<()> {
        let u = self.u.ok_or_else(|| {
            Error::Domain("step parameter u is required for the discrete-time model".to_string())
        })?;
        let q = self.q.get();
        let p_entry = self.xi0 * u / (1.0 + self.xi0 * u);
        let mut h_prev: u8 = u8::from(self.rng.gen::<f64>() < p_entry);

        // Beyond the last occupied site an update without an incoming arrow
        // acts as the identity, so the sweep can stop there.
        let last_occupied = self
            .eta
            .iter()
            .rposition(|&e| e > 0)
            .map_or(0, |k| k + 1);
        let mut i = 1usize;
        while !(h_prev == 0 && i > last_occupied) {
            let eta_i = self.site_at(i);
            let (xi, s) = self.rule.site(i);
            let (_, p1) = discrete_weights(q, u, xi, s, eta_i, h_prev);
            let h_i = u8::from(self.rng.gen::<f64>() < p1);
            debug_assert!(eta_i + u64::from(h_prev) >= u64::from(h_i));
            self.eta[i - 1] = eta_i + u64::from(h_prev) - u64::from(h_i);
            h_prev = h_i;
            i += 1;
        }
        self.time += 1.0;
        self.step_count += 1;
        Ok(())
    }

    /// One continuous-time event of the half-continuous model: a wake-up at
    /// the entry stack or at an occupied site, then a right walk flipping a
    /// pass coin with probability `s_k^2 q^{eta(k)}` at every site.
    pub fn step_halfcont(&mut self) {
        self.advance_halfcont(None);
    }

    /// Runs half-continuous events until the clock passes `t_end`.
    pub fn run_halfcont_until(&mut self, t_end: f64, max_events: u64) -> Result<()> {
        if t_end < self.time {
            return Err(Error::Domain(format!(
                "t_end = {} is before the current time {}",
                t_end, self.time
            )));
        }
        if t_end == self.time {
            return Ok(());
        }
        loop {
            if !self.advance_halfcont(Some(t_end)) {
                return Ok(());
            }
            if self.step_count > max_events {
                return Err(Error::Budget {
                    events: self.step_count,
                    time: self.time,
                });
            }
        }
    }

    fn advance_halfcont(&mut self, t_cap: Option<f64>) -> bool {
        let q = self.q.get();
        let mut rates: Vec<(usize, f64)> = vec![(0, self.xi0)];
        for (k, &e) in self.eta.iter().enumerate() {
            if e > 0 {
                let (xi, s) = self.rule.site(k + 1);
                rates.push((k + 1, xi * (-s) * one_minus_q_pow(q, e)));
            }
        }
        let total: f64 = rates.iter().map(|r| r.1).sum();
        let dt = Exp::new(total).expect("total rate is positive").sample(&mut self.rng);
        if let Some(cap) = t_cap {
            if self.time + dt > cap {
                self.time = cap;
                return false;
            }
        }
        self.time += dt;

        let mut u = self.rng.gen::<f64>() * total;
        let mut origin = rates[rates.len() - 1].0;
        for &(site, rate) in &rates {
            if u < rate {
                origin = site;
                break;
            }
            u -= rate;
        }
        if origin > 0 {
            self.eta[origin - 1] -= 1;
        }

        let mut k = origin + 1;
        loop {
            let eta_k = self.site_at(k);
            let (_, s) = self.rule.site(k);
            let pass = s * s * q.powi(eta_k.min(i32::MAX as u64) as i32);
            if self.rng.gen::<f64>() >= pass {
                self.eta[k - 1] += 1;
                break;
            }
            k += 1;
        }
        self.step_count += 1;
        true
    }
}
