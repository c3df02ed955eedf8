//! Translation-invariant stationary measures of the homogeneous models:
//! the marked-Poisson family for the continuous model and the q-binomial
//! product family for the lattice model, together with exact balance
//! checks and a ring simulation that verifies stationarity, density, and
//! current empirically.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::Serialize;

use crate::model::{ParticleConfig, SpeedField};
use crate::qspecial::{self, PochOrder, QParam};
use crate::{Error, Result};

const MARK_TAIL_TOL: f64 = 1e-14;

/// Marked Poisson measure on a window: points at rate `lambda * phi_0(c)`,
/// i.i.d. stack sizes with P(j) proportional to c^j / (1 - q^j).
#[derive(Debug, Clone, Serialize)]
pub struct MarkedPoissonSpec {
    pub c: f64,
    pub lambda: f64,
    pub window_length: f64,
}

impl MarkedPoissonSpec {
    pub fn new(c: f64, lambda: f64, window_length: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&c) {
            return Err(Error::Domain(format!("c must lie in [0, 1), got {c}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
        }
        if !(window_length > 0.0 && window_length.is_finite()) {
            return Err(Error::Domain(format!(
                "window length must be positive, got {window_length}"
            )));
        }
        Ok(MarkedPoissonSpec {
            c,
            lambda,
            window_length,
        })
    }
}

/// Product measure of the lattice model: per-site occupation with
/// P(j) = c^j (s^2; q)_j / (q; q)_j * (c; q)_inf / (c s^2; q)_inf.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteProductSpec {
    pub c: f64,
    pub s_sq: f64,
    pub window_sites: usize,
}

impl DiscreteProductSpec {
    pub fn new(c: f64, s_sq: f64, window_sites: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&c) {
            return Err(Error::Domain(format!(
                "c must lie in [0, 1) for a convergent normalization, got {c}"
            )));
        }
        if !(s_sq > 0.0 && s_sq < 1.0) {
            return Err(Error::Domain(format!("s^2 must lie in (0, 1), got {s_sq}")));
        }
        if window_sites == 0 {
            return Err(Error::Domain("window must have at least one site".to_string()));
        }
        Ok(DiscreteProductSpec {
            c,
            s_sq,
            window_sites,
        })
    }
}

/// Per-site occupation probability of the lattice product measure.
pub fn discrete_mark_pmf(j: u32, spec: &DiscreteProductSpec, q: QParam) -> f64 {
    let qv = q.get();
    let c = spec.c;
    let s_sq = spec.s_sq;
    let num = qspecial::q_pochhammer_re(s_sq, q, PochOrder::Finite(j))
        / qspecial::q_pochhammer_re(qv, q, PochOrder::Finite(j));
    let norm = qspecial::q_pochhammer_re(c, q, PochOrder::Infinite)
        / qspecial::q_pochhammer_re(c * s_sq, q, PochOrder::Infinite);
    c.powi(j as i32) * num * norm
}

/// Stack-size probability of the continuous-model marks,
/// P(j) = c^j / ((1 - q^j) * phi_0(c)) for j >= 1.
pub fn continuous_mark_pmf(j: u32, c: f64, q: QParam) -> Result<f64> {
    if j == 0 {
        return Ok(0.0);
    }
    let phi0 = qspecial::phi_re(0, c, q)?;
    Ok(c.powi(j as i32) / ((1.0 - q.get().powi(j as i32)) * phi0))
}

/// Inverse-CDF sampler of the continuous-model mark distribution,
/// truncated where the remaining tail mass drops below 1e-14.
#[derive(Debug, Clone)]
pub struct MarkTable {
    cumulative: Vec<f64>,
}

impl MarkTable {
    pub fn new(c: f64, q: QParam) -> Result<Self> {
        if !(0.0..1.0).contains(&c) {
            return Err(Error::Domain(format!("c must lie in [0, 1), got {c}")));
        }
        let qv = q.get();
        let phi0 = qspecial::phi_re(0, c, q)?;
        let mut cumulative = Vec::new();
        if c > 0.0 {
            let mut cum = 0.0;
            let mut cj = 1.0;
            let mut qj = 1.0;
            for _ in 1..=100_000 {
                cj *= c;
                qj *= qv;
                cum += cj / ((1.0 - qj) * phi0);
                cumulative.push(cum);
                // Sum_{i > j} c^i/(1 - q^i) <= c^{j+1} / ((1 - q)(1 - c)).
                if cj * c / ((1.0 - qv) * (1.0 - c) * phi0) < MARK_TAIL_TOL {
                    break;
                }
            }
        }
        Ok(MarkTable { cumulative })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        let u = rng.gen::<f64>();
        let idx = self.cumulative.partition_point(|&cum| cum <= u);
        (idx.min(self.cumulative.len() - 1) + 1) as u64
    }
}

/// Draws a marked-Poisson configuration on the window (0, L].
pub fn sample_marked_poisson(
    spec: &MarkedPoissonSpec,
    q: QParam,
    seed: u64,
) -> Result<ParticleConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_marked_poisson_with(spec, q, &mut rng)
}

fn sample_marked_poisson_with(
    spec: &MarkedPoissonSpec,
    q: QParam,
    rng: &mut ChaCha8Rng,
) -> Result<ParticleConfig> {
    if spec.c == 0.0 {
        return Ok(ParticleConfig::empty());
    }
    let rate = spec.lambda * qspecial::phi_re(0, spec.c, q)?;
    let n = Poisson::new(rate * spec.window_length)
        .expect("positive point rate")
        .sample(rng) as u64;
    let table = MarkTable::new(spec.c, q)?;
    let mut config = ParticleConfig::empty();
    for _ in 0..n {
        let pos = loop {
            let u = rng.gen::<f64>();
            if u > 0.0 {
                break u * spec.window_length;
            }
        };
        let mark = table.sample(rng);
        for _ in 0..mark {
            config.add_particle(pos);
        }
    }
    Ok(config)
}

/// Master-equation residual of the lattice stationary measure at occupancy
/// `k`: inflow from `k-1` and `k+1` minus outflow, with all rates zero below
/// occupancy zero. Exactly zero for the q-binomial product measure.
pub fn balance_residual(k: u32, c: f64, xi: f64, s: f64, q: QParam) -> f64 {
    let qv = q.get();
    let spec = DiscreteProductSpec {
        c,
        s_sq: s * s,
        window_sites: 1,
    };
    let pmf = |j: u32| discrete_mark_pmf(j, &spec, q);
    let rate_down = |j: u32| -xi * s * (1.0 - qv.powi(j as i32));
    let rate_up = |j: u32| -xi * s * c * (1.0 - s * s * qv.powi(j as i32));

    let inflow_from_below = if k == 0 { 0.0 } else { pmf(k - 1) * rate_up(k - 1) };
    let inflow_from_above = pmf(k + 1) * rate_down(k + 1);
    let outflow = pmf(k) * (rate_down(k) + rate_up(k));
    inflow_from_below + inflow_from_above - outflow
}

/// Master-equation residual of the continuous model on an interval of
/// length `dx`, exact in `dx`; the identity holds up to O(dx^2).
pub fn continuous_balance_residual(
    k: u32,
    c: f64,
    xi: f64,
    lambda: f64,
    q: QParam,
    dx: f64,
) -> Result<f64> {
    let qv = q.get();
    let phi0 = qspecial::phi_re(0, c, q)?;
    let p_gap = (-lambda * phi0 * dx).exp();
    let mark = |j: u32| c.powi(j as i32) / ((1.0 - qv.powi(j as i32)) * phi0);
    let residual = match k {
        0 => {
            -p_gap * xi * c * (1.0 - (-lambda * dx).exp())
                + (1.0 - p_gap) * mark(1) * (1.0 - qv) * xi
        }
        1 => {
            -(1.0 - p_gap)
                * mark(1)
                * (xi * c * (1.0 - qv * (-lambda * dx).exp()) + (1.0 - qv) * xi)
                + (1.0 - p_gap) * mark(2) * (1.0 - qv * qv) * xi
                + p_gap * xi * c * (1.0 - (-lambda * dx).exp())
        }
        _ => {
            let qk = qv.powi(k as i32);
            -(1.0 - p_gap) * mark(k) * (xi * c * (1.0 - qk * (-lambda * dx).exp()) + (1.0 - qk) * xi)
                + (1.0 - p_gap) * mark(k + 1) * (1.0 - qv * qk) * xi
                + (1.0 - p_gap) * mark(k - 1) * xi * c * (1.0 - qv.powi(k as i32 - 1) * (-lambda * dx).exp())
        }
    };
    Ok(residual)
}

#[derive(Debug, Clone, Serialize)]
pub struct RingObservable {
    pub est: f64,
    pub se: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RingReport {
    pub density: RingObservable,
    pub current: RingObservable,
    pub mark_chi2: f64,
    pub mark_chi2_df: usize,
    pub seeds: usize,
    pub conserved: bool,
}

struct RingRun {
    density: f64,
    current: f64,
    mark_histogram: Vec<u64>,
    conserved: bool,
}

/// Simulates the homogeneous dynamics on a ring (jumps wrap around, coins
/// applied to wrapped obstacles) from a freshly sampled marked-Poisson
/// configuration, and reports empirical density, current across a marked
/// point, and the pooled stack-size histogram against their targets.
pub fn ring_evolution(
    spec: &MarkedPoissonSpec,
    field: &SpeedField,
    q: QParam,
    t_end: f64,
    n_seeds: usize,
    master_seed: u64,
    max_events: u64,
) -> Result<RingReport> {
    if field.segment_values().len() != 1 {
        return Err(Error::Domain(
            "ring evolution requires a homogeneous speed field".to_string(),
        ));
    }
    let xi = field.segment_values()[0];
    if n_seeds == 0 {
        return Err(Error::Domain("at least one seed is required".to_string()));
    }
    let mut densities = Vec::with_capacity(n_seeds);
    let mut currents = Vec::with_capacity(n_seeds);
    let mut histogram: Vec<u64> = Vec::new();
    let mut conserved = true;
    for stream in 0..n_seeds {
        let run = ring_run(spec, xi, q, t_end, master_seed, stream as u64, max_events)?;
        densities.push(run.density);
        currents.push(run.current);
        conserved &= run.conserved;
        if run.mark_histogram.len() > histogram.len() {
            histogram.resize(run.mark_histogram.len(), 0);
        }
        for (total, count) in histogram.iter_mut().zip(&run.mark_histogram) {
            *total += count;
        }
    }

    let summarize = |values: &[f64], target: f64| {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        RingObservable {
            est: mean,
            se,
            target,
        }
    };
    let density_target = spec.lambda * qspecial::phi_re(1, spec.c, q)?;
    let current_target = xi * spec.c;

    // Chi-square of the pooled stack sizes against the mark distribution,
    // with small-expectation bins lumped into the tail.
    let total_stacks: u64 = histogram.iter().sum();
    let (mark_chi2, mark_chi2_df) = if total_stacks == 0 {
        (0.0, 0)
    } else {
        let mut chi2 = 0.0;
        let mut bins = 0usize;
        let mut tail_p = 1.0;
        let mut tail_obs = total_stacks;
        for j in 1..=histogram.len() as u32 {
            let p = continuous_mark_pmf(j, spec.c, q)?;
            let expected = total_stacks as f64 * p;
            if expected < 10.0 {
                break;
            }
            let obs = histogram[(j - 1) as usize];
            chi2 += (obs as f64 - expected).powi(2) / expected;
            bins += 1;
            tail_p -= p;
            tail_obs -= obs;
        }
        if tail_p > 0.0 && bins > 0 {
            let expected = total_stacks as f64 * tail_p;
            chi2 += (tail_obs as f64 - expected).powi(2) / expected;
            bins += 1;
        }
        (chi2, bins.saturating_sub(1))
    };

    Ok(RingReport {
        density: summarize(&densities, density_target),
        current: summarize(&currents, current_target),
        mark_chi2,
        mark_chi2_df,
        seeds: n_seeds,
        conserved,
    })
}

fn ring_run(
    spec: &MarkedPoissonSpec,
    xi: f64,
    q: QParam,
    t_end: f64,
    master_seed: u64,
    stream: u64,
    max_events: u64,
) -> Result<RingRun> {
    let ring = spec.window_length;
    let qv = q.get();
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    let mut config = sample_marked_poisson_with(spec, q, &mut rng)?;
    let initial_particles = config.total_particles();

    let mut time = 0.0;
    let mut events = 0u64;
    let mut crossings = 0u64;
    loop {
        let total_rate: f64 = config
            .stacks()
            .iter()
            .map(|s| xi * (1.0 - qv.powi(s.count.min(i32::MAX as u64) as i32)))
            .sum();
        if total_rate == 0.0 {
            break;
        }
        let dt = Exp::new(total_rate).expect("positive rate").sample(&mut rng);
        if time + dt > t_end {
            break;
        }
        time += dt;
        events += 1;
        if events > max_events {
            return Err(Error::Budget { events, time });
        }

        let mut u = rng.gen::<f64>() * total_rate;
        let mut chosen = config.stacks().len() - 1;
        for (i, s) in config.stacks().iter().enumerate() {
            let rate = xi * (1.0 - qv.powi(s.count.min(i32::MAX as u64) as i32));
            if u < rate {
                chosen = i;
                break;
            }
            u -= rate;
        }
        let origin = config.stacks()[chosen].pos;
        config.remove_one(chosen);

        let desired = Exp::new(spec.lambda)
            .expect("lambda is positive")
            .sample(&mut rng);
        let target = origin + desired;
        // Walk the obstacles along the universal cover of the ring; a stack
        // met again after a full wrap flips a fresh coin.
        let mut landing_unwrapped = target;
        let mut landing = f64::NAN;
        if !config.stacks().is_empty() {
            let stacks = config.stacks();
            let mut idx = stacks.partition_point(|s| s.pos <= origin);
            let mut wrap = 0.0;
            loop {
                if idx == stacks.len() {
                    idx = 0;
                    wrap += ring;
                }
                let z = stacks[idx].pos + wrap;
                if z >= target {
                    break;
                }
                if rng.gen::<f64>() >= qv.powi(stacks[idx].count.min(i32::MAX as u64) as i32) {
                    landing_unwrapped = z;
                    landing = stacks[idx].pos;
                    break;
                }
                idx += 1;
            }
        }
        if landing.is_nan() {
            landing = landing_unwrapped % ring;
            if landing == 0.0 {
                landing = ring;
            }
        }
        crossings += (landing_unwrapped / ring).floor() as u64;
        config.add_particle(landing);
    }

    let mut mark_histogram = Vec::new();
    for s in config.stacks() {
        let j = s.count as usize;
        if mark_histogram.len() < j {
            mark_histogram.resize(j, 0);
        }
        mark_histogram[j - 1] += 1;
    }
    Ok(RingRun {
        density: config.total_particles() as f64 / ring,
        current: crossings as f64 / t_end,
        mark_histogram,
        conserved: config.total_particles() == initial_particles,
    })
}
