//! Environment and state data model: piecewise-constant speed fields,
//! roadblocks, model parameters, and particle configurations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qspecial::QParam;

/// Piecewise-constant positive speed function on [0, infinity) with a
/// distinguished boundary value at 0.
///
/// `segment_values[k]` is the speed on `(breakpoints[k], breakpoints[k+1])`;
/// the last segment extends to infinity. The value exactly at an interior
/// breakpoint is the right-segment value, and the value at 0 is `xi0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedField {
    xi0: f64,
    breakpoints: Vec<f64>,
    segment_values: Vec<f64>,
    band: (f64, f64),
}

impl SpeedField {
    /// Builds a field, deriving the declared band from the value hull.
    pub fn new(xi0: f64, breakpoints: Vec<f64>, segment_values: Vec<f64>) -> Result<Self> {
        let lo = segment_values
            .iter()
            .chain(std::iter::once(&xi0))
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let hi = segment_values
            .iter()
            .chain(std::iter::once(&xi0))
            .cloned()
            .fold(0.0, f64::max);
        Self::with_band(xi0, breakpoints, segment_values, (lo, hi))
    }

    pub fn with_band(
        xi0: f64,
        breakpoints: Vec<f64>,
        segment_values: Vec<f64>,
        band: (f64, f64),
    ) -> Result<Self> {
        if !(band.0 > 0.0 && band.1.is_finite() && band.0 <= band.1) {
            return Err(Error::Domain(format!(
                "speed band must satisfy 0 < min <= max < infinity, got {band:?}"
            )));
        }
        if breakpoints.is_empty() || breakpoints[0] != 0.0 {
            return Err(Error::Domain(
                "breakpoints must start at 0".to_string(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain(
                "breakpoints must be strictly increasing".to_string(),
            ));
        }
        if segment_values.len() != breakpoints.len() {
            return Err(Error::Domain(format!(
                "expected one segment value per breakpoint, got {} values for {} breakpoints",
                segment_values.len(),
                breakpoints.len()
            )));
        }
        for &v in segment_values.iter().chain(std::iter::once(&xi0)) {
            if !(v >= band.0 && v <= band.1) {
                return Err(Error::Domain(format!(
                    "speed value {v} outside the declared band {band:?}"
                )));
            }
        }
        Ok(SpeedField {
            xi0,
            breakpoints,
            segment_values,
            band,
        })
    }

    /// Homogeneous field with constant speed `xi` and boundary value `xi`.
    pub fn homogeneous(xi: f64) -> Result<Self> {
        Self::new(xi, vec![0.0], vec![xi])
    }

    #[inline]
    pub fn xi0(&self) -> f64 {
        self.xi0
    }

    pub fn band(&self) -> (f64, f64) {
        self.band
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn segment_values(&self) -> &[f64] {
        &self.segment_values
    }

    /// Speed at x: `xi0` at x = 0, right-segment value elsewhere
    /// (including exactly at interior breakpoints).
    pub fn eval_speed(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0, "eval_speed requires x >= 0");
        if x == 0.0 {
            return self.xi0;
        }
        let idx = self.breakpoints.partition_point(|&b| b <= x) - 1;
        self.segment_values[idx]
    }

    /// Segments `(start, end, value)` covering `(0, x)`; the last entry is
    /// clipped at x.
    pub fn segments_until(&self, x: f64) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for (k, &b) in self.breakpoints.iter().enumerate() {
            if b >= x {
                break;
            }
            let end = self
                .breakpoints
                .get(k + 1)
                .map_or(x, |&next| next.min(x));
            out.push((b, end, self.segment_values[k]));
        }
        out
    }
}

/// A finite set of roadblocks: positions with pass probabilities and an
/// optional point override of the speed value there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roadblocks {
    entries: Vec<Roadblock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roadblock {
    pub b: f64,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_override: Option<f64>,
}

impl Roadblocks {
    pub fn none() -> Self {
        Roadblocks {
            entries: Vec::new(),
        }
    }

    pub fn new(mut entries: Vec<Roadblock>) -> Result<Self> {
        entries.sort_by(|a, b| a.b.total_cmp(&b.b));
        for e in &entries {
            if !(e.b > 0.0 && e.b.is_finite()) {
                return Err(Error::Domain(format!(
                    "roadblock position must be strictly positive, got {}",
                    e.b
                )));
            }
            if !(e.p > 0.0 && e.p < 1.0) {
                return Err(Error::Domain(format!(
                    "pass probability must lie strictly in (0, 1), got {}",
                    e.p
                )));
            }
            if let Some(v) = e.xi_override {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Domain(format!(
                        "speed override must be strictly positive, got {v}"
                    )));
                }
            }
        }
        if entries.windows(2).any(|w| w[0].b == w[1].b) {
            return Err(Error::Domain(
                "roadblock positions must be distinct".to_string(),
            ));
        }
        Ok(Roadblocks { entries })
    }

    pub fn entries(&self) -> &[Roadblock] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Roadblocks with positions strictly inside (0, x).
    pub fn before(&self, x: f64) -> &[Roadblock] {
        let n = self.entries.partition_point(|e| e.b < x);
        &self.entries[..n]
    }

    /// Roadblocks with positions strictly inside (lo, hi).
    pub fn in_range(&self, lo: f64, hi: f64) -> &[Roadblock] {
        let a = self.entries.partition_point(|e| e.b <= lo);
        let b = self.entries.partition_point(|e| e.b < hi);
        &self.entries[a..b]
    }
}

/// Speed at x honoring a roadblock point override.
pub fn effective_speed(field: &SpeedField, rb: &Roadblocks, x: f64) -> f64 {
    for e in rb.entries() {
        if e.b == x {
            return e.xi_override.unwrap_or_else(|| field.eval_speed(x));
        }
    }
    field.eval_speed(x)
}

/// Essential-range minima over (0, x).
///
/// Returns `(w_x, w_circ_x)`: `w_circ_x` is the minimum of segment values
/// whose segment meets (0, x) with positive length; `w_x` additionally
/// includes the boundary value and the (possibly overridden) speed values at
/// roadblocks strictly inside (0, x). Always `w_x <= w_circ_x`.
pub fn min_speed(field: &SpeedField, rb: &Roadblocks, x: f64) -> (f64, f64) {
    assert!(x > 0.0, "min_speed requires x > 0");
    let w_circ = field
        .segments_until(x)
        .iter()
        .map(|&(_, _, v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut w = w_circ.min(field.xi0());
    for e in rb.before(x) {
        if e.b > 0.0 {
            w = w.min(e.xi_override.unwrap_or_else(|| field.eval_speed(e.b)));
        }
    }
    (w, w_circ)
}

/// Model parameters: quantization q and jump-distance rate lambda.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub q: QParam,
    pub lambda: f64,
}

impl ModelParams {
    pub fn new(q: QParam, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!(
                "lambda must be strictly positive, got {lambda}"
            )));
        }
        Ok(ModelParams { q, lambda })
    }
}

/// One stack of particles: a position holding `count >= 1` particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stack {
    pub pos: f64,
    pub count: u64,
}

/// A finite particle configuration: stacks at strictly increasing positions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParticleConfig {
    stacks: Vec<Stack>,
}

impl ParticleConfig {
    pub fn empty() -> Self {
        ParticleConfig { stacks: Vec::new() }
    }

    pub fn from_stacks(stacks: Vec<Stack>) -> Result<Self> {
        if stacks
            .windows(2)
            .any(|w| !(w[0].pos < w[1].pos))
        {
            return Err(Error::Domain(
                "stack positions must be strictly increasing".to_string(),
            ));
        }
        if stacks.iter().any(|s| s.count == 0 || !(s.pos > 0.0)) {
            return Err(Error::Domain(
                "stacks need positive positions and counts >= 1".to_string(),
            ));
        }
        Ok(ParticleConfig { stacks })
    }

    pub fn stacks(&self) -> &[Stack] {
        &self.stacks
    }

    pub fn total_particles(&self) -> u64 {
        self.stacks.iter().map(|s| s.count).sum()
    }

    /// Index of the stack at exactly `pos`, if any.
    pub fn stack_at(&self, pos: f64) -> Option<usize> {
        self.stacks
            .binary_search_by(|s| s.pos.total_cmp(&pos))
            .ok()
    }

    /// Adds one particle at `pos`, merging into an existing stack when the
    /// position coincides exactly.
    pub fn add_particle(&mut self, pos: f64) {
        match self.stacks.binary_search_by(|s| s.pos.total_cmp(&pos)) {
            Ok(i) => self.stacks[i].count += 1,
            Err(i) => self.stacks.insert(i, Stack { pos, count: 1 }),
        }
    }

    /// Removes one particle from the stack at index `i`, dropping the stack
    /// when it empties.
    pub fn remove_one(&mut self, i: usize) {
        if self.stacks[i].count > 1 {
            self.stacks[i].count -= 1;
        } else {
            self.stacks.remove(i);
        }
    }

    /// Indices of stacks with positions strictly inside (lo, hi).
    pub fn range_indices(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let a = self.stacks.partition_point(|s| s.pos <= lo);
        let b = self.stacks.partition_point(|s| s.pos < hi);
        a..b
    }
}

/// JSON environment document: model parameters, speed field, roadblocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub q: f64,
    pub lambda: f64,
    pub xi0: f64,
    pub breakpoints: Vec<f64>,
    pub segment_values: Vec<f64>,
    #[serde(default)]
    pub roadblocks: Vec<Roadblock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<(f64, f64)>,
}

impl EnvSpec {
    pub fn build(&self) -> Result<(ModelParams, SpeedField, Roadblocks)> {
        let params = ModelParams::new(QParam::new(self.q)?, self.lambda)?;
        let field = match self.band {
            Some(band) => SpeedField::with_band(
                self.xi0,
                self.breakpoints.clone(),
                self.segment_values.clone(),
                band,
            )?,
            None => SpeedField::new(
                self.xi0,
                self.breakpoints.clone(),
                self.segment_values.clone(),
            )?,
        };
        let rb = Roadblocks::new(self.roadblocks.clone())?;
        Ok((params, field, rb))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The three-piece field with a slow boundary and a slowdown at 0.2.
    pub(crate) fn stepped_field() -> SpeedField {
        SpeedField::new(0.7, vec![0.0, 0.2], vec![1.0, 0.4]).unwrap()
    }

    #[test]
    fn eval_speed_conventions() {
        let f = stepped_field();
        assert_eq!(f.eval_speed(0.0), 0.7);
        assert_eq!(f.eval_speed(0.1), 1.0);
        assert_eq!(f.eval_speed(0.2), 0.4, "right-segment value at breakpoint");
        assert_eq!(f.eval_speed(0.3), 0.4);
        let hom = SpeedField::homogeneous(1.0).unwrap();
        assert_eq!(hom.eval_speed(7.5), 1.0);
    }

    #[test]
    fn min_speed_examples() {
        let f = stepped_field();
        let rb = Roadblocks::none();
        assert_eq!(min_speed(&f, &rb, 0.1), (0.7, 1.0));
        assert_eq!(min_speed(&f, &rb, 0.3), (0.4, 0.4));
        let hom = SpeedField::homogeneous(1.0).unwrap();
        assert_eq!(min_speed(&hom, &rb, 2.0), (1.0, 1.0));
    }

    #[test]
    fn roadblock_override_enters_w() {
        let f = SpeedField::homogeneous(1.0).unwrap();
        let rb = Roadblocks::new(vec![Roadblock {
            b: 0.5,
            p: 0.3,
            xi_override: Some(0.2),
        }])
        .unwrap();
        assert_eq!(min_speed(&f, &rb, 0.4), (1.0, 1.0), "roadblock not yet seen");
        assert_eq!(min_speed(&f, &rb, 0.5), (1.0, 1.0), "strictly before x only");
        assert_eq!(min_speed(&f, &rb, 0.6), (0.2, 1.0));
        assert_eq!(effective_speed(&f, &rb, 0.5), 0.2);
        assert_eq!(effective_speed(&f, &rb, 0.25), 1.0);
    }

    #[test]
    fn construction_rejects_bad_inputs() {
        assert!(SpeedField::new(1.0, vec![0.1], vec![1.0]).is_err());
        assert!(SpeedField::new(1.0, vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(SpeedField::new(1.0, vec![0.0], vec![]).is_err());
        assert!(SpeedField::new(1.0, vec![0.0], vec![-1.0]).is_err());
        assert!(Roadblocks::new(vec![Roadblock {
            b: 0.0,
            p: 0.5,
            xi_override: None
        }])
        .is_err());
        assert!(Roadblocks::new(vec![Roadblock {
            b: 1.0,
            p: 1.0,
            xi_override: None
        }])
        .is_err());
        assert!(ModelParams::new(QParam::new(0.5).unwrap(), 0.0).is_err());
    }
}
