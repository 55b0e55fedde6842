//! Job-size and interarrival laws.
//!
//! Three families are supported: Pareto (the heavy-tailed workhorse), exponential
//! and deterministic. Besides sampling, every law exposes its mean, tail and
//! residual (integrated-tail) function in closed form, and [`OrderStatLaw`]
//! extends those to the `n_J`-th order statistic of a replica vector.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Replica size vectors are short; keep them inline.
pub type Sizes = SmallVec<[f64; 8]>;

/// Draw from the half-open interval (0, 1].
#[inline]
pub fn uniform_open0<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mean {
    Finite(f64),
    Infinite,
}

impl Mean {
    pub fn finite(self) -> Option<f64> {
        match self {
            Mean::Finite(m) => Some(m),
            Mean::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Mean::Infinite)
    }
}

impl fmt::Display for Mean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mean::Finite(m) => write!(f, "{m}"),
            Mean::Infinite => f.write_str("infinite"),
        }
    }
}

/// Heavy-tail class tags. Membership is declared per family, not tested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailClass {
    /// Regularly varying with the given (negative) index.
    RegularlyVarying(f64),
    LongTailed,
    DominatedVarying,
    Subexponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Pareto { shape: f64, scale: f64 },
    Exponential { rate: f64 },
    Deterministic { value: f64 },
}

impl Distribution {
    pub fn pareto(shape: f64, scale: f64) -> Result<Self> {
        Distribution::Pareto { shape, scale }.validated()
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Distribution::Exponential { rate }.validated()
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        Distribution::Deterministic { value }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let ok = match self {
            Distribution::Pareto { shape, scale } => {
                shape.is_finite() && scale.is_finite() && shape > 0.0 && scale > 0.0
            }
            Distribution::Exponential { rate } => rate.is_finite() && rate > 0.0,
            Distribution::Deterministic { value } => value.is_finite() && value >= 0.0,
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::config(format!("invalid parameters for {self}")))
        }
    }

    /// Inverse-transform draw.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Pareto { .. } | Distribution::Exponential { .. } => {
                self.quantile_of_upper(uniform_open0(rng))
            }
            Distribution::Deterministic { value } => value,
        }
    }

    /// Maps `u = P(B > x)` in (0, 1] back to `x`. `u = 1` yields the lower end of the support.
    #[inline]
    pub fn quantile_of_upper(&self, u: f64) -> f64 {
        match *self {
            Distribution::Pareto { shape, scale } => scale * u.powf(-1.0 / shape),
            Distribution::Exponential { rate } => -u.ln() / rate,
            Distribution::Deterministic { value } => value,
        }
    }

    pub fn mean(&self) -> Mean {
        match *self {
            Distribution::Pareto { shape, scale } => {
                if shape > 1.0 {
                    Mean::Finite(shape * scale / (shape - 1.0))
                } else {
                    Mean::Infinite
                }
            }
            Distribution::Exponential { rate } => Mean::Finite(1.0 / rate),
            Distribution::Deterministic { value } => Mean::Finite(value),
        }
    }

    /// `P(B > x)`.
    pub fn ccdf(&self, x: f64) -> f64 {
        match *self {
            Distribution::Pareto { shape, scale } => {
                if x < scale {
                    1.0
                } else {
                    (scale / x).powf(shape)
                }
            }
            Distribution::Exponential { rate } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-rate * x).exp()
                }
            }
            Distribution::Deterministic { value } => {
                if x < value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫_x^∞ P(B > y) dy` for `x >= 0`; `None` when it diverges.
    pub fn integrated_tail(&self, x: f64) -> Option<f64> {
        let x = x.max(0.0);
        match *self {
            Distribution::Pareto { shape, scale } => {
                if shape <= 1.0 {
                    return None;
                }
                if x <= scale {
                    Some(scale - x + scale / (shape - 1.0))
                } else {
                    Some(scale.powf(shape) * x.powf(1.0 - shape) / (shape - 1.0))
                }
            }
            Distribution::Exponential { rate } => Some((-rate * x).exp() / rate),
            Distribution::Deterministic { value } => Some((value - x).max(0.0)),
        }
    }

    /// Residual-life tail `P(B^res > x) = (1/E[B]) ∫_x^∞ P(B > y) dy`.
    pub fn residual_ccdf(&self, x: f64) -> Result<f64> {
        if x < 0.0 || x.is_nan() {
            return Err(Error::domain(format!("residual tail needs x >= 0, got {x}")));
        }
        let mean = self
            .mean()
            .finite()
            .ok_or_else(|| Error::domain(format!("{self} has infinite mean; residual law undefined")))?;
        if mean == 0.0 {
            return Ok(if x == 0.0 { 1.0 } else { 0.0 });
        }
        match *self {
            // Closed forms avoid the cancellation in integrated_tail / mean near x = 0.
            Distribution::Pareto { shape, scale } if x > scale => Ok((scale / x).powf(shape - 1.0) / shape),
            // the tail is 1 on [0, x_m]
            Distribution::Pareto { .. } => Ok(1.0 - x / mean),
            Distribution::Exponential { rate } => Ok((-rate * x).exp()),
            _ => Ok(self.integrated_tail(x).expect("finite mean") / mean),
        }
    }

    /// Regular-variation index `-ν` of the tail, if any.
    pub fn tail_index(&self) -> Option<f64> {
        match *self {
            Distribution::Pareto { shape, .. } => Some(-shape),
            _ => None,
        }
    }

    /// Tag set following the inclusion chain RV ⊂ L ∩ D ⊂ S.
    pub fn declared_classes(&self) -> Vec<TailClass> {
        match *self {
            Distribution::Pareto { shape, .. } => vec![
                TailClass::RegularlyVarying(-shape),
                TailClass::LongTailed,
                TailClass::DominatedVarying,
                TailClass::Subexponential,
            ],
            _ => Vec::new(),
        }
    }

    pub fn has_class(&self, class: TailClass) -> bool {
        self.declared_classes().iter().any(|c| match (c, class) {
            (TailClass::RegularlyVarying(_), TailClass::RegularlyVarying(_)) => true,
            (a, b) => *a == b,
        })
    }

    /// The same law with every time value multiplied by `c`.
    pub fn rescaled(&self, c: f64) -> Self {
        match *self {
            Distribution::Pareto { shape, scale } => Distribution::Pareto { shape, scale: scale * c },
            Distribution::Exponential { rate } => Distribution::Exponential { rate: rate / c },
            Distribution::Deterministic { value } => Distribution::Deterministic { value: value * c },
        }
    }

    /// Law of `B^m`-th power of the tail, i.e. the minimum of `m` iid copies.
    fn tail_power(&self, m: u32) -> Self {
        let m = m as f64;
        match *self {
            Distribution::Pareto { shape, scale } => Distribution::Pareto { shape: shape * m, scale },
            Distribution::Exponential { rate } => Distribution::Exponential { rate: rate * m },
            d @ Distribution::Deterministic { .. } => d,
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Pareto { shape, scale } => write!(f, "pareto{{nu={shape}, xm={scale}}}"),
            Distribution::Exponential { rate } => write!(f, "exp{{rate={rate}}}"),
            Distribution::Deterministic { value } => write!(f, "det{{value={value}}}"),
        }
    }
}

/// Parses `1.5`, `2e-3` or a fraction such as `1/3`.
fn parse_number(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a number: `{s}`"));
    if let Some((num, den)) = s.split_once('/') {
        let num: f64 = num.trim().parse().map_err(|_| bad())?;
        let den: f64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0.0 {
            return Err(bad());
        }
        Ok(num / den)
    } else {
        s.parse().map_err(|_| bad())
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let err = |msg: &str| Error::Parse(format!("distribution literal `{s}`: {msg}"));
        let open = s.find('{').ok_or_else(|| err("expected `kind{key=value, ...}`"))?;
        if !s.ends_with('}') {
            return Err(err("missing closing brace"));
        }
        let kind = s[..open].trim();
        let body = &s[open + 1..s.len() - 1];
        let mut params: Vec<(&str, f64)> = Vec::new();
        for part in body.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| err("expected key=value"))?;
            params.push((k.trim(), parse_number(v)?));
        }
        let get = |key: &str| -> Result<f64> {
            params
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| err(&format!("missing parameter `{key}`")))
        };
        let expect_keys = |keys: &[&str]| -> Result<()> {
            match params.iter().find(|(k, _)| !keys.contains(k)) {
                Some((k, _)) => Err(err(&format!("unknown parameter `{k}`"))),
                None => Ok(()),
            }
        };
        let dist = match kind {
            "pareto" => {
                expect_keys(&["nu", "xm"])?;
                Distribution::Pareto { shape: get("nu")?, scale: get("xm")? }
            }
            "exp" => {
                expect_keys(&["rate"])?;
                Distribution::Exponential { rate: get("rate")? }
            }
            "det" => {
                expect_keys(&["value"])?;
                Distribution::Deterministic { value: get("value")? }
            }
            other => return Err(err(&format!("unknown kind `{other}`"))),
        };
        dist.validated()
    }
}

impl TryFrom<String> for Distribution {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Distribution> for String {
    fn from(d: Distribution) -> String {
        d.to_string()
    }
}

impl Serialize for Distribution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Distribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicaDependence {
    /// Every replica carries the same size.
    Identical,
    /// Replica sizes are mutually independent.
    Iid,
}

impl fmt::Display for ReplicaDependence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReplicaDependence::Identical => "identical",
            ReplicaDependence::Iid => "iid",
        })
    }
}

/// Fills `out` with `n` replica sizes.
pub fn draw_replicas<R: Rng + ?Sized>(
    dist: &Distribution,
    dep: ReplicaDependence,
    n: usize,
    rng: &mut R,
    out: &mut Sizes,
) {
    out.clear();
    match dep {
        ReplicaDependence::Identical => {
            let b = dist.sample(rng);
            out.extend(std::iter::repeat_n(b, n));
        }
        ReplicaDependence::Iid => out.extend((0..n).map(|_| dist.sample(rng))),
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Law of `B_(n_J)`, the `n_J`-th smallest of `n_F` replica sizes.
///
/// For iid replicas the tail is a signed finite sum of powers of the marginal
/// tail, `P(B_(n_J) > y) = Σ_m c_m P(B > y)^m`, so mean and residual tail stay
/// in closed form for every supported family.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderStatLaw {
    base: Distribution,
    /// `(coefficient, power)` pairs; powers start at `n_F - n_J + 1`.
    terms: Vec<(f64, u32)>,
}

impl OrderStatLaw {
    pub fn new(base: Distribution, dep: ReplicaDependence, n_fork: u32, n_join: u32) -> Result<Self> {
        if n_fork == 0 || n_join == 0 || n_join > n_fork {
            return Err(Error::config(format!(
                "order statistic needs 1 <= n_J <= n_F, got n_F={n_fork}, n_J={n_join}"
            )));
        }
        let terms = match (dep, base) {
            (ReplicaDependence::Identical, _) | (_, Distribution::Deterministic { .. }) => vec![(1.0, 1)],
            (ReplicaDependence::Iid, _) => {
                // At least r = n_F - n_J + 1 of the n_F replicas exceed y.
                let r = n_fork - n_join + 1;
                (r..=n_fork)
                    .map(|m| {
                        let c: f64 = (r..=m)
                            .map(|j| {
                                let sign = if (m - j) % 2 == 0 { 1.0 } else { -1.0 };
                                sign * binomial(n_fork, j) * binomial(n_fork - j, m - j)
                            })
                            .sum();
                        (c, m)
                    })
                    .filter(|(c, _)| *c != 0.0)
                    .collect()
            }
        };
        Ok(OrderStatLaw { base, terms })
    }

    pub fn base(&self) -> &Distribution {
        &self.base
    }

    /// When the law is itself one of the supported families (identical replicas, or the minimum).
    pub fn as_distribution(&self) -> Option<Distribution> {
        match self.terms.as_slice() {
            [(c, m)] if *c == 1.0 => Some(self.base.tail_power(*m)),
            _ => None,
        }
    }

    pub fn ccdf(&self, x: f64) -> f64 {
        let p = self.base.ccdf(x);
        self.terms.iter().map(|&(c, m)| c * p.powi(m as i32)).sum::<f64>().clamp(0.0, 1.0)
    }

    pub fn mean(&self) -> Mean {
        let mut total = 0.0;
        for &(c, m) in &self.terms {
            match self.base.tail_power(m).mean() {
                Mean::Finite(v) => total += c * v,
                Mean::Infinite => return Mean::Infinite,
            }
        }
        Mean::Finite(total)
    }

    pub fn residual_ccdf(&self, x: f64) -> Result<f64> {
        if let Some(d) = self.as_distribution() {
            return d.residual_ccdf(x);
        }
        if x < 0.0 || x.is_nan() {
            return Err(Error::domain(format!("residual tail needs x >= 0, got {x}")));
        }
        let mean = self
            .mean()
            .finite()
            .ok_or_else(|| Error::domain("order statistic has infinite mean; residual law undefined"))?;
        let integral: f64 = self
            .terms
            .iter()
            .map(|&(c, m)| c * self.base.tail_power(m).integrated_tail(x).unwrap_or(f64::INFINITY))
            .sum();
        Ok((integral / mean).clamp(0.0, 1.0))
    }

    /// Regular-variation index `-(n_F + 1 - n_J)ν` (iid) or `-ν` (identical).
    pub fn tail_index(&self) -> Option<f64> {
        let (_, m) = self.terms.first()?;
        self.base.tail_index().map(|i| i * *m as f64)
    }

    /// Constant `L` in `P(B_(n_J) > x) ~ L x^{index}` for Pareto marginals.
    pub fn tail_constant(&self) -> Option<f64> {
        let &(c, m) = self.terms.first()?;
        match self.base {
            Distribution::Pareto { shape, scale } => Some(c * scale.powf(shape * m as f64)),
            _ => None,
        }
    }

    pub fn is_regularly_varying(&self) -> bool {
        self.base.tail_index().is_some()
    }
}
