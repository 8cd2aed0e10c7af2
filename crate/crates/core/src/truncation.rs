//! Truncation rules: each maps a [`Dist`] to the set of words it allows, and
//! [`truncate`] renormalizes the distribution onto that set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dist::{entropy, Dist};
use crate::error::{Error, Result};

/// Slack when testing whether a cumulative mass has reached `p`.
///
/// Without it `p = 1` can be missed by rounding and the prefix would run on
/// into zero-probability words.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleKind {
    TopK,
    TopP,
    Typical,
    Epsilon,
    Eta,
}

impl RuleKind {
    pub const ALL: [RuleKind; 5] = [
        RuleKind::TopK,
        RuleKind::TopP,
        RuleKind::Typical,
        RuleKind::Epsilon,
        RuleKind::Eta,
    ];

    /// Builds a rule of this kind from its main hyperparameter. Eta uses the
    /// automatic `alpha = sqrt(epsilon)`.
    pub fn with_param(self, value: f64) -> Result<TruncationRule> {
        match self {
            RuleKind::TopK => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::param(format!("top-k needs a positive integer, got {value}")));
                }
                TruncationRule::top_k(value as usize)
            }
            RuleKind::TopP => TruncationRule::top_p(value),
            RuleKind::Typical => TruncationRule::typical(value),
            RuleKind::Epsilon => TruncationRule::epsilon(value),
            RuleKind::Eta => TruncationRule::eta(value),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::TopK => "top-k",
            RuleKind::TopP => "top-p",
            RuleKind::Typical => "typical",
            RuleKind::Epsilon => "epsilon",
            RuleKind::Eta => "eta",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "top-k" | "topk" | "top_k" => Ok(RuleKind::TopK),
            "top-p" | "topp" | "top_p" | "nucleus" => Ok(RuleKind::TopP),
            "typical" => Ok(RuleKind::Typical),
            "epsilon" | "eps" => Ok(RuleKind::Epsilon),
            "eta" => Ok(RuleKind::Eta),
            other => Err(Error::param(format!("unknown rule kind {other:?}"))),
        }
    }
}

/// Eta's entropy-scaling constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Alpha {
    /// `sqrt(epsilon)`.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TruncationRule {
    TopK { k: usize },
    TopP { p: f64 },
    Typical { p: f64 },
    Epsilon { epsilon: f64 },
    Eta { epsilon: f64, alpha: Alpha },
}

impl TruncationRule {
    pub fn top_k(k: usize) -> Result<Self> {
        TruncationRule::TopK { k }.validated()
    }

    pub fn top_p(p: f64) -> Result<Self> {
        TruncationRule::TopP { p }.validated()
    }

    pub fn typical(p: f64) -> Result<Self> {
        TruncationRule::Typical { p }.validated()
    }

    pub fn epsilon(epsilon: f64) -> Result<Self> {
        TruncationRule::Epsilon { epsilon }.validated()
    }

    pub fn eta(epsilon: f64) -> Result<Self> {
        TruncationRule::Eta {
            epsilon,
            alpha: Alpha::Auto,
        }
        .validated()
    }

    pub fn eta_with_alpha(epsilon: f64, alpha: f64) -> Result<Self> {
        TruncationRule::Eta {
            epsilon,
            alpha: Alpha::Fixed(alpha),
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// Checks hyperparameter ranges. `k <= V` is checked at application time.
    pub fn validate(&self) -> Result<()> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        let half_open_unit = |x: f64| x > 0.0 && x <= 1.0;
        match *self {
            TruncationRule::TopK { k: 0 } => Err(Error::param("top-k needs k >= 1")),
            TruncationRule::TopP { p } | TruncationRule::Typical { p } if !half_open_unit(p) => {
                Err(Error::param(format!("p must be in (0, 1], got {p}")))
            }
            TruncationRule::Epsilon { epsilon } | TruncationRule::Eta { epsilon, .. } if !open_unit(epsilon) => {
                Err(Error::param(format!("epsilon must be in (0, 1), got {epsilon}")))
            }
            TruncationRule::Eta {
                alpha: Alpha::Fixed(a), ..
            } if !half_open_unit(a) => Err(Error::param(format!("alpha must be in (0, 1], got {a}"))),
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> RuleKind {
        match self {
            TruncationRule::TopK { .. } => RuleKind::TopK,
            TruncationRule::TopP { .. } => RuleKind::TopP,
            TruncationRule::Typical { .. } => RuleKind::Typical,
            TruncationRule::Epsilon { .. } => RuleKind::Epsilon,
            TruncationRule::Eta { .. } => RuleKind::Eta,
        }
    }

    /// The rule's main hyperparameter (k, p or epsilon).
    pub fn param(&self) -> f64 {
        match *self {
            TruncationRule::TopK { k } => k as f64,
            TruncationRule::TopP { p } | TruncationRule::Typical { p } => p,
            TruncationRule::Epsilon { epsilon } | TruncationRule::Eta { epsilon, .. } => epsilon,
        }
    }

    /// Eta's effective alpha; `None` for other kinds.
    pub fn effective_alpha(&self) -> Option<f64> {
        match *self {
            TruncationRule::Eta { epsilon, alpha } => Some(match alpha {
                Alpha::Auto => epsilon.sqrt(),
                Alpha::Fixed(a) => a,
            }),
            _ => None,
        }
    }

    pub fn allowed(&self, d: &Dist) -> Result<AllowedSet> {
        self.validate()?;
        let mut set = match *self {
            TruncationRule::TopK { k } => allowed_top_k(d, k)?,
            TruncationRule::TopP { p } => allowed_top_p(d, p)?,
            TruncationRule::Typical { p } => allowed_typical(d, p)?,
            TruncationRule::Epsilon { epsilon } => allowed_epsilon(d, epsilon)?,
            TruncationRule::Eta { epsilon, .. } => {
                allowed_eta(d, epsilon, self.effective_alpha().unwrap_or(epsilon.sqrt()))?
            }
        };
        set.rule = Some(*self);
        Ok(set)
    }

    /// Allowed set and renormalized distribution in one step.
    pub fn apply(&self, d: &Dist) -> Result<(AllowedSet, Dist)> {
        let set = self.allowed(d)?;
        let truncated = truncate(d, &set)?;
        Ok((set, truncated))
    }
}

impl fmt::Display for TruncationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TruncationRule::TopK { k } => write!(f, "top-k:{k}"),
            TruncationRule::TopP { p } => write!(f, "top-p:{p}"),
            TruncationRule::Typical { p } => write!(f, "typical:{p}"),
            TruncationRule::Epsilon { epsilon } => write!(f, "epsilon:{epsilon}"),
            TruncationRule::Eta {
                epsilon,
                alpha: Alpha::Auto,
            } => write!(f, "eta:{epsilon}"),
            TruncationRule::Eta {
                epsilon,
                alpha: Alpha::Fixed(a),
            } => write!(f, "eta:{epsilon}:{a}"),
        }
    }
}

/// Parses `kind:param`, or `eta:epsilon:alpha`.
impl FromStr for TruncationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let kind: RuleKind = parts.next().unwrap_or_default().parse()?;
        let num = |text: Option<&str>| -> Result<f64> {
            let text = text.ok_or_else(|| Error::param(format!("rule {s:?} is missing a parameter")))?;
            text.parse()
                .map_err(|_| Error::param(format!("bad number {text:?} in rule {s:?}")))
        };
        let value = num(parts.next())?;
        let rule = match (kind, parts.next()) {
            (RuleKind::Eta, Some(alpha)) => TruncationRule::eta_with_alpha(value, num(Some(alpha))?)?,
            (_, None) => kind.with_param(value)?,
            (_, Some(_)) => return Err(Error::param(format!("too many fields in rule {s:?}"))),
        };
        if parts.next().is_some() {
            return Err(Error::param(format!("too many fields in rule {s:?}")));
        }
        Ok(rule)
    }
}

/// Membership mask over the vocabulary plus the probability mass it keeps.
#[derive(Clone, Debug, PartialEq)]
pub struct AllowedSet {
    mask: Vec<bool>,
    kept_mass: f64,
    rule: Option<TruncationRule>,
}

impl AllowedSet {
    /// Allowed set from an explicit mask; `kept_mass` is taken from `d`.
    pub fn from_mask(d: &Dist, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != d.len() {
            return Err(Error::SizeMismatch {
                expected: d.len(),
                actual: mask.len(),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyAllowedSet);
        }
        let kept_mass = kept_mass(d, &mask);
        Ok(AllowedSet {
            mask,
            kept_mass,
            rule: None,
        })
    }

    fn from_ids(d: &Dist, ids: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = vec![false; d.len()];
        for i in ids {
            mask[i] = true;
        }
        let kept_mass = kept_mass(d, &mask);
        AllowedSet {
            mask,
            kept_mass,
            rule: None,
        }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn kept_mass(&self) -> f64 {
        self.kept_mass
    }

    pub fn rule(&self) -> Option<&TruncationRule> {
        self.rule.as_ref()
    }

    /// Number of allowed words.
    pub fn size(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.mask.get(id as usize).copied().unwrap_or(false)
    }

    pub fn members(&self) -> Vec<u32> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn is_subset_of(&self, other: &AllowedSet) -> bool {
        self.mask.len() == other.mask.len() && self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }
}

fn kept_mass(d: &Dist, mask: &[bool]) -> f64 {
    d.probs().iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| p).sum()
}

/// Renormalizes `d` onto the words allowed by `a`.
pub fn truncate(d: &Dist, a: &AllowedSet) -> Result<Dist> {
    if a.mask.len() != d.len() {
        return Err(Error::SizeMismatch {
            expected: d.len(),
            actual: a.mask.len(),
        });
    }
    let z = kept_mass(d, &a.mask);
    if !a.mask.iter().any(|&m| m) || z <= 0.0 {
        return Err(Error::EmptyAllowedSet);
    }
    let probs = d
        .probs()
        .iter()
        .zip(&a.mask)
        .map(|(&p, &m)| if m { p / z } else { 0.0 })
        .collect();
    Dist::new(probs)
}

/// Ids sorted by descending probability, lower id first on ties.
fn by_descending_prob(d: &Dist) -> Vec<usize> {
    let probs = d.probs();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

/// Shortest prefix of `order` whose mass reaches `p`. Zero-probability words
/// are never taken.
fn covering_prefix(d: &Dist, order: &[usize], p: f64) -> AllowedSet {
    let probs = d.probs();
    let mut cum = 0.0;
    let mut taken = 0;
    for &i in order {
        if probs[i] <= 0.0 {
            break;
        }
        cum += probs[i];
        taken += 1;
        if cum >= p - MASS_TOLERANCE {
            break;
        }
    }
    AllowedSet::from_ids(d, order[..taken.max(1)].iter().copied())
}

pub fn allowed_top_k(d: &Dist, k: usize) -> Result<AllowedSet> {
    if k == 0 || k > d.len() {
        return Err(Error::param(format!("k = {k} outside 1..={}", d.len())));
    }
    let order = by_descending_prob(d);
    Ok(AllowedSet::from_ids(d, order[..k].iter().copied()))
}

pub fn allowed_top_p(d: &Dist, p: f64) -> Result<AllowedSet> {
    TruncationRule::TopP { p }.validate()?;
    Ok(covering_prefix(d, &by_descending_prob(d), p))
}

/// Locally typical set: words ordered by `|h + ln p(x)|`, taken until they
/// cover mass `p`.
pub fn allowed_typical(d: &Dist, p: f64) -> Result<AllowedSet> {
    TruncationRule::Typical { p }.validate()?;
    let h = entropy(d);
    let keys: Vec<f64> = d
        .probs()
        .iter()
        .map(|&q| if q > 0.0 { (h + q.ln()).abs() } else { f64::INFINITY })
        .collect();
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    Ok(covering_prefix(d, &order, p))
}

fn above_threshold(d: &Dist, threshold: f64) -> AllowedSet {
    let ids = d
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, &q)| q > threshold)
        .map(|(i, _)| i);
    let set = AllowedSet::from_ids(d, ids);
    if set.size() == 0 {
        AllowedSet::from_ids(d, [d.argmax() as usize])
    } else {
        set
    }
}

/// Words with probability strictly above `epsilon`; the argmax alone when
/// nothing clears the bar.
pub fn allowed_epsilon(d: &Dist, epsilon: f64) -> Result<AllowedSet> {
    TruncationRule::Epsilon { epsilon }.validate()?;
    Ok(above_threshold(d, epsilon))
}

/// The eta threshold `min(epsilon, alpha * exp(-h))` for `d`.
pub fn eta_threshold(d: &Dist, epsilon: f64, alpha: f64) -> f64 {
    epsilon.min(alpha * (-entropy(d)).exp())
}

/// Words with probability strictly above [`eta_threshold`].
pub fn allowed_eta(d: &Dist, epsilon: f64, alpha: f64) -> Result<AllowedSet> {
    TruncationRule::Eta {
        epsilon,
        alpha: Alpha::Fixed(alpha),
    }
    .validate()?;
    // Only alpha = 1 on an exactly uniform distribution can leave this empty;
    // above_threshold then keeps the argmax.
    Ok(above_threshold(d, eta_threshold(d, epsilon, alpha)))
}
