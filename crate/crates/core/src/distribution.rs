//! The two-pattern synthetic distribution.
//!
//! Each example carries up to two blocks: `x1` from the linearly separable but
//! noisy P pattern (half-Gaussians with a margin along `w_star`), and `x2` from
//! the low-noise Q pattern supported on the three directions `z - zeta`, `z`,
//! `z + zeta` with a random scaling. Labels are `+1` for `z`, `-1` otherwise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::SimRng;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn random_unit(rng: &mut SimRng, dim: usize, support: std::ops::Range<usize>) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    loop {
        for x in &mut v[support.clone()] {
            *x = rng.sample(StandardNormal);
        }
        let n = norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionParams {
    pub d: usize,
    pub kappa: f64,
    pub p0: f64,
    pub q0: f64,
    pub gamma0: f64,
    pub r: f64,
    pub w_star: Vec<f64>,
    pub z: Vec<f64>,
    pub zeta: Vec<f64>,
}

/// Optional replacements for the asymptotic defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    #[serde(default)]
    pub p0: Option<f64>,
    #[serde(default)]
    pub q0: Option<f64>,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub gamma0: Option<f64>,
    /// Restrict `z` and `zeta` to the last `q_support` coordinates of the x2
    /// block (the convolutional variant needs `q_support = d / k`).
    #[serde(default)]
    pub q_support: Option<usize>,
}

/// Builds the generative constants. Defaults: `p0 = kappa^2 / 2`,
/// `r = d^{-3/4}`, `gamma0 = 1 / sqrt(d)`.
pub fn make_params(
    d: usize,
    kappa: f64,
    q0: f64,
    overrides: &ParamOverrides,
    seed: u64,
) -> Result<DistributionParams> {
    if d < 2 {
        return Err(invalid("d", format!("need d >= 2, got {d}")));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(invalid("kappa", format!("need 0 < kappa <= 1, got {kappa}")));
    }
    let df = d as f64;
    let p0 = overrides.p0.unwrap_or(kappa * kappa / 2.0);
    let q0 = overrides.q0.unwrap_or(q0);
    let r = overrides.r.unwrap_or(df.powf(-0.75));
    let gamma0 = overrides.gamma0.unwrap_or(1.0 / df.sqrt());
    let support = overrides.q_support.unwrap_or(d);

    if !(0.0..1.0).contains(&p0) || !(0.0..1.0).contains(&q0) {
        return Err(invalid("p0/q0", format!("probabilities must lie in [0,1): p0={p0}, q0={q0}")));
    }
    if p0 + q0 >= 1.0 {
        return Err(invalid("p0/q0", format!("p0 + q0 = {} must be < 1", p0 + q0)));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(invalid("r", format!("need 0 < r < 1, got {r}")));
    }
    if !(gamma0 > 0.0 && gamma0.is_finite()) {
        return Err(invalid("gamma0", format!("need gamma0 > 0, got {gamma0}")));
    }
    if support < 2 || support > d {
        return Err(invalid("q_support", format!("need 2 <= q_support <= d, got {support}")));
    }

    let mut rng = crate::rng::stream(seed, crate::rng::Stream::Params);
    let w_star = random_unit(&mut rng, d, 0..d);
    let q_range = d - support..d;
    let z = random_unit(&mut rng, d, q_range.clone());
    let zeta = loop {
        let mut e = random_unit(&mut rng, d, q_range.clone());
        // two Gram-Schmidt passes bring <z, e> down to rounding level
        for _ in 0..2 {
            let c = dot(&e, &z);
            e.iter_mut().zip(&z).for_each(|(a, b)| *a -= c * b);
        }
        let n = norm(&e);
        if n > 1e-6 {
            break e.into_iter().map(|x| x / n * r).collect::<Vec<_>>();
        }
    };

    Ok(DistributionParams {
        d,
        kappa,
        p0,
        q0,
        gamma0,
        r,
        w_star,
        z,
        zeta,
    })
}

impl DistributionParams {
    /// Sample count implied by `N / d = 1 / kappa^2`.
    pub fn implied_n(&self) -> usize {
        (self.d as f64 / (self.kappa * self.kappa)).round() as usize
    }

    pub fn check(&self) -> Result<()> {
        let d = self.d;
        if self.w_star.len() != d || self.z.len() != d || self.zeta.len() != d {
            return Err(invalid("w_star/z/zeta", "vector lengths must equal d"));
        }
        if (norm(&self.w_star) - 1.0).abs() > 1e-12 {
            return Err(invalid("w_star", "must be a unit vector"));
        }
        if (norm(&self.z) - 1.0).abs() > 1e-12 {
            return Err(invalid("z", "must be a unit vector"));
        }
        if dot(&self.z, &self.zeta).abs() > 1e-12 * self.r {
            return Err(invalid("zeta", "must be orthogonal to z"));
        }
        if (norm(&self.zeta) - self.r).abs() > 1e-12 * self.r {
            return Err(invalid("zeta", "norm must equal r"));
        }
        if self.p0 + self.q0 >= 1.0 {
            return Err(invalid("p0/q0", "p0 + q0 must be < 1"));
        }
        Ok(())
    }

    /// `z + b * zeta` for the given direction (zero vector for `None`).
    pub fn q_vector(&self, dir: QDirection) -> Vec<f64> {
        match dir.offset() {
            Some(b) => self.z.iter().zip(&self.zeta).map(|(z, e)| z + b * e).collect(),
            None => vec![0.0; self.d],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    POnly,
    QOnly,
    Both,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::POnly => "POnly",
            Kind::QOnly => "QOnly",
            Kind::Both => "Both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QDirection {
    Minus,
    Center,
    Plus,
    None,
}

impl QDirection {
    /// The `b` in `z + b * zeta`.
    pub fn offset(self) -> Option<f64> {
        match self {
            QDirection::Minus => Some(-1.0),
            QDirection::Center => Some(0.0),
            QDirection::Plus => Some(1.0),
            QDirection::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub y: f64,
    pub kind: Kind,
    pub q_direction: QDirection,
    pub alpha: f64,
}

impl Example {
    /// The 2d-dimensional concatenation `[x1; x2]`.
    pub fn concat(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.x1.len() * 2);
        x.extend_from_slice(&self.x1);
        x.extend_from_slice(&self.x2);
        x
    }

    pub fn has_x1(&self) -> bool {
        self.x1.iter().any(|&v| v != 0.0)
    }

    pub fn has_x2(&self) -> bool {
        self.x2.iter().any(|&v| v != 0.0)
    }

    /// Checks the per-example invariants against `params`.
    pub fn check(&self, params: &DistributionParams) -> Result<()> {
        if self.y != 1.0 && self.y != -1.0 {
            return Err(invalid("y", "label must be +1 or -1"));
        }
        match self.kind {
            Kind::POnly if self.has_x2() => return Err(invalid("kind", "POnly example with x2 != 0")),
            Kind::QOnly if self.has_x1() => return Err(invalid("kind", "QOnly example with x1 != 0")),
            _ => {}
        }
        if self.has_x1() && self.y * dot(&params.w_star, &self.x1) < params.gamma0 {
            return Err(invalid("x1", "margin y<w*, x1> >= gamma0 violated"));
        }
        match self.q_direction {
            QDirection::Center if self.y != 1.0 => return Err(invalid("q_direction", "Center must have y=+1")),
            QDirection::Minus | QDirection::Plus if self.y != -1.0 => {
                return Err(invalid("q_direction", "Minus/Plus must have y=-1"))
            }
            _ => {}
        }
        if let Some(b) = self.q_direction.offset() {
            let exact = self
                .x2
                .iter()
                .zip(params.z.iter().zip(&params.zeta))
                .all(|(x, (z, e))| *x == self.alpha * (z + b * e));
            if !exact {
                return Err(invalid("x2", "x2 != alpha * (z + b * zeta)"));
            }
        } else if self.has_x2() || self.alpha != 0.0 {
            return Err(invalid("x2", "no Q direction but x2 or alpha nonzero"));
        }
        Ok(())
    }
}

/// Draws `x1 ~ P_y`: `y * gamma0 * w_star + z'` with `z' ~ N(0, I/d)` reflected
/// across the hyperplane orthogonal to `w_star` when it falls on the wrong side.
pub fn sample_p(params: &DistributionParams, y: f64, rng: &mut SimRng) -> Vec<f64> {
    let d = params.d;
    let scale = 1.0 / (d as f64).sqrt();
    let w = &params.w_star;
    let mut x: Vec<f64> = (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    let proj = dot(w, &x);
    if y * proj < 0.0 {
        x.iter_mut().zip(w).for_each(|(a, b)| *a -= 2.0 * proj * b);
    }
    x.iter_mut().zip(w).for_each(|(a, b)| *a += y * params.gamma0 * b);
    // rounding can leave the margin a few ulps short
    loop {
        let margin = y * dot(w, &x);
        if margin >= params.gamma0 {
            return x;
        }
        let fix = (params.gamma0 - margin) + f64::EPSILON * params.gamma0;
        x.iter_mut().zip(w).for_each(|(a, b)| *a += y * fix * b);
    }
}

/// Draws `x2 ~ Q_y`, returning the direction and scaling used.
pub fn sample_q(params: &DistributionParams, y: f64, rng: &mut SimRng) -> (Vec<f64>, QDirection, f64) {
    let alpha = loop {
        let a: f64 = rng.random();
        if a > 0.0 {
            break a;
        }
    };
    let dir = if y > 0.0 {
        QDirection::Center
    } else if rng.random::<bool>() {
        QDirection::Plus
    } else {
        QDirection::Minus
    };
    let b = dir.offset().unwrap();
    let x2 = params
        .z
        .iter()
        .zip(&params.zeta)
        .map(|(z, e)| alpha * (z + b * e))
        .collect();
    (x2, dir, alpha)
}

pub fn sample_example(params: &DistributionParams, rng: &mut SimRng) -> Example {
    let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let u: f64 = rng.random();
    let kind = if u < params.p0 {
        Kind::POnly
    } else if u < params.p0 + params.q0 {
        Kind::QOnly
    } else {
        Kind::Both
    };
    let d = params.d;
    let x1 = match kind {
        Kind::QOnly => vec![0.0; d],
        _ => sample_p(params, y, rng),
    };
    let (x2, q_direction, alpha) = match kind {
        Kind::POnly => (vec![0.0; d], QDirection::None, 0.0),
        _ => sample_q(params, y, rng),
    };
    Example {
        x1,
        x2,
        y,
        kind,
        q_direction,
        alpha,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub m1: Vec<usize>,
    pub m1_bar: Vec<usize>,
    pub m2: Vec<usize>,
    pub m2_bar: Vec<usize>,
    pub p_emp: f64,
    pub q_emp: f64,
}

impl Dataset {
    pub fn from_examples(examples: Vec<Example>) -> Self {
        let (mut m1, mut m1_bar, mut m2, mut m2_bar) = (vec![], vec![], vec![], vec![]);
        for (i, ex) in examples.iter().enumerate() {
            if ex.has_x1() { m1.push(i) } else { m1_bar.push(i) }
            if ex.has_x2() { m2.push(i) } else { m2_bar.push(i) }
        }
        let n = examples.len().max(1) as f64;
        let p_emp = m2_bar.len() as f64 / n;
        let q_emp = m1_bar.len() as f64 / n;
        Dataset {
            examples,
            m1,
            m1_bar,
            m2,
            m2_bar,
            p_emp,
            q_emp,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.x1.len())
    }

    pub fn max_norm(&self) -> f64 {
        self.examples
            .iter()
            .map(|e| (dot(&e.x1, &e.x1) + dot(&e.x2, &e.x2)).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn indices_of(&self, kind: Kind) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.examples[i].kind == kind).collect()
    }
}

pub fn generate_dataset(params: &DistributionParams, n: usize, rng: &mut SimRng) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("n", "dataset size must be >= 1"));
    }
    let examples = (0..n).map(|_| sample_example(params, rng)).collect();
    Ok(Dataset::from_examples(examples))
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    params: DistributionParams,
    examples: Vec<Example>,
}

#[derive(Serialize)]
struct DatasetDocRef<'a> {
    params: &'a DistributionParams,
    examples: &'a [Example],
}

pub fn dataset_to_json(params: &DistributionParams, data: &Dataset) -> Result<String> {
    Ok(serde_json::to_string(&DatasetDocRef {
        params,
        examples: &data.examples,
    })?)
}

pub fn dataset_from_json(s: &str) -> Result<(DistributionParams, Dataset)> {
    let doc: DatasetDoc = serde_json::from_str(s)?;
    doc.params.check()?;
    for ex in &doc.examples {
        if ex.x1.len() != doc.params.d || ex.x2.len() != doc.params.d {
            return Err(invalid("examples", "block length differs from d"));
        }
    }
    Ok((doc.params, Dataset::from_examples(doc.examples)))
}
