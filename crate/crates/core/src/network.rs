//! Two-layer ReLU network with a frozen second layer.
//!
//! The first layer is stored as a `rows x 2d` matrix. Rows `0..w_rows` form
//! the W block (nonzero only on the x1 columns), the remaining rows form the V
//! block (nonzero only on the x2 columns). With `patches = k > 1` the rows are
//! shared filters applied to `k` cyclic patches of each block, giving
//! `m = rows * k` hidden units; `patches = 1` is the plain block-dense model.
//! Hidden unit `p * rows + c` is channel `c` on patch `p`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distribution::{Dataset, Example};
use crate::error::{invalid, Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub d: usize,
    pub patches: usize,
    pub w_rows: usize,
    pub u: Vec<f64>,
    pub weights: Array2<f64>,
}

/// Shape of a network before its weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arch {
    pub m: usize,
    pub d: usize,
    pub patches: usize,
    /// Fraction of channels assigned to the W block.
    pub w_fraction: f64,
}

impl Arch {
    pub fn dense(m: usize, d: usize) -> Self {
        Arch {
            m,
            d,
            patches: 1,
            w_fraction: 0.5,
        }
    }

    fn validate(&self) -> Result<(usize, usize)> {
        if self.m < 2 || !self.m.is_multiple_of(2) {
            return Err(invalid("m", format!("width must be even and >= 2, got {}", self.m)));
        }
        if self.d < 1 {
            return Err(invalid("d", "need d >= 1"));
        }
        let k = self.patches;
        if k == 0 || !self.d.is_multiple_of(k) || !self.m.is_multiple_of(k) {
            return Err(invalid("k", format!("patch count {k} must divide d={} and m={}", self.d, self.m)));
        }
        let rows = self.m / k;
        let w_rows = (rows as f64 * self.w_fraction).round() as usize;
        if w_rows == 0 || w_rows >= rows {
            return Err(invalid("w_fraction", "both W and V blocks need at least one row"));
        }
        Ok((rows, w_rows))
    }
}

pub fn init_network(m: usize, d: usize, tau0: f64, rng: &mut SimRng) -> Result<Network> {
    init_with(Arch::dense(m, d), tau0, rng)
}

/// In-block weights i.i.d. `N(0, tau0^2)` drawn row-major, then `u` entries
/// i.i.d. uniform on `{-1/sqrt(m), +1/sqrt(m)}`.
pub fn init_with(arch: Arch, tau0: f64, rng: &mut SimRng) -> Result<Network> {
    if !(tau0 > 0.0 && tau0.is_finite()) {
        return Err(invalid("tau0", format!("need tau0 > 0, got {tau0}")));
    }
    let (rows, w_rows) = arch.validate()?;
    let d = arch.d;
    let mut weights = Array2::zeros((rows, 2 * d));
    for i in 0..rows {
        let off = if i < w_rows { 0 } else { d };
        for j in 0..d {
            weights[[i, off + j]] = tau0 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mag = 1.0 / (arch.m as f64).sqrt();
    let u = (0..arch.m)
        .map(|_| if rng.random::<bool>() { mag } else { -mag })
        .collect();
    Ok(Network {
        d,
        patches: arch.patches,
        w_rows,
        u,
        weights,
    })
}

pub fn relu(t: f64) -> f64 {
    if t >= 0.0 { t } else { 0.0 }
}

/// `log(1 + exp(-y f))` without overflow.
pub fn logistic_loss(f: f64, y: f64) -> f64 {
    let t = -y * f;
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `d loss / d f = -y * sigmoid(-y f)`.
pub fn loss_derivative(f: f64, y: f64) -> f64 {
    -y * sigmoid_neg_margin(y * f)
}

/// `1 / (1 + exp(margin))`, i.e. `|loss_derivative|` at margin `y f`.
pub fn sigmoid_neg_margin(margin: f64) -> f64 {
    if margin >= 0.0 {
        let e = (-margin).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + margin.exp())
    }
}

impl Network {
    pub fn m(&self) -> usize {
        self.u.len()
    }

    pub fn rows(&self) -> usize {
        self.weights.nrows()
    }

    pub fn stride(&self) -> usize {
        self.d / self.patches
    }

    /// True when `(row, col)` of the parameter matrix is inside its block.
    pub fn in_block(&self, row: usize, col: usize) -> bool {
        (row < self.w_rows) == (col < self.d)
    }

    pub fn zeros_like(&self) -> Array2<f64> {
        Array2::zeros(self.weights.raw_dim())
    }

    /// Max-abs of out-of-block entries of `a`.
    pub fn off_block_max(&self, a: &Array2<f64>) -> f64 {
        let d = self.d;
        let w = a.slice(s![..self.w_rows, d..]).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let v = a.slice(s![self.w_rows.., ..d]).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        w.max(v)
    }

    fn check_matrix(&self, a: &Array2<f64>, what: &str) -> Result<()> {
        if a.dim() != self.weights.dim() {
            return Err(Error::Shape(format!(
                "{what}: expected {:?}, got {:?}",
                self.weights.dim(),
                a.dim()
            )));
        }
        Ok(())
    }

    /// Coordinate `j` of the 2d-vector `x` as seen by patch `p`.
    fn patch(&self, x: &[f64], p: usize, j: usize) -> f64 {
        let d = self.d;
        let b = j / d;
        let jj = j % d;
        x[b * d + (jj + p * self.stride()) % d]
    }

    fn row_dot(&self, a: &Array2<f64>, row: usize, x: &[f64], p: usize) -> f64 {
        let mut acc = 0.0;
        for j in 0..2 * self.d {
            acc += a[[row, j]] * self.patch(x, p, j);
        }
        acc
    }

    /// `N_A(u, B; x) = sum_i u_i 1(<A_i, x> >= 0) <B_i, x>` over all hidden units.
    pub fn forward_pattern(&self, pattern: &Array2<f64>, weights: &Array2<f64>, x: &[f64]) -> Result<f64> {
        self.check_matrix(pattern, "pattern source")?;
        self.check_matrix(weights, "weights")?;
        if x.len() != 2 * self.d {
            return Err(Error::Shape(format!("input length {} != 2d = {}", x.len(), 2 * self.d)));
        }
        let rows = self.rows();
        let mut out = 0.0;
        for p in 0..self.patches {
            for c in 0..rows {
                if self.row_dot(pattern, c, x, p) >= 0.0 {
                    out += self.u[p * rows + c] * self.row_dot(weights, c, x, p);
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.forward_pattern(&self.weights, &self.weights, x)
    }

    pub fn forward_example(&self, ex: &Example) -> f64 {
        self.r_component(&ex.x1) + self.g_component(&ex.x2)
    }

    /// Activation pattern `sigma(A x)` over all `m` hidden units.
    pub fn pattern(&self, a: &Array2<f64>, x: &[f64]) -> Vec<bool> {
        let rows = self.rows();
        let mut bits = vec![false; self.m()];
        for p in 0..self.patches {
            for c in 0..rows {
                bits[p * rows + c] = self.row_dot(a, c, x, p) >= 0.0;
            }
        }
        bits
    }

    fn block_component(&self, block: usize, xb: &[f64]) -> f64 {
        let d = self.d;
        let rows = self.rows();
        let (lo, hi) = if block == 0 { (0, self.w_rows) } else { (self.w_rows, rows) };
        let col = block * d;
        let mut out = 0.0;
        for p in 0..self.patches {
            let shift = p * self.stride();
            for c in lo..hi {
                let mut pre = 0.0;
                for j in 0..d {
                    pre += self.weights[[c, col + j]] * xb[(j + shift) % d];
                }
                out += self.u[p * rows + c] * relu(pre);
            }
        }
        out
    }

    /// `g = N_V(v, V; x2)`: the V-block part of the output.
    pub fn g_component(&self, x2: &[f64]) -> f64 {
        self.block_component(1, x2)
    }

    /// `r = N_W(w, W; x1)`: the W-block part of the output.
    pub fn r_component(&self, x1: &[f64]) -> f64 {
        self.block_component(0, x1)
    }
}

/// Dataset packed into dense matrices, one rolled copy per patch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub n: usize,
    pub y: Vec<f64>,
    pub idx1: Vec<usize>,
    pub idx2: Vec<usize>,
    x1: Vec<Array2<f64>>,
    x2: Vec<Array2<f64>>,
}

fn pack(examples: &[Example], idx: &[usize], block: usize, d: usize, patches: usize) -> Vec<Array2<f64>> {
    let stride = d / patches;
    (0..patches)
        .map(|p| {
            let mut x = Array2::zeros((idx.len(), d));
            for (r, &i) in idx.iter().enumerate() {
                let src = if block == 0 { &examples[i].x1 } else { &examples[i].x2 };
                for j in 0..d {
                    x[[r, j]] = src[(j + p * stride) % d];
                }
            }
            x
        })
        .collect()
}

impl Batch {
    pub fn new(examples: &[Example], d: usize, patches: usize) -> Self {
        let idx1: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].has_x1()).collect();
        let idx2: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].has_x2()).collect();
        Batch {
            n: examples.len(),
            y: examples.iter().map(|e| e.y).collect(),
            x1: pack(examples, &idx1, 0, d, patches),
            x2: pack(examples, &idx2, 1, d, patches),
            idx1,
            idx2,
        }
    }

    pub fn for_network(data: &Dataset, net: &Network) -> Self {
        Self::new(&data.examples, net.d, net.patches)
    }

    /// Batch of arbitrary x1 vectors (no x2 block), labels set to +1.
    pub fn from_x1(xs: &[Vec<f64>], d: usize, patches: usize) -> Self {
        let examples: Vec<Example> = xs
            .iter()
            .map(|x1| Example {
                x1: x1.clone(),
                x2: vec![0.0; d],
                y: 1.0,
                kind: crate::distribution::Kind::POnly,
                q_direction: crate::distribution::QDirection::None,
                alpha: 0.0,
            })
            .collect();
        Self::new(&examples, d, patches)
    }
}

/// Per-example block outputs plus the pre-activations needed for the gradient.
#[derive(Debug, Clone)]
pub struct Forward {
    pub r: Vec<f64>,
    pub g: Vec<f64>,
    pre_w: Vec<Array2<f64>>,
    pre_v: Vec<Array2<f64>>,
}

impl Forward {
    pub fn output(&self, j: usize) -> f64 {
        self.r[j] + self.g[j]
    }

    pub fn outputs(&self) -> Vec<f64> {
        self.r.iter().zip(&self.g).map(|(a, b)| a + b).collect()
    }
}

impl Network {
    /// Batched forward with `weights` (same shape as `self.weights`) under
    /// their own activation pattern. `noise`, when given, is added to every
    /// pre-activation (one value per hidden unit, shared across the batch).
    pub fn forward_batch(&self, weights: ArrayView2<f64>, batch: &Batch, noise: Option<&[f64]>) -> Forward {
        let d = self.d;
        let rows = self.rows();
        let wr = self.w_rows;
        let wmat = weights.slice(s![..wr, ..d]);
        let vmat = weights.slice(s![wr.., d..]);
        let mut r = vec![0.0; batch.n];
        let mut g = vec![0.0; batch.n];
        let mut pre_w = Vec::with_capacity(self.patches);
        let mut pre_v = Vec::with_capacity(self.patches);

        for p in 0..self.patches {
            let uw = &self.u[p * rows..p * rows + wr];
            let uv = &self.u[p * rows + wr..(p + 1) * rows];
            let mut pw = batch.x1[p].dot(&wmat.t());
            let mut pv = batch.x2[p].dot(&vmat.t());
            if let Some(xi) = noise {
                let xw = &xi[p * rows..p * rows + wr];
                let xv = &xi[p * rows + wr..(p + 1) * rows];
                for mut row in pw.rows_mut() {
                    row.iter_mut().zip(xw).for_each(|(a, b)| *a += b);
                }
                for mut row in pv.rows_mut() {
                    row.iter_mut().zip(xv).for_each(|(a, b)| *a += b);
                }
            }
            for (jj, row) in pw.rows().into_iter().enumerate() {
                r[batch.idx1[jj]] += row.iter().zip(uw).map(|(a, b)| b * relu(*a)).sum::<f64>();
            }
            for (jj, row) in pv.rows().into_iter().enumerate() {
                g[batch.idx2[jj]] += row.iter().zip(uv).map(|(a, b)| b * relu(*a)).sum::<f64>();
            }
            // with pre-activation noise, absent blocks still fire on the noise alone
            if let Some(xi) = noise {
                let cw: f64 = xi[p * rows..p * rows + wr].iter().zip(uw).map(|(a, b)| b * relu(*a)).sum();
                let cv: f64 = xi[p * rows + wr..(p + 1) * rows].iter().zip(uv).map(|(a, b)| b * relu(*a)).sum();
                add_to_missing(&mut r, &batch.idx1, cw);
                add_to_missing(&mut g, &batch.idx2, cv);
            }
            pre_w.push(pw);
            pre_v.push(pv);
        }
        Forward { r, g, pre_w, pre_v }
    }

    /// Gradient of `sum_j coef_j * f(x_j)` with respect to the parameter matrix,
    /// using the pattern stored in `fwd`. Out-of-block entries are zero.
    pub fn gradient_batch(&self, batch: &Batch, fwd: &Forward, coef: &[f64]) -> Array2<f64> {
        let d = self.d;
        let rows = self.rows();
        let wr = self.w_rows;
        let mut grad = self.zeros_like();
        for p in 0..self.patches {
            let uw = &self.u[p * rows..p * rows + wr];
            let uv = &self.u[p * rows + wr..(p + 1) * rows];
            let sw = masked_coef(&fwd.pre_w[p], &batch.idx1, coef, uw);
            let sv = masked_coef(&fwd.pre_v[p], &batch.idx2, coef, uv);
            {
                let mut gw = grad.slice_mut(s![..wr, ..d]);
                general_mat_mul(1.0, &sw.t(), &batch.x1[p], 1.0, &mut gw);
            }
            {
                let mut gv = grad.slice_mut(s![wr.., d..]);
                general_mat_mul(1.0, &sv.t(), &batch.x2[p], 1.0, &mut gv);
            }
        }
        grad
    }
}

fn add_to_missing(out: &mut [f64], present: &[usize], c: f64) {
    let mut it = present.iter().peekable();
    for (j, v) in out.iter_mut().enumerate() {
        if it.peek() == Some(&&j) {
            it.next();
        } else {
            *v += c;
        }
    }
}

fn masked_coef(pre: &Array2<f64>, idx: &[usize], coef: &[f64], u: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros(pre.raw_dim());
    for (jj, (prow, mut orow)) in pre.rows().into_iter().zip(out.rows_mut()).enumerate() {
        let cj = coef[idx[jj]];
        if cj == 0.0 {
            continue;
        }
        for ((o, &a), &ui) in orow.iter_mut().zip(prow.iter()).zip(u) {
            if a >= 0.0 {
                *o = cj * ui;
            }
        }
    }
    out
}

/// Mean loss over `subset` (all examples when `None`) and the per-example
/// coefficients `loss'(f_j) / |subset|` of its gradient.
pub fn loss_and_coef(outputs: &[f64], y: &[f64], subset: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
    let mut coef = vec![0.0; outputs.len()];
    let all: Vec<usize>;
    let idx = match subset {
        Some(s) => s,
        None => {
            all = (0..outputs.len()).collect();
            &all
        }
    };
    if idx.is_empty() {
        return Err(Error::EmptySubset("loss subset"));
    }
    let inv = 1.0 / idx.len() as f64;
    let mut loss = 0.0;
    for &j in idx {
        loss += logistic_loss(outputs[j], y[j]);
        coef[j] = loss_derivative(outputs[j], y[j]) * inv;
    }
    Ok((loss * inv, coef))
}

pub fn mean_loss(outputs: &[f64], y: &[f64], subset: Option<&[usize]>) -> Result<f64> {
    let all: Vec<usize>;
    let idx = match subset {
        Some(s) => s,
        None => {
            all = (0..outputs.len()).collect();
            &all
        }
    };
    if idx.is_empty() {
        return Err(Error::EmptySubset("loss subset"));
    }
    Ok(idx.iter().map(|&j| logistic_loss(outputs[j], y[j])).sum::<f64>() / idx.len() as f64)
}

pub fn batch_loss(net: &Network, data: &Dataset, subset: Option<&[usize]>) -> Result<f64> {
    let batch = Batch::for_network(data, net);
    let fwd = net.forward_batch(net.weights.view(), &batch, None);
    mean_loss(&fwd.outputs(), &batch.y, subset)
}

pub fn frobenius_sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

pub fn regularized_loss(net: &Network, data: &Dataset, lambda: f64) -> Result<f64> {
    Ok(batch_loss(net, data, None)? + 0.5 * lambda * frobenius_sq(&net.weights))
}

/// Gradient of the mean (unregularized) loss over `subset`.
pub fn gradient(net: &Network, data: &Dataset, subset: Option<&[usize]>) -> Result<Array2<f64>> {
    let batch = Batch::for_network(data, net);
    let fwd = net.forward_batch(net.weights.view(), &batch, None);
    let (_, coef) = loss_and_coef(&fwd.outputs(), &batch.y, subset)?;
    Ok(net.gradient_batch(&batch, &fwd, &coef))
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    m: usize,
    d: usize,
    #[serde(default = "one")]
    patches: usize,
    #[serde(default)]
    w_rows: Option<usize>,
    u: Vec<f64>,
    #[serde(rename = "U")]
    weights: Vec<f64>,
}

fn one() -> usize {
    1
}

impl Network {
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(NetworkDoc {
            m: self.m(),
            d: self.d,
            patches: self.patches,
            w_rows: Some(self.w_rows),
            u: self.u.clone(),
            weights: self.weights.iter().copied().collect(),
        })
        .expect("network serializes")
    }

    pub fn to_json(&self) -> String {
        self.to_json_value().to_string()
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_value(v)?;
        let k = doc.patches.max(1);
        if !doc.m.is_multiple_of(k) || doc.u.len() != doc.m {
            return Err(Error::Shape("u length must equal m and be divisible by patches".into()));
        }
        let rows = doc.m / k;
        let weights = Array2::from_shape_vec((rows, 2 * doc.d), doc.weights)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let w_rows = doc.w_rows.unwrap_or(rows / 2);
        let net = Network {
            d: doc.d,
            patches: k,
            w_rows,
            u: doc.u,
            weights,
        };
        if net.off_block_max(&net.weights) != 0.0 {
            return Err(invalid("U", "out-of-block entries must be zero"));
        }
        Ok(net)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_json_value(serde_json::from_str(s)?)
    }
}
