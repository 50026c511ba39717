//! Quantities tracked along a run: subset losses, the Q almost-linearity gap,
//! the loss-derivative mass on Q-carrying examples, activation coupling
//! between the full and noise-only weights, and the antisymmetric span fit of
//! the P classifier.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::distribution::{dot, norm, sample_example, Dataset, DistributionParams, Example, Kind, QDirection};
use crate::error::{Error, Result};
use crate::network::{logistic_loss, mean_loss, sigmoid_neg_margin, Batch, Forward, Network};
use crate::rng::SimRng;

/// JSON has no NaN; non-finite values travel as `null`.
pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// One row of a run trace. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: u64,
    #[serde(with = "nan_as_null")]
    pub lr: f64,
    #[serde(with = "nan_as_null")]
    pub train_loss: f64,
    #[serde(with = "nan_as_null")]
    pub reg_loss: f64,
    pub loss_m1_r: Option<f64>,
    pub loss_m1bar_g: Option<f64>,
    pub loss_m2bar: Option<f64>,
    #[serde(with = "nan_as_null")]
    pub rho: f64,
    #[serde(with = "nan_as_null")]
    pub almost_lin: f64,
    #[serde(with = "nan_as_null")]
    pub u_bar_fro: f64,
    #[serde(with = "nan_as_null")]
    pub w_bar_fro: f64,
    #[serde(with = "nan_as_null")]
    pub v_bar_fro: f64,
    #[serde(with = "nan_as_null")]
    pub hamming_frac: f64,
    #[serde(with = "nan_as_null")]
    pub test_err: f64,
    #[serde(with = "nan_as_null")]
    pub test_loss: f64,
    pub test_err_p_only: Option<f64>,
    pub test_err_q_only: Option<f64>,
    pub test_err_both: Option<f64>,
    pub span_residual: Option<f64>,
    pub alpha_norm: Option<f64>,
}

pub const TRACE_COLUMNS: [&str; 20] = [
    "t",
    "lr",
    "train_loss",
    "reg_loss",
    "loss_m1_r",
    "loss_m1bar_g",
    "loss_m2bar",
    "rho",
    "almost_lin",
    "u_bar_fro",
    "w_bar_fro",
    "v_bar_fro",
    "hamming_frac",
    "test_err",
    "test_loss",
    "test_err_p_only",
    "test_err_q_only",
    "test_err_both",
    "span_residual",
    "alpha_norm",
];

/// Shortest round-trip decimal; `nan` for NaN.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn parse_num(s: &str) -> std::result::Result<f64, String> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| format!("bad number `{s}`")),
    }
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() { Ok(None) } else { parse_num(s).map(Some) }
}

impl MetricsRecord {
    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.t.to_string(),
            fmt_num(self.lr),
            fmt_num(self.train_loss),
            fmt_num(self.reg_loss),
            fmt_opt(self.loss_m1_r),
            fmt_opt(self.loss_m1bar_g),
            fmt_opt(self.loss_m2bar),
            fmt_num(self.rho),
            fmt_num(self.almost_lin),
            fmt_num(self.u_bar_fro),
            fmt_num(self.w_bar_fro),
            fmt_num(self.v_bar_fro),
            fmt_num(self.hamming_frac),
            fmt_num(self.test_err),
            fmt_num(self.test_loss),
            fmt_opt(self.test_err_p_only),
            fmt_opt(self.test_err_q_only),
            fmt_opt(self.test_err_both),
            fmt_opt(self.span_residual),
            fmt_opt(self.alpha_norm),
        ]
    }

    pub fn from_row(row: &[&str]) -> std::result::Result<Self, String> {
        if row.len() != TRACE_COLUMNS.len() {
            return Err(format!("expected {} columns, got {}", TRACE_COLUMNS.len(), row.len()));
        }
        Ok(MetricsRecord {
            t: row[0].parse().map_err(|_| format!("bad t `{}`", row[0]))?,
            lr: parse_num(row[1])?,
            train_loss: parse_num(row[2])?,
            reg_loss: parse_num(row[3])?,
            loss_m1_r: parse_opt(row[4])?,
            loss_m1bar_g: parse_opt(row[5])?,
            loss_m2bar: parse_opt(row[6])?,
            rho: parse_num(row[7])?,
            almost_lin: parse_num(row[8])?,
            u_bar_fro: parse_num(row[9])?,
            w_bar_fro: parse_num(row[10])?,
            v_bar_fro: parse_num(row[11])?,
            hamming_frac: parse_num(row[12])?,
            test_err: parse_num(row[13])?,
            test_loss: parse_num(row[14])?,
            test_err_p_only: parse_opt(row[15])?,
            test_err_q_only: parse_opt(row[16])?,
            test_err_both: parse_opt(row[17])?,
            span_residual: parse_opt(row[18])?,
            alpha_norm: parse_opt(row[19])?,
        })
    }
}

/// `|g(z + zeta) + g(z - zeta) - 2 g(z)|`; zero iff g is affine across the
/// three Q directions.
pub fn almost_linearity(net: &Network, params: &DistributionParams) -> f64 {
    let gp = net.g_component(&params.q_vector(QDirection::Plus));
    let gm = net.g_component(&params.q_vector(QDirection::Minus));
    let gc = net.g_component(&params.q_vector(QDirection::Center));
    (gp + gm - 2.0 * gc).abs()
}

/// `(1/N) sum_{j in M2} |loss'(f_j)|` from precomputed outputs.
pub fn rho_from_outputs(outputs: &[f64], data: &Dataset) -> f64 {
    let n = data.len() as f64;
    data.m2
        .iter()
        .map(|&j| sigmoid_neg_margin(data.examples[j].y * outputs[j]))
        .sum::<f64>()
        / n
}

pub fn rho(net: &Network, data: &Dataset) -> f64 {
    let outputs: Vec<f64> = data.examples.iter().map(|e| net.forward_example(e)).collect();
    rho_from_outputs(&outputs, data)
}

/// Mean over `probe` of the fraction of hidden units whose activation differs
/// between pattern sources `a` and `b`.
pub fn activation_hamming(net: &Network, a: &Array2<f64>, b: &Array2<f64>, probe: &[Vec<f64>]) -> Result<f64> {
    if probe.is_empty() {
        return Err(Error::EmptySubset("hamming probe"));
    }
    if a.dim() != net.weights.dim() || b.dim() != net.weights.dim() {
        return Err(Error::Shape("pattern sources must match the parameter matrix".into()));
    }
    let m = net.m() as f64;
    let total: f64 = probe
        .iter()
        .map(|x| {
            let pa = net.pattern(a, x);
            let pb = net.pattern(b, x);
            pa.iter().zip(&pb).filter(|(p, q)| p != q).count() as f64 / m
        })
        .sum();
    Ok(total / probe.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetLosses {
    pub loss_m1_r: Option<f64>,
    pub loss_m1bar_g: Option<f64>,
    pub loss_m2: Option<f64>,
    pub loss_m2bar: Option<f64>,
}

fn subset_mean(idx: &[usize], f: impl Fn(usize) -> f64) -> Option<f64> {
    if idx.is_empty() {
        None
    } else {
        Some(idx.iter().map(|&j| f(j)).sum::<f64>() / idx.len() as f64)
    }
}

/// Subset losses from per-example block outputs `r` and `g`.
pub fn subset_losses_from(r: &[f64], g: &[f64], data: &Dataset) -> SubsetLosses {
    let y = |j: usize| data.examples[j].y;
    SubsetLosses {
        loss_m1_r: subset_mean(&data.m1, |j| logistic_loss(r[j], y(j))),
        loss_m1bar_g: subset_mean(&data.m1_bar, |j| logistic_loss(g[j], y(j))),
        loss_m2: subset_mean(&data.m2, |j| logistic_loss(r[j] + g[j], y(j))),
        loss_m2bar: subset_mean(&data.m2_bar, |j| logistic_loss(r[j] + g[j], y(j))),
    }
}

pub fn subset_losses(net: &Network, data: &Dataset) -> SubsetLosses {
    let r: Vec<f64> = data.examples.iter().map(|e| net.r_component(&e.x1)).collect();
    let g: Vec<f64> = data.examples.iter().map(|e| net.g_component(&e.x2)).collect();
    subset_losses_from(&r, &g, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginProfile {
    pub min: f64,
    pub median: f64,
    /// Fraction with `y * g(x2) <= 0`.
    pub violation_frac: f64,
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Normalized Q margins `y * g(x2) / ||x2||` over examples carrying x2.
pub fn margin_profile(net: &Network, q_examples: &[Example]) -> Result<MarginProfile> {
    if q_examples.is_empty() {
        return Err(Error::EmptySubset("margin profile examples"));
    }
    let mut ratios = Vec::with_capacity(q_examples.len());
    let mut bad = 0usize;
    for ex in q_examples {
        let n = norm(&ex.x2);
        if n == 0.0 {
            return Err(Error::InvalidParam {
                name: "q_examples",
                reason: "every example needs x2 != 0".into(),
            });
        }
        let m = ex.y * net.g_component(&ex.x2);
        if m <= 0.0 {
            bad += 1;
        }
        ratios.push(m / n);
    }
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let med = median(&mut ratios);
    Ok(MarginProfile {
        min,
        median: med,
        violation_frac: bad as f64 / q_examples.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanFit {
    pub residual_frac: f64,
    pub alpha: Vec<f64>,
    pub alpha_norm: f64,
    /// Set when the normal equations needed the 1e-10 ridge.
    pub ridged: bool,
}

/// Fits the antisymmetric part `h(x) = (r(x) - r(-x)) / 2` of the P classifier
/// on `probe` by `<alpha, x>` with `alpha` restricted to the span of the P-only
/// training inputs.
pub fn antisym_span_residual(net: &Network, data: &Dataset, probe: &[Vec<f64>]) -> Result<SpanFit> {
    let basis: Vec<&Vec<f64>> = data.m2_bar.iter().map(|&i| &data.examples[i].x1).collect();
    if basis.is_empty() {
        return Err(Error::EmptySubset("P-only training examples"));
    }
    if probe.is_empty() {
        return Err(Error::EmptySubset("span probe"));
    }
    let d = net.d;
    let neg: Vec<Vec<f64>> = probe.iter().map(|x| x.iter().map(|v| -v).collect()).collect();
    let pos_b = Batch::from_x1(probe, d, net.patches);
    let neg_b = Batch::from_x1(&neg, d, net.patches);
    let rp = net.forward_batch(net.weights.view(), &pos_b, None).r;
    let rn = net.forward_batch(net.weights.view(), &neg_b, None).r;
    let h = DVector::from_iterator(probe.len(), rp.iter().zip(&rn).map(|(a, b)| 0.5 * (a - b)));
    let h_norm = h.norm();
    if h_norm == 0.0 {
        return Ok(SpanFit {
            residual_frac: 0.0,
            alpha: vec![0.0; d],
            alpha_norm: 0.0,
            ridged: false,
        });
    }

    let nb = basis.len();
    // design: A[i, k] = <probe_i, basis_k>
    let a = DMatrix::from_fn(probe.len(), nb, |i, k| dot(&probe[i], basis[k]));
    let mut gram = a.transpose() * &a;
    let rhs = a.transpose() * &h;
    let (beta, ridged) = match gram.clone().cholesky() {
        Some(ch) if nb <= d => (ch.solve(&rhs), false),
        _ => {
            let scale = gram.diagonal().max().max(1.0);
            for i in 0..nb {
                gram[(i, i)] += 1e-10 * scale;
            }
            let ch = gram
                .cholesky()
                .ok_or_else(|| Error::Shape("normal equations not positive definite".into()))?;
            (ch.solve(&rhs), true)
        }
    };
    let fit = &a * &beta;
    let residual_frac = (&h - fit).norm() / h_norm;
    let mut alpha = vec![0.0; d];
    for (k, b) in basis.iter().enumerate() {
        alpha.iter_mut().zip(b.iter()).for_each(|(al, x)| *al += beta[k] * x);
    }
    let alpha_norm = norm(&alpha);
    Ok(SpanFit {
        residual_frac,
        alpha,
        alpha_norm,
        ridged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub test_err: f64,
    pub test_loss: f64,
    pub test_err_p_only: Option<f64>,
    pub test_err_q_only: Option<f64>,
    pub test_err_both: Option<f64>,
}

/// Error counts `y * f <= 0` as a mistake.
pub fn evaluate_outputs(outputs: &[f64], data: &Dataset) -> Evaluation {
    let wrong = |j: usize| if data.examples[j].y * outputs[j] <= 0.0 { 1.0 } else { 0.0 };
    let all: Vec<usize> = (0..data.len()).collect();
    let by_kind = |k: Kind| subset_mean(&data.indices_of(k), wrong);
    let y: Vec<f64> = data.examples.iter().map(|e| e.y).collect();
    Evaluation {
        test_err: subset_mean(&all, wrong).unwrap_or(f64::NAN),
        test_loss: mean_loss(outputs, &y, None).unwrap_or(f64::NAN),
        test_err_p_only: by_kind(Kind::POnly),
        test_err_q_only: by_kind(Kind::QOnly),
        test_err_both: by_kind(Kind::Both),
    }
}

pub fn evaluate(net: &Network, test: &Dataset) -> Evaluation {
    let batch = Batch::for_network(test, net);
    let fwd = net.forward_batch(net.weights.view(), &batch, None);
    evaluate_outputs(&fwd.outputs(), test)
}

/// Number of probe inputs used for hamming coupling.
pub const HAMMING_PROBE: usize = 64;

/// Fixed evaluation context for one run: held-out set, coupling probe and the
/// span-fit probe.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub params: DistributionParams,
    pub test: Dataset,
    test_batch: Batch,
    pub probe: Vec<Vec<f64>>,
    pub span_probe: Vec<Vec<f64>>,
    /// Compute the span fit at every record instead of only the last one.
    pub span_every_record: bool,
}

impl Monitor {
    pub fn new(params: DistributionParams, test: Dataset, train: &Dataset, patches: usize, probe_rng: &mut SimRng) -> Self {
        let probe = test.examples.iter().take(HAMMING_PROBE).map(|e| e.concat()).collect();
        let n_span = (10 * train.m2_bar.len()).max(512);
        let mut span_probe = Vec::with_capacity(n_span);
        // x1 ~ marginal of P: keep only draws that carry an x1 block
        let p_only = DistributionParams {
            p0: 1.0 - f64::EPSILON,
            q0: 0.0,
            ..params.clone()
        };
        while span_probe.len() < n_span {
            let ex = sample_example(&p_only, probe_rng);
            if ex.has_x1() {
                span_probe.push(ex.x1);
            }
        }
        let test_batch = Batch::new(&test.examples, params.d, patches);
        Monitor {
            params,
            test,
            test_batch,
            probe,
            span_probe,
            span_every_record: false,
        }
    }

    /// Builds the record for the current weights. `fwd` must be the clean
    /// forward of `net` on `train`.
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &self,
        t: u64,
        lr: f64,
        lambda: f64,
        net: &Network,
        u_bar: &Array2<f64>,
        u_tilde: &Array2<f64>,
        train: &Dataset,
        fwd: &Forward,
        with_span: bool,
    ) -> Result<MetricsRecord> {
        let outputs = fwd.outputs();
        let train_loss = mean_loss(&outputs, &train.examples.iter().map(|e| e.y).collect::<Vec<_>>(), None)?;
        let reg_loss = train_loss + 0.5 * lambda * crate::network::frobenius_sq(&net.weights);
        let sl = subset_losses_from(&fwd.r, &fwd.g, train);
        let wr = net.w_rows;
        let d = net.d;
        let w_bar = u_bar.slice(ndarray::s![..wr, ..d]).iter().map(|v| v * v).sum::<f64>();
        let v_bar = u_bar.slice(ndarray::s![wr.., d..]).iter().map(|v| v * v).sum::<f64>();
        let test_fwd = net.forward_batch(net.weights.view(), &self.test_batch, None);
        let ev = evaluate_outputs(&test_fwd.outputs(), &self.test);
        let span = if with_span || self.span_every_record {
            antisym_span_residual(net, train, &self.span_probe).ok()
        } else {
            None
        };
        Ok(MetricsRecord {
            t,
            lr,
            train_loss,
            reg_loss,
            loss_m1_r: sl.loss_m1_r,
            loss_m1bar_g: sl.loss_m1bar_g,
            loss_m2bar: sl.loss_m2bar,
            rho: rho_from_outputs(&outputs, train),
            almost_lin: almost_linearity(net, &self.params),
            u_bar_fro: crate::network::frobenius_sq(u_bar).sqrt(),
            w_bar_fro: w_bar.sqrt(),
            v_bar_fro: v_bar.sqrt(),
            hamming_frac: activation_hamming(net, &net.weights, u_tilde, &self.probe)?,
            test_err: ev.test_err,
            test_loss: ev.test_loss,
            test_err_p_only: ev.test_err_p_only,
            test_err_q_only: ev.test_err_q_only,
            test_err_both: ev.test_err_both,
            span_residual: span.as_ref().map(|s| s.residual_frac),
            alpha_norm: span.as_ref().map(|s| s.alpha_norm),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{generate_dataset, make_params, ParamOverrides};
    use crate::network::init_network;
    use crate::rng::{stream, Stream};
    use std::f64::consts::LN_2;

    fn setup(q0: f64) -> (DistributionParams, Dataset, Network) {
        let ov = ParamOverrides {
            p0: Some(0.2),
            q0: Some(q0),
            r: Some(0.2),
            ..Default::default()
        };
        let p = make_params(10, 0.5, q0, &ov, 3).unwrap();
        let ds = generate_dataset(&p, 200, &mut stream(3, Stream::TrainData)).unwrap();
        let mut net = init_network(16, 10, 0.3, &mut stream(3, Stream::Init)).unwrap();
        net.weights.fill(0.0);
        (p, ds, net)
    }

    #[test]
    fn zero_net_anchors() {
        let (p, ds, net) = setup(0.2);
        assert_eq!(almost_linearity(&net, &p), 0.0);
        assert_eq!(rho(&net, &ds), ds.m2.len() as f64 / (2.0 * ds.len() as f64));
        let sl = subset_losses(&net, &ds);
        for v in [sl.loss_m1_r, sl.loss_m1bar_g, sl.loss_m2, sl.loss_m2bar] {
            assert!((v.unwrap() - LN_2).abs() < 1e-12);
        }
        let ev = evaluate(&net, &ds);
        assert_eq!(ev.test_err, 1.0);
        let mp = margin_profile(&net, &ds.m2.iter().map(|&i| ds.examples[i].clone()).collect::<Vec<_>>()).unwrap();
        assert_eq!(mp.violation_frac, 1.0);
        assert_eq!(mp.median, 0.0);
        let probe: Vec<Vec<f64>> = ds.examples[..20].iter().map(|e| e.x1.clone()).collect();
        let fit = antisym_span_residual(&net, &ds, &probe).unwrap();
        assert_eq!(fit.residual_frac, 0.0);
        assert_eq!(fit.alpha_norm, 0.0);
    }

    #[test]
    fn q_free_dataset_reports_missing() {
        let (_, ds, net) = setup(0.0);
        assert!(ds.m1_bar.is_empty());
        assert_eq!(subset_losses(&net, &ds).loss_m1bar_g, None);
    }

    #[test]
    fn saturated_rho() {
        let (_, ds, _) = setup(0.2);
        let outputs: Vec<f64> = ds.examples.iter().map(|e| 50.0 * e.y).collect();
        let r = rho_from_outputs(&outputs, &ds);
        assert!(r < ds.m2.len() as f64 * 1e-20 / ds.len() as f64);
    }

    #[test]
    fn hamming_extremes() {
        let (_, ds, _) = setup(0.2);
        let net = init_network(64, 10, 1.0, &mut stream(8, Stream::Init)).unwrap();
        let probe: Vec<Vec<f64>> = ds.examples.iter().filter(|e| e.kind == Kind::Both).map(|e| e.concat()).collect();
        assert_eq!(activation_hamming(&net, &net.weights, &net.weights, &probe).unwrap(), 0.0);
        let neg = net.weights.mapv(|v| -v);
        assert_eq!(activation_hamming(&net, &net.weights, &neg, &probe).unwrap(), 1.0);
        assert!(activation_hamming(&net, &net.weights, &neg, &[]).is_err());
    }

    #[test]
    fn margin_ratio_independent_of_alpha() {
        let (p, _, _) = setup(0.2);
        let net = init_network(32, 10, 1.0, &mut stream(8, Stream::Init)).unwrap();
        let mk = |a: f64| Example {
            x1: vec![0.0; 10],
            x2: p.z.iter().map(|v| a * v).collect(),
            y: 1.0,
            kind: Kind::QOnly,
            q_direction: QDirection::Center,
            alpha: a,
        };
        let a = margin_profile(&net, &[mk(0.1)]).unwrap();
        let b = margin_profile(&net, &[mk(0.9)]).unwrap();
        assert!((a.median - b.median).abs() < 1e-12);
    }

    /// Hand-built Q memorizer: `-relu(<w, x2>) - relu(<v, x2>) + relu(<s, x2>)`
    /// with `<w, z - zeta> = <v, z + zeta> = r` and the offset neuron
    /// `s = (r/2) z`.
    #[test]
    fn hand_memorizer() {
        let d = 6;
        let ov = ParamOverrides {
            p0: Some(0.0),
            q0: Some(0.999),
            r: Some(0.3),
            ..Default::default()
        };
        let p = make_params(d, 0.5, 0.999, &ov, 5).unwrap();
        let r = p.r;
        let eh: Vec<f64> = p.zeta.iter().map(|v| v / r).collect();
        let wv: Vec<f64> = p.z.iter().zip(&eh).map(|(a, b)| -r * a - 2.0 * b).collect();
        let vv: Vec<f64> = p.z.iter().zip(&eh).map(|(a, b)| -r * a + 2.0 * b).collect();
        let sv: Vec<f64> = p.z.iter().map(|a| 0.5 * r * a).collect();
        let m = 6usize;
        let scale = (m as f64).sqrt();
        let mut weights = Array2::zeros((m, 2 * d));
        for j in 0..d {
            weights[[3, d + j]] = scale * wv[j];
            weights[[4, d + j]] = scale * vv[j];
            weights[[5, d + j]] = scale * sv[j];
        }
        let um = 1.0 / scale;
        let net = Network {
            d,
            patches: 1,
            w_rows: 3,
            u: vec![um, um, um, -um, -um, um],
            weights,
        };
        let gp = net.g_component(&p.q_vector(QDirection::Plus));
        let gm = net.g_component(&p.q_vector(QDirection::Minus));
        let gc = net.g_component(&p.q_vector(QDirection::Center));
        assert!((gp + 0.5 * r).abs() < 1e-12 && (gm + 0.5 * r).abs() < 1e-12);
        assert!((gc - 0.5 * r).abs() < 1e-12);

        let want = (-dot(&wv, &p.q_vector(QDirection::Minus)) - dot(&vv, &p.q_vector(QDirection::Plus))).abs();
        let got = almost_linearity(&net, &p);
        assert!((want - 2.0 * r).abs() < 1e-12);
        assert!((got - want).abs() < 1e-12);

        let test = generate_dataset(&p, 2000, &mut stream(1, Stream::TestData)).unwrap();
        let ev = evaluate(&net, &test);
        assert_eq!(ev.test_err_q_only, Some(0.0));
    }

    #[test]
    fn csv_row_roundtrip() {
        let rec = MetricsRecord {
            t: 5,
            lr: 0.1,
            train_loss: LN_2,
            reg_loss: 0.7,
            loss_m1_r: None,
            loss_m1bar_g: Some(0.3),
            loss_m2bar: Some(f64::NAN),
            rho: 0.25,
            almost_lin: 1e-20,
            u_bar_fro: 0.0,
            w_bar_fro: 0.0,
            v_bar_fro: 0.0,
            hamming_frac: 0.5,
            test_err: 0.1,
            test_loss: 0.2,
            test_err_p_only: Some(0.3),
            test_err_q_only: None,
            test_err_both: Some(0.0),
            span_residual: None,
            alpha_norm: None,
        };
        let row = rec.to_row();
        assert_eq!(row[6], "nan");
        let back = MetricsRecord::from_row(&row.iter().map(|s| s.as_str()).collect::<Vec<_>>()).unwrap();
        assert_eq!(back.to_row(), row);
        assert_eq!(back.almost_lin, 1e-20);
    }
}
