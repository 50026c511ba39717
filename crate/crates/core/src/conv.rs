//! Two-layer convolutional variant.
//!
//! `k` patches of length `d` with stride `d / k`, taken cyclically over each
//! block, share one filter bank of `m / k` channels (split into W and V
//! channels exactly like the dense model). The output is
//! `sum_{p in [k]} u_p^T [U x_(p)]_+`. With `k = 1` it is the dense model.

use crate::distribution::{make_params, DistributionParams, ParamOverrides};
use crate::error::{invalid, Result};
use crate::network::{init_with, Arch, Network};
use crate::rng::SimRng;

pub fn init_conv(m: usize, d: usize, k: usize, tau0: f64, rng: &mut SimRng) -> Result<Network> {
    init_with(
        Arch {
            m,
            d,
            patches: k,
            w_fraction: 0.5,
        },
        tau0,
        rng,
    )
}

pub fn conv_forward(net: &Network, x: &[f64]) -> Result<f64> {
    net.forward(x)
}

/// Contribution of patch `p` alone.
pub fn patch_term(net: &Network, x: &[f64], p: usize) -> Result<f64> {
    if p >= net.patches {
        return Err(invalid("p", format!("patch {p} out of range 0..{}", net.patches)));
    }
    let mut single = net.clone();
    let rows = net.rows();
    single.u.iter_mut().enumerate().for_each(|(h, v)| {
        if h / rows != p {
            *v = 0.0;
        }
    });
    single.forward(x)
}

/// Distribution parameters with `z` and `zeta` confined to the last `d / k`
/// coordinates of the x2 block.
pub fn conv_params(
    d: usize,
    k: usize,
    kappa: f64,
    q0: f64,
    overrides: &ParamOverrides,
    seed: u64,
) -> Result<DistributionParams> {
    if k == 0 || !d.is_multiple_of(k) {
        return Err(invalid("k", format!("{k} does not divide d = {d}")));
    }
    let ov = ParamOverrides {
        q_support: Some(d / k),
        ..overrides.clone()
    };
    make_params(d, kappa, q0, &ov, seed)
}
