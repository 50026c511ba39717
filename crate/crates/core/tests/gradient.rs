use lol_core::distribution::{generate_dataset, make_params, ParamOverrides};
use lol_core::network::{batch_loss, gradient, init_with, Arch, Network};
use lol_core::rng::{stream, Stream};
use rand::Rng;

const H: f64 = 1e-6;

fn loss_at(net: &Network, data: &lol_core::distribution::Dataset, i: usize, j: usize, delta: f64) -> f64 {
    let mut n = net.clone();
    n.weights[[i, j]] += delta;
    batch_loss(&n, data, None).unwrap()
}

/// Smallest |pre-activation| of hidden row `row` over examples carrying its block.
fn min_abs_preact(net: &Network, data: &lol_core::distribution::Dataset, row: usize) -> f64 {
    let d = net.d;
    let block = usize::from(row >= net.w_rows);
    let mut worst = f64::INFINITY;
    for ex in &data.examples {
        let xb = if block == 0 { &ex.x1 } else { &ex.x2 };
        if xb.iter().all(|v| *v == 0.0) {
            continue;
        }
        for p in 0..net.patches {
            let a: f64 = (0..d)
                .map(|j| net.weights[[row, block * d + j]] * xb[(j + p * net.stride()) % d])
                .sum();
            worst = worst.min(a.abs());
        }
    }
    worst
}

fn check(patches: usize, seed: u64) -> (usize, f64) {
    let mut rng = stream(seed, Stream::Probe);
    let d = 8 * patches;
    let m = 12 * patches;
    let ov = ParamOverrides {
        p0: Some(0.25),
        q0: Some(0.25),
        r: Some(0.3),
        q_support: Some(d / patches),
        ..Default::default()
    };
    let params = make_params(d, 0.5, 0.25, &ov, seed).unwrap();
    let data = generate_dataset(&params, 30, &mut stream(seed, Stream::TrainData)).unwrap();
    let arch = Arch {
        m,
        d,
        patches,
        w_fraction: 0.5,
    };
    let net = init_with(arch, 0.5, &mut stream(seed, Stream::Init)).unwrap();
    let grad = gradient(&net, &data, None).unwrap();
    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut tries = 0;
    while checked < 20 && tries < 2000 {
        tries += 1;
        let i = rng.random_range(0..net.rows());
        let j = rng.random_range(0..2 * d);
        if !net.in_block(i, j) || min_abs_preact(&net, &data, i) < 1e-4 {
            continue;
        }
        let fd = (loss_at(&net, &data, i, j, H) - loss_at(&net, &data, i, j, -H)) / (2.0 * H);
        let an = grad[[i, j]];
        let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
        checked += 1;
    }
    (checked, worst)
}

#[test]
fn dense_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let (n, worst) = check(1, seed);
        assert_eq!(n, 20);
        assert!(worst < 1e-5, "seed {seed}: relative error {worst}");
    }
}

#[test]
fn conv_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let (n, worst) = check(4, seed);
        assert_eq!(n, 20);
        assert!(worst < 1e-5, "seed {seed}: relative error {worst}");
    }
}
