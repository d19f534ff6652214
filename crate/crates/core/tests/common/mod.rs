//! Finite-difference gradient oracles and random loss configurations shared
//! by the integration tests.
#![allow(dead_code)]

use mptp_core::inverse::{
    DriftAnchor, NonParamConfig, NonParamObjective, ObservationSet, ParamInverseConfig, ParamObjective,
};
use mptp_core::nn::{loss_grad, loss_value, MlpParams, Objective};
use mptp_core::pinn::{sample_residual_points, ForwardConfig, ForwardObjective, HolderConfig};
use mptp_core::{BoundaryConditions, DriftKind, DriftModel, Framework, NoiseSpec, PathSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Richardson-extrapolated central difference, fourth order in `h`.
pub fn richardson(f: &mut dyn FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |f: &mut dyn FnMut(f64) -> f64, h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let a = d(f, h);
    let b = d(f, h / 2.0);
    (4.0 * b - a) / 3.0
}

/// Per-entry error `|g − fd| / max(|fd|, 1)`; the unit floor turns the
/// check absolute for entries that are themselves below one.
pub fn rel_err(g: f64, fd: f64) -> f64 {
    (g - fd).abs() / fd.abs().max(1.0)
}

/// Worst entry error of the analytic gradient over all network parameters
/// and auxiliary entries. Auxiliary entries outside `live` must have an
/// exactly zero gradient.
pub fn gradient_error<O: Objective + ?Sized>(obj: &O, net: &MlpParams, aux: &[f64], live: &[bool], h: f64) -> f64 {
    let g = loss_grad(obj, net, aux).unwrap();
    let mut worst = 0.0f64;
    let mut p = net.clone();
    for i in 0..net.len() {
        let x = net.as_slice()[i];
        let fd = richardson(
            &mut |v| {
                p.as_mut_slice()[i] = v;
                loss_value(obj, &p, aux).unwrap()
            },
            x,
            h * x.abs().max(1.0),
        );
        p.as_mut_slice()[i] = x;
        worst = worst.max(rel_err(g.grad_params[i], fd));
    }
    let mut a = aux.to_vec();
    for i in 0..aux.len() {
        if !live[i] {
            worst = worst.max(g.grad_aux[i].abs());
            continue;
        }
        let x = aux[i];
        let fd = richardson(
            &mut |v| {
                a[i] = v;
                loss_value(obj, net, &a).unwrap()
            },
            x,
            h * x.abs().max(1.0),
        );
        a[i] = x;
        worst = worst.max(rel_err(g.grad_aux[i], fd));
    }
    worst
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn random_hidden(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let depth = rng.random_range(1..=3);
    (0..depth).map(|_| rng.random_range(2..=8)).collect()
}

/// A drift model of random kind with parameters scattered around the
/// benchmark values.
pub fn random_model(rng: &mut ChaCha8Rng) -> DriftModel {
    let s = |rng: &mut ChaCha8Rng| uniform(rng, 0.5, 1.5);
    match rng.random_range(0..5) {
        0 => DriftModel::double_well(s(rng), -s(rng)),
        1 => DriftModel::gene_regulation(6.0 * s(rng), 10.0 * s(rng), s(rng), 0.4 * s(rng)).unwrap(),
        2 => DriftModel::maier_stein([s(rng), -s(rng), -s(rng), -s(rng)]),
        3 => DriftModel::linear_decay(s(rng), rng.random_range(1..=3)),
        _ => DriftModel::zero(rng.random_range(1..=3)),
    }
}

pub fn random_noise(rng: &mut ChaCha8Rng, dim: usize) -> NoiseSpec {
    if rng.random::<bool>() {
        NoiseSpec::fw(dim)
    } else {
        NoiseSpec::new(Framework::Om, (0..dim).map(|_| uniform(rng, 0.1, 1.0)).collect()).unwrap()
    }
}

fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| uniform(rng, -1.5, 1.5)).collect()
}

pub fn random_forward(rng: &mut ChaCha8Rng, holder: bool) -> (ForwardConfig, Vec<f64>, MlpParams) {
    let model = random_model(rng);
    let d = model.dim();
    let noise = random_noise(rng, d);
    let t = uniform(rng, 0.5, 5.0);
    let bc = BoundaryConditions::new(random_state(rng, d), random_state(rng, d), t).unwrap();
    let mut cfg = ForwardConfig::new(model, noise, bc);
    cfg.hidden = random_hidden(rng);
    cfg.lambda_r = uniform(rng, 0.1, 2.0);
    cfg.lambda_b = uniform(rng, 0.1, 2.0);
    if holder {
        cfg.regularizer = Some(HolderConfig {
            alpha: uniform(rng, 0.2, 1.0),
            weight: uniform(rng, 0.01, 1.0),
            grid: rng.random_range(3..=12),
        });
    }
    let points = sample_residual_points(rng.random_range(1..=20), t, rng.random()).unwrap();
    let net = MlpParams::init(&cfg.layer_dims(), rng.random()).unwrap();
    (cfg, points, net)
}

/// Smallest relative gap between the largest and second-largest pair
/// quotient over the three seminorm orders. The regularizer is a max, so
/// it has no gradient where this gap is zero.
pub fn holder_margin(net: &MlpParams, cfg: &ForwardConfig) -> f64 {
    let r = cfg.regularizer.unwrap();
    let grid = PathSample::uniform_times(cfg.bc.t_final, r.grid);
    let jets: Vec<_> = grid.iter().map(|&t| net.jet2(t).unwrap()).collect();
    let mut margin = f64::INFINITY;
    for order in 0..3 {
        let ch = |i: usize| match order {
            0 => &jets[i].value,
            1 => &jets[i].d1,
            _ => &jets[i].d2,
        };
        let mut q = Vec::new();
        for a in 0..grid.len() {
            for b in a + 1..grid.len() {
                let n = ch(a).iter().zip(ch(b)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                q.push(n / (grid[b] - grid[a]).powf(r.alpha));
            }
        }
        q.sort_by(|a, b| b.total_cmp(a));
        if q.len() > 1 && q[0] > 0.0 {
            margin = margin.min((q[0] - q[1]) / q[0]);
        }
    }
    margin
}

/// Forward loss gradient check.
pub fn forward_case(seed: u64, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cfg, points, net) = random_forward(&mut rng, false);
    let obj = ForwardObjective::new(&cfg, &points);
    gradient_error(&obj, &net, &[], &[], h)
}

/// Hölder-regularized loss gradient check. Draws are repeated until every
/// seminorm maximum is attained by a single pair with a 1% gap; returns the
/// error and the number of rejected draws.
pub fn holder_case(seed: u64, h: f64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejected = 0;
    loop {
        let (cfg, points, net) = random_forward(&mut rng, true);
        if holder_margin(&net, &cfg) < 1e-2 {
            rejected += 1;
            continue;
        }
        let obj = ForwardObjective::new(&cfg, &points);
        return (gradient_error(&obj, &net, &[], &[], h), rejected);
    }
}

fn random_observations(rng: &mut ChaCha8Rng, dim: usize, n: usize, t: f64) -> ObservationSet {
    // smooth random curve a + b t + c sin(ω t) per component
    let coef: Vec<[f64; 4]> = (0..dim)
        .map(|_| [uniform(rng, -1.0, 1.0), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, 0.5, 2.0)])
        .collect();
    let times: Vec<f64> = (0..n).map(|i| t * i as f64 / (n - 1) as f64).collect();
    let states = times
        .iter()
        .flat_map(|&s| coef.iter().map(move |c| c[0] + c[1] * s + c[2] * (c[3] * s).sin()))
        .collect();
    ObservationSet::new(times, states, dim).unwrap()
}

/// Parametric inverse loss gradient check, β included.
pub fn param_case(seed: u64, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = loop {
        let m = random_model(&mut rng);
        if m.kind() != DriftKind::ZeroDrift {
            break m;
        }
    };
    let d = model.dim();
    let noise = random_noise(&mut rng, d);
    let t = uniform(&mut rng, 0.5, 5.0);
    let n = rng.random_range(3..=15);
    let obs = random_observations(&mut rng, d, n, t);
    let beta: Vec<f64> = model.params().iter().map(|p| p * uniform(&mut rng, 0.7, 1.3)).collect();
    let mut cfg = ParamInverseConfig::new(model.kind(), d, noise, beta.clone());
    cfg.trainable = (0..beta.len()).map(|_| rng.random_range(0..4) > 0).collect();
    cfg.hidden = random_hidden(&mut rng);
    cfg.lambda_r = uniform(&mut rng, 0.1, 2.0);
    cfg.lambda_d = uniform(&mut rng, 0.1, 10.0);
    let points = sample_residual_points(rng.random_range(1..=20), t, rng.random()).unwrap();
    let net = MlpParams::init(&cfg.layer_dims(), rng.random()).unwrap();
    let obj = ParamObjective::new(&cfg, &obs, &points);
    gradient_error(&obj, &net, &beta, &cfg.trainable, h)
}

/// Nonparametric drift loss gradient check.
pub fn nonparam_case(seed: u64, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = random_noise(&mut rng, 1);
    let t = uniform(&mut rng, 0.5, 5.0);
    let n = rng.random_range(3..=20);
    let obs = random_observations(&mut rng, 1, n, t);
    let anchors = (0..rng.random_range(0..=4))
        .map(|_| DriftAnchor { x: vec![uniform(&mut rng, -2.0, 2.0)], f: vec![uniform(&mut rng, -2.0, 2.0)] })
        .collect();
    let obs = obs.with_anchors(anchors).unwrap();
    let cfg = NonParamConfig {
        hidden: random_hidden(&mut rng),
        gamma1: uniform(&mut rng, 0.0, 10.0),
        gamma2: if rng.random::<bool>() { uniform(&mut rng, 0.0, 0.1) } else { 0.0 },
        ..NonParamConfig::default()
    };
    let net = MlpParams::init(&cfg.layer_dims(), rng.random()).unwrap();
    let obj = NonParamObjective::new(&cfg, &noise, &obs).unwrap();
    gradient_error(&obj, &net, &[], &[], h)
}
