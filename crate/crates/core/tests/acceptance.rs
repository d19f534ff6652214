//! Acceptance run: one PASS/FAIL line per criterion, then a summary.
//!
//! `cargo test -p mptp-core --test acceptance` runs everything (about 40 minutes on one core); pass criterion numbers to run a subset, e.g.
//! `cargo test -p mptp-core --test acceptance -- 2 3 7`.

mod common;

use std::time::Instant;

use mptp_core::bridge::{average_paths, perturb_path, simulate_bridge, BridgeConfig, BridgeVariant};
use mptp_core::inverse::{
    param_residual_points, train_nonparametric, train_parametric, DriftAnchor, NonParamConfig, ObservationSet,
    ParamInverseConfig, ParamObjective,
};
use mptp_core::nn::{loss_grad, AdamState, MlpParams};
use mptp_core::pinn::{empirical_loss, sample_residual_points, train_forward, ForwardConfig};
use mptp_core::{
    find_equilibria, fw_energy_profile, solve_el_collocation, BoundaryConditions, CollocationProblem, DriftKind,
    DriftModel, ElResidualSpec, NoiseSpec, PathSample,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn bc(x0: &[f64], xt: &[f64], t: f64) -> BoundaryConditions {
    BoundaryConditions::new(x0.to_vec(), xt.to_vec(), t).unwrap()
}

fn oracle(model: &DriftModel, bc: &BoundaryConditions, n: usize) -> PathSample {
    let spec = ElResidualSpec::new(model.clone(), NoiseSpec::fw(model.dim())).unwrap();
    let p = CollocationProblem::new(spec, bc.clone(), n).unwrap();
    solve_el_collocation(&p, None).unwrap().path
}

fn max_rel(est: &[f64], truth: &[f64]) -> f64 {
    est.iter().zip(truth).map(|(e, t)| ((e - t) / t).abs()).fold(0.0, f64::max)
}

fn gradient_suite() -> Outcome {
    const H: f64 = 1e-4;
    let n = 100u64;
    let fwd = (0..n).map(|s| common::forward_case(s, H)).fold(0.0, f64::max);
    let mut rejected = 0;
    let holder = (0..n)
        .map(|s| {
            let (e, r) = common::holder_case(s, H);
            rejected += r;
            e
        })
        .fold(0.0, f64::max);
    let param = (0..n).map(|s| common::param_case(s, H)).fold(0.0, f64::max);
    let nonparam = (0..n).map(|s| common::nonparam_case(s, H)).fold(0.0, f64::max);
    let worst = fwd.max(holder).max(param).max(nonparam);
    outcome(
        worst <= 1e-5,
        format!(
            "max error forward {fwd:.1e}, hölder {holder:.1e} ({rejected} tied draws redrawn), \
             parametric {param:.1e}, nonparametric {nonparam:.1e}; bound 1e-5"
        ),
    )
}

fn oracle_validity() -> Outcome {
    let t = 2.0;
    let model = DriftModel::linear_decay(1.0, 1);
    let b = bc(&[0.0], &[1.0], t);
    let errs: Vec<f64> = [251, 501, 1001, 2001]
        .iter()
        .map(|&n| {
            let p = oracle(&model, &b, n);
            p.times()
                .iter()
                .zip(p.states())
                .map(|(&s, &z)| (z - s.sinh() / t.sinh()).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let order_ok = ratios.iter().all(|r| (3.8..=4.2).contains(r));
    outcome(
        errs[3] <= 1e-5 && order_ok,
        format!("L∞ at n=2001 {:.2e} (bound 1e-5); halving ratios {:.3?} (want 4 ± 0.2)", errs[3], ratios),
    )
}

fn energy_spread(model: &DriftModel, b: &BoundaryConditions) -> f64 {
    let e = fw_energy_profile(&oracle(model, b, 2001), model).unwrap();
    e.iter().cloned().fold(f64::MIN, f64::max) - e.iter().cloned().fold(f64::MAX, f64::min)
}

fn energy_conservation() -> Outcome {
    let dw = energy_spread(&DriftModel::double_well(1.0, -1.0), &bc(&[-1.0], &[1.0], 5.0));
    let ms = energy_spread(&DriftModel::maier_stein([1.0, -1.0, -1.0, -1.0]), &bc(&[-1.0, 0.0], &[1.0, 0.0], 10.0));
    outcome(dw <= 1e-5 && ms <= 1e-5, format!("spread double-well T=5 {dw:.2e}, Maier–Stein T=10 {ms:.2e}; bound 1e-5"))
}

fn forward_pinn() -> Outcome {
    let model = DriftModel::double_well(1.0, -1.0);
    let mut pass = true;
    let mut parts = Vec::new();
    for t in [2.0, 5.0] {
        let b = bc(&[-1.0], &[1.0], t);
        let mut cfg = ForwardConfig::new(model.clone(), NoiseSpec::fw(1), b.clone());
        cfg.iterations = 20_000;
        let run = train_forward(&cfg).unwrap();
        let (linf, _) = run.path.distance(&oracle(&model, &b, cfg.output_nodes)).unwrap();
        let h = run.path.states();
        let n = h.len();
        let anti = (0..n).map(|i| (h[i] + h[n - 1 - i]).abs()).fold(0.0, f64::max);
        let boundary = (h[0] + 1.0).abs() + (h[n - 1] - 1.0).abs();
        // running minimum of the loss sampled at the end of each 1k window
        let mut best = f64::INFINITY;
        let mut window_best = Vec::new();
        for r in &run.history {
            best = best.min(r.total);
            if (r.iteration + 1) % 1000 == 0 || r.iteration + 1 == cfg.iterations {
                window_best.push(best);
            }
        }
        let trend = window_best.windows(2).all(|w| w[1] <= w[0]);
        let ok = run.diverged_at.is_none() && linf <= 5e-2 && anti <= 1e-1 && boundary <= 1e-2 && trend;
        pass &= ok;
        parts.push(format!(
            "T={t}: L∞ {linf:.2e}, antisymmetry {anti:.2e}, boundary {boundary:.1e}, trend {}",
            if trend { "ok" } else { "broken" }
        ));
    }
    outcome(pass, format!("{} (bounds 5e-2, 1e-1, 1e-2)", parts.join("; ")))
}

fn bridge_agreement() -> Outcome {
    let model = DriftModel::double_well(1.0, -1.0);
    let b = bc(&[-1.0], &[1.0], 2.0);
    let cfg = BridgeConfig::new(model.clone(), b.clone(), BridgeVariant::FwSmallNoise);
    let ens = simulate_bridge(&cfg).unwrap();
    let mean = average_paths(&ens.paths).unwrap();
    let (linf, _) = mean.distance(&oracle(&model, &b, cfg.n_steps + 1)).unwrap();

    let mut ctrl = BridgeConfig::new(DriftModel::zero(1), b.clone(), BridgeVariant::FwSmallNoise);
    ctrl.eps = 0.5;
    ctrl.n_paths = 1000;
    ctrl.n_steps = 200;
    ctrl.seed = 11;
    let paths = simulate_bridge(&ctrl).unwrap().paths;
    let k = paths.len() as f64;
    let times = paths[0].times().to_vec();
    let mut worst = 0.0f64;
    let mut outside = 0;
    for i in 1..times.len() - 1 {
        let xs: Vec<f64> = paths.iter().map(|p| p.states()[i]).collect();
        let m = xs.iter().sum::<f64>() / k;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
        let z = (m - (-1.0 + times[i])).abs() / (sd / k.sqrt());
        worst = worst.max(z);
        if z > 3.0 {
            outside += 1;
        }
    }
    outcome(
        linf <= 5e-2 && outside == 0 && paths.len() == 1000,
        format!(
            "double-well T=2 mean of {} paths vs oracle L∞ {linf:.2e} (bound 5e-2); \
             Brownian-bridge control max |z| {worst:.2} over {} nodes, {outside} beyond 3",
            ens.paths.len(),
            times.len() - 2
        ),
    )
}

fn bridge_mean(model: &DriftModel, b: &BoundaryConditions) -> PathSample {
    let cfg = BridgeConfig::new(model.clone(), b.clone(), BridgeVariant::FwSmallNoise);
    average_paths(&simulate_bridge(&cfg).unwrap().paths).unwrap()
}

fn parametric_inverse() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();

    let dw = DriftModel::double_well(1.0, -1.0);
    let b = bc(&[-1.0], &[1.0], 10.0);
    for (label, path) in [("oracle", oracle(&dw, &b, 2001)), ("bridge", bridge_mean(&dw, &b))] {
        let obs = ObservationSet::subsample(&path, 21).unwrap();
        let mut cfg = ParamInverseConfig::new(DriftKind::DoubleWell, 1, NoiseSpec::fw(1), vec![0.5, -0.5]);
        cfg.iterations = 8000;
        cfg.lr = 1e-3;
        cfg.m = 501;
        let run = train_parametric(&cfg, &obs).unwrap();
        let e = max_rel(&run.beta, dw.params());
        pass &= e <= 0.05;
        parts.push(format!("double-well {label} {:.3?} err {:.1}%", run.beta, 100.0 * e));
    }

    let gene = DriftModel::gene_regulation(6.0, 10.0, 1.0, 0.6).unwrap();
    for t in [5.0, 7.0, 10.0] {
        let b = bc(&[0.62685], &[4.28343], t);
        for (label, path, tol) in [("oracle", oracle(&gene, &b, 2001), 0.05), ("bridge", bridge_mean(&gene, &b), 0.10)] {
            let obs = ObservationSet::subsample(&path, 21).unwrap();
            let mut cfg = ParamInverseConfig::new(DriftKind::GeneRegulation, 1, NoiseSpec::fw(1), vec![5.0, 8.0, 0.8, 0.5]);
            cfg.iterations = 100_000;
            cfg.lr = 1e-3;
            cfg.beta_lr = Some(1e-2);
            cfg.m = 201;
            cfg.record_every = 1000;
            let run = train_parametric(&cfg, &obs).unwrap();
            let e = max_rel(&run.beta, gene.params());
            pass &= e <= tol;
            parts.push(format!("gene T={t} {label} {:.3?} err {:.1}% (bound {}%)", run.beta, 100.0 * e, 100.0 * tol));
        }
    }
    outcome(pass, parts.join("; "))
}

fn gene_equilibria() -> Outcome {
    let stated = [0.62685, 1.48971, 4.28343];
    let roots = |r_bas: f64| -> Vec<f64> {
        let m = DriftModel::gene_regulation(6.0, 10.0, 1.0, r_bas).unwrap();
        find_equilibria(&m, 0.0, 8.0, 8000).unwrap().iter().map(|e| e.x).collect()
    };
    let matches = |xs: &[f64]| xs.len() == 3 && xs.iter().zip(stated).all(|(x, s)| (x - s).abs() <= 1e-4);
    let found = roots(0.6);
    let alt = roots(0.4);
    outcome(
        matches(&found),
        format!(
            "(k_f, K_d, k_d, R_bas) = (6, 10, 1, 0.6) gives roots {found:.5?}, want {stated:?}; \
             with R_bas = 0.4 the roots are {alt:.5?}{}",
            if matches(&alt) { " (these match)" } else { "" }
        ),
    )
}

fn nonparametric_inverse() -> Outcome {
    let gene = DriftModel::gene_regulation(6.0, 10.0, 1.0, 0.6).unwrap();
    let (lo, hi) = (0.62685, 4.28343);
    let rmse = |run: &mptp_core::inverse::NonParamRun| {
        let n = 401;
        let sq: f64 = (0..n)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                (run.drift.drift(x).unwrap() - gene.drift(&[x]).unwrap()[0]).powi(2)
            })
            .sum();
        (sq / n as f64).sqrt()
    };
    let cfg = NonParamConfig { iterations: 10_000, lr: 1e-3, record_every: 1000, ..NonParamConfig::default() };
    let anchors = [0.0, 1.2, 3.0, 6.0].iter().map(|&x| DriftAnchor { x: vec![x], f: gene.drift(&[x]).unwrap() }).collect();
    let obs = ObservationSet::from_path(&oracle(&gene, &bc(&[lo], &[hi], 10.0), 1001))
        .unwrap()
        .with_anchors(anchors)
        .unwrap();
    let anchored = rmse(&train_nonparametric(&obs, &NoiseSpec::fw(1), &cfg).unwrap());
    let obs = ObservationSet::from_path(&oracle(&gene, &bc(&[lo], &[hi], 2.0), 1001)).unwrap();
    let free = rmse(&train_nonparametric(&obs, &NoiseSpec::fw(1), &cfg).unwrap());
    outcome(
        anchored <= 0.15,
        format!("T=10 with anchors RMSE {anchored:.3} (bound 0.15); T=2 without anchors RMSE {free:.3} (tracked)"),
    )
}

/// Fits all four Maier–Stein parameters from 51 observations.
fn maier_stein_fit(path: &PathSample, seed: u64) -> (Vec<f64>, f64) {
    let truth = [1.0, -1.0, -1.0, -1.0];
    let obs = ObservationSet::subsample(path, 51).unwrap();
    let init = truth.iter().map(|t| 0.5 * t).collect();
    let mut cfg = ParamInverseConfig::new(DriftKind::MaierStein, 2, NoiseSpec::fw(2), init);
    cfg.iterations = 60_000;
    cfg.lr = 1e-3;
    cfg.beta_lr = Some(3e-3);
    cfg.m = 201;
    cfg.seed = seed;
    cfg.record_every = 1000;
    let run = train_parametric(&cfg, &obs).unwrap();
    let e = max_rel(&run.beta, &truth);
    (run.beta, e)
}

fn maier_stein() -> Outcome {
    let truth = [1.0, -1.0, -1.0, -1.0];
    let model = DriftModel::maier_stein(truth);

    // observations on the x axis; the network's y output starts at zero and,
    // since the y = 0 line is invariant, stays there
    let axis = oracle(&model, &bc(&[-1.0, 0.0], &[1.0, 0.0], 10.0), 2001);
    let on_axis = axis.component(1).iter().all(|&y| y == 0.0);
    let obs = ObservationSet::subsample(&axis, 51).unwrap();
    let mut cfg = ParamInverseConfig::new(DriftKind::MaierStein, 2, NoiseSpec::fw(2), truth.to_vec());
    cfg.m = 201;
    cfg.trainable = vec![false; 4];
    let points = param_residual_points(&cfg, &obs).unwrap();
    let obj = ParamObjective::new(&cfg, &obs, &points);
    let mut net = MlpParams::init(&cfg.layer_dims(), 0).unwrap();
    let last = net.n_layers() - 1;
    let width = net.layer_dims()[last];
    net.weights_mut(last)[width..].fill(0.0);
    net.bias_mut(last)[1] = 0.0;
    let mut adam = AdamState::new(net.len(), 1e-3).unwrap();
    for _ in 0..5000 {
        let g = loss_grad(&obj, &net, &truth).unwrap();
        adam.step(net.as_mut_slice(), &g.grad_params).unwrap();
    }
    // the full β gradient, regardless of which entries are trainable
    let mut all = cfg.clone();
    all.trainable = vec![true; 4];
    let obj = ParamObjective::new(&all, &obs, &points);
    let g = loss_grad(&obj, &net, &truth).unwrap();
    let y_silent = net.weights(last)[width..].iter().all(|&w| w == 0.0) && net.bias(last)[1] == 0.0;
    let g34 = g.grad_aux[2].abs().max(g.grad_aux[3].abs());
    let g12 = g.grad_aux[0].abs().max(g.grad_aux[1].abs());
    let ident_ok = on_axis && y_silent && g34 <= 1e-8;

    let off = oracle(&model, &bc(&[-1.0, -1.0], &[0.0, 0.0], 10.0), 2001);
    let (beta, e0) = maier_stein_fit(&off, 0);
    let clean_ok = e0 <= 0.10;

    let etas = [0.02, 0.05, 0.10];
    let mean_err: Vec<f64> = etas
        .iter()
        .map(|&eta| (0..5u64).map(|s| maier_stein_fit(&perturb_path(&off, eta, s).unwrap(), s).1).sum::<f64>() / 5.0)
        .collect();
    let monotone = mean_err.windows(2).all(|w| w[1] > w[0]);

    outcome(
        ident_ok && clean_ok && monotone,
        format!(
            "x-axis data: |∂L/∂λ3,4| {g34:.1e} (bound 1e-8) vs |∂L/∂λ1,2| {g12:.1e}; \
             (−1,−1)→(0,0) clean fit {beta:.3?} err {:.1}% (bound 10%); \
             mean err over 5 seeds at η = 0.02/0.05/0.10: {:.1}%/{:.1}%/{:.1}%{}",
            100.0 * e0,
            100.0 * mean_err[0],
            100.0 * mean_err[1],
            100.0 * mean_err[2],
            if monotone { "" } else { " (not monotone)" }
        ),
    )
}

fn loss_gap_trend() -> Outcome {
    let t = 5.0;
    let mut cfg = ForwardConfig::new(DriftModel::double_well(1.0, -1.0), NoiseSpec::fw(1), bc(&[-1.0], &[1.0], t));
    cfg.iterations = 2000;
    cfg.lr = 1e-3;
    let net = train_forward(&cfg).unwrap().net;
    let gaps: Vec<f64> = [100usize, 400, 1600]
        .iter()
        .map(|&m| {
            let dense: Vec<f64> = (0..10 * m).map(|i| t * (i as f64 + 0.5) / (10 * m) as f64).collect();
            let full = empirical_loss(&net, &cfg, &dense).unwrap().total;
            (1..=5u64)
                .map(|s| {
                    let pts = sample_residual_points(m, t, 100 + s).unwrap();
                    (full - empirical_loss(&net, &cfg, &pts).unwrap().total).abs()
                })
                .sum::<f64>()
                / 5.0
        })
        .collect();
    outcome(
        gaps.windows(2).all(|w| w[1] < w[0]),
        format!("mean gap at m = 100/400/1600: {:.2e}/{:.2e}/{:.2e}", gaps[0], gaps[1], gaps[2]),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", gradient_suite),
        ("oracle validity", oracle_validity),
        ("energy conservation", energy_conservation),
        ("forward PINN vs oracle", forward_pinn),
        ("bridge agreement", bridge_agreement),
        ("parametric inverse", parametric_inverse),
        ("gene equilibria", gene_equilibria),
        ("nonparametric inverse", nonparametric_inverse),
        ("Maier–Stein identifiability", maier_stein),
        ("loss-gap trend", loss_gap_trend),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let k = i + 1;
        if !wanted.is_empty() && !wanted.contains(&k) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        ran += 1;
        if !o.pass {
            failed.push(k);
        }
        println!(
            "criterion {k:2} {} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} passed{}", ran - failed.len(), if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") });
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
