//! Acceptance suite. Each test prints one `PASS`/`FAIL` line, then asserts.
//! Tests share a lock so the runtime bounds are measured without contention.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use npat::attacks::{npda_generate, pgd_attack, AttackSpec};
use npat::harness::{adversarial_phase, load_datasets, run_experiment, run_sweep, standard_phase};
use npat::losses::{cross_entropy, kl_divergence, lse_loss, trades_loss, LossKind};
use npat::model::{LayerParams, NetworkModel};
use npat::numerics::{
    derive_seed, null_projector_closed_form, null_projector_svd, rng_from_seed, seeded_gaussian, Matrix,
};
use npat::trainers::Method;
use rand::Rng;

use common::{max_abs_diff, random_dims, random_labels, random_model, shipped_config};

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, title: &str, pass: bool, detail: &str, elapsed: Duration) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "criterion {id} {verdict}: {title} ({detail}; {:.1}s)",
        elapsed.as_secs_f64()
    );
}

/// Criterion `id` passes when every check holds and the run fits in `limit`.
fn finish(id: u32, title: &str, checks: &[(bool, String)], start: Instant, limit: Duration) {
    let elapsed = start.elapsed();
    let mut all: Vec<(bool, String)> = checks.to_vec();
    all.push((elapsed < limit, format!("runtime < {}s", limit.as_secs())));
    let pass = all.iter().all(|(ok, _)| *ok);
    let detail = all
        .iter()
        .map(|(ok, what)| format!("{}{what}", if *ok { "" } else { "FAILED " }))
        .collect::<Vec<_>>()
        .join(", ");
    report(id, title, pass, &detail, elapsed);
    assert!(pass, "criterion {id} failed: {detail}");
}

#[test]
fn criterion_1_projector_algebra() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut worst_annihilation = 0.0_f64;
    let mut worst_idempotent = 0.0_f64;
    let mut worst_symmetric = 0.0_f64;
    let mut worst_trace = 0.0_f64;
    let mut worst_agreement = 0.0_f64;
    let mut rank_mismatches = 0;
    let mut closed_form_cases = 0;
    for case in 0..500u64 {
        let mut rng = rng_from_seed(derive_seed(0xA1, &[case]));
        let c = rng.random_range(2..=10);
        let h = rng.random_range(8..=512);
        // every fifth map is built with a known lower rank
        let (m, rank) = if case % 5 == 4 {
            let r = rng.random_range(1..c);
            let a = seeded_gaussian(c, r, derive_seed(case, &[1]), 1.0);
            let b = seeded_gaussian(r, h, derive_seed(case, &[2]), 1.0);
            (a.matmul(&b).unwrap(), r)
        } else {
            (seeded_gaussian(c, h, derive_seed(case, &[3]), 1.0), c)
        };
        // a wide map (c > h) has rank h and an empty null space
        let rank = rank.min(h);
        let proj = null_projector_svd(&m, 0.0).unwrap();
        let p = proj.matrix();
        if proj.source_rank() != rank {
            rank_mismatches += 1;
        }
        worst_annihilation = worst_annihilation.max(m.matmul(p).unwrap().max_abs() / m.max_abs());
        worst_idempotent = worst_idempotent.max(max_abs_diff(&p.matmul(p).unwrap(), p));
        worst_symmetric = worst_symmetric.max(max_abs_diff(p, &p.transpose()));
        worst_trace = worst_trace.max((p.trace() - (h - rank) as f64).abs());
        if rank == c && c <= h {
            closed_form_cases += 1;
            let closed = null_projector_closed_form(&m).unwrap();
            worst_agreement = worst_agreement.max(max_abs_diff(closed.matrix(), p));
        }
    }
    finish(
        1,
        "projector algebra on 500 maps",
        &[
            (worst_annihilation <= 1e-10, format!("max |MP|/|M|max {worst_annihilation:.2e}")),
            (worst_idempotent <= 1e-10, format!("max |P²−P| {worst_idempotent:.2e}")),
            (worst_symmetric <= 1e-10, format!("max |P−Pᵀ| {worst_symmetric:.2e}")),
            (
                worst_trace <= 1e-9 && rank_mismatches == 0,
                format!("max |tr P − (h−rank)| {worst_trace:.2e}, rank mismatches {rank_mismatches}"),
            ),
            (
                worst_agreement <= 1e-8,
                format!("SVD vs closed form {worst_agreement:.2e} over {closed_form_cases} maps"),
            ),
        ],
        start,
        Duration::from_secs(60),
    );
}

/// Norm-wise relative error of an analytic gradient against central differences.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0_f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = numeric.iter().fold(0.0_f64, |m, n| m.max(n.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

const FD_STEP: f64 = 1e-5;

fn central_difference(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Vec<f64> {
    (0..x.data().len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += FD_STEP;
            let mut minus = x.clone();
            minus.data_mut()[i] -= FD_STEP;
            (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
        })
        .collect()
}

fn with_layer(model: &NetworkModel, layer: usize, weight: Matrix, bias: Vec<f64>) -> NetworkModel {
    let mut layers: Vec<LayerParams> = model.layers().cloned().collect();
    layers[layer].weight = weight;
    layers[layer].bias = bias;
    let last = layers.pop().unwrap();
    NetworkModel::new(layers, last).unwrap()
}

/// Input batch whose pre-activations all keep a margin from the ReLU kink.
fn kink_free_input(model: &NetworkModel, n: usize, seed: u64) -> Matrix {
    for attempt in 0.. {
        let x = seeded_gaussian(n, model.input_dim(), derive_seed(seed, &[attempt]), 1.0);
        let trace = model.forward(&x).unwrap();
        if trace
            .pre_activations
            .iter()
            .all(|z| z.data().iter().all(|v| v.abs() > 1e-3))
        {
            return x;
        }
    }
    unreachable!()
}

#[test]
fn criterion_2_gradient_fidelity() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut worst_loss = 0.0_f64;
    let mut worst_param = 0.0_f64;
    let mut worst_input = 0.0_f64;
    for case in 0..50u64 {
        let dims = random_dims(derive_seed(0xB2, &[case]));
        let model = random_model(&dims, derive_seed(0xB2, &[case, 1]), 0.8);
        let c = model.class_count();
        let n = 3;
        let labels = random_labels(n, c, derive_seed(0xB2, &[case, 2]));
        let x = kink_free_input(&model, n, derive_seed(0xB2, &[case, 3]));
        let beta = rng_from_seed(case).random_range(0.1..5.0);

        // losses against their logits
        let za = seeded_gaussian(n, c, derive_seed(case, &[4]), 2.0);
        let zb = seeded_gaussian(n, c, derive_seed(case, &[5]), 2.0);
        let ce = cross_entropy(&za, &labels).unwrap();
        let fd = central_difference(&za, |z| cross_entropy(z, &labels).unwrap().value);
        worst_loss = worst_loss.max(relative_error(ce.logit_grad.data(), &fd));
        let lse = lse_loss(&za, &labels).unwrap();
        let fd = central_difference(&za, |z| lse_loss(z, &labels).unwrap().value);
        worst_loss = worst_loss.max(relative_error(lse.logit_grad.data(), &fd));
        let kl = kl_divergence(&za, &zb).unwrap();
        let fd = central_difference(&za, |z| kl_divergence(z, &zb).unwrap().value);
        worst_loss = worst_loss.max(relative_error(kl.clean_grad.data(), &fd));
        let fd = central_difference(&zb, |z| kl_divergence(&za, z).unwrap().value);
        worst_loss = worst_loss.max(relative_error(kl.adv_grad.data(), &fd));
        let tr = trades_loss(&za, &zb, &labels, beta).unwrap();
        let fd = central_difference(&za, |z| trades_loss(z, &zb, &labels, beta).unwrap().value);
        worst_loss = worst_loss.max(relative_error(tr.clean_grad.data(), &fd));
        let fd = central_difference(&zb, |z| trades_loss(&za, z, &labels, beta).unwrap().value);
        worst_loss = worst_loss.max(relative_error(tr.adv_grad.data(), &fd));

        // full backward pass through the network
        let loss_of = |m: &NetworkModel, input: &Matrix| {
            cross_entropy(&m.predict(input).unwrap(), &labels).unwrap().value
        };
        let trace = model.forward(&x).unwrap();
        let lg = cross_entropy(&trace.logits, &labels).unwrap().logit_grad;
        let grads = model.backward_params(&trace, &lg).unwrap();
        let layer_grads: Vec<_> = grads.backbone.iter().chain(std::iter::once(&grads.last_layer)).collect();
        for (li, layer) in model.layers().enumerate() {
            let fd_w = central_difference(&layer.weight, |w| {
                loss_of(&with_layer(&model, li, w.clone(), layer.bias.clone()), &x)
            });
            worst_param = worst_param.max(relative_error(layer_grads[li].weight.data(), &fd_w));
            let b = Matrix::row_vector(&layer.bias);
            let fd_b = central_difference(&b, |bv| {
                loss_of(&with_layer(&model, li, layer.weight.clone(), bv.data().to_vec()), &x)
            });
            worst_param = worst_param.max(relative_error(&layer_grads[li].bias, &fd_b));
        }
        let gx = model.input_grad(&trace, &lg).unwrap();
        let fd_x = central_difference(&x, |xi| loss_of(&model, xi));
        worst_input = worst_input.max(relative_error(gx.data(), &fd_x));
    }
    finish(
        2,
        "gradient fidelity on 50 random models",
        &[
            (worst_loss < 1e-4, format!("losses {worst_loss:.2e}")),
            (worst_param < 1e-4, format!("parameters {worst_param:.2e}")),
            (worst_input < 1e-4, format!("input {worst_input:.2e}")),
        ],
        start,
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_3_npda_constraint() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    // (a) every batch of a full NPDA run
    let cfg = shipped_config("blobs_npda.json", dir.path());
    let (train_set, test_set) = load_datasets(&cfg).unwrap();
    let std_dir = dir.path().join("std");
    let std_run = standard_phase(&cfg, &train_set, &test_set, None, &std_dir).unwrap();
    let run = adversarial_phase(
        &cfg,
        &train_set,
        &test_set,
        Method::Npda,
        cfg.train.beta,
        &std_run.train.model,
        &std_dir.join("model.bin"),
        &dir.path().join("npda"),
    )
    .unwrap();
    let residual = run.train.direction_residual.unwrap_or(f64::INFINITY);

    // (b) identity backbone, sign off: std logits unchanged
    let mut worst_logit_change = 0.0_f64;
    for case in 0..50u64 {
        let mut rng = rng_from_seed(derive_seed(0xC3, &[case]));
        let d = rng.random_range(4..=12);
        let c = rng.random_range(2..d);
        let std_model = random_model(&[d, c], derive_seed(case, &[1]), 1.0);
        let adv_model = random_model(&[d, c], derive_seed(case, &[2]), 1.0);
        let projector = null_projector_svd(std_model.last_weight(), 0.0).unwrap();
        let x = seeded_gaussian(8, d, derive_seed(case, &[3]), 1.0);
        let labels = random_labels(8, c, derive_seed(case, &[4]));
        let spec = AttackSpec {
            use_sign: false,
            random_start_scale: 0.0,
            ..AttackSpec::new(1e6, 0.5, 1 + case as usize % 5)
        };
        let loss = [LossKind::Ce, LossKind::Lse, LossKind::Trades][case as usize % 3];
        let adv = npda_generate(&adv_model, &projector, &x, &labels, &spec, loss, case).unwrap();
        let before = std_model.predict(&x).unwrap();
        let after = std_model.predict(&adv).unwrap();
        worst_logit_change = worst_logit_change.max(max_abs_diff(&before, &after));
    }
    finish(
        3,
        "NPDA null-space constraint",
        &[
            (
                residual <= 1e-10,
                format!(
                    "max |M_std g|/|M_std|max {residual:.2e} over {} batches",
                    run.train.update_steps
                ),
            ),
            (
                worst_logit_change <= 1e-9,
                format!("linear-backbone std logit change {worst_logit_change:.2e}"),
            ),
        ],
        start,
        Duration::from_secs(30),
    );
}

#[test]
fn criterion_4_npgd_matrix_invariant() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shipped_config("blobs_npgd.json", dir.path());
    cfg.train.freeze_backbone = true;
    cfg.train.epochs = 8;
    let (train_set, test_set) = load_datasets(&cfg).unwrap();
    let std_dir = dir.path().join("std");
    let std_run = standard_phase(&cfg, &train_set, &test_set, None, &std_dir).unwrap();
    let run = adversarial_phase(
        &cfg,
        &train_set,
        &test_set,
        Method::Npgd,
        cfg.train.beta,
        &std_run.train.model,
        &std_dir.join("model.bin"),
        &dir.path().join("npgd"),
    )
    .unwrap();
    let m_std = std_run.train.model.last_weight();
    let m_final = run.train.model.last_weight();
    let residual = m_std.matmul_t(&m_final.sub(m_std).unwrap()).unwrap().max_abs();
    let bound = 1e-9 * m_std.max_abs() * 500.0;
    let moved = max_abs_diff(m_final, m_std);
    let backbone_frozen = run.train.model.backbone() == std_run.train.model.backbone();
    finish(
        4,
        "frozen-backbone NPGD last-layer invariant",
        &[
            (run.train.update_steps >= 500, format!("{} update steps", run.train.update_steps)),
            (residual <= bound, format!("|M_std (M−M_std)ᵀ|max {residual:.2e} ≤ {bound:.2e}")),
            (moved > 0.0, format!("last layer moved by {moved:.3e}")),
            (backbone_frozen, "backbone unchanged".to_string()),
        ],
        start,
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_5_attack_contracts() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut ball_violations = 0;
    let mut clamp_violations = 0;
    let mut nondeterministic = 0;
    let mut zero_eps_failures = 0;
    let mut zero_eps_cases = 0;
    for case in 0..100u64 {
        let mut rng = rng_from_seed(derive_seed(0xD5, &[case]));
        let dims = random_dims(derive_seed(0xD5, &[case, 1]));
        let model = random_model(&dims, derive_seed(0xD5, &[case, 2]), 1.0);
        let n = 6;
        let labels = random_labels(n, model.class_count(), derive_seed(case, &[3]));
        let clamp = (case % 2 == 0).then_some((-1.5, 1.5));
        let x = match clamp {
            Some(_) => Matrix::from_fn(n, model.input_dim(), |_, _| rng.random_range(-1.5..=1.5)),
            None => seeded_gaussian(n, model.input_dim(), derive_seed(case, &[4]), 2.0),
        };
        let epsilon = if case % 10 == 0 { 0.0 } else { rng.random_range(0.01..1.0) };
        let spec = AttackSpec {
            value_clamp: clamp,
            random_start_scale: [0.0, 0.001, 0.5][case as usize % 3],
            use_sign: case % 7 != 0,
            ..AttackSpec::new(epsilon, rng.random_range(0.01..0.5), rng.random_range(0..=10))
        };
        let loss = [LossKind::Ce, LossKind::Lse, LossKind::Trades][case as usize % 3];
        let projector = null_projector_svd(model.last_weight(), 0.0).unwrap();
        let generate = |seed| {
            if case % 4 == 3 {
                npda_generate(&model, &projector, &x, &labels, &spec, loss, seed).unwrap()
            } else {
                pgd_attack(&model, &x, &labels, &spec, loss, seed).unwrap()
            }
        };
        let adv = generate(case);
        if max_abs_diff(&adv, &x) > epsilon + 1e-12 {
            ball_violations += 1;
        }
        if let Some((lo, hi)) = clamp {
            if adv.data().iter().any(|&v| v < lo || v > hi) {
                clamp_violations += 1;
            }
        }
        if generate(case) != adv {
            nondeterministic += 1;
        }
        if epsilon == 0.0 {
            zero_eps_cases += 1;
            if adv != x {
                zero_eps_failures += 1;
            }
        }
    }
    finish(
        5,
        "attack contracts on 100 cases",
        &[
            (ball_violations == 0, format!("ball violations {ball_violations}")),
            (clamp_violations == 0, format!("clamp violations {clamp_violations}")),
            (nondeterministic == 0, format!("nondeterministic {nondeterministic}")),
            (
                zero_eps_failures == 0,
                format!("ε = 0 failures {zero_eps_failures}/{zero_eps_cases}"),
            ),
        ],
        start,
        Duration::from_secs(30),
    );
}

#[test]
fn criterion_6_desk_scale_tradeoff() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let npgd_cfg = shipped_config("blobs_npgd.json", dir.path());
    let npda_cfg = shipped_config("blobs_npda.json", dir.path());
    assert_eq!(npgd_cfg.dataset, npda_cfg.dataset);
    assert_eq!(npgd_cfg.standard, npda_cfg.standard);

    let (train_set, test_set) = load_datasets(&npgd_cfg).unwrap();
    let std_dir = dir.path().join("std");
    let std_run = standard_phase(&npgd_cfg, &train_set, &test_set, None, &std_dir).unwrap();
    let std_path = std_dir.join("model.bin");
    let run = |cfg: &npat::harness::ExperimentConfig, name: &str| {
        adversarial_phase(
            cfg,
            &train_set,
            &test_set,
            cfg.train.method,
            cfg.train.beta,
            &std_run.train.model,
            &std_path,
            &dir.path().join(name),
        )
        .unwrap()
        .eval
    };
    let npgd = run(&npgd_cfg, "npgd");
    let npda = run(&npda_cfg, "npda");
    let std = &std_run.eval;
    let pct = |v: f64| 100.0 * v;
    let gap = |a: f64, b: f64| 100.0 * (a - b);
    finish(
        6,
        "desk-scale trade-off on blobs",
        &[
            (std.clean_error <= 0.01, format!("std clean {:.1}% pgd {:.1}%", pct(std.clean_error), pct(std.pgd_error))),
            (
                (npgd.clean_error - std.clean_error).abs() <= 0.01,
                format!("NPGD clean {:.1}% (Δ {:+.1} pt)", pct(npgd.clean_error), gap(npgd.clean_error, std.clean_error)),
            ),
            (
                std.pgd_error - npgd.pgd_error >= 0.10,
                format!("NPGD pgd {:.1}% (−{:.1} pt)", pct(npgd.pgd_error), gap(std.pgd_error, npgd.pgd_error)),
            ),
            (
                (npda.clean_error - std.clean_error).abs() <= 0.01,
                format!("NPDA clean {:.1}% (Δ {:+.1} pt)", pct(npda.clean_error), gap(npda.clean_error, std.clean_error)),
            ),
            (
                std.pgd_error - npda.pgd_error >= 0.05,
                format!("NPDA pgd {:.1}% (−{:.1} pt)", pct(npda.pgd_error), gap(std.pgd_error, npda.pgd_error)),
            ),
        ],
        start,
        Duration::from_secs(600),
    );
}

#[test]
fn criterion_7_beta_trend() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = shipped_config("blobs_beta.json", dir.path());
    assert_eq!(cfg.methods(), vec![Method::Npgd]);
    assert_eq!(cfg.betas(), vec![0.5, 1.5, 5.0]);
    let rows = run_sweep(&cfg).unwrap();
    let errors: Vec<f64> = rows.iter().map(|r| r.pgd_error).collect();
    let inversions: Vec<f64> = errors.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
    let trend_ok = inversions.is_empty() || (inversions.len() == 1 && inversions[0] <= 0.01);
    let listing = rows
        .iter()
        .map(|r| format!("β {} → {:.1}%", r.beta, 100.0 * r.pgd_error))
        .collect::<Vec<_>>()
        .join(", ");
    finish(
        7,
        "NPGD robust error nonincreasing in β",
        &[(trend_ok && rows.len() == 3, listing)],
        start,
        Duration::from_secs(900),
    );
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn criterion_8_reproducibility() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = serde_json::json!({
        "seed": 42,
        "output_dir": out,
        "dataset": {"kind": "blobs", "n_train": 200, "n_test": 100, "dim": 6, "classes": 3,
                    "separation": 4.0, "strong_dims": 3, "weak_scale": 0.5},
        "model": {"hidden": [10]},
        "standard": {"learning_rate": 0.05, "batch_size": 32, "epochs": 3},
        "train": {"method": "npgd", "loss": "trades", "learning_rate": 0.05, "batch_size": 32, "epochs": 2,
                  "attack": {"epsilon": 0.5, "step_size": 0.2, "steps": 3}},
        "eval_attack": {"epsilon": 0.5, "step_size": 0.1, "steps": 5},
        "sweep": {"methods": ["standard", "pgd_at", "trades", "npda", "npgd"], "betas": [0.5, 1.5],
                  "hidden_sizes": [6, 12]},
        "landscape": {"resolution": 5, "anchors": 2}
    });
    let config_path = dir.path().join("config.json");
    fs::write(&config_path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();

    let rows = run_experiment(&config_path).unwrap();
    let first = snapshot(&out);
    fs::remove_dir_all(&out).unwrap();
    run_experiment(&config_path).unwrap();
    let second = snapshot(&out);

    let differing: Vec<&String> = first
        .keys()
        .filter(|k| second.get(*k) != first.get(*k))
        .chain(second.keys().filter(|k| !first.contains_key(*k)))
        .collect();
    let csv_json = first.keys().filter(|k| k.ends_with(".csv") || k.ends_with(".json")).count();
    finish(
        8,
        "byte-identical reruns of run_experiment",
        &[
            (differing.is_empty(), format!("{} files compared, {} differ", first.len(), differing.len())),
            (csv_json > 0 && rows.len() == 20, format!("{csv_json} CSV/JSON files, {} summary rows", rows.len())),
        ],
        start,
        Duration::from_secs(600),
    );
}
