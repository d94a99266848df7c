//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines show up in plain
//! `cargo test` output. The process fails when a criterion fails that is
//! not listed in [`KNOWN_SHORTFALLS`].

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{graph_model, permute_both, permute_example, permutation, pooled_and_scores, rng, Instance};
use gma::engine::{affinity_matrix, normalized_laplacian, EncoderMode, EngineOptions};
use gma::graph::{iou, BoundingBox};
use gma::harness::{generate_synthetic, train_on, Checkpoint, DropoutRates, EpochMetrics, RunConfig, Trainer};
use gma::head::{soft_loss, vqa_accuracy};
use gma::numeric::{AdamaxConfig, AdamaxState, Tape, Tensor};

/// Criteria expected to fail, each analysed in the project notes.
const KNOWN_SHORTFALLS: &[&str] = &["encoder ablation"];

/// Epoch budget of each ablation run.
const ABLATION_EPOCHS: usize = 100;
const ABLATION_SEEDS: u64 = 5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_gma"))
        .args(["grad-check", "--size", "small"])
        .output()
        .expect("gma binary runs");
    let elapsed = start.elapsed();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let err = stdout
        .lines()
        .find_map(|l| l.strip_prefix("max relative error: "))
        .and_then(|v| v.trim().parse::<f64>().ok())
        .unwrap_or(f64::NAN);
    verdict(
        out.status.success() && err < 1e-4 && elapsed < Duration::from_secs(60),
        format!("max relative error {err:.2e} in {:.1}s", elapsed.as_secs_f64()),
    )
}

/// Worst deviation of a row sum from 1 over valid rows, and whether every
/// masked entry is exactly zero.
fn row_check(m: &[Vec<f64>], rows: &[bool], cols: &[bool]) -> (f64, bool) {
    let mut worst: f64 = 0.0;
    let mut zeros = true;
    for (i, row) in m.iter().enumerate() {
        if rows[i] {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        for (j, &v) in row.iter().enumerate() {
            if (!rows[i] || !cols[j]) && v != 0.0 {
                zeros = false;
            }
        }
    }
    (worst, zeros)
}

fn normalization() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut zeros = true;
    for seed in 0..100 {
        let inst = Instance::random(seed, 1 + (seed % 3) as usize);
        let out = inst.run(EngineOptions::default());
        let (vm, qm) = (&inst.ctx.visual_mask, &inst.ctx.question_mask);
        for t in &out.traces {
            for (m, r, c) in [
                (t.a_m.as_ref().unwrap(), vm, vm),
                (t.a_n.as_ref().unwrap(), qm, qm),
                (&t.p_v_from_q, vm, qm),
                (&t.p_q_from_v, qm, vm),
            ] {
                let (w, z) = row_check(m, r, c);
                worst = worst.max(w);
                zeros &= z;
            }
        }
    }
    verdict(
        worst < 1e-9 && zeros,
        format!("100 instances, worst row-sum error {worst:.1e}, masked entries zero: {zeros}"),
    )
}

fn equivariance() -> Verdict {
    let mut worst_nodes: f64 = 0.0;
    let mut worst_affinity: f64 = 0.0;
    let mut worst_pooled: f64 = 0.0;
    for seed in 0..50 {
        let inst = Instance::random(1000 + seed, 1 + (seed % 3) as usize);
        let mut r = rng(seed);
        let vp = permutation(&mut r, inst.ctx.k1());
        let qp = permutation(&mut r, inst.ctx.k2());
        let base = inst.run(EngineOptions::default());
        let moved = common::run_stack(
            &inst.store,
            &inst.stack,
            &inst.ctx.permuted(&vp, &qp),
            &inst.visual.permute_rows(&vp),
            &inst.question.permute_rows(&qp),
            EngineOptions::default(),
        );
        worst_nodes = worst_nodes
            .max(moved.visual.max_abs_diff(&base.visual.permute_rows(&vp)))
            .max(moved.question.max_abs_diff(&base.question.permute_rows(&qp)));
        for (a, b) in base.traces.iter().zip(&moved.traces) {
            let s = permute_both(&common::tensor(&a.s_log), &vp, &qp);
            worst_affinity = worst_affinity.max(common::tensor(&b.s_log).max_abs_diff(&s));
        }

        let (model, ex) = graph_model(seed, 1 + (seed % 3) as usize);
        let vp = permutation(&mut r, ex.visual.num_nodes());
        let qp = permutation(&mut r, ex.question.mask().len());
        let (h, y) = pooled_and_scores(&model, &ex);
        let (h2, y2) = pooled_and_scores(&model, &permute_example(&ex, &vp, &qp));
        worst_pooled = worst_pooled.max(h.max_abs_diff(&h2)).max(y.max_abs_diff(&y2));
    }
    verdict(
        worst_nodes < 1e-6 && worst_affinity < 1e-6 && worst_pooled < 1e-6,
        format!(
            "50 instances, node outputs {worst_nodes:.1e}, affinity {worst_affinity:.1e}, pooled h and scores {worst_pooled:.1e}"
        ),
    )
}

fn affinity_identity() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut r = rng(5000 + seed);
        let inst = Instance::random(5000 + seed, 1);
        let d = inst.stack[0].d;
        let x = common::normal(&mut r, inst.ctx.k1(), d);
        let y = common::normal(&mut r, inst.ctx.k2(), d);
        let a = inst.store.get(inst.stack[0].affinity);
        let s1 = affinity_matrix(&x, &y, a, inst.stack[0].tau).unwrap();
        let s2 = affinity_matrix(&x, &y, &a.transpose(), inst.stack[0].tau).unwrap();
        worst = worst.max(s1.max_abs_diff(&s2));

        let mut flipped = Instance::random(5000 + seed, 1);
        let id = flipped.stack[0].affinity;
        *flipped.store.get_mut(id) = a.transpose();
        let (t1, t2) = (inst.run(EngineOptions::default()), flipped.run(EngineOptions::default()));
        let (l1, l2) = (common::tensor(&t1.traces[0].s_log), common::tensor(&t2.traces[0].s_log));
        worst = worst.max(l1.map(f64::exp).max_abs_diff(&l2.map(f64::exp)));
    }
    verdict(worst < 1e-12, format!("100 instances, max |S - S'| = {worst:.1e}"))
}

fn closed_form() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut inst = Instance::random(7000 + seed, 1);
        inst.zero_message_weights();
        let out = inst.run(EngineOptions::default());
        let (vm, vn) = common::uniform_attention_oracle(&inst);
        worst = worst.max(out.visual.max_abs_diff(&vm)).max(out.question.max_abs_diff(&vn));
    }
    verdict(worst < 1e-9, format!("50 instances, max deviation {worst:.1e}"))
}

fn micro_oracles() -> Verdict {
    let mut errors = Vec::new();
    let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
    let b = BoundingBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
    errors.push(("IoU", (iou(&a, &b) - 1.0 / 7.0).abs()));

    let l = normalized_laplacian(&Tensor::filled(2, 2, 1.0), &[true, true]).unwrap();
    errors.push(("Laplacian", l.max_abs_diff(&Tensor::filled(2, 2, 0.5))));

    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row(&[0.0, -1.0, -4.0]));
    let s = tape.softmax_rows(x, None).unwrap();
    let z = 1.0 + (-1.0f64).exp() + (-4.0f64).exp();
    let expected = Tensor::row(&[1.0 / z, (-1.0f64).exp() / z, (-4.0f64).exp() / z]);
    errors.push(("softmax", tape.value(s).max_abs_diff(&expected)));

    let logit = tape.constant(Tensor::row(&[0.0]));
    let loss = soft_loss(&mut tape, logit, &[1.0]).unwrap();
    errors.push(("soft loss", (tape.value(loss).data()[0] - std::f64::consts::LN_2).abs()));

    let mut params = vec![Tensor::row(&[1.0, 1.0])];
    let cfg = AdamaxConfig {
        lr: 0.01,
        ..Default::default()
    };
    let mut state = AdamaxState::for_params(cfg, &params);
    state.step(&mut params, &[&[0.3, -2.0]]).unwrap();
    // After one step m = (1-b1) g and u = |g|, so the bias-corrected update
    // is lr * g / (|g| + eps).
    let step = |g: f64| 0.01 * g / (g.abs() + 1e-8);
    let moved = params[0].max_abs_diff(&Tensor::row(&[1.0 - step(0.3), 1.0 - step(-2.0)]));
    errors.push(("Adamax", moved));

    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let parts: Vec<String> = errors.iter().map(|(n, e)| format!("{n} {e:.0e}")).collect();
    verdict(worst < 1e-6, parts.join(", "))
}

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("gma-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn optimization() -> Verdict {
    let mut cfg = RunConfig::desk();
    cfg.dropout = DropoutRates::NONE;
    cfg.out_dir = scratch("overfit");
    let ds = generate_synthetic(&cfg, 11).unwrap();
    let mut trainer = Trainer::new(cfg, &ds).unwrap();
    let batch: Vec<usize> = (0..8).collect();
    let losses: Vec<f64> = (0..20)
        .map(|step| trainer.train_step(&batch, 1e-3, step).unwrap().iter().sum::<f64>())
        .collect();
    let decreasing = losses.windows(2).all(|w| w[1] < w[0]);

    let mut cfg = RunConfig::desk();
    cfg.out_dir = scratch("desk");
    let start = Instant::now();
    let out = train_on(&cfg, &generate_synthetic(&cfg, cfg.seed).unwrap(), None).unwrap();
    let elapsed = start.elapsed();
    let _ = std::fs::remove_dir_all(&cfg.out_dir);
    let reached = out
        .metrics
        .iter()
        .find(|m| m.train_accuracy >= 0.95 && m.holdout_accuracy.unwrap_or(0.0) >= 0.80);
    let last = out.metrics.last().unwrap();
    let best = out
        .metrics
        .iter()
        .max_by(|a, b| a.holdout_accuracy.partial_cmp(&b.holdout_accuracy).unwrap())
        .unwrap();
    let detail = format!(
        "overfit loss {:.3} -> {:.3} ({}); desk run {} epochs in {:.0}s, {}; final train {:.1}%, held-out {:.1}%, best held-out {:.1}% at epoch {}",
        losses[0],
        losses[19],
        if decreasing { "strictly decreasing" } else { "not monotone" },
        out.metrics.len(),
        elapsed.as_secs_f64(),
        match reached {
            Some(m) => format!("targets met at epoch {}", m.epoch),
            None => "targets never met together".into(),
        },
        100.0 * last.train_accuracy,
        100.0 * last.holdout_accuracy.unwrap_or(0.0),
        100.0 * best.holdout_accuracy.unwrap_or(0.0),
        best.epoch,
    );
    verdict(
        decreasing && reached.is_some() && out.metrics.len() <= 200 && elapsed < Duration::from_secs(900),
        detail,
    )
}

/// Final held-out accuracy (in points) of one ablation run.
fn ablation_run(seed: u64, n_stack: usize, encoder: EncoderMode) -> f64 {
    let mut cfg = RunConfig::desk();
    cfg.seed = seed;
    cfg.n_stack = n_stack;
    cfg.encoder = encoder;
    cfg.epochs = ABLATION_EPOCHS;
    cfg.out_dir = scratch(&format!("ablation-{seed}-{n_stack}-{encoder:?}"));
    let ds = generate_synthetic(&cfg, seed).unwrap();
    let out = train_on(&cfg, &ds, None).unwrap();
    let _ = std::fs::remove_dir_all(&cfg.out_dir);
    let last: &EpochMetrics = out.metrics.last().unwrap();
    100.0 * last.holdout_accuracy.unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_runs(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|a| format!("{a:.1}")).collect();
    format!("mean {:.2} [{}]", mean(v), parts.join(" "))
}

struct Ablation {
    stack: [Vec<f64>; 3],
    explicit: Vec<f64>,
    implicit: Vec<f64>,
}

fn ablations() -> Ablation {
    let mut a = Ablation {
        stack: [Vec::new(), Vec::new(), Vec::new()],
        explicit: Vec::new(),
        implicit: Vec::new(),
    };
    for seed in 0..ABLATION_SEEDS {
        for n in 1..=3 {
            a.stack[n - 1].push(ablation_run(seed, n, EncoderMode::Dual));
        }
        a.explicit.push(ablation_run(seed, 1, EncoderMode::Explicit));
        a.implicit.push(ablation_run(seed, 1, EncoderMode::Implicit));
    }
    a
}

fn stacking(a: &Ablation) -> Verdict {
    let [g1, g2, g3] = &a.stack;
    let wins = g3.iter().zip(g1).filter(|(x, y)| x > y).count();
    verdict(
        mean(g2) >= mean(g1) - 0.5 && mean(g3) >= mean(g1) - 0.5 && wins >= 3,
        format!(
            "GMA-1 {}, GMA-2 {}, GMA-3 {}, GMA-3 beats GMA-1 on {wins}/{ABLATION_SEEDS} seeds",
            fmt_runs(g1),
            fmt_runs(g2),
            fmt_runs(g3)
        ),
    )
}

fn encoders(a: &Ablation) -> Verdict {
    let dual = &a.stack[0];
    let best_single = mean(&a.explicit).max(mean(&a.implicit));
    verdict(
        mean(dual) >= best_single - 0.5,
        format!(
            "dual {}, explicit-only {}, implicit-only {}",
            fmt_runs(dual),
            fmt_runs(&a.explicit),
            fmt_runs(&a.implicit)
        ),
    )
}

fn train_via_cli(config: &Path) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_gma"))
        .args(["train", "--config"])
        .arg(config)
        .env_remove("GMA_SEED")
        .output()
        .expect("gma binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::read(config.parent().unwrap().join("run/metrics.jsonl")).unwrap()
}

fn determinism() -> Verdict {
    let dir = scratch("determinism");
    std::fs::create_dir_all(&dir).unwrap();
    let config = dir.join("run.cfg");
    std::fs::write(&config, "preset = desk\nout_dir = run\nepochs = 3\nseed = 5\n").unwrap();
    let first = train_via_cli(&config);
    let ckpt_path = dir.join("run/checkpoint.gma");
    let first_ckpt = std::fs::read(&ckpt_path).unwrap();
    let second = train_via_cli(&config);
    let second_ckpt = std::fs::read(&ckpt_path).unwrap();

    let ckpt = Checkpoint::from_bytes(&first_ckpt).unwrap();
    let model = ckpt.restore_model(None).unwrap();
    let optimizer = ckpt.restore_optimizer(&model).unwrap();
    let again = Checkpoint::capture(&ckpt.manifest.config, &model, optimizer.as_ref(), ckpt.manifest.epoch);
    let round_trip = again.to_bytes().unwrap() == first_ckpt;
    let _ = std::fs::remove_dir_all(&dir);
    verdict(
        first == second && first_ckpt == second_ckpt && round_trip,
        format!(
            "metrics logs identical: {}, final checkpoints identical: {}, load/save bit-exact: {round_trip}",
            first == second,
            first_ckpt == second_ckpt
        ),
    )
}

fn vqa_anchors() -> Verdict {
    let got: Vec<f64> = [0, 2, 3, 10].iter().map(|&v| vqa_accuracy(v).unwrap()).collect();
    verdict(
        got == [0.0, 2.0 / 3.0, 1.0, 1.0],
        format!("0 -> {}, 2 -> {}, 3 -> {}, 10 -> {}", got[0], got[1], got[2], got[3]),
    )
}

fn report(name: &str, v: &Verdict, failures: &mut Vec<String>) {
    println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    if !v.pass {
        failures.push(name.to_string());
    }
}

fn main() {
    // `cargo test -- --list` and filters are passed through; honour --list.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let start = Instant::now();
    let mut failures = Vec::new();
    let quick: [(&str, fn() -> Verdict); 9] = [
        ("gradient fidelity", gradient_fidelity),
        ("normalization", normalization),
        ("equivariance", equivariance),
        ("affinity identity", affinity_identity),
        ("closed-form oracle", closed_form),
        ("micro-oracles", micro_oracles),
        ("vqa accuracy anchors", vqa_anchors),
        ("determinism", determinism),
        ("optimization smoke", optimization),
    ];
    for (name, f) in quick {
        report(name, &f(), &mut failures);
    }
    let a = ablations();
    report("stacking ablation", &stacking(&a), &mut failures);
    report("encoder ablation", &encoders(&a), &mut failures);
    println!("acceptance finished in {:.0}s", start.elapsed().as_secs_f64());

    let unexpected: Vec<&String> = failures.iter().filter(|f| !KNOWN_SHORTFALLS.contains(&f.as_str())).collect();
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
