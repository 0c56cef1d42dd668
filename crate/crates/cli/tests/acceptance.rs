//! Whole-artifact acceptance checks.
//!
//! Each numbered test certifies one shipped guarantee end to end: exact
//! parameter fingerprints through the command line, finite-difference
//! certification of every layer and block backward pass, an end-to-end
//! gradient check of a full network, trainability on a corpus the model
//! must memorize, frontend shapes, scheduler conformance, the statistics
//! stack against independent oracles, and bit-level determinism of the
//! experiment runner. On success each test prints a single
//! `criterion N: pass` line (visible with `--nocapture`), so the suite
//! doubles as a release checklist.
//!
//! The full-scale experiment grids (criterion 10) are not reproduced here —
//! they need the real datasets and days of compute — but the shipped
//! configs for them are parsed and their network plans proven viable.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rawres_core::audio::{fit_length, log_mel, Clip, Normalize};
use rawres_core::datasets::{synthetic_dataset, Split};
use rawres_core::gradcheck::{
    finite_diff_grad, max_relative_error, max_relative_error_floored, relative_error,
};
use rawres_core::layers::{
    BatchNorm, BatchNormSpec, Conv, ConvSpec, DenseSoftmax, GlobalAvgPool, LayerNode, MaxPool,
    Mode, Rank, Relu,
};
use rawres_core::model::{tiny1d_plan, ArchPlan, Network, StagePlan};
use rawres_core::resblocks::{build_block, BlockKind, ResBlock};
use rawres_core::rng::Rng;
use rawres_core::stats::{one_way_anova, q_crit, reg_inc_beta, tukey_kramer};
use rawres_core::tensor::Tensor;
use rawres_core::training::{
    prepare_split_data, train, ExperimentConfig, Hyper, Preproc, ScheduleState,
};

use proptest::prelude::*;

/// Runs the shipped binary, returning stdout and the exit code.
fn rawres(args: &[&str]) -> (String, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_rawres"))
        .args(args)
        .output()
        .expect("binary should spawn");
    (String::from_utf8_lossy(&out.stdout).into_owned(), out.status.code().unwrap_or(-1))
}

/// Extracts the `total parameters: N` line from `param-count` output.
fn total_parameters(stdout: &str) -> u64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("total parameters: "))
        .expect("param-count prints a total line")
        .trim()
        .parse()
        .expect("numeric total")
}

#[test]
fn criterion_1_one_dim_parameter_totals_are_exact() {
    for kind in ["RB1", "RB2", "RB3", "RB4", "RB5", "RB6"] {
        let expect: u64 = if kind == "RB5" { 3_988_570 } else { 3_989_914 };
        let started = Instant::now();
        let (stdout, code) = rawres(&["param-count", "--arch", "m34res", "--rb", kind]);
        let elapsed = started.elapsed();
        assert_eq!(code, 0, "{kind}");
        assert_eq!(total_parameters(&stdout), expect, "{kind}");
        assert!(elapsed < Duration::from_secs(1), "{kind} took {elapsed:?}");
    }
    println!("criterion 1: pass — 1D totals 3,989,914 (RB1-RB4, RB6) and 3,988,570 (RB5)");
}

#[test]
fn criterion_2_two_dim_parameter_totals_match_the_hand_ledger() {
    for kind in ["RB1", "RB2", "RB3", "RB4", "RB5", "RB6"] {
        let expect: u64 = if kind == "RB5" { 4_165_786 } else { 4_167_130 };
        let started = Instant::now();
        let (stdout, code) = rawres(&["param-count", "--arch", "slim2d", "--rb", kind]);
        let elapsed = started.elapsed();
        assert_eq!(code, 0, "{kind}");
        let total = total_parameters(&stdout);
        assert_eq!(total, expect, "{kind}");
        // Every kind reads 4.16M at two decimals.
        assert_eq!(total / 10_000, 416, "{kind}");
        assert!(elapsed < Duration::from_secs(1), "{kind} took {elapsed:?}");
    }
    println!("criterion 2: pass — 2D totals 4,167,130 (4,165,786 for RB5), all 4.16M");
}

/// Anything with the uniform forward/backward/parameter surface, so one
/// certifier can drive layers and whole residual blocks alike.
trait Certifiable: Clone {
    fn fwd(&mut self, x: &Tensor, mode: Mode) -> Tensor;
    fn bwd(&mut self, upstream: &Tensor) -> Tensor;
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Tensor, &mut Tensor));
}

impl Certifiable for LayerNode {
    fn fwd(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        self.forward(x, mode).unwrap()
    }
    fn bwd(&mut self, upstream: &Tensor) -> Tensor {
        self.backward(upstream).unwrap()
    }
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Tensor, &mut Tensor)) {
        self.visit_params(&mut |_, v, g| f(v, g));
    }
}

impl Certifiable for ResBlock {
    fn fwd(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        self.forward(x, mode).unwrap()
    }
    fn bwd(&mut self, upstream: &Tensor) -> Tensor {
        self.backward(upstream).unwrap()
    }
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Tensor, &mut Tensor)) {
        self.visit_params(&mut |_, v, g| f(v, g));
    }
}

impl Certifiable for GlobalAvgPool {
    fn fwd(&mut self, x: &Tensor, _: Mode) -> Tensor {
        self.forward(x).unwrap()
    }
    fn bwd(&mut self, upstream: &Tensor) -> Tensor {
        self.backward(upstream).unwrap()
    }
    fn for_each_param(&mut self, _: &mut dyn FnMut(&mut Tensor, &mut Tensor)) {}
}

/// Per-coordinate gradient agreement. Live coordinates must match within
/// `tol` relative error. Coordinates where the analytic side is an exact
/// structural zero and the numeric side is pure rounding noise — a conv
/// bias whose per-channel constant the next batch norm's mean subtraction
/// cancels — must agree on being zero; anything analytic-zero but
/// numerically live fails loudly.
fn assert_grads_agree(analytic: &Tensor, numeric: &Tensor, tol: f64, label: &str) {
    assert_eq!(analytic.shape(), numeric.shape(), "{label}: gradient shapes");
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        if a.abs() < 1e-10 && n.abs() < 1e-7 {
            continue;
        }
        let err = relative_error(a, n);
        assert!(err < tol, "{label}[{i}]: analytic {a} vs numeric {n} (error {err})");
    }
}

/// Certifies one unit against the central-difference oracle under a random
/// projection objective: the input gradient and every parameter tensor.
fn certify(proto: &impl Certifiable, x: &Tensor, gsel_seed: u64, tol: f64, label: &str) {
    let mut live = proto.clone();
    let y = live.fwd(x, Mode::Train);
    let gsel = Rng::new(gsel_seed).uniform_tensor(y.shape(), -1.0, 1.0);
    let project =
        |t: &Tensor| -> f64 { t.data().iter().zip(gsel.data()).map(|(a, b)| a * b).sum() };

    let dx = live.bwd(&gsel);
    let mut values: Vec<Tensor> = Vec::new();
    let mut analytic: Vec<Tensor> = Vec::new();
    live.for_each_param(&mut |v, g| {
        values.push(v.clone());
        analytic.push(g.clone());
    });

    let num_dx =
        finite_diff_grad(|p| project(&proto.clone().fwd(p, Mode::Train)), x, 1e-5).unwrap();
    let err = max_relative_error(&dx, &num_dx);
    assert!(err < tol, "{label}: input gradient error {err}");

    for pi in 0..values.len() {
        let num = finite_diff_grad(
            |p| {
                let mut unit = proto.clone();
                let mut j = 0;
                unit.for_each_param(&mut |value, _| {
                    if j == pi {
                        value.data_mut().copy_from_slice(p.data());
                    }
                    j += 1;
                });
                project(&unit.fwd(x, Mode::Train))
            },
            &values[pi],
            1e-5,
        )
        .unwrap();
        assert_grads_agree(&analytic[pi], &num, tol, &format!("{label} parameter {pi}"));
    }
}

/// Uniform samples that stay away from zero (ReLU's kink), alternating in
/// sign so both linear pieces are exercised.
fn signed_away_from_zero(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = rng.uniform_tensor(shape, lo, hi);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        if i % 2 == 0 {
            *v = -*v;
        }
    }
    t
}

/// The classifier head is certified against its own loss rather than a
/// projection, since softmax + cross-entropy is where the loss gradient
/// originates.
fn certify_dense_head(seed: u64) {
    let mut rng = Rng::new(7_000 + seed);
    let proto = DenseSoftmax::new(7, 4, &mut rng).unwrap();
    let x = rng.uniform_tensor(&[3, 7], -1.5, 1.5);
    let labels = [0usize, 2, 3];

    let mut live = proto.clone();
    live.forward(&x).unwrap();
    let dx = live.backward(&labels).unwrap();
    let mut values: Vec<Tensor> = Vec::new();
    let mut analytic: Vec<Tensor> = Vec::new();
    live.visit_params(&mut |_, v, g| {
        values.push(v.clone());
        analytic.push(g.clone());
    });

    let loss_at = |d: &mut DenseSoftmax, p: &Tensor| {
        d.forward(p).unwrap();
        d.loss(&labels).unwrap()
    };
    let num_dx = finite_diff_grad(|p| loss_at(&mut proto.clone(), p), &x, 1e-5).unwrap();
    let err = max_relative_error(&dx, &num_dx);
    assert!(err < 1e-5, "dense head seed {seed}: input gradient error {err}");

    for pi in 0..values.len() {
        let num = finite_diff_grad(
            |p| {
                let mut d = proto.clone();
                let mut j = 0;
                d.visit_params(&mut |_, value, _| {
                    if j == pi {
                        value.data_mut().copy_from_slice(p.data());
                    }
                    j += 1;
                });
                loss_at(&mut d, &x)
            },
            &values[pi],
            1e-5,
        )
        .unwrap();
        let err = max_relative_error(&analytic[pi], &num);
        assert!(err < 1e-5, "dense head seed {seed}: parameter {pi} error {err}");
    }
}

#[test]
fn criterion_3_every_layer_and_block_matches_the_difference_oracle() {
    let started = Instant::now();

    // Per-layer sweep: five seeds each, both ranks.
    for seed in 0..5u64 {
        let mut rng = Rng::new(4_000 + seed);

        let conv1 = LayerNode::Conv(Conv::new(ConvSpec::rank1(5, 2, 2, 3), &mut rng).unwrap());
        let x = rng.uniform_tensor(&[2, 9, 2], -1.0, 1.0);
        certify(&conv1, &x, 31 * seed + 1, 1e-5, &format!("conv1d seed {seed}"));

        let conv2 =
            LayerNode::Conv(Conv::new(ConvSpec::rank2((3, 2), (1, 2), 2, 3), &mut rng).unwrap());
        let x = rng.uniform_tensor(&[2, 4, 6, 2], -1.0, 1.0);
        certify(&conv2, &x, 31 * seed + 2, 1e-5, &format!("conv2d seed {seed}"));

        // Batch norm in training mode, so the backward pass is taken
        // through the batch statistics.
        let bn = LayerNode::BatchNorm(BatchNorm::new(BatchNormSpec::new(3)).unwrap());
        let x = rng.uniform_tensor(&[2, 6, 3], -2.0, 2.0);
        certify(&bn, &x, 31 * seed + 3, 1e-5, &format!("batchnorm1d seed {seed}"));
        let x = rng.uniform_tensor(&[2, 3, 4, 3], -2.0, 2.0);
        certify(&bn, &x, 31 * seed + 4, 1e-5, &format!("batchnorm2d seed {seed}"));

        let relu = LayerNode::Relu(Relu::new());
        let x = signed_away_from_zero(&mut rng, &[2, 9, 3], 0.3, 2.0);
        certify(&relu, &x, 31 * seed + 5, 1e-5, &format!("relu1d seed {seed}"));
        let x = signed_away_from_zero(&mut rng, &[2, 3, 4, 2], 0.3, 2.0);
        certify(&relu, &x, 31 * seed + 6, 1e-5, &format!("relu2d seed {seed}"));

        let pool1 = LayerNode::MaxPool(MaxPool::rank1(2).unwrap());
        let x = rng.uniform_tensor(&[2, 8, 2], -1.0, 1.0);
        certify(&pool1, &x, 31 * seed + 7, 1e-5, &format!("maxpool1d seed {seed}"));
        let pool2 = LayerNode::MaxPool(MaxPool::rank2((2, 2)).unwrap());
        let x = rng.uniform_tensor(&[2, 4, 6, 2], -1.0, 1.0);
        certify(&pool2, &x, 31 * seed + 8, 1e-5, &format!("maxpool2d seed {seed}"));

        let gap = GlobalAvgPool::new();
        let x = rng.uniform_tensor(&[2, 5, 3], -1.0, 1.0);
        certify(&gap, &x, 31 * seed + 9, 1e-5, &format!("gap1d seed {seed}"));
        let x = rng.uniform_tensor(&[2, 3, 4, 2], -1.0, 1.0);
        certify(&gap, &x, 31 * seed + 10, 1e-5, &format!("gap2d seed {seed}"));

        certify_dense_head(seed);
    }

    // Every block wiring: both ranks, equal-width and channel-expanding
    // shortcuts, five seeds each.
    let mut combos = 0;
    for kind in BlockKind::all() {
        for rank in [Rank::One, Rank::Two] {
            for (cin, cout) in [(3usize, 3usize), (2, 4)] {
                for seed in 0..5u64 {
                    let mut rng =
                        Rng::new(5_000 + seed).derive(&[kind.as_u8() as u64, rank.as_u8() as u64, cout as u64]);
                    let block = build_block(kind, rank, cin, cout, &mut rng).unwrap();
                    let shape: Vec<usize> = match rank {
                        Rank::One => vec![2, 5, cin],
                        Rank::Two => vec![2, 4, 5, cin],
                    };
                    let x = rng.uniform_tensor(&shape, -1.0, 1.0);
                    let label = format!("{kind} rank {} {cin}->{cout} seed {seed}", rank.as_u8());
                    certify(&block, &x, 6_000 + combos, 1e-5, &label);
                    combos += 1;
                }
            }
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    println!(
        "criterion 3: pass — {combos} block configs and all layer types within 1e-5 of the oracle"
    );
}

#[test]
fn criterion_4_tiny_network_end_to_end_gradients() {
    let started = Instant::now();
    // Documented tiny configuration: one block per stage at widths
    // 4/8/16/32, 256 input samples.
    let plan = tiny1d_plan(256, 10);
    assert_eq!(
        plan.stages.iter().map(|s| (s.width, s.depth)).collect::<Vec<_>>(),
        vec![(4, 1), (8, 1), (16, 1), (32, 1)]
    );

    let mut tensors_checked = 0;
    for kind in BlockKind::all() {
        let mut rng = Rng::new(41).derive(&[kind.as_u8() as u64]);
        let proto = Network::build(plan.clone(), kind, &mut rng).unwrap();
        let x = rng.uniform_tensor(&[2, 256, 1], -1.0, 1.0);
        let labels = [3usize, 7];

        let mut live = proto.clone();
        live.forward(&x, Mode::Train).unwrap();
        live.backward(&labels).unwrap();
        let mut values: Vec<Tensor> = Vec::new();
        let mut analytic: Vec<Tensor> = Vec::new();
        live.visit_params(&mut |_, v, g| {
            values.push(v.clone());
            analytic.push(g.clone());
        });

        for pi in 0..values.len() {
            let num = finite_diff_grad(
                |p| {
                    let mut net = proto.clone();
                    let mut j = 0;
                    net.visit_params(&mut |_, value, _| {
                        if j == pi {
                            value.data_mut().copy_from_slice(p.data());
                        }
                        j += 1;
                    });
                    net.forward(&x, Mode::Train).unwrap();
                    net.loss(&labels).unwrap()
                },
                &values[pi],
                1e-5,
            )
            .unwrap();
            // Floor 1e-5, the oracle's resolving power at this depth: each
            // loss evaluation carries ~5e-10 of accumulated rounding noise,
            // so gradients above the floor are certified at 1e-4 relative
            // error and anything below it — notably the structurally-zero
            // conv biases feeding batch norms, where both sides are pure
            // noise — at 1e-9 absolute.
            let err = max_relative_error_floored(&analytic[pi], &num, 1e-5);
            assert!(err < 1e-4, "{kind} parameter tensor {pi}: error {err}");
        }
        tensors_checked += values.len();
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
    println!(
        "criterion 4: pass — {tensors_checked} parameter tensors across all six kinds within 1e-4"
    );
}

#[test]
fn criterion_5_reduced_network_memorizes_twenty_synthetic_clips() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    // Ten classes, two half-second clips each; every clip lands in the
    // training set because the point is memorization capacity.
    let spec = synthetic_dataset(dir.path(), 77, 10, 2, 0.5, 1).unwrap();
    let all: Vec<usize> = (0..spec.clips.len()).collect();
    let split = Split { train: all.clone(), validation: all.clone(), test: all.clone() };
    let data = prepare_split_data(&spec, &split, Preproc::Raw(Normalize::None)).unwrap();
    assert_eq!(data.train.examples.len(), 20);
    assert_eq!(data.train.shape, vec![4000, 1]);

    // The full-width stem and stage layout at a quarter of the width.
    let plan = ArchPlan {
        rank: Rank::One,
        input_extent: vec![4000],
        in_channels: 1,
        stem_filters: 8,
        stem_kernel: vec![80],
        stem_stride: vec![4],
        stem_pool: Some(vec![4]),
        stages: vec![
            StagePlan { width: 8, depth: 1, pool: Some(vec![4]) },
            StagePlan { width: 16, depth: 1, pool: Some(vec![4]) },
            StagePlan { width: 32, depth: 1, pool: Some(vec![4]) },
            StagePlan { width: 64, depth: 1, pool: None },
        ],
        n_classes: 10,
    };

    // Twenty clips never fill the default 128-clip batch, so training would
    // make exactly one batch-statistics update per epoch, and the 0.99-decay
    // moving averages would still be half unit-init when the plateau schedule
    // gave up on the resulting scrambled validation accuracy. Batch 4 gives
    // five updates per epoch, so the inference-mode statistics settle mid-run;
    // the learning rate stays flat for the whole probe because the schedule's
    // own behavior is certified separately (criterion 7).
    let hyper = Hyper {
        max_epochs: 150,
        batch_size: 4,
        patience_lr: 150,
        patience_stop: 150,
        ..Hyper::default()
    };
    let mut report = Vec::new();
    for kind in [BlockKind::Rb1, BlockKind::Rb5] {
        let mut net =
            Network::build(plan.clone(), kind, &mut Rng::new(500).derive(&[kind.as_u8() as u64]))
                .unwrap();

        // A fresh ten-class network is near-uniform: loss ln 10. Measured
        // in inference mode (the mode every reported metric uses): small
        // initial weights keep activations small through the whole stack,
        // so the logits sit near zero, whereas train-mode batch statistics
        // would re-whiten each layer and inflate the head's spread.
        let (x0, y0) = data.train.batch(&all);
        let mut probe = net.clone();
        probe.forward(&x0, Mode::Infer).unwrap();
        let initial = probe.loss(&y0).unwrap();
        assert!((initial - 10.0f64.ln()).abs() < 0.1, "{kind}: initial loss {initial}");

        let outcome = train(&mut net, &data, &hyper, 9_000 + kind.as_u8() as u64).unwrap();

        // Loss falls over the first five epochs (one stall allowed).
        let head = &outcome.loss_trace[..5.min(outcome.loss_trace.len())];
        let stalls = head.windows(2).filter(|w| w[1] >= w[0]).count();
        assert!(stalls <= 1, "{kind}: early losses {head:?}");

        let reached = outcome
            .train_trace
            .iter()
            .position(|&a| a == 1.0)
            .unwrap_or_else(|| panic!("{kind}: never hit 100% train accuracy in {} epochs", outcome.epochs));
        assert!(reached + 1 <= 150, "{kind}");
        report.push(format!("{kind} at epoch {}", reached + 1));
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1_800), "took {elapsed:?}");
    println!("criterion 5: pass — 100% train accuracy: {}", report.join(", "));
}

#[test]
fn criterion_6_frontend_shapes_are_exact() {
    // 3.3 s of signal at 8 kHz, padded out to the nominal lengths.
    let mut rng = Rng::new(6);
    let samples: Vec<f64> = (0..26_400).map(|_| rng.uniform(-0.5, 0.5)).collect();
    let clip = Clip::new(samples, 8_000).unwrap();

    let four = fit_length(&clip, 4.0);
    assert_eq!(four.samples.len(), 32_000);
    let five = fit_length(&clip, 5.0);
    assert_eq!(five.samples.len(), 40_000);

    assert_eq!(log_mel(&four).unwrap().values.shape(), &[64, 201]);
    assert_eq!(log_mel(&five).unwrap().values.shape(), &[64, 251]);

    // Longer-than-nominal audio is cropped, not padded.
    let long = Clip::new(vec![0.25; 50_000], 8_000).unwrap();
    assert_eq!(fit_length(&long, 4.0).samples.len(), 32_000);

    println!("criterion 6: pass — 32,000/40,000 raw samples; 64x201 and 64x251 log-mel grids");
}

#[test]
fn criterion_7_flat_validation_trace_cuts_lr_three_times_then_stops() {
    let mut schedule = ScheduleState::new(1e-3, 1e-4, 15, 50);
    let mut stops = Vec::new();
    let mut lrs = Vec::new();
    for _ in 1..=60 {
        stops.push(schedule.epoch_end(0.0));
        lrs.push(schedule.lr);
    }

    assert_eq!(stops.iter().position(|&s| s), Some(49), "first stop at epoch 50");
    assert!(stops[49..].iter().all(|&s| s), "stop latches once patience is exhausted");

    // 0.2x cuts after epochs 15, 30, 45 (and 60; training stops first).
    for (i, &lr) in lrs.iter().enumerate() {
        let epoch = i + 1;
        let want = match epoch {
            1..=14 => 1e-3,
            15..=29 => 2e-4,
            30..=44 => 4e-5,
            45..=59 => 8e-6,
            _ => 1.6e-6,
        };
        assert!(((lr - want) / want).abs() < 1e-12, "epoch {epoch}: lr {lr}, want {want}");
    }

    println!("criterion 7: pass — cuts after epochs 15/30/45 (1e-3 -> 2e-4 -> 4e-5 -> 8e-6), stop at 50");
}

#[test]
fn criterion_8_statistics_match_independent_oracles() {
    let started = Instant::now();

    // Textbook two-group table, checked both in-process and through the
    // command line.
    let anova = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
    assert_eq!(anova.f, 13.5);
    assert!((anova.p - 0.0213).abs() < 1e-3, "p = {}", anova.p);

    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results.csv");
    std::fs::write(
        &results,
        "rb,preproc,rep,accuracy,epochs\n\
         RB1,none,0,1,5\nRB1,none,1,2,5\nRB1,none,2,3,5\n\
         RB2,none,0,4,5\nRB2,none,1,5,5\nRB2,none,2,6,5\n",
    )
    .unwrap();
    let (stdout, code) = rawres(&["stats", "--results", results.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.contains("F=13.50"), "{stdout}");
    assert!(stdout.contains("p=0.02131"), "{stdout}");

    // Identical groups: nothing to declare, F = 0, p = 1.
    let labels: Vec<String> = (0..3).map(|i| format!("RB{}", i + 1)).collect();
    let same = vec![vec![0.5, 0.5, 0.5]; 3];
    let matrix = tukey_kramer(&labels, &same, 0.05).unwrap();
    assert!(matrix.is_empty());
    assert_eq!(matrix.f, 0.0);
    assert_eq!(matrix.p, 1.0);

    // Two-group decisions agree with a pooled t-test whose p-value comes
    // through the regularized incomplete beta, an independent path.
    let two: Vec<String> = vec!["a".into(), "b".into()];
    let mut rng = Rng::new(1_810);
    let mut significant_seen = 0;
    for round in 0..100 {
        let n1 = 3 + rng.next_below(5) as usize;
        let n2 = 3 + rng.next_below(5) as usize;
        let gap = rng.uniform(0.0, 2.0);
        let g1: Vec<f64> = (0..n1).map(|_| rng.next_gaussian()).collect();
        let g2: Vec<f64> = (0..n2).map(|_| gap + rng.next_gaussian()).collect();

        let m = tukey_kramer(&two, &[g1.clone(), g2.clone()], 0.05).unwrap();

        let (m1, m2) =
            (g1.iter().sum::<f64>() / n1 as f64, g2.iter().sum::<f64>() / n2 as f64);
        let ss: f64 = g1.iter().map(|v| (v - m1) * (v - m1)).sum::<f64>()
            + g2.iter().map(|v| (v - m2) * (v - m2)).sum::<f64>();
        let df = (n1 + n2 - 2) as f64;
        let t = (m1 - m2).abs() / ((ss / df) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
        let p_t = reg_inc_beta(0.5 * df, 0.5, df / (df + t * t)).unwrap();

        assert_eq!(m.significant[0][1], p_t <= 0.05, "round {round}: t-test p {p_t}");
        if p_t <= 0.05 {
            significant_seen += 1;
        }
    }
    assert!(significant_seen > 10 && significant_seen < 90, "{significant_seen}");

    // Quadrature against direct simulation: the 95th percentile of the
    // range of six standard normals over sqrt(chi2_54 / 54), the chi2
    // sampled as 2*Gamma(27) by Marsaglia-Tsang.
    let (k, df, draws) = (6usize, 54.0f64, 10_000_000usize);
    let d = df / 2.0 - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    let mut rng = Rng::new(2_027);
    let mut samples = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for _ in 0..k {
            let z = rng.next_gaussian();
            lo = lo.min(z);
            hi = hi.max(z);
        }
        let gamma = loop {
            let x = rng.next_gaussian();
            let t = 1.0 + c * x;
            if t <= 0.0 {
                continue;
            }
            let v = t * t * t;
            let u = rng.next_f64();
            if u < 1.0 - 0.0331 * x * x * x * x || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                break d * v;
            }
        };
        samples.push((hi - lo) / (2.0 * gamma / df).sqrt());
    }
    let idx = (0.95 * draws as f64) as usize;
    let (_, q_mc, _) = samples.select_nth_unstable_by(idx, |a, b| a.partial_cmp(b).unwrap());
    let q = q_crit(0.05, k, df as usize).unwrap();
    assert!((q - *q_mc).abs() < 0.01, "quadrature {q} vs monte carlo {q_mc}");

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    println!("criterion 8: pass — F=13.5, p within 1e-3, t-test agreement 100/100, q_crit within 0.01 of simulation");
}

#[test]
fn criterion_9_experiment_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("grid.conf");
    std::fs::write(
        &config_path,
        format!(
            "dataset = synthetic\n\
             root = {}\n\
             rb_kinds = RB1, RB5\n\
             preprocessing = none\n\
             repetitions = 2\n\
             seed = 9\n\
             epochs = 2\n\
             batch_size = 8\n\
             clip_seconds = 0.2\n\
             synth_classes = 3\n\
             synth_clips_per_class = 4\n\
             synth_folds = 2\n\
             stage_widths = 4, 8, 16, 32\n\
             stage_depths = 1, 1, 1, 1\n",
            dir.path().join("data").display()
        ),
    )
    .unwrap();

    let config = config_path.to_str().unwrap();
    let out1 = dir.path().join("out1");
    let out2 = dir.path().join("out2");
    let (_, code) =
        rawres(&["experiment", "--config", config, "--out", out1.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(code, 0);
    let (_, code) =
        rawres(&["experiment", "--config", config, "--out", out2.to_str().unwrap(), "--jobs", "1"]);
    assert_eq!(code, 0);

    let csv1 = std::fs::read(out1.join("results.csv")).unwrap();
    let csv2 = std::fs::read(out2.join("results.csv")).unwrap();
    assert_eq!(csv1, csv2, "results.csv must be byte-identical across runs and worker counts");
    assert_eq!(
        std::fs::read(out1.join("summary.json")).unwrap(),
        std::fs::read(out2.join("summary.json")).unwrap()
    );

    let text = String::from_utf8(csv1).unwrap();
    assert!(text.starts_with("rb,preproc,rep,accuracy,epochs\n"));
    assert_eq!(text.lines().count(), 5, "header plus 2 kinds x 2 repetitions");

    println!("criterion 9: pass — results.csv and summary.json byte-identical across reruns");
}

#[test]
fn criterion_10_full_scale_configs_parse_and_their_plans_are_viable() {
    // The full grids need the real datasets and days of compute, so they
    // are not run here; this proves the shipped configs parse, carry the
    // full protocol, and describe networks that actually build.
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["urbansound8k_raw.conf", "urbansound8k_logmel.conf", "esc10_raw.conf"] {
        let cfg = ExperimentConfig::from_file(&configs.join(name)).unwrap();
        assert_eq!(cfg.repetitions, 10, "{name}");
        assert_eq!(cfg.hyper.max_epochs, 400, "{name}");
        assert_eq!(cfg.hyper.batch_size, 128, "{name}");
        assert_eq!(cfg.rb_kinds, BlockKind::all().to_vec(), "{name}");
        for &preproc in &cfg.preprocs {
            let plan = cfg.plan(preproc, 10).unwrap();
            // Spatial viability, layer by layer.
            plan.simulate().unwrap_or_else(|e| panic!("{name} / {preproc}: {e}"));
        }
    }

    // The smoke config is runnable as-is and exercises all six kinds.
    let smoke = ExperimentConfig::from_file(&configs.join("synthetic_smoke.conf")).unwrap();
    assert_eq!(smoke.rb_kinds.len(), 6);
    for &preproc in &smoke.preprocs {
        smoke.plan(preproc, smoke.synth.classes).unwrap().simulate().unwrap();
    }

    println!("criterion 10: pass — full-protocol configs parse; every requested plan is viable");
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 32,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    /// Significance decisions depend only on the group geometry, not on the
    /// units accuracy happens to be measured in.
    #[test]
    fn significance_is_invariant_under_positive_affine_maps(
        seed in 0u64..1_000,
        scale in 0.05f64..20.0,
        shift in -5.0f64..5.0,
    ) {
        let mut rng = Rng::new(seed);
        let labels: Vec<String> = (0..3).map(|i| format!("RB{}", i + 1)).collect();
        let groups: Vec<Vec<f64>> = (0..3)
            .map(|g| (0..5).map(|_| g as f64 * 0.4 + rng.next_gaussian() * 0.5).collect())
            .collect();
        let mapped: Vec<Vec<f64>> =
            groups.iter().map(|g| g.iter().map(|v| scale * v + shift).collect()).collect();

        let base = tukey_kramer(&labels, &groups, 0.05).unwrap();
        let moved = tukey_kramer(&labels, &mapped, 0.05).unwrap();
        prop_assert_eq!(base.significant, moved.significant);
    }
}
