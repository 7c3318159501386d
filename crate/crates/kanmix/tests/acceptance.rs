//! Acceptance criteria, one PASS/FAIL line each. Select a subset with
//! `KANMIX_ACCEPTANCE=1,2,6`.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use kanmix::datasets::{load_cifar10, load_idx, Dataset};
use kanmix::Error as IoError;
use kanmix_core::data::kfold_split;
use kanmix_core::gradcheck::{compare, grad_check, grad_check_params, GradCheckConfig, GradCheckReport};
use kanmix_core::stats::{percent_difference, verdict, wilcoxon_signed_rank, Verdict};
use kanmix_core::train::{fold_rng, train_model, Stream};
use kanmix_core::{
    Augmentation, ImageSet, KanLinear, MixerConfig, Mode, Model, ModelKind, ParamStore, Result, SplineGrid, Split,
    Tape, Tensor, TrainConfig, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn data_dir() -> PathBuf {
    std::env::var_os("KANMIX_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect()).unwrap()
}

fn weighted(t: &mut Tape<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let r = t.constant(random(t.shape(y), seed, 1.0));
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

type Loss = Box<dyn Fn(&mut Tape<'_, f64>, Var) -> Result<Var>>;

fn gradient_suite() -> Result<Outcome> {
    let start = Instant::now();
    let tol = GradCheckConfig::with_tol(1e-6);
    let mut reports: Vec<(String, GradCheckReport)> = Vec::new();

    let x = random(&[2, 3, 4], 1, 1.5);
    let m34 = random(&[4, 5], 2, 1.0);
    let w54 = random(&[5, 4], 3, 1.0);
    let same = random(&[2, 3, 4], 4, 1.0);
    let bias = random(&[4], 5, 1.0);
    let gamma = random(&[4], 6, 1.0);
    let beta = random(&[4], 7, 1.0);
    let cases: Vec<(&str, Loss)> = vec![
        ("matmul", Box::new(move |t, x| {
            let w = t.constant(m34.clone());
            let y = t.matmul(x, w)?;
            weighted(t, y, 10)
        })),
        ("matmul_t", Box::new(move |t, x| {
            let w = t.constant(w54.clone());
            let y = t.matmul_t(x, w)?;
            weighted(t, y, 10)
        })),
        ("add", Box::new(move |t, x| {
            let o = t.constant(same.clone());
            let y = t.add(x, o)?;
            weighted(t, y, 10)
        })),
        ("add_bias", Box::new(move |t, x| {
            let b = t.constant(bias.clone());
            let y = t.add_bias(x, b)?;
            weighted(t, y, 10)
        })),
        ("mul", Box::new(|t, x| {
            let y = t.mul(x, x)?;
            weighted(t, y, 10)
        })),
        ("scale", Box::new(|t, x| {
            let y = t.scale(x, 0.7);
            weighted(t, y, 10)
        })),
        ("sum", Box::new(|t, x| {
            let y = t.mul(x, x)?;
            Ok(t.sum(y))
        })),
        ("mean", Box::new(|t, x| {
            let y = t.mul(x, x)?;
            Ok(t.mean(y))
        })),
        ("reshape", Box::new(|t, x| {
            let y = t.reshape(x, &[6, 4])?;
            weighted(t, y, 10)
        })),
        ("transpose_tokens", Box::new(|t, x| {
            let y = t.transpose_tokens(x)?;
            weighted(t, y, 10)
        })),
        ("layer_norm", Box::new(move |t, x| {
            let (g, b) = (t.constant(gamma.clone()), t.constant(beta.clone()));
            let y = t.layer_norm(x, g, b, 1e-5)?;
            weighted(t, y, 10)
        })),
        ("silu", Box::new(|t, x| {
            let y = t.silu(x);
            weighted(t, y, 10)
        })),
        ("gelu", Box::new(|t, x| {
            let y = t.gelu(x);
            weighted(t, y, 10)
        })),
        ("dropout", Box::new(|t, x| {
            let y = t.dropout(x, 0.25, true, &mut ChaCha8Rng::seed_from_u64(2))?;
            weighted(t, y, 10)
        })),
        ("global_mean_pool", Box::new(|t, x| {
            let y = t.global_mean_pool(x)?;
            weighted(t, y, 10)
        })),
        ("bspline_basis", Box::new(|t, x| {
            let y = t.bspline_basis(x, SplineGrid::default())?;
            weighted(t, y, 10)
        })),
    ];
    for (name, f) in &cases {
        reports.push((name.to_string(), grad_check(&x, tol, f)?));
    }
    let kink_free = Tensor::new(&[6], vec![-1.2, -0.4, 0.3, 0.8, 1.1, -0.9])?;
    reports.push((
        "relu".into(),
        grad_check(&kink_free, tol, |t, x| {
            let y = t.relu(x);
            weighted(t, y, 11)
        })?,
    ));
    reports.push((
        "softmax_cross_entropy".into(),
        grad_check(&random(&[3, 10], 12, 2.0), tol, |t, x| t.softmax_cross_entropy(x, &[9, 0, 4]))?,
    ));
    let gamma = random(&[4], 6, 1.0);
    reports.push((
        "layer_norm gamma".into(),
        grad_check(&gamma, tol, |t, g| {
            let xv = t.constant(random(&[2, 3, 4], 1, 1.5));
            let b = t.constant(random(&[4], 7, 1.0));
            let y = t.layer_norm(xv, g, b, 1e-5)?;
            weighted(t, y, 10)
        })?,
    ));
    reports.push((
        "layer_norm beta".into(),
        grad_check(&random(&[4], 7, 1.0), tol, |t, b| {
            let xv = t.constant(random(&[2, 3, 4], 1, 1.5));
            let g = t.constant(random(&[4], 6, 1.0));
            let y = t.layer_norm(xv, g, b, 1e-5)?;
            weighted(t, y, 10)
        })?,
    ));
    let mut store = ParamStore::<f64>::new();
    let layer = KanLinear::new(&mut store, "kan", 4, 3, SplineGrid::default(), &mut ChaCha8Rng::seed_from_u64(1))?;
    let input = random(&[5, 4], 13, 1.2);
    reports.push((
        "kan_linear params".into(),
        grad_check_params(&store, None, tol, |t| {
            let xv = t.constant(input.clone());
            let y = layer.forward(t, xv)?;
            weighted(t, y, 14)
        })?,
    ));
    let ops_worst = reports.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    let ops_failed: Vec<&str> = reports.iter().filter(|(_, r)| !r.passed()).map(|(n, _)| n.as_str()).collect();

    let cfg = MixerConfig::new(1, 16, 8, 1);
    let model = Model::<f64>::build(ModelKind::KanMixers, &cfg, &mut ChaCha8Rng::seed_from_u64(3))?;
    let images = random(&[2, 1, 32, 32], 40, 1.0);
    let full = grad_check_params(&model.params, None, GradCheckConfig::with_tol(1e-4), |t| {
        let logits = model.forward(t, &images, Mode::Train, &mut ChaCha8Rng::seed_from_u64(8))?;
        t.softmax_cross_entropy(logits, &[4, 7])
    })?;

    // a deliberately wrong derivative must be rejected
    let probe = random(&[4], 30, 1.0);
    let control = compare(
        &probe,
        tol,
        |p| Ok(p.data().iter().map(|v| v * v).sum()),
        |x| Ok(Tensor::new(x.shape(), x.data().iter().map(|v| 2.02 * v).collect()).unwrap()),
    )?;

    let secs = start.elapsed().as_secs_f64();
    let pass = ops_failed.is_empty()
        && full.passed()
        && full.checked == model.count_params()
        && !control.passed()
        && secs < 120.0;
    Ok(Outcome::new(
        pass,
        format!(
            "{} op checks, worst rel err {ops_worst:.2e} (tol 1e-6){}; mini KAN-Mixers {} params, worst {:.2e} (tol 1e-4); corrupted control rejected: {}; {secs:.1}s (limit 120s)",
            reports.len(),
            if ops_failed.is_empty() { String::new() } else { format!(", failing {ops_failed:?}") },
            full.checked,
            full.max_rel_error,
            !control.passed()
        ),
    ))
}

/// Cox-de Boor recursion on the extended uniform knot vector of `grid`.
fn cox_de_boor(grid: &SplineGrid, j: usize, k: usize, x: f64) -> f64 {
    let t = |i: usize| grid.knot(i as isize);
    if k == 0 {
        return if t(j) <= x && x < t(j + 1) { 1.0 } else { 0.0 };
    }
    let left = (x - t(j)) / (t(j + k) - t(j)) * cox_de_boor(grid, j, k - 1, x);
    let right = (t(j + k + 1) - x) / (t(j + k + 1) - t(j + 1)) * cox_de_boor(grid, j + 1, k - 1, x);
    left + right
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn spline_suite() -> Result<Outcome> {
    let grid = SplineGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut unity = 0.0f64;
    for _ in 0..1000 {
        let x = rng.random_range(grid.x_min..grid.x_max);
        unity = unity.max((grid.basis(x).iter().sum::<f64>() - 1.0).abs());
    }

    // at an interior knot a cubic basis takes the values 1/6, 2/3, 1/6
    let knot = grid.knot(grid.order as isize + 2);
    let basis = grid.basis(knot);
    let oracle: Vec<f64> = (0..grid.num_basis()).map(|j| cox_de_boor(&grid, j, grid.order, knot)).collect();
    let mut nonzero: Vec<f64> = oracle.iter().copied().filter(|v| v.abs() > 1e-12).collect();
    nonzero.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let expected = [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0];
    let oracle_shape = nonzero.len() == 3 && nonzero.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-10);
    let knot_err = basis.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut oracle_err = 0.0f64;
    for _ in 0..200 {
        let x = rng.random_range(grid.x_min..grid.x_max);
        for (j, b) in grid.basis(x).iter().enumerate() {
            oracle_err = oracle_err.max((b - cox_de_boor(&grid, j, grid.order, x)).abs());
        }
    }

    // batched KAN forward against a scalar per-edge sum built from the oracle
    let mut kan_err = 0.0f64;
    for seed in 0..10u64 {
        let mut store = ParamStore::<f64>::new();
        let layer = KanLinear::new(&mut store, "kan", 4, 4, grid, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let nb = grid.num_basis();
        let coeffs = store.get(layer.spline_weight).data().to_vec();
        let noise: Vec<f64> = (0..coeffs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        store.get_mut(layer.spline_weight).data_mut().copy_from_slice(&noise);
        let xs = random(&[4, 4], 100 + seed, 1.3);
        let mut tape = Tape::new(&store);
        let xv = tape.constant(xs.clone());
        let y = layer.forward(&mut tape, xv)?;
        let base = store.get(layer.base_weight).data();
        for r in 0..4 {
            for o in 0..4 {
                let mut expect = 0.0;
                for i in 0..4 {
                    let x = xs.data()[r * 4 + i];
                    let spline: f64 =
                        (0..nb).map(|j| noise[(o * 4 + i) * nb + j] * cox_de_boor(&grid, j, grid.order, x)).sum();
                    expect += base[o * 4 + i] * silu(x) + spline;
                }
                kan_err = kan_err.max((tape.value(y).data()[r * 4 + o] - expect).abs());
            }
        }
    }
    let pass = unity < 1e-6 && oracle_shape && knot_err < 1e-10 && oracle_err < 1e-10 && kan_err < 1e-10;
    Ok(Outcome::new(
        pass,
        format!(
            "partition of unity max err {unity:.1e} over 1000 points (tol 1e-6); knot values {nonzero:.6?} vs oracle err {knot_err:.1e}, random points err {oracle_err:.1e} (tol 1e-10); batched vs scalar 4x4 KAN max err {kan_err:.1e} over 10 instances (tol 1e-10)"
        ),
    ))
}

fn mixer_suite() -> Result<Outcome> {
    let mut identity = 0;
    let mut identity_ok = true;
    for kind in [ModelKind::KanMixers, ModelKind::MlpMixer] {
        let cfg = MixerConfig::new(2, 8, 12, 3);
        let mut model = Model::<f64>::build(kind, &cfg, &mut ChaCha8Rng::seed_from_u64(1))?;
        for b in model.blocks().to_vec() {
            b.token[1].zero(&mut model.params);
            b.channel[1].zero(&mut model.params);
        }
        let x = random(&[3, cfg.tokens(), cfg.dim], 2, 2.0);
        for block in model.blocks() {
            for mode in [Mode::Train, Mode::Eval] {
                let mut tape = Tape::new(&model.params);
                let v = tape.constant(x.clone());
                let y = block.forward(&mut tape, v, mode, &mut ChaCha8Rng::seed_from_u64(3))?;
                let bitwise = tape.value(y).data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                identity_ok &= bitwise;
                identity += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut shapes_ok = 0;
    for _ in 0..20 {
        let patch = [2, 4, 8, 16, 32][rng.random_range(0..5)];
        let mut cfg = MixerConfig::new(rng.random_range(1..=3), patch, rng.random_range(1..=16), 1);
        cfg.token_hidden = rng.random_range(1..=12);
        cfg.channel_hidden = rng.random_range(1..=12);
        let kind = if rng.random::<bool>() { ModelKind::KanMixers } else { ModelKind::MlpMixer };
        let model = Model::<f32>::build(kind, &cfg, &mut rng)?;
        let b = rng.random_range(1..=4);
        let mut tape = Tape::new(&model.params);
        let x = tape.constant(Tensor::full(&[b, cfg.tokens(), cfg.dim], 0.3));
        let y = model.blocks()[0].forward(&mut tape, x, Mode::Train, &mut rng)?;
        if tape.shape(y) == [b, cfg.tokens(), cfg.dim] {
            shapes_ok += 1;
        }
    }
    Ok(Outcome::new(
        identity_ok && shapes_ok == 20,
        format!("zeroed output sublayers: {identity} block passes bitwise identical: {identity_ok}; (b,S,C) preserved for {shapes_ok}/20 random configs"),
    ))
}

fn fashion_train() -> std::result::Result<ImageSet, String> {
    Dataset::FashionMnist.load(&data_dir(), Split::Train, 32).map_err(|e| e.to_string())
}

/// Learning rate for the desk-scale runs (see README).
const DESK_LR: f64 = 0.001;

fn overfit_smoke() -> Result<Outcome> {
    let data = match fashion_train() {
        Ok(d) => d.take(64),
        Err(e) => return Ok(Outcome::new(false, format!("Fashion-MNIST unavailable: {e}"))),
    };
    let start = Instant::now();
    let mut cfg = TrainConfig::new(ModelKind::KanMixers, MixerConfig::new(1, 4, 64, 2));
    cfg.epochs = 200;
    cfg.lr = DESK_LR;
    cfg.augmentation = Augmentation::off();
    cfg.eval_every_epoch = false;
    cfg.eval_train = true;
    let idx: Vec<usize> = (0..64).collect();
    let mut model = Model::<f32>::build(cfg.kind, &cfg.model, &mut fold_rng(cfg.seed, 0, Stream::Init))?;
    let result = train_model(&mut model, (&data, &idx), (&data, &idx), &cfg, 0, &mut |_| {})?;
    let acc = result.train_eval.map(|m| m.accuracy).unwrap_or(0.0);
    let secs = start.elapsed().as_secs_f64();
    let last = result.epochs.last().map(|e| e.train_loss).unwrap_or(f64::NAN);
    Ok(Outcome::new(
        acc >= 0.98 && secs < 600.0,
        format!(
            "KAN-Mixers dim 64 depth 2, 64 images, 200 epochs, lr {DESK_LR}: train accuracy {acc:.4} (need >= 0.98), final loss {last:.4}; {secs:.0}s (limit 600s)"
        ),
    ))
}

fn desk_scale() -> Result<Outcome> {
    let data = match fashion_train() {
        Ok(d) => d.take(5000),
        Err(e) => return Ok(Outcome::new(false, format!("Fashion-MNIST unavailable: {e}"))),
    };
    let start = Instant::now();
    let mut cfg = TrainConfig::new(ModelKind::KanMixers, MixerConfig::new(1, 4, 64, 4));
    cfg.epochs = 10;
    cfg.lr = DESK_LR;
    cfg.eval_every_epoch = false;
    let folds = kfold_split(data.len(), cfg.folds, cfg.seed)?;
    let fold = &folds[0];
    let mut model = Model::<f32>::build(cfg.kind, &cfg.model, &mut fold_rng(cfg.seed, 0, Stream::Init))?;
    let mut log = |e: &kanmix_core::train::EpochRecord| {
        eprintln!("  [5] epoch {} loss {:.4} train_acc {:.4}", e.epoch, e.train_loss, e.train_acc);
    };
    let result = train_model(&mut model, (&data, &fold.train), (&data, &fold.val), &cfg, 0, &mut log)?;
    let secs = start.elapsed().as_secs_f64();
    let acc = result.accuracy();
    Ok(Outcome::new(
        acc >= 0.80 && secs < 2700.0,
        format!(
            "KAN-Mixers dim 64 depth 4, 5000 images (fold 0: {} train / {} val), 10 epochs, lr {DESK_LR}: validation accuracy {acc:.4} (need >= 0.80); {secs:.0}s (limit 2700s)",
            fold.train.len(),
            fold.val.len()
        ),
    ))
}

fn statistics_oracle() -> Result<Outcome> {
    let w = wilcoxon_signed_rank(&[0.011, 0.004, 0.019, 0.007, 0.013])?;
    let p_exact = w.p == 0.0625;
    // (table, model, mean, reference mean, printed difference %)
    let rows = [
        ("fashion-mnist", "MLP", 0.8873, 0.9030, 1.74),
        ("fashion-mnist", "KAN", 0.8916, 0.9030, 1.26),
        ("fashion-mnist", "MLP-Mixer", 0.8980, 0.9030, 0.55),
        ("cifar10", "MLP", 0.5055, 0.6980, 27.58),
        ("cifar10", "KAN", 0.5400, 0.6980, 22.64),
        ("cifar10", "MLP-Mixer", 0.6741, 0.6980, 3.42),
    ];
    let mut verdicts_ok = 0;
    let mut worst_pp = 0.0f64;
    for (_, _, mean, reference, printed) in rows {
        // five folds with the reference ahead in every one
        let w = wilcoxon_signed_rank(&[0.01, 0.02, 0.03, 0.04, 0.05])?;
        if verdict(w.p, 0.05, mean, reference)? == Verdict::Equivalent
            && verdict(w.p, 0.10, mean, reference)? == Verdict::Inferior
        {
            verdicts_ok += 1;
        }
        worst_pp = worst_pp.max((percent_difference(reference, mean)? - printed).abs());
    }
    let symbols = (Verdict::Equivalent.symbol(), Verdict::Inferior.symbol());
    let pass = p_exact && verdicts_ok == rows.len() && worst_pp <= 0.01 && symbols == ("=", "+");
    Ok(Outcome::new(
        pass,
        format!(
            "p = {} for 5 positive differences (exact 0.0625: {p_exact}); verdicts '=' at 0.05 and '+' at 0.10 for {verdicts_ok}/{} comparison rows; all {} printed Difference (%) cells within {worst_pp:.4} pp (tol 0.01)",
            w.p,
            rows.len(),
            rows.len()
        ),
    ))
}

fn loader_suite() -> Result<Outcome> {
    let mut notes = Vec::new();
    let mut pass = true;
    let dir = data_dir();
    match (
        Dataset::FashionMnist.load(&dir, Split::Train, 28),
        Dataset::FashionMnist.load(&dir, Split::Test, 28),
    ) {
        (Ok(train), Ok(test)) => {
            let ok = train.len() == 60_000 && test.len() == 10_000 && train.image_shape() == [1, 28, 28];
            pass &= ok;
            notes.push(format!("Fashion-MNIST {}/{} at {:?}", train.len(), test.len(), train.image_shape()));
        }
        (a, b) => {
            pass = false;
            let e = a.err().or(b.err()).map(|e| e.to_string()).unwrap_or_default();
            notes.push(format!("Fashion-MNIST unavailable: {e}"));
        }
    }

    let tmp = tempfile::tempdir().expect("temp dir");
    let real_cifar = Dataset::Cifar10.files(&dir, Split::Train).iter().all(|p| p.exists());
    let cifar_dir = if real_cifar {
        dir.clone()
    } else {
        common::write_cifar(tmp.path(), 10_000, 10_000);
        tmp.path().to_path_buf()
    };
    match (
        Dataset::Cifar10.load(&cifar_dir, Split::Train, 32),
        Dataset::Cifar10.load(&cifar_dir, Split::Test, 32),
    ) {
        (Ok(train), Ok(test)) => {
            let ok = train.len() == 50_000
                && test.len() == 10_000
                && train.image_shape() == [3, 32, 32]
                && train.class_counts() == [5000; 10];
            pass &= ok;
            notes.push(format!(
                "CIFAR-10 ({}) {}/{} at {:?}, 5000 training images in every class: {}",
                if real_cifar { "real" } else { "synthetic canonical-format fallback" },
                train.len(),
                test.len(),
                train.image_shape(),
                train.class_counts() == [5000; 10]
            ));
        }
        (a, b) => {
            pass = false;
            notes.push(format!("CIFAR-10 failed: {:?}", a.err().or(b.err())));
        }
    }

    let bad = tmp.path().join("bad");
    fs::create_dir_all(&bad).expect("dir");
    let p = |n: &str| bad.join(n);
    fs::write(p("labels"), common::idx_bytes(0x801, &[2], &[1, 2])).expect("write");
    fs::write(p("magic"), common::idx_bytes(0x802, &[2, 2, 2], &[0; 8])).expect("write");
    fs::write(p("short"), common::idx_bytes(0x803, &[2, 2, 2], &[0; 5])).expect("write");
    fs::write(p("cifar"), vec![0u8; 3073 + 100]).expect("write");
    let negatives = [
        load_idx(&p("magic"), &p("labels"), "x", Split::Train).err(),
        load_idx(&p("short"), &p("labels"), "x", Split::Train).err(),
        load_cifar10(&[p("cifar")], Split::Train).err(),
    ];
    let format_errors = negatives.iter().filter(|e| matches!(e, Some(IoError::Format { .. }))).count();

    // the CLI reports a malformed dataset as a format error, exit code 1
    let fm = tmp.path().join("fm");
    common::write_fashion(&fm, 20, 10);
    fs::write(fm.join("fashion-mnist/train-images-idx3-ubyte.gz"), common::gzip(&[0, 0, 8, 3, 0, 0])).expect("write");
    let out = common::kanmix(&["train", "--data-dir", common::path_str(&fm), "--out-dir", common::path_str(&fm)]);
    let cli_ok = common::code(&out) == 1 && common::stderr(&out).contains("format error");
    pass &= format_errors == negatives.len() && cli_ok;
    notes.push(format!(
        "malformed inputs rejected as format errors: {format_errors}/{}; CLI exit {} with format error: {cli_ok}",
        negatives.len(),
        common::code(&out)
    ));
    Ok(Outcome::new(pass, notes.join("; ")))
}

fn cli_determinism() -> Result<Outcome> {
    if let Err(e) = fashion_train() {
        return Ok(Outcome::new(false, format!("Fashion-MNIST unavailable: {e}")));
    }
    let start = Instant::now();
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().expect("temp dir")).collect();
    for out in &runs {
        let res = common::kanmix(&[
            "train",
            "--deterministic",
            "--seed",
            "7",
            "--subset",
            "512",
            "--epochs",
            "2",
            "--dim",
            "64",
            "--depth",
            "2",
            "--data-dir",
            common::path_str(&data_dir()),
            "--out-dir",
            common::path_str(out.path()),
        ]);
        if common::code(&res) != 0 {
            return Ok(Outcome::new(false, format!("train failed: {}", common::stderr(&res))));
        }
    }
    let rel = |root: &Path| -> Vec<PathBuf> {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).expect("read dir").flatten() {
                let p = e.path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                    files.push(p.strip_prefix(root).expect("prefix").to_path_buf());
                }
            }
        }
        files.sort();
        files
    };
    let (a, b) = (rel(runs[0].path()), rel(runs[1].path()));
    let identical =
        a == b && a.iter().all(|f| fs::read(runs[0].path().join(f)).ok() == fs::read(runs[1].path().join(f)).ok());
    Ok(Outcome::new(
        identical && !a.is_empty(),
        format!(
            "two `train --deterministic --seed 7 --subset 512 --epochs 2` runs (dim 64, depth 2): {} result files, byte-identical: {identical}; {:.0}s",
            a.len(),
            start.elapsed().as_secs_f64()
        ),
    ))
}

type Criterion = fn() -> Result<Outcome>;

fn main() -> ExitCode {
    let criteria: [(usize, &str, Criterion); 8] = [
        (1, "gradient suite", gradient_suite),
        (2, "B-spline suite", spline_suite),
        (3, "mixer-block identity and shapes", mixer_suite),
        (4, "overfit smoke", overfit_smoke),
        (5, "desk-scale learning", desk_scale),
        (6, "statistics oracle", statistics_oracle),
        (7, "loader suite", loader_suite),
        (8, "CLI determinism", cli_determinism),
    ];
    let selected: Option<Vec<usize>> = std::env::var("KANMIX_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let outcome = run().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        println!("{} [{id}] {name}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
