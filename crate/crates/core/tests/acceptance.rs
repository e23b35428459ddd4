//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs without the libtest harness so the lines always show.

use std::time::{Duration, Instant};

use intnn::cli;
use intnn::data::{self, generate_teacher_labeled, PanelDataset};
use intnn::experiment::{
    acceptance_generator, acceptance_teacher, filter_curve, mean_abs_error, prepare_split, run_comparison,
    signs_match_up_to_flip, ExperimentConfig,
};
use intnn::features::{fit_baseline, FeatureSubset};
use intnn::filters::{
    continuous_persistent_change, jump_accumulator, naive_persistent_change, smooth_filter_gradient,
    smooth_persistent_change, symmetric_persistent_change, SmoothingParam, TimeSeriesWindow,
};
use intnn::network::{NetworkParams, WindowSample};
use intnn::training::{check_gradient_fn, gradient_check, train, ModelKind, ParamGroup, TrainConfig, TrainedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn win(x: &[f64]) -> TimeSeriesWindow {
    TimeSeriesWindow::new(x.to_vec()).unwrap()
}

fn d3(x: &[f64], k: f64) -> f64 {
    smooth_persistent_change(&win(x), SmoothingParam::new(k).unwrap())
}

fn acceptance_dataset() -> PanelDataset {
    generate_teacher_labeled(&acceptance_generator(), &acceptance_teacher()).unwrap()
}

fn acceptance_experiment() -> ExperimentConfig {
    ExperimentConfig { n_per_class: 4000, ..ExperimentConfig::default() }
}

/// Four series pairs; the second of each pair is the complement of the first.
fn table_series() -> Vec<Vec<f64>> {
    let mut x2 = vec![0.0, 0.0, 0.0];
    x2.extend([1.0; 7]);
    x2.push(0.0);
    x2.extend([1.0; 4]);
    let mut x3 = vec![0.1; 3];
    x3.extend([0.9; 12]);
    let mut x4 = vec![0.1; 3];
    x4.extend([0.9; 7]);
    x4.push(0.1);
    x4.extend([0.9; 4]);
    let mut x1 = vec![0.0; 3];
    x1.extend([1.0; 12]);
    vec![x1, x2, x3, x4]
}

fn c1_table_values() -> Check {
    // (D0, D1, D2, D3 at k = 0.25) for the first and second series of each pair.
    let expected: [[[Option<f64>; 4]; 2]; 4] = [
        [[Some(12.0), Some(12.0), Some(12.0), Some(11.90)], [Some(0.0), Some(0.0), Some(-12.0), Some(-11.90)]],
        [[Some(4.0), Some(4.0), Some(4.0), Some(8.81)], [Some(0.0), Some(0.0), Some(-4.0), Some(-8.81)]],
        [[None, Some(6.49), Some(6.37), Some(9.06)], [None, Some(0.11), Some(-6.37), Some(-9.06)]],
        [[None, Some(3.47), Some(3.36), Some(6.90)], [None, Some(0.111), Some(-3.36), Some(-6.90)]],
    ];
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    let mut failures = Vec::new();
    for (row, x) in table_series().into_iter().enumerate() {
        let pair = [x.clone(), x.iter().map(|v| 1.0 - v).collect::<Vec<_>>()];
        for (side, series) in pair.iter().enumerate() {
            let w = win(series);
            let got = [
                naive_persistent_change(&w).ok().map(|v| v as f64),
                Some(continuous_persistent_change(&w)),
                Some(symmetric_persistent_change(&w)),
                Some(d3(series, 0.25)),
            ];
            for (col, want) in expected[row][side].iter().enumerate() {
                let Some(want) = want else {
                    if got[col].is_some() {
                        failures.push(format!("row {} side {} D0 defined on non-binary input", row + 1, side + 1));
                    }
                    continue;
                };
                cells += 1;
                let err = (got[col].unwrap_or(f64::NAN) - want).abs();
                worst = worst.max(err);
                if !(err <= 0.01) {
                    failures.push(format!("row {} side {} col {col}: {:?} vs {want}", row + 1, side + 1, got[col]));
                }
            }
        }
    }
    ensure(
        failures.is_empty(),
        format!("{cells} cells, max |error| {worst:.4}{}", if failures.is_empty() { String::new() } else { format!("; {failures:?}") }),
    )
}

fn c2_convergence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_ratio: f64 = 0.0;
    for case in 0..200 {
        let t = rng.gen_range(1..=30);
        let x: Vec<f64> = (0..t).map(|_| f64::from(u8::from(rng.gen_bool(0.6)))).collect();
        let d0 = naive_persistent_change(&win(&x)).unwrap() as f64;
        if jump_accumulator(&x, 1.0) != d0 {
            return Err(format!("case {case}: p_T(1) = {} but D0 = {d0}", jump_accumulator(&x, 1.0)));
        }
        let err = (jump_accumulator(&x, 0.9999) - d0).abs();
        worst_ratio = worst_ratio.max(err / (1e-2 * t as f64));
    }
    ensure(worst_ratio <= 1.0, format!("200 series, max |p_T - D0| / (0.01 T) = {worst_ratio:.4}"))
}

fn c3_step_curves() -> Check {
    let t0s: Vec<usize> = (50..=950).step_by(50).collect();
    let points = filter_curve(1000, &t0s, &[0.25, 0.5, 0.75, 1.0], 0.0, 0).map_err(|e| e.to_string())?;
    let (mut worst_fit, mut worst_closed): (f64, f64) = (0.0, 0.0);
    for p in &points {
        let closed = p.t0 as f64 - (1.0 - p.k).powi(p.t0 as i32) * (1000 - p.t0) as f64;
        worst_fit = worst_fit.max((p.value - p.t0 as f64).abs());
        worst_closed = worst_closed.max((p.value - closed).abs());
    }
    ensure(
        worst_fit <= 1e-3 && worst_closed <= 1e-9 && points.len() == 76,
        format!("{} points, max |D - t0| {worst_fit:.2e}, max |D - closed form| {worst_closed:.2e}", points.len()),
    )
}

fn c4_noisy_curves() -> Check {
    let t0s: Vec<usize> = (100..=900).step_by(100).collect();
    let points = filter_curve(1000, &t0s, &[0.6, 1.0], 0.05, 4).map_err(|e| e.to_string())?;
    let (smooth, raw) = (mean_abs_error(&points, 0.6), mean_abs_error(&points, 1.0));
    ensure(smooth < raw, format!("mean |D - t0|: k = 0.6 -> {smooth:.3}, k = 1 -> {raw:.3}"))
}

fn c5_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut filter_worst: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.gen_range(1..=30);
        let x: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let k = rng.gen_range(0.0..=1.0);
        let g = smooth_filter_gradient(&win(&x), SmoothingParam::new(k).unwrap(), 1.0);
        let mut theta = x.clone();
        theta.push(k);
        let mut analytic = g.grad_x.clone();
        analytic.push(g.grad_k);
        let f = |th: &[f64]| raw_filter(&th[..t], th[t]);
        let groups = [ParamGroup::new("x", (0..t).collect()), ParamGroup::new("k", vec![t])];
        let report = check_gradient_fn(f, &theta, &analytic, &groups, 1e-6).map_err(|e| e.to_string())?;
        filter_worst = filter_worst.max(report.max_error());
    }
    let mut net_worst: f64 = 0.0;
    for i in 0..50 {
        let channels = 1 + i % 3;
        let params = NetworkParams::init(7, 6, channels, &mut rng);
        let batch: Vec<WindowSample> = (0..8)
            .map(|_| {
                let flat = (0..42).map(|_| rng.gen_range(0.0..3.0)).collect();
                WindowSample::from_flat(7, 6, flat, rng.gen_range(0..2)).unwrap()
            })
            .collect();
        let report = gradient_check(&params, &batch, 0.0, 1e-6).map_err(|e| e.to_string())?;
        net_worst = net_worst.max(report.max_error());
    }
    ensure(
        filter_worst <= 1e-5 && net_worst <= 1e-4,
        format!("filter max rel. error {filter_worst:.2e} (100 cases), network {net_worst:.2e} (50 cases)"),
    )
}

/// The recursion written out directly; finite differences may step past
/// `k = 1`, which `SmoothingParam` rejects.
fn raw_filter(x: &[f64], k: f64) -> f64 {
    let (mut p, mut q) = (x[0], 1.0 - x[0]);
    for &v in &x[1..] {
        p = (1.0 + k * (v - 1.0)) * p + v;
        q = (1.0 - k * v) * q + (1.0 - v);
    }
    p - q
}

fn c6_exact_symmetries() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dyadic = |rng: &mut ChaCha8Rng| f64::from(rng.gen_range(0u32..=1 << 20)) / f64::from(1u32 << 20);
    let mut violations = Vec::new();
    for case in 0..500 {
        let t = rng.gen_range(1..=40);
        let x: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..=1.0)).collect();
        if d3(&x, 1.0) != symmetric_persistent_change(&win(&x)) {
            violations.push(format!("D3(.,1) != D2 at case {case}"));
        }
        let b: Vec<f64> = (0..t).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
        if continuous_persistent_change(&win(&b)) != naive_persistent_change(&win(&b)).unwrap() as f64 {
            violations.push(format!("D1 != D0 at case {case}"));
        }
        let xd: Vec<f64> = (0..t).map(|_| dyadic(&mut rng)).collect();
        let k = f64::from(rng.gen_range(0u32..=1024)) / 1024.0;
        let comp: Vec<f64> = xd.iter().map(|v| 1.0 - v).collect();
        if d3(&comp, k) != -d3(&xd, k) {
            violations.push(format!("D3 antisymmetry at case {case}"));
        }

        let channels = rng.gen_range(2..=4);
        let params = NetworkParams::init(5, 4, channels, &mut rng);
        let flat = (0..20).map(|_| rng.gen_range(0.0..4.0)).collect();
        let sample = WindowSample::from_flat(5, 4, flat, 0).unwrap();
        let base = params.forward(&sample).unwrap();
        let mut perm = params.clone();
        perm.channels.rotate_left(1);
        perm.u.rotate_left(1);
        perm.channels.swap(0, channels - 1);
        perm.u.swap(0, channels - 1);
        if perm.forward(&sample).unwrap() != base {
            violations.push(format!("channel permutation at case {case}"));
        }
        let f = rng.gen_range(0..channels);
        let mut flip = params.clone();
        flip.channels[f].w.iter_mut().for_each(|w| *w = -*w);
        flip.channels[f].b = -flip.channels[f].b;
        flip.u[f] = -flip.u[f];
        if flip.forward(&sample).unwrap() != base {
            violations.push(format!("sign flip at case {case}"));
        }
    }
    ensure(
        violations.is_empty(),
        format!("500 cases x 5 identities, {} violations {:?}", violations.len(), violations.iter().take(3).collect::<Vec<_>>()),
    )
}

fn c7_teacher_student() -> Check {
    let dataset = acceptance_dataset();
    let split = prepare_split(&dataset, &acceptance_experiment()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    let (model, log) = train(ModelKind::Network { channels: 1 }, &split, &cfg).map_err(|e| e.to_string())?;
    let TrainedModel::Network(student) = &model else { unreachable!() };
    let acc = model.evaluate(&split.test).map_err(|e| e.to_string())?.accuracy;
    let teacher = acceptance_teacher();
    let signs = signs_match_up_to_flip(&teacher.channels[0].w, &student.channels[0].w);
    let (initial_loss, final_loss) = (log.initial_loss, log.final_loss());
    ensure(
        acc >= 0.95 && signs && final_loss <= initial_loss,
        format!(
            "test accuracy {acc:.4}, w signs match teacher up to flip: {signs}, loss {initial_loss:.4} -> {final_loss:.4}, k = {:.3}",
            student.channels[0].k()
        ),
    )
}

fn c8_comparison_order() -> Check {
    let dataset = acceptance_dataset();
    let exp = acceptance_experiment();
    let split = prepare_split(&dataset, &exp).map_err(|e| e.to_string())?;
    let cmp = run_comparison(&split, &TrainConfig::default(), &exp).map_err(|e| e.to_string())?;
    let rows = cmp.rows();
    let net = rows[0].accuracy;
    let best_logistic = rows.iter().filter(|r| r.model == "Logistic").map(|r| r.accuracy).fold(0.0, f64::max);
    ensure(
        rows.len() == 11 && rows[0].model == "IntNN" && net >= best_logistic,
        format!("{} rows, network {net:.5} vs best logistic {best_logistic:.5}", rows.len()),
    )
}

/// `(index, accuracy)` rows of a comparison table file.
fn table_rows(text: &str) -> Vec<(usize, f64)> {
    text.lines()
        .filter_map(|l| {
            let mut cols = l.split_whitespace();
            let idx = cols.next()?.parse().ok()?;
            let acc = cols.last()?.parse().ok()?;
            Some((idx, acc))
        })
        .collect()
}

fn c9_robustness() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data_path = dir.path().join("panel.csv");
    data::save_csv(&acceptance_dataset(), &data_path).map_err(|e| e.to_string())?;
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, "n_per_class = 4000\n").map_err(|e| e.to_string())?;
    let out_dir = dir.path().join("robustness");
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let args = [
        "intnn",
        "robustness",
        "--data",
        data_path.to_str().unwrap(),
        "--rate",
        "0.1",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ];
    let code = cli::run(args, &mut out, &mut err);
    if code != 0 {
        return Err(format!("exit code {code}: {}", String::from_utf8_lossy(&err)));
    }
    let read = |name: &str| std::fs::read_to_string(out_dir.join(name)).map_err(|e| e.to_string());
    let (clean, corrupt) = (table_rows(&read("clean.txt")?), table_rows(&read("corrupted.txt")?));
    let stdout = String::from_utf8_lossy(&out);
    let k_line = stdout.lines().find(|l| l.starts_with("k clean")).unwrap_or("").to_string();
    let mut worse = Vec::new();
    let mut max_gain = f64::NEG_INFINITY;
    for ((i, a), (j, b)) in clean.iter().zip(&corrupt) {
        max_gain = max_gain.max(b - a);
        if i != j || *b > a + 0.01 {
            worse.push(*i);
        }
    }
    ensure(
        clean.len() == 11 && corrupt.len() == 11 && worse.is_empty() && !k_line.is_empty() && read("parameters.txt").is_ok(),
        format!(
            "rows {}/{}, max (corrupt - clean) {max_gain:+.5}, violating rows {worse:?}, {k_line}",
            clean.len(),
            corrupt.len()
        ),
    )
}

fn c10_lasso() -> Check {
    let dataset = acceptance_dataset();
    let split = prepare_split(&dataset, &acceptance_experiment()).map_err(|e| e.to_string())?;
    let l1 = |lambda: f64| -> Result<f64, String> {
        let cfg = TrainConfig { lambda: Some(lambda), ..TrainConfig::default() };
        match train(ModelKind::Network { channels: 4 }, &split, &cfg).map_err(|e| e.to_string())?.0 {
            TrainedModel::Network(p) => Ok(p.u.iter().map(|u| u.abs()).sum()),
            TrainedModel::Baseline(_) => Err("expected a network".into()),
        }
    };
    let (plain, penalized) = (l1(0.0)?, l1(0.1)?);
    ensure(penalized <= plain, format!("|u|_1 at lambda 0: {plain:.4}, at lambda 0.1: {penalized:.4}"))
}

fn c11_round_trips() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for channels in 1..=4 {
        let p = NetworkParams::init(7, 6, channels, &mut rng);
        if NetworkParams::from_text(&p.to_text()).map_err(|e| e.to_string())? != p {
            return Err(format!("network parameters with {channels} channels"));
        }
        checked += 1;
    }
    let gen = intnn::data::GeneratorConfig { n_units: 40, n_periods: 10, ..acceptance_generator() };
    let dataset = generate_teacher_labeled(&gen, &acceptance_teacher()).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("panel.csv");
    data::save_csv(&dataset, &path).map_err(|e| e.to_string())?;
    let back = data::load_csv(&path).map_err(|e| e.to_string())?;
    if back.records != dataset.records || back.m != dataset.m {
        return Err("dataset CSV".into());
    }
    checked += 1;
    let windows = data::windowize(&dataset, 6).map_err(|e| e.to_string())?;
    let split = data::balanced_split(&windows, 40, 3).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
    for (subset, hidden) in [(FeatureSubset::NpcIcPc, None), (FeatureSubset::Pc, Some(4))] {
        let (model, _) = fit_baseline(subset, hidden, &split, &cfg, &mut rng).map_err(|e| e.to_string())?;
        let text = TrainedModel::Baseline(model.clone()).to_text();
        if TrainedModel::from_text(&text).map_err(|e| e.to_string())? != TrainedModel::Baseline(model) {
            return Err(format!("baseline {subset}"));
        }
        checked += 1;
    }
    let doc = gen.to_doc();
    let reparsed = intnn::config::KeyValueDoc::parse(&doc.to_text()).map_err(|e| e.to_string())?;
    if intnn::data::GeneratorConfig::from_doc(&reparsed).map_err(|e| e.to_string())? != gen {
        return Err("generator config".into());
    }
    checked += 1;
    Ok(format!("{checked} artifacts reproduced bit for bit"))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Check); 11] = [
        ("Golden filter values", Duration::from_secs(1), c1_table_values),
        ("Jump accumulator convergence", Duration::from_secs(1), c2_convergence),
        ("Step-series filter curves", Duration::from_secs(1), c3_step_curves),
        ("Noisy step-series smoothing", Duration::from_secs(1), c4_noisy_curves),
        ("Gradient suites", Duration::from_secs(30), c5_gradients),
        ("Exact reductions and symmetries", Duration::from_secs(10), c6_exact_symmetries),
        ("Teacher-student recovery", Duration::from_secs(300), c7_teacher_student),
        ("Model-comparison ordering", Duration::from_secs(600), c8_comparison_order),
        ("Robustness pipeline", Duration::from_secs(900), c9_robustness),
        ("Lasso shrinkage", Duration::from_secs(600), c10_lasso),
        ("Serialization round trips", Duration::from_secs(1), c11_round_trips),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = result.is_ok() && in_time;
        if !pass {
            failed += 1;
        }
        let detail = result.unwrap_or_else(|e| e);
        let timing = format!("{:.2}s of {}s", elapsed.as_secs_f64(), budget.as_secs());
        println!(
            "{} criterion {:>2}: {name} [{timing}{}] {detail}",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
