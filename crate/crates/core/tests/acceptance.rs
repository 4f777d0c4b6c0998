//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line per criterion; run with `--nocapture` to see the report.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use lsm_core::eval::{roc_auc, ConfusionCounts, EvalInput};
use lsm_core::grid::{format_ascii_grid, parse_ascii_grid, read_ascii_grid, stack, GridStack};
use lsm_core::map::{infer_raster, jenks_breaks, within_class_ssd, OccupancyReport};
use lsm_core::nn::{
    accumulate_gradient, build_cnn1d, build_cnn2d, build_vit, mean_loss, predict_batch, train, Adam, Checkpoint,
    Dataset, Tensor, TrainConfig,
};
use lsm_core::pipeline::{
    apply_checkpoint_transform, dataset, parse_stack_manifest, samples_from_csv, write_scene, CellReport, Pipeline,
    PipelineConfig, Representation, Stage,
};
use lsm_core::reduce::{
    collinearity, covariance, fit_standardizer, pca_fit, pca_transform, r_squared, select_k, FeatureCollinearity,
    PcaModel,
};
use lsm_core::eval::{error_stats, metrics};
use lsm_core::nn::Arch;
use lsm_core::sampling::{
    extract_patch, extract_vector, sample_negatives, split, FeatureMatrix, InventoryPoint, Split,
};
use lsm_core::synth::SceneConfig;
use lsm_core::util::{rng, sha256_hex};
use rand::seq::index::sample;
use rand::Rng;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_time(start: Instant, limit: f64, what: &str) -> Result<f64, String> {
    let s = start.elapsed().as_secs_f64();
    check(s < limit, format!("{what} took {s:.2}s, limit {limit}s"))?;
    Ok(s)
}

// ---------------------------------------------------------------------------

fn pca_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 4];
    for seed in 0..5 {
        let rows = common::correlated_matrix(seed, 200, 10);
        let x = FeatureMatrix::from_rows(&rows);
        let st = fit_standardizer(&x).map_err(|e| e.to_string())?;
        let m = pca_fit(&x, &st).map_err(|e| e.to_string())?;
        let c = covariance(&st.transform(&x).unwrap());
        let p = m.p();
        for (l, w) in m.eigenvalues.iter().zip(&m.eigenvectors) {
            for i in 0..p {
                let cw: f64 = (0..p).map(|j| c[i * p + j] * w[j]).sum();
                worst[0] = worst[0].max((cw - l * w[i]).abs());
            }
        }
        for a in 0..p {
            for b in 0..p {
                let d: f64 = (0..p).map(|i| m.eigenvectors[a][i] * m.eigenvectors[b][i]).sum();
                worst[1] = worst[1].max((d - if a == b { 1.0 } else { 0.0 }).abs());
            }
        }
        let full = m.clone().with_k(p).unwrap();
        let z = pca_transform(&x, &full).unwrap();
        for i in 0..x.n {
            for (a, b) in full.inverse_row(z.row(i)).iter().zip(x.row(i)) {
                worst[2] = worst[2].max((a - b).abs());
            }
        }
        let trace: f64 = (0..p).map(|i| c[i * p + i]).sum();
        worst[3] = worst[3].max((trace - m.eigenvalues.iter().sum::<f64>()).abs());
    }
    let s = within_time(start, 1.0, "PCA suite")?;
    let [res, ortho, recon, trace] = worst;
    check(res < 1e-8, format!("eigen residual {res:e}"))?;
    check(ortho < 1e-8, format!("orthonormality {ortho:e}"))?;
    check(recon < 1e-6, format!("reconstruction {recon:e}"))?;
    check(trace < 1e-8, format!("trace {trace:e}"))?;
    Ok(format!(
        "residual {res:.1e}, orthonormality {ortho:.1e}, reconstruction {recon:.1e}, trace {trace:.1e} in {s:.3}s"
    ))
}

fn with_shares(shares: &[f64]) -> PcaModel {
    let x = FeatureMatrix::from_rows(&common::normal_matrix(1, 50, shares.len()));
    let mut m = pca_fit(&x, &fit_standardizer(&x).unwrap()).unwrap();
    m.eigenvalues = shares.to_vec();
    let mut acc = 0.0;
    m.cum_explained = shares
        .iter()
        .map(|s| {
            acc += s;
            acc
        })
        .collect();
    m
}

fn select_k_rule() -> Outcome {
    let k = select_k(&with_shares(&[0.6, 0.25, 0.10, 0.05]), 0.9);
    check(k == 3, format!("select_k gave {k}, expected 3"))?;
    let mut r = rng(2);
    for spectrum in 0..100 {
        let p = r.random_range(1..16);
        let mut raw: Vec<f64> = (0..p).map(|_| r.random_range(0.0..1.0)).collect();
        raw.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = raw.iter().sum();
        let m = with_shares(&raw.iter().map(|v| v / total).collect::<Vec<_>>());
        let mut last = 0;
        for t in 1..=200 {
            let k = select_k(&m, t as f64 / 200.0);
            check(k >= last, format!("spectrum {spectrum}: k fell from {last} to {k}"))?;
            last = k;
        }
    }
    Ok("k = 3 at 0.9; monotone on 100 random spectra".into())
}

fn vif_suite() -> Outcome {
    let start = Instant::now();
    let mut r2_err: f64 = 0.0;
    for seed in 0..3 {
        let x = FeatureMatrix::from_rows(&common::correlated_matrix(seed, 50, 5));
        let cols: Vec<Vec<f64>> = (0..5).map(|j| x.column(j)).collect();
        for i in 0..5 {
            let others: Vec<Vec<f64>> = (0..5).filter(|&j| j != i).map(|j| cols[j].clone()).collect();
            r2_err = r2_err.max((r_squared(&others, &cols[i]) - common::r2_gradient_descent(&others, &cols[i])).abs());
        }
        for f in collinearity(&x).map_err(|e| e.to_string())?.features {
            check((f.vif * f.tolerance - 1.0).abs() < 1e-9, format!("vif*tolerance = {}", f.vif * f.tolerance))?;
        }
    }
    let s = within_time(start, 1.0, "VIF suite")?;
    check(r2_err < 1e-6, format!("R2 differs from the iterative oracle by {r2_err:e}"))?;
    let base = common::normal_matrix(8, 30, 2);
    let rows: Vec<Vec<f64>> = base.iter().map(|r| vec![r[0], r[1], r[0] - 2.0 * r[1]]).collect();
    let exact = collinearity(&FeatureMatrix::from_rows(&rows)).unwrap();
    check(exact.features.iter().all(|f| f.infinite_vif), "exact collinearity not flagged")?;
    let spot = FeatureCollinearity::from_r2("spot".into(), 1.0 - 0.267);
    check((spot.vif - 3.743).abs() < 0.01, format!("T = 0.267 gave VIF {}", spot.vif))?;
    Ok(format!("R2 error {r2_err:.1e}; T 0.267 -> VIF {:.4}; {s:.3}s (oracle included)", spot.vif))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut worst = BTreeMap::new();
    for (name, spec) in common::gradcheck_specs() {
        for k in 0..5 {
            let (w, x, y) = common::random_point(&spec, k);
            let err = common::gradcheck(&spec, &w, &x, y, 1e-4);
            let e = worst.entry(name).or_insert(0.0f64);
            *e = e.max(err);
        }
    }
    let s = within_time(start, 30.0, "gradient checks")?;
    for (name, err) in &worst {
        check(*err < 1e-4, format!("{name}: relative error {err:e}"))?;
    }
    let max = worst.values().cloned().fold(0.0, f64::max);
    Ok(format!("{} layer types x 5 points, max relative error {max:.1e} in {s:.2}s", worst.len()))
}

fn tied_dataset(seed: u64, n: usize) -> EvalInput {
    let mut r = rng(seed);
    let mut y: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
    y[0] = 1;
    y[1] = 0;
    let s = y
        .iter()
        .map(|&l| ((r.random_range(0.0..1.0) + 0.3 * l as f64) / 1.3 * 20.0).round() / 20.0)
        .collect();
    EvalInput::new(y, s).unwrap()
}

fn auc_equivalence() -> Outcome {
    let (mut err, mut mono) = (0.0f64, 0.0f64);
    for seed in 0..50 {
        let input = tied_dataset(seed, 100);
        let auc = roc_auc(&input).map_err(|e| e.to_string())?.auc;
        err = err.max((auc - common::mann_whitney(&input.y, &input.y_hat)).abs());
        let mapped: Vec<f64> = input.y_hat.iter().map(|s| (4.0 * s).exp() + s.powi(3)).collect();
        let b = roc_auc(&EvalInput::new(input.y.clone(), mapped).unwrap()).unwrap().auc;
        mono = mono.max((auc - b).abs());
    }
    check(err < 1e-12, format!("AUC vs Mann-Whitney {err:e}"))?;
    check(mono < 1e-12, format!("monotone transform changed AUC by {mono:e}"))?;
    Ok(format!("50 tied datasets: max |AUC - U| {err:.1e}, monotone drift {mono:.1e}"))
}

fn metric_identities() -> Outcome {
    let m = metrics(&ConfusionCounts {
        tp: 50,
        fp: 10,
        fn_: 10,
        tn: 30,
    });
    let get = |v: Option<f64>| v.ok_or_else(|| "undefined metric".to_string());
    check((get(m.accuracy)? - 0.8).abs() < 1e-12, "accuracy")?;
    for (name, v) in [("precision", m.precision), ("recall", m.recall), ("f1", m.f1)] {
        check((get(v)? - 0.8333).abs() < 1e-4, format!("{name} = {v:?}"))?;
    }
    check((get(m.specificity)? - 0.75).abs() < 1e-12, "specificity")?;
    let mut r = rng(6);
    for i in 0..1000 {
        let n = r.random_range(1..40);
        let y = (0..n).map(|_| r.random_range(0..2)).collect();
        let s = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let e = error_stats(&EvalInput::new(y, s).unwrap());
        check(e.rmse >= e.mae, format!("input {i}: rmse {} < mae {}", e.rmse, e.mae))?;
    }
    Ok("hand case 0.8 / 0.8333 / 0.75; rmse >= mae on 1000 inputs".into())
}

fn jenks_optimality() -> Outcome {
    let start = Instant::now();
    let mut r = rng(7);
    let mut done = 0;
    while done < 100 {
        let n = r.random_range(2..=30);
        let k = r.random_range(1..=5);
        let levels = r.random_range(3..40);
        let values: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let mut distinct = sorted.clone();
        distinct.dedup();
        if distinct.len() < k {
            continue;
        }
        let res = jenks_breaks(&values, k, 10_000, 0).map_err(|e| e.to_string())?;
        let mut ends: Vec<usize> = res.breaks.iter().map(|b| sorted.partition_point(|v| v <= b)).collect();
        ends.push(n);
        let dp = within_class_ssd(&sorted, &ends);
        let oracle = common::jenks_exhaustive(&sorted, k);
        check(
            (dp - oracle).abs() <= 1e-12 * oracle.max(1.0),
            format!("n {n} k {k}: DP {dp} vs exhaustive {oracle}"),
        )?;
        done += 1;
    }
    let s = within_time(start, 10.0, "Jenks instances")?;
    Ok(format!("100 instances (n <= 30, k <= 5) match exhaustive SSD in {s:.2}s"))
}

fn sampling_rules() -> Outcome {
    let run = |seed: u64| -> Result<String, String> {
        let s = common::random_stack(seed, 200, 200, 2, 30.0);
        let h = s.header;
        let mut cells = sample(&mut rng(seed), h.len(), 60).into_vec();
        cells.sort_unstable();
        let ls: Vec<InventoryPoint> = cells
            .iter()
            .map(|&i| {
                let (x, y) = h.cell_center(i / h.ncols, i % h.ncols);
                InventoryPoint { x, y, label: 1 }
            })
            .collect();
        let neg = sample_negatives(&ls, &s, 150.0, 11, seed).map_err(|e| e.to_string())?;
        check(neg.len() == ls.len(), format!("{} negatives for {} positives", neg.len(), ls.len()))?;
        for q in &neg {
            for p in &ls {
                let d = ((q.x - p.x).powi(2) + (q.y - p.y).powi(2)).sqrt();
                check(d > 150.0, format!("negative {d:.1} m from a landslide"))?;
            }
            let patch = extract_patch(&s, q, 11).map_err(|e| e.to_string())?;
            let v = extract_vector(&s, q).map_err(|e| e.to_string())?;
            for (b, vb) in v.iter().enumerate() {
                check(patch.at(5, 5, b) == *vb, "patch center differs from the cell vector")?;
            }
        }
        let mut all = ls.clone();
        all.extend(&neg);
        let set = split(all, 0.7, seed).map_err(|e| e.to_string())?;
        let train = set.partition(Split::Train);
        let count = |l: u8| train.iter().filter(|p| p.label == l).count();
        check(count(1) == 42 && count(0) == 42, format!("train split {} + {}", count(1), count(0)))?;
        check(set.partition(Split::Validation).len() == 36, "validation size")?;
        Ok(sha256_hex(serde_json::to_string(&set).unwrap().as_bytes()))
    };
    let a = run(8)?;
    check(a == run(8)?, "rerun hash differs")?;
    Ok(format!("60 + 60 samples, distances > 150 m, 42/42 train, hash {}", &a[..12]))
}

fn separable_toy() -> Outcome {
    let start = Instant::now();
    let cfg = TrainConfig::default();
    let mut accs = Vec::new();
    for (spec, window) in [
        (build_cnn1d(2, 1), 0),
        (build_cnn2d(3, 3, 2, 1).unwrap(), 3),
        (build_vit(3, 3, 2, 1), 3),
    ] {
        let (tr, va) = common::separable(window, 99);
        let out = train(&spec, &tr, &va, &cfg).map_err(|e| e.to_string())?;
        check(out.history.len() <= 100, "more than 100 epochs")?;
        let acc = lsm_core::nn::accuracy(&spec, &out.weights, &va).unwrap();
        check(acc >= 0.99, format!("{} validation accuracy {acc}", spec.arch))?;
        accs.push(format!("{} {acc:.3}", spec.arch));
    }
    let (_, spec) = common::gradcheck_specs().pop().unwrap();
    let (tr, _) = common::separable(0, 3);
    let data = Dataset {
        inputs: tr.inputs.iter().map(|t| Tensor::new(vec![1, 1, 2], t.data.clone())).collect(),
        labels: tr.labels.clone(),
    };
    let mut w = spec.init_weights();
    let mut adam = Adam::new(&cfg, w.len());
    let mut prev = mean_loss(&spec, &w, &data).unwrap();
    for step in 0..10 {
        let mut g = vec![0.0; w.len()];
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            accumulate_gradient(&spec, &w, x, y, 1.0 / data.len() as f64, &mut g).unwrap();
        }
        adam.step(&mut w, &g);
        let loss = mean_loss(&spec, &w, &data).unwrap();
        check(loss <= prev, format!("probe step {step}: {loss} > {prev}"))?;
        prev = loss;
    }
    let s = within_time(start, 120.0, "toy training")?;
    Ok(format!("{}; probe nonincreasing; {s:.1}s", accs.join(", ")))
}

// ---------------------------------------------------------------------------

fn tree_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut todo = vec![dir.to_path_buf()];
    while let Some(d) = todo.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                todo.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, sha256_hex(&fs::read(&p).unwrap()));
            }
        }
    }
    out
}

const MAPPED: [(Representation, Arch); 3] = [
    (Representation::Lcf, Arch::Cnn1d),
    (Representation::Lcf, Arch::Cnn2d),
    (Representation::EmbedPca, Arch::Cnn2d),
];

fn end_to_end(root: &Path) -> Outcome {
    let scene = root.join("scene");
    write_scene(&SceneConfig::default(), &scene).map_err(|e| e.to_string())?;
    let mut cfg = PipelineConfig::load(scene.join("config.json")).map_err(|e| e.to_string())?;
    cfg.map.models = vec![Arch::Cnn1d, Arch::Cnn2d];
    cfg.map.representations = vec![Representation::Lcf, Representation::EmbedPca];

    let mut secs = Vec::new();
    for run in ["run_a", "run_b"] {
        let start = Instant::now();
        Pipeline::new(cfg.clone(), root.join(run))
            .run_stages(&Stage::PIPELINE)
            .map_err(|e| e.to_string())?;
        secs.push(within_time(start, 300.0, run)?);
    }
    let a = tree_hashes(&root.join("run_a"));
    let b = tree_hashes(&root.join("run_b"));
    check(a == b, "reruns differ")?;

    let out = root.join("run_a");
    let rows = fs::read_to_string(out.join("report/comparison.csv")).unwrap().lines().count() - 1;
    check(rows == 9, format!("{rows} comparison rows"))?;
    let mut auc = HashMap::new();
    for (rep, arch) in cfg.cells() {
        let id = format!("{}_{}", rep.name(), arch.name());
        let r: CellReport = serde_json::from_str(&fs::read_to_string(out.join(format!("evaluate/{id}.json"))).unwrap())
            .map_err(|e| e.to_string())?;
        check(
            r.beats_null(),
            format!("{id}: AUC {:.4} <= 0.5 + 3 x {:.4}", r.report.auc, r.null.std),
        )?;
        auc.insert((rep, arch), r.report.auc);
    }
    let wins = Arch::ALL
        .iter()
        .filter(|&&m| auc[&(Representation::EmbedFull, m)] >= auc[&(Representation::Lcf, m)])
        .count();
    check(wins >= 2, format!("embed_full >= lcf for only {wins} of 3 models"))?;
    let summary: Vec<String> = Arch::ALL
        .iter()
        .map(|&m| {
            format!(
                "{m} {:.3}/{:.3}/{:.3}",
                auc[&(Representation::Lcf, m)],
                auc[&(Representation::EmbedPca, m)],
                auc[&(Representation::EmbedFull, m)]
            )
        })
        .collect();
    Ok(format!(
        "runs {:.1}s and {:.1}s, byte-identical ({} files); AUC lcf/pca/full: {}; embed_full wins {wins}/3",
        secs[0],
        secs[1],
        a.len(),
        summary.join(", ")
    ))
}

fn ingested_stack(out: &Path, source: &str) -> GridStack {
    let dir = out.join("ingest");
    let path = dir.join(format!("{source}_manifest.json"));
    let entries = parse_stack_manifest(&fs::read_to_string(&path).unwrap(), &path).unwrap();
    let grids = entries.iter().map(|e| read_ascii_grid(dir.join(&e.path)).unwrap()).collect();
    stack(grids, entries.iter().map(|e| e.name.clone()).collect()).unwrap()
}

fn map_pipeline(root: &Path) -> Outcome {
    let out = root.join("run_a");
    check(out.join("map").exists(), "end-to-end run did not produce maps")?;
    let samples = samples_from_csv(&fs::read_to_string(out.join("sample/samples.csv")).unwrap(), 0).unwrap();
    let landslides = fs::read_to_string(out.join("sample/landslides.csv")).unwrap().lines().count() - 1;
    let mut worst: f64 = 0.0;
    let mut asc_files = 0;
    for (rep, arch) in MAPPED {
        let id = format!("{}_{}", rep.name(), arch.name());
        let source = if rep == Representation::Lcf { "lcf" } else { "embed" };
        let raw = ingested_stack(&out, source);
        let ckpt = Checkpoint::load(out.join(format!("train/{id}"))).map_err(|e| e.to_string())?;
        let pca: Option<PcaModel> = ckpt.pca_ref.as_ref().map(|_| {
            serde_json::from_str(&fs::read_to_string(out.join(format!("train/pca_{}.json", rep.name()))).unwrap())
                .unwrap()
        });
        let scores = infer_raster(&ckpt, &raw, pca.as_ref()).map_err(|e| e.to_string())?;

        let train_pts = samples.partition(Split::Train);
        let cells: Vec<(usize, usize)> = train_pts.iter().map(|p| raw.header.cell_of(p.x, p.y).unwrap()).collect();
        let prepared = apply_checkpoint_transform(&ckpt, &raw, pca.as_ref());
        let ds = dataset(&prepared, &ckpt.spec, &cells, train_pts.iter().map(|p| p.label).collect());
        let preds = predict_batch(&ckpt.spec, &ckpt.weights, &ds.inputs).map_err(|e| e.to_string())?;
        for (&(r, c), p) in cells.iter().zip(&preds) {
            worst = worst.max((scores.get(r, c) - p).abs());
        }

        let dir = out.join(format!("map/{id}"));
        for name in ["scores.asc", "classes.asc"] {
            let text = fs::read_to_string(dir.join(name)).unwrap();
            let g = parse_ascii_grid(&text).map_err(|e| format!("{id}/{name}: {e}"))?;
            check(format_ascii_grid(&g) == text, format!("{id}/{name} does not round-trip"))?;
            asc_files += 1;
        }
        let on_disk = read_ascii_grid(dir.join("scores.asc")).unwrap();
        for (a, b) in on_disk.values.iter().zip(&scores.values) {
            check((a - b).abs() <= 1e-6, format!("{id}: written score {a} vs {b}"))?;
        }
        let classes = read_ascii_grid(dir.join("classes.asc")).unwrap();
        let mut pairs: Vec<(f64, f64)> = (0..on_disk.values.len())
            .filter(|&i| on_disk.is_valid_value(on_disk.values[i]))
            .map(|i| (on_disk.values[i], classes.values[i]))
            .collect();
        check(
            pairs.iter().all(|&(_, c)| classes.is_valid_value(c)),
            format!("{id}: scored cell without a class"),
        )?;
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        check(pairs.windows(2).all(|w| w[1].1 >= w[0].1), format!("{id}: classes not monotone"))?;

        let occ: OccupancyReport = serde_json::from_str(&fs::read_to_string(dir.join("occupancy.json")).unwrap()).unwrap();
        let counted: usize = occ.classes.iter().map(|r| r.count).sum::<usize>() + occ.unclassified;
        check(
            counted == landslides && occ.total == landslides,
            format!("{id}: occupancy {counted} of {landslides}"),
        )?;
    }
    check(worst < 1e-12, format!("raster vs predict_batch differs by {worst:e}"))?;
    Ok(format!(
        "{} mapped cells: max |raster - predict_batch| {worst:.1e}; classes monotone; occupancy conserves {landslides}; {asc_files} grids round-trip",
        MAPPED.len()
    ))
}

#[test]
fn acceptance() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("PCA oracle suite", Box::new(pca_suite)),
        ("cumulative-variance selection", Box::new(select_k_rule)),
        ("VIF oracle suite", Box::new(vif_suite)),
        ("gradient checks", Box::new(gradient_checks)),
        ("AUC equivalence", Box::new(auc_equivalence)),
        ("metric identities", Box::new(metric_identities)),
        ("Jenks optimality", Box::new(jenks_optimality)),
        ("sampling rules", Box::new(sampling_rules)),
        ("separable-toy training", Box::new(separable_toy)),
        ("end-to-end synthetic", Box::new(move || end_to_end(r))),
        ("map pipeline", Box::new(move || map_pipeline(r))),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
