//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use divens_core::calibration::{
    fit_temperature, nll_at, softmax_t, CalibrationConfig, Temperature,
};
use divens_core::data::{
    correctness, save_tensor, top1, write_labels, Category, EmbeddingMatrix, LabelVector,
    LogitMatrix, Manifest, ModelRecord,
};
use divens_core::ensemble::{
    ensemble_correct, greedy_select, CalibratedModel, EnsembleConfig, EnsembleMode, GreedyConfig,
};
use divens_core::features::{fractional_concat, linear_cka, normalize};
use divens_core::pairwise::{conversion_stats, error_breakdown, expected_inconsistency};
use divens_core::probe::logistic::{with_bias, Binary, Multinomial};
use divens_core::probe::{
    fit_probe, lbfgs_minimize, map_11pt, stacked_probe, train_probe, LbfgsConfig, ProbeConfig,
};
use divens_core::specialization::{dominance_threshold, theta_records};
use divens_core::synth::{brute_force_best_subset, synth_pair, synth_pool, JointSpec};
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(rng))
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

/// Random spec whose fractions are exact multiples of `1/n`.
fn random_spec(n: usize, c: usize, seed: u64) -> JointSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cuts = [
        rng.random_range(0..=n),
        rng.random_range(0..=n),
        rng.random_range(0..=n),
    ];
    cuts.sort();
    let counts = [cuts[0], cuts[1] - cuts[0], cuts[2] - cuts[1], n - cuts[2]];
    let fracs = counts.map(|k| k as f64 / n as f64);
    let floor = 1.0 / c as f64;
    let mut conf = || rng.random_range(floor + 0.01..0.99);
    JointSpec::new(fracs, n, c, conf(), conf(), conf(), conf(), seed)
}

fn c1_breakdown_exact() -> Outcome {
    let start = Instant::now();
    for seed in 0..100 {
        let spec = random_spec(10_000, 100, seed);
        let (z1, z2, labels) = synth_pair(&spec).map_err(|e| e.to_string())?;
        let c1 = correctness(&top1(&z1), &labels).map_err(|e| e.to_string())?;
        let c2 = correctness(&top1(&z2), &labels).map_err(|e| e.to_string())?;
        let b = error_breakdown(&c1, &c2).map_err(|e| e.to_string())?;
        let got = [
            b.counts.both,
            b.counts.only1,
            b.counts.only2,
            b.counts.neither,
        ];
        ensure(got == spec.counts(), || {
            format!("seed {seed}: counts {got:?} vs {:?}", spec.counts())
        })?;
        let fr = [b.frac_both, b.frac_only1, b.frac_only2, b.frac_neither];
        ensure(fr == spec.fractions(), || {
            format!("seed {seed}: fractions {fr:?} vs {:?}", spec.fractions())
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!("100 specs at N=10000 C=100 in {secs:.2} s"))
}

/// Synthetic pairs used by the decomposition and preservation checks:
/// spec-driven pairs plus pairs from the noisy pool generator at random
/// temperatures.
fn for_each_pair(
    mut f: impl FnMut(&CalibratedModel, &CalibratedModel, &LabelVector) -> Result<(), String>,
) -> Result<usize, String> {
    let mut n = 0;
    for seed in 0..50 {
        let spec = random_spec(10_000, 10, 1000 + seed);
        let (z1, z2, labels) = synth_pair(&spec).map_err(|e| e.to_string())?;
        let m1 = CalibratedModel::new("a", &z1, Temperature::ONE);
        let m2 = CalibratedModel::new("b", &z2, Temperature::ONE);
        f(&m1, &m2, &labels)?;
        n += labels.len();
    }
    for seed in 0..50 {
        let (zs, labels) = synth_pool(2, 10_000, 10, 2000 + seed).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = || Temperature::new(rng.random_range(0.3..3.0)).expect("positive");
        let m1 = CalibratedModel::new("a", &zs[0], t());
        let m2 = CalibratedModel::new("b", &zs[1], t());
        f(&m1, &m2, &labels)?;
        n += labels.len();
    }
    Ok(n)
}

fn c2_decomposition() -> Outcome {
    let mut worst = 0.0f64;
    let n = for_each_pair(|m1, m2, labels| {
        let c1 = m1.correctness(labels).map_err(|e| e.to_string())?;
        let c2 = m2.correctness(labels).map_err(|e| e.to_string())?;
        let b = error_breakdown(&c1, &c2).map_err(|e| e.to_string())?;
        for mode in [EnsembleMode::AvgProb, EnsembleMode::AvgLogit] {
            let ce = ensemble_correct(&[m1, m2], labels, &EnsembleConfig::with_mode(mode))
                .map_err(|e| e.to_string())?;
            let s = conversion_stats(&c1, &c2, &ce).map_err(|e| e.to_string())?;
            let rhs = b.frac_both
                + s.conv_rate_inconsistent * (b.frac_only1 + b.frac_only2)
                + s.conv_rate_neither * b.frac_neither;
            let err = (ce.accuracy() - rhs).abs();
            worst = worst.max(err);
            ensure(err <= 1e-9, || {
                format!("{mode:?}: |{} - {rhs}| = {err:e}", ce.accuracy())
            })?;
        }
        Ok(())
    })?;
    Ok(format!(
        "{} pairs ({n} examples) x 2 modes, max error {worst:.1e}",
        100
    ))
}

fn c3_both_correct_preserved() -> Outcome {
    let mut violations = [0usize; 2];
    let mut examples = 0;
    for_each_pair(|m1, m2, labels| {
        let c1 = m1.correctness(labels).map_err(|e| e.to_string())?;
        let c2 = m2.correctness(labels).map_err(|e| e.to_string())?;
        for (k, mode) in [EnsembleMode::AvgProb, EnsembleMode::AvgLogit]
            .into_iter()
            .enumerate()
        {
            let ce = ensemble_correct(&[m1, m2], labels, &EnsembleConfig::with_mode(mode))
                .map_err(|e| e.to_string())?;
            violations[k] += (0..labels.len())
                .filter(|&i| c1.get(i) && c2.get(i) && !ce.get(i))
                .count();
        }
        examples += labels.len();
        Ok(())
    })?;
    ensure(examples >= 1_000_000, || {
        format!("only {examples} examples")
    })?;
    ensure(violations == [0, 0], || {
        format!("violations {violations:?}")
    })?;
    Ok(format!("{examples} examples per mode, 0 violations"))
}

fn run_cli(args: &[&str]) -> Result<i32, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_divens"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.code().is_none() {
        return Err("killed by signal".into());
    }
    let code = out.status.code().unwrap_or(-1);
    if code != 0 {
        return Err(format!(
            "divens {args:?} exited {code}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(code)
}

/// Two-model workspace with embeddings; `model_2` carries reported metadata.
fn workspace(dir: &Path) -> Result<std::path::PathBuf, String> {
    let spec = JointSpec::new([0.6, 0.162, 0.155, 0.083], 1000, 10, 0.8, 0.5, 0.7, 0.4, 1);
    let (z1, z2, labels) = synth_pair(&spec).map_err(|e| e.to_string())?;
    let e = |x: std::result::Result<(), divens_core::error::Error>| x.map_err(|e| e.to_string());
    e(save_tensor(&z1.values().view(), dir.join("m1.edt")))?;
    e(save_tensor(&z2.values().view(), dir.join("m2.edt")))?;
    e(write_labels(&labels, dir.join("labels.csv")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (file, z) in [("e1.edt", &z1), ("e2.edt", &z2)] {
        let emb = z.values() + &gaussian(1000, 10, &mut rng);
        e(save_tensor(&emb.view(), dir.join(file)))?;
    }
    let mut r1 = ModelRecord::new("model_1", Category::Reinit, "m1.edt");
    r1.embedding_path = Some("e1.edt".into());
    let mut r2 = ModelRecord::new("model_2", Category::Dataset, "m2.edt");
    r2.embedding_path = Some("e2.edt".into());
    r2.reported_accuracy = Some(0.755);
    r2.reported_inconsistency = Some(0.2295);
    let m = Manifest {
        base_model: "model_1".into(),
        models: vec![r1, r2],
        labels_path: "labels.csv".into(),
        class_groups: None,
        root: dir.into(),
    };
    let path = dir.join("manifest.json");
    e(m.save(&path))?;
    Ok(path)
}

fn c4_expected_inconsistency() -> Outcome {
    let v = expected_inconsistency(0.762, 0.755).map_err(|e| e.to_string())?;
    ensure((v - 0.36638).abs() <= 1e-9, || format!("got {v}"))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = workspace(dir.path())?;
    run_cli(&[
        "table1",
        "--manifest",
        m.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ])?;
    let text = std::fs::read_to_string(dir.path().join("table1.csv")).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .and_then(|i| row.get(i).copied())
    };
    ensure(col("reported_inconsistency") == Some("0.229500000"), || {
        format!("reported column {:?}", col("reported_inconsistency"))
    })?;
    ensure(
        col("expected_inconsistency").is_some_and(|s| !s.is_empty()),
        || "expected column empty".into(),
    )?;
    Ok(format!("expected {v:.9}, table1 reports 0.2295 beside it"))
}

fn c5_calibration() -> Outcome {
    let (n, c) = (50_000, 100);
    let mut slowest = 0.0f64;
    let mut worst = 0.0f64;
    for (k, t0) in [0.5, 1.0, 1.7, 2.5].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let z = gaussian(n, c, &mut rng) * 3.0;
        let labels: Vec<usize> = z
            .rows()
            .into_iter()
            .map(|row| {
                let m = row.iter().cloned().fold(f64::MIN, f64::max);
                let w: Vec<f64> = row.iter().map(|v| ((v - m) / t0).exp()).collect();
                let total: f64 = w.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (j, wj) in w.iter().enumerate() {
                    u -= wj;
                    if u <= 0.0 {
                        return j;
                    }
                }
                c - 1
            })
            .collect();
        let labels = LabelVector::new(labels);
        let z = LogitMatrix::new(z).map_err(|e| e.to_string())?;
        let start = Instant::now();
        let fit = fit_temperature(&z, &labels, &CalibrationConfig::default())
            .map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let t = fit.temperature.value();
        worst = worst.max((t - t0).abs());
        ensure((t - t0).abs() <= 0.05, || format!("T0 {t0}: fitted {t}"))?;
        let before = top1(&z);
        ensure(top1(&softmax_t(&z, fit.temperature)) == before, || {
            format!("T0 {t0}: top-1 changed")
        })?;
        let nll1 = nll_at(&z, &labels, Temperature::ONE).map_err(|e| e.to_string())?;
        ensure(fit.nll_after <= nll1, || {
            format!("T0 {t0}: NLL {} > {nll1}", fit.nll_after)
        })?;
    }
    ensure(slowest < 2.0, || format!("slowest fit {slowest:.2} s"))?;
    Ok(format!(
        "4 temperatures, max |T - T0| {worst:.4}, slowest fit {slowest:.2} s"
    ))
}

fn c6_greedy_vs_oracle() -> Outcome {
    let start = Instant::now();
    for seed in 0..50u64 {
        let k = 1 + (seed as usize % 8);
        let (zs, labels) = synth_pool(k + 1, 500, 8, 300 + seed).map_err(|e| e.to_string())?;
        let mut models: Vec<CalibratedModel> = zs
            .iter()
            .enumerate()
            .map(|(i, z)| CalibratedModel::new(format!("m{i:02}"), z, Temperature::ONE))
            .collect();
        let base = models.remove(0);
        for mode in [EnsembleMode::AvgProb, EnsembleMode::AvgLogit] {
            let cfg = GreedyConfig {
                k_max: k,
                mode,
                stop_on_no_gain: false,
            };
            let trace = greedy_select(&base, &models, &labels, &cfg).map_err(|e| e.to_string())?;
            let oracle = brute_force_best_subset(&models, &labels, k, mode, Some(&base))
                .map_err(|e| e.to_string())?;
            for (i, (step, best)) in trace.steps.iter().zip(&oracle.per_size).enumerate() {
                ensure(step.n_correct <= best.n_correct, || {
                    format!(
                        "seed {seed} {mode:?} step {}: {} > {}",
                        i + 1,
                        step.n_correct,
                        best.n_correct
                    )
                })?;
            }
            // exhaustive pairwise argmax, ties to the smaller name
            let mut best: Option<(usize, &str)> = None;
            for m in &models {
                let n = ensemble_correct(&[&base, m], &labels, &EnsembleConfig::with_mode(mode))
                    .map_err(|e| e.to_string())?
                    .count_correct();
                if best.is_none_or(|(bn, bname)| n > bn || (n == bn && m.name() < bname)) {
                    best = Some((n, m.name()));
                }
            }
            let pick = best.map(|b| b.1).unwrap_or_default();
            ensure(trace.steps[0].added == pick, || {
                format!(
                    "seed {seed} {mode:?}: greedy chose {} not {pick}",
                    trace.steps[0].added
                )
            })?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.2} s"))?;
    Ok(format!("50 pools of 1..8 models x 2 modes in {secs:.2} s"))
}

fn random_simplex(c: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sharp = rng.random_range(0.0..8.0);
    let e: Vec<f64> = (0..c)
        .map(|_| (sharp * rng.random::<f64>()).exp())
        .collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn c7_theta_and_dominance() -> Outcome {
    let mut n_records = 0;
    for seed in 0..10 {
        let spec = random_spec(5000, 20, 500 + seed);
        let (z1, z2, labels) = synth_pair(&spec).map_err(|e| e.to_string())?;
        let p1 = softmax_t(&z1, Temperature::ONE);
        let p2 = softmax_t(&z2, Temperature::ONE);
        let fwd = theta_records(&p1, &p2, &labels).map_err(|e| e.to_string())?;
        let rev = theta_records(&p2, &p1, &labels).map_err(|e| e.to_string())?;
        for (a, b) in fwd.iter().zip(&rev) {
            let (lo, hi) = if a.theta_deg <= b.theta_deg {
                (a.theta_deg, b.theta_deg)
            } else {
                (b.theta_deg, a.theta_deg)
            };
            ensure(hi == 90.0 - lo, || {
                format!(
                    "example {}: {} and {}",
                    a.example_index, a.theta_deg, b.theta_deg
                )
            })?;
            ensure(a.category.swapped() == b.category, || {
                format!("example {}: categories", a.example_index)
            })?;
        }
        n_records += fwd.len();
    }
    // instances with model 1's top class above the bound, the remaining mass
    // of model 1 placed adversarially on model 2's favourite
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut counterexamples = 0;
    let n_instances = 100_000;
    for _ in 0..n_instances {
        let c = rng.random_range(2..20);
        let p2 = random_simplex(c, &mut rng);
        let a2 = argmax(&p2);
        let thr = dominance_threshold(p2[a2]);
        let top = thr + (1.0 - thr) * rng.random_range(1e-9..1.0);
        let a1 = if c > 1 && rng.random_bool(0.9) {
            (a2 + 1 + rng.random_range(0..c - 1)) % c
        } else {
            a2
        };
        let mut p1 = vec![0.0; c];
        p1[a1] = top;
        let rest = 1.0 - top;
        if a1 != a2 && rng.random_bool(0.5) {
            p1[a2] = rest;
        } else {
            let others: Vec<usize> = (0..c).filter(|&j| j != a1).collect();
            let w = random_simplex(others.len(), &mut rng);
            for (j, wj) in others.iter().zip(w) {
                p1[*j] = rest * wj;
            }
        }
        let avg: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| (a + b) / 2.0).collect();
        if argmax(&avg) != a1 {
            counterexamples += 1;
        }
    }
    ensure(counterexamples == 0, || {
        format!("{counterexamples} counterexamples")
    })?;
    Ok(format!(
        "{n_records} record pairs exact, 0 of {n_instances} dominance counterexamples"
    ))
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let s: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / s.max(1e-12)
}

fn central_diff(mut f: impl FnMut(&[f64]) -> f64, w: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    let mut x = w.to_vec();
    (0..w.len())
        .map(|i| {
            x[i] = w[i] + h;
            let up = f(&x);
            x[i] = w[i] - h;
            let down = f(&x);
            x[i] = w[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn c8_lbfgs() -> Outcome {
    let rosen = |x: &[f64], g: &mut [f64]| {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    };
    let cfg = LbfgsConfig {
        max_iters: 200,
        grad_tolerance: 1e-10,
        ..Default::default()
    };
    let r = lbfgs_minimize(rosen, vec![-1.2, 1.0], &cfg).map_err(|e| e.to_string())?;
    let dist = ((r.x[0] - 1.0).powi(2) + (r.x[1] - 1.0).powi(2)).sqrt();
    ensure(dist <= 1e-5 && r.iterations <= 200, || {
        format!("x {:?} after {} iterations", r.x, r.iterations)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = with_bias(gaussian(60, 6, &mut rng).view());
    let labels: Vec<usize> = (0..60).map(|_| rng.random_range(0..4)).collect();
    let targets: Array1<bool> = (0..60).map(|_| rng.random_bool(0.4)).collect();
    let multi = Multinomial {
        x: &x,
        labels: &labels,
        n_classes: 4,
        l2: 0.03,
    };
    let binary = Binary {
        x: &x,
        targets: targets.view(),
        l2: 0.03,
    };
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let w: Vec<f64> = (0..multi.n_params())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut g = vec![0.0; w.len()];
        multi.eval(&w, &mut g);
        let mut scratch = vec![0.0; w.len()];
        let fd = central_diff(|v| multi.eval(v, &mut scratch), &w);
        worst = worst.max(rel_diff(&g, &fd));
        let w: Vec<f64> = (0..binary.n_params())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut g = vec![0.0; w.len()];
        binary.eval(&w, &mut g);
        let mut scratch = vec![0.0; w.len()];
        let fd = central_diff(|v| binary.eval(v, &mut scratch), &w);
        worst = worst.max(rel_diff(&g, &fd));
    }
    ensure(worst <= 1e-5, || {
        format!("gradient relative error {worst:e}")
    })?;

    let feats = EmbeddingMatrix::new(gaussian(400, 10, &mut rng)).map_err(|e| e.to_string())?;
    let y = LabelVector::new(
        (0..400)
            .map(|i| (i * 7 + (feats.values()[[i, 0]] > 0.0) as usize) % 3)
            .collect(),
    );
    let tight = LbfgsConfig {
        grad_tolerance: 1e-10,
        max_iters: 2000,
        ..Default::default()
    };
    let a = train_probe(&feats, &y, 3, 1e-2, &tight, None).map_err(|e| e.to_string())?;
    let init: Vec<f64> = (0..a.weights.len())
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let b = train_probe(&feats, &y, 3, 1e-2, &tight, Some(&init)).map_err(|e| e.to_string())?;
    let rel =
        (a.train_objective_value - b.train_objective_value).abs() / a.train_objective_value.abs();
    ensure(rel <= 1e-6, || {
        format!(
            "objectives {} vs {}",
            a.train_objective_value, b.train_objective_value
        )
    })?;
    Ok(format!(
        "Rosenbrock in {} iterations (dist {dist:.1e}), gradient error {worst:.1e}, init gap {rel:.1e}",
        r.iterations
    ))
}

fn c9_map() -> Outcome {
    let scores = array![[0.9], [0.8], [0.7], [0.6]];
    let labels = array![[true], [false], [true], [false]];
    let m = map_11pt(scores.view(), &labels)
        .map_err(|e| e.to_string())?
        .map;
    ensure((m - 0.848485).abs() <= 1e-6, || format!("got {m}"))?;
    let perfect = array![[true], [true], [false], [false]];
    let p = map_11pt(scores.view(), &perfect)
        .map_err(|e| e.to_string())?
        .map;
    ensure(p == 1.0, || format!("perfect ranking gives {p}"))?;
    Ok(format!("mAP {m:.6}, perfect {p}"))
}

fn c10_stacking() -> Outcome {
    // labels depend on one latent block per embedding; each block is mixed
    // into all 512 dims of its embedding with isotropic noise on top
    let (n, d, latent, c) = (5000, 512, 8, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let za = gaussian(n, latent, &mut rng);
    let zb = gaussian(n, latent, &mut rng);
    let wa = gaussian(latent, c, &mut rng);
    let wb = gaussian(latent, c, &mut rng);
    let s = za.dot(&wa) + zb.dot(&wb);
    let y = LabelVector::new(
        (0..n)
            .map(|i| argmax(s.row(i).as_slice().expect("standard layout")))
            .collect(),
    );
    let mix = |z: &Array2<f64>, rng: &mut ChaCha8Rng| {
        let m = gaussian(latent, d, rng) / (latent as f64).sqrt();
        z.dot(&m) + gaussian(n, d, rng) * 0.5
    };
    let a = EmbeddingMatrix::new(mix(&za, &mut rng)).map_err(|e| e.to_string())?;
    let b = EmbeddingMatrix::new(mix(&zb, &mut rng)).map_err(|e| e.to_string())?;
    let a = normalize(&a).map_err(|e| e.to_string())?;
    let b = normalize(&b).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let cfg = ProbeConfig {
        l2_grid: vec![1e-4, 1e-3],
        ..Default::default()
    };
    let err = |e: divens_core::error::Error| e.to_string();
    let fa = fit_probe(&a, &y, &cfg).map_err(err)?.holdout_accuracy;
    let fb = fit_probe(&b, &y, &cfg).map_err(err)?.holdout_accuracy;
    let st = stacked_probe(&[&a, &b], &y, &cfg)
        .map_err(err)?
        .holdout_accuracy;
    let (half, spec) = fractional_concat(&a, &b, 0.5, 0).map_err(err)?;
    ensure(spec.output_dims() <= d, || {
        format!("concat has {} dims", spec.output_dims())
    })?;
    let fh = fit_probe(&half, &y, &cfg).map_err(err)?.holdout_accuracy;
    let secs = start.elapsed().as_secs_f64();
    let summary =
        format!("A {fa:.3}, B {fb:.3}, stacked {st:.3}, 50/50 concat {fh:.3} in {secs:.1} s");
    ensure(st >= fa.max(fb) + 0.05, || summary.clone())?;
    ensure(fh > fa.max(fb), || summary.clone())?;
    ensure(secs < 60.0, || summary.clone())?;
    Ok(summary)
}

/// Product of random Householder reflections.
fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::eye(d);
    for _ in 0..d {
        let v: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let v = &v / v.dot(&v).sqrt();
        let qv = q.dot(&v);
        for i in 0..d {
            for j in 0..d {
                q[[i, j]] -= 2.0 * qv[i] * v[j];
            }
        }
    }
    q
}

fn c11_cka() -> Outcome {
    let (n, d) = (2000, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = gaussian(n, d, &mut rng);
    let y = gaussian(n, d, &mut rng);
    let err = |e: divens_core::error::Error| e.to_string();
    let xm = EmbeddingMatrix::new(x.clone()).map_err(err)?;
    let ym = EmbeddingMatrix::new(y).map_err(err)?;
    let self_cka = linear_cka(&xm, &xm).map_err(err)?;
    ensure((self_cka - 1.0).abs() <= 1e-12, || {
        format!("cka(X, X) = {self_cka}")
    })?;
    // a correlated partner so invariance is tested away from the endpoints
    let z = EmbeddingMatrix::new(&x + &(gaussian(n, d, &mut rng) * 2.0)).map_err(err)?;
    let base = linear_cka(&xm, &z).map_err(err)?;
    let q = random_orthogonal(d, &mut rng);
    let rotated = EmbeddingMatrix::new(x.dot(&q)).map_err(err)?;
    let rot = linear_cka(&rotated, &z).map_err(err)?;
    ensure((rot - base).abs() <= 1e-9, || {
        format!("{base} vs {rot} after rotation")
    })?;
    let noise = linear_cka(&xm, &ym).map_err(err)?;
    ensure(noise < 0.05, || format!("independent noise gives {noise}"))?;
    Ok(format!(
        "self {self_cka}, rotation gap {:.1e}, independent {noise:.4}",
        (rot - base).abs()
    ))
}

fn outputs(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|name| name.ends_with(".csv") || (name.ends_with(".json") && name != "run.json"))
        .map(|name| {
            let bytes = std::fs::read(dir.join(&name)).unwrap_or_default();
            (name, bytes)
        })
        .collect();
    files.sort();
    Ok(files)
}

fn c12_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = workspace(dir.path())?;
    let mut runs = Vec::new();
    for run in ["run_a", "run_b"] {
        let out = dir.path().join(run);
        let (m, out) = (m.to_str().unwrap(), out.to_str().unwrap());
        run_cli(&["table1", "--manifest", m, "--out-dir", out, "--seed", "3"])?;
        run_cli(&[
            "figures",
            "--which",
            "fig1,fig2,fig3,fig4,fig5,fig6",
            "--l2-grid",
            "1e-3,1e-2",
            "--manifest",
            m,
            "--out-dir",
            out,
            "--seed",
            "3",
        ])?;
        runs.push(outputs(Path::new(out))?);
    }
    ensure(runs[0].len() == 7, || {
        format!(
            "expected 7 outputs, got {:?}",
            runs[0].iter().map(|f| &f.0).collect::<Vec<_>>()
        )
    })?;
    for (a, b) in runs[0].iter().zip(&runs[1]) {
        ensure(a == b, || format!("{} differs between runs", a.0))?;
    }
    ensure(runs[0].len() == runs[1].len(), || {
        "different file sets".into()
    })?;
    Ok(format!(
        "{} files byte-identical across two runs",
        runs[0].len()
    ))
}

fn main() {
    let criteria: [Check; 12] = [
        ("breakdown exactness", c1_breakdown_exact),
        ("decomposition identity", c2_decomposition),
        ("both-correct preservation", c3_both_correct_preserved),
        ("expected inconsistency", c4_expected_inconsistency),
        ("calibration", c5_calibration),
        ("greedy vs oracle", c6_greedy_vs_oracle),
        ("theta and dominance", c7_theta_and_dominance),
        ("l-bfgs", c8_lbfgs),
        ("11-point mAP", c9_map),
        ("stacking direction", c10_stacking),
        ("linear CKA", c11_cka),
        ("determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name} [{secs:.2} s]: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} [{secs:.2} s]: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
