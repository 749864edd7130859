//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::time::{Duration, Instant};

use common::*;
use ptqtune::analysis::{diversity_report, shannon_entropy};
use ptqtune::calib::SizeClass;
use ptqtune::gbt::{self, grad_hess, leaf_weight, GbtParams, TrainSet};
use ptqtune::intexec::{evaluate_integer_only, quantize_input, run_integer_only_traced, IntExecutor, OpTrace};
use ptqtune::pipeline::{build_suite, PipelineEvaluator, Suite};
use ptqtune::quant::{
    clip_range_kl, model_size, params_for_range, params_power2, params_symmetric, quantize_model, Clipping,
    Granularity, MixedPrecision, QuantConfig, QuantScheme,
};
use ptqtune::tuner::{
    enumerate_space, tune_grid, tune_random, tune_xgb, Memoized, TargetProfile, TuningRecord, XgbOptions, DB_VERSION,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Instant, limit: Duration) -> Result<(), String> {
    ensure(t.elapsed() < limit, || format!("took {:.1?}, limit {limit:?}", t.elapsed()))
}

fn scheme_arithmetic() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for scheme in QuantScheme::ALL {
        for r in 0..10 {
            let (lo, hi) = match r % 3 {
                0 => (rng.random_range(-8.0f32..-0.01), rng.random_range(0.01f32..8.0)),
                1 => (rng.random_range(0.0f32..0.5), rng.random_range(0.6f32..8.0)),
                _ => (rng.random_range(-8.0f32..-0.6), rng.random_range(-0.5f32..0.0)),
            };
            let p = params_for_range(scheme, lo, hi).map_err(|e| e.to_string())?;
            for _ in 0..100_000 {
                let v = rng.random_range(lo..=hi);
                let err = (p.dequantize(p.quantize(v)) as f64 - v as f64).abs();
                let bound = p.scale as f64 / 2.0 + 1e-6;
                ensure(err <= bound, || format!("{scheme} [{lo}, {hi}] v={v}: error {err} > {bound}"))?;
                worst = worst.max(err / p.scale as f64);
            }
            if scheme != QuantScheme::Asymmetric {
                let q = p.quantize(0.0);
                ensure(q as i32 == p.zero_point && p.dequantize(q) == 0.0, || {
                    format!("{scheme} [{lo}, {hi}]: 0.0 maps to code {q} (zero point {})", p.zero_point)
                })?;
                if scheme != QuantScheme::SymmetricUint8 || lo < 0.0 {
                    ensure(q == 0, || format!("{scheme}: 0.0 maps to {q}"))?;
                }
            }
        }
    }
    within(t, Duration::from_secs(10))?;
    Ok(format!("4 schemes x 10 ranges x 1e5 values, worst error {worst:.4} scale, {:.1?}", t.elapsed()))
}

fn power2_audit(suite: &Suite) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let m = 10f32.powf(rng.random_range(-6.0..4.0));
        let p = params_power2(m).map_err(|e| e.to_string())?;
        let s = params_symmetric(m).map_err(|e| e.to_string())?;
        let ratio = p.scale as f64 / s.scale as f64;
        ensure(p.log2_scale().is_some() && p.scale.log2().fract() == 0.0, || format!("scale {} for {m}", p.scale))?;
        ensure((1.0..2.0).contains(&ratio), || format!("ratio {ratio} for max_abs {m}"))?;
    }
    let mut audited = 0;
    for m in &suite.models {
        for cfg in enumerate_space(TargetProfile::Generic).into_iter().filter(|c| c.scheme == QuantScheme::SymmetricPower2) {
            let qg = quantize_model(&m.graph, m.cache(cfg.cache), &cfg, TargetProfile::Generic).map_err(|e| e.to_string())?;
            let params = qg.activations.values().chain(qg.layers.values().flat_map(|l| l.weight_params.iter()));
            for p in params {
                ensure(p.log2_scale().is_some(), || format!("{}: non power-of-two scale {}", m.name, p.scale))?;
                audited += 1;
            }
        }
    }
    Ok(format!("10000 random ranges, {audited} model scales"))
}

fn integer_only(suite: &Suite) -> Check {
    let mut checked = 0;
    for m in &suite.models {
        for cfg in enumerate_space(TargetProfile::IntegerOnly) {
            let qg = quantize_model(&m.graph, m.cache(cfg.cache), &cfg, TargetProfile::IntegerOnly).map_err(|e| e.to_string())?;
            let standard = IntExecutor::standard(&qg).map_err(|e| e.to_string())?;
            for img in suite.data.eval.images.iter().take(8) {
                let mut trace = OpTrace::new();
                let codes = quantize_input(&qg, img).map_err(|e| e.to_string())?;
                let int_out = run_integer_only_traced(&qg, &codes, &mut trace).map_err(|e| e.to_string())?;
                ensure(trace.float_ops() == 0, || format!("{} {cfg}: {} float ops", m.name, trace.float_ops()))?;
                let sim = standard.run(img, None).map_err(|e| e.to_string())?;
                ensure(sim.codes.as_deref() == Some(&int_out[..]), || format!("{} {cfg}: outputs differ", m.name))?;
                let out = qg.params(qg.graph.output()).map_err(|e| e.to_string())?;
                let logits: Vec<f32> = int_out.iter().map(|&q| out.dequantize(q)).collect();
                ensure(logits == sim.logits, || format!("{} {cfg}: logits differ", m.name))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} runs, zero float ops, bit-identical logits"))
}

fn kl_oracle() -> Check {
    let t = Instant::now();
    let hs = fixture_histograms();
    for h in &hs {
        let got = clip_range_kl(h).map_err(|e| e.to_string())?;
        let want = brute_force_kl_range(h);
        ensure(got == want, || format!("{}: {got:?} vs brute force {want:?}", h.tensor_id))?;
    }
    Ok(format!("{} histograms agree, {:.1?}", hs.len(), t.elapsed()))
}

fn cardinalities() -> Check {
    let g = enumerate_space(TargetProfile::Generic).len();
    let i = enumerate_space(TargetProfile::IntegerOnly).len();
    ensure(g == 96 && i == 12, || format!("generic {g}, integer-only {i}"))?;
    Ok("96 generic, 12 integer-only".into())
}

fn rmse(m: &gbt::GbtModel, d: &TrainSet, k: usize) -> f64 {
    let se: f64 = d.rows.iter().zip(&d.labels).map(|(x, y)| (m.predict_with_trees(x, k) - y).powi(2)).sum();
    (se / d.len() as f64).sqrt()
}

fn gbt_correctness() -> Check {
    let t = Instant::now();
    let loss = |y: f64, p: f64| (p - y) * (p - y);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let (y, p) = (rng.random_range(0.0..1.0), rng.random_range(-1.0..2.0));
        let (g, h) = grad_hess(y, p);
        let e = 1e-4;
        let fd_g = (loss(y, p + e) - loss(y, p - e)) / (2.0 * e);
        let fd_h = (loss(y, p + e) - 2.0 * loss(y, p) + loss(y, p - e)) / (e * e);
        ensure((g - fd_g).abs() < 1e-6 && (h - fd_h).abs() < 1e-6, || format!("y={y} p={p}: ({g},{h}) vs ({fd_g},{fd_h})"))?;
    }

    let mut d = TrainSet::new();
    for _ in 0..300 {
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let y = (0.5 + 0.3 * (6.0 * x[0]).sin() * x[1] + 0.1 * x[2]).clamp(0.0, 1.0);
        d.push(x, y).map_err(|e| e.to_string())?;
    }
    let m = gbt::train(&d, &GbtParams { n_trees: 60, max_depth: 4, ..Default::default() }).map_err(|e| e.to_string())?;
    let curve: Vec<f64> = (0..=m.trees.len()).map(|k| rmse(&m, &d, k)).collect();
    ensure(curve.windows(2).all(|w| w[1] <= w[0] + 1e-12), || format!("training RMSE rose: {curve:?}"))?;

    for lambda in [0.0, 1.0, 3.5] {
        let params = GbtParams { n_trees: 1, max_depth: 0, lambda, eta: 1.0, ..Default::default() };
        let m = gbt::train(&d, &params).map_err(|e| e.to_string())?;
        let gsum: f64 = d.labels.iter().map(|y| 2.0 * (params.base_score - y)).sum();
        let hsum = 2.0 * d.len() as f64;
        let closed = -gsum / (hsum + lambda);
        let got = m.predict(&d.rows[0]) - params.base_score;
        ensure((got - closed).abs() < 1e-12 && (leaf_weight(gsum, hsum, lambda) - closed).abs() < 1e-12, || {
            format!("lambda {lambda}: leaf {got} vs closed form {closed}")
        })?;
    }

    let mut d = TrainSet::new();
    let g = |v: f64| 0.2 + 0.6 * (v * 7.0).cos().abs();
    for i in 0..400 {
        let v = (i % 20) as f64 / 20.0;
        let x = vec![rng.random_range(0.0..1.0), v, rng.random_range(0.0..1.0)];
        d.push(x, g(v)).map_err(|e| e.to_string())?;
    }
    let m = gbt::train(&d, &GbtParams { n_trees: 50, ..Default::default() }).map_err(|e| e.to_string())?;
    let fit = rmse(&m, &d, m.trees.len());
    ensure(fit < 1e-3, || format!("single-feature fit RMSE {fit}"))?;
    within(t, Duration::from_secs(5))?;
    Ok(format!("gradients, monotone RMSE over {} trees, leaf closed form, 1-D fit RMSE {fit:.2e}, {:.1?}", curve.len() - 1, t.elapsed()))
}

fn guided_speedup() -> Check {
    let t = Instant::now();
    let (mut xgb, mut xgbt, mut random, mut grid) = (vec![], vec![], vec![], vec![]);
    let target = features(3, 4);
    let other = features(6, 7);
    for seed in 0..50u64 {
        let table = ResponseTable::new(seed);
        let task = table.task("target", target.clone());
        let eval = |c: &QuantConfig| Ok(table.lookup(c));
        let opts = XgbOptions { seed, ..Default::default() };
        let run = |r: ptqtune::Result<ptqtune::tuner::SearchResult>| -> Result<f64, String> {
            let r = r.map_err(|e| e.to_string())?;
            ensure(r.best_top1 == table.max(), || format!("seed {seed}: {} missed the optimum", r.strategy))?;
            Ok(r.trials_to_best as f64)
        };
        xgb.push(run(tune_xgb(&task, &eval, 96, &[], &opts))?);
        let db = table.correlated(seed).records("other", &other);
        xgbt.push(run(tune_xgb(&task, &eval, 96, &db, &opts))?);
        random.push(run(tune_random(&task, &eval, 96, seed, 1))?);
        grid.push(run(tune_grid(&task, &eval, 96, 1))?);
    }
    let (x, xt, r, g) = (median(xgb), median(xgbt), median(random), median(grid));
    let summary = format!("median trials to best: xgb-t {x_t}, xgb {x}, random {r}, grid {g}", x_t = xt);
    ensure(x < r && x < g && xt < x, || summary.clone())?;
    within(t, Duration::from_secs(120))?;
    Ok(format!("{summary}, {:.1?}", t.elapsed()))
}

fn end_to_end(suite: &Suite) -> Check {
    let t = Instant::now();
    let mut lines = vec![];
    for m in &suite.models {
        let eval = Memoized::new(PipelineEvaluator { model: m, eval: &suite.data.eval, profile: TargetProfile::Generic });
        let task = m.task(TargetProfile::Generic);
        let exhaustive = tune_grid(&task, &eval, 96, 1).map_err(|e| e.to_string())?;
        let tuned = tune_xgb(&task, &eval, 96, &[], &XgbOptions::default()).map_err(|e| e.to_string())?;
        let drop = 100.0 * (m.fp32_top1 - tuned.best_top1);
        ensure(tuned.best_top1 == exhaustive.best_top1, || {
            format!("{}: tuned {} vs exhaustive {}", m.name, tuned.best_top1, exhaustive.best_top1)
        })?;
        ensure(drop <= 1.0, || format!("{}: drop {drop:.2} points", m.name))?;
        lines.push(format!("{} fp32 {:.3} best {:.3} ({})", m.name, m.fp32_top1, tuned.best_top1, tuned.best));
    }
    within(t, Duration::from_secs(300))?;
    Ok(format!("{}, {:.1?}", lines.join("; "), t.elapsed()))
}

fn entropy_analysis() -> Check {
    let cases = [(vec![1.0, 1.0], 1.0), (vec![7.0], 0.0), (vec![0.25, 0.75], 0.8113)];
    for (f, want) in &cases {
        let h = shannon_entropy(f).map_err(|e| e.to_string())?;
        ensure((h - want).abs() < 1e-4, || format!("H({f:?}) = {h}, expected {want}"))?;
    }
    // Survivors: caches S1,S1,S2,S3; every scheme symmetric; clipping max,max,kl,kl;
    // granularity three tensor one channel; mixed one off three fp32.
    let sym = |cache, clipping, granularity, mixed| {
        QuantConfig::new(cache, QuantScheme::Symmetric, clipping, granularity, mixed)
    };
    use Clipping::*;
    use Granularity::*;
    use MixedPrecision::*;
    use SizeClass::*;
    let survivors = [
        sym(S1, Max, Tensor, Off),
        sym(S1, Max, Tensor, FirstLastFp32),
        sym(S2, Kl, Tensor, FirstLastFp32),
        sym(S3, Kl, Channel, FirstLastFp32),
    ];
    let losers = [
        QuantConfig::new(S3, QuantScheme::Asymmetric, Kl, Channel, Off),
        QuantConfig::new(S2, QuantScheme::SymmetricPower2, Max, Channel, Off),
    ];
    let rec = |c: &QuantConfig, top1: f64, i: usize| TuningRecord {
        v: DB_VERSION,
        model: "m".into(),
        features: Default::default(),
        config: *c,
        top1,
        fp32_top1: 0.8,
        trial: i,
        timestamp: i as u64,
        error: None,
    };
    let mut db: Vec<TuningRecord> = survivors.iter().enumerate().map(|(i, c)| rec(c, 0.795 - 0.001 * i as f64, i)).collect();
    db.extend(losers.iter().map(|c| rec(c, 0.7, 9)));
    let r = diversity_report(&db, 1.0).map_err(|e| e.to_string())?;
    // By hand: (2,1,1)/4 -> 1.5 bits; (4)/4 -> 0; (2,2)/4 -> 1; (3,1)/4 -> 0.811278...
    let h31 = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
    let want = [("calibration", 1.5), ("scheme", 0.0), ("clipping", 1.0), ("granularity", h31), ("mixed", h31)];
    ensure(r.n_samples == 4, || format!("{} survivors", r.n_samples))?;
    for (dim, w) in want {
        let got = r.get(dim).ok_or_else(|| format!("{dim} missing"))?;
        ensure((got - w).abs() < 1e-6, || format!("{dim}: {got} vs {w}"))?;
    }
    Ok("1.0 / 0.0 / 0.8113 and engineered database entropies".into())
}

fn model_sizes(suite: &Suite) -> Check {
    let mut checked = 0;
    for m in &suite.models {
        let size = |g: Granularity, x: MixedPrecision| -> Result<usize, String> {
            let cfg = QuantConfig::new(SizeClass::S1, QuantScheme::Symmetric, Clipping::Max, g, x);
            let qg = quantize_model(&m.graph, m.cache(cfg.cache), &cfg, TargetProfile::Generic).map_err(|e| e.to_string())?;
            let bytes = model_size(&qg);
            let want = analytic_model_size(&m.graph, &cfg);
            ensure(bytes == want, || format!("{} {cfg}: {bytes} bytes vs analytic {want}", m.name))?;
            Ok(bytes)
        };
        let t = size(Granularity::Tensor, MixedPrecision::Off)?;
        let c = size(Granularity::Channel, MixedPrecision::Off)?;
        let cm = size(Granularity::Channel, MixedPrecision::FirstLastFp32)?;
        let tm = size(Granularity::Tensor, MixedPrecision::FirstLastFp32)?;
        ensure(t <= c && c <= cm && t <= tm, || format!("{}: tensor {t}, channel {c}, channel+mixed {cm}, tensor+mixed {tm}", m.name))?;
        for cfg in enumerate_space(TargetProfile::Generic) {
            let qg = quantize_model(&m.graph, m.cache(cfg.cache), &cfg, TargetProfile::Generic).map_err(|e| e.to_string())?;
            ensure(model_size(&qg) == analytic_model_size(&m.graph, &cfg), || format!("{} {cfg}: size mismatch", m.name))?;
            checked += 1;
        }
    }
    Ok(format!("ordering holds on {} models, {checked} exact byte counts", suite.models.len()))
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn main() {
    let suite = build_suite().expect("fixture suite builds");
    let criteria: Vec<Criterion<'_>> = vec![
        ("scheme arithmetic", Box::new(scheme_arithmetic)),
        ("power-of-two audit", Box::new(|| power2_audit(&suite))),
        ("integer-only mode", Box::new(|| integer_only(&suite))),
        ("KL clipping oracle", Box::new(kl_oracle)),
        ("space cardinalities", Box::new(cardinalities)),
        ("GBT correctness", Box::new(gbt_correctness)),
        ("guided-search speedup", Box::new(guided_speedup)),
        ("end-to-end quality", Box::new(|| end_to_end(&suite))),
        ("entropy analysis", Box::new(entropy_analysis)),
        ("model-size ordering", Box::new(|| model_sizes(&suite))),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    // The integer-only accuracy path is exercised once end to end as a smoke check.
    if only.is_none() {
        let m = &suite.models[0];
        let cfg = enumerate_space(TargetProfile::IntegerOnly)[0];
        let qg = quantize_model(&m.graph, m.cache(cfg.cache), &cfg, TargetProfile::IntegerOnly).unwrap();
        assert!(evaluate_integer_only(&qg, &suite.data.eval).unwrap().top1 > 0.0);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
