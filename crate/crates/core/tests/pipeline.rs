mod common;

use common::*;
use ptqtune::dataset::{generate_shapes, Dataset, Split};
use ptqtune::exec::evaluate_top1;
use ptqtune::pipeline::*;
use ptqtune::quant::QuantConfig;
use ptqtune::tensor::Shape3;
use ptqtune::tuner::{Evaluator, TargetProfile};

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                let (ac, bc) = (a[c].clone(), b[c].clone());
                a[r].iter_mut().zip(&ac).for_each(|(x, y)| *x -= f * y);
                b[r].iter_mut().zip(&bc).for_each(|(x, y)| *x -= f * y);
            }
        }
    }
    (0..n).map(|i| b[i].iter().map(|v| v / a[i][i]).collect()).collect()
}

#[test]
fn ridge_head_matches_primal_solution() {
    let (dim, classes, n) = (4, 3, 30);
    let images = random_images(Shape3::new(dim, 1, 1), n, 5);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let pool = Dataset::new(images.clone(), labels.clone(), Split::CalibrationPool).unwrap();
    let mut g = fc_graph(dim, classes, vec![0.0; dim * classes], vec![0.0; classes]);
    let ridge = 0.1;
    fit_ridge_head(&mut g, &pool, ridge).unwrap();

    let x: Vec<Vec<f64>> = images.iter().map(|t| t.data.iter().map(|&v| v as f64).collect()).collect();
    let mean: Vec<f64> = (0..dim).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let xc: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
    let lambda = ridge * xc.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n as f64;
    let ybar = 1.0 / classes as f64;
    let a: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| xc.iter().map(|r| r[i] * r[j]).sum::<f64>() + if i == j { lambda } else { 0.0 }).collect())
        .collect();
    let rhs: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            (0..classes)
                .map(|c| xc.iter().zip(&labels).map(|(r, &l)| r[i] * ((l == c) as u8 as f64 - ybar)).sum())
                .collect()
        })
        .collect();
    let wt = solve(a, rhs);
    let w = &g.weights["fc.w"].data;
    let b = &g.weights["fc.b"].data;
    for c in 0..classes {
        for j in 0..dim {
            assert!((w[c * dim + j] as f64 - wt[j][c]).abs() < 1e-4, "w[{c},{j}]");
        }
        let bc = ybar - (0..dim).map(|j| wt[j][c] * mean[j]).sum::<f64>();
        assert!((b[c] as f64 - bc).abs() < 1e-4, "b[{c}]");
    }
}

#[test]
fn prepared_model_beats_chance_and_evaluates_both_profiles() {
    let data = generate_shapes(3, 260, 60);
    let m = prepare_model(&SUITE[0], &data, CALIB_SEED).unwrap();
    assert_eq!(m.caches.len(), 3);
    let chance = 1.0 / data.classes as f64;
    assert!(m.fp32_top1 > 2.0 * chance, "fp32 top1 {}", m.fp32_top1);
    assert_eq!(m.fp32_top1, evaluate_top1(&m.graph, &data.eval).unwrap().top1);
    for profile in [TargetProfile::Generic, TargetProfile::IntegerOnly] {
        let eval = PipelineEvaluator { model: &m, eval: &data.eval, profile };
        let cfg: QuantConfig = m.task(profile).space[0];
        let top1 = eval.evaluate(&cfg).unwrap();
        assert!((0.0..=1.0).contains(&top1));
        assert!(m.fp32_top1 - top1 < 0.2, "{profile:?}: {top1} vs {}", m.fp32_top1);
    }
}

#[test]
fn preparation_is_deterministic() {
    let data = generate_shapes(4, 260, 30);
    let a = prepare_model(&SUITE[2], &data, 1).unwrap();
    let b = prepare_model(&SUITE[2], &data, 1).unwrap();
    assert_eq!(a.graph, b.graph);
    assert_eq!(a.fp32_top1, b.fp32_top1);
    assert_eq!(a.caches, b.caches);
}
