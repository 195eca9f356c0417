//! End-to-end acceptance suite. Each criterion prints one PASS/FAIL line
//! (visible with `--nocapture`) and fails the test on violation. The MNIST
//! criteria read the official IDX files from `data/mnist/` at the
//! repository root; see the README for how to obtain them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use usn::datasets::{load_idx, subsample_split, Dataset};
use usn::modelspace::{enumerate_usn_exact, usn_space, SpaceParams};
use usn::network::{
    cross_entropy, init_model, Activation, HiddenLayerConfig, Model, ModelConfig, OptimizerConfig,
};
use usn::rng::rng_from_seed;
use usn::sparselinalg::{spmm, spmm_transpose, DenseMatrix, SparseMatrix};
use usn::topology::{degree_spec, edge_count, generate_uniform, pattern_distance};
use usn::training::{percentile, run_replicates, TopologyMode};

/// Chi-square critical value, 5 degrees of freedom, p = 0.001.
const CHI2_5_P001: f64 = 20.515;

fn report(ok: bool, n: u32, name: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {verdict}: criterion {n} - {name}");
    assert!(ok, "criterion {n} - {name}");
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn load_mnist() -> (Dataset, Dataset) {
    let dir = mnist_dir();
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte.gz"),
        &dir.join("train-labels-idx1-ubyte.gz"),
    )
    .expect("MNIST training files in data/mnist (see README)");
    let val = load_idx(
        &dir.join("t10k-images-idx3-ubyte.gz"),
        &dir.join("t10k-labels-idx1-ubyte.gz"),
    )
    .expect("MNIST validation files in data/mnist (see README)");
    assert_eq!(train.n_samples(), 60_000);
    assert_eq!(val.n_samples(), 10_000);
    (train, val)
}

fn mnist_config(hidden: u32, density: f64, seed: u64) -> ModelConfig {
    ModelConfig {
        input_size: 784,
        hidden_layers: vec![HiddenLayerConfig {
            size: hidden,
            density,
            activation: Activation::Relu,
            dropout_rate: 0.2,
        }],
        output_size: 10,
        seed,
        optimizer: OptimizerConfig::default(),
    }
}

fn to_dense(w: &SparseMatrix) -> DenseMatrix {
    let mut d = DenseMatrix::zeros(w.out_dim(), w.in_dim());
    for (e, (i, j)) in w.pattern().edges().enumerate() {
        d.set(i as usize, j as usize, w.values()[e]);
    }
    d
}

fn onehot(classes: usize, labels: &[usize]) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(classes, labels.len());
    for (b, &c) in labels.iter().enumerate() {
        m.set(c, b, 1.0);
    }
    m
}

#[test]
fn criterion_01_model_space_reproduction() {
    let start = Instant::now();
    let a = usn_space(&SpaceParams::new(1000, 250, 0.1).unwrap()).log10_nu;
    let b = usn_space(&SpaceParams::new(784, 250, 0.1).unwrap()).log10_nu;
    let ok = (a - 33877.22).abs() <= 1.0 && (b - 26403.79).abs() <= 1.0
        && start.elapsed().as_secs_f64() < 1.0;
    println!("  log10 Nu(1000,250,0.1) = {a:.2}, log10 Nu(784,250,0.1) = {b:.2}");
    report(ok, 1, "model-space reproduction");
}

#[test]
fn criterion_02_exact_count_and_uniformity() {
    // 4 input rows over 2 columns at density 0.5: 4 edges, one per row,
    // column degrees 2 each -> C(4,2) = 6 valid masks
    let params = SpaceParams::new(4, 2, 0.5).unwrap();
    let exact = enumerate_usn_exact(&params).unwrap();
    let mut valid_masks = Vec::new();
    for choice in 0u32..16 {
        let cols: Vec<u32> = (0..4).map(|r| (choice >> r) & 1).collect();
        if cols.iter().sum::<u32>() == 2 {
            let mask: u32 = cols
                .iter()
                .enumerate()
                .map(|(r, &c)| 1u32 << (2 * r as u32 + c))
                .sum();
            valid_masks.push(mask);
        }
    }
    let mut counts = vec![0u64; valid_masks.len()];
    let spec = degree_spec(4, 2, 0.5);
    let mut all_members = true;
    for seed in 0..6000u64 {
        let p = generate_uniform(&spec, seed).unwrap();
        let mask: u32 = p.edges().map(|(i, j)| 1 << (2 * i + j)).sum();
        match valid_masks.iter().position(|&m| m == mask) {
            Some(k) => counts[k] += 1,
            None => all_members = false,
        }
    }
    let expected = 6000.0 / 6.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    println!("  exact count {exact}, chi-square {chi2:.3} (critical {CHI2_5_P001})");
    report(
        exact == 6 && valid_masks.len() == 6 && all_members && chi2 < CHI2_5_P001,
        2,
        "exact-count oracle and draw uniformity",
    );
}

#[test]
fn criterion_03_mask_invariant_suite() {
    let mut rng = rng_from_seed(0xACCE);
    let mut ok = true;
    for case in 0..1000u64 {
        let n_in = rng.random_range(1u32..=200);
        let n_out = rng.random_range(1u32..=200);
        let density: f64 = rng.random_range(0.0..=1.0);
        let spec = degree_spec(n_in, n_out, density);
        let p = generate_uniform(&spec, case).unwrap();
        // degree spread, sortedness, duplicates and exact edge count
        if p.validate_uniform().is_err() || p.n_edges() != edge_count(n_in, n_out, density) {
            println!("  violation at ({n_in}, {n_out}, {density})");
            ok = false;
            break;
        }
    }
    report(ok, 3, "mask invariant suite over 1000 randomized cases");
}

#[test]
fn criterion_04_structure_variation() {
    // 100 disjoint pairs from 200 independent patterns at density 0.1
    let spec = degree_spec(200, 100, 0.1);
    let patterns: Vec<_> = (0..200u64)
        .map(|s| generate_uniform(&spec, 0xD157 + s).unwrap())
        .collect();
    let distances: Vec<f64> = (0..100)
        .map(|k| pattern_distance(&patterns[2 * k], &patterns[2 * k + 1]).unwrap())
        .collect();
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    let var = distances
        .iter()
        .map(|d| (d - mean) * (d - mean))
        .sum::<f64>()
        / (distances.len() - 1) as f64;
    let se = (var / distances.len() as f64).sqrt();
    println!("  mean distance {mean:.5}, expected 0.9, 3 SE = {:.5}", 3.0 * se);
    report((mean - 0.9).abs() <= 3.0 * se, 4, "structure variation near 1 - density");
}

#[test]
fn criterion_05_gradient_correctness() {
    let mut rng = rng_from_seed(0x6AD);
    let mut max_rel = 0.0f64;
    for case in 0..20u64 {
        let input = rng.random_range(3u32..=8);
        let hidden = rng.random_range(3u32..=8);
        let classes = rng.random_range(2u32..=4);
        let density: f64 = rng.random_range(0.1..=1.0);
        let activation = if case % 2 == 0 { Activation::Relu } else { Activation::Identity };
        let config = ModelConfig {
            input_size: input,
            hidden_layers: vec![HiddenLayerConfig {
                size: hidden,
                density,
                activation,
                dropout_rate: 0.0,
            }],
            output_size: classes,
            seed: case,
            optimizer: OptimizerConfig::default(),
        };
        let model = init_model(&config).unwrap();
        let batch = 4usize;
        let x = DenseMatrix::from_vec(
            input as usize,
            batch,
            (0..input as usize * batch).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes as usize)).collect();
        let y = onehot(classes as usize, &labels);
        let mut drng = rng_from_seed(1);
        let (probs, cache) = model.forward(&x, true, &mut drng).unwrap();
        let (_, grads) = model.loss_and_grad(&probs, &y, &cache).unwrap();
        let analytic = grads.to_vector();
        let base = model.param_vector();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut probe = model.clone();
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_param_vector(&p);
            let lp = cross_entropy(&probe.predict(&x).unwrap(), &y);
            p[i] = base[i] - h;
            probe.set_param_vector(&p);
            let lm = cross_entropy(&probe.predict(&x).unwrap(), &y);
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    // kernel adjointness <W X, G> = <X, W^T G>
    let mut max_adjoint = 0.0f64;
    for case in 0..50u64 {
        let spec = degree_spec(12, 9, 0.4);
        let pattern = generate_uniform(&spec, case).unwrap();
        let nnz = pattern.n_edges() as usize;
        let w = SparseMatrix::new(
            pattern,
            (0..nnz).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let x = DenseMatrix::from_vec(9, 3, (0..27).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let g = DenseMatrix::from_vec(12, 3, (0..36).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let lhs: f64 = spmm(&w, &x).unwrap().data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = spmm_transpose(&w, &g)
            .unwrap()
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| a * b)
            .sum();
        max_adjoint = max_adjoint.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    println!("  max FD relative error {max_rel:.2e}, max adjointness defect {max_adjoint:.2e}");
    report(max_rel <= 1e-4 && max_adjoint <= 1e-10, 5, "gradient correctness");
}

#[test]
fn criterion_06_dense_equivalence() {
    let mut rng = rng_from_seed(0xDE5E);
    let config = ModelConfig {
        input_size: 9,
        hidden_layers: vec![HiddenLayerConfig {
            size: 7,
            density: 1.0,
            activation: Activation::Relu,
            dropout_rate: 0.0,
        }],
        output_size: 4,
        seed: 33,
        optimizer: OptimizerConfig::default(),
    };
    let model = init_model(&config).unwrap();
    let batch = 5usize;
    let x = DenseMatrix::from_vec(9, batch, (0..45).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..4)).collect();
    let y = onehot(4, &labels);
    let mut drng = rng_from_seed(2);
    let (probs, cache) = model.forward(&x, true, &mut drng).unwrap();
    let (_, grads) = model.loss_and_grad(&probs, &y, &cache).unwrap();

    // reference dense implementation
    let layer = &model.sparse_layers()[0];
    let w1 = to_dense(&layer.weights.matrix);
    let b1 = &layer.weights.bias;
    let w2 = &model.output_layer().weights;
    let b2 = &model.output_layer().bias;
    let mut z1 = usn::sparselinalg::matmul(&w1, &x).unwrap();
    for i in 0..z1.rows() {
        for v in z1.row_mut(i) {
            *v += b1[i];
        }
    }
    let mut a = z1.clone();
    for v in a.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mut z2 = usn::sparselinalg::matmul(w2, &a).unwrap();
    for i in 0..z2.rows() {
        for v in z2.row_mut(i) {
            *v += b2[i];
        }
    }
    let mut p_ref = DenseMatrix::zeros(4, batch);
    for b in 0..batch {
        let max = (0..4).map(|i| z2.get(i, b)).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..4).map(|i| (z2.get(i, b) - max).exp()).sum();
        for i in 0..4 {
            p_ref.set(i, b, (z2.get(i, b) - max).exp() / sum);
        }
    }
    let mut dz2 = DenseMatrix::zeros(4, batch);
    for i in 0..4 {
        for b in 0..batch {
            dz2.set(i, b, (p_ref.get(i, b) - y.get(i, b)) / batch as f64);
        }
    }
    let dw2 = usn::sparselinalg::matmul_bt(&dz2, &a).unwrap();
    let db2: Vec<f64> = (0..4).map(|i| dz2.row(i).iter().sum()).collect();
    let mut dz1 = usn::sparselinalg::matmul_at(w2, &dz2).unwrap();
    for (v, &z) in dz1.data_mut().iter_mut().zip(z1.data()) {
        if z <= 0.0 {
            *v = 0.0;
        }
    }
    let dw1 = usn::sparselinalg::matmul_bt(&dz1, &x).unwrap();
    let db1: Vec<f64> = (0..7).map(|i| dz1.row(i).iter().sum()).collect();

    let mut max_err = 0.0f64;
    for (pa, pb) in probs.data().iter().zip(p_ref.data()) {
        max_err = max_err.max((pa - pb).abs());
    }
    for (e, (i, j)) in layer.weights.matrix.pattern().edges().enumerate() {
        max_err = max_err.max((grads.sparse[0].0[e] - dw1.get(i as usize, j as usize)).abs());
    }
    for (ga, gb) in grads.sparse[0].1.iter().zip(&db1) {
        max_err = max_err.max((ga - gb).abs());
    }
    for (ga, gb) in grads.dense_weights.data().iter().zip(dw2.data()) {
        max_err = max_err.max((ga - gb).abs());
    }
    for (ga, gb) in grads.dense_bias.iter().zip(&db2) {
        max_err = max_err.max((ga - gb).abs());
    }
    println!("  max forward/backward deviation from dense reference {max_err:.2e}");
    report(max_err <= 1e-10, 6, "density-1 dense equivalence");
}

#[test]
fn criterion_07_mnist_desk_run() {
    let (full_train, val) = load_mnist();
    let (train, _) = subsample_split(&full_train, 12_000, 0, 0x71A1, false).unwrap();
    drop(full_train);
    let config = mnist_config(250, 0.1, 0);
    let outcome = run_replicates(&config, &train, &val, 30, 32, 5, TopologyMode::Random, 0x5EED7)
        .unwrap();
    let loss = *outcome.summary.val_loss.p50.last().unwrap();
    let acc = *outcome.summary.val_acc.p50.last().unwrap();
    println!("  median final validation loss {loss:.4} (<= 0.20), accuracy {acc:.4} (>= 0.95)");
    report(loss <= 0.20 && acc >= 0.95, 7, "MNIST desk run");
}

#[test]
fn criterion_08_topology_invariance() {
    let (full_train, val) = load_mnist();
    let (train, _) = subsample_split(&full_train, 4_000, 0, 0x71A8, false).unwrap();
    drop(full_train);
    let config = mnist_config(64, 0.1, 0);
    let epochs = 15;
    let fixed = run_replicates(&config, &train, &val, epochs, 32, 10, TopologyMode::Fixed, 0xF18ED)
        .unwrap();
    let random = run_replicates(&config, &train, &val, epochs, 32, 10, TopologyMode::Random, 0xF18ED)
        .unwrap();
    let finals = |o: &usn::training::ReplicateOutcome| -> Vec<f64> {
        o.histories.iter().map(|h| h.final_record().val_loss).collect()
    };
    let (f, r) = (finals(&fixed), finals(&random));
    let (fm, rm) = (percentile(&f, 0.5), percentile(&r, 0.5));
    let (f10, f90) = (percentile(&f, 0.1), percentile(&f, 0.9));
    let (r10, r90) = (percentile(&r, 0.1), percentile(&r, 0.9));
    let overlap = f10 <= r90 && r10 <= f90;
    println!(
        "  fixed median {fm:.4} [{f10:.4}, {f90:.4}], random median {rm:.4} [{r10:.4}, {r90:.4}]"
    );
    report(
        (fm - rm).abs() < 0.02 && overlap && fixed.summary.mean_topology_distance == 0.0,
        8,
        "fixed vs random topology invariance",
    );
}

#[test]
fn criterion_09_sparse_advantage() {
    let (full_train, val) = load_mnist();
    let (train, _) = subsample_split(&full_train, 1_000, 0, 0x71A9, false).unwrap();
    drop(full_train);
    let median_loss = |density: f64| -> f64 {
        let config = mnist_config(250, density, 0);
        let outcome =
            run_replicates(&config, &train, &val, 30, 32, 5, TopologyMode::Random, 0xADF7).unwrap();
        *outcome.summary.val_loss.p50.last().unwrap()
    };
    let sparse: Vec<(f64, f64)> = [0.05, 0.1, 0.2, 0.333, 0.5]
        .iter()
        .map(|&d| (d, median_loss(d)))
        .collect();
    let dense = median_loss(1.0);
    let best = sparse.iter().cloned().fold((0.0, f64::INFINITY), |acc, x| {
        if x.1 < acc.1 { x } else { acc }
    });
    println!("  sparse losses {sparse:?}; density 1.0 loss {dense:.4}; best {best:?}");
    report(best.1 < dense, 9, "sparse advantage on an overfit-prone setup");
}

#[test]
fn criterion_10_scaling() {
    let step_stats = |density: f64| -> (u64, f64) {
        let config = ModelConfig {
            input_size: 2000,
            hidden_layers: vec![HiddenLayerConfig {
                size: 1024,
                density,
                activation: Activation::Relu,
                dropout_rate: 0.0,
            }],
            output_size: 10,
            seed: 1,
            optimizer: OptimizerConfig::default(),
        };
        let mut model = init_model(&config).unwrap();
        let edges = model.sparse_layers()[0].weights.matrix.pattern().n_edges();
        let mut rng = rng_from_seed(4);
        let x = DenseMatrix::from_vec(
            2000,
            32,
            (0..2000 * 32).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..32).map(|_| rng.random_range(0..10)).collect();
        let y = onehot(10, &labels);
        let mut step = |m: &mut Model| {
            let (probs, cache) = m.forward(&x, true, &mut rng).unwrap();
            let (_, grads) = m.loss_and_grad(&probs, &y, &cache).unwrap();
            m.nadam_step(&grads).unwrap();
        };
        step(&mut model); // warmup
        let mut times = Vec::new();
        for _ in 0..7 {
            let t = Instant::now();
            step(&mut model);
            times.push(t.elapsed().as_secs_f64());
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (edges, times[times.len() / 2])
    };
    let (e_sparse, t_sparse) = step_stats(0.1);
    let (e_dense, t_dense) = step_stats(1.0);
    let ratio = t_sparse / t_dense;
    println!(
        "  edges {e_sparse} vs {e_dense} (exactly 10%: {}), step time ratio {ratio:.3} (<= 0.6)",
        e_sparse * 10 == e_dense
    );
    report(e_sparse * 10 == e_dense && ratio <= 0.6, 10, "parameter and step-time scaling");
}
