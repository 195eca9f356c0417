//! Model definition and training math: uniform sparse hidden layers, a dense
//! softmax output layer, categorical cross-entropy and the Nadam update.
//!
//! Layer semantics: `Y = W X + b`, `X_out = g(Y)` with `g` ReLU or identity
//! on hidden layers and softmax on the output. Hidden topologies are drawn
//! once at init and stay static through training; weight gradients exist
//! only on pattern positions.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::sparselinalg::{
    matmul, matmul_at, matmul_bt, sddmm, spmm, spmm_transpose, DenseMatrix, SparseMatrix,
};
use crate::topology::{degree_spec, generate_uniform, SparsityPattern};

const CHECKPOINT_MAGIC: &[u8; 4] = b"USNM";
const CHECKPOINT_VERSION: u32 = 1;
/// Probabilities are clamped here before the log in the loss.
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayerConfig {
    pub size: u32,
    pub density: f64,
    pub activation: Activation,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: u32,
    pub hidden_layers: Vec<HiddenLayerConfig>,
    pub output_size: u32,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.output_size == 0 {
            return Err(Error::Config("zero input or output size".into()));
        }
        for (l, h) in self.hidden_layers.iter().enumerate() {
            if h.size == 0 {
                return Err(Error::Config(format!("hidden layer {l} has size 0")));
            }
            if !(0.0..=1.0).contains(&h.density) {
                return Err(Error::Config(format!("layer {l} density {}", h.density)));
            }
            if !(0.0..1.0).contains(&h.dropout_rate) {
                return Err(Error::Config(format!("layer {l} dropout {}", h.dropout_rate)));
            }
        }
        Ok(())
    }
}

/// Sparse weight matrix plus a dense bias, one entry per output unit. The
/// bias is dense even when a unit's in-degree is zero at extreme sparsity.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseWeights {
    pub matrix: SparseMatrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseLayer {
    pub weights: SparseWeights,
    pub activation: Activation,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `output_size x hidden_size`, row-major.
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    sparse_layers: Vec<SparseLayer>,
    output: DenseLayer,
    /// Optimizer state, aligned with the parameter tensors in flat order:
    /// per sparse layer values then bias, then dense weights, dense bias.
    moments: Vec<Moments>,
    step: u64,
}

/// Builds a model from its config; deterministic in `config.seed`. Hidden
/// topologies come from `generate_uniform` with per-layer seeds derived from
/// the config seed.
pub fn init_model(config: &ModelConfig) -> Result<Model> {
    let seeds: Vec<u64> = (0..config.hidden_layers.len())
        .map(|l| derive_seed(config.seed, stream::TOPOLOGY + l as u64))
        .collect();
    init_model_with_topology_seeds(config, &seeds)
}

/// As `init_model` but with explicit topology seeds, one per hidden layer.
/// Weight initialization still derives from `config.seed`, so replicates can
/// share a topology while varying their initial weights.
pub fn init_model_with_topology_seeds(config: &ModelConfig, topo_seeds: &[u64]) -> Result<Model> {
    config.validate()?;
    if topo_seeds.len() != config.hidden_layers.len() {
        return Err(Error::Config(format!(
            "{} topology seeds for {} hidden layers",
            topo_seeds.len(),
            config.hidden_layers.len()
        )));
    }
    let mut rng = rng_from_seed(derive_seed(config.seed, stream::INIT));
    let mut sparse_layers = Vec::with_capacity(config.hidden_layers.len());
    let mut moments = Vec::new();
    let mut fan_in = config.input_size;
    for (h, &topo_seed) in config.hidden_layers.iter().zip(topo_seeds) {
        // Pattern rows are the layer's output units.
        let spec = degree_spec(h.size, fan_in, h.density);
        let pattern = generate_uniform(&spec, topo_seed)?;
        let values = init_sparse_values(&pattern, &mut rng);
        let nnz = values.len();
        let matrix = SparseMatrix::new(pattern, values)?;
        let bias = vec![0.0; h.size as usize];
        moments.push(Moments::zeros(nnz));
        moments.push(Moments::zeros(h.size as usize));
        sparse_layers.push(SparseLayer {
            weights: SparseWeights { matrix, bias },
            activation: h.activation,
            dropout_rate: h.dropout_rate,
        });
        fan_in = h.size;
    }
    let out = config.output_size as usize;
    let hidden = fan_in as usize;
    let limit = (6.0 / (hidden + out) as f64).sqrt();
    let weights = DenseMatrix::from_vec(
        out,
        hidden,
        (0..out * hidden)
            .map(|_| rng.random_range(-limit..=limit))
            .collect(),
    )?;
    moments.push(Moments::zeros(out * hidden));
    moments.push(Moments::zeros(out));
    Ok(Model {
        config: config.clone(),
        sparse_layers,
        output: DenseLayer {
            weights,
            bias: vec![0.0; out],
        },
        moments,
        step: 0,
    })
}

/// Per-edge Glorot-style init using the edge's actual degrees: an edge
/// between output unit `i` (in-degree `d_i`) and input `j` (out-degree
/// `d_j`) is drawn uniformly in `±sqrt(6 / (d_i + d_j))`. Dense fan-in
/// would over-shrink sparse weights.
fn init_sparse_values(pattern: &SparsityPattern, rng: &mut Xoshiro256PlusPlus) -> Vec<f64> {
    let col_deg = pattern.col_degrees();
    let mut values = Vec::with_capacity(pattern.n_edges() as usize);
    for i in 0..pattern.n_in() as usize {
        let d_i = pattern.row_degree(i);
        for &j in pattern.row(i) {
            let fan = d_i + col_deg[j as usize];
            let limit = (6.0 / fan as f64).sqrt();
            values.push(rng.random_range(-limit..=limit));
        }
    }
    values
}

/// Intermediates captured by the forward pass for the backward pass.
pub struct ForwardCache {
    /// Input to each sparse layer.
    sparse_inputs: Vec<DenseMatrix>,
    /// Pre-activations of each sparse layer.
    preacts: Vec<DenseMatrix>,
    /// Dropout scale masks (0 or 1/(1-rate)), training mode only.
    dropout_masks: Vec<Option<DenseMatrix>>,
    /// Input to the dense output layer.
    dense_input: DenseMatrix,
}

/// Per-tensor gradients, aligned with the model's parameters. Sparse weight
/// gradients carry one value per pattern edge; off-pattern positions do not
/// exist.
pub struct Gradients {
    pub sparse: Vec<(Vec<f64>, Vec<f64>)>,
    pub dense_weights: DenseMatrix,
    pub dense_bias: Vec<f64>,
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn sparse_layers(&self) -> &[SparseLayer] {
        &self.sparse_layers
    }

    pub fn output_layer(&self) -> &DenseLayer {
        &self.output
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Total trainable parameter count: sparse values, biases and the dense
    /// output layer.
    pub fn count_parameters(&self) -> u64 {
        let sparse: u64 = self
            .sparse_layers
            .iter()
            .map(|l| l.weights.matrix.values().len() as u64 + l.weights.bias.len() as u64)
            .sum();
        sparse
            + (self.output.weights.rows() * self.output.weights.cols()) as u64
            + self.output.bias.len() as u64
    }

    /// Forward pass. In training mode dropout masks are drawn from `rng`
    /// (inverted dropout, so evaluation needs no rescale); in evaluation
    /// mode dropout is the identity and `rng` is untouched. Returns class
    /// probabilities (columns sum to 1) and the cache for `loss_and_grad`.
    pub fn forward(
        &self,
        x: &DenseMatrix,
        training: bool,
        rng: &mut Xoshiro256PlusPlus,
    ) -> Result<(DenseMatrix, ForwardCache)> {
        if x.rows() != self.config.input_size as usize {
            return Err(Error::Shape(format!(
                "input has {} rows, model expects {}",
                x.rows(),
                self.config.input_size
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("forward input".into()));
        }
        let mut sparse_inputs = Vec::with_capacity(self.sparse_layers.len());
        let mut preacts = Vec::with_capacity(self.sparse_layers.len());
        let mut dropout_masks = Vec::with_capacity(self.sparse_layers.len());
        let mut cur = x.clone();
        for layer in &self.sparse_layers {
            let mut y = spmm(&layer.weights.matrix, &cur)?;
            add_bias(&mut y, &layer.weights.bias);
            sparse_inputs.push(cur);
            let mut a = y.clone();
            preacts.push(y);
            if layer.activation == Activation::Relu {
                for v in a.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            let mask = if training && layer.dropout_rate > 0.0 {
                let keep = 1.0 - layer.dropout_rate;
                let scale = 1.0 / keep;
                let mut mask = DenseMatrix::zeros(a.rows(), a.cols());
                for m in mask.data_mut() {
                    if rng.random_range(0.0..1.0) < keep {
                        *m = scale;
                    }
                }
                for (v, m) in a.data_mut().iter_mut().zip(mask.data()) {
                    *v *= m;
                }
                Some(mask)
            } else {
                None
            };
            dropout_masks.push(mask);
            cur = a;
        }
        let mut logits = matmul(&self.output.weights, &cur)?;
        add_bias(&mut logits, &self.output.bias);
        let probs = softmax_columns(&logits);
        Ok((
            probs,
            ForwardCache {
                sparse_inputs,
                preacts,
                dropout_masks,
                dense_input: cur,
            },
        ))
    }

    /// Evaluation-mode probabilities without keeping the cache.
    pub fn predict(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut rng = rng_from_seed(0);
        Ok(self.forward(x, false, &mut rng)?.0)
    }

    /// Mean categorical cross-entropy and all parameter gradients.
    pub fn loss_and_grad(
        &self,
        probs: &DenseMatrix,
        labels: &DenseMatrix,
        cache: &ForwardCache,
    ) -> Result<(f64, Gradients)> {
        if probs.rows() != labels.rows() || probs.cols() != labels.cols() {
            return Err(Error::Shape(format!(
                "probabilities {}x{} vs labels {}x{}",
                probs.rows(),
                probs.cols(),
                labels.rows(),
                labels.cols()
            )));
        }
        let batch = probs.cols();
        let loss = cross_entropy(probs, labels);

        // softmax + cross-entropy: gradient at the output pre-activation
        let mut dz = DenseMatrix::zeros(probs.rows(), batch);
        for i in 0..probs.rows() {
            let (p, y) = (probs.row(i), labels.row(i));
            let d = dz.row_mut(i);
            for b in 0..batch {
                d[b] = (p[b] - y[b]) / batch as f64;
            }
        }

        let dense_weights = matmul_bt(&dz, &cache.dense_input)?;
        let dense_bias: Vec<f64> = (0..dz.rows()).map(|i| dz.row(i).iter().sum()).collect();
        let mut g = matmul_at(&self.output.weights, &dz)?;

        let mut sparse = vec![(Vec::new(), Vec::new()); self.sparse_layers.len()];
        for (l, layer) in self.sparse_layers.iter().enumerate().rev() {
            if let Some(mask) = &cache.dropout_masks[l] {
                for (gv, m) in g.data_mut().iter_mut().zip(mask.data()) {
                    *gv *= m;
                }
            }
            if layer.activation == Activation::Relu {
                for (gv, &z) in g.data_mut().iter_mut().zip(cache.preacts[l].data()) {
                    if z <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let d_values = sddmm(&g, &cache.sparse_inputs[l], layer.weights.matrix.pattern())?;
            let d_bias: Vec<f64> = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
            sparse[l] = (d_values, d_bias);
            if l > 0 {
                g = spmm_transpose(&layer.weights.matrix, &g)?;
            }
        }
        Ok((
            loss,
            Gradients {
                sparse,
                dense_weights,
                dense_bias,
            },
        ))
    }

    /// One Nadam step over every parameter tensor. Rejects non-finite
    /// gradients without touching the model.
    pub fn nadam_step(&mut self, grads: &Gradients) -> Result<()> {
        let finite = grads
            .sparse
            .iter()
            .all(|(v, b)| v.iter().chain(b).all(|x| x.is_finite()))
            && grads.dense_weights.is_finite()
            && grads.dense_bias.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("gradients".into()));
        }
        let t = self.step + 1;
        let opt = self.config.optimizer;
        let mut mom = self.moments.iter_mut();
        for (layer, (dv, db)) in self.sparse_layers.iter_mut().zip(&grads.sparse) {
            let m = mom.next().unwrap();
            nadam_update(layer.weights.matrix.values_mut(), dv, &mut m.m, &mut m.v, t, &opt);
            let m = mom.next().unwrap();
            nadam_update(&mut layer.weights.bias, db, &mut m.m, &mut m.v, t, &opt);
        }
        let m = mom.next().unwrap();
        nadam_update(
            self.output.weights.data_mut(),
            grads.dense_weights.data(),
            &mut m.m,
            &mut m.v,
            t,
            &opt,
        );
        let m = mom.next().unwrap();
        nadam_update(&mut self.output.bias, &grads.dense_bias, &mut m.m, &mut m.v, t, &opt);
        self.step = t;
        Ok(())
    }

    /// All parameters as one flat vector, in moment order: per sparse layer
    /// values then bias, then dense weights, then dense bias.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.sparse_layers {
            out.extend_from_slice(layer.weights.matrix.values());
            out.extend_from_slice(&layer.weights.bias);
        }
        out.extend_from_slice(self.output.weights.data());
        out.extend_from_slice(&self.output.bias);
        out
    }

    pub fn set_param_vector(&mut self, params: &[f64]) {
        let mut k = 0usize;
        for layer in &mut self.sparse_layers {
            let v = layer.weights.matrix.values_mut();
            v.copy_from_slice(&params[k..k + v.len()]);
            k += v.len();
            let n = layer.weights.bias.len();
            layer.weights.bias.copy_from_slice(&params[k..k + n]);
            k += n;
        }
        let n = self.output.weights.data().len();
        self.output
            .weights
            .data_mut()
            .copy_from_slice(&params[k..k + n]);
        k += n;
        let n = self.output.bias.len();
        self.output.bias.copy_from_slice(&params[k..k + n]);
        k += n;
        assert_eq!(k, params.len());
    }

    /// Model checkpoint: magic `USNM`, version, config, then per layer the
    /// pattern followed by little-endian f32 values and biases, then the
    /// dense layer. Save-load-save is byte-identical.
    pub fn save_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        let c = &self.config;
        w.write_u32::<LittleEndian>(c.input_size)?;
        w.write_u32::<LittleEndian>(c.hidden_layers.len() as u32)?;
        for h in &c.hidden_layers {
            w.write_u32::<LittleEndian>(h.size)?;
            w.write_f64::<LittleEndian>(h.density)?;
            w.write_u8(match h.activation {
                Activation::Relu => 0,
                Activation::Identity => 1,
            })?;
            w.write_f64::<LittleEndian>(h.dropout_rate)?;
        }
        w.write_u32::<LittleEndian>(c.output_size)?;
        w.write_u64::<LittleEndian>(c.seed)?;
        w.write_f64::<LittleEndian>(c.optimizer.learning_rate)?;
        w.write_f64::<LittleEndian>(c.optimizer.beta1)?;
        w.write_f64::<LittleEndian>(c.optimizer.beta2)?;
        w.write_f64::<LittleEndian>(c.optimizer.epsilon)?;
        for layer in &self.sparse_layers {
            layer.weights.matrix.pattern().write_to(w)?;
            for &v in layer.weights.matrix.values() {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
            for &b in &layer.weights.bias {
                w.write_f32::<LittleEndian>(b as f32)?;
            }
        }
        for &v in self.output.weights.data() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        for &b in &self.output.bias {
            w.write_f32::<LittleEndian>(b as f32)?;
        }
        Ok(())
    }

    pub fn load_checkpoint<R: Read>(r: &mut R) -> Result<Model> {
        let perr = |offset: u64, message: &str| Error::Parse {
            offset,
            message: message.into(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| perr(0, "truncated magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(perr(0, "bad magic, expected USNM"));
        }
        let version = r
            .read_u32::<LittleEndian>()
            .map_err(|_| perr(4, "truncated version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(perr(4, "unsupported checkpoint version"));
        }
        let input_size = r.read_u32::<LittleEndian>().map_err(|_| perr(8, "truncated config"))?;
        let n_hidden = r.read_u32::<LittleEndian>().map_err(|_| perr(12, "truncated config"))?;
        let mut hidden_layers = Vec::with_capacity(n_hidden as usize);
        for _ in 0..n_hidden {
            let size = r.read_u32::<LittleEndian>().map_err(|_| perr(16, "truncated layer config"))?;
            let density = r.read_f64::<LittleEndian>().map_err(|_| perr(16, "truncated layer config"))?;
            let activation = match r.read_u8().map_err(|_| perr(16, "truncated layer config"))? {
                0 => Activation::Relu,
                1 => Activation::Identity,
                _ => return Err(perr(16, "unknown activation code")),
            };
            let dropout_rate = r
                .read_f64::<LittleEndian>()
                .map_err(|_| perr(16, "truncated layer config"))?;
            hidden_layers.push(HiddenLayerConfig {
                size,
                density,
                activation,
                dropout_rate,
            });
        }
        let output_size = r.read_u32::<LittleEndian>().map_err(|_| perr(16, "truncated config"))?;
        let seed = r.read_u64::<LittleEndian>().map_err(|_| perr(16, "truncated config"))?;
        let optimizer = OptimizerConfig {
            learning_rate: r.read_f64::<LittleEndian>().map_err(|_| perr(16, "truncated optimizer"))?,
            beta1: r.read_f64::<LittleEndian>().map_err(|_| perr(16, "truncated optimizer"))?,
            beta2: r.read_f64::<LittleEndian>().map_err(|_| perr(16, "truncated optimizer"))?,
            epsilon: r.read_f64::<LittleEndian>().map_err(|_| perr(16, "truncated optimizer"))?,
        };
        let config = ModelConfig {
            input_size,
            hidden_layers,
            output_size,
            seed,
            optimizer,
        };
        config.validate()?;
        let mut sparse_layers = Vec::with_capacity(config.hidden_layers.len());
        let mut moments = Vec::new();
        for h in &config.hidden_layers {
            let pattern = SparsityPattern::read_from(r)?;
            if pattern.n_in() != h.size {
                return Err(perr(16, "pattern shape disagrees with config"));
            }
            let nnz = pattern.n_edges() as usize;
            let mut values = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                values.push(
                    r.read_f32::<LittleEndian>()
                        .map_err(|_| perr(16, "truncated values"))? as f64,
                );
            }
            let mut bias = Vec::with_capacity(h.size as usize);
            for _ in 0..h.size {
                bias.push(
                    r.read_f32::<LittleEndian>()
                        .map_err(|_| perr(16, "truncated bias"))? as f64,
                );
            }
            moments.push(Moments::zeros(nnz));
            moments.push(Moments::zeros(h.size as usize));
            sparse_layers.push(SparseLayer {
                weights: SparseWeights {
                    matrix: SparseMatrix::new(pattern, values)?,
                    bias,
                },
                activation: h.activation,
                dropout_rate: h.dropout_rate,
            });
        }
        let hidden = config
            .hidden_layers
            .last()
            .map(|h| h.size)
            .unwrap_or(config.input_size) as usize;
        let out = config.output_size as usize;
        let mut wdata = Vec::with_capacity(out * hidden);
        for _ in 0..out * hidden {
            wdata.push(
                r.read_f32::<LittleEndian>()
                    .map_err(|_| perr(16, "truncated dense weights"))? as f64,
            );
        }
        let mut bias = Vec::with_capacity(out);
        for _ in 0..out {
            bias.push(
                r.read_f32::<LittleEndian>()
                    .map_err(|_| perr(16, "truncated dense bias"))? as f64,
            );
        }
        moments.push(Moments::zeros(out * hidden));
        moments.push(Moments::zeros(out));
        Ok(Model {
            config,
            sparse_layers,
            output: DenseLayer {
                weights: DenseMatrix::from_vec(out, hidden, wdata)?,
                bias,
            },
            moments,
            step: 0,
        })
    }
}

/// The Nadam update on one parameter tensor, step counter `t` starting at 1:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, `m^ = m/(1-b1^t)`,
/// `g^ = g/(1-b1^t)`, `v^ = v/(1-b2^t)`,
/// `theta -= lr (b1 m^ + (1-b1) g^) / (sqrt(v^) + eps)`.
pub fn nadam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    opt: &OptimizerConfig,
) {
    let (b1, b2) = (opt.beta1, opt.beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let g_hat = g / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= opt.learning_rate * (b1 * m_hat + (1.0 - b1) * g_hat) / (v_hat.sqrt() + opt.epsilon);
    }
}

/// Mean categorical cross-entropy: `-(1/batch) sum log p[label]`, with the
/// probability clamped at 1e-12 before the log.
pub fn cross_entropy(probs: &DenseMatrix, labels: &DenseMatrix) -> f64 {
    let batch = probs.cols();
    let mut loss = 0.0;
    for i in 0..probs.rows() {
        let (p, y) = (probs.row(i), labels.row(i));
        for b in 0..batch {
            if y[b] > 0.0 {
                loss -= y[b] * p[b].max(PROB_FLOOR).ln();
            }
        }
    }
    loss / batch as f64
}

fn add_bias(y: &mut DenseMatrix, bias: &[f64]) {
    for (i, &b) in bias.iter().enumerate() {
        for v in y.row_mut(i) {
            *v += b;
        }
    }
}

/// Column-wise softmax with max subtraction.
fn softmax_columns(logits: &DenseMatrix) -> DenseMatrix {
    let (rows, cols) = (logits.rows(), logits.cols());
    let mut out = DenseMatrix::zeros(rows, cols);
    for b in 0..cols {
        let mut max = f64::NEG_INFINITY;
        for i in 0..rows {
            max = max.max(logits.get(i, b));
        }
        let mut sum = 0.0;
        for i in 0..rows {
            let e = (logits.get(i, b) - max).exp();
            out.set(i, b, e);
            sum += e;
        }
        for i in 0..rows {
            out.set(i, b, out.get(i, b) / sum);
        }
    }
    out
}

impl Gradients {
    /// Flat view aligned with `Model::param_vector`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (v, b) in &self.sparse {
            out.extend_from_slice(v);
            out.extend_from_slice(b);
        }
        out.extend_from_slice(self.dense_weights.data());
        out.extend_from_slice(&self.dense_bias);
        out
    }
}
