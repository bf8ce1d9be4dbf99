use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use qcnet_tensor::{BnMode, Graph, RunningStats, Tensor, Var, BN_EPS, BN_MOMENTUM};

use super::{ModelConfig, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; the model is not modified.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    HeNormal { fan_in: usize },
    Zeros,
    Ones,
}

/// Name and shape of one trainable tensor, derived from the config alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    tensor: Tensor<f32>,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        self.tensor.data_mut()
    }
}

/// Running statistics of one batch-norm layer. Serialized as
/// `<name>.running_mean` and `<name>.running_var`.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBuffer {
    pub name: String,
    pub stats: RunningStats<f32>,
}

#[derive(Debug, Clone, Copy)]
struct ConvIx {
    weight: usize,
    bias: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone, Copy)]
struct BnIx {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    stem: ConvIx,
    blocks: Vec<Vec<(BnIx, ConvIx)>>,
    transitions: Vec<(BnIx, ConvIx)>,
    final_bn: BnIx,
    classifier: (usize, usize),
}

pub(super) struct Plan {
    pub specs: Vec<ParamSpec>,
    /// (layer name, channels) per batch-norm layer
    pub bn: Vec<(String, usize)>,
    layout: Layout,
}

impl Plan {
    pub fn new(config: &ModelConfig) -> Result<Self, ModelError> {
        config.trace()?;
        let mut specs = Vec::new();
        let mut bn = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, init| {
            specs.push(ParamSpec { name, shape, init });
            specs.len() - 1
        };
        let conv = |add: &mut dyn FnMut(String, Vec<usize>, Init) -> usize,
                        prefix: &str,
                        cin: usize,
                        cout: usize,
                        k: usize,
                        stride: usize| {
            let weight = add(format!("{prefix}.conv.weight"), vec![cout, cin, k, k, k], Init::HeNormal {
                fan_in: cin * k * k * k,
            });
            let bias = add(format!("{prefix}.conv.bias"), vec![cout], Init::Zeros);
            ConvIx { weight, bias, stride, pad: k / 2 }
        };
        let mut norm = |add: &mut dyn FnMut(String, Vec<usize>, Init) -> usize, prefix: &str, c: usize| {
            let name = format!("{prefix}.bn");
            let gamma = add(format!("{name}.gamma"), vec![c], Init::Ones);
            let beta = add(format!("{name}.beta"), vec![c], Init::Zeros);
            bn.push((name, c));
            BnIx { gamma, beta, stats: bn.len() - 1 }
        };

        let stem = conv(&mut add, "stem", 1, config.stem_channels, 3, config.stem_stride);
        let mut c = config.stem_channels;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for b in 1..=config.num_dense_blocks {
            let mut layers = Vec::new();
            for l in 1..=config.layers_per_block {
                let prefix = format!("block{b}.layer{l}");
                let n = norm(&mut add, &prefix, c);
                let cv = conv(&mut add, &prefix, c, config.growth_rate, 3, 1);
                layers.push((n, cv));
                c += config.growth_rate;
            }
            blocks.push(layers);
            if b < config.num_dense_blocks {
                let prefix = format!("transition{b}");
                let out = config.compressed(c);
                let n = norm(&mut add, &prefix, c);
                let cv = conv(&mut add, &prefix, c, out, 1, 1);
                transitions.push((n, cv));
                c = out;
            }
        }
        let final_bn = norm(&mut add, "final", c);
        let weight = add("classifier.weight".into(), vec![c, config.num_classes], Init::HeNormal { fan_in: c });
        let bias = add("classifier.bias".into(), vec![config.num_classes], Init::Zeros);
        Ok(Self { specs, bn, layout: Layout { stem, blocks, transitions, final_bn, classifier: (weight, bias) } })
    }
}

/// The classifier: parameters in a fixed order plus batch-norm running
/// statistics.
///
/// Parameter order is the order of the layers: `stem.conv.{weight,bias}`;
/// per dense layer `block{b}.layer{l}.bn.{gamma,beta}` then
/// `block{b}.layer{l}.conv.{weight,bias}`; per transition the same under
/// `transition{b}`; `final.bn.{gamma,beta}`; `classifier.{weight,bias}`.
/// Conv weights are `[out, in, k, k, k]`, the classifier weight `[in, classes]`.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
    buffers: Vec<BnBuffer>,
    layout: Layout,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params && self.buffers == other.buffers
    }
}

/// Builds a freshly initialized model: He-normal (fan-in) conv and dense
/// weights, zero biases and betas, unit gammas, all drawn from `config.seed`.
pub fn build_model(config: &ModelConfig) -> Result<Model, ModelError> {
    let plan = Plan::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Vec::with_capacity(plan.specs.len());
    for spec in &plan.specs {
        let data = match spec.init {
            Init::Zeros => vec![0.0; spec.numel()],
            Init::Ones => vec![1.0; spec.numel()],
            Init::HeNormal { fan_in } => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                (0..spec.numel()).map(|_| normal.sample(&mut rng) as f32).collect()
            }
        };
        params.push(Param { name: spec.name.clone(), tensor: Tensor::new(&spec.shape, data)? });
    }
    let buffers = plan.bn.iter().map(|(name, c)| BnBuffer { name: name.clone(), stats: RunningStats::new(*c) }).collect();
    Ok(Model { config: config.clone(), params, buffers, layout: plan.layout })
}

enum Stats<'a> {
    Train(&'a mut [BnBuffer]),
    Eval(&'a [BnBuffer]),
}

/// Builds the forward graph and returns the parameter leaves and the logits.
fn forward_graph(
    layout: &Layout,
    params: &[Param],
    mut stats: Stats<'_>,
    g: &mut Graph<f32>,
    input: Var,
) -> Result<(Vec<Var>, Var), ModelError> {
    let train = matches!(stats, Stats::Train(_));
    let vars: Vec<Var> = params
        .iter()
        .map(|p| if train { g.leaf(p.tensor.clone()) } else { g.constant(p.tensor.clone()) })
        .collect();
    let eps = BN_EPS as f32;

    let mut bn_relu = |g: &mut Graph<f32>, x: Var, ix: BnIx| -> Result<Var, ModelError> {
        let mode = match &mut stats {
            Stats::Train(b) => BnMode::Train { stats: &mut b[ix.stats].stats, momentum: BN_MOMENTUM as f32 },
            Stats::Eval(b) => BnMode::Eval { stats: &b[ix.stats].stats },
        };
        let y = g.batchnorm3d(x, vars[ix.gamma], vars[ix.beta], mode, eps)?;
        Ok(g.relu(y)?)
    };
    let conv = |g: &mut Graph<f32>, x: Var, ix: ConvIx| g.conv3d(x, vars[ix.weight], vars[ix.bias], ix.stride, ix.pad);

    let mut x = conv(g, input, layout.stem)?;
    for (b, layers) in layout.blocks.iter().enumerate() {
        for &(n, c) in layers {
            let h = bn_relu(g, x, n)?;
            let h = conv(g, h, c)?;
            x = g.concat_channels(x, h)?;
        }
        if let Some(&(n, c)) = layout.transitions.get(b) {
            let h = bn_relu(g, x, n)?;
            let h = conv(g, h, c)?;
            x = g.avgpool3d(h, 2, 2)?;
        }
    }
    let h = bn_relu(g, x, layout.final_bn)?;
    let pooled = g.global_avg_pool(h)?;
    let logits = g.dense(pooled, vars[layout.classifier.0], vars[layout.classifier.1])?;
    Ok((vars, logits))
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Mutable parameter access for optimizers. Shapes cannot change.
    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[BnBuffer] {
        &self.buffers
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Expected parameter specs for `config`, computed without allocating tensors.
    pub fn param_specs(config: &ModelConfig) -> Result<Vec<ParamSpec>, ModelError> {
        Ok(Plan::new(config)?.specs)
    }

    /// Reassembles a model from already-validated parts (see checkpoint decoding).
    pub(super) fn from_parts(config: ModelConfig, plan: Plan, params: Vec<Param>, buffers: Vec<BnBuffer>) -> Self {
        Self { config, params, buffers, layout: plan.layout }
    }

    pub(super) fn param(name: String, tensor: Tensor<f32>) -> Param {
        Param { name, tensor }
    }

    fn check_batch(&self, batch: &Tensor<f32>) -> Result<(), ModelError> {
        let [tx, ty, tz] = self.config.input_dims;
        let s = batch.shape();
        if s.len() != 5 || s[1] != 1 || s[2..] != [tz, ty, tx] {
            return Err(ModelError::ShapeMismatch(format!("batch {s:?}, model expects [N, 1, {tz}, {ty}, {tx}]")));
        }
        Ok(())
    }

    /// Class probabilities `[N, classes]`. Train mode normalizes with batch
    /// statistics and updates the running statistics; eval mode is pure.
    pub fn forward(&mut self, batch: &Tensor<f32>, mode: Mode) -> Result<Tensor<f32>, ModelError> {
        match mode {
            Mode::Eval => self.predict(batch),
            Mode::Train => {
                self.check_batch(batch)?;
                let mut g = Graph::new();
                let input = g.constant(batch.clone());
                let (_, logits) =
                    forward_graph(&self.layout, &self.params, Stats::Train(&mut self.buffers), &mut g, input)?;
                let probs = g.softmax(logits)?;
                Ok(g.value(probs).clone())
            }
        }
    }

    /// Eval-mode class probabilities.
    pub fn predict(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let input = g.constant(batch.clone());
        let (_, logits) = forward_graph(&self.layout, &self.params, Stats::Eval(&self.buffers), &mut g, input)?;
        let probs = g.softmax(logits)?;
        Ok(g.value(probs).clone())
    }

    /// Train-mode mean cross-entropy and its gradient for every parameter,
    /// in parameter order. Running statistics are updated.
    pub fn loss_and_grads(&mut self, batch: &Tensor<f32>, targets: &[usize]) -> Result<(f64, Vec<Vec<f32>>), ModelError> {
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let input = g.constant(batch.clone());
        let (vars, logits) =
            forward_graph(&self.layout, &self.params, Stats::Train(&mut self.buffers), &mut g, input)?;
        let loss = g.softmax_cross_entropy(logits, targets)?;
        g.backward(loss)?;
        let value = g.value(loss).data()[0] as f64;
        let grads = vars
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| g.take_grad(v).unwrap_or_else(|| vec![0.0; p.tensor.len()]))
            .collect();
        Ok((value, grads))
    }

    /// Train-mode loss without touching the running statistics.
    pub fn train_loss(&self, batch: &Tensor<f32>, targets: &[usize]) -> Result<f64, ModelError> {
        self.clone().loss_and_grads(batch, targets).map(|(l, _)| l)
    }
}
