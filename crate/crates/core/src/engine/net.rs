use serde::{Deserialize, Serialize};

use super::optim::{poly_lr, Adam, AdamConfig};
use super::DiscreteArchitecture;
use crate::adcore::{Tape, Tensor, Var};
use crate::archspace::{ConvRef, SpaceConfig, SuperNet};
use crate::bench::{mean_iou, Dataset, Split};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Standalone network for one discrete architecture. Convolutions carry
/// exactly the selected channel counts; a second convolution narrower than
/// the stage width adds into the leading channels of the residual stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteNet {
    pub arch: DiscreteArchitecture,
    pub config: SpaceConfig,
    pub params: Vec<Tensor>,
    stem: ConvRef,
    transitions: Vec<ConvRef>,
    layers: Vec<Vec<[ConvRef; 2]>>,
    head: ConvRef,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub poly_power: f64,
    pub seed: u64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        RetrainConfig {
            epochs: 60,
            batch_size: 16,
            optimizer: AdamConfig::new(0.01, 0.0001),
            poly_power: 0.9,
            seed: 0,
        }
    }
}

impl RetrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("retrain.batch_size", "must be > 0"));
        }
        self.optimizer.validate("retrain.optimizer")
    }
}

struct Layout {
    shapes: Vec<Vec<usize>>,
}

impl Layout {
    fn conv(&mut self, c_out: usize, c_in: usize, k: usize) -> ConvRef {
        self.shapes.push(vec![c_out, c_in, k]);
        self.shapes.push(vec![c_out]);
        ConvRef {
            weight: self.shapes.len() - 2,
            bias: self.shapes.len() - 1,
        }
    }
}

impl DiscreteNet {
    fn skeleton(
        config: &SpaceConfig,
        arch: &DiscreteArchitecture,
    ) -> Result<(Self, Vec<Vec<usize>>)> {
        arch.validate(config)?;
        let k = config.kernel;
        let mut lay = Layout { shapes: Vec::new() };
        let stem = lay.conv(config.stages[0].width, config.in_channels, k);
        let mut transitions = Vec::new();
        let mut layers = Vec::new();
        for (s, (st, spec)) in arch.stages.iter().zip(&config.stages).enumerate() {
            if s > 0 {
                transitions.push(lay.conv(spec.width, config.stages[s - 1].width, 1));
            }
            layers.push(
                st.layers
                    .iter()
                    .map(|l| {
                        let a = lay.conv(l.channels[0], spec.width, k);
                        let b = lay.conv(l.channels[1], l.channels[0], k);
                        [a, b]
                    })
                    .collect(),
            );
        }
        let head = lay.conv(
            config.classes,
            config.stages.last().expect("stage").width,
            1,
        );
        let net = DiscreteNet {
            arch: arch.clone(),
            config: config.clone(),
            params: Vec::new(),
            stem,
            transitions,
            layers,
            head,
        };
        Ok((net, lay.shapes))
    }

    /// Fresh network with `U(±1/√fan_in)` weights and biases.
    pub fn new(config: &SpaceConfig, arch: &DiscreteArchitecture, seed: u64) -> Result<Self> {
        let (mut net, shapes) = Self::skeleton(config, arch)?;
        let mut rng = SeededRng::new(seed);
        let mut fan_in = 1;
        for shape in shapes {
            if shape.len() == 3 {
                fan_in = shape[1] * shape[2];
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = shape.iter().product();
            let values = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
            net.params.push(Tensor::new(shape, values)?);
        }
        Ok(net)
    }

    /// Copies the weights `arch` uses out of a supernet, sliced to the
    /// selected channel counts.
    pub fn from_supernet(net: &SuperNet, arch: &DiscreteArchitecture) -> Result<Self> {
        let (mut out, shapes) = Self::skeleton(&net.config, arch)?;
        let mut src: Vec<usize> = vec![net.stem.weight, net.stem.bias];
        for (s, st) in arch.stages.iter().enumerate() {
            if s > 0 {
                let t = net.transitions[s - 1];
                src.extend([t.weight, t.bias]);
            }
            for (l, layer) in st.layers.iter().enumerate() {
                let op = net
                    .config
                    .op_index(layer.dilation, layer.spatial)
                    .expect("validated");
                for c in net.stages[s][l].ops[op].convs {
                    src.extend([c.weight, c.bias]);
                }
            }
        }
        src.extend([net.head.weight, net.head.bias]);
        for (shape, &from) in shapes.into_iter().zip(&src) {
            out.params.push(slice_prefix(&net.params[from], &shape)?);
        }
        Ok(out)
    }

    pub fn attach(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], batch: Var) -> Result<Var> {
        let conv = |tape: &mut Tape, x: Var, c: ConvRef, d: usize| {
            tape.conv1d(x, params[c.weight], params[c.bias], d)
        };
        let h0 = conv(tape, batch, self.stem, 1)?;
        let mut h = tape.relu(h0)?;
        for (s, st) in self.arch.stages.iter().enumerate() {
            if s > 0 {
                h = conv(tape, h, self.transitions[s - 1], 1)?;
            }
            let width = self.config.stages[s].width;
            for (layer, convs) in st.layers.iter().zip(&self.layers[s]) {
                let mut y = if layer.spatial > 1 {
                    tape.avg_pool(h, layer.spatial)?
                } else {
                    h
                };
                y = conv(tape, y, convs[0], layer.dilation)?;
                y = tape.relu(y)?;
                y = conv(tape, y, convs[1], layer.dilation)?;
                if layer.channels[1] < width {
                    y = tape.pad_channels(y, width)?;
                }
                if layer.spatial > 1 {
                    y = tape.upsample(y, layer.spatial)?;
                }
                h = tape.add(h, y)?;
            }
        }
        conv(tape, h, self.head, 1)
    }

    /// Per-position argmax class over a whole split.
    pub fn predict(&self, split: &Split) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(split.n * split.length);
        let idx: Vec<usize> = (0..split.n).collect();
        for chunk in idx.chunks(64) {
            let (x, _) = split.batch(chunk);
            let mut tape = Tape::new();
            let params: Vec<Var> = self
                .params
                .iter()
                .map(|p| tape.constant(p.clone()))
                .collect();
            let xb = tape.constant(x);
            let logits = self.forward(&mut tape, &params, xb)?;
            out.extend(argmax_classes(tape.value(logits)));
        }
        Ok(out)
    }

    pub fn evaluate(&self, split: &Split) -> Result<f64> {
        Ok(mean_iou(
            &self.predict(split)?,
            &split.labels,
            self.config.classes,
        ))
    }

    /// Trains all weights with Adam and poly decay on `split`.
    pub fn train(&mut self, split: &Split, cfg: &RetrainConfig) -> Result<()> {
        let mut opt = Adam::new(cfg.optimizer, self.params.iter().map(Tensor::len));
        let mut rng = SeededRng::derive(cfg.seed, 1);
        let steps_per_epoch = split.n.div_ceil(cfg.batch_size);
        let total = cfg.epochs * steps_per_epoch;
        let mut step = 0;
        for epoch in 0..cfg.epochs {
            for batch in split.epoch_batches(cfg.batch_size, &mut rng) {
                let (x, y) = split.batch(&batch);
                let mut tape = Tape::new();
                let params = self.attach(&mut tape);
                let xb = tape.constant(x);
                let logits = self.forward(&mut tape, &params, xb)?;
                let loss = tape.cross_entropy(logits, y)?;
                if !tape.value(loss).item().is_finite() {
                    return Err(Error::NonFinite {
                        what: "retrain loss",
                        epoch,
                        step,
                    });
                }
                tape.backward(loss)?;
                let lr = poly_lr(cfg.optimizer.lr, step, total, cfg.poly_power);
                for (i, &v) in params.iter().enumerate() {
                    if let Some(g) = tape.grad(v) {
                        opt.step(i, self.params[i].values_mut(), g, lr, None);
                    }
                }
                step += 1;
            }
        }
        Ok(())
    }
}

fn slice_prefix(t: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let src = t.shape();
    let values = match (src, shape) {
        ([_], [n]) => t.values()[..*n].to_vec(),
        ([_, si, sk], [o, i, k]) if sk == k => {
            let mut v = Vec::with_capacity(o * i * k);
            for oo in 0..*o {
                for ii in 0..*i {
                    v.extend_from_slice(&t.values()[(oo * si + ii) * sk..][..*k]);
                }
            }
            v
        }
        _ => {
            return Err(Error::InvalidArchitecture(format!(
                "cannot slice parameter {src:?} to {shape:?}"
            )))
        }
    };
    Tensor::new(shape.to_vec(), values)
}

/// Argmax over the class axis of `(B, K, L)` logits, batch-major.
fn argmax_classes(logits: &Tensor) -> Vec<usize> {
    let [b, k, l] = *logits.shape() else {
        panic!("logits must be (B, K, L)")
    };
    let v = logits.values();
    let mut out = Vec::with_capacity(b * l);
    for bi in 0..b {
        for li in 0..l {
            let mut best = 0;
            for c in 1..k {
                if v[(bi * k + c) * l + li] > v[(bi * k + best) * l + li] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    out
}

/// Trains `arch` from scratch on the train split and returns the network
/// with its mean IoU on the val split.
pub fn retrain(
    arch: &DiscreteArchitecture,
    space: &SpaceConfig,
    data: &Dataset,
    cfg: &RetrainConfig,
) -> Result<(DiscreteNet, f64)> {
    cfg.validate()?;
    let mut net = DiscreteNet::new(space, arch, cfg.seed)?;
    net.train(&data.train, cfg)?;
    let metric = net.evaluate(&data.val)?;
    Ok((net, metric))
}
