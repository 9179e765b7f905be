use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, NodeId, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Topology of the encoder-decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MicroNetConfig {
    pub in_channels: usize,
    /// Number of pooling steps.
    pub depth: usize,
    /// Channel width at full resolution; doubles per level.
    pub base_width: usize,
    pub use_se: bool,
    pub use_attention_gates: bool,
    pub use_nested_skips: bool,
}

impl Default for MicroNetConfig {
    fn default() -> Self {
        MicroNetConfig {
            in_channels: 3,
            depth: 2,
            base_width: 8,
            use_se: false,
            use_attention_gates: false,
            use_nested_skips: false,
        }
    }
}

/// Named topology presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Unet,
    Se,
    Nested,
    Attention,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Unet, Arch::Se, Arch::Attention, Arch::Nested];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Unet => "unet",
            Arch::Se => "se",
            Arch::Nested => "nested",
            Arch::Attention => "attention",
        }
    }

    pub fn parse(s: &str) -> Result<Arch> {
        match s {
            "unet" => Ok(Arch::Unet),
            "se" => Ok(Arch::Se),
            "nested" => Ok(Arch::Nested),
            "attention" => Ok(Arch::Attention),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

impl MicroNetConfig {
    pub fn for_arch(arch: Arch, in_channels: usize) -> Self {
        MicroNetConfig {
            in_channels,
            use_se: arch == Arch::Se,
            use_attention_gates: arch == Arch::Attention,
            use_nested_skips: arch == Arch::Nested,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_width == 0 || self.in_channels == 0 {
            return Err(Error::Config(
                "depth, base_width and in_channels must all be at least 1".into(),
            ));
        }
        if self.depth > 8 {
            return Err(Error::Config(format!("depth {} is too large", self.depth)));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Inputs must have spatial dims divisible by this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }
}

fn se_hidden(c: usize) -> usize {
    (c / 4).max(1)
}

fn gate_hidden(c: usize) -> usize {
    (c / 2).max(1)
}

fn conv_count(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
    cin * cout * k * k * k + if bias { cout } else { 0 }
}

fn block_count(cin: usize, cout: usize, se: bool) -> usize {
    let mut n = conv_count(cin, cout, 3, true) + conv_count(cout, cout, 3, true);
    if se {
        let r = se_hidden(cout);
        n += conv_count(cout, r, 1, true) + conv_count(r, cout, 1, true);
    }
    n
}

fn gate_count(skip: usize, gating: usize) -> usize {
    let f = gate_hidden(skip);
    conv_count(skip, f, 1, false) + conv_count(gating, f, 1, true) + conv_count(f, 1, 1, true)
}

/// Closed-form number of scalar parameters for `config`.
///
/// With `w_l = base_width · 2^l` and `D = depth`:
/// encoder blocks `in→w_0` and `w_{l-1}→w_l` for `l = 1..=D`; decoder nodes
/// at level `i` and column `j` take `j·w_i + w_{i+1}` channels (plain decoders
/// only have column 1 with `j = 1`); attention gates sit on every decoder
/// skip; the head is a biased 1×1×1 conv to one channel.
pub fn param_count(config: &MicroNetConfig) -> usize {
    let w = |l: usize| config.width(l);
    let mut n = block_count(config.in_channels, w(0), config.use_se);
    for l in 1..=config.depth {
        n += block_count(w(l - 1), w(l), config.use_se);
    }
    for (i, j) in decoder_nodes(config) {
        let skip = j * w(i);
        n += block_count(skip + w(i + 1), w(i), config.use_se);
        if config.use_attention_gates {
            n += gate_count(skip, w(i + 1));
        }
    }
    n + conv_count(w(0), 1, 1, true)
}

/// Decoder nodes `(level, column)` in evaluation order.
fn decoder_nodes(config: &MicroNetConfig) -> Vec<(usize, usize)> {
    let d = config.depth;
    if config.use_nested_skips {
        // Column-major order so every node's inputs already exist.
        let mut v = Vec::new();
        for j in 1..=d {
            for i in 0..=d - j {
                v.push((i, j));
            }
        }
        v
    } else {
        (0..d).rev().map(|i| (i, 1)).collect()
    }
}

#[derive(Debug, Clone)]
struct Conv {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: Conv,
    conv2: Conv,
    se: Option<(Conv, Conv)>,
}

#[derive(Debug, Clone)]
struct Gate {
    wx: Conv,
    wg: Conv,
    psi: Conv,
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Vec<Block>,
    decoder: Vec<((usize, usize), Block, Option<Gate>)>,
    head: Conv,
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, bias: bool) -> Conv {
        let fan_in = (cin * k * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let n = cin * cout * k * k * k;
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        let w = self.store.push(format!("{name}.w"), vec![cout, cin, k, k, k], data);
        let b = bias.then(|| self.store.push(format!("{name}.b"), vec![cout], vec![0.0; cout]));
        Conv { w, b }
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, se: bool) -> Block {
        let conv1 = self.conv(&format!("{name}.conv1"), cin, cout, 3, true);
        let conv2 = self.conv(&format!("{name}.conv2"), cout, cout, 3, true);
        let se = se.then(|| {
            let r = se_hidden(cout);
            (
                self.conv(&format!("{name}.se1"), cout, r, 1, true),
                self.conv(&format!("{name}.se2"), r, cout, 1, true),
            )
        });
        Block { conv1, conv2, se }
    }
}

/// A seeded network instance: topology, parameters, and the tape of the
/// most recent training forward pass.
#[derive(Debug, Clone)]
pub struct MicroNet {
    config: MicroNetConfig,
    params: ParamStore,
    layout: Layout,
    pending: Option<(Graph, NodeId)>,
}

impl MicroNet {
    /// He-uniform weights, zero biases, zero head (so the first output is
    /// 0.5 everywhere).
    pub fn new(config: MicroNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut b = Builder {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        let w = |l: usize| config.width(l);
        let mut encoder = vec![b.block("enc0", config.in_channels, w(0), config.use_se)];
        for l in 1..=config.depth {
            encoder.push(b.block(&format!("enc{l}"), w(l - 1), w(l), config.use_se));
        }
        let mut decoder = Vec::new();
        for (i, j) in decoder_nodes(&config) {
            let skip = j * w(i);
            let gate = config.use_attention_gates.then(|| {
                let f = gate_hidden(skip);
                Gate {
                    wx: b.conv(&format!("gate{i}_{j}.wx"), skip, f, 1, false),
                    wg: b.conv(&format!("gate{i}_{j}.wg"), w(i + 1), f, 1, true),
                    psi: b.conv(&format!("gate{i}_{j}.psi"), f, 1, 1, true),
                }
            });
            let block = b.block(&format!("dec{i}_{j}"), skip + w(i + 1), w(i), config.use_se);
            decoder.push(((i, j), block, gate));
        }
        let head = b.conv("head", w(0), 1, 1, true);
        let mut store = b.store;
        store.get_mut(head.w).data.fill(0.0);
        Ok(MicroNet {
            config,
            params: store,
            layout: Layout {
                encoder,
                decoder,
                head,
            },
            pending: None,
        })
    }

    /// Same topology with the given parameter values.
    pub fn with_params(config: MicroNetConfig, params: ParamStore) -> Result<Self> {
        let mut net = MicroNet::new(config, 0)?;
        if params.len() != net.params.len()
            || params.iter().zip(net.params.iter()).any(|(a, b)| a.shape != b.shape || a.name != b.name)
        {
            return Err(Error::Shape("parameter set does not match configuration".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &MicroNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable access; discards any recorded tape.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        self.pending = None;
        &mut self.params
    }

    fn conv(&self, g: &mut Graph, x: NodeId, c: &Conv) -> Result<NodeId> {
        g.conv(&self.params, x, c.w, c.b)
    }

    fn block(&self, g: &mut Graph, x: NodeId, b: &Block) -> Result<NodeId> {
        let h = self.conv(g, x, &b.conv1)?;
        let h = g.silu(h);
        let h = self.conv(g, h, &b.conv2)?;
        let h = g.silu(h);
        match &b.se {
            None => Ok(h),
            Some((fc1, fc2)) => {
                let s = g.global_avg(h);
                let s = self.conv(g, s, fc1)?;
                let s = g.silu(s);
                let s = self.conv(g, s, fc2)?;
                let s = g.sigmoid(s);
                g.scale_channels(h, s)
            }
        }
    }

    fn gate(&self, g: &mut Graph, skip: NodeId, gating: NodeId, gate: &Gate) -> Result<NodeId> {
        let a = self.conv(g, skip, &gate.wx)?;
        let b = self.conv(g, gating, &gate.wg)?;
        let h = g.add(a, b)?;
        let h = g.silu(h);
        let h = self.conv(g, h, &gate.psi)?;
        let alpha = g.sigmoid(h);
        g.scale_spatial(skip, alpha)
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.channels() != self.config.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {}",
                self.config.in_channels,
                input.channels()
            )));
        }
        let d = self.config.divisor();
        if input.spatial().iter().any(|&n| n == 0 || n % d != 0) {
            return Err(Error::Shape(format!(
                "spatial dims {:?} must be positive multiples of {d}",
                input.spatial()
            )));
        }
        Ok(())
    }

    fn build(&self, input: &Tensor) -> Result<(Graph, NodeId)> {
        self.check_input(input)?;
        let depth = self.config.depth;
        let mut g = Graph::new();
        let x = g.input(input.clone());
        // nodes[i][j] is the output at level i, column j.
        let mut nodes: Vec<Vec<NodeId>> = vec![Vec::new(); depth + 1];
        let mut h = x;
        for (l, block) in self.layout.encoder.iter().enumerate() {
            if l > 0 {
                h = g.avg_pool(h)?;
            }
            h = self.block(&mut g, h, block)?;
            nodes[l].push(h);
        }
        for ((i, j), block, gate) in &self.layout.decoder {
            let (i, j) = (*i, *j);
            let below = if self.config.use_nested_skips {
                nodes[i + 1][j - 1]
            } else {
                *nodes[i + 1].last().expect("level below is populated")
            };
            let up = g.upsample(below);
            let skips: Vec<NodeId> = if self.config.use_nested_skips {
                nodes[i][..j].to_vec()
            } else {
                vec![nodes[i][0]]
            };
            let mut skip = if skips.len() == 1 { skips[0] } else { g.concat(&skips)? };
            if let Some(gate) = gate {
                skip = self.gate(&mut g, skip, up, gate)?;
            }
            let cat = g.concat(&[skip, up])?;
            let out = self.block(&mut g, cat, block)?;
            nodes[i].push(out);
        }
        let top = *nodes[0].last().expect("top level is populated");
        let logits = self.conv(&mut g, top, &self.layout.head)?;
        let out = g.sigmoid(logits);
        Ok((g, out))
    }

    /// Probability map `[B, 1, X, Y, Z]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (g, out) = self.build(input)?;
        Ok(g.value(out).clone())
    }

    /// Like [`forward`](Self::forward) but keeps the tape for
    /// [`backward`](Self::backward).
    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let (g, out) = self.build(input)?;
        let value = g.value(out).clone();
        self.pending = Some((g, out));
        Ok(value)
    }

    /// Parameter gradients given the loss gradient w.r.t. the last
    /// `forward_train` output. Consumes the tape.
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<Gradients> {
        let (g, out) = self
            .pending
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward_train".into()))?;
        g.backward(&self.params, out, grad_output)
    }
}
