//! The two network architectures.
//!
//! * **Detector** — a plain DnCNN-style stack: `depth` 3x3 convolutions,
//!   ReLU between them, sigmoid head. Input is a `[n, 1, h, w]` image in
//!   `[0, 1]`; output is a same-shaped map of per-pixel noise
//!   probabilities.
//!
//! * **DRUnet** — a U-shaped restoration network. The encoder halves the
//!   spatial size and doubles the channel count at each of `scales - 1`
//!   strided 3x3 convolutions, each followed by `res_blocks` residual
//!   blocks; the decoder mirrors it with 2x2 transposed convolutions.
//!   Every strided/transposed pair is skip-connected by element-wise
//!   addition. A plain 3x3 conv enters (1 -> c0) and leaves (c0 -> 1) the
//!   network. Downsampling convs use 3x3 stride 2 pad 1 (h -> h/2);
//!   upsampling uses kernel 2 stride 2 pad 0, whose output size
//!   `(h-1)*2 + 2` doubles exactly.
//!
//! No normalization layers anywhere; biases everywhere. Nonlinearities
//! live only inside residual blocks (`x + conv2(relu(conv1(x)))`) and the
//! detector stack.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, Tensor};

/// Architecture description. Parameter names, shapes and initialization
/// are a deterministic function of this value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkSpec {
    /// Plain conv stack: `depth` convolutions, `width` channels inside.
    Detector {
        depth: usize,
        width: usize,
        seed: u64,
    },
    /// U-shaped restorer: `base_channels` at full resolution, `scales`
    /// resolution levels, `res_blocks` residual blocks per level.
    Drunet {
        base_channels: usize,
        scales: usize,
        res_blocks: usize,
        seed: u64,
    },
}

impl NetworkSpec {
    pub fn detector(depth: usize, width: usize, seed: u64) -> Self {
        NetworkSpec::Detector { depth, width, seed }
    }

    pub fn drunet(base_channels: usize, scales: usize, res_blocks: usize, seed: u64) -> Self {
        NetworkSpec::Drunet {
            base_channels,
            scales,
            res_blocks,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NetworkSpec::Detector { depth, width, .. } => {
                if depth < 2 {
                    return Err(Error::Config(format!(
                        "detector depth must be >= 2, got {depth}"
                    )));
                }
                if width < 1 {
                    return Err(Error::Config("detector width must be >= 1".into()));
                }
            }
            NetworkSpec::Drunet {
                base_channels,
                scales,
                res_blocks,
                ..
            } => {
                if scales < 2 {
                    return Err(Error::Config(format!(
                        "drunet scales must be >= 2, got {scales}"
                    )));
                }
                if res_blocks < 1 {
                    return Err(Error::Config(format!(
                        "drunet res_blocks must be >= 1, got {res_blocks}"
                    )));
                }
                if base_channels < 1 {
                    return Err(Error::Config("drunet base_channels must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NetworkSpec::Detector { .. } => "detector",
            NetworkSpec::Drunet { .. } => "drunet",
        }
    }

    pub fn seed(&self) -> u64 {
        match *self {
            NetworkSpec::Detector { seed, .. } => seed,
            NetworkSpec::Drunet { seed, .. } => seed,
        }
    }

    /// Spatial sizes must be divisible by this (1 for the detector).
    pub fn divisor(&self) -> usize {
        match *self {
            NetworkSpec::Detector { .. } => 1,
            NetworkSpec::Drunet { scales, .. } => 1 << (scales - 1),
        }
    }

    /// Channel widths per resolution level, `c0 * 2^s`.
    pub fn channel_schedule(&self) -> Vec<usize> {
        match *self {
            NetworkSpec::Detector { .. } => vec![],
            NetworkSpec::Drunet {
                base_channels,
                scales,
                ..
            } => (0..scales).map(|s| base_channels << s).collect(),
        }
    }

    /// Total learnable parameters, from the layer arithmetic (not by
    /// summing allocated shapes).
    ///
    /// Detector, depth `d`, width `c`: the entry conv holds `9c + c`, each
    /// of the `d - 2` middle convs `9c^2 + c`, the exit conv `9c + 1`:
    /// `(d-2)(9c^2 + c) + 19c + 1` once the entry/exit terms are collected.
    ///
    /// DRUnet with channel schedule `c_s = c0 * 2^s`: head `9*c0 + c0`,
    /// tail `9*c0 + 1`, each residual block at width `c` holds
    /// `2*(9c^2 + c)`, each downsampler `9*c_{s-1}*c_s + c_s`, each
    /// upsampler `4*c_s*c_{s-1} + c_{s-1}`. Residual blocks appear `r`
    /// times per encoder level (all `s` levels) and `r` times per decoder
    /// level (`s - 1` levels).
    pub fn param_count(&self) -> usize {
        match *self {
            NetworkSpec::Detector {
                depth, width: c, ..
            } => (depth - 2) * (9 * c * c + c) + 19 * c + 1,
            NetworkSpec::Drunet {
                base_channels,
                scales,
                res_blocks,
                ..
            } => {
                let widths = self.channel_schedule();
                let c0 = base_channels;
                let res = |c: usize| 2 * (9 * c * c + c);
                let mut total = 9 * c0 + c0 + 9 * c0 + 1; // head + tail
                for (s, &c) in widths.iter().enumerate() {
                    total += res_blocks * res(c); // encoder blocks
                    if s + 1 < scales {
                        total += res_blocks * res(c); // decoder blocks
                    }
                    if s > 0 {
                        let prev = widths[s - 1];
                        total += 9 * prev * c + c; // down
                        total += 4 * c * prev + prev; // up
                    }
                }
                total
            }
        }
    }
}

/// Ordered, named parameter tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> NetworkState<T> {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::Config(
                "network state names and tensors differ in length".into(),
            ));
        }
        Ok(NetworkState { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.tensors[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> NetworkState<U> {
        NetworkState {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// One entry of the canonical parameter schedule. `fan_in == 0` marks a
/// bias (zero-initialized).
#[derive(Debug, Clone)]
pub struct ParamDef {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

/// The canonical parameter schedule of a spec: names, shapes, fan-in, in
/// the exact order `forward` consumes them.
pub fn param_defs(spec: &NetworkSpec) -> Vec<ParamDef> {
    fn conv(defs: &mut Vec<ParamDef>, name: &str, cout: usize, cin: usize, k: usize) {
        defs.push(ParamDef {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, k, k],
            fan_in: cin * k * k,
        });
        defs.push(ParamDef {
            name: format!("{name}.bias"),
            shape: vec![cout],
            fan_in: 0,
        });
    }
    let mut defs = Vec::new();
    match *spec {
        NetworkSpec::Detector { depth, width, .. } => {
            for i in 0..depth {
                let cin = if i == 0 { 1 } else { width };
                let cout = if i + 1 == depth { 1 } else { width };
                conv(&mut defs, &format!("conv{i}"), cout, cin, 3);
            }
        }
        NetworkSpec::Drunet {
            scales, res_blocks, ..
        } => {
            let widths = spec.channel_schedule();
            conv(&mut defs, "head", widths[0], 1, 3);
            for s in 0..scales {
                if s > 0 {
                    conv(&mut defs, &format!("down{s}"), widths[s], widths[s - 1], 3);
                }
                for r in 0..res_blocks {
                    conv(
                        &mut defs,
                        &format!("enc{s}.res{r}.conv1"),
                        widths[s],
                        widths[s],
                        3,
                    );
                    conv(
                        &mut defs,
                        &format!("enc{s}.res{r}.conv2"),
                        widths[s],
                        widths[s],
                        3,
                    );
                }
            }
            for s in (1..scales).rev() {
                // Transposed-conv kernel layout is [c_in, c_out, k, k]; the
                // scatter mixes c_in * k * k input contributions.
                defs.push(ParamDef {
                    name: format!("up{s}.weight"),
                    shape: vec![widths[s], widths[s - 1], 2, 2],
                    fan_in: widths[s] * 4,
                });
                defs.push(ParamDef {
                    name: format!("up{s}.bias"),
                    shape: vec![widths[s - 1]],
                    fan_in: 0,
                });
                for r in 0..res_blocks {
                    let c = widths[s - 1];
                    conv(&mut defs, &format!("dec{}.res{r}.conv1", s - 1), c, c, 3);
                    conv(&mut defs, &format!("dec{}.res{r}.conv2", s - 1), c, c, 3);
                }
            }
            conv(&mut defs, "tail", 1, widths[0], 3);
        }
    }
    defs
}

/// Fresh parameters: kernels drawn from a fan-in-scaled uniform, biases
/// zero, deterministic under the spec's seed. Every kernel stays inside
/// the `±sqrt(6/fan_in)` envelope.
///
/// The scale differs per architecture, each the standard choice for its
/// layer pattern: the detector's conv+ReLU stack uses the ReLU-preserving
/// `U(±sqrt(6/fan_in))`, while the DRUnet uses the tighter
/// `U(±1/sqrt(fan_in))` because its downsampling/upsampling convolutions
/// carry no activation and would compound variance at every scale under
/// the wider draw.
pub fn init_params<T: Scalar>(spec: &NetworkSpec) -> NetworkState<T> {
    let mut rng = SplitMix64::new(spec.seed());
    let gain = match spec {
        NetworkSpec::Detector { .. } => 6f64.sqrt(),
        NetworkSpec::Drunet { .. } => 1.0,
    };
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for def in param_defs(spec) {
        let numel: usize = def.shape.iter().product();
        let tensor = if def.fan_in == 0 {
            Tensor::zeros(&def.shape)
        } else {
            let bound = gain / (def.fan_in as f64).sqrt();
            let data = (0..numel)
                .map(|_| T::from_f64(rng.next_range(-bound, bound)))
                .collect();
            Tensor::new(def.shape.clone(), data).expect("schedule shapes are valid")
        };
        names.push(def.name);
        tensors.push(tensor);
    }
    NetworkState { names, tensors }
}

/// Load parameters onto a graph with gradient tracking; node order matches
/// the state order.
pub fn load_params<T: Scalar>(g: &mut Graph<T>, state: &NetworkState<T>) -> Vec<NodeId> {
    state.tensors().iter().map(|t| g.param(t.clone())).collect()
}

/// Load parameters as constants (inference: no gradients tracked).
pub fn load_consts<T: Scalar>(g: &mut Graph<T>, state: &NetworkState<T>) -> Vec<NodeId> {
    state.tensors().iter().map(|t| g.leaf(t.clone())).collect()
}

/// Walks a parameter-node list in schedule order.
struct Cursor<'a> {
    params: &'a [NodeId],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(params: &'a [NodeId]) -> Self {
        Cursor { params, pos: 0 }
    }

    fn pair(&mut self) -> Result<(NodeId, NodeId)> {
        if self.pos + 2 > self.params.len() {
            return Err(Error::Config(
                "network state has fewer parameters than the spec requires".into(),
            ));
        }
        let w = self.params[self.pos];
        let b = self.params[self.pos + 1];
        self.pos += 2;
        Ok((w, b))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.params.len() {
            return Err(Error::Config(format!(
                "network state has {} extra parameters beyond the spec",
                self.params.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// `input + conv2(relu(conv1(input)))`, all convs 3x3 stride 1 pad 1.
pub fn residual_block<T: Scalar>(
    g: &mut Graph<T>,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
    input: NodeId,
) -> Result<NodeId> {
    let c1 = g.conv2d(input, w1, b1, 1, 1)?;
    let r = g.relu(c1);
    let c2 = g.conv2d(r, w2, b2, 1, 1)?;
    g.add(input, c2)
}

/// Forward pass for either architecture; `params` in schedule order.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    params: &[NodeId],
    input: NodeId,
) -> Result<NodeId> {
    match spec {
        NetworkSpec::Detector { .. } => detector_forward(g, spec, params, input),
        NetworkSpec::Drunet { .. } => drunet_forward(g, spec, params, input),
    }
}

/// Detector stack: per-pixel noise probabilities in (0, 1), same shape as
/// the input.
pub fn detector_forward<T: Scalar>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    params: &[NodeId],
    input: NodeId,
) -> Result<NodeId> {
    let NetworkSpec::Detector { depth, .. } = *spec else {
        return Err(Error::Config(
            "detector_forward needs a detector spec".into(),
        ));
    };
    spec.validate()?;
    let (_, c, h, w) = g.value(input).dims4("detector_forward input")?;
    if c != 1 {
        return Err(Error::shape(
            "detector_forward",
            "a single-channel input",
            format!("{c} channels"),
        ));
    }
    let receptive = 2 * depth + 1;
    if h < receptive || w < receptive {
        return Err(Error::shape(
            "detector_forward",
            format!("input of at least {receptive}x{receptive} (the receptive field of {depth} 3x3 convs)"),
            format!("{h}x{w}"),
        ));
    }

    let mut cursor = Cursor::new(params);
    let mut x = input;
    for i in 0..depth {
        let (wgt, bias) = cursor.pair()?;
        x = g.conv2d(x, wgt, bias, 1, 1)?;
        if i + 1 < depth {
            x = g.relu(x);
        }
    }
    cursor.finish()?;
    Ok(g.sigmoid(x))
}

/// DRUnet forward: restored image, same shape as the input.
pub fn drunet_forward<T: Scalar>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    params: &[NodeId],
    input: NodeId,
) -> Result<NodeId> {
    let NetworkSpec::Drunet {
        scales, res_blocks, ..
    } = *spec
    else {
        return Err(Error::Config("drunet_forward needs a drunet spec".into()));
    };
    spec.validate()?;
    let (_, c, h, w) = g.value(input).dims4("drunet_forward input")?;
    if c != 1 {
        return Err(Error::shape(
            "drunet_forward",
            "a single-channel input",
            format!("{c} channels"),
        ));
    }
    let div = spec.divisor();
    if h % div != 0 || w % div != 0 {
        return Err(Error::shape(
            "drunet_forward",
            format!("spatial dims divisible by {div} (2^(scales-1) with scales = {scales})"),
            format!("{h}x{w}"),
        ));
    }

    let mut cursor = Cursor::new(params);

    let (head_w, head_b) = cursor.pair()?;
    let mut x = g.conv2d(input, head_w, head_b, 1, 1)?;

    // Encoder: remember the tensor entering each strided conv; it is added
    // back to the matching transposed conv's output on the way up.
    let mut skips: Vec<NodeId> = Vec::with_capacity(scales - 1);
    for s in 0..scales {
        if s > 0 {
            skips.push(x);
            let (dw, db) = cursor.pair()?;
            x = g.conv2d(x, dw, db, 2, 1)?;
        }
        for _ in 0..res_blocks {
            let (w1, b1) = cursor.pair()?;
            let (w2, b2) = cursor.pair()?;
            x = residual_block(g, w1, b1, w2, b2, x)?;
        }
    }

    // Decoder, mirrored.
    for _s in (1..scales).rev() {
        let (uw, ub) = cursor.pair()?;
        x = g.conv_transpose2d(x, uw, ub, 2, 0)?;
        let skip = skips.pop().expect("one skip per upsampling");
        x = g.add(x, skip)?;
        for _ in 0..res_blocks {
            let (w1, b1) = cursor.pair()?;
            let (w2, b2) = cursor.pair()?;
            x = residual_block(g, w1, b1, w2, b2, x)?;
        }
    }

    let (tail_w, tail_b) = cursor.pair()?;
    let out = g.conv2d(x, tail_w, tail_b, 1, 1)?;
    cursor.finish()?;
    Ok(out)
}

/// Convenience: run a network over a plain tensor without tracking
/// gradients.
pub fn forward_inference<T: Scalar>(
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.leaf(input.clone());
    let ids = load_consts(&mut g, state);
    let y = forward(&mut g, spec, &ids, x)?;
    Ok(g.value(y).clone())
}
