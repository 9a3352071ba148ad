//! Recorded-computation tape with reverse-mode accumulation.
//!
//! A [`Graph`] owns every tensor produced while building a computation.
//! Each op appends a node holding its output value plus enough structure to
//! run the backward sweep. [`Graph::backward`] walks the tape in reverse
//! from a scalar output and accumulates one gradient per gradient-tracked
//! node, shaped exactly like that node's value.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{ops, Tensor};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    },
    Relu {
        input: NodeId,
    },
    Sigmoid {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    MulScalar {
        input: NodeId,
        factor: T,
    },
    Square {
        input: NodeId,
    },
    Sum {
        input: NodeId,
    },
    Mean {
        input: NodeId,
    },
    ConcatChannels {
        a: NodeId,
        b: NodeId,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by [`NodeId`].
#[derive(Debug)]
pub struct GradStore<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for `id`, or zeros shaped like `shape` when the node does
    /// not influence the output.
    pub fn take_or_zeros(&mut self, id: NodeId, shape: &[usize]) -> Tensor<T> {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// The gradient tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a constant (input, target, …); no gradient is tracked for it.
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Insert a parameter whose gradient will be accumulated by `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let value = ops::conv2d(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            stride,
            padding,
        )?;
        let needs = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            needs,
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let value = ops::conv_transpose2d(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            stride,
            padding,
        )?;
        let needs = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = ops::relu(self.value(input));
        let needs = self.needs(input);
        self.push(value, Op::Relu { input }, needs)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let value = ops::sigmoid(self.value(input));
        let needs = self.needs(input);
        self.push(value, Op::Sigmoid { input }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::add(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::sub(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub { a, b }, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::mul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, needs))
    }

    pub fn mul_scalar(&mut self, input: NodeId, factor: T) -> NodeId {
        let value = ops::mul_scalar(self.value(input), factor);
        let needs = self.needs(input);
        self.push(value, Op::MulScalar { input, factor }, needs)
    }

    pub fn square(&mut self, input: NodeId) -> NodeId {
        let value = ops::square(self.value(input));
        let needs = self.needs(input);
        self.push(value, Op::Square { input }, needs)
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let value = ops::sum(self.value(input));
        let needs = self.needs(input);
        self.push(value, Op::Sum { input }, needs)
    }

    pub fn mean(&mut self, input: NodeId) -> NodeId {
        let value = ops::mean(self.value(input));
        let needs = self.needs(input);
        self.push(value, Op::Mean { input }, needs)
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::concat_channels(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatChannels { a, b }, needs))
    }

    /// Reverse sweep from a scalar output.
    ///
    /// Returns one gradient tensor per gradient-tracked node reachable from
    /// `output`, each shaped identically to the node's value.
    pub fn backward(&self, output: NodeId) -> Result<GradStore<T>> {
        let out_val = self.value(output);
        if out_val.numel() != 1 {
            return Err(Error::shape(
                "backward",
                "a scalar output (single element)",
                format!("{:?}", out_val.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(out_val.shape(), T::one()));

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let go = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(&node.op, &node.value, &go, &mut grads)?;
        }
        Ok(GradStore { grads })
    }

    fn propagate(
        &self,
        op: &Op<T>,
        value: &Tensor<T>,
        go: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let (_, _, in_h, in_w) = self.value(input).dims4("backward conv2d")?;
                let k = self.value(kernel).shape()[2];
                if self.needs(input) {
                    let gi = ops::conv2d_grad_input(
                        go,
                        self.value(kernel),
                        in_h,
                        in_w,
                        stride,
                        padding,
                    )?;
                    self.accumulate(grads, input, gi)?;
                }
                if self.needs(kernel) {
                    let gk = ops::conv2d_grad_kernel(self.value(input), go, k, stride, padding)?;
                    self.accumulate(grads, kernel, gk)?;
                }
                if self.needs(bias) {
                    let gb = ops::grad_bias(go)?;
                    self.accumulate(grads, bias, gb)?;
                }
            }
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let (_, _, in_h, in_w) = self.value(input).dims4("backward conv_transpose2d")?;
                let k = self.value(kernel).shape()[2];
                if self.needs(input) {
                    let gi = ops::conv_transpose2d_grad_input(
                        go,
                        self.value(kernel),
                        in_h,
                        in_w,
                        stride,
                        padding,
                    )?;
                    self.accumulate(grads, input, gi)?;
                }
                if self.needs(kernel) {
                    let gk = ops::conv_transpose2d_grad_kernel(
                        self.value(input),
                        go,
                        k,
                        stride,
                        padding,
                    )?;
                    self.accumulate(grads, kernel, gk)?;
                }
                if self.needs(bias) {
                    let gb = ops::grad_bias(go)?;
                    self.accumulate(grads, bias, gb)?;
                }
            }
            Op::Relu { input } => {
                let x = self.value(input);
                let data = x
                    .data()
                    .iter()
                    .zip(go.data())
                    .map(|(&xi, &gi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, input, Tensor::new(x.shape().to_vec(), data)?)?;
            }
            Op::Sigmoid { input } => {
                // d sigmoid = y * (1 - y), using the forward output y.
                let data = value
                    .data()
                    .iter()
                    .zip(go.data())
                    .map(|(&y, &gi)| gi * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, input, Tensor::new(value.shape().to_vec(), data)?)?;
            }
            Op::Add { a, b } => {
                if self.needs(a) {
                    self.accumulate(grads, a, go.clone())?;
                }
                if self.needs(b) {
                    self.accumulate(grads, b, go.clone())?;
                }
            }
            Op::Sub { a, b } => {
                if self.needs(a) {
                    self.accumulate(grads, a, go.clone())?;
                }
                if self.needs(b) {
                    self.accumulate(grads, b, ops::mul_scalar(go, -T::one()))?;
                }
            }
            Op::Mul { a, b } => {
                if self.needs(a) {
                    self.accumulate(grads, a, ops::mul(go, self.value(b))?)?;
                }
                if self.needs(b) {
                    self.accumulate(grads, b, ops::mul(go, self.value(a))?)?;
                }
            }
            Op::MulScalar { input, factor } => {
                self.accumulate(grads, input, ops::mul_scalar(go, factor))?;
            }
            Op::Square { input } => {
                let x = self.value(input);
                let two = T::from_f64(2.0);
                let data = x
                    .data()
                    .iter()
                    .zip(go.data())
                    .map(|(&xi, &gi)| two * xi * gi)
                    .collect();
                self.accumulate(grads, input, Tensor::new(x.shape().to_vec(), data)?)?;
            }
            Op::Sum { input } => {
                let g = go.item()?;
                let x = self.value(input);
                self.accumulate(grads, input, Tensor::full(x.shape(), g))?;
            }
            Op::Mean { input } => {
                let x = self.value(input);
                let g = go.item()? / T::from_usize(x.numel());
                self.accumulate(grads, input, Tensor::full(x.shape(), g))?;
            }
            Op::ConcatChannels { a, b } => {
                let ca = self.value(a).shape()[1];
                let cb = self.value(b).shape()[1];
                let (ga, gb) = ops::split_channels(go, ca, cb)?;
                if self.needs(a) {
                    self.accumulate(grads, a, ga)?;
                }
                if self.needs(b) {
                    self.accumulate(grads, b, gb)?;
                }
            }
        }
        Ok(())
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor<T>>],
        target: NodeId,
        delta: Tensor<T>,
    ) -> Result<()> {
        if !self.needs(target) {
            return Ok(());
        }
        match &mut grads[target.0] {
            slot @ None => *slot = Some(delta),
            Some(existing) => {
                expect_same_grad_shape(existing, &delta)?;
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += *d;
                }
            }
        }
        Ok(())
    }
}

fn expect_same_grad_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "gradient accumulation",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}
