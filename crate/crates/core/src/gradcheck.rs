//! Finite-difference gradient verification.
//!
//! Every differentiable primitive, both losses, and the two network
//! architectures are checked by comparing tape gradients against central
//! finite differences in `f64`. The finite-difference side only ever calls
//! the forward path, so it stays independent of the backward code it
//! verifies. The CLI exposes this suite as the `gradcheck` verb.

use crate::error::Result;
use crate::loss::{self, PenaltyParams};
use crate::models::{self, NetworkSpec};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, NodeId, Tensor};

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Relative-error tolerance for single primitives.
pub const PRIMITIVE_TOL: f64 = 1e-4;
/// Relative-error tolerance for whole-network compositions.
pub const NETWORK_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Central finite-difference gradient of `eval` at `point`, one element at
/// a time: `(f(x+h) - f(x-h)) / (2h)`.
pub fn finite_diff<F>(point: &Tensor<f64>, mut eval: F, h: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    let mut probe = point.clone();
    let mut grad = Tensor::zeros(point.shape());
    for i in 0..point.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Max elementwise relative error between analytic and finite-difference
/// gradients. Near-zero entries fall back to an absolute comparison.
pub fn max_rel_err(analytic: &Tensor<f64>, fd: &Tensor<f64>) -> f64 {
    analytic
        .data()
        .iter()
        .zip(fd.data())
        .map(|(&a, &f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn random_tensor(rng: &mut SplitMix64, shape: &[usize]) -> Tensor<f64> {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.next_range(-1.0, 1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree")
}

/// Scalar readout with fixed random weights: `sum(w ⊙ x)`. Richer than a
/// plain mean, so gradients differ per element.
fn weighted_readout(g: &mut Graph<f64>, x: NodeId, seed: u64) -> Result<NodeId> {
    let mut rng = SplitMix64::new(seed);
    let w = g.leaf(random_tensor(&mut rng, g.value(x).shape()));
    let prod = g.mul(x, w)?;
    Ok(g.sum(prod))
}

/// One generic check: gradient of a scalar tape expression with respect to
/// one of its tensor arguments, against finite differences.
fn check_argument<Build>(
    name: &str,
    point: Tensor<f64>,
    tol: f64,
    build: Build,
) -> Result<CheckResult>
where
    Build: Fn(&mut Graph<f64>, Tensor<f64>) -> Result<(NodeId, NodeId)>,
{
    let mut g = Graph::new();
    let (arg, out) = build(&mut g, point.clone())?;
    let store = g.backward(out)?;
    let analytic = store
        .grad(arg)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let fd = finite_diff(
        &point,
        |probe| {
            let mut g = Graph::new();
            let (_, out) = build(&mut g, probe.clone())?;
            g.value(out).item()
        },
        FD_STEP,
    )?;
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_err: max_rel_err(&analytic, &fd),
        tolerance: tol,
    })
}

/// Gradient checks for every tensor primitive.
pub fn check_primitives() -> Result<Vec<CheckResult>> {
    let mut rng = SplitMix64::new(0x9d7e_c0de);
    let mut results = Vec::new();

    // conv2d: gradients w.r.t. input, kernel and bias, across strides.
    let input = random_tensor(&mut rng, &[2, 3, 6, 7]);
    let kernel = random_tensor(&mut rng, &[4, 3, 3, 3]);
    let bias = random_tensor(&mut rng, &[4]);
    for (tag, stride, padding) in [("s1p1", 1, 1), ("s2p1", 2, 1), ("s1p0", 1, 0)] {
        for role in ["input", "kernel", "bias"] {
            let point = match role {
                "input" => input.clone(),
                "kernel" => kernel.clone(),
                _ => bias.clone(),
            };
            let (i, k, b) = (input.clone(), kernel.clone(), bias.clone());
            results.push(check_argument(
                &format!("conv2d/{tag}/{role}"),
                point,
                PRIMITIVE_TOL,
                move |g, point| {
                    let (x, kn, bn) = match role {
                        "input" => (g.param(point), g.leaf(k.clone()), g.leaf(b.clone())),
                        "kernel" => (g.leaf(i.clone()), g.param(point), g.leaf(b.clone())),
                        _ => (g.leaf(i.clone()), g.leaf(k.clone()), g.param(point)),
                    };
                    let y = g.conv2d(x, kn, bn, stride, padding)?;
                    let out = weighted_readout(g, y, 17)?;
                    let arg = match role {
                        "input" => x,
                        "kernel" => kn,
                        _ => bn,
                    };
                    Ok((arg, out))
                },
            )?);
        }
    }

    // conv_transpose2d, kernel layout [c_in, c_out, k, k].
    let tin = random_tensor(&mut rng, &[2, 3, 5, 4]);
    let tker = random_tensor(&mut rng, &[3, 2, 2, 2]);
    let tbias = random_tensor(&mut rng, &[2]);
    for (tag, stride, padding) in [("s1p0", 1, 0), ("s2p0", 2, 0), ("s2p1", 2, 1)] {
        for role in ["input", "kernel", "bias"] {
            let point = match role {
                "input" => tin.clone(),
                "kernel" => tker.clone(),
                _ => tbias.clone(),
            };
            let (i, k, b) = (tin.clone(), tker.clone(), tbias.clone());
            results.push(check_argument(
                &format!("conv_transpose2d/{tag}/{role}"),
                point,
                PRIMITIVE_TOL,
                move |g, point| {
                    let (x, kn, bn) = match role {
                        "input" => (g.param(point), g.leaf(k.clone()), g.leaf(b.clone())),
                        "kernel" => (g.leaf(i.clone()), g.param(point), g.leaf(b.clone())),
                        _ => (g.leaf(i.clone()), g.leaf(k.clone()), g.param(point)),
                    };
                    let y = g.conv_transpose2d(x, kn, bn, stride, padding)?;
                    let out = weighted_readout(g, y, 18)?;
                    let arg = match role {
                        "input" => x,
                        "kernel" => kn,
                        _ => bn,
                    };
                    Ok((arg, out))
                },
            )?);
        }
    }

    // Elementwise and reduction primitives.
    let x = random_tensor(&mut rng, &[3, 2, 4, 4]);
    let other = random_tensor(&mut rng, &[3, 2, 4, 4]);

    // relu has a kink at 0; keep probe values away from it so central
    // differences see a locally linear function.
    let relu_point = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    results.push(check_argument(
        "relu",
        relu_point,
        PRIMITIVE_TOL,
        |g, point| {
            let a = g.param(point);
            let y = g.relu(a);
            let out = weighted_readout(g, y, 19)?;
            Ok((a, out))
        },
    )?);

    results.push(check_argument(
        "sigmoid",
        x.clone(),
        PRIMITIVE_TOL,
        |g, point| {
            let a = g.param(point);
            let y = g.sigmoid(a);
            let out = weighted_readout(g, y, 20)?;
            Ok((a, out))
        },
    )?);

    let o = other.clone();
    results.push(check_argument(
        "add",
        x.clone(),
        PRIMITIVE_TOL,
        move |g, point| {
            let a = g.param(point);
            let b = g.leaf(o.clone());
            let y = g.add(a, b)?;
            let out = weighted_readout(g, y, 21)?;
            Ok((a, out))
        },
    )?);

    let o = other.clone();
    results.push(check_argument(
        "sub/rhs",
        x.clone(),
        PRIMITIVE_TOL,
        move |g, point| {
            let a = g.leaf(o.clone());
            let b = g.param(point);
            let y = g.sub(a, b)?;
            let out = weighted_readout(g, y, 22)?;
            Ok((b, out))
        },
    )?);

    let o = other.clone();
    results.push(check_argument(
        "mul",
        x.clone(),
        PRIMITIVE_TOL,
        move |g, point| {
            let a = g.param(point);
            let b = g.leaf(o.clone());
            let y = g.mul(a, b)?;
            let out = weighted_readout(g, y, 23)?;
            Ok((a, out))
        },
    )?);

    results.push(check_argument(
        "mul_scalar",
        x.clone(),
        PRIMITIVE_TOL,
        |g, point| {
            let a = g.param(point);
            let y = g.mul_scalar(a, -2.5);
            let out = weighted_readout(g, y, 24)?;
            Ok((a, out))
        },
    )?);

    results.push(check_argument(
        "square",
        x.clone(),
        PRIMITIVE_TOL,
        |g, point| {
            let a = g.param(point);
            let y = g.square(a);
            let out = weighted_readout(g, y, 25)?;
            Ok((a, out))
        },
    )?);

    results.push(check_argument(
        "sum",
        x.clone(),
        PRIMITIVE_TOL,
        |g, point| {
            let a = g.param(point);
            let out = g.sum(a);
            Ok((a, out))
        },
    )?);

    results.push(check_argument(
        "mean",
        x.clone(),
        PRIMITIVE_TOL,
        |g, point| {
            let a = g.param(point);
            let out = g.mean(a);
            Ok((a, out))
        },
    )?);

    let o = random_tensor(&mut rng, &[3, 5, 4, 4]);
    results.push(check_argument(
        "concat_channels/lhs",
        x.clone(),
        PRIMITIVE_TOL,
        move |g, point| {
            let a = g.param(point);
            let b = g.leaf(o.clone());
            let y = g.concat_channels(a, b)?;
            let out = weighted_readout(g, y, 26)?;
            Ok((a, out))
        },
    )?);

    Ok(results)
}

/// Gradient checks for the two losses.
pub fn check_losses() -> Result<Vec<CheckResult>> {
    let mut rng = SplitMix64::new(0x10_55);
    let mut results = Vec::new();

    let output = random_tensor(&mut rng, &[1, 1, 5, 5]);
    let target = random_tensor(&mut rng, &[1, 1, 5, 5]);
    let t = target.clone();
    results.push(check_argument(
        "loss/fnorm",
        output.clone(),
        PRIMITIVE_TOL,
        move |g, point| {
            let out = g.param(point);
            let l = loss::fnorm_node(g, out, &t)?;
            Ok((out, l))
        },
    )?);

    let map_data: Vec<f64> = (0..25).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
    let map = Tensor::new(vec![1, 1, 5, 5], map_data)?;
    let params = PenaltyParams::new(1.1, -0.1)?;
    results.push(check_argument(
        "loss/asymmetric",
        output,
        PRIMITIVE_TOL,
        move |g, point| {
            let out = g.param(point);
            let l = loss::asymmetric_node(g, out, &map, params)?;
            Ok((out, l))
        },
    )?);

    Ok(results)
}

/// End-to-end gradient checks through tiny versions of both networks:
/// every parameter, scalar loss against a fixed random target.
pub fn check_networks() -> Result<Vec<CheckResult>> {
    let mut rng = SplitMix64::new(0xCAFE);
    let mut results = Vec::new();

    let specs = [
        NetworkSpec::detector(3, 4, 11),
        NetworkSpec::drunet(4, 2, 1, 12),
    ];
    for spec in specs {
        let state: models::NetworkState<f64> = models::init_params(&spec);
        let input = random_tensor(&mut rng, &[1, 1, 8, 8]).map(|v| (v + 1.0) / 2.0);
        let target = random_tensor(&mut rng, &[1, 1, 8, 8]).map(|v| (v + 1.0) / 2.0);

        // Analytic gradients for all parameters in one sweep.
        let mut g = Graph::new();
        let x = g.leaf(input.clone());
        let param_ids = models::load_params(&mut g, &state);
        let y = models::forward(&mut g, &spec, &param_ids, x)?;
        let lo = loss::fnorm_node(&mut g, y, &target)?;
        let store = g.backward(lo)?;

        for (idx, (name, value)) in state.iter().enumerate() {
            let analytic = store
                .grad(param_ids[idx])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(value.shape()));
            let fd = finite_diff(
                value,
                |probe| {
                    let mut probed = state.clone();
                    *probed.tensor_mut(idx) = probe.clone();
                    let mut g = Graph::new();
                    let x = g.leaf(input.clone());
                    let ids = models::load_consts(&mut g, &probed);
                    let y = models::forward(&mut g, &spec, &ids, x)?;
                    let lo = loss::fnorm_node(&mut g, y, &target)?;
                    g.value(lo).item()
                },
                FD_STEP,
            )?;
            results.push(CheckResult {
                name: format!("{}/{}", spec.kind_name(), name),
                max_rel_err: max_rel_err(&analytic, &fd),
                tolerance: NETWORK_TOL,
            });
        }
    }
    Ok(results)
}

/// The full suite: primitives, losses, tiny networks.
pub fn run_all() -> Result<Vec<CheckResult>> {
    let mut all = check_primitives()?;
    all.extend(check_losses()?);
    all.extend(check_networks()?);
    Ok(all)
}
