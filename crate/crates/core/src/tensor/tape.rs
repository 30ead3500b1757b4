use super::kernels::{self, linear_backward, softmax_backward};
use super::{shape_err, Real, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv3d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    MaxPool3d {
        input: Var,
        argmax: Vec<usize>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    Add(Var, Var),
    GlobalAvgPool(Var),
    HeadMix {
        weights: Var,
        heads: Vec<Var>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    /// Whether any leaf marked `requires_grad` feeds this node.
    tracked: bool,
}

/// Records forward operations in order; [`Tape::backward`] replays them in reverse.
///
/// Nodes are append-only. Backward never touches stored forward values.
#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    pub fn conv3d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv3d(self.value(input), self.value(kernel), self.value(bias), stride, pad)?;
        let tracked = self.tracked(&[input, kernel, bias]);
        Ok(self.push(
            out,
            Op::Conv3d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
            tracked,
        ))
    }

    pub fn maxpool3d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        let out = kernels::maxpool3d(self.value(input), k, stride)?;
        let tracked = self.tracked(&[input]);
        Ok(self.push(
            out.output,
            Op::MaxPool3d {
                input,
                argmax: out.argmax,
            },
            tracked,
        ))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = kernels::linear(self.value(input), self.value(weight), self.value(bias))?;
        let tracked = self.tracked(&[input, weight, bias]);
        Ok(self.push(out, Op::Linear { input, weight, bias }, tracked))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = kernels::relu(self.value(input));
        let tracked = self.tracked(&[input]);
        self.push(out, Op::Relu(input), tracked)
    }

    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let out = kernels::softmax(self.value(input), axis)?;
        let tracked = self.tracked(&[input]);
        Ok(self.push(out, Op::Softmax { input, axis }, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "add",
                format!("operands differ in shape: {:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), tracked))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = kernels::global_avg_pool(self.value(input))?;
        let tracked = self.tracked(&[input]);
        Ok(self.push(out, Op::GlobalAvgPool(input), tracked))
    }

    /// Per-column convex combination of head outputs; `weights` is `[H,M]`.
    pub fn head_mix(&mut self, weights: Var, heads: &[Var]) -> Result<Var> {
        let hs: Vec<&Tensor<T>> = heads.iter().map(|&h| self.value(h)).collect();
        let out = kernels::head_mix(self.value(weights), &hs)?;
        let mut all = heads.to_vec();
        all.push(weights);
        let tracked = self.tracked(&all);
        Ok(self.push(
            out,
            Op::HeadMix {
                weights,
                heads: heads.to_vec(),
            },
            tracked,
        ))
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let out = kernels::mse(self.value(pred), self.value(target))?;
        let tracked = self.tracked(&[pred, target]);
        Ok(self.push(out, Op::Mse { pred, target }, tracked))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::ONE));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    // Leaves keep their gradient for the caller.
                    grads[id] = Some(g);
                }
                Op::Conv3d {
                    input,
                    kernel,
                    bias,
                    stride,
                    pad,
                } => {
                    let need_input = self.nodes[input.0].tracked;
                    let r = kernels::conv3d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        self.value(*bias),
                        *stride,
                        *pad,
                        &g,
                        need_input,
                    )?;
                    if let Some(gi) = r.input {
                        accumulate(&mut grads, *input, gi);
                    }
                    accumulate(&mut grads, *kernel, r.kernel);
                    accumulate(&mut grads, *bias, r.bias);
                }
                Op::MaxPool3d { input, argmax } => {
                    let mut gi = Tensor::zeros(self.value(*input).shape());
                    let gd = gi.data_mut();
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        gd[src] += gv;
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::Linear { input, weight, bias } => {
                    let [gi, gw, gb] =
                        linear_backward(self.value(*input), self.value(*weight), self.value(*bias), &g)?;
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *weight, gw);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Relu(input) => {
                    let x = self.value(*input);
                    let data = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xv, &gv)| if xv > T::ZERO { gv } else { T::ZERO })
                        .collect();
                    accumulate(&mut grads, *input, Tensor::new(x.shape().to_vec(), data)?);
                }
                Op::Softmax { input, axis } => {
                    let gi = softmax_backward(&node.value, *axis, &g);
                    accumulate(&mut grads, *input, gi);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::GlobalAvgPool(input) => {
                    let x = self.value(*input);
                    let vox: usize = x.shape()[2..].iter().product();
                    let scale = T::from_f64(1.0 / vox as f64);
                    let gi = Tensor::from_fn(x.shape(), |i| g.data()[i / vox] * scale);
                    accumulate(&mut grads, *input, gi);
                }
                Op::HeadMix { weights, heads } => {
                    let w = self.value(*weights);
                    let m = w.shape()[1];
                    let mut gw = vec![0f64; w.len()];
                    for (h, &hv) in heads.iter().enumerate() {
                        let ht = self.value(hv);
                        let gh = Tensor::from_fn(ht.shape(), |i| w.data()[h * m + i % m] * g.data()[i]);
                        for (i, (&gv, &xv)) in g.data().iter().zip(ht.data()).enumerate() {
                            gw[h * m + i % m] += gv.to_f64() * xv.to_f64();
                        }
                        accumulate(&mut grads, hv, gh);
                    }
                    let gw = Tensor::new(w.shape().to_vec(), gw.into_iter().map(T::from_f64).collect())?;
                    accumulate(&mut grads, *weights, gw);
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let scale = g.data()[0].to_f64() * 2.0 / p.len() as f64;
                    let gp = Tensor::from_fn(p.shape(), |i| {
                        T::from_f64(scale * (p.data()[i].to_f64() - t.data()[i].to_f64()))
                    });
                    if self.nodes[target.0].tracked {
                        accumulate(&mut grads, *target, gp.map(|v| -v));
                    }
                    accumulate(&mut grads, *pred, gp);
                }
            }
        }

        // Only leaves retain gradients; interior slots were consumed above.
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        slot => *slot = Some(g),
    }
}

/// Gradients of a loss with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; exactly zero when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        self.grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_gradient_example() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let t = tape.constant(Tensor::zeros(&[1, 2]));
        let l = tape.mse_loss(p, t).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).data(), &[1.0, 2.0]);

        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let t = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let l = tape.mse_loss(p, t).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0]);
        assert_eq!(tape.backward(l).unwrap().get(p).data(), &[0.0, 0.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut tape = Tape::<f32>::new();
        let w = tape.param(Tensor::full(&[2, 2], 1.5));
        let c = tape.constant(Tensor::scalar(3.0));
        let g = tape.backward(c).unwrap();
        assert_eq!(g.get(w), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn disconnected_subgraph_gets_zero() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::full(&[1, 3], 0.5));
        let b = tape.param(Tensor::full(&[1, 3], -0.5));
        let ra = tape.relu(a);
        let rb = tape.relu(b);
        let target = tape.constant(Tensor::zeros(&[1, 3]));
        let _other = tape.mse_loss(rb, target).unwrap();
        let loss = tape.mse_loss(ra, target).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(b), Tensor::zeros(&[1, 3]));
        assert!(g.get(a).data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn rejects_non_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(a), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn backward_leaves_forward_values_intact() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::from_fn(&[1, 1, 4, 4, 4], |i| (i as f32 * 0.37).sin()));
        let k = tape.param(Tensor::from_fn(&[2, 1, 3, 3, 3], |i| (i as f32 * 0.11).cos()));
        let b = tape.param(Tensor::zeros(&[2]));
        let y = tape.conv3d(x, k, b, 1, 1).unwrap();
        let r = tape.relu(y);
        let p = tape.global_avg_pool(r).unwrap();
        let t = tape.constant(Tensor::zeros(&[1, 2]));
        let l = tape.mse_loss(p, t).unwrap();
        let before: Vec<Tensor<f32>> = (0..tape.len()).map(|i| tape.value(Var(i)).clone()).collect();
        tape.backward(l).unwrap();
        tape.backward(l).unwrap();
        for (i, v) in before.iter().enumerate() {
            assert_eq!(tape.value(Var(i)), v);
        }
    }
}
