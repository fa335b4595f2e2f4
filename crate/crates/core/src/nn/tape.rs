//! The autodiff tape: append-only op graph with reverse accumulation.
//!
//! Every op materializes its value eagerly in standard layout, so parents
//! always precede children and `backward` is a single reverse sweep.

use ndarray::{concatenate, Array1, Array2, Array4, ArrayD, Axis, Ix2, Ix3, Ix4, IxDyn};

use crate::error::{Error, Result};

pub type Arr = ArrayD<f32>;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    AddBiasChan(Var, Var),
    AddBiasRow(Var, Var),
    AddTokens(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f32),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    InstanceNorm {
        x: Var,
        eps: f32,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f32,
    },
    SoftmaxLast(Var),
    MeanAll(Var),
    L1Mean(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        class_weights: Option<Vec<f32>>,
    },
    /// InfoNCE over a similarity matrix: row i has positive at column i and
    /// `negs` negatives at columns (i+1..i+negs) mod P; mean over rows.
    NceFromSim {
        sim: Var,
        negs: usize,
        tau: f32,
    },
    AvgPool2d {
        x: Var,
        k: usize,
        stride: usize,
        pad: usize,
    },
    GlobalAvgPool(Var),
    UpsampleNearest2(Var),
    ConcatChan(Vec<Var>),
    Reshape {
        x: Var,
        orig: Vec<usize>,
    },
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    GatherPatches {
        x: Var,
        idx: Vec<(usize, usize, usize)>,
    },
    NormalizeRows {
        x: Var,
        eps: f32,
    },
    Select {
        x: Var,
        index: Vec<usize>,
    },
}

struct Node {
    value: Arr,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Arr>>,
}

fn scalar(v: f32) -> Arr {
    ArrayD::from_elem(IxDyn(&[]), v)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Arr, op: Op) -> Var {
        debug_assert!(value.is_standard_layout());
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Arr) -> Var {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().to_owned()
        };
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Arr {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f32 {
        let val = &self.nodes[v.0].value;
        debug_assert_eq!(val.len(), 1);
        *val.iter().next().unwrap()
    }

    /// Gradient of the last `backward` root with respect to node `v`.
    pub fn grad(&self, v: Var) -> Option<&Arr> {
        self.grads[v.0].as_ref()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v * c);
        self.push(value, Op::Scale(a, c))
    }

    /// `(M, K) x (K, N)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.nodes[a.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let value = av.dot(&bv).into_dyn();
        self.push(value, Op::MatMul(a, b))
    }

    /// `(B, M, K) x (B, K, N)`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.nodes[a.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let (bs, m, _k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let n = bv.shape()[2];
        let mut out = ndarray::Array3::<f32>::zeros((bs, m, n));
        for i in 0..bs {
            let prod = av.index_axis(Axis(0), i).dot(&bv.index_axis(Axis(0), i));
            out.index_axis_mut(Axis(0), i).assign(&prod);
        }
        self.push(out.into_dyn(), Op::BatchMatMul(a, b))
    }

    /// `x: (N, C, H, W)`, `w: (F, C, KH, KW)`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let value = {
            let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
            let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
            conv2d_forward(&xv.to_owned(), &wv.to_owned(), stride, pad)
        };
        self.push(value.into_dyn(), Op::Conv2d { x, w, stride, pad })
    }

    /// `x: (N, C, H, W) + b: (C,)`, broadcast over batch and space.
    pub fn add_bias_chan(&mut self, x: Var, b: Var) -> Var {
        let bv = self.nodes[b.0].value.clone();
        let bs = bv.as_slice().unwrap();
        let c = bs.len();
        let mut value = self.nodes[x.0].value.clone();
        {
            let mut v4 = value.view_mut().into_dimensionality::<Ix4>().unwrap();
            for n in 0..v4.shape()[0] {
                for ci in 0..c {
                    v4.index_axis_mut(Axis(0), n)
                        .index_axis_mut(Axis(0), ci)
                        .mapv_inplace(|v| v + bs[ci]);
                }
            }
        }
        self.push(value, Op::AddBiasChan(x, b))
    }

    /// `x: (M, N) + b: (N,)` broadcast over rows.
    pub fn add_bias_row(&mut self, x: Var, b: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let value = (&xv + &bv).into_dyn();
        self.push(value, Op::AddBiasRow(x, b))
    }

    /// `x: (N, T, D) + p: (T, D)` broadcast over batch.
    pub fn add_tokens(&mut self, x: Var, p: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().unwrap();
        let pv = self.nodes[p.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let mut value = xv.to_owned();
        for n in 0..value.shape()[0] {
            let mut slab = value.index_axis_mut(Axis(0), n);
            slab += &pv;
        }
        self.push(value.into_dyn(), Op::AddTokens(x, p))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f32) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| if v >= 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f32::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v.max(0.0) + (-v.abs()).exp().ln_1p());
        self.push(value, Op::Softplus(a))
    }

    /// Per-(sample, channel) normalization over the spatial extent, no affine.
    pub fn instance_norm(&mut self, x: Var, eps: f32) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let m = (h * w) as f32;
        let mut value = xv.to_owned();
        for ni in 0..n {
            for ci in 0..c {
                let mut plane = value
                    .index_axis_mut(Axis(0), ni)
                    .index_axis_move(Axis(0), ci);
                let mu: f32 = plane.sum() / m;
                let var: f32 = plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f32>() / m;
                let std = (var + eps).sqrt();
                plane.mapv_inplace(|v| (v - mu) / std);
            }
        }
        self.push(value.into_dyn(), Op::InstanceNorm { x, eps })
    }

    /// Affine layer norm over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Var {
        let xv = &self.nodes[x.0].value;
        let d = *xv.shape().last().unwrap();
        let gv = self.nodes[gamma.0].value.clone();
        let bv = self.nodes[beta.0].value.clone();
        let g1 = gv.as_slice().unwrap();
        let b1 = bv.as_slice().unwrap();
        let mut value = xv.clone();
        {
            let flat = value.as_slice_mut().unwrap();
            for row in flat.chunks_mut(d) {
                let mu: f32 = row.iter().sum::<f32>() / d as f32;
                let var: f32 = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f32>() / d as f32;
                let std = (var + eps).sqrt();
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (*v - mu) / std * g1[j] + b1[j];
                }
            }
        }
        self.push(value, Op::LayerNorm { x, gamma, beta, eps })
    }

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let d = *xv.shape().last().unwrap();
        let mut value = xv.clone();
        {
            let flat = value.as_slice_mut().unwrap();
            for row in flat.chunks_mut(d) {
                let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
        self.push(value, Op::SoftmaxLast(x))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let value = scalar(av.sum() / av.len() as f32);
        self.push(value, Op::MeanAll(a))
    }

    /// Mean absolute difference; scalar.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        debug_assert_eq!(av.shape(), bv.shape());
        let n = av.len() as f32;
        let value = scalar(
            av.iter()
                .zip(bv.iter())
                .map(|(x, y)| (x - y).abs())
                .sum::<f32>()
                / n,
        );
        self.push(value, Op::L1Mean(a, b))
    }

    /// Mean cross-entropy of `logits: (N, K)` against integer targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        self.cross_entropy_weighted(logits, targets, None)
    }

    /// Cross-entropy with optional per-class weights; the weighted mean is
    /// normalized by the sum of the weights present in the batch.
    pub fn cross_entropy_weighted(
        &mut self,
        logits: Var,
        targets: Vec<usize>,
        class_weights: Option<Vec<f32>>,
    ) -> Var {
        let lv = self.nodes[logits.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let n = lv.shape()[0];
        debug_assert_eq!(targets.len(), n);
        let weight = |t: usize| class_weights.as_ref().map_or(1.0, |w| w[t] as f64);
        let mut total = 0f64;
        let mut wsum = 0f64;
        for (i, row) in lv.rows().into_iter().enumerate() {
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let lse = max as f64
                + row.iter().map(|&v| ((v - max) as f64).exp()).sum::<f64>().ln();
            let w = weight(targets[i]);
            total += w * (lse - row[targets[i]] as f64);
            wsum += w;
        }
        let value = scalar((total / wsum) as f32);
        self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets,
                class_weights,
            },
        )
    }

    /// See [`Op::NceFromSim`]; `sim` is `(P, P)` of anchor-sample similarities.
    pub fn nce_from_sim(&mut self, sim: Var, negs: usize, tau: f32) -> Var {
        let sv = self.nodes[sim.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let p = sv.shape()[0];
        debug_assert!(negs >= 1 && negs < p);
        let mut total = 0f64;
        for i in 0..p {
            let pos = (sv[[i, i]] / tau) as f64;
            let mut lse_terms = vec![pos];
            for j in 1..=negs {
                lse_terms.push((sv[[i, (i + j) % p]] / tau) as f64);
            }
            let max = lse_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + lse_terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - pos;
        }
        let value = scalar((total / p as f64) as f32);
        self.push(value, Op::NceFromSim { sim, negs, tau })
    }

    pub fn avg_pool2d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = Array4::<f32>::zeros((n, c, oh, ow));
        let inv = 1.0 / (k * k) as f32;
        for ni in 0..n {
            for ci in 0..c {
                let plane = xv.index_axis(Axis(0), ni).index_axis_move(Axis(0), ci);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let x_ = (ox * stride + kx) as isize - pad as isize;
                                if y >= 0 && x_ >= 0 && (y as usize) < h && (x_ as usize) < w {
                                    s += plane[[y as usize, x_ as usize]];
                                }
                            }
                        }
                        out[[ni, ci, oy, ox]] = s * inv;
                    }
                }
            }
        }
        self.push(out.into_dyn(), Op::AvgPool2d { x, k, stride, pad })
    }

    /// `(N, C, H, W) -> (N, C)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let m = (h * w) as f32;
        let mut out = Array2::<f32>::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                out[[ni, ci]] =
                    xv.index_axis(Axis(0), ni).index_axis(Axis(0), ci).sum() / m;
            }
        }
        self.push(out.into_dyn(), Op::GlobalAvgPool(x))
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let mut out = Array4::<f32>::zeros((n, c, 2 * h, 2 * w));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..2 * h {
                    for x_ in 0..2 * w {
                        out[[ni, ci, y, x_]] = xv[[ni, ci, y / 2, x_ / 2]];
                    }
                }
            }
        }
        self.push(out.into_dyn(), Op::UpsampleNearest2(x))
    }

    /// Concatenate along the channel axis of NCHW tensors.
    pub fn concat_chan(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let value = concatenate(Axis(1), &views).unwrap();
        let value = value.as_standard_layout().to_owned();
        self.push(value, Op::ConcatChan(parts.to_vec()))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let orig = self.nodes[x.0].value.shape().to_vec();
        let value = self.nodes[x.0]
            .value
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape size mismatch");
        self.push(value, Op::Reshape { x, orig })
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Var {
        let value = self.nodes[x.0]
            .value
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        self.push(
            value,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
        )
    }

    /// Gather feature columns at spatial positions: rows of `(P, C)` from
    /// `x[n, :, y, x]`.
    pub fn gather_patches(&mut self, x: Var, idx: &[(usize, usize, usize)]) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let c = xv.shape()[1];
        let mut out = Array2::<f32>::zeros((idx.len(), c));
        for (row, &(n, y, xp)) in idx.iter().enumerate() {
            for ci in 0..c {
                out[[row, ci]] = xv[[n, ci, y, xp]];
            }
        }
        self.push(
            out.into_dyn(),
            Op::GatherPatches {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    /// L2-normalize each row of a `(P, D)` matrix.
    pub fn normalize_rows(&mut self, x: Var, eps: f32) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let mut value = xv.to_owned();
        for mut row in value.rows_mut() {
            let n = (row.iter().map(|v| v * v).sum::<f32>() + eps).sqrt();
            row.mapv_inplace(|v| v / n);
        }
        self.push(value.into_dyn(), Op::NormalizeRows { x, eps })
    }

    /// Pick one element as a scalar node.
    pub fn select(&mut self, x: Var, index: &[usize]) -> Var {
        let value = scalar(self.nodes[x.0].value[IxDyn(index)]);
        self.push(
            value,
            Op::Select {
                x,
                index: index.to_vec(),
            },
        )
    }

    fn accumulate(&mut self, v: Var, g: Arr) {
        match &mut self.grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse sweep from a scalar root. Gradients of every node reached are
    /// retained and readable through [`Tape::grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Shape("backward root must be scalar".into()));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        let shape = self.nodes[root.0].value.raw_dim();
        self.grads[root.0] = Some(ArrayD::from_elem(shape, 1.0));

        for i in (0..self.nodes.len()).rev() {
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            self.backprop_node(i, &g, &op);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, node: usize, g: &Arr, op: &Op) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.mapv(|v| -v));
            }
            Op::Mul(a, b) => {
                let ga = g * &self.nodes[b.0].value;
                let gb = g * &self.nodes[a.0].value;
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Scale(a, c) => {
                self.accumulate(*a, g.mapv(|v| v * c));
            }
            Op::MatMul(a, b) => {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let av = self.nodes[a.0].value.view().into_dimensionality::<Ix2>().unwrap();
                let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix2>().unwrap();
                let ga = g2.dot(&bv.t()).into_dyn();
                let gb = av.t().dot(&g2).into_dyn();
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::BatchMatMul(a, b) => {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let av = self.nodes[a.0].value.view().into_dimensionality::<Ix3>().unwrap();
                let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix3>().unwrap();
                let bs = av.shape()[0];
                let mut ga = ndarray::Array3::<f32>::zeros((av.shape()[0], av.shape()[1], av.shape()[2]));
                let mut gb = ndarray::Array3::<f32>::zeros((bv.shape()[0], bv.shape()[1], bv.shape()[2]));
                for i in 0..bs {
                    let gi = g3.index_axis(Axis(0), i);
                    ga.index_axis_mut(Axis(0), i)
                        .assign(&gi.dot(&bv.index_axis(Axis(0), i).t()));
                    gb.index_axis_mut(Axis(0), i)
                        .assign(&av.index_axis(Axis(0), i).t().dot(&gi));
                }
                self.accumulate(*a, ga.into_dyn());
                self.accumulate(*b, gb.into_dyn());
            }
            Op::Conv2d { x, w, stride, pad } => {
                let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap().to_owned();
                let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap().to_owned();
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap().to_owned();
                let (gx, gw) = conv2d_backward(&xv, &wv, &g4, *stride, *pad);
                self.accumulate(*x, gx.into_dyn());
                self.accumulate(*w, gw.into_dyn());
            }
            Op::AddBiasChan(x, b) => {
                self.accumulate(*x, g.clone());
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let c = g4.shape()[1];
                let mut gb = Array1::<f32>::zeros(c);
                for ci in 0..c {
                    gb[ci] = g4.index_axis(Axis(1), ci).sum();
                }
                self.accumulate(*b, gb.into_dyn());
            }
            Op::AddBiasRow(x, b) => {
                self.accumulate(*x, g.clone());
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let gb = g2.sum_axis(Axis(0)).into_dyn();
                self.accumulate(*b, gb);
            }
            Op::AddTokens(x, p) => {
                self.accumulate(*x, g.clone());
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let gp = g3.sum_axis(Axis(0)).into_dyn();
                self.accumulate(*p, gp);
            }
            Op::Relu(a) => {
                let ga = ndarray::Zip::from(g)
                    .and(&self.nodes[a.0].value)
                    .map_collect(|&gv, &xv| if xv > 0.0 { gv } else { 0.0 });
                self.accumulate(*a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let ga = ndarray::Zip::from(g)
                    .and(&self.nodes[a.0].value)
                    .map_collect(|&gv, &xv| if xv >= 0.0 { gv } else { s * gv });
                self.accumulate(*a, ga);
            }
            Op::Tanh(a) => {
                let ga = ndarray::Zip::from(g)
                    .and(&self.nodes[node].value)
                    .map_collect(|&gv, &yv| gv * (1.0 - yv * yv));
                self.accumulate(*a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = ndarray::Zip::from(g)
                    .and(&self.nodes[node].value)
                    .map_collect(|&gv, &yv| gv * yv * (1.0 - yv));
                self.accumulate(*a, ga);
            }
            Op::Softplus(a) => {
                let ga = ndarray::Zip::from(g)
                    .and(&self.nodes[a.0].value)
                    .map_collect(|&gv, &xv| gv / (1.0 + (-xv).exp()));
                self.accumulate(*a, ga);
            }
            Op::InstanceNorm { x, eps } => {
                let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
                let yv = self.nodes[node].value.view().into_dimensionality::<Ix4>().unwrap();
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let m = (h * w) as f32;
                let mut gx = Array4::<f32>::zeros((n, c, h, w));
                for ni in 0..n {
                    for ci in 0..c {
                        let xp = xv.index_axis(Axis(0), ni).index_axis_move(Axis(0), ci);
                        let yp = yv.index_axis(Axis(0), ni).index_axis_move(Axis(0), ci);
                        let gp = g4.index_axis(Axis(0), ni).index_axis_move(Axis(0), ci);
                        let mu: f32 = xp.sum() / m;
                        let var: f32 =
                            xp.iter().map(|v| (v - mu) * (v - mu)).sum::<f32>() / m;
                        let std = (var + eps).sqrt();
                        let g_mean: f32 = gp.sum() / m;
                        let gy_mean: f32 =
                            gp.iter().zip(yp.iter()).map(|(a, b)| a * b).sum::<f32>() / m;
                        let mut out = gx
                            .index_axis_mut(Axis(0), ni)
                            .index_axis_move(Axis(0), ci);
                        ndarray::Zip::from(&mut out).and(&gp).and(&yp).for_each(
                            |o, &gv, &yv_| {
                                *o = (gv - g_mean - yv_ * gy_mean) / std;
                            },
                        );
                    }
                }
                self.accumulate(*x, gx.into_dyn());
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let xv = &self.nodes[x.0].value;
                let d = *xv.shape().last().unwrap();
                let gamma_v = self.nodes[gamma.0].value.clone();
                let g1 = gamma_v.as_slice().unwrap();
                let xs = xv.as_slice().unwrap();
                let gs = g.as_slice().unwrap();
                let rows = xs.len() / d;
                let mut gx = vec![0f32; xs.len()];
                let mut ggamma = vec![0f32; d];
                let mut gbeta = vec![0f32; d];
                for r in 0..rows {
                    let xrow = &xs[r * d..(r + 1) * d];
                    let grow = &gs[r * d..(r + 1) * d];
                    let mu: f32 = xrow.iter().sum::<f32>() / d as f32;
                    let var: f32 =
                        xrow.iter().map(|v| (v - mu) * (v - mu)).sum::<f32>() / d as f32;
                    let std = (var + eps).sqrt();
                    let xhat: Vec<f32> = xrow.iter().map(|v| (v - mu) / std).collect();
                    for j in 0..d {
                        ggamma[j] += grow[j] * xhat[j];
                        gbeta[j] += grow[j];
                    }
                    let dxhat: Vec<f32> = (0..d).map(|j| grow[j] * g1[j]).collect();
                    let dxhat_mean: f32 = dxhat.iter().sum::<f32>() / d as f32;
                    let dxhat_xhat_mean: f32 = dxhat
                        .iter()
                        .zip(&xhat)
                        .map(|(a, b)| a * b)
                        .sum::<f32>()
                        / d as f32;
                    for j in 0..d {
                        gx[r * d + j] =
                            (dxhat[j] - dxhat_mean - xhat[j] * dxhat_xhat_mean) / std;
                    }
                }
                let shape = xv.raw_dim();
                self.accumulate(*x, ArrayD::from_shape_vec(shape, gx).unwrap());
                self.accumulate(*gamma, Array1::from_vec(ggamma).into_dyn());
                self.accumulate(*beta, Array1::from_vec(gbeta).into_dyn());
            }
            Op::SoftmaxLast(x) => {
                let yv = &self.nodes[node].value;
                let d = *yv.shape().last().unwrap();
                let ys = yv.as_slice().unwrap();
                let gs = g.as_slice().unwrap();
                let mut gx = vec![0f32; ys.len()];
                for r in 0..ys.len() / d {
                    let yrow = &ys[r * d..(r + 1) * d];
                    let grow = &gs[r * d..(r + 1) * d];
                    let dot: f32 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        gx[r * d + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.accumulate(*x, ArrayD::from_shape_vec(yv.raw_dim(), gx).unwrap());
            }
            Op::MeanAll(a) => {
                let av = &self.nodes[a.0].value;
                let scale = g.iter().next().unwrap() / av.len() as f32;
                self.accumulate(*a, ArrayD::from_elem(av.raw_dim(), scale));
            }
            Op::L1Mean(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let scale = g.iter().next().unwrap() / av.len() as f32;
                let ga = ndarray::Zip::from(av)
                    .and(bv)
                    .map_collect(|&x, &y| scale * (x - y).signum());
                let gb = ga.mapv(|v| -v);
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::CrossEntropy {
                logits,
                targets,
                class_weights,
            } => {
                let lv = self.nodes[logits.0].value.view().into_dimensionality::<Ix2>().unwrap();
                let n = lv.shape()[0];
                let weight = |t: usize| class_weights.as_ref().map_or(1.0, |w| w[t]);
                let wsum: f32 = targets.iter().map(|&t| weight(t)).sum();
                let scale = g.iter().next().unwrap() / wsum;
                let mut gl = Array2::<f32>::zeros((n, lv.shape()[1]));
                for (i, row) in lv.rows().into_iter().enumerate() {
                    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let exps: Vec<f32> = row.iter().map(|&v| (v - max).exp()).collect();
                    let sum: f32 = exps.iter().sum();
                    let w = weight(targets[i]);
                    for (j, e) in exps.iter().enumerate() {
                        let p = e / sum;
                        gl[[i, j]] =
                            scale * w * (p - if j == targets[i] { 1.0 } else { 0.0 });
                    }
                }
                self.accumulate(*logits, gl.into_dyn());
            }
            Op::NceFromSim { sim, negs, tau } => {
                let sv = self.nodes[sim.0].value.view().into_dimensionality::<Ix2>().unwrap();
                let p = sv.shape()[0];
                let scale = g.iter().next().unwrap() / p as f32;
                let mut gs = Array2::<f32>::zeros((p, p));
                for i in 0..p {
                    let mut cols = vec![i];
                    for j in 1..=*negs {
                        cols.push((i + j) % p);
                    }
                    let logits: Vec<f32> = cols.iter().map(|&c| sv[[i, c]] / tau).collect();
                    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let exps: Vec<f32> = logits.iter().map(|&v| (v - max).exp()).collect();
                    let sum: f32 = exps.iter().sum();
                    for (slot, &c) in cols.iter().enumerate() {
                        let soft = exps[slot] / sum;
                        let target = if slot == 0 { 1.0 } else { 0.0 };
                        gs[[i, c]] += scale * (soft - target) / tau;
                    }
                }
                self.accumulate(*sim, gs.into_dyn());
            }
            Op::AvgPool2d { x, k, stride, pad } => {
                let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let (oh, ow) = (g4.shape()[2], g4.shape()[3]);
                let inv = 1.0 / (k * k) as f32;
                let mut gx = Array4::<f32>::zeros((n, c, h, w));
                for ni in 0..n {
                    for ci in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g4[[ni, ci, oy, ox]] * inv;
                                for ky in 0..*k {
                                    for kx in 0..*k {
                                        let y = (oy * stride + ky) as isize - *pad as isize;
                                        let x_ = (ox * stride + kx) as isize - *pad as isize;
                                        if y >= 0
                                            && x_ >= 0
                                            && (y as usize) < h
                                            && (x_ as usize) < w
                                        {
                                            gx[[ni, ci, y as usize, x_ as usize]] += gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                self.accumulate(*x, gx.into_dyn());
            }
            Op::GlobalAvgPool(x) => {
                let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let m = (h * w) as f32;
                let mut gx = Array4::<f32>::zeros((n, c, h, w));
                for ni in 0..n {
                    for ci in 0..c {
                        let gv = g2[[ni, ci]] / m;
                        gx.index_axis_mut(Axis(0), ni)
                            .index_axis_move(Axis(0), ci)
                            .fill(gv);
                    }
                }
                self.accumulate(*x, gx.into_dyn());
            }
            Op::UpsampleNearest2(x) => {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let (n, c, h2, w2) = (g4.shape()[0], g4.shape()[1], g4.shape()[2], g4.shape()[3]);
                let mut gx = Array4::<f32>::zeros((n, c, h2 / 2, w2 / 2));
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h2 {
                            for x_ in 0..w2 {
                                gx[[ni, ci, y / 2, x_ / 2]] += g4[[ni, ci, y, x_]];
                            }
                        }
                    }
                }
                self.accumulate(*x, gx.into_dyn());
            }
            Op::ConcatChan(parts) => {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let mut offset = 0;
                for part in parts {
                    let c = self.nodes[part.0].value.shape()[1];
                    let slice = g4
                        .slice(ndarray::s![.., offset..offset + c, .., ..])
                        .to_owned()
                        .into_dyn();
                    offset += c;
                    self.accumulate(*part, slice);
                }
            }
            Op::Reshape { x, orig } => {
                let gx = g
                    .clone()
                    .into_shape_with_order(IxDyn(orig))
                    .expect("reshape grad");
                self.accumulate(*x, gx);
            }
            Op::Permute { x, axes } => {
                let mut inverse = vec![0usize; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let gx = g
                    .view()
                    .permuted_axes(IxDyn(&inverse))
                    .as_standard_layout()
                    .to_owned();
                self.accumulate(*x, gx);
            }
            Op::GatherPatches { x, idx } => {
                let shape = self.nodes[x.0].value.raw_dim();
                let mut gx = ArrayD::<f32>::zeros(shape);
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let c = g2.shape()[1];
                for (row, &(n, y, xp)) in idx.iter().enumerate() {
                    for ci in 0..c {
                        gx[IxDyn(&[n, ci, y, xp])] += g2[[row, ci]];
                    }
                }
                self.accumulate(*x, gx);
            }
            Op::NormalizeRows { x, eps } => {
                let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix2>().unwrap();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut gx = Array2::<f32>::zeros((xv.shape()[0], xv.shape()[1]));
                for (r, xrow) in xv.rows().into_iter().enumerate() {
                    let n2 = xrow.iter().map(|v| v * v).sum::<f32>() + eps;
                    let n = n2.sqrt();
                    let grow = g2.row(r);
                    let gdotx: f32 = grow.iter().zip(xrow.iter()).map(|(a, b)| a * b).sum();
                    for j in 0..xrow.len() {
                        gx[[r, j]] = grow[j] / n - xrow[j] * gdotx / (n2 * n);
                    }
                }
                self.accumulate(*x, gx.into_dyn());
            }
            Op::Select { x, index } => {
                let shape = self.nodes[x.0].value.raw_dim();
                let mut gx = ArrayD::<f32>::zeros(shape);
                gx[IxDyn(index)] = *g.iter().next().unwrap();
                self.accumulate(*x, gx);
            }
        }
    }
}

fn conv2d_forward(
    x: &Array4<f32>,
    w: &Array4<f32>,
    stride: usize,
    pad: usize,
) -> Array4<f32> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let wmat = w
        .view()
        .into_shape_with_order((f, c * kh * kw))
        .unwrap()
        .to_owned();
    let mut out = Array4::<f32>::zeros((n, f, oh, ow));
    for ni in 0..n {
        let col = im2col(&x.index_axis(Axis(0), ni).to_owned(), kh, kw, stride, pad, oh, ow);
        let prod = wmat.dot(&col); // (F, OH*OW)
        out.index_axis_mut(Axis(0), ni).assign(
            &prod
                .into_shape_with_order((f, oh, ow))
                .unwrap(),
        );
    }
    out
}

fn conv2d_backward(
    x: &Array4<f32>,
    w: &Array4<f32>,
    g: &Array4<f32>,
    stride: usize,
    pad: usize,
) -> (Array4<f32>, Array4<f32>) {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (oh, ow) = (g.shape()[2], g.shape()[3]);
    let wmat = w
        .view()
        .into_shape_with_order((f, c * kh * kw))
        .unwrap()
        .to_owned();
    let mut gw_mat = Array2::<f32>::zeros((f, c * kh * kw));
    let mut gx = Array4::<f32>::zeros((n, c, h, wd));
    for ni in 0..n {
        let col = im2col(&x.index_axis(Axis(0), ni).to_owned(), kh, kw, stride, pad, oh, ow);
        let gmat = g
            .index_axis(Axis(0), ni)
            .into_shape_with_order((f, oh * ow))
            .unwrap()
            .to_owned();
        gw_mat += &gmat.dot(&col.t());
        let gcol = wmat.t().dot(&gmat); // (C*KH*KW, OH*OW)
        col2im(
            &gcol,
            &mut gx.index_axis_mut(Axis(0), ni),
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        );
    }
    let gw = gw_mat.into_shape_with_order((f, c, kh, kw)).unwrap();
    (gx, gw)
}

fn im2col(
    x: &ndarray::Array3<f32>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<f32> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let xs = x.as_slice().unwrap();
    let mut col = Array2::<f32>::zeros((c * kh * kw, oh * ow));
    let cs = col.as_slice_mut().unwrap();
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let base = row * oh * ow;
                for oy in 0..oh {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y as usize >= h {
                        continue;
                    }
                    let xrow = (ci * h + y as usize) * w;
                    for ox in 0..ow {
                        let xc = (ox * stride + kx) as isize - pad as isize;
                        if xc < 0 || xc as usize >= w {
                            continue;
                        }
                        cs[base + oy * ow + ox] = xs[xrow + xc as usize];
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    gcol: &Array2<f32>,
    gx: &mut ndarray::ArrayViewMut3<'_, f32>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let (c, h, w) = (gx.shape()[0], gx.shape()[1], gx.shape()[2]);
    let gs = gcol.as_slice().unwrap();
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let base = row * oh * ow;
                for oy in 0..oh {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y as usize >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let xc = (ox * stride + kx) as isize - pad as isize;
                        if xc < 0 || xc as usize >= w {
                            continue;
                        }
                        gx[[ci, y as usize, xc as usize]] += gs[base + oy * ow + ox];
                    }
                }
            }
        }
    }
}
