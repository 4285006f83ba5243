//! The operation tape: forward builds nodes, `backward` walks them once.

use crate::kernels::{self, GroupNormCache};
use crate::param::{GradStore, ParamId, ParamSet};
use crate::Arr;
use ndarray::{Ix1, Ix2, Ix3, Ix4, IxDyn};

/// Handle to a tensor on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tx(usize);

enum Value {
    Owned(Arr),
    Param(ParamId),
}

enum UnaryKind {
    Relu,
    Silu,
    Sigmoid,
    Exp,
    Abs,
    Square,
    Softplus,
    Huber(f64),
}

enum Op {
    Constant,
    Param(ParamId),
    Add(Tx, Tx),
    Sub(Tx, Tx),
    Mul(Tx, Tx),
    Scale(Tx, f64),
    AddScalar(Tx, f64),
    Unary(Tx, UnaryKind),
    MatMul(Tx, Tx),
    /// `(N, M) + (M)` broadcast over rows.
    AddRowBias(Tx, Tx),
    /// `(C, H, W) + (C)` broadcast over space.
    AddChannelBias(Tx, Tx),
    Conv2d {
        x: Tx,
        w: Tx,
        stride: usize,
        pad: usize,
    },
    GroupNorm {
        x: Tx,
        gamma: Tx,
        beta: Tx,
        groups: usize,
        cache: GroupNormCache,
    },
    Upsample2(Tx),
    RoiAlign {
        x: Tx,
        rois: Vec<[f64; 4]>,
        scale: f64,
        pool: usize,
    },
    ConcatChannels(Vec<Tx>),
    Reshape(Tx),
    GatherRows {
        x: Tx,
        rows: Vec<usize>,
    },
    /// Picks `x[row, col]` for each `(row, col)` pair; output is 1-D.
    GatherRowCols {
        x: Tx,
        picks: Vec<(usize, usize)>,
    },
    LogSoftmaxRows(Tx),
    SumAxis1(Tx),
    Sum(Tx),
    Mean(Tx),
}

struct Node {
    value: Value,
    op: Op,
}

/// A single forward pass over borrowed parameters.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Arr, op: Op) -> Tx {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Tx(self.nodes.len() - 1)
    }

    /// Resolved value of a tensor.
    pub fn value(&self, t: Tx) -> &Arr {
        match &self.nodes[t.0].value {
            Value::Owned(a) => a,
            Value::Param(id) => self.params.value(*id),
        }
    }

    /// Extracts a scalar (from a one-element tensor).
    pub fn scalar(&self, t: Tx) -> f64 {
        let v = self.value(t);
        assert_eq!(v.len(), 1, "scalar() on tensor of len {}", v.len());
        *v.iter().next().unwrap()
    }

    pub fn shape(&self, t: Tx) -> &[usize] {
        self.value(t).shape()
    }

    // ---- leaves ----------------------------------------------------------

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, value: Arr) -> Tx {
        self.push(value, Op::Constant)
    }

    pub fn constant1(&mut self, v: ndarray::Array1<f64>) -> Tx {
        self.constant(v.into_dyn())
    }

    pub fn constant2(&mut self, v: ndarray::Array2<f64>) -> Tx {
        self.constant(v.into_dyn())
    }

    pub fn constant3(&mut self, v: ndarray::Array3<f64>) -> Tx {
        self.constant(v.into_dyn())
    }

    pub fn scalar_const(&mut self, v: f64) -> Tx {
        self.constant(Arr::from_elem(IxDyn(&[1]), v))
    }

    /// Trainable parameter leaf; gradients accumulate into its [`GradStore`]
    /// slot.
    pub fn param(&mut self, id: ParamId) -> Tx {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Tx(self.nodes.len() - 1)
    }

    // ---- elementwise ------------------------------------------------------

    pub fn add(&mut self, a: Tx, b: Tx) -> Tx {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Tx, b: Tx) -> Tx {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Tx, b: Tx) -> Tx {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Tx, c: f64) -> Tx {
        let v = self.value(a).mapv(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Tx, c: f64) -> Tx {
        let v = self.value(a).mapv(|x| x + c);
        self.push(v, Op::AddScalar(a, c))
    }

    fn unary(&mut self, a: Tx, kind: UnaryKind) -> Tx {
        let v = self.value(a).mapv(|x| unary_forward(&kind, x));
        self.push(v, Op::Unary(a, kind))
    }

    pub fn relu(&mut self, a: Tx) -> Tx {
        self.unary(a, UnaryKind::Relu)
    }

    pub fn silu(&mut self, a: Tx) -> Tx {
        self.unary(a, UnaryKind::Silu)
    }

    pub fn sigmoid(&mut self, a: Tx) -> Tx {
        self.unary(a, UnaryKind::Sigmoid)
    }

    pub fn exp(&mut self, a: Tx) -> Tx {
        self.unary(a, UnaryKind::Exp)
    }

    pub fn abs(&mut self, a: Tx) -> Tx {
        self.unary(a, UnaryKind::Abs)
    }

    pub fn square(&mut self, a: Tx) -> Tx {
        self.unary(a, UnaryKind::Square)
    }

    pub fn softplus(&mut self, a: Tx) -> Tx {
        self.unary(a, UnaryKind::Softplus)
    }

    /// Smooth-L1 / Huber applied elementwise.
    pub fn huber(&mut self, a: Tx, beta: f64) -> Tx {
        assert!(beta > 0.0);
        self.unary(a, UnaryKind::Huber(beta))
    }

    // ---- linear algebra ----------------------------------------------------

    pub fn matmul(&mut self, a: Tx, b: Tx) -> Tx {
        let av = self
            .value(a)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul lhs 2-D");
        let bv = self
            .value(b)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul rhs 2-D");
        assert_eq!(av.dim().1, bv.dim().0, "matmul inner dim mismatch");
        let v = av.dot(&bv).into_dyn();
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_row_bias(&mut self, x: Tx, b: Tx) -> Tx {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("row bias target 2-D");
        let bv = self
            .value(b)
            .view()
            .into_dimensionality::<Ix1>()
            .expect("row bias 1-D");
        assert_eq!(xv.dim().1, bv.dim(), "row bias width mismatch");
        let v = (&xv + &bv).into_dyn();
        self.push(v, Op::AddRowBias(x, b))
    }

    /// `x @ w + b` for `x: (N,K)`, `w: (K,M)`, `b: (M)`.
    pub fn linear(&mut self, x: Tx, w: Tx, b: Tx) -> Tx {
        let y = self.matmul(x, w);
        self.add_row_bias(y, b)
    }

    pub fn add_channel_bias(&mut self, x: Tx, b: Tx) -> Tx {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix3>()
            .expect("channel bias target 3-D");
        let bv = self
            .value(b)
            .view()
            .into_dimensionality::<Ix1>()
            .expect("channel bias 1-D");
        assert_eq!(xv.dim().0, bv.dim(), "channel bias width mismatch");
        let mut v = xv.to_owned();
        for (c, mut plane) in v.outer_iter_mut().enumerate() {
            plane += bv[c];
        }
        self.push(v.into_dyn(), Op::AddChannelBias(x, b))
    }

    // ---- structured ops ----------------------------------------------------

    /// Convolution over `(C,H,W)` with weight `(Cout,Cin,kh,kw)`.
    pub fn conv2d(&mut self, x: Tx, w: Tx, bias: Option<Tx>, stride: usize, pad: usize) -> Tx {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix3>()
            .expect("conv input 3-D");
        let wv = self
            .value(w)
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv weight 4-D");
        let v = kernels::conv2d(&xv, &wv, stride, pad).into_dyn();
        let y = self.push(v, Op::Conv2d { x, w, stride, pad });
        match bias {
            Some(b) => self.add_channel_bias(y, b),
            None => y,
        }
    }

    pub fn group_norm(&mut self, x: Tx, gamma: Tx, beta: Tx, groups: usize) -> Tx {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix3>()
            .expect("group norm input 3-D");
        let g = self
            .value(gamma)
            .view()
            .into_dimensionality::<Ix1>()
            .expect("gamma 1-D")
            .to_owned();
        let b = self
            .value(beta)
            .view()
            .into_dimensionality::<Ix1>()
            .expect("beta 1-D")
            .to_owned();
        let (v, cache) = kernels::group_norm(&xv, groups, &g, &b, 1e-5);
        self.push(
            v.into_dyn(),
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                cache,
            },
        )
    }

    pub fn upsample2(&mut self, x: Tx) -> Tx {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix3>()
            .expect("upsample input 3-D");
        let v = kernels::upsample_nearest2(&xv).into_dyn();
        self.push(v, Op::Upsample2(x))
    }

    pub fn roi_align(&mut self, x: Tx, rois: Vec<[f64; 4]>, scale: f64, pool: usize) -> Tx {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix3>()
            .expect("roi align input 3-D");
        let v = kernels::roi_align(&xv, &rois, scale, pool).into_dyn();
        self.push(
            v,
            Op::RoiAlign {
                x,
                rois,
                scale,
                pool,
            },
        )
    }

    /// Concatenates `(C_i, H, W)` maps along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Tx]) -> Tx {
        assert!(!parts.is_empty());
        let (h, w) = {
            let s = self.shape(parts[0]);
            (s[1], s[2])
        };
        let mut total_c = 0;
        for &p in parts {
            let s = self.shape(p);
            assert_eq!((s[1], s[2]), (h, w), "concat spatial mismatch");
            total_c += s[0];
        }
        let mut v = ndarray::Array3::<f64>::zeros((total_c, h, w));
        let mut at = 0;
        for &p in parts {
            let pv = self
                .value(p)
                .view()
                .into_dimensionality::<Ix3>()
                .unwrap();
            let c = pv.dim().0;
            v.slice_mut(ndarray::s![at..at + c, .., ..]).assign(&pv);
            at += c;
        }
        self.push(v.into_dyn(), Op::ConcatChannels(parts.to_vec()))
    }

    pub fn reshape(&mut self, x: Tx, shape: &[usize]) -> Tx {
        let v = self.value(x);
        assert_eq!(v.len(), shape.iter().product::<usize>(), "reshape size");
        let owned = v.as_standard_layout().to_owned();
        let reshaped = owned.into_shape_with_order(IxDyn(shape)).unwrap();
        self.push(reshaped, Op::Reshape(x))
    }

    pub fn gather_rows(&mut self, x: Tx, rows: Vec<usize>) -> Tx {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("gather_rows input 2-D");
        let m = xv.dim().1;
        let mut v = ndarray::Array2::zeros((rows.len(), m));
        for (dst, &src) in rows.iter().enumerate() {
            v.row_mut(dst).assign(&xv.row(src));
        }
        self.push(v.into_dyn(), Op::GatherRows { x, rows })
    }

    pub fn gather_row_cols(&mut self, x: Tx, picks: Vec<(usize, usize)>) -> Tx {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("gather_row_cols input 2-D");
        let mut v = ndarray::Array1::zeros(picks.len());
        for (i, &(r, c)) in picks.iter().enumerate() {
            v[i] = xv[(r, c)];
        }
        self.push(v.into_dyn(), Op::GatherRowCols { x, picks })
    }

    pub fn log_softmax_rows(&mut self, x: Tx) -> Tx {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("log_softmax input 2-D");
        let v = kernels::log_softmax_rows(&xv).into_dyn();
        self.push(v, Op::LogSoftmaxRows(x))
    }

    pub fn sum_axis1(&mut self, x: Tx) -> Tx {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("sum_axis1 input 2-D");
        let v = xv.sum_axis(ndarray::Axis(1)).into_dyn();
        self.push(v, Op::SumAxis1(x))
    }

    pub fn sum(&mut self, x: Tx) -> Tx {
        let s = self.value(x).sum();
        self.push(Arr::from_elem(IxDyn(&[1]), s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Tx) -> Tx {
        let v = self.value(x);
        assert!(!v.is_empty(), "mean of empty tensor");
        let m = v.sum() / v.len() as f64;
        self.push(Arr::from_elem(IxDyn(&[1]), m), Op::Mean(x))
    }

    /// Mean squared difference between two same-shape tensors.
    pub fn mse(&mut self, a: Tx, b: Tx) -> Tx {
        let d = self.sub(a, b);
        let d2 = self.square(d);
        self.mean(d2)
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse pass from a scalar loss; returns parameter gradients.
    pub fn backward(&self, loss: Tx) -> GradStore {
        let mut grads: Vec<Option<Arr>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        let lv = self.value(loss);
        assert_eq!(lv.len(), 1, "backward needs a scalar loss");
        grads[loss.0] = Some(Arr::ones(lv.raw_dim()));
        let mut store = GradStore::zeros(self.params);

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(pid) => store.accumulate(*pid, g),
                Op::Add(a, b) => {
                    add_grad(&mut grads, *a, g.clone());
                    add_grad(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads, *a, g.clone());
                    add_grad(&mut grads, *b, g.mapv(|v| -v));
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => add_grad(&mut grads, *a, g.mapv(|v| v * c)),
                Op::AddScalar(a, _) => add_grad(&mut grads, *a, g),
                Op::Unary(a, kind) => {
                    let x = self.value(*a);
                    let y = match &self.nodes[i].value {
                        Value::Owned(v) => v,
                        Value::Param(_) => unreachable!(),
                    };
                    let mut dx = g.clone();
                    ndarray::Zip::from(&mut dx)
                        .and(x)
                        .and(y)
                        .for_each(|d, &xv, &yv| *d *= unary_derivative(kind, xv, yv));
                    add_grad(&mut grads, *a, dx);
                }
                Op::MatMul(a, b) => {
                    let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                    let av = self.value(*a).view().into_dimensionality::<Ix2>().unwrap();
                    let bv = self.value(*b).view().into_dimensionality::<Ix2>().unwrap();
                    add_grad(&mut grads, *a, gv.dot(&bv.t()).into_dyn());
                    add_grad(&mut grads, *b, av.t().dot(&gv).into_dyn());
                }
                Op::AddRowBias(x, b) => {
                    let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                    let db = gv.sum_axis(ndarray::Axis(0)).into_dyn();
                    add_grad(&mut grads, *x, g.clone());
                    add_grad(&mut grads, *b, db);
                }
                Op::AddChannelBias(x, b) => {
                    let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                    let c = gv.dim().0;
                    let mut db = ndarray::Array1::zeros(c);
                    for (ci, plane) in gv.outer_iter().enumerate() {
                        db[ci] = plane.sum();
                    }
                    add_grad(&mut grads, *x, g.clone());
                    add_grad(&mut grads, *b, db.into_dyn());
                }
                Op::Conv2d { x, w, stride, pad } => {
                    let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                    let xv = self.value(*x).view().into_dimensionality::<Ix3>().unwrap();
                    let wv = self.value(*w).view().into_dimensionality::<Ix4>().unwrap();
                    let (_, in_h, in_w) = xv.dim();
                    let (_, _, kh, kw) = wv.dim();
                    let dx =
                        kernels::conv2d_backward_input(&gv, &wv, in_h, in_w, *stride, *pad);
                    let dw = kernels::conv2d_backward_weight(&gv, &xv, kh, kw, *stride, *pad);
                    add_grad(&mut grads, *x, dx.into_dyn());
                    add_grad(&mut grads, *w, dw.into_dyn());
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    cache,
                } => {
                    let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                    let xv = self.value(*x).view().into_dimensionality::<Ix3>().unwrap();
                    let ga = self
                        .value(*gamma)
                        .view()
                        .into_dimensionality::<Ix1>()
                        .unwrap()
                        .to_owned();
                    let (dx, dgamma, dbeta) =
                        kernels::group_norm_backward(&gv, &xv, *groups, &ga, cache);
                    add_grad(&mut grads, *x, dx.into_dyn());
                    add_grad(&mut grads, *gamma, dgamma.into_dyn());
                    add_grad(&mut grads, *beta, dbeta.into_dyn());
                }
                Op::Upsample2(x) => {
                    let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                    add_grad(
                        &mut grads,
                        *x,
                        kernels::upsample_nearest2_backward(&gv).into_dyn(),
                    );
                }
                Op::RoiAlign {
                    x,
                    rois,
                    scale,
                    pool,
                } => {
                    let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                    let xv = self.value(*x).view().into_dimensionality::<Ix3>().unwrap();
                    let (c, h, w) = xv.dim();
                    let dx =
                        kernels::roi_align_backward(&gv, c, h, w, rois, *scale, *pool);
                    add_grad(&mut grads, *x, dx.into_dyn());
                }
                Op::ConcatChannels(parts) => {
                    let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                    let mut at = 0;
                    for &p in parts {
                        let c = self.shape(p)[0];
                        let slice = gv.slice(ndarray::s![at..at + c, .., ..]).to_owned();
                        add_grad(&mut grads, p, slice.into_dyn());
                        at += c;
                    }
                }
                Op::Reshape(x) => {
                    let target = self.value(*x).raw_dim();
                    let back = g
                        .as_standard_layout()
                        .to_owned()
                        .into_shape_with_order(target)
                        .unwrap();
                    add_grad(&mut grads, *x, back);
                }
                Op::GatherRows { x, rows } => {
                    let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                    let xs = self.value(*x).shape().to_vec();
                    let mut dx = ndarray::Array2::zeros((xs[0], xs[1]));
                    for (src, &dst) in rows.iter().enumerate() {
                        let mut row = dx.row_mut(dst);
                        row += &gv.row(src);
                    }
                    add_grad(&mut grads, *x, dx.into_dyn());
                }
                Op::GatherRowCols { x, picks } => {
                    let gv = g.view().into_dimensionality::<Ix1>().unwrap();
                    let xs = self.value(*x).shape().to_vec();
                    let mut dx = ndarray::Array2::zeros((xs[0], xs[1]));
                    for (i, &(r, c)) in picks.iter().enumerate() {
                        dx[(r, c)] += gv[i];
                    }
                    add_grad(&mut grads, *x, dx.into_dyn());
                }
                Op::LogSoftmaxRows(x) => {
                    let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                    let y = match &self.nodes[i].value {
                        Value::Owned(v) => v.view().into_dimensionality::<Ix2>().unwrap(),
                        Value::Param(_) => unreachable!(),
                    };
                    let mut dx = gv.to_owned();
                    for (mut drow, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let gsum: f64 = drow.sum();
                        for (d, &ly) in drow.iter_mut().zip(yrow.iter()) {
                            *d -= ly.exp() * gsum;
                        }
                    }
                    add_grad(&mut grads, *x, dx.into_dyn());
                }
                Op::SumAxis1(x) => {
                    let gv = g.view().into_dimensionality::<Ix1>().unwrap();
                    let xs = self.value(*x).shape().to_vec();
                    let mut dx = ndarray::Array2::zeros((xs[0], xs[1]));
                    for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
                        row.fill(gv[r]);
                    }
                    add_grad(&mut grads, *x, dx.into_dyn());
                }
                Op::Sum(x) => {
                    let gs = g.iter().next().copied().unwrap();
                    let dx = Arr::from_elem(self.value(*x).raw_dim(), gs);
                    add_grad(&mut grads, *x, dx);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len() as f64;
                    let gs = g.iter().next().copied().unwrap() / n;
                    let dx = Arr::from_elem(self.value(*x).raw_dim(), gs);
                    add_grad(&mut grads, *x, dx);
                }
            }
        }
        store
    }
}

fn add_grad(grads: &mut [Option<Arr>], t: Tx, g: Arr) {
    match &mut grads[t.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn unary_forward(kind: &UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Relu => x.max(0.0),
        UnaryKind::Silu => x * sigmoid(x),
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Abs => x.abs(),
        UnaryKind::Square => x * x,
        UnaryKind::Softplus => softplus(x),
        UnaryKind::Huber(beta) => {
            let a = x.abs();
            if a < *beta {
                0.5 * x * x / beta
            } else {
                a - 0.5 * beta
            }
        }
    }
}

fn unary_derivative(kind: &UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Silu => {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        }
        UnaryKind::Sigmoid => y * (1.0 - y),
        UnaryKind::Exp => y,
        UnaryKind::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryKind::Square => 2.0 * x,
        UnaryKind::Softplus => sigmoid(x),
        UnaryKind::Huber(beta) => (x / beta).clamp(-1.0, 1.0),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn scalar_chain_gradient() {
        // f(w) = mean((w * 2 + 1)^2), w = [1, 2] -> f = ((3)^2 + (5)^2)/2 = 17
        // df/dw_i = 2 * (2 w_i + 1) * 2 / 2 = 2(2w+1)
        let mut ps = ParamSet::new();
        let w = ps.add("w", arr1(&[1.0, 2.0]).into_dyn());
        let mut tape = Tape::new(&ps);
        let wt = tape.param(w);
        let x = tape.scale(wt, 2.0);
        let x = tape.add_scalar(x, 1.0);
        let x = tape.square(x);
        let loss = tape.mean(x);
        assert!((tape.scalar(loss) - 17.0).abs() < 1e-12);
        let grads = tape.backward(loss);
        let gw = grads.get(w).unwrap();
        assert!((gw[[0]] - 6.0).abs() < 1e-12);
        assert!((gw[[1]] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn matmul_gradient_matches_hand_calc() {
        // loss = sum(A @ B); dA = ones @ B^T, dB = A^T @ ones
        let mut ps = ParamSet::new();
        let a = ps.add("a", arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        let b = ps.add("b", arr2(&[[5.0, 6.0], [7.0, 8.0]]).into_dyn());
        let mut tape = Tape::new(&ps);
        let at = tape.param(a);
        let bt = tape.param(b);
        let c = tape.matmul(at, bt);
        let loss = tape.sum(c);
        let grads = tape.backward(loss);
        let da = grads.get(a).unwrap();
        // row sums of B
        assert!((da[[0, 0]] - 11.0).abs() < 1e-12);
        assert!((da[[0, 1]] - 15.0).abs() < 1e-12);
        let db = grads.get(b).unwrap();
        // column sums of A
        assert!((db[[0, 0]] - 4.0).abs() < 1e-12);
        assert!((db[[1, 0]] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn shared_param_accumulates_both_paths() {
        // loss = mean(w) + mean(w^2): dw = 1/n + 2w/n
        let mut ps = ParamSet::new();
        let w = ps.add("w", arr1(&[3.0, -1.0]).into_dyn());
        let mut tape = Tape::new(&ps);
        let wt = tape.param(w);
        let m1 = tape.mean(wt);
        let sq = tape.square(wt);
        let m2 = tape.mean(sq);
        let loss = tape.add(m1, m2);
        let grads = tape.backward(loss);
        let gw = grads.get(w).unwrap();
        assert!((gw[[0]] - (0.5 + 3.0)).abs() < 1e-12);
        assert!((gw[[1]] - (0.5 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn constants_receive_no_parameter_gradient() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", arr1(&[1.0]).into_dyn());
        let mut tape = Tape::new(&ps);
        let wt = tape.param(w);
        let c = tape.constant(arr1(&[10.0]).into_dyn());
        let y = tape.mul(wt, c);
        let loss = tape.sum(y);
        let grads = tape.backward(loss);
        assert!((grads.get(w).unwrap()[[0]] - 10.0).abs() < 1e-12);
    }
}
