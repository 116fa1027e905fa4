//! Reverse-mode automatic differentiation over row-major token matrices.
//!
//! A [`Tape`] records operations on 2-D arrays (rows are tokens) and reads parameters
//! straight from a [`ParamStore`]. The fused attention, layer-norm and loss nodes keep
//! what their backward passes need, so the graph stays short.

use ndarray::{s, Array2, ArrayView2, Axis};

/// Named parameter matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect()
    }
}

pub type Var = usize;

const LN_EPS: f64 = 1e-5;

enum Op {
    Param(usize),
    Input,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Array2<f64>>,
    },
    ConcatRows(Vec<Var>),
    Rows(Var, usize),
    Cols(Var, usize),
    Scale(Var, f64),
    MaskedL1 {
        pred: Var,
        target: Array2<f64>,
        mask: Vec<bool>,
        count: f64,
    },
    Kl(Var, Var),
    Reparam {
        mu: Var,
        logvar: Var,
        eps: Array2<f64>,
    },
}

struct Node {
    /// `None` for parameters, whose values live in the store.
    value: Option<Array2<f64>>,
    op: Op,
}

pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn add_into(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
    match slot {
        Some(g) => *g += &delta,
        None => *slot = Some(delta),
    }
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        match (&self.nodes[v].op, &self.nodes[v].value) {
            (Op::Param(p), _) => self.params.values[*p].view(),
            (_, Some(x)) => x.view(),
            _ => unreachable!("non-parameter nodes carry values"),
        }
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        self.nodes.len() - 1
    }

    pub fn param(&mut self, p: usize) -> Var {
        if let Some(v) = self.param_nodes[p] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(p),
        });
        let v = self.nodes.len() - 1;
        self.param_nodes[p] = Some(v);
        v
    }

    pub fn input(&mut self, x: Array2<f64>) -> Var {
        self.push(x, Op::Input)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(&self.value(b));
        self.push(y, Op::MatMul(a, b))
    }

    /// Adds a 1×m row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let y = &self.value(a) + &self.value(row);
        self.push(y, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shapes");
        let y = &self.value(a) + &self.value(b);
        self.push(y, Op::Add(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|x| x.max(0.0));
        self.push(y, Op::Relu(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let y = &self.value(a) * s;
        self.push(y, Op::Scale(a, s))
    }

    /// `x·W + b` with `W` d_in×d_out and `b` 1×d_out.
    pub fn linear(&mut self, x: Var, w: usize, b: usize) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    /// Per-row normalization with learned 1×m gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: usize, beta: usize) -> Var {
        let gamma = self.param(gamma);
        let beta = self.param(beta);
        let xv = self.value(x);
        let (n, m) = xv.dim();
        let mut xhat = Array2::zeros((n, m));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let y = &(&xhat * &self.value(gamma)) + &self.value(beta);
        self.push(
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product attention of already projected `q`, `k`, `v`.
    /// Keys with `key_mask[j] == false` receive no attention.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, key_mask: Option<&[bool]>) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (nq, d) = qv.dim();
        let nk = kv.nrows();
        assert_eq!(d % heads, 0, "width divisible by heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((nq, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut sc = qv.slice(cols).dot(&kv.slice(cols).t()) * scale;
            for mut row in sc.rows_mut() {
                if let Some(mask) = key_mask {
                    for (x, keep) in row.iter_mut().zip(mask) {
                        if !keep {
                            *x = f64::NEG_INFINITY;
                        }
                    }
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    sum += *x;
                }
                row /= sum;
            }
            out.slice_mut(cols).assign(&sc.dot(&vv.slice(cols)));
            debug_assert_eq!(sc.ncols(), nk);
            probs.push(sc);
        }
        self.push(out, Op::Attention { q, k, v, heads, probs })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("concat widths match");
        self.push(y, Op::ConcatRows(parts.to_vec()))
    }

    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let y = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(y, Op::Rows(a, start))
    }

    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let y = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(y, Op::Cols(a, start))
    }

    /// Mean absolute error over the rows with `mask[i] == true`.
    pub fn masked_l1(&mut self, pred: Var, target: Array2<f64>, mask: &[bool]) -> Var {
        let p = self.value(pred);
        assert_eq!(p.dim(), target.dim(), "l1 shapes");
        let valid = mask.iter().filter(|m| **m).count();
        let count = (valid * p.ncols()).max(1) as f64;
        let mut sum = 0.0;
        for (i, keep) in mask.iter().enumerate() {
            if *keep {
                sum += p.row(i).iter().zip(target.row(i)).map(|(a, b)| (a - b).abs()).sum::<f64>();
            }
        }
        let y = Array2::from_elem((1, 1), sum / count);
        self.push(
            y,
            Op::MaskedL1 {
                pred,
                target,
                mask: mask.to_vec(),
                count,
            },
        )
    }

    /// KL divergence of the diagonal Gaussian (1×L mean and log-variance) from the
    /// standard normal, summed over dimensions.
    pub fn kl(&mut self, mu: Var, logvar: Var) -> Var {
        let k = gaussian_kl(
            self.value(mu).as_slice().expect("row"),
            self.value(logvar).as_slice().expect("row"),
        );
        self.push(Array2::from_elem((1, 1), k), Op::Kl(mu, logvar))
    }

    /// `mu + exp(logvar/2)·eps`.
    pub fn reparam(&mut self, mu: Var, logvar: Var, eps: Array2<f64>) -> Var {
        let std = self.value(logvar).mapv(|l| (0.5 * l).exp());
        let y = &self.value(mu) + &(&std * &eps);
        self.push(y, Op::Reparam { mu, logvar, eps })
    }

    /// Gradients of the 1×1 node `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Vec<Array2<f64>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Array2::ones((1, 1)));
        let mut out = self.params.zeros_like();
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Param(p) => out[*p] += &g,
                Op::Input => {}
                Op::MatMul(a, b) => {
                    add_into(&mut grads[*a], g.dot(&self.value(*b).t()));
                    add_into(&mut grads[*b], self.value(*a).t().dot(&g));
                }
                Op::AddRow(a, row) => {
                    add_into(&mut grads[*row], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    add_into(&mut grads[*a], g);
                }
                Op::Add(a, b) => {
                    add_into(&mut grads[*b], g.clone());
                    add_into(&mut grads[*a], g);
                }
                Op::Relu(a) => {
                    let y = self.nodes[id].value.as_ref().expect("value");
                    let mut d = g;
                    d.zip_mut_with(y, |gv, yv| {
                        if *yv <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    add_into(&mut grads[*a], d);
                }
                Op::Scale(a, s) => add_into(&mut grads[*a], g * *s),
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    add_into(&mut grads[*gamma], (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    add_into(&mut grads[*beta], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let gx_hat = &g * &self.value(*gamma);
                    let m = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.raw_dim());
                    for i in 0..xhat.nrows() {
                        let gr = gx_hat.row(i);
                        let xr = xhat.row(i);
                        let mean_g = gr.sum() / m;
                        let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / m;
                        for ((o, gv), xv) in dx.row_mut(i).iter_mut().zip(gr).zip(xr) {
                            *o = inv_std[i] * (gv - mean_g - xv * mean_gx);
                        }
                    }
                    add_into(&mut grads[*x], dx);
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qv.ncols();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Array2::zeros(qv.raw_dim());
                    let mut gk = Array2::zeros(kv.raw_dim());
                    let mut gv = Array2::zeros(vv.raw_dim());
                    for (h, p) in probs.iter().enumerate() {
                        let cols = s![.., h * dh..(h + 1) * dh];
                        let go = g.slice(cols);
                        let gp = go.dot(&vv.slice(cols).t());
                        gv.slice_mut(cols).assign(&p.t().dot(&go));
                        let mut gs = gp;
                        for (mut gr, pr) in gs.rows_mut().into_iter().zip(p.rows()) {
                            let dot: f64 = gr.iter().zip(pr).map(|(a, b)| a * b).sum();
                            gr.zip_mut_with(&pr, |a, b| *a = b * (*a - dot));
                        }
                        gq.slice_mut(cols).assign(&(gs.dot(&kv.slice(cols)) * scale));
                        gk.slice_mut(cols).assign(&(gs.t().dot(&qv.slice(cols)) * scale));
                    }
                    add_into(&mut grads[*q], gq);
                    add_into(&mut grads[*k], gk);
                    add_into(&mut grads[*v], gv);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).nrows();
                        add_into(&mut grads[p], g.slice(s![start..start + n, ..]).to_owned());
                        start += n;
                    }
                }
                Op::Rows(a, start) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    add_into(&mut grads[*a], d);
                }
                Op::Cols(a, start) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    add_into(&mut grads[*a], d);
                }
                Op::MaskedL1 {
                    pred,
                    target,
                    mask,
                    count,
                } => {
                    let p = self.value(*pred);
                    let gs = g[[0, 0]] / count;
                    let mut d = Array2::zeros(p.raw_dim());
                    for (i, keep) in mask.iter().enumerate() {
                        if *keep {
                            for ((o, a), b) in d.row_mut(i).iter_mut().zip(p.row(i)).zip(target.row(i)) {
                                *o = gs * sign(a - b);
                            }
                        }
                    }
                    add_into(&mut grads[*pred], d);
                }
                Op::Kl(mu, logvar) => {
                    let gs = g[[0, 0]];
                    add_into(&mut grads[*mu], self.value(*mu).mapv(|m| gs * m));
                    add_into(&mut grads[*logvar], self.value(*logvar).mapv(|l| gs * 0.5 * (l.exp() - 1.0)));
                }
                Op::Reparam { mu, logvar, eps } => {
                    let half_std = self.value(*logvar).mapv(|l| 0.5 * (0.5 * l).exp());
                    add_into(&mut grads[*logvar], &(&g * eps) * &half_std);
                    add_into(&mut grads[*mu], g);
                }
            }
        }
        out
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Closed-form `KL(N(mu, exp(logvar)) || N(0, I))`, summed over dimensions.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, l)| 0.5 * (m * m + l.exp() - 1.0 - l))
        .sum()
}
