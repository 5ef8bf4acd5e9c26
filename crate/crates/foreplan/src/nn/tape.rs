//! Eager tape autodiff over [`Tensor`] values.
//!
//! Each op computes its forward result immediately and records enough
//! state to run an exact analytic backward pass. Graphs are built per
//! forward call and dropped afterwards; parameter gradients accumulate
//! into a [`ParamStore`](crate::nn::ParamStore).

use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Id(pub(crate) usize);

const GELU_C0: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_C1: f32 = 0.044_715;

enum Op {
    Leaf,
    Matmul(Id, Id),
    AddScaled(Id, Id, f32, f32),
    AddRow(Id, Id),
    Scale(Id, f32),
    ConcatRows(Id, Id),
    SliceRows(Id, usize, usize),
    Reshape(Id),
    GatherRows(Id, Vec<usize>),
    LayerNorm {
        x: Id,
        gamma: Id,
        beta: Id,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
    },
    Gelu(Id),
    Attention {
        q: Id,
        k: Id,
        v: Id,
        heads: usize,
        attn: Vec<f32>, // [heads, m, n] row-major
    },
    Detach,
    MseLoss {
        pred: Id,
        target: Tensor,
    },
    CrossEntropy {
        logits: Id,
        targets: Vec<usize>,
        probs: Vec<f32>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
    scalar_f64: Option<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Id {
        self.push_full(value, op, None, None)
    }

    fn push_full(
        &mut self,
        value: Tensor,
        op: Op,
        param: Option<String>,
        scalar_f64: Option<f64>,
    ) -> Id {
        self.nodes.push(Node {
            value,
            op,
            param,
            scalar_f64,
        });
        Id(self.nodes.len() - 1)
    }

    pub fn value(&self, id: Id) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: Id) -> f32 {
        assert_eq!(self.nodes[id.0].value.numel(), 1, "scalar() on non-scalar");
        self.nodes[id.0].value.data[0]
    }

    /// Exact double-precision value of a reduction node, where available.
    /// Finite-difference checks use this to avoid f32 rounding of the loss.
    pub fn scalar_f64(&self, id: Id) -> f64 {
        self.nodes[id.0]
            .scalar_f64
            .unwrap_or_else(|| self.scalar(id) as f64)
    }

    /// Constant leaf: participates in forward only.
    pub fn constant(&mut self, t: Tensor) -> Id {
        self.push(t, Op::Leaf)
    }

    /// Parameter leaf bound to a named entry of `store`. The backward pass
    /// accumulates this leaf's gradient into the store.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Id {
        let t = store.value(name).clone();
        self.push_full(t, Op::Leaf, Some(name.to_string()), None)
    }

    pub fn matmul(&mut self, a: Id, b: Id) -> Id {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = (ta.shape[0], ta.shape[1]);
        let (k2, n) = (tb.shape[0], tb.shape[1]);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ta.data[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &tb.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        self.push(Tensor { shape: vec![m, n], data: out }, Op::Matmul(a, b))
    }

    /// `ca * a + cb * b`, elementwise over identical shapes.
    pub fn add_scaled(&mut self, a: Id, b: Id, ca: f32, cb: f32) -> Id {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape, tb.shape, "add_scaled shape mismatch");
        let data: Vec<f32> = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(x, y)| ca * x + cb * y)
            .collect();
        let shape = ta.shape.clone();
        let f64v = match (self.nodes[a.0].scalar_f64, self.nodes[b.0].scalar_f64) {
            (Some(x), Some(y)) => Some(ca as f64 * x + cb as f64 * y),
            _ => None,
        };
        self.push_full(Tensor { shape, data }, Op::AddScaled(a, b, ca, cb), None, f64v)
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        self.add_scaled(a, b, 1.0, 1.0)
    }

    /// Broadcast-add a length-n row vector to every row of an [m, n] matrix.
    pub fn add_row(&mut self, a: Id, row: Id) -> Id {
        let (ta, tr) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        let n = *ta.shape.last().unwrap();
        assert_eq!(tr.numel(), n, "add_row width mismatch");
        let mut data = ta.data.clone();
        for (i, v) in data.iter_mut().enumerate() {
            *v += tr.data[i % n];
        }
        let shape = ta.shape.clone();
        self.push(Tensor { shape, data }, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Id, c: f32) -> Id {
        let ta = &self.nodes[a.0].value;
        let data: Vec<f32> = ta.data.iter().map(|x| c * x).collect();
        let shape = ta.shape.clone();
        let f64v = self.nodes[a.0].scalar_f64.map(|x| c as f64 * x);
        self.push_full(Tensor { shape, data }, Op::Scale(a, c), None, f64v)
    }

    pub fn concat_rows(&mut self, a: Id, b: Id) -> Id {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape[1], tb.shape[1], "concat_rows width mismatch");
        let mut data = ta.data.clone();
        data.extend_from_slice(&tb.data);
        let shape = vec![ta.shape[0] + tb.shape[0], ta.shape[1]];
        self.push(Tensor { shape, data }, Op::ConcatRows(a, b))
    }

    pub fn slice_rows(&mut self, a: Id, start: usize, len: usize) -> Id {
        let ta = &self.nodes[a.0].value;
        let n = ta.shape[1];
        assert!(start + len <= ta.shape[0], "slice_rows out of range");
        let data = ta.data[start * n..(start + len) * n].to_vec();
        self.push(Tensor { shape: vec![len, n], data }, Op::SliceRows(a, start, len))
    }

    pub fn reshape(&mut self, a: Id, shape: Vec<usize>) -> Id {
        let ta = &self.nodes[a.0].value;
        assert_eq!(
            ta.numel(),
            shape.iter().product::<usize>(),
            "reshape numel mismatch"
        );
        let data = ta.data.clone();
        self.push(Tensor { shape, data }, Op::Reshape(a))
    }

    pub fn gather_rows(&mut self, table: Id, idx: &[usize]) -> Id {
        let tt = &self.nodes[table.0].value;
        let n = tt.shape[1];
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            assert!(i < tt.shape[0], "gather_rows index {i} out of range");
            data.extend_from_slice(&tt.data[i * n..(i + 1) * n]);
        }
        self.push(
            Tensor { shape: vec![idx.len(), n], data },
            Op::GatherRows(table, idx.to_vec()),
        )
    }

    /// Per-row standardization with learned scale/shift. Statistics use the
    /// population variance and accumulate in f64.
    pub fn layer_norm(&mut self, x: Id, gamma: Id, beta: Id, eps: f32) -> Id {
        let tx = &self.nodes[x.0].value;
        let (m, d) = (tx.shape[0], tx.shape[1]);
        let tg = &self.nodes[gamma.0].value;
        let tb = &self.nodes[beta.0].value;
        assert_eq!(tg.numel(), d, "layer_norm gamma width");
        assert_eq!(tb.numel(), d, "layer_norm beta width");
        let mut out = vec![0.0f32; m * d];
        let mut xhat = vec![0.0f32; m * d];
        let mut inv_std = vec![0.0f32; m];
        for i in 0..m {
            let row = &tx.data[i * d..(i + 1) * d];
            let mut sum = 0.0f64;
            for &v in row {
                sum += v as f64;
            }
            let mean = sum / d as f64;
            let mut var = 0.0f64;
            for &v in row {
                let c = v as f64 - mean;
                var += c * c;
            }
            var /= d as f64;
            let inv = 1.0 / (var + eps as f64).sqrt();
            inv_std[i] = inv as f32;
            for j in 0..d {
                let xh = ((row[j] as f64 - mean) * inv) as f32;
                xhat[i * d + j] = xh;
                out[i * d + j] = tg.data[j] * xh + tb.data[j];
            }
        }
        self.push(
            Tensor { shape: vec![m, d], data: out },
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
        )
    }

    pub fn gelu(&mut self, a: Id) -> Id {
        let ta = &self.nodes[a.0].value;
        let data: Vec<f32> = ta
            .data
            .iter()
            .map(|&x| {
                let u = GELU_C0 * (x + GELU_C1 * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            })
            .collect();
        let shape = ta.shape.clone();
        self.push(Tensor { shape, data }, Op::Gelu(a))
    }

    /// Scaled dot-product attention with `heads` column blocks and per-row
    /// softmax normalized in f64. Projections live outside this op.
    pub fn attention(&mut self, q: Id, k: Id, v: Id, heads: usize) -> Id {
        let (tq, tk, tv) = (
            &self.nodes[q.0].value,
            &self.nodes[k.0].value,
            &self.nodes[v.0].value,
        );
        let (m, d) = (tq.shape[0], tq.shape[1]);
        let n = tk.shape[0];
        assert!(n >= 1, "attention over empty context");
        assert_eq!(tk.shape[1], d, "attention key width");
        assert_eq!(tv.shape, tk.shape, "attention value shape");
        assert_eq!(d % heads, 0, "width {d} not divisible by {heads} heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut out = vec![0.0f32; m * d];
        let mut attn = vec![0.0f32; heads * m * n];
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..m {
                // logits for row i, head h
                let mut logits = vec![0.0f32; n];
                for (j, lj) in logits.iter_mut().enumerate() {
                    let mut s = 0.0f32;
                    for c in 0..dh {
                        s += tq.data[i * d + c0 + c] * tk.data[j * d + c0 + c];
                    }
                    *lj = s * scale;
                }
                let maxv = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let mut z = 0.0f64;
                let mut ex = vec![0.0f64; n];
                for j in 0..n {
                    let e = ((logits[j] - maxv) as f64).exp();
                    ex[j] = e;
                    z += e;
                }
                for j in 0..n {
                    let w = (ex[j] / z) as f32;
                    attn[(h * m + i) * n + j] = w;
                    for c in 0..dh {
                        out[i * d + c0 + c] += w * tv.data[j * d + c0 + c];
                    }
                }
            }
        }
        self.push(
            Tensor { shape: vec![m, d], data: out },
            Op::Attention { q, k, v, heads, attn },
        )
    }

    /// Attention weights of an [`attention`](Self::attention) node as
    /// `[heads * m, n]` rows. Test/introspection hook.
    pub fn attention_weights(&self, id: Id) -> Option<Tensor> {
        match &self.nodes[id.0].op {
            Op::Attention { q, k, heads, attn, .. } => {
                let m = self.nodes[q.0].value.shape[0];
                let n = self.nodes[k.0].value.shape[0];
                Some(Tensor {
                    shape: vec![heads * m, n],
                    data: attn.clone(),
                })
            }
            _ => None,
        }
    }

    /// Identity forward; blocks gradient flow.
    pub fn detach(&mut self, a: Id) -> Id {
        let t = self.nodes[a.0].value.clone();
        self.push(t, Op::Detach)
    }

    /// Mean squared error against a constant target. Scalar output.
    pub fn mse_loss(&mut self, pred: Id, target: &Tensor) -> Id {
        let tp = &self.nodes[pred.0].value;
        assert_eq!(tp.shape, target.shape, "mse_loss shape mismatch");
        let mut acc = 0.0f64;
        for (p, t) in tp.data.iter().zip(&target.data) {
            let d = (*p - *t) as f64;
            acc += d * d;
        }
        let mean = acc / tp.numel() as f64;
        self.push_full(
            Tensor::scalar(mean as f32),
            Op::MseLoss { pred, target: target.clone() },
            None,
            Some(mean),
        )
    }

    /// Mean negative log-likelihood over rows; softmax normalized in f64.
    pub fn cross_entropy(&mut self, logits: Id, targets: &[usize]) -> Id {
        let tl = &self.nodes[logits.0].value;
        let (m, c) = (tl.shape[0], tl.shape[1]);
        assert_eq!(targets.len(), m, "cross_entropy target count");
        let mut probs = vec![0.0f32; m * c];
        let mut acc = 0.0f64;
        for i in 0..m {
            let row = &tl.data[i * c..(i + 1) * c];
            let maxv = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0f64;
            let mut ex = vec![0.0f64; c];
            for j in 0..c {
                let e = ((row[j] - maxv) as f64).exp();
                ex[j] = e;
                z += e;
            }
            let t = targets[i];
            assert!(t < c, "cross_entropy target {t} out of range");
            acc -= (ex[t] / z).ln();
            for j in 0..c {
                probs[i * c + j] = (ex[j] / z) as f32;
            }
        }
        let mean = acc / m as f64;
        self.push_full(
            Tensor::scalar(mean as f32),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            None,
            Some(mean),
        )
    }

    /// Reverse pass from a scalar `loss` node. Gradients of parameter leaves
    /// accumulate into `store`; everything else stays on the tape.
    pub fn backward(&mut self, loss: Id, store: &mut ParamStore) {
        assert_eq!(self.nodes[loss.0].value.numel(), 1, "backward on non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(idx, &g, &mut grads);
            if let Some(name) = &self.nodes[idx].param {
                store.add_grad(name, &g);
            }
        }
    }

    fn backward_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let accum = |grads: &mut [Option<Tensor>], id: Id, delta: Tensor| {
            match &mut grads[id.0] {
                Some(existing) => {
                    for (a, b) in existing.data.iter_mut().zip(&delta.data) {
                        *a += *b;
                    }
                }
                slot => *slot = Some(delta),
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf | Op::Detach => {}
            Op::Matmul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k) = (ta.shape[0], ta.shape[1]);
                let n = tb.shape[1];
                let mut da = vec![0.0f32; m * k];
                let mut db = vec![0.0f32; k * n];
                for i in 0..m {
                    let grow = &g.data[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &tb.data[p * n..(p + 1) * n];
                        let mut s = 0.0f32;
                        for j in 0..n {
                            s += grow[j] * brow[j];
                        }
                        da[i * k + p] = s;
                    }
                    for p in 0..k {
                        let av = ta.data[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        let dbrow = &mut db[p * n..(p + 1) * n];
                        for j in 0..n {
                            dbrow[j] += av * grow[j];
                        }
                    }
                }
                accum(grads, *a, Tensor { shape: vec![m, k], data: da });
                accum(grads, *b, Tensor { shape: vec![k, n], data: db });
            }
            Op::AddScaled(a, b, ca, cb) => {
                let da = Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().map(|x| ca * x).collect(),
                };
                let db = Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().map(|x| cb * x).collect(),
                };
                accum(grads, *a, da);
                accum(grads, *b, db);
            }
            Op::AddRow(a, row) => {
                let n = self.nodes[row.0].value.numel();
                let mut dr = vec![0.0f32; n];
                for (i, v) in g.data.iter().enumerate() {
                    dr[i % n] += v;
                }
                accum(grads, *a, g.clone());
                let shape = self.nodes[row.0].value.shape.clone();
                accum(grads, *row, Tensor { shape, data: dr });
            }
            Op::Scale(a, c) => {
                let da = Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().map(|x| c * x).collect(),
                };
                accum(grads, *a, da);
            }
            Op::ConcatRows(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let n = ta.shape[1];
                let ma = ta.shape[0];
                let da = Tensor {
                    shape: ta.shape.clone(),
                    data: g.data[..ma * n].to_vec(),
                };
                let db = Tensor {
                    shape: tb.shape.clone(),
                    data: g.data[ma * n..].to_vec(),
                };
                accum(grads, *a, da);
                accum(grads, *b, db);
            }
            Op::SliceRows(a, start, len) => {
                let ta = &self.nodes[a.0].value;
                let n = ta.shape[1];
                let mut da = vec![0.0f32; ta.numel()];
                da[start * n..(start + len) * n].copy_from_slice(&g.data);
                accum(grads, *a, Tensor { shape: ta.shape.clone(), data: da });
            }
            Op::Reshape(a) => {
                let shape = self.nodes[a.0].value.shape.clone();
                accum(grads, *a, Tensor { shape, data: g.data.clone() });
            }
            Op::GatherRows(table, idx) => {
                let tt = &self.nodes[table.0].value;
                let n = tt.shape[1];
                let mut dt = vec![0.0f32; tt.numel()];
                for (i, &r) in idx.iter().enumerate() {
                    for j in 0..n {
                        dt[r * n + j] += g.data[i * n + j];
                    }
                }
                accum(grads, *table, Tensor { shape: tt.shape.clone(), data: dt });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let tx = &self.nodes[x.0].value;
                let (m, d) = (tx.shape[0], tx.shape[1]);
                let tg = &self.nodes[gamma.0].value;
                let mut dg = vec![0.0f32; d];
                let mut db = vec![0.0f32; d];
                let mut dx = vec![0.0f32; m * d];
                for i in 0..m {
                    let mut m1 = 0.0f64;
                    let mut m2 = 0.0f64;
                    for j in 0..d {
                        let gy = g.data[i * d + j];
                        let xh = xhat[i * d + j];
                        dg[j] += gy * xh;
                        db[j] += gy;
                        let gh = (gy * tg.data[j]) as f64;
                        m1 += gh;
                        m2 += gh * xh as f64;
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    let inv = inv_std[i] as f64;
                    for j in 0..d {
                        let gh = (g.data[i * d + j] * tg.data[j]) as f64;
                        dx[i * d + j] =
                            (inv * (gh - m1 - xhat[i * d + j] as f64 * m2)) as f32;
                    }
                }
                accum(grads, *x, Tensor { shape: vec![m, d], data: dx });
                let gshape = self.nodes[gamma.0].value.shape.clone();
                let bshape = self.nodes[beta.0].value.shape.clone();
                accum(grads, *gamma, Tensor { shape: gshape, data: dg });
                accum(grads, *beta, Tensor { shape: bshape, data: db });
            }
            Op::Gelu(a) => {
                let ta = &self.nodes[a.0].value;
                let data: Vec<f32> = ta
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(&x, &gy)| {
                        let u = GELU_C0 * (x + GELU_C1 * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x);
                        gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .collect();
                accum(grads, *a, Tensor { shape: ta.shape.clone(), data });
            }
            Op::Attention { q, k, v, heads, attn } => {
                let (tq, tk, tv) = (
                    &self.nodes[q.0].value,
                    &self.nodes[k.0].value,
                    &self.nodes[v.0].value,
                );
                let (m, d) = (tq.shape[0], tq.shape[1]);
                let n = tk.shape[0];
                let dh = d / heads;
                let scale = 1.0 / (dh as f32).sqrt();
                let mut dq = vec![0.0f32; m * d];
                let mut dk = vec![0.0f32; n * d];
                let mut dv = vec![0.0f32; n * d];
                for h in 0..*heads {
                    let c0 = h * dh;
                    for i in 0..m {
                        let arow = &attn[(h * m + i) * n..(h * m + i + 1) * n];
                        // dA[j] = dO_h[i] . v_h[j];  dV_h[j] += A[j] * dO_h[i]
                        let mut da = vec![0.0f32; n];
                        for j in 0..n {
                            let mut s = 0.0f32;
                            for c in 0..dh {
                                s += g.data[i * d + c0 + c] * tv.data[j * d + c0 + c];
                            }
                            da[j] = s;
                            let w = arow[j];
                            if w != 0.0 {
                                for c in 0..dh {
                                    dv[j * d + c0 + c] += w * g.data[i * d + c0 + c];
                                }
                            }
                        }
                        // softmax backward within the row
                        let mut dot = 0.0f64;
                        for j in 0..n {
                            dot += da[j] as f64 * arow[j] as f64;
                        }
                        for j in 0..n {
                            let ds = arow[j] * (da[j] - dot as f32) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            for c in 0..dh {
                                dq[i * d + c0 + c] += ds * tk.data[j * d + c0 + c];
                                dk[j * d + c0 + c] += ds * tq.data[i * d + c0 + c];
                            }
                        }
                    }
                }
                accum(grads, *q, Tensor { shape: vec![m, d], data: dq });
                accum(grads, *k, Tensor { shape: vec![n, d], data: dk });
                accum(grads, *v, Tensor { shape: vec![n, d], data: dv });
            }
            Op::MseLoss { pred, target } => {
                let tp = &self.nodes[pred.0].value;
                let c = 2.0 / tp.numel() as f32 * g.data[0];
                let data: Vec<f32> = tp
                    .data
                    .iter()
                    .zip(&target.data)
                    .map(|(p, t)| c * (p - t))
                    .collect();
                accum(grads, *pred, Tensor { shape: tp.shape.clone(), data });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let tl = &self.nodes[logits.0].value;
                let (m, c) = (tl.shape[0], tl.shape[1]);
                let s = g.data[0] / m as f32;
                let mut dl = vec![0.0f32; m * c];
                for i in 0..m {
                    for j in 0..c {
                        let one = if targets[i] == j { 1.0 } else { 0.0 };
                        dl[i * c + j] = s * (probs[i * c + j] - one);
                    }
                }
                accum(grads, *logits, Tensor { shape: vec![m, c], data: dl });
            }
        }
    }
}
