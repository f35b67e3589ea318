use std::cell::RefCell;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

type Index = Rc<Vec<usize>>;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ConcatCols(usize, usize),
    GatherRows(usize, Index),
    GatherMatVec { h: usize, rows: Index, w: usize, widx: Index },
    RowDot(usize, usize),
    MulRows(usize, usize),
    SegmentSum { x: usize, seg: Index },
    SegmentSoftmax { x: usize, seg: Index, n_seg: usize },
    Relu(usize),
    LeakyRelu(usize, f64),
    Sum(usize),
    MseLoss { pred: usize, target: Rc<Vec<f64>> },
}

#[derive(Debug)]
struct Record {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Operation log for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    records: RefCell<Vec<Record>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients indexed by the id of the leaf they belong to.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf; zeros if the loss does not depend on it.
    pub fn of(&self, v: Var<'_>) -> Vec<f64> {
        self.grads[v.id].clone().unwrap_or_else(|| vec![0.0; v.value().len()])
    }

    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads[v.id].as_deref()
    }
}

fn check_index(op: &'static str, idx: &[usize], bound: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= bound) {
        Some(i) => Err(Error::shape(op, format!("index {i} out of range for {bound} rows"))),
        None => Ok(()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&self, op: Op, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut recs = self.records.borrow_mut();
        recs.push(Record { op, value, requires_grad });
        Var { tape: self, id: recs.len() - 1 }
    }

    /// Trainable input.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sign pattern of every ReLU / LeakyReLU input; two evaluations with the
    /// same pattern lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> Vec<bool> {
        let recs = self.records.borrow();
        let mut sig = Vec::new();
        for r in recs.iter() {
            if let Op::Relu(x) | Op::LeakyRelu(x, _) = r.op {
                sig.extend(recs[x].value.values.iter().map(|&v| v > 0.0));
            }
        }
        sig
    }

    /// Smallest |input| over all ReLU / LeakyReLU applications.
    pub fn min_kink_distance(&self) -> f64 {
        let recs = self.records.borrow();
        let mut best = f64::INFINITY;
        for r in recs.iter() {
            if let Op::Relu(x) | Op::LeakyRelu(x, _) = r.op {
                for &v in &recs[x].value.values {
                    best = best.min(v.abs());
                }
            }
        }
        best
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let recs = self.records.borrow();
        let n = recs.len();
        if recs[loss.id].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", recs[loss.id].value.shape),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let rec = &recs[id];
            if !rec.requires_grad {
                continue;
            }
            backprop(&recs, &rec.op, &rec.value, &g, &mut grads);
            grads[id] = Some(g);
        }
        // Keep gradients only for leaves that asked for them.
        for (id, g) in grads.iter_mut().enumerate() {
            if !(matches!(recs[id].op, Op::Leaf) && recs[id].requires_grad) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], recs: &[Record], id: usize, f: impl FnOnce(&mut [f64])) {
    if !recs[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; recs[id].value.len()]);
    f(slot);
}

fn backprop(recs: &[Record], op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&recs[*a].value, &recs[*b].value);
            let (n, k, m) = (av.shape[0], av.shape[1], bv.shape[1]);
            accumulate(grads, recs, *a, |ga| {
                for i in 0..n {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..m {
                            s += g[i * m + j] * bv.values[p * m + j];
                        }
                        ga[i * k + p] += s;
                    }
                }
            });
            accumulate(grads, recs, *b, |gb| {
                for i in 0..n {
                    for p in 0..k {
                        let x = av.values[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for j in 0..m {
                            gb[p * m + j] += x * g[i * m + j];
                        }
                    }
                }
            });
        }
        Op::Add(a, b) => {
            for id in [*a, *b] {
                accumulate(grads, recs, id, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
        }
        Op::AddRow(a, b) => {
            let cols = recs[*b].value.len();
            accumulate(grads, recs, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            accumulate(grads, recs, *b, |gb| {
                for row in g.chunks(cols) {
                    gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&recs[*a].value.values, &recs[*b].value.values);
            accumulate(grads, recs, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * bv[i];
                }
            });
            accumulate(grads, recs, *b, |gb| {
                for i in 0..gb.len() {
                    gb[i] += g[i] * av[i];
                }
            });
        }
        Op::Scale(a, c) => {
            accumulate(grads, recs, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
        }
        Op::ConcatCols(a, b) => {
            let (ca, cb) = (recs[*a].value.row_len(), recs[*b].value.row_len());
            let c = ca + cb;
            accumulate(grads, recs, *a, |ga| {
                for (r, row) in ga.chunks_mut(ca).enumerate() {
                    row.iter_mut().zip(&g[r * c..r * c + ca]).for_each(|(x, y)| *x += y);
                }
            });
            accumulate(grads, recs, *b, |gb| {
                for (r, row) in gb.chunks_mut(cb).enumerate() {
                    row.iter_mut().zip(&g[r * c + ca..(r + 1) * c]).for_each(|(x, y)| *x += y);
                }
            });
        }
        Op::GatherRows(a, idx) => {
            let d = recs[*a].value.row_len();
            accumulate(grads, recs, *a, |ga| {
                for (r, &src) in idx.iter().enumerate() {
                    ga[src * d..(src + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(x, y)| *x += y);
                }
            });
        }
        Op::GatherMatVec { h, rows, w, widx } => {
            let (hv, wv) = (&recs[*h].value, &recs[*w].value);
            let (din, dout) = (wv.shape[1], wv.shape[2]);
            accumulate(grads, recs, *h, |gh| {
                for (r, (&row, &k)) in rows.iter().zip(widx.iter()).enumerate() {
                    let wk = &wv.values[k * din * dout..(k + 1) * din * dout];
                    let gr = &g[r * dout..(r + 1) * dout];
                    for p in 0..din {
                        let mut s = 0.0;
                        for j in 0..dout {
                            s += wk[p * dout + j] * gr[j];
                        }
                        gh[row * din + p] += s;
                    }
                }
            });
            accumulate(grads, recs, *w, |gw| {
                for (r, (&row, &k)) in rows.iter().zip(widx.iter()).enumerate() {
                    let hr = &hv.values[row * din..(row + 1) * din];
                    let gr = &g[r * dout..(r + 1) * dout];
                    let gk = &mut gw[k * din * dout..(k + 1) * din * dout];
                    for p in 0..din {
                        if hr[p] == 0.0 {
                            continue;
                        }
                        for j in 0..dout {
                            gk[p * dout + j] += hr[p] * gr[j];
                        }
                    }
                }
            });
        }
        Op::RowDot(a, b) => {
            let (av, bv) = (&recs[*a].value, &recs[*b].value);
            let d = av.row_len();
            accumulate(grads, recs, *a, |ga| {
                for (r, &gr) in g.iter().enumerate() {
                    for j in 0..d {
                        ga[r * d + j] += gr * bv.values[r * d + j];
                    }
                }
            });
            accumulate(grads, recs, *b, |gb| {
                for (r, &gr) in g.iter().enumerate() {
                    for j in 0..d {
                        gb[r * d + j] += gr * av.values[r * d + j];
                    }
                }
            });
        }
        Op::MulRows(a, s) => {
            let (av, sv) = (&recs[*a].value, &recs[*s].value);
            let d = av.row_len();
            accumulate(grads, recs, *a, |ga| {
                for (r, &sr) in sv.values.iter().enumerate() {
                    for j in 0..d {
                        ga[r * d + j] += g[r * d + j] * sr;
                    }
                }
            });
            accumulate(grads, recs, *s, |gs| {
                for (r, slot) in gs.iter_mut().enumerate() {
                    *slot += (0..d).map(|j| g[r * d + j] * av.values[r * d + j]).sum::<f64>();
                }
            });
        }
        Op::SegmentSum { x, seg } => {
            let d = recs[*x].value.row_len();
            accumulate(grads, recs, *x, |gx| {
                for (r, &s) in seg.iter().enumerate() {
                    gx[r * d..(r + 1) * d].iter_mut().zip(&g[s * d..(s + 1) * d]).for_each(|(a, b)| *a += b);
                }
            });
        }
        Op::SegmentSoftmax { x, seg, n_seg } => {
            let y = &out.values;
            let mut dot = vec![0.0; *n_seg];
            for (r, &s) in seg.iter().enumerate() {
                dot[s] += y[r] * g[r];
            }
            accumulate(grads, recs, *x, |gx| {
                for (r, &s) in seg.iter().enumerate() {
                    gx[r] += y[r] * (g[r] - dot[s]);
                }
            });
        }
        Op::Relu(x) => {
            let xv = &recs[*x].value.values;
            accumulate(grads, recs, *x, |gx| {
                for i in 0..gx.len() {
                    if xv[i] > 0.0 {
                        gx[i] += g[i];
                    }
                }
            });
        }
        Op::LeakyRelu(x, slope) => {
            let xv = &recs[*x].value.values;
            accumulate(grads, recs, *x, |gx| {
                for i in 0..gx.len() {
                    gx[i] += if xv[i] > 0.0 { g[i] } else { slope * g[i] };
                }
            });
        }
        Op::Sum(x) => {
            accumulate(grads, recs, *x, |gx| gx.iter_mut().for_each(|v| *v += g[0]));
        }
        Op::MseLoss { pred, target } => {
            let pv = &recs[*pred].value.values;
            let n = pv.len() as f64;
            accumulate(grads, recs, *pred, |gp| {
                for i in 0..gp.len() {
                    gp[i] += g[0] * 2.0 * (pv[i] - target[i]) / n;
                }
            });
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    /// Copy of the recorded value.
    pub fn value(self) -> Tensor {
        self.tape.records.borrow()[self.id].value.clone()
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.records.borrow()[self.id].value.shape.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(self) -> f64 {
        self.tape.records.borrow()[self.id].value.values[0]
    }

    fn requires_grad(self) -> bool {
        self.tape.records.borrow()[self.id].requires_grad
    }

    fn with<R>(self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.records.borrow()[self.id].value)
    }

    fn emit(self, op: Op, value: Tensor, inputs: &[Var<'t>]) -> Var<'t> {
        let rg = inputs.iter().any(|v| v.requires_grad());
        self.tape.push(op, value, rg)
    }

    fn dims2(self, op: &'static str) -> Result<(usize, usize)> {
        self.with(|t| match t.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::shape(op, format!("expected a matrix, got shape {other:?}"))),
        })
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (n, k) = self.dims2("matmul")?;
        let (k2, m) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{n}, {k}] x [{k2}, {m}]")));
        }
        let mut out = vec![0.0; n * m];
        self.with(|a| {
            other.with(|b| {
                for i in 0..n {
                    for p in 0..k {
                        let x = a.values[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        let brow = &b.values[p * m..(p + 1) * m];
                        let orow = &mut out[i * m..(i + 1) * m];
                        for j in 0..m {
                            orow[j] += x * brow[j];
                        }
                    }
                }
            })
        });
        Ok(self.emit(Op::MatMul(self.id, other.id), Tensor { shape: vec![n, m], values: out }, &[self, other]))
    }

    fn zip_same(self, other: Var<'t>, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.with(|a| {
            other.with(|b| {
                if a.shape != b.shape {
                    return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape, b.shape)));
                }
                let values = a.values.iter().zip(&b.values).map(|(x, y)| f(*x, *y)).collect();
                Ok(Tensor { shape: a.shape.clone(), values })
            })
        })
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_same(other, "add", |x, y| x + y)?;
        Ok(self.emit(Op::Add(self.id, other.id), v, &[self, other]))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_same(other, "mul", |x, y| x * y)?;
        Ok(self.emit(Op::Mul(self.id, other.id), v, &[self, other]))
    }

    /// Adds a `[1, d]` (or `[d]`) row to every row of a `[n, d]` matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let v = self.with(|a| {
            row.with(|b| {
                let d = a.row_len();
                if b.len() != d || a.shape.len() != 2 {
                    return Err(Error::shape("add_row", format!("{:?} + row {:?}", a.shape, b.shape)));
                }
                let mut values = a.values.clone();
                for chunk in values.chunks_mut(d.max(1)) {
                    chunk.iter_mut().zip(&b.values).for_each(|(x, y)| *x += y);
                }
                Ok(Tensor { shape: a.shape.clone(), values })
            })
        })?;
        Ok(self.emit(Op::AddRow(self.id, row.id), v, &[self, row]))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.with(|a| Tensor { shape: a.shape.clone(), values: a.values.iter().map(|x| c * x).collect() });
        self.emit(Op::Scale(self.id, c), v, &[self])
    }

    /// `[n, a] ++ [n, b] -> [n, a + b]`.
    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        let (n, ca) = self.dims2("concat")?;
        let (n2, cb) = other.dims2("concat")?;
        if n != n2 {
            return Err(Error::shape("concat", format!("[{n}, {ca}] ++ [{n2}, {cb}]")));
        }
        let mut values = Vec::with_capacity(n * (ca + cb));
        self.with(|a| {
            other.with(|b| {
                for r in 0..n {
                    values.extend_from_slice(&a.values[r * ca..(r + 1) * ca]);
                    values.extend_from_slice(&b.values[r * cb..(r + 1) * cb]);
                }
            })
        });
        Ok(self.emit(Op::ConcatCols(self.id, other.id), Tensor { shape: vec![n, ca + cb], values }, &[self, other]))
    }

    /// Rows `idx[r]` of a `[n, ...]` tensor, stacked.
    pub fn gather_rows(self, idx: &Rc<Vec<usize>>) -> Result<Var<'t>> {
        let v = self.with(|a| {
            let rows = a.rows();
            check_index("gather_rows", idx, rows)?;
            let d = a.row_len();
            let mut values = Vec::with_capacity(idx.len() * d);
            for &i in idx.iter() {
                values.extend_from_slice(&a.values[i * d..(i + 1) * d]);
            }
            let mut shape = a.shape.clone();
            shape[0] = idx.len();
            Ok::<_, Error>(Tensor { shape, values })
        })?;
        Ok(self.emit(Op::GatherRows(self.id, idx.clone()), v, &[self]))
    }

    /// `out[r] = self[rows[r]] · weights[widx[r]]` for a stack of matrices
    /// `weights: [k, d_in, d_out]` and node features `self: [n, d_in]`.
    pub fn gather_matvec(self, rows: &Rc<Vec<usize>>, weights: Var<'t>, widx: &Rc<Vec<usize>>) -> Result<Var<'t>> {
        if rows.len() != widx.len() {
            return Err(Error::shape("gather_matvec", format!("{} rows vs {} weight ids", rows.len(), widx.len())));
        }
        let (n, din) = self.dims2("gather_matvec")?;
        let (k, din2, dout) = weights.with(|w| match w.shape.as_slice() {
            [k, a, b] => Ok((*k, *a, *b)),
            other => Err(Error::shape("gather_matvec", format!("weights must be 3-d, got {other:?}"))),
        })?;
        if din != din2 {
            return Err(Error::shape("gather_matvec", format!("features [{n}, {din}] vs weights [{k}, {din2}, {dout}]")));
        }
        check_index("gather_matvec", rows, n)?;
        check_index("gather_matvec", widx, k)?;
        let mut out = vec![0.0; rows.len() * dout];
        self.with(|h| {
            weights.with(|w| {
                for (r, (&row, &kk)) in rows.iter().zip(widx.iter()).enumerate() {
                    let hr = &h.values[row * din..(row + 1) * din];
                    let wk = &w.values[kk * din * dout..(kk + 1) * din * dout];
                    let o = &mut out[r * dout..(r + 1) * dout];
                    for p in 0..din {
                        let x = hr[p];
                        if x == 0.0 {
                            continue;
                        }
                        for j in 0..dout {
                            o[j] += x * wk[p * dout + j];
                        }
                    }
                }
            })
        });
        let op = Op::GatherMatVec { h: self.id, rows: rows.clone(), w: weights.id, widx: widx.clone() };
        Ok(self.emit(op, Tensor { shape: vec![rows.len(), dout], values: out }, &[self, weights]))
    }

    /// Per-row dot product `[n, d] · [n, d] -> [n, 1]`.
    pub fn row_dot(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.with(|a| {
            other.with(|b| {
                if a.shape != b.shape || a.shape.len() != 2 {
                    return Err(Error::shape("row_dot", format!("{:?} vs {:?}", a.shape, b.shape)));
                }
                let d = a.row_len();
                let values = a
                    .values
                    .chunks(d.max(1))
                    .zip(b.values.chunks(d.max(1)))
                    .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
                    .collect::<Vec<f64>>();
                Ok(Tensor { shape: vec![a.rows(), 1], values })
            })
        })?;
        Ok(self.emit(Op::RowDot(self.id, other.id), v, &[self, other]))
    }

    /// Scales row `r` of `[n, d]` by `s[r]` for `s: [n, 1]`.
    pub fn mul_rows(self, s: Var<'t>) -> Result<Var<'t>> {
        let v = self.with(|a| {
            s.with(|b| {
                if b.len() != a.rows() || a.shape.len() != 2 {
                    return Err(Error::shape("mul_rows", format!("{:?} by {:?}", a.shape, b.shape)));
                }
                let d = a.row_len();
                let mut values = a.values.clone();
                for (r, chunk) in values.chunks_mut(d.max(1)).enumerate() {
                    chunk.iter_mut().for_each(|x| *x *= b.values[r]);
                }
                Ok(Tensor { shape: a.shape.clone(), values })
            })
        })?;
        Ok(self.emit(Op::MulRows(self.id, s.id), v, &[self, s]))
    }

    /// Sums rows sharing a segment id: `[n, d] -> [n_seg, d]`.
    pub fn segment_sum(self, seg: &Rc<Vec<usize>>, n_seg: usize) -> Result<Var<'t>> {
        let v = self.with(|a| {
            if seg.len() != a.rows() {
                return Err(Error::shape("segment_sum", format!("{} segment ids for {} rows", seg.len(), a.rows())));
            }
            check_index("segment_sum", seg, n_seg)?;
            let d = a.row_len();
            let mut values = vec![0.0; n_seg * d];
            for (r, &s) in seg.iter().enumerate() {
                values[s * d..(s + 1) * d].iter_mut().zip(&a.values[r * d..(r + 1) * d]).for_each(|(x, y)| *x += y);
            }
            let mut shape = a.shape.clone();
            shape[0] = n_seg;
            Ok(Tensor { shape, values })
        })?;
        Ok(self.emit(Op::SegmentSum { x: self.id, seg: seg.clone() }, v, &[self]))
    }

    /// Softmax of a score column within each segment.
    pub fn segment_softmax(self, seg: &Rc<Vec<usize>>, n_seg: usize) -> Result<Var<'t>> {
        let v = self.with(|a| {
            if a.row_len() != 1 || seg.len() != a.rows() {
                return Err(Error::shape(
                    "segment_softmax",
                    format!("scores {:?} with {} segment ids", a.shape, seg.len()),
                ));
            }
            check_index("segment_softmax", seg, n_seg)?;
            let mut max = vec![f64::NEG_INFINITY; n_seg];
            for (r, &s) in seg.iter().enumerate() {
                max[s] = max[s].max(a.values[r]);
            }
            let mut values: Vec<f64> = seg.iter().enumerate().map(|(r, &s)| (a.values[r] - max[s]).exp()).collect();
            let mut total = vec![0.0; n_seg];
            for (r, &s) in seg.iter().enumerate() {
                total[s] += values[r];
            }
            for (r, &s) in seg.iter().enumerate() {
                values[r] /= total[s];
            }
            Ok(Tensor { shape: a.shape.clone(), values })
        })?;
        Ok(self.emit(Op::SegmentSoftmax { x: self.id, seg: seg.clone(), n_seg }, v, &[self]))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.with(|a| Tensor { shape: a.shape.clone(), values: a.values.iter().map(|&x| x.max(0.0)).collect() });
        self.emit(Op::Relu(self.id), v, &[self])
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let v = self.with(|a| Tensor {
            shape: a.shape.clone(),
            values: a.values.iter().map(|&x| if x > 0.0 { x } else { slope * x }).collect(),
        });
        self.emit(Op::LeakyRelu(self.id, slope), v, &[self])
    }

    /// Sum of all entries as a `[1, 1]` tensor.
    pub fn sum(self) -> Var<'t> {
        let v = self.with(|a| Tensor::scalar(a.values.iter().sum()));
        self.emit(Op::Sum(self.id), v, &[self])
    }

    /// Mean squared error against fixed targets.
    pub fn mse_loss(self, target: &[f64]) -> Result<Var<'t>> {
        let v = self.with(|a| {
            if a.len() != target.len() || target.is_empty() {
                return Err(Error::shape("mse_loss", format!("{} predictions vs {} targets", a.len(), target.len())));
            }
            let s: f64 = a.values.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
            Ok(Tensor::scalar(s / target.len() as f64))
        })?;
        Ok(self.emit(Op::MseLoss { pred: self.id, target: Rc::new(target.to_vec()) }, v, &[self]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], values: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), values.to_vec()).unwrap()
    }

    #[test]
    fn square_derivative() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = x.mul(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.of(x), vec![6.0]);
    }

    #[test]
    fn equal_scores_give_uniform_softmax() {
        let tape = Tape::new();
        let s = tape.constant(Tensor::column(vec![0.7, 0.7]));
        let seg = Rc::new(vec![0, 0]);
        assert_eq!(s.segment_softmax(&seg, 1).unwrap().value().values, vec![0.5, 0.5]);
    }

    #[test]
    fn leaky_relu_and_mse() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(-1.0));
        assert!((x.leaky_relu(0.2).item() + 0.2).abs() < 1e-15);
        let p = tape.constant(Tensor::column(vec![1.0, 2.0]));
        assert_eq!(p.mse_loss(&[1.0, 2.0]).unwrap().item(), 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.param(Tensor::column(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Shape { op: "backward", .. })));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[0.0; 6]));
        let b = tape.constant(t(&[2, 3], &[0.0; 6]));
        match a.matmul(b) {
            Err(Error::Shape { op, detail }) => {
                assert_eq!(op, "matmul");
                assert!(detail.contains("[2, 3]"));
            }
            other => panic!("{other:?}"),
        }
        assert!(a.add(tape.constant(t(&[3, 2], &[0.0; 6]))).is_err());
        assert!(a.gather_rows(&Rc::new(vec![5])).is_err());
    }

    #[test]
    fn segment_sum_and_gather_values() {
        let tape = Tape::new();
        let x = tape.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let s = x.segment_sum(&Rc::new(vec![1, 0, 1]), 2).unwrap();
        assert_eq!(s.value().values, vec![3.0, 4.0, 6.0, 8.0]);
        let g = x.gather_rows(&Rc::new(vec![2, 2, 0])).unwrap();
        assert_eq!(g.value().values, vec![5.0, 6.0, 5.0, 6.0, 1.0, 2.0]);
    }

    #[test]
    fn gather_matvec_matches_matmul() {
        let tape = Tape::new();
        let h = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.constant(t(&[2, 2, 1], &[1.0, 1.0, 2.0, -1.0]));
        let out = h.gather_matvec(&Rc::new(vec![0, 1, 1]), w, &Rc::new(vec![0, 0, 1])).unwrap();
        assert_eq!(out.value().values, vec![3.0, 7.0, 2.0]);
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let run = || {
            let tape = Tape::new();
            let a = tape.param(t(&[2, 2], &[0.3, -1.2, 2.5, 0.1]));
            let b = tape.param(t(&[2, 1], &[0.7, -0.4]));
            let y = a.matmul(b).unwrap().relu().mse_loss(&[0.1, 0.2]).unwrap();
            let g = tape.backward(y).unwrap();
            (y.item().to_bits(), g.of(a), g.of(b))
        };
        assert_eq!(run(), run());
    }
}
