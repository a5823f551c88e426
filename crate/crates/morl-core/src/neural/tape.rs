//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! Operations execute eagerly and append nodes to a [`Tape`]; nodes are
//! therefore already in topological order and [`Tape::backward`] is a single
//! reverse sweep. Parameter leaves registered with `record = true` accumulate
//! their gradients into the owning [`ParamStore`], so repeated backward
//! passes without an intervening `zero_grads` add up.
//!
//! The recurrent cell is a single fused node (`GruStep`) with a hand-derived
//! backward; everything else is composed from a small set of dense ops.

use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math methods come from this trait in no_std builds
use num_traits::Float;

use super::tensor::gemm;
use super::{NeuralError, ParamId, ParamStore, Params};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    /// Constant or parameter leaf.
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    /// Row-broadcast bias add: `a[m,n] + bias[1,n]`.
    AddBias { a: NodeId, bias: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Relu { a: NodeId },
    /// Picks rows of `a` by index (duplicates allowed).
    GatherRows { a: NodeId, rows: Vec<usize> },
    /// Contiguous row window of `a`.
    SliceRows { a: NodeId, start: usize },
    ConcatCols { a: NodeId, b: NodeId },
    ConcatRows { parts: Vec<NodeId> },
    /// `out[i,0] = a[i, cols[i]]`.
    SelectPerRow { a: NodeId, cols: Vec<usize> },
    /// Scalar mean squared error of `a[m,1]` against a constant target.
    MseAgainst { a: NodeId, target: Vec<f64> },
    /// One bidirectional-GRU time step over a row batch; see `gru_step`.
    GruStep { x: NodeId, h_prev: NodeId, w_h: NodeId, b_h: NodeId, mask: Vec<f64> },
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    /// Op-specific forward stash (GRU gate activations).
    aux: Vec<f64>,
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    recorded_params: Vec<(NodeId, ParamId)>,
}

const GRU_H: usize = super::gru::GRU_HIDDEN;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id.0].rows, self.nodes[id.0].cols)
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>, aux: Vec<f64>) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { op, rows, cols, value, aux });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, rows, cols, value, Vec::new())
    }

    /// Mirrors a parameter tensor onto the tape. With `record = true` its
    /// gradient is accumulated into the store on `backward`.
    pub fn param<P: Params>(&mut self, params: &P, id: ParamId, record: bool) -> NodeId {
        let t = params.tensor(id);
        let node = self.constant(t.rows(), t.cols(), t.data().to_vec());
        if record {
            self.recorded_params.push((node, id));
        }
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, ka) = self.dims(a);
        let (kb, n) = self.dims(b);
        assert_eq!(ka, kb, "matmul inner dimensions differ");
        let mut value = alloc::vec![0.0; m * n];
        gemm(m, ka, n, 1.0, self.value(a), false, self.value(b), false, 0.0, &mut value);
        self.push(Op::MatMul { a, b }, m, n, value, Vec::new())
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (m, n) = self.dims(a);
        assert_eq!(self.dims(bias), (1, n), "bias must be a single row");
        let mut value = self.value(a).to_vec();
        let b = &self.nodes[bias.0].value;
        for row in value.chunks_exact_mut(n) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        self.push(Op::AddBias { a, bias }, m, n, value, Vec::new())
    }

    fn elementwise(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (m, n) = self.dims(a);
        assert_eq!(self.dims(b), (m, n), "elementwise shapes differ");
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        self.push(op, m, n, value, Vec::new())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.dims(a);
        let value = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        self.push(Op::Relu { a }, m, n, value, Vec::new())
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<usize>) -> NodeId {
        let (_, n) = self.dims(a);
        let src = &self.nodes[a.0].value;
        let mut value = Vec::with_capacity(rows.len() * n);
        for &r in &rows {
            value.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let m = rows.len();
        self.push(Op::GatherRows { a, rows }, m, n, value, Vec::new())
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let (m, n) = self.dims(a);
        assert!(start + len <= m, "row slice out of bounds");
        let value = self.nodes[a.0].value[start * n..(start + len) * n].to_vec();
        self.push(Op::SliceRows { a, start }, len, n, value, Vec::new())
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, na) = self.dims(a);
        let (mb, nb) = self.dims(b);
        assert_eq!(m, mb, "concat_cols row counts differ");
        let mut value = Vec::with_capacity(m * (na + nb));
        for i in 0..m {
            value.extend_from_slice(&self.nodes[a.0].value[i * na..(i + 1) * na]);
            value.extend_from_slice(&self.nodes[b.0].value[i * nb..(i + 1) * nb]);
        }
        self.push(Op::ConcatCols { a, b }, m, na + nb, value, Vec::new())
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty());
        let (_, n) = self.dims(parts[0]);
        let mut value = Vec::new();
        let mut m = 0;
        for &p in &parts {
            let (pm, pn) = self.dims(p);
            assert_eq!(pn, n, "concat_rows column counts differ");
            value.extend_from_slice(&self.nodes[p.0].value);
            m += pm;
        }
        self.push(Op::ConcatRows { parts }, m, n, value, Vec::new())
    }

    pub fn select_per_row(&mut self, a: NodeId, cols: Vec<usize>) -> NodeId {
        let (m, n) = self.dims(a);
        assert_eq!(cols.len(), m, "one column index per row");
        let value = cols
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                assert!(c < n);
                self.nodes[a.0].value[i * n + c]
            })
            .collect();
        self.push(Op::SelectPerRow { a, cols }, m, 1, value, Vec::new())
    }

    /// Scalar node `mean((a - target)^2)` for `a` of shape `[m,1]`.
    pub fn mse_against(&mut self, a: NodeId, target: Vec<f64>) -> NodeId {
        let (m, n) = self.dims(a);
        assert_eq!(n, 1, "mse_against expects a column");
        assert_eq!(target.len(), m);
        let sum: f64 = self
            .value(a)
            .iter()
            .zip(&target)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let value = alloc::vec![sum / m as f64];
        self.push(Op::MseAgainst { a, target }, 1, 1, value, Vec::new())
    }

    /// One GRU time step over a batch of rows.
    ///
    /// `x` carries the precomputed input contribution `input · W_x + b_x`
    /// for the three gate blocks `[update | reset | candidate]`, `h_prev` is
    /// the previous hidden state, and `w_h`/`b_h` are the recurrent weights.
    /// `mask` holds 1.0 for live rows; masked rows copy `h_prev` through
    /// unchanged, which keeps final states of padded sequences stable.
    pub fn gru_step(
        &mut self,
        x: NodeId,
        h_prev: NodeId,
        w_h: NodeId,
        b_h: NodeId,
        mask: Vec<f64>,
    ) -> NodeId {
        let h = GRU_H;
        let (bsz, xw) = self.dims(x);
        assert_eq!(xw, 3 * h, "gate input width");
        assert_eq!(self.dims(h_prev), (bsz, h));
        assert_eq!(self.dims(w_h), (h, 3 * h));
        assert_eq!(self.dims(b_h), (1, 3 * h));
        assert_eq!(mask.len(), bsz);

        // G = h_prev · w_h + b_h
        let mut g = alloc::vec![0.0; bsz * 3 * h];
        gemm(bsz, h, 3 * h, 1.0, self.value(h_prev), false, self.value(w_h), false, 0.0, &mut g);
        for row in g.chunks_exact_mut(3 * h) {
            for (v, b) in row.iter_mut().zip(&self.nodes[b_h.0].value) {
                *v += b;
            }
        }

        let xv = &self.nodes[x.0].value;
        let hp = &self.nodes[h_prev.0].value;
        let mut value = alloc::vec![0.0; bsz * h];
        // aux blocks: z, r, n, gn — each bsz×h.
        let mut aux = alloc::vec![0.0; 4 * bsz * h];
        let (zb, rest) = aux.split_at_mut(bsz * h);
        let (rb, rest) = rest.split_at_mut(bsz * h);
        let (nb, gnb) = rest.split_at_mut(bsz * h);
        for i in 0..bsz {
            let m = mask[i];
            for j in 0..h {
                let z = sigmoid(xv[i * 3 * h + j] + g[i * 3 * h + j]);
                let r = sigmoid(xv[i * 3 * h + h + j] + g[i * 3 * h + h + j]);
                let gn = g[i * 3 * h + 2 * h + j];
                let n = (xv[i * 3 * h + 2 * h + j] + r * gn).tanh();
                let hn = (1.0 - z) * n + z * hp[i * h + j];
                value[i * h + j] = m * hn + (1.0 - m) * hp[i * h + j];
                zb[i * h + j] = z;
                rb[i * h + j] = r;
                nb[i * h + j] = n;
                gnb[i * h + j] = gn;
            }
        }
        self.push(Op::GruStep { x, h_prev, w_h, b_h, mask }, bsz, h, value, aux)
    }

    /// Reverse sweep from `loss` (a 1×1 node), accumulating parameter
    /// gradients into `store`.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) -> Result<(), NeuralError> {
        if self.nodes.is_empty() {
            return Err(NeuralError::NoTape);
        }
        if self.dims(loss) != (1, 1) {
            return Err(NeuralError::Shape { msg: "loss must be a 1x1 node" });
        }

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(alloc::vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for &(node, pid) in &self.recorded_params {
            if let Some(g) = &grads[node.0] {
                store.accumulate_grad(pid, g);
            }
        }
        Ok(())
    }

    fn grad_buf<'g>(
        grads: &'g mut [Option<Vec<f64>>],
        nodes: &[Node],
        id: NodeId,
    ) -> &'g mut Vec<f64> {
        let slot = &mut grads[id.0];
        slot.get_or_insert_with(|| alloc::vec![0.0; nodes[id.0].value.len()])
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[idx];
        let (m, n) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let k = nodes[a.0].cols;
                {
                    let av = &nodes[b.0].value;
                    let da = Self::grad_buf(grads, nodes, *a);
                    // dA += dC · Bᵀ
                    gemm(m, n, k, 1.0, g, false, av, true, 1.0, da);
                }
                {
                    let av = &nodes[a.0].value;
                    let db = Self::grad_buf(grads, nodes, *b);
                    // dB += Aᵀ · dC
                    gemm(k, m, n, 1.0, av, true, g, false, 1.0, db);
                }
            }
            Op::AddBias { a, bias } => {
                {
                    let da = Self::grad_buf(grads, nodes, *a);
                    for (dv, gv) in da.iter_mut().zip(g) {
                        *dv += gv;
                    }
                }
                let db = Self::grad_buf(grads, nodes, *bias);
                for row in g.chunks_exact(n) {
                    for (dv, gv) in db.iter_mut().zip(row) {
                        *dv += gv;
                    }
                }
            }
            Op::Add { a, b } => {
                for id in [a, b] {
                    let d = Self::grad_buf(grads, nodes, *id);
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv += gv;
                    }
                }
            }
            Op::Sub { a, b } => {
                {
                    let da = Self::grad_buf(grads, nodes, *a);
                    for (dv, gv) in da.iter_mut().zip(g) {
                        *dv += gv;
                    }
                }
                let db = Self::grad_buf(grads, nodes, *b);
                for (dv, gv) in db.iter_mut().zip(g) {
                    *dv -= gv;
                }
            }
            Op::Mul { a, b } => {
                {
                    let bv = &nodes[b.0].value;
                    let da = Self::grad_buf(grads, nodes, *a);
                    for ((dv, gv), xv) in da.iter_mut().zip(g).zip(bv) {
                        *dv += gv * xv;
                    }
                }
                let av = &nodes[a.0].value;
                let db = Self::grad_buf(grads, nodes, *b);
                for ((dv, gv), xv) in db.iter_mut().zip(g).zip(av) {
                    *dv += gv * xv;
                }
            }
            Op::Relu { a } => {
                let da = Self::grad_buf(grads, nodes, *a);
                for ((dv, gv), &v) in da.iter_mut().zip(g).zip(&node.value) {
                    if v > 0.0 {
                        *dv += gv;
                    }
                }
            }
            Op::GatherRows { a, rows } => {
                let da = Self::grad_buf(grads, nodes, *a);
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..n {
                        da[r * n + j] += g[i * n + j];
                    }
                }
            }
            Op::SliceRows { a, start } => {
                let da = Self::grad_buf(grads, nodes, *a);
                for (dv, gv) in da[start * n..start * n + g.len()].iter_mut().zip(g) {
                    *dv += gv;
                }
            }
            Op::ConcatCols { a, b } => {
                let na = nodes[a.0].cols;
                let nb = nodes[b.0].cols;
                {
                    let da = Self::grad_buf(grads, nodes, *a);
                    for i in 0..m {
                        for j in 0..na {
                            da[i * na + j] += g[i * (na + nb) + j];
                        }
                    }
                }
                let db = Self::grad_buf(grads, nodes, *b);
                for i in 0..m {
                    for j in 0..nb {
                        db[i * nb + j] += g[i * (na + nb) + na + j];
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let rows = nodes[p.0].rows;
                    let dp = Self::grad_buf(grads, nodes, p);
                    for (dv, gv) in dp.iter_mut().zip(&g[offset..offset + rows * n]) {
                        *dv += gv;
                    }
                    offset += rows * n;
                }
            }
            Op::SelectPerRow { a, cols } => {
                let na = nodes[a.0].cols;
                let da = Self::grad_buf(grads, nodes, *a);
                for (i, &c) in cols.iter().enumerate() {
                    da[i * na + c] += g[i];
                }
            }
            Op::MseAgainst { a, target } => {
                let av = &nodes[a.0].value;
                let scale = 2.0 / target.len() as f64;
                let da = Self::grad_buf(grads, nodes, *a);
                for ((dv, (&p, &t)), gv) in
                    da.iter_mut().zip(av.iter().zip(target)).zip(core::iter::repeat(g[0]))
                {
                    *dv += gv * scale * (p - t);
                }
            }
            Op::GruStep { x, h_prev, w_h, b_h, mask } => {
                let h = GRU_H;
                let bsz = m;
                let aux = &node.aux;
                let (zb, rest) = aux.split_at(bsz * h);
                let (rb, rest) = rest.split_at(bsz * h);
                let (nb, gnb) = rest.split_at(bsz * h);
                let hp = &nodes[h_prev.0].value;

                let mut dx = alloc::vec![0.0; bsz * 3 * h];
                let mut dg = alloc::vec![0.0; bsz * 3 * h];
                let mut dhp = alloc::vec![0.0; bsz * h];
                for i in 0..bsz {
                    let mk = mask[i];
                    for j in 0..h {
                        let go = g[i * h + j];
                        let z = zb[i * h + j];
                        let r = rb[i * h + j];
                        let nn = nb[i * h + j];
                        let gn = gnb[i * h + j];
                        let dh = mk * go;
                        let dhp_ij = (1.0 - mk) * go + dh * z;
                        let dz = dh * (hp[i * h + j] - nn);
                        let dn = dh * (1.0 - z);
                        let dn_pre = dn * (1.0 - nn * nn);
                        let dr = dn_pre * gn;
                        let dgn = dn_pre * r;
                        let dz_pre = dz * z * (1.0 - z);
                        let dr_pre = dr * r * (1.0 - r);
                        dx[i * 3 * h + j] = dz_pre;
                        dx[i * 3 * h + h + j] = dr_pre;
                        dx[i * 3 * h + 2 * h + j] = dn_pre;
                        dg[i * 3 * h + j] = dz_pre;
                        dg[i * 3 * h + h + j] = dr_pre;
                        dg[i * 3 * h + 2 * h + j] = dgn;
                        dhp[i * h + j] = dhp_ij;
                    }
                }
                {
                    let dxb = Self::grad_buf(grads, nodes, *x);
                    for (dv, gv) in dxb.iter_mut().zip(&dx) {
                        *dv += gv;
                    }
                }
                {
                    // dW_h += h_prevᵀ · dG
                    let dw = Self::grad_buf(grads, nodes, *w_h);
                    gemm(h, bsz, 3 * h, 1.0, hp, true, &dg, false, 1.0, dw);
                }
                {
                    let db = Self::grad_buf(grads, nodes, *b_h);
                    for row in dg.chunks_exact(3 * h) {
                        for (dv, gv) in db.iter_mut().zip(row) {
                            *dv += gv;
                        }
                    }
                }
                {
                    // dh_prev += dG · W_hᵀ (plus the direct terms in dhp)
                    let whv = &nodes[w_h.0].value;
                    gemm(bsz, 3 * h, h, 1.0, &dg, false, whv, true, 1.0, &mut dhp);
                    let dhb = Self::grad_buf(grads, nodes, *h_prev);
                    for (dv, gv) in dhb.iter_mut().zip(&dhp) {
                        *dv += gv;
                    }
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
