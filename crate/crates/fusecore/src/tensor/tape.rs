//! Operation recording and reverse-mode gradient propagation.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{FuseError, Result};

use super::Tensor;

type Vjp = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    parents: Vec<Tensor>,
    vjp: Vjp,
}

/// Ordered record of executed operations. Recording order is execution
/// order, so walking the record backwards is a reverse topological
/// traversal: every consumer of a node's output was recorded after it.
pub struct Tape {
    recording: bool,
    nodes: RefCell<Vec<Node>>,
    index: RefCell<HashMap<u64, usize>>,
}

impl Tape {
    /// Tape that records gradients for differentiable inputs.
    pub fn new() -> Tape {
        Tape {
            recording: true,
            nodes: RefCell::new(Vec::new()),
            index: RefCell::new(HashMap::new()),
        }
    }

    /// Tape that records nothing; outputs are plain constants.
    pub fn inference() -> Tape {
        Tape {
            recording: false,
            nodes: RefCell::new(Vec::new()),
            index: RefCell::new(HashMap::new()),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Drop every recorded node (and with them the captured tensors).
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.index.borrow_mut().clear();
    }

    fn track(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    fn record(&self, out: &Tensor, parents: Vec<Tensor>, vjp: Vjp) {
        let mut nodes = self.nodes.borrow_mut();
        self.index.borrow_mut().insert(out.id(), nodes.len());
        nodes.push(Node { parents, vjp });
    }

    /// Propagate d(root)/d(leaf) into every reachable leaf created with
    /// `requires_grad`. Visits each recorded node exactly once, in reverse
    /// recording order. Repeated calls accumulate into leaf gradients.
    pub fn backward(&self, root: &Tensor) -> Result<()> {
        if !root.is_scalar() {
            return Err(FuseError::contract(format!(
                "backward root must be scalar, got shape {:?}",
                root.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        let index = self.index.borrow();
        let mut flows: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        match index.get(&root.id()) {
            Some(&i) => flows[i] = Some(vec![1.0]),
            None => {
                // Root is itself a leaf.
                if root.requires_grad() {
                    root.accumulate_grad(&[1.0]);
                }
                return Ok(());
            }
        }
        for i in (0..nodes.len()).rev() {
            let Some(g) = flows[i].take() else { continue };
            let node = &nodes[i];
            for (parent, pg) in node.parents.iter().zip((node.vjp)(&g)) {
                let Some(pg) = pg else { continue };
                if let Some(&pi) = index.get(&parent.id()) {
                    match &mut flows[pi] {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&pg) {
                                *a += b;
                            }
                        }
                        slot @ None => *slot = Some(pg),
                    }
                } else if parent.requires_grad() {
                    parent.accumulate_grad(&pg);
                }
            }
        }
        Ok(())
    }

    // ── Elementwise ──────────────────────────────────────────────────

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(FuseError::shape("add", a.shape(), b.shape()));
        }
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let track = self.track(&[a, b]);
        let out = Tensor::from_op(a.shape().to_vec(), data, track);
        if track {
            let (na, nb) = (a.requires_grad(), b.requires_grad());
            self.record(
                &out,
                vec![a.clone(), b.clone()],
                Box::new(move |g| vec![na.then(|| g.to_vec()), nb.then(|| g.to_vec())]),
            );
        }
        Ok(out)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(FuseError::shape("sub", a.shape(), b.shape()));
        }
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let track = self.track(&[a, b]);
        let out = Tensor::from_op(a.shape().to_vec(), data, track);
        if track {
            let (na, nb) = (a.requires_grad(), b.requires_grad());
            self.record(
                &out,
                vec![a.clone(), b.clone()],
                Box::new(move |g| {
                    vec![
                        na.then(|| g.to_vec()),
                        nb.then(|| g.iter().map(|v| -v).collect()),
                    ]
                }),
            );
        }
        Ok(out)
    }

    /// Hadamard product.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(FuseError::shape("mul", a.shape(), b.shape()));
        }
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let track = self.track(&[a, b]);
        let out = Tensor::from_op(a.shape().to_vec(), data, track);
        if track {
            let (na, nb) = (a.requires_grad(), b.requires_grad());
            let (ac, bc) = (a.clone(), b.clone());
            self.record(
                &out,
                vec![a.clone(), b.clone()],
                Box::new(move |g| {
                    vec![
                        na.then(|| g.iter().zip(bc.data()).map(|(gv, bv)| gv * bv).collect()),
                        nb.then(|| g.iter().zip(ac.data()).map(|(gv, av)| gv * av).collect()),
                    ]
                }),
            );
        }
        Ok(out)
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        let data: Vec<f64> = a.data().iter().map(|x| x * c).collect();
        let track = self.track(&[a]);
        let out = Tensor::from_op(a.shape().to_vec(), data, track);
        if track {
            self.record(
                &out,
                vec![a.clone()],
                Box::new(move |g| vec![Some(g.iter().map(|v| v * c).collect())]),
            );
        }
        out
    }

    /// Broadcast-add a `[d]` bias to each row of `[n, d]`.
    pub fn add_bias(&self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let d = x.cols();
        if bias.shape() != [d] {
            return Err(FuseError::shape("add_bias", x.shape(), bias.shape()));
        }
        let n = x.rows();
        let mut data = x.data().to_vec();
        for r in 0..n {
            for (v, b) in data[r * d..(r + 1) * d].iter_mut().zip(bias.data()) {
                *v += b;
            }
        }
        let track = self.track(&[x, bias]);
        let out = Tensor::from_op(x.shape().to_vec(), data, track);
        if track {
            let (nx, nb) = (x.requires_grad(), bias.requires_grad());
            self.record(
                &out,
                vec![x.clone(), bias.clone()],
                Box::new(move |g| {
                    let db = nb.then(|| {
                        let mut db = vec![0.0; d];
                        for r in 0..n {
                            for (acc, gv) in db.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                                *acc += gv;
                            }
                        }
                        db
                    });
                    vec![nx.then(|| g.to_vec()), db]
                }),
            );
        }
        Ok(out)
    }

    /// GELU (tanh approximation), applied elementwise.
    pub fn gelu(&self, x: &Tensor) -> Tensor {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const K: f64 = 0.044715;
        let data: Vec<f64> = x
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (C * (v + K * v * v * v)).tanh()))
            .collect();
        let track = self.track(&[x]);
        let out = Tensor::from_op(x.shape().to_vec(), data, track);
        if track {
            let xc = x.clone();
            self.record(
                &out,
                vec![x.clone()],
                Box::new(move |g| {
                    let dx = g
                        .iter()
                        .zip(xc.data())
                        .map(|(gv, &v)| {
                            let t = (C * (v + K * v * v * v)).tanh();
                            let du = C * (1.0 + 3.0 * K * v * v);
                            gv * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                        })
                        .collect();
                    vec![Some(dx)]
                }),
            );
        }
        out
    }

    // ── Linear algebra ───────────────────────────────────────────────

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
            return Err(FuseError::shape("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let data = matmul_raw(a.data(), b.data(), m, k, n);
        let track = self.track(&[a, b]);
        let out = Tensor::from_op(vec![m, n], data, track);
        if track {
            let (na, nb) = (a.requires_grad(), b.requires_grad());
            let (ac, bc) = (a.clone(), b.clone());
            self.record(
                &out,
                vec![a.clone(), b.clone()],
                Box::new(move |g| {
                    vec![
                        na.then(|| matmul_nt_raw(g, bc.data(), m, n, k)),
                        nb.then(|| matmul_tn_raw(ac.data(), g, m, k, n)),
                    ]
                }),
            );
        }
        Ok(out)
    }

    pub fn transpose(&self, x: &Tensor) -> Tensor {
        let (m, n) = (x.rows(), x.cols());
        let data = transpose_raw(x.data(), m, n);
        let track = self.track(&[x]);
        let out = Tensor::from_op(vec![n, m], data, track);
        if track {
            self.record(
                &out,
                vec![x.clone()],
                Box::new(move |g| vec![Some(transpose_raw(g, n, m))]),
            );
        }
        out
    }

    // ── Reductions and normalization ─────────────────────────────────

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self, x: &Tensor) -> Tensor {
        let total: f64 = x.data().iter().sum();
        let track = self.track(&[x]);
        let out = Tensor::from_op(vec![1], vec![total], track);
        if track {
            let numel = x.numel();
            self.record(
                &out,
                vec![x.clone()],
                Box::new(move |g| vec![Some(vec![g[0]; numel])]),
            );
        }
        out
    }

    /// Column means of `[n, d]`, returned as `[1, d]`.
    pub fn mean_rows(&self, x: &Tensor) -> Tensor {
        let (n, d) = (x.rows(), x.cols());
        let mut data = vec![0.0; d];
        for r in 0..n {
            for (acc, v) in data.iter_mut().zip(x.row(r)) {
                *acc += v;
            }
        }
        let inv = 1.0 / n as f64;
        for v in data.iter_mut() {
            *v *= inv;
        }
        let track = self.track(&[x]);
        let out = Tensor::from_op(vec![1, d], data, track);
        if track {
            self.record(
                &out,
                vec![x.clone()],
                Box::new(move |g| {
                    let mut dx = vec![0.0; n * d];
                    for r in 0..n {
                        for (slot, gv) in dx[r * d..(r + 1) * d].iter_mut().zip(g) {
                            *slot = gv * inv;
                        }
                    }
                    vec![Some(dx)]
                }),
            );
        }
        out
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&self, x: &Tensor) -> Tensor {
        let (m, n) = (x.rows(), x.cols());
        let mut data = x.data().to_vec();
        for r in 0..m {
            softmax_inplace(&mut data[r * n..(r + 1) * n]);
        }
        let track = self.track(&[x]);
        let out = Tensor::from_op(x.shape().to_vec(), data, track);
        if track {
            let sc = out.clone();
            self.record(
                &out,
                vec![x.clone()],
                Box::new(move |g| {
                    let s = sc.data();
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        let row = r * n..(r + 1) * n;
                        let dot: f64 = g[row.clone()]
                            .iter()
                            .zip(&s[row.clone()])
                            .map(|(a, b)| a * b)
                            .sum();
                        for j in row.clone() {
                            dx[j] = s[j] * (g[j] - dot);
                        }
                    }
                    vec![Some(dx)]
                }),
            );
        }
        out
    }

    /// Row-wise softmax over a square score matrix where row `i` may only
    /// attend to columns `j <= i`. Masked entries are exactly zero, so
    /// outputs are bit-invariant to changes in future positions.
    pub fn causal_softmax_rows(&self, x: &Tensor) -> Result<Tensor> {
        let (m, n) = (x.rows(), x.cols());
        if m != n {
            return Err(FuseError::shape("causal_softmax_rows", x.shape(), x.shape()));
        }
        let src = x.data();
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            let vis = &src[r * n..r * n + r + 1];
            let max = vis.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &v) in vis.iter().enumerate() {
                let e = (v - max).exp();
                data[r * n + j] = e;
                z += e;
            }
            for j in 0..=r {
                data[r * n + j] /= z;
            }
        }
        let track = self.track(&[x]);
        let out = Tensor::from_op(x.shape().to_vec(), data, track);
        if track {
            let sc = out.clone();
            self.record(
                &out,
                vec![x.clone()],
                Box::new(move |g| {
                    let s = sc.data();
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        let base = r * n;
                        let dot: f64 = (0..=r).map(|j| g[base + j] * s[base + j]).sum();
                        for j in 0..=r {
                            dx[base + j] = s[base + j] * (g[base + j] - dot);
                        }
                    }
                    vec![Some(dx)]
                }),
            );
        }
        Ok(out)
    }

    /// Per-row normalization of `[n, d]` to zero mean and unit variance
    /// (epsilon 1e-5 inside the square root), then elementwise affine.
    pub fn layer_norm(&self, x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
        const EPS: f64 = 1e-5;
        let d = x.cols();
        if gain.shape() != [d] {
            return Err(FuseError::shape("layer_norm", x.shape(), gain.shape()));
        }
        if bias.shape() != [d] {
            return Err(FuseError::shape("layer_norm", x.shape(), bias.shape()));
        }
        let n = x.rows();
        let mut xhat = vec![0.0; n * d];
        let mut sigma = vec![0.0; n];
        let mut data = vec![0.0; n * d];
        for r in 0..n {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = (var + EPS).sqrt();
            sigma[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) / s;
                xhat[r * d + j] = h;
                data[r * d + j] = gain.data()[j] * h + bias.data()[j];
            }
        }
        let track = self.track(&[x, gain, bias]);
        let out = Tensor::from_op(x.shape().to_vec(), data, track);
        if track {
            let (nx, ng, nb) = (x.requires_grad(), gain.requires_grad(), bias.requires_grad());
            let gc = gain.clone();
            self.record(
                &out,
                vec![x.clone(), gain.clone(), bias.clone()],
                Box::new(move |g| {
                    let dgain = ng.then(|| {
                        let mut dg = vec![0.0; d];
                        for r in 0..n {
                            for j in 0..d {
                                dg[j] += g[r * d + j] * xhat[r * d + j];
                            }
                        }
                        dg
                    });
                    let dbias = nb.then(|| {
                        let mut db = vec![0.0; d];
                        for r in 0..n {
                            for j in 0..d {
                                db[j] += g[r * d + j];
                            }
                        }
                        db
                    });
                    let dx = nx.then(|| {
                        let mut dx = vec![0.0; n * d];
                        let gaind = gc.data();
                        for r in 0..n {
                            let base = r * d;
                            let mut mean_h = 0.0;
                            let mut mean_hx = 0.0;
                            for j in 0..d {
                                let h = gaind[j] * g[base + j];
                                mean_h += h;
                                mean_hx += h * xhat[base + j];
                            }
                            mean_h /= d as f64;
                            mean_hx /= d as f64;
                            for j in 0..d {
                                let h = gaind[j] * g[base + j];
                                dx[base + j] =
                                    (h - mean_h - xhat[base + j] * mean_hx) / sigma[r];
                            }
                        }
                        dx
                    });
                    vec![dx, dgain, dbias]
                }),
            );
        }
        Ok(out)
    }

    /// Mean over masked-in rows of the negative log-likelihood of each
    /// row's target class. Rows with `mask[i] == false` contribute nothing.
    pub fn cross_entropy_rows(
        &self,
        logits: &Tensor,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Tensor> {
        let (n, v) = (logits.rows(), logits.cols());
        if targets.len() != n || mask.len() != n {
            return Err(FuseError::contract(format!(
                "cross_entropy_rows: {} logit rows vs {} targets / {} mask entries",
                n,
                targets.len(),
                mask.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= v) {
            return Err(FuseError::contract(format!(
                "cross_entropy_rows: target id {t} outside vocabulary of {v}"
            )));
        }
        let n_live = mask.iter().filter(|&&m| m).count();
        if n_live == 0 {
            return Err(FuseError::InvalidBatch(
                "cross_entropy_rows: every position is masked out".into(),
            ));
        }
        let mut loss = 0.0;
        // Softmax probabilities of masked-in rows, saved for the backward pass.
        let mut probs = vec![0.0; n * v];
        for r in 0..n {
            if !mask[r] {
                continue;
            }
            let row = logits.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                probs[r * v + j] = e;
                z += e;
            }
            for j in 0..v {
                probs[r * v + j] /= z;
            }
            loss += max + z.ln() - row[targets[r]];
        }
        loss /= n_live as f64;
        let track = self.track(&[logits]);
        let out = Tensor::from_op(vec![1], vec![loss], track);
        if track {
            let targets = targets.to_vec();
            let mask = mask.to_vec();
            self.record(
                &out,
                vec![logits.clone()],
                Box::new(move |g| {
                    let scale = g[0] / n_live as f64;
                    let mut dx = vec![0.0; n * v];
                    for r in 0..n {
                        if !mask[r] {
                            continue;
                        }
                        for j in 0..v {
                            dx[r * v + j] = probs[r * v + j] * scale;
                        }
                        dx[r * v + targets[r]] -= scale;
                    }
                    vec![Some(dx)]
                }),
            );
        }
        Ok(out)
    }

    // ── Structural ───────────────────────────────────────────────────

    /// Gather rows of `[n, d]` by index; indices may repeat.
    pub fn select_rows(&self, x: &Tensor, indices: &[usize]) -> Result<Tensor> {
        let (n, d) = (x.rows(), x.cols());
        if indices.is_empty() {
            return Err(FuseError::contract("select_rows: empty index list"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(FuseError::contract(format!(
                "select_rows: row {bad} outside 0..{n}"
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(x.row(i));
        }
        let track = self.track(&[x]);
        let out = Tensor::from_op(vec![indices.len(), d], data, track);
        if track {
            let indices = indices.to_vec();
            self.record(
                &out,
                vec![x.clone()],
                Box::new(move |g| {
                    let mut dx = vec![0.0; n * d];
                    for (r, &i) in indices.iter().enumerate() {
                        for (slot, gv) in dx[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d])
                        {
                            *slot += gv;
                        }
                    }
                    vec![Some(dx)]
                }),
            );
        }
        Ok(out)
    }

    /// Stack 2-d tensors with equal column counts, top to bottom.
    pub fn concat_rows(&self, parts: &[&Tensor]) -> Result<Tensor> {
        let Some(first) = parts.first() else {
            return Err(FuseError::contract("concat_rows: empty input list"));
        };
        let d = first.cols();
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for p in parts {
            if p.cols() != d {
                return Err(FuseError::shape("concat_rows", first.shape(), p.shape()));
            }
            row_counts.push(p.rows());
            data.extend_from_slice(p.data());
        }
        let total: usize = row_counts.iter().sum();
        let track = self.track(parts);
        let out = Tensor::from_op(vec![total, d], data, track);
        if track {
            let parents: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
            let needs: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
            self.record(
                &out,
                parents,
                Box::new(move |g| {
                    let mut grads = Vec::with_capacity(row_counts.len());
                    let mut offset = 0;
                    for (&rows, &need) in row_counts.iter().zip(&needs) {
                        let len = rows * d;
                        grads.push(need.then(|| g[offset..offset + len].to_vec()));
                        offset += len;
                    }
                    grads
                }),
            );
        }
        Ok(out)
    }

    /// Columns `start..start+len` of a 2-d tensor.
    pub fn slice_cols(&self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let (n, d) = (x.rows(), x.cols());
        if start + len > d || len == 0 {
            return Err(FuseError::contract(format!(
                "slice_cols: columns {start}..{} outside 0..{d}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let track = self.track(&[x]);
        let out = Tensor::from_op(vec![n, len], data, track);
        if track {
            self.record(
                &out,
                vec![x.clone()],
                Box::new(move |g| {
                    let mut dx = vec![0.0; n * d];
                    for r in 0..n {
                        dx[r * d + start..r * d + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    vec![Some(dx)]
                }),
            );
        }
        Ok(out)
    }

    /// Concatenate 2-d tensors with equal row counts, left to right.
    pub fn concat_cols(&self, parts: &[&Tensor]) -> Result<Tensor> {
        let Some(first) = parts.first() else {
            return Err(FuseError::contract("concat_cols: empty input list"));
        };
        let n = first.rows();
        let mut col_counts = Vec::with_capacity(parts.len());
        for p in parts {
            if p.rows() != n {
                return Err(FuseError::shape("concat_cols", first.shape(), p.shape()));
            }
            col_counts.push(p.cols());
        }
        let total: usize = col_counts.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        let track = self.track(parts);
        let out = Tensor::from_op(vec![n, total], data, track);
        if track {
            let parents: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
            let needs: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
            let counts = col_counts.clone();
            self.record(
                &out,
                parents,
                Box::new(move |g| {
                    let mut grads: Vec<Option<Vec<f64>>> = counts
                        .iter()
                        .zip(&needs)
                        .map(|(&c, &need)| need.then(|| vec![0.0; n * c]))
                        .collect();
                    for r in 0..n {
                        let mut offset = 0;
                        for (k, &c) in counts.iter().enumerate() {
                            if let Some(dst) = grads[k].as_mut() {
                                dst[r * c..(r + 1) * c]
                                    .copy_from_slice(&g[r * total + offset..r * total + offset + c]);
                            }
                            offset += c;
                        }
                    }
                    grads
                }),
            );
        }
        Ok(out)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

// ── Raw kernels ──────────────────────────────────────────────────────

/// `[m, k] x [k, n]`, ikj loop order.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// `a [m, n] x b^T` where `b` is `[k, n]`, yielding `[m, k]`.
fn matmul_nt_raw(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T x g` where `a` is `[m, k]` and `g` is `[m, n]`, yielding `[k, n]`.
fn matmul_tn_raw(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * grow[j];
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

/// Stable in-place softmax of one row.
pub fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}
