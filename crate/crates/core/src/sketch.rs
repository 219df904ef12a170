//! Heavy-hitter detection on the implicitly represented pair.
//!
//! Every tracked vector is sketched on each node of a balanced partition tree
//! by a shared Gaussian JL matrix. The sketch of the combination the exact
//! pair is built from is then a cheap linear combination of node sketches,
//! and comparing it against an older timestamp locates the coordinates that
//! moved by descending only into nodes whose sketch moved.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::exact_ds::{Coefficients, ExactDs, Refresh, RowDelta};

/// Rows of the JL matrix for `n` coordinates and failure probability `delta`.
pub fn jl_rows(n: usize, delta: f64) -> usize {
    let n = n.max(2) as f64;
    25usize.max((24.0 * (n / delta).ln()).ceil() as usize)
}

/// `r × n` matrix with independent `N(0, 1/r)` entries.
#[derive(Clone, Debug)]
pub struct JlMatrix {
    phi: DMatrix<f64>,
}

impl JlMatrix {
    pub fn new(n: usize, delta: f64, seed: u64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!("failure probability must be in (0, 1), got {delta}")));
        }
        let r = jl_rows(n, delta);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (r as f64).sqrt()).expect("positive deviation");
        Ok(Self { phi: DMatrix::from_fn(r, n, |_, _| normal.sample(&mut rng)) })
    }

    pub fn rows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.phi * v
    }

    fn column(&self, i: usize) -> &[f64] {
        let r = self.phi.nrows();
        &self.phi.as_slice()[i * r..(i + 1) * r]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeNode {
    /// Half-open coordinate range `[lo, hi)`.
    pub lo: usize,
    pub hi: usize,
    pub children: Option<(usize, usize)>,
    pub parent: Option<usize>,
}

/// Complete binary tree over contiguous coordinate intervals. Node 0 is the
/// root and parents precede their children.
#[derive(Clone, Debug)]
pub struct PartitionTree {
    nodes: Vec<TreeNode>,
    leaf_of: Vec<usize>,
}

impl PartitionTree {
    pub fn new(n: usize) -> Self {
        let mut t = Self { nodes: Vec::with_capacity(2 * n), leaf_of: vec![0; n] };
        if n > 0 {
            t.nodes.push(TreeNode { lo: 0, hi: n, children: None, parent: None });
            let mut next = 0;
            while next < t.nodes.len() {
                let TreeNode { lo, hi, .. } = t.nodes[next];
                if hi - lo == 1 {
                    t.leaf_of[lo] = next;
                } else {
                    let mid = lo + (hi - lo).div_ceil(2);
                    let l = t.nodes.len();
                    t.nodes.push(TreeNode { lo, hi: mid, children: None, parent: Some(next) });
                    t.nodes.push(TreeNode { lo: mid, hi, children: None, parent: Some(next) });
                    t.nodes[next].children = Some((l, l + 1));
                }
                next += 1;
            }
        }
        t
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn leaf(&self, i: usize) -> usize {
        self.leaf_of[i]
    }

    pub fn depth(&self) -> usize {
        let mut d = 0;
        let mut u = self.leaf_of.first().copied();
        while let Some(v) = u {
            d += 1;
            u = self.nodes[v].parent;
        }
        d
    }
}

/// Per-node sketches `Φ_{χ(u)} v_{χ(u)}` of one vector.
#[derive(Clone, Debug)]
pub struct VectorSketch {
    r: usize,
    values: Vec<f64>,
}

impl VectorSketch {
    pub fn new(tree: &PartitionTree, jl: &JlMatrix, v: &DVector<f64>) -> Self {
        let r = jl.rows();
        let mut values = vec![0.0; tree.nodes.len() * r];
        for (i, &vi) in v.iter().enumerate() {
            let leaf = tree.leaf(i);
            for (dst, p) in values[leaf * r..(leaf + 1) * r].iter_mut().zip(jl.column(i)) {
                *dst = vi * p;
            }
        }
        for u in (0..tree.nodes.len()).rev() {
            if let Some((a, b)) = tree.nodes[u].children {
                for j in 0..r {
                    values[u * r + j] = values[a * r + j] + values[b * r + j];
                }
            }
        }
        Self { r, values }
    }

    /// `v_i += delta`
    pub fn add(&mut self, tree: &PartitionTree, jl: &JlMatrix, i: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        let col = jl.column(i);
        let mut u = Some(tree.leaf(i));
        while let Some(v) = u {
            for (dst, p) in self.values[v * self.r..(v + 1) * self.r].iter_mut().zip(col) {
                *dst += delta * p;
            }
            u = tree.nodes[v].parent;
        }
    }

    pub fn node(&self, u: usize) -> &[f64] {
        &self.values[u * self.r..(u + 1) * self.r]
    }
}

/// Which side of the pair a query concerns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `H^{1/2} x`
    Primal,
    /// `H^{-1/2} s`
    Dual,
}

/// Mixing weights of the tracked vectors for one side.
fn weights(c: &Coefficients, side: Side) -> Vec<f64> {
    let (k, m) = (c.beta_hat_x.len(), c.beta_tilde_x.len());
    let mut w = Vec::with_capacity(3 + k + m);
    match side {
        Side::Primal => {
            w.extend([1.0, 0.0, c.beta_x]);
            w.extend(c.beta_hat_x.iter());
            w.extend(c.beta_tilde_x.iter());
        }
        Side::Dual => {
            w.extend([0.0, 1.0, c.beta_s]);
            w.extend(c.beta_hat_s.iter());
            w.extend(c.beta_tilde_s.iter());
        }
    }
    w
}

/// Sketches of `H^{1/2} x̂`, `H^{-1/2} ŝ`, `h`, the columns of `ĥ` and of `h̃`,
/// with history. The state at timestamp `ℓ'` is recovered from the current
/// state by undoing the logged row deltas of later timestamps, so the only
/// full checkpoint is the one taken at initialization.
#[derive(Clone, Debug)]
pub struct BatchSketch {
    tree: PartitionTree,
    jl: JlMatrix,
    vectors: Vec<VectorSketch>,
    coef_history: Vec<Coefficients>,
    /// `logs[ℓ]` holds the `(vector, coordinate, delta)` triples applied by the
    /// update that produced timestamp `ℓ`; `logs[0]` is empty.
    logs: Vec<Vec<(usize, usize, f64)>>,
    current: Coefficients,
}

impl BatchSketch {
    pub fn new(ds: &ExactDs, delta: f64, seed: u64) -> Result<Self> {
        let n = ds.n();
        let tree = PartitionTree::new(n);
        let jl = JlMatrix::new(n, delta, seed)?;
        let mut vectors = vec![
            VectorSketch::new(&tree, &jl, &ds.scaled_x_hat()),
            VectorSketch::new(&tree, &jl, &ds.scaled_s_hat()),
            VectorSketch::new(&tree, &jl, ds.h()),
        ];
        for col in ds.h_hat().column_iter() {
            vectors.push(VectorSketch::new(&tree, &jl, &col.into_owned()));
        }
        for col in ds.h_tilde().column_iter() {
            vectors.push(VectorSketch::new(&tree, &jl, &col.into_owned()));
        }
        let c = ds.coefficients().clone();
        Ok(Self { tree, jl, vectors, coef_history: vec![c.clone()], logs: vec![Vec::new()], current: c })
    }

    /// Current timestamp.
    pub fn timestamp(&self) -> usize {
        self.coef_history.len() - 1
    }

    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    pub fn jl(&self) -> &JlMatrix {
        &self.jl
    }

    pub fn set_coefficients(&mut self, c: Coefficients) {
        self.current = c;
    }

    /// Applies row deltas, then advances the timestamp and records a snapshot.
    pub fn update(&mut self, deltas: &[RowDelta]) {
        let mut log = Vec::new();
        for d in deltas {
            let mut entries = vec![(0, d.scaled_x_hat), (1, d.scaled_s_hat), (2, d.h)];
            entries.extend(d.h_hat.iter().enumerate().map(|(j, &v)| (3 + j, v)));
            let off = 3 + d.h_hat.len();
            entries.extend(d.h_tilde.iter().enumerate().map(|(j, &v)| (off + j, v)));
            for (vec, val) in entries {
                if val != 0.0 {
                    self.vectors[vec].add(&self.tree, &self.jl, d.index, val);
                    log.push((vec, d.index, val));
                }
            }
        }
        self.logs.push(log);
        self.coef_history.push(self.current.clone());
    }

    /// Sketch of the side's vector now minus its sketch at timestamp `then`,
    /// restricted to node `u`.
    fn node_diff(&self, u: usize, side: Side, then: usize, now_w: &[f64], then_w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (vi, vs) in self.vectors.iter().enumerate() {
            let c = now_w[vi] - then_w[vi];
            if c != 0.0 {
                for (o, s) in out.iter_mut().zip(vs.node(u)) {
                    *o += c * s;
                }
            }
        }
        let TreeNode { lo, hi, .. } = self.tree.nodes[u];
        for log in &self.logs[then + 1..] {
            for &(vi, i, d) in log {
                if i >= lo && i < hi && then_w[vi] != 0.0 {
                    let c = then_w[vi] * d;
                    for (o, p) in out.iter_mut().zip(self.jl.column(i)) {
                        *o += c * p;
                    }
                }
            }
        }
        let _ = side;
    }

    /// Coordinates whose side vector may have moved by more than `eps` since
    /// timestamp `then`. Nodes with sketched movement `≥ 0.9 eps` are expanded.
    pub fn query_heavy(&self, side: Side, then: usize, eps: f64) -> Result<Vec<usize>> {
        if then > self.timestamp() {
            return Err(Error::UnknownTimestamp(then));
        }
        let mut found = Vec::new();
        if self.tree.nodes.is_empty() {
            return Ok(found);
        }
        let now_w = weights(&self.current, side);
        let then_w = weights(&self.coef_history[then], side);
        let mut buf = vec![0.0; self.jl.rows()];
        let mut stack = vec![0usize];
        while let Some(u) = stack.pop() {
            self.node_diff(u, side, then, &now_w, &then_w, &mut buf);
            let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 0.9 * eps || norm == 0.0 {
                continue;
            }
            match self.tree.nodes[u].children {
                Some((a, b)) => stack.extend([b, a]),
                None => found.push(self.tree.nodes[u].lo),
            }
        }
        found.sort_unstable();
        Ok(found)
    }
}

/// Timestamps the step producing timestamp `step` is compared against:
/// `step − 2^j` for every `2^j` dividing `step`.
pub fn dyadic_lookbacks(step: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 1usize;
    while p <= step {
        if step.is_multiple_of(p) {
            out.push(step - p);
        }
        p <<= 1;
    }
    out
}

/// Keeps the approximate pair `(x̄, s̄)` of an [`ExactDs`] within the refresh
/// tolerances using a [`BatchSketch`].
#[derive(Clone, Debug)]
pub struct ApproxDs {
    sketch: BatchSketch,
    eps_x: f64,
    eps_s: f64,
    levels: f64,
}

impl ApproxDs {
    /// `eps_x` bounds `‖x̄ − x‖` and `eps_s` bounds `‖s̄ − s‖*` per coordinate in
    /// the weighted local norm; `q` is the number of steps between restarts.
    pub fn new(ds: &ExactDs, eps_x: f64, eps_s: f64, q: usize, delta: f64, seed: u64) -> Result<Self> {
        if !(eps_x > 0.0 && eps_s > 0.0) {
            return Err(Error::InvalidParameter("refresh tolerances must be positive".into()));
        }
        let sketch = BatchSketch::new(ds, delta / q.max(1) as f64, seed)?;
        let levels = 2.0 * (q.max(1) as f64).log2() + 1.0;
        Ok(Self { sketch, eps_x, eps_s, levels })
    }

    pub fn timestamp(&self) -> usize {
        self.sketch.timestamp()
    }

    pub fn sketch(&self) -> &BatchSketch {
        &self.sketch
    }

    /// Finds the entries of `(x̄, s̄)` that drifted from the exact pair after a
    /// move and returns their new values.
    pub fn move_and_query(&mut self, ds: &ExactDs) -> Result<Vec<Refresh>> {
        self.sketch.set_coefficients(ds.coefficients().clone());
        let step = self.sketch.timestamp() + 1;
        let ex = self.eps_x / self.levels;
        let es = self.eps_s / self.levels;
        let mut cx = Vec::new();
        let mut cs = Vec::new();
        for then in dyadic_lookbacks(step) {
            cx.extend(self.sketch.query_heavy(Side::Primal, then, ex)?);
            cs.extend(self.sketch.query_heavy(Side::Dual, then, es)?);
        }
        cx.sort_unstable();
        cx.dedup();
        cs.sort_unstable();
        cs.dedup();
        let hw = ds.weighted_hess();
        let mut out: Vec<Refresh> = Vec::new();
        for &i in &cx {
            let (xi, _) = ds.query(i)?;
            if (ds.x_bar()[i] - xi).abs() * hw[i].sqrt() > ex {
                out.push(Refresh { index: i, x_bar: Some(xi), s_bar: None });
            }
        }
        for &i in &cs {
            let (_, si) = ds.query(i)?;
            if (ds.s_bar()[i] - si).abs() / hw[i].sqrt() > es {
                match out.iter_mut().find(|r| r.index == i) {
                    Some(r) => r.s_bar = Some(si),
                    None => out.push(Refresh { index: i, x_bar: None, s_bar: Some(si) }),
                }
            }
        }
        Ok(out)
    }

    pub fn update(&mut self, ds: &ExactDs, deltas: &[RowDelta]) {
        self.sketch.set_coefficients(ds.coefficients().clone());
        self.sketch.update(deltas);
    }
}
