use std::rc::Rc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis, Zip};

use super::{Csr, ParamId, ParamStore, Scalar};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Contiguous row ranges partitioning the rows of a matrix, one range per
/// example in a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    owner: Vec<usize>,
}

impl Segments {
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(lengths.len() + 1);
        offsets.push(0);
        let mut owner = Vec::new();
        for (i, &len) in lengths.iter().enumerate() {
            offsets.push(offsets[i] + len);
            owner.extend(std::iter::repeat_n(i, len));
        }
        Segments { offsets, owner }
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, seg: usize) -> std::ops::Range<usize> {
        self.offsets[seg]..self.offsets[seg + 1]
    }

    /// Segment index of every row.
    pub fn owners(&self) -> &[usize] {
        &self.owner
    }

    pub fn len_of(&self, seg: usize) -> usize {
        self.offsets[seg + 1] - self.offsets[seg]
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, F),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LogClamped(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Rc<[usize]>),
    SpMM(Rc<Csr<F>>, Var),
    SegmentSoftmax(Var, Rc<Segments>),
    SegmentNormalize(Var, Rc<[bool]>, Rc<Segments>),
    SegmentWeightedSum(Var, Var, Rc<Segments>),
    SegmentMax(Var, Vec<usize>),
    ScatterCols(Var, Rc<[(usize, usize)]>),
    PadCols(Var),
    SumAll(Var),
    Pick(Var, Rc<[(usize, usize)]>),
}

struct Node<F> {
    value: Option<Array2<F>>,
    op: Op<F>,
    needs_grad: bool,
}

/// Floor applied by [`Graph::log`] to zero probabilities.
pub const LOG_FLOOR: f64 = -1e9;

/// Tape recording a forward computation for reverse-mode differentiation.
///
/// Parameters are read in place from the borrowed [`ParamStore`]; every
/// other value is owned by the tape.
pub struct Graph<'p, F: Scalar> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
    grad_enabled: bool,
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Array2<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: ParamId) -> Option<&Array2<F>> {
        self.grads[id.0].as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<F>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> F {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|&x| x * x).sum::<F>())
            .sum::<F>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: F) -> F {
        let norm = self.global_norm();
        if norm > max_norm {
            let scale = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                g.mapv_inplace(|x| x * scale);
            }
        }
        norm
    }

    /// Zeroes gradient rows the store marks as frozen.
    pub fn mask_frozen(&mut self, store: &ParamStore<F>) {
        for id in store.ids() {
            if let (Some(frozen), Some(g)) = (store.frozen_rows(id), self.grads[id.0].as_mut()) {
                for (row, &f) in frozen.iter().enumerate() {
                    if f {
                        g.row_mut(row).fill(F::zero());
                    }
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.iter().all(|x| x.is_finite()))
    }
}

impl<'p, F: Scalar> Graph<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            grad_enabled: true,
        }
    }

    /// A tape that records values only; `backward` yields no gradients.
    pub fn inference(params: &'p ParamStore<F>) -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new(params)
        }
    }

    pub fn params(&self) -> &'p ParamStore<F> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(a), _) => a,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> F {
        let a = self.value(v);
        assert_eq!(a.dim(), (1, 1), "not a scalar");
        a[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<F>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn zeros(&mut self, shape: (usize, usize)) -> Var {
        self.constant(Array2::zeros(shape))
    }

    /// Records (once per tape) a parameter leaf.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: self.grad_enabled,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// `a + bias`, with a `1 x n` bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        assert_eq!(self.value(bias).nrows(), 1);
        let value = self.value(a) + self.value(bias);
        self.push(value, Op::AddRow(a, bias), &[a, bias])
    }

    /// `a * s`, with an `n x 1` column broadcast over columns.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.value(s).ncols(), 1);
        let value = self.value(a) * self.value(s);
        self.push(value, Op::MulCol(a, s), &[a, s])
    }

    /// `scale * a + shift`
    pub fn affine(&mut self, a: Var, scale: F, shift: F) -> Var {
        let value = self.value(a).mapv(|x| scale * x + shift);
        self.push(value, Op::Affine(a, scale), &[a])
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -F::one(), F::one())
    }

    pub fn scale(&mut self, a: Var, scale: F) -> Var {
        self.affine(a, scale, F::zero())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.tanh());
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(F::zero()));
        self.push(value, Op::Relu(a), &[a])
    }

    /// Natural log clamped below at [`LOG_FLOOR`]; zero entries get zero
    /// gradient.
    pub fn log(&mut self, a: Var) -> Var {
        let floor = F::of(LOG_FLOOR);
        let value = self.value(a).mapv(|x| if x > F::zero() { x.ln().max(floor) } else { floor });
        self.push(value, Op::LogClamped(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(F::neg_infinity(), |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(value, Op::SoftmaxRows(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts differ in concat_cols");
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("column counts differ in concat_rows");
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, rows: Rc<[usize]>) -> Var {
        let value = self.value(a).select(Axis(0), &rows);
        self.push(value, Op::GatherRows(a, rows), &[a])
    }

    /// Constant sparse matrix times `x`.
    pub fn spmm(&mut self, m: Rc<Csr<F>>, x: Var) -> Var {
        let value = m.mul_dense(self.value(x).view());
        self.push(value, Op::SpMM(m, x), &[x])
    }

    /// Softmax of an `n x 1` score column within each segment.
    pub fn segment_softmax(&mut self, scores: Var, segs: Rc<Segments>) -> Var {
        let a = self.value(scores);
        assert_eq!(a.dim(), (segs.total(), 1));
        let mut value = Array2::zeros(a.dim());
        for b in 0..segs.count() {
            let r = segs.range(b);
            let max = r.clone().fold(F::neg_infinity(), |m, i| m.max(a[(i, 0)]));
            let mut sum = F::zero();
            for i in r.clone() {
                let e = (a[(i, 0)] - max).exp();
                value[(i, 0)] = e;
                sum += e;
            }
            for i in r {
                value[(i, 0)] /= sum;
            }
        }
        self.push(value, Op::SegmentSoftmax(scores, segs), &[scores])
    }

    /// Zeroes masked-out entries of an `n x 1` nonnegative column and
    /// renormalizes each segment to sum to one.
    ///
    /// Panics if a segment has no positive mass under the mask; callers
    /// validate that every segment has a kept row.
    pub fn segment_normalize(&mut self, w: Var, keep: Rc<[bool]>, segs: Rc<Segments>) -> Var {
        let a = self.value(w);
        assert_eq!(a.dim(), (segs.total(), 1));
        assert_eq!(keep.len(), segs.total());
        let mut value = Array2::zeros(a.dim());
        for b in 0..segs.count() {
            let r = segs.range(b);
            let sum: F = r.clone().filter(|&i| keep[i]).map(|i| a[(i, 0)]).sum();
            assert!(sum > F::zero(), "segment {b} has no mass under the mask");
            for i in r.filter(|&i| keep[i]) {
                value[(i, 0)] = a[(i, 0)] / sum;
            }
        }
        self.push(value, Op::SegmentNormalize(w, keep, segs), &[w])
    }

    /// Per segment `Σ_i w_i · h_i` for `w: n x 1`, `h: n x d`.
    pub fn segment_weighted_sum(&mut self, w: Var, h: Var, segs: Rc<Segments>) -> Var {
        let (wv, hv) = (self.value(w), self.value(h));
        assert_eq!(wv.dim(), (segs.total(), 1));
        assert_eq!(hv.nrows(), segs.total());
        let mut value = Array2::zeros((segs.count(), hv.ncols()));
        for b in 0..segs.count() {
            let mut out = value.row_mut(b);
            for i in segs.range(b) {
                out.scaled_add(wv[(i, 0)], &hv.row(i));
            }
        }
        self.push(value, Op::SegmentWeightedSum(w, h, segs), &[w, h])
    }

    /// Column-wise max over the rows of each segment.
    pub fn segment_max(&mut self, a: Var, segs: &Segments) -> Var {
        let av = self.value(a);
        assert_eq!(av.nrows(), segs.total());
        let cols = av.ncols();
        let mut value = Array2::zeros((segs.count(), cols));
        let mut argmax = vec![0usize; segs.count() * cols];
        for b in 0..segs.count() {
            let r = segs.range(b);
            assert!(!r.is_empty(), "segment {b} is empty");
            for j in 0..cols {
                let mut best = r.start;
                for i in r.clone() {
                    if av[(i, j)] > av[(best, j)] {
                        best = i;
                    }
                }
                value[(b, j)] = av[(best, j)];
                argmax[b * cols + j] = best;
            }
        }
        self.push(value, Op::SegmentMax(a, argmax), &[a])
    }

    /// Scatter-adds entry `i` of an `n x 1` column to `targets[i]` of a
    /// zero `rows x cols` matrix.
    pub fn scatter_cols(&mut self, a: Var, targets: Rc<[(usize, usize)]>, shape: (usize, usize)) -> Var {
        let av = self.value(a);
        assert_eq!(av.dim(), (targets.len(), 1));
        let mut value = Array2::zeros(shape);
        for (i, &(r, c)) in targets.iter().enumerate() {
            value[(r, c)] += av[(i, 0)];
        }
        self.push(value, Op::ScatterCols(a, targets), &[a])
    }

    /// Right-pads with zero columns up to `total` columns.
    pub fn pad_cols(&mut self, a: Var, total: usize) -> Var {
        let av = self.value(a);
        assert!(total >= av.ncols());
        let mut value = Array2::zeros((av.nrows(), total));
        value.slice_mut(s![.., ..av.ncols()]).assign(av);
        self.push(value, Op::PadCols(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a), &[a])
    }

    /// Collects `a[r, c]` for each pair into a `k x 1` column.
    pub fn pick(&mut self, a: Var, at: Rc<[(usize, usize)]>) -> Var {
        let av = self.value(a);
        let value = Array2::from_shape_fn((at.len(), 1), |(k, _)| av[at[k]]);
        self.push(value, Op::Pick(a, at), &[a])
    }

    /// Weighted sum `Σ weights ⊙ a` against a constant weight matrix.
    pub fn weighted_sum(&mut self, a: Var, weights: Array2<F>) -> Var {
        let w = self.constant(weights);
        let prod = self.mul(a, w);
        self.sum_all(prod)
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Gradients<F> {
        assert_eq!(self.value(output).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: Vec<Option<Array2<F>>> = vec![None; self.params.len()];
        if !self.nodes[output.0].needs_grad {
            return Gradients { grads: param_grads };
        }
        grads[output.0] = Some(Array2::ones((1, 1)));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => param_grads[id.0] = Some(g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.acc_with(&mut grads, *a, |buf| {
                        general_mat_mul(F::one(), &g, &bv.t(), F::one(), buf)
                    });
                    self.acc_with(&mut grads, *b, |buf| {
                        general_mat_mul(F::one(), &av.t(), &g, F::one(), buf)
                    });
                }
                Op::Add(a, b) => {
                    self.acc_with(&mut grads, *a, |buf| *buf += &g);
                    self.acc_with(&mut grads, *b, |buf| *buf += &g);
                }
                Op::Sub(a, b) => {
                    self.acc_with(&mut grads, *a, |buf| *buf += &g);
                    self.acc_with(&mut grads, *b, |buf| *buf -= &g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.acc_with(&mut grads, *a, |buf| {
                        Zip::from(buf).and(&g).and(bv).for_each(|o, &g, &b| *o += g * b)
                    });
                    self.acc_with(&mut grads, *b, |buf| {
                        Zip::from(buf).and(&g).and(av).for_each(|o, &g, &a| *o += g * a)
                    });
                }
                Op::AddRow(a, bias) => {
                    self.acc_with(&mut grads, *a, |buf| *buf += &g);
                    self.acc_with(&mut grads, *bias, |buf| {
                        *buf += &g.sum_axis(Axis(0)).insert_axis(Axis(0))
                    });
                }
                Op::MulCol(a, sc) => {
                    let (av, sv) = (self.value(*a), self.value(*sc));
                    self.acc_with(&mut grads, *a, |buf| *buf += &(&g * sv));
                    self.acc_with(&mut grads, *sc, |buf| {
                        *buf += &(&g * av).sum_axis(Axis(1)).insert_axis(Axis(1))
                    });
                }
                Op::Affine(a, scale) => {
                    self.acc_with(&mut grads, *a, |buf| buf.scaled_add(*scale, &g));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    self.acc_with(&mut grads, *a, |buf| {
                        Zip::from(buf)
                            .and(&g)
                            .and(y)
                            .for_each(|o, &g, &y| *o += g * y * (F::one() - y))
                    });
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    self.acc_with(&mut grads, *a, |buf| {
                        Zip::from(buf)
                            .and(&g)
                            .and(y)
                            .for_each(|o, &g, &y| *o += g * (F::one() - y * y))
                    });
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    self.acc_with(&mut grads, *a, |buf| {
                        Zip::from(buf).and(&g).and(x).for_each(|o, &g, &x| {
                            if x > F::zero() {
                                *o += g
                            }
                        })
                    });
                }
                Op::LogClamped(a) => {
                    let x = self.value(*a);
                    let y = node.value.as_ref().unwrap();
                    let floor = F::of(LOG_FLOOR);
                    self.acc_with(&mut grads, *a, |buf| {
                        Zip::from(buf).and(&g).and(x).and(y).for_each(|o, &g, &x, &y| {
                            if y > floor {
                                *o += g / x
                            }
                        })
                    });
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().unwrap();
                    self.acc_with(&mut grads, *a, |buf| {
                        for ((mut o, gr), yr) in buf.rows_mut().into_iter().zip(g.rows()).zip(y.rows()) {
                            let dot = gr.dot(&yr);
                            Zip::from(&mut o)
                                .and(&gr)
                                .and(&yr)
                                .for_each(|o, &g, &y| *o += y * (g - dot));
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        let slice = g.slice(s![.., start..start + w]);
                        self.acc_with(&mut grads, *p, |buf| *buf += &slice);
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        let slice = g.slice(s![start..start + h, ..]);
                        self.acc_with(&mut grads, *p, |buf| *buf += &slice);
                        start += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let w = g.ncols();
                    self.acc_with(&mut grads, *a, |buf| {
                        let mut dst = buf.slice_mut(s![.., *start..*start + w]);
                        dst += &g;
                    });
                }
                Op::GatherRows(a, rows) => {
                    self.acc_with(&mut grads, *a, |buf| {
                        for (k, &r) in rows.iter().enumerate() {
                            buf.row_mut(r).scaled_add(F::one(), &g.row(k));
                        }
                    });
                }
                Op::SpMM(m, x) => {
                    self.acc_with(&mut grads, *x, |buf| m.t_mul_dense_acc(g.view(), buf));
                }
                Op::SegmentSoftmax(a, segs) => {
                    let y = node.value.as_ref().unwrap();
                    self.acc_with(&mut grads, *a, |buf| {
                        for b in 0..segs.count() {
                            let r = segs.range(b);
                            let dot: F = r.clone().map(|i| g[(i, 0)] * y[(i, 0)]).sum();
                            for i in r {
                                buf[(i, 0)] += y[(i, 0)] * (g[(i, 0)] - dot);
                            }
                        }
                    });
                }
                Op::SegmentNormalize(w, keep, segs) => {
                    let wv = self.value(*w);
                    let y = node.value.as_ref().unwrap();
                    self.acc_with(&mut grads, *w, |buf| {
                        for b in 0..segs.count() {
                            let r = segs.range(b);
                            let sum: F = r.clone().filter(|&i| keep[i]).map(|i| wv[(i, 0)]).sum();
                            let dot: F = r.clone().map(|i| g[(i, 0)] * y[(i, 0)]).sum();
                            for i in r.filter(|&i| keep[i]) {
                                buf[(i, 0)] += (g[(i, 0)] - dot) / sum;
                            }
                        }
                    });
                }
                Op::SegmentWeightedSum(w, h, segs) => {
                    let (wv, hv) = (self.value(*w), self.value(*h));
                    self.acc_with(&mut grads, *w, |buf| {
                        for (i, &b) in segs.owners().iter().enumerate() {
                            buf[(i, 0)] += g.row(b).dot(&hv.row(i));
                        }
                    });
                    self.acc_with(&mut grads, *h, |buf| {
                        for (i, &b) in segs.owners().iter().enumerate() {
                            buf.row_mut(i).scaled_add(wv[(i, 0)], &g.row(b));
                        }
                    });
                }
                Op::SegmentMax(a, argmax) => {
                    let cols = g.ncols();
                    self.acc_with(&mut grads, *a, |buf| {
                        for b in 0..g.nrows() {
                            for j in 0..cols {
                                buf[(argmax[b * cols + j], j)] += g[(b, j)];
                            }
                        }
                    });
                }
                Op::ScatterCols(a, targets) => {
                    self.acc_with(&mut grads, *a, |buf| {
                        for (i, &rc) in targets.iter().enumerate() {
                            buf[(i, 0)] += g[rc];
                        }
                    });
                }
                Op::PadCols(a) => {
                    let w = self.value(*a).ncols();
                    self.acc_with(&mut grads, *a, |buf| *buf += &g.slice(s![.., ..w]));
                }
                Op::SumAll(a) => {
                    let g0 = g[(0, 0)];
                    self.acc_with(&mut grads, *a, |buf| buf.mapv_inplace(|x| x + g0));
                }
                Op::Pick(a, at) => {
                    self.acc_with(&mut grads, *a, |buf| {
                        for (k, &rc) in at.iter().enumerate() {
                            buf[rc] += g[(k, 0)];
                        }
                    });
                }
            }
        }
        Gradients { grads: param_grads }
    }

    fn acc_with(&self, grads: &mut [Option<Array2<F>>], target: Var, f: impl FnOnce(&mut Array2<F>)) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        let buf = grads[target.0].get_or_insert_with(|| Array2::zeros(self.value(target).dim()));
        f(buf);
    }
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
