use super::{DiffError, GradSet, ParamRef, ParamSet};

/// Handle to one recorded value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(u32);

#[derive(Debug, Clone)]
enum Op {
    /// Constant leaf. No gradient flows into it.
    Input,
    /// `y = W x + b`.
    Affine {
        weight: ParamRef,
        bias: ParamRef,
        x: ValueId,
    },
    /// Elementwise exact-erf GELU.
    Gelu { x: ValueId },
    /// Concatenation of the inputs in order.
    Concat { xs: Vec<ValueId> },
    /// Elementwise sum; the empty sum is the zero vector of length `dim`.
    SumVec { xs: Vec<ValueId>, dim: usize },
    /// `y = c * x`.
    Scale { x: ValueId, c: f64 },
    /// Value passes through, gradient stops. Replay emits the frozen copy.
    StopGrad { frozen: Vec<f64> },
    /// Forward value is `codeword`; gradient flows to `x` as if the op were
    /// the identity. Replay emits `codeword + (x_replayed - base_x)`, i.e.
    /// the identity-at-that-point surrogate the gradient is defined against.
    StraightThrough {
        x: ValueId,
        base_x: Vec<f64>,
        codeword: Vec<f64>,
    },
    /// Row `row` of the parameter block `book`.
    BookRow { book: ParamRef, row: usize },
    /// Scalar `||a - b||^2`.
    SqDist { a: ValueId, b: ValueId },
    /// Scalar `sum_i c_i * s_i` over scalar inputs.
    WeightedSum { terms: Vec<(f64, ValueId)> },
}

/// Append-only record of one forward pass. Values live in a single arena;
/// reverse traversal visits each node exactly once.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    ops: Vec<Op>,
    /// (offset, len) into `vals` per node.
    spans: Vec<(u32, u32)>,
    vals: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Forward value recorded for `id`.
    pub fn value(&self, id: ValueId) -> &[f64] {
        let (off, len) = self.spans[id.0 as usize];
        &self.vals[off as usize..(off + len) as usize]
    }

    /// Scalar forward value; panics if `id` is not length one.
    pub fn scalar(&self, id: ValueId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "scalar() on a vector value");
        v[0]
    }

    fn push(&mut self, op: Op, len: usize) -> (ValueId, usize) {
        let off = self.vals.len();
        self.vals.resize(off + len, 0.0);
        self.ops.push(op);
        self.spans.push((off as u32, len as u32));
        (ValueId(self.spans.len() as u32 - 1), off)
    }

    pub fn input(&mut self, v: &[f64]) -> ValueId {
        let (id, off) = self.push(Op::Input, v.len());
        self.vals[off..off + v.len()].copy_from_slice(v);
        id
    }

    pub fn affine(
        &mut self,
        params: &ParamSet,
        weight: ParamRef,
        bias: ParamRef,
        x: ValueId,
    ) -> Result<ValueId, DiffError> {
        let w = params.block(weight);
        let b = params.block(bias);
        let (x_off, x_len) = self.spans[x.0 as usize];
        if w.cols != x_len as usize {
            return Err(DiffError::DimensionMismatch {
                context: format!("affine `{}`", w.name),
                expected: w.cols,
                got: x_len as usize,
            });
        }
        if b.len() != w.rows {
            return Err(DiffError::DimensionMismatch {
                context: format!("bias `{}`", b.name),
                expected: w.rows,
                got: b.len(),
            });
        }
        let (id, off) = self.push(Op::Affine { weight, bias, x }, w.rows);
        let (head, out) = self.vals.split_at_mut(off);
        let xv = &head[x_off as usize..(x_off + x_len) as usize];
        affine_forward(&w.data, &b.data, xv, out);
        Ok(id)
    }

    pub fn gelu(&mut self, x: ValueId) -> ValueId {
        let (x_off, x_len) = self.spans[x.0 as usize];
        let (id, off) = self.push(Op::Gelu { x }, x_len as usize);
        let (head, out) = self.vals.split_at_mut(off);
        let xv = &head[x_off as usize..(x_off + x_len) as usize];
        for (o, &v) in out.iter_mut().zip(xv) {
            *o = super::gelu(v);
        }
        id
    }

    pub fn concat(&mut self, xs: &[ValueId]) -> ValueId {
        let total: usize = xs
            .iter()
            .map(|&x| self.spans[x.0 as usize].1 as usize)
            .sum();
        let (id, off) = self.push(Op::Concat { xs: xs.to_vec() }, total);
        let (head, out) = self.vals.split_at_mut(off);
        let mut cur = 0;
        if let Op::Concat { xs } = &self.ops[id.0 as usize] {
            for x in xs {
                let (xo, xl) = self.spans[x.0 as usize];
                out[cur..cur + xl as usize].copy_from_slice(&head[xo as usize..(xo + xl) as usize]);
                cur += xl as usize;
            }
        }
        id
    }

    pub fn sum_vec(&mut self, xs: &[ValueId], dim: usize) -> ValueId {
        for &x in xs {
            debug_assert_eq!(self.spans[x.0 as usize].1 as usize, dim);
        }
        let (id, off) = self.push(
            Op::SumVec {
                xs: xs.to_vec(),
                dim,
            },
            dim,
        );
        let (head, out) = self.vals.split_at_mut(off);
        if let Op::SumVec { xs, .. } = &self.ops[id.0 as usize] {
            for x in xs {
                let (xo, _) = self.spans[x.0 as usize];
                for (o, v) in out.iter_mut().zip(&head[xo as usize..xo as usize + dim]) {
                    *o += *v;
                }
            }
        }
        id
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> ValueId {
        let (x_off, x_len) = self.spans[x.0 as usize];
        let (id, off) = self.push(Op::Scale { x, c }, x_len as usize);
        let (head, out) = self.vals.split_at_mut(off);
        for (o, v) in out
            .iter_mut()
            .zip(&head[x_off as usize..(x_off + x_len) as usize])
        {
            *o = c * *v;
        }
        id
    }

    /// Value passes through unchanged; gradient is blocked.
    pub fn stop_grad(&mut self, x: ValueId) -> ValueId {
        let frozen = self.value(x).to_vec();
        let (id, off) = self.push(
            Op::StopGrad {
                frozen: frozen.clone(),
            },
            frozen.len(),
        );
        self.vals[off..off + frozen.len()].copy_from_slice(&frozen);
        id
    }

    /// Forward value equals `codeword` exactly; gradient flows to `x` with an
    /// identity Jacobian and never into the codeword through this path.
    pub fn straight_through(&mut self, x: ValueId, codeword: &[f64]) -> Result<ValueId, DiffError> {
        let base_x = self.value(x).to_vec();
        if base_x.len() != codeword.len() {
            return Err(DiffError::DimensionMismatch {
                context: "straight_through".to_string(),
                expected: base_x.len(),
                got: codeword.len(),
            });
        }
        let (id, off) = self.push(
            Op::StraightThrough {
                x,
                base_x,
                codeword: codeword.to_vec(),
            },
            codeword.len(),
        );
        self.vals[off..off + codeword.len()].copy_from_slice(codeword);
        Ok(id)
    }

    pub fn book_row(&mut self, params: &ParamSet, book: ParamRef, row: usize) -> ValueId {
        let b = params.block(book);
        let r = b.row(row).to_vec();
        let (id, off) = self.push(Op::BookRow { book, row }, r.len());
        self.vals[off..off + r.len()].copy_from_slice(&r);
        id
    }

    pub fn sq_dist(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, DiffError> {
        let (ao, al) = self.spans[a.0 as usize];
        let (bo, bl) = self.spans[b.0 as usize];
        if al != bl {
            return Err(DiffError::DimensionMismatch {
                context: "sq_dist".to_string(),
                expected: al as usize,
                got: bl as usize,
            });
        }
        let (id, off) = self.push(Op::SqDist { a, b }, 1);
        let av = &self.vals[ao as usize..(ao + al) as usize];
        let bv = &self.vals[bo as usize..(bo + bl) as usize];
        let mut acc = 0.0;
        for (x, y) in av.iter().zip(bv) {
            let d = x - y;
            acc += d * d;
        }
        self.vals[off] = acc;
        Ok(id)
    }

    pub fn weighted_sum(&mut self, terms: &[(f64, ValueId)]) -> ValueId {
        let mut acc = 0.0;
        for &(c, s) in terms {
            debug_assert_eq!(self.spans[s.0 as usize].1, 1);
            let (so, _) = self.spans[s.0 as usize];
            acc += c * self.vals[so as usize];
        }
        let (id, off) = self.push(
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            1,
        );
        self.vals[off] = acc;
        id
    }

    /// Reverse pass seeded with `d tip = 1`. The tip must be the scalar of the
    /// last recorded node. Honors stop-gradient and straight-through markers.
    pub fn backward(&self, params: &ParamSet) -> Result<GradSet, DiffError> {
        if self.ops.is_empty() {
            return Err(DiffError::BackwardBeforeForward);
        }
        let (_, tip_len) = self.spans[self.spans.len() - 1];
        if tip_len != 1 {
            return Err(DiffError::NonScalarTip(tip_len as usize));
        }
        let mut grads = vec![0.0_f64; self.vals.len()];
        *grads.last_mut().unwrap() = 1.0;
        let mut pgrads = params.zero_grads();

        for (i, op) in self.ops.iter().enumerate().rev() {
            let (off, len) = self.spans[i];
            let (off, len) = (off as usize, len as usize);
            match op {
                Op::Input => {}
                Op::Affine { weight, bias, x } => {
                    let (xo, xl) = self.spans[x.0 as usize];
                    let (xo, xl) = (xo as usize, xl as usize);
                    let w = params.block(*weight);
                    let (gin, gout) = grads.split_at_mut(off);
                    let dy = &gout[..len];
                    let dx = &mut gin[xo..xo + xl];
                    let xv = &self.vals[xo..xo + xl];
                    {
                        let db = &mut pgrads.slots[bias.0];
                        for (d, &g) in db.iter_mut().zip(dy) {
                            *d += g;
                        }
                    }
                    let dw = &mut pgrads.slots[weight.0];
                    for o in 0..len {
                        let g = dy[o];
                        if g == 0.0 {
                            continue;
                        }
                        let wrow = &w.data[o * xl..(o + 1) * xl];
                        let dwrow = &mut dw[o * xl..(o + 1) * xl];
                        for (dwi, xi) in dwrow.iter_mut().zip(xv) {
                            *dwi += g * *xi;
                        }
                        for (dxi, wi) in dx.iter_mut().zip(wrow) {
                            *dxi += g * *wi;
                        }
                    }
                }
                Op::Gelu { x } => {
                    let (xo, _) = self.spans[x.0 as usize];
                    let xo = xo as usize;
                    let (gin, gout) = grads.split_at_mut(off);
                    for (j, &g) in gout[..len].iter().enumerate() {
                        // d gelu = Phi(x) + x phi(x); Phi is recovered from the
                        // stored forward value y = x Phi(x), saving an erf.
                        let xv = self.vals[xo + j];
                        let yv = self.vals[off + j];
                        let cdf = if xv != 0.0 { yv / xv } else { 0.5 };
                        let pdf = crate::diffcore::INV_SQRT_2PI * (-0.5 * xv * xv).exp();
                        gin[xo + j] += g * (cdf + xv * pdf);
                    }
                }
                Op::Concat { xs } => {
                    let (gin, gout) = grads.split_at_mut(off);
                    let mut cur = 0;
                    for x in xs {
                        let (xo, xl) = self.spans[x.0 as usize];
                        let (xo, xl) = (xo as usize, xl as usize);
                        for j in 0..xl {
                            gin[xo + j] += gout[cur + j];
                        }
                        cur += xl;
                    }
                }
                Op::SumVec { xs, dim } => {
                    let (gin, gout) = grads.split_at_mut(off);
                    for x in xs {
                        let (xo, _) = self.spans[x.0 as usize];
                        let xo = xo as usize;
                        for j in 0..*dim {
                            gin[xo + j] += gout[j];
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let (xo, _) = self.spans[x.0 as usize];
                    let xo = xo as usize;
                    let (gin, gout) = grads.split_at_mut(off);
                    for (j, &g) in gout[..len].iter().enumerate() {
                        gin[xo + j] += c * g;
                    }
                }
                Op::StopGrad { .. } => {}
                Op::StraightThrough { x, .. } => {
                    let (xo, _) = self.spans[x.0 as usize];
                    let xo = xo as usize;
                    let (gin, gout) = grads.split_at_mut(off);
                    for (j, &g) in gout[..len].iter().enumerate() {
                        gin[xo + j] += g;
                    }
                }
                Op::BookRow { book, row } => {
                    let b = params.block(*book);
                    let dst = &mut pgrads.slots[book.0][row * b.cols..(row + 1) * b.cols];
                    for (d, &g) in dst.iter_mut().zip(&grads[off..off + len]) {
                        *d += g;
                    }
                }
                Op::SqDist { a, b } => {
                    let g = grads[off];
                    if g == 0.0 {
                        continue;
                    }
                    let (ao, al) = self.spans[a.0 as usize];
                    let (bo, _) = self.spans[b.0 as usize];
                    let (ao, al, bo) = (ao as usize, al as usize, bo as usize);
                    let (gin, _) = grads.split_at_mut(off);
                    for j in 0..al {
                        let d = 2.0 * (self.vals[ao + j] - self.vals[bo + j]) * g;
                        gin[ao + j] += d;
                        gin[bo + j] -= d;
                    }
                }
                Op::WeightedSum { terms } => {
                    let g = grads[off];
                    if g == 0.0 {
                        continue;
                    }
                    let (gin, _) = grads.split_at_mut(off);
                    for &(c, s) in terms {
                        let (so, _) = self.spans[s.0 as usize];
                        gin[so as usize] += c * g;
                    }
                }
            }
        }
        Ok(pgrads)
    }

    /// First node index at which each parameter block is read, or `None`
    /// for blocks the tape never touches. Nodes before that index cannot
    /// depend on the block.
    pub fn first_param_use(&self, n_blocks: usize) -> Vec<Option<usize>> {
        let mut first = vec![None; n_blocks];
        let mark = |r: ParamRef, i: usize, first: &mut Vec<Option<usize>>| {
            if first[r.0].is_none() {
                first[r.0] = Some(i);
            }
        };
        for (i, op) in self.ops.iter().enumerate() {
            match op {
                Op::Affine { weight, bias, .. } => {
                    mark(*weight, i, &mut first);
                    mark(*bias, i, &mut first);
                }
                Op::BookRow { book, .. } => mark(*book, i, &mut first),
                _ => {}
            }
        }
        first
    }

    /// Re-evaluate the recorded graph against `params`, freezing every
    /// stop-gradient and straight-through site at its recorded state, and
    /// return the scalar tip. With the original parameters this reproduces
    /// the recorded loss.
    pub fn replay(&self, params: &ParamSet) -> Result<f64, DiffError> {
        self.replay_from(params, 0)
    }

    /// Like [`Tape::replay`], but reuses the recorded values of every node
    /// before `start` — valid whenever the parameter changes are confined to
    /// blocks first used at or after `start`.
    pub fn replay_from(&self, params: &ParamSet, start: usize) -> Result<f64, DiffError> {
        if self.ops.is_empty() {
            return Err(DiffError::BackwardBeforeForward);
        }
        let (_, tip_len) = self.spans[self.spans.len() - 1];
        if tip_len != 1 {
            return Err(DiffError::NonScalarTip(tip_len as usize));
        }
        let mut vals = self.vals.clone();
        for (i, op) in self.ops.iter().enumerate().skip(start) {
            let (off, len) = self.spans[i];
            let (off, len) = (off as usize, len as usize);
            match op {
                Op::Input => {
                    vals[off..off + len].copy_from_slice(&self.vals[off..off + len]);
                }
                Op::Affine { weight, bias, x } => {
                    let (xo, xl) = self.spans[x.0 as usize];
                    let (head, out) = vals.split_at_mut(off);
                    let xv = &head[xo as usize..(xo + xl) as usize];
                    affine_forward(
                        &params.block(*weight).data,
                        &params.block(*bias).data,
                        xv,
                        &mut out[..len],
                    );
                }
                Op::Gelu { x } => {
                    let (xo, _) = self.spans[x.0 as usize];
                    let (head, out) = vals.split_at_mut(off);
                    for (j, o) in out[..len].iter_mut().enumerate() {
                        *o = super::gelu(head[xo as usize + j]);
                    }
                }
                Op::Concat { xs } => {
                    let (head, out) = vals.split_at_mut(off);
                    let mut cur = 0;
                    for x in xs {
                        let (xo, xl) = self.spans[x.0 as usize];
                        out[cur..cur + xl as usize]
                            .copy_from_slice(&head[xo as usize..(xo + xl) as usize]);
                        cur += xl as usize;
                    }
                }
                Op::SumVec { xs, dim } => {
                    let (head, out) = vals.split_at_mut(off);
                    out[..*dim].fill(0.0);
                    for x in xs {
                        let (xo, _) = self.spans[x.0 as usize];
                        for (o, v) in out[..*dim]
                            .iter_mut()
                            .zip(&head[xo as usize..xo as usize + dim])
                        {
                            *o += *v;
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let (xo, _) = self.spans[x.0 as usize];
                    let (head, out) = vals.split_at_mut(off);
                    for (j, o) in out[..len].iter_mut().enumerate() {
                        *o = c * head[xo as usize + j];
                    }
                }
                Op::StopGrad { frozen, .. } => {
                    vals[off..off + len].copy_from_slice(frozen);
                }
                Op::StraightThrough {
                    x,
                    base_x,
                    codeword,
                } => {
                    let (xo, _) = self.spans[x.0 as usize];
                    let (head, out) = vals.split_at_mut(off);
                    for j in 0..len {
                        out[j] = codeword[j] + (head[xo as usize + j] - base_x[j]);
                    }
                }
                Op::BookRow { book, row } => {
                    vals[off..off + len].copy_from_slice(params.block(*book).row(*row));
                }
                Op::SqDist { a, b } => {
                    let (ao, al) = self.spans[a.0 as usize];
                    let (bo, _) = self.spans[b.0 as usize];
                    let mut acc = 0.0;
                    for j in 0..al as usize {
                        let d = vals[ao as usize + j] - vals[bo as usize + j];
                        acc += d * d;
                    }
                    vals[off] = acc;
                }
                Op::WeightedSum { terms } => {
                    let mut acc = 0.0;
                    for &(c, s) in terms {
                        let (so, _) = self.spans[s.0 as usize];
                        acc += c * vals[so as usize];
                    }
                    vals[off] = acc;
                }
            }
        }
        Ok(*vals.last().unwrap())
    }
}

fn affine_forward(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, (bi, wrow)) in out.iter_mut().zip(b.iter().zip(w.chunks_exact(cols))) {
        let mut acc = *bi;
        for (wi, xi) in wrow.iter().zip(x) {
            acc += wi * xi;
        }
        *o = acc;
    }
}
