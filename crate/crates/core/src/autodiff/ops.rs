//! Forward implementations and backward rules of the tape primitives.

use super::tape::{Broadcast, ConvGeometry, Node, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `c = a * b` for row-major `a: (m, k)` and `b: (k, n)`, with optional
/// transposition of either operand through strides.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    // Strides for the logical (m, k) and (k, n) operands.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices cover m*k, k*n and m*n elements with the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn broadcast_kind(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if b.len() < a.len() && a.ends_with(b) {
        Ok(Broadcast::Rhs)
    } else if a.len() < b.len() && b.ends_with(a) {
        Ok(Broadcast::Lhs)
    } else {
        Err(Error::shape(
            op,
            format!("{a:?} and {b:?} do not broadcast over leading dimensions"),
        ))
    }
}

/// Sums a full-size gradient down to a suffix-shaped operand.
fn reduce_to(g: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for chunk in g.chunks_exact(len) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        make_op: fn(Broadcast) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let kind = broadcast_kind(name, av.shape(), bv.shape())?;
        let (shape, data) = match kind {
            Broadcast::Same => (
                av.shape().to_vec(),
                av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::Rhs => {
                let (ad, bd) = (av.data(), bv.data());
                let mut data = Vec::with_capacity(ad.len());
                for chunk in ad.chunks_exact(bd.len()) {
                    data.extend(chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)));
                }
                (av.shape().to_vec(), data)
            }
            Broadcast::Lhs => {
                let (ad, bd) = (av.data(), bv.data());
                let mut data = Vec::with_capacity(bd.len());
                for chunk in bd.chunks_exact(ad.len()) {
                    data.extend(ad.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
                }
                (bv.shape().to_vec(), data)
            }
        };
        let out = Tensor::new(shape, data)?;
        self.push(out, make_op(kind), &[a, b])
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect())?;
        self.push(out, op, &[x])
    }

    /// Matrix product of `(m, k)` and `(k, n)` operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: ({m}, {k}) x ({k2}, {n})"),
            ));
        }
        let mut c = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut c,
        );
        let out = Tensor::new(vec![m, n], c)?;
        self.push(out, Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().iter().any(|&v| v == 0.0) {
            return Err(Error::NonFinite { op: "div" });
        }
        let out = self.binary(a, b, "div", Op::Div, |x, y| x / y)?;
        if !self.value(out).all_finite() {
            return Err(Error::NonFinite { op: "div" });
        }
        Ok(out)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.unary(x, Op::Exp, f64::exp)?;
        if !self.value(out).all_finite() {
            return Err(Error::NonFinite { op: "exp" });
        }
        Ok(out)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::NonFinite { op: "log" });
        }
        self.unary(x, Op::Log, f64::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::NonFinite { op: "sqrt" });
        }
        self.unary(x, Op::Sqrt, f64::sqrt)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu, |v| v.max(0.0))
    }

    pub fn scalar_scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(x, Op::ScalarScale(s), |v| v * s)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = self.reduce_axis(x, axis, "sum_axis", 1.0)?;
        self.push(out, Op::SumAxis { axis }, &[x])
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape();
        let n = *shape
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", format!("axis {axis} of {shape:?}")))?;
        if n == 0 {
            return Err(Error::Empty("mean_axis over an empty axis"));
        }
        let out = self.reduce_axis(x, axis, "mean_axis", 1.0 / n as f64)?;
        self.push(out, Op::MeanAxis { axis }, &[x])
    }

    fn reduce_axis(&self, x: Var, axis: usize, op: &'static str, scale: f64) -> Result<Tensor> {
        let xv = self.value(x);
        let shape = xv.shape();
        if axis >= shape.len() {
            return Err(Error::shape(op, format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = axis_split(shape, axis);
        let mut out = vec![0.0; outer * inner];
        let data = xv.data();
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for j in 0..n {
                let src = &data[(o * n + j) * inner..(o * n + j + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        if scale != 1.0 {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        Tensor::new(out_shape, out)
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, vec![n])?;
        self.sum_axis(flat, 0)
    }

    /// Euclidean norm of each row of a `(rows, cols)` matrix.
    pub fn l2_norm_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        let norms = (0..r)
            .map(|i| xv.data()[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out = Tensor::new(vec![r], norms)?;
        self.push(out, Op::L2NormRows, &[x])
    }

    /// Stacks tensors with equal trailing shape along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_rows of no tensors"))?;
        let tail = self.value(*first).shape().get(1..).unwrap_or(&[]).to_vec();
        if self.value(*first).rank() == 0 {
            return Err(Error::shape("concat_rows", "cannot concatenate scalars"));
        }
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() == 0 || pv.shape()[1..] != tail[..] {
                return Err(Error::shape(
                    "concat_rows",
                    format!("trailing shape {:?} vs {:?}", pv.shape(), tail),
                ));
            }
            rows += pv.shape()[0];
            data.extend_from_slice(pv.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::ConcatRows, parts)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = xv.data()[i * c + j];
            }
        }
        let out = Tensor::new(vec![c, r], data)?;
        self.push(out, Op::Transpose, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self
            .value(x)
            .reshape(shape)
            .map_err(|e| Error::shape("reshape", e.to_string()))?;
        self.push(out, Op::Reshape, &[x])
    }

    /// Extracts convolution patches from `(n*h*w, c)` rows.
    ///
    /// Output row `(b, oy, ox)` holds the `kernel x kernel x c` patch, ordered
    /// `(ky, kx, c)`; out-of-bounds taps read zero.
    pub fn im2col(&mut self, x: Var, geom: ConvGeometry) -> Result<Var> {
        let xv = self.value(x);
        let expected = [geom.batch * geom.height * geom.width, geom.channels];
        if xv.shape() != expected {
            return Err(Error::shape(
                "im2col",
                format!("expected {expected:?}, got {:?}", xv.shape()),
            ));
        }
        if geom.kernel == 0 || geom.stride == 0 || geom.height + 2 * geom.padding < geom.kernel {
            return Err(Error::shape("im2col", format!("degenerate geometry {geom:?}")));
        }
        let (oh, ow, pl) = (geom.out_height(), geom.out_width(), geom.patch_len());
        let mut out = vec![0.0; geom.batch * oh * ow * pl];
        for_each_tap(geom, |dst, src| out[dst..dst + geom.channels]
            .copy_from_slice(&xv.data()[src..src + geom.channels]));
        let out = Tensor::new(vec![geom.batch * oh * ow, pl], out)?;
        self.push(out, Op::Im2Col(geom), &[x])
    }
}

/// Visits every in-bounds (output offset, input offset) channel-run pair.
fn for_each_tap(geom: ConvGeometry, mut f: impl FnMut(usize, usize)) {
    let (oh, ow, pl) = (geom.out_height(), geom.out_width(), geom.patch_len());
    let c = geom.channels;
    for b in 0..geom.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (b * oh + oy) * ow + ox;
                for ky in 0..geom.kernel {
                    let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                    if iy < 0 || iy >= geom.height as isize {
                        continue;
                    }
                    for kx in 0..geom.kernel {
                        let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                        if ix < 0 || ix >= geom.width as isize {
                            continue;
                        }
                        let src = ((b * geom.height + iy as usize) * geom.width + ix as usize) * c;
                        let dst = row * pl + (ky * geom.kernel + kx) * c;
                        f(dst, src);
                    }
                }
            }
        }
    }
}

/// Elementwise `d(g, a, b)` over the broadcast output, with `a` and `b`
/// repeated to its length.
fn broadcast_map(kind: Broadcast, a: &[f64], b: &[f64], g: &[f64], d: impl Fn(f64, f64, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.len());
    match kind {
        Broadcast::Same => out.extend(g.iter().zip(a).zip(b).map(|((&g, &a), &b)| d(g, a, b))),
        Broadcast::Rhs => {
            for (gc, ac) in g.chunks_exact(b.len()).zip(a.chunks_exact(b.len())) {
                out.extend(gc.iter().zip(ac).zip(b).map(|((&g, &a), &b)| d(g, a, b)));
            }
        }
        Broadcast::Lhs => {
            for (gc, bc) in g.chunks_exact(a.len()).zip(b.chunks_exact(a.len())) {
                out.extend(gc.iter().zip(a).zip(bc).map(|((&g, &a), &b)| d(g, a, b)));
            }
        }
    }
    out
}

fn binary_grads(
    kind: Broadcast,
    needs: [bool; 2],
    a: &Tensor,
    b: &Tensor,
    g: &[f64],
    da: impl Fn(f64, f64, f64) -> f64,
    db: impl Fn(f64, f64, f64) -> f64,
) -> Vec<Option<Vec<f64>>> {
    let (ad, bd) = (a.data(), b.data());
    let ga = needs[0].then(|| {
        let full = broadcast_map(kind, ad, bd, g, &da);
        match kind {
            Broadcast::Lhs => reduce_to(&full, ad.len()),
            _ => full,
        }
    });
    let gb = needs[1].then(|| {
        let full = broadcast_map(kind, ad, bd, g, &db);
        match kind {
            Broadcast::Rhs => reduce_to(&full, bd.len()),
            _ => full,
        }
    });
    vec![ga, gb]
}

/// Gradients of node `idx`'s inputs given the gradient `g` of its output.
pub(crate) fn backward_rule(nodes: &[Node], idx: usize, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let node = &nodes[idx];
    let input = |k: usize| &nodes[node.inputs[k]].value;
    let out = &node.value;
    let needs = [0, 1].map(|k| node.inputs.get(k).is_some_and(|&i| nodes[i].needs_grad));
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::MatMul => {
            let (a, b) = (input(0), input(1));
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let ga = needs[0].then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, false, b.data(), true, &mut ga);
                ga
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, a.data(), true, g, false, &mut gb);
                gb
            });
            vec![ga, gb]
        }
        Op::Add(kind) => binary_grads(*kind, needs, input(0), input(1), g, |g, _, _| g, |g, _, _| g),
        Op::Sub(kind) => binary_grads(*kind, needs, input(0), input(1), g, |g, _, _| g, |g, _, _| -g),
        Op::Mul(kind) => {
            binary_grads(*kind, needs, input(0), input(1), g, |g, _, b| g * b, |g, a, _| g * a)
        }
        Op::Div(kind) => binary_grads(
            *kind,
            needs,
            input(0),
            input(1),
            g,
            |g, _, b| g / b,
            |g, a, b| -g * a / (b * b),
        ),
        Op::Exp => vec![Some(g.iter().zip(out.data()).map(|(g, y)| g * y).collect())],
        Op::Log => vec![Some(g.iter().zip(input(0).data()).map(|(g, x)| g / x).collect())],
        Op::Sqrt => vec![Some(
            g.iter().zip(out.data()).map(|(g, y)| g * 0.5 / y).collect(),
        )],
        Op::Relu => vec![Some(
            g.iter()
                .zip(input(0).data())
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect(),
        )],
        Op::ScalarScale(s) => vec![Some(g.iter().map(|g| g * s).collect())],
        Op::SumAxis { axis } | Op::MeanAxis { axis } => {
            let shape = input(0).shape();
            let (outer, n, inner) = axis_split(shape, *axis);
            let scale = match node.op {
                Op::MeanAxis { .. } => 1.0 / n as f64,
                _ => 1.0,
            };
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                let src = &g[o * inner..(o + 1) * inner];
                for j in 0..n {
                    gx[(o * n + j) * inner..(o * n + j + 1) * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, s)| *d = s * scale);
                }
            }
            vec![Some(gx)]
        }
        Op::L2NormRows => {
            let x = input(0);
            let c = x.shape()[1];
            let mut gx = vec![0.0; x.len()];
            for (i, (&gi, &norm)) in g.iter().zip(out.data()).enumerate() {
                if norm == 0.0 {
                    continue;
                }
                for j in 0..c {
                    gx[i * c + j] = gi * x.data()[i * c + j] / norm;
                }
            }
            vec![Some(gx)]
        }
        Op::ConcatRows => {
            let mut offset = 0;
            node.inputs
                .iter()
                .map(|&i| {
                    let len = nodes[i].value.len();
                    let part = g[offset..offset + len].to_vec();
                    offset += len;
                    Some(part)
                })
                .collect()
        }
        Op::Transpose => {
            let (r, c) = (input(0).shape()[0], input(0).shape()[1]);
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = g[j * r + i];
                }
            }
            vec![Some(gx)]
        }
        Op::Reshape => vec![Some(g.to_vec())],
        Op::Im2Col(geom) => {
            let mut gx = vec![0.0; input(0).len()];
            let c = geom.channels;
            for_each_tap(*geom, |dst, src| {
                gx[src..src + c]
                    .iter_mut()
                    .zip(&g[dst..dst + c])
                    .for_each(|(d, s)| *d += s);
            });
            vec![Some(gx)]
        }
    }
}
