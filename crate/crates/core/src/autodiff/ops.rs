//! Differentiable tensor operations used by the model graph.

use crate::autodiff::{Op, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

fn same_shape<S: Real>(tape: &Tape<S>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(shape_err(op, tape.shape(a), tape.shape(b)));
    }
    Ok(())
}

fn unary<S: Real>(tape: &Tape<S>, a: Var, f: impl Fn(S) -> S) -> Tensor<S> {
    let t = tape.value(a);
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).unwrap()
}

struct AddOp;
impl<S: Real> Op<S> for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        needs.iter().map(|&n| n.then(|| g.to_vec())).collect()
    }
}

pub fn add<S: Real>(tape: &mut Tape<S>, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, "add", a, b)?;
    let (x, y) = (tape.value(a), tape.value(b));
    let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
    let out = Tensor::new(x.shape().to_vec(), data)?;
    Ok(tape.push(out, &[a, b], AddOp))
}

struct SubOp;
impl<S: Real> Op<S> for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| g.iter().map(|&v| -v).collect()),
        ]
    }
}

pub fn sub<S: Real>(tape: &mut Tape<S>, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, "sub", a, b)?;
    let (x, y) = (tape.value(a), tape.value(b));
    let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p - q).collect();
    let out = Tensor::new(x.shape().to_vec(), data)?;
    Ok(tape.push(out, &[a, b], SubOp))
}

struct MulOp;
impl<S: Real> Op<S> for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, inputs: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        vec![
            needs[0].then(|| g.iter().zip(b).map(|(&g, &b)| g * b).collect()),
            needs[1].then(|| g.iter().zip(a).map(|(&g, &a)| g * a).collect()),
        ]
    }
}

/// Elementwise product.
pub fn mul<S: Real>(tape: &mut Tape<S>, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, "mul", a, b)?;
    let (x, y) = (tape.value(a), tape.value(b));
    let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
    let out = Tensor::new(x.shape().to_vec(), data)?;
    Ok(tape.push(out, &[a, b], MulOp))
}

struct ScaleOp<S>(S);
impl<S: Real> Op<S> for ScaleOp<S> {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        vec![needs[0].then(|| g.iter().map(|&v| v * self.0).collect())]
    }
}

pub fn scale<S: Real>(tape: &mut Tape<S>, a: Var, factor: f64) -> Var {
    let c = S::lit(factor);
    let out = unary(tape, a, |v| v * c);
    tape.push(out, &[a], ScaleOp(c))
}

struct MulConstOp<S>(Vec<S>);
impl<S: Real> Op<S> for MulConstOp<S> {
    fn name(&self) -> &'static str {
        "mul_const"
    }
    fn backward(&self, _: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        vec![needs[0].then(|| g.iter().zip(&self.0).map(|(&g, &c)| g * c).collect())]
    }
}

/// Elementwise product with a constant tensor of the same length.
pub fn mul_const<S: Real>(tape: &mut Tape<S>, a: Var, c: &[S]) -> Result<Var> {
    let x = tape.value(a);
    if x.len() != c.len() {
        return Err(shape_err("mul_const", x.len(), c.len()));
    }
    let data = x.data().iter().zip(c).map(|(&p, &q)| p * q).collect();
    let out = Tensor::new(x.shape().to_vec(), data)?;
    Ok(tape.push(out, &[a], MulConstOp(c.to_vec())))
}

struct ExpOp;
impl<S: Real> Op<S> for ExpOp {
    fn name(&self) -> &'static str {
        "exp"
    }
    fn backward(&self, _: &[&Tensor<S>], out: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        vec![needs[0].then(|| g.iter().zip(out.data()).map(|(&g, &y)| g * y).collect())]
    }
}

pub fn exp<S: Real>(tape: &mut Tape<S>, a: Var) -> Var {
    let out = unary(tape, a, |v| v.exp());
    tape.push(out, &[a], ExpOp)
}

struct SumOp;
impl<S: Real> Op<S> for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, inputs: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        vec![needs[0].then(|| vec![g[0]; inputs[0].len()])]
    }
}

pub fn sum<S: Real>(tape: &mut Tape<S>, a: Var) -> Var {
    let out = Tensor::scalar(tape.value(a).sum());
    tape.push(out, &[a], SumOp)
}

struct LeakyReluOp<S>(S);
impl<S: Real> Op<S> for LeakyReluOp<S> {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }
    fn backward(&self, inputs: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        let x = inputs[0].data();
        vec![needs[0].then(|| {
            g.iter()
                .zip(x)
                .map(|(&g, &x)| if x > S::zero() { g } else { g * self.0 })
                .collect()
        })]
    }
}

pub fn leaky_relu<S: Real>(tape: &mut Tape<S>, a: Var, slope: f64) -> Var {
    let s = S::lit(slope);
    let out = unary(tape, a, |v| if v > S::zero() { v } else { v * s });
    tape.push(out, &[a], LeakyReluOp(s))
}

struct IdentityOp;
impl<S: Real> Op<S> for IdentityOp {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        vec![needs[0].then(|| g.to_vec())]
    }
}

pub fn reshape<S: Real>(tape: &mut Tape<S>, a: Var, shape: Vec<usize>) -> Result<Var> {
    let out = tape.value(a).clone().reshape(shape)?;
    Ok(tape.push(out, &[a], IdentityOp))
}

struct SliceOp {
    start: usize,
}
impl<S: Real> Op<S> for SliceOp {
    fn name(&self) -> &'static str {
        "slice"
    }
    fn backward(&self, inputs: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        vec![needs[0].then(|| {
            let mut gi = vec![S::zero(); inputs[0].len()];
            gi[self.start..self.start + g.len()].copy_from_slice(g);
            gi
        })]
    }
}

/// Contiguous slice of the flattened data, returned as a vector.
pub fn slice<S: Real>(tape: &mut Tape<S>, a: Var, start: usize, len: usize) -> Result<Var> {
    let x = tape.value(a);
    if start + len > x.len() {
        return Err(shape_err("slice", x.len(), start + len));
    }
    let out = Tensor::from_vec(x.data()[start..start + len].to_vec());
    Ok(tape.push(out, &[a], SliceOp { start }))
}

struct ConcatOp {
    rows: usize,
    ca: usize,
    cb: usize,
}
impl<S: Real> Op<S> for ConcatOp {
    fn name(&self) -> &'static str {
        "concat_channels"
    }
    fn backward(&self, _: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        let c = self.ca + self.cb;
        let ga = needs[0].then(|| {
            (0..self.rows)
                .flat_map(|r| g[r * c..r * c + self.ca].iter().copied())
                .collect()
        });
        let gb = needs[1].then(|| {
            (0..self.rows)
                .flat_map(|r| g[r * c + self.ca..(r + 1) * c].iter().copied())
                .collect()
        });
        vec![ga, gb]
    }
}

/// Concatenates along the last axis; all leading axes must agree.
pub fn concat_channels<S: Real>(tape: &mut Tape<S>, a: Var, b: Var) -> Result<Var> {
    let (x, y) = (tape.value(a), tape.value(b));
    let (sa, sb) = (x.shape(), y.shape());
    if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
        return Err(shape_err("concat_channels", sa, sb));
    }
    let ca = *sa.last().unwrap();
    let cb = *sb.last().unwrap();
    let rows = x.len() / ca.max(1);
    let mut data = Vec::with_capacity(x.len() + y.len());
    for r in 0..rows {
        data.extend_from_slice(&x.data()[r * ca..(r + 1) * ca]);
        data.extend_from_slice(&y.data()[r * cb..(r + 1) * cb]);
    }
    let mut shape = sa.to_vec();
    *shape.last_mut().unwrap() = ca + cb;
    let out = Tensor::new(shape, data)?;
    Ok(tape.push(out, &[a, b], ConcatOp { rows, ca, cb }))
}

struct LinearOp {
    rows: usize,
    fan_in: usize,
    fan_out: usize,
}
impl<S: Real> Op<S> for LinearOp {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn backward(&self, inputs: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let (n, f, o) = (self.rows, self.fan_in, self.fan_out);
        let gx = needs[0].then(|| {
            let mut gx = vec![S::zero(); n * f];
            for r in 0..n {
                let grow = &g[r * o..(r + 1) * o];
                for i in 0..f {
                    let wrow = &w[i * o..(i + 1) * o];
                    gx[r * f + i] = dot(wrow, grow);
                }
            }
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = vec![S::zero(); f * o];
            for r in 0..n {
                let grow = &g[r * o..(r + 1) * o];
                for i in 0..f {
                    axpy(x[r * f + i], grow, &mut gw[i * o..(i + 1) * o]);
                }
            }
            gw
        });
        let gb = needs[2].then(|| {
            let mut gb = vec![S::zero(); o];
            for r in 0..n {
                axpy(S::one(), &g[r * o..(r + 1) * o], &mut gb);
            }
            gb
        });
        vec![gx, gw, gb]
    }
}

/// `x · W + b` for `x` of shape `[F]` or `[N×F]`, `W` of shape `[F×O]`.
pub fn linear<S: Real>(tape: &mut Tape<S>, x: Var, w: Var, b: Var) -> Result<Var> {
    let (xs, ws, bs) = (tape.shape(x), tape.shape(w), tape.shape(b));
    if ws.len() != 2 {
        return Err(shape_err("linear", "[F, O] weight", ws));
    }
    let (f, o) = (ws[0], ws[1]);
    let (rows, vector) = match xs {
        [n] if *n == f => (1, true),
        [r, n] if *n == f => (*r, false),
        _ => return Err(shape_err("linear", format!("[.., {f}] input"), xs)),
    };
    if bs != [o] {
        return Err(shape_err("linear", [o], bs));
    }
    let (xd, wd, bd) = (tape.value(x).data(), tape.value(w).data(), tape.value(b).data());
    let mut out = Vec::with_capacity(rows * o);
    for r in 0..rows {
        let mut acc = bd.to_vec();
        for i in 0..f {
            axpy(xd[r * f + i], &wd[i * o..(i + 1) * o], &mut acc);
        }
        out.extend(acc);
    }
    let shape = if vector { vec![o] } else { vec![rows, o] };
    let out = Tensor::new(shape, out)?;
    Ok(tape.push(
        out,
        &[x, w, b],
        LinearOp {
            rows,
            fan_in: f,
            fan_out: o,
        },
    ))
}

/// Temporal padding policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that `T' = ceil(T / stride)`.
    Same,
    /// No padding; `T' = floor((T - k) / stride) + 1`.
    Valid,
}

/// Output length and left padding of a temporal convolution.
pub fn conv_geometry(t: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if k == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel {k} and stride {stride} must be >= 1"
        )));
    }
    match padding {
        Padding::Same => {
            let t_out = t.div_ceil(stride);
            let total = ((t_out.max(1) - 1) * stride + k).saturating_sub(t);
            Ok((t_out, total / 2))
        }
        Padding::Valid => {
            if t < k {
                return Err(shape_err("conv1d_temporal", format!("T >= {k}"), t));
            }
            Ok(((t - k) / stride + 1, 0))
        }
    }
}

/// Strided temporal convolution kernels shared with the skeleton convolution.
///
/// Rows of the input live at `x[x_off + t * x_stride ..][..cin]`; rows of the
/// output at `out[o_off + t * o_stride ..][..cout]`. Weights are `[k × cin × cout]`.
pub(crate) mod kernel {
    use super::{axpy, dot};
    use crate::tensor::Real;

    #[derive(Clone, Copy, Debug)]
    pub struct Layout {
        pub t_in: usize,
        pub t_out: usize,
        pub k: usize,
        pub cin: usize,
        pub cout: usize,
        pub stride: usize,
        pub pad_left: usize,
        pub x_off: usize,
        pub x_stride: usize,
        pub o_off: usize,
        pub o_stride: usize,
    }

    impl Layout {
        #[inline]
        fn input_row(&self, to: usize, tap: usize) -> Option<usize> {
            let ti = (to * self.stride + tap) as isize - self.pad_left as isize;
            (ti >= 0 && (ti as usize) < self.t_in).then_some(ti as usize)
        }
    }

    /// `out += scale * conv(x, w)`
    pub fn forward<S: Real>(l: &Layout, x: &[S], w: &[S], scale: S, out: &mut [S]) {
        for to in 0..l.t_out {
            let o = l.o_off + to * l.o_stride;
            for tap in 0..l.k {
                let Some(ti) = l.input_row(to, tap) else { continue };
                let xr = &x[l.x_off + ti * l.x_stride..][..l.cin];
                for (c, &xv) in xr.iter().enumerate() {
                    let wr = &w[(tap * l.cin + c) * l.cout..][..l.cout];
                    axpy(xv * scale, wr, &mut out[o..o + l.cout]);
                }
            }
        }
    }

    /// Accumulates `scale`-weighted adjoints of `x` and `w` from `g` (output layout).
    pub fn backward<S: Real>(
        l: &Layout,
        x: &[S],
        w: &[S],
        g: &[S],
        scale: S,
        gx: Option<&mut [S]>,
        gw: Option<&mut [S]>,
    ) {
        if let Some(gx) = gx {
            for to in 0..l.t_out {
                let gr = &g[l.o_off + to * l.o_stride..][..l.cout];
                for tap in 0..l.k {
                    let Some(ti) = l.input_row(to, tap) else { continue };
                    let base = l.x_off + ti * l.x_stride;
                    for c in 0..l.cin {
                        let wr = &w[(tap * l.cin + c) * l.cout..][..l.cout];
                        gx[base + c] += scale * dot(wr, gr);
                    }
                }
            }
        }
        if let Some(gw) = gw {
            for to in 0..l.t_out {
                let gr = &g[l.o_off + to * l.o_stride..][..l.cout];
                for tap in 0..l.k {
                    let Some(ti) = l.input_row(to, tap) else { continue };
                    let xr = &x[l.x_off + ti * l.x_stride..][..l.cin];
                    for (c, &xv) in xr.iter().enumerate() {
                        let gwr = &mut gw[(tap * l.cin + c) * l.cout..][..l.cout];
                        axpy(xv * scale, gr, gwr);
                    }
                }
            }
        }
    }
}

struct Conv1dOp {
    layout: kernel::Layout,
}
impl<S: Real> Op<S> for Conv1dOp {
    fn name(&self) -> &'static str {
        "conv1d_temporal"
    }
    fn backward(&self, inputs: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let l = &self.layout;
        let mut gx = needs[0].then(|| vec![S::zero(); x.len()]);
        let mut gw = needs[1].then(|| vec![S::zero(); w.len()]);
        kernel::backward(l, x, w, g, S::one(), gx.as_deref_mut(), gw.as_deref_mut());
        let gb = needs[2].then(|| {
            let mut gb = vec![S::zero(); l.cout];
            for t in 0..l.t_out {
                axpy(S::one(), &g[t * l.cout..(t + 1) * l.cout], &mut gb);
            }
            gb
        });
        vec![gx, gw, gb]
    }
}

/// 1-D temporal convolution of `[T×Cin]` with `[k×Cin×Cout]` weights.
pub fn conv1d_temporal<S: Real>(
    tape: &mut Tape<S>,
    x: Var,
    w: Var,
    b: Var,
    stride: usize,
    padding: Padding,
) -> Result<Var> {
    let (xs, ws, bs) = (tape.shape(x), tape.shape(w), tape.shape(b));
    let [t, cin] = *xs else {
        return Err(shape_err("conv1d_temporal", "[T, Cin]", xs));
    };
    let [k, wcin, cout] = *ws else {
        return Err(shape_err("conv1d_temporal", "[k, Cin, Cout]", ws));
    };
    if wcin != cin {
        return Err(shape_err("conv1d_temporal", cin, wcin));
    }
    if bs != [cout] {
        return Err(shape_err("conv1d_temporal", [cout], bs));
    }
    let (t_out, pad_left) = conv_geometry(t, k, stride, padding)?;
    let layout = kernel::Layout {
        t_in: t,
        t_out,
        k,
        cin,
        cout,
        stride,
        pad_left,
        x_off: 0,
        x_stride: cin,
        o_off: 0,
        o_stride: cout,
    };
    let bias = tape.value(b).data();
    let mut out: Vec<S> = (0..t_out).flat_map(|_| bias.iter().copied()).collect();
    kernel::forward(&layout, tape.value(x).data(), tape.value(w).data(), S::one(), &mut out);
    let out = Tensor::new(vec![t_out, cout], out)?;
    Ok(tape.push(out, &[x, w, b], Conv1dOp { layout }))
}

struct UpsampleOp {
    t: usize,
    row: usize,
    factor: usize,
}
impl<S: Real> Op<S> for UpsampleOp {
    fn name(&self) -> &'static str {
        "upsample_temporal"
    }
    fn backward(&self, _: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        vec![needs[0].then(|| {
            let mut gi = vec![S::zero(); self.t * self.row];
            for t in 0..self.t {
                for r in 0..self.factor {
                    let src = &g[(t * self.factor + r) * self.row..][..self.row];
                    axpy(S::one(), src, &mut gi[t * self.row..(t + 1) * self.row]);
                }
            }
            gi
        })]
    }
}

/// Nearest-neighbour repetition along the leading (time) axis.
pub fn upsample_temporal<S: Real>(tape: &mut Tape<S>, x: Var, factor: usize) -> Result<Var> {
    if factor < 1 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    let xt = tape.value(x);
    let shape = xt.shape();
    if shape.is_empty() {
        return Err(shape_err("upsample_temporal", "[T, ..]", shape));
    }
    let t = shape[0];
    let row = xt.len() / t.max(1);
    let mut data = Vec::with_capacity(xt.len() * factor);
    for ti in 0..t {
        for _ in 0..factor {
            data.extend_from_slice(&xt.data()[ti * row..(ti + 1) * row]);
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[0] = t * factor;
    let out = Tensor::new(out_shape, data)?;
    Ok(tape.push(out, &[x], UpsampleOp { t, row, factor }))
}

struct SqErrOp<S> {
    target: Vec<S>,
    weight: Option<Vec<S>>,
}
impl<S: Real> Op<S> for SqErrOp<S> {
    fn name(&self) -> &'static str {
        "sq_err_sum"
    }
    fn backward(&self, inputs: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        let two = S::lit(2.0) * g[0];
        vec![needs[0].then(|| {
            let p = inputs[0].data();
            match &self.weight {
                Some(w) => p
                    .iter()
                    .zip(&self.target)
                    .zip(w)
                    .map(|((&p, &t), &w)| two * w * (p - t))
                    .collect(),
                None => p.iter().zip(&self.target).map(|(&p, &t)| two * (p - t)).collect(),
            }
        })]
    }
}

/// `Σ w · (pred − target)²` against a constant target; `weight` defaults to ones.
pub fn sq_err_sum<S: Real>(tape: &mut Tape<S>, pred: Var, target: &[S], weight: Option<&[S]>) -> Result<Var> {
    let p = tape.value(pred);
    if p.len() != target.len() || weight.is_some_and(|w| w.len() != target.len()) {
        return Err(shape_err("sq_err_sum", p.len(), target.len()));
    }
    let total: S = match weight {
        Some(w) => p
            .data()
            .iter()
            .zip(target)
            .zip(w)
            .map(|((&p, &t), &w)| w * (p - t) * (p - t))
            .sum(),
        None => p.data().iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum(),
    };
    let op = SqErrOp {
        target: target.to_vec(),
        weight: weight.map(|w| w.to_vec()),
    };
    Ok(tape.push(Tensor::scalar(total), &[pred], op))
}

struct CumsumOp {
    t: usize,
    c: usize,
}
impl<S: Real> Op<S> for CumsumOp {
    fn name(&self) -> &'static str {
        "cumsum_time"
    }
    fn backward(&self, _: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        vec![needs[0].then(|| {
            // adjoint of an inclusive prefix sum is a suffix sum
            let mut gi = vec![S::zero(); self.t * self.c];
            let mut acc = vec![S::zero(); self.c];
            for t in (0..self.t).rev() {
                axpy(S::one(), &g[t * self.c..(t + 1) * self.c], &mut acc);
                gi[t * self.c..(t + 1) * self.c].copy_from_slice(&acc);
            }
            gi
        })]
    }
}

/// Inclusive prefix sum along the leading axis of a `[T×C]` tensor.
pub fn cumsum_time<S: Real>(tape: &mut Tape<S>, x: Var) -> Result<Var> {
    let xt = tape.value(x);
    let [t, c] = *xt.shape() else {
        return Err(shape_err("cumsum_time", "[T, C]", xt.shape()));
    };
    let out = Tensor::new(vec![t, c], prefix_sum(xt.data(), t, c))?;
    Ok(tape.push(out, &[x], CumsumOp { t, c }))
}

pub(crate) fn prefix_sum<S: Real>(data: &[S], t: usize, c: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(t * c);
    let mut acc = vec![S::zero(); c];
    for ti in 0..t {
        for (a, &v) in acc.iter_mut().zip(&data[ti * c..(ti + 1) * c]) {
            *a += v;
        }
        out.extend_from_slice(&acc);
    }
    out
}

#[inline]
pub(crate) fn axpy<S: Real>(a: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn t1(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let w = tape.constant(Tensor::new(vec![1, 2, 2], vec![1., 0., 0., 1.]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![2]));
        let y = conv1d_temporal(&mut tape, x, w, b, 1, Padding::Same).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn valid_conv_hand_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![4, 1], vec![1., 2., 3., 4.]).unwrap());
        let w = tape.constant(Tensor::new(vec![2, 1, 1], vec![1., 1.]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![1]));
        let y = conv1d_temporal(&mut tape, x, w, b, 1, Padding::Valid).unwrap();
        assert_eq!(tape.value(y).data(), &[3., 5., 7.]);
    }

    #[test]
    fn strided_same_conv_halves_length() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![4, 1]));
        let w = tape.constant(Tensor::zeros(vec![3, 1, 1]));
        let b = tape.constant(Tensor::zeros(vec![1]));
        let y = conv1d_temporal(&mut tape, x, w, b, 2, Padding::Same).unwrap();
        assert_eq!(tape.shape(y), &[2, 1]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![4, 2]));
        let w = tape.constant(Tensor::zeros(vec![3, 3, 1]));
        let b = tape.constant(Tensor::zeros(vec![1]));
        assert!(conv1d_temporal(&mut tape, x, w, b, 1, Padding::Same).is_err());
    }

    #[test]
    fn upsample_repeats_frames() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![2, 1], vec![1., 2.]).unwrap());
        let y = upsample_temporal(&mut tape, x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 1., 2., 2.]);
        let y1 = upsample_temporal(&mut tape, x, 1).unwrap();
        assert_eq!(tape.value(y1).data(), &[1., 2.]);
        let z = tape.constant(Tensor::zeros(vec![4, 3]));
        let z2 = upsample_temporal(&mut tape, z, 2).unwrap();
        assert_eq!(tape.shape(z2), &[8, 3]);
        assert!(upsample_temporal(&mut tape, x, 0).is_err());
    }

    #[test]
    fn cumsum_is_inclusive_prefix_sum() {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::new(vec![3, 1], vec![1., 2., 3.]).unwrap());
        let g = cumsum_time(&mut tape, v).unwrap();
        assert_eq!(tape.value(g).data(), &[1., 3., 6.]);
    }

    #[test]
    fn elementwise_ops_pass_grad_check() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_tensor(&mut rng, vec![5]);
            let b = rand_tensor(&mut rng, vec![5]);
            let err = grad_check(
                |tape, p| {
                    let s = add(tape, p[0], p[1])?;
                    let d = sub(tape, s, p[1])?;
                    let m = mul(tape, d, p[1])?;
                    let e = exp(tape, m);
                    let r = leaky_relu(tape, e, 0.2);
                    let q = scale(tape, r, -1.5);
                    let m2 = mul(tape, q, p[0])?;
                    let l = leaky_relu(tape, m2, 0.2);
                    Ok(sum(tape, l))
                },
                &[a, b],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn structural_ops_pass_grad_check() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let a = rand_tensor(&mut rng, vec![3, 2]);
            let b = rand_tensor(&mut rng, vec![3, 4]);
            let w = rand_tensor(&mut rng, vec![6, 5]);
            let bias = rand_tensor(&mut rng, vec![5]);
            let target: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).collect();
            let err = grad_check(
                |tape, p| {
                    let c = concat_channels(tape, p[0], p[1])?;
                    let up = upsample_temporal(tape, c, 2)?;
                    let flat = reshape(tape, up, vec![6, 6])?;
                    let cs = cumsum_time(tape, flat)?;
                    let first = slice(tape, cs, 6, 6)?;
                    let y = linear(tape, first, p[2], p[3])?;
                    sq_err_sum(tape, y, &target, Some(&[1.0, 0.5, 0.0, 2.0, 1.0]))
                },
                &[a, b, w, bias],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn conv1d_passes_grad_check() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let t = 4 + (seed as usize % 5);
            let stride = 1 + (seed as usize % 2);
            let padding = if seed % 3 == 0 { Padding::Valid } else { Padding::Same };
            let x = rand_tensor(&mut rng, vec![t, 2]);
            let w = rand_tensor(&mut rng, vec![3, 2, 3]);
            let b = rand_tensor(&mut rng, vec![3]);
            let err = grad_check(
                |tape, p| {
                    let y = conv1d_temporal(tape, p[0], p[1], p[2], stride, padding)?;
                    let y2 = mul(tape, y, y)?;
                    Ok(sum(tape, y2))
                },
                &[x, w, b],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    fn conv_stack<S: Real>(tape: &mut Tape<S>, p: &[Var]) -> Result<Var> {
        let y = conv1d_temporal(tape, p[0], p[1], p[2], 2, Padding::Same)?;
        let y = leaky_relu(tape, y, 0.2);
        let y2 = mul(tape, y, y)?;
        Ok(sum(tape, y2))
    }

    #[test]
    fn f32_backward_matches_f64_differences() {
        use crate::autodiff::grad_check_f32;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let params = [
                rand_tensor(&mut rng, vec![6, 2]),
                rand_tensor(&mut rng, vec![3, 2, 2]),
                rand_tensor(&mut rng, vec![2]),
            ];
            let err = grad_check_f32(conv_stack::<f32>, conv_stack::<f64>, &params, 1e-6).unwrap();
            assert!(err < 1e-3, "seed {seed}: {err}");
        }
    }

    #[test]
    fn linear_handles_row_batches() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap());
        let w = tape.constant(Tensor::new(vec![2, 1], vec![3., 4.]).unwrap());
        let b = tape.constant(t1(&[1.]));
        let y = linear(&mut tape, x, w, b).unwrap();
        assert_eq!(tape.shape(y), &[2, 1]);
        assert_eq!(tape.value(y).data(), &[4., 5.]);
    }
}
