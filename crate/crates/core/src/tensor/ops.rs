use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use super::{Float, Graph, Result, Tensor, TensorError, Var};

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn is_suffix(full: &[usize], suffix: &[usize]) -> bool {
    suffix.len() <= full.len() && full[full.len() - suffix.len()..] == *suffix
}

/// `(outer, len, inner)` view of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::shape(
            op,
            format!("axis {axis} out of range for {shape:?}"),
        ));
    }
    Ok(())
}

/// Splitmix64 finalizer, used to derive independent dropout streams.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn permute_buf<T: Float>(data: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(data[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

impl<'g, T: Float> Var<'g, T> {
    fn check_same_graph(&self, other: &Var<'g, T>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(TensorError::Contract(format!(
                "{op}: operands from different graphs"
            )))
        }
    }

    fn unary(self, value: Vec<T>, backward: impl Fn(&[T]) -> Vec<T> + 'static) -> Var<'g, T> {
        let shape = self.shape();
        let out = Tensor::new(shape, value).expect("unary op preserves shape");
        self.graph.push(
            out,
            &[self.id],
            Box::new(move |g, _| vec![Some(backward(g))]),
        )
    }

    /// Elementwise binary op; `rhs` may have a shape equal to a suffix of `self`'s.
    fn binary(
        self,
        rhs: Var<'g, T>,
        op: &'static str,
        f: fn(T, T) -> T,
        da: fn(T, T, T) -> T,
        db: fn(T, T, T) -> T,
    ) -> Result<Var<'g, T>> {
        self.check_same_graph(&rhs, op)?;
        let a = self.value();
        let b = rhs.value();
        if !is_suffix(a.shape(), b.shape()) {
            return Err(TensorError::shape(
                op,
                format!("{:?} and {:?} do not broadcast", a.shape(), b.shape()),
            ));
        }
        let nb = b.numel();
        let out: Vec<T> = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % nb]))
            .collect();
        let out = Tensor::new(a.shape().to_vec(), out)?;
        Ok(self.graph.push(
            out,
            &[self.id, rhs.id],
            Box::new(move |g, needs| {
                let (ad, bd) = (a.data(), b.data());
                let ga = needs[0].then(|| {
                    g.iter()
                        .enumerate()
                        .map(|(i, &gi)| da(ad[i], bd[i % nb], gi))
                        .collect()
                });
                let gb = needs[1].then(|| {
                    let mut acc = vec![T::zero(); nb];
                    for (i, &gi) in g.iter().enumerate() {
                        acc[i % nb] += db(ad[i], bd[i % nb], gi);
                    }
                    acc
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(rhs, "add", |a, b| a + b, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(rhs, "sub", |a, b| a - b, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(rhs, "mul", |a, b| a * b, |_, b, g| g * b, |a, _, g| g * a)
    }

    pub fn scale(self, s: f64) -> Var<'g, T> {
        let s = T::of(s);
        let v = self.value().data().iter().map(|&x| x * s).collect();
        self.unary(v, move |g| g.iter().map(|&gi| gi * s).collect())
    }

    pub fn add_scalar(self, s: f64) -> Var<'g, T> {
        let s = T::of(s);
        let v = self.value().data().iter().map(|&x| x + s).collect();
        self.unary(v, |g| g.to_vec())
    }

    pub fn square(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.data().iter().map(|&a| a * a).collect();
        self.unary(v, move |g| {
            g.iter()
                .zip(x.data())
                .map(|(&gi, &a)| gi * (a + a))
                .collect()
        })
    }

    pub fn gelu(self) -> Var<'g, T> {
        let x = self.value();
        let c = T::of(SQRT_2_OVER_PI);
        let k = T::of(GELU_CUBIC);
        let half = T::of(0.5);
        let v = x
            .data()
            .iter()
            .map(|&a| half * a * (T::one() + (c * (a + k * a * a * a)).tanh()))
            .collect();
        self.unary(v, move |g| {
            g.iter()
                .zip(x.data())
                .map(|(&gi, &a)| {
                    let t = (c * (a + k * a * a * a)).tanh();
                    let du = c * (T::one() + T::of(3.0) * k * a * a);
                    gi * (half * (T::one() + t) + half * a * (T::one() - t * t) * du)
                })
                .collect()
        })
    }

    /// ELU with unit scale: `x` for positive inputs, `exp(x) - 1` otherwise.
    pub fn elu(self) -> Var<'g, T> {
        let x = self.value();
        let v = x
            .data()
            .iter()
            .map(|&a| if a > T::zero() { a } else { a.exp_m1() })
            .collect();
        self.unary(v, move |g| {
            g.iter()
                .zip(x.data())
                .map(|(&gi, &a)| if a > T::zero() { gi } else { gi * a.exp() })
                .collect()
        })
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`.
    pub fn dropout(self, p: f64) -> Result<Var<'g, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Config(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !self.graph.is_training() || p == 0.0 {
            return Ok(self);
        }
        let (seed, op, step) = self.graph.next_dropout_key();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(seed) ^ mix(op.wrapping_add(1)) ^ step));
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value().numel())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let v = self
            .value()
            .data()
            .iter()
            .zip(&mask)
            .map(|(&a, &m)| a * m)
            .collect();
        Ok(self.unary(v, move |g| {
            g.iter().zip(&mask).map(|(&gi, &m)| gi * m).collect()
        }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        if numel(shape) != x.numel() {
            return Err(TensorError::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", x.shape()),
            ));
        }
        let out = Tensor::new(shape.to_vec(), x.data().to_vec())?;
        Ok(self
            .graph
            .push(out, &[self.id], Box::new(|g, _| vec![Some(g.to_vec())])))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || axes
                .iter()
                .any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
        {
            return Err(TensorError::shape(
                "permute",
                format!("{axes:?} is not a permutation of {rank} axes"),
            ));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out = Tensor::new(out_shape.clone(), permute_buf(x.data(), &shape, axes))?;
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(self.graph.push(
            out,
            &[self.id],
            Box::new(move |g, _| vec![Some(permute_buf(g, &out_shape, &inverse))]),
        ))
    }

    pub fn transpose(self, a: usize, b: usize) -> Result<Var<'g, T>> {
        let rank = self.shape().len();
        check_axis("transpose", &self.shape(), a.max(b))?;
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(a, b);
        self.permute(&axes)
    }

    pub fn concat(parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::shape("concat", "no inputs"))?;
        let graph = first.graph;
        let base = first.shape();
        check_axis("concat", &base, axis)?;
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        for (p, v) in parts.iter().zip(&values) {
            first.check_same_graph(p, "concat")?;
            let s = v.shape();
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(TensorError::shape(
                    "concat",
                    format!("{base:?} and {s:?} differ off axis {axis}"),
                ));
            }
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &len) in values.iter().zip(&lens) {
                let chunk = len * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(graph.push(
            Tensor::new(shape, data)?,
            &ids,
            Box::new(move |g, needs| {
                let mut grads: Vec<Vec<T>> = lens
                    .iter()
                    .map(|&len| Vec::with_capacity(outer * len * inner))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gr, &len) in grads.iter_mut().zip(&lens) {
                        gr.extend_from_slice(&g[pos..pos + len * inner]);
                        pos += len * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(needs)
                    .map(|(gr, &n)| n.then_some(gr))
                    .collect()
            }),
        ))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        check_axis("slice", &shape, axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::shape(
                "slice",
                format!("range {start}..{} out of bounds for {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.graph.push(
            Tensor::new(out_shape, data)?,
            &[self.id],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Picks one index along `axis` and drops that axis.
    pub fn select(self, axis: usize, index: usize) -> Result<Var<'g, T>> {
        let mut shape = self.shape();
        let sliced = self.slice(axis, index, 1)?;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        sliced.reshape(&shape)
    }

    /// Repeats `self` over leading dimensions; its shape must be a suffix of `shape`.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        if !is_suffix(shape, x.shape()) {
            return Err(TensorError::shape(
                "broadcast_to",
                format!("{:?} is not a suffix of {shape:?}", x.shape()),
            ));
        }
        let n = x.numel();
        let reps = numel(shape) / n;
        let mut data = Vec::with_capacity(reps * n);
        for _ in 0..reps {
            data.extend_from_slice(x.data());
        }
        Ok(self.graph.push(
            Tensor::new(shape.to_vec(), data)?,
            &[self.id],
            Box::new(move |g, _| {
                let mut acc = vec![T::zero(); n];
                for chunk in g.chunks(n) {
                    acc.iter_mut().zip(chunk).for_each(|(a, &b)| *a += b);
                }
                vec![Some(acc)]
            }),
        ))
    }

    pub fn sum(self) -> Var<'g, T> {
        let x = self.value();
        let n = x.numel();
        let s: T = x.data().iter().copied().sum();
        self.graph.push(
            Tensor::scalar(s),
            &[self.id],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = self.value().numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// Softmax over the last axis, with the row maximum subtracted first.
    pub fn softmax(self) -> Var<'g, T> {
        let x = self.value();
        let d = *x.shape().last().expect("rank >= 1");
        let mut y = x.data().to_vec();
        for row in y.chunks_mut(d) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let saved = y.clone();
        self.unary(y, move |g| {
            let mut gx = Vec::with_capacity(g.len());
            for (gr, yr) in g.chunks(d).zip(saved.chunks(d)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                gx.extend(gr.iter().zip(yr).map(|(&a, &b)| b * (a - dot)));
            }
            gx
        })
    }

    pub fn log_softmax(self) -> Var<'g, T> {
        let x = self.value();
        let d = *x.shape().last().expect("rank >= 1");
        let mut y = x.data().to_vec();
        for row in y.chunks_mut(d) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let saved = y.clone();
        self.unary(y, move |g| {
            let mut gx = Vec::with_capacity(g.len());
            for (gr, yr) in g.chunks(d).zip(saved.chunks(d)) {
                let total: T = gr.iter().copied().sum();
                gx.extend(gr.iter().zip(yr).map(|(&a, &b)| a - b.exp() * total));
            }
            gx
        })
    }

    /// Mean negative log-likelihood of `labels` under row-wise log-probabilities.
    pub fn nll(self, labels: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(TensorError::shape(
                "nll",
                format!("log-probs {shape:?} vs {} labels", labels.len()),
            ));
        }
        let k = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::shape(
                "nll",
                format!("label {bad} out of range for {k} classes"),
            ));
        }
        let rows = labels.len();
        let total: T = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| x.data()[r * k + l])
            .sum();
        let labels = labels.to_vec();
        Ok(self.graph.push(
            Tensor::scalar(-total / T::of(rows as f64)),
            &[self.id],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); rows * k];
                let w = -g[0] / T::of(rows as f64);
                for (r, &l) in labels.iter().enumerate() {
                    gx[r * k + l] = w;
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Divides each last-axis row by its L2 norm (floored at `eps`).
    pub fn l2_normalize(self, eps: f64) -> Var<'g, T> {
        let x = self.value();
        let d = *x.shape().last().expect("rank >= 1");
        let eps = T::of(eps);
        let norms: Vec<T> = x
            .data()
            .chunks(d)
            .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps))
            .collect();
        let y: Vec<T> = x
            .data()
            .chunks(d)
            .zip(&norms)
            .flat_map(|(r, &n)| r.iter().map(move |&v| v / n))
            .collect();
        let saved = y.clone();
        self.unary(y, move |g| {
            let mut gx = Vec::with_capacity(g.len());
            for ((gr, yr), &n) in g.chunks(d).zip(saved.chunks(d)).zip(&norms) {
                let raw_norm: T = yr.iter().map(|&v| v * v).sum::<T>().sqrt() * n;
                if raw_norm > eps {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    gx.extend(gr.iter().zip(yr).map(|(&a, &b)| (a - b * dot) / n));
                } else {
                    gx.extend(gr.iter().map(|&a| a / n));
                }
            }
            gx
        })
    }

    /// Non-overlapping window mean along `axis`; the axis length must divide evenly.
    pub fn mean_pool(self, axis: usize, window: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        check_axis("mean_pool", &shape, axis)?;
        if window == 0 || shape[axis] % window != 0 {
            return Err(TensorError::shape(
                "mean_pool",
                format!(
                    "axis length {} not divisible by window {window}",
                    shape[axis]
                ),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let out_len = len / window;
        let w = T::of(1.0 / window as f64);
        let mut out = vec![T::zero(); outer * out_len * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                let dst_base = (o * out_len + l / window) * inner;
                for (d, &v) in out[dst_base..dst_base + inner].iter_mut().zip(src) {
                    *d += v * w;
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = out_len;
        Ok(self.graph.push(
            Tensor::new(out_shape, out)?,
            &[self.id],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let src_base = (o * out_len + l / window) * inner;
                        let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, &v) in dst.iter_mut().zip(&g[src_base..src_base + inner]) {
                            *d = v * w;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Repeats every entry along `axis` `factor` times.
    pub fn upsample_repeat(self, axis: usize, factor: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        check_axis("upsample_repeat", &shape, axis)?;
        if factor == 0 {
            return Err(TensorError::shape(
                "upsample_repeat",
                "factor must be positive",
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * len * factor * inner);
        for o in 0..outer {
            for l in 0..len {
                let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for _ in 0..factor {
                    out.extend_from_slice(src);
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len * factor;
        Ok(self.graph.push(
            Tensor::new(out_shape, out)?,
            &[self.id],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for r in 0..factor {
                            let base = ((o * len + l) * factor + r) * inner;
                            dst.iter_mut()
                                .zip(&g[base..base + inner])
                                .for_each(|(d, &v)| *d += v);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// `[..., m, k] · [k, n]`, with all leading dimensions folded into rows.
    pub fn matmul(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.check_same_graph(&rhs, "matmul")?;
        let a = self.value();
        let b = rhs.value();
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        if sb.len() != 2 || sa.len() < 2 || sa[sa.len() - 1] != sb[0] {
            return Err(TensorError::shape(
                "matmul",
                format!("cannot multiply {sa:?} by {sb:?}"),
            ));
        }
        let k = sb[0];
        let n = sb[1];
        let m = a.numel() / k;
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            a.data(),
            (k as isize, 1),
            b.data(),
            (n as isize, 1),
            &mut out,
            false,
        );
        let mut out_shape = sa;
        *out_shape.last_mut().expect("rank >= 2") = n;
        Ok(self.graph.push(
            Tensor::new(out_shape, out)?,
            &[self.id, rhs.id],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    T::gemm(
                        m,
                        n,
                        k,
                        g,
                        (n as isize, 1),
                        b.data(),
                        (1, n as isize),
                        &mut ga,
                        false,
                    );
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    T::gemm(
                        k,
                        m,
                        n,
                        a.data(),
                        (1, k as isize),
                        g,
                        (n as isize, 1),
                        &mut gb,
                        false,
                    );
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Batched `[b, m, k] · [b, k, n]`.
    pub fn bmm(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.batched_matmul(rhs, false)
    }

    /// Batched `[b, m, k] · [b, n, k]ᵀ`.
    pub fn bmm_t(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.batched_matmul(rhs, true)
    }

    fn batched_matmul(self, rhs: Var<'g, T>, trans_b: bool) -> Result<Var<'g, T>> {
        self.check_same_graph(&rhs, "bmm")?;
        let a = self.value();
        let b = rhs.value();
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let ok = sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && {
            if trans_b {
                sa[2] == sb[2]
            } else {
                sa[2] == sb[1]
            }
        };
        if !ok {
            return Err(TensorError::shape(
                "bmm",
                format!("cannot batch-multiply {sa:?} by {sb:?} (transposed rhs: {trans_b})"),
            ));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        // Strides of the logical k×n right operand inside one batch slice.
        let b_strides = if trans_b {
            (1, k as isize)
        } else {
            (n as isize, 1)
        };
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            T::gemm(
                m,
                k,
                n,
                &a.data()[i * m * k..(i + 1) * m * k],
                (k as isize, 1),
                &b.data()[i * k * n..(i + 1) * k * n],
                b_strides,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        Ok(self.graph.push(
            Tensor::new(vec![batch, m, n], out)?,
            &[self.id, rhs.id],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![T::zero(); batch * m * k];
                    // dA = dC · (logical B)ᵀ
                    let bt_strides = (b_strides.1, b_strides.0);
                    for i in 0..batch {
                        T::gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            (n as isize, 1),
                            &b.data()[i * k * n..(i + 1) * k * n],
                            bt_strides,
                            &mut ga[i * m * k..(i + 1) * m * k],
                            false,
                        );
                    }
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![T::zero(); batch * k * n];
                    for i in 0..batch {
                        let gs = &g[i * m * n..(i + 1) * m * n];
                        let as_ = &a.data()[i * m * k..(i + 1) * m * k];
                        let dst = &mut gb[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            // stored B is n×k: dB = dCᵀ · A
                            T::gemm(
                                n,
                                m,
                                k,
                                gs,
                                (1, n as isize),
                                as_,
                                (k as isize, 1),
                                dst,
                                false,
                            );
                        } else {
                            // dB = Aᵀ · dC
                            T::gemm(
                                k,
                                m,
                                n,
                                as_,
                                (1, k as isize),
                                gs,
                                (n as isize, 1),
                                dst,
                                false,
                            );
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// 1D cross-correlation over `[batch, c_in, len]` (or `[c_in, len]`) with
    /// kernels `[c_out, c_in, k]` and independent left/right zero padding.
    pub fn conv1d_padded(
        self,
        kernels: Var<'g, T>,
        bias: Option<Var<'g, T>>,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Var<'g, T>> {
        self.check_same_graph(&kernels, "conv1d")?;
        let x = self.value();
        let w = kernels.value();
        let xs = x.shape().to_vec();
        let ws = w.shape().to_vec();
        let (batch, c_in, len) = match xs.as_slice() {
            [c, l] => (1, *c, *l),
            [b, c, l] => (*b, *c, *l),
            _ => {
                return Err(TensorError::shape(
                    "conv1d",
                    format!("input must be [c_in, len] or [batch, c_in, len], got {xs:?}"),
                ))
            }
        };
        if ws.len() != 3 || ws[1] != c_in {
            return Err(TensorError::shape(
                "conv1d",
                format!("kernels {ws:?} do not match input {xs:?}"),
            ));
        }
        let (c_out, k) = (ws[0], ws[2]);
        let padded = len + pad_left + pad_right;
        if stride == 0 || padded < k {
            return Err(TensorError::shape(
                "conv1d",
                format!("kernel of length {k} longer than padded input {padded} (stride {stride})"),
            ));
        }
        let bias_val = match bias {
            Some(b) => {
                self.check_same_graph(&b, "conv1d")?;
                let bv = b.value();
                if bv.shape() != [c_out] {
                    return Err(TensorError::shape(
                        "conv1d",
                        format!("bias {:?} for {c_out} output channels", bv.shape()),
                    ));
                }
                Some(bv)
            }
            None => None,
        };
        let geom = ConvGeom {
            c_in,
            len,
            k,
            stride,
            pad_left,
            len_out: (padded - k) / stride + 1,
        };
        let len_out = geom.len_out;
        let rows = c_in * k;
        let chunk = (1 << 22) / (rows * len_out).max(1);
        let chunk = chunk.clamp(1, batch);

        let mut out = vec![T::zero(); batch * c_out * len_out];
        let mut cols = Vec::new();
        let mut tmp = Vec::new();
        for start in (0..batch).step_by(chunk) {
            let nb = chunk.min(batch - start);
            geom.im2col(
                &x.data()[start * c_in * len..(start + nb) * c_in * len],
                nb,
                &mut cols,
            );
            tmp.clear();
            tmp.resize(c_out * nb * len_out, T::zero());
            let width = nb * len_out;
            T::gemm(
                c_out,
                rows,
                width,
                w.data(),
                (rows as isize, 1),
                &cols,
                (width as isize, 1),
                &mut tmp,
                false,
            );
            for b in 0..nb {
                for co in 0..c_out {
                    let dst = &mut out[((start + b) * c_out + co) * len_out..][..len_out];
                    dst.copy_from_slice(&tmp[co * width + b * len_out..][..len_out]);
                    if let Some(bv) = &bias_val {
                        let bb = bv.data()[co];
                        dst.iter_mut().for_each(|v| *v += bb);
                    }
                }
            }
        }
        let out_shape = if xs.len() == 2 {
            vec![c_out, len_out]
        } else {
            vec![batch, c_out, len_out]
        };
        let mut inputs = vec![self.id, kernels.id];
        if let Some(b) = bias {
            inputs.push(b.id);
        }
        let has_bias = bias.is_some();
        Ok(self.graph.push(
            Tensor::new(out_shape, out)?,
            &inputs,
            Box::new(move |g, needs| {
                let mut gx = needs[0].then(|| vec![T::zero(); batch * c_in * len]);
                let mut gw = needs[1].then(|| vec![T::zero(); c_out * rows]);
                let mut cols = Vec::new();
                let mut gcols = Vec::new();
                let mut gtmp = Vec::new();
                for start in (0..batch).step_by(chunk) {
                    let nb = chunk.min(batch - start);
                    let width = nb * len_out;
                    gtmp.clear();
                    gtmp.resize(c_out * width, T::zero());
                    for b in 0..nb {
                        for co in 0..c_out {
                            gtmp[co * width + b * len_out..][..len_out].copy_from_slice(
                                &g[((start + b) * c_out + co) * len_out..][..len_out],
                            );
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        geom.im2col(
                            &x.data()[start * c_in * len..(start + nb) * c_in * len],
                            nb,
                            &mut cols,
                        );
                        // dW += dOut · colsᵀ
                        T::gemm(
                            c_out,
                            width,
                            rows,
                            &gtmp,
                            (width as isize, 1),
                            &cols,
                            (1, width as isize),
                            gw,
                            true,
                        );
                    }
                    if let Some(gx) = gx.as_mut() {
                        gcols.clear();
                        gcols.resize(rows * width, T::zero());
                        // dcols = Wᵀ · dOut
                        T::gemm(
                            rows,
                            c_out,
                            width,
                            w.data(),
                            (1, rows as isize),
                            &gtmp,
                            (width as isize, 1),
                            &mut gcols,
                            false,
                        );
                        geom.col2im(
                            &gcols,
                            nb,
                            &mut gx[start * c_in * len..(start + nb) * c_in * len],
                        );
                    }
                }
                let mut res = vec![gx, gw];
                if has_bias {
                    res.push(needs[2].then(|| {
                        let mut gb = vec![T::zero(); c_out];
                        for b in 0..batch {
                            for (co, acc) in gb.iter_mut().enumerate() {
                                *acc += g[(b * c_out + co) * len_out..][..len_out]
                                    .iter()
                                    .copied()
                                    .sum::<T>();
                            }
                        }
                        gb
                    }));
                }
                res
            }),
        ))
    }

    /// Symmetric-padding 1D convolution: `len_out = (len + 2·padding − k) / stride + 1`.
    pub fn conv1d(self, kernels: Var<'g, T>, stride: usize, padding: usize) -> Result<Var<'g, T>> {
        self.conv1d_padded(kernels, None, stride, padding, padding)
    }

    /// Layer normalization over the last axis followed by the `gamma`/`beta` affine.
    pub fn layer_norm(self, gamma: Var<'g, T>, beta: Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
        self.check_same_graph(&gamma, "layer_norm")?;
        self.check_same_graph(&beta, "layer_norm")?;
        if eps <= 0.0 {
            return Err(TensorError::Config(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        let x = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let d = *x.shape().last().expect("rank >= 1");
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(TensorError::shape(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} for last axis {d}",
                    gv.shape(),
                    bv.shape()
                ),
            ));
        }
        let eps = T::of(eps);
        let inv_d = T::of(1.0 / d as f64);
        let mut xhat = Vec::with_capacity(x.numel());
        let mut inv_std = Vec::with_capacity(x.numel() / d);
        for row in x.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            xhat.extend(row.iter().map(|&v| (v - mean) * inv));
        }
        let out: Vec<T> = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| h * gv.data()[i % d] + bv.data()[i % d])
            .collect();
        Ok(self.graph.push(
            Tensor::new(x.shape().to_vec(), out)?,
            &[self.id, gamma.id, beta.id],
            Box::new(move |g, needs| {
                let gd = gv.data();
                let gx = needs[0].then(|| {
                    let mut gx = Vec::with_capacity(g.len());
                    for ((gr, hr), &inv) in g.chunks(d).zip(xhat.chunks(d)).zip(&inv_std) {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for ((&gi, &h), &gam) in gr.iter().zip(hr).zip(gd) {
                            let dh = gi * gam;
                            s1 += dh;
                            s2 += dh * h;
                        }
                        gx.extend(gr.iter().zip(hr).zip(gd).map(|((&gi, &h), &gam)| {
                            inv * (gi * gam - s1 * inv_d - h * s2 * inv_d)
                        }));
                    }
                    gx
                });
                let ggamma = needs[1].then(|| {
                    let mut acc = vec![T::zero(); d];
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((a, &gi), &h) in acc.iter_mut().zip(gr).zip(hr) {
                            *a += gi * h;
                        }
                    }
                    acc
                });
                let gbeta = needs[2].then(|| {
                    let mut acc = vec![T::zero(); d];
                    for gr in g.chunks(d) {
                        acc.iter_mut().zip(gr).for_each(|(a, &gi)| *a += gi);
                    }
                    acc
                });
                vec![gx, ggamma, gbeta]
            }),
        ))
    }

    /// Full-length DFT magnitude of every last-axis row. The result is a
    /// constant: no gradient flows back into the input.
    pub fn fft_magnitude(self) -> Var<'g, T> {
        let x = self.value();
        let d = *x.shape().last().expect("rank >= 1");
        let out = fft_magnitude_rows(x.data(), d);
        self.graph
            .constant(Tensor::new(x.shape().to_vec(), out).expect("same shape"))
    }

    /// Depthwise 2D convolution over a channels-last grid `[batch, h, w, d]` with
    /// per-feature kernels `[d, kh, kw]` (odd sizes), zero-padded to keep the grid size.
    pub fn depthwise_conv2d(self, kernels: Var<'g, T>) -> Result<Var<'g, T>> {
        self.check_same_graph(&kernels, "depthwise_conv2d")?;
        let x = self.value();
        let kv = kernels.value();
        let (xs, ks) = (x.shape().to_vec(), kv.shape().to_vec());
        if xs.len() != 4 || ks.len() != 3 || ks[0] != xs[3] || ks[1] % 2 == 0 || ks[2] % 2 == 0 {
            return Err(TensorError::shape(
                "depthwise_conv2d",
                format!("input {xs:?} with kernels {ks:?}"),
            ));
        }
        let (batch, h, w, d) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw) = (ks[1], ks[2]);
        let (ph, pw) = (kh / 2, kw / 2);
        let taps = move |f: &mut dyn FnMut(usize, usize, usize)| {
            // f(out_index_base, in_index_base, kernel_offset) over valid taps
            for b in 0..batch {
                for i in 0..h {
                    for j in 0..w {
                        let out_base = ((b * h + i) * w + j) * d;
                        for di in 0..kh {
                            let si = i + di;
                            if si < ph || si - ph >= h {
                                continue;
                            }
                            for dj in 0..kw {
                                let sj = j + dj;
                                if sj < pw || sj - pw >= w {
                                    continue;
                                }
                                let in_base = ((b * h + si - ph) * w + sj - pw) * d;
                                f(out_base, in_base, di * kw + dj);
                            }
                        }
                    }
                }
            }
        };
        let kk = kh * kw;
        let mut out = vec![T::zero(); x.numel()];
        {
            let (xd, kd) = (x.data(), kv.data());
            taps(&mut |ob, ib, t| {
                for c in 0..d {
                    out[ob + c] += kd[c * kk + t] * xd[ib + c];
                }
            });
        }
        Ok(self.graph.push(
            Tensor::new(xs, out)?,
            &[self.id, kernels.id],
            Box::new(move |g, needs| {
                let (xd, kd) = (x.data(), kv.data());
                let mut gx = needs[0].then(|| vec![T::zero(); xd.len()]);
                let mut gk = needs[1].then(|| vec![T::zero(); kd.len()]);
                taps(&mut |ob, ib, t| {
                    for c in 0..d {
                        let gi = g[ob + c];
                        if let Some(gx) = gx.as_mut() {
                            gx[ib + c] += kd[c * kk + t] * gi;
                        }
                        if let Some(gk) = gk.as_mut() {
                            gk[c * kk + t] += xd[ib + c] * gi;
                        }
                    }
                });
                vec![gx, gk]
            }),
        ))
    }

    /// Replaces the last-axis rows flagged in `mask` with `token`.
    pub fn mask_rows(self, mask: &[bool], token: Var<'g, T>) -> Result<Var<'g, T>> {
        self.check_same_graph(&token, "mask_rows")?;
        let x = self.value();
        let tv = token.value();
        let d = *x.shape().last().expect("rank >= 1");
        if tv.shape() != [d] || mask.len() * d != x.numel() {
            return Err(TensorError::shape(
                "mask_rows",
                format!(
                    "input {:?}, token {:?}, {} mask rows",
                    x.shape(),
                    tv.shape(),
                    mask.len()
                ),
            ));
        }
        let mut out = x.data().to_vec();
        for (row, &m) in out.chunks_mut(d).zip(mask) {
            if m {
                row.copy_from_slice(tv.data());
            }
        }
        let mask = mask.to_vec();
        Ok(self.graph.push(
            Tensor::new(x.shape().to_vec(), out)?,
            &[self.id, token.id],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut gx = g.to_vec();
                    for (row, &m) in gx.chunks_mut(d).zip(&mask) {
                        if m {
                            row.iter_mut().for_each(|v| *v = T::zero());
                        }
                    }
                    gx
                });
                let gt = needs[1].then(|| {
                    let mut acc = vec![T::zero(); d];
                    for (row, &m) in g.chunks(d).zip(&mask) {
                        if m {
                            acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                        }
                    }
                    acc
                });
                vec![gx, gt]
            }),
        ))
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    len: usize,
    k: usize,
    stride: usize,
    pad_left: usize,
    len_out: usize,
}

impl ConvGeom {
    /// Column matrix `[c_in·k, nb·len_out]` for `nb` consecutive batch items.
    fn im2col<T: Float>(&self, x: &[T], nb: usize, cols: &mut Vec<T>) {
        let width = nb * self.len_out;
        cols.clear();
        cols.resize(self.c_in * self.k * width, T::zero());
        for b in 0..nb {
            for c in 0..self.c_in {
                let src = &x[(b * self.c_in + c) * self.len..][..self.len];
                for t in 0..self.k {
                    let row =
                        &mut cols[(c * self.k + t) * width + b * self.len_out..][..self.len_out];
                    for (o, dst) in row.iter_mut().enumerate() {
                        let pos = o * self.stride + t;
                        if pos >= self.pad_left && pos - self.pad_left < self.len {
                            *dst = src[pos - self.pad_left];
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Float>(&self, cols: &[T], nb: usize, gx: &mut [T]) {
        let width = nb * self.len_out;
        for b in 0..nb {
            for c in 0..self.c_in {
                let dst = &mut gx[(b * self.c_in + c) * self.len..][..self.len];
                for t in 0..self.k {
                    let row = &cols[(c * self.k + t) * width + b * self.len_out..][..self.len_out];
                    for (o, &v) in row.iter().enumerate() {
                        let pos = o * self.stride + t;
                        if pos >= self.pad_left && pos - self.pad_left < self.len {
                            dst[pos - self.pad_left] += v;
                        }
                    }
                }
            }
        }
    }
}

/// DFT magnitude of each length-`n` row. Bins `n−k` mirror bins `k`, so the
/// output keeps the row width.
pub fn fft_magnitude_rows<T: Float>(data: &[T], n: usize) -> Vec<T> {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(n) {
        buf.clear();
        buf.extend(row.iter().map(|&v| Complex::new(v.as_f64(), 0.0)));
        fft.process(&mut buf);
        out.extend(buf.iter().map(|c| T::of(c.norm())));
    }
    out
}

fn as_batched<'g, T: Float>(v: Var<'g, T>) -> Result<Var<'g, T>> {
    let s = v.shape();
    match s.len() {
        2 => v.reshape(&[1, s[0], s[1]]),
        3 => Ok(v),
        _ => Err(TensorError::shape(
            "attention",
            format!("expected [n, d] or [batch, n, d], got {s:?}"),
        )),
    }
}

/// Row-stochastic weights `softmax(Q·Kᵀ / sqrt(d_h))`.
pub fn attention_weights<'g, T: Float>(q: Var<'g, T>, k: Var<'g, T>) -> Result<Var<'g, T>> {
    let (qb, kb) = (as_batched(q)?, as_batched(k)?);
    let dh = *qb.shape().last().expect("rank 3");
    Ok(qb.bmm_t(kb)?.scale(1.0 / (dh as f64).sqrt()).softmax())
}

/// Scaled dot-product attention over `[n, d_h]` or `[batch, n, d_h]` inputs.
pub fn softmax_attention<'g, T: Float>(
    q: Var<'g, T>,
    k: Var<'g, T>,
    v: Var<'g, T>,
) -> Result<Var<'g, T>> {
    let rank = q.shape().len();
    let (ks, vs) = (k.shape(), v.shape());
    if ks != vs {
        return Err(TensorError::shape(
            "attention",
            format!("keys {ks:?} and values {vs:?} differ"),
        ));
    }
    let weights = attention_weights(q, k)?;
    let out = weights.bmm(as_batched(v)?)?;
    if rank == 2 {
        let s = out.shape();
        out.reshape(&[s[1], s[2]])
    } else {
        Ok(out)
    }
}

/// Convenience for graphs built from plain buffers in tests and oracles.
impl<T: Float> Graph<T> {
    pub fn constant_from(&self, shape: &[usize], data: &[f64]) -> Result<Var<'_, T>> {
        Ok(self.constant(Tensor::from_f64(shape, data)?))
    }

    pub fn param_from(&self, shape: &[usize], data: &[f64]) -> Result<Var<'_, T>> {
        Ok(self.param(Tensor::from_f64(shape, data)?))
    }
}
