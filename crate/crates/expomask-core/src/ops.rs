//! Tensor kernels with exact reverse-mode backward passes.
//!
//! Layout is NHWC throughout. Convolutions use the cross-correlation
//! convention with same padding; the transpose convolution is fixed to
//! kernel 3x3, stride 2 and exactly doubles each spatial extent, so skip
//! connections concatenate without cropping. Every reduction runs in a
//! fixed order, keeping results bit-reproducible.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn expect_rank4(t: &Tensor, what: &str) -> Result<()> {
    if t.ndim() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "{what} must be rank 4 (NHWC), got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn check_conv_shapes(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<usize> {
    expect_rank4(input, "conv input")?;
    expect_rank4(kernel, "conv kernel")?;
    let k = kernel.shape()[0];
    if kernel.shape()[1] != k || k.is_multiple_of(2) {
        return Err(Error::ShapeMismatch(format!(
            "conv kernel must be square with odd extent, got {:?}",
            kernel.shape()
        )));
    }
    if kernel.shape()[2] != input.shape()[3] {
        return Err(Error::ShapeMismatch(format!(
            "conv kernel expects {} input channels, input has {}",
            kernel.shape()[2],
            input.shape()[3]
        )));
    }
    if let Some(bias) = bias {
        if bias.shape() != [kernel.shape()[3]] {
            return Err(Error::ShapeMismatch(format!(
                "conv bias shape {:?} does not match {} output channels",
                bias.shape(),
                kernel.shape()[3]
            )));
        }
    }
    Ok(k)
}

/// Same-padding stride-1 cross-correlation:
/// `out[n,i,j,co] = bias[co] + sum input[n,i+di-pad,j+dj-pad,ci] * kernel[di,dj,ci,co]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let k = check_conv_shapes(input, kernel, Some(bias))?;
    let pad = k / 2;
    let (n_items, h, w, cin) = dims4(input);
    let cout = kernel.shape()[3];

    let mut out = Tensor::zeros(&[n_items, h, w, cout]);
    let x = input.data();
    let kd = kernel.data();
    let bd = bias.data();
    let od = out.data_mut();

    let mut acc = vec![0.0f64; cout];
    for n in 0..n_items {
        for i in 0..h {
            for j in 0..w {
                acc.copy_from_slice(bd);
                for di in 0..k {
                    let ii = i + di;
                    if ii < pad || ii - pad >= h {
                        continue;
                    }
                    let ii = ii - pad;
                    for dj in 0..k {
                        let jj = j + dj;
                        if jj < pad || jj - pad >= w {
                            continue;
                        }
                        let jj = jj - pad;
                        let x_base = ((n * h + ii) * w + jj) * cin;
                        let k_base = (di * k + dj) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[x_base + ci];
                            let krow = &kd[k_base + ci * cout..k_base + (ci + 1) * cout];
                            for (a, &kv) in acc.iter_mut().zip(krow) {
                                *a += xv * kv;
                            }
                        }
                    }
                }
                let o_base = ((n * h + i) * w + j) * cout;
                od[o_base..o_base + cout].copy_from_slice(&acc);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    dout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let k = check_conv_shapes(input, kernel, None)?;
    let pad = k / 2;
    let (n_items, h, w, cin) = dims4(input);
    let cout = kernel.shape()[3];
    if dout.shape() != [n_items, h, w, cout] {
        return Err(Error::ShapeMismatch(format!(
            "conv upstream shape {:?}, expected {:?}",
            dout.shape(),
            [n_items, h, w, cout]
        )));
    }

    let mut dinput = input.zeros_like();
    let mut dkernel = kernel.zeros_like();
    let mut dbias = Tensor::zeros(&[cout]);

    let x = input.data();
    let kd = kernel.data();
    let gd = dout.data();
    let dxd = dinput.data_mut();
    let dkd = dkernel.data_mut();
    let dbd = dbias.data_mut();

    for n in 0..n_items {
        for i in 0..h {
            for j in 0..w {
                let g_base = ((n * h + i) * w + j) * cout;
                let g_row = &gd[g_base..g_base + cout];
                for (b, &g) in dbd.iter_mut().zip(g_row) {
                    *b += g;
                }
                for di in 0..k {
                    let ii = i + di;
                    if ii < pad || ii - pad >= h {
                        continue;
                    }
                    let ii = ii - pad;
                    for dj in 0..k {
                        let jj = j + dj;
                        if jj < pad || jj - pad >= w {
                            continue;
                        }
                        let jj = jj - pad;
                        let x_base = ((n * h + ii) * w + jj) * cin;
                        let k_base = (di * k + dj) * cin * cout;
                        for ci in 0..cin {
                            let krow = &kd[k_base + ci * cout..k_base + (ci + 1) * cout];
                            let mut dot = 0.0;
                            for (&kv, &g) in krow.iter().zip(g_row) {
                                dot += kv * g;
                            }
                            dxd[x_base + ci] += dot;

                            let xv = x[x_base + ci];
                            let dkrow =
                                &mut dkd[k_base + ci * cout..k_base + (ci + 1) * cout];
                            for (dk, &g) in dkrow.iter_mut().zip(g_row) {
                                *dk += xv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dinput, dkernel, dbias))
}

/// Elementwise max(0, x).
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Backward of relu given the forward *input* (pre-activation).
pub fn relu_backward(pre_act: &Tensor, dout: &Tensor) -> Result<Tensor> {
    if pre_act.shape() != dout.shape() {
        return Err(Error::ShapeMismatch(format!(
            "relu backward: {:?} vs {:?}",
            pre_act.shape(),
            dout.shape()
        )));
    }
    let data = pre_act
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(pre_act.shape().to_vec(), data)
}

/// Elementwise logistic function.
pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Backward of sigmoid given the forward *output*.
pub fn sigmoid_backward(sig_out: &Tensor, dout: &Tensor) -> Result<Tensor> {
    if sig_out.shape() != dout.shape() {
        return Err(Error::ShapeMismatch(format!(
            "sigmoid backward: {:?} vs {:?}",
            sig_out.shape(),
            dout.shape()
        )));
    }
    let data = sig_out
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&s, &g)| s * (1.0 - s) * g)
        .collect();
    Tensor::new(sig_out.shape().to_vec(), data)
}

/// Argmax bookkeeping recorded by [`maxpool2`] for the backward pass.
#[derive(Clone, Debug)]
pub struct PoolTrace {
    input_shape: Vec<usize>,
    /// Flat input offset of the window maximum, one per output element.
    argmax: Vec<usize>,
}

/// 2x2 max pooling with stride 2. Ties resolve to the first (row-major)
/// maximum in the window.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, PoolTrace)> {
    expect_rank4(input, "maxpool input")?;
    let (n_items, h, w, c) = dims4(input);
    if h % 2 != 0 {
        return Err(Error::OddExtent {
            axis: "height",
            extent: h,
        });
    }
    if w % 2 != 0 {
        return Err(Error::OddExtent {
            axis: "width",
            extent: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n_items, oh, ow, c]);
    let mut argmax = vec![0usize; out.len()];
    let x = input.data();
    let od = out.data_mut();

    for n in 0..n_items {
        for oi in 0..oh {
            for oj in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for wi in 0..2 {
                        for wj in 0..2 {
                            let idx = ((n * h + 2 * oi + wi) * w + 2 * oj + wj) * c + ch;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o_idx = ((n * oh + oi) * ow + oj) * c + ch;
                    od[o_idx] = best;
                    argmax[o_idx] = best_idx;
                }
            }
        }
    }
    Ok((
        out,
        PoolTrace {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

/// Route each upstream gradient back to the recorded window maximum.
pub fn maxpool2_backward(trace: &PoolTrace, dout: &Tensor) -> Result<Tensor> {
    if dout.len() != trace.argmax.len() {
        return Err(Error::ShapeMismatch(format!(
            "maxpool backward: upstream has {} elements, trace recorded {}",
            dout.len(),
            trace.argmax.len()
        )));
    }
    let mut dinput = Tensor::zeros(&trace.input_shape);
    let dx = dinput.data_mut();
    for (&src, &g) in trace.argmax.iter().zip(dout.data()) {
        dx[src] += g;
    }
    Ok(dinput)
}

fn check_upconv_shapes(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<()> {
    expect_rank4(input, "upconv input")?;
    expect_rank4(kernel, "upconv kernel")?;
    if kernel.shape()[0] != 3 || kernel.shape()[1] != 3 {
        return Err(Error::ShapeMismatch(format!(
            "upconv kernel must be 3x3, got {:?}",
            kernel.shape()
        )));
    }
    if kernel.shape()[2] != input.shape()[3] {
        return Err(Error::ShapeMismatch(format!(
            "upconv kernel expects {} input channels, input has {}",
            kernel.shape()[2],
            input.shape()[3]
        )));
    }
    if let Some(bias) = bias {
        if bias.shape() != [kernel.shape()[3]] {
            return Err(Error::ShapeMismatch(format!(
                "upconv bias shape {:?} does not match {} output channels",
                bias.shape(),
                kernel.shape()[3]
            )));
        }
    }
    Ok(())
}

/// 3x3 stride-2 transpose convolution sized to exactly double each spatial
/// extent: output position `q = 2p + d - 1` for input position `p` and
/// kernel offset `d`.
pub fn upconv2(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_upconv_shapes(input, kernel, Some(bias))?;
    let (n_items, h, w, cin) = dims4(input);
    let cout = kernel.shape()[3];
    let (oh, ow) = (2 * h, 2 * w);

    let mut out = Tensor::zeros(&[n_items, oh, ow, cout]);
    {
        let od = out.data_mut();
        let bd = bias.data();
        for chunk in od.chunks_exact_mut(cout) {
            chunk.copy_from_slice(bd);
        }
        let x = input.data();
        let kd = kernel.data();
        for n in 0..n_items {
            for pi in 0..h {
                for pj in 0..w {
                    let x_base = ((n * h + pi) * w + pj) * cin;
                    for di in 0..3usize {
                        let qi = 2 * pi + di;
                        if qi < 1 || qi > oh {
                            continue;
                        }
                        let qi = qi - 1;
                        for dj in 0..3usize {
                            let qj = 2 * pj + dj;
                            if qj < 1 || qj > ow {
                                continue;
                            }
                            let qj = qj - 1;
                            let o_base = ((n * oh + qi) * ow + qj) * cout;
                            let k_base = (di * 3 + dj) * cin * cout;
                            for ci in 0..cin {
                                let xv = x[x_base + ci];
                                let krow =
                                    &kd[k_base + ci * cout..k_base + (ci + 1) * cout];
                                let orow = &mut od[o_base..o_base + cout];
                                for (o, &kv) in orow.iter_mut().zip(krow) {
                                    *o += xv * kv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`upconv2`] with respect to input, kernel and bias.
pub fn upconv2_backward(
    input: &Tensor,
    kernel: &Tensor,
    dout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    check_upconv_shapes(input, kernel, None)?;
    let (n_items, h, w, cin) = dims4(input);
    let cout = kernel.shape()[3];
    let (oh, ow) = (2 * h, 2 * w);
    if dout.shape() != [n_items, oh, ow, cout] {
        return Err(Error::ShapeMismatch(format!(
            "upconv upstream shape {:?}, expected {:?}",
            dout.shape(),
            [n_items, oh, ow, cout]
        )));
    }

    let mut dinput = input.zeros_like();
    let mut dkernel = kernel.zeros_like();
    let mut dbias = Tensor::zeros(&[cout]);

    let x = input.data();
    let kd = kernel.data();
    let gd = dout.data();
    let dbd = dbias.data_mut();
    for chunk in gd.chunks_exact(cout) {
        for (b, &g) in dbd.iter_mut().zip(chunk) {
            *b += g;
        }
    }

    let dxd = dinput.data_mut();
    let dkd = dkernel.data_mut();
    for n in 0..n_items {
        for pi in 0..h {
            for pj in 0..w {
                let x_base = ((n * h + pi) * w + pj) * cin;
                for di in 0..3usize {
                    let qi = 2 * pi + di;
                    if qi < 1 || qi > oh {
                        continue;
                    }
                    let qi = qi - 1;
                    for dj in 0..3usize {
                        let qj = 2 * pj + dj;
                        if qj < 1 || qj > ow {
                            continue;
                        }
                        let qj = qj - 1;
                        let g_base = ((n * oh + qi) * ow + qj) * cout;
                        let g_row = &gd[g_base..g_base + cout];
                        let k_base = (di * 3 + dj) * cin * cout;
                        for ci in 0..cin {
                            let krow = &kd[k_base + ci * cout..k_base + (ci + 1) * cout];
                            let mut dot = 0.0;
                            for (&kv, &g) in krow.iter().zip(g_row) {
                                dot += kv * g;
                            }
                            dxd[x_base + ci] += dot;

                            let xv = x[x_base + ci];
                            let dkrow =
                                &mut dkd[k_base + ci * cout..k_base + (ci + 1) * cout];
                            for (dk, &g) in dkrow.iter_mut().zip(g_row) {
                                *dk += xv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dinput, dkernel, dbias))
}

/// Stack two NHWC tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_rank4(a, "concat lhs")?;
    expect_rank4(b, "concat rhs")?;
    if a.shape()[..3] != b.shape()[..3] {
        return Err(Error::ShapeMismatch(format!(
            "concat: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (n_items, h, w, ca) = dims4(a);
    let cb = b.shape()[3];
    let mut out = Tensor::zeros(&[n_items, h, w, ca + cb]);
    let od = out.data_mut();
    let ad = a.data();
    let bd = b.data();
    for px in 0..n_items * h * w {
        od[px * (ca + cb)..px * (ca + cb) + ca].copy_from_slice(&ad[px * ca..(px + 1) * ca]);
        od[px * (ca + cb) + ca..(px + 1) * (ca + cb)]
            .copy_from_slice(&bd[px * cb..(px + 1) * cb]);
    }
    Ok(out)
}

/// Backward of [`concat_channels`]: split the upstream gradient back into
/// the two channel groups.
pub fn split_channels(d: &Tensor, ca: usize, cb: usize) -> Result<(Tensor, Tensor)> {
    expect_rank4(d, "split input")?;
    if d.shape()[3] != ca + cb {
        return Err(Error::ShapeMismatch(format!(
            "split: tensor has {} channels, expected {}+{}",
            d.shape()[3],
            ca,
            cb
        )));
    }
    let (n_items, h, w, _) = dims4(d);
    let mut a = Tensor::zeros(&[n_items, h, w, ca]);
    let mut b = Tensor::zeros(&[n_items, h, w, cb]);
    let dd = d.data();
    let ad = a.data_mut();
    let bd = b.data_mut();
    for px in 0..n_items * h * w {
        ad[px * ca..(px + 1) * ca].copy_from_slice(&dd[px * (ca + cb)..px * (ca + cb) + ca]);
        bd[px * cb..(px + 1) * cb]
            .copy_from_slice(&dd[px * (ca + cb) + ca..(px + 1) * (ca + cb)]);
    }
    Ok((a, b))
}

/// Inverted dropout: kept elements are scaled by 1/(1-rate) so the
/// expected activation is unchanged. Returns the output and the mask to
/// reuse in the backward pass. Rate 0 keeps everything.
pub fn dropout(x: &Tensor, rate: f64, rng: &mut impl Rng) -> (Tensor, Tensor) {
    if rate == 0.0 {
        return (x.clone(), Tensor::filled(x.shape(), 1.0));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask_data: Vec<f64> = (0..x.len())
        .map(|_| {
            if rng.random::<f64>() >= rate {
                keep_scale
            } else {
                0.0
            }
        })
        .collect();
    let mask = Tensor::new(x.shape().to_vec(), mask_data).expect("mask matches input shape");
    let out_data = x
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&v, &m)| v * m)
        .collect();
    let out = Tensor::new(x.shape().to_vec(), out_data).expect("output matches input shape");
    (out, mask)
}

/// Backward of dropout: multiply by the saved mask.
pub fn dropout_backward(mask: &Tensor, dout: &Tensor) -> Result<Tensor> {
    if mask.shape() != dout.shape() {
        return Err(Error::ShapeMismatch(format!(
            "dropout backward: {:?} vs {:?}",
            mask.shape(),
            dout.shape()
        )));
    }
    let data = mask
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&m, &g)| m * g)
        .collect();
    Tensor::new(mask.shape().to_vec(), data)
}

#[inline]
fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[1, 5, 5, 1], &mut rng);
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        k.data_mut()[4] = 1.0; // center tap
        let out = conv2d(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn conv_zero_kernel_yields_bias() {
        let x = Tensor::filled(&[1, 4, 4, 2], 3.0);
        let k = Tensor::zeros(&[3, 3, 2, 3]);
        let b = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let out = conv2d(&x, &k, &b).unwrap();
        for px in out.data().chunks_exact(3) {
            assert_eq!(px, &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn conv_all_ones_counts_padded_taps() {
        // Zero padding: corners see 4 taps, edges 6, interior 9.
        let x = Tensor::filled(&[1, 3, 3, 1], 1.0);
        let k = Tensor::filled(&[3, 3, 1, 1], 1.0);
        let out = conv2d(&x, &k, &Tensor::zeros(&[1])).unwrap();
        let expected = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0];
        assert_eq!(out.data(), &expected);
    }

    #[test]
    fn conv_is_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[2, 4, 4, 3], &mut rng);
        let z = random_tensor(&[2, 4, 4, 3], &mut rng);
        let k = random_tensor(&[3, 3, 3, 2], &mut rng);
        let zero_bias = Tensor::zeros(&[2]);
        let (a, b) = (0.7, -1.3);

        let mixed = Tensor::new(
            x.shape().to_vec(),
            x.data()
                .iter()
                .zip(z.data())
                .map(|(&xv, &zv)| a * xv + b * zv)
                .collect(),
        )
        .unwrap();
        let lhs = conv2d(&mixed, &k, &zero_bias).unwrap();
        let cx = conv2d(&x, &k, &zero_bias).unwrap();
        let cz = conv2d(&z, &k, &zero_bias).unwrap();
        for ((&l, &rx), &rz) in lhs.data().iter().zip(cx.data()).zip(cz.data()) {
            assert!((l - (a * rx + b * rz)).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::zeros(&[1, 4, 4, 2]);
        let k = Tensor::zeros(&[3, 3, 3, 1]);
        assert!(conv2d(&x, &k, &Tensor::zeros(&[1])).is_err());
        let k = Tensor::zeros(&[2, 2, 2, 1]);
        assert!(conv2d(&x, &k, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn relu_and_sigmoid_basics() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let s = sigmoid(&Tensor::new(vec![1], vec![0.0]).unwrap());
        assert_eq!(s.data(), &[0.5]);
    }

    #[test]
    fn maxpool_records_argmax_and_routes_gradient() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, trace) = maxpool2(&x).unwrap();
        assert_eq!(out.data(), &[4.0]);
        // (1,1) is flat offset 3.
        let dout = Tensor::new(vec![1, 1, 1, 1], vec![5.0]).unwrap();
        let dx = maxpool2_backward(&trace, &dout).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 5.0]);
    }

    #[test]
    fn maxpool_gradient_mass_is_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&[2, 6, 6, 3], &mut rng);
        let (out, trace) = maxpool2(&x).unwrap();
        let dout = random_tensor(out.shape(), &mut rng);
        let dx = maxpool2_backward(&trace, &dout).unwrap();
        let upstream: f64 = dout.data().iter().map(|g| g.abs()).sum();
        let routed: f64 = dx.data().iter().map(|g| g.abs()).sum();
        assert!((upstream - routed).abs() < 1e-12);
    }

    #[test]
    fn maxpool_rejects_odd_extents() {
        let x = Tensor::zeros(&[1, 3, 4, 1]);
        assert!(matches!(maxpool2(&x), Err(Error::OddExtent { .. })));
        let x = Tensor::zeros(&[1, 4, 5, 1]);
        assert!(matches!(maxpool2(&x), Err(Error::OddExtent { .. })));
    }

    #[test]
    fn upconv_doubles_spatial_extent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&[2, 3, 5, 4], &mut rng);
        let k = random_tensor(&[3, 3, 4, 2], &mut rng);
        let out = upconv2(&x, &k, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out.shape(), &[2, 6, 10, 2]);
    }

    #[test]
    fn upconv_is_adjoint_of_its_input_gradient() {
        // <upconv(x), g> == <x, upconv_backward_input(g)> for zero bias.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&[1, 4, 4, 3], &mut rng);
        let k = random_tensor(&[3, 3, 3, 2], &mut rng);
        let out = upconv2(&x, &k, &Tensor::zeros(&[2])).unwrap();
        let g = random_tensor(out.shape(), &mut rng);
        let (dx, _, _) = upconv2_backward(&x, &k, &g).unwrap();
        let lhs: f64 = out.data().iter().zip(g.data()).map(|(&a, &b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(&a, &b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn concat_then_split_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_tensor(&[1, 2, 2, 3], &mut rng);
        let b = random_tensor(&[1, 2, 2, 5], &mut rng);
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), &[1, 2, 2, 8]);
        let (a2, b2) = split_channels(&cat, 3, 5).unwrap();
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn concat_rejects_mismatched_spatial_dims() {
        let a = Tensor::zeros(&[1, 2, 2, 1]);
        let b = Tensor::zeros(&[1, 2, 3, 1]);
        assert!(concat_channels(&a, &b).is_err());
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_tensor(&[1, 4, 4, 2], &mut rng);
        let (out, mask) = dropout(&x, 0.0, &mut rng);
        assert_eq!(out, x);
        assert!(mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn dropout_mask_values_and_reuse() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::filled(&[1, 8, 8, 4], 1.0);
        let rate = 0.25;
        let (out, mask) = dropout(&x, rate, &mut rng);
        let scale = 1.0 / (1.0 - rate);
        for (&o, &m) in out.data().iter().zip(mask.data()) {
            assert!(m == 0.0 || m == scale);
            assert_eq!(o, m);
        }
        // Backward multiplies by the same mask.
        let dout = Tensor::filled(x.shape(), 2.0);
        let dx = dropout_backward(&mask, &dout).unwrap();
        for (&d, &m) in dx.data().iter().zip(mask.data()) {
            assert_eq!(d, 2.0 * m);
        }
        // Some dropped, some kept at this size and rate.
        assert!(mask.data().contains(&0.0));
        assert!(mask.data().contains(&scale));
    }
}
