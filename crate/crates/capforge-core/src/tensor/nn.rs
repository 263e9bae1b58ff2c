//! Neural-network operations on top of the autograd core: stable softmax,
//! layer/batch normalization, 3x3 same-padded convolution, 2x2 average
//! pooling, activations, inverted dropout, embedding lookup and the masked
//! negative-log-likelihood loss.

use super::{three_dims, two_dims, Shape, Tensor, TensorError};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Iterates lines along `axis`: yields (base offset, stride) pairs such that
/// the line's elements sit at `base + j * stride` for `j in 0..len(axis)`.
fn lines(shape: &[usize], axis: usize) -> (usize, usize, Vec<(usize, usize)>) {
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            out.push((o * axis_len * inner + i, inner));
        }
    }
    (axis_len, inner, out)
}

impl<F: Scalar> Tensor<F> {
    /// Numerically stable softmax along `axis` (max-subtraction).
    pub fn softmax(&self, axis: usize) -> Result<Tensor<F>, TensorError> {
        if axis >= self.rank() {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                rank: self.rank(),
            });
        }
        let (len, _, line_list) = lines(self.shape(), axis);
        let data = self.to_vec();
        let mut out = vec![F::zero(); data.len()];
        for &(base, stride) in &line_list {
            let mut max = F::neg_infinity();
            for j in 0..len {
                max = max.max(data[base + j * stride]);
            }
            let mut total = F::zero();
            for j in 0..len {
                let e = (data[base + j * stride] - max).exp();
                out[base + j * stride] = e;
                total += e;
            }
            for j in 0..len {
                out[base + j * stride] /= total;
            }
        }
        let p = self.clone();
        let y_saved = out.clone();
        let lines_bw = line_list;
        Ok(Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if !p.requires_grad_flag() {
                    return;
                }
                // dx = y * (dy - sum(dy * y)) per line
                p.with_grad_mut(|buf| {
                    for &(base, stride) in &lines_bw {
                        let mut dot = F::zero();
                        for j in 0..len {
                            let idx = base + j * stride;
                            dot += g[idx] * y_saved[idx];
                        }
                        for j in 0..len {
                            let idx = base + j * stride;
                            buf[idx] += y_saved[idx] * (g[idx] - dot);
                        }
                    }
                });
            }),
        ))
    }

    /// Stable log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<F>, TensorError> {
        if axis >= self.rank() {
            return Err(TensorError::InvalidAxis {
                op: "log_softmax",
                axis,
                rank: self.rank(),
            });
        }
        let (len, _, line_list) = lines(self.shape(), axis);
        let data = self.to_vec();
        let mut out = vec![F::zero(); data.len()];
        for &(base, stride) in &line_list {
            let mut max = F::neg_infinity();
            for j in 0..len {
                max = max.max(data[base + j * stride]);
            }
            let mut total = F::zero();
            for j in 0..len {
                total += (data[base + j * stride] - max).exp();
            }
            let lse = max + total.ln();
            for j in 0..len {
                out[base + j * stride] = data[base + j * stride] - lse;
            }
        }
        let p = self.clone();
        let y_saved = out.clone();
        let lines_bw = line_list;
        Ok(Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if !p.requires_grad_flag() {
                    return;
                }
                // dx = dy - softmax(x) * sum(dy) per line
                p.with_grad_mut(|buf| {
                    for &(base, stride) in &lines_bw {
                        let mut gsum = F::zero();
                        for j in 0..len {
                            gsum += g[base + j * stride];
                        }
                        for j in 0..len {
                            let idx = base + j * stride;
                            buf[idx] += g[idx] - y_saved[idx].exp() * gsum;
                        }
                    }
                });
            }),
        ))
    }

    /// Layer normalization over the last axis with affine parameters.
    pub fn layer_norm(
        &self,
        gamma: &Tensor<F>,
        beta: &Tensor<F>,
        eps: f64,
    ) -> Result<Tensor<F>, TensorError> {
        let d = *self.shape().last().ok_or(TensorError::RankMismatch {
            op: "layer_norm",
            expected: 1,
            shape: Shape(vec![]),
        })?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: Shape(self.shape().to_vec()),
                rhs: Shape(gamma.shape().to_vec()),
            });
        }
        let eps = F::from_f64(eps);
        let rows = self.len() / d;
        let data = self.to_vec();
        let gdata = gamma.to_vec();
        let bdata = beta.to_vec();
        let inv_d = F::one() / F::from_f64(d as f64);
        let mut out = vec![F::zero(); data.len()];
        let mut xhat = vec![F::zero(); data.len()];
        let mut inv_std = vec![F::zero(); rows];
        for r in 0..rows {
            let row = &data[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() * inv_d;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() * inv_d;
            let istd = F::one() / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..d {
                let xh = (row[j] - mean) * istd;
                xhat[r * d + j] = xh;
                out[r * d + j] = gdata[j] * xh + bdata[j];
            }
        }
        let (px, pg, pb) = (self.clone(), gamma.clone(), beta.clone());
        Ok(Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g| {
                let gdata = pg.to_vec();
                if pg.requires_grad_flag() {
                    pg.with_grad_mut(|buf| {
                        for r in 0..rows {
                            for j in 0..d {
                                buf[j] += g[r * d + j] * xhat[r * d + j];
                            }
                        }
                    });
                }
                if pb.requires_grad_flag() {
                    pb.with_grad_mut(|buf| {
                        for r in 0..rows {
                            for j in 0..d {
                                buf[j] += g[r * d + j];
                            }
                        }
                    });
                }
                if px.requires_grad_flag() {
                    px.with_grad_mut(|buf| {
                        for r in 0..rows {
                            // dxhat = dy * gamma; dx = istd * (dxhat - mean(dxhat)
                            //         - xhat * mean(dxhat * xhat))
                            let mut m1 = F::zero();
                            let mut m2 = F::zero();
                            for j in 0..d {
                                let dxh = g[r * d + j] * gdata[j];
                                m1 += dxh;
                                m2 += dxh * xhat[r * d + j];
                            }
                            m1 *= inv_d;
                            m2 *= inv_d;
                            for j in 0..d {
                                let dxh = g[r * d + j] * gdata[j];
                                buf[r * d + j] += inv_std[r] * (dxh - m1 - xhat[r * d + j] * m2);
                            }
                        }
                    });
                }
            }),
        ))
    }

    pub fn relu(&self) -> Tensor<F> {
        let data = self.to_vec();
        let out: Vec<F> = data.iter().map(|v| v.max(F::zero())).collect();
        let p = self.clone();
        Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if p.requires_grad_flag() {
                    p.accumulate_grad_from(&data, g, |x, gv| if x > F::zero() { gv } else { F::zero() });
                }
            }),
        )
    }

    /// GELU, tanh approximation:
    /// `0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))`.
    pub fn gelu(&self) -> Tensor<F> {
        let c = F::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let k = F::from_f64(0.044715);
        let half = F::from_f64(0.5);
        let data = self.to_vec();
        let out: Vec<F> = data
            .iter()
            .map(|&x| half * x * (F::one() + (c * (x + k * x * x * x)).tanh()))
            .collect();
        let p = self.clone();
        Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if p.requires_grad_flag() {
                    let three = F::from_f64(3.0);
                    p.accumulate_grad_from(&data, g, |x, gv| {
                        let u = c * (x + k * x * x * x);
                        let t = u.tanh();
                        let du = c * (F::one() + three * k * x * x);
                        let d = half * (F::one() + t) + half * x * (F::one() - t * t) * du;
                        gv * d
                    });
                }
            }),
        )
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// scales survivors by `1/(1-rate)`. Identity when `training` is false.
    pub fn dropout(&self, rate: f64, training: bool, rng: &mut Rng) -> Result<Tensor<F>, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidDropoutRate { rate });
        }
        if !training || rate == 0.0 {
            // Bitwise identity.
            let p = self.clone();
            return Ok(Tensor::result(
                self.shape().to_vec(),
                self.to_vec(),
                vec![self.clone()],
                Box::new(move |g| {
                    if p.requires_grad_flag() {
                        p.add_grad(g);
                    }
                }),
            ));
        }
        let keep_scale = F::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<F> = (0..self.len())
            .map(|_| if rng.next_f64() < rate { F::zero() } else { keep_scale })
            .collect();
        let out: Vec<F> = self
            .to_vec()
            .iter()
            .zip(mask.iter())
            .map(|(x, m)| *x * *m)
            .collect();
        let p = self.clone();
        Ok(Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if p.requires_grad_flag() {
                    p.accumulate_grad(g.iter().zip(mask.iter()).map(|(gv, m)| *gv * *m));
                }
            }),
        ))
    }

    /// 3x3 same-padded cross-correlation: `[C_in,H,W] x [C_out,C_in,3,3]
    /// -> [C_out,H,W]`. Runs as im2col + gemm; backward recomputes the column
    /// buffer instead of keeping it alive in the graph.
    pub fn conv2d(&self, kernels: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        let [c_in, h, w] = three_dims("conv2d", self)?;
        let kshape = kernels.shape();
        if kshape.len() != 4 || kshape[2] != 3 || kshape[3] != 3 {
            return Err(TensorError::RankMismatch {
                op: "conv2d",
                expected: 4,
                shape: Shape(kshape.to_vec()),
            });
        }
        if kshape[1] != c_in {
            return Err(TensorError::ChannelMismatch {
                op: "conv2d",
                lhs: Shape(self.shape().to_vec()),
                rhs: Shape(kshape.to_vec()),
            });
        }
        let c_out = kshape[0];
        let hw = h * w;
        let krows = c_in * 9;
        let cols = im2col(&self.to_vec(), c_in, h, w);
        let mut out = vec![F::zero(); c_out * hw];
        {
            let kdata = kernels.to_vec();
            super::gemm_rowmajor(c_out, krows, hw, &kdata, krows as isize, 1, &cols, hw as isize, 1, &mut out, false);
        }
        let (px, pk) = (self.clone(), kernels.clone());
        Ok(Tensor::result(
            vec![c_out, h, w],
            out,
            vec![self.clone(), kernels.clone()],
            Box::new(move |g| {
                if pk.requires_grad_flag() {
                    let cols = im2col(&px.to_vec(), c_in, h, w);
                    pk.with_grad_mut(|buf| {
                        // dK = dY [c_out, hw] . cols^T [hw, krows]
                        super::gemm_rowmajor(c_out, hw, krows, g, hw as isize, 1, &cols, 1, hw as isize, buf, true);
                    });
                }
                if px.requires_grad_flag() {
                    let kdata = pk.to_vec();
                    let mut dcols = vec![F::zero(); krows * hw];
                    // dcols = K^T [krows, c_out] . dY [c_out, hw]
                    super::gemm_rowmajor(krows, c_out, hw, &kdata, 1, krows as isize, g, hw as isize, 1, &mut dcols, false);
                    px.with_grad_mut(|buf| col2im_add(&dcols, c_in, h, w, buf));
                }
            }),
        ))
    }

    /// Adds a per-channel bias to a `[C,H,W]` tensor.
    pub fn add_channel_bias(&self, bias: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        let [c, h, w] = three_dims("add_channel_bias", self)?;
        if bias.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                lhs: Shape(self.shape().to_vec()),
                rhs: Shape(bias.shape().to_vec()),
            });
        }
        let hw = h * w;
        let bdata = bias.to_vec();
        let out: Vec<F> = self
            .to_vec()
            .chunks(hw)
            .enumerate()
            .flat_map(|(ci, plane)| {
                let b = bdata[ci];
                plane.iter().map(move |v| *v + b).collect::<Vec<_>>()
            })
            .collect();
        let (px, pb) = (self.clone(), bias.clone());
        Ok(Tensor::result(
            vec![c, h, w],
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                if px.requires_grad_flag() {
                    px.add_grad(g);
                }
                if pb.requires_grad_flag() {
                    pb.with_grad_mut(|buf| {
                        for (ci, plane) in g.chunks(hw).enumerate() {
                            buf[ci] += plane.iter().copied().sum::<F>();
                        }
                    });
                }
            }),
        ))
    }

    /// 2x2 average pooling with stride 2; trailing odd rows/columns dropped.
    pub fn avg_pool2d(&self) -> Result<Tensor<F>, TensorError> {
        let [c, h, w] = three_dims("avg_pool2d", self)?;
        if h < 2 || w < 2 {
            return Err(TensorError::SpatialTooSmall {
                op: "avg_pool2d",
                shape: Shape(self.shape().to_vec()),
            });
        }
        let (h2, w2) = (h / 2, w / 2);
        let quarter = F::from_f64(0.25);
        let data = self.to_vec();
        let mut out = vec![F::zero(); c * h2 * w2];
        for ci in 0..c {
            for i in 0..h2 {
                for j in 0..w2 {
                    let base = ci * h * w + 2 * i * w + 2 * j;
                    out[ci * h2 * w2 + i * w2 + j] =
                        (data[base] + data[base + 1] + data[base + w] + data[base + w + 1]) * quarter;
                }
            }
        }
        let p = self.clone();
        Ok(Tensor::result(
            vec![c, h2, w2],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if p.requires_grad_flag() {
                    p.with_grad_mut(|buf| {
                        for ci in 0..c {
                            for i in 0..h2 {
                                for j in 0..w2 {
                                    let gv = g[ci * h2 * w2 + i * w2 + j] * quarter;
                                    let base = ci * h * w + 2 * i * w + 2 * j;
                                    buf[base] += gv;
                                    buf[base + 1] += gv;
                                    buf[base + w] += gv;
                                    buf[base + w + 1] += gv;
                                }
                            }
                        }
                    });
                }
            }),
        ))
    }

    /// Embedding lookup: rows of `self` (`[V, D]`) selected by `ids`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor<F>, TensorError> {
        let [v, d] = two_dims("embedding", self)?;
        for &id in ids {
            if id >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    bound: v,
                });
            }
        }
        let data = self.data_ref();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&data[id * d..(id + 1) * d]);
        }
        drop(data);
        let p = self.clone();
        let ids_bw = ids.to_vec();
        Ok(Tensor::result(
            vec![ids.len(), d],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if p.requires_grad_flag() {
                    p.with_grad_mut(|buf| {
                        for (row, &id) in ids_bw.iter().enumerate() {
                            for j in 0..d {
                                buf[id * d + j] += g[row * d + j];
                            }
                        }
                    });
                }
            }),
        ))
    }

    /// Masked negative log-likelihood over log-probabilities:
    /// `-(sum_i w_i * logp[i, t_i]) / sum_i w_i`. Weights are 0/1 pad masks.
    pub fn nll_masked(
        &self,
        targets: &[usize],
        weights: &[F],
    ) -> Result<Tensor<F>, TensorError> {
        let [n, v] = two_dims("nll_masked", self)?;
        if targets.len() != n || weights.len() != n {
            return Err(TensorError::DataLength {
                shape: Shape(vec![targets.len()]),
                expected: n,
                got: targets.len(),
            });
        }
        for &t in targets {
            if t >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "nll_masked",
                    index: t,
                    bound: v,
                });
            }
        }
        let total_w: F = weights.iter().copied().sum();
        if total_w <= F::zero() {
            return Err(TensorError::EmptySelection { op: "nll_masked" });
        }
        let data = self.data_ref();
        let mut loss = F::zero();
        for i in 0..n {
            loss -= weights[i] * data[i * v + targets[i]];
        }
        loss /= total_w;
        drop(data);
        let p = self.clone();
        let targets_bw = targets.to_vec();
        let weights_bw = weights.to_vec();
        Ok(Tensor::result(
            vec![1],
            vec![loss],
            vec![self.clone()],
            Box::new(move |g| {
                if p.requires_grad_flag() {
                    let scale = g[0] / total_w;
                    p.with_grad_mut(|buf| {
                        for (i, (&t, &w)) in targets_bw.iter().zip(weights_bw.iter()).enumerate() {
                            buf[i * v + t] -= w * scale;
                        }
                    });
                }
            }),
        ))
    }

    fn accumulate_grad_from(&self, saved: &[F], g: &[F], f: impl Fn(F, F) -> F) {
        self.accumulate_grad(saved.iter().zip(g.iter()).map(|(x, gv)| f(*x, *gv)));
    }
}

/// Running statistics for batch normalization: plain buffers, serialized with
/// the model but never touched by the optimizer.
#[derive(Debug, Clone)]
pub struct RunningStats<F: Scalar> {
    pub mean: Tensor<F>,
    pub var: Tensor<F>,
}

impl<F: Scalar> RunningStats<F> {
    pub fn identity(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(vec![channels]),
            var: Tensor::full(vec![channels], F::one()),
        }
    }
}

/// Batch normalization over a `[C,H,W]` tensor with per-channel statistics.
///
/// Training mode normalizes with the batch (spatial) statistics and folds
/// them into the running buffers with the given momentum; eval mode uses the
/// running buffers as constants. Running variance uses the unbiased
/// estimator when more than one element is available.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    running: &RunningStats<F>,
    training: bool,
    momentum: f64,
    eps: f64,
) -> Result<Tensor<F>, TensorError> {
    let [c, h, w] = three_dims("batch_norm", x)?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: "batch_norm",
            lhs: Shape(x.shape().to_vec()),
            rhs: Shape(gamma.shape().to_vec()),
        });
    }
    let hw = h * w;
    let eps_f = F::from_f64(eps);
    let data = x.to_vec();
    let gdata = gamma.to_vec();
    let bdata = beta.to_vec();
    if training {
        let inv_n = F::one() / F::from_f64(hw as f64);
        let mut mean = vec![F::zero(); c];
        let mut var = vec![F::zero(); c];
        for ci in 0..c {
            let plane = &data[ci * hw..(ci + 1) * hw];
            let m = plane.iter().copied().sum::<F>() * inv_n;
            let v = plane.iter().map(|x| (*x - m) * (*x - m)).sum::<F>() * inv_n;
            mean[ci] = m;
            var[ci] = v;
        }
        // Fold into running stats (side effect, no gradient).
        let mom = F::from_f64(momentum);
        let keep = F::one() - mom;
        let unbias = if hw > 1 {
            F::from_f64(hw as f64 / (hw as f64 - 1.0))
        } else {
            F::one()
        };
        running.mean.update_data(|rm| {
            for ci in 0..c {
                rm[ci] = keep * rm[ci] + mom * mean[ci];
            }
        });
        running.var.update_data(|rv| {
            for ci in 0..c {
                rv[ci] = keep * rv[ci] + mom * var[ci] * unbias;
            }
        });
        let mut out = vec![F::zero(); data.len()];
        let mut xhat = vec![F::zero(); data.len()];
        let mut inv_std = vec![F::zero(); c];
        for ci in 0..c {
            let istd = F::one() / (var[ci] + eps_f).sqrt();
            inv_std[ci] = istd;
            for j in 0..hw {
                let xh = (data[ci * hw + j] - mean[ci]) * istd;
                xhat[ci * hw + j] = xh;
                out[ci * hw + j] = gdata[ci] * xh + bdata[ci];
            }
        }
        let (px, pg, pb) = (x.clone(), gamma.clone(), beta.clone());
        Ok(Tensor::result(
            vec![c, h, w],
            out,
            vec![x.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g| {
                let gdata = pg.to_vec();
                if pg.requires_grad_flag() {
                    pg.with_grad_mut(|buf| {
                        for ci in 0..c {
                            let mut s = F::zero();
                            for j in 0..hw {
                                s += g[ci * hw + j] * xhat[ci * hw + j];
                            }
                            buf[ci] += s;
                        }
                    });
                }
                if pb.requires_grad_flag() {
                    pb.with_grad_mut(|buf| {
                        for ci in 0..c {
                            buf[ci] += g[ci * hw..(ci + 1) * hw].iter().copied().sum::<F>();
                        }
                    });
                }
                if px.requires_grad_flag() {
                    let inv_n = F::one() / F::from_f64(hw as f64);
                    px.with_grad_mut(|buf| {
                        for ci in 0..c {
                            let mut m1 = F::zero();
                            let mut m2 = F::zero();
                            for j in 0..hw {
                                m1 += g[ci * hw + j];
                                m2 += g[ci * hw + j] * xhat[ci * hw + j];
                            }
                            m1 *= inv_n;
                            m2 *= inv_n;
                            let k = gdata[ci] * inv_std[ci];
                            for j in 0..hw {
                                buf[ci * hw + j] +=
                                    k * (g[ci * hw + j] - m1 - xhat[ci * hw + j] * m2);
                            }
                        }
                    });
                }
            }),
        ))
    } else {
        let rmean = running.mean.to_vec();
        let rvar = running.var.to_vec();
        let mut out = vec![F::zero(); data.len()];
        let mut inv_std = vec![F::zero(); c];
        for ci in 0..c {
            let istd = F::one() / (rvar[ci] + eps_f).sqrt();
            inv_std[ci] = istd;
            for j in 0..hw {
                out[ci * hw + j] = gdata[ci] * (data[ci * hw + j] - rmean[ci]) * istd + bdata[ci];
            }
        }
        let (px, pg, pb) = (x.clone(), gamma.clone(), beta.clone());
        Ok(Tensor::result(
            vec![c, h, w],
            out,
            vec![x.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g| {
                let gdata = pg.to_vec();
                if pg.requires_grad_flag() {
                    let xdata = px.to_vec();
                    pg.with_grad_mut(|buf| {
                        for ci in 0..c {
                            let mut s = F::zero();
                            for j in 0..hw {
                                s += g[ci * hw + j] * (xdata[ci * hw + j] - rmean[ci]) * inv_std[ci];
                            }
                            buf[ci] += s;
                        }
                    });
                }
                if pb.requires_grad_flag() {
                    pb.with_grad_mut(|buf| {
                        for ci in 0..c {
                            buf[ci] += g[ci * hw..(ci + 1) * hw].iter().copied().sum::<F>();
                        }
                    });
                }
                if px.requires_grad_flag() {
                    px.with_grad_mut(|buf| {
                        for ci in 0..c {
                            let k = gdata[ci] * inv_std[ci];
                            for j in 0..hw {
                                buf[ci * hw + j] += k * g[ci * hw + j];
                            }
                        }
                    });
                }
            }),
        ))
    }
}

fn im2col<F: Scalar>(data: &[F], c_in: usize, h: usize, w: usize) -> Vec<F> {
    let hw = h * w;
    let mut cols = vec![F::zero(); c_in * 9 * hw];
    for ci in 0..c_in {
        for dy in 0..3usize {
            for dx in 0..3usize {
                let row = (ci * 9 + dy * 3 + dx) * hw;
                for y in 0..h {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + dx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        cols[row + y * w + x] = data[ci * hw + sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<F: Scalar>(dcols: &[F], c_in: usize, h: usize, w: usize, out: &mut [F]) {
    let hw = h * w;
    for ci in 0..c_in {
        for dy in 0..3usize {
            for dx in 0..3usize {
                let row = (ci * 9 + dy * 3 + dx) * hw;
                for y in 0..h {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + dx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        out[ci * hw + sy as usize * w + sx as usize] += dcols[row + y * w + x];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients_default;

    type T32 = Tensor<f32>;
    type T64 = Tensor<f64>;

    #[test]
    fn softmax_uniform_on_equal_scores() {
        let x = T32::from_vec(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = x.softmax(0).unwrap();
        for v in y.to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_two_logits() {
        let x = T32::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        assert!((y[0] - 0.26894).abs() < 1e-5);
        assert!((y[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn softmax_survives_large_magnitudes() {
        let x = T32::from_vec(vec![2], vec![1000.0, 0.0]).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        assert_eq!(y[0], 1.0);
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn softmax_rows_sum_to_one_including_1e3() {
        let mut rng = crate::rng::Rng::new(5);
        for _ in 0..20 {
            let data: Vec<f32> = (0..12).map(|_| rng.uniform(-1e3, 1e3) as f32).collect();
            let x = T32::from_vec(vec![3, 4], data).unwrap();
            let y = x.softmax(1).unwrap();
            let v = y.to_vec();
            for r in 0..3 {
                let s: f32 = v[r * 4..(r + 1) * 4].iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
                assert!(v[r * 4..(r + 1) * 4].iter().all(|p| *p >= 0.0));
            }
        }
    }

    #[test]
    fn layer_norm_symmetric_pair() {
        let x = T32::from_vec(vec![1, 2], vec![1.0, 3.0]).unwrap();
        let gamma = T32::full(vec![2], 1.0);
        let beta = T32::zeros(vec![2]);
        let y = x.layer_norm(&gamma, &beta, 1e-12).unwrap().to_vec();
        assert!((y[0] + 1.0).abs() < 1e-5);
        assert!((y[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_constant_vector_is_zero() {
        let x = T32::from_vec(vec![1, 4], vec![7.0; 4]).unwrap();
        let gamma = T32::full(vec![4], 1.0);
        let beta = T32::zeros(vec![4]);
        let y = x.layer_norm(&gamma, &beta, 1e-12).unwrap().to_vec();
        assert!(y.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn layer_norm_moments() {
        let x = T32::from_vec(vec![1, 4], vec![0.3, -1.2, 2.5, 0.9]).unwrap();
        let gamma = T32::full(vec![4], 1.0);
        let beta = T32::zeros(vec![4]);
        let y = x.layer_norm(&gamma, &beta, 1e-12).unwrap().to_vec();
        let mean: f32 = y.iter().sum::<f32>() / 4.0;
        let var: f32 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!(var > 1.0 - 1e-3 && var <= 1.0 + 1e-6, "var {var}");
    }

    #[test]
    fn conv2d_delta_kernel_is_identity() {
        let x = T32::from_vec(vec![1, 3, 4], (1..=12).map(|v| v as f32).collect()).unwrap();
        let mut k = vec![0.0f32; 9];
        k[4] = 1.0; // center tap
        let kernels = T32::from_vec(vec![1, 1, 3, 3], k).unwrap();
        let y = x.conv2d(&kernels).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4]);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn conv2d_ones_kernel_counts_window_overlap() {
        let x = T32::full(vec![1, 4, 4], 1.0);
        let kernels = T32::full(vec![1, 1, 3, 3], 1.0);
        let y = x.conv2d(&kernels).unwrap().to_vec();
        // corners see a 2x2 overlap, edges 2x3, interior 3x3
        assert_eq!(y[0], 4.0);
        assert_eq!(y[3], 4.0);
        assert_eq!(y[12], 4.0);
        assert_eq!(y[15], 4.0);
        assert_eq!(y[5], 9.0);
        assert_eq!(y[6], 9.0);
        assert_eq!(y[1], 6.0);
    }

    /// Direct six-loop convolution, the independent oracle.
    fn conv_oracle(x: &[f32], c_in: usize, h: usize, w: usize, k: &[f32], c_out: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; c_out * h * w];
        for co in 0..c_out {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = 0.0f32;
                    for ci in 0..c_in {
                        for dy in -1..=1isize {
                            for dx in -1..=1isize {
                                let (sy, sx) = (y + dy, xx + dx);
                                if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let kv = k[((co * c_in + ci) * 3 + (dy + 1) as usize) * 3 + (dx + 1) as usize];
                                acc += kv * x[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(co * h + y as usize) * w + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_loop_oracle_on_random_cases() {
        let mut rng = crate::rng::Rng::new(31);
        for _ in 0..10 {
            let (c_in, c_out, h, w) = (2, 3, 5, 4);
            let x_data: Vec<f32> = (0..c_in * h * w).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
            let k_data: Vec<f32> = (0..c_out * c_in * 9).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
            let x = T32::from_vec(vec![c_in, h, w], x_data.clone()).unwrap();
            let k = T32::from_vec(vec![c_out, c_in, 3, 3], k_data.clone()).unwrap();
            let got = x.conv2d(&k).unwrap().to_vec();
            let want = conv_oracle(&x_data, c_in, h, w, &k_data, c_out);
            for (g, e) in got.iter().zip(want.iter()) {
                assert!((g - e).abs() < 1e-5, "conv mismatch {g} vs {e}");
            }
        }
    }

    #[test]
    fn conv2d_channel_mismatch_error() {
        let x = T32::zeros(vec![2, 4, 4]);
        let k = T32::zeros(vec![1, 3, 3, 3]);
        assert!(matches!(x.conv2d(&k), Err(TensorError::ChannelMismatch { .. })));
    }

    #[test]
    fn avg_pool_constant_and_small_cases() {
        let c = T32::full(vec![1, 4, 4], 2.5);
        assert!(c.avg_pool2d().unwrap().to_vec().iter().all(|v| *v == 2.5));

        let x = T32::from_vec(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(x.avg_pool2d().unwrap().to_vec(), vec![2.5]);

        let odd = T32::zeros(vec![1, 5, 5]);
        assert_eq!(odd.avg_pool2d().unwrap().shape(), &[1, 2, 2]);

        let tiny = T32::zeros(vec![1, 1, 4]);
        assert!(matches!(tiny.avg_pool2d(), Err(TensorError::SpatialTooSmall { .. })));
    }

    #[test]
    fn relu_and_gelu_values() {
        let x = T32::from_vec(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(x.relu().to_vec(), vec![0.0, 0.0, 2.0]);

        let z = T32::scalar(0.0).gelu();
        assert_eq!(z.item(), 0.0);
        let g3 = T32::scalar(3.0).gelu();
        assert!((g3.item() - 2.9964).abs() < 1e-3, "gelu(3) = {}", g3.item());
    }

    #[test]
    fn batch_norm_eval_identity_stats() {
        let x = T32::from_vec(vec![1, 2, 2], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let gamma = T32::full(vec![1], 1.0);
        let beta = T32::zeros(vec![1]);
        let running = RunningStats::identity(1);
        let y = batch_norm(&x, &gamma, &beta, &running, false, 0.1, 0.0).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn batch_norm_training_constant_batch_is_zero() {
        let x = T32::full(vec![2, 2, 2], 3.0);
        let gamma = T32::full(vec![2], 1.0);
        let beta = T32::zeros(vec![2]);
        let running = RunningStats::identity(2);
        let y = batch_norm(&x, &gamma, &beta, &running, true, 0.1, 1e-5).unwrap();
        assert!(y.to_vec().iter().all(|v| v.abs() < 1e-4));
    }

    #[test]
    fn batch_norm_training_symmetric_pair() {
        let x = T32::from_vec(vec![1, 1, 2], vec![2.0, 4.0]).unwrap();
        let gamma = T32::full(vec![1], 1.0);
        let beta = T32::zeros(vec![1]);
        let running = RunningStats::identity(1);
        let y = batch_norm(&x, &gamma, &beta, &running, true, 0.1, 1e-5).unwrap().to_vec();
        assert!((y[0] + 1.0).abs() < 1e-4, "{y:?}");
        assert!((y[1] - 1.0).abs() < 1e-4);
        // momentum 0.1 folds the batch stats into the running buffers
        let rm = running.mean.to_vec()[0];
        assert!((rm - 0.3).abs() < 1e-6, "running mean {rm}");
    }

    #[test]
    fn dropout_eval_is_bitwise_identity() {
        let mut rng = crate::rng::Rng::new(0);
        let x = T32::from_vec(vec![4], vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let y = x.dropout(0.2, false, &mut rng).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
        let z = x.dropout(0.0, true, &mut rng).unwrap();
        assert_eq!(z.to_vec(), x.to_vec());
    }

    #[test]
    fn dropout_preserves_mean_at_scale() {
        let mut rng = crate::rng::Rng::new(77);
        let n = 100_000;
        let x = T32::full(vec![n], 1.0);
        let y = x.dropout(0.2, true, &mut rng).unwrap();
        let mean: f64 = y.to_vec().iter().map(|v| *v as f64).sum::<f64>() / n as f64;
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut rng = crate::rng::Rng::new(0);
        let x = T32::zeros(vec![2]);
        assert!(matches!(
            x.dropout(1.0, true, &mut rng),
            Err(TensorError::InvalidDropoutRate { .. })
        ));
    }

    #[test]
    fn embedding_selects_rows_and_scatters_grads() {
        let table = T32::from_vec(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap()
            .requires_grad();
        let y = table.embedding(&[2, 0, 2]).unwrap();
        assert_eq!(y.to_vec(), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(table.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(matches!(
            table.embedding(&[3]),
            Err(TensorError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn nll_masked_ignores_padding() {
        // log-probs for 3 positions over 2 classes; position 2 is padding.
        let logp = T32::from_vec(vec![3, 2], vec![-0.1, -2.0, -3.0, -0.2, -9.0, -9.0])
            .unwrap()
            .requires_grad();
        let loss = logp.nll_masked(&[0, 1, 0], &[1.0, 1.0, 0.0]).unwrap();
        assert!((loss.item() - (0.1 + 0.2) / 2.0).abs() < 1e-6);
        loss.backward().unwrap();
        let g = logp.grad().unwrap();
        assert_eq!(&g[4..6], &[0.0, 0.0], "pad position must get zero gradient");
        assert!((g[0] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn uniform_log_probs_give_ln_vocab() {
        let v = 37;
        let logits = T32::zeros(vec![4, v]);
        let logp = logits.log_softmax(1).unwrap();
        let loss = logp.nll_masked(&[0, 5, 9, 36], &[1.0; 4]).unwrap();
        assert!((loss.item() - (v as f32).ln()).abs() < 1e-4);
    }

    // ----- finite-difference checks (f64 shadow) -----

    fn rand64(rng: &mut crate::rng::Rng, shape: Vec<usize>) -> T64 {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        T64::from_vec(shape, data).unwrap().requires_grad()
    }

    #[test]
    fn grad_matmul_softmax_chain() {
        let mut rng = crate::rng::Rng::new(1);
        let a = rand64(&mut rng, vec![3, 4]);
        let b = rand64(&mut rng, vec![4, 2]);
        let report = check_gradients_default(
            || Ok(a.matmul(&b)?.softmax(1)?.mul(&a.matmul(&b)?)?.sum_all()),
            &[a.clone(), b.clone()],
        )
        .unwrap();
        assert!(report.pass(), "{report}");
    }

    #[test]
    fn grad_layer_norm() {
        let mut rng = crate::rng::Rng::new(2);
        let x = rand64(&mut rng, vec![3, 5]);
        let gamma = rand64(&mut rng, vec![5]);
        let beta = rand64(&mut rng, vec![5]);
        let report = check_gradients_default(
            || Ok(x.layer_norm(&gamma, &beta, 1e-12)?.mul(&x.layer_norm(&gamma, &beta, 1e-12)?)?.sum_all()),
            &[x.clone(), gamma.clone(), beta.clone()],
        )
        .unwrap();
        assert!(report.pass(), "{report}");
    }

    #[test]
    fn grad_conv_pool_chain() {
        let mut rng = crate::rng::Rng::new(3);
        let x = rand64(&mut rng, vec![2, 4, 4]);
        let k = rand64(&mut rng, vec![3, 2, 3, 3]);
        let bias = rand64(&mut rng, vec![3]);
        let report = check_gradients_default(
            || {
                let y = x.conv2d(&k)?.add_channel_bias(&bias)?.avg_pool2d()?;
                Ok(y.mul(&y)?.sum_all())
            },
            &[x.clone(), k.clone(), bias.clone()],
        )
        .unwrap();
        assert!(report.pass(), "{report}");
    }

    #[test]
    fn grad_batch_norm_training() {
        let mut rng = crate::rng::Rng::new(4);
        let x = rand64(&mut rng, vec![2, 3, 3]);
        let gamma = rand64(&mut rng, vec![2]);
        let beta = rand64(&mut rng, vec![2]);
        let report = check_gradients_default(
            || {
                // fresh running stats per evaluation so the side effect does
                // not leak between finite-difference probes
                let running = RunningStats::identity(2);
                let y = batch_norm(&x, &gamma, &beta, &running, true, 0.1, 1e-5)?;
                Ok(y.mul(&y)?.sum_all())
            },
            &[x.clone(), gamma.clone(), beta.clone()],
        )
        .unwrap();
        assert!(report.pass(), "{report}");
    }

    #[test]
    fn grad_gelu_log_softmax() {
        let mut rng = crate::rng::Rng::new(5);
        let x = rand64(&mut rng, vec![2, 6]);
        let report = check_gradients_default(
            || x.gelu().log_softmax(1)?.nll_masked(&[1, 4], &[1.0, 1.0]),
            &[x.clone()],
        )
        .unwrap();
        assert!(report.pass(), "{report}");
    }
}
