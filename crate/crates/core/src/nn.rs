//! Dense kernels for the feature network: 3×3×3 convolution (padding 1),
//! batch normalization fused with ReLU, 1×1×1 projection, and Adam.
//!
//! Activations are laid out sample-major `(B, C, D·H·W)`.

use crate::grid::{numel, Shape};
use crate::real::Real;

/// Geometry of one 3×3×3 convolution with padding 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub stride: usize,
}

impl ConvGeom {
    pub fn new(in_shape: Shape, stride: usize) -> Self {
        let o = |n: usize| (n - 1) / stride + 1;
        Self {
            in_shape,
            out_shape: [o(in_shape[0]), o(in_shape[1]), o(in_shape[2])],
            stride,
        }
    }

    pub fn n_in(&self) -> usize {
        numel(self.in_shape)
    }

    pub fn n_out(&self) -> usize {
        numel(self.out_shape)
    }
}

/// Unfolds `x` (`cin`, n_in) into `cols` (`cin·27`, n_out).
fn im2col<T: Real>(x: &[T], cin: usize, g: &ConvGeom, cols: &mut [T]) {
    let [id, ih, iw] = g.in_shape;
    let [od, oh, ow] = g.out_shape;
    let n_out = g.n_out();
    let s = g.stride;
    for c in 0..cin {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kd in 0..3 {
            for kh in 0..3 {
                for kw in 0..3 {
                    let row = (c * 27 + kd * 9 + kh * 3 + kw) * n_out;
                    let dst = &mut cols[row..row + n_out];
                    let mut o = 0;
                    for zd in 0..od {
                        let pd = (zd * s + kd) as isize - 1;
                        for zh in 0..oh {
                            let ph = (zh * s + kh) as isize - 1;
                            let dst_row = &mut dst[o..o + ow];
                            if pd < 0 || pd >= id as isize || ph < 0 || ph >= ih as isize {
                                dst_row.fill(T::zero());
                            } else {
                                let base = (pd as usize * ih + ph as usize) * iw;
                                for (zw, d) in dst_row.iter_mut().enumerate() {
                                    let pw = (zw * s + kw) as isize - 1;
                                    *d = if pw < 0 || pw >= iw as isize {
                                        T::zero()
                                    } else {
                                        xc[base + pw as usize]
                                    };
                                }
                            }
                            o += ow;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `cols` back onto `dx`.
fn col2im_add<T: Real>(cols: &[T], cin: usize, g: &ConvGeom, dx: &mut [T]) {
    let [id, ih, iw] = g.in_shape;
    let [od, oh, ow] = g.out_shape;
    let n_out = g.n_out();
    let s = g.stride;
    for c in 0..cin {
        let xc = &mut dx[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kd in 0..3 {
            for kh in 0..3 {
                for kw in 0..3 {
                    let row = (c * 27 + kd * 9 + kh * 3 + kw) * n_out;
                    let src = &cols[row..row + n_out];
                    let mut o = 0;
                    for zd in 0..od {
                        let pd = (zd * s + kd) as isize - 1;
                        for zh in 0..oh {
                            let ph = (zh * s + kh) as isize - 1;
                            if !(pd < 0 || pd >= id as isize || ph < 0 || ph >= ih as isize) {
                                let base = (pd as usize * ih + ph as usize) * iw;
                                for (zw, v) in src[o..o + ow].iter().enumerate() {
                                    let pw = (zw * s + kw) as isize - 1;
                                    if pw >= 0 && pw < iw as isize {
                                        xc[base + pw as usize] += *v;
                                    }
                                }
                            }
                            o += ow;
                        }
                    }
                }
            }
        }
    }
}

/// `y[b] = W * x[b]` for every sample; `w` is (`cout`, `cin·27`).
pub fn conv3d_forward<T: Real>(
    x: &[T],
    batch: usize,
    cin: usize,
    cout: usize,
    g: &ConvGeom,
    w: &[T],
    scratch: &mut Vec<T>,
) -> Vec<T> {
    let (n_in, n_out) = (g.n_in(), g.n_out());
    let k = cin * 27;
    scratch.resize(k * n_out, T::zero());
    let mut y = vec![T::zero(); batch * cout * n_out];
    for b in 0..batch {
        im2col(&x[b * cin * n_in..(b + 1) * cin * n_in], cin, g, scratch);
        T::gemm(
            cout,
            k,
            n_out,
            T::one(),
            w,
            k,
            1,
            scratch,
            n_out,
            1,
            T::zero(),
            &mut y[b * cout * n_out..(b + 1) * cout * n_out],
            n_out,
            1,
        );
    }
    y
}

/// Accumulates `dw` and (optionally) returns `dx` for [`conv3d_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv3d_backward<T: Real>(
    x: &[T],
    batch: usize,
    cin: usize,
    cout: usize,
    g: &ConvGeom,
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    want_dx: bool,
    scratch: &mut Vec<T>,
) -> Option<Vec<T>> {
    let (n_in, n_out) = (g.n_in(), g.n_out());
    let k = cin * 27;
    scratch.resize(k * n_out, T::zero());
    let mut dx = want_dx.then(|| vec![T::zero(); batch * cin * n_in]);
    for b in 0..batch {
        let dyb = &dy[b * cout * n_out..(b + 1) * cout * n_out];
        im2col(&x[b * cin * n_in..(b + 1) * cin * n_in], cin, g, scratch);
        // dW += dY · colsᵀ
        T::gemm(
            cout,
            n_out,
            k,
            T::one(),
            dyb,
            n_out,
            1,
            scratch,
            1,
            n_out,
            T::one(),
            dw,
            k,
            1,
        );
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · dY
            T::gemm(
                k,
                cout,
                n_out,
                T::one(),
                w,
                1,
                k,
                dyb,
                n_out,
                1,
                T::zero(),
                scratch,
                n_out,
                1,
            );
            col2im_add(
                scratch,
                cin,
                g,
                &mut dx[b * cin * n_in..(b + 1) * cin * n_in],
            );
        }
    }
    dx
}

/// `y[b] = W x[b] + bias` with `w` (`cout`, `cin`).
pub fn pointwise_forward<T: Real>(
    x: &[T],
    batch: usize,
    cin: usize,
    cout: usize,
    n: usize,
    w: &[T],
    bias: &[T],
) -> Vec<T> {
    let mut y = vec![T::zero(); batch * cout * n];
    for b in 0..batch {
        let yb = &mut y[b * cout * n..(b + 1) * cout * n];
        for (c, row) in yb.chunks_mut(n).enumerate() {
            row.fill(bias[c]);
        }
        T::gemm(
            cout,
            cin,
            n,
            T::one(),
            w,
            cin,
            1,
            &x[b * cin * n..(b + 1) * cin * n],
            n,
            1,
            T::one(),
            yb,
            n,
            1,
        );
    }
    y
}

/// Accumulates `dw`, `dbias`; returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn pointwise_backward<T: Real>(
    x: &[T],
    batch: usize,
    cin: usize,
    cout: usize,
    n: usize,
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); batch * cin * n];
    for b in 0..batch {
        let dyb = &dy[b * cout * n..(b + 1) * cout * n];
        let xb = &x[b * cin * n..(b + 1) * cin * n];
        for (c, row) in dyb.chunks(n).enumerate() {
            dbias[c] += row.iter().copied().sum::<T>();
        }
        T::gemm(
            cout,
            n,
            cin,
            T::one(),
            dyb,
            n,
            1,
            xb,
            1,
            n,
            T::one(),
            dw,
            cin,
            1,
        );
        T::gemm(
            cin,
            cout,
            n,
            T::one(),
            w,
            1,
            cin,
            dyb,
            n,
            1,
            T::zero(),
            &mut dx[b * cin * n..(b + 1) * cin * n],
            n,
            1,
        );
    }
    dx
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Saved state for the backward pass of a training-mode BatchNorm + ReLU.
pub struct BnReluCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Training-mode BatchNorm over `(B, N)` per channel followed by ReLU, in place.
/// Updates the running statistics with momentum [`BN_MOMENTUM`].
#[allow(clippy::too_many_arguments)]
pub fn bn_relu_train<T: Real>(
    x: &mut [T],
    batch: usize,
    c: usize,
    n: usize,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
) -> BnReluCache<T> {
    let count = (batch * n) as f64;
    let mut inv_std = vec![T::zero(); c];
    let mut xhat = vec![T::zero(); x.len()];
    for ch in 0..c {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for b in 0..batch {
            for &v in &x[(b * c + ch) * n..(b * c + ch + 1) * n] {
                let v = v.f64();
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / count;
        let var = (sq / count - mean * mean).max(0.0);
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[ch] = T::cst(is);
        let unbiased = if count > 1.0 {
            var * count / (count - 1.0)
        } else {
            var
        };
        running_mean[ch] =
            T::cst((1.0 - BN_MOMENTUM) * running_mean[ch].f64() + BN_MOMENTUM * mean);
        running_var[ch] =
            T::cst((1.0 - BN_MOMENTUM) * running_var[ch].f64() + BN_MOMENTUM * unbiased);
        let (m, s, gm, bt) = (T::cst(mean), T::cst(is), gamma[ch], beta[ch]);
        for b in 0..batch {
            let r = (b * c + ch) * n..(b * c + ch + 1) * n;
            for (xv, hv) in x[r.clone()].iter_mut().zip(xhat[r].iter_mut()) {
                let h = (*xv - m) * s;
                *hv = h;
                let y = gm * h + bt;
                *xv = if y > T::zero() { y } else { T::zero() };
            }
        }
    }
    BnReluCache { xhat, inv_std }
}

/// Evaluation-mode BatchNorm (running statistics) followed by ReLU, in place.
#[allow(clippy::too_many_arguments)]
pub fn bn_relu_eval<T: Real>(
    x: &mut [T],
    batch: usize,
    c: usize,
    n: usize,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) {
    for ch in 0..c {
        let is = T::cst(1.0 / (running_var[ch].f64() + BN_EPS).sqrt());
        let scale = gamma[ch] * is;
        let shift = beta[ch] - running_mean[ch] * scale;
        for b in 0..batch {
            for v in &mut x[(b * c + ch) * n..(b * c + ch + 1) * n] {
                let y = *v * scale + shift;
                *v = if y > T::zero() { y } else { T::zero() };
            }
        }
    }
}

/// Backward of [`bn_relu_train`]. `y` is the post-ReLU output, `dy` is overwritten with `dx`.
#[allow(clippy::too_many_arguments)]
pub fn bn_relu_backward<T: Real>(
    y: &[T],
    dy: &mut [T],
    cache: &BnReluCache<T>,
    batch: usize,
    c: usize,
    n: usize,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) {
    let count = (batch * n) as f64;
    for ch in 0..c {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        let mut dg = 0.0;
        let mut db = 0.0;
        let g = gamma[ch].f64();
        for b in 0..batch {
            let r = (b * c + ch) * n..(b * c + ch + 1) * n;
            for ((d, yv), h) in dy[r.clone()]
                .iter_mut()
                .zip(y[r.clone()].iter())
                .zip(cache.xhat[r].iter())
            {
                if *yv <= T::zero() {
                    *d = T::zero();
                }
                let dv = d.f64();
                let hv = h.f64();
                dg += dv * hv;
                db += dv;
                sum_dxhat += dv * g;
                sum_dxhat_xhat += dv * g * hv;
            }
        }
        dgamma[ch] += T::cst(dg);
        dbeta[ch] += T::cst(db);
        let is = cache.inv_std[ch];
        let a = T::cst(sum_dxhat / count);
        let bcoef = T::cst(sum_dxhat_xhat / count);
        let gt = gamma[ch];
        for b in 0..batch {
            let r = (b * c + ch) * n..(b * c + ch + 1) * n;
            for (d, h) in dy[r.clone()].iter_mut().zip(cache.xhat[r].iter()) {
                *d = is * (*d * gt - a - *h * bcoef);
            }
        }
    }
}

/// Adam over one flat parameter buffer.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::cst(self.beta1), T::cst(self.beta2));
        let (one_b1, one_b2) = (T::cst(1.0 - self.beta1), T::cst(1.0 - self.beta2));
        let step_size = T::cst(lr / bc1);
        let inv_bc2 = T::cst(1.0 / bc2);
        let eps = T::cst(self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            params[i] -= step_size * self.m[i] / ((self.v[i] * inv_bc2).sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct 7-loop convolution used as an oracle for the im2col route.
    fn naive_conv(x: &[f64], cin: usize, cout: usize, g: &ConvGeom, w: &[f64]) -> Vec<f64> {
        let [id, ih, iw] = g.in_shape;
        let [od, oh, ow] = g.out_shape;
        let mut y = vec![0.0; cout * g.n_out()];
        for co in 0..cout {
            for zd in 0..od {
                for zh in 0..oh {
                    for zw in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for kd in 0..3 {
                                for kh in 0..3 {
                                    for kw in 0..3 {
                                        let pd = (zd * g.stride + kd) as isize - 1;
                                        let ph = (zh * g.stride + kh) as isize - 1;
                                        let pw = (zw * g.stride + kw) as isize - 1;
                                        if pd < 0
                                            || ph < 0
                                            || pw < 0
                                            || pd >= id as isize
                                            || ph >= ih as isize
                                            || pw >= iw as isize
                                        {
                                            continue;
                                        }
                                        let xi = ((ci * id + pd as usize) * ih + ph as usize) * iw
                                            + pw as usize;
                                        acc += w[co * cin * 27 + ci * 27 + kd * 9 + kh * 3 + kw]
                                            * x[xi];
                                    }
                                }
                            }
                        }
                        y[((co * od + zd) * oh + zh) * ow + zw] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for stride in [1, 2] {
            let g = ConvGeom::new([5, 4, 6], stride);
            let (cin, cout) = (3, 2);
            let x = rand_vec(&mut rng, cin * g.n_in());
            let w = rand_vec(&mut rng, cout * cin * 27);
            let y = conv3d_forward(&x, 1, cin, cout, &g, &w, &mut Vec::new());
            let want = naive_conv(&x, cin, cout, &g, &w);
            for (a, b) in y.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(ConvGeom::new([64, 64, 64], 2).out_shape, [32, 32, 32]);
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <dy, conv(x)> differentiated: dW and dx checked by finite differences.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let g = ConvGeom::new([4, 5, 3], 2);
        let (cin, cout, batch) = (2, 3, 2);
        let x = rand_vec(&mut rng, batch * cin * g.n_in());
        let w = rand_vec(&mut rng, cout * cin * 27);
        let dy = rand_vec(&mut rng, batch * cout * g.n_out());
        let loss = |x: &[f64], w: &[f64]| -> f64 {
            conv3d_forward(x, batch, cin, cout, &g, w, &mut Vec::new())
                .iter()
                .zip(dy.iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut dw = vec![0.0; w.len()];
        let dx = conv3d_backward(
            &x,
            batch,
            cin,
            cout,
            &g,
            &w,
            &dy,
            &mut dw,
            true,
            &mut Vec::new(),
        )
        .unwrap();
        let h = 1e-6;
        for idx in [0, 7, 30, w.len() - 1] {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[idx] += h;
            wm[idx] -= h;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
            assert!((fd - dw[idx]).abs() < 1e-6);
        }
        for idx in [0, 11, 40, x.len() - 1] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += h;
            xm[idx] -= h;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn bn_relu_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (batch, c, n) = (2, 3, 7);
        let x = rand_vec(&mut rng, batch * c * n);
        let gamma = vec![1.2, 0.7, -0.4];
        let beta = vec![0.1, -0.2, 0.3];
        let dy = rand_vec(&mut rng, batch * c * n);
        let loss = |x: &[f64], gamma: &[f64], beta: &[f64]| -> f64 {
            let mut y = x.to_vec();
            let (mut rm, mut rv) = (vec![0.0; c], vec![1.0; c]);
            bn_relu_train(&mut y, batch, c, n, gamma, beta, &mut rm, &mut rv);
            y.iter().zip(dy.iter()).map(|(a, b)| a * b).sum()
        };
        let mut y = x.clone();
        let (mut rm, mut rv) = (vec![0.0; c], vec![1.0; c]);
        let cache = bn_relu_train(&mut y, batch, c, n, &gamma, &beta, &mut rm, &mut rv);
        let mut dx = dy.clone();
        let (mut dg, mut db) = (vec![0.0; c], vec![0.0; c]);
        bn_relu_backward(&y, &mut dx, &cache, batch, c, n, &gamma, &mut dg, &mut db);
        let h = 1e-6;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += h;
            xm[idx] -= h;
            let fd = (loss(&xp, &gamma, &beta) - loss(&xm, &gamma, &beta)) / (2.0 * h);
            assert!(
                (fd - dx[idx]).abs() < 1e-5,
                "dx[{idx}]: {fd} vs {}",
                dx[idx]
            );
        }
        for ch in 0..c {
            let mut gp = gamma.clone();
            let mut gm = gamma.clone();
            gp[ch] += h;
            gm[ch] -= h;
            let fd = (loss(&x, &gp, &beta) - loss(&x, &gm, &beta)) / (2.0 * h);
            assert!((fd - dg[ch]).abs() < 1e-5);
            let mut bp = beta.clone();
            let mut bm = beta.clone();
            bp[ch] += h;
            bm[ch] -= h;
            let fd = (loss(&x, &gamma, &bp) - loss(&x, &gamma, &bm)) / (2.0 * h);
            assert!((fd - db[ch]).abs() < 1e-5);
        }
        // Running statistics moved toward the batch statistics.
        assert!(rm.iter().any(|&m| m != 0.0));
    }

    #[test]
    fn pointwise_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let (batch, cin, cout, n) = (2, 4, 3, 5);
        let x = rand_vec(&mut rng, batch * cin * n);
        let w = rand_vec(&mut rng, cout * cin);
        let bias = rand_vec(&mut rng, cout);
        let dy = rand_vec(&mut rng, batch * cout * n);
        let loss = |x: &[f64], w: &[f64]| -> f64 {
            pointwise_forward(x, batch, cin, cout, n, w, &bias)
                .iter()
                .zip(dy.iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (mut dw, mut db) = (vec![0.0; w.len()], vec![0.0; cout]);
        let dx = pointwise_backward(&x, batch, cin, cout, n, &w, &dy, &mut dw, &mut db);
        let h = 1e-6;
        for idx in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[idx] += h;
            wm[idx] -= h;
            assert!(((loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h) - dw[idx]).abs() < 1e-6);
        }
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += h;
            xm[idx] -= h;
            assert!(((loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h) - dx[idx]).abs() < 1e-6);
        }
        let want_db: f64 = dy[..n]
            .iter()
            .chain(dy[cout * n..cout * n + n].iter())
            .sum();
        assert!((db[0] - want_db).abs() < 1e-12);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = vec![3.0f64, -2.0];
        let mut opt = Adam::new(2);
        for _ in 0..500 {
            let g = vec![2.0 * p[0], 4.0 * p[1]];
            opt.step(&mut p, &g, 0.05);
        }
        assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2);
        assert_eq!(opt.steps(), 500);
    }
}
