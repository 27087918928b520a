//! U-Net topology, parameter layout, forward pass and backpropagation.
//!
//! Level `i` of the encoder applies two 3x3(x3) convolutions with ReLU and
//! `base * 2^i` channels, then 2x max pooling. The bottleneck has
//! `base * 2^depth` channels. Each decoder level upsamples (nearest),
//! concatenates `[upsampled, skip]` along channels and applies two conv+ReLU
//! blocks. A final 1x1 convolution with no activation yields one channel.
//!
//! Parameters are one flat vector in a fixed order: encoder convolutions
//! (shallow to deep), the two bottleneck convolutions, decoder convolutions
//! (deep to shallow), the output convolution; each as weight
//! `[cout, cin, kd, kh, kw]` followed by bias `[cout]`.

use alloc::vec;
use alloc::vec::Vec;

use super::layers::{
    conv_backward, conv_forward, maxpool, maxpool_backward, pooled_dims, relu_backward,
    relu_inplace, upsample, upsample_backward, ConvShape,
};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::grid::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    pub spatial_dims: usize,
    pub depth: usize,
    pub kernel: usize,
    pub base_channels: usize,
}

impl UNetConfig {
    pub fn new_2d(base_channels: usize) -> Self {
        Self {
            spatial_dims: 2,
            depth: 2,
            kernel: 3,
            base_channels,
        }
    }

    pub fn new_3d(base_channels: usize) -> Self {
        Self {
            spatial_dims: 3,
            ..Self::new_2d(base_channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.spatial_dims != 2 && self.spatial_dims != 3 {
            return Err(Error::invalid("spatial_dims must be 2 or 3"));
        }
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::invalid("depth must be in 1..=8"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid("kernel size must be odd"));
        }
        if self.base_channels == 0 {
            return Err(Error::invalid("base_channels must be positive"));
        }
        Ok(())
    }

    /// Required divisor of every spatial extent.
    pub fn granularity(&self) -> usize {
        1 << self.depth
    }

    pub(crate) fn kernel3(&self) -> [usize; 3] {
        let k = self.kernel;
        if self.spatial_dims == 2 {
            [1, k, k]
        } else {
            [k, k, k]
        }
    }

    pub(crate) fn pool3(&self) -> [usize; 3] {
        if self.spatial_dims == 2 {
            [1, 2, 2]
        } else {
            [2, 2, 2]
        }
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub(crate) fn conv_shapes(&self) -> Vec<ConvShape> {
        let k = self.kernel3();
        let mut v = Vec::new();
        let mut cin = 1;
        for l in 0..self.depth {
            let c = self.channels(l);
            v.push(ConvShape { cin, cout: c, k });
            v.push(ConvShape { cin: c, cout: c, k });
            cin = c;
        }
        let cb = self.channels(self.depth);
        v.push(ConvShape { cin, cout: cb, k });
        v.push(ConvShape { cin: cb, cout: cb, k });
        let mut below = cb;
        for l in (0..self.depth).rev() {
            let c = self.channels(l);
            v.push(ConvShape { cin: below + c, cout: c, k });
            v.push(ConvShape { cin: c, cout: c, k });
            below = c;
        }
        v.push(ConvShape {
            cin: self.channels(0),
            cout: 1,
            k: [1, 1, 1],
        });
        v
    }

    pub fn param_count(&self) -> usize {
        self.conv_shapes().iter().map(|c| c.weight_len() + c.cout).sum()
    }

    /// Convert `[d, h, w]` or `[h, w]` spatial extents to 3D form, checking divisibility.
    pub(crate) fn spatial3(&self, spatial: &[usize]) -> Result<[usize; 3]> {
        if spatial.len() != self.spatial_dims {
            return Err(Error::invalid("input rank does not match spatial_dims"));
        }
        let g = self.granularity();
        if spatial.iter().any(|&n| n == 0 || n % g != 0) {
            return Err(Error::InvalidShape {
                shape: spatial.to_vec(),
                reason: "spatial extents must be divisible by 2^depth",
            });
        }
        Ok(if spatial.len() == 2 {
            [1, spatial[0], spatial[1]]
        } else {
            [spatial[0], spatial[1], spatial[2]]
        })
    }

    /// Largest distance (input voxels, per axis) from an output voxel to any
    /// input voxel it depends on. Tiles overlapping by at least this much
    /// reproduce whole-field prediction.
    pub fn receptive_margin(&self) -> usize {
        let h = (self.kernel / 2) as i64;
        let g = self.granularity() as i64;
        // Dependency interval at the input of the encoder level `l` for an
        // interval [lo, hi] of that level's output (after its two convs).
        fn enc(l: usize, lo: i64, hi: i64, h: i64) -> (i64, i64) {
            let (mut lo, mut hi) = (lo - 2 * h, hi + 2 * h);
            for _ in (0..l).rev() {
                // pooled index j reads [2j, 2j+1] of the level below, after its convs
                lo = 2 * lo - 2 * h;
                hi = 2 * hi + 1 + 2 * h;
            }
            (lo, hi)
        }
        let depth = self.depth;
        let mut worst = 0i64;
        for p in 0..g {
            let (mut lo_in, mut hi_in) = (p, p);
            // walk the decoder from the output upwards
            let (mut lo, mut hi) = (p, p);
            for l in 0..depth {
                lo -= 2 * h;
                hi += 2 * h;
                let (a, b) = enc(l, lo, hi, h);
                lo_in = lo_in.min(a);
                hi_in = hi_in.max(b);
                lo = lo.div_euclid(2);
                hi = hi.div_euclid(2);
            }
            // bottleneck convs at level `depth`, fed by pooling level depth-1
            lo -= 2 * h;
            hi += 2 * h;
            let (a, b) = enc(depth - 1, 2 * lo, 2 * hi + 1, h);
            lo_in = lo_in.min(a);
            hi_in = hi_in.max(b);
            worst = worst.max(p - lo_in).max(hi_in - p);
        }
        worst as usize
    }
}

/// Flat parameter vector with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetParams<T> {
    pub data: Vec<T>,
}

impl<T: Real> UNetParams<T> {
    pub fn zeros(cfg: &UNetConfig) -> Self {
        Self {
            data: vec![T::zero(); cfg.param_count()],
        }
    }

    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn init(cfg: &UNetConfig, rng: &Rng) -> Self {
        let mut data = Vec::with_capacity(cfg.param_count());
        for (i, cs) in cfg.conv_shapes().iter().enumerate() {
            let mut r = rng.stream(i as u64);
            let fan_in = (cs.cin * cs.taps()) as f64;
            let limit = libm::sqrt(6.0 / fan_in);
            for _ in 0..cs.weight_len() {
                data.push(T::from_f64(r.uniform_range(-limit, limit)));
            }
            data.extend(core::iter::repeat(T::zero()).take(cs.cout));
        }
        Self { data }
    }

    pub fn cast<U: Real>(&self) -> UNetParams<U> {
        UNetParams {
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Offsets of each convolution's weight and bias in the flat vector.
struct Slots {
    shapes: Vec<ConvShape>,
    offsets: Vec<usize>,
}

impl Slots {
    fn new(cfg: &UNetConfig) -> Self {
        let shapes = cfg.conv_shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut o = 0;
        for cs in &shapes {
            offsets.push(o);
            o += cs.weight_len() + cs.cout;
        }
        Self { shapes, offsets }
    }

    fn weight<'a, T>(&self, i: usize, p: &'a [T]) -> (&'a [T], &'a [T]) {
        let cs = &self.shapes[i];
        let o = self.offsets[i];
        let wl = cs.weight_len();
        (&p[o..o + wl], &p[o + wl..o + wl + cs.cout])
    }

    fn weight_mut<'a, T>(&self, i: usize, p: &'a mut [T]) -> (&'a mut [T], &'a mut [T]) {
        let cs = &self.shapes[i];
        let o = self.offsets[i];
        let wl = cs.weight_len();
        p[o..o + wl + cs.cout].split_at_mut(wl)
    }
}

/// Activations kept for backpropagation of one sample.
struct Trace<T> {
    /// Input of every convolution, in parameter order.
    conv_in: Vec<Vec<T>>,
    /// ReLU output of every convolution except the last one.
    conv_out: Vec<Vec<T>>,
    /// Spatial extent seen by every convolution.
    conv_dims: Vec<[usize; 3]>,
    pool_arg: Vec<Vec<u32>>,
    output: Vec<T>,
}

fn forward_sample<T: Real>(x: &[T], dims: [usize; 3], p: &[T], cfg: &UNetConfig, slots: &Slots, keep: bool) -> Trace<T> {
    let mut tr = Trace {
        conv_in: Vec::new(),
        conv_out: Vec::new(),
        conv_dims: Vec::new(),
        pool_arg: Vec::new(),
        output: Vec::new(),
    };
    let pf = cfg.pool3();
    let mut idx = 0;
    let mut conv = |input: Vec<T>, dims: [usize; 3], relu: bool, tr: &mut Trace<T>| -> Vec<T> {
        let (w, b) = slots.weight(idx, p);
        let mut y = conv_forward(&input, &slots.shapes[idx], dims, w, b);
        if relu {
            relu_inplace(&mut y);
        }
        idx += 1;
        tr.conv_dims.push(dims);
        if keep {
            tr.conv_in.push(input);
            if relu {
                tr.conv_out.push(y.clone());
            }
        }
        y
    };

    let mut skips = Vec::with_capacity(cfg.depth);
    let mut cur = x.to_vec();
    let mut d = dims;
    for l in 0..cfg.depth {
        let a = conv(cur, d, true, &mut tr);
        let b = conv(a, d, true, &mut tr);
        let c = slots.shapes[2 * l + 1].cout;
        let (pooled, arg) = maxpool(&b, c, d, pf);
        if keep {
            tr.pool_arg.push(arg);
        }
        skips.push((b, d));
        cur = pooled;
        d = pooled_dims(d, pf);
    }
    let a = conv(cur, d, true, &mut tr);
    cur = conv(a, d, true, &mut tr);
    let mut c_below = cfg.base_channels << cfg.depth;
    for _ in (0..cfg.depth).rev() {
        let (skip, sd) = skips.pop().expect("one skip per level");
        let mut cat = upsample(&cur, c_below, d, pf);
        cat.extend_from_slice(&skip);
        d = sd;
        let a = conv(cat, d, true, &mut tr);
        cur = conv(a, d, true, &mut tr);
        c_below = c_below / 2;
    }
    tr.output = conv(cur, d, false, &mut tr);
    tr
}

/// Gradient of `sum(dout * net(x))` w.r.t. parameters, accumulated into `grad`.
fn backward_sample<T: Real>(tr: &Trace<T>, dout: &[T], p: &[T], cfg: &UNetConfig, slots: &Slots, grad: &mut [T]) {
    let pf = cfg.pool3();
    let n = slots.shapes.len();
    let depth = cfg.depth;
    let mut conv_back = |i: usize, g: &[T], want_dx: bool| -> Option<Vec<T>> {
        let (w, _) = slots.weight(i, p);
        let (dw, db) = slots.weight_mut(i, grad);
        conv_backward(&tr.conv_in[i], &slots.shapes[i], tr.conv_dims[i], w, g, dw, db, want_dx)
    };
    // ReLU outputs are stored for convs 0..n-1, so conv i has conv_out[i].
    let relu_back = |i: usize, mut g: Vec<T>| -> Vec<T> {
        relu_backward(&tr.conv_out[i], &mut g);
        g
    };

    let mut g = conv_back(n - 1, dout, true).expect("dx requested");
    let mut skip_grads: Vec<Vec<T>> = vec![Vec::new(); depth];
    let mut i = n - 1;
    // decoder, shallow level last in parameter order, so walk it backwards
    for l in 0..depth {
        i -= 1;
        g = relu_back(i, g);
        g = conv_back(i, &g, true).expect("dx requested");
        i -= 1;
        g = relu_back(i, g);
        let dcat = conv_back(i, &g, true).expect("dx requested");
        let d = tr.conv_dims[i];
        let s = d[0] * d[1] * d[2];
        let c_up = slots.shapes[i].cin - (cfg.base_channels << l);
        let (dup, dskip) = dcat.split_at(c_up * s);
        skip_grads[l] = dskip.to_vec();
        g = upsample_backward(dup, c_up, pooled_dims(d, pf), pf);
    }
    // bottleneck
    i -= 1;
    g = relu_back(i, g);
    g = conv_back(i, &g, true).expect("dx requested");
    i -= 1;
    g = relu_back(i, g);
    g = conv_back(i, &g, true).expect("dx requested");
    for l in (0..depth).rev() {
        let d = tr.conv_dims[2 * l];
        let c = slots.shapes[2 * l + 1].cout;
        let mut gb = maxpool_backward(&g, &tr.pool_arg[l], c * d[0] * d[1] * d[2]);
        gb.iter_mut().zip(&skip_grads[l]).for_each(|(a, b)| *a += *b);
        i -= 1;
        let gb = relu_back(i, gb);
        g = conv_back(i, &gb, true).expect("dx requested");
        i -= 1;
        let ga = relu_back(i, g);
        g = conv_back(i, &ga, l > 0).unwrap_or_default();
    }
    debug_assert_eq!(i, 0);
}

fn sample_dims(x: &Tensor<impl Real>, cfg: &UNetConfig) -> Result<[usize; 3]> {
    let shape = x.shape();
    if shape.len() != 2 + cfg.spatial_dims || shape[1] != 1 {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "expected (batch, 1, spatial...) input",
        });
    }
    cfg.spatial3(&shape[2..])
}

fn check_params<T: Real>(p: &UNetParams<T>, cfg: &UNetConfig) -> Result<()> {
    cfg.validate()?;
    if p.data.len() != cfg.param_count() {
        return Err(Error::ShapeMismatch(vec![cfg.param_count()], vec![p.data.len()]));
    }
    Ok(())
}

/// Runs the network on every sample of `x` (shape `(batch, 1, spatial...)`).
pub fn unet_forward<T: Real>(x: &Tensor<T>, p: &UNetParams<T>, cfg: &UNetConfig) -> Result<Tensor<T>> {
    check_params(p, cfg)?;
    let dims = sample_dims(x, cfg)?;
    let slots = Slots::new(cfg);
    let outs = crate::par::map_range(x.batch(), |b| {
        forward_sample(x.sample(b), dims, &p.data, cfg, &slots, false).output
    });
    Tensor::new(x.shape().to_vec(), outs.concat())
}

/// Which ReLU units are active and which input wins each max-pool window,
/// for every sample. Finite-difference checks use it to detect when a
/// perturbation crosses a kink of the piecewise-linear network.
pub fn activation_pattern<T: Real>(x: &Tensor<T>, p: &UNetParams<T>, cfg: &UNetConfig) -> Result<Vec<u64>> {
    check_params(p, cfg)?;
    let dims = sample_dims(x, cfg)?;
    let slots = Slots::new(cfg);
    let mut pattern = Vec::new();
    for b in 0..x.batch() {
        let tr = forward_sample(x.sample(b), dims, &p.data, cfg, &slots, true);
        let mut bits = 0u64;
        let mut n = 0;
        let mut push = |bit: bool| {
            bits |= (bit as u64) << n;
            n += 1;
            if n == 64 {
                pattern.push(bits);
                bits = 0;
                n = 0;
            }
        };
        for out in &tr.conv_out {
            out.iter().for_each(|v| push(*v > T::zero()));
        }
        pattern.push(bits);
        for arg in &tr.pool_arg {
            pattern.extend(arg.iter().map(|&a| a as u64));
        }
    }
    Ok(pattern)
}

/// MSE over all elements and its gradient w.r.t. `pred`, `2 (pred - target) / N`.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(pred.shape().to_vec(), target.shape().to_vec()));
    }
    let n = pred.data().len() as f64;
    let mut sum = 0.0f64;
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            sum += d * d;
            T::from_f64(2.0 * d / n)
        })
        .collect();
    Ok((sum / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Loss of `mse_loss(unet_forward(x), target)` and its gradient with respect
/// to every parameter, in the flat parameter order.
pub fn backward<T: Real>(x: &Tensor<T>, target: &Tensor<T>, p: &UNetParams<T>, cfg: &UNetConfig) -> Result<(f64, Vec<T>)> {
    check_params(p, cfg)?;
    let dims = sample_dims(x, cfg)?;
    if x.shape() != target.shape() {
        return Err(Error::ShapeMismatch(x.shape().to_vec(), target.shape().to_vec()));
    }
    let slots = Slots::new(cfg);
    let total = x.data().len() as f64;
    let per_sample = crate::par::map_range(x.batch(), |b| {
        let tr = forward_sample(x.sample(b), dims, &p.data, cfg, &slots, true);
        let mut loss = 0.0f64;
        let dout: Vec<T> = tr
            .output
            .iter()
            .zip(target.sample(b))
            .map(|(&a, &t)| {
                let d = a.as_f64() - t.as_f64();
                loss += d * d;
                T::from_f64(2.0 * d / total)
            })
            .collect();
        let mut grad = vec![T::zero(); p.data.len()];
        backward_sample(&tr, &dout, &p.data, cfg, &slots, &mut grad);
        (loss, grad)
    });
    let mut loss = 0.0;
    let mut grad = vec![T::zero(); p.data.len()];
    for (l, g) in per_sample {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += *b);
    }
    Ok((loss / total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> UNetConfig {
        UNetConfig {
            spatial_dims: 2,
            depth: 2,
            kernel: 3,
            base_channels: 2,
        }
    }

    fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = Rng::new(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.normal()).collect()).unwrap()
    }

    #[test]
    fn parameter_layout() {
        let cfg = tiny();
        let shapes = cfg.conv_shapes();
        assert_eq!(shapes.len(), 4 * 2 + 3);
        assert_eq!((shapes[0].cin, shapes[0].cout), (1, 2));
        assert_eq!((shapes[4].cin, shapes[4].cout), (4, 8));
        assert_eq!((shapes[6].cin, shapes[6].cout), (12, 4));
        assert_eq!((shapes[8].cin, shapes[8].cout), (6, 2));
        assert_eq!(shapes[10].k, [1, 1, 1]);
        assert_eq!(cfg.param_count(), 1897);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let cfg = tiny();
        let x = input(&[2, 1, 16, 16], 1);
        let y = unet_forward(&x, &UNetParams::zeros(&cfg), &cfg).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let (loss, g) = backward(&Tensor::zeros(&[1, 1, 16, 16]), &Tensor::zeros(&[1, 1, 16, 16]), &UNetParams::<f64>::zeros(&cfg), &cfg).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_and_linear_head() {
        let cfg = tiny();
        let p = UNetParams::<f64>::init(&cfg, &Rng::new(3));
        let x = input(&[1, 1, 16, 16], 2);
        let y = unet_forward(&x, &p, &cfg).unwrap();
        assert_eq!(y.shape(), &[1, 1, 16, 16]);
        assert!(y.data().iter().any(|&v| v < 0.0), "linear head can go negative");
        assert!(unet_forward(&input(&[1, 1, 18, 16], 2), &p, &cfg).is_err());
        assert!(unet_forward(&input(&[1, 2, 16, 16], 2), &p, &cfg).is_err());
    }

    #[test]
    fn bottleneck_extent() {
        let cfg = tiny();
        let slots = Slots::new(&cfg);
        let p = UNetParams::<f64>::init(&cfg, &Rng::new(4));
        let x = input(&[1, 1, 16, 16], 5);
        let tr = forward_sample(x.sample(0), [1, 16, 16], &p.data, &cfg, &slots, true);
        assert_eq!(tr.conv_dims[4], [1, 4, 4]);
        assert_eq!(tr.conv_dims[5], [1, 4, 4]);
    }

    #[test]
    fn final_bias_gradient_is_twice_mean_residual() {
        let cfg = tiny();
        let p = UNetParams::<f64>::init(&cfg, &Rng::new(6));
        let x = input(&[2, 1, 16, 16], 7);
        let t = input(&[2, 1, 16, 16], 8);
        let y = unet_forward(&x, &p, &cfg).unwrap();
        let mean_res = y.data().iter().zip(t.data()).map(|(a, b)| a - b).sum::<f64>() / y.data().len() as f64;
        let (_, g) = backward(&x, &t, &p, &cfg).unwrap();
        assert!((g[g.len() - 1] - 2.0 * mean_res).abs() < 1e-12);
    }

    #[test]
    fn margin_for_default_depth() {
        assert_eq!(UNetConfig::new_2d(16).receptive_margin(), 23);
        assert_eq!(UNetConfig::new_3d(8).receptive_margin(), 23);
        let shallow = UNetConfig { depth: 1, ..UNetConfig::new_2d(4) };
        assert!(shallow.receptive_margin() < 23);
    }

    #[test]
    fn translation_covariance_by_pool_period() {
        let cfg = tiny();
        let p = UNetParams::<f64>::init(&cfg, &Rng::new(9));
        let big = input(&[1, 1, 64, 72], 10);
        let crop = |off: usize| {
            let mut d = Vec::new();
            for y in 0..64 {
                d.extend_from_slice(&big.data()[y * 72 + off..y * 72 + off + 64]);
            }
            Tensor::new(vec![1, 1, 64, 64], d).unwrap()
        };
        let a = unet_forward(&crop(0), &p, &cfg).unwrap();
        let b = unet_forward(&crop(4), &p, &cfg).unwrap();
        let m = cfg.receptive_margin();
        assert!(m + 4 < 64 - m);
        for y in 0..64 {
            for x in m + 4..64 - m {
                assert!((a.data()[y * 64 + x] - b.data()[y * 64 + x - 4]).abs() < 1e-5);
            }
        }
    }
}
