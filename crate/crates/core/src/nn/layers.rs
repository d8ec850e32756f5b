//! Fixed network blocks with hand-derived backward passes.
//!
//! Forward passes are pure functions of a [`Params`] collection and their
//! inputs. Training-time forwards return a cache that the matching backward
//! consumes; backward passes return the input gradient and, when given a
//! [`Grads`] accumulator, add parameter gradients into it.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;

use super::init::Init;
use super::params::{Grads, ParamId, Params};
use super::real::Real;
use crate::error::{ensure, Result};
use crate::rng::Rng;

/// Dropout behaviour of a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// `y = x W + b` with `x: [batch, in]`, `W: [in, out]`, `b: [out]`.
pub fn linear_forward<T: Real>(
    x: ArrayView2<T>,
    w: ArrayView2<T>,
    b: ArrayView1<T>,
) -> Result<Array2<T>> {
    ensure!(x.ncols() == w.nrows(), "linear: input width {} vs weight rows {}", x.ncols(), w.nrows());
    ensure!(b.len() == w.ncols(), "linear: bias {} vs weight cols {}", b.len(), w.ncols());
    let mut y = x.dot(&w);
    y += &b;
    Ok(y)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(
        p: &mut Params<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        let weight = p.add(&format!("{name}.weight"), init.tensor(&[in_dim, out_dim], rng))?;
        let bias = p.add(&format!("{name}.bias"), Init::Zeros.tensor(&[out_dim], rng))?;
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    /// Look up an existing layer by name prefix.
    pub fn bind<T: Real>(p: &Params<T>, name: &str) -> Result<Self> {
        let weight = p
            .id_of(&format!("{name}.weight"))
            .ok_or_else(|| crate::error::contract(format!("missing {name}.weight")))?;
        let bias = p
            .id_of(&format!("{name}.bias"))
            .ok_or_else(|| crate::error::contract(format!("missing {name}.bias")))?;
        let w = p.mat(weight);
        Ok(Self { weight, bias, in_dim: w.nrows(), out_dim: w.ncols() })
    }

    pub fn forward<T: Real>(&self, p: &Params<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
        linear_forward(x, p.mat(self.weight), p.vector(self.bias))
    }

    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        x: ArrayView2<T>,
        dy: ArrayView2<T>,
        grads: Option<&mut Grads<T>>,
    ) -> Array2<T> {
        if let Some(g) = grads {
            g.mat_mut(self.weight).scaled_add(T::one(), &x.t().dot(&dy));
            g.vector_mut(self.bias).scaled_add(T::one(), &dy.sum_axis(Axis(0)));
        }
        dy.dot(&p.mat(self.weight).t())
    }
}

/// Per-row standardization followed by an affine map.
pub fn layernorm_forward<T: Real>(
    x: ArrayView2<T>,
    gain: ArrayView1<T>,
    bias: ArrayView1<T>,
    eps: f64,
) -> Result<Array2<T>> {
    ensure!(x.ncols() >= 1 && x.ncols() == gain.len() && gain.len() == bias.len(), "layernorm shape");
    ensure!(eps > 0.0, "layernorm eps must be positive");
    Ok(layernorm_core(x, gain, bias, T::lit(eps)).0)
}

fn layernorm_core<T: Real>(
    x: ArrayView2<T>,
    gain: ArrayView1<T>,
    bias: ArrayView1<T>,
    eps: T,
) -> (Array2<T>, Array2<T>, Array1<T>) {
    let d = T::from_usize(x.ncols()).expect("width");
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / d;
        *is = T::one() / (var + eps).sqrt();
        let s = *is;
        row.mapv_inplace(|v| v * s);
    }
    let mut y = &xhat * &gain;
    y += &bias;
    (y, xhat, inv_std)
}

pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
    pub eps: f64,
}

pub const LAYERNORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<T: Real>(p: &mut Params<T>, name: &str, dim: usize) -> Result<Self> {
        let gain = p.add(&format!("{name}.gain"), Array1::ones(dim).into_dyn())?;
        let bias = p.add(&format!("{name}.bias"), Array1::zeros(dim).into_dyn())?;
        Ok(Self { gain, bias, dim, eps: LAYERNORM_EPS })
    }

    pub fn bind<T: Real>(p: &Params<T>, name: &str) -> Result<Self> {
        let gain = p
            .id_of(&format!("{name}.gain"))
            .ok_or_else(|| crate::error::contract(format!("missing {name}.gain")))?;
        let bias = p
            .id_of(&format!("{name}.bias"))
            .ok_or_else(|| crate::error::contract(format!("missing {name}.bias")))?;
        Ok(Self { gain, bias, dim: p.vector(gain).len(), eps: LAYERNORM_EPS })
    }

    pub fn forward<T: Real>(&self, p: &Params<T>, x: ArrayView2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let (y, xhat, inv_std) = layernorm_core(x, p.vector(self.gain), p.vector(self.bias), T::lit(self.eps));
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn forward_eval<T: Real>(&self, p: &Params<T>, x: ArrayView2<T>) -> Array2<T> {
        layernorm_core(x, p.vector(self.gain), p.vector(self.bias), T::lit(self.eps)).0
    }

    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        cache: &LayerNormCache<T>,
        dy: ArrayView2<T>,
        grads: Option<&mut Grads<T>>,
    ) -> Array2<T> {
        if let Some(g) = grads {
            g.vector_mut(self.gain).scaled_add(T::one(), &(&dy * &cache.xhat).sum_axis(Axis(0)));
            g.vector_mut(self.bias).scaled_add(T::one(), &dy.sum_axis(Axis(0)));
        }
        let d = T::from_usize(self.dim).expect("width");
        let mut dxhat = &dy * &p.vector(self.gain);
        for ((mut row, xh), &is) in dxhat.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.inv_std.iter()) {
            let mean_d = row.sum() / d;
            let mean_dx = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / d;
            Zip::from(&mut row).and(&xh).for_each(|r, &h| *r = (*r - mean_d - h * mean_dx) * is);
        }
        dxhat
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh-approximated GELU, `0.5 x (1 + tanh(c (x + k x^3)))`, evaluated in
/// the equivalent logistic form `x / (1 + exp(-2 c (x + k x^3)))`, which is
/// several times faster than a library `tanh`.
pub fn gelu<T: Real>(x: T) -> T {
    let y = T::lit(GELU_C) * (x + T::lit(GELU_K) * x * x * x);
    x / (T::one() + (-(y + y)).exp())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let (c, k) = (T::lit(GELU_C), T::lit(GELU_K));
    let y = c * (x + k * x * x * x);
    // s = sigmoid(2y) = (1 + tanh y) / 2
    let s = T::one() / (T::one() + (-(y + y)).exp());
    let dy = c * (T::one() + T::lit(3.0) * k * x * x);
    s + x * (T::lit(2.0) * s * (T::one() - s)) * dy
}

pub fn gelu_array<T: Real>(x: ArrayView2<T>) -> Array2<T> {
    x.mapv(gelu)
}

/// Inverted dropout. Returns the output and, in training mode with a positive
/// rate, the per-entry scale mask (0 or 1/(1-rate)).
pub fn dropout<T: Real>(x: Array2<T>, rate: f64, mode: &mut Mode<'_>) -> Result<(Array2<T>, Option<Array2<T>>)> {
    ensure!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let keep = T::lit(1.0 / (1.0 - rate));
            let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            });
            Ok((&x * &mask, Some(mask)))
        }
        _ => Ok((x, None)),
    }
}

/// Sinusoidal encoding of a scalar in [0, 1]: slot 2k holds sin(h w_k) and
/// slot 2k+1 holds cos(h w_k), with w_k = 10000^(-2k/dim).
pub fn sinusoidal_encode<T: Real>(h_frac: f64, dim: usize) -> Result<Array1<T>> {
    ensure!(dim > 0 && dim % 2 == 0, "sinusoidal dimension must be even and positive, got {dim}");
    let mut out = Array1::zeros(dim);
    for k in 0..dim / 2 {
        let freq = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        out[2 * k] = T::lit((h_frac * freq).sin());
        out[2 * k + 1] = T::lit((h_frac * freq).cos());
    }
    Ok(out)
}

pub fn sinusoidal_batch<T: Real>(h_fracs: &[f64], dim: usize) -> Result<Array2<T>> {
    let mut out = Array2::zeros((h_fracs.len(), dim));
    for (mut row, &h) in out.rows_mut().into_iter().zip(h_fracs) {
        row.assign(&sinusoidal_encode::<T>(h, dim)?);
    }
    Ok(out)
}

/// Feature modulation `h * (1 + gamma(c)) + beta(c)` whose two projections
/// start at zero, so an untrained block is the identity on `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaLnZero {
    pub gamma: Linear,
    pub beta: Linear,
}

pub struct AdaLnCache<T> {
    gamma: Array2<T>,
}

impl AdaLnZero {
    pub fn new<T: Real>(p: &mut Params<T>, name: &str, cond_dim: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            gamma: Linear::new(p, &format!("{name}.gamma"), cond_dim, dim, Init::Zeros, rng)?,
            beta: Linear::new(p, &format!("{name}.beta"), cond_dim, dim, Init::Zeros, rng)?,
        })
    }

    pub fn bind<T: Real>(p: &Params<T>, name: &str) -> Result<Self> {
        Ok(Self { gamma: Linear::bind(p, &format!("{name}.gamma"))?, beta: Linear::bind(p, &format!("{name}.beta"))? })
    }

    pub fn forward<T: Real>(&self, p: &Params<T>, h: ArrayView2<T>, c: ArrayView2<T>) -> Result<(Array2<T>, AdaLnCache<T>)> {
        ensure!(h.nrows() == c.nrows(), "adaln: batch mismatch {} vs {}", h.nrows(), c.nrows());
        ensure!(h.ncols() == self.gamma.out_dim, "adaln: feature width {} vs {}", h.ncols(), self.gamma.out_dim);
        let gamma = self.gamma.forward(p, c)?;
        let beta = self.beta.forward(p, c)?;
        let mut out = &gamma + T::one();
        out *= &h;
        out += &beta;
        Ok((out, AdaLnCache { gamma }))
    }

    /// Returns `(dh, dc)`.
    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        cache: &AdaLnCache<T>,
        h: ArrayView2<T>,
        c: ArrayView2<T>,
        dy: ArrayView2<T>,
        mut grads: Option<&mut Grads<T>>,
    ) -> (Array2<T>, Array2<T>) {
        let dh = &dy * &(&cache.gamma + T::one());
        let dgamma = &dy * &h;
        let mut dc = self.gamma.backward(p, c, dgamma.view(), grads.as_deref_mut());
        dc += &self.beta.backward(p, c, dy, grads);
        (dh, dc)
    }
}

/// Stack of `Linear -> LayerNorm -> GELU -> Dropout` hidden layers.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseStack {
    pub layers: Vec<(Linear, LayerNorm)>,
    pub dropout: f64,
}

struct LayerCache<T> {
    input: Array2<T>,
    ln: LayerNormCache<T>,
    pre_act: Array2<T>,
    mask: Option<Array2<T>>,
}

pub struct DenseStackCache<T> {
    layers: Vec<LayerCache<T>>,
}

impl DenseStack {
    pub fn new<T: Real>(
        p: &mut Params<T>,
        name: &str,
        in_dim: usize,
        widths: &[usize],
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = in_dim;
        for (i, &w) in widths.iter().enumerate() {
            let lin = Linear::new(p, &format!("{name}.{i}.linear"), prev, w, Init::Kaiming, rng)?;
            let ln = LayerNorm::new(p, &format!("{name}.{i}.norm"), w)?;
            layers.push((lin, ln));
            prev = w;
        }
        Ok(Self { layers, dropout })
    }

    pub fn bind<T: Real>(p: &Params<T>, name: &str, depth: usize, dropout: f64) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| Ok((Linear::bind(p, &format!("{name}.{i}.linear"))?, LayerNorm::bind(p, &format!("{name}.{i}.norm"))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, dropout })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.0.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.0.out_dim)
    }

    pub fn forward_eval<T: Real>(&self, p: &Params<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
        ensure!(x.ncols() == self.in_dim(), "dense stack: input width {} vs {}", x.ncols(), self.in_dim());
        let mut h = x.to_owned();
        for (lin, ln) in &self.layers {
            let z = lin.forward(p, h.view())?;
            let mut n = ln.forward_eval(p, z.view());
            n.mapv_inplace(gelu);
            h = n;
        }
        Ok(h)
    }

    pub fn forward<T: Real>(
        &self,
        p: &Params<T>,
        x: ArrayView2<T>,
        mode: &mut Mode<'_>,
    ) -> Result<(Array2<T>, DenseStackCache<T>)> {
        ensure!(x.ncols() == self.in_dim(), "dense stack: input width {} vs {}", x.ncols(), self.in_dim());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (lin, ln) in &self.layers {
            let z = lin.forward(p, h.view())?;
            let (n, ln_cache) = ln.forward(p, z.view());
            let act = n.mapv(gelu);
            let (out, mask) = dropout(act, self.dropout, mode)?;
            caches.push(LayerCache { input: h, ln: ln_cache, pre_act: n, mask });
            h = out;
        }
        Ok((h, DenseStackCache { layers: caches }))
    }

    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        cache: &DenseStackCache<T>,
        dy: ArrayView2<T>,
        mut grads: Option<&mut Grads<T>>,
    ) -> Array2<T> {
        let mut d = dy.to_owned();
        for ((lin, ln), c) in self.layers.iter().zip(&cache.layers).rev() {
            if let Some(mask) = &c.mask {
                d *= mask;
            }
            Zip::from(&mut d).and(&c.pre_act).for_each(|g, &x| *g = *g * gelu_grad(x));
            let dz = ln.backward(p, &c.ln, d.view(), grads.as_deref_mut());
            d = lin.backward(p, c.input.view(), dz.view(), grads.as_deref_mut());
        }
        d
    }
}

/// Hidden [`DenseStack`] followed by a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub hidden: DenseStack,
    pub out: Linear,
}

pub struct MlpCache<T> {
    stack: DenseStackCache<T>,
    features: Array2<T>,
}

impl<T> MlpCache<T> {
    /// Output of the last hidden layer.
    pub fn features(&self) -> &Array2<T> {
        &self.features
    }
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        p: &mut Params<T>,
        name: &str,
        in_dim: usize,
        widths: &[usize],
        out_dim: usize,
        dropout: f64,
        out_init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        ensure!(!widths.is_empty(), "mlp needs at least one hidden layer");
        let hidden = DenseStack::new(p, name, in_dim, widths, dropout, rng)?;
        let out = Linear::new(p, &format!("{name}.out"), hidden.out_dim(), out_dim, out_init, rng)?;
        Ok(Self { hidden, out })
    }

    pub fn bind<T: Real>(p: &Params<T>, name: &str, depth: usize, dropout: f64) -> Result<Self> {
        Ok(Self { hidden: DenseStack::bind(p, name, depth, dropout)?, out: Linear::bind(p, &format!("{name}.out"))? })
    }

    pub fn in_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.out.out_dim
    }

    pub fn forward_eval<T: Real>(&self, p: &Params<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
        let h = self.hidden.forward_eval(p, x)?;
        self.out.forward(p, h.view())
    }

    pub fn forward<T: Real>(&self, p: &Params<T>, x: ArrayView2<T>, mode: &mut Mode<'_>) -> Result<(Array2<T>, MlpCache<T>)> {
        let (features, stack) = self.hidden.forward(p, x, mode)?;
        let y = self.out.forward(p, features.view())?;
        Ok((y, MlpCache { stack, features }))
    }

    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        cache: &MlpCache<T>,
        dy: ArrayView2<T>,
        mut grads: Option<&mut Grads<T>>,
    ) -> Array2<T> {
        let dh = self.out.backward(p, cache.features.view(), dy, grads.as_deref_mut());
        self.hidden.backward(p, &cache.stack, dh.view(), grads)
    }
}

/// Concatenate two row-aligned matrices along the feature axis.
pub fn concat_cols<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(&a);
    out.slice_mut(s![.., a.ncols()..]).assign(&b);
    out
}
