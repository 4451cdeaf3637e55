//! Parameterized layers. Each layer registers its weights in a
//! [`ParamStore`] at construction and reads them back in `forward`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform with variance `2 / fan_in`; for ReLU stacks.
    He,
    /// Uniform with variance `2 / (fan_in + fan_out)`.
    Xavier,
}

fn uniform_tensor<T: Real, R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let dist = Uniform::new_inclusive(-limit, limit).expect("valid init range");
    Tensor::from_vec(shape, (0..n).map(|_| T::lit(dist.sample(rng))).collect())
}

fn init_limit(init: Init, fan_in: usize, fan_out: usize) -> f64 {
    match init {
        Init::He => (6.0 / fan_in as f64).sqrt(),
        Init::Xavier => (6.0 / (fan_in + fan_out) as f64).sqrt(),
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let limit = init_limit(init, in_dim, out_dim);
        let w = store.add(format!("{name}.weight"), uniform_tensor(&[in_dim, out_dim], limit, rng), true);
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]), true);
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        g.linear(x, w, Some(b))
    }
}

/// Time-axis convolution over `[B, T, C]` with "same" padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
        dilation: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = in_dim * kernel;
        let limit = init_limit(init, fan_in, out_dim * kernel);
        let w = store.add(format!("{name}.weight"), uniform_tensor(&[fan_in, out_dim], limit, rng), true);
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]), true);
        Self { w, b, in_dim, out_dim, kernel, dilation }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        g.conv1d(x, w, Some(b), self.kernel, self.dilation)
    }
}

#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
    pub reverse: bool,
}

impl Lstm {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        reverse: bool,
        rng: &mut R,
    ) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add(format!("{name}.w_ih"), uniform_tensor(&[in_dim, 4 * hidden], limit, rng), true);
        let w_hh = store.add(format!("{name}.w_hh"), uniform_tensor(&[hidden, 4 * hidden], limit, rng), true);
        // forget gate starts open
        let mut bias = vec![T::zero(); 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = T::one());
        let b = store.add(format!("{name}.bias"), Tensor::from_vec(&[4 * hidden], bias), true);
        Self { w_ih, w_hh, b, in_dim, hidden, reverse }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Var {
        let w_ih = g.param(p, self.w_ih);
        let w_hh = g.param(p, self.w_hh);
        let b = g.param(p, self.b);
        g.lstm(x, w_ih, w_hh, b, self.reverse)
    }
}

/// Forward and backward LSTMs whose outputs are concatenated, forward first.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let fwd = Lstm::new(store, &format!("{name}.fwd"), in_dim, hidden, false, rng);
        let bwd = Lstm::new(store, &format!("{name}.bwd"), in_dim, hidden, true, rng);
        Self { fwd, bwd }
    }

    pub fn out_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Var {
        let f = self.fwd.forward(g, p, x);
        let b = self.bwd.forward(g, p, x);
        g.concat(&[f, b])
    }
}
