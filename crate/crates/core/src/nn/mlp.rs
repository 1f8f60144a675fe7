//! Multilayer perceptrons with layer normalization, ELU and residual blocks.
//!
//! Layout for `num_hidden_layers = k >= 1`:
//!
//! ```text
//! h   = ELU(x W_in + b_in)                      input projection, in -> H
//! h   = h + ELU(LN(h W_i + b_i))   i = 1..k     hidden blocks, H -> H
//! y   = h W_out + b_out                         output projection, H -> out
//! ```
//!
//! With `k = 0` the MLP is a single affine map `in -> out`. Layer
//! normalization and the residual add can be switched off per MLP.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{affine, affine_backward, Tensor2D};
use crate::error::{Error, Result};

pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden_width: usize,
    pub num_hidden_layers: usize,
    pub use_layernorm: bool,
    pub use_residual: bool,
}

impl MlpSpec {
    pub fn new(in_dim: usize, out_dim: usize, hidden_width: usize, num_hidden_layers: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            hidden_width,
            num_hidden_layers,
            use_layernorm: true,
            use_residual: true,
        }
    }

    /// A single affine layer.
    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            hidden_width: 0,
            num_hidden_layers: 0,
            use_layernorm: false,
            use_residual: false,
        }
    }

    pub fn param_count(&self) -> usize {
        let (i, o, h, k) = (self.in_dim, self.out_dim, self.hidden_width, self.num_hidden_layers);
        if k == 0 {
            return i * o + o;
        }
        let norm = if self.use_layernorm { 2 * h } else { 0 };
        (i * h + h) + k * (h * h + h + norm) + (h * o + o)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(in, out)`.
    pub weight: Tensor2D,
    /// `(1, out)`.
    pub bias: Tensor2D,
}

impl Linear {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weight: Tensor2D::zeros(n_in, n_out),
            bias: Tensor2D::zeros(1, n_out),
        }
    }

    /// Weights, then bias, drawn from `U(-a, a)` with the Glorot bound.
    fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let a = (6.0 / (n_in + n_out) as f64).sqrt();
        let mut lin = Self::zeros(n_in, n_out);
        for w in lin.weight.data.iter_mut().chain(lin.bias.data.iter_mut()) {
            *w = rng.gen_range(-a..a);
        }
        lin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor2D,
    pub beta: Tensor2D,
}

impl LayerNorm {
    fn new(width: usize, gamma: f64) -> Self {
        let mut g = Tensor2D::zeros(1, width);
        g.fill(gamma);
        Self {
            gamma: g,
            beta: Tensor2D::zeros(1, width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    /// `k + 2` layers for `k >= 1`, otherwise one.
    pub linears: Vec<Linear>,
    /// One per hidden block when layer normalization is on.
    pub norms: Vec<LayerNorm>,
}

/// Activations recorded by [`Mlp::forward_with_tape`].
#[derive(Debug, Clone)]
pub struct MlpTape {
    input: Tensor2D,
    /// `hs[0]` is the activated input projection, `hs[i]` the output of block `i`.
    hs: Vec<Tensor2D>,
    blocks: Vec<BlockTape>,
}

#[derive(Debug, Clone)]
struct BlockTape {
    xhat: Option<Tensor2D>,
    rstd: Vec<f64>,
    act: Tensor2D,
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// ELU derivative expressed through its output.
#[inline]
fn elu_grad_from_output(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

fn elu_inplace(t: &mut Tensor2D) {
    t.data.iter_mut().for_each(|v| *v = elu(*v));
}

/// Row-wise normalization to zero mean and unit variance, returning `(xhat, rstd)`.
pub fn layernorm_normalize(u: &Tensor2D) -> (Tensor2D, Vec<f64>) {
    let n = u.cols as f64;
    let mut xhat = Tensor2D::zeros(u.rows, u.cols);
    let mut rstd = Vec::with_capacity(u.rows);
    for r in 0..u.rows {
        let row = u.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let s = 1.0 / (var + LAYERNORM_EPS).sqrt();
        for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
            *o = (v - mean) * s;
        }
        rstd.push(s);
    }
    (xhat, rstd)
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Self {
        Self::build(spec, Linear::zeros, 0.0)
    }

    pub fn init<R: Rng>(spec: MlpSpec, rng: &mut R) -> Self {
        Self::build(spec, |i, o| Linear::init(i, o, rng), 1.0)
    }

    fn build(spec: MlpSpec, mut make: impl FnMut(usize, usize) -> Linear, gamma: f64) -> Self {
        let (i, o, h, k) = (spec.in_dim, spec.out_dim, spec.hidden_width, spec.num_hidden_layers);
        let mut linears = Vec::new();
        let mut norms = Vec::new();
        if k == 0 {
            linears.push(make(i, o));
        } else {
            linears.push(make(i, h));
            for _ in 0..k {
                linears.push(make(h, h));
                if spec.use_layernorm {
                    norms.push(LayerNorm::new(h, gamma));
                }
            }
            linears.push(make(h, o));
        }
        Self { spec, linears, norms }
    }

    /// Same layout, every value zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_tensor_mut(|_, t| t.fill(0.0));
        z
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|_, t| n += t.len());
        n
    }

    /// Visits every parameter tensor in a fixed order with a local name.
    pub fn for_each_tensor<'a>(&'a self, mut f: impl FnMut(String, &'a Tensor2D)) {
        let k = self.spec.num_hidden_layers;
        for (li, lin) in self.linears.iter().enumerate() {
            f(format!("lin{li}.weight"), &lin.weight);
            f(format!("lin{li}.bias"), &lin.bias);
            if li >= 1 && li <= k {
                if let Some(norm) = self.norms.get(li - 1) {
                    f(format!("norm{li}.gamma"), &norm.gamma);
                    f(format!("norm{li}.beta"), &norm.beta);
                }
            }
        }
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(String, &mut Tensor2D)) {
        let k = self.spec.num_hidden_layers;
        let Mlp { linears, norms, .. } = self;
        for (li, lin) in linears.iter_mut().enumerate() {
            f(format!("lin{li}.weight"), &mut lin.weight);
            f(format!("lin{li}.bias"), &mut lin.bias);
            if li >= 1 && li <= k {
                if let Some(norm) = norms.get_mut(li - 1) {
                    f(format!("norm{li}.gamma"), &mut norm.gamma);
                    f(format!("norm{li}.beta"), &mut norm.beta);
                }
            }
        }
    }

    fn check_input(&self, x: &Tensor2D) -> Result<()> {
        if x.cols != self.spec.in_dim {
            return Err(Error::shape("mlp_forward", self.spec.in_dim, x.cols));
        }
        Ok(())
    }

    /// Forward pass without recording activations.
    pub fn forward(&self, x: &Tensor2D) -> Result<Tensor2D> {
        self.check_input(x)?;
        Ok(self.run(x, None))
    }

    pub fn forward_with_tape(&self, x: &Tensor2D) -> Result<(Tensor2D, MlpTape)> {
        self.check_input(x)?;
        let mut tape = MlpTape {
            input: x.clone(),
            hs: Vec::new(),
            blocks: Vec::new(),
        };
        let y = self.run(x, Some(&mut tape));
        Ok((y, tape))
    }

    fn run(&self, x: &Tensor2D, mut tape: Option<&mut MlpTape>) -> Tensor2D {
        let k = self.spec.num_hidden_layers;
        if k == 0 {
            return affine(x, &self.linears[0].weight, &self.linears[0].bias);
        }
        let mut h = affine(x, &self.linears[0].weight, &self.linears[0].bias);
        elu_inplace(&mut h);
        for i in 1..=k {
            let lin = &self.linears[i];
            let u = affine(&h, &lin.weight, &lin.bias);
            let (mut act, xhat, rstd) = if self.spec.use_layernorm {
                let norm = &self.norms[i - 1];
                let (xhat, rstd) = layernorm_normalize(&u);
                let mut n = xhat.clone();
                for r in 0..n.rows {
                    for ((v, g), b) in n.row_mut(r).iter_mut().zip(&norm.gamma.data).zip(&norm.beta.data) {
                        *v = *v * g + b;
                    }
                }
                (n, Some(xhat), rstd)
            } else {
                (u, None, Vec::new())
            };
            elu_inplace(&mut act);
            let next = if self.spec.use_residual {
                let mut s = h.clone();
                for (a, b) in s.data.iter_mut().zip(&act.data) {
                    *a += b;
                }
                s
            } else {
                act.clone()
            };
            if let Some(t) = tape.as_deref_mut() {
                t.hs.push(std::mem::replace(&mut h, next));
                t.blocks.push(BlockTape { xhat, rstd, act });
            } else {
                h = next;
            }
        }
        let out = &self.linears[k + 1];
        let y = affine(&h, &out.weight, &out.bias);
        if let Some(t) = tape {
            t.hs.push(h);
        }
        y
    }

    /// Reverse pass: accumulates parameter adjoints into `grads` and returns
    /// the adjoint of the input.
    pub fn backward(&self, tape: &MlpTape, dy: &Tensor2D, grads: &mut Mlp) -> Result<Tensor2D> {
        Ok(self
            .backward_impl(tape, dy, grads, true)?
            .expect("input adjoint requested"))
    }

    /// Reverse pass that skips the input adjoint (for first-layer encoders).
    pub fn backward_params_only(&self, tape: &MlpTape, dy: &Tensor2D, grads: &mut Mlp) -> Result<()> {
        self.backward_impl(tape, dy, grads, false).map(|_| ())
    }

    fn backward_impl(
        &self,
        tape: &MlpTape,
        dy: &Tensor2D,
        grads: &mut Mlp,
        need_dx: bool,
    ) -> Result<Option<Tensor2D>> {
        if dy.shape() != (tape.input.rows, self.spec.out_dim) {
            return Err(Error::shape(
                "mlp_backward",
                format!("({}, {})", tape.input.rows, self.spec.out_dim),
                format!("{:?}", dy.shape()),
            ));
        }
        if grads.spec != self.spec {
            return Err(Error::shape("mlp_backward", "matching gradient layout", "different MlpSpec"));
        }
        let k = self.spec.num_hidden_layers;
        if k == 0 {
            let g = &mut grads.linears[0];
            return Ok(affine_backward(
                &tape.input,
                &self.linears[0].weight,
                dy,
                &mut g.weight,
                &mut g.bias,
                need_dx,
            ));
        }

        let out = &self.linears[k + 1];
        let g = &mut grads.linears[k + 1];
        let mut dh = affine_backward(&tape.hs[k], &out.weight, dy, &mut g.weight, &mut g.bias, true)
            .expect("hidden adjoint");

        for i in (1..=k).rev() {
            let bt = &tape.blocks[i - 1];
            let mut dn = dh.clone();
            for (d, &a) in dn.data.iter_mut().zip(&bt.act.data) {
                *d *= elu_grad_from_output(a);
            }
            let du = if let Some(xhat) = &bt.xhat {
                let norm = &self.norms[i - 1];
                let gnorm = &mut grads.norms[i - 1];
                let width = xhat.cols as f64;
                let mut du = Tensor2D::zeros(dn.rows, dn.cols);
                for r in 0..dn.rows {
                    let dnr = dn.row(r);
                    let xr = xhat.row(r);
                    for c in 0..dn.cols {
                        gnorm.gamma.data[c] += dnr[c] * xr[c];
                        gnorm.beta.data[c] += dnr[c];
                    }
                    let mut mean_dx = 0.0;
                    let mut mean_dx_x = 0.0;
                    for c in 0..dn.cols {
                        let dxh = dnr[c] * norm.gamma.data[c];
                        mean_dx += dxh;
                        mean_dx_x += dxh * xr[c];
                    }
                    mean_dx /= width;
                    mean_dx_x /= width;
                    let s = bt.rstd[r];
                    let dur = du.row_mut(r);
                    for c in 0..dur.len() {
                        let dxh = dnr[c] * norm.gamma.data[c];
                        dur[c] = s * (dxh - mean_dx - xr[c] * mean_dx_x);
                    }
                }
                du
            } else {
                dn
            };
            let lin = &self.linears[i];
            let g = &mut grads.linears[i];
            let dprev = affine_backward(&tape.hs[i - 1], &lin.weight, &du, &mut g.weight, &mut g.bias, true)
                .expect("block adjoint");
            if self.spec.use_residual {
                for (a, b) in dh.data.iter_mut().zip(&dprev.data) {
                    *a += b;
                }
            } else {
                dh = dprev;
            }
        }

        for (d, &h) in dh.data.iter_mut().zip(&tape.hs[0].data) {
            *d *= elu_grad_from_output(h);
        }
        let g = &mut grads.linears[0];
        Ok(affine_backward(
            &tape.input,
            &self.linears[0].weight,
            &dh,
            &mut g.weight,
            &mut g.bias,
            need_dx,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rows: usize, cols: usize, seed: u64) -> Tensor2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect();
        Tensor2D::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn param_counts() {
        assert_eq!(Mlp::zeros(MlpSpec::linear(3, 8)).param_count(), 32);
        for spec in [
            MlpSpec::new(3, 8, 8, 2),
            MlpSpec::new(24, 8, 8, 2),
            MlpSpec { use_layernorm: false, ..MlpSpec::new(7, 4, 5, 3) },
        ] {
            assert_eq!(Mlp::zeros(spec).param_count(), spec.param_count());
        }
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let spec = MlpSpec { use_layernorm: false, ..MlpSpec::new(3, 2, 4, 2) };
        let mlp = Mlp::zeros(spec);
        let y = mlp.forward(&random_input(5, 3, 1)).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_passes_through() {
        let mut mlp = Mlp::zeros(MlpSpec::linear(3, 3));
        for i in 0..3 {
            mlp.linears[0].weight.set(i, i, 1.0);
        }
        let x = random_input(4, 3, 2);
        let (y, tape) = mlp.forward_with_tape(&x).unwrap();
        assert_eq!(y, x);
        let mut g = mlp.zeros_like();
        let dy = random_input(4, 3, 3);
        let dx = mlp.backward(&tape, &dy, &mut g).unwrap();
        assert_eq!(dx, dy);
        // dW = x^T dy
        for a in 0..3 {
            for b in 0..3 {
                let expect: f64 = (0..4).map(|r| x.get(r, a) * dy.get(r, b)).sum();
                assert!((g.linears[0].weight.get(a, b) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn hand_computed_two_by_two() {
        // One hidden block without layernorm or residual:
        // h0 = elu(x W0), h1 = elu(h0 W1), y = h1 W2
        let spec = MlpSpec {
            use_layernorm: false,
            use_residual: false,
            ..MlpSpec::new(2, 1, 2, 1)
        };
        let mut mlp = Mlp::zeros(spec);
        mlp.linears[0].weight = Tensor2D::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.5]]).unwrap();
        mlp.linears[1].weight = Tensor2D::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        mlp.linears[2].weight = Tensor2D::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        mlp.linears[1].bias.data = vec![0.0, -1.0];
        let x = Tensor2D::from_rows(&[vec![1.0, 1.0]]).unwrap();
        // x W0 = [3, -0.5]; elu -> [3, e^-0.5 - 1]
        let h0 = [3.0, (-0.5f64).exp_m1()];
        // h0 W1 + b1 = [3, 2 h0[1] - 1]
        let u = [3.0, 2.0 * h0[1] - 1.0];
        let expected = u[0] + u[1].exp_m1();
        let y = mlp.forward(&x).unwrap();
        assert!((y.data[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn layernorm_rows_standardized() {
        let u = random_input(20, 9, 4);
        let (xhat, _) = layernorm_normalize(&u);
        let moments = |row: &[f64]| {
            let mean = row.iter().sum::<f64>() / 9.0;
            (mean, row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0)
        };
        for r in 0..20 {
            let (_, raw_var) = moments(u.row(r));
            let (mean, var) = moments(xhat.row(r));
            assert!(mean.abs() < 1e-10);
            assert!((var - raw_var / (raw_var + LAYERNORM_EPS)).abs() < 1e-10);
        }
    }

    #[test]
    fn elu_continuous_at_zero() {
        let h = 1e-8;
        assert!((elu(h) - elu(-h)).abs() < 3e-8);
        let d_plus = (elu(2.0 * h) - elu(h)) / h;
        let d_minus = (elu(-h) - elu(-2.0 * h)) / h;
        assert!((d_plus - d_minus).abs() < 1e-6);
        assert!((elu_grad_from_output(elu(h)) - elu_grad_from_output(elu(-h))).abs() < 1e-7);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for spec in [
            MlpSpec::new(5, 3, 4, 2),
            MlpSpec { use_residual: false, ..MlpSpec::new(3, 2, 6, 1) },
            MlpSpec { use_layernorm: false, ..MlpSpec::new(4, 4, 4, 3) },
            MlpSpec::linear(3, 2),
        ] {
            let mut mlp = Mlp::init(spec, &mut rng);
            // nontrivial biases and norm affine terms
            mlp.for_each_tensor_mut(|name, t| {
                if !name.ends_with("weight") {
                    t.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
                }
            });
            let x = random_input(6, spec.in_dim, 11);
            let w = random_input(6, spec.out_dim, 12);
            let loss = |m: &Mlp, x: &Tensor2D| -> f64 {
                let y = m.forward(x).unwrap();
                y.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
            };
            let (_, tape) = mlp.forward_with_tape(&x).unwrap();
            let mut grads = mlp.zeros_like();
            let dx = mlp.backward(&tape, &w, &mut grads).unwrap();

            let h = 1e-5;
            let mut analytic = Vec::new();
            grads.for_each_tensor(|_, t| analytic.extend_from_slice(&t.data));
            let mut idx = 0;
            let mut probe = mlp.clone();
            let mut names = Vec::new();
            mlp.for_each_tensor(|n, t| names.push((n, t.len())));
            for (name, len) in names {
                for j in 0..len {
                    let bump = |m: &mut Mlp, d: f64| {
                        m.for_each_tensor_mut(|n, t| {
                            if n == name {
                                t.data[j] += d;
                            }
                        })
                    };
                    bump(&mut probe, h);
                    let lp = loss(&probe, &x);
                    bump(&mut probe, -2.0 * h);
                    let lm = loss(&probe, &x);
                    bump(&mut probe, h);
                    let fd = (lp - lm) / (2.0 * h);
                    let g = analytic[idx];
                    let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-3);
                    assert!(err < 1e-6, "{name}[{j}] fd={fd} analytic={g}");
                    idx += 1;
                }
            }
            for r in 0..x.rows {
                for c in 0..x.cols {
                    let mut xp = x.clone();
                    xp.data[r * x.cols + c] += h;
                    let lp = loss(&mlp, &xp);
                    xp.data[r * x.cols + c] -= 2.0 * h;
                    let lm = loss(&mlp, &xp);
                    let fd = (lp - lm) / (2.0 * h);
                    let g = dx.get(r, c);
                    assert!((fd - g).abs() / fd.abs().max(1e-3) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_reported() {
        let mlp = Mlp::zeros(MlpSpec::new(3, 2, 4, 1));
        assert!(mlp.forward(&Tensor2D::zeros(2, 4)).is_err());
        let (_, tape) = mlp.forward_with_tape(&Tensor2D::zeros(2, 3)).unwrap();
        let mut g = mlp.zeros_like();
        assert!(mlp.backward(&tape, &Tensor2D::zeros(2, 3), &mut g).is_err());
    }
}
