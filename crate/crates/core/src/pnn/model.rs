use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::{inv_std, moments, BnMode, RunningStats, VAR_FLOOR};
use super::mlp::{Mlp, MlpTape};
use super::Activation;
use crate::error::{PnnError, Result};
use crate::linalg::SymMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Concatenate all `n * F` node features.
    Flatten,
    /// Average each feature over nodes. Invariant to node relabeling.
    MeanNodes,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReadoutConfig {
    pub pooling: Pooling,
    /// Hidden widths of the MLP; an empty list gives a linear readout.
    pub hidden: Vec<usize>,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        ReadoutConfig {
            pooling: Pooling::Flatten,
            hidden: vec![64],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PnnConfig {
    /// Polynomial order `K` of every filter.
    pub filter_order: usize,
    /// Output width of each layer; the first layer takes one input feature.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub batch_norm: bool,
    pub readout: ReadoutConfig,
}

impl Default for PnnConfig {
    fn default() -> Self {
        PnnConfig::uniform(2, 8, 2)
    }
}

impl PnnConfig {
    /// `layers` layers of `features` filters each, order `k`.
    pub fn uniform(layers: usize, features: usize, k: usize) -> Self {
        PnnConfig {
            filter_order: k,
            widths: vec![features; layers],
            activation: Activation::Relu,
            batch_norm: true,
            readout: ReadoutConfig::default(),
        }
    }

    pub fn layers(&self) -> usize {
        self.widths.len()
    }

    pub fn input_width(&self, layer: usize) -> usize {
        if layer == 0 {
            1
        } else {
            self.widths[layer - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(PnnError::arg("a PNN needs at least one layer"));
        }
        if self.widths.iter().chain(&self.readout.hidden).any(|&w| w == 0) {
            return Err(PnnError::arg("layer widths must be positive"));
        }
        Ok(())
    }

    fn readout_input(&self, n: usize) -> usize {
        let f = *self.widths.last().expect("validated");
        match self.readout.pooling {
            Pooling::Flatten => n * f,
            Pooling::MeanNodes => f,
        }
    }
}

/// Learnable coefficients of one filter bank plus its batch-norm affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub order: usize,
    pub f_in: usize,
    pub f_out: usize,
    /// `h[k][j][f]` stored flat, `f` fastest.
    pub coeffs: Vec<f64>,
    pub bn_scale: Vec<f64>,
    pub bn_shift: Vec<f64>,
}

impl LayerParams {
    #[inline]
    pub fn idx(&self, k: usize, j: usize, f: usize) -> usize {
        (k * self.f_in + j) * self.f_out + f
    }

    pub fn coeff(&self, k: usize, j: usize, f: usize) -> f64 {
        self.coeffs[self.idx(k, j, f)]
    }

    /// Coefficients `(h_0, .., h_K)` of the filter from input `j` to output `f`.
    pub fn filter(&self, j: usize, f: usize) -> Vec<f64> {
        (0..=self.order).map(|k| self.coeff(k, j, f)).collect()
    }

    fn zeros_like(&self) -> Self {
        LayerParams {
            coeffs: vec![0.0; self.coeffs.len()],
            bn_scale: vec![0.0; self.f_out],
            bn_shift: vec![0.0; self.f_out],
            ..*self
        }
    }
}

/// All network parameters. Running batch-norm statistics ride along but are
/// not part of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PnnParams {
    pub layers: Vec<LayerParams>,
    pub readout: Mlp,
    pub running: Vec<RunningStats>,
}

impl PnnParams {
    /// Filter and readout weights uniform in `±1/sqrt(fan_in)`; `h_0` of each
    /// filter is shifted by `1/F_in` so every output starts close to the
    /// mean of its inputs.
    pub fn init(cfg: &PnnConfig, n: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.filter_order;
        let mut layers = Vec::with_capacity(cfg.layers());
        for (l, &f_out) in cfg.widths.iter().enumerate() {
            let f_in = cfg.input_width(l);
            let bound = 1.0 / (((k + 1) * f_in) as f64).sqrt();
            let mut p = LayerParams {
                order: k,
                f_in,
                f_out,
                coeffs: (0..(k + 1) * f_in * f_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect(),
                bn_scale: vec![1.0; f_out],
                bn_shift: vec![0.0; f_out],
            };
            for j in 0..f_in {
                for f in 0..f_out {
                    let i = p.idx(0, j, f);
                    p.coeffs[i] += 1.0 / f_in as f64;
                }
            }
            layers.push(p);
        }
        let readout = Mlp::init(cfg.readout_input(n), &cfg.readout.hidden, rng);
        let running = cfg.widths.iter().map(|&f| RunningStats::new(f)).collect();
        Ok(PnnParams {
            layers,
            readout,
            running,
        })
    }

    pub fn zeros_like(&self) -> Self {
        PnnParams {
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
            readout: self.readout.zeros_like(),
            running: self.running.clone(),
        }
    }

    /// Layer by layer (coefficients, scale, shift), then the readout.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            out.extend_from_slice(&l.coeffs);
            out.extend_from_slice(&l.bn_scale);
            out.extend_from_slice(&l.bn_shift);
        }
        self.readout.flatten_into(&mut out);
        out
    }

    /// Inverse of [`flatten`](Self::flatten) onto this parameter layout.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(PnnError::dim(format!(
                "parameter vector has {} entries, expected {}",
                flat.len(),
                self.len()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for v in l
                .coeffs
                .iter_mut()
                .chain(l.bn_scale.iter_mut())
                .chain(l.bn_shift.iter_mut())
            {
                *v = it.next().expect("length checked");
            }
        }
        self.readout.assign_from(&mut it)
    }

    pub fn unflatten(template: &PnnParams, flat: &[f64]) -> Result<PnnParams> {
        let mut p = template.clone();
        p.assign_flat(flat)?;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.coeffs.len() + 2 * l.f_out)
            .sum::<usize>()
            + self.readout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `||h||^2` over the filter coefficients only.
    pub fn coeff_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.coeffs.iter())
            .map(|v| v * v)
            .sum()
    }

    fn check(&self, cfg: &PnnConfig, n: usize) -> Result<()> {
        let ok = self.layers.len() == cfg.layers()
            && self.layers.iter().enumerate().all(|(l, p)| {
                p.order == cfg.filter_order
                    && p.f_in == cfg.input_width(l)
                    && p.f_out == cfg.widths[l]
                    && p.coeffs.len() == (p.order + 1) * p.f_in * p.f_out
            })
            && self.readout.input_dim() == cfg.readout_input(n);
        if ok {
            Ok(())
        } else {
            Err(PnnError::dim("parameters do not match the network configuration"))
        }
    }
}

#[derive(Clone, Debug)]
struct LayerTape {
    /// `powers[j][k] = theta^k x_j`.
    powers: Vec<Vec<DMatrix<f64>>>,
    /// Normalized filter output per output feature (pre-affine).
    xhat: Vec<DMatrix<f64>>,
    inv_std: Vec<f64>,
    /// Whether the variance floor was active (then `inv_std` is constant).
    floored: Vec<bool>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    /// Input of the activation.
    pre_act: Vec<DMatrix<f64>>,
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    layers: Vec<LayerTape>,
    mlp: MlpTape,
    mode: BnMode,
    pub predictions: DVector<f64>,
}

impl ForwardTape {
    /// Batch mean and variance of each layer (training mode).
    pub fn batch_moments(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.layers
            .iter()
            .map(|l| (l.batch_mean.as_slice(), l.batch_var.as_slice()))
    }
}

/// Evaluates the network on the columns of `x` (one graph signal per
/// column) with shift operator `theta`.
pub fn pnn_forward(
    cfg: &PnnConfig,
    params: &PnnParams,
    theta: &SymMatrix,
    x: &DMatrix<f64>,
    mode: BnMode,
) -> Result<(DVector<f64>, ForwardTape)> {
    let n = theta.n();
    if x.nrows() != n {
        return Err(PnnError::dim(format!(
            "signals have {} nodes, shift has {n}",
            x.nrows()
        )));
    }
    params.check(cfg, n)?;
    if cfg.batch_norm && mode == BnMode::Train && x.ncols() < 2 {
        return Err(PnnError::arg("batch norm needs at least 2 samples in training mode"));
    }
    let t = x.ncols();
    let act = cfg.activation;
    let mut inputs = vec![x.clone()];
    let mut tapes = Vec::with_capacity(cfg.layers());

    for (l, p) in params.layers.iter().enumerate() {
        let powers: Vec<Vec<DMatrix<f64>>> = inputs
            .into_iter()
            .map(|x0| {
                let mut zs = Vec::with_capacity(p.order + 1);
                zs.push(x0);
                for k in 1..=p.order {
                    let next = theta.as_matrix() * &zs[k - 1];
                    zs.push(next);
                }
                zs
            })
            .collect();

        let mut tape = LayerTape {
            powers,
            xhat: Vec::with_capacity(p.f_out),
            inv_std: vec![1.0; p.f_out],
            floored: vec![false; p.f_out],
            batch_mean: vec![0.0; p.f_out],
            batch_var: vec![0.0; p.f_out],
            pre_act: Vec::with_capacity(p.f_out),
        };
        let mut outputs = Vec::with_capacity(p.f_out);
        for f in 0..p.f_out {
            let mut u = DMatrix::zeros(n, t);
            for (j, zs) in tape.powers.iter().enumerate() {
                for (k, z) in zs.iter().enumerate() {
                    axpy(&mut u, p.coeff(k, j, f), z);
                }
            }
            let a = if cfg.batch_norm {
                let (mean, var) = match mode {
                    BnMode::Train => moments(u.as_slice()),
                    BnMode::Eval => (params.running[l].mean[f], params.running[l].var[f]),
                };
                let s = inv_std(var);
                tape.batch_mean[f] = mean;
                tape.batch_var[f] = var;
                tape.inv_std[f] = s;
                tape.floored[f] = var < VAR_FLOOR;
                let xhat = u.map(|v| (v - mean) * s);
                let a = xhat.map(|v| p.bn_scale[f] * v + p.bn_shift[f]);
                tape.xhat.push(xhat);
                a
            } else {
                u
            };
            let out = a.map(|v| act.apply(v));
            if out.iter().any(|v| !v.is_finite()) {
                return Err(PnnError::Numerical(format!("activations of layer {}", l + 1)));
            }
            tape.pre_act.push(a);
            outputs.push(out);
        }
        tapes.push(tape);
        inputs = outputs;
    }

    let pooled = pool(cfg.readout.pooling, &inputs, n, t);
    let (out, mlp_tape) = params.readout.forward(&pooled, act)?;
    let predictions = DVector::from_iterator(t, out.iter().copied());
    let tape = ForwardTape {
        layers: tapes,
        mlp: mlp_tape,
        mode,
        predictions: predictions.clone(),
    };
    Ok((predictions, tape))
}

/// `dst += a * src` for same-shape matrices.
#[inline]
fn axpy(dst: &mut DMatrix<f64>, a: f64, src: &DMatrix<f64>) {
    if a == 0.0 {
        return;
    }
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d += a * s;
    }
}

fn pool(pooling: Pooling, features: &[DMatrix<f64>], n: usize, t: usize) -> DMatrix<f64> {
    match pooling {
        Pooling::Flatten => {
            let mut r = DMatrix::zeros(n * features.len(), t);
            for (f, x) in features.iter().enumerate() {
                r.rows_mut(f * n, n).copy_from(x);
            }
            r
        }
        Pooling::MeanNodes => {
            let mut r = DMatrix::zeros(features.len(), t);
            for (f, x) in features.iter().enumerate() {
                for s in 0..t {
                    r[(f, s)] = x.column(s).mean();
                }
            }
            r
        }
    }
}

fn unpool(pooling: Pooling, d: &DMatrix<f64>, f_out: usize, n: usize) -> Vec<DMatrix<f64>> {
    match pooling {
        Pooling::Flatten => (0..f_out).map(|f| d.rows(f * n, n).into_owned()).collect(),
        Pooling::MeanNodes => (0..f_out)
            .map(|f| {
                let row = d.row(f);
                DMatrix::from_fn(n, d.ncols(), |_, s| row[s] / n as f64)
            })
            .collect(),
    }
}

/// Reverse pass from `d_pred` (gradient of the objective w.r.t. each
/// prediction). Returns parameter gradients and, if requested, the
/// unsymmetrized gradient with respect to the shift operator.
fn backward(
    cfg: &PnnConfig,
    params: &PnnParams,
    theta: &SymMatrix,
    tape: &ForwardTape,
    d_pred: &DVector<f64>,
    want_shift: bool,
) -> (PnnParams, Option<DMatrix<f64>>) {
    let n = theta.n();
    let act = cfg.activation;
    let mut grads = params.zeros_like();
    let dout = DMatrix::from_row_slice(1, d_pred.len(), d_pred.as_slice());
    let d_pooled = params.readout.backward(&tape.mlp, dout, act, &mut grads.readout);
    let f_last = *cfg.widths.last().expect("validated");
    let mut d_outputs = unpool(cfg.readout.pooling, &d_pooled, f_last, n);
    let mut d_theta = want_shift.then(|| DMatrix::zeros(n, n));

    for l in (0..params.layers.len()).rev() {
        let p = &params.layers[l];
        let lt = &tape.layers[l];
        let g = &mut grads.layers[l];

        // Through the activation and batch norm to the filter-bank sum.
        let mut d_u = Vec::with_capacity(p.f_out);
        for (f, mut d) in d_outputs.into_iter().enumerate() {
            d.zip_apply(&lt.pre_act[f], |dv, a| *dv *= act.derivative(a));
            if cfg.batch_norm {
                let xhat = &lt.xhat[f];
                g.bn_shift[f] += d.sum();
                g.bn_scale[f] += d.dot(xhat);
                let s = lt.inv_std[f];
                d *= p.bn_scale[f];
                if tape.mode == BnMode::Train {
                    let m = d.len() as f64;
                    let mean_d = d.sum() / m;
                    if lt.floored[f] {
                        d.apply(|v| *v = (*v - mean_d) * s);
                    } else {
                        let mean_dx = d.dot(xhat) / m;
                        d.zip_apply(xhat, |v, xh| *v = (*v - mean_d - xh * mean_dx) * s);
                    }
                } else {
                    d *= s;
                }
            }
            d_u.push(d);
        }

        // Filter coefficients and the adjoints of each shifted input.
        let mut d_inputs = Vec::with_capacity(p.f_in);
        for (j, zs) in lt.powers.iter().enumerate() {
            let d_powers: Vec<DMatrix<f64>> = (0..=p.order)
                .map(|k| {
                    let mut acc = DMatrix::zeros(n, zs[k].ncols());
                    for (f, du) in d_u.iter().enumerate() {
                        g.coeffs[p.idx(k, j, f)] += du.dot(&zs[k]);
                        axpy(&mut acc, p.coeff(k, j, f), du);
                    }
                    acc
                })
                .collect();
            // z_k = theta z_{k-1}, walked from the highest power down.
            let mut adj = d_powers[p.order].clone();
            for k in (1..=p.order).rev() {
                if let Some(dt) = d_theta.as_mut() {
                    dt.gemm(1.0, &adj, &zs[k - 1].transpose(), 1.0);
                }
                adj = theta.as_matrix() * adj + &d_powers[k - 1];
            }
            d_inputs.push(adj);
        }
        d_outputs = d_inputs;
    }
    (grads, d_theta)
}

/// Mean squared error.
pub fn task_loss(y: &DVector<f64>, yhat: &DVector<f64>) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(PnnError::dim(format!("{} targets, {} predictions", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(PnnError::arg("loss of an empty batch"));
    }
    Ok((y - yhat).norm_squared() / y.len() as f64)
}

fn mse_adjoint(y: &DVector<f64>, yhat: &DVector<f64>, weight: f64) -> DVector<f64> {
    (yhat - y) * (2.0 * weight / y.len() as f64)
}

/// Result of [`grad_params`].
#[derive(Clone, Debug)]
pub struct ParamGradient {
    /// `alpha * mse + beta * ||h||^2`.
    pub objective: f64,
    pub loss: f64,
    pub grads: PnnParams,
    pub tape: ForwardTape,
}

/// Gradient of `alpha * task_loss + beta * ||h||^2` with respect to every
/// learnable parameter, in training mode.
#[allow(clippy::too_many_arguments)]
pub fn grad_params(
    cfg: &PnnConfig,
    params: &PnnParams,
    theta: &SymMatrix,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    beta: f64,
) -> Result<ParamGradient> {
    let (yhat, tape) = pnn_forward(cfg, params, theta, x, BnMode::Train)?;
    let loss = task_loss(y, &yhat)?;
    let (mut grads, _) = backward(cfg, params, theta, &tape, &mse_adjoint(y, &yhat, alpha), false);
    if beta > 0.0 {
        for (g, p) in grads.layers.iter_mut().zip(&params.layers) {
            for (gv, pv) in g.coeffs.iter_mut().zip(&p.coeffs) {
                *gv += 2.0 * beta * pv;
            }
        }
    }
    Ok(ParamGradient {
        objective: alpha * loss + beta * params.coeff_norm_sq(),
        loss,
        grads,
        tape,
    })
}

/// Objective and symmetrized gradient of
/// `alpha * task_loss(theta_tilde) + gamma / 2 ||anchor - theta_tilde||_F^2`
/// with respect to `theta_tilde`.
#[allow(clippy::too_many_arguments)]
pub fn grad_shift(
    cfg: &PnnConfig,
    params: &PnnParams,
    theta_tilde: &SymMatrix,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta_anchor: &SymMatrix,
    gamma: f64,
    alpha: f64,
) -> Result<(f64, SymMatrix)> {
    if theta_anchor.n() != theta_tilde.n() {
        return Err(PnnError::dim("anchor and shift differ in size"));
    }
    let diff = theta_anchor.sub(theta_tilde);
    let tether = 0.5 * gamma * diff.as_matrix().norm_squared();
    let mut g = diff.scaled(-gamma).into_inner();
    let mut objective = tether;
    if alpha != 0.0 {
        let (yhat, tape) = pnn_forward(cfg, params, theta_tilde, x, BnMode::Train)?;
        objective += alpha * task_loss(y, &yhat)?;
        let adj = mse_adjoint(y, &yhat, alpha);
        let (_, d_theta) = backward(cfg, params, theta_tilde, &tape, &adj, true);
        g += d_theta.expect("requested");
    }
    Ok((objective, SymMatrix::symmetrized(g)))
}
