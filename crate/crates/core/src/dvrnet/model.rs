use ndarray::{Array1, Array2, Array3, Array5, ArrayD, Axis, Ix2, IxDyn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{DvrConfig, LayerKind, LayerSpec, Shape, Variant};
use super::kernels::{self, NormCache};
use super::loss::{batch_loss, LossKind};
use crate::error::{Error, Result};
use crate::Scalar;

pub const BN_EPS: f64 = 1e-5;
/// Weight of the old value in the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One realized layer. Trainable tensors live in `params`, running
/// statistics in `buffers`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub params: Vec<ArrayD<T>>,
    pub buffers: Vec<ArrayD<T>>,
}

impl<T> Layer<T> {
    pub fn param_names(&self) -> &'static [&'static str] {
        match self.spec.kind {
            LayerKind::Conv3d | LayerKind::Dense => &["weight", "bias"],
            LayerKind::BatchNorm => &["gamma", "beta"],
            _ => &[],
        }
    }

    pub fn buffer_names(&self) -> &'static [&'static str] {
        match self.spec.kind {
            LayerKind::BatchNorm => &["running_mean", "running_var"],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone)]
enum Act<T> {
    Vol(Array5<T>),
    Flat(Array2<T>),
}

impl<T: Scalar> Act<T> {
    fn batch(&self) -> usize {
        match self {
            Act::Vol(a) => a.shape()[0],
            Act::Flat(a) => a.nrows(),
        }
    }

    /// `[B, C, S]` view used by batch norm.
    fn channels_view(self) -> (Array3<T>, Vec<usize>) {
        match self {
            Act::Vol(a) => {
                let shape = a.shape().to_vec();
                let s = shape[2] * shape[3] * shape[4];
                let a = a.as_standard_layout().into_owned();
                (a.into_shape_with_order((shape[0], shape[1], s)).unwrap(), shape)
            }
            Act::Flat(a) => {
                let shape = a.shape().to_vec();
                (a.into_shape_with_order((shape[0], shape[1], 1)).unwrap(), shape)
            }
        }
    }

    fn from_channels(a: Array3<T>, shape: &[usize]) -> Self {
        if shape.len() == 5 {
            Act::Vol(a.into_shape_with_order((shape[0], shape[1], shape[2], shape[3], shape[4])).unwrap())
        } else {
            Act::Flat(a.into_shape_with_order((shape[0], shape[1])).unwrap())
        }
    }

    fn vol(self, layer: &str) -> Result<Array5<T>> {
        match self {
            Act::Vol(a) => Ok(a),
            Act::Flat(_) => Err(Error::shape(format!("{layer}: expected a volume"))),
        }
    }

    fn flat(self, layer: &str) -> Result<Array2<T>> {
        match self {
            Act::Flat(a) => Ok(a),
            Act::Vol(_) => Err(Error::shape(format!("{layer}: expected flat features"))),
        }
    }
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Conv { input: Array5<T>, pre: Array5<T> },
    Pool { argmax: Vec<usize>, in_shape: [usize; 5] },
    Norm { cache: NormCache<T>, shape: Vec<usize> },
    Flatten { in_shape: [usize; 5] },
    Dense { input: Array2<T>, pre: Array2<T> },
    Dropout { mask: Option<Array2<T>> },
}

/// Activations retained by a training-mode pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
}

/// Result of [`DvrModel::forward`].
#[derive(Debug, Clone)]
pub struct Pass<T> {
    /// `[B, n_outputs]` in label units.
    pub output: Array2<T>,
    pub mode: Mode,
    tape: Option<Tape<T>>,
}

/// Gradients aligned with [`DvrModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<ArrayD<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn l2_norm(&self) -> T {
        self.tensors.iter().flat_map(|t| t.iter()).map(|&v| v * v).sum::<T>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DvrModel<T> {
    config: DvrConfig,
    seed: u64,
    layers: Vec<Layer<T>>,
    output_offset: Array1<T>,
    output_scale: Array1<T>,
}

impl<T: Scalar> DvrModel<T> {
    /// Canonical DVR2/DVR3 network for 360 x 32 x 32 x `channels` input.
    pub fn build(variant: Variant, channels: usize, n_outputs: usize, seed: u64) -> Result<Self> {
        Self::from_config(DvrConfig::canonical(variant, channels, n_outputs)?, seed)
    }

    /// He-normal weights, zero biases, unit batch-norm scale.
    pub fn from_config(config: DvrConfig, seed: u64) -> Result<Self> {
        let chain = config.shape_chain()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i = config.input;
        let mut prev = Shape::Volume([i.channels, i.frames, i.height, i.width]);
        let mut layers = Vec::with_capacity(config.layers.len());
        for (spec, shape) in config.layers.iter().zip(&chain) {
            let (params, buffers) = match (spec.kind, prev) {
                (LayerKind::Conv3d, Shape::Volume([cin, ..])) => {
                    let [kd, kh, kw] = spec.kernel;
                    let fan_in = cin * kd * kh * kw;
                    let w = he_normal(&mut rng, &[spec.units, cin, kd, kh, kw], fan_in);
                    (vec![w, ArrayD::zeros(IxDyn(&[spec.units]))], vec![])
                }
                (LayerKind::Dense, Shape::Flat(n)) => {
                    let w = he_normal(&mut rng, &[spec.units, n], n);
                    (vec![w, ArrayD::zeros(IxDyn(&[spec.units]))], vec![])
                }
                (LayerKind::BatchNorm, s) => {
                    let c = match s {
                        Shape::Volume([c, ..]) => c,
                        Shape::Flat(n) => n,
                    };
                    (
                        vec![ArrayD::ones(IxDyn(&[c])), ArrayD::zeros(IxDyn(&[c]))],
                        vec![ArrayD::zeros(IxDyn(&[c])), ArrayD::ones(IxDyn(&[c]))],
                    )
                }
                _ => (vec![], vec![]),
            };
            layers.push(Layer {
                spec: spec.clone(),
                params,
                buffers,
            });
            prev = *shape;
        }
        let n = config.n_outputs;
        Ok(Self {
            config,
            seed,
            layers,
            output_offset: Array1::zeros(n),
            output_scale: Array1::ones(n),
        })
    }

    pub fn config(&self) -> &DvrConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Fixed affine map applied after the output layer, so the network can
    /// work near unit scale while predictions come out in label units.
    pub fn set_output_affine(&mut self, offset: &[f64], scale: &[f64]) -> Result<()> {
        let n = self.config.n_outputs;
        if offset.len() != n || scale.len() != n || scale.iter().any(|s| !(s.is_finite() && *s != 0.0)) {
            return Err(Error::invalid("output affine needs one finite non-zero scale per output"));
        }
        self.output_offset = offset.iter().map(|&v| T::lit(v)).collect();
        self.output_scale = scale.iter().map(|&v| T::lit(v)).collect();
        Ok(())
    }

    pub fn output_affine(&self) -> (&Array1<T>, &Array1<T>) {
        (&self.output_offset, &self.output_scale)
    }

    pub(crate) fn output_affine_mut(&mut self) -> (&mut Array1<T>, &mut Array1<T>) {
        (&mut self.output_offset, &mut self.output_scale)
    }

    pub fn params(&self) -> impl Iterator<Item = &ArrayD<T>> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ArrayD<T>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub fn count_params(&self) -> usize {
        self.params().map(|p| p.len()).sum()
    }

    fn check_input(&self, batch: &Array5<T>) -> Result<()> {
        let i = self.config.input;
        let want = [i.frames, i.height, i.width, i.channels];
        if batch.shape()[1..] != want || batch.shape()[0] == 0 {
            return Err(Error::shape(format!(
                "batch {:?} does not match [B, {}, {}, {}, {}]",
                batch.shape(),
                i.frames,
                i.height,
                i.width,
                i.channels
            )));
        }
        Ok(())
    }

    /// Eval-mode prediction. `batch` is `[B, frames, H, W, C]`.
    pub fn predict(&self, batch: &Array5<T>) -> Result<Array2<T>> {
        self.check_input(batch)?;
        Ok(self.run(batch, None)?.0)
    }

    /// Forward pass. Train mode uses batch statistics (and updates the running
    /// ones), applies dropout, and keeps what [`backward`](Self::backward)
    /// needs.
    pub fn forward(&mut self, batch: &Array5<T>, mode: Mode, rng: &mut dyn RngCore) -> Result<Pass<T>> {
        self.check_input(batch)?;
        match mode {
            Mode::Eval => Ok(Pass {
                output: self.run(batch, None)?.0,
                mode,
                tape: None,
            }),
            Mode::Train => {
                let (output, tape, moments) = self.run(batch, Some(rng))?;
                let m = T::lit(BN_MOMENTUM);
                for (idx, mean, var, count) in moments {
                    let unbiased = if count > 1 {
                        T::from_usize_lossy(count) / T::from_usize_lossy(count - 1)
                    } else {
                        T::one()
                    };
                    let bufs = &mut self.layers[idx].buffers;
                    bufs[0].zip_mut_with(&mean.into_dyn(), |r, &v| *r = m * *r + (T::one() - m) * v);
                    bufs[1].zip_mut_with(&var.into_dyn(), |r, &v| *r = m * *r + (T::one() - m) * v * unbiased);
                }
                Ok(Pass {
                    output,
                    mode,
                    tape,
                })
            }
        }
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        batch: &Array5<T>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Array2<T>, Option<Tape<T>>, Vec<(usize, Array1<T>, Array1<T>, usize)>)> {
        let train = rng.is_some();
        let x = batch.view().permuted_axes([0, 4, 1, 2, 3]).as_standard_layout().into_owned();
        let mut act = Act::Vol(x);
        let mut caches = Vec::new();
        let mut moments = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            let spec = &layer.spec;
            let (next, cache) = match spec.kind {
                LayerKind::Conv3d => {
                    let x = act.vol(&spec.name)?;
                    let w = &layer.params[0];
                    let cout = w.shape()[0];
                    let w2 = w.view().into_shape_with_order((cout, w.len() / cout)).unwrap();
                    let bias = layer.params[1].view().into_dimensionality().unwrap().to_owned();
                    let (b, _, d, h, wd) = x.dim();
                    let mut pre = Array5::<T>::zeros((b, cout, d, h, wd));
                    for s in 0..b {
                        kernels::conv3d_sample(
                            x.index_axis(Axis(0), s),
                            w2,
                            &bias,
                            spec.kernel,
                            pre.index_axis_mut(Axis(0), s),
                        );
                    }
                    let post = pre.mapv(|z| kernels::activate(spec.activation, z));
                    (Act::Vol(post), Cache::Conv { input: x, pre })
                }
                LayerKind::MaxPool3d => {
                    let x = act.vol(&spec.name)?;
                    let in_shape = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], x.shape()[4]];
                    let (y, argmax) = kernels::maxpool3d(&x, spec.stride);
                    (Act::Vol(y), Cache::Pool { argmax, in_shape })
                }
                LayerKind::BatchNorm => {
                    let (x3, shape) = act.channels_view();
                    let gamma: Array1<T> = layer.params[0].view().into_dimensionality().unwrap().to_owned();
                    let beta: Array1<T> = layer.params[1].view().into_dimensionality().unwrap().to_owned();
                    let eps = T::lit(BN_EPS);
                    if train {
                        let count = x3.shape()[0] * x3.shape()[2];
                        let (y, cache, mean, var) = kernels::batch_norm_train(&x3, &gamma, &beta, eps);
                        moments.push((idx, mean, var, count));
                        (Act::from_channels(y, &shape), Cache::Norm { cache, shape })
                    } else {
                        let mean = layer.buffers[0].view().into_dimensionality().unwrap().to_owned();
                        let var = layer.buffers[1].view().into_dimensionality().unwrap().to_owned();
                        let y = kernels::batch_norm_eval(&x3, &gamma, &beta, &mean, &var, eps);
                        let cache = NormCache {
                            xhat: Array3::zeros((0, 0, 0)),
                            inv_std: Array1::zeros(0),
                        };
                        (Act::from_channels(y, &shape), Cache::Norm { cache, shape })
                    }
                }
                LayerKind::Flatten => {
                    let x = act.vol(&spec.name)?;
                    let in_shape = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], x.shape()[4]];
                    let n = x.len() / in_shape[0];
                    let flat = x.as_standard_layout().into_owned().into_shape_with_order((in_shape[0], n)).unwrap();
                    (Act::Flat(flat), Cache::Flatten { in_shape })
                }
                LayerKind::Dense => {
                    let x = act.flat(&spec.name)?;
                    let w = layer.params[0].view().into_dimensionality::<Ix2>().unwrap();
                    let mut pre = x.dot(&w.t());
                    let bias = layer.params[1].view().into_dimensionality::<ndarray::Ix1>().unwrap();
                    pre += &bias;
                    let post = pre.mapv(|z| kernels::activate(spec.activation, z));
                    (Act::Flat(post), Cache::Dense { input: x, pre })
                }
                LayerKind::Dropout => match (rng.as_deref_mut(), spec.dropout_rate > 0.0) {
                    (Some(r), true) => {
                        let x = act.flat(&spec.name)?;
                        let keep = T::one() / T::lit(1.0 - spec.dropout_rate);
                        let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
                            if r.random::<f64>() < spec.dropout_rate {
                                T::zero()
                            } else {
                                keep
                            }
                        });
                        (Act::Flat(&x * &mask), Cache::Dropout { mask: Some(mask) })
                    }
                    _ => (act, Cache::Dropout { mask: None }),
                },
            };
            act = next;
            if train {
                caches.push(cache);
            }
        }
        let head = act.flat("output")?;
        let out = &head * &self.output_scale + &self.output_offset;
        Ok((out, train.then_some(Tape { caches }), moments))
    }

    /// Loss of a training-mode pass against `labels` (`[B, n_outputs]`, label
    /// units) and its exact gradient with respect to every parameter.
    pub fn backward(&self, pass: &Pass<T>, labels: &Array2<T>, loss: LossKind) -> Result<(T, Gradients<T>)> {
        let (value, d_out) = batch_loss(loss, &pass.output, labels)?;
        Ok((value, self.backward_from(pass, &d_out)?))
    }

    /// Backpropagates an arbitrary output gradient.
    pub fn backward_from(&self, pass: &Pass<T>, d_out: &Array2<T>) -> Result<Gradients<T>> {
        let tape = match (&pass.tape, pass.mode) {
            (Some(t), Mode::Train) => t,
            _ => return Err(Error::invalid("backward needs a train-mode forward pass")),
        };
        if d_out.dim() != pass.output.dim() {
            return Err(Error::shape("output gradient shape differs from the pass output"));
        }
        let mut grads: Vec<Vec<ArrayD<T>>> = vec![Vec::new(); self.layers.len()];
        let mut g = Act::Flat(d_out * &self.output_scale);
        for (idx, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            let spec = &layer.spec;
            let first = idx == 0;
            g = match cache {
                Cache::Conv { input, pre } => {
                    let mut dz = g.vol(&spec.name)?;
                    dz.zip_mut_with(pre, |d, &z| *d *= kernels::activate_grad(spec.activation, z));
                    let w = &layer.params[0];
                    let cout = w.shape()[0];
                    let w2 = w.view().into_shape_with_order((cout, w.len() / cout)).unwrap();
                    let mut dw = Array2::<T>::zeros(w2.raw_dim());
                    let mut db = Array1::<T>::zeros(cout);
                    let mut dx = Array5::<T>::zeros(input.raw_dim());
                    for s in 0..input.shape()[0] {
                        let mut dxs = dx.index_axis_mut(Axis(0), s);
                        let slice = if first { None } else { dxs.as_slice_mut() };
                        kernels::conv3d_sample_backward(
                            input.index_axis(Axis(0), s),
                            w2,
                            spec.kernel,
                            dz.index_axis(Axis(0), s),
                            &mut dw,
                            &mut db,
                            slice,
                        );
                    }
                    grads[idx] = vec![dw.into_shape_with_order(IxDyn(w.shape())).unwrap(), db.into_dyn()];
                    Act::Vol(dx)
                }
                Cache::Pool { argmax, in_shape } => {
                    let dy = g.vol(&spec.name)?;
                    Act::Vol(kernels::maxpool3d_backward(&dy, argmax, *in_shape))
                }
                Cache::Norm { cache, shape } => {
                    let (dy, _) = g.channels_view();
                    let gamma: Array1<T> = layer.params[0].view().into_dimensionality().unwrap().to_owned();
                    let (dx, dgamma, dbeta) = kernels::batch_norm_backward(&dy, cache, &gamma);
                    grads[idx] = vec![dgamma.into_dyn(), dbeta.into_dyn()];
                    Act::from_channels(dx, shape)
                }
                Cache::Flatten { in_shape } => {
                    let dy = g.flat(&spec.name)?;
                    Act::Vol(dy.into_shape_with_order(*in_shape).unwrap())
                }
                Cache::Dense { input, pre } => {
                    let mut dz = g.flat(&spec.name)?;
                    dz.zip_mut_with(pre, |d, &z| *d *= kernels::activate_grad(spec.activation, z));
                    let w = layer.params[0].view().into_dimensionality::<Ix2>().unwrap();
                    let dw = dz.t().dot(input);
                    let db = dz.sum_axis(Axis(0));
                    let dx = dz.dot(&w);
                    grads[idx] = vec![dw.into_dyn(), db.into_dyn()];
                    Act::Flat(dx)
                }
                Cache::Dropout { mask } => match mask {
                    Some(m) => Act::Flat(g.flat(&spec.name)? * m),
                    None => g,
                },
            };
        }
        debug_assert_eq!(g.batch(), d_out.nrows());
        Ok(Gradients {
            tensors: grads.into_iter().flatten().collect(),
        })
    }
}

fn he_normal<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> ArrayD<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || T::lit(normal.sample(rng)))
}

#[cfg(test)]
mod tests {
    use super::super::config::{Activation, InputShape, Scale};
    use super::*;
    use ndarray::Array;

    fn tiny_input() -> InputShape {
        InputShape {
            frames: 8,
            height: 8,
            width: 8,
            channels: 1,
        }
    }

    fn input_batch(b: usize, shape: InputShape, seed: u64) -> Array5<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_simple_fn((b, shape.frames, shape.height, shape.width, shape.channels), || {
            rng.random::<f64>()
        })
    }

    /// Central differences over every parameter of `model`, compared with the
    /// analytic gradient by relative error.
    fn check_gradients(mut model: DvrModel<f64>, batch: &Array5<f64>, labels: &Array2<f64>, loss: LossKind) {
        let h = 1e-3;
        let dropout_seed = 99;
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let pass = model.clone().forward(batch, Mode::Train, &mut rng).unwrap();
        let (_, grads) = model.backward(&pass, labels, loss).unwrap();
        let loss_at = |m: &DvrModel<f64>| {
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let pass = m.clone().forward(batch, Mode::Train, &mut rng).unwrap();
            batch_loss(loss, &pass.output, labels).unwrap().0
        };
        let mut num = Vec::new();
        let n_params: Vec<usize> = model.params().map(|p| p.len()).collect();
        for (pi, &len) in n_params.iter().enumerate() {
            for e in 0..len {
                let orig = model.params().nth(pi).unwrap().as_slice().unwrap()[e];
                model.params_mut().nth(pi).unwrap().as_slice_mut().unwrap()[e] = orig + h;
                let up = loss_at(&model);
                model.params_mut().nth(pi).unwrap().as_slice_mut().unwrap()[e] = orig - h;
                let down = loss_at(&model);
                model.params_mut().nth(pi).unwrap().as_slice_mut().unwrap()[e] = orig;
                num.push((up - down) / (2.0 * h));
            }
        }
        let ana: Vec<f64> = grads.tensors.iter().flat_map(|t| t.iter().copied()).collect();
        assert_eq!(ana.len(), num.len());
        let diff: f64 = ana.iter().zip(&num).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|n| n * n).sum::<f64>().sqrt();
        let rel = diff / scale;
        assert!(rel <= 1e-3, "relative gradient error {rel}");
        for (a, n) in ana.iter().zip(&num) {
            assert!((a - n).abs() <= 1e-3 * a.abs().max(n.abs()) + 1e-6, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn gradient_check_two_conv() {
        let layers = vec![
            LayerSpec::conv("c1", 2, [3, 3, 3]).with_activation(Activation::Softplus),
            LayerSpec::conv("c2", 2, [3, 1, 1]).with_activation(Activation::Softplus),
            LayerSpec::flatten(),
            LayerSpec::dense("out", 1, Activation::Linear),
        ];
        let cfg = DvrConfig::custom(tiny_input(), layers).unwrap();
        let model = DvrModel::<f64>::from_config(cfg, 3).unwrap();
        let batch = input_batch(2, tiny_input(), 1);
        check_gradients(model, &batch, &Array2::from_elem((2, 1), 1.5), LossKind::Mse);
    }

    #[test]
    fn gradient_check_full_block() {
        let layers = vec![
            LayerSpec::conv("c1", 2, [3, 3, 3]).with_activation(Activation::Softplus),
            LayerSpec::pool("p1", [2, 2, 2]),
            LayerSpec::batch_norm("bn1"),
            LayerSpec::conv("c2", 3, [1, 3, 3]).with_activation(Activation::Softplus),
            LayerSpec::pool("p2", [1, 3, 3]),
            LayerSpec::batch_norm("bn2"),
            LayerSpec::flatten(),
            LayerSpec::dense("fc", 4, Activation::Softplus),
            LayerSpec::dropout("drop", 0.25),
            LayerSpec::dense("out", 2, Activation::Linear),
        ];
        let cfg = DvrConfig::custom(tiny_input(), layers).unwrap();
        let mut model = DvrModel::<f64>::from_config(cfg, 11).unwrap();
        model.set_output_affine(&[80.0, 20.0], &[15.0, 8.0]).unwrap();
        let batch = input_batch(3, tiny_input(), 2);
        let labels = ndarray::array![[70.0, 15.0], [95.0, 30.0], [80.0, 12.0]];
        check_gradients(model, &batch, &labels, LossKind::Joint(Default::default()));
    }

    #[test]
    fn local_minimum_has_zero_gradient() {
        let cfg = DvrConfig::custom(
            InputShape {
                frames: 1,
                height: 1,
                width: 1,
                channels: 1,
            },
            vec![LayerSpec::flatten(), LayerSpec::dense("w", 1, Activation::Linear)],
        )
        .unwrap();
        let mut model = DvrModel::<f64>::from_config(cfg, 0).unwrap();
        model.layers_mut()[1].params[0].fill(2.0);
        let batch = Array5::from_elem((1, 1, 1, 1, 1), 1.5);
        let pass = model.forward(&batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (l, g) = model.backward(&pass, &ndarray::array![[3.0]], LossKind::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.tensors.iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn eval_pass_cannot_backpropagate() {
        let cfg = DvrConfig::custom(tiny_input(), vec![LayerSpec::flatten(), LayerSpec::dense("o", 1, Activation::Linear)])
            .unwrap();
        let mut model = DvrModel::<f64>::from_config(cfg, 0).unwrap();
        let batch = input_batch(1, tiny_input(), 0);
        let pass = model.forward(&batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(model.backward(&pass, &ndarray::array![[1.0]], LossKind::Mse).is_err());
    }

    fn mini_config(n_outputs: usize) -> DvrConfig {
        let scale = Scale {
            input: InputShape {
                frames: 60,
                height: 16,
                width: 16,
                channels: 1,
            },
            filter_divisor: 16,
        };
        DvrConfig::scaled(Variant::Dvr3, scale, n_outputs).unwrap()
    }

    #[test]
    fn eval_is_deterministic_and_shaped() {
        let mut model = DvrModel::<f32>::from_config(mini_config(2), 5).unwrap();
        let batch = input_batch(5, model.config().input, 4).mapv(|v| v as f32);
        let a = model.predict(&batch).unwrap();
        let b = model.forward(&batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().output;
        assert_eq!(a.dim(), (5, 2));
        assert_eq!(a, b);
        assert!(model.predict(&Array5::zeros((1, 61, 16, 16, 1))).is_err());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let model = DvrModel::<f32>::from_config(mini_config(1), 8).unwrap();
        let out = model.predict(&Array5::zeros((2, 60, 16, 16, 1))).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        let mut model = model;
        let pass = model
            .forward(&Array5::zeros((2, 60, 16, 16, 1)), Mode::Train, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert!(pass.output.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outputs_finite_across_seeds() {
        let cfg = mini_config(2);
        for seed in 0..100 {
            let mut model = DvrModel::<f32>::from_config(cfg.clone(), seed).unwrap();
            let batch = input_batch(2, cfg.input, seed + 1000).mapv(|v| v as f32);
            assert!(model.predict(&batch).unwrap().iter().all(|v| v.is_finite()), "seed {seed}");
            let pass = model.forward(&batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(pass.output.iter().all(|v| v.is_finite()), "seed {seed}");
            assert!(model.layers().iter().flat_map(|l| &l.buffers).all(|b| b.iter().all(|v| v.is_finite())));
        }
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let a = DvrModel::<f32>::from_config(mini_config(1), 42).unwrap();
        let b = DvrModel::<f32>::from_config(mini_config(1), 42).unwrap();
        let c = DvrModel::<f32>::from_config(mini_config(1), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.count_params(), a.config().count_params().unwrap());
    }

    #[test]
    fn he_init_scale() {
        let cfg = DvrConfig::canonical(Variant::Dvr3, 1, 1).unwrap();
        let model = DvrModel::<f32>::from_config(cfg, 0).unwrap();
        let w = &model.layers()[0].params[0];
        let var = w.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / w.len() as f64;
        let expected = 2.0 / (90.0 * 25.0);
        assert!((var / expected - 1.0).abs() < 0.02, "{var} vs {expected}");
        assert_eq!(model.output_affine().0.len(), 1);
    }
}
