use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    /// Smooth stand-in for ReLU, used when checking gradients numerically.
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv3d,
    MaxPool3d,
    BatchNorm,
    Dense,
    Dropout,
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Filters for convolutions, neurons for dense layers, 0 otherwise.
    pub units: usize,
    /// `(depth, height, width)`; the pool window for pooling layers.
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl LayerSpec {
    pub fn conv(name: &str, units: usize, kernel: [usize; 3]) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv3d,
            units,
            kernel,
            stride: [1, 1, 1],
            activation: Activation::Relu,
            dropout_rate: 0.0,
        }
    }

    pub fn pool(name: &str, size: [usize; 3]) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::MaxPool3d,
            units: 0,
            kernel: size,
            stride: size,
            activation: Activation::Linear,
            dropout_rate: 0.0,
        }
    }

    pub fn batch_norm(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::BatchNorm,
            units: 0,
            kernel: [1; 3],
            stride: [1; 3],
            activation: Activation::Linear,
            dropout_rate: 0.0,
        }
    }

    pub fn flatten() -> Self {
        Self {
            name: "Flatten".into(),
            kind: LayerKind::Flatten,
            ..Self::batch_norm("")
        }
    }

    pub fn dense(name: &str, units: usize, activation: Activation) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Dense,
            units,
            activation,
            ..Self::batch_norm("")
        }
    }

    pub fn dropout(name: &str, rate: f64) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Dropout,
            dropout_rate: rate,
            ..Self::batch_norm("")
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Dvr2,
    Dvr3,
    Custom,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dvr2" => Ok(Variant::Dvr2),
            "dvr3" => Ok(Variant::Dvr3),
            other => Err(Error::invalid(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    pub const CANONICAL: Self = Self {
        frames: 360,
        height: 32,
        width: 32,
        channels: 1,
    };
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `(channels, depth, height, width)`
    Volume([usize; 4]),
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Volume([c, d, h, w]) => c * d * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const FC_DROPOUT: f64 = 0.15;

/// Convolution rows of the DVR3 table: name, filters, kernel.
const DVR3_CONVS: [(&str, usize, [usize; 3]); 9] = [
    ("Conv1", 64, [90, 5, 5]),
    ("Conv2", 64, [1, 5, 5]),
    ("Conv3", 64, [60, 1, 1]),
    ("Conv4", 64, [1, 3, 3]),
    ("Conv5", 64, [30, 1, 1]),
    ("Conv6", 128, [1, 3, 3]),
    ("Conv7", 128, [15, 1, 1]),
    ("Conv8", 256, [1, 3, 3]),
    ("Conv9", 256, [10, 1, 1]),
];
const DVR3_POOLS: [[usize; 3]; 5] = [[1, 2, 2], [2, 2, 2], [2, 2, 2], [1, 2, 2], [2, 2, 2]];
const FC_UNITS: [usize; 3] = [512, 512, 256];

/// Sizing knobs for building reduced-scale networks from the canonical table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub input: InputShape,
    /// Filter and neuron counts are divided by this (rounded up, at least 1).
    pub filter_divisor: usize,
}

impl Default for Scale {
    fn default() -> Self {
        Self {
            input: InputShape::CANONICAL,
            filter_divisor: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvrConfig {
    pub variant: Variant,
    pub input: InputShape,
    pub n_outputs: usize,
    pub layers: Vec<LayerSpec>,
    pub fc_dropout: f64,
}

impl DvrConfig {
    /// Full-size network for 360 x 32 x 32 x `channels` input.
    pub fn canonical(variant: Variant, channels: usize, n_outputs: usize) -> Result<Self> {
        let input = InputShape {
            channels,
            ..InputShape::CANONICAL
        };
        Self::scaled(variant, Scale { input, filter_divisor: 1 }, n_outputs)
    }

    /// Builds DVR3 (or DVR2 by fusing each `(1,k,k)`+`(d,1,1)` pair into one
    /// `(d,k,k)` convolution). Temporal kernel depths are scaled by
    /// `frames / 360` so the receptive field spans the same fraction of the
    /// window.
    pub fn scaled(variant: Variant, scale: Scale, n_outputs: usize) -> Result<Self> {
        if !matches!(variant, Variant::Dvr2 | Variant::Dvr3) {
            return Err(Error::invalid("only dvr2 and dvr3 have a layer table"));
        }
        if !(1..=2).contains(&n_outputs) {
            return Err(Error::invalid(format!("n_outputs must be 1 or 2, got {n_outputs}")));
        }
        if scale.input.channels != 1 {
            return Err(Error::invalid(format!(
                "DVR networks take one channel (red or gray), got {}",
                scale.input.channels
            )));
        }
        if scale.filter_divisor == 0 {
            return Err(Error::invalid("filter_divisor must be positive"));
        }
        let units = |u: usize| u.div_ceil(scale.filter_divisor).max(1);
        let depth = |d: usize| {
            if d == 1 {
                1
            } else {
                ((d as f64 * scale.input.frames as f64 / 360.0).round() as usize).max(1)
            }
        };
        let conv = |i: usize| {
            let (name, u, [d, h, w]) = DVR3_CONVS[i];
            LayerSpec::conv(name, units(u), [depth(d), h, w])
        };

        let mut layers = vec![conv(0)];
        let push_block = |layers: &mut Vec<LayerSpec>, b: usize| {
            layers.push(LayerSpec::pool(&format!("MaxPool{}", b + 1), DVR3_POOLS[b]));
            layers.push(LayerSpec::batch_norm(&format!("BN{}", b + 1)));
        };
        push_block(&mut layers, 0);
        for b in 1..5 {
            let (spatial, temporal) = (conv(2 * b - 1), conv(2 * b));
            match variant {
                Variant::Dvr3 => {
                    layers.push(spatial);
                    layers.push(temporal);
                }
                _ => layers.push(LayerSpec::conv(
                    &format!("{}_{}", spatial.name, temporal.name),
                    temporal.units,
                    [temporal.kernel[0], spatial.kernel[1], spatial.kernel[2]],
                )),
            }
            push_block(&mut layers, b);
        }
        layers.push(LayerSpec::flatten());
        for (i, u) in FC_UNITS.iter().enumerate() {
            layers.push(LayerSpec::dense(&format!("FC{}", i + 1), units(*u), Activation::Relu));
            layers.push(LayerSpec::dropout(&format!("Dropout{}", i + 1), FC_DROPOUT));
        }
        layers.push(LayerSpec::dense("Output", n_outputs, Activation::Linear));

        let cfg = Self {
            variant,
            input: scale.input,
            n_outputs,
            layers,
            fc_dropout: FC_DROPOUT,
        };
        cfg.shape_chain()?;
        Ok(cfg)
    }

    /// An arbitrary layer list, validated for shape consistency.
    pub fn custom(input: InputShape, layers: Vec<LayerSpec>) -> Result<Self> {
        let n_outputs = match layers.last() {
            Some(l) if l.kind == LayerKind::Dense => l.units,
            _ => return Err(Error::invalid("network must end in a dense layer")),
        };
        let cfg = Self {
            variant: Variant::Custom,
            input,
            n_outputs,
            layers,
            fc_dropout: 0.0,
        };
        cfg.shape_chain()?;
        Ok(cfg)
    }

    /// Output shape after every layer. Convolutions use same padding and
    /// stride 1; pooling windows equal their strides and keep partial windows
    /// (output extent `ceil(n / s)`).
    pub fn shape_chain(&self) -> Result<Vec<Shape>> {
        let i = self.input;
        if i.frames == 0 || i.height == 0 || i.width == 0 || i.channels == 0 {
            return Err(Error::shape("input dimensions must be positive"));
        }
        let mut shape = Shape::Volume([i.channels, i.frames, i.height, i.width]);
        let mut chain = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            shape = match (l.kind, shape) {
                (LayerKind::Conv3d, Shape::Volume([_, d, h, w])) => {
                    if l.units == 0 || l.kernel.contains(&0) {
                        return Err(Error::shape(format!("{}: empty kernel or no filters", l.name)));
                    }
                    Shape::Volume([l.units, d, h, w])
                }
                (LayerKind::MaxPool3d, Shape::Volume([c, d, h, w])) => {
                    if l.stride.contains(&0) {
                        return Err(Error::shape(format!("{}: zero pool stride", l.name)));
                    }
                    let [sd, sh, sw] = l.stride;
                    Shape::Volume([c, d.div_ceil(sd), h.div_ceil(sh), w.div_ceil(sw)])
                }
                (LayerKind::BatchNorm | LayerKind::Dropout, s) => s,
                (LayerKind::Flatten, s) => Shape::Flat(s.len()),
                (LayerKind::Dense, Shape::Flat(_)) => {
                    if l.units == 0 {
                        return Err(Error::shape(format!("{}: no units", l.name)));
                    }
                    Shape::Flat(l.units)
                }
                (kind, s) => {
                    return Err(Error::shape(format!("{}: {kind:?} cannot follow shape {s:?}", l.name)));
                }
            };
            if l.kind == LayerKind::Dropout && !(0.0..1.0).contains(&l.dropout_rate) {
                return Err(Error::shape(format!("{}: dropout rate must lie in [0, 1)", l.name)));
            }
            chain.push(shape);
        }
        Ok(chain)
    }

    /// Width of the flattened convolutional features.
    pub fn flatten_width(&self) -> Result<usize> {
        let chain = self.shape_chain()?;
        self.layers
            .iter()
            .zip(chain)
            .find(|(l, _)| l.kind == LayerKind::Flatten)
            .map(|(_, s)| s.len())
            .ok_or_else(|| Error::shape("network has no flatten layer"))
    }

    /// Trainable element count implied by the layer table.
    pub fn count_params(&self) -> Result<usize> {
        let chain = self.shape_chain()?;
        let mut prev = Shape::Volume([self.input.channels, 0, 0, 0]);
        let mut total = 0;
        for (l, shape) in self.layers.iter().zip(chain) {
            total += match (l.kind, prev) {
                (LayerKind::Conv3d, Shape::Volume([cin, ..])) => {
                    l.kernel.iter().product::<usize>() * cin * l.units + l.units
                }
                (LayerKind::BatchNorm, Shape::Volume([c, ..])) => 2 * c,
                (LayerKind::BatchNorm, Shape::Flat(n)) => 2 * n,
                (LayerKind::Dense, Shape::Flat(n)) => n * l.units + l.units,
                _ => 0,
            };
            prev = shape;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent re-derivation of the shape chain: same padding keeps
    /// extents, and every pool divides with rounding up.
    fn expected_extents(frames: usize, hw: usize) -> Vec<(usize, usize)> {
        let mut out = vec![(frames, hw)];
        let (mut t, mut s) = (frames, hw);
        for [pt, ps, _] in DVR3_POOLS {
            t = (t + pt - 1) / pt;
            s = (s + ps - 1) / ps;
            out.push((t, s));
        }
        out
    }

    #[test]
    fn dvr3_table_and_shape_chain() {
        let cfg = DvrConfig::canonical(Variant::Dvr3, 1, 1).unwrap();
        let convs = cfg.layers.iter().filter(|l| l.kind == LayerKind::Conv3d).count();
        let pools = cfg.layers.iter().filter(|l| l.kind == LayerKind::MaxPool3d).count();
        let norms = cfg.layers.iter().filter(|l| l.kind == LayerKind::BatchNorm).count();
        let dense: Vec<usize> = cfg.layers.iter().filter(|l| l.kind == LayerKind::Dense).map(|l| l.units).collect();
        assert_eq!((convs, pools, norms), (9, 5, 5));
        assert_eq!(dense, vec![512, 512, 256, 1]);

        let chain = cfg.shape_chain().unwrap();
        let pooled: Vec<(usize, usize)> = cfg
            .layers
            .iter()
            .zip(&chain)
            .filter(|(l, _)| l.kind == LayerKind::MaxPool3d)
            .map(|(_, s)| match s {
                Shape::Volume([_, d, h, w]) => {
                    assert_eq!(h, w);
                    (*d, *h)
                }
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(pooled, expected_extents(360, 32)[1..]);
        assert_eq!(pooled, vec![(360, 16), (180, 8), (90, 4), (90, 2), (45, 1)]);
        assert_eq!(cfg.flatten_width().unwrap(), 45 * 256);
    }

    #[test]
    fn table_order_matches_figure() {
        let cfg = DvrConfig::canonical(Variant::Dvr3, 1, 1).unwrap();
        let names: Vec<&str> = cfg.layers.iter().map(|l| l.name.as_str()).take(8).collect();
        assert_eq!(names, ["Conv1", "MaxPool1", "BN1", "Conv2", "Conv3", "MaxPool2", "BN2", "Conv4"]);
        assert_eq!(cfg.layers[0].kernel, [90, 5, 5]);
        assert!(cfg.layers.iter().filter(|l| l.kind != LayerKind::Dense || l.name != "Output").all(|l| {
            !matches!(l.kind, LayerKind::Conv3d | LayerKind::Dense) || l.activation == Activation::Relu
        }));
        assert_eq!(cfg.layers.last().unwrap().activation, Activation::Linear);
    }

    #[test]
    fn dvr2_fuses_pairs() {
        let cfg = DvrConfig::canonical(Variant::Dvr2, 1, 2).unwrap();
        let kernels: Vec<[usize; 3]> = cfg.layers.iter().filter(|l| l.kind == LayerKind::Conv3d).map(|l| l.kernel).collect();
        assert_eq!(kernels, vec![[90, 5, 5], [60, 5, 5], [30, 3, 3], [15, 3, 3], [10, 3, 3]]);
        assert_eq!(cfg.flatten_width().unwrap(), 11520);
    }

    #[test]
    fn parameter_counts() {
        let single = DvrConfig::custom(
            InputShape { frames: 1, height: 1, width: 10, channels: 1 },
            vec![LayerSpec::flatten(), LayerSpec::dense("d", 5, Activation::Linear)],
        )
        .unwrap();
        assert_eq!(single.count_params().unwrap(), 55);

        let conv1 = DvrConfig::custom(
            InputShape::CANONICAL,
            vec![LayerSpec::conv("c", 64, [90, 5, 5]), LayerSpec::flatten(), LayerSpec::dense("o", 1, Activation::Linear)],
        )
        .unwrap();
        let head = 360 * 32 * 32 * 64 + 1;
        assert_eq!(conv1.count_params().unwrap() - head, 144_064);

        let dvr2 = DvrConfig::canonical(Variant::Dvr2, 1, 1).unwrap().count_params().unwrap();
        let dvr3 = DvrConfig::canonical(Variant::Dvr3, 1, 1).unwrap().count_params().unwrap();
        assert!(dvr3 < dvr2, "{dvr3} vs {dvr2}");
    }

    #[test]
    fn miniature_scaling() {
        let scale = Scale {
            input: InputShape { frames: 120, height: 16, width: 16, channels: 1 },
            filter_divisor: 8,
        };
        let cfg = DvrConfig::scaled(Variant::Dvr3, scale, 1).unwrap();
        assert_eq!(cfg.layers[0].units, 8);
        assert_eq!(cfg.layers[0].kernel, [30, 5, 5]);
        assert_eq!(cfg.flatten_width().unwrap(), 15 * 32);
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(DvrConfig::canonical(Variant::Dvr3, 3, 1).is_err());
        assert!(DvrConfig::canonical(Variant::Dvr3, 1, 3).is_err());
        assert!(DvrConfig::canonical(Variant::Custom, 1, 1).is_err());
    }
}
