//! The assembled network.
//!
//! Three convolution blocks, the first two followed by ReLU, `(1,2)` max
//! pooling and dropout. Exactly one block (the *fusion layer*, by default the
//! third) uses a `(3, filter_width)` filter with vertical stride 3, mixing
//! neighbouring sensor rows; the others use height-1 filters that treat every
//! sensor row independently. The last block feeds either global average
//! pooling plus dropout (the default head) or a dense hidden layer, and then
//! the softmax classifier.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::layers::{
    dropout_backward, dropout_forward, gap_backward, gap_forward, maxpool_backward, maxpool_forward, relu_backward,
    relu_forward, softmax, ConvCache, ConvLayer, DenseCache, DenseLayer, DropoutMask, DropoutSpec, GapCache,
    MaxPoolCache, Mode, Pool2, ReluCache,
};
use crate::tensor::{Dims, Precision, Scalar, Tensor4};

/// Layer between the last convolution block and the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Global average pooling followed by dropout.
    Gap,
    /// Flatten, fully connected ReLU layer of `hidden` units, dropout.
    Dense { hidden: usize },
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Head::Gap => write!(f, "gap"),
            Head::Dense { hidden } => write!(f, "dense:{hidden}"),
        }
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "gap" {
            return Ok(Head::Gap);
        }
        s.strip_prefix("dense:")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .map(|hidden| Head::Dense { hidden })
            .ok_or_else(|| Error::Config(format!("head must be `gap` or `dense:SIZE`, got `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Sensor rows stacked vertically in one window.
    pub input_height: usize,
    /// Samples per window.
    pub input_width: usize,
    pub num_classes: usize,
    pub conv_channels: [usize; 3],
    pub filter_width: usize,
    /// 1-based index of the block that fuses sensor rows.
    pub fusion_layer: usize,
    pub head: Head,
    pub dropout_rate: f64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_height: 6,
            input_width: 128,
            num_classes: 6,
            conv_channels: [48, 96, 96],
            filter_width: 15,
            fusion_layer: 3,
            head: Head::Gap,
            dropout_rate: 0.4,
            precision: Precision::F32,
        }
    }
}

/// Geometry of one convolution block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kh: usize,
    pub kw: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: (usize, usize),
}

pub const FUSION_HEIGHT: usize = 3;

impl ModelConfig {
    /// Smartphone corpus: 3 acceleration + 3 angular-velocity rows, 6 activities.
    pub fn ucl() -> Self {
        ModelConfig::default()
    }

    /// Three IMUs with accelerometer and gyroscope each (18 rows), 12 activities.
    pub fn pamap2() -> Self {
        ModelConfig { input_height: 18, num_classes: 12, ..ModelConfig::default() }
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn conv_specs(&self) -> [ConvSpec; 3] {
        let mut c_in = 1;
        std::array::from_fn(|i| {
            let fusion = i + 1 == self.fusion_layer;
            let spec = ConvSpec {
                kh: if fusion { FUSION_HEIGHT } else { 1 },
                kw: self.filter_width,
                c_in,
                c_out: self.conv_channels[i],
                stride: (if fusion { FUSION_HEIGHT } else { 1 }, 1),
            };
            c_in = self.conv_channels[i];
            spec
        })
    }

    /// Checks the configuration and returns the activation shape after every stage.
    pub fn shape_pipeline(&self, batch: usize) -> Result<Vec<(&'static str, Dims)>> {
        if !(1..=3).contains(&self.fusion_layer) {
            return Err(Error::Config(format!("fusion layer must be 1, 2 or 3, got {}", self.fusion_layer)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.conv_channels.contains(&0) || self.filter_width == 0 || batch == 0 {
            return Err(Error::Config("channel counts, filter width and batch must be >= 1".into()));
        }
        if self.input_height % FUSION_HEIGHT != 0 {
            return Err(Error::Config(format!(
                "input height {} is not divisible by the fusion height {FUSION_HEIGHT}",
                self.input_height
            )));
        }
        DropoutSpec::new(self.dropout_rate, Mode::Train)?;

        const NAMES: [(&str, &str); 3] = [("conv1", "pool1"), ("conv2", "pool2"), ("conv3", "")];
        let pool = Pool2::default();
        let mut dims = Dims::new(batch, 1, self.input_height, self.input_width);
        let mut stages = Vec::new();
        for (i, spec) in self.conv_specs().iter().enumerate() {
            let geometry = ConvGeometry(spec);
            dims = geometry.output(dims).map_err(|e| Error::Config(format!("{}: {e}", NAMES[i].0)))?;
            stages.push((NAMES[i].0, dims));
            if i < 2 {
                dims = pool.output_dims(dims).map_err(|e| Error::Config(format!("{}: {e}", NAMES[i].1)))?;
                stages.push((NAMES[i].1, dims));
            }
        }
        match self.head {
            Head::Gap => {
                dims = Dims::new(batch, dims.c, 1, 1);
                stages.push(("gap", dims));
            }
            Head::Dense { hidden } => {
                dims = Dims::new(batch, hidden, 1, 1);
                stages.push(("hidden", dims));
            }
        }
        stages.push(("logits", Dims::new(batch, self.num_classes, 1, 1)));
        Ok(stages)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape_pipeline(1).map(|_| ())
    }

    /// Features entering the classifier (or the hidden dense layer).
    fn head_in_features(&self) -> Result<usize> {
        let stages = self.shape_pipeline(1)?;
        let conv3 = stages.iter().find(|(n, _)| *n == "conv3").expect("conv3 stage").1;
        Ok(match self.head {
            Head::Gap => conv3.c,
            Head::Dense { .. } => conv3.item_len(),
        })
    }

    pub fn param_count(&self) -> Result<usize> {
        let conv: usize = self.conv_specs().iter().map(|s| s.kh * s.kw * s.c_in * s.c_out + s.c_out).sum();
        let k = self.num_classes;
        let head = match self.head {
            Head::Gap => self.conv_channels[2] * k + k,
            Head::Dense { hidden } => self.head_in_features()? * hidden + hidden + hidden * k + k,
        };
        Ok(conv + head)
    }

    /// Key/value form used in checkpoint headers and run manifests.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("input_height", self.input_height.to_string()),
            ("input_width", self.input_width.to_string()),
            ("num_classes", self.num_classes.to_string()),
            (
                "conv_channels",
                self.conv_channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("filter_width", self.filter_width.to_string()),
            ("fusion_layer", self.fusion_layer.to_string()),
            ("head", self.head.to_string()),
            ("dropout_rate", self.dropout_rate.to_string()),
            ("precision", self.precision.to_string()),
        ]
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get<'a>(kv: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
            kv.get(key).map(String::as_str).ok_or_else(|| Error::Format(format!("missing config key `{key}`")))
        }
        fn num<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let v = get(kv, key)?;
            v.parse().map_err(|_| Error::Format(format!("bad value `{v}` for `{key}`")))
        }
        let channels: Vec<usize> = get(kv, "conv_channels")?
            .split(',')
            .map(|c| c.parse().map_err(|_| Error::Format(format!("bad channel count `{c}`"))))
            .collect::<Result<_>>()?;
        let conv_channels: [usize; 3] = channels
            .try_into()
            .map_err(|_| Error::Format("conv_channels needs exactly 3 entries".into()))?;
        let bits: u32 = num(kv, "precision")?;
        let config = ModelConfig {
            input_height: num(kv, "input_height")?,
            input_width: num(kv, "input_width")?,
            num_classes: num(kv, "num_classes")?,
            conv_channels,
            filter_width: num(kv, "filter_width")?,
            fusion_layer: num(kv, "fusion_layer")?,
            head: get(kv, "head")?.parse()?,
            dropout_rate: num(kv, "dropout_rate")?,
            precision: Precision::from_bits(bits).ok_or_else(|| Error::Format(format!("unsupported precision {bits}")))?,
        };
        config.validate()?;
        Ok(config)
    }
}

struct ConvGeometry<'a>(&'a ConvSpec);

impl ConvGeometry<'_> {
    fn output(&self, input: Dims) -> Result<Dims> {
        let s = self.0;
        if input.h < s.kh || input.w < s.kw {
            return shape_err(format!("input {input} is smaller than the ({},{}) filter", s.kh, s.kw));
        }
        Ok(Dims::new(input.n, s.c_out, (input.h - s.kh) / s.stride.0 + 1, (input.w - s.kw) / s.stride.1 + 1))
    }
}

/// One gradient buffer per parameter buffer, in [`PerceptionNet::param_names`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub blocks: Vec<Vec<T>>,
}

struct BlockCache<T> {
    conv: ConvCache<T>,
    relu: ReluCache,
    pool: Option<MaxPoolCache>,
    dropout: Option<DropoutMask<T>>,
}

enum HeadCache<T> {
    Gap { gap: GapCache, dropout: DropoutMask<T> },
    Dense { hidden: DenseCache<T>, relu: ReluCache, dropout: DropoutMask<T> },
}

/// Everything a backward pass needs from the matching forward pass.
pub struct ForwardCache<T> {
    mode: Mode,
    blocks: Vec<BlockCache<T>>,
    head: HeadCache<T>,
    classifier: DenseCache<T>,
    shapes: Vec<(&'static str, Dims)>,
}

impl<T> ForwardCache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Activation shape after every stage of the forward pass.
    pub fn shapes(&self) -> &[(&'static str, Dims)] {
        &self.shapes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionNet<T> {
    config: ModelConfig,
    convs: Vec<ConvLayer<T>>,
    hidden: Option<DenseLayer<T>>,
    classifier: DenseLayer<T>,
}

impl<T: Scalar> PerceptionNet<T> {
    /// All parameters zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        if config.precision != T::PRECISION {
            return Err(Error::Config(format!(
                "config asks for {}-bit precision but the network is built with {}-bit scalars",
                config.precision,
                T::PRECISION
            )));
        }
        let convs = config
            .conv_specs()
            .iter()
            .map(|s| ConvLayer::new(s.kh, s.kw, s.c_in, s.c_out, s.stride))
            .collect::<Result<Vec<_>>>()?;
        let features = config.head_in_features()?;
        let (hidden, classifier) = match config.head {
            Head::Gap => (None, DenseLayer::new(features, config.num_classes)?),
            Head::Dense { hidden } => {
                (Some(DenseLayer::new(features, hidden)?), DenseLayer::new(hidden, config.num_classes)?)
            }
        };
        Ok(PerceptionNet { config, convs, hidden, classifier })
    }

    /// Weights uniform in `±sqrt(2 / fan_in)`, biases zero. Equal seeds give
    /// bit-identical networks.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |weights: &mut [T], fan_in: usize| {
            let bound = (2.0 / fan_in as f64).sqrt();
            weights.iter_mut().for_each(|w| *w = T::from_f64_lossy(rng.gen_range(-bound..=bound)));
        };
        for conv in &mut net.convs {
            let fan_in = conv.fan_in();
            fill(&mut conv.weights, fan_in);
        }
        if let Some(hidden) = &mut net.hidden {
            fill(&mut hidden.weights, hidden.in_features);
        }
        let fan_in = net.classifier.in_features;
        fill(&mut net.classifier.weights, fan_in);
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn convs(&self) -> &[ConvLayer<T>] {
        &self.convs
    }

    pub fn hidden(&self) -> Option<&DenseLayer<T>> {
        self.hidden.as_ref()
    }

    pub fn classifier(&self) -> &DenseLayer<T> {
        &self.classifier
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 1..=self.convs.len() {
            names.push(format!("conv{i}.weight"));
            names.push(format!("conv{i}.bias"));
        }
        if self.hidden.is_some() {
            names.push("hidden.weight".into());
            names.push("hidden.bias".into());
        }
        names.push("classifier.weight".into());
        names.push("classifier.bias".into());
        names
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for c in &self.convs {
            shapes.push(c.weight_shape().to_vec());
            shapes.push(vec![c.c_out]);
        }
        for d in self.hidden.iter().chain(std::iter::once(&self.classifier)) {
            shapes.push(vec![d.in_features, d.out_features]);
            shapes.push(vec![d.out_features]);
        }
        shapes
    }

    pub fn param_blocks(&self) -> Vec<&[T]> {
        let mut blocks: Vec<&[T]> = Vec::new();
        for c in &self.convs {
            blocks.push(&c.weights);
            blocks.push(&c.bias);
        }
        for d in self.hidden.iter().chain(std::iter::once(&self.classifier)) {
            blocks.push(&d.weights);
            blocks.push(&d.bias);
        }
        blocks
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut blocks: Vec<&mut [T]> = Vec::new();
        for c in &mut self.convs {
            blocks.push(&mut c.weights);
            blocks.push(&mut c.bias);
        }
        for d in self.hidden.iter_mut().chain(std::iter::once(&mut self.classifier)) {
            blocks.push(&mut d.weights);
            blocks.push(&mut d.bias);
        }
        blocks
    }

    pub fn param_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let d = x.dims();
        if d.c != 1 || d.h != self.config.input_height || d.w != self.config.input_width {
            return shape_err(format!(
                "network expects (n,1,{},{}) input, got {d}",
                self.config.input_height, self.config.input_width
            ));
        }
        Ok(())
    }

    /// Full forward pass. `rng` drives dropout and is never consulted in eval mode.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor4<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor4<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let dropout = DropoutSpec::new(self.config.dropout_rate, mode)?;
        let mut shapes = Vec::new();
        let mut blocks = Vec::with_capacity(self.convs.len());
        let mut act = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let (y, conv_cache) = conv.forward(&act)?;
            shapes.push((["conv1", "conv2", "conv3"][i], y.dims()));
            let (y, relu) = relu_forward(&y);
            let (y, pool, mask) = if i + 1 < self.convs.len() {
                let (y, pool) = maxpool_forward(&y, Pool2::default())?;
                shapes.push((["pool1", "pool2"][i], y.dims()));
                let (y, mask) = dropout_forward(&y, dropout, rng)?;
                (y, Some(pool), Some(mask))
            } else {
                (y, None, None)
            };
            blocks.push(BlockCache { conv: conv_cache, relu, pool, dropout: mask });
            act = y;
        }

        let (features, head) = match &self.hidden {
            None => {
                let (y, gap) = gap_forward(&act);
                shapes.push(("gap", y.dims()));
                let (y, mask) = dropout_forward(&y, dropout, rng)?;
                (y, HeadCache::Gap { gap, dropout: mask })
            }
            Some(hidden) => {
                let (y, hidden_cache) = hidden.forward(&act)?;
                shapes.push(("hidden", y.dims()));
                let (y, relu) = relu_forward(&y);
                let (y, mask) = dropout_forward(&y, dropout, rng)?;
                (y, HeadCache::Dense { hidden: hidden_cache, relu, dropout: mask })
            }
        };
        let (logits, classifier) = self.classifier.forward(&features)?;
        shapes.push(("logits", logits.dims()));
        Ok((logits, ForwardCache { mode, blocks, head, classifier, shapes }))
    }

    /// Backpropagates `grad_logits` through a training-mode forward pass.
    pub fn backward(&self, grad_logits: &Tensor4<T>, cache: &ForwardCache<T>) -> Result<Gradients<T>> {
        if cache.mode != Mode::Train {
            return Err(Error::Usage("backward needs the cache of a training-mode forward pass".into()));
        }
        if cache.blocks.len() != self.convs.len() || cache.head_kind() != self.hidden.is_some() {
            return Err(Error::Usage("forward cache belongs to a different network".into()));
        }
        let (g, classifier) = self.classifier.backward(grad_logits, &cache.classifier)?;
        let mut tail = vec![classifier.bias, classifier.weights];
        let mut g = match (&cache.head, &self.hidden) {
            (HeadCache::Gap { gap, dropout }, None) => gap_backward(&dropout_backward(&g, dropout)?, gap)?,
            (HeadCache::Dense { hidden: hc, relu, dropout }, Some(hidden)) => {
                let g = relu_backward(&dropout_backward(&g, dropout)?, relu)?;
                let (g, grads) = hidden.backward(&g, hc)?;
                tail.push(grads.bias);
                tail.push(grads.weights);
                g
            }
            _ => unreachable!("head kind checked above"),
        };
        for (conv, bc) in self.convs.iter().zip(&cache.blocks).rev() {
            if let Some(mask) = &bc.dropout {
                g = dropout_backward(&g, mask)?;
            }
            if let Some(pool) = &bc.pool {
                g = maxpool_backward(&g, pool)?;
            }
            g = relu_backward(&g, &bc.relu)?;
            let (gx, grads) = conv.backward(&g, &bc.conv)?;
            tail.push(grads.bias);
            tail.push(grads.weights);
            g = gx;
        }
        tail.reverse();
        Ok(Gradients { blocks: tail })
    }

    /// Eval-mode logits without building caches.
    pub fn logits(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mut act = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            act = relu_forward(&conv.apply(&act)?).0;
            if i + 1 < self.convs.len() {
                act = maxpool_forward(&act, Pool2::default())?.0;
            }
        }
        let features = match &self.hidden {
            None => gap_forward(&act).0,
            Some(hidden) => relu_forward(&hidden.apply(&act)?).0,
        };
        self.classifier.apply(&features)
    }

    /// Class probabilities, `(n, num_classes, 1, 1)`.
    pub fn predict_proba(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        softmax(&self.logits(x)?)
    }
}

impl<T> ForwardCache<T> {
    fn head_kind(&self) -> bool {
        matches!(self.head, HeadCache::Dense { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::softmax_xent;

    fn f64_config(config: ModelConfig) -> ModelConfig {
        config.with_precision(Precision::F64)
    }

    #[test]
    fn default_layer_shapes_and_count() {
        let net = PerceptionNet::<f32>::init(ModelConfig::ucl(), 0).unwrap();
        let shapes = net.param_shapes();
        assert_eq!(shapes[0], vec![1, 15, 1, 48]);
        assert_eq!(shapes[2], vec![1, 15, 48, 96]);
        assert_eq!(shapes[4], vec![3, 15, 96, 96]);
        assert_eq!(shapes[6], vec![96, 6]);
        assert_eq!(net.param_count(), 485_382);
        assert_eq!(ModelConfig::ucl().param_count().unwrap(), 485_382);
        // 768 + 69_216 + 414_816 + (96*12 + 12)
        assert_eq!(ModelConfig::pamap2().param_count().unwrap(), 485_964);
    }

    #[test]
    fn init_bounds_follow_fan_in() {
        let net = PerceptionNet::<f64>::init(f64_config(ModelConfig::ucl()), 7).unwrap();
        let bound = (2.0f64 / 96.0).sqrt();
        assert!((bound - 0.144338).abs() < 1e-6);
        assert!(net.classifier().weights.iter().all(|w| w.abs() <= bound));
        let bound = (2.0f64 / 15.0).sqrt();
        assert!((bound - 0.365148).abs() < 1e-6);
        assert!(net.convs()[0].weights.iter().all(|w| w.abs() <= bound));
        let max = net.convs()[0].weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        assert!(max > 0.9 * bound);
        assert!(net.param_blocks().iter().skip(1).step_by(2).all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_is_deterministic() {
        let a = PerceptionNet::<f32>::init(ModelConfig::ucl(), 42).unwrap();
        let b = PerceptionNet::<f32>::init(ModelConfig::ucl(), 42).unwrap();
        let c = PerceptionNet::<f32>::init(ModelConfig::ucl(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn precision_must_match_scalar() {
        assert!(PerceptionNet::<f64>::init(ModelConfig::ucl(), 0).is_err());
    }

    #[test]
    fn ucl_shape_pipeline() {
        let stages = ModelConfig::ucl().shape_pipeline(4).unwrap();
        let dims: Vec<Dims> = stages.iter().map(|s| s.1).collect();
        assert_eq!(
            dims,
            vec![
                Dims::new(4, 48, 6, 114),
                Dims::new(4, 48, 6, 57),
                Dims::new(4, 96, 6, 43),
                Dims::new(4, 96, 6, 21),
                Dims::new(4, 96, 2, 7),
                Dims::new(4, 96, 1, 1),
                Dims::new(4, 6, 1, 1),
            ]
        );
        let net = PerceptionNet::<f32>::init(ModelConfig::ucl(), 1).unwrap();
        let x = Tensor4::zeros((4, 1, 6, 128)).unwrap();
        let (logits, cache) = net.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(logits.dims(), Dims::new(4, 6, 1, 1));
        assert_eq!(cache.shapes(), stages.as_slice());
    }

    #[test]
    fn pamap2_shape_pipeline() {
        let net = PerceptionNet::<f32>::init(ModelConfig::pamap2(), 1).unwrap();
        let x = Tensor4::zeros((4, 1, 18, 128)).unwrap();
        let (logits, cache) = net.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let conv3 = cache.shapes().iter().find(|s| s.0 == "conv3").unwrap().1;
        assert_eq!(conv3, Dims::new(4, 96, 6, 7));
        assert_eq!(logits.dims(), Dims::new(4, 12, 1, 1));
    }

    #[test]
    fn early_fusion_variants_are_valid() {
        for height in [6, 18] {
            for fusion in 1..=3 {
                let config = ModelConfig { input_height: height, fusion_layer: fusion, ..ModelConfig::ucl() };
                let stages = config.shape_pipeline(2).unwrap();
                let fused = stages[[0, 2, 4][fusion - 1]].1;
                assert_eq!(fused.h, height / 3);
                assert_eq!(stages.iter().find(|s| s.0 == "conv3").unwrap().1.h, height / 3);
            }
        }
        assert!(ModelConfig { fusion_layer: 4, ..ModelConfig::ucl() }.validate().is_err());
        assert!(ModelConfig { input_height: 7, ..ModelConfig::ucl() }.validate().is_err());
        assert!(ModelConfig { input_width: 60, ..ModelConfig::ucl() }.validate().is_err());
    }

    #[test]
    fn dense_head_variant() {
        let config = ModelConfig { head: Head::Dense { hidden: 1000 }, ..ModelConfig::ucl() };
        let net = PerceptionNet::<f32>::init(config.clone(), 3).unwrap();
        assert_eq!(net.param_count(), config.param_count().unwrap());
        assert_eq!(net.hidden().unwrap().in_features, 96 * 2 * 7);
        let x = Tensor4::zeros((2, 1, 6, 128)).unwrap();
        assert_eq!(net.logits(&x).unwrap().dims(), Dims::new(2, 6, 1, 1));
        assert_eq!("dense:1000".parse::<Head>().unwrap(), Head::Dense { hidden: 1000 });
        assert!("dense:0".parse::<Head>().is_err());
        assert!("max".parse::<Head>().is_err());
    }

    #[test]
    fn eval_forward_is_deterministic_and_matches_logits() {
        let net = PerceptionNet::<f32>::init(ModelConfig::ucl(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor4::from_fn((3, 1, 6, 128), |_, _, _, _| rng.gen_range(-1.0..1.0)).unwrap();
        let (a, _) = net.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (b, _) = net.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.logits(&x).unwrap(), a);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let config = ModelConfig { input_width: 64, filter_width: 5, conv_channels: [4, 8, 8], ..ModelConfig::ucl() };
        let net = PerceptionNet::<f64>::init(f64_config(config), 1).unwrap();
        let x = Tensor4::full((2, 1, 6, 64), 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, cache) = net.forward(&x, Mode::Train, &mut rng).unwrap();
        let grads = net.backward(&Tensor4::zeros(logits.dims()).unwrap(), &cache).unwrap();
        assert_eq!(grads.blocks.len(), net.param_blocks().len());
        for (g, p) in grads.blocks.iter().zip(net.param_blocks()) {
            assert_eq!(g.len(), p.len());
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_rejects_eval_cache() {
        let net = PerceptionNet::<f32>::init(ModelConfig::ucl(), 1).unwrap();
        let x = Tensor4::zeros((1, 1, 6, 128)).unwrap();
        let (logits, cache) = net.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(net.backward(&logits, &cache), Err(Error::Usage(_))));
    }

    #[test]
    fn probabilities_are_normalized_and_shift_invariant() {
        let net = PerceptionNet::<f32>::init(ModelConfig::ucl(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor4::from_fn((16, 1, 6, 128), |_, _, _, _| rng.gen_range(-2.0..2.0)).unwrap();
        let probs = net.predict_proba(&x).unwrap();
        for row in probs.as_slice().chunks(6) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() <= 1e-6);
        }
        let logits = net.logits(&x).unwrap();
        let shifted = softmax(&logits.map(|v| v + 3.0)).unwrap();
        for (a, b) in shifted.as_slice().iter().zip(probs.as_slice()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn fresh_networks_are_near_chance() {
        // Class symmetry holds over the initialization distribution, so average
        // over several independently seeded networks.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Tensor4::from_fn((128, 1, 6, 128), |_, _, _, _| rng.gen_range(-1.0..1.0)).unwrap();
        let mut means = [0.0f64; 6];
        let nets = 8;
        for seed in 0..nets {
            let net = PerceptionNet::<f32>::init(ModelConfig::ucl(), 2024 + seed).unwrap();
            let probs = net.predict_proba(&x).unwrap();
            for (i, p) in probs.as_slice().iter().enumerate() {
                means[i % 6] += *p as f64 / (128 * nets) as f64;
            }
        }
        for (class, mean) in means.iter().enumerate() {
            assert!((mean - 1.0 / 6.0).abs() <= 0.05, "class {class} mean {mean}");
        }
    }

    #[test]
    fn precisions_agree_without_dropout() {
        let config = ModelConfig { dropout_rate: 0.0, ..ModelConfig::ucl() };
        let net32 = PerceptionNet::<f32>::init(config.clone(), 8).unwrap();
        let net64 = PerceptionNet::<f64>::init(f64_config(config), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor4::<f64>::from_fn((4, 1, 6, 128), |_, _, _, _| rng.gen_range(-1.0..1.0)).unwrap();
        let x32 = x.cast::<f32>();
        let x64 = x32.cast::<f64>();
        let a = net32.logits(&x32).unwrap();
        let b = net64.logits(&x64).unwrap();
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((*p as f64 - q).abs() <= 1e-3);
        }
    }

    #[test]
    fn whole_network_gradient_matches_finite_differences() {
        let config = f64_config(ModelConfig {
            input_width: 32,
            filter_width: 3,
            conv_channels: [2, 4, 4],
            num_classes: 3,
            dropout_rate: 0.0,
            ..ModelConfig::ucl()
        });
        let mut net = PerceptionNet::<f64>::init(config, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor4::from_fn((3, 1, 6, 32), |_, _, _, _| rng.gen_range(-1.0..1.0)).unwrap();
        let labels = [0, 2, 1];
        let (logits, cache) = net.forward(&x, Mode::Train, &mut rng).unwrap();
        let out = softmax_xent(&logits, &labels).unwrap();
        let grads = net.backward(&out.grad, &cache).unwrap();
        let h = 1e-5;
        for b in 0..grads.blocks.len() {
            for i in 0..grads.blocks[b].len() {
                let orig = net.param_blocks()[b][i];
                net.param_blocks_mut()[b][i] = orig + h;
                let lp = softmax_xent(&net.logits(&x).unwrap(), &labels).unwrap().loss;
                net.param_blocks_mut()[b][i] = orig - h;
                let lm = softmax_xent(&net.logits(&x).unwrap(), &labels).unwrap().loss;
                net.param_blocks_mut()[b][i] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let a = grads.blocks[b][i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                assert!(rel <= 1e-4, "block {b} idx {i}: {a} vs {numeric}");
            }
        }
    }
}
