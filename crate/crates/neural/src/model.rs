//! The two tweet-embedding CNNs as flat layer plans over one parameter vector.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers;
use crate::NeuralError;

/// Kim-style text CNN: full-width filters of several heights, global max pooling, dense head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelCnnSpec {
    pub max_slices: usize,
    pub dim: usize,
    pub filter_heights: Vec<usize>,
    pub n_filters: usize,
    pub dense: Vec<usize>,
    pub dropout: f64,
}

impl Default for ParallelCnnSpec {
    fn default() -> Self {
        Self {
            max_slices: 362,
            dim: 768,
            filter_heights: vec![3, 4, 5],
            n_filters: 100,
            dense: vec![1024, 1336],
            dropout: 0.5,
        }
    }
}

/// LeNet-style CNN treating the padded stack as a one-channel image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialCnnSpec {
    pub height: usize,
    pub width: usize,
    pub kernels: Vec<usize>,
    pub channels: Vec<usize>,
    pub pool: usize,
    pub dense: Vec<usize>,
    pub dropout: f64,
}

impl Default for SequentialCnnSpec {
    fn default() -> Self {
        Self {
            height: 362,
            width: 768,
            kernels: vec![5, 4, 3],
            channels: vec![6, 16, 16],
            pool: 2,
            dense: vec![119, 84],
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "snake_case")]
pub enum ModelSpec {
    Parallel(ParallelCnnSpec),
    Sequential(SequentialCnnSpec),
}

impl ModelSpec {
    /// Number of input values: a `slices × dim` matrix.
    pub fn input_len(&self) -> usize {
        match self {
            ModelSpec::Parallel(p) => p.max_slices * p.dim,
            ModelSpec::Sequential(s) => s.height * s.width,
        }
    }

    pub fn input_shape(&self) -> (usize, usize) {
        match self {
            ModelSpec::Parallel(p) => (p.max_slices, p.dim),
            ModelSpec::Sequential(s) => (s.height, s.width),
        }
    }

    pub fn layers(&self) -> Result<Vec<Layer>, NeuralError> {
        let mut plan = Vec::new();
        let (features, dense, dropout) = match self {
            ModelSpec::Parallel(p) => {
                if p.filter_heights.is_empty() || p.n_filters == 0 || p.dim == 0 {
                    return Err(NeuralError::Config(
                        "parallel CNN needs filters and a positive width".into(),
                    ));
                }
                if let Some(&h) = p.filter_heights.iter().find(|&&h| h == 0 || h > p.max_slices) {
                    return Err(NeuralError::Config(format!(
                        "filter height {h} does not fit {} slices",
                        p.max_slices
                    )));
                }
                plan.push(Layer::ConvBank {
                    s: p.max_slices,
                    d: p.dim,
                    heights: p.filter_heights.clone(),
                    filters: p.n_filters,
                });
                let n = p.filter_heights.len() * p.n_filters;
                plan.push(Layer::Relu { n });
                (n, &p.dense, p.dropout)
            }
            ModelSpec::Sequential(s) => {
                if s.kernels.len() != s.channels.len() || s.kernels.is_empty() {
                    return Err(NeuralError::Config("one channel count per kernel is required".into()));
                }
                let (mut c, mut h, mut w) = (1, s.height, s.width);
                for (&k, &c_out) in s.kernels.iter().zip(&s.channels) {
                    if k == 0 || k > h || k > w || c_out == 0 {
                        return Err(NeuralError::Config(format!("kernel {k} does not fit {h}×{w}")));
                    }
                    plan.push(Layer::Conv2d {
                        c_in: c,
                        h,
                        w,
                        k,
                        c_out,
                    });
                    (c, h, w) = (c_out, h - k + 1, w - k + 1);
                    plan.push(Layer::Relu { n: c * h * w });
                    if s.pool > 1 {
                        if h / s.pool == 0 || w / s.pool == 0 {
                            return Err(NeuralError::Config(format!("pooling {} does not fit {h}×{w}", s.pool)));
                        }
                        plan.push(Layer::MaxPool2d { c, h, w, p: s.pool });
                        (h, w) = (h / s.pool, w / s.pool);
                    }
                }
                (c * h * w, &s.dense, s.dropout)
            }
        };
        if !(0.0..1.0).contains(&dropout) {
            return Err(NeuralError::Config(format!(
                "dropout must lie in [0, 1), got {dropout}"
            )));
        }
        let mut n_in = features;
        for (i, &n_out) in dense.iter().enumerate() {
            if n_out == 0 {
                return Err(NeuralError::Config("dense widths must be positive".into()));
            }
            plan.push(Layer::Dense { n_in, n_out });
            plan.push(Layer::Relu { n: n_out });
            if i == 0 && dropout > 0.0 {
                plan.push(Layer::Dropout { n: n_out, p: dropout });
            }
            n_in = n_out;
        }
        plan.push(Layer::Dense { n_in, n_out: 2 });
        Ok(plan)
    }

    pub fn n_params(&self) -> Result<usize, NeuralError> {
        Ok(self.layers()?.iter().map(Layer::n_params).sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// One full-width 1-D convolution per height followed by global max pooling, concatenated.
    ConvBank {
        s: usize,
        d: usize,
        heights: Vec<usize>,
        filters: usize,
    },
    Conv2d {
        c_in: usize,
        h: usize,
        w: usize,
        k: usize,
        c_out: usize,
    },
    MaxPool2d {
        c: usize,
        h: usize,
        w: usize,
        p: usize,
    },
    Dense {
        n_in: usize,
        n_out: usize,
    },
    Relu {
        n: usize,
    },
    Dropout {
        n: usize,
        p: f64,
    },
}

impl Layer {
    pub fn n_params(&self) -> usize {
        match *self {
            Layer::ConvBank {
                d,
                ref heights,
                filters,
                ..
            } => heights.iter().map(|h| filters * h * d + filters).sum(),
            Layer::Conv2d { c_in, k, c_out, .. } => c_out * c_in * k * k + c_out,
            Layer::Dense { n_in, n_out } => n_out * n_in + n_out,
            _ => 0,
        }
    }

    fn fan_in(&self, part: usize) -> usize {
        match *self {
            Layer::ConvBank { d, ref heights, .. } => heights[part] * d,
            Layer::Conv2d { c_in, k, .. } => c_in * k * k,
            Layer::Dense { n_in, .. } => n_in,
            _ => 1,
        }
    }

    /// `(weights, biases)` sub-blocks of this layer's parameter range.
    fn blocks(&self) -> Vec<(usize, usize)> {
        match *self {
            Layer::ConvBank {
                d,
                ref heights,
                filters,
                ..
            } => heights.iter().map(|h| (filters * h * d, filters)).collect(),
            Layer::Conv2d { c_in, k, c_out, .. } => vec![(c_out * c_in * k * k, c_out)],
            Layer::Dense { n_in, n_out } => vec![(n_out * n_in, n_out)],
            _ => Vec::new(),
        }
    }
}

/// Per-sample intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer, then the logits.
    acts: Vec<Vec<f64>>,
    /// Argmax indices for pooling layers, dropout masks for dropout layers.
    aux: Vec<Vec<usize>>,
    masks: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> [f64; 2] {
        let z = self.acts.last().expect("trace has output");
        [z[0], z[1]]
    }

    /// Which ReLUs are active and which positions won each max pool.
    pub fn signature(&self, layers: &[Layer]) -> Vec<usize> {
        let mut sig = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Relu { .. } => sig.extend(self.acts[i].iter().map(|&v| usize::from(v > 0.0))),
                Layer::ConvBank { .. } | Layer::MaxPool2d { .. } => sig.extend(&self.aux[i]),
                _ => {}
            }
        }
        sig
    }
}

/// Dropout handling for one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    /// One pre-drawn mask per dropout layer, entries `0` or `1 / (1 − p)`.
    Train(&'a [Vec<f64>]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    layers: Vec<Layer>,
    offsets: Vec<usize>,
    pub params: Vec<f64>,
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XCNN";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Model {
    /// Fan-in scaled uniform initialization: every parameter of a layer drawn from `U(−1/√fan_in, 1/√fan_in)`.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, NeuralError> {
        let layers = spec.layers()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut offsets = Vec::with_capacity(layers.len());
        for layer in &layers {
            offsets.push(params.len());
            for (part, (nw, nb)) in layer.blocks().into_iter().enumerate() {
                let bound = 1.0 / (layer.fan_in(part) as f64).sqrt();
                params.extend((0..nw + nb).map(|_| rng.random_range(-bound..bound)));
            }
        }
        Ok(Self {
            spec,
            layers,
            offsets,
            params,
        })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<f64>) -> Result<Self, NeuralError> {
        let mut model = Self::init(spec, 0)?;
        if params.len() != model.params.len() {
            return Err(NeuralError::Shape(format!(
                "model expects {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Sizes of the dropout masks a training pass needs.
    pub fn dropout_layers(&self) -> Vec<(usize, f64)> {
        self.layers
            .iter()
            .filter_map(|l| match *l {
                Layer::Dropout { n, p } => Some((n, p)),
                _ => None,
            })
            .collect()
    }

    pub fn forward(&self, input: &[f64], mode: Mode<'_>) -> Result<Trace, NeuralError> {
        if input.len() != self.spec.input_len() {
            return Err(NeuralError::Shape(format!(
                "input has {} values, model expects {}",
                input.len(),
                self.spec.input_len()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::new();
        let mut dropout_idx = 0;
        let mut x = input.to_vec();
        for (layer, &off) in self.layers.iter().zip(&self.offsets) {
            let p = &self.params[off..off + layer.n_params()];
            let (y, a) = match *layer {
                Layer::ConvBank {
                    s,
                    d,
                    ref heights,
                    filters,
                } => {
                    let mut out = Vec::with_capacity(heights.len() * filters);
                    let mut arg = Vec::with_capacity(heights.len() * filters);
                    let mut pos = 0;
                    for &h in heights {
                        let nw = filters * h * d;
                        let map = layers::conv1d(
                            &x,
                            s,
                            d,
                            &p[pos..pos + nw],
                            &p[pos + nw..pos + nw + filters],
                            h,
                            filters,
                        )?;
                        let (m, am) = layers::global_max(&map, s - h + 1, filters)?;
                        out.extend(m);
                        arg.extend(am);
                        pos += nw + filters;
                    }
                    (out, arg)
                }
                Layer::Conv2d { c_in, h, w, k, c_out } => {
                    let nw = c_out * c_in * k * k;
                    (
                        layers::conv2d(&x, c_in, h, w, &p[..nw], &p[nw..], k, c_out)?,
                        Vec::new(),
                    )
                }
                Layer::MaxPool2d { c, h, w, p: size } => layers::maxpool2d(&x, c, h, w, size)?,
                Layer::Dense { n_in, n_out } => (layers::dense(&x, &p[..n_in * n_out], &p[n_in * n_out..]), Vec::new()),
                Layer::Relu { .. } => (layers::relu(&x), Vec::new()),
                Layer::Dropout { n, .. } => match mode {
                    Mode::Eval => (x.clone(), Vec::new()),
                    Mode::Train(all) => {
                        let mask = all
                            .get(dropout_idx)
                            .ok_or_else(|| NeuralError::Shape("missing dropout mask".into()))?;
                        if mask.len() != n {
                            return Err(NeuralError::Shape(format!(
                                "dropout mask of {} for layer of {n}",
                                mask.len()
                            )));
                        }
                        dropout_idx += 1;
                        masks.push(mask.clone());
                        (x.iter().zip(mask).map(|(v, m)| v * m).collect(), Vec::new())
                    }
                },
            };
            acts.push(std::mem::replace(&mut x, y));
            aux.push(a);
        }
        acts.push(x);
        Ok(Trace { acts, aux, masks })
    }

    pub fn logits(&self, input: &[f64]) -> Result<[f64; 2], NeuralError> {
        Ok(self.forward(input, Mode::Eval)?.logits())
    }

    /// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂logits`.
    pub fn backward(&self, trace: &Trace, dlogits: [f64; 2], grad: &mut [f64]) {
        let mut g = dlogits.to_vec();
        let mut mask_idx = trace.masks.len();
        for (i, (layer, &off)) in self.layers.iter().zip(&self.offsets).enumerate().rev() {
            let x = &trace.acts[i];
            let np = layer.n_params();
            let p = &self.params[off..off + np];
            let gp = &mut grad[off..off + np];
            let need_input_grad = i > 0;
            let mut gx = vec![0.0; x.len()];
            match *layer {
                Layer::ConvBank {
                    s,
                    d,
                    ref heights,
                    filters,
                } => {
                    let mut pos = 0;
                    for (hi, &h) in heights.iter().enumerate() {
                        let nw = filters * h * d;
                        let l = s - h + 1;
                        let mut gmap = vec![0.0; l * filters];
                        for k in 0..filters {
                            let t = trace.aux[i][hi * filters + k];
                            gmap[t * filters + k] = g[hi * filters + k];
                        }
                        let (gw, rest) = gp[pos..pos + nw + filters].split_at_mut(nw);
                        let mut gxh = need_input_grad.then(|| vec![0.0; x.len()]);
                        layers::conv1d_backward(
                            x,
                            s,
                            d,
                            &p[pos..pos + nw],
                            h,
                            filters,
                            &gmap,
                            gw,
                            rest,
                            gxh.as_deref_mut(),
                        );
                        if let Some(gxh) = gxh {
                            for (a, b) in gx.iter_mut().zip(gxh) {
                                *a += b;
                            }
                        }
                        pos += nw + filters;
                    }
                }
                Layer::Conv2d { c_in, h, w, k, c_out } => {
                    let nw = c_out * c_in * k * k;
                    let (gw, gb) = gp.split_at_mut(nw);
                    layers::conv2d_backward(
                        x,
                        c_in,
                        h,
                        w,
                        &p[..nw],
                        k,
                        c_out,
                        &g,
                        gw,
                        gb,
                        need_input_grad.then_some(&mut gx[..]),
                    );
                }
                Layer::MaxPool2d { .. } => layers::scatter_max(&g, &trace.aux[i], &mut gx),
                Layer::Dense { n_in, n_out } => {
                    let (gw, gb) = gp.split_at_mut(n_in * n_out);
                    layers::dense_backward(
                        x,
                        &p[..n_in * n_out],
                        &g,
                        gw,
                        gb,
                        need_input_grad.then_some(&mut gx[..]),
                    );
                }
                Layer::Relu { .. } => layers::relu_backward(x, &g, &mut gx),
                Layer::Dropout { .. } => {
                    if trace.masks.is_empty() {
                        gx.copy_from_slice(&g);
                    } else {
                        mask_idx -= 1;
                        for ((a, &b), &m) in gx.iter_mut().zip(&g).zip(&trace.masks[mask_idx]) {
                            *a = b * m;
                        }
                    }
                }
            }
            if !need_input_grad {
                break;
            }
            g = gx;
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NeuralError> {
        let spec = serde_json::to_vec(&self.spec).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + spec.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(&spec);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NeuralError> {
        let bad = |m: &str| NeuralError::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a model checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let spec_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let spec_end = 12 + spec_len;
        if bytes.len() < spec_end + 8 {
            return Err(bad("truncated checkpoint header"));
        }
        let spec: ModelSpec = serde_json::from_slice(&bytes[12..spec_end]).map_err(|e| bad(&e.to_string()))?;
        let n = u64::from_le_bytes(bytes[spec_end..spec_end + 8].try_into().expect("8 bytes")) as usize;
        let body = &bytes[spec_end + 8..];
        if body.len() != n * 8 {
            return Err(bad(&format!(
                "expected {} parameter bytes, found {}",
                n * 8,
                body.len()
            )));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_params(spec, params)
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Positive-class probability after the softmax, in evaluation mode.
pub fn predict_proba_nn(model: &Model, input: &[f64]) -> Result<f64, NeuralError> {
    Ok(layers::softmax2(model.logits(input)?)[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_counts() {
        let parallel = ModelSpec::Parallel(ParallelCnnSpec::default()).n_params().unwrap();
        assert_eq!(parallel, 921_900 + 308_224 + 1_369_400 + 2_674);
        assert!((2_550_000..2_650_000).contains(&parallel));
        let sequential = ModelSpec::Sequential(SequentialCnnSpec::default()).n_params().unwrap();
        // 362×768 → conv 5, pool → conv 4, pool → conv 3, pool → 16×43×93.
        assert_eq!(
            sequential,
            156 + 1_552 + 2_320 + (16 * 43 * 93 * 119 + 119) + (119 * 84 + 84) + (84 * 2 + 2)
        );
        assert!((7_550_000..7_650_000).contains(&sequential));
    }

    fn small_parallel() -> ModelSpec {
        ModelSpec::Parallel(ParallelCnnSpec {
            max_slices: 6,
            dim: 4,
            filter_heights: vec![2, 3],
            n_filters: 3,
            dense: vec![5, 4],
            dropout: 0.5,
        })
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let m = Model::init(small_parallel(), 1).unwrap();
        let x: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let ones: Vec<Vec<f64>> = m.dropout_layers().iter().map(|&(n, _)| vec![1.0; n]).collect();
        assert_eq!(
            m.logits(&x).unwrap(),
            m.forward(&x, Mode::Train(&ones)).unwrap().logits()
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let m = Model::init(small_parallel(), 7).unwrap();
        let back = Model::from_bytes(&m.to_bytes().unwrap()).unwrap();
        assert_eq!(back, m);
        let x: Vec<f64> = (0..24).map(|i| i as f64 / 10.0).collect();
        assert_eq!(
            predict_proba_nn(&back, &x).unwrap().to_bits(),
            predict_proba_nn(&m, &x).unwrap().to_bits()
        );
        let mut bytes = m.to_bytes().unwrap();
        bytes.pop();
        assert!(matches!(Model::from_bytes(&bytes), Err(NeuralError::Checkpoint(_))));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let m = Model::init(small_parallel(), 0).unwrap();
        assert!(matches!(predict_proba_nn(&m, &[0.0; 5]), Err(NeuralError::Shape(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        let p = ParallelCnnSpec {
            filter_heights: vec![400],
            ..ParallelCnnSpec::default()
        };
        assert!(ModelSpec::Parallel(p).layers().is_err());
        let s = SequentialCnnSpec {
            height: 8,
            width: 8,
            ..SequentialCnnSpec::default()
        };
        assert!(ModelSpec::Sequential(s).layers().is_err());
    }
}
