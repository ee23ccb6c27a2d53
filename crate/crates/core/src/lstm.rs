//! Stacked LSTM classifier: gate equations, dense stack and softmax head.
//!
//! Each LSTM layer applies, per timestep, to the concatenation `z = [h_{t-1}, x_t]`:
//!
//! ```text
//! i_t = σ(W_i z + b_i)    f_t = σ(W_f z + b_f)    o_t = σ(W_o z + b_o)
//! C_t = f_t * C_{t-1} + i_t * tanh(W_C z + b_C)
//! h_t = o_t * tanh(C_t)
//! ```
//!
//! Layers pass their full hidden sequence upward; only the last timestep of the
//! top layer reaches the dense stack, whose final layer is a softmax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::pose::{FeatureConfig, Label, SequenceWindow};

pub const NUM_CLASSES: usize = 2;

pub type ClassProbs = [f64; NUM_CLASSES];

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

/// Numerically safe softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest probability; ties go to the lower index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn predicted_label(probs: &ClassProbs) -> Label {
    Label::from_index(argmax(probs)).expect("two-class output")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Candidate,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub w_c: Matrix,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_c: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = Matrix::zeros(hidden, hidden + input);
        Self {
            w_i: w.clone(),
            w_f: w.clone(),
            w_o: w.clone(),
            w_c: w,
            b_i: vec![0.0; hidden],
            b_f: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
            b_c: vec![0.0; hidden],
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.b_i.len()
    }

    pub fn input_size(&self) -> usize {
        self.w_i.cols().saturating_sub(self.hidden_size())
    }

    pub fn gate(&self, g: Gate) -> (&Matrix, &[f64]) {
        match g {
            Gate::Input => (&self.w_i, &self.b_i),
            Gate::Forget => (&self.w_f, &self.b_f),
            Gate::Output => (&self.w_o, &self.b_o),
            Gate::Candidate => (&self.w_c, &self.b_c),
        }
    }

    fn gate_mut(&mut self, g: Gate) -> (&mut Matrix, &mut Vec<f64>) {
        match g {
            Gate::Input => (&mut self.w_i, &mut self.b_i),
            Gate::Forget => (&mut self.w_f, &mut self.b_f),
            Gate::Output => (&mut self.w_o, &mut self.b_o),
            Gate::Candidate => (&mut self.w_c, &mut self.b_c),
        }
    }

    fn validate(&self, layer: usize) -> Result<()> {
        let h = self.hidden_size();
        let cols = self.w_i.cols();
        if h == 0 || cols <= h {
            return Err(Error::Shape(format!("lstm layer {layer}: empty hidden or input width")));
        }
        for g in Gate::ALL {
            let (w, b) = self.gate(g);
            if w.rows() != h || w.cols() != cols || b.len() != h {
                return Err(Error::Shape(format!(
                    "lstm layer {layer} gate {g:?}: weight {}x{}, bias {} (expected {h}x{cols}, {h})",
                    w.rows(),
                    w.cols(),
                    b.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayerParams {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayerParams {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            w: Matrix::zeros(output, input),
            b: vec![0.0; output],
            activation,
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn output_size(&self) -> usize {
        self.w.rows()
    }

    /// Returns `(pre_activation, output)`.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut pre = vec![0.0; self.output_size()];
        self.w.affine_into(x, &self.b, &mut pre);
        let out = match self.activation {
            Activation::Relu => pre.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Softmax => softmax(&pre),
            Activation::Identity => pre.clone(),
        };
        (pre, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Intermediate values of one LSTM timestep, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    /// `[h_{t-1}, x_t]`
    pub z: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    /// candidate `tanh(W_C z + b_C)`
    pub g: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

fn step_cached(p: &LstmLayerParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
    let hidden = p.hidden_size();
    let mut z = Vec::with_capacity(hidden + x.len());
    z.extend_from_slice(h_prev);
    z.extend_from_slice(x);

    let mut i = vec![0.0; hidden];
    let mut f = vec![0.0; hidden];
    let mut o = vec![0.0; hidden];
    let mut g = vec![0.0; hidden];
    p.w_i.affine_into(&z, &p.b_i, &mut i);
    p.w_f.affine_into(&z, &p.b_f, &mut f);
    p.w_o.affine_into(&z, &p.b_o, &mut o);
    p.w_c.affine_into(&z, &p.b_c, &mut g);
    for k in 0..hidden {
        i[k] = sigmoid(i[k]);
        f[k] = sigmoid(f[k]);
        o[k] = sigmoid(o[k]);
        g[k] = g[k].tanh();
    }
    let c: Vec<f64> = (0..hidden).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = (0..hidden).map(|k| o[k] * tanh_c[k]).collect();
    StepCache {
        z,
        i,
        f,
        o,
        g,
        c_prev: c_prev.to_vec(),
        c,
        tanh_c,
        h,
    }
}

pub fn lstm_cell_step(p: &LstmLayerParams, x: &[f64], s: &CellState) -> Result<CellState> {
    let hidden = p.hidden_size();
    if x.len() != p.input_size() {
        return Err(Error::Dimension {
            context: "lstm input",
            expected: p.input_size(),
            found: x.len(),
        });
    }
    if s.h.len() != hidden || s.c.len() != hidden {
        return Err(Error::Dimension {
            context: "lstm state",
            expected: hidden,
            found: if s.h.len() != hidden { s.h.len() } else { s.c.len() },
        });
    }
    let cache = step_cached(p, x, &s.h, &s.c);
    Ok(CellState { h: cache.h, c: cache.c })
}

fn check_sequence<S: AsRef<[f64]>>(seq: &[S], width: usize) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::Config("empty input sequence".into()));
    }
    if let Some(bad) = seq.iter().find(|x| x.as_ref().len() != width) {
        return Err(Error::Dimension {
            context: "sequence width",
            expected: width,
            found: bad.as_ref().len(),
        });
    }
    Ok(())
}

fn layer_forward_cached<S: AsRef<[f64]>>(p: &LstmLayerParams, seq: &[S]) -> Vec<StepCache> {
    let hidden = p.hidden_size();
    let zero = vec![0.0; hidden];
    let mut steps: Vec<StepCache> = Vec::with_capacity(seq.len());
    for x in seq {
        let step = match steps.last() {
            Some(prev) => step_cached(p, x.as_ref(), &prev.h, &prev.c),
            None => step_cached(p, x.as_ref(), &zero, &zero),
        };
        steps.push(step);
    }
    steps
}

/// Runs one LSTM layer from a zero state and returns `h_1 .. h_T`.
pub fn lstm_layer_forward<S: AsRef<[f64]>>(p: &LstmLayerParams, seq: &[S]) -> Result<Vec<Vec<f64>>> {
    check_sequence(seq, p.input_size())?;
    Ok(layer_forward_cached(p, seq).into_iter().map(|s| s.h).collect())
}

/// Architecture of the stacked network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub input_width: usize,
    pub lstm_hidden: Vec<usize>,
    /// Widths of the dense layers; the last equals the class count.
    pub dense_widths: Vec<usize>,
    pub features: FeatureConfig,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        let features = FeatureConfig::default();
        Self {
            input_width: features.width(),
            lstm_hidden: vec![64, 128, 64],
            dense_widths: vec![64, 32, NUM_CLASSES],
            features,
        }
    }
}

impl ArchitectureConfig {
    pub fn for_features(features: FeatureConfig) -> Self {
        Self {
            input_width: features.width(),
            features,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        if self.lstm_hidden.is_empty() || self.lstm_hidden.contains(&0) {
            return Err(Error::Config("LSTM widths must be non-empty and positive".into()));
        }
        if self.dense_widths.is_empty() || self.dense_widths.contains(&0) {
            return Err(Error::Config("dense widths must be non-empty and positive".into()));
        }
        if self.dense_widths.last() != Some(&NUM_CLASSES) {
            return Err(Error::Config(format!(
                "final dense width must equal the class count ({NUM_CLASSES})"
            )));
        }
        Ok(())
    }
}

/// Architecture metadata stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub input_width: usize,
    pub lstm_hidden: Vec<usize>,
    pub dense_widths: Vec<usize>,
    pub num_classes: usize,
    pub features: FeatureConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub descriptor: ModelDescriptor,
    pub lstm_layers: Vec<LstmLayerParams>,
    pub dense_layers: Vec<DenseLayerParams>,
}

impl ModelParams {
    /// Assembles a model from explicit layers, deriving the descriptor.
    pub fn from_layers(
        lstm_layers: Vec<LstmLayerParams>,
        dense_layers: Vec<DenseLayerParams>,
        features: FeatureConfig,
        seed: u64,
    ) -> Result<Self> {
        let descriptor = ModelDescriptor {
            input_width: lstm_layers.first().map_or(0, |l| l.input_size()),
            lstm_hidden: lstm_layers.iter().map(|l| l.hidden_size()).collect(),
            dense_widths: dense_layers.iter().map(|d| d.output_size()).collect(),
            num_classes: NUM_CLASSES,
            features,
            seed,
        };
        let m = Self {
            descriptor,
            lstm_layers,
            dense_layers,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn input_width(&self) -> usize {
        self.descriptor.input_width
    }

    /// Checks that layer widths chain, the descriptor matches the weights,
    /// the head is a single final softmax over two classes and every entry
    /// is finite.
    pub fn validate(&self) -> Result<()> {
        let d = &self.descriptor;
        if d.num_classes != NUM_CLASSES {
            return Err(Error::Shape(format!("descriptor declares {} classes", d.num_classes)));
        }
        if self.lstm_layers.is_empty() || self.dense_layers.is_empty() {
            return Err(Error::Shape("model needs at least one LSTM and one dense layer".into()));
        }
        let mut width = d.input_width;
        for (k, layer) in self.lstm_layers.iter().enumerate() {
            layer.validate(k)?;
            if layer.input_size() != width {
                return Err(Error::Shape(format!(
                    "lstm layer {k} expects input {}, previous width is {width}",
                    layer.input_size()
                )));
            }
            width = layer.hidden_size();
        }
        let last = self.dense_layers.len() - 1;
        for (k, layer) in self.dense_layers.iter().enumerate() {
            if layer.b.len() != layer.output_size() || layer.output_size() == 0 {
                return Err(Error::Shape(format!("dense layer {k}: bias/weight mismatch")));
            }
            if layer.input_size() != width {
                return Err(Error::Shape(format!(
                    "dense layer {k} expects input {}, previous width is {width}",
                    layer.input_size()
                )));
            }
            if (layer.activation == Activation::Softmax) != (k == last) {
                return Err(Error::Shape(format!(
                    "dense layer {k}: softmax must appear exactly once, in the final layer"
                )));
            }
            width = layer.output_size();
        }
        if width != d.num_classes {
            return Err(Error::Shape(format!(
                "final dense width {width} does not match {} classes",
                d.num_classes
            )));
        }
        let lstm_hidden: Vec<usize> = self.lstm_layers.iter().map(|l| l.hidden_size()).collect();
        let dense_widths: Vec<usize> = self.dense_layers.iter().map(|l| l.output_size()).collect();
        if lstm_hidden != d.lstm_hidden || dense_widths != d.dense_widths {
            return Err(Error::Shape("descriptor widths disagree with weights".into()));
        }
        if self.param_slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Shape("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Every parameter buffer in a fixed order: per LSTM layer the gates
    /// (weights then bias, in i, f, o, C order), then per dense layer W, b.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.lstm_layers {
            for g in Gate::ALL {
                let (w, b) = l.gate(g);
                out.push(w.as_slice());
                out.push(b);
            }
        }
        for d in &self.dense_layers {
            out.push(d.w.as_slice());
            out.push(&d.b);
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.lstm_layers {
            let LstmLayerParams {
                w_i,
                w_f,
                w_o,
                w_c,
                b_i,
                b_f,
                b_o,
                b_c,
            } = l;
            out.push(w_i.as_mut_slice());
            out.push(b_i);
            out.push(w_f.as_mut_slice());
            out.push(b_f);
            out.push(w_o.as_mut_slice());
            out.push(b_o);
            out.push(w_c.as_mut_slice());
            out.push(b_c);
        }
        for d in &mut self.dense_layers {
            out.push(d.w.as_mut_slice());
            out.push(&mut d.b);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Same shapes, all entries zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.param_slices_mut() {
            s.fill(0.0);
        }
        z
    }

    pub fn lstm_gate_mut(&mut self, layer: usize, gate: Gate) -> (&mut Matrix, &mut Vec<f64>) {
        self.lstm_layers[layer].gate_mut(gate)
    }
}

/// Cached activations of a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub lstm: Vec<Vec<StepCache>>,
    /// Per dense layer: `(input, pre_activation, output)`.
    pub dense: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    pub probs: ClassProbs,
}

/// Forward pass over a raw sequence, keeping all intermediates.
pub fn forward_traced<S: AsRef<[f64]>>(m: &ModelParams, seq: &[S]) -> Result<ForwardTrace> {
    check_sequence(seq, m.input_width())?;
    let mut lstm = Vec::with_capacity(m.lstm_layers.len());
    let first = layer_forward_cached(&m.lstm_layers[0], seq);
    lstm.push(first);
    for layer in &m.lstm_layers[1..] {
        let below: Vec<&[f64]> = lstm
            .last()
            .unwrap()
            .iter()
            .map(|s: &StepCache| s.h.as_slice())
            .collect();
        lstm.push(layer_forward_cached(layer, &below));
    }
    let mut x = lstm.last().unwrap().last().unwrap().h.clone();
    let mut dense = Vec::with_capacity(m.dense_layers.len());
    for layer in &m.dense_layers {
        let (pre, out) = layer.forward(&x);
        dense.push((x, pre, out.clone()));
        x = out;
    }
    let probs = [x[0], x[1]];
    Ok(ForwardTrace { lstm, dense, probs })
}

/// Class probabilities for a raw feature sequence.
pub fn forward_sequence<S: AsRef<[f64]>>(m: &ModelParams, seq: &[S]) -> Result<ClassProbs> {
    check_sequence(seq, m.input_width())?;
    let mut hs: Vec<Vec<f64>> = seq.iter().map(|x| x.as_ref().to_vec()).collect();
    for layer in &m.lstm_layers {
        hs = layer_forward_cached(layer, &hs).into_iter().map(|s| s.h).collect();
    }
    let mut x = hs.pop().expect("non-empty sequence");
    for layer in &m.dense_layers {
        x = layer.forward(&x).1;
    }
    Ok([x[0], x[1]])
}

pub fn model_forward(m: &ModelParams, w: &SequenceWindow) -> Result<ClassProbs> {
    if w.width() != m.input_width() {
        return Err(Error::Dimension {
            context: "window feature width",
            expected: m.input_width(),
            found: w.width(),
        });
    }
    forward_sequence(m, w.frames())
}

/// Glorot-uniform weights, zero biases except forget-gate biases of 1.0.
pub fn init_model(cfg: &ArchitectureConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |w: &mut Matrix| {
        let r = (6.0 / (w.cols() + w.rows()) as f64).sqrt();
        let dist = Uniform::new(-r, r);
        for v in w.as_mut_slice() {
            *v = dist.sample(&mut rng);
        }
    };

    let mut lstm_layers = Vec::with_capacity(cfg.lstm_hidden.len());
    let mut width = cfg.input_width;
    for &hidden in &cfg.lstm_hidden {
        let mut layer = LstmLayerParams::zeros(width, hidden);
        for g in Gate::ALL {
            fill(layer.gate_mut(g).0);
        }
        layer.b_f.fill(1.0);
        lstm_layers.push(layer);
        width = hidden;
    }
    let mut dense_layers = Vec::with_capacity(cfg.dense_widths.len());
    let last = cfg.dense_widths.len() - 1;
    for (k, &out) in cfg.dense_widths.iter().enumerate() {
        let act = if k == last {
            Activation::Softmax
        } else {
            Activation::Relu
        };
        let mut layer = DenseLayerParams::zeros(width, out, act);
        fill(&mut layer.w);
        dense_layers.push(layer);
        width = out;
    }
    ModelParams::from_layers(lstm_layers, dense_layers, cfg.features, seed)
}
