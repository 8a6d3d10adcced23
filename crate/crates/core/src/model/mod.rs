//! Stacked peephole LSTM with location-softmax soft attention over the
//! word rows of each input matrix, data-driven state initialisation, a
//! sigmoid hidden-layer classifier, and a vanilla RNN baseline.

pub mod baseline;
pub mod checkpoint;
mod lstm;

pub use lstm::{LstmCache, LstmLayer};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::numerics::{dropout_mask, sigmoid, softmax, softmax_in_place, Mat, Rng};
use crate::series::{FeatureSequence, SeriesConfig};

/// Named access to every learnable tensor. Gradients and optimizer moments
/// reuse the owning type as their container.
pub trait Params: Clone {
    fn tensors(&self) -> Vec<(String, &Mat)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m) in z.tensors_mut() {
            m.fill(0.0);
        }
        z
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    fn sum_sq(&self) -> f64 {
        self.tensors().iter().map(|(_, m)| m.sum_sq()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, m) in self.tensors() {
            out.extend_from_slice(m.as_slice());
        }
        out
    }

    fn set_flat(&mut self, values: &[f64]) {
        let mut off = 0;
        for (_, m) in self.tensors_mut() {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        assert_eq!(off, values.len(), "flat parameter length");
    }

    /// `self += scale · other`, tensors paired by position.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let theirs = other.tensors();
        for ((_, mine), (_, t)) in self.tensors_mut().into_iter().zip(theirs) {
            for (a, b) in mine.as_mut_slice().iter_mut().zip(t.as_slice()) {
                *a += scale * b;
            }
        }
    }

    fn scale_all(&mut self, s: f64) {
        for (_, m) in self.tensors_mut() {
            m.scale(s);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub series: SeriesConfig,
    /// Hidden sizes bottom to top.
    pub layers: Vec<usize>,
    pub init_hidden: usize,
    pub classifier_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            series: SeriesConfig::default(),
            layers: vec![1024, 512, 64],
            init_hidden: 64,
            classifier_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.series.validate()?;
        if self.layers.is_empty() || self.layers.contains(&0) {
            return Err(Error::Validation("layers must be non-empty positive sizes".into()));
        }
        if self.init_hidden == 0 || self.classifier_hidden == 0 {
            return Err(Error::Validation("init_hidden and classifier_hidden must be >= 1".into()));
        }
        Ok(())
    }

    pub fn top_hidden(&self) -> usize {
        *self.layers.last().expect("validated non-empty")
    }
}

/// Single-hidden-layer perceptron with tanh hidden units and linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

impl Mlp {
    fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            w1: Mat::zeros(hidden, input),
            b1: Mat::zeros(hidden, 1),
            w2: Mat::zeros(output, hidden),
            b2: Mat::zeros(output, 1),
        }
    }

    fn init(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Mlp {
            w1: Mat::glorot(hidden, input, rng),
            b1: Mat::zeros(hidden, 1),
            w2: Mat::glorot(output, hidden, rng),
            b2: Mat::zeros(output, 1),
        }
    }

    /// Returns `(hidden activations, output)`.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut r = self.b1.as_slice().to_vec();
        self.w1.mul_vec_acc(x, &mut r);
        r.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = self.b2.as_slice().to_vec();
        self.w2.mul_vec_acc(&r, &mut out);
        (r, out)
    }

    /// Accumulates parameter gradients given `dout`; the input gradient is
    /// not needed since the input is data.
    pub(crate) fn backward(&self, x: &[f64], hidden: &[f64], dout: &[f64], grads: &mut Mlp) {
        grads.w2.add_outer(dout, hidden);
        grads.b2.add_assign_slice(dout);
        let mut dr = vec![0.0; hidden.len()];
        self.w2.t_mul_vec_acc(dout, &mut dr);
        for (d, r) in dr.iter_mut().zip(hidden) {
            *d *= 1.0 - r * r;
        }
        grads.w1.add_outer(&dr, x);
        grads.b1.add_assign_slice(&dr);
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        for (n, m) in [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)] {
            out.push((format!("{prefix}.{n}"), m));
        }
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        for (n, m) in [
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ] {
            out.push((format!("{prefix}.{n}"), m));
        }
    }
}

/// Per-layer initial-state networks `c₀ = f_c(m)`, `h₀ = f_h(m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InitNets {
    pub fc: Mlp,
    pub fh: Mlp,
}

/// Location-softmax weights; row `i` scores word position `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub w: Mat,
}

/// Sigmoid hidden layer followed by a 2-way softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub layers: Vec<LstmLayer>,
    pub attention: Attention,
    pub init: Vec<InitNets>,
    pub classifier: Classifier,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Inverted dropout at the given rate on non-recurrent inputs.
    Train { dropout: f64 },
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitCache {
    pub fc_hidden: Vec<f64>,
    pub fh_hidden: Vec<f64>,
    pub h0: Vec<f64>,
    pub c0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    /// `a_t`, the attention over word rows used for this step's input.
    pub attention: Vec<f64>,
    /// `x_t`, the attended (unmasked) input.
    pub attended: Vec<f64>,
    /// Dropout mask on each layer's input, `None` when inactive.
    pub masks: Vec<Option<Vec<f64>>>,
    pub layers: Vec<LstmCache>,
    pub cls_mask: Option<Vec<f64>>,
    pub cls_input: Vec<f64>,
    pub cls_hidden: Vec<f64>,
    /// `ŷ_t` as `[non-rumor, rumor]`.
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub mean_input: Vec<f64>,
    pub init: Vec<InitCache>,
    pub steps: Vec<StepTrace>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_probs(&self) -> &[f64] {
        &self.steps.last().expect("non-empty trace").probs
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub class: Label,
    /// Rumor probability at the final step.
    pub score: f64,
}

impl Prediction {
    /// Ties at 0.5 resolve to rumor.
    pub fn from_probs(probs: &[f64]) -> Self {
        let score = probs[Label::Rumor.index()];
        Prediction {
            class: if score >= 0.5 { Label::Rumor } else { Label::NonRumor },
            score,
        }
    }
}

pub fn location_softmax(att: &Attention, h_top: &[f64]) -> Result<Vec<f64>> {
    let logits = att.w.mul_vec(h_top)?;
    softmax(&logits)
}

/// `x = Σᵢ a[i] · d[i, ·]`.
pub fn attend(a: &[f64], d: &Mat) -> Result<Vec<f64>> {
    if a.len() != d.rows() {
        return Err(Error::shape(
            "attend",
            format!("attention {}", a.len()),
            format!("matrix {}x{}", d.rows(), d.cols()),
        ));
    }
    d.t_mul_vec(a)
}

/// Column-wise mean over every row of every step.
pub fn mean_input(seq: &FeatureSequence) -> Vec<f64> {
    let (k, n) = seq.shape().unwrap_or((0, 0));
    let mut m = vec![0.0; n];
    for d in &seq.matrices {
        for i in 0..k {
            for (acc, v) in m.iter_mut().zip(d.row(i)) {
                *acc += v;
            }
        }
    }
    let denom = (k * seq.len()).max(1) as f64;
    m.iter_mut().for_each(|v| *v /= denom);
    m
}

fn mask_vec(rng: &mut Rng, len: usize, mode: Mode) -> Result<Option<Vec<f64>>> {
    match mode {
        Mode::Train { dropout } if dropout > 0.0 => {
            Ok(Some(dropout_mask(rng, 1, len, dropout)?.into_vec()))
        }
        Mode::Train { .. } | Mode::Infer => Ok(None),
    }
}

fn apply_mask(v: &[f64], mask: &Option<Vec<f64>>) -> Vec<f64> {
    match mask {
        Some(m) => v.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => v.to_vec(),
    }
}

impl Model {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, None))
    }

    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, Some(rng)))
    }

    fn build(config: ModelConfig, mut rng: Option<&mut Rng>) -> Self {
        let n = config.series.posts_per_interval;
        let k = config.series.vocab_size;
        let top = config.top_hidden();
        let mut layers = Vec::new();
        let mut init = Vec::new();
        let mut input = n;
        for &h in &config.layers {
            match rng.as_deref_mut() {
                Some(r) => {
                    layers.push(LstmLayer::init(input, h, r));
                    init.push(InitNets {
                        fc: Mlp::init(n, config.init_hidden, h, r),
                        fh: Mlp::init(n, config.init_hidden, h, r),
                    });
                }
                None => {
                    layers.push(LstmLayer::zeros(input, h));
                    init.push(InitNets {
                        fc: Mlp::zeros(n, config.init_hidden, h),
                        fh: Mlp::zeros(n, config.init_hidden, h),
                    });
                }
            }
            input = h;
        }
        let hc = config.classifier_hidden;
        let (attention, classifier) = match rng {
            Some(r) => (
                Attention { w: Mat::glorot(k, top, r) },
                Classifier {
                    w1: Mat::glorot(hc, top, r),
                    b1: Mat::zeros(hc, 1),
                    w2: Mat::glorot(2, hc, r),
                    b2: Mat::zeros(2, 1),
                },
            ),
            None => (
                Attention { w: Mat::zeros(k, top) },
                Classifier {
                    w1: Mat::zeros(hc, top),
                    b1: Mat::zeros(hc, 1),
                    w2: Mat::zeros(2, hc),
                    b2: Mat::zeros(2, 1),
                },
            ),
        };
        Model {
            config,
            layers,
            attention,
            init,
            classifier,
        }
    }

    pub fn check_input(&self, seq: &FeatureSequence) -> Result<()> {
        let want = (self.config.series.vocab_size, self.config.series.posts_per_interval);
        if seq.is_empty() {
            return Err(Error::Argument(format!("event {:?} has an empty sequence", seq.event_id)));
        }
        for m in &seq.matrices {
            if m.shape() != want {
                return Err(Error::shape(
                    "forward_event",
                    format!("input {}x{}", m.rows(), m.cols()),
                    format!("model K x N = {}x{}", want.0, want.1),
                ));
            }
        }
        Ok(())
    }

    /// Initial `(h₀, c₀)` per layer from the mean input, and `a₁` from the
    /// top layer's `h₀`.
    pub fn init_state(&self, seq: &FeatureSequence) -> Result<(Vec<InitCache>, Vec<f64>)> {
        self.check_input(seq)?;
        let m = mean_input(seq);
        let caches: Vec<InitCache> = self
            .init
            .iter()
            .map(|nets| {
                let (fc_hidden, c0) = nets.fc.forward(&m);
                let (fh_hidden, h0) = nets.fh.forward(&m);
                InitCache {
                    fc_hidden,
                    fh_hidden,
                    h0,
                    c0,
                }
            })
            .collect();
        let a1 = location_softmax(&self.attention, &caches.last().expect("layers").h0)?;
        Ok((caches, a1))
    }

    fn classify(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = &self.classifier;
        let mut s = c.b1.as_slice().to_vec();
        c.w1.mul_vec_acc(input, &mut s);
        s.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut logits = c.b2.as_slice().to_vec();
        c.w2.mul_vec_acc(&s, &mut logits);
        softmax_in_place(&mut logits);
        (s, logits)
    }

    /// Runs the full recurrence over `seq`. `rng` is only drawn from in
    /// train mode with a positive dropout rate.
    pub fn forward(&self, seq: &FeatureSequence, mode: Mode, rng: &mut Rng) -> Result<ForwardTrace> {
        let (init, mut a) = self.init_state(seq)?;
        let mean = mean_input(seq);
        let mut h: Vec<Vec<f64>> = init.iter().map(|c| c.h0.clone()).collect();
        let mut c: Vec<Vec<f64>> = init.iter().map(|c| c.c0.clone()).collect();
        let mut steps = Vec::with_capacity(seq.len());
        let last = seq.len() - 1;

        for (t, d) in seq.matrices.iter().enumerate() {
            let x = d.t_mul_vec(&a)?;
            let mut masks = Vec::with_capacity(self.layers.len());
            let mut caches = Vec::with_capacity(self.layers.len());
            let mut below = x.clone();
            for (l, layer) in self.layers.iter().enumerate() {
                let mask = mask_vec(rng, below.len(), mode)?;
                let input = apply_mask(&below, &mask);
                let cache = layer.forward(input, &h[l], &c[l]);
                h[l] = cache.h.clone();
                c[l] = cache.c.clone();
                below = cache.h.clone();
                masks.push(mask);
                caches.push(cache);
            }
            let cls_mask = mask_vec(rng, below.len(), mode)?;
            let cls_input = apply_mask(&below, &cls_mask);
            let (cls_hidden, probs) = self.classify(&cls_input);

            let next_a = if t < last {
                location_softmax(&self.attention, &below)?
            } else {
                Vec::new()
            };
            steps.push(StepTrace {
                attention: std::mem::replace(&mut a, next_a),
                attended: x,
                masks,
                layers: caches,
                cls_mask,
                cls_input,
                cls_hidden,
                probs,
            });
        }
        Ok(ForwardTrace {
            mean_input: mean,
            init,
            steps,
        })
    }

    pub fn forward_infer(&self, seq: &FeatureSequence) -> Result<ForwardTrace> {
        // never drawn from in inference mode
        let mut rng = Rng::new(0);
        self.forward(seq, Mode::Infer, &mut rng)
    }

    pub fn predict(&self, seq: &FeatureSequence) -> Result<Prediction> {
        let trace = self.forward_infer(seq)?;
        Ok(Prediction::from_probs(trace.final_probs()))
    }
}

impl Params for Model {
    fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (n, m) in layer.tensors() {
                out.push((format!("layer{l}.{n}"), m));
            }
        }
        out.push(("att.W".to_string(), &self.attention.w));
        for (l, nets) in self.init.iter().enumerate() {
            nets.fc.tensors(&format!("init.l{l}.fc"), &mut out);
            nets.fh.tensors(&format!("init.l{l}.fh"), &mut out);
        }
        let c = &self.classifier;
        for (n, m) in [("w1", &c.w1), ("b1", &c.b1), ("w2", &c.w2), ("b2", &c.b2)] {
            out.push((format!("cls.{n}"), m));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (n, m) in layer.tensors_mut() {
                out.push((format!("layer{l}.{n}"), m));
            }
        }
        out.push(("att.W".to_string(), &mut self.attention.w));
        for (l, nets) in self.init.iter_mut().enumerate() {
            nets.fc.tensors_mut(&format!("init.l{l}.fc"), &mut out);
            nets.fh.tensors_mut(&format!("init.l{l}.fh"), &mut out);
        }
        let c = &mut self.classifier;
        for (n, m) in [
            ("w1", &mut c.w1),
            ("b1", &mut c.b1),
            ("w2", &mut c.w2),
            ("b2", &mut c.b2),
        ] {
            out.push((format!("cls.{n}"), m));
        }
        out
    }
}
