//! Vanilla tanh RNN over uniformly attended inputs, used as a comparison
//! model:
//!
//! ```text
//! h_t = tanh(U x_t + W h_{t-1} + b)
//! o_t = V h_t + c
//! ŷ_t = softmax(o_t)
//! ```
//!
//! with `h_0 = 0` and `x_t` the mean of the rows of `d_t`.

use super::{Mode, Params, Prediction};
use crate::error::{Error, Result};
use crate::numerics::{dropout_mask, softmax_in_place, Mat, Rng};
use crate::series::{FeatureSequence, SeriesConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRnn {
    pub series: SeriesConfig,
    pub u: Mat,
    pub w: Mat,
    pub b: Mat,
    pub v: Mat,
    pub c: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineStep {
    /// Masked input actually fed to the cell.
    pub input: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub h: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineTrace {
    pub steps: Vec<BaselineStep>,
}

impl BaselineTrace {
    pub fn final_probs(&self) -> &[f64] {
        &self.steps.last().expect("non-empty trace").probs
    }
}

/// Row mean of `d`, i.e. attention fixed at `1/K` per row.
pub fn uniform_attend(d: &Mat) -> Vec<f64> {
    let k = d.rows().max(1) as f64;
    let mut x = vec![0.0; d.cols()];
    for i in 0..d.rows() {
        for (acc, v) in x.iter_mut().zip(d.row(i)) {
            *acc += v;
        }
    }
    x.iter_mut().for_each(|v| *v /= k);
    x
}

impl BaselineRnn {
    pub fn zeros(series: SeriesConfig, hidden: usize) -> Self {
        let n = series.posts_per_interval;
        BaselineRnn {
            series,
            u: Mat::zeros(hidden, n),
            w: Mat::zeros(hidden, hidden),
            b: Mat::zeros(hidden, 1),
            v: Mat::zeros(2, hidden),
            c: Mat::zeros(2, 1),
        }
    }

    pub fn new(series: SeriesConfig, hidden: usize, rng: &mut Rng) -> Self {
        let n = series.posts_per_interval;
        BaselineRnn {
            series,
            u: Mat::glorot(hidden, n, rng),
            w: Mat::glorot(hidden, hidden, rng),
            b: Mat::zeros(hidden, 1),
            v: Mat::glorot(2, hidden, rng),
            c: Mat::zeros(2, 1),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, seq: &FeatureSequence, mode: Mode, rng: &mut Rng) -> Result<BaselineTrace> {
        let want = (self.series.vocab_size, self.series.posts_per_interval);
        if seq.is_empty() {
            return Err(Error::Argument(format!("event {:?} has an empty sequence", seq.event_id)));
        }
        let mut h = vec![0.0; self.hidden_size()];
        let mut steps = Vec::with_capacity(seq.len());
        for d in &seq.matrices {
            if d.shape() != want {
                return Err(Error::shape(
                    "baseline_rnn_forward",
                    format!("input {}x{}", d.rows(), d.cols()),
                    format!("K x N = {}x{}", want.0, want.1),
                ));
            }
            let mut input = uniform_attend(d);
            if let Mode::Train { dropout } = mode {
                if dropout > 0.0 {
                    let mask = dropout_mask(rng, 1, input.len(), dropout)?;
                    for (x, m) in input.iter_mut().zip(mask.as_slice()) {
                        *x *= m;
                    }
                }
            }
            let mut z = self.b.as_slice().to_vec();
            self.u.mul_vec_acc(&input, &mut z);
            self.w.mul_vec_acc(&h, &mut z);
            let h_new: Vec<f64> = z.into_iter().map(f64::tanh).collect();
            let mut probs = self.c.as_slice().to_vec();
            self.v.mul_vec_acc(&h_new, &mut probs);
            softmax_in_place(&mut probs);
            steps.push(BaselineStep {
                input,
                h_prev: std::mem::replace(&mut h, h_new.clone()),
                h: h_new,
                probs,
            });
        }
        Ok(BaselineTrace { steps })
    }

    pub fn forward_infer(&self, seq: &FeatureSequence) -> Result<BaselineTrace> {
        self.forward(seq, Mode::Infer, &mut Rng::new(0))
    }

    pub fn predict(&self, seq: &FeatureSequence) -> Result<Prediction> {
        Ok(Prediction::from_probs(self.forward_infer(seq)?.final_probs()))
    }
}

impl Params for BaselineRnn {
    fn tensors(&self) -> Vec<(String, &Mat)> {
        vec![
            ("rnn.U".into(), &self.u),
            ("rnn.W".into(), &self.w),
            ("rnn.b".into(), &self.b),
            ("rnn.V".into(), &self.v),
            ("rnn.c".into(), &self.c),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        vec![
            ("rnn.U".into(), &mut self.u),
            ("rnn.W".into(), &mut self.w),
            ("rnn.b".into(), &mut self.b),
            ("rnn.V".into(), &mut self.v),
            ("rnn.c".into(), &mut self.c),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn series() -> SeriesConfig {
        SeriesConfig {
            posts_per_interval: 3,
            min_series_len: 2,
            vocab_size: 4,
        }
    }

    fn seq(rng: &mut Rng, tau: usize) -> FeatureSequence {
        FeatureSequence {
            event_id: "x".into(),
            label: Label::NonRumor,
            matrices: (0..tau)
                .map(|_| Mat::from_vec(4, 3, (0..12).map(|_| rng.uniform(0.0, 2.0)).collect()).unwrap())
                .collect(),
        }
    }

    #[test]
    fn zero_parameters_predict_half() {
        let m = BaselineRnn::zeros(series(), 3);
        let tr = m.forward_infer(&seq(&mut Rng::new(1), 3)).unwrap();
        assert!(tr.steps.iter().all(|s| s.probs == [0.5, 0.5]));
    }

    #[test]
    fn first_step_ignores_recurrence() {
        let mut rng = Rng::new(4);
        let mut m = BaselineRnn::new(series(), 3, &mut rng);
        let s = seq(&mut rng, 2);
        let h1 = m.forward_infer(&s).unwrap().steps[0].h.clone();
        m.w = Mat::glorot(3, 3, &mut rng);
        assert_eq!(m.forward_infer(&s).unwrap().steps[0].h, h1);
        let mut z = m.b.as_slice().to_vec();
        m.u.mul_vec_acc(&uniform_attend(&s.matrices[0]), &mut z);
        let direct: Vec<f64> = z.into_iter().map(f64::tanh).collect();
        assert_eq!(h1, direct);
    }

    #[test]
    fn uniform_attend_is_row_mean() {
        let d = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(uniform_attend(&d), [2.0, 4.0]);
    }
}
