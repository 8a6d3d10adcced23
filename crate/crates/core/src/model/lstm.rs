use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Mat, Rng};

/// One peephole LSTM layer.
///
/// Gate pre-activations (`D` = input size, `H` = hidden size):
///
/// ```text
/// i = σ(Ui h₋ + Wi x + Vi c₋ + bi)
/// f = σ(Uf h₋ + Wf x + Vf c₋ + bf)
/// c = f ⊙ c₋ + i ⊙ tanh(Uc h₋ + Wc x + bc)
/// o = σ(Uo h₋ + Wo x + Vo c + bo)
/// h = o ⊙ tanh(c)
/// ```
///
/// The candidate has no peephole.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub ui: Mat,
    pub uf: Mat,
    pub uc: Mat,
    pub uo: Mat,
    pub wi: Mat,
    pub wf: Mat,
    pub wc: Mat,
    pub wo: Mat,
    pub bi: Mat,
    pub bf: Mat,
    pub bc: Mat,
    pub bo: Mat,
    pub vi: Mat,
    pub vf: Mat,
    pub vo: Mat,
}

/// Everything one layer needs from a forward step to run backward.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCache {
    pub input: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// Gradients leaving a layer step.
pub struct LstmStepGrads {
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub input: Vec<f64>,
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let hh = || Mat::zeros(hidden, hidden);
        let hd = || Mat::zeros(hidden, input);
        let b = || Mat::zeros(hidden, 1);
        LstmLayer {
            ui: hh(),
            uf: hh(),
            uc: hh(),
            uo: hh(),
            wi: hd(),
            wf: hd(),
            wc: hd(),
            wo: hd(),
            bi: b(),
            bf: b(),
            bc: b(),
            bo: b(),
            vi: hh(),
            vf: hh(),
            vo: hh(),
        }
    }

    /// Glorot weights, zero biases, forget bias 1.
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut l = LstmLayer::zeros(input, hidden);
        for m in [&mut l.ui, &mut l.uf, &mut l.uc, &mut l.uo, &mut l.vi, &mut l.vf, &mut l.vo] {
            *m = Mat::glorot(hidden, hidden, rng);
        }
        for m in [&mut l.wi, &mut l.wf, &mut l.wc, &mut l.wo] {
            *m = Mat::glorot(hidden, input, rng);
        }
        l.bf.fill(1.0);
        l
    }

    pub fn input_size(&self) -> usize {
        self.wi.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.ui.rows()
    }

    pub fn tensors(&self) -> [(&'static str, &Mat); 15] {
        [
            ("Ui", &self.ui),
            ("Uf", &self.uf),
            ("Uc", &self.uc),
            ("Uo", &self.uo),
            ("Wi", &self.wi),
            ("Wf", &self.wf),
            ("Wc", &self.wc),
            ("Wo", &self.wo),
            ("bi", &self.bi),
            ("bf", &self.bf),
            ("bc", &self.bc),
            ("bo", &self.bo),
            ("Vi", &self.vi),
            ("Vf", &self.vf),
            ("Vo", &self.vo),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Mat); 15] {
        [
            ("Ui", &mut self.ui),
            ("Uf", &mut self.uf),
            ("Uc", &mut self.uc),
            ("Uo", &mut self.uo),
            ("Wi", &mut self.wi),
            ("Wf", &mut self.wf),
            ("Wc", &mut self.wc),
            ("Wo", &mut self.wo),
            ("bi", &mut self.bi),
            ("bf", &mut self.bf),
            ("bc", &mut self.bc),
            ("bo", &mut self.bo),
            ("Vi", &mut self.vi),
            ("Vf", &mut self.vf),
            ("Vo", &mut self.vo),
        ]
    }

    /// Single step returning `(h, c)`.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let hsz = self.hidden_size();
        if x.len() != self.input_size() {
            return Err(Error::shape(
                "lstm_step",
                format!("input {}", x.len()),
                format!("W {}x{}", hsz, self.input_size()),
            ));
        }
        if h_prev.len() != hsz || c_prev.len() != hsz {
            return Err(Error::shape(
                "lstm_step",
                format!("state {}/{}", h_prev.len(), c_prev.len()),
                format!("hidden {hsz}"),
            ));
        }
        let cache = self.forward(x.to_vec(), h_prev, c_prev);
        Ok((cache.h, cache.c))
    }

    /// Forward step that keeps the intermediates. `input` is already masked.
    pub(crate) fn forward(&self, input: Vec<f64>, h_prev: &[f64], c_prev: &[f64]) -> LstmCache {
        let hsz = self.hidden_size();
        let pre = |u: &Mat, w: &Mat, b: &Mat| {
            let mut z = b.as_slice().to_vec();
            u.mul_vec_acc(h_prev, &mut z);
            w.mul_vec_acc(&input, &mut z);
            z
        };
        let mut zi = pre(&self.ui, &self.wi, &self.bi);
        self.vi.mul_vec_acc(c_prev, &mut zi);
        let mut zf = pre(&self.uf, &self.wf, &self.bf);
        self.vf.mul_vec_acc(c_prev, &mut zf);
        let zg = pre(&self.uc, &self.wc, &self.bc);

        let i: Vec<f64> = zi.into_iter().map(sigmoid).collect();
        let f: Vec<f64> = zf.into_iter().map(sigmoid).collect();
        let g: Vec<f64> = zg.into_iter().map(f64::tanh).collect();
        let c: Vec<f64> = (0..hsz).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();

        let mut zo = pre(&self.uo, &self.wo, &self.bo);
        self.vo.mul_vec_acc(&c, &mut zo);
        let o: Vec<f64> = zo.into_iter().map(sigmoid).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();

        LstmCache {
            input,
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            c,
            tanh_c,
            h,
        }
    }

    /// Backpropagates one step. `dh` is the total gradient reaching `h_t`,
    /// `dc_next` the gradient reaching `c_t` from step `t + 1`. Parameter
    /// gradients are accumulated into `grads`.
    pub(crate) fn backward(
        &self,
        cache: &LstmCache,
        dh: &[f64],
        dc_next: &[f64],
        grads: &mut LstmLayer,
    ) -> LstmStepGrads {
        let hsz = self.hidden_size();
        let mut dzo = vec![0.0; hsz];
        let mut dc = dc_next.to_vec();
        for k in 0..hsz {
            let o = cache.o[k];
            dzo[k] = dh[k] * cache.tanh_c[k] * o * (1.0 - o);
            dc[k] += dh[k] * o * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
        }
        // output-gate peephole reads c_t
        self.vo.t_mul_vec_acc(&dzo, &mut dc);

        let mut dzi = vec![0.0; hsz];
        let mut dzf = vec![0.0; hsz];
        let mut dzg = vec![0.0; hsz];
        let mut dc_prev = vec![0.0; hsz];
        for k in 0..hsz {
            let (i, f, g) = (cache.i[k], cache.f[k], cache.g[k]);
            dzi[k] = dc[k] * g * i * (1.0 - i);
            dzf[k] = dc[k] * cache.c_prev[k] * f * (1.0 - f);
            dzg[k] = dc[k] * i * (1.0 - g * g);
            dc_prev[k] = dc[k] * f;
        }
        self.vi.t_mul_vec_acc(&dzi, &mut dc_prev);
        self.vf.t_mul_vec_acc(&dzf, &mut dc_prev);

        let mut dh_prev = vec![0.0; hsz];
        let mut dx = vec![0.0; self.input_size()];
        for (dz, u, w, gu, gw, gb) in [
            (&dzi, &self.ui, &self.wi, &mut grads.ui, &mut grads.wi, &mut grads.bi),
            (&dzf, &self.uf, &self.wf, &mut grads.uf, &mut grads.wf, &mut grads.bf),
            (&dzg, &self.uc, &self.wc, &mut grads.uc, &mut grads.wc, &mut grads.bc),
            (&dzo, &self.uo, &self.wo, &mut grads.uo, &mut grads.wo, &mut grads.bo),
        ] {
            gu.add_outer(dz, &cache.h_prev);
            gw.add_outer(dz, &cache.input);
            gb.add_assign_slice(dz);
            u.t_mul_vec_acc(dz, &mut dh_prev);
            w.t_mul_vec_acc(dz, &mut dx);
        }
        grads.vi.add_outer(&dzi, &cache.c_prev);
        grads.vf.add_outer(&dzf, &cache.c_prev);
        grads.vo.add_outer(&dzo, &cache.c);

        LstmStepGrads {
            h_prev: dh_prev,
            c_prev: dc_prev,
            input: dx,
        }
    }
}
