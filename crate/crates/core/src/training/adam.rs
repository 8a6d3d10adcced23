use crate::model::Params;

/// Bias-corrected Adam moments, stored in the parameter container's shape.
#[derive(Clone, Debug)]
pub struct AdamState<P: Params> {
    pub first: P,
    pub second: P,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<P: Params> AdamState<P> {
    pub fn new(params: &P) -> Self {
        AdamState {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn update(&mut self, params: &mut P, grads: &P, learning_rate: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let grads = grads.tensors();
        let firsts = self.first.tensors_mut();
        let seconds = self.second.tensors_mut();
        for ((((_, p), (_, g)), (_, m)), (_, v)) in
            params.tensors_mut().into_iter().zip(grads).zip(firsts).zip(seconds)
        {
            let it = p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()));
            for ((theta, &gr), (mo, vo)) in it {
                *mo = b1 * *mo + (1.0 - b1) * gr;
                *vo = b2 * *vo + (1.0 - b2) * gr * gr;
                let m_hat = *mo / c1;
                let v_hat = *vo / c2;
                *theta -= learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
