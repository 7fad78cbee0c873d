use ndarray::ArrayD;

use crate::dvrnet::{DvrModel, Gradients};
use crate::error::{Error, Result};
use crate::Scalar;

/// One synchronisation: `slow += alpha * (fast - slow)`, then `fast = slow`.
pub fn lookahead_sync<T: Scalar>(fast: &mut ArrayD<T>, slow: &mut ArrayD<T>, alpha: T) {
    slow.zip_mut_with(fast, |s, &f| *s += alpha * (f - *s));
    fast.assign(slow);
}

/// Lookahead wrapped around plain SGD on the fast weights.
#[derive(Debug, Clone)]
pub struct Lookahead<T> {
    lr: T,
    alpha: T,
    k: usize,
    slow: Vec<ArrayD<T>>,
    steps: usize,
}

impl<T: Scalar> Lookahead<T> {
    pub fn new(model: &DvrModel<T>, lr: f64, alpha: f64, k: usize) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) || !(0.0..=1.0).contains(&alpha) || k == 0 {
            return Err(Error::invalid(format!("bad lookahead settings lr={lr} alpha={alpha} k={k}")));
        }
        Ok(Self {
            lr: T::lit(lr),
            alpha: T::lit(alpha),
            k,
            slow: model.params().cloned().collect(),
            steps: 0,
        })
    }

    pub fn slow_weights(&self) -> &[ArrayD<T>] {
        &self.slow
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// SGD on the fast weights, with a slow-weight sync every `k` steps.
    /// A non-finite gradient leaves the weights untouched; the caller fills
    /// in the clip ids.
    pub fn step(&mut self, model: &mut DvrModel<T>, grads: &Gradients<T>) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient { clip_ids: Vec::new() });
        }
        if grads.tensors.len() != self.slow.len() {
            return Err(Error::shape("gradient count differs from parameter count"));
        }
        let lr = self.lr;
        for (p, g) in model.params_mut().zip(&grads.tensors) {
            p.zip_mut_with(g, |w, &d| *w -= lr * d);
        }
        self.steps += 1;
        if self.steps % self.k == 0 {
            for (fast, slow) in model.params_mut().zip(self.slow.iter_mut()) {
                lookahead_sync(fast, slow, self.alpha);
            }
        }
        Ok(())
    }

    /// Discards the fast weights' progress since the last sync.
    pub fn reset_fast(&self, model: &mut DvrModel<T>) {
        for (fast, slow) in model.params_mut().zip(&self.slow) {
            fast.assign(slow);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dvrnet::{Activation, DvrConfig, InputShape, LayerSpec};
    use ndarray::arr0;

    #[test]
    fn sync_by_hand() {
        let (mut fast, mut slow) = (arr0(2.0).into_dyn(), arr0(1.0).into_dyn());
        lookahead_sync(&mut fast, &mut slow, 0.5);
        assert_eq!((fast[[]], slow[[]]), (1.5, 1.5));

        let (mut fast, mut slow) = (arr0(2.0).into_dyn(), arr0(1.0).into_dyn());
        lookahead_sync(&mut fast, &mut slow, 1.0);
        assert_eq!((fast[[]], slow[[]]), (2.0, 2.0));

        let (mut fast, mut slow) = (arr0(2.0).into_dyn(), arr0(1.0).into_dyn());
        lookahead_sync(&mut fast, &mut slow, 0.0);
        assert_eq!((fast[[]], slow[[]]), (1.0, 1.0));
    }

    fn one_weight() -> DvrModel<f64> {
        let input = InputShape {
            frames: 1,
            height: 1,
            width: 1,
            channels: 1,
        };
        let cfg =
            DvrConfig::custom(input, vec![LayerSpec::flatten(), LayerSpec::dense("w", 1, Activation::Linear)]).unwrap();
        let mut m = DvrModel::from_config(cfg, 0).unwrap();
        m.layers_mut()[1].params[0].fill(1.0);
        m
    }

    fn unit_grads() -> Gradients<f64> {
        Gradients {
            tensors: vec![ndarray::ArrayD::from_elem(ndarray::IxDyn(&[1, 1]), 1.0), ndarray::ArrayD::zeros(ndarray::IxDyn(&[1]))],
        }
    }

    #[test]
    fn slow_weights_move_every_k_steps() {
        let mut model = one_weight();
        let mut opt = Lookahead::new(&model, 0.1, 0.5, 2).unwrap();
        opt.step(&mut model, &unit_grads()).unwrap();
        assert!((model.params().next().unwrap()[[0, 0]] - 0.9).abs() < 1e-12);
        assert_eq!(opt.slow_weights()[0][[0, 0]], 1.0);
        opt.step(&mut model, &unit_grads()).unwrap();
        // fast reached 0.8, slow moves halfway to it
        assert!((opt.slow_weights()[0][[0, 0]] - 0.9).abs() < 1e-12);
        assert!((model.params().next().unwrap()[[0, 0]] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn alpha_zero_pins_slow_weights() {
        let mut model = one_weight();
        let mut opt = Lookahead::new(&model, 0.1, 0.0, 3).unwrap();
        for _ in 0..9 {
            opt.step(&mut model, &unit_grads()).unwrap();
        }
        assert_eq!(opt.slow_weights()[0][[0, 0]], 1.0);
        assert_eq!(model.params().next().unwrap()[[0, 0]], 1.0);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut model = one_weight();
        let mut opt = Lookahead::new(&model, 0.1, 0.5, 5).unwrap();
        let mut g = unit_grads();
        g.tensors[0].fill(f64::NAN);
        assert!(matches!(opt.step(&mut model, &g), Err(Error::NonFiniteGradient { .. })));
        assert_eq!(model.params().next().unwrap()[[0, 0]], 1.0);
        assert_eq!(opt.steps(), 0);
    }
}
