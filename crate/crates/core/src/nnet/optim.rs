use crate::error::{Error, Result};
use crate::nnet::Network;

/// Heavy-ball SGD: `v ← momentum·v + g`, `w ← w − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(param_count: usize, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} not in [0, 1)")));
        }
        Ok(Self { momentum, velocity: vec![0.0; param_count] })
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// One update. Indices flagged in `frozen` get zero gradient and zero
    /// velocity, so a weight held at 0 stays exactly 0.
    pub fn step(&mut self, net: &mut Network, grads: &[f64], lr: f64, frozen: Option<&[bool]>) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
        }
        let n = net.param_count();
        if grads.len() != n || self.velocity.len() != n {
            return Err(Error::Length { expected: n, got: grads.len().min(self.velocity.len()) });
        }
        if let Some(f) = frozen {
            if f.len() != n {
                return Err(Error::Length { expected: n, got: f.len() });
            }
        }
        let mut params = net.get_params();
        let mut velocity = self.velocity.clone();
        for j in 0..n {
            if frozen.is_some_and(|f| f[j]) {
                velocity[j] = 0.0;
                continue;
            }
            velocity[j] = self.momentum * velocity[j] + grads[j];
            params[j] -= lr * velocity[j];
        }
        if let Some(pos) = params.iter().chain(&velocity).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("SGD update at index {}", pos % n)));
        }
        net.write_params(|dst| dst.copy_from_slice(&params));
        self.velocity = velocity;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::LayerSpec;

    fn scalar_net(w: f64) -> Network {
        // single weight plus a bias, both driven by the same test gradients
        Network::with_params(vec![1], vec![LayerSpec::Dense { n_inp: 1, n_out: 1 }], &[w, 0.0]).unwrap()
    }

    #[test]
    fn vanilla_step() {
        let mut net = scalar_net(3.0);
        let mut opt = SgdMomentum::new(2, 0.0).unwrap();
        opt.step(&mut net, &[1.0, 0.0], 1.0, None).unwrap();
        assert_eq!(net.get_params()[0], 2.0);
    }

    #[test]
    fn momentum_recurrence() {
        let mut net = scalar_net(0.0);
        let mut opt = SgdMomentum::new(2, 0.9).unwrap();
        opt.step(&mut net, &[1.0, 0.0], 1.0, None).unwrap();
        opt.step(&mut net, &[1.0, 0.0], 1.0, None).unwrap();
        // v1 = 1, v2 = 1.9, w = -(1 + 1.9)
        assert!((net.get_params()[0] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_from_rest_is_a_no_op() {
        let mut net = scalar_net(0.7);
        let mut opt = SgdMomentum::new(2, 0.9).unwrap();
        opt.step(&mut net, &[0.0, 0.0], 0.1, None).unwrap();
        assert_eq!(net.get_params(), vec![0.7, 0.0]);
    }

    #[test]
    fn frozen_entries_do_not_move() {
        let mut net = scalar_net(0.0);
        let mut opt = SgdMomentum::new(2, 0.9).unwrap();
        opt.step(&mut net, &[5.0, 5.0], 0.1, Some(&[true, false])).unwrap();
        assert_eq!(net.get_params()[0], 0.0);
        assert_eq!(opt.velocity()[0], 0.0);
        assert!(net.get_params()[1] < 0.0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(SgdMomentum::new(2, 1.0).is_err());
        let mut net = scalar_net(0.0);
        let mut opt = SgdMomentum::new(2, 0.5).unwrap();
        assert!(opt.step(&mut net, &[0.0, 0.0], 0.0, None).is_err());
        assert!(opt.step(&mut net, &[f64::INFINITY, 0.0], 1.0, None).is_err());
        assert_eq!(net.get_params(), vec![0.0, 0.0]);
    }
}
