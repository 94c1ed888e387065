//! Adam and Rectified Adam wrapped in Lookahead, over flat `f64` buffers.

use crate::error::{Error, Result};
use crate::model::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    RAdamLookahead,
}

impl OptimizerKind {
    /// Optimizer each architecture is trained with.
    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::TcnV1 => OptimizerKind::Adam,
            Variant::TcnV2 => OptimizerKind::RAdamLookahead,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Lookahead sync period.
    pub k: u64,
    /// Lookahead blend factor.
    pub alpha: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            k: 5,
            alpha: 0.5,
        }
    }
}

impl OptimizerConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        OptimizerConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Moments per parameter buffer, plus Lookahead slow weights.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    config: OptimizerConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    slow: Option<Vec<Vec<f64>>>,
}

/// Rectification factor `r_t`, or `None` while the variance estimate is
/// untrustworthy (`rho_t <= 4`).
pub fn radam_rectifier(t: u64, beta2: f64) -> Option<f64> {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b2t = beta2.powf(t as f64);
    let rho_t = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
    (rho_t > 4.0).then(|| {
        (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
    })
}

impl OptimizerState {
    /// Fresh state for buffers of the given lengths.
    pub fn new(kind: OptimizerKind, config: OptimizerConfig, sizes: &[usize]) -> Result<Self> {
        if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", config.learning_rate)));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if kind == OptimizerKind::RAdamLookahead && (config.k == 0 || !(0.0..=1.0).contains(&config.alpha)) {
            return Err(Error::Config("lookahead needs k >= 1 and alpha in [0, 1]".into()));
        }
        Ok(OptimizerState {
            kind,
            config,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            slow: None,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Lookahead slow weights; `None` before the first step or for Adam.
    pub fn slow_weights(&self) -> Option<&[Vec<f64>]> {
        self.slow.as_deref()
    }

    fn check(&self, params: &[&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        let ok = params.len() == self.m.len()
            && grads.len() == self.m.len()
            && self
                .m
                .iter()
                .zip(params.iter().zip(grads))
                .all(|(m, (p, g))| p.len() == m.len() && g.len() == m.len());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("parameter or gradient buffers do not match optimizer state".into()))
        }
    }

    /// One update of whichever rule this state was built for.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        match self.kind {
            OptimizerKind::Adam => self.adam_step(params, grads),
            OptimizerKind::RAdamLookahead => self.radam_lookahead_step(params, grads),
        }
    }

    pub fn adam_step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if self.kind != OptimizerKind::Adam {
            return Err(Error::Config("state was built for RAdam + Lookahead".into()));
        }
        self.check(params, grads)?;
        self.t += 1;
        let OptimizerConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
            ..
        } = self.config;
        let c1 = 1.0 - b1.powf(self.t as f64);
        let c2 = 1.0 - b2.powf(self.t as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], grads[i]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn radam_lookahead_step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if self.kind != OptimizerKind::RAdamLookahead {
            return Err(Error::Config("state was built for Adam".into()));
        }
        self.check(params, grads)?;
        if self.slow.is_none() {
            self.slow = Some(params.iter().map(|p| p.to_vec()).collect());
        }
        self.t += 1;
        let OptimizerConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
            k,
            alpha,
        } = self.config;
        let c1 = 1.0 - b1.powf(self.t as f64);
        let c2 = 1.0 - b2.powf(self.t as f64);
        let rect = radam_rectifier(self.t, b2);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], grads[i]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                p[j] -= match rect {
                    Some(r) => lr * r * m_hat / ((v[j] / c2).sqrt() + eps),
                    None => lr * m_hat,
                };
            }
        }
        if self.t.is_multiple_of(k) {
            let slow = self.slow.as_mut().expect("initialized above");
            for (s, p) in slow.iter_mut().zip(params.iter_mut()) {
                for (sj, pj) in s.iter_mut().zip(p.iter_mut()) {
                    *sj += alpha * (*pj - *sj);
                    *pj = *sj;
                }
            }
        }
        Ok(())
    }
}
