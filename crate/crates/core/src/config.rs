use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionConfig;

/// Every knob of a training run. Field names double as the keys of the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Model width `D`.
    pub d_model: usize,
    pub l_enc: usize,
    pub l_dec: usize,
    /// Number of latent query vectors.
    pub n_p: usize,
    pub mlp_hidden: usize,
    pub max_positions: usize,
    pub epsilon: f64,
    pub max_hops: usize,
    /// Relation tuples kept per context.
    pub max_tuples: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// Divide attention scores by `√D`.
    pub attention_scaling: bool,
    /// When false the relation composition is skipped and `T_c = T_t`.
    pub use_relations: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            l_enc: 2,
            l_dec: 2,
            n_p: 8,
            mlp_hidden: 128,
            max_positions: 256,
            epsilon: 0.8,
            max_hops: 2,
            max_tuples: 64,
            lambda: 1.0,
            gamma: 0.1,
            beta: 1e-6,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 4,
            seed: 0,
            init_scale: 0.08,
            attention_scaling: false,
            use_relations: true,
        }
    }
}

impl TrainingConfig {
    pub fn acquisition(&self) -> AcquisitionConfig {
        AcquisitionConfig { epsilon: self.epsilon, max_hops: self.max_hops, max_tuples: Some(self.max_tuples) }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("d_model", self.d_model),
            ("n_p", self.n_p),
            ("mlp_hidden", self.mlp_hidden),
            ("max_positions", self.max_positions),
            ("max_hops", self.max_hops),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.d_model < 2 {
            return Err("d_model must be at least 2 for layer normalization".into());
        }
        for (name, v) in [("lambda", self.lambda), ("gamma", self.gamma), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a non-negative number"));
            }
        }
        if self.lambda == 0.0 && self.gamma == 0.0 && self.beta == 0.0 {
            return Err("lambda, gamma and beta cannot all be zero".into());
        }
        if !(-1.0..=1.0).contains(&self.epsilon) {
            return Err("epsilon must lie in [-1, 1]".into());
        }
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: TrainingConfig = serde_json::from_str(r#"{"d_model": 16, "gamma": 0.0}"#).unwrap();
        assert_eq!(cfg.d_model, 16);
        assert_eq!(cfg.gamma, 0.0);
        assert_eq!(cfg.n_p, 8);
        assert!(serde_json::from_str::<TrainingConfig>(r#"{"dmodel": 16}"#).is_err());
    }

    #[test]
    fn validate_rejects_bad_values() {
        assert!(TrainingConfig::default().validate().is_ok());
        let zero = TrainingConfig { lambda: 0.0, gamma: 0.0, beta: 0.0, ..Default::default() };
        assert!(zero.validate().is_err());
        assert!(TrainingConfig { max_hops: 0, ..Default::default() }.validate().is_err());
        assert!(TrainingConfig { epsilon: 1.5, ..Default::default() }.validate().is_err());
    }
}
