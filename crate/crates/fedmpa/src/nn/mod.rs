//! Dense matrix kernels, the MLP with reverse-mode gradients, losses,
//! optimizers, and parameter checkpoints.

pub mod checkpoint;
pub mod loss;
pub mod matrix;
pub mod mlp;
pub mod optim;
pub mod rng;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{argmax_row, masked_accuracy, mse_matrix, softmax_ce_loss, softmax_rows};
pub use matrix::DenseMatrix;
pub use mlp::{mlp_backward, mlp_eval, mlp_forward, ForwardTape, Layer, Mode, MlpParams};
pub use optim::{optimizer_step, OptimState, OptimizerKind};
pub use rng::{derive_seed, seeded, Rng};

use crate::error::{Error, Result};

/// Hyperparameters shared by every training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub hidden_dim: usize,
    pub n_hidden_layers: usize,
    /// Epoch budget for the local head phases.
    pub head_epochs: usize,
    /// Head epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    /// Whether dropout stays active during the head phases.
    pub head_dropout: bool,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            dropout_rate: 0.5,
            hidden_dim: 64,
            n_hidden_layers: 3,
            head_epochs: 200,
            patience: 50,
            head_dropout: true,
            seed: 0,
            optimizer: OptimizerKind::adam_default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Domain(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Domain(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.hidden_dim == 0 && self.n_hidden_layers > 0 {
            return Err(Error::Domain("hidden_dim must be positive".into()));
        }
        Ok(())
    }

    /// Layer widths for the given feature and class counts.
    pub fn layer_dims(&self, n_features: usize, n_classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.n_hidden_layers + 2);
        dims.push(n_features);
        dims.extend(std::iter::repeat(self.hidden_dim).take(self.n_hidden_layers));
        dims.push(n_classes);
        dims
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_catches_bad_rates() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        cfg.learning_rate = 0.01;
        cfg.dropout_rate = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn layer_dims_stack_hidden_layers_between_io_widths() {
        let cfg = TrainConfig { hidden_dim: 64, n_hidden_layers: 3, ..TrainConfig::default() };
        assert_eq!(cfg.layer_dims(1433, 7), vec![1433, 64, 64, 64, 7]);
        let shallow = TrainConfig { n_hidden_layers: 0, ..cfg };
        assert_eq!(shallow.layer_dims(4, 2), vec![4, 2]);
    }
}
