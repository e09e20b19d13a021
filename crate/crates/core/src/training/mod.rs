//! FlowDMD training, the Exact DMD and autoencoder baselines, and checkpoints.

mod baselines;
mod checkpoint;
mod dmdgrad;
mod loss;
mod trainer;

pub use baselines::{
    ae_dmd_baseline, ae_dmd_reconstruction, exact_dmd_baseline, exact_dmd_reconstruction, mean_row_error, ood_probes,
    train_ae_baseline, AeConfig, AeReport, Autoencoder,
};
pub use checkpoint::Checkpoint;
pub use loss::{
    fit_observable_dmd, frozen_losses, DmdGradient, linearity_loss, losses_and_gradients, reconstruction_loss, trajectory_losses,
    LossParts,
};
pub use trainer::{train_flowdmd, write_history_csv, FlowDmdConfig, HistoryRow, TrainState, TrainedModel, Trainer};

#[cfg(test)]
mod tests;
