//! Recurrent forecaster: hand-rolled GRU cells with full backpropagation
//! through time, Adam, and the two-phase continual training scheme that
//! produces one long-horizon and one short-horizon head per cluster.

mod adam;
mod cell;
mod linalg;
mod network;
mod train;

pub use adam::AdamState;
pub use cell::GruCell;
pub use network::{GruGradients, GruNetwork, Head, PreparedWindow};
pub use train::{
    batch_gradients, batch_loss, predict_long, predict_stitched, train_all_clusters,
    train_continual, EpochStats, GruModelSet, TrainReport,
};
