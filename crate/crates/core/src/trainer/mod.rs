//! Fold training: window sampling, Lookahead-SGD and early stopping.

mod fold;
mod lookahead;
mod source;
mod stopping;
mod window;

pub use fold::{
    predict_first_windows, select_best_fold, train_fold, train_folds, EpochRecord, FoldOutcome, FoldResult,
    TrainConfig, TrainSetup,
};
pub use lookahead::{lookahead_sync, Lookahead};
pub use source::{Access, CatalogSource, Channel, ClipSource, Task};
pub use stopping::{epochs_run, EarlyStopping, StopDecision};
pub use window::{draw_batch, first_window, sample_window, stack, to_network_input, Batch};
