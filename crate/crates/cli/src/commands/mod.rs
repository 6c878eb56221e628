pub mod biomarkers;
pub mod phantom;
pub mod psl;
pub mod segmetrics;
pub mod train_eval;
