mod bound;
mod report;
mod train;
mod verify;

pub use bound::{cmd_bound, BoundArgs, BoundOverrides, TrainSource};
pub use report::{cmd_report, ReportArgs, ReportOutput};
pub use train::{cmd_train, model_file, setting_dir, TrainOutput, LOG_FILE, SUMMARY_FILE};
pub use verify::{cmd_verify, VerifyArgs};
