//! Optimiser, schedule, augmentation, distillation, corruption and the
//! training and evaluation loops.

pub mod augment;
pub mod corrupt;
pub mod data;
pub mod eval;
pub mod kd;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use augment::{cutmix_with, mixup_cutmix, mixup_with, random_erasing, MixKind, Mixed, Rect};
pub use corrupt::{corrupt, CorruptionFamily, CorruptionSpec};
pub use data::{load_dataset, save_dataset, synthetic, Dataset};
pub use eval::{argmax_rows, evaluate, top1_error, Classifier, ModelClassifier, RobustnessReport};
pub use kd::{kd_loss, DistillConfig};
pub use optim::{adamw_step, AdamW, AdamWConfig, Moments};
pub use schedule::{cosine_lr, CosineSchedule};
pub use trainer::{banner, train, EpochLog, Teacher, TrainConfig, LOG_HEADER};
