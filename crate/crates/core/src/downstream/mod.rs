//! Task heads, fine-tuning, cross-validation and evaluation metrics.

pub mod finetune;
pub mod heads;
pub mod labels;
pub mod metrics;
pub mod survival;

pub use finetune::{
    cross_validate, gene_representations, kfold, patient_representations, stratified_kfold, undersample_binary,
    undersample_evaluate, BalancedSplit, Dataset, EvalReport, FinetuneConfig, FoldResult, MeanStd, Task,
};
pub use heads::{
    bce_with_logits, binary_head_loss, multiclass_head_loss, multilabel_head_loss, Head, HeadKind, Reduction,
};
pub use labels::{GraphLabels, LabelSet, NodeLabels};
pub use metrics::{accuracy, jaccard_index, macro_f1, macro_f1_classes, subset_accuracy};
pub use survival::{c_index, cox_npll, cox_npll_tape, SurvivalRecord};
