//! Spatial gap filling with sparsity-aware gradient-boosted trees.

pub mod gbdt;
pub mod imputer;

pub use gbdt::{fit_gbdt, fit_tree, predict_gbdt, GbdtModel, GbdtParams, Matrix, Tree, TreeNode};
pub use imputer::{impute, train_imputers, FeatureRef, ImputerEntry, ImputerGrid, ImputerParams};
