//! Training (placeholder while modules land).
