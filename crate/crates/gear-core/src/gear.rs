//! GEAR model (placeholder while modules land).
