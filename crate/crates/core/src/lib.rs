//! Hypothesis testing by Euclidean separation under sub-spherical noise, and
//! calibrated sequential change detection for linear systems.

pub mod geomsep;
pub mod linsys;
pub mod numkit;
pub mod pairtests;
pub mod scalardist;
pub mod seqdetect;
pub mod simlab;
