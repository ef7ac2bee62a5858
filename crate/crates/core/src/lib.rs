pub mod analysis;
pub mod annotator;
pub mod btl;
pub mod cluster;
pub mod features;
pub mod io;
pub mod model;
pub mod stats;
