pub mod cli;
pub mod cs;
pub mod error;
pub mod grid;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod net;
pub mod phantom;
pub mod sampling;
pub mod training;
pub mod wavelet;
