pub mod error;
pub mod linalg;
pub mod model;
pub mod riccati;
pub mod are;
pub mod spectra;
pub mod simulate;
pub mod export;
