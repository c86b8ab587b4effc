pub mod conv;
pub mod linalg;
pub mod norm;
pub mod sample;
