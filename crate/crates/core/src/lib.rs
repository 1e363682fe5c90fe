pub mod error;
pub mod linalg;
pub mod ols;
pub mod par;
pub mod pcanet;
pub mod pipeline;
pub mod scatter;
pub mod svm;
pub mod tensor;
pub mod wavelet;

pub use error::{Result, ShdlError};
pub use tensor::ImageTensor;
