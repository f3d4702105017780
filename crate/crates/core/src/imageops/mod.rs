//! Image tensors and the Gaussian-blur forward operator.

mod blur;
mod kernel;
pub mod spectrum;
mod tensor;

pub use blur::{data_fidelity_grad, BlurOperator};
pub use kernel::{make_gaussian_kernel, Kernel};
pub use tensor::ImageTensor;
