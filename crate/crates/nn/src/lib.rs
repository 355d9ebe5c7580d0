//! Small reverse-mode autodiff engine with the convolutional layers, losses and
//! optimizers needed to train image-to-image networks on the CPU in `f64`.

pub mod archive;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{
    huber_elem, huber_grad_elem, sigmoid_tensor, softmax_channels, Gradients, Graph, Var,
};
pub use layers::{dropout, BatchNorm2d, Conv2d, ConvTranspose2d};
pub use optim::{Adam, EarlyStop, EarlyStopping, ReduceLrOnPlateau};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
