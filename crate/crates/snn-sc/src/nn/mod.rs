//! Differentiable building blocks and their assembly into the split
//! classifier, the spiking encoder/reconstructor/converter, and the CNN
//! baseline. Only the layer set needed here gets backward rules; there is
//! no general-purpose autodiff.

pub mod backbone;
pub mod layers;
pub mod model;
pub mod param;

pub use backbone::Backbone;
pub use layers::{BatchNorm2d, Conv2d, Linear, MaxPool2d, Relu, Sigmoid, SpikingKind, SpikingLayer};
pub use model::{Converter, Geometry, NeuronVariant, SnnScModel};
pub use param::{ParamRef, Parameterized};
