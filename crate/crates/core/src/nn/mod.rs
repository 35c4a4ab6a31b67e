//! Layers with parameters held in a [`ParamStore`] and bound per forward pass
//! through a [`Session`].

pub mod activation;
pub mod conv;
pub mod drop_path;
pub mod layer;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod params;
pub mod pool;
pub mod session;

pub use activation::ActKind;
pub use conv::{Conv2d, ConvParams};
pub use drop_path::stochastic_depth;
pub use layer::{LayerDesc, TracedLayer, Tracer};
pub use linear::Linear;
pub use loss::{log_softmax, one_hot, softmax};
pub use norm::{batch_norm, BatchNorm2d, BatchNormState};
pub use params::{Init, ParamId, ParamKind, ParamLayout, ParamSpec, ParamStore};
pub use pool::PoolParams;
pub use session::{Mode, Session, SessionOutput};
