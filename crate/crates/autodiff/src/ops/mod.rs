mod conv;
mod elementwise;
pub(crate) mod linalg;
mod norm;
mod pool;
mod shape;

pub use conv::Window;
pub use elementwise::{broadcast_shape, Binary, Unary};
pub use pool::Pool;
pub use shape::Reduce;
