pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linalg;
pub(crate) mod loss;
pub(crate) mod reduce;
pub(crate) mod resize;
pub(crate) mod shape;

pub use conv::ConvSpec;
pub use elementwise::Mode;
