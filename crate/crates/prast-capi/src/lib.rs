pub use prast::*;
