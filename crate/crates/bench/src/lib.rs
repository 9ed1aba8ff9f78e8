pub use promptforge as core;
