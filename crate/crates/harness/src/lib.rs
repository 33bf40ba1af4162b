pub mod fixtures;
pub mod http;
pub mod ops;
pub mod providers;
pub mod scenario;
