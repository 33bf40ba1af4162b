//! Security governance middleware core.
//!
//! The crate models security profiles end to end: the document format and
//! taxonomy, the capability registry, the policy engine, the reference
//! capability services, the manager that walks a profile through its
//! lifecycle, and the gateway that enforces the enacted pipeline.

pub mod capability;
pub mod gateway;
pub mod manager;
pub mod policy;
pub mod process;
pub mod profile;
pub mod registry;
pub mod report;
pub mod store;
pub mod taxonomy;
