//! Backend for A/B preference tests: seeded sessions over stimulus pairs,
//! five-point votes stored in an append-only log, and on-demand summaries.

pub mod error;
pub mod http;
pub mod service;
pub mod session;

pub use error::{AbError, Result};
pub use service::AbService;
pub use session::{Gender, PairSpec, Session, Summary, VoteRecord};
