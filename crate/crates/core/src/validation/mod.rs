//! Independent oracles, golden fixtures, and the `verify` checks built on them.

pub mod fixtures;
pub mod oracle;
pub mod quadrature;
pub mod reference;
pub mod verify;

pub use fixtures::{generate_fixtures, load_fixtures, write_fixtures, GoldenFixture};
pub use verify::{verify, Check, Level, VerifyReport};
