//! Country-level Internet path analysis.
//!
//! The crate turns traceroute records into country-level paths, measures how
//! often those paths leave (and come back to) the client's country, and
//! evaluates how well open DNS resolvers and overlay relays let a client
//! steer around a given country.
//!
//! - [`geo`]: IPv4 → country tables with explicit unknowns
//! - [`pathcore`]: traceroute parsing and country-path construction
//! - [`analytics`]: termination, transit, tromboning, hosting diversity, symmetry
//! - [`avoidance`]: avoidability values for default routing, resolvers and relays
//! - [`ingest`]: measurement planning, platform and DNS clients, the corpus store
//! - [`cli`]: the `countrypath` command line

pub mod analytics;
pub mod avoidance;
pub mod cli;
pub mod geo;
pub mod ingest;
pub mod pathcore;
pub mod ratio;

pub use geo::{CountryCode, GeoOutcome, GeoTable};
pub use pathcore::{CountryPath, Hop, Strategy, Traceroute};
pub use ratio::Ratio;
