//! Battery degradation simulation for vehicle-to-grid dispatch over
//! real-world driving and charging behavior.

pub mod clock;
pub mod degradation;
pub mod economics;
pub mod fleetgen;
pub mod ingest;
pub mod pipeline;
pub mod profiles;
pub mod scheduler;
pub mod stats;
pub mod timeline;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/trip-logs.md")]
pub mod book_trip_logs {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/degradation.md")]
pub mod book_degradation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/v2g.md")]
pub mod book_v2g {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/profiles.md")]
pub mod book_profiles {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/statistics.md")]
pub mod book_statistics {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/configuration.md")]
pub mod book_configuration {}
