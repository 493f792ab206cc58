//! Bundled Travel Booking System fixtures.

pub const TBS_WORKFLOW: &str = include_str!("../fixtures/tbs.wf");
pub const TBS_PROPERTIES: &str = include_str!("../fixtures/tbs.props");
pub const T1_SCENARIO: &str = include_str!("../fixtures/t1.scn");
pub const T2_SCENARIO: &str = include_str!("../fixtures/t2.scn");
