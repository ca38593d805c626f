//! Carrier package for the `acceptance` test target, which runs after the
//! `enkbf` test suites.
