//! Example generators, verification suites and reports (filled in by the
//! harness stage).
