//! Fixtures shared by the benches.

use mscale::network::NetworkSpec;
use mscale::{analyze, builtin, Analysis};

pub fn spec(name: &str) -> NetworkSpec {
    builtin::load(name).expect("builtin network")
}

pub fn analysis(name: &str) -> Analysis {
    analyze(&spec(name)).expect("builtin networks analyze")
}
