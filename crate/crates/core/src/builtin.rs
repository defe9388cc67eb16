//! The three reference networks shipped with the library.

use crate::error::{Error, Result};
use crate::network::{parse_network, NetworkSpec};

pub const VIRAL: &str = include_str!("../../../networks/viral.net");
pub const MICHAELIS_MENTEN: &str = include_str!("../../../networks/michaelis-menten.net");
pub const ENZYME3: &str = include_str!("../../../networks/enzyme3.net");

pub const NAMES: [&str; 3] = ["viral", "michaelis-menten", "enzyme3"];

pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "viral" => Some(VIRAL),
        "michaelis-menten" | "mm" => Some(MICHAELIS_MENTEN),
        "enzyme3" => Some(ENZYME3),
        _ => None,
    }
}

pub fn load(name: &str) -> Result<NetworkSpec> {
    let text = source(name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown builtin `{name}` (expected one of {NAMES:?})")))?;
    parse_network(text)
}
