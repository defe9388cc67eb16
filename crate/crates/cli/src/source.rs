//! Network sources and content hashes.

use std::path::Path;

use mscale::network::{parse_network, NetworkSpec};
use mscale::builtin;
use sha2::{Digest, Sha256};

use crate::failure::{Failure, PARSE};
use crate::SourceArgs;

#[derive(Debug, Clone)]
pub struct Source {
    /// `builtin:NAME` or `file:PATH`.
    pub label: String,
    pub text: String,
    pub spec: NetworkSpec,
}

/// Hash of `blob <len>\0<bytes>`, as git computes object ids, with sha256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse(label: &str, text: String) -> Result<Source, Failure> {
    let spec = parse_network(&text).map_err(|e| {
        let where_ = label.strip_prefix("file:").unwrap_or(label);
        Failure::new(PARSE, anyhow::anyhow!("{where_}: {e}"))
    })?;
    Ok(Source { label: label.to_string(), text, spec })
}

pub fn load(args: &SourceArgs) -> Result<Source, Failure> {
    match (&args.builtin, &args.file) {
        (Some(name), None) => {
            let text = builtin::source(name).ok_or_else(|| {
                Failure::usage(format!("unknown builtin `{name}` (expected {})", builtin::NAMES.join("|")))
            })?;
            parse(&format!("builtin:{name}"), text.to_string())
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            parse(&format!("file:{}", path.display()), text)
        }
        _ => Err(Failure::usage("give exactly one of --builtin or --file")),
    }
}

pub fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}
