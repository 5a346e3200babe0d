//! TOML network definitions.
//!
//! ```toml
//! name = "rdrnet-s"
//! num_classes = 19
//! head_channels = 128      # required
//! ppm_channels = 128       # default 128
//! aux_head = true          # default true
//! bn_eps = 1e-5            # default 1e-5
//! in_channels = 3          # default 3
//!
//! [stem]
//! widths = [32, 32, 64]
//! blocks = [1, 5, 4]
//!
//! [semantic]
//! widths = [128, 256, 512]
//! blocks = [6, 6, 1]
//!
//! [detail]
//! widths = [64, 64, 128]
//! blocks = [4, 4, 1]
//!
//! [ablation]               # every key optional
//! fusion1 = true
//! fusion2 = true
//! rppm = true
//! num_1x1 = 2
//! residual = true
//! residual_bn = false
//! ```
//!
//! Unknown keys are rejected. Errors carry the 1-based line they refer to.

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::NetworkDef;

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first `key =` assignment, if any.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

pub fn parse_config(text: &str) -> Result<NetworkDef> {
    let def: NetworkDef = toml::from_str(text).map_err(|e| Error::Config {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    if let Some((key, message)) = def.issue() {
        return Err(Error::Config { line: key_line(text, key).unwrap_or(1), message: format!("{key}: {message}") });
    }
    Ok(def)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<NetworkDef> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// A preset name (`micro`, `rdrnet-s`, ...) or a path to a TOML file.
pub fn resolve_config(name_or_path: &str) -> Result<NetworkDef> {
    match NetworkDef::preset(name_or_path) {
        Some(def) if !Path::new(name_or_path).exists() => Ok(def),
        _ => load_config(name_or_path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_round_trips_through_toml() {
        for name in crate::network::PRESETS {
            let def = NetworkDef::preset(name).unwrap();
            assert_eq!(parse_config(&def.to_toml()).unwrap(), def);
        }
    }

    #[test]
    fn line_attribution() {
        let text = "name = \"x\"\nnum_classes = 4\nhead_channels = 0\n[stem]\nwidths=[1,1,1]\nblocks=[1,1,1]\n[semantic]\nwidths=[2,2,2]\nblocks=[1,1,1]\n[detail]\nwidths=[2,2,2]\nblocks=[1,1,1]\n";
        match parse_config(text) {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("head_channels"));
            }
            other => panic!("{other:?}"),
        }
        let unknown = text.replace("head_channels = 0", "head_channels = 8\nbogus = 1");
        match parse_config(&unknown) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }
}
