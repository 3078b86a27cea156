//! Plaintext model checkpoints.
//!
//! Layout, line by line:
//!
//! ```text
//! UTVAE-CKPT-1
//! arch x_dim=2 z_dim=3 hidden_layers=2 hidden_units=16 y_is_binary=1 x_binary_mask=10
//! param gen.x.l0.w GENERATIVE 2 16
//! <32 space-separated values, row-major>
//! param gen.x.l0.b GENERATIVE 1 16
//! ...
//! ```
//!
//! Values use Rust's shortest-roundtrip float formatting, so a load
//! followed by a save reproduces the file byte for byte and parameters
//! survive the trip bit-exact.

use std::fmt::Write as FmtWrite;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::diffcore::{ParamGroup, Tensor};

use super::{ArchConfig, CevaeModel};

pub const CHECKPOINT_MAGIC: &str = "UTVAE-CKPT-1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("failed to {action} {path}: {source}")]
    Io { action: &'static str, path: String, source: std::io::Error },
    #[error("{path}: not a {CHECKPOINT_MAGIC} checkpoint")]
    BadMagic { path: String },
    #[error("{path}:{line}: {what}")]
    Malformed { path: String, line: usize, what: String },
    #[error("{path}: parameter `{name}` has shape {found_rows}x{found_cols}, expected {want_rows}x{want_cols}")]
    ShapeMismatch {
        path: String,
        name: String,
        found_rows: usize,
        found_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("{path}: unknown parameter `{name}` for this architecture")]
    UnknownParam { path: String, name: String },
    #[error("{path}: missing parameter `{name}`")]
    MissingParam { path: String, name: String },
}

fn group_label(group: ParamGroup) -> &'static str {
    match group {
        ParamGroup::Generative => "GENERATIVE",
        ParamGroup::Inference => "INFERENCE",
        ParamGroup::Auxiliary => "AUXILIARY",
    }
}

fn parse_group(label: &str) -> Option<ParamGroup> {
    match label {
        "GENERATIVE" => Some(ParamGroup::Generative),
        "INFERENCE" => Some(ParamGroup::Inference),
        "AUXILIARY" => Some(ParamGroup::Auxiliary),
        _ => None,
    }
}

/// Serialize the model to `path`, writing a temp file first and renaming
/// so a crash never leaves a half-written checkpoint behind.
pub fn save_checkpoint(model: &CevaeModel, path: &Path) -> Result<(), CheckpointError> {
    let arch = model.arch();
    let mask: String = arch.x_binary_mask.iter().map(|&b| if b { '1' } else { '0' }).collect();
    let mut body = String::new();
    body.push_str(CHECKPOINT_MAGIC);
    body.push('\n');
    writeln!(
        body,
        "arch x_dim={} z_dim={} hidden_layers={} hidden_units={} y_is_binary={} x_binary_mask={}",
        arch.x_dim,
        arch.z_dim,
        arch.hidden_layers,
        arch.hidden_units,
        arch.y_is_binary as u8,
        mask
    )
    .expect("writing to a String cannot fail");

    for id in model.store().ids() {
        let p = model.store().param(id);
        let v = p.value();
        writeln!(body, "param {} {} {} {}", p.name(), group_label(p.group()), v.rows(), v.cols())
            .expect("writing to a String cannot fail");
        let mut line = String::new();
        for (k, val) in v.data().iter().enumerate() {
            if k > 0 {
                line.push(' ');
            }
            write!(line, "{val}").expect("writing to a String cannot fail");
        }
        body.push_str(&line);
        body.push('\n');
    }

    let display = path.display().to_string();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, body).map_err(|source| CheckpointError::Io {
        action: "write",
        path: tmp.display().to_string(),
        source,
    })?;
    fs::rename(&tmp, path).map_err(|source| CheckpointError::Io { action: "rename into", path: display, source })
}

fn parse_kv<'a>(field: &'a str, key: &str, path: &str, line: usize) -> Result<&'a str, CheckpointError> {
    field.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')).ok_or_else(|| CheckpointError::Malformed {
        path: path.to_string(),
        line,
        what: format!("expected `{key}=...`, found `{field}`"),
    })
}

fn parse_usize(s: &str, path: &str, line: usize) -> Result<usize, CheckpointError> {
    s.parse().map_err(|_| CheckpointError::Malformed {
        path: path.to_string(),
        line,
        what: format!("`{s}` is not a count"),
    })
}

/// Load a checkpoint saved by [`save_checkpoint`], reconstructing the
/// architecture and filling every parameter. The file must cover exactly
/// the parameter set the architecture implies.
pub fn load_checkpoint(path: &Path) -> Result<CevaeModel, CheckpointError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        action: "read",
        path: display.clone(),
        source,
    })?;
    let mut lines = text.lines().enumerate();

    match lines.next() {
        Some((_, first)) if first.trim_end() == CHECKPOINT_MAGIC => {}
        _ => return Err(CheckpointError::BadMagic { path: display }),
    }

    let (arch_ln, arch_line) = lines.next().ok_or_else(|| CheckpointError::Malformed {
        path: display.clone(),
        line: 2,
        what: "missing arch line".to_string(),
    })?;
    let ln = arch_ln + 1;
    let fields: Vec<&str> = arch_line.split_whitespace().collect();
    if fields.len() != 7 || fields[0] != "arch" {
        return Err(CheckpointError::Malformed {
            path: display,
            line: ln,
            what: "arch line must have six key=value fields".to_string(),
        });
    }
    let x_dim = parse_usize(parse_kv(fields[1], "x_dim", &display, ln)?, &display, ln)?;
    let z_dim = parse_usize(parse_kv(fields[2], "z_dim", &display, ln)?, &display, ln)?;
    let hidden_layers = parse_usize(parse_kv(fields[3], "hidden_layers", &display, ln)?, &display, ln)?;
    let hidden_units = parse_usize(parse_kv(fields[4], "hidden_units", &display, ln)?, &display, ln)?;
    let y_is_binary = match parse_kv(fields[5], "y_is_binary", &display, ln)? {
        "0" => false,
        "1" => true,
        other => {
            return Err(CheckpointError::Malformed {
                path: display,
                line: ln,
                what: format!("y_is_binary must be 0 or 1, found `{other}`"),
            })
        }
    };
    let mask_str = parse_kv(fields[6], "x_binary_mask", &display, ln)?;
    if mask_str.len() != x_dim || !mask_str.chars().all(|c| c == '0' || c == '1') {
        return Err(CheckpointError::Malformed {
            path: display,
            line: ln,
            what: format!("x_binary_mask must be {x_dim} characters of 0/1"),
        });
    }
    let arch = ArchConfig {
        x_dim,
        x_binary_mask: mask_str.chars().map(|c| c == '1').collect(),
        z_dim,
        hidden_layers,
        hidden_units,
        y_is_binary,
    };

    let mut model = CevaeModel::zeroed(arch);
    let mut filled = vec![false; model.store().len()];

    while let Some((idx, line)) = lines.next() {
        let ln = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "param" {
            return Err(CheckpointError::Malformed {
                path: display,
                line: ln,
                what: "expected `param <name> <group> <rows> <cols>`".to_string(),
            });
        }
        let name = fields[1];
        let group = parse_group(fields[2]).ok_or_else(|| CheckpointError::Malformed {
            path: display.clone(),
            line: ln,
            what: format!("unknown parameter group `{}`", fields[2]),
        })?;
        let rows = parse_usize(fields[3], &display, ln)?;
        let cols = parse_usize(fields[4], &display, ln)?;

        let id = model
            .store()
            .find(name)
            .ok_or_else(|| CheckpointError::UnknownParam { path: display.clone(), name: name.to_string() })?;
        let want = model.store().value(id).shape();
        if (rows, cols) != want {
            return Err(CheckpointError::ShapeMismatch {
                path: display,
                name: name.to_string(),
                found_rows: rows,
                found_cols: cols,
                want_rows: want.0,
                want_cols: want.1,
            });
        }
        if model.store().param(id).group() != group {
            return Err(CheckpointError::Malformed {
                path: display,
                line: ln,
                what: format!("parameter `{name}` tagged {}, expected {}", fields[2], group_label(model.store().param(id).group())),
            });
        }
        if filled[id.index()] {
            return Err(CheckpointError::Malformed {
                path: display,
                line: ln,
                what: format!("parameter `{name}` appears twice"),
            });
        }

        let (vidx, value_line) = lines.next().ok_or_else(|| CheckpointError::Malformed {
            path: display.clone(),
            line: ln,
            what: format!("missing value line for `{name}`"),
        })?;
        let vln = vidx + 1;
        let mut values = Vec::with_capacity(rows * cols);
        for tok in value_line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| CheckpointError::Malformed {
                path: display.clone(),
                line: vln,
                what: format!("`{tok}` is not a float"),
            })?;
            values.push(v);
        }
        if values.len() != rows * cols {
            return Err(CheckpointError::Malformed {
                path: display,
                line: vln,
                what: format!("expected {} values for `{name}`, found {}", rows * cols, values.len()),
            });
        }
        *model.store_mut().value_mut(id) = Tensor::from_vec(rows, cols, values);
        filled[id.index()] = true;
    }

    for id in model.store().ids() {
        if !filled[id.index()] {
            return Err(CheckpointError::MissingParam {
                path: display,
                name: model.store().param(id).name().to_string(),
            });
        }
    }
    Ok(model)
}
