//! Binary checkpoint format.
//!
//! A checkpoint is one ASCII header line terminated by `\n`:
//!
//! ```text
//! strainflow-checkpoint v1 kind=mlp input_dim=3 hidden=256 depth=5 output_dim=2 seed=0 params=198914
//! ```
//!
//! followed by exactly `params` 64-bit little-endian IEEE-754 values in the
//! flat layout of [`MlpParams::to_flat`]: for each layer in order, the
//! `fan_in × fan_out` weight matrix row-major, then its `fan_out` biases.

use std::io::{BufRead, Write};

use super::mlp::{Architecture, MlpParams};
use super::model::{FlowModel, ModelKind};
use crate::error::{Error, Result};

const MAGIC: &str = "strainflow-checkpoint";
const VERSION: &str = "v1";

pub fn write_checkpoint(model: &FlowModel, out: &mut impl Write) -> Result<()> {
    let p = model.params();
    let a = p.arch;
    writeln!(
        out,
        "{MAGIC} {VERSION} kind={} input_dim={} hidden={} depth={} output_dim={} seed={} params={}",
        model.kind(),
        a.input_dim,
        a.hidden,
        a.depth,
        a.output_dim,
        p.seed,
        a.param_count()
    )?;
    let mut bytes = Vec::with_capacity(8 * a.param_count());
    for v in p.to_flat() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint(input: &mut impl BufRead) -> Result<FlowModel> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let header = header
        .strip_suffix('\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let mut words = header.split(' ');
    if words.next() != Some(MAGIC) || words.next() != Some(VERSION) {
        return Err(Error::Checkpoint(format!("unrecognized header `{header}`")));
    }
    let mut field = |name: &str| -> Result<String> {
        let word = words
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("header is missing `{name}`")))?;
        word.strip_prefix(name)
            .and_then(|w| w.strip_prefix('='))
            .map(str::to_owned)
            .ok_or_else(|| Error::Checkpoint(format!("expected `{name}=...`, found `{word}`")))
    };
    let number = |s: String| -> Result<u64> {
        s.parse()
            .map_err(|_| Error::Checkpoint(format!("bad integer `{s}`")))
    };
    let kind: ModelKind = field("kind")?.parse()?;
    let arch = Architecture {
        input_dim: number(field("input_dim")?)? as usize,
        hidden: number(field("hidden")?)? as usize,
        depth: number(field("depth")?)? as usize,
        output_dim: number(field("output_dim")?)? as usize,
    };
    let seed = number(field("seed")?)?;
    let count = number(field("params")?)? as usize;
    if arch.depth < 2 || arch.input_dim < 2 || count != arch.param_count() {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match the architecture"
        )));
    }
    let mut bytes = vec![0u8; 8 * count];
    input
        .read_exact(&mut bytes)
        .map_err(|_| Error::Checkpoint("truncated parameter block".into()))?;
    if input.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FlowModel::from_params(kind, MlpParams::from_flat(arch, seed, &flat)?)
}
