//! Versioned text checkpoints of trained networks.
//!
//! Layout, one item per line:
//!
//! ```text
//! bridgekit-checkpoint 1
//! config <RunConfig as single-line JSON>
//! net forward <activation> <layers>
//! array forward.0.weight <rows> <cols>
//! <rows lines of cols space-separated values>
//! array forward.0.bias 1 <cols>
//! <1 line>
//! ...
//! net reverse <activation> <layers>     (dsbm only)
//! ...
//! end
//! ```
//!
//! Values use Rust's shortest round-trip formatting, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::net::{Activation, DriftNetwork, Layer};

pub const CHECKPOINT_MAGIC: &str = "bridgekit-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Run configuration plus trained networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub forward: DriftNetwork,
    pub reverse: Option<DriftNetwork>,
}

fn write_array<W: Write>(out: &mut W, name: &str, rows: usize, cols: usize, values: impl Iterator<Item = f64>) -> Result<()> {
    writeln!(out, "array {name} {rows} {cols}")?;
    let values: Vec<f64> = values.collect();
    for r in 0..rows {
        let line = values[r * cols..(r + 1) * cols]
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn write_net<W: Write>(out: &mut W, name: &str, net: &DriftNetwork) -> Result<()> {
    writeln!(out, "net {name} {} {}", net.activation().name(), net.layers().len())?;
    for (k, layer) in net.layers().iter().enumerate() {
        let (r, c) = layer.weight.dim();
        write_array(out, &format!("{name}.{k}.weight"), r, c, layer.weight.iter().copied())?;
        write_array(out, &format!("{name}.{k}.bias"), 1, c, layer.bias.iter().copied())?;
    }
    Ok(())
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(out, "config {}", serde_json::to_string(&self.config)?)?;
        write_net(&mut out, "forward", &self.forward)?;
        if let Some(rev) = &self.reverse {
            write_net(&mut out, "reverse", rev)?;
        }
        writeln!(out, "end")?;
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = Lines {
            inner: input.lines(),
            line: 0,
        };
        let header = lines.next_line()?;
        let version = header
            .strip_prefix(CHECKPOINT_MAGIC)
            .map(str::trim)
            .ok_or_else(|| lines.error("not a bridgekit checkpoint"))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(lines.error(&format!("unsupported checkpoint version {version}")));
        }
        let config_line = lines.next_line()?;
        let json = config_line
            .strip_prefix("config ")
            .ok_or_else(|| lines.error("expected config line"))?;
        let config: RunConfig = serde_json::from_str(json)?;
        let mut forward = None;
        let mut reverse = None;
        loop {
            let line = lines.next_line()?;
            if line == "end" {
                break;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let (name, activation, count) = match fields.as_slice() {
                ["net", name, act, count] => (name.to_string(), *act, *count),
                _ => return Err(lines.error("expected a net header or end")),
            };
            let activation = match activation {
                "silu" => Activation::Silu,
                "tanh" => Activation::Tanh,
                other => return Err(lines.error(&format!("unknown activation {other}"))),
            };
            let count: usize = count.parse().map_err(|_| lines.error("bad layer count"))?;
            let mut layers = Vec::with_capacity(count);
            for k in 0..count {
                let weight = lines.read_array(&format!("{name}.{k}.weight"))?;
                let bias = lines.read_array(&format!("{name}.{k}.bias"))?;
                if bias.nrows() != 1 {
                    return Err(lines.error("bias arrays must have one row"));
                }
                layers.push(Layer {
                    weight,
                    bias: Array1::from(bias.row(0).to_vec()),
                });
            }
            let net = DriftNetwork::from_layers(layers, activation)?;
            match name.as_str() {
                "forward" => forward = Some(net),
                "reverse" => reverse = Some(net),
                other => return Err(lines.error(&format!("unknown network {other}"))),
            }
        }
        let forward = forward.ok_or_else(|| lines.error("checkpoint has no forward network"))?;
        Ok(Self {
            config,
            forward,
            reverse,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

struct Lines<B> {
    inner: std::io::Lines<B>,
    line: usize,
}

impl<B: BufRead> Lines<B> {
    fn error(&self, message: &str) -> Error {
        Error::Parse {
            line: self.line,
            message: message.to_string(),
        }
    }

    fn next_line(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.error("unexpected end of checkpoint")),
        }
    }

    fn read_array(&mut self, expected: &str) -> Result<Array2<f64>> {
        let header = self.next_line()?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (rows, cols) = match fields.as_slice() {
            ["array", name, r, c] if *name == expected => (
                r.parse::<usize>().map_err(|_| self.error("bad row count"))?,
                c.parse::<usize>().map_err(|_| self.error("bad column count"))?,
            ),
            _ => return Err(self.error(&format!("expected array {expected}"))),
        };
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next_line()?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| self.error(&format!("not a number: {v}"))))
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(self.error(&format!("expected {cols} values, found {}", row.len())));
            }
            values.extend(row);
        }
        Ok(Array2::from_shape_vec((rows, cols), values).expect("counted values"))
    }
}
