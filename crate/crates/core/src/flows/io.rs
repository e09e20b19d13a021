//! Versioned text format for [`FlowNetwork`].
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! reload reproduces every parameter bit for bit.

use std::io::{BufRead, Write};

use super::{CouplingKind, CouplingLayer, FlowNetwork};
use crate::nn::{Activation, Dense, Fnn};
use crate::textio::{join, read_mat, write_mat, LineReader};
use crate::{Real, Result};

const HEADER: &str = "koopman-flow-network 1";

pub fn write_network<T: Real, W: Write>(net: &FlowNetwork<T>, w: &mut W) -> Result<()> {
    writeln!(w, "{HEADER}")?;
    writeln!(w, "dim {}", net.dim())?;
    writeln!(w, "depth {}", net.depth())?;
    for (i, layer) in net.layers().iter().enumerate() {
        writeln!(
            w,
            "layer {i} {} {} {} {}",
            layer.kind().name(),
            u8::from(layer.flipped()),
            layer.split_index(),
            layer.net().activation().name()
        )?;
        writeln!(w, "dims {}", join(&layer.net().dims()))?;
        for d in layer.net().layers() {
            write_mat(w, "weight", &d.weight)?;
            write_mat(w, "bias", &d.bias)?;
        }
    }
    writeln!(w, "end")?;
    Ok(())
}

pub fn read_network<T: Real, R: BufRead>(r: R) -> Result<FlowNetwork<T>> {
    read_network_from(&mut LineReader::new(r))
}

pub(crate) fn read_network_from<T: Real, R: BufRead>(r: &mut LineReader<R>) -> Result<FlowNetwork<T>> {
    let header = r.line()?;
    if header != HEADER {
        return Err(r.err(format!("unsupported network header `{header}`")));
    }
    let dim: usize = r.keyed_one("dim")?;
    let depth: usize = r.keyed_one("depth")?;
    let mut layers = Vec::with_capacity(depth);
    for i in 0..depth {
        let head = r.keyed("layer")?;
        if head.len() != 5 || r.parse::<usize>(&head[0])? != i {
            return Err(r.err(format!("malformed header for layer {i}")));
        }
        let kind = CouplingKind::parse(&head[1]).map_err(|e| r.err(e))?;
        let flipped = match head[2].as_str() {
            "0" => false,
            "1" => true,
            other => return Err(r.err(format!("bad flip flag `{other}`"))),
        };
        let q: usize = r.parse(&head[3])?;
        let act = Activation::parse(&head[4]).map_err(|e| r.err(e))?;
        let dims: Vec<usize> = r
            .keyed("dims")?
            .iter()
            .map(|t| r.parse(t))
            .collect::<Result<_>>()?;
        if dims.len() < 2 {
            return Err(r.err("a coupling network needs at least two widths"));
        }
        let mut dense = Vec::with_capacity(dims.len() - 1);
        for _ in 1..dims.len() {
            let weight = read_mat(r, "weight")?;
            let bias = read_mat(r, "bias")?;
            dense.push(Dense { weight, bias });
        }
        let net = Fnn::from_layers(dense, act)?;
        if net.dims() != dims {
            return Err(r.err(format!("layer {i} widths do not match its matrices")));
        }
        layers.push(CouplingLayer::new(kind, flipped, dim, q, net)?);
    }
    let end = r.line()?;
    if end != "end" {
        return Err(r.err(format!("expected `end`, found `{end}`")));
    }
    FlowNetwork::new(dim, layers)
}

impl<T: Real> FlowNetwork<T> {
    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        write_network(self, &mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("network text is ASCII")
    }

    pub fn from_text(s: &str) -> Result<Self> {
        read_network(s.as_bytes())
    }
}
