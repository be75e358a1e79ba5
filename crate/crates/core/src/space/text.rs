//! Line-oriented genome text.
//!
//! ```text
//! space rnn 4
//! node 1 tanh
//! node 2 1 relu
//! node 3 2 relu
//! node 4 1 tanh
//! ```
//!
//! Macro layers read `layer <k> <op> <skips>` with skips as a comma list or
//! `-`; micro cells read `conv|reduce <i> <prev_a> <prev_b> <op_a> <op_b>`.
//! Blank lines and `#` comments are ignored.

use super::{Activation, Genome, MacroGenome, MacroOp, MicroCell, MicroGenome, MicroNode, MicroOp, RnnGenome, SpaceKind, SpaceSpec};
use crate::error::{Error, Result};

impl Genome {
    pub fn to_text(&self) -> String {
        let spec = self.spec();
        let mut out = format!("space {} {}\n", spec.kind().name(), spec.nodes());
        match self {
            Genome::Rnn(g) => {
                for (i, a) in g.activations.iter().enumerate() {
                    match g.prev_of(i + 1) {
                        None => out.push_str(&format!("node {} {}\n", i + 1, a.name())),
                        Some(p) => out.push_str(&format!("node {} {} {}\n", i + 1, p, a.name())),
                    }
                }
            }
            Genome::Macro(g) => {
                for (i, op) in g.ops.iter().enumerate() {
                    let src = g.skip_sources(i + 1);
                    let skips = if src.is_empty() {
                        "-".to_string()
                    } else {
                        src.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
                    };
                    out.push_str(&format!("layer {} {} {}\n", i + 1, op.name(), skips));
                }
            }
            Genome::Micro(g) => {
                for (tag, cell) in [("conv", &g.conv), ("reduce", &g.reduce)] {
                    for (i, n) in cell.nodes.iter().enumerate() {
                        out.push_str(&format!(
                            "{tag} {} {} {} {} {}\n",
                            i + 3,
                            n.prev_a,
                            n.prev_b,
                            n.op_a.name(),
                            n.op_b.name()
                        ));
                    }
                }
            }
        }
        out
    }

    /// Parses text written by [`Genome::to_text`]. When `spec` is given the
    /// header must match it.
    ///
    /// Range faults report the 0-based decision block (body line) of the
    /// first out-of-range index.
    pub fn parse(text: &str, spec: Option<&SpaceSpec>) -> Result<Genome> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or(Error::Malformed {
            line: 1,
            message: "empty genome text".into(),
        })?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 || h[0] != "space" {
            return Err(malformed(hline, "expected `space <kind> <nodes>`"));
        }
        let kind = SpaceKind::parse(h[1]).map_err(|e| malformed(hline, &e.to_string()))?;
        let nodes: usize = number(hline, h[2])?;
        let own = SpaceSpec::new(kind, nodes).map_err(|e| malformed(hline, &e.to_string()))?;
        if let Some(s) = spec {
            if *s != own {
                return Err(Error::SpecMismatch(format!(
                    "text describes {} {}, expected {} {}",
                    kind.name(),
                    nodes,
                    s.kind().name(),
                    s.nodes()
                )));
            }
        }
        let body: Vec<(usize, Vec<&str>)> = lines.map(|(n, l)| (n, l.split_whitespace().collect())).collect();
        let expected = match kind {
            SpaceKind::Rnn | SpaceKind::Macro => nodes,
            SpaceKind::Micro => 2 * (nodes - 2),
        };
        if body.len() != expected {
            let line = body.get(expected).map(|b| b.0).unwrap_or(hline + body.len() + 1);
            return Err(malformed(line, &format!("expected {expected} decision lines, found {}", body.len())));
        }
        let genome = match kind {
            SpaceKind::Rnn => parse_rnn(&body)?,
            SpaceKind::Macro => parse_macro(&body)?,
            SpaceKind::Micro => parse_micro(&body, nodes)?,
        };
        Ok(genome)
    }
}

fn malformed(line: usize, message: &str) -> Error {
    Error::Malformed {
        line,
        message: message.to_string(),
    }
}

fn number(line: usize, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| malformed(line, &format!("`{s}` is not a non-negative integer")))
}

fn expect_index(line: usize, tok: &str, want: usize) -> Result<()> {
    let got = number(line, tok)?;
    if got != want {
        return Err(malformed(line, &format!("expected node {want}, found {got}")));
    }
    Ok(())
}

fn prev_index(line: usize, block: usize, tok: &str, node: usize) -> Result<usize> {
    let p = number(line, tok)?;
    if p == 0 || p >= node {
        return Err(Error::Range {
            decision: block,
            message: format!("node {node} cannot read node {p}"),
        });
    }
    Ok(p)
}

fn parse_rnn(body: &[(usize, Vec<&str>)]) -> Result<Genome> {
    let mut activations = Vec::new();
    let mut prev = Vec::new();
    for (block, (line, t)) in body.iter().enumerate() {
        let node = block + 1;
        let arity = if node == 1 { 3 } else { 4 };
        if t.len() != arity || t[0] != "node" {
            return Err(malformed(*line, "expected `node <l> [<prev>] <activation>`"));
        }
        expect_index(*line, t[1], node)?;
        if node > 1 {
            prev.push(prev_index(*line, block, t[2], node)?);
        }
        activations.push(Activation::parse(t[arity - 1])?);
    }
    Ok(Genome::Rnn(RnnGenome { activations, prev }))
}

fn parse_macro(body: &[(usize, Vec<&str>)]) -> Result<Genome> {
    let mut ops = Vec::new();
    let mut skips = Vec::new();
    for (block, (line, t)) in body.iter().enumerate() {
        let k = block + 1;
        if t.len() != 4 || t[0] != "layer" {
            return Err(malformed(*line, "expected `layer <k> <op> <skips|->`"));
        }
        expect_index(*line, t[1], k)?;
        ops.push(MacroOp::parse(t[2])?);
        let mut bits = 0u64;
        if t[3] != "-" {
            for s in t[3].split(',') {
                let j = prev_index(*line, block, s, k)?;
                if bits >> (j - 1) & 1 == 1 {
                    return Err(malformed(*line, &format!("skip {j} listed twice")));
                }
                bits |= 1 << (j - 1);
            }
        }
        skips.push(bits);
    }
    Ok(Genome::Macro(MacroGenome { ops, skips }))
}

fn parse_micro(body: &[(usize, Vec<&str>)], nodes: usize) -> Result<Genome> {
    let per_cell = nodes - 2;
    let mut cells = [Vec::new(), Vec::new()];
    for (block, (line, t)) in body.iter().enumerate() {
        let (c, tag) = if block < per_cell { (0, "conv") } else { (1, "reduce") };
        let i = block % per_cell + 3;
        if t.len() != 6 || t[0] != tag {
            return Err(malformed(*line, &format!("expected `{tag} <i> <prev_a> <prev_b> <op_a> <op_b>`")));
        }
        expect_index(*line, t[1], i)?;
        let prev_a = prev_index(*line, block, t[2], i)?;
        let prev_b = prev_index(*line, block, t[3], i)?;
        cells[c].push(MicroNode {
            prev_a,
            prev_b,
            op_a: MicroOp::parse(t[4])?,
            op_b: MicroOp::parse(t[5])?,
        });
    }
    let [conv, reduce] = cells;
    Ok(Genome::Micro(MicroGenome {
        conv: MicroCell { nodes: conv },
        reduce: MicroCell { nodes: reduce },
    }))
}
