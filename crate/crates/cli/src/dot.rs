//! Graphviz export of genomes.

use std::fmt::Write;

use enas_core::space::{Genome, MicroCell};

/// DOT digraph: solid edges carry data, dashed edges are skip
/// connections, loose ends feed a double-circled output node.
pub fn export_dot(genome: &Genome) -> String {
    let mut s = String::from("digraph genome {\n  rankdir=LR;\n");
    match genome {
        Genome::Rnn(g) => {
            s.push_str("  x [label=\"x, h_prev\", shape=box];\n");
            for (i, a) in g.activations.iter().enumerate() {
                let _ = writeln!(s, "  n{} [label=\"{}: {}\"];", i + 1, i + 1, a.name());
            }
            s.push_str("  x -> n1;\n");
            for l in 2..=g.nodes() {
                let _ = writeln!(s, "  n{} -> n{l};", g.prev_of(l).expect("node has a predecessor"));
            }
            outputs(&mut s, "", &g.loose_ends());
        }
        Genome::Macro(g) => {
            s.push_str("  n0 [label=\"stem\", shape=box];\n");
            for (k, op) in g.ops.iter().enumerate() {
                let _ = writeln!(s, "  n{} [label=\"{}: {}\"];", k + 1, k + 1, op.name());
            }
            for k in 1..=g.layers() {
                let _ = writeln!(s, "  n{} -> n{k};", k - 1);
                for j in g.skip_sources(k) {
                    let _ = writeln!(s, "  n{j} -> n{k} [style=dashed];");
                }
            }
            outputs(&mut s, "", &[g.layers()]);
        }
        Genome::Micro(g) => {
            cell(&mut s, "conv", &g.conv);
            cell(&mut s, "reduce", &g.reduce);
        }
    }
    s.push_str("}\n");
    s
}

fn outputs(s: &mut String, prefix: &str, loose: &[usize]) {
    let _ = writeln!(s, "  {prefix}out [label=\"output\", shape=doublecircle];");
    for j in loose {
        let _ = writeln!(s, "  {prefix}n{j} -> {prefix}out;");
    }
}

fn cell(s: &mut String, name: &str, c: &MicroCell) {
    let _ = writeln!(s, "  subgraph cluster_{name} {{\n  label=\"{name} cell\";");
    for j in 1..=2 {
        let _ = writeln!(s, "  {name}_n{j} [label=\"input {j}\", shape=box];");
    }
    for (k, n) in c.nodes.iter().enumerate() {
        let i = k + 3;
        let _ = writeln!(s, "  {name}_n{i} [label=\"{i}: add\"];");
        let _ = writeln!(s, "  {name}_n{} -> {name}_n{i} [label=\"{}\"];", n.prev_a, n.op_a.name());
        let _ = writeln!(s, "  {name}_n{} -> {name}_n{i} [label=\"{}\"];", n.prev_b, n.op_b.name());
    }
    outputs(s, &format!("{name}_"), &c.loose_ends());
    s.push_str("  }\n");
}

#[cfg(test)]
mod tests {
    use super::*;
    use enas_core::space::SpaceSpec;

    #[test]
    fn rnn_example_edges_and_outputs() {
        let g = Genome::parse("space rnn 4\nnode 1 tanh\nnode 2 1 relu\nnode 3 2 relu\nnode 4 1 tanh\n", None).unwrap();
        let d = export_dot(&g);
        for e in ["n1 -> n2;", "n2 -> n3;", "n1 -> n4;", "n3 -> out;", "n4 -> out;"] {
            assert!(d.contains(e), "{e} missing from\n{d}");
        }
        assert!(!d.contains("n2 -> out;"));
    }

    #[test]
    fn chain_has_single_output() {
        let spec = SpaceSpec::rnn(3).unwrap();
        let g = Genome::from_decisions(&spec, &[0, 0, 0, 1, 0]).unwrap();
        let d = export_dot(&g);
        assert_eq!(d.matches("-> out;").count(), 1);
    }

    #[test]
    fn macro_skip_is_dashed() {
        let g = Genome::parse("space macro 4\nlayer 1 conv3 -\nlayer 2 conv3 -\nlayer 3 conv3 -\nlayer 4 conv5 1\n", None).unwrap();
        let d = export_dot(&g);
        assert!(d.contains("n1 -> n4 [style=dashed];"), "{d}");
    }
}
