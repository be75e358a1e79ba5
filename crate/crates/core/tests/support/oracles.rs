use std::collections::HashSet;

use num_bigint::BigUint;

use enas_core::space::{
    count_cell, count_space, enumerate, enumerate_cells, Activation, Genome, MacroGenome, MacroOp, MicroCell, MicroGenome, MicroNode, MicroOp,
    RnnGenome, SpaceSpec,
};

/// Every rnn genome, built from the structure rather than the decision layout.
pub fn brute_rnn(n: usize) -> HashSet<Genome> {
    let mut out = HashSet::new();
    let acts = 4usize.pow(n as u32);
    let prevs: usize = (1..n).product::<usize>().max(1);
    for a in 0..acts {
        for p in 0..prevs {
            let activations = (0..n).map(|i| Activation::ALL[a / 4usize.pow(i as u32) % 4]).collect();
            let mut rest = p;
            let mut prev = Vec::new();
            for l in 2..=n {
                prev.push(rest % (l - 1) + 1);
                rest /= l - 1;
            }
            out.insert(Genome::Rnn(RnnGenome { activations, prev }));
        }
    }
    out
}

pub fn brute_macro(l: usize) -> HashSet<Genome> {
    let mut out = HashSet::new();
    let ops = 6usize.pow(l as u32);
    let skip_bits = l * (l - 1) / 2;
    for o in 0..ops {
        for mask in 0u64..(1 << skip_bits) {
            let ops = (0..l).map(|i| MacroOp::ALL[o / 6usize.pow(i as u32) % 6]).collect();
            let mut skips = Vec::new();
            let mut at = 0;
            for k in 1..=l {
                let w = k - 1;
                skips.push((mask >> at) & ((1 << w) - 1));
                at += w;
            }
            out.insert(Genome::Macro(MacroGenome { ops, skips }));
        }
    }
    out
}

pub fn brute_cells(b: usize) -> Vec<MicroCell> {
    let mut cells = vec![MicroCell { nodes: vec![] }];
    for i in 3..=b {
        let mut next = Vec::new();
        for c in &cells {
            for prev_a in 1..i {
                for prev_b in 1..i {
                    for op_a in MicroOp::ALL {
                        for op_b in MicroOp::ALL {
                            let mut nodes = c.nodes.clone();
                            nodes.push(MicroNode { prev_a, prev_b, op_a, op_b });
                            next.push(MicroCell { nodes });
                        }
                    }
                }
            }
        }
        cells = next;
    }
    cells
}

pub fn check_space(spec: SpaceSpec, brute: HashSet<Genome>) {
    let listed: Vec<Genome> = enumerate(&spec).collect();
    let set: HashSet<Genome> = listed.iter().cloned().collect();
    assert_eq!(set.len(), listed.len(), "{spec:?} enumeration repeats a genome");
    assert_eq!(BigUint::from(listed.len()), count_space(&spec), "{spec:?}");
    assert_eq!(set, brute, "{spec:?}");
    for g in &listed {
        g.validate(&spec).unwrap();
    }
    let decisions: Vec<Vec<usize>> = listed.iter().map(|g| g.to_decisions()).collect();
    assert!(decisions.windows(2).all(|w| w[0] < w[1]), "{spec:?} not in lexicographic order");
}

pub fn rnn_up_to(n: usize) {
    for n in 1..=n {
        check_space(SpaceSpec::rnn(n).unwrap(), brute_rnn(n));
    }
}

pub fn macro_closed_form(l: u32) -> BigUint {
    BigUint::from(6u32).pow(l) * BigUint::from(2u32).pow(l * (l - 1) / 2)
}

/// Brute force up to `brute`, closed form up to `closed`.
pub fn macro_up_to(brute: u32, closed: u32) {
    for l in 1..=closed {
        let spec = SpaceSpec::macro_cnn(l as usize).unwrap();
        if l <= brute {
            check_space(spec.clone(), brute_macro(l as usize));
        }
        assert_eq!(count_space(&spec), macro_closed_form(l), "macro {l}");
    }
}

pub fn micro_b3() {
    let cells = brute_cells(3);
    let mut brute = HashSet::new();
    for conv in &cells {
        for reduce in &cells {
            brute.insert(Genome::Micro(MicroGenome {
                conv: conv.clone(),
                reduce: reduce.clone(),
            }));
        }
    }
    check_space(SpaceSpec::micro(3).unwrap(), brute);
}

/// The two cells are independent, so the space is the cell list squared.
pub fn micro_b4_cells() {
    let spec = SpaceSpec::micro(4).unwrap();
    let listed: Vec<MicroCell> = enumerate_cells(&spec).collect();
    let set: HashSet<MicroCell> = listed.iter().cloned().collect();
    assert_eq!(set.len(), listed.len());
    assert_eq!(set, brute_cells(4).into_iter().collect());
    let cells = count_cell(&spec);
    assert_eq!(cells, BigUint::from(listed.len()));
    assert_eq!(count_space(&spec), &cells * &cells);
}
