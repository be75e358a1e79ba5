use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use enas_core::cnn::{MacroConfig, MacroSupernet, MicroConfig, MicroSupernet};
use enas_core::layers::Mode;
use enas_core::rnn::{Phase, RnnConfig, RnnSupernet};
use enas_core::space::{sample_uniform, Genome, MicroOp, SpaceSpec};
use enas_core::{Tape, Tensor};

fn rnn_net(nodes: usize, hidden: usize, phase: Phase, seed: u64) -> RnnSupernet {
    let config = RnnConfig {
        vocab: 5,
        embed: hidden,
        hidden,
        nodes,
        tied: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = RnnSupernet::new(config, phase, &mut rng).unwrap();
    for id in net.store.ids().collect::<Vec<_>>() {
        if net.store.is_trainable(id) && !net.store.name(id).contains("bn") {
            net.store.get_mut(id).values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
    }
    net
}

fn matvec(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    (0..cols).map(|c| (0..rows).map(|r| x[r] * w.values()[r * cols + c]).sum()).collect()
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn highway(gate: &[f64], cand: &[f64], carry: &[f64]) -> Vec<f64> {
    gate.iter().zip(cand).zip(carry).map(|((c, h), p)| c * h + (1.0 - c) * p).collect()
}

pub fn worked_rnn_example_output_is_mean_of_h3_h4() {
    let net = rnn_net(4, 3, Phase::Retrain, 1);
    let g = Genome::parse("space rnn 4\nnode 1 tanh\nnode 2 1 relu\nnode 3 2 relu\nnode 4 1 tanh\n", None).unwrap();
    let x = [0.3, -0.7, 0.2];
    let hp = [0.5, 0.1, -0.4];
    let w = |name: &str| net.store.get(net.store.find(name).unwrap()).clone();
    let add = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(p, q)| p + q).collect::<Vec<_>>();
    let gate1: Vec<f64> = add(matvec(&x, &w("rnn/w_xc")), matvec(&hp, &w("rnn/w_c0"))).into_iter().map(sig).collect();
    let cand1: Vec<f64> = add(matvec(&x, &w("rnn/w_xh")), matvec(&hp, &w("rnn/w_h1"))).into_iter().map(f64::tanh).collect();
    let h1 = highway(&gate1, &cand1, &hp);
    let node = |input: &[f64], l: usize, j: usize, f: fn(f64) -> f64| {
        let c: Vec<f64> = matvec(input, &w(&format!("rnn/w_c[{l},{j}]"))).into_iter().map(sig).collect();
        let h: Vec<f64> = matvec(input, &w(&format!("rnn/w_h[{l},{j}]"))).into_iter().map(f).collect();
        highway(&c, &h, input)
    };
    let relu = |v: f64| v.max(0.0);
    let h2 = node(&h1, 2, 1, relu);
    let h3 = node(&h2, 3, 2, relu);
    let h4 = node(&h1, 4, 1, f64::tanh);
    let expected: Vec<f64> = h3.iter().zip(&h4).map(|(a, b)| (a + b) / 2.0).collect();

    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::new(vec![1, 3], x.to_vec()).unwrap()).unwrap();
    let hv = tape.constant(Tensor::new(vec![1, 3], hp.to_vec()).unwrap()).unwrap();
    let out = net.forward_cell(&mut tape, &g, xv, hv, Mode::Eval).unwrap();
    for (a, b) in tape.value(out.output).values().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

/// One random cell evaluation: every gate strictly inside (0, 1).
pub fn gates_inside_unit_interval(seed: u64, nodes: usize) {
    let net = rnn_net(nodes, 4, Phase::Search, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let g = sample_uniform(&SpaceSpec::rnn(nodes).unwrap(), &mut rng);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_fn(&[3, 4], |_| rng.gen_range(-3.0..3.0))).unwrap();
    let h = tape.constant(Tensor::from_fn(&[3, 4], |_| rng.gen_range(-3.0..3.0))).unwrap();
    let out = net.forward_cell(&mut tape, &g, x, h, Mode::Batch).unwrap();
    assert_eq!(out.gates.len(), nodes);
    for gate in &out.gates {
        assert!(tape.value(*gate).values().iter().all(|c| *c > 0.0 && *c < 1.0));
    }
    assert!(!g.as_rnn().unwrap().loose_ends().is_empty());
    assert_eq!(tape.shape(out.output), &[3, 4]);
}

fn micro_net(nodes: usize, seed: u64) -> MicroSupernet {
    let config = MicroConfig {
        nodes,
        channels: 3,
        classes: 4,
        in_channels: 3,
        repeats: 1,
        projection_bn: true,
    };
    MicroSupernet::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_image(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn worked_micro_example_node_formulas() {
    let net = micro_net(4, 2);
    let g = Genome::parse(
        "space micro 4\nconv 3 2 2 sepconv5 identity\nconv 4 3 1 avgpool3 sepconv3\nreduce 3 1 2 maxpool3 identity\nreduce 4 1 1 identity sepconv3\n",
        None,
    )
    .unwrap();
    let cell = &g.as_micro().unwrap().conv;
    assert_eq!(cell.loose_ends(), vec![4]);
    let h1 = random_image(&[2, 6, 6, 3], 3);
    let h2 = random_image(&[2, 6, 6, 3], 4);

    let mut tape = Tape::new();
    let (a, b) = (tape.constant(h1.clone()).unwrap(), tape.constant(h2.clone()).unwrap());
    let r = net.cell_forward(&mut tape, 0, cell, a, b, Mode::Batch).unwrap();
    let got3 = tape.value(r.nodes[2]).clone();
    let got4 = tape.value(r.nodes[3]).clone();
    let out = tape.value(r.output).clone();

    let mut t = Tape::new();
    let (a, b) = (t.constant(h1).unwrap(), t.constant(h2.clone()).unwrap());
    let sep5 = net.apply_op(&mut t, 0, 3, 0, MicroOp::SepConv5, b, 1, Mode::Batch).unwrap();
    let h3 = t.add(sep5, b).unwrap();
    let pool = t.avg_pool(h3, 3, 1).unwrap();
    let sep3 = net.apply_op(&mut t, 0, 4, 1, MicroOp::SepConv3, a, 1, Mode::Batch).unwrap();
    let h4 = t.add(pool, sep3).unwrap();
    assert_eq!(t.value(h3), &got3);
    assert_eq!(t.value(h4), &got4);
    assert_eq!(out.shape(), &[2, 6, 6, 3]);
}

pub fn all_identity_cell_doubles_equal_inputs() {
    let net = micro_net(4, 5);
    let g = Genome::parse(
        "space micro 4\nconv 3 1 2 identity identity\nconv 4 1 2 identity identity\nreduce 3 1 2 identity identity\nreduce 4 1 2 identity identity\n",
        None,
    )
    .unwrap();
    let x = random_image(&[1, 4, 4, 3], 6);
    let mut tape = Tape::new();
    let v = tape.constant(x.clone()).unwrap();
    let r = net.cell_forward(&mut tape, 0, &g.as_micro().unwrap().conv, v, v, Mode::Batch).unwrap();
    for node in &r.nodes[2..] {
        let got = tape.value(*node);
        assert_eq!(got.shape(), x.shape());
        for (a, b) in got.values().iter().zip(x.values()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }
}

pub fn reduction_cells_halve_resolution() {
    let net = micro_net(5, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let spec = SpaceSpec::micro(5).unwrap();
    let reductions: Vec<usize> = (0..net.cell_count()).filter(|p| net.is_reduction(*p)).collect();
    assert_eq!(reductions.len(), 2);
    for _ in 0..20 {
        let g = sample_uniform(&spec, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(random_image(&[2, 8, 8, 3], rng.gen())).unwrap();
        let (logits, outs) = net.forward_traced(&mut tape, &g, x, Mode::Batch).unwrap();
        assert_eq!(tape.shape(logits), &[2, 4]);
        let mut side = 8;
        for (p, o) in outs.iter().enumerate() {
            if net.is_reduction(p) {
                side /= 2;
            }
            assert_eq!(tape.shape(*o), &[2, side, side, 3], "cell {p} of {}", g.to_text());
        }
        let r = net.cell_forward(&mut tape, reductions[0], &g.as_micro().unwrap().reduce, x, x, Mode::Batch);
        assert!(r.is_ok());
    }
}

pub fn macro_channels_are_invariant_over_1000_genomes() {
    let config = MacroConfig {
        layers: 6,
        channels: 3,
        classes: 4,
        in_channels: 3,
        projection_bn: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let net = MacroSupernet::new(config, &mut rng).unwrap();
    let spec = net.spec();
    let images = random_image(&[2, 4, 4, 3], 11);
    for _ in 0..1000 {
        let g = sample_uniform(&spec, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(images.clone()).unwrap();
        let t = net.forward_traced(&mut tape, &g, x, Mode::Batch).unwrap();
        assert_eq!(t.layer_outputs.len(), 7);
        for o in &t.layer_outputs {
            assert_eq!(tape.shape(*o), &[2, 4, 4, 3]);
        }
        let m = g.as_macro().unwrap();
        for (k, input) in t.layer_inputs.iter().enumerate() {
            assert_eq!(tape.shape(*input)[3], 3 * (1 + m.skip_sources(k + 1).len()));
        }
        assert_eq!(tape.shape(t.logits), &[2, 4]);
    }
}

/// Decision vector and text forms of sampled genomes parse back unchanged.
pub fn round_trips(samples: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..samples {
        let spec = match i % 3 {
            0 => SpaceSpec::rnn(rng.gen_range(1..=12)),
            1 => SpaceSpec::macro_cnn(rng.gen_range(1..=12)),
            _ => SpaceSpec::micro(rng.gen_range(3..=7)),
        }
        .unwrap();
        let g = sample_uniform(&spec, &mut rng);
        g.validate(&spec).unwrap();
        assert_eq!(Genome::from_decisions(&spec, &g.to_decisions()).unwrap(), g);
        let text = g.to_text();
        assert_eq!(Genome::parse(&text, Some(&spec)).unwrap(), g);
        assert_eq!(Genome::parse(&text, None).unwrap().id(), g.id());
    }
}

/// Everything above in one pass.
pub fn suite() {
    worked_rnn_example_output_is_mean_of_h3_h4();
    for seed in 0..40 {
        gates_inside_unit_interval(seed, 1 + seed as usize % 8);
    }
    worked_micro_example_node_formulas();
    all_identity_cell_doubles_equal_inputs();
    reduction_cells_halve_resolution();
    macro_channels_are_invariant_over_1000_genomes();
    round_trips(300, 12);
}
