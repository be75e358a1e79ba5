use super::{Decision, Genome, MicroCell, SpaceSpec};

/// Lexicographic walk over a decision layout (last decision fastest).
pub struct Enumeration {
    layout: Vec<Decision>,
    current: Option<Vec<usize>>,
}

impl Enumeration {
    fn new(layout: Vec<Decision>) -> Self {
        let start = vec![0; layout.len()];
        Enumeration {
            layout,
            current: Some(start),
        }
    }

    fn advance(&mut self) -> Option<Vec<usize>> {
        let out = self.current.take()?;
        let mut next = out.clone();
        let mut i = next.len();
        let mut done = true;
        while i > 0 {
            i -= 1;
            next[i] += 1;
            if next[i] < self.layout[i].choices {
                done = false;
                break;
            }
            next[i] = 0;
        }
        if !done {
            self.current = Some(next);
        }
        Some(out)
    }
}

/// Every genome of `spec`, in lexicographic decision order.
pub fn enumerate(spec: &SpaceSpec) -> impl Iterator<Item = Genome> {
    let spec = *spec;
    let mut e = Enumeration::new(spec.decisions());
    std::iter::from_fn(move || e.advance()).map(move |d| Genome::from_decisions(&spec, &d).expect("in range"))
}

/// Every single micro cell of `spec`, in lexicographic decision order.
pub fn enumerate_cells(spec: &SpaceSpec) -> impl Iterator<Item = MicroCell> {
    let mut e = Enumeration::new(spec.cell_decisions());
    std::iter::from_fn(move || e.advance()).map(|d| MicroCell::from_decisions(&d))
}
