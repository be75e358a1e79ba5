use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients to central differences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// `max |ad - fd| / max(1, |ad|)` over compared coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input, flat index)` of coordinates whose perturbation switched a
    /// piecewise branch (relu sign, max-pool winner) and were not compared.
    pub excluded: Vec<(usize, usize)>,
    pub autodiff: Vec<Tensor>,
}

struct Probe {
    loss: f64,
    signature: (u64, bool),
}

fn compare(
    points: &mut [Tensor],
    ad: Vec<Tensor>,
    h: f64,
    mut eval: impl FnMut(&[Tensor]) -> Result<Probe>,
) -> Result<GradCheckReport> {
    let base = eval(points)?;
    let mut report = GradCheckReport::default();
    for i in 0..points.len() {
        for j in 0..points[i].len() {
            let orig = points[i].values()[j];
            points[i].values_mut()[j] = orig + h;
            let plus = eval(points);
            points[i].values_mut()[j] = orig - h;
            let minus = eval(points);
            points[i].values_mut()[j] = orig;
            let (plus, minus) = (plus?, minus?);
            if plus.signature.0 != base.signature.0 || minus.signature.0 != base.signature.0 {
                report.excluded.push((i, j));
                continue;
            }
            let fd = (plus.loss - minus.loss) / (2.0 * h);
            let a = ad[i].values()[j];
            let err = (a - fd).abs() / a.abs().max(1.0);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    report.autodiff = ad;
    Ok(report)
}

fn scalar_loss(tape: &Tape, v: Var) -> Result<f64> {
    tape.value(v).item()
}

/// Checks `f` at `point`, treating every tensor of `point` as a free input.
pub fn grad_check<F>(f: F, point: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if point.is_empty() {
        return Err(Error::Empty("grad_check needs at least one input".into()));
    }
    let mut tape = Tape::new();
    let vars = point
        .iter()
        .map(|t| tape.input(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let ad = vars
        .iter()
        .zip(point)
        .map(|(v, t)| grads.var(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut points = point.to_vec();
    compare(&mut points, ad, h, |pts| {
        let mut tape = Tape::new();
        tape.set_track_kinks(true);
        let vars = pts
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(Probe {
            loss: scalar_loss(&tape, out)?,
            signature: tape.kink_signature(),
        })
    })
}

/// Checks `f` with respect to the listed parameters of `store`.
pub fn grad_check_params<F>(f: F, store: &ParamStore, ids: &[ParamId], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    let ad = ids
        .iter()
        .map(|id| grads.param(*id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(*id).shape())))
        .collect();

    let mut work = store.clone();
    let mut points: Vec<Tensor> = ids.iter().map(|id| store.get(*id).clone()).collect();
    compare(&mut points, ad, h, |pts| {
        for (id, t) in ids.iter().zip(pts) {
            work.get_mut(*id).values_mut().copy_from_slice(t.values());
        }
        let mut tape = Tape::new();
        tape.set_track_kinks(true);
        let out = f(&mut tape, &work)?;
        Ok(Probe {
            loss: scalar_loss(&tape, out)?,
            signature: tape.kink_signature(),
        })
    })
}
