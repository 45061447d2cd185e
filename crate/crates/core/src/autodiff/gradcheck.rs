use rand::seq::index::sample;
use rand::Rng;

use super::{backward, ParamStore, Real, Tape, TensorError, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(1e-8, |analytic| + |numeric|)
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coords_checked: usize,
}

const STEP: f64 = 1e-5;

/// Compares the analytic gradient of `f` against central finite differences
/// on up to `per_param` randomly chosen coordinates of every parameter.
pub fn grad_check<S, E, F, R>(store: &ParamStore<S>, f: F, per_param: usize, rng: &mut R) -> Result<GradCheckReport, E>
where
    S: Real,
    E: From<TensorError>,
    F: Fn(&mut Tape<'_, S>) -> Result<Var, E>,
    R: Rng + ?Sized,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        backward(&tape, loss)?
    };
    let eval = |s: &ParamStore<S>| -> Result<f64, E> {
        let mut tape = Tape::new(s);
        let loss = f(&mut tape)?;
        Ok(tape.scalar(loss).f64())
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        coords_checked: 0,
    };
    for id in store.ids() {
        let len = store.get(id).value.len();
        let coords: Vec<usize> = if per_param >= len {
            (0..len).collect()
        } else {
            sample(rng, len, per_param).into_vec()
        };
        for ix in coords {
            let orig = store.get(id).value.data()[ix];
            work.get_mut(id).value.data_mut()[ix] = S::c(orig.f64() + STEP);
            let plus = eval(&work)?;
            work.get_mut(id).value.data_mut()[ix] = S::c(orig.f64() - STEP);
            let minus = eval(&work)?;
            work.get_mut(id).value.data_mut()[ix] = orig;

            let numeric = (plus - minus) / (2.0 * STEP);
            let exact = analytic.get(id).map_or(0.0, |g| g[ix].f64());
            let err = (exact - numeric).abs() / (exact.abs() + numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), ix));
                report.worst_values = (exact, numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_at_three() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::vector(vec![3.0]));
        let square = |t: &mut Tape<'_, f64>| -> Result<Var, TensorError> {
            let v = t.param(w);
            let sq = t.mul(v, v)?;
            t.sum(sq)
        };
        let mut tape = Tape::new(&store);
        let loss = square(&mut tape).unwrap();
        let g = backward(&tape, loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &[6.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = grad_check(&store, square, 1, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f64>::new();
        let m = store.add_uniform("m", vec![3, 4], &mut rng);
        let x = store.add_uniform("x", vec![4], &mut rng);
        let b = store.add_uniform("b", vec![4], &mut rng);
        let s = store.add("s", Tensor::vector(vec![0.4]));
        let f = |t: &mut Tape<'_, f64>| -> Result<Var, TensorError> {
            let (m, x, b, s) = (t.param(m), t.param(x), t.param(b), t.param(s));
            let y = t.matmul(m, x)?;
            let rows = t.stack(&[x, b])?;
            let z = t.matmul_t(rows, m)?;
            let z = t.add_rows(z, y)?;
            let r0 = t.row(z, 0)?;
            let r1 = t.row(z, 1)?;
            let cat = t.concat(&[r0, r1, y])?;
            let parts = t.split(cat, 3)?;
            let a = t.tanh(parts[0])?;
            let c = t.sigmoid(parts[1])?;
            let d = t.mul(a, c)?;
            let d = t.add(d, parts[2])?;
            let p = t.softmax(d)?;
            let q = t.scale(p, s)?;
            let q = t.rsub(1.0, q)?;
            let q = t.gather(q, &[0, 2, 2])?;
            let lq = t.log(q)?;
            let wsum = t.matmul(y, m)?; // [3] × [3,4] → [4]
            let e = t.sum(wsum)?;
            let l = t.sum(lq)?;
            t.add(l, e)
        };
        let r = grad_check(&store, f, usize::MAX, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(r.coords_checked, 12 + 4 + 4 + 1);
    }
}
