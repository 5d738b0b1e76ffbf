use super::{Gradients, ParamStore, Real};
use crate::Result;

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Parameter name and element index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares analytic gradients from `grad` against central differences of
/// `loss` over every element of every parameter.
pub fn finite_diff_check<T, L, G>(
    params: &mut ParamStore<T>,
    loss: L,
    grad: G,
    eps: f64,
) -> Result<GradCheck>
where
    T: Real,
    L: Fn(&ParamStore<T>) -> Result<f64>,
    G: Fn(&ParamStore<T>) -> Result<Gradients<T>>,
{
    let analytic = grad(params)?;
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).tensor.len();
        let a = analytic.dense(id, n);
        for i in 0..n {
            let orig = params.get(id).tensor.data()[i];
            params.get_mut(id).tensor.data_mut()[i] = T::of(orig.as_f64() + eps);
            let up = loss(params)?;
            params.get_mut(id).tensor.data_mut()[i] = T::of(orig.as_f64() - eps);
            let down = loss(params)?;
            params.get_mut(id).tensor.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(a[i].as_f64(), numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((params.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}

/// [`finite_diff_check`] with the numeric side evaluated in a reference
/// precision `R` (for example [`DoubleDouble`](super::DoubleDouble)), so
/// that roundoff in the loss does not mask small or vanishing gradients.
/// Analytic gradients are taken at `params` in their own precision.
pub fn finite_diff_check_reference<T, R, L, G>(
    params: &ParamStore<T>,
    loss: L,
    grad: G,
    eps: f64,
) -> Result<GradCheck>
where
    T: Real,
    R: Real,
    L: Fn(&ParamStore<R>) -> Result<R>,
    G: Fn(&ParamStore<T>) -> Result<Gradients<T>>,
{
    let analytic = grad(params)?;
    let mut reference: ParamStore<R> = params.cast();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    let step = R::of(eps);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).tensor.len();
        let a = analytic.dense(id, n);
        for i in 0..n {
            let orig = reference.get(id).tensor.data()[i];
            reference.get_mut(id).tensor.data_mut()[i] = orig + step;
            let up = loss(&reference)?;
            reference.get_mut(id).tensor.data_mut()[i] = orig - step;
            let down = loss(&reference)?;
            reference.get_mut(id).tensor.data_mut()[i] = orig;
            let numeric = ((up - down) / (step + step)).as_f64();
            let err = relative_error(a[i].as_f64(), numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((params.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor, Var};

    fn check_op(build: impl Fn(&mut Tape<'_, f64>, Var) -> Var, init: Tensor<f64>) -> f64 {
        let mut ps = ParamStore::new();
        let x = ps.add("x", init);
        // A fixed random projection turns any output into a scalar with
        // non-trivial upstream gradients.
        let run = |ps: &ParamStore<f64>| -> Result<(f64, Gradients<f64>)> {
            let mut t = Tape::new(ps);
            let xv = t.param(x);
            let y = build(&mut t, xv);
            let (r, c) = t.shape(y);
            let proj = t.constant(Tensor::from_fn(r, c, |i, j| {
                ((i * 7 + j * 3 + 1) as f64 * 0.37).sin()
            }));
            let p = t.mul(y, proj)?;
            let s = t.sum(p);
            Ok((t.scalar(s), t.backward(s)?))
        };
        let report = finite_diff_check(
            &mut ps,
            |ps| run(ps).map(|r| r.0),
            |ps| run(ps).map(|r| r.1),
            1e-6,
        )
        .unwrap();
        report.max_relative_error
    }

    fn input(r: usize, c: usize) -> Tensor<f64> {
        Tensor::from_fn(r, c, |i, j| ((i * 5 + j * 11 + 2) as f64 * 0.61).cos() + 0.05)
    }

    fn positive(r: usize, c: usize) -> Tensor<f64> {
        Tensor::from_fn(r, c, |i, j| 0.5 + ((i * 3 + j) as f64 * 0.3).sin().abs())
    }

    #[test]
    fn every_primitive_matches_central_differences() {
        type Build = Box<dyn Fn(&mut Tape<'_, f64>, Var) -> Var>;
        let w = input(4, 3);
        let cases: Vec<(&str, Build, Tensor<f64>)> = vec![
            ("matmul", Box::new(move |t, x| {
                let w = t.constant(w.clone());
                t.matmul(x, w).unwrap()
            }), input(2, 4)),
            ("matmul lhs const", Box::new(|t, x| {
                let a = t.constant(input(2, 3));
                t.matmul(a, x).unwrap()
            }), input(3, 4)),
            ("matmul_bt", Box::new(|t, x| {
                let w = t.constant(input(5, 3));
                t.matmul_bt(x, w).unwrap()
            }), input(2, 3)),
            ("matmul_bt rhs", Box::new(|t, x| {
                let a = t.constant(input(2, 3));
                t.matmul_bt(a, x).unwrap()
            }), input(4, 3)),
            ("self product", Box::new(|t, x| t.matmul_bt(x, x).unwrap()), input(3, 2)),
            ("transpose", Box::new(|t, x| t.transpose(x)), input(2, 3)),
            ("add row broadcast", Box::new(|t, x| {
                let m = t.constant(input(3, 4));
                t.add(m, x).unwrap()
            }), input(1, 4)),
            ("add col broadcast", Box::new(|t, x| {
                let m = t.constant(input(3, 4));
                t.add(x, m).unwrap()
            }), input(3, 1)),
            ("mul scalar broadcast", Box::new(|t, x| {
                let m = t.constant(input(3, 4));
                t.mul(x, m).unwrap()
            }), input(1, 1)),
            ("mul self", Box::new(|t, x| t.mul(x, x).unwrap()), input(2, 2)),
            ("scale", Box::new(|t, x| t.scale(x, -2.5)), input(2, 2)),
            ("relu", Box::new(|t, x| t.relu(x)), input(3, 3)),
            ("leaky", Box::new(|t, x| t.leaky_relu(x, 0.2)), input(3, 3)),
            ("sigmoid", Box::new(|t, x| t.sigmoid(x)), input(2, 3)),
            ("exp", Box::new(|t, x| t.exp(x)), input(2, 3)),
            ("log", Box::new(|t, x| t.log(x)), positive(2, 3)),
            ("softmax", Box::new(|t, x| t.softmax_rows(x, None).unwrap()), input(3, 4)),
            ("masked softmax", Box::new(|t, x| {
                let mask = vec![true, false, true, true, false, true, true, true, true];
                t.softmax_rows(x, Some(&mask)).unwrap()
            }), input(3, 3)),
            ("log_softmax", Box::new(|t, x| t.log_softmax_rows(x)), input(2, 5)),
            ("sum", Box::new(|t, x| t.sum(x)), input(2, 3)),
            ("mean", Box::new(|t, x| t.mean(x)), input(2, 3)),
            ("concat", Box::new(|t, x| {
                let c = t.constant(input(2, 2));
                let y = t.concat_cols(c, x).unwrap();
                t.concat_cols(y, x).unwrap()
            }), input(2, 3)),
            ("gather", Box::new(|t, x| t.gather_rows(x, &[2, 0, 2, 1]).unwrap()), input(3, 2)),
            ("slice", Box::new(|t, x| t.slice_cols(x, 1, 3).unwrap()), input(2, 4)),
            ("pick", Box::new(|t, x| t.pick(x, 4).unwrap()), input(2, 3)),
        ];
        for (name, build, init) in cases {
            let err = check_op(build, init);
            assert!(err < 1e-6, "{name}: relative error {err}");
        }
    }

    #[test]
    fn sum_of_squares_and_constant() {
        let mut ps = ParamStore::new();
        let x = ps.add("x", input(3, 2));
        let run = |ps: &ParamStore<f64>| -> Result<(f64, Gradients<f64>)> {
            let mut t = Tape::new(ps);
            let xv = t.param(x);
            let sq = t.mul(xv, xv)?;
            let s = t.sum(sq);
            Ok((t.scalar(s), t.backward(s)?))
        };
        let r = finite_diff_check(&mut ps, |p| run(p).map(|r| r.0), |p| run(p).map(|r| r.1), 1e-5)
            .unwrap();
        assert!(r.max_relative_error < 1e-7, "{r:?}");

        let r = finite_diff_check(&mut ps, |_| Ok(4.0), |_| Ok(Gradients::new(1)), 1e-5).unwrap();
        assert_eq!(r.max_relative_error, 0.0);
    }

    #[test]
    fn reference_precision_resolves_vanishing_gradients() {
        use crate::autodiff::DoubleDouble;
        // d/dx of softmax(x + c)[0] in c is exactly zero (shift invariance)
        fn loss<T: Real>(ps: &ParamStore<T>) -> Result<(T, Gradients<T>)> {
            let mut t = Tape::new(ps);
            let x = t.param(crate::autodiff::ParamId(0));
            let c = t.param(crate::autodiff::ParamId(1));
            let y = t.add(x, c)?;
            let p = t.softmax_rows(y, None)?;
            let p0 = t.pick(p, 0)?;
            let l = t.scale(p0, 3.3);
            Ok((t.scalar(l), t.backward(l)?))
        }
        let mut ps = ParamStore::<f64>::new();
        ps.add("x", Tensor::row_vector(vec![0.3, -1.2, 2.2]));
        ps.add("c", Tensor::scalar(0.77));
        let r = finite_diff_check_reference::<f64, DoubleDouble, _, _>(
            &ps,
            |p| loss(p).map(|r| r.0),
            |p| loss(p).map(|r| r.1),
            1e-5,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 0.5) - 0.5 / 1.5).abs() < 1e-15);
    }
}
