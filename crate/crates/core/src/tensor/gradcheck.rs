use super::{BackwardFault, Bound, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Applied to the analytic pass only.
    pub fault: Option<BackwardFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            fault: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter path and flat row-major index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Every compared entry, in parameter then row-major order.
    pub entries: Vec<GradEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub path: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

impl GradCheckReport {
    /// Entries whose relative error reaches `threshold`.
    pub fn failures(&self, threshold: f64) -> impl Iterator<Item = &GradEntry> {
        self.entries.iter().filter(move |e| e.rel_error >= threshold)
    }
}

fn evaluate<F>(builder: &F, store: &ParamStore, path: &str) -> Result<f64>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = builder(&mut tape, &bound)?;
    let v = tape.item(out)?;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("loss is {v} when perturbing {path}")));
    }
    Ok(v)
}

/// Compares the analytic gradient of `builder` against a central finite
/// difference for every trainable entry of `store`.
///
/// The relative error of one entry is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(builder: F, store: &ParamStore, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    if !(opts.eps > 0.0) {
        return Err(Error::Config(format!("grad_check eps must be positive, got {}", opts.eps)));
    }
    let mut tape = match opts.fault {
        Some(f) => Tape::with_fault(f),
        None => Tape::new(),
    };
    let bound = store.bind(&mut tape);
    let out = builder(&mut tape, &bound)?;
    let base = tape.item(out)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is {base} at the unperturbed point")));
    }
    tape.backward(out)?;
    let analytic = bound.grads(&tape);

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        entries: Vec::new(),
    };
    for (path, grad) in &analytic {
        let original = store.get(path)?.clone();
        let cols = original.ncols();
        for (flat, (&orig, &a)) in original.iter().zip(grad.iter()).enumerate() {
            let at = [flat / cols, flat % cols];
            work.update(path, |m| m[at] = orig + opts.eps)?;
            let plus = evaluate(&builder, &work, path)?;
            work.update(path, |m| m[at] = orig - opts.eps)?;
            let minus = evaluate(&builder, &work, path)?;
            work.update(path, |m| m[at] = orig)?;

            let n = (plus - minus) / (2.0 * opts.eps);
            let denom = a.abs().max(n.abs()).max(1e-8);
            let rel = (a - n).abs() / denom;
            report.checked += 1;
            report.entries.push(GradEntry {
                path: path.clone(),
                index: flat,
                analytic: a,
                numeric: n,
                rel_error: rel,
            });
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((path.clone(), flat));
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn quadratic(tape: &mut Tape, b: &Bound) -> Result<Var> {
        // f = sum((A x - y)^2) + sum(c ⊙ c)
        let a = b.get("a")?;
        let x = b.get("x")?;
        let c = b.get("c")?;
        let y = tape.constant(array![[1.0], [-2.0]]);
        let ax = tape.matmul(a, x)?;
        let r = tape.sub(ax, y)?;
        let r2 = tape.mul(r, r)?;
        let s1 = tape.sum(r2)?;
        let c2 = tape.mul(c, c)?;
        let s2 = tape.sum(c2)?;
        tape.add(s1, s2)
    }

    fn quadratic_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert_frozen("a", array![[0.5, -1.0], [2.0, 0.25]]).unwrap();
        s.insert("x", array![[0.3], [-0.8]]).unwrap();
        s.insert("c", array![[0.1, -0.4, 0.9]]).unwrap();
        s
    }

    #[test]
    fn quadratic_is_exact() {
        let r = grad_check(quadratic, &quadratic_store(), &GradCheckOptions { eps: 1e-5, fault: None }).unwrap();
        assert_eq!(r.checked, 5);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn independent_parameter_has_zero_grads() {
        let mut store = quadratic_store();
        store.insert("unused", array![[1.5]]).unwrap();
        let r = grad_check(quadratic, &store, &GradCheckOptions::default()).unwrap();
        assert_eq!(r.checked, 6);
        assert!(r.max_rel_error < 1e-6);
    }

    #[test]
    fn corrupted_rule_is_detected() {
        let mut store = ParamStore::new();
        store.insert("x", array![[0.2, -0.6]]).unwrap();
        let build = |tape: &mut Tape, b: &Bound| {
            let s = tape.sigmoid(b.get("x")?)?;
            tape.sum(s)
        };
        let clean = grad_check(build, &store, &GradCheckOptions::default()).unwrap();
        assert!(clean.max_rel_error < 1e-6);
        let opts = GradCheckOptions {
            eps: 1e-5,
            fault: Some(BackwardFault::SigmoidScale(1.5)),
        };
        let bad = grad_check(build, &store, &opts).unwrap();
        assert!(bad.max_rel_error > 0.1);
    }

    #[test]
    fn non_finite_loss_names_path() {
        let mut store = ParamStore::new();
        store.insert("x", array![[0.0]]).unwrap();
        let build = |tape: &mut Tape, b: &Bound| {
            let l = tape.log(b.get("x")?)?;
            tape.sum(l)
        };
        let err = grad_check(build, &store, &GradCheckOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
