use crate::error::{Error, Result};

/// A named collection of trainable 64-bit buffers. Implemented by every
/// parameter struct so the optimizer, gradient checker, checkpointing and
/// norm computations can walk tensors uniformly. `tensors` and
/// `tensors_mut` must enumerate the same names in the same order.
pub trait TensorSet {
    fn tensors(&self) -> Vec<(&'static str, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;

    fn num_coords(&self) -> usize {
        self.tensors().iter().map(|(_, s)| s.len()).sum()
    }

    fn squared_l2(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, s)| s.iter())
            .map(|v| v * v)
            .sum()
    }
}

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub step: f64,
    pub entries: Vec<GradCheckEntry>,
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// Relative error with a floor so that a pair of tiny, agreeing gradients
/// does not blow up the ratio. Exactly-dead coordinates (both sides zero)
/// report 0.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` (a gradient set mirroring `params` tensor by
/// tensor) against central differences (f(θ+h)−f(θ−h))/2h of `loss`,
/// coordinate by coordinate. `max_coords_per_tensor = 0` checks every
/// coordinate; otherwise coordinates are sampled with an even stride.
pub fn grad_check<P: TensorSet, G: TensorSet>(
    params: &mut P,
    analytic: &G,
    h: f64,
    max_coords_per_tensor: usize,
    mut loss: impl FnMut(&P) -> Result<f64>,
) -> Result<GradCheckReport> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidInput(format!("bad step size {h}")));
    }
    let layout: Vec<(&'static str, usize)> = params
        .tensors()
        .iter()
        .map(|(n, s)| (*n, s.len()))
        .collect();
    let analytic_flat: Vec<Vec<f64>> = analytic
        .tensors()
        .iter()
        .map(|(_, s)| s.to_vec())
        .collect();
    if analytic_flat.len() != layout.len() {
        return Err(Error::InvalidInput(
            "analytic gradient does not mirror the parameter layout".into(),
        ));
    }

    let mut entries = Vec::with_capacity(layout.len());
    for (ti, &(name, len)) in layout.iter().enumerate() {
        let stride = if max_coords_per_tensor == 0 || len <= max_coords_per_tensor {
            1
        } else {
            len.div_ceil(max_coords_per_tensor)
        };
        let mut entry = GradCheckEntry {
            name,
            max_rel_err: 0.0,
            worst_coord: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
            coords_checked: 0,
        };
        let mut idx = 0;
        while idx < len {
            let orig = params.tensors()[ti].1[idx];
            params.tensors_mut()[ti].1[idx] = orig + h;
            let fp = loss(params)?;
            params.tensors_mut()[ti].1[idx] = orig - h;
            let fm = loss(params)?;
            params.tensors_mut()[ti].1[idx] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("loss during grad check of {name}[{idx}]"),
                });
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic_flat[ti][idx];
            let re = rel_err(a, numeric);
            if re > entry.max_rel_err {
                entry.max_rel_err = re;
                entry.worst_coord = idx;
                entry.analytic_at_worst = a;
                entry.numeric_at_worst = numeric;
            }
            entry.coords_checked += 1;
            idx += stride;
        }
        entries.push(entry);
    }
    Ok(GradCheckReport { step: h, entries })
}

/// Free-standing named tensor bag. Handy for checking gradients of ad-hoc
/// compositions in tests without defining a parameter struct.
#[derive(Debug, Clone)]
pub struct FlatTensors {
    names: Vec<&'static str>,
    bufs: Vec<Vec<f64>>,
}

impl FlatTensors {
    pub fn new(entries: Vec<(&'static str, Vec<f64>)>) -> Self {
        let (names, bufs) = entries.into_iter().unzip();
        FlatTensors { names, bufs }
    }

    pub fn buf(&self, name: &str) -> &[f64] {
        let i = self.names.iter().position(|n| *n == name).expect("name");
        &self.bufs[i]
    }
}

impl TensorSet for FlatTensors {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        self.names
            .iter()
            .zip(self.bufs.iter())
            .map(|(n, b)| (*n, b.as_slice()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        self.names
            .iter()
            .zip(self.bufs.iter_mut())
            .map(|(n, b)| (*n, b.as_mut_slice()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops::{affine, sigmoid, sigmoid_vec};
    use crate::numerics::tensor::{Matrix, Vector};

    #[test]
    fn quadratic_is_exact() {
        // f(θ) = θ² at θ=3: analytic 6, central difference exact for quadratics
        let mut p = FlatTensors::new(vec![("theta", vec![3.0])]);
        let g = FlatTensors::new(vec![("theta", vec![6.0])]);
        let report = grad_check(&mut p, &g, 1e-5, 0, |p| Ok(p.buf("theta")[0].powi(2))).unwrap();
        assert!(report.max_rel_err() < 1e-6, "{}", report.max_rel_err());
    }

    #[test]
    fn sigmoid_affine_composition() {
        // f(W, b) = Σ σ(Wx + b); analytic gradient derived by hand.
        let x = Vector::new(vec![0.3, -0.7, 1.1]).unwrap();
        let w0 = vec![0.1, -0.2, 0.4, 0.0, 0.5, -0.3];
        let b0 = vec![0.05, -0.4];
        let mut p = FlatTensors::new(vec![("w", w0.clone()), ("b", b0.clone())]);

        let eval = |p: &FlatTensors| -> Result<f64> {
            let w = Matrix::new(2, 3, p.buf("w").to_vec())?;
            let b = Vector::new(p.buf("b").to_vec())?;
            Ok(sigmoid_vec(&affine(&w, &x, &b)?).sum())
        };

        // dσ/dpre = σ(1−σ); dW = dpre ⊗ x, db = dpre
        let w = Matrix::new(2, 3, w0).unwrap();
        let b = Vector::new(b0).unwrap();
        let pre = affine(&w, &x, &b).unwrap();
        let mut dw = vec![0.0; 6];
        let mut db = vec![0.0; 2];
        for r in 0..2 {
            let s = sigmoid(pre[r]);
            let dpre = s * (1.0 - s);
            db[r] = dpre;
            for c in 0..3 {
                dw[r * 3 + c] = dpre * x[c];
            }
        }
        let g = FlatTensors::new(vec![("w", dw), ("b", db)]);
        let report = grad_check(&mut p, &g, 1e-5, 0, eval).unwrap();
        assert!(report.max_rel_err() < 1e-5, "{}", report.max_rel_err());
    }

    #[test]
    fn report_flags_wrong_gradient() {
        let mut p = FlatTensors::new(vec![("theta", vec![2.0])]);
        let g = FlatTensors::new(vec![("theta", vec![1.0])]); // truth is 4
        let report = grad_check(&mut p, &g, 1e-5, 0, |p| Ok(p.buf("theta")[0].powi(2))).unwrap();
        assert!(report.max_rel_err() > 0.5);
    }
}
