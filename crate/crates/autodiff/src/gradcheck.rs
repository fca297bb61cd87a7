//! Central finite-difference oracle for gradients computed by [`Graph::backward`].

use crate::error::Result;
use crate::graph::{Graph, Var};

/// Outcome of comparing analytic and numeric gradients for each input.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` per input.
    pub rel_errors: Vec<f64>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Relative error of two gradient vectors under the Euclidean norm.
///
/// Pairs whose norms are both below `1e-12` count as agreeing.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Checks `d f / d input` for every input against central differences with step `h`.
///
/// `build` must record a scalar-valued function of the leaves it is handed; it is
/// called once for the analytic pass and `2 * numel` times for the numeric one.
pub fn check_gradients<F>(inputs: &[(Vec<f64>, Vec<usize>)], h: f64, build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Vec<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves = vals
            .iter()
            .zip(inputs)
            .map(|(v, (_, shape))| g.constant(v.clone(), shape))
            .collect::<Result<Vec<_>>>()?;
        let root = build(&mut g, &leaves)?;
        Ok(g.scalar(root))
    };

    let mut g = Graph::new();
    let leaves = inputs
        .iter()
        .map(|(v, shape)| g.param(v.clone(), shape))
        .collect::<Result<Vec<_>>>()?;
    let root = build(&mut g, &leaves)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(&l, (v, _))| g.grad(l).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; v.len()]))
        .collect();

    let mut vals: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    let mut numeric = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut gi = vec![0.0; vals[i].len()];
        for j in 0..vals[i].len() {
            let orig = vals[i][j];
            vals[i][j] = orig + h;
            let up = eval(&vals)?;
            vals[i][j] = orig - h;
            let down = eval(&vals)?;
            vals[i][j] = orig;
            gi[j] = (up - down) / (2.0 * h);
        }
        numeric.push(gi);
    }
    let rel_errors = analytic.iter().zip(&numeric).map(|(a, n)| relative_error(a, n)).collect();
    Ok(GradReport { analytic, numeric, rel_errors })
}
