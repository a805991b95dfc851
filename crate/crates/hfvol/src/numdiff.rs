//! Central-difference derivatives over black-box likelihood evaluations.
//! Steps are relative: `h_k = step * max(1, |theta_k|)`. Evaluations may
//! fail (`None`) on numerically invalid points; failures propagate.

/// Per-observation score matrix, stored per coordinate: `scores[k][t]` is
/// the derivative of observation `t`'s log-density with respect to
/// coordinate `k`.
pub(crate) fn per_obs_scores(
    eval: &dyn Fn(&[f64]) -> Option<Vec<f64>>,
    theta: &[f64],
    step: f64,
) -> Option<Vec<Vec<f64>>> {
    let k = theta.len();
    let mut scores = Vec::with_capacity(k);
    let mut point = theta.to_vec();
    for i in 0..k {
        let h = step * theta[i].abs().max(1.0);
        point[i] = theta[i] + h;
        let up = eval(&point)?;
        point[i] = theta[i] - h;
        let down = eval(&point)?;
        point[i] = theta[i];
        let inv = 1.0 / (2.0 * h);
        scores.push(
            up.iter()
                .zip(&down)
                .map(|(u, d)| (u - d) * inv)
                .collect::<Vec<f64>>(),
        );
    }
    Some(scores)
}

/// Symmetric numerical Hessian of a scalar function with a relative step.
pub(crate) fn hessian(
    eval: &dyn Fn(&[f64]) -> Option<f64>,
    theta: &[f64],
    step: f64,
) -> Option<Vec<f64>> {
    let k = theta.len();
    let h: Vec<f64> = theta.iter().map(|t| step * t.abs().max(1.0)).collect();
    let mut basis = vec![0.0; k * k];
    for i in 0..k {
        basis[i * k + i] = 1.0;
    }
    hessian_in_basis(eval, theta, &basis, &h)
}

/// Symmetric numerical Hessian measured along arbitrary directions: entry
/// `(i, j)` is the second derivative along rows `i` and `j` of `dirs`
/// (row-major `k x k`), with finite-difference step `steps[i]` on each.
/// A whitened basis keeps the differencing well conditioned when raw
/// coordinates mix stiff and nearly flat directions, which axis-aligned
/// steps cannot resolve.
pub(crate) fn hessian_in_basis(
    eval: &dyn Fn(&[f64]) -> Option<f64>,
    theta: &[f64],
    dirs: &[f64],
    steps: &[f64],
) -> Option<Vec<f64>> {
    let k = theta.len();
    let at = |ci: f64, i: usize, cj: f64, j: usize| -> Vec<f64> {
        let mut point = theta.to_vec();
        for (m, p) in point.iter_mut().enumerate() {
            *p += ci * steps[i] * dirs[i * k + m] + cj * steps[j] * dirs[j * k + m];
        }
        point
    };
    let f0 = eval(theta)?;
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        let up = eval(&at(1.0, i, 0.0, i))?;
        let down = eval(&at(-1.0, i, 0.0, i))?;
        out[i * k + i] = (up - 2.0 * f0 + down) / (steps[i] * steps[i]);
    }
    for i in 0..k {
        for j in 0..i {
            let mut corner = [0.0; 4];
            for (idx, (si, sj)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
                .iter()
                .enumerate()
            {
                corner[idx] = eval(&at(*si, i, *sj, j))?;
            }
            let v = (corner[0] - corner[1] - corner[2] + corner[3]) / (4.0 * steps[i] * steps[j]);
            out[i * k + j] = v;
            out[j * k + i] = v;
        }
    }
    Some(out)
}
