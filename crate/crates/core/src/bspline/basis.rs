//! Cox–de Boor basis evaluation for clamped cubic knot vectors.

use super::DEGREE;

/// Clamped uniform knot vector on [0, 1] for `n` control points: the end
/// knots have multiplicity `DEGREE + 1` and the interior knots are evenly
/// spaced, giving `n + DEGREE + 1` knots in total.
pub fn clamped_uniform_knots(n: usize) -> Vec<f64> {
    assert!(n >= DEGREE + 1);
    let spans = (n - DEGREE) as f64;
    let mut knots = Vec::with_capacity(n + DEGREE + 1);
    knots.extend(std::iter::repeat(0.0).take(DEGREE + 1));
    for j in 1..n - DEGREE {
        knots.push(j as f64 / spans);
    }
    knots.extend(std::iter::repeat(1.0).take(DEGREE + 1));
    knots
}

/// Greville abscissae: the parameter location each control point mostly
/// influences; linear functions of these reproduce exactly.
pub fn greville(knots: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (knots[i + 1] + knots[i + 2] + knots[i + 3]) / DEGREE as f64)
        .collect()
}

/// Knot span index `s` with `knots[s] <= u < knots[s+1]`; the end of the
/// domain maps into the last non-empty span.
pub fn find_span(knots: &[f64], n: usize, u: f64) -> usize {
    if u >= knots[n] {
        return n - 1;
    }
    let mut lo = DEGREE;
    let mut hi = n;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Nonzero cubic basis values `N_{span-3..=span,3}(u)`.
pub fn basis_funs(knots: &[f64], span: usize, u: f64) -> [f64; DEGREE + 1] {
    basis_funs_degree::<{ DEGREE + 1 }>(knots, span, u)
}

fn basis_funs_degree<const M: usize>(knots: &[f64], span: usize, u: f64) -> [f64; M] {
    let degree = M - 1;
    let mut n = [0.0; M];
    let mut left = [0.0; M];
    let mut right = [0.0; M];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Cubic basis values together with their first derivatives, from the
/// degree-2 basis on the same span:
/// `N'_{i,3} = 3 N_{i,2}/(k_{i+3}-k_i) - 3 N_{i+1,2}/(k_{i+4}-k_{i+1})`.
pub fn basis_funs_with_derivs(
    knots: &[f64],
    span: usize,
    u: f64,
) -> ([f64; DEGREE + 1], [f64; DEGREE + 1]) {
    let values = basis_funs(knots, span, u);
    let lower: [f64; DEGREE] = basis_funs_degree::<DEGREE>(knots, span, u);
    let mut derivs = [0.0; DEGREE + 1];
    for (a, d) in derivs.iter_mut().enumerate() {
        let i = span - DEGREE + a;
        let mut value = 0.0;
        if a >= 1 {
            let den = knots[i + DEGREE] - knots[i];
            if den > 0.0 {
                value += DEGREE as f64 * lower[a - 1] / den;
            }
        }
        if a <= DEGREE - 1 {
            let den = knots[i + DEGREE + 1] - knots[i + 1];
            if den > 0.0 {
                value -= DEGREE as f64 * lower[a] / den;
            }
        }
        *d = value;
    }
    (values, derivs)
}
