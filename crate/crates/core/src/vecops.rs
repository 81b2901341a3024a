//! Dense vector helpers shared by the numerical modules.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `a + t * (b - a)`
pub(crate) fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

pub(crate) fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| dot(row, x)).collect()
}

/// `Aᵀ y` for a row-major `a`.
pub(crate) fn mat_t_vec(a: &[Vec<f64>], y: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (row, yi) in a.iter().zip(y) {
        for (o, aij) in out.iter_mut().zip(row) {
            *o += aij * yi;
        }
    }
    out
}

/// Index of the smallest score; ties go to the lowest index.
pub(crate) fn argmin_by<I: IntoIterator<Item = f64>>(scores: I) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if s >= b => {}
            _ => best = Some((i, s)),
        }
    }
    best
}

/// Relative gap under which two scores count as tied in [`argmin_tied`].
pub(crate) const TIE_TOLERANCE: f64 = 1e-12;

/// Lowest index whose score is within [`TIE_TOLERANCE`] of the minimum, so
/// rounding noise cannot reorder near-ties.
pub(crate) fn argmin_tied(scores: &[f64]) -> Option<(usize, f64)> {
    let (_, best) = argmin_by(scores.iter().copied())?;
    let slack = TIE_TOLERANCE * (1.0 + best.abs());
    scores.iter().position(|s| *s <= best + slack).map(|i| (i, scores[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_prefers_lowest_index_on_ties() {
        assert_eq!(argmin_by([2.0, 1.0, 1.0, 3.0]), Some((1, 1.0)));
        assert_eq!(argmin_by(std::iter::empty()), None);
    }

    #[test]
    fn near_ties_resolve_to_lowest_index() {
        assert_eq!(argmin_tied(&[1.0 + 1e-15, 1.0, 2.0]).unwrap().0, 0);
        assert_eq!(argmin_tied(&[1.0 + 1e-6, 1.0]).unwrap().0, 1);
    }

    #[test]
    fn transpose_product_matches_manual() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        assert_eq!(mat_t_vec(&a, &[1.0, 0.0, -1.0], 2), vec![-4.0, -4.0]);
        assert_eq!(mat_vec(&a, &[1.0, 1.0]), vec![3.0, 7.0, 11.0]);
    }
}
