/// Distances within this of the maximum count as ties.
pub const KNEE_TIE_TOLERANCE: f64 = 1e-9;

/// Indices of points not dominated when maximizing both coordinates.
pub fn nondominated(points: &[(f64, f64)]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            let (si, ni) = points[i];
            !points
                .iter()
                .any(|&(s, n)| s >= si && n >= ni && (s > si || n > ni))
        })
        .collect()
}

/// Picks the knee among `(alpha, signal, noise)` points and returns its
/// index.
///
/// Points are restricted to the nondominated set, both axes are min-max
/// normalized over that set, and the point farthest from the chord joining
/// the two extremes wins. Ties go to the smallest alpha.
pub fn knee_point(points: &[(f64, f64, f64)]) -> Option<usize> {
    if points.is_empty() {
        return None;
    }
    let coords: Vec<(f64, f64)> = points.iter().map(|p| (p.1, p.2)).collect();
    let front = nondominated(&coords);
    let smallest_alpha = |idx: &[usize]| {
        idx.iter()
            .copied()
            .min_by(|&a, &b| points[a].0.total_cmp(&points[b].0).then(a.cmp(&b)))
    };
    if front.len() == 1 {
        return Some(front[0]);
    }
    let range = |f: fn(&(f64, f64)) -> f64| {
        let vals = front.iter().map(|&i| f(&coords[i]));
        let lo = vals.clone().fold(f64::INFINITY, f64::min);
        let hi = vals.fold(f64::NEG_INFINITY, f64::max);
        (lo, hi - lo)
    };
    let (s_lo, s_span) = range(|c| c.0);
    let (n_lo, n_span) = range(|c| c.1);
    let norm = |v: f64, lo: f64, span: f64| if span > 0.0 { (v - lo) / span } else { 0.0 };
    // on a nondominated front the extremes normalize to (0, 1) and (1, 0),
    // so the chord is x + y = 1
    let dist: Vec<(usize, f64)> = front
        .iter()
        .map(|&i| {
            let x = norm(coords[i].0, s_lo, s_span);
            let y = norm(coords[i].1, n_lo, n_span);
            (i, (x + y - 1.0).abs() / std::f64::consts::SQRT_2)
        })
        .collect();
    let best = dist.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = dist
        .iter()
        .filter(|d| d.1 >= best - KNEE_TIE_TOLERANCE)
        .map(|d| d.0)
        .collect();
    smallest_alpha(&tied)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point() {
        assert_eq!(knee_point(&[(4.0, 1.0, 0.5)]), Some(0));
        assert_eq!(knee_point(&[]), None);
    }

    #[test]
    fn l_shaped_front_picks_middle() {
        let pts = [(2.0, 0.0, 1.0), (3.0, 0.9, 0.9), (4.0, 1.0, 0.0)];
        assert_eq!(knee_point(&pts), Some(1));
    }

    #[test]
    fn two_points_tie_to_smaller_alpha() {
        let pts = [(5.0, 1.0, 0.2), (3.0, 0.5, 0.6)];
        assert_eq!(knee_point(&pts), Some(1));
    }

    #[test]
    fn dominated_points_ignored() {
        // (0.5, 0.5) is dominated by (0.9, 0.9)
        let pts = [(2.0, 0.0, 1.0), (3.0, 0.5, 0.5), (4.0, 0.9, 0.9), (5.0, 1.0, 0.0)];
        assert_eq!(knee_point(&pts), Some(2));
        assert_eq!(nondominated(&[(0.0, 1.0), (0.5, 0.5), (0.9, 0.9), (1.0, 0.0)]), vec![0, 2, 3]);
    }
}
