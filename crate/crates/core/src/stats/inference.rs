//! Association statistics used by the slice screen: 2x2 Pearson chi-square,
//! Cramér's V, point-biserial correlation and Benjamini-Hochberg q-values.

use std::cmp::Ordering;

/// Result of a 2x2 chi-square test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquare {
    pub stat: f64,
    pub p_value: f64,
    /// A zero row or column marginal; the statistic is undefined and reported
    /// as 0 with p = 1.
    pub degenerate: bool,
}

/// Counts of the (in-slice x target) contingency table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Contingency2x2 {
    /// in-slice, target = 1
    pub a: u64,
    /// in-slice, target = 0
    pub b: u64,
    /// out-of-slice, target = 1
    pub c: u64,
    /// out-of-slice, target = 0
    pub d: u64,
}

impl Contingency2x2 {
    pub fn from_vectors(slice_mask: &[bool], target: &[u8]) -> Self {
        assert_eq!(slice_mask.len(), target.len(), "mask/target length mismatch");
        let mut t = Contingency2x2::default();
        for (&inside, &y) in slice_mask.iter().zip(target) {
            match (inside, y != 0) {
                (true, true) => t.a += 1,
                (true, false) => t.b += 1,
                (false, true) => t.c += 1,
                (false, false) => t.d += 1,
            }
        }
        t
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    /// Pearson chi-square without continuity correction, p-value from the
    /// chi-square(1) upper tail.
    pub fn chi_square(&self) -> ChiSquare {
        let (a, b, c, d) = (self.a as f64, self.b as f64, self.c as f64, self.d as f64);
        let n = a + b + c + d;
        let margins = [a + b, c + d, a + c, b + d];
        if n == 0.0 || margins.contains(&0.0) {
            return ChiSquare {
                stat: 0.0,
                p_value: 1.0,
                degenerate: true,
            };
        }
        let cross = a * d - b * c;
        let stat = n * cross * cross / margins.iter().product::<f64>();
        ChiSquare {
            stat,
            p_value: chi2_sf_1df(stat),
            degenerate: false,
        }
    }
}

pub fn chi_square_test(slice_mask: &[bool], target: &[u8]) -> ChiSquare {
    Contingency2x2::from_vectors(slice_mask, target).chi_square()
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_sf_1df(stat: f64) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    gamma_q(0.5, stat / 2.0).clamp(0.0, 1.0)
}

/// Cramér's V, clamped to [0, 1].
pub fn cramers_v(stat: f64, n: u64, rows: usize, cols: usize) -> f64 {
    assert!(n > 0, "cramers_v requires n > 0");
    let k = rows.min(cols).saturating_sub(1);
    if k == 0 || stat <= 0.0 {
        return 0.0;
    }
    (stat / (n as f64 * k as f64)).sqrt().clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointBiserial {
    pub r: f64,
    pub degenerate: bool,
}

/// Point-biserial correlation with population standard deviation. Pairs with
/// a missing numeric value are skipped.
pub fn point_biserial(binary: &[u8], numeric: &[Option<f64>]) -> PointBiserial {
    assert_eq!(binary.len(), numeric.len(), "length mismatch");
    let (mut n0, mut n1) = (0usize, 0usize);
    let (mut s0, mut s1) = (0.0, 0.0);
    for (&y, x) in binary.iter().zip(numeric) {
        if let Some(x) = *x {
            if y != 0 {
                n1 += 1;
                s1 += x;
            } else {
                n0 += 1;
                s0 += x;
            }
        }
    }
    let degenerate = PointBiserial {
        r: 0.0,
        degenerate: true,
    };
    if n0 == 0 || n1 == 0 {
        return degenerate;
    }
    let n = (n0 + n1) as f64;
    let mean = (s0 + s1) / n;
    let var = numeric
        .iter()
        .flatten()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / n;
    if !(var > 0.0) {
        return degenerate;
    }
    let (m0, m1) = (s0 / n0 as f64, s1 / n1 as f64);
    let r = (m1 - m0) / var.sqrt() * ((n0 as f64 * n1 as f64) / (n * n)).sqrt();
    PointBiserial {
        r: r.clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Benjamini-Hochberg step-up adjustment. Output is in input order.
pub fn bh_fdr(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    if m == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        p_values[i]
            .partial_cmp(&p_values[j])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut q = vec![0.0; m];
    let mut running = f64::INFINITY;
    for (rank0, &idx) in order.iter().enumerate().rev() {
        let adjusted = p_values[idx] * m as f64 / (rank0 + 1) as f64;
        running = running.min(adjusted);
        q[idx] = running.clamp(0.0, 1.0);
    }
    q
}

/// Regularized upper incomplete gamma function Q(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "gamma_q requires a > 0");
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 1000;

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

// modified Lentz evaluation
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
