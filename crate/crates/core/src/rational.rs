//! Exact rational scalars and small exact linear algebra.

use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rat = Ratio<i128>;

pub fn rat(n: i128, d: i128) -> Rat {
    Rat::new(n, d)
}

pub fn int(n: i64) -> Rat {
    Rat::from_integer(n as i128)
}

/// Parses `p` or `p/q` (optional sign, surrounding whitespace ignored).
pub fn parse_rational(s: &str) -> Option<Rat> {
    let s = s.trim();
    let (num, den) = match s.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (s, "1"),
    };
    let n: i128 = num.parse().ok()?;
    let d: i128 = den.parse().ok()?;
    if d == 0 {
        return None;
    }
    Some(Rat::new(n, d))
}

pub fn format_rational(q: &Rat) -> String {
    if q.is_integer() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

pub fn to_f64(q: &Rat) -> f64 {
    q.to_f64().unwrap_or_else(|| *q.numer() as f64 / *q.denom() as f64)
}

pub fn dot(a: &[Rat], b: &[Rat]) -> Rat {
    a.iter().zip(b).fold(Rat::zero(), |acc, (x, y)| acc + x * y)
}

pub fn is_zero_vec(v: &[Rat]) -> bool {
    v.iter().all(|x| x.is_zero())
}

pub fn from_ints(v: &[i64]) -> Vec<Rat> {
    v.iter().map(|&x| int(x)).collect()
}

/// Row-reduced echelon form; returns the nonzero rows and their pivot columns.
pub fn rref(rows: &[Vec<Rat>], ncols: usize) -> (Vec<Vec<Rat>>, Vec<usize>) {
    let mut m: Vec<Vec<Rat>> = rows.to_vec();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        if r == m.len() {
            break;
        }
        let Some(p) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c].recip();
        for x in m[r].iter_mut() {
            *x *= inv;
        }
        let pivot_row = m[r].clone();
        for (i, row) in m.iter_mut().enumerate() {
            if i != r && !row[c].is_zero() {
                let f = row[c];
                for (x, y) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    m.truncate(r);
    (m, pivots)
}

pub fn rank(rows: &[Vec<Rat>], ncols: usize) -> usize {
    rref(rows, ncols).1.len()
}

/// Basis of {x : row·x = 0 for every row}.
pub fn null_space(rows: &[Vec<Rat>], ncols: usize) -> Vec<Vec<Rat>> {
    let (red, pivots) = rref(rows, ncols);
    let free: Vec<usize> = (0..ncols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![Rat::zero(); ncols];
            v[f] = Rat::one();
            for (row, &p) in red.iter().zip(&pivots) {
                v[p] = -row[f];
            }
            v
        })
        .collect()
}

/// Orthogonalizes in order, dropping dependent vectors.
pub fn gram_schmidt(vectors: &[Vec<Rat>]) -> Vec<Vec<Rat>> {
    let mut out: Vec<Vec<Rat>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for u in &out {
            let c = dot(&w, u) / dot(u, u);
            for (x, y) in w.iter_mut().zip(u) {
                *x -= c * y;
            }
        }
        if !is_zero_vec(&w) {
            out.push(primitive(&w));
        }
    }
    out
}

/// Scales to a primitive integer vector whose first nonzero entry is positive.
pub fn primitive(v: &[Rat]) -> Vec<Rat> {
    use num_integer::Integer;
    let mut l: i128 = 1;
    for x in v {
        l = l.lcm(x.denom());
    }
    let ints: Vec<i128> = v.iter().map(|x| (x * Rat::from_integer(l)).to_integer()).collect();
    let mut g: i128 = 0;
    for x in &ints {
        g = g.gcd(x);
    }
    if g == 0 {
        return v.to_vec();
    }
    let sign = ints.iter().find(|x| **x != 0).map(|x| x.signum()).unwrap_or(1);
    ints.iter().map(|x| Rat::from_integer(sign * x / g)).collect()
}

pub fn norm_f64(v: &[Rat]) -> f64 {
    to_f64(&dot(v, v)).sqrt()
}

pub fn max_abs(v: &[Rat]) -> Rat {
    v.iter().map(|x| x.abs()).max().unwrap_or_else(Rat::zero)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rationals() {
        assert_eq!(parse_rational("2/3"), Some(rat(2, 3)));
        assert_eq!(parse_rational("-5/3"), Some(rat(-5, 3)));
        assert_eq!(parse_rational(" 4 "), Some(int(4)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("0.5"), None);
        assert_eq!(format_rational(&rat(4, 6)), "2/3");
    }

    #[test]
    fn null_space_of_michaelis_menten_stoichiometry() {
        // rows are reaction vectors over (E, S, SE, P)
        let rows = vec![
            from_ints(&[-1, -1, 1, 0]),
            from_ints(&[1, 1, -1, 0]),
            from_ints(&[1, 0, -1, 1]),
        ];
        let ns = null_space(&rows, 4);
        assert_eq!(ns.len(), 2);
        for v in &ns {
            for r in &rows {
                assert!(dot(v, r).is_zero());
            }
        }
        let total_enzyme = from_ints(&[1, 0, 1, 0]);
        let mut with = ns.clone();
        with.push(total_enzyme);
        assert_eq!(rank(&with, 4), 2);
    }

    #[test]
    fn gram_schmidt_is_orthogonal_and_primitive() {
        let g = gram_schmidt(&[from_ints(&[1, 1, 0]), from_ints(&[1, 0, 1]), from_ints(&[2, 1, 1])]);
        assert_eq!(g.len(), 2);
        assert!(dot(&g[0], &g[1]).is_zero());
        assert_eq!(g[1], from_ints(&[1, -1, 2]));
    }
}
