//! Brute-force reference implementations shared by the integration tests.
//! Everything here works on plain dense arrays and is deliberately naive.
#![allow(dead_code)]

use dfm_core::linalg::DenseMatrix;
use dfm_core::{Dataset, DfmModel, FmModel, SparseVector};

/// Dense `{+1,-1}` codes, `signs[i][t]`.
pub fn unpacked_signs(m: &DfmModel) -> Vec<Vec<i8>> {
    let c = m.codes();
    (0..c.n()).map(|i| (0..c.k()).map(|t| c.sign(i, t)).collect()).collect()
}

/// Double loop over every feature pair.
pub fn fm_brute(m: &FmModel, x: &SparseVector) -> f64 {
    let (idx, val) = (x.indices(), x.values());
    let mut y = m.w0();
    for a in 0..idx.len() {
        y += m.w()[idx[a]] * val[a];
        for b in a + 1..idx.len() {
            let dot: f64 = m.embedding(idx[a]).iter().zip(m.embedding(idx[b])).map(|(p, q)| p * q).sum();
            y += dot * val[a] * val[b];
        }
    }
    y
}

pub fn dfm_brute_signs(w0: f64, w: &[f64], signs: &[Vec<i8>], x: &SparseVector) -> f64 {
    let (idx, val) = (x.indices(), x.values());
    let mut y = w0;
    for a in 0..idx.len() {
        y += w[idx[a]] * val[a];
        for b in a + 1..idx.len() {
            let dot: i64 = signs[idx[a]].iter().zip(&signs[idx[b]]).map(|(p, q)| i64::from(p * q)).sum();
            y += dot as f64 * val[a] * val[b];
        }
    }
    y
}

pub fn dfm_brute(m: &DfmModel, x: &SparseVector) -> f64 {
    dfm_brute_signs(m.w0(), m.w(), &unpacked_signs(m), x)
}

/// `sum (y - yhat)^2 + alpha ||w||^2 - 2 beta sum_{r,t} b_rt d_rt` from scratch.
pub fn soft_objective_brute(
    d: &Dataset,
    w0: f64,
    w: &[f64],
    signs: &[Vec<i8>],
    delegate: &DenseMatrix,
    alpha: f64,
    beta: f64,
) -> f64 {
    let mut sse = 0.0;
    for inst in d.instances() {
        let r = inst.target - dfm_brute_signs(w0, w, signs, &inst.features);
        sse += r * r;
    }
    let mut tr = 0.0;
    for (r, code) in signs.iter().enumerate() {
        for (t, &b) in code.iter().enumerate() {
            tr += f64::from(b) * delegate[(t, r)];
        }
    }
    sse + alpha * w.iter().map(|v| v * v).sum::<f64>() - 2.0 * beta * tr
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Ridge with an unpenalized intercept via the augmented normal equations.
/// Returns `(w0, w)`.
pub fn ridge_normal_equations(d: &Dataset, phi: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    let n = d.n_features();
    let rows: Vec<Vec<f64>> = d
        .instances()
        .iter()
        .map(|inst| {
            let mut r = vec![0.0; n + 1];
            r[0] = 1.0;
            for (i, x) in inst.features.iter() {
                r[i + 1] = x;
            }
            r
        })
        .collect();
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    let mut b = vec![0.0; n + 1];
    for (r, &y) in rows.iter().zip(phi) {
        for i in 0..=n {
            b[i] += r[i] * y;
            for j in 0..=n {
                a[i][j] += r[i] * r[j];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate().skip(1) {
        row[i] += alpha;
    }
    let sol = gauss_solve(a, b);
    (sol[0], sol[1..].to_vec())
}

/// Gain `2^rel - 1`, discount `1/log2(p+1)`, ties by item id.
pub fn ndcg_brute(items: &[(usize, f64, f64)], k: usize) -> f64 {
    let mut order: Vec<usize> = (0..items.len()).collect();
    // insertion sort on (score desc, item asc)
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 {
            let (a, b) = (&items[order[j - 1]], &items[order[j]]);
            let swap = b.1 > a.1 || (b.1 == a.1 && b.0 < a.0);
            if !swap {
                break;
            }
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let gain = |r: f64| 2f64.powf(r) - 1.0;
    let disc = |p: usize| 1.0 / ((p + 1) as f64).log2();
    let dcg: f64 = order.iter().take(k).enumerate().map(|(p, &i)| gain(items[i].2) * disc(p + 1)).sum();
    let mut ideal: Vec<f64> = items.iter().map(|i| i.2).collect();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(p, &r)| gain(r) * disc(p + 1)).sum();
    if idcg == 0.0 {
        1.0
    } else {
        dcg / idcg
    }
}

/// Fraction of bits of `found` that match `truth` after choosing, per row
/// `t`, the sign that agrees best. Both are `signs[i][t]`.
pub fn row_sign_agreement(truth: &[Vec<i8>], found: &[Vec<i8>]) -> f64 {
    let n = truth.len();
    let k = truth[0].len();
    let mut hits = 0usize;
    for t in 0..k {
        let same = (0..n).filter(|&i| truth[i][t] == found[i][t]).count();
        hits += same.max(n - same);
    }
    hits as f64 / (n * k) as f64
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..k {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Like [`row_sign_agreement`] but also maximized over permutations of the
/// bit positions, which leave every prediction unchanged. Exhaustive, so
/// keep `k` small.
pub fn signed_permutation_agreement(truth: &[Vec<i8>], found: &[Vec<i8>]) -> f64 {
    let n = truth.len();
    let k = truth[0].len();
    let agree = |t: usize, u: usize| {
        let same = (0..n).filter(|&i| truth[i][t] == found[i][u]).count();
        same.max(n - same)
    };
    let best = permutations(k).iter().map(|p| (0..k).map(|t| agree(t, p[t])).sum::<usize>()).max().unwrap();
    best as f64 / (n * k) as f64
}
