//! Training criteria over network scores: word-level and sentence-level
//! log-likelihood, Viterbi decoding and the pairwise ranking criterion.
//!
//! Score matrices are laid out `(T, K)`: row `t` holds the scores of every
//! tag at word `t`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// `log(sum(exp(values)))`, shifted by the maximum.
pub fn logadd(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("logadd input"));
    }
    Ok(logadd_iter(values.iter().copied()))
}

fn logadd_iter<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Tag transition scores: `matrix[[i, j]]` for moving from tag `i` to tag
/// `j`, `initial[i]` for starting a sentence with tag `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transitions {
    pub initial: Array1<f64>,
    pub matrix: Array2<f64>,
}

impl Transitions {
    pub fn zeros(tags: usize) -> Self {
        Self {
            initial: Array1::zeros(tags),
            matrix: Array2::zeros((tags, tags)),
        }
    }

    pub fn tags(&self) -> usize {
        self.initial.len()
    }
}

/// Per-word softmax criterion: `logadd(f) - f[y]` and its gradient
/// `softmax(f) - onehot(y)`.
pub fn wll_loss_grad(scores: ArrayView1<f64>, gold: usize) -> Result<(f64, Array1<f64>)> {
    if gold >= scores.len() {
        return Err(Error::IndexOutOfRange {
            what: "gold tag".into(),
            index: gold,
            size: scores.len(),
        });
    }
    // Written as max - f[y] + ln(1 + rest) to stay accurate when the gold
    // score dominates and the loss is tiny.
    let top = (0..scores.len())
        .reduce(|a, b| if scores[b] > scores[a] { b } else { a })
        .expect("non-empty scores");
    let max = scores[top];
    let rest: f64 = (0..scores.len())
        .filter(|&i| i != top)
        .map(|i| (scores[i] - max).exp())
        .sum();
    let log_z = max + rest.ln_1p();
    let mut grad = scores.mapv(|s| (s - log_z).exp());
    grad[gold] -= 1.0;
    Ok((max - scores[gold] + rest.ln_1p(), grad))
}

fn check_shapes(scores: ArrayView2<f64>, trans: &Transitions) -> Result<()> {
    let k = scores.ncols();
    if trans.initial.len() != k || trans.matrix.dim() != (k, k) {
        return Err(Error::Shape(format!(
            "scores have {k} tags, transitions have {}",
            trans.initial.len()
        )));
    }
    if scores.nrows() == 0 {
        return Err(Error::Empty("score matrix"));
    }
    Ok(())
}

fn check_path(path: &[usize], scores: ArrayView2<f64>) -> Result<()> {
    if path.len() != scores.nrows() {
        return Err(Error::LengthMismatch {
            what: "tag path",
            expected: scores.nrows(),
            actual: path.len(),
        });
    }
    if let Some(&bad) = path.iter().find(|&&y| y >= scores.ncols()) {
        return Err(Error::IndexOutOfRange {
            what: "tag path".into(),
            index: bad,
            size: scores.ncols(),
        });
    }
    Ok(())
}

/// Sum of transition and network scores along `path`.
pub fn path_score(scores: ArrayView2<f64>, trans: &Transitions, path: &[usize]) -> Result<f64> {
    check_shapes(scores, trans)?;
    check_path(path, scores)?;
    let mut s = trans.initial[path[0]] + scores[[0, path[0]]];
    for t in 1..path.len() {
        s += trans.matrix[[path[t - 1], path[t]]] + scores[[t, path[t]]];
    }
    Ok(s)
}

/// Forward scores `delta[[t, k]]`: logadd over all paths ending in tag `k`
/// at word `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TagLattice {
    pub delta: Array2<f64>,
}

/// Log-partition over all `K^T` tag paths, in `O(K^2 T)`.
pub fn forward_log_z(scores: ArrayView2<f64>, trans: &Transitions) -> Result<(f64, TagLattice)> {
    check_shapes(scores, trans)?;
    let (len, k) = scores.dim();
    let mut delta = Array2::zeros((len, k));
    for j in 0..k {
        delta[[0, j]] = trans.initial[j] + scores[[0, j]];
    }
    for t in 1..len {
        for j in 0..k {
            let prev = (0..k).map(|i| delta[[t - 1, i]] + trans.matrix[[i, j]]);
            delta[[t, j]] = scores[[t, j]] + logadd_iter(prev);
        }
    }
    let log_z = logadd_iter(delta.row(len - 1).iter().copied());
    Ok((log_z, TagLattice { delta }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionGrad {
    pub initial: Array1<f64>,
    pub matrix: Array2<f64>,
}

impl TransitionGrad {
    pub fn zeros(tags: usize) -> Self {
        Self {
            initial: Array1::zeros(tags),
            matrix: Array2::zeros((tags, tags)),
        }
    }
}

/// Sentence-level criterion `logZ - path_score(gold)` with gradients for
/// the scores and the transitions, obtained by differentiating the forward
/// recursion backwards in time.
pub fn sll_loss_grad(
    scores: ArrayView2<f64>,
    trans: &Transitions,
    gold: &[usize],
) -> Result<(f64, Array2<f64>, TransitionGrad)> {
    let gold_score = path_score(scores, trans, gold)?;
    let (log_z, lattice) = forward_log_z(scores, trans)?;
    let delta = &lattice.delta;
    let (len, k) = scores.dim();
    let mut g_scores = Array2::zeros((len, k));
    let mut g_trans = TransitionGrad::zeros(k);

    // d logZ / d delta_T
    let mut g_delta: Array1<f64> = delta.row(len - 1).mapv(|d| (d - log_z).exp());
    for t in (1..len).rev() {
        g_scores.row_mut(t).scaled_add(1.0, &g_delta);
        let mut g_prev = Array1::zeros(k);
        for j in 0..k {
            if g_delta[j] == 0.0 {
                continue;
            }
            let norm = logadd_iter((0..k).map(|i| delta[[t - 1, i]] + trans.matrix[[i, j]]));
            for i in 0..k {
                let p = (delta[[t - 1, i]] + trans.matrix[[i, j]] - norm).exp() * g_delta[j];
                g_trans.matrix[[i, j]] += p;
                g_prev[i] += p;
            }
        }
        g_delta = g_prev;
    }
    g_scores.row_mut(0).scaled_add(1.0, &g_delta);
    g_trans.initial.scaled_add(1.0, &g_delta);

    g_scores[[0, gold[0]]] -= 1.0;
    g_trans.initial[gold[0]] -= 1.0;
    for t in 1..len {
        g_scores[[t, gold[t]]] -= 1.0;
        g_trans.matrix[[gold[t - 1], gold[t]]] -= 1.0;
    }
    Ok((log_z - gold_score, g_scores, g_trans))
}

/// Best tag path and its score. Ties go to the smaller tag index.
pub fn viterbi(scores: ArrayView2<f64>, trans: &Transitions) -> Result<(Vec<usize>, f64)> {
    check_shapes(scores, trans)?;
    let (len, k) = scores.dim();
    let mut best: Vec<f64> = (0..k).map(|j| trans.initial[j] + scores[[0, j]]).collect();
    let mut back = vec![0usize; len * k];
    let mut next = vec![0.0; k];
    for t in 1..len {
        for j in 0..k {
            let mut arg = 0;
            let mut val = best[0] + trans.matrix[[0, j]];
            for (i, &b) in best.iter().enumerate().skip(1) {
                let v = b + trans.matrix[[i, j]];
                if v > val {
                    val = v;
                    arg = i;
                }
            }
            back[t * k + j] = arg;
            next[j] = val + scores[[t, j]];
        }
        std::mem::swap(&mut best, &mut next);
    }
    let (mut tag, mut score) = (0, best[0]);
    for (j, &b) in best.iter().enumerate().skip(1) {
        if b > score {
            score = b;
            tag = j;
        }
    }
    let mut path = vec![0; len];
    path[len - 1] = tag;
    for t in (1..len).rev() {
        tag = back[t * k + tag];
        path[t - 1] = tag;
    }
    Ok((path, score))
}

/// Per-row argmax, ties to the smaller tag.
pub fn greedy_decode(scores: ArrayView2<f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut arg = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = j;
                }
            }
            arg
        })
        .collect()
}

/// Hinge `max(0, 1 - pos + neg)` with gradients `(d/d pos, d/d neg)`.
/// A margin of exactly zero counts as satisfied.
pub fn ranking_loss_grad(pos: f64, neg: f64) -> (f64, f64, f64) {
    let loss = 1.0 - pos + neg;
    if loss > 0.0 {
        (loss, -1.0, 1.0)
    } else {
        (0.0, 0.0, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Every tag path of length `len` over `k` tags, lexicographic order.
    fn all_paths(k: usize, len: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..k).map(move |j| {
                        let mut q = p.clone();
                        q.push(j);
                        q
                    })
                })
                .collect();
        }
        out
    }

    fn random_instance(rng: &mut ChaCha8Rng, k: usize, len: usize) -> (Array2<f64>, Transitions) {
        let scores = Array2::from_shape_fn((len, k), |_| rng.random_range(-2.0..2.0));
        let trans = Transitions {
            initial: Array1::from_shape_fn(k, |_| rng.random_range(-1.0..1.0)),
            matrix: Array2::from_shape_fn((k, k), |_| rng.random_range(-1.0..1.0)),
        };
        (scores, trans)
    }

    #[test]
    fn logadd_cases() {
        assert_eq!(logadd(&[3.5]).unwrap(), 3.5);
        assert!((logadd(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((logadd(&[1000.0, 1000.0]).unwrap() - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(logadd(&[]).is_err());
        let x = 0.37;
        assert!((logadd(&[x; 7]).unwrap() - (x + 7f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn wll_cases() {
        let (loss, grad) = wll_loss_grad(array![0.0, 0.0].view(), 0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert!((grad[0] + 0.5).abs() < 1e-15 && (grad[1] - 0.5).abs() < 1e-15);
        let (loss, grad) = wll_loss_grad(array![10.0, -10.0].view(), 0).unwrap();
        // ln(1 + e^-20)
        assert!((loss - (-20f64).exp().ln_1p()).abs() < 1e-20);
        assert!((loss - 2.0611536e-9).abs() < 1e-15);
        assert!(grad.sum().abs() < 1e-15);
        assert!(wll_loss_grad(array![1.0].view(), 1).is_err());
    }

    #[test]
    fn path_score_cases() {
        let t = Transitions {
            initial: array![0.5, -1.0],
            matrix: array![[0.1, 0.2], [0.3, 0.4]],
        };
        let f = array![[1.0, 2.0]];
        assert_eq!(path_score(f.view(), &t, &[1]).unwrap(), -1.0 + 2.0);
        let f = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        // init[0] + f00 + A01 + f11 + A10 + f20
        let hand = 0.5 + 1.0 + 0.2 + 4.0 + 0.3 + 5.0;
        assert!((path_score(f.view(), &t, &[0, 1, 0]).unwrap() - hand).abs() < 1e-15);
        assert!(path_score(f.view(), &t, &[0, 1]).is_err());
        assert!(path_score(f.view(), &t, &[0, 1, 2]).is_err());
        let zero = Array2::zeros((3, 2));
        assert_eq!(path_score(zero.view(), &Transitions::zeros(2), &[1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn log_z_closed_forms() {
        let (z, _) = forward_log_z(Array2::zeros((1, 2)).view(), &Transitions::zeros(2)).unwrap();
        assert!((z - 2f64.ln()).abs() < 1e-15);
        for (k, len) in [(3, 4), (4, 2), (1, 5)] {
            let (z, _) = forward_log_z(Array2::zeros((len, k)).view(), &Transitions::zeros(k)).unwrap();
            assert!((z - len as f64 * (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn log_z_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (f, a) = random_instance(&mut rng, 3, 5);
        let scores: Vec<f64> = all_paths(3, 5)
            .iter()
            .map(|p| path_score(f.view(), &a, p).unwrap())
            .collect();
        assert_eq!(scores.len(), 243);
        let brute = logadd(&scores).unwrap();
        let (z, lattice) = forward_log_z(f.view(), &a).unwrap();
        assert!((z - brute).abs() < 1e-8);
        // delta at t only depends on earlier columns.
        for t in 0..5 {
            let (_, prefix) = forward_log_z(f.slice(ndarray::s![..=t, ..]), &a).unwrap();
            assert_eq!(prefix.delta.row(t), lattice.delta.row(t));
        }
    }

    #[test]
    fn sll_gradient_matches_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (k, len) in [(2, 1), (3, 4), (4, 5)] {
            let (f, a) = random_instance(&mut rng, k, len);
            let gold: Vec<usize> = (0..len).map(|_| rng.random_range(0..k)).collect();
            let (loss, gf, ga) = sll_loss_grad(f.view(), &a, &gold).unwrap();
            assert!(loss >= 0.0);
            let paths = all_paths(k, len);
            let ss: Vec<f64> = paths.iter().map(|p| path_score(f.view(), &a, p).unwrap()).collect();
            let z = logadd(&ss).unwrap();
            let mut marg = Array2::<f64>::zeros((len, k));
            let mut marg_a = Array2::<f64>::zeros((k, k));
            let mut marg_i = Array1::<f64>::zeros(k);
            for (p, s) in paths.iter().zip(&ss) {
                let prob = (s - z).exp();
                marg_i[p[0]] += prob;
                for t in 0..len {
                    marg[[t, p[t]]] += prob;
                    if t > 0 {
                        marg_a[[p[t - 1], p[t]]] += prob;
                    }
                }
            }
            for t in 0..len {
                marg[[t, gold[t]]] -= 1.0;
                if t > 0 {
                    marg_a[[gold[t - 1], gold[t]]] -= 1.0;
                }
            }
            marg_i[gold[0]] -= 1.0;
            for (x, y) in gf.iter().zip(marg.iter()) {
                assert!((x - y).abs() < 1e-10);
            }
            for (x, y) in ga.matrix.iter().zip(marg_a.iter()) {
                assert!((x - y).abs() < 1e-10);
            }
            for (x, y) in ga.initial.iter().zip(marg_i.iter()) {
                assert!((x - y).abs() < 1e-10);
            }
            for row in gf.rows() {
                assert!(row.sum().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sll_loss_vanishes_for_dominant_path() {
        let mut f = Array2::zeros((3, 2));
        for t in 0..3 {
            f[[t, 1]] = 60.0;
        }
        let (loss, _, _) = sll_loss_grad(f.view(), &Transitions::zeros(2), &[1, 1, 1]).unwrap();
        assert!(loss < 1e-20);
        assert!(sll_loss_grad(f.view(), &Transitions::zeros(2), &[1, 1]).is_err());
    }

    #[test]
    fn viterbi_cases() {
        let (p, s) = viterbi(array![[1.0, 3.0]].view(), &Transitions::zeros(2)).unwrap();
        assert_eq!((p, s), (vec![1], 3.0));
        let (p, s) = viterbi(Array2::zeros((4, 3)).view(), &Transitions::zeros(3)).unwrap();
        assert_eq!((p, s), (vec![0; 4], 0.0));

        // Greedy picks [0, 0]; the 0→0 transition penalty makes [1, 0] best.
        let f = array![[1.0, 0.9], [1.0, 0.0]];
        let a = Transitions {
            initial: array![0.0, 0.0],
            matrix: array![[-5.0, 0.0], [0.0, 0.0]],
        };
        assert_eq!(greedy_decode(f.view()), vec![0, 0]);
        let (p, s) = viterbi(f.view(), &a).unwrap();
        let paths = all_paths(2, 2);
        let best = paths
            .iter()
            .map(|q| (path_score(f.view(), &a, q).unwrap(), q))
            .fold((f64::NEG_INFINITY, &paths[0]), |acc, x| if x.0 > acc.0 { x } else { acc });
        assert_eq!(&p, best.1);
        assert_eq!(p, vec![1, 0]);
        assert!((s - best.0).abs() < 1e-12);
    }

    #[test]
    fn viterbi_dominates_all_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (f, a) = random_instance(&mut rng, 3, 4);
            let (p, s) = viterbi(f.view(), &a).unwrap();
            assert!((path_score(f.view(), &a, &p).unwrap() - s).abs() < 1e-12);
            for q in all_paths(3, 4) {
                assert!(path_score(f.view(), &a, &q).unwrap() <= s + 1e-12);
            }
        }
    }

    #[test]
    fn column_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (f, a) = random_instance(&mut rng, 3, 4);
        let gold = [0, 2, 1, 1];
        let (l0, _, _) = sll_loss_grad(f.view(), &a, &gold).unwrap();
        let (z0, _) = forward_log_z(f.view(), &a).unwrap();
        let (p0, _) = viterbi(f.view(), &a).unwrap();
        let mut g = f.clone();
        g.row_mut(2).mapv_inplace(|x| x + 4.25);
        let (l1, _, _) = sll_loss_grad(g.view(), &a, &gold).unwrap();
        let (z1, _) = forward_log_z(g.view(), &a).unwrap();
        let (p1, _) = viterbi(g.view(), &a).unwrap();
        assert!((l0 - l1).abs() < 1e-12);
        assert!((z1 - z0 - 4.25).abs() < 1e-12);
        assert_eq!(p0, p1);
    }

    #[test]
    fn ranking_cases() {
        assert_eq!(ranking_loss_grad(2.0, 0.5), (0.0, 0.0, 0.0));
        let (l, gp, gn) = ranking_loss_grad(0.2, 0.5);
        assert!((l - 1.3).abs() < 1e-15);
        assert_eq!((gp, gn), (-1.0, 1.0));
        assert_eq!(ranking_loss_grad(1.5, 0.5), (0.0, 0.0, 0.0));
    }
}
