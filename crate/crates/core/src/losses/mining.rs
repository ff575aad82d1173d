use super::LossError;
use crate::nn::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over Unicode scalar values.
pub fn levenshtein_str(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein(&a, &b)
}

fn sq_dist<F: Scalar>(emb: &Tensor<F>, i: usize, j: usize) -> f64 {
    emb.row(i)
        .iter()
        .zip(emb.row(j))
        .map(|(&a, &b)| (a - b).as_f64().powi(2))
        .sum()
}

/// Positive: farthest same-class member. Negative: the different-class member
/// minimizing `neg_key`. Ties go to the lowest index. Anchors lacking either
/// are skipped; a batch where every anchor lacks one is an error.
pub(crate) fn mine_with<F: Scalar, L: PartialEq>(
    emb: &Tensor<F>,
    labels: &[L],
    neg_key: impl Fn(usize, usize) -> f64,
) -> Result<Vec<Triplet>, LossError> {
    if labels.len() != emb.rows() {
        return Err(LossError::NoValidTriplet(format!(
            "{} labels for {} embeddings",
            labels.len(),
            emb.rows()
        )));
    }
    let mut out = Vec::with_capacity(labels.len());
    for i in 0..labels.len() {
        let mut pos: Option<(f64, usize)> = None;
        let mut neg: Option<(f64, usize)> = None;
        for j in 0..labels.len() {
            if j == i {
                continue;
            }
            if labels[j] == labels[i] {
                let d = sq_dist(emb, i, j);
                if pos.map_or(true, |(best, _)| d > best) {
                    pos = Some((d, j));
                }
            } else {
                let d = neg_key(i, j);
                if neg.map_or(true, |(best, _)| d < best) {
                    neg = Some((d, j));
                }
            }
        }
        if let (Some((_, positive)), Some((_, negative))) = (pos, neg) {
            out.push(Triplet {
                anchor: i,
                positive,
                negative,
            });
        }
    }
    if out.is_empty() {
        return Err(LossError::NoValidTriplet(
            "no anchor has both a same-class and a different-class partner".into(),
        ));
    }
    Ok(out)
}

/// Hardest positive and hardest negative per anchor by Euclidean distance.
pub fn batch_hard_mine<F: Scalar, L: PartialEq>(emb: &Tensor<F>, labels: &[L]) -> Result<Vec<Triplet>, LossError> {
    mine_with(emb, labels, |i, j| sq_dist(emb, i, j))
}

/// Negative is the member whose word is closest in edit distance to the
/// anchor's word; the positive is chosen as in [`batch_hard_mine`].
pub fn levenshtein_mine<F: Scalar, S: AsRef<str>>(emb: &Tensor<F>, words: &[S]) -> Result<Vec<Triplet>, LossError> {
    let words: Vec<&str> = words.iter().map(AsRef::as_ref).collect();
    mine_with(emb, &words, |i, j| levenshtein_str(words[i], words[j]) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn edit_distance_examples() {
        assert_eq!(levenshtein_str("abc", "abc"), 0);
        assert_eq!(levenshtein_str("", "ab"), 2);
        assert_eq!(levenshtein_str("kitten", "sitting"), 3);
        assert_eq!(levenshtein_str("flaw", "lawn"), 2);
    }

    /// Full-table recursion oracle.
    fn naive(a: &[u8], b: &[u8]) -> usize {
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in t.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            t[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let c = usize::from(a[i - 1] != b[j - 1]);
                t[i][j] = (t[i - 1][j - 1] + c).min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
            }
        }
        t[a.len()][b.len()]
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let word = |rng: &mut ChaCha8Rng| -> Vec<u8> { (0..rng.gen_range(0..8)).map(|_| rng.gen_range(b'a'..b'e')).collect() };
        for _ in 0..1000 {
            let (a, b, c) = (word(&mut rng), word(&mut rng), word(&mut rng));
            let ab = levenshtein(&a, &b);
            assert_eq!(ab, levenshtein(&b, &a));
            assert_eq!(ab, naive(&a, &b));
            assert!(levenshtein(&a, &c) <= ab + levenshtein(&b, &c));
            assert_eq!(levenshtein(&a, &a), 0);
            assert_eq!(ab == 0, a == b);
        }
    }

    fn col(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn batch_hard_three_points() {
        let t = batch_hard_mine(&col(&[0.0, 1.0, 10.0]), &["A", "A", "B"]).unwrap();
        // anchor 2 has no positive and is skipped
        assert_eq!(
            t,
            [
                Triplet { anchor: 0, positive: 1, negative: 2 },
                Triplet { anchor: 1, positive: 0, negative: 2 }
            ]
        );
        let t = batch_hard_mine(&col(&[0.0, 1.0, 10.0, 11.0]), &["A", "A", "B", "B"]).unwrap();
        assert_eq!(t[0], Triplet { anchor: 0, positive: 1, negative: 2 });
        assert_eq!(t[2], Triplet { anchor: 2, positive: 3, negative: 1 });
    }

    #[test]
    fn batch_hard_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let e: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let labels = [0, 1, 0, 1, 2, 2, 0, 1];
            let t = batch_hard_mine(&col(&e), &labels).unwrap();
            for tr in t {
                let i = tr.anchor;
                let d = |j: usize| (e[i] - e[j]).abs();
                for j in 0..8 {
                    if j != i && labels[j] == labels[i] {
                        assert!(d(j) <= d(tr.positive));
                    }
                    if labels[j] != labels[i] {
                        assert!(d(j) >= d(tr.negative));
                    }
                }
            }
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let e = col(&[0.5; 5]);
        let t = batch_hard_mine(&e, &[1, 0, 1, 0, 1]).unwrap();
        assert_eq!(t[0], Triplet { anchor: 0, positive: 2, negative: 1 });
        assert_eq!(t[1], Triplet { anchor: 1, positive: 3, negative: 0 });
        assert_eq!(t[4], Triplet { anchor: 4, positive: 0, negative: 1 });
    }

    #[test]
    fn distinct_or_single_class_batches_fail() {
        assert!(batch_hard_mine(&col(&[0.0, 1.0, 2.0]), &[0, 1, 2]).is_err());
        assert!(levenshtein_mine(&col(&[0.0, 1.0]), &["go", "go"]).is_err());
    }

    #[test]
    fn levenshtein_prefers_confusable_word() {
        let e = col(&[0.0, 1.0, 5.0, 2.0, 3.0, 4.0]);
        let words = ["cat", "cat", "car", "dog", "car", "dog"];
        let t = levenshtein_mine(&e, &words).unwrap();
        assert_eq!(t[0].negative, 2);
        assert_eq!(t[0].positive, 1);
        // "dog" is 3 edits from both "cat" and "car": lowest index wins
        assert_eq!(t[3].negative, 0);
        let t = levenshtein_mine(&col(&[0.0, 9.0, 1.0, 2.0]), &["ab", "ab", "xy", "zw"]).unwrap();
        assert_eq!(t.len(), 2);
    }

    proptest! {
        #[test]
        fn edit_distance_bounds(a in "[a-c]{0,10}", b in "[a-c]{0,10}") {
            let d = levenshtein_str(&a, &b);
            prop_assert!(d <= a.len().max(b.len()));
            prop_assert!(d >= a.len().abs_diff(b.len()));
        }
    }
}
