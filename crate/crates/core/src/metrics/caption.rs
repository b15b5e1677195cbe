use std::collections::{BTreeMap, BTreeSet};

const MAX_N: usize = 4;
const CIDER_SIGMA: f64 = 6.0;

/// Recall weight of ROUGE-L's F-measure.
pub const ROUGE_BETA: f64 = 1.2;

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU-4 with uniform weights and the brevity penalty. Higher-order
/// precisions use add-one smoothing; a zero unigram precision gives 0.
pub fn bleu4<T: Ord>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_N {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        let matched: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
            .sum();
        let total = candidate.len().saturating_sub(n - 1);
        let p = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / MAX_N as f64).exp()
}

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure weighted by [`ROUGE_BETA`].
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Scores `candidate` against each reference separately and averages.
pub fn multi_reference_average<T, F>(metric: F, candidate: &[T], references: &[Vec<T>]) -> f64
where
    F: Fn(&[T], &[T]) -> f64,
{
    if references.is_empty() {
        return 0.0;
    }
    references.iter().map(|r| metric(candidate, r)).sum::<f64>() / references.len() as f64
}

struct TfIdf<'a, T> {
    vecs: [BTreeMap<&'a [T], f64>; MAX_N],
    norms: [f64; MAX_N],
    length: f64,
}

/// Document frequencies over the references of an evaluation set, used by
/// the CIDEr-D score.
#[derive(Debug, Clone)]
pub struct CiderCorpus<T> {
    df: BTreeMap<Vec<T>, usize>,
    log_items: f64,
    items: usize,
}

impl<T: Ord + Clone> CiderCorpus<T> {
    /// `items[i]` holds the references of evaluation item `i`. An n-gram's
    /// document frequency counts the items whose references contain it.
    pub fn new(items: &[Vec<Vec<T>>]) -> Self {
        let mut df = BTreeMap::new();
        for refs in items {
            let mut seen = BTreeSet::new();
            for r in refs {
                for n in 1..=MAX_N {
                    seen.extend(ngram_counts(r, n).into_keys());
                }
            }
            for g in seen {
                *df.entry(g.to_vec()).or_insert(0) += 1;
            }
        }
        CiderCorpus {
            df,
            log_items: (items.len().max(1) as f64).ln(),
            items: items.len(),
        }
    }

    pub fn num_items(&self) -> usize {
        self.items
    }

    /// With fewer than two items every idf is zero and all scores vanish.
    pub fn is_degenerate(&self) -> bool {
        self.items < 2
    }

    pub fn document_frequency(&self, ngram: &[T]) -> usize {
        self.df.get(ngram).copied().unwrap_or(0)
    }

    fn tfidf<'a>(&self, tokens: &'a [T]) -> TfIdf<'a, T> {
        let mut vecs: [BTreeMap<&[T], f64>; MAX_N] = Default::default();
        let mut norms = [0.0; MAX_N];
        let mut length = 0.0;
        for n in 1..=MAX_N {
            for (g, tf) in ngram_counts(tokens, n) {
                let df = self.document_frequency(g).max(1) as f64;
                let v = tf as f64 * (self.log_items - df.ln());
                norms[n - 1] += v * v;
                vecs[n - 1].insert(g, v);
                // Matches the reference implementation, which measures length
                // by the bigram count.
                if n == 2 {
                    length += tf as f64;
                }
            }
        }
        TfIdf {
            vecs,
            norms: norms.map(f64::sqrt),
            length,
        }
    }

    /// CIDEr-D: clipped TF-IDF cosine per n, Gaussian length penalty,
    /// averaged over n = 1..4 and references, times 10.
    pub fn score(&self, candidate: &[T], references: &[Vec<T>]) -> f64 {
        if references.is_empty() {
            return 0.0;
        }
        let hyp = self.tfidf(candidate);
        let mut total = 0.0;
        for r in references {
            let rv = self.tfidf(r);
            let delta = hyp.length - rv.length;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for n in 0..MAX_N {
                let mut val = 0.0;
                for (g, &hv) in &hyp.vecs[n] {
                    if let Some(&refv) = rv.vecs[n].get(g) {
                        val += hv.min(refv) * refv;
                    }
                }
                if hyp.norms[n] != 0.0 && rv.norms[n] != 0.0 {
                    val /= hyp.norms[n] * rv.norms[n];
                }
                total += val * penalty;
            }
        }
        total / MAX_N as f64 / references.len() as f64 * 10.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    // Brute-force oracles written directly from the metric definitions:
    // linear scans instead of maps, exhaustive subsequence search for LCS.

    fn oracle_ngrams<'a>(t: &[&'a str], n: usize) -> Vec<Vec<&'a str>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i + n <= t.len() {
            out.push(t[i..i + n].to_vec());
            i += 1;
        }
        out
    }

    fn oracle_count(list: &[Vec<&str>], g: &[&str]) -> usize {
        list.iter().filter(|x| x.as_slice() == g).count()
    }

    fn oracle_bleu(c: &[&str], r: &[&str]) -> f64 {
        if c.is_empty() || r.is_empty() {
            return 0.0;
        }
        let mut precisions = Vec::new();
        for n in 1..=4 {
            let cg = oracle_ngrams(c, n);
            let rg = oracle_ngrams(r, n);
            let mut distinct: Vec<Vec<&str>> = Vec::new();
            for g in &cg {
                if !distinct.contains(g) {
                    distinct.push(g.clone());
                }
            }
            let mut clipped = 0;
            for g in &distinct {
                clipped += oracle_count(&cg, g).min(oracle_count(&rg, g));
            }
            let p = if n == 1 {
                clipped as f64 / cg.len() as f64
            } else {
                (clipped as f64 + 1.0) / (cg.len() as f64 + 1.0)
            };
            precisions.push(p);
        }
        if precisions[0] == 0.0 {
            return 0.0;
        }
        let geo = precisions.iter().product::<f64>().powf(0.25);
        let bp = if c.len() > r.len() {
            1.0
        } else {
            (1.0 - r.len() as f64 / c.len() as f64).exp()
        };
        bp * geo
    }

    fn is_subsequence(s: &[&str], of: &[&str]) -> bool {
        let mut it = of.iter();
        s.iter().all(|x| it.any(|y| y == x))
    }

    fn oracle_lcs(a: &[&str], b: &[&str]) -> usize {
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<&str> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            if sub.len() > best && is_subsequence(&sub, b) {
                best = sub.len();
            }
        }
        best
    }

    fn oracle_rouge(c: &[&str], r: &[&str]) -> f64 {
        let l = oracle_lcs(c, r) as f64;
        if l == 0.0 {
            return 0.0;
        }
        let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
        let b = 1.2f64;
        (1.0 + b * b) * p * rec / (rec + b * b * p)
    }

    fn oracle_cider<'a>(c: &[&'a str], refs: &[Vec<&'a str>], corpus: &[Vec<Vec<&str>>]) -> f64 {
        let n_docs = corpus.len() as f64;
        let df = |g: &[&str]| {
            corpus
                .iter()
                .filter(|item| item.iter().any(|r| oracle_count(&oracle_ngrams(r, g.len()), g) > 0))
                .count()
        };
        let vector = |t: &[&'a str], n: usize| -> Vec<(Vec<&'a str>, f64)> {
            let grams = oracle_ngrams(t, n);
            let mut out: Vec<(Vec<&str>, f64)> = Vec::new();
            for g in &grams {
                if out.iter().all(|(h, _)| h != g) {
                    let tf = oracle_count(&grams, g) as f64;
                    out.push((g.clone(), tf * (n_docs.ln() - (df(g).max(1) as f64).ln())));
                }
            }
            out
        };
        let mut sum = 0.0;
        for r in refs {
            let len_c = oracle_ngrams(c, 2).len() as f64;
            let len_r = oracle_ngrams(r, 2).len() as f64;
            let pen = (-(len_c - len_r).powi(2) / 72.0).exp();
            for n in 1..=4 {
                let vc = vector(c, n);
                let vr = vector(r, n);
                let mut dot = 0.0;
                for (g, x) in &vc {
                    for (h, y) in &vr {
                        if g == h {
                            dot += x.min(*y) * y;
                        }
                    }
                }
                let nc = vc.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
                let nr = vr.iter().map(|(_, y)| y * y).sum::<f64>().sqrt();
                if nc != 0.0 && nr != 0.0 {
                    dot /= nc * nr;
                }
                sum += dot * pen;
            }
        }
        10.0 * sum / 4.0 / refs.len() as f64
    }

    // (candidate, references) fixture suite; the references of all items
    // form the CIDEr corpus.
    const FIXTURES: [(&str, &[&str]); 10] = [
        ("the cat sat on the mat", &["the cat is on the mat"]),
        (
            "the chair is occupied by a person",
            &["the chair is occupied by a person", "a person sits on the chair"],
        ),
        (
            "a dog lies on the sofa",
            &["the sofa is taken by a dog", "a dog is on the sofa", "dog on sofa"],
        ),
        ("fire", &["the floor is on fire"]),
        (
            "you would fall on the ice",
            &["the floor is icy and you would slip", "you may slip on the ice"],
        ),
        ("the the the the", &["the cat", "the the"]),
        (
            "the bench is roped off for display",
            &["the bench is an exhibit", "the bench is roped off"],
        ),
        (
            "person person grass grass run run",
            &["a person is standing on the grass"],
        ),
        ("cup", &["the cup is hot"]),
        (
            "nothing in common here",
            &["completely different words only", "unrelated reference"],
        ),
    ];

    fn fixtures() -> Vec<(Vec<&'static str>, Vec<Vec<&'static str>>)> {
        FIXTURES
            .iter()
            .map(|(c, rs)| (toks(c), rs.iter().map(|r| toks(r)).collect()))
            .collect()
    }

    #[test]
    fn bleu_matches_oracle() {
        for (c, refs) in fixtures() {
            for r in &refs {
                let (a, b) = (bleu4(&c, r), oracle_bleu(&c, r));
                assert!((a - b).abs() <= 1e-9, "{c:?} vs {r:?}: {a} {b}");
            }
        }
    }

    #[test]
    fn bleu_hand_pair() {
        let c = toks("the cat sat on the mat");
        let r = toks("the cat is on the mat");
        // unigrams 5/6, bigrams (3+1)/(5+1), trigrams (1+1)/(4+1), 4-grams (0+1)/(3+1); equal lengths.
        let expected = (5.0 / 6.0 * 4.0 / 6.0 * 2.0 / 5.0 * 1.0 / 4.0f64).powf(0.25);
        assert!((bleu4(&c, &r) - expected).abs() < 1e-12);
    }

    #[test]
    fn bleu_edge_cases() {
        let s = toks("a person sits on the chair");
        assert!((bleu4(&s, &s) - 1.0).abs() < 1e-12);
        assert_eq!(bleu4(&toks("x y z"), &toks("a b c")), 0.0);
        assert_eq!(bleu4::<&str>(&[], &s), 0.0);
    }

    #[test]
    fn rouge_matches_oracle() {
        for (c, refs) in fixtures() {
            for r in &refs {
                assert_eq!(lcs_len(&c, r), oracle_lcs(&c, r));
                let (a, b) = (rouge_l(&c, r), oracle_rouge(&c, r));
                assert!((a - b).abs() <= 1e-9, "{c:?} vs {r:?}: {a} {b}");
            }
        }
    }

    #[test]
    fn rouge_edge_cases() {
        let s = toks("the sofa is wet");
        assert!((rouge_l(&s, &s) - 1.0).abs() < 1e-12);
        assert_eq!(rouge_l(&s, &toks("x y")), 0.0);
        assert_eq!(rouge_l::<&str>(&[], &s), 0.0);
        assert_eq!(lcs_len(&toks("a b c b d a b"), &toks("b d c a b a")), 4);
    }

    #[test]
    fn cider_matches_oracle() {
        let items = fixtures();
        let corpus: Vec<Vec<Vec<&str>>> = items.iter().map(|(_, r)| r.clone()).collect();
        let cider = CiderCorpus::new(&corpus);
        assert!(!cider.is_degenerate());
        for (c, refs) in &items {
            let (a, b) = (cider.score(c, refs), oracle_cider(c, refs, &corpus));
            assert!((a - b).abs() <= 1e-9, "{c:?}: {a} {b}");
            assert!(a >= 0.0 && a.is_finite());
        }
    }

    #[test]
    fn cider_identical_in_two_item_corpus() {
        let a = toks("a dog is on the sofa");
        let b = toks("the floor is icy");
        let corpus = vec![vec![a.clone()], vec![b.clone()]];
        let cider = CiderCorpus::new(&corpus);
        // "is" occurs in both items and drops out; every other n-gram has
        // idf ln 2 and the vectors coincide, so each order contributes 1.
        assert!((cider.score(&a, std::slice::from_ref(&a)) - 10.0).abs() < 1e-12);
        assert!(
            (cider.score(&a, std::slice::from_ref(&a)) - oracle_cider(&a, std::slice::from_ref(&a), &corpus)).abs()
                < 1e-12
        );
        assert_eq!(cider.score(&toks("zebra crossing"), &[a]), 0.0);
    }

    #[test]
    fn cider_degenerate_and_duplicates() {
        let a = toks("the cup is hot");
        let cider = CiderCorpus::new(&[vec![a.clone()]]);
        assert!(cider.is_degenerate());
        assert_eq!(cider.score(&a, std::slice::from_ref(&a)), 0.0);
        let corpus = vec![vec![a.clone()], vec![toks("a cup")]];
        let cider = CiderCorpus::new(&corpus);
        let doubled = toks("the the cup cup is is hot hot");
        let s = cider.score(&doubled, &[a]);
        assert!(s.is_finite() && s >= 0.0);
    }

    #[test]
    fn reference_order_does_not_matter() {
        let items = fixtures();
        let corpus: Vec<Vec<Vec<&str>>> = items.iter().map(|(_, r)| r.clone()).collect();
        let cider = CiderCorpus::new(&corpus);
        for (c, refs) in &items {
            let mut rev = refs.clone();
            rev.reverse();
            assert!((cider.score(c, refs) - cider.score(c, &rev)).abs() < 1e-12);
            let b = multi_reference_average(bleu4, c, refs) - multi_reference_average(bleu4, c, &rev);
            let r = multi_reference_average(rouge_l, c, refs) - multi_reference_average(rouge_l, c, &rev);
            assert!(b.abs() < 1e-12 && r.abs() < 1e-12);
        }
    }

    #[test]
    fn multi_reference_decomposition() {
        let c = toks("a person sits on the chair");
        let other = toks("the chair is occupied");
        let one = multi_reference_average(bleu4, &c, std::slice::from_ref(&c));
        assert_eq!(one, bleu4(&c, &c));
        let two = multi_reference_average(bleu4, &c, &[c.clone(), other.clone()]);
        assert!((two - (1.0 + bleu4(&c, &other)) / 2.0).abs() < 1e-12);
        let three = multi_reference_average(rouge_l, &c, &[other.clone(), other.clone(), other.clone()]);
        assert!((three - rouge_l(&c, &other)).abs() < 1e-15);
    }
}
