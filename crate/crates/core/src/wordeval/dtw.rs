//! Dynamic time warping over word sequences.
//!
//! Aligns an ASR transcript against a clinical transcription with a
//! minimum-cost monotone path. Cells entered by a diagonal step become 1:1
//! word pairs; words absorbed by horizontal/vertical steps stay unmatched.

use thiserror::Error;

use super::chat::normalize_surface;

#[derive(Debug, Error, PartialEq)]
pub enum DtwError {
    #[error("cannot align empty sequences (asr={asr}, chat={chat})")]
    EmptyInput { asr: usize, chat: usize },
}

/// One matched (asr, chat) word pair on the alignment path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignedPair {
    pub asr_index: usize,
    pub chat_index: usize,
    /// True when the normalized surface forms are equal.
    pub exact: bool,
}

/// A DTW correspondence between an ASR word sequence and a CHAT word
/// sequence. Pairs are strictly monotone in both indices.
#[derive(Debug, Clone, PartialEq)]
pub struct WordAlignment {
    pub pairs: Vec<AlignedPair>,
    pub unmatched_asr: Vec<usize>,
    pub unmatched_chat: Vec<usize>,
    /// Total path cost under the supplied cost function.
    pub cost: f64,
    /// The full warping path over (asr, chat) cells, including absorbed ones.
    pub path: Vec<(usize, usize)>,
}

impl WordAlignment {
    /// Chat index matched exactly to the given asr index, if any.
    pub fn exact_chat_for_asr(&self, asr_index: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|p| p.asr_index == asr_index && p.exact)
            .map(|p| p.chat_index)
    }
}

/// Character-level Levenshtein distance.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Default word-pair cost: 0 when the normalized forms are equal, otherwise
/// character edit distance normalized by the longer length.
pub fn word_cost(a: &str, b: &str) -> f64 {
    let na = normalize_surface(a);
    let nb = normalize_surface(b);
    if na == nb {
        return 0.0;
    }
    let longest = na.chars().count().max(nb.chars().count());
    if longest == 0 {
        return 0.0;
    }
    edit_distance(&na, &nb) as f64 / longest as f64
}

/// Steps in backtrack preference order: the diagonal wins ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Diag,
    AsrOnly,
    ChatOnly,
}

/// Aligns two word sequences with the default [`word_cost`].
pub fn dtw_align<S: AsRef<str>>(asr: &[S], chat: &[S]) -> Result<WordAlignment, DtwError> {
    dtw_align_with(asr, chat, word_cost)
}

/// Aligns two word sequences under an arbitrary word-pair cost.
pub fn dtw_align_with<S: AsRef<str>>(
    asr: &[S],
    chat: &[S],
    cost: impl Fn(&str, &str) -> f64,
) -> Result<WordAlignment, DtwError> {
    let n = asr.len();
    let m = chat.len();
    if n == 0 || m == 0 {
        return Err(DtwError::EmptyInput { asr: n, chat: m });
    }

    let cell = |i: usize, j: usize| cost(asr[i].as_ref(), chat[j].as_ref());
    let mut d = vec![vec![f64::INFINITY; m]; n];
    d[0][0] = cell(0, 0);
    for j in 1..m {
        d[0][j] = d[0][j - 1] + cell(0, j);
    }
    for i in 1..n {
        d[i][0] = d[i - 1][0] + cell(i, 0);
    }
    for i in 1..n {
        for j in 1..m {
            let best = d[i - 1][j - 1].min(d[i - 1][j]).min(d[i][j - 1]);
            d[i][j] = best + cell(i, j);
        }
    }

    // Backtrack, preferring diagonal on ties, then the asr-advancing step.
    // Predecessor values are compared exactly against their own minimum, so
    // no float tolerance is involved.
    let mut path = vec![(n - 1, m - 1)];
    let mut steps: Vec<Step> = Vec::new();
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let mut candidates: Vec<(Step, f64)> = Vec::with_capacity(3);
        if i > 0 && j > 0 {
            candidates.push((Step::Diag, d[i - 1][j - 1]));
        }
        if i > 0 {
            candidates.push((Step::AsrOnly, d[i - 1][j]));
        }
        if j > 0 {
            candidates.push((Step::ChatOnly, d[i][j - 1]));
        }
        let best = candidates.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
        let step = candidates
            .iter()
            .find(|&&(_, v)| v == best)
            .map(|&(s, _)| s)
            .expect("at least one predecessor");
        match step {
            Step::Diag => {
                i -= 1;
                j -= 1;
            }
            Step::AsrOnly => i -= 1,
            Step::ChatOnly => j -= 1,
        }
        path.push((i, j));
        steps.push(step);
    }
    path.reverse();
    steps.reverse();

    let exact = |i: usize, j: usize| {
        normalize_surface(asr[i].as_ref()) == normalize_surface(chat[j].as_ref())
    };
    let mut pairs = vec![AlignedPair { asr_index: 0, chat_index: 0, exact: exact(0, 0) }];
    let mut unmatched_asr = Vec::new();
    let mut unmatched_chat = Vec::new();
    for (k, step) in steps.iter().enumerate() {
        let (pi, pj) = path[k + 1];
        match step {
            Step::Diag => pairs.push(AlignedPair { asr_index: pi, chat_index: pj, exact: exact(pi, pj) }),
            Step::AsrOnly => unmatched_asr.push(pi),
            Step::ChatOnly => unmatched_chat.push(pj),
        }
    }

    Ok(WordAlignment { pairs, unmatched_asr, unmatched_chat, cost: d[n - 1][m - 1], path })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_sequences_self_align() {
        let a = words(&["the", "cat", "sat"]);
        let al = dtw_align(&a, &a).unwrap();
        assert_eq!(al.cost, 0.0);
        assert_eq!(al.pairs.len(), 3);
        assert!(al.pairs.iter().all(|p| p.exact));
        assert!(al.unmatched_asr.is_empty());
        assert!(al.unmatched_chat.is_empty());
        assert_eq!(al.path, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn insertion_is_absorbed_not_exact() {
        let asr = words(&["the", "cat"]);
        let chat = words(&["the", "uh", "cat"]);
        let al = dtw_align(&asr, &chat).unwrap();
        let exact: Vec<(usize, usize)> = al
            .pairs
            .iter()
            .filter(|p| p.exact)
            .map(|p| (p.asr_index, p.chat_index))
            .collect();
        assert_eq!(exact, vec![(0, 0), (1, 2)]);
        assert_eq!(al.unmatched_chat, vec![1]);
        assert!(al.unmatched_asr.is_empty());
    }

    #[test]
    fn disjoint_vocabularies_have_no_exact_pairs() {
        let asr = words(&["alpha", "beta"]);
        let chat = words(&["gamma", "delta", "epsilon"]);
        let al = dtw_align(&asr, &chat).unwrap();
        assert!(al.pairs.iter().all(|p| !p.exact));
    }

    #[test]
    fn empty_input_is_rejected() {
        let empty: Vec<String> = vec![];
        let one = words(&["x"]);
        assert!(dtw_align(&empty, &one).is_err());
        assert!(dtw_align(&one, &empty).is_err());
    }

    #[test]
    fn pairs_strictly_monotone() {
        let asr = words(&["a", "b", "b", "c", "d"]);
        let chat = words(&["a", "x", "b", "c", "c", "d"]);
        let al = dtw_align(&asr, &chat).unwrap();
        for w in al.pairs.windows(2) {
            assert!(w[0].asr_index < w[1].asr_index);
            assert!(w[0].chat_index < w[1].chat_index);
        }
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("same", "same"), 0);
    }
}
