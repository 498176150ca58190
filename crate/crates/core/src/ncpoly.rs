//! Free non-commutative polynomial algebra over `m` generators.
//!
//! A [`NcPolynomial`] is a sparse map from [`Word`]s (monomials
//! `g_{i1} g_{i2} ⋯ g_{ik}`) to real coefficients. Words never commute:
//! `g0 g1` and `g1 g0` are distinct keys. Terms are kept in graded
//! lexicographic order (shorter words first, then letter by letter), which
//! fixes both the text serialization and the coefficient layout used by
//! filter banks during training.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{ensure_generators, Error, Result};

/// A monomial in the generators, stored as generator indices.
///
/// The empty word is the unit of the algebra.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Word(Vec<usize>);

impl Word {
    pub fn new(letters: impl Into<Vec<usize>>) -> Self {
        Word(letters.into())
    }

    pub fn unit() -> Self {
        Word(Vec::new())
    }

    pub fn letters(&self) -> &[usize] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn is_unit(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut letters = Vec::with_capacity(self.0.len() + other.0.len());
        letters.extend_from_slice(&self.0);
        letters.extend_from_slice(&other.0);
        Word(letters)
    }

    /// Number of letters equal to `generator`.
    pub fn occurrences(&self, generator: usize) -> usize {
        self.0.iter().filter(|&&l| l == generator).count()
    }

    fn check(&self, num_generators: usize) -> Result<()> {
        match self.0.iter().find(|&&l| l >= num_generators) {
            Some(&index) => Err(Error::GeneratorIndex { index, num_generators }),
            None => Ok(()),
        }
    }

    /// All words of degree `<= max_degree`, in graded lexicographic order.
    pub fn all_up_to(num_generators: usize, max_degree: usize) -> Vec<Word> {
        let mut out = vec![Word::unit()];
        let mut layer = vec![Word::unit()];
        for _ in 0..max_degree {
            let mut next = Vec::with_capacity(layer.len() * num_generators);
            for w in &layer {
                for g in 0..num_generators {
                    let mut letters = w.0.clone();
                    letters.push(g);
                    next.push(Word(letters));
                }
            }
            out.extend(next.iter().cloned());
            layer = next;
        }
        out
    }

    /// The unit plus the powers `g_i^k`, `1 <= k <= max_degree`, in graded
    /// lexicographic order.
    pub fn powers_up_to(num_generators: usize, max_degree: usize) -> Vec<Word> {
        let mut out = vec![Word::unit()];
        for k in 1..=max_degree {
            for g in 0..num_generators {
                out.push(Word(vec![g; k]));
            }
        }
        out
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("e");
        }
        for (k, l) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

impl From<Vec<usize>> for Word {
    fn from(v: Vec<usize>) -> Self {
        Word(v)
    }
}

/// Element of the free algebra on `num_generators` letters.
#[derive(Clone, Debug, PartialEq)]
pub struct NcPolynomial {
    num_generators: usize,
    terms: BTreeMap<Word, f64>,
}

impl NcPolynomial {
    pub fn zero(num_generators: usize) -> Result<Self> {
        if num_generators == 0 {
            return Err(Error::InvalidArgument(
                "a polynomial needs at least one generator".into(),
            ));
        }
        Ok(NcPolynomial {
            num_generators,
            terms: BTreeMap::new(),
        })
    }

    pub fn one(num_generators: usize) -> Result<Self> {
        Self::monomial(num_generators, Word::unit(), 1.0)
    }

    pub fn generator(num_generators: usize, index: usize) -> Result<Self> {
        Self::monomial(num_generators, Word::new(vec![index]), 1.0)
    }

    pub fn monomial(num_generators: usize, word: Word, coefficient: f64) -> Result<Self> {
        Self::from_terms(num_generators, [(word, coefficient)])
    }

    /// Builds a polynomial from `(word, coefficient)` pairs. Repeated words
    /// accumulate; zero sums are dropped.
    pub fn from_terms<I>(num_generators: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Word, f64)>,
    {
        let mut p = Self::zero(num_generators)?;
        for (w, c) in terms {
            w.check(num_generators)?;
            p.accumulate(w, c);
        }
        Ok(p)
    }

    fn accumulate(&mut self, word: Word, coefficient: f64) {
        if coefficient == 0.0 {
            return;
        }
        let entry = self.terms.entry(word);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(coefficient);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = *o.get() + coefficient;
                if sum == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn num_generators(&self) -> usize {
        self.num_generators
    }

    /// Terms in graded lexicographic word order.
    pub fn terms(&self) -> impl Iterator<Item = (&Word, f64)> + '_ {
        self.terms.iter().map(|(w, &c)| (w, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, word: &Word) -> f64 {
        self.terms.get(word).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest word length; 0 for the zero polynomial.
    pub fn degree(&self) -> usize {
        self.terms.keys().map(Word::degree).max().unwrap_or(0)
    }

    pub fn add(&self, other: &NcPolynomial) -> Result<NcPolynomial> {
        ensure_generators(self.num_generators, other.num_generators)?;
        let mut out = self.clone();
        for (w, &c) in &other.terms {
            out.accumulate(w.clone(), c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &NcPolynomial) -> Result<NcPolynomial> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, factor: f64) -> NcPolynomial {
        let mut out = NcPolynomial {
            num_generators: self.num_generators,
            terms: BTreeMap::new(),
        };
        for (w, &c) in &self.terms {
            out.accumulate(w.clone(), c * factor);
        }
        out
    }

    /// Product by word concatenation: `(pq)[uv] += p[u]·q[v]`.
    pub fn multiply(&self, other: &NcPolynomial) -> Result<NcPolynomial> {
        ensure_generators(self.num_generators, other.num_generators)?;
        let mut out = NcPolynomial {
            num_generators: self.num_generators,
            terms: BTreeMap::new(),
        };
        for (u, &a) in &self.terms {
            for (v, &b) in &other.terms {
                out.accumulate(u.concat(v), a * b);
            }
        }
        Ok(out)
    }

    /// For every word in the support, the number of letters equal to
    /// `generator`.
    pub fn generator_occurrences(&self, generator: usize) -> Result<BTreeMap<Word, usize>> {
        if generator >= self.num_generators {
            return Err(Error::GeneratorIndex {
                index: generator,
                num_generators: self.num_generators,
            });
        }
        Ok(self
            .terms
            .keys()
            .map(|w| (w.clone(), w.occurrences(generator)))
            .collect())
    }

    /// Coefficients of `words`, in that order (absent words read as zero).
    pub fn coefficients_on(&self, words: &[Word]) -> Vec<f64> {
        words.iter().map(|w| self.coefficient(w)).collect()
    }

    /// One term per line, `coefficient: i1 i2 ... ik`, the unit written as
    /// `coefficient: e`. Coefficients use the shortest round-trip decimal.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (w, c) in &self.terms {
            s.push_str(&format!("{c:?}: {w}\n"));
        }
        s
    }

    /// Parses the format written by [`NcPolynomial::to_text`]. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse_text(text: &str, num_generators: usize) -> Result<NcPolynomial> {
        Self::parse_named(text, num_generators, "<polynomial>")
    }

    pub(crate) fn parse_named(text: &str, num_generators: usize, source: &str) -> Result<NcPolynomial> {
        let mut p = Self::zero(num_generators)?;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (coef, word) = line
                .split_once(':')
                .ok_or_else(|| Error::parse(source, line_no, "expected `coefficient: word`"))?;
            let c: f64 = coef
                .trim()
                .parse()
                .map_err(|e| Error::parse(source, line_no, format!("bad coefficient: {e}")))?;
            let word = word.trim();
            let letters = if word == "e" {
                Vec::new()
            } else {
                word.split_whitespace()
                    .map(|t| {
                        t.parse::<usize>()
                            .map_err(|e| Error::parse(source, line_no, format!("bad letter `{t}`: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            if letters.is_empty() && word != "e" {
                return Err(Error::parse(source, line_no, "empty word must be written `e`"));
            }
            let w = Word(letters);
            w.check(num_generators).map_err(|e| Error::parse(source, line_no, e))?;
            p.accumulate(w, c);
        }
        Ok(p)
    }
}

impl fmt::Display for NcPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (k, (w, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                f.write_str(" + ")?;
            }
            if w.is_unit() {
                write!(f, "{c}")?;
            } else {
                write!(f, "{c}")?;
                for l in w.letters() {
                    write!(f, "·g{l}")?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use proptest::strategy::ValueTree;

    fn w(letters: &[usize]) -> Word {
        Word::new(letters.to_vec())
    }

    /// g1 + 5 g1 g2 + g2², with generators indexed from zero.
    pub(crate) fn example_filter() -> NcPolynomial {
        NcPolynomial::from_terms(2, [(w(&[0]), 1.0), (w(&[0, 1]), 5.0), (w(&[1, 1]), 1.0)]).unwrap()
    }

    #[test]
    fn additive_inverse_is_zero() {
        let p = NcPolynomial::generator(2, 0).unwrap();
        let sum = p.add(&p.scale(-1.0)).unwrap();
        assert!(sum.is_zero());
        assert_eq!(sum.degree(), 0);
    }

    #[test]
    fn disjoint_supports_add() {
        let p = NcPolynomial::from_terms(2, [(Word::unit(), 1.0), (w(&[0]), 1.0)]).unwrap();
        let q = NcPolynomial::generator(2, 1).unwrap();
        let s = p.add(&q).unwrap();
        assert_eq!(s.num_terms(), 3);
        assert_eq!(s.coefficient(&Word::unit()), 1.0);
        assert_eq!(s.coefficient(&w(&[0])), 1.0);
        assert_eq!(s.coefficient(&w(&[1])), 1.0);
    }

    #[test]
    fn reversed_words_are_distinct_terms() {
        let p = NcPolynomial::monomial(2, w(&[0, 1]), 1.0).unwrap();
        let q = NcPolynomial::monomial(2, w(&[1, 0]), 1.0).unwrap();
        let s = p.add(&q).unwrap();
        assert_eq!(s.num_terms(), 2);
    }

    #[test]
    fn product_follows_concatenation_order() {
        let g1 = NcPolynomial::generator(2, 0).unwrap();
        let g2 = NcPolynomial::generator(2, 1).unwrap();
        let a = g1.multiply(&g2).unwrap();
        let b = g2.multiply(&g1).unwrap();
        assert_eq!(a.coefficient(&w(&[0, 1])), 1.0);
        assert_eq!(b.coefficient(&w(&[1, 0])), 1.0);
        assert_ne!(a, b);
    }

    #[test]
    fn unit_is_neutral() {
        let one = NcPolynomial::one(2).unwrap();
        let q = example_filter();
        assert_eq!(one.multiply(&q).unwrap(), q);
        assert_eq!(q.multiply(&one).unwrap(), q);
    }

    #[test]
    fn square_of_sum_has_four_words() {
        let s = NcPolynomial::generator(2, 0)
            .unwrap()
            .add(&NcPolynomial::generator(2, 1).unwrap())
            .unwrap();
        let sq = s.multiply(&s).unwrap();
        assert_eq!(sq.num_terms(), 4);
        for word in [w(&[0, 0]), w(&[0, 1]), w(&[1, 0]), w(&[1, 1])] {
            assert_eq!(sq.coefficient(&word), 1.0);
        }
    }

    #[test]
    fn occurrences_of_example_filter() {
        let occ = example_filter().generator_occurrences(0).unwrap();
        assert_eq!(occ[&w(&[0])], 1);
        assert_eq!(occ[&w(&[0, 1])], 1);
        assert_eq!(occ[&w(&[1, 1])], 0);

        let one = NcPolynomial::one(2).unwrap();
        let occ = one.generator_occurrences(1).unwrap();
        assert_eq!(occ.len(), 1);
        assert_eq!(occ[&Word::unit()], 0);

        let cube = NcPolynomial::monomial(1, w(&[0, 0, 0]), 1.0).unwrap();
        assert_eq!(cube.generator_occurrences(0).unwrap()[&w(&[0, 0, 0])], 3);
        assert!(cube.generator_occurrences(1).is_err());
    }

    #[test]
    fn mismatched_generators_rejected() {
        let p = NcPolynomial::one(2).unwrap();
        let q = NcPolynomial::one(3).unwrap();
        assert!(matches!(p.add(&q), Err(Error::GeneratorMismatch { .. })));
        assert!(matches!(p.multiply(&q), Err(Error::GeneratorMismatch { .. })));
        assert!(NcPolynomial::generator(2, 2).is_err());
    }

    #[test]
    fn graded_lex_order() {
        let words = Word::all_up_to(2, 2);
        let expected = [w(&[]), w(&[0]), w(&[1]), w(&[0, 0]), w(&[0, 1]), w(&[1, 0]), w(&[1, 1])];
        assert_eq!(words, expected);
        let mut sorted = words.clone();
        sorted.sort();
        assert_eq!(sorted, words);
        assert_eq!(Word::powers_up_to(2, 2).len(), 5);
    }

    #[test]
    fn text_format() {
        let p = NcPolynomial::from_terms(2, [(Word::unit(), 0.5), (w(&[1, 0]), -3.0)]).unwrap();
        assert_eq!(p.to_text(), "0.5: e\n-3.0: 1 0\n");
        let err = NcPolynomial::parse_text("1.0: 0\nnonsense\n", 2).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        assert!(NcPolynomial::parse_text("1.0: 5\n", 2).is_err());
        assert!(NcPolynomial::parse_text("", 2).unwrap().is_zero());
    }

    prop_compose! {
        pub(crate) fn arb_poly(m: usize, max_deg: usize, max_terms: usize)
            (terms in proptest::collection::vec(
                (proptest::collection::vec(0..m, 0..=max_deg), -3.0f64..3.0),
                0..=max_terms))
            -> NcPolynomial
        {
            NcPolynomial::from_terms(m, terms.into_iter().map(|(l, c)| (Word::new(l), c))).unwrap()
        }
    }

    fn close(a: &NcPolynomial, b: &NcPolynomial) -> bool {
        let d = a.sub(b).unwrap();
        let small = d.terms().all(|(_, c)| c.abs() <= 1e-9);
        small
    }

    proptest! {
        #[test]
        fn text_round_trip(p in arb_poly(3, 4, 8)) {
            let back = NcPolynomial::parse_text(&p.to_text(), 3).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn addition_commutes_and_associates(
            p in arb_poly(2, 3, 5), q in arb_poly(2, 3, 5), r in arb_poly(2, 3, 5)
        ) {
            prop_assert!(close(&p.add(&q).unwrap(), &q.add(&p).unwrap()));
            let left = p.add(&q).unwrap().add(&r).unwrap();
            let right = p.add(&q.add(&r).unwrap()).unwrap();
            prop_assert!(close(&left, &right));
        }

        #[test]
        fn product_associates_and_distributes(
            p in arb_poly(2, 2, 4), q in arb_poly(2, 2, 4), r in arb_poly(2, 2, 4)
        ) {
            let left = p.multiply(&q).unwrap().multiply(&r).unwrap();
            let right = p.multiply(&q.multiply(&r).unwrap()).unwrap();
            prop_assert!(close(&left, &right));
            let dist = p.multiply(&q.add(&r).unwrap()).unwrap();
            let split = p.multiply(&q).unwrap().add(&p.multiply(&r).unwrap()).unwrap();
            prop_assert!(close(&dist, &split));
        }

        #[test]
        fn degree_is_additive(p in arb_poly(2, 3, 5), q in arb_poly(2, 3, 5)) {
            prop_assume!(!p.is_zero() && !q.is_zero());
            // Leading words concatenate to a unique top-degree word, so no cancellation.
            let pq = p.multiply(&q).unwrap();
            prop_assert_eq!(pq.degree(), p.degree() + q.degree());
        }
    }

    #[test]
    fn product_is_not_commutative_for_generic_inputs() {
        let mut runner = proptest::test_runner::TestRunner::deterministic();
        let (mut eligible, mut differing) = (0, 0);
        for _ in 0..100 {
            let p = arb_poly(2, 2, 4).new_tree(&mut runner).unwrap().current();
            let q = arb_poly(2, 2, 4).new_tree(&mut runner).unwrap().current();
            let has_long = |x: &NcPolynomial| x.terms().any(|(w, _)| w.degree() >= 1);
            if has_long(&p) && has_long(&q) {
                eligible += 1;
                if p.multiply(&q).unwrap() != q.multiply(&p).unwrap() {
                    differing += 1;
                }
            }
        }
        assert!(eligible > 20);
        assert!(differing * 10 >= eligible * 9, "{differing} of {eligible}");
    }
}
