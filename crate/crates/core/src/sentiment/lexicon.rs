use std::collections::HashSet;

use super::{tokenize, Classifier, ClassifierError, Label, SentimentConfig, SentimentResult};

/// Deterministic keyword classifier.
///
/// Sentiment score is `(positive hits - negative hits) / total hits`; the
/// label is its sign and confidence its magnitude. Text with no lexicon hits
/// is neutral with confidence 0.5. The category is the one with the most
/// keyword hits, earlier categories winning ties, else the fallback.
pub struct LexiconClassifier {
    positive: HashSet<String>,
    negative: HashSet<String>,
    categories: Vec<(String, HashSet<String>)>,
    fallback: String,
}

pub const LEXICON_ID: &str = "lexicon-v1";

impl LexiconClassifier {
    pub fn new(config: &SentimentConfig) -> Self {
        let set = |words: &[String]| words.iter().map(|w| w.to_lowercase()).collect::<HashSet<_>>();
        Self {
            positive: set(&config.positive_words),
            negative: set(&config.negative_words),
            categories: config
                .categories
                .iter()
                .map(|c| (c.name.clone(), set(&c.keywords)))
                .collect(),
            fallback: config.fallback_category.clone(),
        }
    }
}

impl Classifier for LexiconClassifier {
    fn id(&self) -> &str {
        LEXICON_ID
    }

    fn categorize(&self, query: &str, categories: &[String]) -> Result<String, ClassifierError> {
        let tokens = tokenize(query);
        if tokens.is_empty() {
            return Err(ClassifierError::EmptyInput);
        }
        let mut best: Option<(&str, usize)> = None;
        for (name, words) in &self.categories {
            if !categories.iter().any(|c| c == name) {
                continue;
            }
            let hits = tokens.iter().filter(|t| words.contains(*t)).count();
            if hits > 0 && best.map_or(true, |(_, b)| hits > b) {
                best = Some((name, hits));
            }
        }
        Ok(best.map_or_else(|| self.fallback.clone(), |(n, _)| n.to_owned()))
    }

    fn analyze(&self, text: &str) -> Result<SentimentResult, ClassifierError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(ClassifierError::EmptyInput);
        }
        let pos = tokens.iter().filter(|t| self.positive.contains(*t)).count() as f64;
        let neg = tokens.iter().filter(|t| self.negative.contains(*t)).count() as f64;
        let (label, confidence) = if pos + neg == 0.0 {
            (Label::Neutral, 0.5)
        } else {
            let score = (pos - neg) / (pos + neg);
            let label = if score > 0.0 {
                Label::Positive
            } else if score < 0.0 {
                Label::Negative
            } else {
                Label::Neutral
            };
            (label, score.abs())
        };
        Ok(SentimentResult {
            label,
            confidence,
            classifier_id: LEXICON_ID.to_owned(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub() -> (LexiconClassifier, Vec<String>) {
        let cfg = SentimentConfig::default();
        (LexiconClassifier::new(&cfg), cfg.category_names())
    }

    #[test]
    fn categories() {
        let (c, cats) = stub();
        assert_eq!(c.categorize("my card was charged twice", &cats).unwrap(), "billing");
        assert_eq!(c.categorize("the restaurant is on Main Street", &cats).unwrap(), "general");
        assert_eq!(c.categorize("the app crashed at checkout", &cats).unwrap(), "technical");
        assert_eq!(c.categorize("", &cats), Err(ClassifierError::EmptyInput));
    }

    #[test]
    fn ties_go_to_the_earlier_category() {
        let (c, cats) = stub();
        // one billing hit ("refund"), one service hit ("staff")
        assert_eq!(c.categorize("staff gave a refund", &cats).unwrap(), "billing");
    }

    #[test]
    fn sentiment_examples() {
        let (c, _) = stub();
        let r = c.analyze("great food, loved it").unwrap();
        assert_eq!((r.label, r.confidence), (Label::Positive, 1.0));
        let r = c.analyze("terrible, cold, rude staff").unwrap();
        assert_eq!((r.label, r.confidence), (Label::Negative, 1.0));
        let r = c.analyze("the restaurant is on Main Street").unwrap();
        assert_eq!((r.label, r.confidence), (Label::Neutral, 0.5));
        let r = c.analyze("good food but slow and rude service, great view").unwrap();
        assert_eq!(r.label, Label::Neutral);
        assert_eq!(r.confidence, 0.0);
        let r = c.analyze("great, great, bad").unwrap();
        assert_eq!(r.label, Label::Positive);
        assert!((r.confidence - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_text_identical_result() {
        let (c, _) = stub();
        let a = c.analyze("nice staff but the soup was cold").unwrap();
        let b = c.analyze("nice staff but the soup was cold").unwrap();
        assert_eq!(a.confidence.to_bits(), b.confidence.to_bits());
        assert_eq!(a, b);
    }
}
