use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Highest supported depth: one lowercase letter per level.
pub const MAX_LEVELS: usize = 26;

/// One item's semantic ID: a codebook index per quantization level.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SidSequence(Vec<u32>);

impl SidSequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        SidSequence(tokens)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks the length and every token against per-level codebook sizes.
    pub fn validate(&self, sizes: &[usize]) -> Result<()> {
        if self.0.len() != sizes.len() {
            return Err(Error::SidLength {
                expected: sizes.len(),
                actual: self.0.len(),
            });
        }
        for (level, (&token, &size)) in self.0.iter().zip(sizes).enumerate() {
            if token as usize >= size {
                return Err(Error::TokenOutOfRange { level, token, size });
            }
        }
        Ok(())
    }

    /// Renders as `<a_195><b_133>`: one `<letter_index>` token per level.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

/// Renders a single level-tagged token, e.g. `<c_7>` for level 2, index 7.
pub fn render_token(level: usize, token: u32) -> String {
    format!("<{}_{}>", level_letter(level), token)
}

fn level_letter(level: usize) -> char {
    assert!(level < MAX_LEVELS, "SID depth above {MAX_LEVELS} has no letter");
    (b'a' + level as u8) as char
}

impl fmt::Display for SidSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (level, token) in self.0.iter().enumerate() {
            write!(f, "<{}_{}>", level_letter(level), token)?;
        }
        Ok(())
    }
}

/// Parses the rendered form. Level letters must run a, b, c, … without gaps.
///
/// ```
/// use sidforge::rq::parse_sid;
///
/// let sid = parse_sid("<a_239><b_112><c_7>").unwrap();
/// assert_eq!(sid.tokens(), &[239, 112, 7]);
/// assert_eq!(sid.render(), "<a_239><b_112><c_7>");
/// assert!(parse_sid("<b_1><a_2>").is_err());
/// ```
pub fn parse_sid(text: &str) -> Result<SidSequence> {
    let fail = |message: String| Error::SidParse {
        text: text.to_owned(),
        message,
    };
    let mut tokens = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let level = tokens.len();
        if level >= MAX_LEVELS {
            return Err(fail(format!("more than {MAX_LEVELS} levels")));
        }
        let body = rest
            .strip_prefix('<')
            .ok_or_else(|| fail(format!("expected '<' at level {level}")))?;
        let close = body
            .find('>')
            .ok_or_else(|| fail(format!("unterminated token at level {level}")))?;
        let (token, tail) = (&body[..close], &body[close + 1..]);
        let (letter, index) = token
            .split_once('_')
            .ok_or_else(|| fail(format!("token {token:?} lacks '_'")))?;
        let expected = level_letter(level);
        if letter.len() != 1 || !letter.starts_with(expected) {
            return Err(fail(format!(
                "level {level} must use letter '{expected}', found {letter:?}"
            )));
        }
        if index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
            return Err(fail(format!("index {index:?} is not a decimal integer")));
        }
        if index.len() > 1 && index.starts_with('0') {
            return Err(fail(format!("index {index:?} has a leading zero")));
        }
        let value = index
            .parse::<u32>()
            .map_err(|_| fail(format!("index {index:?} out of range")))?;
        tokens.push(value);
        rest = tail;
    }
    if tokens.is_empty() {
        return Err(fail("empty SID".into()));
    }
    Ok(SidSequence(tokens))
}

impl FromStr for SidSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_sid(s)
    }
}

impl Serialize for SidSequence {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SidSequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_sid(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders_two_level_example() {
        assert_eq!(SidSequence::new(vec![195, 133]).render(), "<a_195><b_133>");
    }

    #[test]
    fn renders_three_level_example() {
        assert_eq!(SidSequence::new(vec![239, 112, 7]).render(), "<a_239><b_112><c_7>");
    }

    #[test]
    fn rejects_malformed_inputs() {
        for bad in [
            "",
            "<a_1",
            "<a1>",
            "<a_1><c_2>",
            "<b_1>",
            "<A_1>",
            "<a_-1>",
            "<a_01>",
            "<a_1> <b_2>",
            "<a_99999999999>",
            "<aa_1>",
        ] {
            assert!(parse_sid(bad).is_err(), "{bad:?} should not parse");
        }
    }

    #[test]
    fn validate_checks_ranges() {
        let sid = parse_sid("<a_3><b_4>").unwrap();
        assert!(sid.validate(&[4, 5]).is_ok());
        assert!(matches!(
            sid.validate(&[4, 4]),
            Err(Error::TokenOutOfRange { level: 1, token: 4, size: 4 })
        ));
        assert!(matches!(sid.validate(&[4]), Err(Error::SidLength { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn parse_inverts_render(tokens in prop::collection::vec(any::<u32>(), 1..=8)) {
            let sid = SidSequence::new(tokens);
            let text = sid.render();
            prop_assert_eq!(parse_sid(&text).unwrap(), sid.clone());
            prop_assert_eq!(parse_sid(&text).unwrap().render(), text);
        }
    }
}
