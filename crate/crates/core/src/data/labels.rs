use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HelpfulnessLabel {
    Helpful,
    Unhelpful,
    Discard,
}

/// Maps helpfulness votes `[X, Y]` (X of Y voters found the answer helpful)
/// to a label.
///
/// - Helpful: `Y >= 2` and `X = Y`
/// - Unhelpful: `Y >= 2` and `X < Y`, or the single negative vote `[0, 1]`
/// - Discard: everything else, i.e. `[0, 0]` and `[1, 1]`
pub fn derive_label(x: i64, y: i64) -> Result<HelpfulnessLabel> {
    if x < 0 || y < 0 || x > y {
        return Err(Error::InvalidVotes { x, y });
    }
    Ok(match (x, y) {
        (x, y) if y >= 2 && x == y => HelpfulnessLabel::Helpful,
        (x, y) if y >= 2 => {
            debug_assert!(x < y);
            HelpfulnessLabel::Unhelpful
        }
        (0, 1) => HelpfulnessLabel::Unhelpful,
        _ => HelpfulnessLabel::Discard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use HelpfulnessLabel::*;

    #[test]
    fn cited_cases() {
        assert_eq!(derive_label(3, 3).unwrap(), Helpful);
        assert_eq!(derive_label(0, 4).unwrap(), Unhelpful);
        assert_eq!(derive_label(0, 1).unwrap(), Unhelpful);
        assert_eq!(derive_label(1, 1).unwrap(), Discard);
        assert_eq!(derive_label(0, 0).unwrap(), Discard);
        assert_eq!(derive_label(2, 3).unwrap(), Unhelpful);
    }

    #[test]
    fn invalid_votes() {
        assert!(derive_label(3, 2).is_err());
        assert!(derive_label(-1, 2).is_err());
        assert!(derive_label(0, -1).is_err());
    }
}
