//! BIO label syntax and sequence validity.

use std::fmt;

/// One parsed BIO label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BioTag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> BioTag<'a> {
    /// Parse `O`, `B-type` or `I-type`. Anything else is `None`.
    pub fn parse(label: &'a str) -> Option<Self> {
        if label == "O" {
            return Some(BioTag::Outside);
        }
        let (prefix, ty) = label.split_once('-')?;
        if ty.is_empty() {
            return None;
        }
        match prefix {
            "B" => Some(BioTag::Begin(ty)),
            "I" => Some(BioTag::Inside(ty)),
            _ => None,
        }
    }

    pub fn entity(&self) -> Option<&'a str> {
        match *self {
            BioTag::Outside => None,
            BioTag::Begin(t) | BioTag::Inside(t) => Some(t),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BioViolation {
    pub index: usize,
    pub message: String,
}

impl fmt::Display for BioViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid BIO at index {}: {}", self.index, self.message)
    }
}

impl std::error::Error for BioViolation {}

/// Accepts iff every label is well formed and every `I-e` follows `B-e` or
/// `I-e` of the same type.
pub fn validate_bio<S: AsRef<str>>(labels: &[S]) -> Result<(), BioViolation> {
    let mut open: Option<&str> = None;
    for (index, label) in labels.iter().enumerate() {
        let label = label.as_ref();
        let tag = BioTag::parse(label).ok_or_else(|| BioViolation {
            index,
            message: format!("`{label}` is not O, B-<type> or I-<type>"),
        })?;
        open = match tag {
            BioTag::Outside => None,
            BioTag::Begin(t) => Some(t),
            BioTag::Inside(t) => match open {
                Some(prev) if prev == t => Some(t),
                Some(prev) => {
                    return Err(BioViolation {
                        index,
                        message: format!("I-{t} continues a {prev} span without B-{t}"),
                    })
                }
                None => {
                    return Err(BioViolation {
                        index,
                        message: format!("I-{t} without a preceding B-{t}"),
                    })
                }
            },
        };
    }
    Ok(())
}

/// Rewrite every orphan `I-e` (one not continuing an `e` span) to `B-e`.
pub fn repair_bio<S: AsRef<str>>(labels: &[S]) -> Vec<String> {
    let mut out = Vec::with_capacity(labels.len());
    let mut open: Option<String> = None;
    for label in labels {
        let label = label.as_ref();
        match BioTag::parse(label) {
            Some(BioTag::Inside(t)) if open.as_deref() != Some(t) => {
                out.push(format!("B-{t}"));
                open = Some(t.to_string());
            }
            Some(BioTag::Inside(t)) | Some(BioTag::Begin(t)) => {
                out.push(label.to_string());
                open = Some(t.to_string());
            }
            Some(BioTag::Outside) | None => {
                out.push(if BioTag::parse(label).is_some() {
                    label.to_string()
                } else {
                    "O".to_string()
                });
                open = None;
            }
        }
    }
    out
}
