use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The three task classes: mental arithmetic, motor imagery, idle state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    MA,
    MI,
    IS,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::MA, Class::MI, Class::IS];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Class> {
        Class::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::MA => "MA",
            Class::MI => "MI",
            Class::IS => "IS",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MA" => Ok(Class::MA),
            "MI" => Ok(Class::MI),
            "IS" => Ok(Class::IS),
            other => Err(Error::Invalid(format!(
                "unknown label {other:?}; expected one of MA, MI, IS"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        for c in Class::ALL {
            assert_eq!(c.as_str().parse::<Class>().unwrap(), c);
            assert_eq!(Class::from_index(c.index()), Some(c));
        }
    }

    #[test]
    fn unknown_label_lists_allowed() {
        let err = "REST".parse::<Class>().unwrap_err().to_string();
        assert!(err.contains("MA, MI, IS"), "{err}");
    }
}
