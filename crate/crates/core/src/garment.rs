use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Garment categories of the two-piece outfits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum GarmentClass {
    LongShirt,
    TShirt,
    Top,
    LongPants,
    Shorts,
    Skirt,
}

/// Which half of the body a garment belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Upper,
    Lower,
}

impl GarmentClass {
    pub const ALL: [GarmentClass; 6] = [
        GarmentClass::LongShirt,
        GarmentClass::TShirt,
        GarmentClass::Top,
        GarmentClass::LongPants,
        GarmentClass::Shorts,
        GarmentClass::Skirt,
    ];
    pub const UPPER: [GarmentClass; 3] = [GarmentClass::LongShirt, GarmentClass::TShirt, GarmentClass::Top];
    pub const LOWER: [GarmentClass; 3] = [GarmentClass::LongPants, GarmentClass::Shorts, GarmentClass::Skirt];

    pub fn partition(self) -> Partition {
        match self {
            GarmentClass::LongShirt | GarmentClass::TShirt | GarmentClass::Top => Partition::Upper,
            GarmentClass::LongPants | GarmentClass::Shorts | GarmentClass::Skirt => Partition::Lower,
        }
    }

    pub fn is_upper(self) -> bool {
        self.partition() == Partition::Upper
    }

    pub fn is_lower(self) -> bool {
        self.partition() == Partition::Lower
    }

    pub fn name(self) -> &'static str {
        match self {
            GarmentClass::LongShirt => "long-shirt",
            GarmentClass::TShirt => "t-shirt",
            GarmentClass::Top => "top",
            GarmentClass::LongPants => "long-pants",
            GarmentClass::Shorts => "shorts",
            GarmentClass::Skirt => "skirt",
        }
    }
}

impl fmt::Display for GarmentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GarmentClass {
    type Err = Error;

    /// Accepts the canonical names plus common spellings; "trousers" is the
    /// same class as "long-pants".
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        Ok(match key.as_str() {
            "longshirt" => GarmentClass::LongShirt,
            "tshirt" => GarmentClass::TShirt,
            "top" => GarmentClass::Top,
            "longpants" | "trousers" | "pants" => GarmentClass::LongPants,
            "shorts" => GarmentClass::Shorts,
            "skirt" => GarmentClass::Skirt,
            _ => return Err(Error::InvalidArgument(format!("unknown garment class '{s}'"))),
        })
    }
}

impl From<GarmentClass> for String {
    fn from(c: GarmentClass) -> String {
        c.name().to_string()
    }
}

impl TryFrom<String> for GarmentClass {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_is_exclusive() {
        for c in GarmentClass::ALL {
            assert_ne!(GarmentClass::UPPER.contains(&c), GarmentClass::LOWER.contains(&c));
            assert_eq!(c.is_upper(), GarmentClass::UPPER.contains(&c));
        }
    }

    #[test]
    fn parse_aliases() {
        assert_eq!("trousers".parse::<GarmentClass>().unwrap(), GarmentClass::LongPants);
        assert_eq!("Long-Pants".parse::<GarmentClass>().unwrap(), GarmentClass::LongPants);
        assert_eq!("t_shirt".parse::<GarmentClass>().unwrap(), GarmentClass::TShirt);
        assert!("jacket".parse::<GarmentClass>().is_err());
        for c in GarmentClass::ALL {
            assert_eq!(c.name().parse::<GarmentClass>().unwrap(), c);
        }
    }
}
