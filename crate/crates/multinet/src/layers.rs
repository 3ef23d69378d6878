//! Layers, activity codes and code hierarchies.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One realm of activity. The three canonical layers cover scientific
/// fields, technology codes and exported products; additional layers can be
/// declared by name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerId {
    Science,
    Technology,
    Products,
    Named(String),
}

impl LayerId {
    /// Parse a layer name; canonical names (and their single-letter
    /// abbreviations) are case-insensitive, anything else becomes a named
    /// layer.
    pub fn parse(name: &str) -> LayerId {
        match name.to_ascii_lowercase().as_str() {
            "science" | "s" => LayerId::Science,
            "technology" | "t" => LayerId::Technology,
            "products" | "p" => LayerId::Products,
            _ => LayerId::Named(name.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            LayerId::Science => "science",
            LayerId::Technology => "technology",
            LayerId::Products => "products",
            LayerId::Named(name) => name,
        }
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for LayerId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for LayerId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Ok(LayerId::parse(&name))
    }
}

/// An activity within a layer at a given aggregation depth.
///
/// Level 0 is the coarsest; deeper levels refine it. Codes at coarser levels
/// are prefixes (or declared parents) of finer codes in the same layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivityCode {
    pub code: String,
    pub level: u32,
}

impl ActivityCode {
    pub fn new(code: impl Into<String>, level: u32) -> ActivityCode {
        ActivityCode {
            code: code.into(),
            level,
        }
    }
}

impl fmt::Display for ActivityCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code)
    }
}

/// How codes of one layer nest across aggregation levels.
#[derive(Debug, Clone, Default)]
pub enum Hierarchy {
    /// A single level; every code sits at level 0 and truncation is the
    /// identity. The default when a layer declares no structure.
    #[default]
    Flat,
    /// Level `k` codes are prefixes of length `lengths[k]`. For example
    /// 6-digit product codes use `[2, 4, 6]`, so `847149` sits at level 2 and
    /// truncates to `8471` at level 1.
    Prefix { lengths: Vec<usize> },
    /// Explicit child-to-parent relations for taxonomies that are not
    /// prefix-shaped. `levels` records the declared level of every code.
    ParentMap {
        parent: HashMap<String, String>,
        levels: HashMap<String, u32>,
    },
}

impl Hierarchy {
    pub fn prefix(lengths: Vec<usize>) -> Result<Hierarchy> {
        if lengths.is_empty() {
            return Err(Error::InvalidConfig(
                "prefix hierarchy needs at least one length".into(),
            ));
        }
        if lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "prefix lengths must be strictly increasing, got {lengths:?}"
            )));
        }
        Ok(Hierarchy::Prefix { lengths })
    }

    /// Build a parent map from `(child, parent, child_level)` relations.
    /// Each parent is implicitly placed one level above its children.
    pub fn parent_map(relations: &[(String, String, u32)]) -> Result<Hierarchy> {
        let mut parent = HashMap::new();
        let mut levels: HashMap<String, u32> = HashMap::new();
        for (child, par, level) in relations {
            if *level == 0 {
                return Err(Error::InvalidConfig(format!(
                    "child `{child}` declared at level 0 cannot have a parent"
                )));
            }
            if let Some(prev) = parent.insert(child.clone(), par.clone()) {
                if prev != *par {
                    return Err(Error::InvalidConfig(format!(
                        "code `{child}` has two parents: `{prev}` and `{par}`"
                    )));
                }
            }
            for (code, lvl) in [(child, *level), (par, level - 1)] {
                if let Some(prev) = levels.insert(code.clone(), lvl) {
                    if prev != lvl {
                        return Err(Error::InvalidConfig(format!(
                            "code `{code}` declared at levels {prev} and {lvl}"
                        )));
                    }
                }
            }
        }
        Ok(Hierarchy::ParentMap { parent, levels })
    }

    /// The level a raw code sits at.
    pub fn level_of(&self, code: &str) -> Result<u32> {
        match self {
            Hierarchy::Flat => Ok(0),
            Hierarchy::Prefix { lengths } => lengths
                .iter()
                .position(|&len| len == code.chars().count())
                .map(|level| level as u32)
                .ok_or_else(|| Error::UnknownCode {
                    code: code.to_string(),
                    level: lengths.len() as u32 - 1,
                }),
            Hierarchy::ParentMap { levels, .. } => {
                levels.get(code).copied().ok_or_else(|| Error::UnknownCode {
                    code: code.to_string(),
                    level: 0,
                })
            }
        }
    }

    /// Coarsen `code` to `target` level. Truncating a code already at its own
    /// level returns it unchanged.
    pub fn truncate(&self, code: &str, target: u32) -> Result<String> {
        let level = self.level_of(code)?;
        if target > level {
            return Err(Error::UnknownCode {
                code: code.to_string(),
                level: target,
            });
        }
        if target == level {
            return Ok(code.to_string());
        }
        match self {
            Hierarchy::Flat => Ok(code.to_string()),
            Hierarchy::Prefix { lengths } => {
                let len = lengths[target as usize];
                Ok(code.chars().take(len).collect())
            }
            Hierarchy::ParentMap { parent, .. } => {
                let mut current = code.to_string();
                for _ in target..level {
                    current = parent
                        .get(&current)
                        .cloned()
                        .ok_or_else(|| Error::UnknownCode {
                            code: code.to_string(),
                            level: target,
                        })?;
                }
                Ok(current)
            }
        }
    }

    /// Stamp a raw code with its level.
    pub fn activity(&self, code: &str) -> Result<ActivityCode> {
        Ok(ActivityCode::new(code, self.level_of(code)?))
    }
}
