use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("shape error: {0}")]
pub struct ShapeError(pub String);

/// Hardware available to a program: physical switch sizes and processor count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineShape {
    pub sizes: Vec<usize>,
    pub procs: usize,
}

impl Default for MachineShape {
    fn default() -> Self {
        MachineShape { sizes: vec![10; 8], procs: 8 }
    }
}

impl MachineShape {
    pub fn new(sizes: Vec<usize>, procs: usize) -> Result<Self, ShapeError> {
        let s = MachineShape { sizes, procs };
        s.validate()?;
        Ok(s)
    }

    pub fn uniform(count: usize, size: usize, procs: usize) -> Result<Self, ShapeError> {
        Self::new(vec![size; count], procs)
    }

    pub fn with_procs(mut self, procs: usize) -> Self {
        self.procs = procs;
        self
    }

    pub fn switch_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        if self.procs < 1 {
            return Err(ShapeError("processor count must be at least 1".into()));
        }
        if let Some(s) = self.sizes.iter().find(|&&s| s < 2) {
            return Err(ShapeError(format!("switch size {s} is below 2")));
        }
        if self.sizes.len() > u16::MAX as usize || self.sizes.iter().any(|&s| s > u16::MAX as usize) {
            return Err(ShapeError("shape exceeds 16-bit operand range".into()));
        }
        Ok(())
    }
}

impl fmt::Display for MachineShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        write!(f, "switches={} sizes={} procs={}", self.sizes.len(), sizes.join(","), self.procs)
    }
}

/// Parses `switches=<n> sizes=<s1,s2,...> procs=<p>`. A single size is
/// repeated for every switch; `default` yields [`MachineShape::default`].
impl FromStr for MachineShape {
    type Err = ShapeError;

    fn from_str(s: &str) -> Result<Self, ShapeError> {
        let s = s.trim();
        if s == "default" {
            return Ok(MachineShape::default());
        }
        let mut count: Option<usize> = None;
        let mut sizes: Option<Vec<usize>> = None;
        let mut procs: Option<usize> = None;
        let num = |v: &str| v.trim().parse::<usize>().map_err(|_| ShapeError(format!("bad number `{v}`")));
        for tok in s.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| ShapeError(format!("expected key=value, found `{tok}`")))?;
            match k {
                "switches" => count = Some(num(v)?),
                "sizes" => {
                    let list = if v.is_empty() { Vec::new() } else { v.split(',').map(num).collect::<Result<_, _>>()? };
                    sizes = Some(list);
                }
                "procs" => procs = Some(num(v)?),
                other => return Err(ShapeError(format!("unknown key `{other}`"))),
            }
        }
        let def = MachineShape::default();
        let sizes = match (count, sizes) {
            (Some(n), Some(list)) if list.len() == 1 && n != 1 => vec![list[0]; n],
            (Some(n), Some(list)) if list.len() != n => {
                return Err(ShapeError(format!("switches={n} but {} sizes given", list.len())))
            }
            (_, Some(list)) => list,
            (Some(n), None) => vec![10; n],
            (None, None) => def.sizes,
        };
        MachineShape::new(sizes, procs.unwrap_or(def.procs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        let s: MachineShape = "switches=2 sizes=4,10 procs=3".parse().unwrap();
        assert_eq!(s, MachineShape { sizes: vec![4, 10], procs: 3 });
        let s: MachineShape = "switches=3 sizes=4".parse().unwrap();
        assert_eq!(s.sizes, vec![4, 4, 4]);
        assert_eq!("default".parse::<MachineShape>().unwrap(), MachineShape::default());
        assert_eq!(s.to_string().parse::<MachineShape>().unwrap(), s);
        let empty: MachineShape = "switches=0 sizes= procs=1".parse().unwrap();
        assert!(empty.sizes.is_empty());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!("switches=2 sizes=4,1".parse::<MachineShape>().is_err());
        assert!("switches=2 sizes=4,4,4".parse::<MachineShape>().is_err());
        assert!("procs=0".parse::<MachineShape>().is_err());
        assert!("colour=red".parse::<MachineShape>().is_err());
    }
}
