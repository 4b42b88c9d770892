use serde::{Deserialize, Serialize};

use crate::persona::{Attitude, Authority, Factor, Reasoning, TraitCell};

/// How a two-level factor is turned into a regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coding {
    /// Optimistic / Authoritative / Analytical = +1, the other level = -1.
    #[default]
    Effect,
    /// Optimistic / Authoritative / Analytical = 1, the other level = 0.
    Dummy,
}

impl std::str::FromStr for Coding {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "effect" => Ok(Coding::Effect),
            "dummy" => Ok(Coding::Dummy),
            other => Err(crate::error::Error::InvalidArgument(format!(
                "coding must be effect or dummy, got {other:?}"
            ))),
        }
    }
}

pub const N_TERMS: usize = 8;

/// Model terms in coefficient order: intercept, the three main effects, the
/// Attitude×Authority, Attitude×Reasoning and Reasoning×Authority
/// interactions, and the three-way interaction.
pub const TERMS: [&[Factor]; N_TERMS] = [
    &[],
    &[Factor::Attitude],
    &[Factor::Authority],
    &[Factor::Reasoning],
    &[Factor::Attitude, Factor::Authority],
    &[Factor::Attitude, Factor::Reasoning],
    &[Factor::Reasoning, Factor::Authority],
    &[Factor::Attitude, Factor::Authority, Factor::Reasoning],
];

pub fn term_name(j: usize) -> String {
    if j == 0 {
        return "intercept".into();
    }
    TERMS[j]
        .iter()
        .map(|f| f.name())
        .collect::<Vec<_>>()
        .join(" x ")
}

/// Whether coefficient `j` involves `factor`.
pub fn term_involves(j: usize, factor: Factor) -> bool {
    TERMS[j].contains(&factor)
}

/// One row of the design matrix, intercept column included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignRow {
    pub x: [f64; N_TERMS],
}

impl DesignRow {
    pub fn from_levels(x1: f64, x2: f64, x3: f64) -> Self {
        DesignRow {
            x: [1.0, x1, x2, x3, x1 * x2, x1 * x3, x3 * x2, x1 * x2 * x3],
        }
    }

    pub fn attitude(&self) -> f64 {
        self.x[1]
    }
    pub fn authority(&self) -> f64 {
        self.x[2]
    }
    pub fn reasoning(&self) -> f64 {
        self.x[3]
    }

    /// Cell this row encodes (positive level ⇔ value > 0, under either coding).
    pub fn cell(&self) -> TraitCell {
        TraitCell {
            attitude: if self.x[1] > 0.0 {
                Attitude::Optimistic
            } else {
                Attitude::Pessimistic
            },
            authority: if self.x[2] > 0.0 {
                Authority::Authoritative
            } else {
                Authority::Submissive
            },
            reasoning: if self.x[3] > 0.0 {
                Reasoning::Analytical
            } else {
                Reasoning::Affective
            },
        }
    }
}

pub fn effect_code(cell: TraitCell) -> DesignRow {
    code(cell, Coding::Effect)
}

pub fn code(cell: TraitCell, coding: Coding) -> DesignRow {
    let (hi, lo) = match coding {
        Coding::Effect => (1.0, -1.0),
        Coding::Dummy => (1.0, 0.0),
    };
    let level = |positive: bool| if positive { hi } else { lo };
    DesignRow::from_levels(
        level(cell.attitude == Attitude::Optimistic),
        level(cell.authority == Authority::Authoritative),
        level(cell.reasoning == Reasoning::Analytical),
    )
}
