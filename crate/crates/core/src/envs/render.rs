use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symbolic grid shown to the operator in place of a video frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major cell codes, row 0 at the top.
    pub cells: Vec<u32>,
    pub legend: BTreeMap<u32, String>,
    pub caption: String,
}

impl RenderFrame {
    pub fn blank(width: usize, height: usize, legend: &[(u32, &str)]) -> Self {
        RenderFrame {
            width,
            height,
            cells: vec![legend.first().map_or(0, |(c, _)| *c); width * height],
            legend: legend.iter().map(|(c, n)| (*c, n.to_string())).collect(),
            caption: String::new(),
        }
    }

    pub fn set(&mut self, row: usize, col: usize, code: u32) {
        if row < self.height && col < self.width {
            self.cells[row * self.width + col] = code;
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.cells[row * self.width + col]
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.width * self.height {
            return Err(Error::Format(format!(
                "render has {} cells for a {}x{} grid",
                self.cells.len(),
                self.width,
                self.height
            )));
        }
        if let Some(code) = self.cells.iter().find(|c| !self.legend.contains_key(c)) {
            return Err(Error::Format(format!("cell code {code} missing from legend")));
        }
        Ok(())
    }
}
