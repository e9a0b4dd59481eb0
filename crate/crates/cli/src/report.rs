//! Summary statistics and plain-text tables.

use std::fmt;

use serde::Serialize;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn std_err(xs: &[f64]) -> f64 {
    std_dev(xs) / (xs.len() as f64).sqrt()
}

/// Per-seed values of one table cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl Cell {
    pub fn new(values: Vec<f64>) -> Self {
        Cell { mean: mean(&values), std: std_dev(&values), values }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Cell>)>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: Vec<String>) -> Self {
        Table { title: title.into(), columns, rows: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, cells: Vec<Cell>) {
        self.rows.push((name.into(), cells));
    }

    pub fn cell(&self, row: &str, col: usize) -> Option<&Cell> {
        self.rows.iter().find(|(n, _)| n == row).map(|(_, c)| &c[col])
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let first = self.rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(self.title.chars().count());
        write!(f, "{:<first$}", self.title)?;
        for c in &self.columns {
            write!(f, "  {c:>15}")?;
        }
        writeln!(f)?;
        for (name, cells) in &self.rows {
            write!(f, "{name:<first$}")?;
            for c in cells {
                write!(f, "  {:>15}", c.to_string())?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_of_known_values() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_eq!(mean(&xs), 5.0);
        assert!((std_dev(&xs) - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(std_dev(&[1.0]), 0.0);
    }

    #[test]
    fn table_lines_up() {
        let mut t = Table::new("strategy", vec!["test acc".into()]);
        t.push("VFGNN_M", vec![Cell::new(vec![0.5, 0.7])]);
        let s = t.to_string();
        assert_eq!(s.lines().count(), 2);
        assert!(s.contains("0.600 ± 0.141"));
    }
}
