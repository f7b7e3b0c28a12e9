//! Result files. Every float is written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use contractsolve_core::{Branch, Contract, TransformedProblem};

use crate::error::CliError;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Column-oriented CSV text.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<(), CliError> {
        write_file(dir, name, &self.text)
    }
}

/// `key = value` lines in insertion order.
#[derive(Default)]
pub struct Summary {
    text: String,
}

impl Summary {
    pub fn text(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.text, "{key} = {value}");
        self
    }

    pub fn num(&mut self, key: &str, value: f64) -> &mut Self {
        self.text(key, num(value))
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_file(dir, "summary.txt", &self.text)
    }
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        context: format!("cannot create {}", dir.display()),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Io {
        context: format!("cannot write {}", path.display()),
        source,
    })
}

pub fn quantile_table(
    tp: &TransformedProblem,
    delta: &[f64],
    delta_prime: &[f64],
    quantile: &[f64],
    branch: &[Branch],
) -> Table {
    let mut t = Table::new(&[
        "p",
        "delta",
        "delta_prime",
        "Q",
        "branch",
        "hbar",
        "phi_tilde",
    ]);
    for i in 0..tp.grid.len() {
        t.row(&[
            num(tp.grid.node(i)),
            num(delta[i]),
            num(delta_prime[i]),
            num(quantile[i]),
            branch[i].token().to_owned(),
            num(tp.hbar[i]),
            num(tp.phi_tilde[i]),
        ]);
    }
    t
}

pub fn contract_table(c: &Contract) -> Table {
    let mut t = Table::new(&["x", "R", "I"]);
    for j in 0..c.x.len() {
        t.row(&[num(c.x[j]), num(c.retention[j]), num(c.indemnity[j])]);
    }
    t
}
