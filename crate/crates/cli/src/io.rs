//! Plain-text outputs and the stored-pieces format.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use hjb_core::{AlphaPiece, ConstraintSet, PiecewiseAlpha};

/// Full double precision, 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// 1-based, `;`-separated.
pub fn index_list(idx: &[usize]) -> String {
    idx.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(";")
}

fn parse_index_list(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(i) if i >= 1 => Ok(i - 1),
            _ => bail!("bad asset index '{t}'"),
        })
        .collect()
}

pub fn constraints_name(c: ConstraintSet) -> &'static str {
    match c {
        ConstraintSet::Simplex => "simplex",
        ConstraintSet::MertonSimplex => "merton",
    }
}

pub fn parse_constraints(s: &str) -> Result<ConstraintSet, String> {
    match s {
        "simplex" => Ok(ConstraintSet::Simplex),
        "merton" => Ok(ConstraintSet::MertonSimplex),
        _ => Err(format!("unknown constraint set '{s}' (expected simplex or merton)")),
    }
}

/// Line-oriented CSV writer.
pub struct CsvOut {
    out: BufWriter<File>,
    line: String,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[String]) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = Self {
            out: BufWriter::new(file),
            line: String::new(),
        };
        w.row(header.iter().map(String::as_str))?;
        Ok(w)
    }

    pub fn row<'a>(&mut self, cells: impl IntoIterator<Item = &'a str>) -> Result<()> {
        self.line.clear();
        for (i, c) in cells.into_iter().enumerate() {
            if i > 0 {
                self.line.push(',');
            }
            self.line.push_str(c);
        }
        self.line.push('\n');
        self.out.write_all(self.line.as_bytes())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn header(fixed: &[&str], prefix: &str, n: usize) -> Vec<String> {
    fixed
        .iter()
        .map(|s| s.to_string())
        .chain((1..=n).map(|i| format!("{prefix}_{i}")))
        .collect()
}

/// Writes the closed-form pieces so a later run can reuse them.
pub fn write_pieces(path: &Path, alpha: &PiecewiseAlpha) -> Result<()> {
    let n = alpha.pieces()[0].a_vec.len();
    let mut head = header(&["constraints", "lo", "hi", "a", "b", "c", "budget_active", "active_set"], "a", n);
    head.extend((1..=n).map(|i| format!("b_{i}")));
    let mut out = CsvOut::create(path, &head)?;
    for p in alpha.pieces() {
        let mut cells = vec![
            constraints_name(alpha.constraints()).to_owned(),
            num(p.lo),
            num(p.hi),
            num(p.a),
            num(p.b),
            num(p.c),
            p.budget_active.to_string(),
            index_list(&p.active_set),
        ];
        cells.extend(p.a_vec.iter().chain(&p.b_vec).map(|&v| num(v)));
        out.row(cells.iter().map(String::as_str))?;
    }
    out.finish()
}

pub fn read_pieces(path: &Path) -> Result<PiecewiseAlpha> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head: Vec<&str> = lines.next().context("empty pieces file")?.split(',').collect();
    if head.len() < 10 || !(head.len() - 8).is_multiple_of(2) || head[0] != "constraints" {
        bail!("{}: not a pieces file", path.display());
    }
    let n = (head.len() - 8) / 2;
    let mut pieces = Vec::new();
    let mut constraints = None;
    for (k, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != head.len() {
            bail!("pieces row {}: expected {} fields, got {}", k + 1, head.len(), cells.len());
        }
        let c = parse_constraints(cells[0]).map_err(anyhow::Error::msg)?;
        if constraints.is_some_and(|prev| prev != c) {
            bail!("pieces row {}: mixed constraint sets", k + 1);
        }
        constraints = Some(c);
        let f = |i: usize| -> Result<f64> {
            cells[i]
                .parse()
                .with_context(|| format!("pieces row {}: bad number '{}'", k + 1, cells[i]))
        };
        let vec_at = |start: usize| -> Result<Vec<f64>> { (start..start + n).map(f).collect() };
        pieces.push(AlphaPiece {
            lo: f(1)?,
            hi: f(2)?,
            a: f(3)?,
            b: f(4)?,
            c: f(5)?,
            budget_active: cells[6]
                .parse()
                .with_context(|| format!("pieces row {}: bad flag '{}'", k + 1, cells[6]))?,
            active_set: parse_index_list(cells[7])?,
            a_vec: vec_at(8)?,
            b_vec: vec_at(8 + n)?,
        });
    }
    Ok(PiecewiseAlpha::from_pieces(pieces, constraints.unwrap_or_default())?)
}

/// Aligned text table.
pub fn aligned(head: &[&str], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..head.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([head[c].len()]).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    let line = |s: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(s, "{}", parts.join("  ").trim_end());
    };
    line(&mut s, &mut head.iter().copied());
    for r in rows {
        line(&mut s, &mut r.iter().map(String::as_str));
    }
    s
}
