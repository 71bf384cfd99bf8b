//! On-disk containers for problems and solutions.
//!
//! Binary problem layout, all integers and floats little-endian:
//!
//! ```text
//! "BTRP" | version u32 | N m k b u64 | generator u8 | seed u64
//! then per leaf: diag, upper, lower (m*m f64 each, row-major), rhs (m*k f64)
//! ```
//!
//! Solutions use `"BTRX" | version u32 | rows cols u64 | rows*cols f64`.
//!
//! The text forms are line-oriented and print floats with `{:?}`, which
//! round-trips every finite `f64` exactly. Readers detect the form from the
//! first bytes.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::dense::Matrix;
use crate::problem::{BlockRow, GeneratorKind, Problem, ProblemError};
use crate::topology::ProblemShape;

pub const PROBLEM_MAGIC: &[u8; 4] = b"BTRP";
pub const SOLUTION_MAGIC: &[u8; 4] = b"BTRX";
pub const VERSION: u32 = 1;

const PROBLEM_TEXT_TAG: &str = "bandtree-problem";
const SOLUTION_TEXT_TAG: &str = "bandtree-solution";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown generator code {0}")]
    UnknownGenerator(u8),
    #[error("header field {field} = {value} does not fit this platform")]
    Oversized { field: &'static str, value: u64 },
    #[error("truncated input: {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("text line {line}: {msg}")]
    Text { line: usize, msg: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Binary,
    Text,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_problem(p: &Problem) -> Vec<u8> {
    let s = &p.shape;
    let (n, m, k) = (s.leaves(), s.block_size(), s.rhs_cols());
    let mut out = Vec::with_capacity(45 + n * (3 * m * m + m * k) * 8);
    out.extend_from_slice(PROBLEM_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [n, m, k, s.bandwidth()] {
        put_u64(&mut out, v as u64);
    }
    out.push(p.generator.code());
    put_u64(&mut out, p.seed);
    for row in &p.rows {
        put_matrix(&mut out, &row.diag);
        put_matrix(&mut out, &row.upper);
        put_matrix(&mut out, &row.lower);
        put_matrix(&mut out, &row.rhs);
    }
    out
}

pub fn encode_solution(x: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + x.len() * 8);
    out.extend_from_slice(SOLUTION_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u64(&mut out, x.rows() as u64);
    put_u64(&mut out, x.cols() as u64);
    put_matrix(&mut out, x);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(FormatError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, field: &'static str) -> Result<usize, FormatError> {
        let v = self.u64(field)?;
        usize::try_from(v).map_err(|_| FormatError::Oversized { field, value: v })
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &'static str) -> Result<Matrix, FormatError> {
        let count = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(8))
            .ok_or(FormatError::Truncated(what))?;
        let bytes = self.take(count, what)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::from_vec(rows, cols, data).map_err(|_| FormatError::NonFinite(what))
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            extra => Err(FormatError::TrailingBytes(extra)),
        }
    }
}

fn check_header(c: &mut Cursor<'_>, magic: &[u8; 4]) -> Result<(), FormatError> {
    let got: [u8; 4] = c.take(4, "magic")?.try_into().unwrap();
    if &got != magic {
        return Err(FormatError::BadMagic(got));
    }
    match c.u32("version")? {
        VERSION => Ok(()),
        v => Err(FormatError::UnsupportedVersion(v)),
    }
}

pub fn decode_problem(buf: &[u8]) -> Result<Problem, FormatError> {
    let mut c = Cursor { buf, pos: 0 };
    check_header(&mut c, PROBLEM_MAGIC)?;
    let n = c.usize("N")?;
    let m = c.usize("m")?;
    let k = c.usize("k")?;
    let b = c.usize("b")?;
    let code = c.take(1, "generator")?[0];
    let generator = GeneratorKind::from_code(code).ok_or(FormatError::UnknownGenerator(code))?;
    let seed = c.u64("seed")?;
    let shape = ProblemShape::new(n, m, k, b).map_err(ProblemError::from)?;
    // reject absurd headers before allocating
    let record = (3 * m * m + m * k) * 8;
    if (buf.len() - c.pos) / record.max(1) < n {
        return Err(FormatError::Truncated("leaf records"));
    }
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        rows.push(BlockRow {
            diag: c.matrix(m, m, "diag")?,
            upper: c.matrix(m, m, "upper")?,
            lower: c.matrix(m, m, "lower")?,
            rhs: c.matrix(m, k, "rhs")?,
        });
    }
    c.finish()?;
    Ok(Problem::new(shape, generator, seed, rows)?)
}

pub fn decode_solution(buf: &[u8]) -> Result<Matrix, FormatError> {
    let mut c = Cursor { buf, pos: 0 };
    check_header(&mut c, SOLUTION_MAGIC)?;
    let rows = c.usize("rows")?;
    let cols = c.usize("cols")?;
    let x = c.matrix(rows, cols, "solution")?;
    c.finish()?;
    Ok(x)
}

fn text_matrix(out: &mut String, name: &str, m: &Matrix) {
    out.push_str(name);
    out.push('\n');
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

pub fn problem_to_text(p: &Problem) -> String {
    let s = &p.shape;
    let mut out = format!(
        "{PROBLEM_TEXT_TAG} {VERSION}\nN {} m {} k {} b {} generator {} seed {}\n",
        s.leaves(),
        s.block_size(),
        s.rhs_cols(),
        s.bandwidth(),
        p.generator.name(),
        p.seed
    );
    for (i, row) in p.rows.iter().enumerate() {
        out.push_str(&format!("leaf {}\n", i + 1));
        text_matrix(&mut out, "diag", &row.diag);
        text_matrix(&mut out, "upper", &row.upper);
        text_matrix(&mut out, "lower", &row.lower);
        text_matrix(&mut out, "rhs", &row.rhs);
    }
    out
}

pub fn solution_to_text(x: &Matrix) -> String {
    let mut out = format!(
        "{SOLUTION_TEXT_TAG} {VERSION}\nrows {} cols {}\n",
        x.rows(),
        x.cols()
    );
    text_matrix(&mut out, "x", x);
    out
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(s: &'a str) -> Self {
        Self {
            iter: s.lines().enumerate(),
            line: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> FormatError {
        FormatError::Text {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str, FormatError> {
        loop {
            match self.iter.next() {
                Some((i, l)) => {
                    self.line = i + 1;
                    if !l.trim().is_empty() {
                        return Ok(l.trim());
                    }
                }
                None => return Err(self.err("unexpected end of input")),
            }
        }
    }

    fn expect(&mut self, word: &str) -> Result<(), FormatError> {
        let l = self.next()?;
        if l == word {
            Ok(())
        } else {
            Err(self.err(format!("expected {word:?}, found {l:?}")))
        }
    }

    /// Parses `key value key value ...`, checking the keys.
    fn fields(&mut self, keys: &[&str]) -> Result<Vec<&'a str>, FormatError> {
        let l = self.next()?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 * keys.len() || toks.iter().step_by(2).ne(keys.iter()) {
            return Err(self.err(format!("expected fields {keys:?}, found {l:?}")));
        }
        Ok(toks.into_iter().skip(1).step_by(2).collect())
    }

    fn number<T: std::str::FromStr>(&self, s: &str) -> Result<T, FormatError> {
        s.parse().map_err(|_| self.err(format!("bad number {s:?}")))
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix, FormatError> {
        self.expect(name)?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let l = self.next()?;
            let before = data.len();
            for tok in l.split_whitespace() {
                data.push(self.number::<f64>(tok)?);
            }
            if data.len() - before != cols {
                return Err(self.err(format!("{name}: expected {cols} values")));
            }
        }
        Matrix::from_vec(rows, cols, data).map_err(|e| self.err(e.to_string()))
    }

    fn finish(&mut self) -> Result<(), FormatError> {
        for (i, l) in self.iter.by_ref() {
            if !l.trim().is_empty() {
                self.line = i + 1;
                return Err(self.err("trailing content"));
            }
        }
        Ok(())
    }
}

fn text_header(lines: &mut Lines<'_>, tag: &str) -> Result<(), FormatError> {
    let l = lines.next()?;
    match l.split_once(' ') {
        Some((t, v)) if t == tag => match v.parse::<u32>() {
            Ok(VERSION) => Ok(()),
            Ok(v) => Err(FormatError::UnsupportedVersion(v)),
            Err(_) => Err(lines.err("bad version")),
        },
        _ => Err(lines.err(format!("expected {tag:?} header"))),
    }
}

pub fn problem_from_text(s: &str) -> Result<Problem, FormatError> {
    let mut lines = Lines::new(s);
    text_header(&mut lines, PROBLEM_TEXT_TAG)?;
    let f = lines.fields(&["N", "m", "k", "b", "generator", "seed"])?;
    let n: usize = lines.number(f[0])?;
    let m: usize = lines.number(f[1])?;
    let k: usize = lines.number(f[2])?;
    let b: usize = lines.number(f[3])?;
    let generator: GeneratorKind = f[4].parse().map_err(|e: String| lines.err(e))?;
    let seed: u64 = lines.number(f[5])?;
    let shape = ProblemShape::new(n, m, k, b).map_err(ProblemError::from)?;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let idx: usize = {
            let f = lines.fields(&["leaf"])?;
            lines.number(f[0])?
        };
        if idx != i + 1 {
            return Err(lines.err(format!("expected leaf {}, found {idx}", i + 1)));
        }
        rows.push(BlockRow {
            diag: lines.matrix("diag", m, m)?,
            upper: lines.matrix("upper", m, m)?,
            lower: lines.matrix("lower", m, m)?,
            rhs: lines.matrix("rhs", m, k)?,
        });
    }
    lines.finish()?;
    Ok(Problem::new(shape, generator, seed, rows)?)
}

pub fn solution_from_text(s: &str) -> Result<Matrix, FormatError> {
    let mut lines = Lines::new(s);
    text_header(&mut lines, SOLUTION_TEXT_TAG)?;
    let f = lines.fields(&["rows", "cols"])?;
    let rows: usize = lines.number(f[0])?;
    let cols: usize = lines.number(f[1])?;
    let x = lines.matrix("x", rows, cols)?;
    lines.finish()?;
    Ok(x)
}

fn detect(buf: &[u8], magic: &[u8; 4]) -> Encoding {
    if buf.starts_with(magic) {
        Encoding::Binary
    } else {
        Encoding::Text
    }
}

fn as_text(buf: &[u8]) -> Result<&str, FormatError> {
    std::str::from_utf8(buf).map_err(|_| FormatError::Text {
        line: 0,
        msg: "neither a binary container nor UTF-8 text".into(),
    })
}

/// Reads a problem in either encoding.
pub fn read_problem(mut r: impl Read) -> Result<Problem, FormatError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    match detect(&buf, PROBLEM_MAGIC) {
        Encoding::Binary => decode_problem(&buf),
        Encoding::Text => problem_from_text(as_text(&buf)?),
    }
}

pub fn write_problem(mut w: impl Write, p: &Problem, enc: Encoding) -> Result<(), FormatError> {
    match enc {
        Encoding::Binary => w.write_all(&encode_problem(p))?,
        Encoding::Text => w.write_all(problem_to_text(p).as_bytes())?,
    }
    Ok(())
}

/// Reads a solution in either encoding.
pub fn read_solution(mut r: impl Read) -> Result<Matrix, FormatError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    match detect(&buf, SOLUTION_MAGIC) {
        Encoding::Binary => decode_solution(&buf),
        Encoding::Text => solution_from_text(as_text(&buf)?),
    }
}

pub fn write_solution(mut w: impl Write, x: &Matrix, enc: Encoding) -> Result<(), FormatError> {
    match enc {
        Encoding::Binary => w.write_all(&encode_solution(x))?,
        Encoding::Text => w.write_all(solution_to_text(x).as_bytes())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(kind: GeneratorKind, n: usize, m: usize, k: usize, seed: u64) -> Problem {
        Problem::generate(kind, ProblemShape::new(n, m, k, m).unwrap(), seed).unwrap()
    }

    #[test]
    fn header_layout() {
        let p = sample(GeneratorKind::Identity, 2, 1, 1, 3);
        let bytes = encode_problem(&p);
        assert_eq!(&bytes[..4], b"BTRP");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(bytes[40], 0);
        assert_eq!(&bytes[41..49], &3u64.to_le_bytes());
        assert_eq!(bytes.len(), 49 + 2 * 4 * 8);
    }

    #[test]
    fn corrupted_inputs() {
        let p = sample(GeneratorKind::TridiagDd, 4, 2, 1, 1);
        let good = encode_problem(&p);

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(decode_problem(&bad), Err(FormatError::UnsupportedVersion(9))));

        let mut bad = good.clone();
        bad[8] = 3; // N = 3
        assert!(matches!(decode_problem(&bad), Err(FormatError::Problem(_))));

        let mut bad = good.clone();
        bad[40] = 77;
        assert!(matches!(decode_problem(&bad), Err(FormatError::UnknownGenerator(77))));

        assert!(matches!(
            decode_problem(&good[..good.len() - 1]),
            Err(FormatError::Truncated(_))
        ));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_problem(&long), Err(FormatError::TrailingBytes(1))));

        assert!(read_problem(&b"BTRQ...."[..]).is_err());
    }

    #[test]
    fn huge_header_is_rejected_without_allocating() {
        let p = sample(GeneratorKind::Identity, 2, 1, 1, 0);
        let mut bad = encode_problem(&p);
        bad[8..16].copy_from_slice(&(1u64 << 40).to_le_bytes());
        assert!(matches!(decode_problem(&bad), Err(FormatError::Truncated(_))));
    }

    #[test]
    fn boundary_blocks_are_checked_on_read() {
        let mut p = sample(GeneratorKind::Identity, 2, 1, 1, 0);
        p.rows[0].lower = Matrix::from_rows(&[[1.0]]);
        let bytes = encode_problem(&p);
        assert!(matches!(decode_problem(&bytes), Err(FormatError::Problem(_))));
    }

    #[test]
    fn text_errors_carry_line_numbers() {
        let p = sample(GeneratorKind::Identity, 2, 1, 1, 0);
        let text = problem_to_text(&p).replacen("diag\n1.0", "diag\n1.0 2.0", 1);
        match problem_from_text(&text) {
            Err(FormatError::Text { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn solution_round_trip() {
        let x = Matrix::from_rows(&[[0.1, -2.5e-300], [f64::MAX, 1.0 / 3.0]]);
        for enc in [Encoding::Binary, Encoding::Text] {
            let mut buf = Vec::new();
            write_solution(&mut buf, &x, enc).unwrap();
            assert_eq!(read_solution(&buf[..]).unwrap(), x);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn problem_round_trip(d in 0u32..4, m in 1usize..4, k in 1usize..3, seed: u64, spd: bool) {
            let kind = if spd { GeneratorKind::SpdBanded } else { GeneratorKind::TridiagDd };
            let p = sample(kind, 1 << d, m, k, seed);
            for enc in [Encoding::Binary, Encoding::Text] {
                let mut buf = Vec::new();
                write_problem(&mut buf, &p, enc).unwrap();
                prop_assert_eq!(&read_problem(&buf[..]).unwrap(), &p);
            }
        }
    }
}
