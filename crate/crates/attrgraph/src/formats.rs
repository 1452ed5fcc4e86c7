//! Text formats: attribute annotations, square matrices and embedding tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use attrgraph_core::condition::EmbeddingTable;
use attrgraph_core::cooccurrence::AttributeVector;

use crate::error::{Error, Result};

/// Per-image binary annotations in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotations {
    pub names: Vec<String>,
    pub rows: Vec<(String, AttributeVector)>,
}

impl Annotations {
    pub fn vectors(&self) -> Vec<AttributeVector> {
        self.rows.iter().map(|(_, a)| a.clone()).collect()
    }
}

fn parse_flag(token: &str, path: &Path, line: usize) -> Result<bool> {
    match token {
        "1" | "+1" => Ok(true),
        "-1" | "0" => Ok(false),
        _ => Err(Error::parse(path, line, format!("expected -1, 0 or 1, got `{token}`"))),
    }
}

/// CelebA layout: image count, attribute names, then `filename ±1 …` rows.
pub fn parse_celeba(text: &str, path: &Path) -> Result<Annotations> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, count) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty annotation file"))?;
    let count: usize = count
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("image count expected, got `{}`", count.trim())))?;
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 2, "missing attribute names"))?;
    let names: Vec<String> = header.split_whitespace().map(String::from).collect();
    let mut rows = Vec::with_capacity(count);
    for (i, line) in lines {
        let mut tokens = line.split_whitespace();
        let file = tokens.next().unwrap_or_default().to_string();
        let flags = tokens.map(|t| parse_flag(t, path, i + 1)).collect::<Result<Vec<_>>>()?;
        if flags.len() != names.len() {
            return Err(Error::parse(path, i + 1, format!("{} values for {} attributes", flags.len(), names.len())));
        }
        rows.push((file, AttributeVector::from_bools(&flags)));
    }
    if rows.len() != count {
        return Err(Error::parse(path, 1, format!("header announces {count} images, found {}", rows.len())));
    }
    Ok(Annotations { names, rows })
}

pub fn write_celeba(a: &Annotations) -> String {
    let mut out = format!("{}\n{}\n", a.rows.len(), a.names.join(" "));
    for (file, attrs) in &a.rows {
        out.push_str(file);
        for v in attrs.values() {
            out.push_str(if *v == 1 { " 1" } else { " -1" });
        }
        out.push('\n');
    }
    out
}

/// CSV layout: `image_id,name…` header, then rows of 0/1 (−1 also reads as 0).
pub fn parse_csv(text: &str, path: &Path) -> Result<Annotations> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty annotation file"))?;
    let names: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let mut cells = line.split(',').map(str::trim);
        let file = cells.next().unwrap_or_default().to_string();
        let flags = cells.map(|t| parse_flag(t, path, i + 1)).collect::<Result<Vec<_>>>()?;
        if flags.len() != names.len() {
            return Err(Error::parse(path, i + 1, format!("{} values for {} attributes", flags.len(), names.len())));
        }
        rows.push((file, AttributeVector::from_bools(&flags)));
    }
    Ok(Annotations { names, rows })
}

pub fn write_csv(a: &Annotations) -> String {
    let mut out = format!("image_id,{}\n", a.names.join(","));
    for (file, attrs) in &a.rows {
        out.push_str(file);
        for v in attrs.values() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(Error::io(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
    }
    fs::write(path, text).map_err(Error::io(path))
}

/// Read annotations, choosing the CSV reader for `.csv` files.
pub fn read_annotations(path: &Path) -> Result<Annotations> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        parse_csv(&text, path)
    } else {
        parse_celeba(&text, path)
    }
}

/// `k×k` matrix with a header line of names; values carry 17 significant
/// digits so they read back bit for bit. For co-occurrence matrices, row `i`
/// column `j` holds `P(a_i | a_j)`.
pub fn write_matrix(names: &[String], values: &[f64]) -> String {
    let k = names.len();
    let mut out = names.join(" ");
    out.push('\n');
    for row in values.chunks(k.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty matrix file"))?;
    let names: Vec<String> = header.split_whitespace().map(String::from).collect();
    let k = names.len();
    let mut values = Vec::with_capacity(k * k);
    for (i, line) in lines {
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, i + 1, format!("bad number `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != k {
            return Err(Error::parse(path, i + 1, format!("{} values in a row of a {k}×{k} matrix", row.len())));
        }
        values.extend(row);
    }
    if values.len() != k * k {
        return Err(Error::parse(path, 1, format!("{} rows for {k} names", values.len() / k.max(1))));
    }
    Ok((names, values))
}

/// Header `count dim`, then `name v1 … v_dim` per attribute.
pub fn write_embedding_table(t: &EmbeddingTable) -> String {
    let mut out = format!("{} {}\n", t.names.len(), t.dim);
    for (name, row) in t.names.iter().zip(t.vectors.chunks(t.dim)) {
        out.push_str(name);
        for v in row {
            let _ = write!(out, " {v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_embedding_table(text: &str, path: &Path) -> Result<EmbeddingTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty embedding file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let dim: usize = match head.as_slice() {
        [_, dim] => dim.parse().map_err(|_| Error::parse(path, 1, format!("bad dimension `{dim}`")))?,
        _ => return Err(Error::parse(path, 1, "header must be `count dim`")),
    };
    let (mut names, mut vectors) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        let mut tokens = line.split_whitespace();
        let name = tokens.next().unwrap_or_default().to_string();
        let row = tokens
            .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, i + 1, format!("bad number `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != dim {
            return Err(Error::parse(path, i + 1, format!("`{name}` has {} values, expected {dim}", row.len())));
        }
        names.push(name);
        vectors.extend(row);
    }
    Ok(EmbeddingTable::new(names, dim, vectors)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test")
    }

    #[test]
    fn celeba_round_trip() {
        let text = "2\nBald Male\n000001.jpg  1 -1\n000002.jpg -1  1\n";
        let a = parse_celeba(text, p()).unwrap();
        assert_eq!(a.names, ["Bald", "Male"]);
        assert_eq!(a.rows[0].1.values(), &[1, 0]);
        assert_eq!(parse_celeba(&write_celeba(&a), p()).unwrap(), a);
        assert!(parse_celeba("3\nBald\nx.jpg 1\n", p()).is_err());
        assert!(parse_celeba("1\nBald\nx.jpg 2\n", p()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let a = parse_csv("image_id,a,b\nx.png,1,0\ny.png,0,0\n", p()).unwrap();
        assert_eq!(a.rows[1].1.values(), &[0, 0]);
        assert_eq!(parse_csv(&write_csv(&a), p()).unwrap(), a);
        assert!(parse_csv("image_id,a\nx.png,1,1\n", p()).is_err());
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let names = vec!["a".to_string(), "b".to_string()];
        let values = vec![1.0, 1.0 / 3.0, 0.1 + 0.2, std::f64::consts::PI];
        let (n, v) = parse_matrix(&write_matrix(&names, &values), p()).unwrap();
        assert_eq!(n, names);
        assert_eq!(v, values);
        assert!(parse_matrix("a b\n1 2\n", p()).is_err());
    }

    #[test]
    fn embedding_round_trip() {
        let t = EmbeddingTable::new(vec!["x".into(), "y".into()], 3, vec![0.5, -1.0, 2.0, 1e-9, 0.0, 3.25]).unwrap();
        let back = parse_embedding_table(&write_embedding_table(&t), p()).unwrap();
        assert_eq!(back, t);
        assert!(parse_embedding_table("2 3\nx 1 2\n", p()).is_err());
    }
}
