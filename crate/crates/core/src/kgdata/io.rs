//! Text formats for graphs, attributes, masks, pairs, and feature matrices.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use umaea_numcore::Tensor;

use super::{Mmkg, Triple};
use crate::error::{Error, Result};

/// The three files describing one graph side.
#[derive(Debug, Clone)]
pub struct KgFiles {
    pub triples: PathBuf,
    pub attrs: PathBuf,
    pub mask: PathBuf,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_index(tok: &str, path: &Path, line: usize, what: &str) -> Result<usize> {
    tok.trim().parse::<usize>().map_err(|_| {
        Error::parse(
            path,
            line,
            format!("{what} `{tok}` is not a non-negative integer"),
        )
    })
}

/// Parses a triples file; returns `(num_entities, num_relations, triples)`.
pub fn parse_triples(text: &str, path: &Path) -> Result<(usize, usize, Vec<Triple>)> {
    let mut lines = text.lines().enumerate();
    let (n, r) = match lines.next() {
        Some((_, header)) => {
            let toks: Vec<&str> = header.split_whitespace().collect();
            match toks.as_slice() {
                ["#entities", n, "#relations", r] => (
                    parse_index(n, path, 1, "entity count")?,
                    parse_index(r, path, 1, "relation count")?,
                ),
                _ => {
                    return Err(Error::parse(
                        path,
                        1,
                        "expected header `#entities N #relations R`",
                    ))
                }
            }
        }
        None => return Err(Error::parse(path, 1, "empty file; header required")),
    };
    let mut triples = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!(
                    "expected head<TAB>relation<TAB>tail, got {} field(s)",
                    fields.len()
                ),
            ));
        }
        let head = parse_index(fields[0], path, lineno, "head")?;
        let relation = parse_index(fields[1], path, lineno, "relation")?;
        let tail = parse_index(fields[2], path, lineno, "tail")?;
        if head >= n || tail >= n {
            return Err(Error::parse(
                path,
                lineno,
                format!("entity index out of declared range 0..{n}"),
            ));
        }
        if relation >= r {
            return Err(Error::parse(
                path,
                lineno,
                format!("relation id out of declared range 0..{r}"),
            ));
        }
        triples.push(Triple {
            head,
            relation,
            tail,
        });
    }
    Ok((n, r, triples))
}

/// Parses `entity<TAB>attr[,attr...]` lines into per-entity attribute lists.
pub fn parse_attrs(text: &str, path: &Path, num_entities: usize) -> Result<Vec<Vec<usize>>> {
    let mut attrs = vec![Vec::new(); num_entities];
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (ent, list) = line.split_once('\t').ok_or_else(|| {
            Error::parse(path, lineno, "expected entity<TAB>attr_id[,attr_id...]")
        })?;
        let e = parse_index(ent, path, lineno, "entity")?;
        if e >= num_entities {
            return Err(Error::parse(
                path,
                lineno,
                format!("entity index out of declared range 0..{num_entities}"),
            ));
        }
        for tok in list.split(',').filter(|t| !t.trim().is_empty()) {
            attrs[e].push(parse_index(tok, path, lineno, "attribute id")?);
        }
    }
    Ok(attrs)
}

/// Parses a list of entity indices that have images.
pub fn parse_mask(text: &str, path: &Path, num_entities: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; num_entities];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e = parse_index(line, path, i + 1, "entity")?;
        if e >= num_entities {
            return Err(Error::parse(
                path,
                i + 1,
                format!("entity index {e} out of declared range 0..{num_entities}"),
            ));
        }
        mask[e] = true;
    }
    Ok(mask)
}

pub fn parse_pairs(text: &str, path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::parse(path, lineno, "expected e1<TAB>e2"));
        }
        pairs.push((
            parse_index(fields[0], path, lineno, "entity")?,
            parse_index(fields[1], path, lineno, "entity")?,
        ));
    }
    Ok(pairs)
}

/// Parses `rows cols` followed by `rows` lines of `cols` floats.
pub fn parse_features(text: &str, path: &Path) -> Result<Tensor> {
    let mut lines = text.lines().enumerate();
    let (rows, cols) = match lines.next() {
        Some((_, header)) => {
            let toks: Vec<&str> = header.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(Error::parse(path, 1, "expected header `rows cols`"));
            }
            (
                parse_index(toks[0], path, 1, "row count")?,
                parse_index(toks[1], path, 1, "column count")?,
            )
        }
        None => return Err(Error::parse(path, 1, "empty file; header required")),
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if seen == rows {
            return Err(Error::parse(path, lineno, format!("more than {rows} rows")));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("`{tok}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, lineno, "non-finite feature value"));
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::parse(
                path,
                lineno,
                format!(
                    "row has {} values, header declares {cols}",
                    data.len() - before
                ),
            ));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::parse(
            path,
            text.lines().count(),
            format!("header declares {rows} rows, found {seen}"),
        ));
    }
    Ok(Tensor::from_vec(rows, cols, data)?)
}

fn load_kg(files: &KgFiles, kg_id: u8) -> Result<Mmkg> {
    let (n, r, triples) = parse_triples(&read(&files.triples)?, &files.triples)?;
    let attrs = parse_attrs(&read(&files.attrs)?, &files.attrs, n)?;
    let mask = parse_mask(&read(&files.mask)?, &files.mask, n)?;
    Mmkg::new(kg_id, n, r, triples, attrs, mask)
}

/// Loads both graph sides. Parsing is strict; duplicate triples are dropped.
pub fn load_kg_pair(kg1: &KgFiles, kg2: &KgFiles) -> Result<(Mmkg, Mmkg)> {
    Ok((load_kg(kg1, 1)?, load_kg(kg2, 2)?))
}

/// Loads alignment pairs and checks them against both graphs.
pub fn load_pairs(path: &Path, kg1: &Mmkg, kg2: &Mmkg) -> Result<Vec<(usize, usize)>> {
    let pairs = parse_pairs(&read(path)?, path)?;
    for (i, &(a, b)) in pairs.iter().enumerate() {
        if a >= kg1.num_entities || b >= kg2.num_entities {
            return Err(Error::Invalid(format!(
                "{}: pair #{} ({a}, {b}) is outside the graphs",
                path.display(),
                i + 1
            )));
        }
    }
    Ok(pairs)
}

/// Loads a feature matrix for `kg`. Row `i` belongs to entity `i`; rows of
/// entities without an image are zeroed, pending imputation.
pub fn load_visual_features(path: &Path, kg: &Mmkg) -> Result<Tensor> {
    let raw = parse_features(&read(path)?, path)?;
    if raw.rows() > kg.num_entities {
        return Err(Error::Invalid(format!(
            "{}: {} feature rows for {} entities",
            path.display(),
            raw.rows(),
            kg.num_entities
        )));
    }
    let mut x = Tensor::zeros(kg.num_entities, raw.cols());
    for (e, &has) in kg.image_mask.iter().enumerate() {
        if !has {
            continue;
        }
        if e >= raw.rows() {
            return Err(Error::Invalid(format!(
                "{}: entity {e} is marked as having an image but has no feature row",
                path.display()
            )));
        }
        x.row_slice_mut(e).copy_from_slice(raw.row_slice(e));
    }
    Ok(x)
}

pub fn format_triples(kg: &Mmkg) -> String {
    let mut out = format!(
        "#entities {} #relations {}\n",
        kg.num_entities, kg.num_relations
    );
    for t in &kg.triples {
        let _ = writeln!(out, "{}\t{}\t{}", t.head, t.relation, t.tail);
    }
    out
}

pub fn format_attrs(kg: &Mmkg) -> String {
    let mut out = String::new();
    for (e, attrs) in kg.entity_attrs.iter().enumerate() {
        if attrs.is_empty() {
            continue;
        }
        let list: Vec<String> = attrs.iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "{e}\t{}", list.join(","));
    }
    out
}

pub fn format_mask(mask: &[bool]) -> String {
    let mut out = String::new();
    for (e, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let _ = writeln!(out, "{e}");
    }
    out
}

pub fn format_pairs(pairs: &[(usize, usize)]) -> String {
    let mut out = String::new();
    for (a, b) in pairs {
        let _ = writeln!(out, "{a}\t{b}");
    }
    out
}

pub fn format_features(x: &Tensor) -> String {
    let mut out = format!("{} {}\n", x.rows(), x.cols());
    for r in 0..x.rows() {
        let row: Vec<String> = x.row_slice(r).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
