//! CSV ingestion and emission.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::table::{Cell, Feature, FeatureKind, Schema, Table};

pub const DEFAULT_MISSING_TOKENS: &[&str] = &["", "NA"];

#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub missing_tokens: Vec<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            missing_tokens: DEFAULT_MISSING_TOKENS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl CsvOptions {
    fn is_missing(&self, field: &str) -> bool {
        self.missing_tokens.iter().any(|t| t == field)
    }
}

/// Parse CSV text into a table.
///
/// With a schema, the header must name exactly the schema's features (in any
/// order) and categorical values must be known levels. Without one, a column
/// is numeric when every observed field parses as a finite number and
/// categorical otherwise, with levels in first-appearance order.
pub fn parse_csv<R: Read>(
    input: R,
    schema: Option<&Schema>,
    options: &CsvOptions,
) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Structure("missing header row".into()));
    }

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Structure(format!(
                "row {} has {} fields, header has {}",
                i + 1,
                record.len(),
                header.len()
            )));
        }
        for (col, field) in raw.iter_mut().zip(record.iter()) {
            col.push(field.to_string());
        }
    }

    match schema {
        Some(schema) => parse_with_schema(&header, raw, schema, options),
        None => parse_inferred(&header, raw, options),
    }
}

pub fn read_csv_file(
    path: impl AsRef<Path>,
    schema: Option<&Schema>,
    options: &CsvOptions,
) -> Result<Table> {
    let file = std::fs::File::open(path)?;
    parse_csv(std::io::BufReader::new(file), schema, options)
}

fn parse_number(field: &str, row: usize, column: &str) -> Result<f64> {
    match field.trim().parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("'{field}' is not a finite number"),
        }),
    }
}

fn parse_with_schema(
    header: &[String],
    raw: Vec<Vec<String>>,
    schema: &Schema,
    options: &CsvOptions,
) -> Result<Table> {
    if header.len() != schema.len() {
        return Err(Error::Schema(format!(
            "header has {} columns, schema has {} features",
            header.len(),
            schema.len()
        )));
    }
    let mut columns = Vec::with_capacity(schema.len());
    for feature in schema.features() {
        let pos = header
            .iter()
            .position(|h| *h == feature.name)
            .ok_or_else(|| Error::Schema(format!("header lacks feature '{}'", feature.name)))?;
        let fields = &raw[pos];
        let cells = fields
            .iter()
            .enumerate()
            .map(|(i, field)| {
                if options.is_missing(field) {
                    return Ok(Cell::Missing);
                }
                match &feature.kind {
                    FeatureKind::Numeric => {
                        parse_number(field, i + 1, &feature.name).map(Cell::Number)
                    }
                    kind @ FeatureKind::Categorical { .. } => {
                        kind.level_index(field).map(Cell::Category).ok_or_else(|| {
                            Error::Schema(format!(
                                "unknown level '{field}' for '{}' at row {}",
                                feature.name,
                                i + 1
                            ))
                        })
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        columns.push(cells);
    }
    let n_rows = raw.first().map_or(0, Vec::len);
    finish(schema.clone(), columns, n_rows)
}

fn parse_inferred(header: &[String], raw: Vec<Vec<String>>, options: &CsvOptions) -> Result<Table> {
    let mut features = Vec::with_capacity(header.len());
    let mut columns = Vec::with_capacity(header.len());
    for (name, fields) in header.iter().zip(&raw) {
        let observed: Vec<&String> = fields.iter().filter(|f| !options.is_missing(f)).collect();
        let numeric = !observed.is_empty()
            && observed
                .iter()
                .all(|f| f.trim().parse::<f64>().is_ok_and(f64::is_finite));
        if numeric {
            features.push(Feature::numeric(name.clone()));
            columns.push(
                fields
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        if options.is_missing(f) {
                            Ok(Cell::Missing)
                        } else {
                            parse_number(f, i + 1, name).map(Cell::Number)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        } else {
            let mut levels: Vec<String> = Vec::new();
            let cells = fields
                .iter()
                .map(|f| {
                    if options.is_missing(f) {
                        return Cell::Missing;
                    }
                    let k = match levels.iter().position(|l| l == f) {
                        Some(k) => k,
                        None => {
                            levels.push(f.clone());
                            levels.len() - 1
                        }
                    };
                    Cell::Category(k as u32)
                })
                .collect();
            if levels.is_empty() {
                return Err(Error::Schema(format!(
                    "column '{name}' has no observed values; supply a schema to type it"
                )));
            }
            features.push(Feature::categorical(name.clone(), levels));
            columns.push(cells);
        }
    }
    let n_rows = raw.first().map_or(0, Vec::len);
    finish(Schema::from_features(features)?, columns, n_rows)
}

fn finish(schema: Schema, columns: Vec<Vec<Cell>>, n_rows: usize) -> Result<Table> {
    if n_rows == 0 {
        return Ok(Table::empty(schema));
    }
    Table::new(schema, columns)
}

/// Write a table as CSV: header row, missing cells as empty fields, numbers in
/// shortest round-trip form.
pub fn emit_csv<W: Write>(table: &Table, output: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    writer.write_record(table.schema().names())?;
    for i in 0..table.n_rows() {
        writer.write_record((0..table.n_cols()).map(|j| table.cell_text(i, j)))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_csv_file(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    emit_csv(table, std::io::BufWriter::new(file))
}

pub fn to_csv_string(table: &Table) -> Result<String> {
    let mut buf = Vec::new();
    emit_csv(table, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_schema_file(path: impl AsRef<Path>) -> Result<Schema> {
    Schema::from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, schema: Option<&Schema>) -> Result<Table> {
        parse_csv(text.as_bytes(), schema, &CsvOptions::default())
    }

    #[test]
    fn empty_field_is_missing() {
        let schema = Schema::from_features(vec![
            Feature::numeric("a"),
            Feature::categorical("b", ["x", "y"]),
        ])
        .unwrap();
        let t = parse("a,b\n1,x\n,y", Some(&schema)).unwrap();
        assert_eq!(t.cell(1, 0), Cell::Missing);
        assert_eq!(t.cell(1, 1), Cell::Category(1));
        let na = parse("a,b\nNA,x\n", Some(&schema)).unwrap();
        assert!(na.cell(0, 0).is_missing());
    }

    #[test]
    fn numeric_mean_from_text() {
        let t = parse("a\n1.5\n2.5", None).unwrap();
        assert!(t.schema().feature(0).kind.is_numeric());
        assert_eq!(t.column_stats("a").unwrap().mean(), Some(2.0));
    }

    #[test]
    fn inferred_levels_follow_first_appearance() {
        let t = parse("c\nq\np\nq\n", None).unwrap();
        assert_eq!(t.schema().feature(0).kind.levels().unwrap(), ["q", "p"]);
    }

    #[test]
    fn errors_are_located() {
        let schema = Schema::from_features(vec![
            Feature::numeric("a"),
            Feature::categorical("b", ["x"]),
        ])
        .unwrap();
        match parse("a,b\n1,x\nfoo,x\n", Some(&schema)) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse("a,b\n1,z\n", Some(&schema)),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            parse("a,b\n1,x,3\n", Some(&schema)),
            Err(Error::Structure(_))
        ));
        assert!(matches!(
            parse("a,c\n1,x\n", Some(&schema)),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn header_order_may_differ_from_schema() {
        let schema = Schema::from_features(vec![
            Feature::numeric("a"),
            Feature::categorical("b", ["x"]),
        ])
        .unwrap();
        let t = parse("b,a\nx,3\n", Some(&schema)).unwrap();
        assert_eq!(t.cell(0, 0), Cell::Number(3.0));
    }

    #[test]
    fn emit_then_parse_is_identity() {
        let schema = Schema::from_features(vec![
            Feature::numeric("a"),
            Feature::categorical("b", ["x, with comma", "y"]),
        ])
        .unwrap();
        let t = Table::from_rows(
            schema.clone(),
            &[
                vec![Cell::Number(0.1 + 0.2), Cell::Category(0)],
                vec![Cell::Missing, Cell::Category(1)],
                vec![Cell::Number(-1e-300), Cell::Missing],
            ],
        )
        .unwrap();
        let text = to_csv_string(&t).unwrap();
        assert_eq!(parse(&text, Some(&schema)).unwrap(), t);
    }
}
