//! CSV ingestion of long-format panels.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::panel::{PanelDataset, Structure};

/// Reads `i,j,t,y,x1,...,xK` with 1-based indices. Dimensions are the largest index seen
/// (undirected data shares one index range for `i` and `j`). Row numbers in errors count
/// the header as row 1.
pub fn read_panel_csv<R: Read>(reader: R, structure: Structure) -> Result<PanelDataset<f64>> {
    read_panel_csv_with_names(reader, structure).map(|(ds, _)| ds)
}

/// As [`read_panel_csv`], also returning the regressor column names.
pub fn read_panel_csv_with_names<R: Read>(reader: R, structure: Structure) -> Result<(PanelDataset<f64>, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::MalformedRow { row: 1, message: e.to_string() })?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 5 || names[..4] != ["i", "j", "t", "y"] {
        return Err(Error::MalformedRow {
            row: 1,
            message: format!("expected header i,j,t,y,x1,...; found {}", names.join(",")),
        });
    }
    let k = names.len() - 4;
    let mut rows = Vec::new();
    let (mut n1, mut n2, mut t) = (0, 0, 0);
    for (n, rec) in rdr.records().enumerate() {
        let row = n + 2;
        let rec = rec.map_err(|e| Error::MalformedRow { row, message: e.to_string() })?;
        if rec.len() != names.len() {
            return Err(Error::MalformedRow {
                row,
                message: format!("expected {} fields, found {}", names.len(), rec.len()),
            });
        }
        let index = |c: usize| -> Result<usize> {
            match rec[c].parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(Error::MalformedRow {
                    row,
                    message: format!("column {} must be a positive integer, found '{}'", names[c], &rec[c]),
                }),
            }
        };
        let real = |c: usize| -> Result<f64> {
            rec[c].parse::<f64>().map_err(|_| Error::MalformedRow {
                row,
                message: format!("column {} is not a number: '{}'", names[c], &rec[c]),
            })
        };
        let (i, j, s) = (index(0)?, index(1)?, index(2)?);
        let y = real(3)?;
        let x = (4..names.len()).map(real).collect::<Result<Vec<_>>>()?;
        n1 = n1.max(i + 1);
        n2 = n2.max(j + 1);
        t = t.max(s + 1);
        rows.push((i, j, s, y, x));
    }
    if structure == Structure::Undirected {
        n1 = n1.max(n2);
        n2 = n1;
    }
    let mut ds = PanelDataset::new(structure, n1, n2, t, k);
    for (i, j, s, y, x) in rows {
        ds.push(i, j, s, y, x);
    }
    Ok((ds, names[4..].iter().map(|s| s.to_string()).collect()))
}

pub fn read_panel_csv_file(path: impl AsRef<Path>, structure: Structure) -> Result<(PanelDataset<f64>, Vec<String>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_panel_csv_with_names(std::io::BufReader::new(file), structure)
}

/// Writes a dataset in the format read by [`read_panel_csv`].
pub fn write_panel_csv<W: std::io::Write>(ds: &PanelDataset<f64>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut header = vec!["i".to_string(), "j".into(), "t".into(), "y".into()];
    header.extend((1..=ds.k).map(|c| format!("x{c}")));
    w.write_record(&header).map_err(io)?;
    for r in &ds.rows {
        let mut rec = vec![(r.i + 1).to_string(), (r.j + 1).to_string(), (r.t + 1).to_string(), r.y.to_string()];
        rec.extend(r.x.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let text = "i,j,t,y,x1\n1,2,1,0.5,3\n2,1,1,1,-1\n";
        let ds = read_panel_csv(text.as_bytes(), Structure::Bipartite).unwrap();
        assert_eq!((ds.n1, ds.n2, ds.t, ds.k), (2, 2, 1, 1));
        assert_eq!(ds.rows[0].j, 1);
        let mut buf = Vec::new();
        write_panel_csv(&ds, &mut buf).unwrap();
        assert_eq!(read_panel_csv(buf.as_slice(), Structure::Bipartite).unwrap(), ds);

        let bad = "i,j,t,y,x1\n1,1,1,0,1\n1,0,1,0,1\n";
        assert!(matches!(
            read_panel_csv(bad.as_bytes(), Structure::Bipartite),
            Err(Error::MalformedRow { row: 3, .. })
        ));
        let bad = "i,j,t,y,x1\n1,1,1,zero,1\n";
        assert!(matches!(
            read_panel_csv(bad.as_bytes(), Structure::Bipartite),
            Err(Error::MalformedRow { row: 2, .. })
        ));
    }
}
