//! Dataset files.
//!
//! The shared format is a headed CSV with an integer `domain_id` column, an
//! optional `y` column and feature columns `x1..xd`. Rows may come in any
//! order; loading regroups them by ascending `domain_id`, keeping file order
//! within a domain.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use faer::Mat;

use crate::domains::{DomainBlock, DomainDataset};
use crate::error::{Error, Result};

struct Layout {
    domain: usize,
    y: Option<usize>,
    x: Vec<usize>,
}

fn layout(headers: &csv::StringRecord) -> Result<Layout> {
    let parse_err = |message: String| Error::Parse { line: 1, message };
    let mut domain = None;
    let mut y = None;
    let mut x: Vec<(usize, usize)> = Vec::new();
    for (c, name) in headers.iter().enumerate() {
        let name = name.trim();
        match name {
            "domain_id" => domain = Some(c),
            "y" => y = Some(c),
            _ => {
                let k = name
                    .strip_prefix('x')
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| parse_err(format!("unexpected column `{name}`")))?;
                x.push((k, c));
            }
        }
    }
    let domain = domain.ok_or_else(|| parse_err("missing `domain_id` column".into()))?;
    x.sort_unstable();
    if x.is_empty() {
        return Err(parse_err("no feature columns x1..xd".into()));
    }
    for (i, (k, _)) in x.iter().enumerate() {
        if *k != i + 1 {
            return Err(parse_err(format!(
                "feature columns must be x1..x{} without gaps",
                x.len()
            )));
        }
    }
    Ok(Layout {
        domain,
        y,
        x: x.into_iter().map(|(_, c)| c).collect(),
    })
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, c: usize, line: usize, what: &str) -> Result<T> {
    let raw = rec.get(c).unwrap_or("").trim();
    raw.parse::<T>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} `{raw}`"),
    })
}

fn real(rec: &csv::StringRecord, c: usize, line: usize, what: &str) -> Result<f64> {
    let v: f64 = field(rec, c, line, what)?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite {what}"),
        });
    }
    Ok(v)
}

type Rows = Vec<(Vec<f64>, Option<f64>)>;

fn blocks_from(groups: BTreeMap<i64, Rows>, has_y: bool) -> Result<DomainDataset> {
    let blocks = groups
        .into_iter()
        .map(|(id, rows)| {
            let d = rows[0].0.len();
            let inputs = Mat::from_fn(rows.len(), d, |i, j| rows[i].0[j]);
            let outputs = has_y.then(|| rows.iter().map(|r| r.1.unwrap_or(f64::NAN)).collect());
            DomainBlock::new(id, inputs, outputs)
        })
        .collect::<Result<Vec<_>>>()?;
    DomainDataset::new(blocks)
}

/// Parses the shared dataset CSV from any reader.
pub fn parse_dataset<R: Read>(reader: R) -> Result<DomainDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let lay = layout(&headers)?;
    let mut groups: BTreeMap<i64, Rows> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let id: i64 = field(&rec, lay.domain, line, "domain_id")?;
        let y = lay.y.map(|c| real(&rec, c, line, "y")).transpose()?;
        let x = lay
            .x
            .iter()
            .enumerate()
            .map(|(j, &c)| real(&rec, c, line, &format!("x{}", j + 1)))
            .collect::<Result<Vec<_>>>()?;
        groups.entry(id).or_default().push((x, y));
    }
    if groups.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "dataset has no rows".into(),
        });
    }
    blocks_from(groups, lay.y.is_some())
}

pub fn read_dataset(path: &Path) -> Result<DomainDataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(f)
}

/// Round-trippable decimal form of a double (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the shared CSV format, one row per sample in flattened order.
pub fn write_dataset_to<W: Write>(data: &DomainDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = data.dim();
    let mut header = vec!["domain_id".to_string()];
    if data.has_outputs() {
        header.push("y".into());
    }
    header.extend((1..=d).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for b in data.domains() {
        for i in 0..b.len() {
            let mut row = vec![b.id.to_string()];
            if let Some(y) = b.outputs() {
                row.push(fmt_f64(y[i]));
            }
            row.extend((0..d).map(|j| fmt_f64(b.inputs()[(i, j)])));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))?;
    Ok(())
}

pub fn write_dataset(data: &DomainDataset, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(data, f).map_err(|e| match e {
        Error::Input(msg) => Error::io(path, std::io::Error::other(msg)),
        other => other,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("csv write failed: {e}"))
}

/// The telemonitoring voice data grouped by subject: one dataset per target.
#[derive(Debug, Clone)]
pub struct Telemonitoring {
    pub motor: DomainDataset,
    pub total: DomainDataset,
}

pub const TELEMONITORING_FEATURES: usize = 16;

/// Reads the UCI telemonitoring layout: a `subject#` column, `motor_UPDRS`
/// and `total_UPDRS` targets, and the 16 voice features that follow
/// `total_UPDRS`. Other columns (age, sex, test_time) are ignored.
pub fn parse_telemonitoring<R: Read>(reader: R) -> Result<Telemonitoring> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing `{name}` column"),
            })
    };
    let subject = find("subject#")?;
    let motor = find("motor_UPDRS")?;
    let total = find("total_UPDRS")?;
    let first = total + 1;
    if headers.len() < first + TELEMONITORING_FEATURES {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected {TELEMONITORING_FEATURES} feature columns after `total_UPDRS`"
            ),
        });
    }
    let mut m_groups: BTreeMap<i64, Rows> = BTreeMap::new();
    let mut t_groups: BTreeMap<i64, Rows> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let id: i64 = field(&rec, subject, line, "subject#")?;
        let ym = real(&rec, motor, line, "motor_UPDRS")?;
        let yt = real(&rec, total, line, "total_UPDRS")?;
        let x = (first..first + TELEMONITORING_FEATURES)
            .map(|c| real(&rec, c, line, headers.get(c).unwrap_or("feature")))
            .collect::<Result<Vec<_>>>()?;
        m_groups.entry(id).or_default().push((x.clone(), Some(ym)));
        t_groups.entry(id).or_default().push((x, Some(yt)));
    }
    if m_groups.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "telemonitoring file has no rows".into(),
        });
    }
    Ok(Telemonitoring {
        motor: blocks_from(m_groups, true)?,
        total: blocks_from(t_groups, true)?,
    })
}

pub fn read_telemonitoring(path: &Path) -> Result<Telemonitoring> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_telemonitoring(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_regroups() {
        let text = "domain_id,y,x1,x2\n3,1,0.5,1.5\n1,0,2,3\n3,0,-1,4e-1\n";
        let d = parse_dataset(text.as_bytes()).unwrap();
        assert_eq!(d.n_domains(), 2);
        assert_eq!(d.domains()[0].id, 1);
        assert_eq!(d.domains()[1].id, 3);
        assert_eq!(d.domain_sizes(), vec![1, 2]);
        assert_eq!(d.domains()[1].inputs()[(1, 1)], 0.4);
        assert_eq!(d.domains()[1].outputs().unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn columns_may_be_permuted_and_y_omitted() {
        let text = "x2,domain_id,x1\n5,0,7\n";
        let d = parse_dataset(text.as_bytes()).unwrap();
        assert!(!d.has_outputs());
        assert_eq!(d.domains()[0].inputs()[(0, 0)], 7.0);
        assert_eq!(d.domains()[0].inputs()[(0, 1)], 5.0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "domain_id,x1\n0,1\n0,abc\n";
        match parse_dataset(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_dataset("domain,x1\n0,1\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_dataset("domain_id,x1,x3\n0,1,2\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_dataset("domain_id,x1\n0,1,2\n".as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn write_then_read_is_exact() {
        let text = "domain_id,y,x1\n0,0.1,0.30000000000000004\n2,-1e-300,3.141592653589793\n";
        let d = parse_dataset(text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&d, &mut buf).unwrap();
        let back = parse_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn telemonitoring_layout() {
        let feats: Vec<String> = (0..16).map(|k| format!("f{k}")).collect();
        let header = format!(
            "subject#,age,sex,test_time,motor_UPDRS,total_UPDRS,{}",
            feats.join(",")
        );
        let row = |s: i64, m: f64, t: f64| {
            let v: Vec<String> = (0..16).map(|k| format!("{}", k as f64 * 0.1 + s as f64)).collect();
            format!("{s},60,0,5.5,{m},{t},{}", v.join(","))
        };
        let text = format!("{header}\n{}\n{}\n{}\n", row(2, 10.0, 20.0), row(1, 11.0, 21.0), row(2, 12.0, 22.0));
        let tm = parse_telemonitoring(text.as_bytes()).unwrap();
        assert_eq!(tm.motor.domain_sizes(), vec![1, 2]);
        assert_eq!(tm.motor.dim(), 16);
        assert_eq!(tm.motor.domains()[1].outputs().unwrap(), &[10.0, 12.0]);
        assert_eq!(tm.total.domains()[1].outputs().unwrap(), &[20.0, 22.0]);
        assert_eq!(tm.total.domains()[0].inputs()[(0, 3)], 1.3);

        let short = "subject#,motor_UPDRS,total_UPDRS,a\n1,2,3,4\n";
        assert!(matches!(
            parse_telemonitoring(short.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
