//! Merging training logs into one plotting table.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fclnat::{Error, Result};

/// One log reduced to `(step, value)` points of a single column.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(usize, f64)>,
}

pub fn read_series(path: &Path, column: &str) -> Result<Series> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_series(&text, column, path)
}

fn parse_series(text: &str, column: &str, path: &Path) -> Result<Series> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| parse_err(1, "empty log".into()))?.split(',').collect();
    let step_col = header
        .iter()
        .position(|h| *h == "step")
        .ok_or_else(|| parse_err(1, "no step column".into()))?;
    let value_col = header
        .iter()
        .position(|h| *h == column)
        .ok_or_else(|| parse_err(1, format!("no {column} column")))?;
    let mut points: Vec<(usize, f64)> = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let lineno = i + 2;
        if fields.len() != header.len() {
            return Err(parse_err(lineno, format!("expected {} fields", header.len())));
        }
        if fields[value_col].is_empty() {
            continue;
        }
        let step = fields[step_col]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad step {:?}", fields[step_col])))?;
        let value = fields[value_col]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad {column} {:?}", fields[value_col])))?;
        if points.last().is_some_and(|&(s, _)| s >= step) {
            return Err(parse_err(lineno, "steps must increase".into()));
        }
        points.push((step, value));
    }
    if points.is_empty() {
        return Err(Error::Input(format!("{}: no {column} values", path.display())));
    }
    Ok(Series {
        name: String::new(),
        points,
    })
}

/// Column names from file stems, disambiguated with the parent directory.
pub fn series_names(paths: &[PathBuf]) -> Vec<String> {
    let stem = |p: &PathBuf| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let stems: Vec<String> = paths.iter().map(stem).collect();
    let mut seen = HashSet::new();
    paths
        .iter()
        .zip(&stems)
        .enumerate()
        .map(|(i, (p, s))| {
            let clash = stems.iter().filter(|t| *t == s).count() > 1;
            let mut name = if clash {
                // run_dir/logs/train.csv → run_dir
                let run = p
                    .ancestors()
                    .skip(1)
                    .find_map(|a| a.file_name().filter(|n| *n != "logs").map(|n| n.to_string_lossy().into_owned()));
                run.map(|r| format!("{r}_{s}")).unwrap_or_else(|| s.clone())
            } else {
                s.clone()
            };
            if !seen.insert(name.clone()) {
                name = format!("{name}_{i}");
                seen.insert(name.clone());
            }
            name
        })
        .collect()
}

/// Step-aligned table with one value column per series. When grids differ
/// every series is resampled onto the coarsest one (fewest points) by
/// taking its last value at or before each grid step; the returned flag
/// reports that resampling happened.
pub fn merge(series: &[Series]) -> Result<(String, bool)> {
    let first = series.first().ok_or_else(|| Error::Input("no logs to merge".into()))?;
    let same = series
        .iter()
        .all(|s| s.points.iter().map(|p| p.0).eq(first.points.iter().map(|p| p.0)));
    let grid: Vec<usize> = series
        .iter()
        .min_by_key(|s| s.points.len())
        .expect("nonempty")
        .points
        .iter()
        .map(|p| p.0)
        .collect();
    let mut out = String::from("step");
    for s in series {
        let _ = write!(out, ",{}", s.name);
    }
    out.push('\n');
    for &g in &grid {
        let _ = write!(out, "{g}");
        for s in series {
            let v = s.points.iter().take_while(|p| p.0 <= g).last().map(|p| p.1);
            match v {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    Ok((out, !same))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(name: &str, pts: &[(usize, f64)]) -> Series {
        Series {
            name: name.into(),
            points: pts.to_vec(),
        }
    }

    #[test]
    fn parses_the_training_log_layout() {
        let text = "step,stage,alpha,mask,loss,val_bleu\n0,at,0,AT,3.5,\n9,curriculum,0.5,AT,2.0,12.5\n";
        let s = parse_series(text, "val_bleu", Path::new("x.csv")).unwrap();
        assert_eq!(s.points, vec![(9, 12.5)]);
        let s = parse_series(text, "loss", Path::new("x.csv")).unwrap();
        assert_eq!(s.points.len(), 2);
        assert!(parse_series(text, "nope", Path::new("x.csv")).is_err());
    }

    #[test]
    fn single_input_passes_through() {
        let (csv, resampled) = merge(&[series("a", &[(1, 0.5), (2, 0.25)])]).unwrap();
        assert_eq!(csv, "step,a\n1,0.5\n2,0.25\n");
        assert!(!resampled);
    }

    #[test]
    fn equal_grids_give_one_column_each() {
        let (csv, resampled) = merge(&[series("a", &[(1, 1.0), (2, 2.0)]), series("b", &[(1, 3.0), (2, 4.0)])]).unwrap();
        assert_eq!(csv, "step,a,b\n1,1,3\n2,2,4\n");
        assert!(!resampled);
    }

    #[test]
    fn mismatched_grids_resample_to_the_coarsest() {
        let fine = series("fine", &[(1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0)]);
        let coarse = series("coarse", &[(2, 20.0), (4, 40.0)]);
        let (csv, resampled) = merge(&[fine, coarse]).unwrap();
        assert!(resampled);
        assert_eq!(csv, "step,fine,coarse\n2,2,20\n4,4,40\n");
        let steps: Vec<usize> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn names_disambiguate_by_run_dir() {
        let names = series_names(&["runs/fcl/logs/train.csv".into(), "runs/dt/logs/train.csv".into(), "x/other.csv".into()]);
        assert_eq!(names, vec!["fcl_train", "dt_train", "other"]);
    }
}
