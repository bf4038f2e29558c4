//! Plain-text columnar files. Values are written with 17 significant digits,
//! so a read after a write returns identical bits.

use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::grid::Component;
use crate::scalar::Real;
use crate::signal::Spectrum;
use crate::simulation::{CuratedDataset, ProbeSeries, SpectrumMap};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn perr(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse { line, msg: msg.into() }
}

fn num<T: Real>(s: &str, line: usize) -> Result<T, IoError> {
    let v: f64 = s.trim().parse().map_err(|_| perr(line, format!("bad number {s:?}")))?;
    T::from_f64(v).ok_or_else(|| perr(line, "value out of range"))
}

/// `key=value` pairs of a `#` header line.
fn header_fields(line: &str) -> Vec<(&str, &str)> {
    line.trim_start_matches('#')
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .collect()
}

fn field<'a>(fields: &[(&'a str, &'a str)], key: &str) -> Result<&'a str, IoError> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| perr(1, format!("header lacks {key}")))
}

pub fn write_probe<T: Real>(w: &mut impl Write, p: &ProbeSeries<T>) -> Result<(), IoError> {
    writeln!(
        w,
        "# component={} location={},{},{} bias={:.16e} dt={:.16e} t0={:.16e} n={}",
        p.component.name(),
        p.at[0],
        p.at[1],
        p.at[2],
        p.bias,
        p.dt,
        p.t0,
        p.samples.len()
    )?;
    for v in &p.samples {
        writeln!(w, "{v:.16e}")?;
    }
    Ok(())
}

pub fn read_probe<T: Real>(r: impl BufRead) -> Result<ProbeSeries<T>, IoError> {
    let mut lines = r.lines();
    let head = lines.next().ok_or_else(|| perr(1, "empty file"))??;
    let f = header_fields(&head);
    let comp = field(&f, "component")?;
    let component = Component::parse(comp).ok_or_else(|| perr(1, format!("unknown component {comp}")))?;
    let loc: Vec<usize> = field(&f, "location")?
        .split(',')
        .map(|s| s.parse().map_err(|_| perr(1, "bad location")))
        .collect::<Result<_, _>>()?;
    if loc.len() != 3 {
        return Err(perr(1, "location needs three indices"));
    }
    let mut samples = Vec::new();
    for (n, l) in lines.enumerate() {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        samples.push(num(&l, n + 2)?);
    }
    if let Ok(n) = field(&f, "n") {
        if n.parse::<usize>().ok() != Some(samples.len()) {
            return Err(perr(1, format!("header says n={n}, found {} samples", samples.len())));
        }
    }
    Ok(ProbeSeries {
        component,
        at: [loc[0], loc[1], loc[2]],
        bias: num(field(&f, "bias")?, 1)?,
        dt: num(field(&f, "dt")?, 1)?,
        t0: num(field(&f, "t0")?, 1)?,
        samples,
    })
}

pub fn write_spectrum<T: Real>(w: &mut impl Write, s: &Spectrum<T>) -> Result<(), IoError> {
    writeln!(
        w,
        "# frequency_hz magnitude n_fft={} n_samples={} label={}",
        s.n_fft,
        s.n_samples,
        if s.label.is_empty() { "-" } else { &s.label }
    )?;
    for (f, m) in s.freqs.iter().zip(&s.mags) {
        writeln!(w, "{f:.16e} {m:.16e}")?;
    }
    Ok(())
}

pub fn read_spectrum<T: Real>(r: impl BufRead) -> Result<Spectrum<T>, IoError> {
    let mut lines = r.lines();
    let head = lines.next().ok_or_else(|| perr(1, "empty file"))??;
    let f = header_fields(&head);
    let parse_count = |k: &str| -> Result<usize, IoError> {
        field(&f, k)?.parse().map_err(|_| perr(1, format!("bad {k}")))
    };
    let (mut freqs, mut mags) = (Vec::new(), Vec::new());
    for (n, l) in lines.enumerate() {
        let l = l?;
        let cols: Vec<&str> = l.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 2 {
            return Err(perr(n + 2, "expected two columns"));
        }
        freqs.push(num(cols[0], n + 2)?);
        mags.push(num(cols[1], n + 2)?);
    }
    let label = field(&f, "label").unwrap_or("-");
    Ok(Spectrum {
        freqs,
        mags,
        n_fft: parse_count("n_fft")?,
        n_samples: parse_count("n_samples")?,
        label: if label == "-" { String::new() } else { label.to_string() },
    })
}

/// `(bias, frequency, magnitude)` triples, rows ordered by bias then frequency.
pub fn write_spectrum_map<T: Real>(w: &mut impl Write, m: &SpectrumMap<T>) -> Result<(), IoError> {
    writeln!(w, "# bias_a_per_m frequency_hz magnitude")?;
    for (b, row) in m.biases.iter().zip(&m.mags) {
        for (f, v) in m.freqs.iter().zip(row) {
            writeln!(w, "{b:.16e} {f:.16e} {v:.16e}")?;
        }
    }
    Ok(())
}

pub fn read_spectrum_map<T: Real>(r: impl BufRead) -> Result<SpectrumMap<T>, IoError> {
    let mut map = SpectrumMap {
        biases: vec![],
        freqs: vec![],
        mags: vec![],
    };
    for (n, l) in r.lines().enumerate() {
        let l = l?;
        if l.starts_with('#') || l.trim().is_empty() {
            continue;
        }
        let c: Vec<&str> = l.split_whitespace().collect();
        if c.len() != 3 {
            return Err(perr(n + 1, "expected three columns"));
        }
        let (b, f, v): (T, T, T) = (num(c[0], n + 1)?, num(c[1], n + 1)?, num(c[2], n + 1)?);
        if map.biases.last() != Some(&b) {
            map.biases.push(b);
            map.mags.push(vec![]);
        }
        let row = map.mags.last_mut().unwrap();
        if map.biases.len() == 1 {
            map.freqs.push(f);
        } else if map.freqs.get(row.len()) != Some(&f) {
            return Err(perr(n + 1, "frequency grid differs between rows"));
        }
        row.push(v);
    }
    if map.mags.iter().any(|r| r.len() != map.freqs.len()) {
        return Err(perr(0, "ragged spectrum map"));
    }
    Ok(map)
}

pub fn save_dataset<T: Real>(path: &Path, d: &CuratedDataset<T>) -> Result<(), IoError> {
    std::fs::write(path, serde_json::to_string(d)?)?;
    Ok(())
}

pub fn load_dataset<T: Real>(path: &Path) -> Result<CuratedDataset<T>, IoError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe() -> ProbeSeries<f64> {
        ProbeSeries {
            component: Component::Ex,
            at: [0, 0, 7],
            bias: 163_133.8,
            dt: 2.308e-14,
            t0: 1.154e-14,
            samples: vec![0.0, -1.0 / 3.0, 1e-300, 6.02e23, f64::MIN_POSITIVE],
        }
    }

    #[test]
    fn probe_round_trip() {
        let mut buf = Vec::new();
        write_probe(&mut buf, &probe()).unwrap();
        let back: ProbeSeries<f64> = read_probe(&buf[..]).unwrap();
        assert_eq!(back, probe());
        let mut again = Vec::new();
        write_probe(&mut again, &back).unwrap();
        assert_eq!(buf, again);
        let text = String::from_utf8(buf).unwrap();
        // at least nine significant digits per sample
        let second = text.lines().nth(2).unwrap();
        assert!(second.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count() >= 9);
    }

    #[test]
    fn truncated_probe_rejected() {
        let mut buf = Vec::new();
        write_probe(&mut buf, &probe()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(read_probe::<f64>(cut.as_bytes()).is_err());
    }

    #[test]
    fn map_round_trip() {
        let m = SpectrumMap {
            biases: vec![1.0, 2.5],
            freqs: vec![0.0, 1e9, 2e9],
            mags: vec![vec![1.0, 2.0, 3.0], vec![0.1, 0.2, 1.0 / 7.0]],
        };
        let mut buf = Vec::new();
        write_spectrum_map(&mut buf, &m).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 1 + 6);
        let back: SpectrumMap<f64> = read_spectrum_map(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn spectrum_round_trip() {
        let s = Spectrum {
            freqs: vec![0.0, 0.5],
            mags: vec![3.0, 1.0 / 3.0],
            n_fft: 4,
            n_samples: 3,
            label: "Ex".into(),
        };
        let mut buf = Vec::new();
        write_spectrum(&mut buf, &s).unwrap();
        let back: Spectrum<f64> = read_spectrum(&buf[..]).unwrap();
        assert_eq!(back, s);
    }
}
