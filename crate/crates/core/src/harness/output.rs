//! CSV emission (9 significant digits, `\n` line endings) and matching
//! readers, plus optional gnuplot scripts.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::sim::{FringePoint, InsetPoint, LogEntry};
use crate::detection::CountRecord;
use crate::error::{Error, Result};

pub const TIMESERIES_HEADER: &str =
    "t_start_s,duration_s,counts_d1,counts_d2,mean_pd_level,control_enabled,pm_voltage_v";
pub const FRINGE_HEADER: &str = "voltage_v,mean_d1,sd_d1,mean_d2,sd_d2";
pub const INSET_HEADER: &str = "delay_ns,envelope_factor,pm_phase_rad,expected_d1,counts_d1";
pub const EVENTS_HEADER: &str = "time_s,event,detail";

/// Format with 9 significant digits, `%g` style.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn write_lines(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut buf = String::with_capacity(4096);
    buf.push_str(header);
    buf.push('\n');
    for row in rows {
        buf.push_str(&row);
        buf.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_timeseries_csv(records: &[CountRecord], path: &Path) -> Result<()> {
    write_lines(
        path,
        TIMESERIES_HEADER,
        records.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                sig9(r.t_start),
                sig9(r.duration),
                r.counts_d1,
                r.counts_d2,
                sig9(r.mean_pd_level),
                u8::from(r.control_enabled),
                sig9(r.pm_voltage)
            )
        }),
    )
}

pub fn write_fringe_csv(points: &[FringePoint], path: &Path) -> Result<()> {
    write_lines(
        path,
        FRINGE_HEADER,
        points.iter().map(|p| {
            format!(
                "{},{},{},{},{}",
                sig9(p.voltage),
                sig9(p.mean_d1),
                sig9(p.sd_d1),
                sig9(p.mean_d2),
                sig9(p.sd_d2)
            )
        }),
    )
}

pub fn write_inset_csv(points: &[InsetPoint], path: &Path) -> Result<()> {
    write_lines(
        path,
        INSET_HEADER,
        points.iter().map(|p| {
            format!(
                "{},{},{},{},{}",
                sig9(p.delay_ns),
                sig9(p.envelope_factor),
                sig9(p.pm_phase),
                sig9(p.expected_d1),
                sig9(p.counts_d1)
            )
        }),
    )
}

pub fn write_events_csv(events: &[LogEntry], path: &Path) -> Result<()> {
    write_lines(
        path,
        EVENTS_HEADER,
        events
            .iter()
            .map(|e| format!("{},{},\"{}\"", sig9(e.time), e.kind, e.detail.replace('"', "'"))),
    )
}

fn read_rows(path: &Path, header: &str) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("{}: expected header `{header}`", path.display()),
            })
        }
    }
    Ok(lines.map(|(_, l)| l.split(',').map(str::to_string).collect()).collect())
}

fn num<T: std::str::FromStr>(row: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line: row + 2,
        message: format!("bad number `{s}`"),
    })
}

pub fn read_timeseries_csv(path: &Path) -> Result<Vec<CountRecord>> {
    read_rows(path, TIMESERIES_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.len() != 7 {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("expected 7 columns, got {}", r.len()),
                });
            }
            Ok(CountRecord {
                t_start: num(i, &r[0])?,
                duration: num(i, &r[1])?,
                counts_d1: num(i, &r[2])?,
                counts_d2: num(i, &r[3])?,
                mean_pd_level: num(i, &r[4])?,
                control_enabled: num::<u8>(i, &r[5])? != 0,
                pm_voltage: num(i, &r[6])?,
            })
        })
        .collect()
}

/// Fringe rows as `[voltage, mean_d1, sd_d1, mean_d2, sd_d2]`.
pub fn read_fringe_csv(path: &Path) -> Result<Vec<[f64; 5]>> {
    read_rows(path, FRINGE_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.len() != 5 {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("expected 5 columns, got {}", r.len()),
                });
            }
            Ok([
                num(i, &r[0])?,
                num(i, &r[1])?,
                num(i, &r[2])?,
                num(i, &r[3])?,
                num(i, &r[4])?,
            ])
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn timeseries_gnuplot(csv_name: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set xlabel 'time (s)'\nset ylabel 'counts/s'\n\
         plot '{csv_name}' using 1:($3/$2) with lines title 'D1', \\\n     \
         '{csv_name}' using 1:($4/$2) with lines title 'D2'\n"
    )
}

pub fn fringe_gnuplot(csv_name: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set xlabel 'PM drive (V)'\nset ylabel 'counts/s'\n\
         plot '{csv_name}' using 1:2:3 with yerrorbars title 'D1', \\\n     \
         '{csv_name}' using 1:4:5 with yerrorbars title 'D2'\n"
    )
}

pub fn inset_gnuplot(csv_name: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set xlabel 'gate delay (ns)'\nset ylabel 'D1 counts/s'\n\
         plot '{csv_name}' using 1:5 with points title 'sampled', \\\n     \
         '{csv_name}' using 1:4 with lines title 'expected'\n"
    )
}
