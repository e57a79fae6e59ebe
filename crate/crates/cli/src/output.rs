use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::config::Resolved;

/// CSV file with a provenance comment line followed by the header row.
pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvSink {
    pub fn create(run: &Resolved, name: &str, header: &[&str]) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
        let path = run.out.join(name);
        let mut file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(file, "# config_hash={} seed={}", run.hash, run.seed)?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header)?;
        Ok(Self { path, writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> anyhow::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<PathBuf> {
        self.writer.flush()?;
        log::info!("wrote {}", self.path.display());
        Ok(self.path)
    }
}

/// Shortest round-trip decimal rendering.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x}")
    }
}

pub fn write_text(dir: &Path, name: &str, body: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Shared preamble of the generated plotting scripts.
pub const PLOT_PREAMBLE: &str = r##"#!/usr/bin/env python3
# Generated by greenbrown. Requires matplotlib.
import csv
import os
import sys

import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def read(name):
    with open(os.path.join(HERE, name), newline="") as f:
        rows = [r for r in csv.reader(f) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    return header, body


def column(header, body, name, cast=float):
    i = header.index(name)
    return [cast(r[i]) for r in body]
"##;
