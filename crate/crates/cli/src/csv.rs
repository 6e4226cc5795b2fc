use std::fs::File;
use std::path::{Path, PathBuf};

use fedode_core::Error;

/// Append-only CSV file, flushed after every row.
pub struct CsvWriter {
    out: csv::Writer<File>,
    path: PathBuf,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &str) -> Result<Self, Error> {
        let file = File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let mut w = CsvWriter {
            out: csv::Writer::from_writer(file),
            path: path.to_path_buf(),
        };
        w.row(&header.split(',').collect::<Vec<_>>())?;
        Ok(w)
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<(), Error> {
        let io = |e: csv::Error| Error::Io { path: self.path.clone(), source: e.into() };
        self.out.write_record(fields.iter().map(AsRef::as_ref)).map_err(io)?;
        self.out.flush().map_err(|source| Error::Io { path: self.path.clone(), source })
    }
}

/// Renders a header and rows into one CSV string.
pub fn render<S: AsRef<str>>(header: &str, rows: &[Vec<S>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.split(',')).expect("in-memory write");
    for row in rows {
        w.write_record(row.iter().map(AsRef::as_ref)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}
