use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

/// CSV report with a `# schema: <name> v<N>` line and optional `# key: value`
/// comment lines ahead of the header row.
pub struct Report {
    csv: csv::Writer<Box<dyn Write>>,
}

pub const SCHEMA_VERSION: u32 = 1;

impl Report {
    pub fn create(out: Option<&Path>, schema: &str, meta: &[(&str, String)], header: &[&str]) -> io::Result<Self> {
        let mut sink: Box<dyn Write> = match out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        };
        writeln!(sink, "# schema: {schema} v{SCHEMA_VERSION}")?;
        for (k, v) in meta {
            writeln!(sink, "# {k}: {}", v.replace('\n', " "))?;
        }
        let mut csv = csv::Writer::from_writer(sink);
        csv.write_record(header)?;
        Ok(Report { csv })
    }

    pub fn row<I, S>(&mut self, fields: I) -> io::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.csv.write_record(fields).map_err(io::Error::from)
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.csv.flush()
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}
