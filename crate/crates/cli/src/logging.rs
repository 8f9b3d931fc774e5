//! Log to stderr and the command's `run.log` at once.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use sodalab::{Error, Result};

struct Tee(File);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write_all(buf)?;
        io::stderr().write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()?;
        io::stderr().flush()
    }
}

/// No timestamps, so logs of identical runs are byte-identical.
pub fn init(path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .target(env_logger::Target::Pipe(Box::new(Tee(file))))
        .try_init()
        .map_err(|e| Error::Config(format!("logger: {e}")))
}
