//! On-disk layout of a data directory, shared by the server and the CLI.
//!
//! ```text
//! <data_dir>/store/           tables (WAL, MANIFEST, segments)
//! <data_dir>/archive.tsv      every kept record, appended in arrival order
//! <data_dir>/heightmap.json   HeightGrid
//! <data_dir>/heightmap.tsv    the same heights as a plain matrix
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use luminocity::ingest::{ingest_stream, read_tsv, to_tsv_with, TsvLoadError};
use luminocity::{GeoKeyFormat, GridSpec, HeightGrid, IngestStats, TableSet};

use crate::ServiceError;

pub const STORE_DIR: &str = "store";
pub const ARCHIVE_TSV: &str = "archive.tsv";
pub const HEIGHTMAP_JSON: &str = "heightmap.json";
pub const HEIGHTMAP_TSV: &str = "heightmap.tsv";

#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn archive_path(&self) -> PathBuf {
        self.root.join(ARCHIVE_TSV)
    }

    pub fn heightmap_path(&self) -> PathBuf {
        self.root.join(HEIGHTMAP_JSON)
    }

    pub fn open_store(&self, fmt: GeoKeyFormat) -> Result<TableSet, ServiceError> {
        TableSet::open(self.root.join(STORE_DIR), fmt).map_err(ServiceError::Store)
    }

    /// The saved height grid, if any. A grid built for another spec is an
    /// error rather than something to silently resample.
    pub fn load_heightmap(&self, spec: &GridSpec) -> Result<Option<HeightGrid>, ServiceError> {
        let path = self.heightmap_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let hg: HeightGrid = serde_json::from_str(&text)
            .map_err(|e| ServiceError::Heightmap(format!("{}: {e}", path.display())))?;
        if hg.spec != *spec || hg.heights.len() != spec.cell_count() {
            return Err(ServiceError::Heightmap(format!(
                "{} was built for a {}x{} grid over {:?}, configured grid is {}x{} over {:?}",
                path.display(),
                hg.spec.nrows,
                hg.spec.ncols,
                hg.spec.bbox,
                spec.nrows,
                spec.ncols,
                spec.bbox
            )));
        }
        Ok(Some(hg))
    }

    /// Writes `heightmap.json` and `heightmap.tsv`, each via rename.
    pub fn save_heightmap(&self, hg: &HeightGrid) -> Result<(), ServiceError> {
        fs::create_dir_all(&self.root)?;
        let json = serde_json::to_vec(hg).map_err(|e| ServiceError::Heightmap(e.to_string()))?;
        write_atomic(&self.heightmap_path(), &json)?;
        let mut tsv = Vec::new();
        hg.write_tsv(&mut tsv)?;
        write_atomic(&self.root.join(HEIGHTMAP_TSV), &tsv)?;
        Ok(())
    }

    /// Parses feed lines into the store, archiving kept records as TSV.
    pub fn ingest_lines<L: AsRef<str>>(
        &self,
        store: &TableSet,
        lines: impl IntoIterator<Item = L>,
    ) -> Result<IngestStats, ServiceError> {
        fs::create_dir_all(&self.root)?;
        let file = OpenOptions::new().create(true).append(true).open(self.archive_path())?;
        let mut archive = BufWriter::new(file);
        let frac = store.format().frac_digits;
        let stats = ingest_stream(lines, |rec| -> Result<(), ServiceError> {
            store.put_record(&rec)?;
            archive.write_all(to_tsv_with(&rec, frac).as_bytes())?;
            Ok(())
        })?;
        archive.flush()?;
        store.sync()?;
        Ok(stats)
    }

    /// Bulk-loads TSV records (the archive format) into the store and the
    /// archive. Returns the number of records loaded.
    pub fn load_tsv(&self, store: &TableSet, reader: impl BufRead) -> Result<u64, ServiceError> {
        fs::create_dir_all(&self.root)?;
        let file = OpenOptions::new().create(true).append(true).open(self.archive_path())?;
        let mut archive = BufWriter::new(file);
        let frac = store.format().frac_digits;
        let n = read_tsv(reader, |rec| -> Result<(), ServiceError> {
            store.put_record(&rec)?;
            archive.write_all(to_tsv_with(&rec, frac).as_bytes())?;
            Ok(())
        })
        .map_err(|e| match e {
            TsvLoadError::Io(e) => ServiceError::Io(e),
            TsvLoadError::Sink(e) => e,
            malformed => ServiceError::Input(malformed.to_string()),
        })?;
        archive.flush()?;
        store.sync()?;
        Ok(n)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
