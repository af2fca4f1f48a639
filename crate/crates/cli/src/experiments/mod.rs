//! One module per experiment kind. Each writes its CSVs into the output directory and
//! returns the checks that go into verdict.json.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use hermite_ito::rng::{label, stream, StreamRng};
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::config::{ExperimentConfig, Kind};
use crate::error::{CliError, CliResult};
use crate::verdict::Check;

mod brownian;
mod isometry;
mod levy;
mod local_time;
mod operator_checks;
mod purejump;

pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub out: PathBuf,
    pub pool: &'a ThreadPool,
}

impl Context<'_> {
    /// The stream for (experiment, level, path, purpose) under the master seed.
    pub fn rng(&self, level: u64, path: u64, purpose: &str) -> StreamRng {
        stream(
            self.cfg.master_seed,
            &[label(self.cfg.kind.name()), level, path, label(purpose)],
        )
    }

    pub fn create(&self, name: &str) -> CliResult<BufWriter<File>> {
        create_in(&self.out, name)
    }

    /// Runs `f` for every path index on the pool; results come back in path order.
    pub fn per_path<T: Send>(
        &self,
        paths: usize,
        f: impl Fn(usize) -> CliResult<T> + Sync + Send,
    ) -> CliResult<Vec<T>> {
        self.pool.install(|| (0..paths).into_par_iter().map(f).collect())
    }
}

pub fn create_in(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn run_kind(ctx: &Context<'_>) -> CliResult<Vec<Check>> {
    match ctx.cfg.kind {
        Kind::OperatorChecks => operator_checks::run(ctx),
        Kind::IsometryEnumeration => isometry::run(ctx),
        Kind::ItoPurejump => purejump::run(ctx),
        Kind::ItoBrownian => brownian::run(ctx),
        Kind::LocalTime => local_time::run(ctx),
        Kind::LevySpde => levy::run(ctx),
    }
}

pub fn path_file(dir: &str, path: usize) -> String {
    format!("{dir}/path_{path:04}.csv")
}

pub fn uniform_steps(level: u32) -> usize {
    1usize << level
}

pub fn require(cond: bool, msg: impl Into<String>) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg.into()))
    }
}
