use std::path::PathBuf;

use clap::Args;

use crate::error::CliResult;
use crate::fit_cmd::ensure_dir;
use crate::ingest::read_dataset;
use crate::report::{self, SavedFit};

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// `fit.json` written by `stratfit fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// The case CSV the fit was run on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Rewrite the trace, posterior histogram and marginal fit files from a
/// saved fit without refitting.
pub fn run(args: &DiagnoseArgs) -> CliResult<()> {
    let mut saved = SavedFit::load(&args.fit)?;
    let dataset = read_dataset(&args.data, saved.ingest)?;
    saved.fit.refresh_posterior(&dataset)?;
    ensure_dir(&args.out)?;
    report::write_diagnostics(&saved.fit, &dataset, &args.out)?;
    Ok(())
}
