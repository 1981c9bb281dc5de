use std::path::{Path, PathBuf};

use fcc_core::codec::{
    decode_dataset, reconcile_bits, write_atomic, CompCbnContext, Dataset, Header, Model, Reconciliation,
};
use fcc_core::dist::DistributionFile;
use fcc_core::ufcc::{model_bits_tabcbn, strategy_bits, FcBreakdown, Strategy};

use crate::output::{read_json, CliError, CliResult};

fn load_pool(path: Option<&Path>) -> CliResult<Option<CompCbnContext>> {
    let Some(path) = path else { return Ok(None) };
    let files: Vec<DistributionFile> = read_json(path)?;
    let pool = files
        .into_iter()
        .map(|f| f.into_distribution())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(Some(CompCbnContext { pool }))
}

fn ledger_for(h: &Header, model: &Model, ctx: Option<&CompCbnContext>) -> FcBreakdown {
    match (model, ctx) {
        (Model::TabularCbn(_), _) => {
            model_bits_tabcbn(h.m as u32, h.d as u32, h.n as u32, h.envs as u32).unwrap_or_default()
        }
        (Model::CompCbn(desc), Some(ctx)) => {
            let mut b = FcBreakdown::new();
            if let Ok(bits) = strategy_bits(desc.assignment.len() as u64, ctx.pool.len() as u64, desc.k() as u64, Strategy::Sparse) {
                b.push("sparse selection", bits);
            }
            b
        }
        _ => FcBreakdown::new(),
    }
}

fn print_report(rec: &Reconciliation) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(rec).map_err(|e| CliError::Config(e.to_string()))?);
    Ok(())
}

pub fn encode(input: &Path, output: Option<PathBuf>, pool: Option<&Path>) -> CliResult<()> {
    let ds: Dataset = read_json(input)?;
    let ctx = load_pool(pool)?;
    let header = ds.header();
    let artifact = ds.encode(ctx.as_ref())?;
    let output = output.unwrap_or_else(|| input.with_extension("fcc"));
    write_atomic(&output, &artifact.bytes)?;
    let rec = reconcile_bits(&artifact, &ledger_for(&header, &ds.model, ctx.as_ref()), ctx.as_ref())?;
    eprintln!("wrote {} ({} bytes)", output.display(), artifact.bytes.len());
    print_report(&rec)
}

pub fn decode(input: &Path, output: Option<PathBuf>, pool: Option<&Path>) -> CliResult<()> {
    let bytes = std::fs::read(input).map_err(|e| CliError::Io(format!("{}: {e}", input.display())))?;
    let ctx = load_pool(pool)?;
    let artifact = decode_dataset(&bytes, ctx.as_ref())?;
    let h = artifact.header;
    let ds = Dataset::from(&artifact);
    let output = output.unwrap_or_else(|| input.with_extension("json"));
    let text = serde_json::to_string_pretty(&ds).map_err(|e| CliError::Config(e.to_string()))?;
    write_atomic(&output, text.as_bytes())?;
    let rec = reconcile_bits(&artifact, &ledger_for(&h, &artifact.model, ctx.as_ref()), ctx.as_ref())?;
    eprintln!("wrote {} ({} symbols)", output.display(), ds.data.len());
    print_report(&rec)
}
