use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cohort_core::synth::{claims_schema, generate_claims, rows_to_text, ClaimsConfig};
use cohort_ingest::{prepare_file, write_containers, ImportDescriptor, IngestError, OnError, Options, ResolvedDescriptor};

#[derive(Parser)]
#[command(name = "ingest", version, about = "Validate and preprocess raw event files into import containers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    descriptor: PathBuf,
    /// Defaults to the descriptor's `source`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Overrides the descriptor's dataset file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Field delimiter; detected among ';', ',' and tab when absent.
    #[arg(long)]
    delimiter: Option<char>,
    #[arg(long)]
    import_id: Option<String>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Skip the gzip comparison.
    #[arg(long)]
    no_gzip: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, encode and write one container per bucket.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "fail")]
        on_error: OnError,
    },
    /// Check the input against the descriptor and print the report only.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic claims-like file and a matching descriptor.
    Synth {
        #[arg(long, default_value_t = 10_000)]
        entities: usize,
        #[arg(long, default_value_t = 1_000_000)]
        events: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<(ResolvedDescriptor, PathBuf), IngestError> {
    let resolved = ImportDescriptor::load(&common.descriptor, common.dataset.as_deref())?;
    let input = match (&common.input, &resolved.descriptor.source) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => resolved.base.join(p),
        (None, None) => return Err(IngestError::Invalid(vec!["no --input and no source in the descriptor".into()])),
    };
    Ok((resolved, input))
}

fn options(common: &Common, on_error: OnError, collect_all: bool) -> Result<Options, IngestError> {
    let delimiter = match common.delimiter {
        Some(c) if c.is_ascii() => Some(c as u8),
        Some(c) => return Err(IngestError::Invalid(vec![format!("delimiter '{c}' is not a single byte")])),
        None => None,
    };
    Ok(Options {
        on_error,
        delimiter,
        import_id: common.import_id.clone(),
        collect_all,
        no_gzip: common.no_gzip,
    })
}

fn print(report: &cohort_ingest::Report, json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(report).expect("report serializes"));
    } else {
        print!("{report}");
    }
}

fn synth(entities: usize, events: usize, seed: u64, out: &std::path::Path) -> Result<(), IngestError> {
    std::fs::create_dir_all(out).map_err(|e| IngestError::io(out, e))?;
    let schema = claims_schema();
    let rows = generate_claims(ClaimsConfig { entities, events, seed });
    let text = rows_to_text(&rows, &schema, "pid", ';');
    let data = out.join("claims.csv");
    std::fs::write(&data, text).map_err(|e| IngestError::io(&data, e))?;
    let dataset = serde_json::json!({"name": "claims", "bucketCount": 100, "tables": [schema]});
    let dataset_path = out.join("dataset.json");
    std::fs::write(&dataset_path, serde_json::to_string_pretty(&dataset).unwrap()).map_err(|e| IngestError::io(&dataset_path, e))?;
    let descriptor = serde_json::json!({
        "table": "claims", "dataset": "dataset.json", "source": "claims.csv", "entity": "pid",
        "columns": schema.columns.iter().map(|c| serde_json::json!({"column": c.name, "source": c.name})).collect::<Vec<_>>()
    });
    let descriptor_path = out.join("claims.import.json");
    std::fs::write(&descriptor_path, serde_json::to_string_pretty(&descriptor).unwrap())
        .map_err(|e| IngestError::io(&descriptor_path, e))?;
    println!("wrote {} rows to {}", rows.len(), data.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), IngestError> {
    match cli.command {
        Command::Preprocess { common, out, on_error } => {
            let (resolved, input) = load(&common)?;
            let options = options(&common, on_error, false)?;
            let mut prepared = match prepare_file(&resolved, &input, &options) {
                Ok(p) => p,
                Err(IngestError::Rows(errors)) => {
                    for e in &errors {
                        eprintln!("{e}");
                    }
                    return Err(IngestError::Rows(errors));
                }
                Err(e) => return Err(e),
            };
            write_containers(&mut prepared, &out)?;
            print(&prepared.report, common.json);
            Ok(())
        }
        Command::Validate { common } => {
            let (resolved, input) = load(&common)?;
            let options = options(&common, OnError::Skip, true)?;
            let prepared = prepare_file(&resolved, &input, &options)?;
            print(&prepared.report, common.json);
            if prepared.report.errors.is_empty() {
                Ok(())
            } else {
                Err(IngestError::Rows(prepared.report.errors))
            }
        }
        Command::Synth { entities, events, seed, out } => synth(entities, events, seed, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(IngestError::Rows(errors)) => {
            eprintln!("{} bad rows", errors.len());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
