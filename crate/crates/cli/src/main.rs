//! `mp` — derive pseudonyms from identifier sets, prove and verify
//! ownership, run multi-organisation simulations, and benchmark.
//!
//! Exit codes: 0 on success (verification accepted), 1 when a verification
//! or scenario check rejects, 2 on usage or input errors.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use merkle_pseudonym::sim;
use merkle_pseudonym::{
    prove, verify, HashSuite, Identifier, KeyStore, OwnershipProof, Protection, Pseudonym,
    PseudonymTree, Verdict,
};
use merkle_pseudonym_cli::bench;

#[derive(Parser)]
#[command(
    name = "mp",
    version,
    about = "Merkle-tree pseudonyms: derive, prove, verify, simulate, benchmark"
)]
struct Cli {
    /// Keystore file (default: ~/.merkle-pseudonym/keys.json)
    #[arg(long, env = "MP_KEYSTORE", global = true)]
    keystore: Option<PathBuf>,

    /// Passphrase protecting the keystore
    #[arg(long, env = "MP_PASSPHRASE", global = true)]
    passphrase: Option<String>,

    /// Use an unencrypted keystore (for tests and throwaway setups)
    #[arg(long, global = true)]
    no_encrypt: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a fresh secret key under a label
    Keygen {
        /// Label for the new key (e.g. the organisation context)
        #[arg(long)]
        label: String,
        /// Hash suite
        #[arg(long, value_enum, default_value_t = SuiteArg::MpSha256)]
        suite: SuiteArg,
    },
    /// List stored key labels (never prints key material)
    Keys,
    /// Pseudonym derivation
    #[command(subcommand)]
    Pseudonym(PseudonymCommand),
    /// Produce an ownership proof for one identifier of a pseudonym
    Prove {
        /// Key label to derive the tree with
        #[arg(long)]
        key_label: String,
        /// JSON array of identifiers; order defines the tree
        #[arg(long)]
        ids_file: PathBuf,
        /// 0-based index of the identifier to prove
        #[arg(long)]
        index: usize,
        /// Output proof file (.mproof)
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify an ownership proof against a pseudonym and an identifier
    Verify(VerifyArgs),
    /// Scenario simulation
    #[command(subcommand)]
    Sim(SimCommand),
    /// Benchmark tree construction and proof verification
    Bench {
        /// Largest number of identifiers to measure
        #[arg(long, default_value_t = 128)]
        max_n: usize,
        /// Hash suite
        #[arg(long, value_enum, default_value_t = SuiteArg::MpSha256)]
        suite: SuiteArg,
        /// Timed repetitions per measurement (after 3 warmups)
        #[arg(long, default_value_t = 20)]
        reps: usize,
        /// Output format
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
    },
}

#[derive(Subcommand)]
enum PseudonymCommand {
    /// Build the tree over an identifier list and emit the pseudonym
    New {
        /// Key label to derive the tree with
        #[arg(long)]
        key_label: String,
        /// JSON array of identifiers; order defines the tree
        #[arg(long)]
        ids_file: PathBuf,
        /// Output file (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct VerifyArgs {
    /// Pseudonym JSON file
    #[arg(long)]
    pseudonym: PathBuf,
    /// Identifier as a JSON object file
    #[arg(long, conflicts_with_all = ["id", "id_domain"])]
    id_json: Option<PathBuf>,
    /// Identifier attributes as a single delimited string
    #[arg(long, requires = "id_domain")]
    id: Option<String>,
    /// Domain label for --id
    #[arg(long)]
    id_domain: Option<String>,
    /// Delimiter splitting --id into attributes
    #[arg(long, default_value = "|")]
    delimiter: String,
    /// Proof file (.mproof)
    #[arg(long)]
    proof: PathBuf,
}

#[derive(Subcommand)]
enum SimCommand {
    /// Execute a scenario file; transcript goes to stdout as JSON lines
    Run {
        scenario: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    #[value(name = "mp-sha256")]
    MpSha256,
    #[value(name = "mp-sha384")]
    MpSha384,
}

impl From<SuiteArg> for HashSuite {
    fn from(arg: SuiteArg) -> Self {
        match arg {
            SuiteArg::MpSha256 => HashSuite::Classical256,
            SuiteArg::MpSha384 => HashSuite::Pq384,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

struct StoreOpts {
    keystore: Option<PathBuf>,
    passphrase: Option<String>,
    no_encrypt: bool,
}

fn run(cli: Cli) -> Result<ExitCode> {
    let store_opts = StoreOpts {
        keystore: cli.keystore,
        passphrase: cli.passphrase,
        no_encrypt: cli.no_encrypt,
    };
    match cli.command {
        Command::Keygen { label, suite } => {
            let mut store = open_keystore(&store_opts)?;
            let record = store.create_key(&label, suite.into())?;
            println!("created key {:?} ({})", record.label, record.suite.token());
            Ok(ExitCode::SUCCESS)
        }
        Command::Keys => {
            let store = open_keystore(&store_opts)?;
            for entry in store.list_keys() {
                println!("{}\t{}\t{}", entry.label, entry.suite, entry.created_at.to_rfc3339());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Pseudonym(PseudonymCommand::New {
            key_label,
            ids_file,
            out,
        }) => {
            let mut store = open_keystore(&store_opts)?;
            let tree = build_tree(&mut store, &key_label, &ids_file)?;
            let json = tree.root().to_json();
            match out {
                Some(path) => fs::write(&path, &json)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => println!("{json}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Prove {
            key_label,
            ids_file,
            index,
            out,
        } => {
            let mut store = open_keystore(&store_opts)?;
            let tree = build_tree(&mut store, &key_label, &ids_file)?;
            let proof = prove(&tree, index)?;
            fs::write(&out, proof.to_json())
                .with_context(|| format!("writing {}", out.display()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(args) => {
            let pseudonym_text = read_text(&args.pseudonym)?;
            let pseudonym = Pseudonym::from_json(&pseudonym_text)?;
            let identifier = load_identifier(&args)?;
            let proof_text = read_text(&args.proof)?;
            let proof = OwnershipProof::from_json(&proof_text)?;
            match verify(&pseudonym, &identifier, &proof) {
                Verdict::Accept => {
                    println!("accept");
                    Ok(ExitCode::SUCCESS)
                }
                Verdict::Reject(reason) => {
                    println!("reject: {reason}");
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Sim(SimCommand::Run { scenario }) => {
            let text = read_text(&scenario)?;
            let parsed = sim::parse_scenario(&text)?;
            match sim::run_scenario(&parsed) {
                Ok(run) => {
                    print!("{}", run.transcript.to_jsonl());
                    match run.leakage_audit() {
                        Ok(()) => {
                            eprintln!(
                                "scenario ok: {} events, leakage audit clean",
                                run.transcript.events.len()
                            );
                            Ok(ExitCode::SUCCESS)
                        }
                        Err(violation) => {
                            eprintln!("scenario failed: {violation}");
                            Ok(ExitCode::from(1))
                        }
                    }
                }
                Err(e) if e.step.is_some() => {
                    // The script ran but an expectation or step failed.
                    eprintln!("scenario failed: {e}");
                    Ok(ExitCode::from(1))
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Bench {
            max_n,
            suite,
            reps,
            format,
        } => {
            let report = bench::run_bench(max_n, suite.into(), reps)?;
            match format {
                FormatArg::Csv => print!("{}", report.to_csv()),
                FormatArg::Json => println!("{}", report.to_json()),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn open_keystore(cli: &StoreOpts) -> Result<KeyStore> {
    let path = match &cli.keystore {
        Some(path) => path.clone(),
        None => {
            let home = std::env::var_os("HOME")
                .ok_or_else(|| anyhow!("HOME is unset; pass --keystore or set MP_KEYSTORE"))?;
            PathBuf::from(home).join(".merkle-pseudonym").join("keys.json")
        }
    };
    let protection = match (&cli.passphrase, cli.no_encrypt) {
        (Some(_), true) => bail!("--passphrase and --no-encrypt are mutually exclusive"),
        (Some(pass), false) => Protection::Passphrase(pass.clone()),
        (None, true) => Protection::Plaintext,
        (None, false) => bail!(
            "keystore protection not specified: pass --passphrase (or MP_PASSPHRASE) \
             or opt out with --no-encrypt"
        ),
    };
    Ok(KeyStore::open(path, protection)?)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_ids(path: &Path) -> Result<Vec<Identifier>> {
    let text = read_text(path)?;
    let ids: Vec<Identifier> = serde_json::from_str(&text)
        .with_context(|| format!("parsing identifier list {}", path.display()))?;
    if ids.is_empty() {
        bail!("identifier list {} is empty", path.display());
    }
    Ok(ids)
}

/// Builds the tree for a stored key over an identifier file, warning when
/// the identifier set differs from the one previously used with the key.
fn build_tree(store: &mut KeyStore, key_label: &str, ids_file: &Path) -> Result<PseudonymTree> {
    let ids = load_ids(ids_file)?;
    let record = store.get_key(key_label)?;
    let suite = record.suite;
    let key = record.key.clone();

    let fingerprints: Vec<_> = ids.iter().map(|id| suite.hash(&id.encode())).collect();
    let stored = record.identifier_fingerprints.clone();
    if !stored.is_empty() && stored != fingerprints {
        eprintln!(
            "warning: identifier set differs from the one previously used with key {key_label:?}; \
             this derives a different pseudonym"
        );
    } else if stored.is_empty() {
        store.set_fingerprints(key_label, fingerprints)?;
    }

    Ok(PseudonymTree::build(suite, key, ids)?)
}

fn load_identifier(args: &VerifyArgs) -> Result<Identifier> {
    match (&args.id_json, &args.id) {
        (Some(path), None) => {
            let text = read_text(path)?;
            let id: Identifier = serde_json::from_str(&text)
                .with_context(|| format!("parsing identifier {}", path.display()))?;
            Ok(id)
        }
        (None, Some(joined)) => {
            let domain = args
                .id_domain
                .as_deref()
                .ok_or_else(|| anyhow!("--id requires --id-domain"))?;
            if args.delimiter.is_empty() {
                bail!("--delimiter must not be empty");
            }
            let attrs: Vec<&str> = joined.split(args.delimiter.as_str()).collect();
            Ok(Identifier::from_strings(domain, &attrs)?)
        }
        (None, None) => bail!("provide the identifier via --id-json or --id/--id-domain"),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with enforces exclusivity"),
    }
}
