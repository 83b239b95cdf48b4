//! `ctrsynth`: command-line driver for contract synthesis.
//!
//! Exit codes: 0 verified (or plain success), 1 error, 2 boundedly sound
//! only (or bounded counterexample), 3 template cannot express a leak.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ctrsynth_core::contracts::{ContractAtom, ContractTemplate};
use ctrsynth_core::cores::{build_core, retire_cycles, CoreKind, CoreSpec};
use ctrsynth_core::distinguish::write_classification;
use ctrsynth_core::isa::{parse_int, parse_program, ArchState};
use ctrsynth_core::pipeline::{
    classify, eval_precision, run_synthesis, AtomEntry, PipelineError, RunConfig, SynthesisReport,
};
use ctrsynth_core::testgen::{gen_test_cases, parse_corpus, write_corpus};
use ctrsynth_core::verify::{bmc_check, houdini_verify, BmcResult};
use serde_json::json;

#[derive(Parser)]
#[command(name = "ctrsynth", version, about = "Leakage-contract synthesis for toy pipelined CPUs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the generator seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the core kind.
    #[arg(long, global = true)]
    core: Option<CoreKind>,
    /// Overrides the template, as comma-separated families.
    #[arg(long, global = true)]
    template: Option<String>,
    /// Output file; stdout if omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a test corpus.
    GenTests,
    /// Classify a corpus against the template.
    Classify {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Run the synthesis loop and write the report.
    Synth,
    /// Bounded check of a contract.
    VerifyBounded {
        #[arg(long)]
        contract: PathBuf,
    },
    /// Unbounded (Houdini) check of a contract.
    VerifyUnbounded {
        #[arg(long)]
        contract: PathBuf,
    },
    /// Simulate a program and print its retirement cycles.
    Simulate {
        /// Program in assembly form.
        #[arg(long)]
        program: PathBuf,
        /// Initial register values, e.g. `--reg 3=2`.
        #[arg(long = "reg")]
        regs: Vec<String>,
        /// Cycles to simulate.
        #[arg(long, default_value_t = 100)]
        cycles: usize,
    },
    /// Precision of a contract on the validation corpus.
    EvalPrecision {
        #[arg(long)]
        contract: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let infeasible = e
                .downcast_ref::<PipelineError>()
                .is_some_and(|p| matches!(p, PipelineError::Infeasible { .. }));
            ExitCode::from(if infeasible { 3 } else { 1 })
        }
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let path = c.config.as_ref().context("--config is required for this command")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    // Overrides apply before validation.
    let mut cfg = RunConfig::parse_unvalidated(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(s) = c.seed {
        cfg.gen.seed = s;
    }
    if let Some(k) = c.core {
        cfg.core.kind = k;
    }
    if let Some(t) = &c.template {
        cfg.template = t.split(';').flat_map(split_families).collect();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Families are comma separated, except that `EQk:0,1` keeps its list.
fn split_families(s: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let numeric = tok.chars().all(|c| c.is_ascii_hexdigit() || c == 'x');
        match out.last_mut() {
            Some(last) if numeric && last.to_ascii_uppercase().starts_with("EQK:") => {
                last.push(',');
                last.push_str(tok);
            }
            _ => out.push(tok.to_string()),
        }
    }
    out
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_to(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Reads a contract from a synthesis report or from a file listing one
/// atom (`CLASS:id`) per line.
fn load_contract(path: &Path, tmpl: &ContractTemplate) -> Result<Vec<ContractAtom>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let names: Vec<String> = match serde_json::from_str::<SynthesisReport>(&text) {
        Ok(r) => r.atoms.iter().map(atom_name).collect(),
        Err(_) => text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect(),
    };
    let idx = names
        .iter()
        .map(|n| tmpl.find(n))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(tmpl.subset(&idx))
}

fn atom_name(a: &AtomEntry) -> String {
    format!("{}:{}", a.class.join(","), a.id)
}

fn run(cli: Cli) -> Result<u8> {
    let c = &cli.common;
    match &cli.cmd {
        Cmd::GenTests => {
            let cfg = load_config(c)?;
            let cases = gen_test_cases(&cfg.gen_config()?, &cfg.template()?);
            emit(&c.out, &write_corpus(&cases))?;
        }
        Cmd::Classify { corpus } => {
            let cfg = load_config(c)?;
            let core = build_core(&cfg.core.spec())?;
            let text = fs::read_to_string(corpus).with_context(|| format!("reading {}", corpus.display()))?;
            let cases = parse_corpus(&text)?;
            let recs = classify(&core, &cfg.template()?, &cfg.bmc_config(&core)?, &cases)?;
            emit(&c.out, &write_classification(&recs))?;
        }
        Cmd::Synth => {
            let cfg = load_config(c)?;
            let run = run_synthesis(&cfg)?;
            let json = serde_json::to_string_pretty(&run.report)? + "\n";
            let report_path = c.out.clone().or_else(|| cfg.output.report.clone());
            emit(&report_path, &json)?;
            if let Some(p) = &cfg.output.corpus {
                write_to(p, &write_corpus(&run.corpus))?;
            }
            if let Some(p) = &cfg.output.classification {
                write_to(p, &write_classification(&run.records))?;
            }
            return Ok(if run.report.verified() { 0 } else { 2 });
        }
        Cmd::VerifyBounded { contract } => {
            let cfg = load_config(c)?;
            let core = build_core(&cfg.core.spec())?;
            let atoms = load_contract(contract, &cfg.template()?)?;
            let bmc = cfg.bmc_config(&core)?;
            let res = bmc_check(&core, &atoms, &bmc, &cfg.invariant(&core)?)?;
            let body = match &res {
                BmcResult::Proved { k, b, i } => json!({"proved": true, "k": k, "b": b, "i": i}),
                BmcResult::Counterexample(cex) => json!({
                    "proved": false,
                    "witness": cex.witness,
                    "test": write_corpus(std::slice::from_ref(&cex.test)),
                }),
            };
            emit(&c.out, &(serde_json::to_string_pretty(&body)? + "\n"))?;
            return Ok(if res.is_proved() { 0 } else { 2 });
        }
        Cmd::VerifyUnbounded { contract } => {
            let cfg = load_config(c)?;
            let core = build_core(&cfg.core.spec())?;
            let atoms = load_contract(contract, &cfg.template()?)?;
            let h = houdini_verify(&core, &atoms, &cfg.invariant(&core)?, &cfg.houdini_config()?)?;
            emit(&c.out, &(serde_json::to_string_pretty(&h)? + "\n"))?;
            return Ok(if h.verified() { 0 } else { 2 });
        }
        Cmd::Simulate { program, regs, cycles } => {
            let spec = match &c.config {
                Some(_) => load_config(c)?.core.spec(),
                None => CoreSpec::simulation(c.core.unwrap_or(CoreKind::DivCore)),
            };
            let core = build_core(&spec)?;
            let text = fs::read_to_string(program).with_context(|| format!("reading {}", program.display()))?;
            let prog = parse_program(&text)?;
            let mut s = ArchState::new(spec.width, prog, spec.dmem_words);
            for r in regs {
                let (reg, val) = r.split_once('=').context("--reg expects N=VALUE")?;
                let reg: u8 = reg.trim().trim_start_matches(['x', 'R', 'r']).parse()?;
                if reg == 0 || reg as usize >= s.regs.len() {
                    bail!("register {reg} is not writable");
                }
                s.set_reg(reg, parse_int(val.trim()).map_err(anyhow::Error::msg)? as u64);
            }
            let mut out = String::new();
            for cyc in retire_cycles(&core, &s, *cycles)? {
                out.push_str(&format!("retire cycle {cyc}\n"));
            }
            emit(&c.out, &out)?;
        }
        Cmd::EvalPrecision { contract } => {
            let cfg = load_config(c)?;
            let core = build_core(&cfg.core.spec())?;
            let tmpl = cfg.template()?;
            let atoms = load_contract(contract, &tmpl)?;
            let p = eval_precision(&core, &tmpl, &atoms, &cfg.validation_config()?)?;
            emit(&c.out, &(serde_json::to_string_pretty(&p)? + "\n"))?;
        }
    }
    Ok(0)
}
