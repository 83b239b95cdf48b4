//! The synthesis loop: generate and classify a corpus, solve the ILP, check
//! the candidate with BMC, feed counterexamples back, and finally attempt an
//! unbounded proof.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::contracts::{parse_families, ContractAtom, ContractError, ContractTemplate};
use crate::cores::{build_core, Core, CoreError, CoreKind, CoreSpec};
use crate::distinguish::{
    arch_horizon, attacker_distinguishable, characterize, contract_distinguishable, cycle_horizon,
    distinguishes, DistRecord,
};
use crate::ilp::{build_ilp, solve_exact, IlpError, IlpVariant};
use crate::isa::Opcode;
use crate::testgen::{gen_test_cases, GenConfig, GenError, Provenance, TestCase};
use crate::verify::{
    bmc_check, default_invariant, houdini_verify, monitor_window, BmcConfig, BmcError, HoudiniConfig, HoudiniError,
    HoudiniResult, PredicateError, StatePredicate, Verdict,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Predicate(#[from] PredicateError),
    #[error(transparent)]
    Bmc(#[from] BmcError),
    #[error(transparent)]
    Houdini(#[from] HoudiniError),
    #[error("template cannot express the leak of test case {case}")]
    Infeasible {
        case: usize,
        test: Option<Box<TestCase>>,
        source: IlpError,
    },
    #[error("no proved contract after {0} iterations")]
    IterationCap(usize),
    #[error("iteration {0}: counterexample does not rule out the current contract")]
    NoProgress(usize),
}

/// Core selection; unset sizes fall back to the verification preset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreSection {
    pub kind: CoreKind,
    pub width: Option<u32>,
    pub imem_cap: Option<usize>,
    pub dmem_words: Option<usize>,
    pub div_latency: Option<u32>,
}

impl CoreSection {
    pub fn spec(&self) -> CoreSpec {
        let base = CoreSpec::verification(self.kind);
        CoreSpec::new(
            self.kind,
            self.width.unwrap_or(base.width),
            self.imem_cap.unwrap_or(base.imem_cap),
            self.dmem_words.unwrap_or(base.dmem_words),
            self.div_latency.unwrap_or(base.div_latency),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    #[serde(default = "one")]
    pub seed: u64,
    #[serde(default = "hundred")]
    pub count: usize,
    #[serde(default = "one_usize")]
    pub len_min: usize,
    pub len_max: Option<usize>,
    /// Opcode mnemonic to weight; every opcode but NOP with weight 1 if
    /// empty.
    #[serde(default)]
    pub mix: BTreeMap<String, u32>,
}

impl Default for GenSection {
    fn default() -> Self {
        GenSection {
            seed: 1,
            count: 100,
            len_min: 1,
            len_max: None,
            mix: BTreeMap::new(),
        }
    }
}

fn one() -> u64 {
    1
}
fn one_usize() -> usize {
    1
}
fn hundred() -> usize {
    100
}
fn ten_k() -> usize {
    10_000
}
fn ten() -> usize {
    10
}
fn yes() -> bool {
    true
}

/// Overrides of the default bounds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BmcSection {
    pub k: Option<usize>,
    pub b: Option<usize>,
    pub i: Option<usize>,
    pub conflict_budget: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Predicates assumed in every frame, on top of the default invariant.
    #[serde(default)]
    pub invariant: Vec<String>,
    /// Extra Houdini candidates.
    #[serde(default)]
    pub houdini_extra: Vec<String>,
    pub houdini_lookahead: Option<usize>,
    /// Run the unbounded phase.
    #[serde(default = "yes")]
    pub houdini: bool,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            invariant: Vec::new(),
            houdini_extra: Vec::new(),
            houdini_lookahead: None,
            houdini: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    #[serde(default = "ten_k")]
    pub count: usize,
    #[serde(default = "one")]
    pub seed: u64,
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection { count: 10_000, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "ten")]
    pub max_iterations: usize,
    #[serde(default = "xor")]
    pub ilp: IlpVariant,
}

fn xor() -> IlpVariant {
    IlpVariant::Xor
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            max_iterations: 10,
            ilp: IlpVariant::Xor,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub report: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub classification: Option<PathBuf>,
}

/// A full run, read from TOML.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub core: CoreSection,
    /// Template families, e.g. `["B", "A", "BT", "V", "EQk:0,1"]`.
    pub template: Vec<String>,
    #[serde(default)]
    pub gen: GenSection,
    #[serde(default)]
    pub bmc: BmcSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub validation: ValidationSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let cfg = Self::parse_unvalidated(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_unvalidated(text: &str) -> Result<Self, PipelineError> {
        Ok(toml::from_str(text)?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.run.max_iterations < 1 {
            return Err(PipelineError::Config("max_iterations must be at least 1".into()));
        }
        if self.template.is_empty() {
            return Err(PipelineError::Config("template needs at least one family".into()));
        }
        let spec = self.core.spec();
        spec.validate()?;
        self.gen_config()?.validate()?;
        let len_max = self.gen_config()?.len_max;
        if len_max > spec.imem_cap {
            return Err(PipelineError::Config(format!(
                "programs of {len_max} instructions exceed the instruction memory of {}",
                spec.imem_cap
            )));
        }
        self.bmc_config(&build_core(&spec)?)?;
        self.invariant(&build_core(&spec)?)?;
        Ok(())
    }

    /// Generator settings; width and memory size follow the core.
    pub fn gen_config(&self) -> Result<GenConfig, PipelineError> {
        let spec = self.core.spec();
        let mix = if self.gen.mix.is_empty() {
            Opcode::ALL
                .iter()
                .filter(|&&o| o != Opcode::Nop)
                .map(|&o| (o, 1))
                .collect()
        } else {
            self.gen
                .mix
                .iter()
                .map(|(m, &w)| {
                    m.parse::<Opcode>()
                        .map(|o| (o, w))
                        .map_err(|e| PipelineError::Config(format!("gen.mix: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        Ok(GenConfig {
            seed: self.gen.seed,
            count: self.gen.count,
            len_min: self.gen.len_min,
            len_max: self.gen.len_max.unwrap_or(spec.imem_cap),
            width: spec.width,
            dmem_words: spec.dmem_words,
            mix,
            imem_cap: Some(spec.imem_cap),
        })
    }

    pub fn validation_config(&self) -> Result<GenConfig, PipelineError> {
        Ok(GenConfig {
            seed: self.validation.seed,
            count: self.validation.count,
            ..self.gen_config()?
        })
    }

    pub fn universe(&self) -> Result<Vec<Opcode>, PipelineError> {
        Ok(self.gen_config()?.universe())
    }

    pub fn template(&self) -> Result<ContractTemplate, PipelineError> {
        let fams = parse_families(&self.template)?;
        let t = crate::contracts::builtin_template(&fams, &self.universe()?);
        Ok(ContractTemplate::new(t.atoms)?)
    }

    pub fn bmc_config(&self, core: &Core) -> Result<BmcConfig, PipelineError> {
        let d = BmcConfig::for_core(core);
        let cfg = BmcConfig {
            k: self.bmc.k.unwrap_or(d.k),
            b: self.bmc.b.unwrap_or(d.b),
            i: self.bmc.i.unwrap_or(d.i),
            max_retire: d.max_retire,
            conflict_budget: self.bmc.conflict_budget,
        };
        cfg.validate().map_err(PipelineError::Config)?;
        Ok(cfg)
    }

    /// Default invariant plus the configured predicates.
    pub fn invariant(&self, core: &Core) -> Result<Vec<StatePredicate>, PipelineError> {
        let mut inv = default_invariant(core, &self.universe()?);
        for s in &self.verify.invariant {
            inv.push(s.parse()?);
        }
        Ok(inv)
    }

    pub fn houdini_config(&self) -> Result<HoudiniConfig, PipelineError> {
        Ok(HoudiniConfig {
            lookahead: self.verify.houdini_lookahead,
            conflict_budget: self.bmc.conflict_budget,
            extra: self
                .verify
                .houdini_extra
                .iter()
                .map(|s| s.parse())
                .collect::<Result<_, _>>()?,
            universe: Some(self.universe()?),
        })
    }
}

/// Retirement and cycle horizons used to classify a case. A counterexample
/// is judged on the window BMC established: the joint retirements the
/// monitor compared and the first `b` cycles.
pub fn case_horizons(core: &Core, bmc: &BmcConfig, t: &TestCase) -> Result<(usize, usize), PipelineError> {
    match t.provenance {
        Provenance::Counterexample(_) => {
            let (_, compared) = monitor_window(core, bmc, t)?.ok_or_else(|| {
                PipelineError::Config("counterexample does not violate the monitor under these bounds".into())
            })?;
            Ok((compared, bmc.b))
        }
        _ => Ok((arch_horizon(t), cycle_horizon(core, t))),
    }
}

/// Characterizes a corpus in parallel.
pub fn classify(
    core: &Core,
    tmpl: &ContractTemplate,
    bmc: &BmcConfig,
    cases: &[TestCase],
) -> Result<Vec<DistRecord>, PipelineError> {
    cases
        .par_iter()
        .map(|t| {
            let (h, n) = case_horizons(core, bmc, t)?;
            Ok(characterize(core, tmpl, t, h, n)?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    pub tp: usize,
    pub fp: usize,
    pub cases: usize,
    /// `tp / (tp + fp)`, or 1 when no case is contract distinguishable.
    pub precision: f64,
}

/// Precision of `atoms` on a validation corpus generated from `vcfg` with
/// the modifiers of `tmpl`.
pub fn eval_precision(
    core: &Core,
    tmpl: &ContractTemplate,
    atoms: &[ContractAtom],
    vcfg: &GenConfig,
) -> Result<Precision, CoreError> {
    let cases = gen_test_cases(vcfg, tmpl);
    precision_on(core, atoms, &cases)
}

pub fn precision_on(core: &Core, atoms: &[ContractAtom], cases: &[TestCase]) -> Result<Precision, CoreError> {
    let flags: Vec<(bool, bool)> = cases
        .par_iter()
        .map(|t| {
            let c = contract_distinguishable(atoms, t, arch_horizon(t));
            let a = if c {
                attacker_distinguishable(core, t, cycle_horizon(core, t))?
            } else {
                false
            };
            Ok((c, a))
        })
        .collect::<Result<_, CoreError>>()?;
    let tp = flags.iter().filter(|&&(c, a)| c && a).count();
    let fp = flags.iter().filter(|&&(c, a)| c && !a).count();
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    Ok(Precision {
        tp,
        fp,
        cases: cases.len(),
        precision,
    })
}

/// An atom as (opcode class, leakage id).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomEntry {
    pub class: Vec<String>,
    pub id: String,
}

impl From<&ContractAtom> for AtomEntry {
    fn from(a: &ContractAtom) -> Self {
        AtomEntry {
            class: a.class.iter().map(|o| o.mnemonic().to_string()).collect(),
            id: a.id().to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub generate: f64,
    pub classify: f64,
    pub ilp: f64,
    pub bmc: f64,
    pub houdini: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub atoms: Vec<String>,
    pub fp_count: usize,
    /// Corpus index of the counterexample found this iteration.
    pub counterexample: Option<usize>,
    pub ilp_secs: f64,
    pub bmc_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnboundedVerdict {
    pub verdict: Verdict,
    pub retained: Vec<String>,
    pub candidates: usize,
}

impl From<&HoudiniResult> for UnboundedVerdict {
    fn from(h: &HoudiniResult) -> Self {
        UnboundedVerdict {
            verdict: h.verdict,
            retained: h.retained.clone(),
            candidates: h.candidates.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub core: CoreSpec,
    pub template: Vec<String>,
    pub template_size: usize,
    pub iterations: usize,
    pub bmc_bound: usize,
    pub atk_bound: usize,
    pub instr_bound: usize,
    pub phase_times: PhaseTimes,
    /// Atoms in the final contract.
    pub n_atoms: usize,
    pub precision: Option<Precision>,
    pub atoms: Vec<AtomEntry>,
    pub log: Vec<IterationLog>,
    pub corpus_size: usize,
    pub attacker_distinguishable: usize,
    pub bounded_proved: bool,
    pub unbounded: Option<UnboundedVerdict>,
}

impl SynthesisReport {
    pub fn verified(&self) -> bool {
        matches!(&self.unbounded, Some(u) if u.verdict == Verdict::Verified)
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SynthesisRun {
    pub report: SynthesisReport,
    pub template: ContractTemplate,
    /// Final contract as template indices.
    pub selected: Vec<usize>,
    pub corpus: Vec<TestCase>,
    pub records: Vec<DistRecord>,
    pub houdini: Option<HoudiniResult>,
}

impl SynthesisRun {
    pub fn contract(&self) -> Vec<ContractAtom> {
        self.template.subset(&self.selected)
    }
}

/// Options that only matter to callers embedding the loop.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Cases placed before the generated corpus.
    pub seed_corpus: Vec<TestCase>,
    pub skip_precision: bool,
}

pub fn run_synthesis(cfg: &RunConfig) -> Result<SynthesisRun, PipelineError> {
    run_synthesis_with(cfg, &RunOptions::default())
}

pub fn run_synthesis_with(cfg: &RunConfig, opts: &RunOptions) -> Result<SynthesisRun, PipelineError> {
    cfg.validate()?;
    let core = build_core(&cfg.core.spec())?;
    let tmpl = cfg.template()?;
    let gen = cfg.gen_config()?;
    let bmc = cfg.bmc_config(&core)?;
    let inv = cfg.invariant(&core)?;
    let mut times = PhaseTimes::default();

    let t0 = Instant::now();
    let mut corpus = opts.seed_corpus.clone();
    corpus.extend(gen_test_cases(&gen, &tmpl));
    times.generate = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let mut records = classify(&core, &tmpl, &bmc, &corpus)?;
    times.classify = t0.elapsed().as_secs_f64();
    info!(cases = corpus.len(), atoms = tmpl.len(), "corpus classified");

    let mut log = Vec::new();
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut selected = None;
    for iter in 1..=cfg.run.max_iterations {
        let t0 = Instant::now();
        let sol = build_ilp(&records, &tmpl, cfg.run.ilp)
            .and_then(|inst| solve_exact(&inst))
            .map_err(|source| {
                let case = match source {
                    IlpError::Inexpressible(c) => c,
                    _ => usize::MAX,
                };
                PipelineError::Infeasible {
                    case,
                    test: corpus.get(case).cloned().map(Box::new),
                    source,
                }
            })?;
        let ilp_secs = t0.elapsed().as_secs_f64();
        times.ilp += ilp_secs;
        let s = sol.atoms();
        if !seen.insert(s.clone()) {
            return Err(PipelineError::NoProgress(iter));
        }
        let atoms = tmpl.subset(&s);
        let t0 = Instant::now();
        let res = bmc_check(&core, &atoms, &bmc, &inv)?;
        let bmc_secs = t0.elapsed().as_secs_f64();
        times.bmc += bmc_secs;
        let mut entry = IterationLog {
            iteration: iter,
            atoms: atoms.iter().map(|a| a.to_string()).collect(),
            fp_count: sol.fp_count,
            counterexample: None,
            ilp_secs,
            bmc_secs,
        };
        info!(iter, contract = ?entry.atoms, proved = res.is_proved(), "iteration");
        match res.counterexample() {
            None => {
                log.push(entry);
                selected = Some(s);
                break;
            }
            Some(cex) => {
                let mut test = cex.test.clone();
                test.provenance = Provenance::Counterexample(iter);
                let h = cex.witness.compared;
                let rec = characterize(&core, &tmpl, &test, h, bmc.b)?;
                let in_s: Vec<bool> = (0..tmpl.len()).map(|a| s.contains(&a)).collect();
                if !rec.d_t || distinguishes(&rec, &in_s) {
                    return Err(PipelineError::NoProgress(iter));
                }
                entry.counterexample = Some(corpus.len());
                corpus.push(test);
                records.push(rec);
                log.push(entry);
            }
        }
    }
    let Some(selected) = selected else {
        return Err(PipelineError::IterationCap(cfg.run.max_iterations));
    };
    let contract = tmpl.subset(&selected);

    let houdini = if cfg.verify.houdini {
        let t0 = Instant::now();
        let h = houdini_verify(&core, &contract, &inv, &cfg.houdini_config()?)?;
        times.houdini = t0.elapsed().as_secs_f64();
        info!(verdict = ?h.verdict, retained = h.retained.len(), "unbounded check");
        Some(h)
    } else {
        None
    };

    let precision = if opts.skip_precision {
        None
    } else {
        let t0 = Instant::now();
        let p = eval_precision(&core, &tmpl, &contract, &cfg.validation_config()?)?;
        times.precision = t0.elapsed().as_secs_f64();
        Some(p)
    };

    let report = SynthesisReport {
        core: core.spec.clone(),
        template: cfg.template.clone(),
        template_size: tmpl.len(),
        iterations: log.len(),
        bmc_bound: bmc.k,
        atk_bound: bmc.b,
        instr_bound: bmc.i,
        phase_times: times,
        n_atoms: contract.len(),
        precision,
        atoms: contract.iter().map(AtomEntry::from).collect(),
        log,
        corpus_size: corpus.len(),
        attacker_distinguishable: records.iter().filter(|r| r.d_t).count(),
        bounded_proved: true,
        unbounded: houdini.as_ref().map(UnboundedVerdict::from),
    };
    Ok(SynthesisRun {
        report,
        template: tmpl,
        selected,
        corpus,
        records,
        houdini,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIV: &str = r#"
template = ["LIDIV", "EQk:0,1"]

[core]
kind = "DivCore"
width = 4
imem_cap = 1
dmem_words = 1
div_latency = 4

[gen]
seed = 3
count = 300
mix = { LI = 1, DIV = 1 }

[validation]
count = 500
"#;

    #[test]
    fn parses_and_rejects() {
        let cfg = RunConfig::parse(DIV).unwrap();
        assert_eq!(cfg.universe().unwrap(), vec![Opcode::Li, Opcode::Div]);
        assert_eq!(cfg.template().unwrap().len(), 11);
        let bad = DIV.replace("count = 300", "count = 300\nbogus = 1");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        let long = DIV.replace("count = 300", "count = 300\nlen_max = 3");
        assert!(RunConfig::parse(&long).is_err());
    }

    #[test]
    fn small_div_run_finds_equality_contract() {
        let cfg = RunConfig::parse(DIV).unwrap();
        let run = run_synthesis(&cfg).unwrap();
        let names: Vec<String> = run.contract().iter().map(|a| a.to_string()).collect();
        assert_eq!(names, ["DIV:Reg[RS2]=0?", "DIV:Reg[RS2]=1?"]);
        assert!(run.report.verified(), "{:?}", run.houdini);
        // The divider is fast exactly for divisors 0 and 1, so the only
        // false positives are a DIV against another opcode of equal latency
        // or divisor 0 against divisor 1.
        let core = build_core(&cfg.core.spec()).unwrap();
        let vcases = gen_test_cases(&cfg.validation_config().unwrap(), &run.template);
        let contract = run.contract();
        let mut fp = 0;
        for t in &vcases {
            let c = contract_distinguishable(&contract, t, arch_horizon(t));
            if c && !attacker_distinguishable(&core, t, cycle_horizon(&core, t)).unwrap() {
                fp += 1;
                let (l, r) = (&t.left, &t.right);
                let (il, ir) = (l.imem[0], r.imem[0]);
                let divisors = || [l.reg(il.rs2), r.reg(ir.rs2)];
                assert!(
                    il.opcode != ir.opcode || [[0, 1], [1, 0]].contains(&divisors()),
                    "{t:?}"
                );
            }
        }
        assert_eq!(run.report.precision.unwrap().fp, fp);
        // Appended cases carry their iteration.
        for l in &run.report.log {
            if let Some(c) = l.counterexample {
                assert_eq!(run.corpus[c].provenance, Provenance::Counterexample(l.iteration));
            }
        }
        // Reclassification reproduces the partition.
        let bmc = cfg.bmc_config(&core).unwrap();
        let again = classify(&core, &run.template, &bmc, &run.corpus).unwrap();
        assert_eq!(again, run.records);
    }

    #[test]
    fn empty_contract_is_vacuously_precise() {
        let cfg = RunConfig::parse(DIV).unwrap();
        let core = build_core(&cfg.core.spec()).unwrap();
        let p = eval_precision(&core, &cfg.template().unwrap(), &[], &cfg.validation_config().unwrap()).unwrap();
        assert_eq!((p.tp, p.fp, p.precision), (0, 0, 1.0));
    }
}
